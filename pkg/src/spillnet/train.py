"""Composite loss, AdamW, early stopping, and per-solver hyperparameters.

Loss = MSE + alpha * smoothness + beta * area, where smoothness penalizes
differences between adjacent horizon predictions and the area term re-weights
the area dims (0: area, 25: area rate).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import model as model_mod
from . import tensor as T
from .errors import EmptyDataset, NumericalError, ShapeMismatch
from .ltc import SolverKind
from .model import LSTM_BASELINE, ModelConfig

AREA_DIMS = (0, 25)

ALPHA_DEFAULTS = {
    SolverKind.RK4: 0.05,
    SolverKind.FUSED_EXPLICIT: 0.1,
    SolverKind.EULER: 0.2,
    LSTM_BASELINE: 0.1,
}
LR_DEFAULTS = {
    SolverKind.RK4: 0.0003,
    SolverKind.FUSED_EXPLICIT: 0.0005,
    SolverKind.EULER: 0.001,
    LSTM_BASELINE: 0.001,
}
PATIENCE_DEFAULTS = {
    SolverKind.RK4: 15,
    SolverKind.FUSED_EXPLICIT: 12,
    SolverKind.EULER: 10,
    LSTM_BASELINE: 10,
}
BETA_DEFAULT = 0.5
MIN_IMPROVEMENT = 1e-5


@dataclass
class TrainConfig:
    solver: object = SolverKind.RK4  # SolverKind or LSTM_BASELINE
    alpha: float = None
    beta: float = BETA_DEFAULT
    lr: float = None
    max_epochs: int = 150
    patience: int = None
    batch_size: int = 16
    seed: int = 0
    hidden: int = 128
    heads: int = 4
    lstm_layers: tuple = (128, 64)

    def __post_init__(self):
        if self.alpha is None:
            self.alpha = ALPHA_DEFAULTS[self.solver]
        if self.lr is None:
            self.lr = LR_DEFAULTS[self.solver]
        if self.patience is None:
            self.patience = PATIENCE_DEFAULTS[self.solver]

    def model_config(self) -> ModelConfig:
        return ModelConfig(core=self.solver, hidden=self.hidden, heads=self.heads,
                           lstm_layers=self.lstm_layers)


def loss_total(preds: dict, targets: dict, alpha: float, beta: float) -> T.Tensor:
    """preds/targets: horizon -> (batch x 28). Horizons ordered ascending."""
    horizons = sorted(preds)
    if sorted(targets) != horizons:
        raise ShapeMismatch(f"horizons differ: {horizons} vs {sorted(targets)}")
    mse_terms, area_terms = [], []
    for h in horizons:
        p = preds[h]
        t = targets[h] if isinstance(targets[h], T.Tensor) else T.constant(targets[h])
        if p.data.shape != t.data.shape:
            raise ShapeMismatch(f"horizon {h}: pred {p.data.shape} vs target {t.data.shape}")
        diff = T.sub(p, t)
        mse_terms.append(T.mul(diff, diff))
        for d in AREA_DIMS:
            ad = T.slice_cols(diff, d, d + 1)
            area_terms.append(T.mul(ad, ad))
    loss = T.mean(T.concat(mse_terms, axis=0))
    if len(horizons) > 1 and alpha != 0.0:
        smooth_terms = []
        for h_lo, h_hi in zip(horizons, horizons[1:]):
            d = T.sub(preds[h_hi], preds[h_lo])
            smooth_terms.append(T.tensor_sum(T.mul(d, d), axis=1))
        loss = T.add(loss, T.scale(T.mean(T.concat(smooth_terms, axis=0)), alpha))
    if beta != 0.0:
        loss = T.add(loss, T.scale(T.mean(T.concat(area_terms, axis=0)), beta))
    return loss


def smoothness_penalty(preds: dict) -> float:
    """Mean squared adjacent-horizon difference (diagnostic mirror of the
    alpha term)."""
    horizons = sorted(preds)
    if len(horizons) < 2:
        return 0.0
    vals = []
    for h_lo, h_hi in zip(horizons, horizons[1:]):
        d = np.asarray(preds[h_hi]) - np.asarray(preds[h_lo])
        vals.append((d * d).sum(axis=-1))
    return float(np.mean(np.concatenate([np.atleast_1d(v) for v in vals])))


class AdamWState:
    def __init__(self, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.01):
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {}
        self.v = {}


def adamw_step(params, state: AdamWState, lr: float) -> None:
    """One decoupled-weight-decay Adam update over tensors with .grad set.

    Decay applies to the raw parameter before the moment update, so zero
    gradient still shrinks weights by (1 - lr * wd).
    """
    state.step_count += 1
    b1, b2 = state.betas
    bc1 = 1.0 - b1 ** state.step_count
    bc2 = 1.0 - b2 ** state.step_count
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if state.weight_decay:
            p.data *= 1.0 - lr * state.weight_decay
        key = id(p)
        m = state.m.setdefault(key, np.zeros_like(p.data))
        v = state.v.setdefault(key, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_mse: float
    lr: float


@dataclass
class TrainResult:
    params: model_mod.ModelParams
    history: list
    best_epoch: int
    best_val_loss: float

    def history_rows(self):
        return [(r.epoch, r.train_loss, r.val_loss, r.lr) for r in self.history]


def _stack_windows(seqs):
    return np.stack([np.asarray(s.window, dtype=float) for s in seqs])


def _stack_targets(seqs, horizons):
    return {h: np.stack([np.asarray(s.horizon_targets[h], dtype=float) for s in seqs])
            for h in horizons}


def _eval_losses(seqs, params, config: TrainConfig):
    """(total loss, pure MSE) on a sequence list, inference mode."""
    windows = _stack_windows(seqs)
    horizons = params.config.horizons
    targets = _stack_targets(seqs, horizons)
    means, _ = model_mod.forward_batch(windows, params, training=False)
    total = loss_total(means, targets, config.alpha, config.beta).item()
    sq = [np.mean((means[h].data - targets[h]) ** 2) for h in horizons]
    return total, float(np.mean(sq))


def split_dataset(dataset, val_fraction: float = 0.2):
    """Contiguous time-block split: the tail of the (time-ordered) sequence
    list becomes validation, avoiding leakage through overlapping windows.
    """
    n = len(dataset)
    n_val = max(1, int(round(n * val_fraction)))
    if n_val >= n:
        raise EmptyDataset(f"{n} sequences cannot support a validation split")
    return dataset[: n - n_val], dataset[n - n_val:]


def train_model(dataset, config: TrainConfig) -> TrainResult:
    """Full fit: seeded shuffling, AdamW, early stop on validation loss.

    Epoch 0 in the history is the untrained model's evaluation; training
    epochs count from 1. Returns the best-validation parameters.
    """
    if not dataset:
        raise EmptyDataset("no training sequences")
    train_seqs, val_seqs = split_dataset(dataset)
    params = model_mod.init_params(config.model_config(), seed=config.seed)
    opt = AdamWState()
    rng = np.random.default_rng(config.seed)
    horizons = params.config.horizons

    history = []
    val0, val0_mse = _eval_losses(val_seqs, params, config)
    train0, _ = _eval_losses(train_seqs, params, config)
    history.append(EpochRecord(0, train0, val0, val0_mse, config.lr))

    best_val = val0
    best_epoch = 0
    best_snapshot = {name: t.data.copy() for name, t in params.tensors().items()}
    stall = 0

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_seqs))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_seqs[i] for i in order[start:start + config.batch_size]]
            windows = _stack_windows(batch)
            targets = _stack_targets(batch, horizons)
            params.zero_grad()
            with T.Tape() as tape:
                means, _ = model_mod.forward_batch(
                    windows, params, training=True, seed=int(rng.integers(2**31)))
                loss = loss_total(means, targets, config.alpha, config.beta)
                if not np.isfinite(loss.item()):
                    raise NumericalError(f"non-finite loss at epoch {epoch}")
                tape.backward(loss)
            adamw_step(params.parameters(), opt, config.lr)
            epoch_losses.append(loss.item())

        val_loss, val_mse = _eval_losses(val_seqs, params, config)
        history.append(EpochRecord(epoch, float(np.mean(epoch_losses)), val_loss,
                                   val_mse, config.lr))
        if val_loss < best_val - MIN_IMPROVEMENT:
            best_val = val_loss
            best_epoch = epoch
            best_snapshot = {name: t.data.copy() for name, t in params.tensors().items()}
            stall = 0
        else:
            stall += 1
            if stall > config.patience:
                break

    for name, t in params.tensors().items():
        t.data = best_snapshot[name].copy()
    return TrainResult(params=params, history=history,
                       best_epoch=best_epoch, best_val_loss=best_val)


def history_csv(history) -> str:
    lines = ["epoch,train_loss,val_loss,lr"]
    for r in history:
        lines.append(f"{r.epoch},{r.train_loss:.10g},{r.val_loss:.10g},{r.lr:.10g}")
    return "\n".join(lines) + "\n"
