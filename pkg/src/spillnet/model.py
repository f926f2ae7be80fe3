"""The full forecasting network: input projection, recurrent core (LTC solver
or LSTM baseline), multi-head self-attention over the window, and the
multi-horizon mean/uncertainty heads.

Output layout (28 dims): 0..24 mirror the feature index map in normalized
space; 25 area rate (km^2/h); 26/27 centroid velocity east/north (km/h).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import lstm as lstm_mod
from . import ltc as ltc_mod
from . import tensor as T
from .errors import ConfigError, NumericalError, ShapeMismatch
from .ltc import SolverKind

LSTM_BASELINE = "lstm"
OUTPUT_DIM = 28
WINDOW_STEPS = 16
DEFAULT_HORIZONS = (3, 7, 11, 15)
HEAD_TRUNK_DIM = 64
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    core: object = SolverKind.RK4          # SolverKind or LSTM_BASELINE
    input_dim: int = 25
    hidden: int = 128
    heads: int = 4
    output_dim: int = OUTPUT_DIM
    horizons: tuple = DEFAULT_HORIZONS
    lstm_layers: tuple = lstm_mod.DEFAULT_LAYER_SIZES
    dt: float = 1.0
    trunk_dim: int = HEAD_TRUNK_DIM

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ConfigError(f"hidden {self.hidden} not divisible by {self.heads} heads")
        if self.output_dim != OUTPUT_DIM:
            raise ConfigError(f"output_dim must be {OUTPUT_DIM}")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    @property
    def core_name(self) -> str:
        return self.core if isinstance(self.core, str) else self.core.value

    @property
    def is_lstm(self) -> bool:
        return isinstance(self.core, str) and self.core == LSTM_BASELINE


def core_from_name(name: str):
    if name == LSTM_BASELINE:
        return LSTM_BASELINE
    return SolverKind(name)


@dataclass(frozen=True)
class PredictionSet:
    """Per-horizon mean and non-negative uncertainty vectors."""

    horizons: tuple
    means: dict          # horizon -> (output_dim,) ndarray
    uncertainties: dict  # horizon -> (output_dim,) ndarray, softplus >= 0


@dataclass
class ModelParams:
    config: ModelConfig
    ltc: object = None
    lstm: object = None
    proj_W: T.Tensor = None   # input x hidden
    proj_b: T.Tensor = None
    ln_gamma: T.Tensor = None
    ln_beta: T.Tensor = None
    attn_Wq: T.Tensor = None
    attn_Wk: T.Tensor = None
    attn_Wv: T.Tensor = None
    attn_Wo: T.Tensor = None
    trunk_W: T.Tensor = None
    trunk_b: T.Tensor = None
    head_mean: dict = field(default_factory=dict)  # horizon -> (W, b)
    head_unc: dict = field(default_factory=dict)

    def tensors(self):
        out = {}
        if self.ltc is not None:
            out.update(self.ltc.tensors())
            for name in ("proj_W", "proj_b", "ln_gamma", "ln_beta",
                         "attn_Wq", "attn_Wk", "attn_Wv", "attn_Wo"):
                out[name] = getattr(self, name)
        else:
            out.update(self.lstm.tensors())
        out["trunk_W"] = self.trunk_W
        out["trunk_b"] = self.trunk_b
        for h in self.config.horizons:
            out[f"head_mean.{h}.W"], out[f"head_mean.{h}.b"] = self.head_mean[h]
            out[f"head_unc.{h}.W"], out[f"head_unc.{h}.b"] = self.head_unc[h]
        return out

    def parameters(self):
        return list(self.tensors().values())

    def zero_grad(self):
        for t in self.parameters():
            t.zero_grad()


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    params = ModelParams(config=config)
    if config.is_lstm:
        params.lstm = lstm_mod.init_params(config.input_dim, rng, config.lstm_layers)
        trunk_in = params.lstm.output_dim
    else:
        params.ltc = ltc_mod.init_params(config.hidden, config.hidden, rng)
        h = config.hidden
        params.proj_W = T.parameter(T.uniform_init(rng, (config.input_dim, h), config.input_dim))
        params.proj_b = T.parameter(np.zeros((1, h)))
        params.ln_gamma = T.parameter(np.ones((1, h)))
        params.ln_beta = T.parameter(np.zeros((1, h)))
        for name in ("attn_Wq", "attn_Wk", "attn_Wv", "attn_Wo"):
            setattr(params, name, T.parameter(T.uniform_init(rng, (h, h), h)))
        trunk_in = h
    td = config.trunk_dim
    params.trunk_W = T.parameter(T.uniform_init(rng, (trunk_in, td), trunk_in))
    params.trunk_b = T.parameter(np.zeros((1, td)))
    for h_hours in config.horizons:
        params.head_mean[h_hours] = (
            T.parameter(T.uniform_init(rng, (td, config.output_dim), td)),
            T.parameter(np.zeros((1, config.output_dim))),
        )
        params.head_unc[h_hours] = (
            T.parameter(T.uniform_init(rng, (td, config.output_dim), td)),
            T.parameter(np.zeros((1, config.output_dim))),
        )
    return params


def input_projection(window: T.Tensor, params: ModelParams) -> T.Tensor:
    """layer_norm(relu(W_p x + b_p)) per timestep, with learned affine."""
    n = window.data.shape[0]
    pre = T.add(T.matmul(window, params.proj_W), T.expand_rows(params.proj_b, n))
    normed = T.layer_norm(T.relu(pre))
    return T.add(T.mul(normed, T.expand_rows(params.ln_gamma, n)),
                 T.expand_rows(params.ln_beta, n))


def attention(states: T.Tensor, params: ModelParams) -> T.Tensor:
    """Multi-head scaled dot-product self-attention with a residual add."""
    cfg = params.config
    n = states.data.shape[0]
    if states.data.shape[1] != cfg.hidden:
        raise ShapeMismatch(f"attention input {states.data.shape} vs hidden {cfg.hidden}")
    q = T.matmul(states, params.attn_Wq)
    k = T.matmul(states, params.attn_Wk)
    v = T.matmul(states, params.attn_Wv)
    inv_sqrt_dk = 1.0 / math.sqrt(cfg.head_dim)
    head_outs = []
    for h in range(cfg.heads):
        lo, hi = h * cfg.head_dim, (h + 1) * cfg.head_dim
        qh, kh, vh = T.slice_cols(q, lo, hi), T.slice_cols(k, lo, hi), T.slice_cols(v, lo, hi)
        scores = T.scale(T.matmul(qh, T.transpose(kh)), inv_sqrt_dk)
        weights = T.rowwise_softmax(scores)
        head_outs.append(T.matmul(weights, vh))
    merged = T.matmul(T.concat(head_outs, axis=1), params.attn_Wo)
    return T.add(merged, states)


def attention_weights(states: np.ndarray, params: ModelParams) -> np.ndarray:
    """Row-stochastic attention matrices, one per head (diagnostic)."""
    cfg = params.config
    s = T.constant(states)
    q = (s.data @ params.attn_Wq.data)
    k = (s.data @ params.attn_Wk.data)
    out = []
    for h in range(cfg.heads):
        lo, hi = h * cfg.head_dim, (h + 1) * cfg.head_dim
        scores = q[:, lo:hi] @ k[:, lo:hi].T / math.sqrt(cfg.head_dim)
        z = np.exp(scores - scores.max(axis=1, keepdims=True))
        out.append(z / z.sum(axis=1, keepdims=True))
    return np.stack(out)


def _heads(final: T.Tensor, params: ModelParams):
    """Shared trunk -> per-horizon mean and softplus uncertainty rows."""
    n = final.data.shape[0]
    trunk = T.relu(T.add(T.matmul(final, params.trunk_W), T.expand_rows(params.trunk_b, n)))
    means, uncs = {}, {}
    for h in params.config.horizons:
        w_m, b_m = params.head_mean[h]
        w_u, b_u = params.head_unc[h]
        means[h] = T.add(T.matmul(trunk, w_m), T.expand_rows(b_m, n))
        uncs[h] = T.softplus(T.add(T.matmul(trunk, w_u), T.expand_rows(b_u, n)))
    return means, uncs


def forward_window(window, params: ModelParams, training: bool = False, seed: int = 0):
    """Single normalized window (steps x input) -> per-horizon (1 x out) rows."""
    cfg = params.config
    win = window if isinstance(window, T.Tensor) else T.constant(window)
    if win.data.shape != (WINDOW_STEPS, cfg.input_dim):
        raise ShapeMismatch(f"window {win.data.shape} vs ({WINDOW_STEPS}, {cfg.input_dim})")
    if cfg.is_lstm:
        states = lstm_mod.lstm_forward(win.data, params.lstm, training=training, seed=seed)
    else:
        projected = input_projection(win, params)
        core = ltc_mod.forward_sequence(projected, params.ltc, cfg.core, dt=cfg.dt)
        states = attention(core, params)
    final = T.slice_rows(states, WINDOW_STEPS - 1, WINDOW_STEPS)
    return _heads(final, params)


def forward_batch(windows: np.ndarray, params: ModelParams,
                  training: bool = False, seed: int = 0):
    """Batched forward: (B x steps x input) -> per-horizon (B x out) tensors.

    The recurrent core advances all windows in lockstep; attention and the
    heads then run per window over its own timeline.
    """
    cfg = params.config
    batch = windows.shape[0]
    if windows.shape[1] != WINDOW_STEPS or windows.shape[2] != cfg.input_dim:
        raise ShapeMismatch(f"windows {windows.shape} vs (*, {WINDOW_STEPS}, {cfg.input_dim})")
    if cfg.is_lstm:
        step_states = lstm_mod.lstm_forward_batch(windows, params.lstm,
                                                  training=training, seed=seed)
        finals = [T.slice_rows(step_states[-1], w, w + 1) for w in range(batch)]
        final = T.concat(finals, axis=0)
    else:
        # project every timestep of every window in one matmul, then regroup
        # the window-major rows into per-timestep batches for the core
        flat = windows.reshape(batch * WINDOW_STEPS, cfg.input_dim)
        projected = input_projection(T.constant(flat), params)
        step_inputs = []
        for t in range(WINDOW_STEPS):
            idx = [w * WINDOW_STEPS + t for w in range(batch)]
            step_inputs.append(T.gather_rows(projected, idx))
        cell = ltc_mod._Cell(params.ltc, batch)
        stepper = ltc_mod._STEPPERS[cfg.core]
        x = T.constant(np.zeros((batch, cfg.hidden)))
        step_states = []
        for t in range(WINDOW_STEPS):
            x = stepper(cell, x, step_inputs[t], cfg.dt)
            step_states.append(x)
        all_states = T.concat(step_states, axis=0)  # time-major (steps*B) x hidden
        finals = []
        for w in range(batch):
            seq = T.gather_rows(all_states, [t * batch + w for t in range(WINDOW_STEPS)])
            attended = attention(seq, params)
            finals.append(T.slice_rows(attended, WINDOW_STEPS - 1, WINDOW_STEPS))
        final = T.concat(finals, axis=0)
    return _heads(final, params)


def predict(window: np.ndarray, params: ModelParams) -> PredictionSet:
    """Deterministic inference on one normalized window."""
    means, uncs = forward_window(window, params, training=False)
    for h, m in means.items():
        if not np.all(np.isfinite(m.data)):
            raise NumericalError(f"non-finite prediction at horizon {h}")
    return PredictionSet(
        horizons=tuple(params.config.horizons),
        means={h: m.data.reshape(-1).copy() for h, m in means.items()},
        uncertainties={h: u.data.reshape(-1).copy() for h, u in uncs.items()},
    )


# -- checkpoint container -------------------------------------------------------


def checkpoint_to_dict(params: ModelParams) -> dict:
    cfg = params.config
    return {
        "schema_version": CHECKPOINT_VERSION,
        "config": {
            "core": cfg.core_name,
            "input_dim": cfg.input_dim,
            "hidden": cfg.hidden,
            "heads": cfg.heads,
            "output_dim": cfg.output_dim,
            "horizons": list(cfg.horizons),
            "lstm_layers": list(cfg.lstm_layers),
            "dt": cfg.dt,
            "trunk_dim": cfg.trunk_dim,
        },
        "params": {
            name: {"shape": list(t.data.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in params.tensors().items()
        },
    }


def save_checkpoint(params: ModelParams, path) -> None:
    with open(path, "w") as fh:
        json.dump(checkpoint_to_dict(params), fh)


def params_from_dict(doc: dict) -> ModelParams:
    if doc.get("schema_version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {doc.get('schema_version')}")
    c = doc["config"]
    config = ModelConfig(
        core=core_from_name(c["core"]),
        input_dim=c["input_dim"],
        hidden=c["hidden"],
        heads=c["heads"],
        output_dim=c["output_dim"],
        horizons=tuple(c["horizons"]),
        lstm_layers=tuple(c.get("lstm_layers", lstm_mod.DEFAULT_LAYER_SIZES)),
        dt=c.get("dt", 1.0),
        trunk_dim=c.get("trunk_dim", HEAD_TRUNK_DIM),
    )
    params = init_params(config, seed=0)
    stored = doc["params"]
    expected = params.tensors()
    if set(stored) != set(expected):
        missing = set(expected) - set(stored)
        extra = set(stored) - set(expected)
        raise ConfigError(f"checkpoint tensor names mismatch (missing {missing}, extra {extra})")
    for name, t in expected.items():
        entry = stored[name]
        shape = tuple(entry["shape"])
        if shape != t.data.shape:
            raise ConfigError(f"{name}: checkpoint shape {shape} vs config {t.data.shape}")
        t.data = np.asarray(entry["data"], dtype=np.float64).reshape(shape)
    return params


def load_checkpoint(path) -> ModelParams:
    with open(path) as fh:
        return params_from_dict(json.load(fh))
