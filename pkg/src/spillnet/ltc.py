"""Liquid time-constant cell dynamics and the three interchangeable solvers.

The cell state x obeys tau * dx/dt = -x + tanh(W_x u + W_r x + b) with
per-unit learnable time constants stored as log(tau) so positivity is
structural. All step functions are differentiable through the active Tape.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import NumericalError, ShapeMismatch

FUSED_DENOM_FLOOR = 1e-12
LOG_TAU_INIT_RANGE = (np.log(0.5), np.log(8.0))  # hours


class SolverKind(enum.Enum):
    RK4 = "rk4"
    FUSED_EXPLICIT = "explicit"
    EULER = "euler"


@dataclass
class LtcParams:
    """Learnable cell tensors. W_x is hidden x input, W_r hidden x hidden."""

    W_x: T.Tensor
    W_r: T.Tensor
    b: T.Tensor        # 1 x hidden
    log_tau: T.Tensor  # 1 x hidden; tau = exp(log_tau) > 0 always
    A: T.Tensor        # 1 x hidden fused-update amplitude

    @property
    def hidden(self) -> int:
        return self.W_x.data.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_x.data.shape[1]

    def tensors(self):
        return {
            "ltc.W_x": self.W_x,
            "ltc.W_r": self.W_r,
            "ltc.b": self.b,
            "ltc.log_tau": self.log_tau,
            "ltc.A": self.A,
        }


def init_params(input_dim: int, hidden: int, rng: np.random.Generator) -> LtcParams:
    lo, hi = LOG_TAU_INIT_RANGE
    return LtcParams(
        W_x=T.parameter(T.uniform_init(rng, (hidden, input_dim), input_dim)),
        W_r=T.parameter(T.uniform_init(rng, (hidden, hidden), hidden)),
        b=T.parameter(np.zeros((1, hidden))),
        log_tau=T.parameter(rng.uniform(lo, hi, size=(1, hidden))),
        A=T.parameter(np.ones((1, hidden))),
    )


class _Cell:
    """Per-forward cache of transposed weights and expanded per-unit vectors."""

    def __init__(self, params: LtcParams, batch: int):
        self.WxT = T.transpose(params.W_x)  # input x hidden
        self.WrT = T.transpose(params.W_r)  # hidden x hidden
        tau_row = T.exp(params.log_tau)
        self.batch = batch
        self.hidden = params.hidden
        self.b = T.expand_rows(params.b, batch)
        self.tau = T.expand_rows(tau_row, batch)
        self.inv_tau = T.div(T.constant(1.0), self.tau)
        self.A = T.expand_rows(params.A, batch)

    def preactivation(self, x: T.Tensor, u: T.Tensor) -> T.Tensor:
        if u.data.shape[1] != self.WxT.data.shape[0]:
            raise ShapeMismatch(f"input {u.data.shape} vs W_x {self.WxT.data.shape}")
        if x.data.shape[1] != self.hidden:
            raise ShapeMismatch(f"state {x.data.shape} vs hidden {self.hidden}")
        return T.add(T.add(T.matmul(u, self.WxT), T.matmul(x, self.WrT)), self.b)

    def f(self, x: T.Tensor, u: T.Tensor) -> T.Tensor:
        return T.tanh(self.preactivation(x, u))

    def derivative(self, x: T.Tensor, u: T.Tensor) -> T.Tensor:
        return T.div(T.add(T.scale(x, -1.0), self.f(x, u)), self.tau)


def derivative(x: T.Tensor, u: T.Tensor, params: LtcParams) -> T.Tensor:
    """dx/dt = (-x + tanh(W_x u + W_r x + b)) / tau, elementwise."""
    return _Cell(params, x.data.shape[0]).derivative(x, u)


def effective_tau(x, u, params: LtcParams) -> np.ndarray:
    """Input-dependent relaxation rate tau / (1 + tau * f); diagnostic only."""
    x = T.Tensor(x) if not isinstance(x, T.Tensor) else x
    u = T.Tensor(u) if not isinstance(u, T.Tensor) else u
    cell = _Cell(params, x.data.shape[0])
    f = cell.f(x, u)
    return cell.tau.data / (1.0 + cell.tau.data * f.data)


def _fused_step(cell: _Cell, x: T.Tensor, u: T.Tensor, dt: float) -> T.Tensor:
    f = cell.f(x, u)
    norm = T.sqrt(T.tensor_sum(T.mul(x, x), axis=1))          # batch x 1
    dt_eff = T.div(T.constant(float(dt)), T.add(T.constant(1.0), norm))
    dt_mat = T.expand_cols(dt_eff, cell.hidden)
    numer = T.add(x, T.mul(dt_mat, T.mul(f, cell.A)))
    denom = T.add(T.constant(1.0), T.mul(dt_mat, T.add(cell.inv_tau, f)))
    if denom.data.min() <= FUSED_DENOM_FLOOR:
        raise NumericalError(f"fused-step denominator {denom.data.min():.3e} <= {FUSED_DENOM_FLOOR}")
    return T.div(numer, denom)


def step_fused(x: T.Tensor, u: T.Tensor, params: LtcParams, dt: float) -> T.Tensor:
    """One fused explicit step with state-magnitude-adaptive dt.

    dt_eff = dt / (1 + ||x||_2) per state row; the decay term sits in the
    denominator, which keeps large steps stable for tau >= 1.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return _fused_step(_Cell(params, x.data.shape[0]), x, u, dt)


def _rk4_step(cell: _Cell, x: T.Tensor, u: T.Tensor, h: float) -> T.Tensor:
    k1 = cell.derivative(x, u)
    k2 = cell.derivative(T.add(x, T.scale(k1, h / 2.0)), u)
    k3 = cell.derivative(T.add(x, T.scale(k2, h / 2.0)), u)
    k4 = cell.derivative(T.add(x, T.scale(k3, h)), u)
    combo = T.add(T.add(k1, k4), T.scale(T.add(k2, k3), 2.0))
    return T.add(x, T.scale(combo, h / 6.0))


def step_rk4(x: T.Tensor, u_fn, params: LtcParams, t: float, h: float) -> T.Tensor:
    """Classical fourth-order step; the input is held constant within a step
    (inputs exist only at window timesteps, so a zero-order hold).
    """
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    u = u_fn(t) if callable(u_fn) else u_fn
    return _rk4_step(_Cell(params, x.data.shape[0]), x, u, h)


def _euler_step(cell: _Cell, x: T.Tensor, u: T.Tensor, dt: float) -> T.Tensor:
    return T.add(x, T.scale(cell.derivative(x, u), dt))


def step_euler(x: T.Tensor, u: T.Tensor, params: LtcParams, dt: float) -> T.Tensor:
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return _euler_step(_Cell(params, x.data.shape[0]), x, u, dt)


_STEPPERS = {
    SolverKind.RK4: _rk4_step,
    SolverKind.FUSED_EXPLICIT: _fused_step,
    SolverKind.EULER: _euler_step,
}


def forward_sequence(window, params: LtcParams, solver: SolverKind, dt: float = 1.0):
    """Run one solver step per timestep from a zero state.

    `window` is a (steps x input) array or Tensor; returns the (steps x
    hidden) Tensor of post-step states, differentiable through the solver.
    """
    inputs = window if isinstance(window, T.Tensor) else T.constant(window)
    steps = inputs.data.shape[0]
    cell = _Cell(params, 1)
    x = T.constant(np.zeros((1, params.hidden)))
    stepper = _STEPPERS[solver]
    states = []
    for i in range(steps):
        u = T.slice_rows(inputs, i, i + 1)
        x = stepper(cell, x, u, dt)
        states.append(x)
    return T.concat(states, axis=0)


def forward_sequence_batch(windows: np.ndarray, params: LtcParams, solver: SolverKind,
                           dt: float = 1.0):
    """Batched core: windows (B x steps x input) -> list over time of (B x
    hidden) state tensors. Rows advance in lockstep, one solver step each.
    """
    batch, steps, _ = windows.shape
    cell = _Cell(params, batch)
    x = T.constant(np.zeros((batch, params.hidden)))
    stepper = _STEPPERS[solver]
    states = []
    for i in range(steps):
        u = T.constant(windows[:, i, :])
        x = stepper(cell, x, u, dt)
        states.append(x)
    return states
