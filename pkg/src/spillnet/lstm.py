"""Two-layer LSTM baseline (128 then 64 units) with inter-layer dropout.

Gate weights act on the concatenation [h_prev, x_t]; dropout is inverted and
seeded so training runs stay reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeMismatch

DEFAULT_LAYER_SIZES = (128, 64)
DROPOUT_P = 0.1
FORGET_BIAS_INIT = 1.0


@dataclass
class LstmLayerParams:
    """Gate weights, each hidden x (hidden + input), plus per-gate biases."""

    W_f: T.Tensor
    W_i: T.Tensor
    W_C: T.Tensor
    W_o: T.Tensor
    b_f: T.Tensor
    b_i: T.Tensor
    b_C: T.Tensor
    b_o: T.Tensor

    @property
    def hidden(self) -> int:
        return self.W_f.data.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_f.data.shape[1] - self.W_f.data.shape[0]


@dataclass
class LstmParams:
    layers: tuple
    dropout_p: float = DROPOUT_P

    @property
    def output_dim(self) -> int:
        return self.layers[-1].hidden

    def tensors(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for gate in ("f", "i", "C", "o"):
                out[f"lstm.{i}.W_{gate}"] = getattr(layer, f"W_{gate}")
                out[f"lstm.{i}.b_{gate}"] = getattr(layer, f"b_{gate}")
        return out


def init_layer(input_dim: int, hidden: int, rng: np.random.Generator) -> LstmLayerParams:
    fan_in = hidden + input_dim

    def w():
        return T.parameter(T.uniform_init(rng, (hidden, fan_in), fan_in))

    return LstmLayerParams(
        W_f=w(), W_i=w(), W_C=w(), W_o=w(),
        b_f=T.parameter(np.full((1, hidden), FORGET_BIAS_INIT)),
        b_i=T.parameter(np.zeros((1, hidden))),
        b_C=T.parameter(np.zeros((1, hidden))),
        b_o=T.parameter(np.zeros((1, hidden))),
    )


def init_params(input_dim: int, rng: np.random.Generator,
                layer_sizes=DEFAULT_LAYER_SIZES, dropout_p: float = DROPOUT_P) -> LstmParams:
    layers = []
    prev = input_dim
    for size in layer_sizes:
        layers.append(init_layer(prev, size, rng))
        prev = size
    return LstmParams(layers=tuple(layers), dropout_p=dropout_p)


class _LayerCell:
    """Transposed-weight cache reused across the timestep loop."""

    def __init__(self, layer: LstmLayerParams, batch: int):
        self.WfT = T.transpose(layer.W_f)
        self.WiT = T.transpose(layer.W_i)
        self.WCT = T.transpose(layer.W_C)
        self.WoT = T.transpose(layer.W_o)
        self.b_f = T.expand_rows(layer.b_f, batch)
        self.b_i = T.expand_rows(layer.b_i, batch)
        self.b_C = T.expand_rows(layer.b_C, batch)
        self.b_o = T.expand_rows(layer.b_o, batch)

    def step(self, x_t: T.Tensor, h_prev: T.Tensor, c_prev: T.Tensor):
        hx = T.concat([h_prev, x_t], axis=1)
        f_t = T.sigmoid(T.add(T.matmul(hx, self.WfT), self.b_f))
        i_t = T.sigmoid(T.add(T.matmul(hx, self.WiT), self.b_i))
        c_tilde = T.tanh(T.add(T.matmul(hx, self.WCT), self.b_C))
        c_t = T.add(T.mul(f_t, c_prev), T.mul(i_t, c_tilde))
        o_t = T.sigmoid(T.add(T.matmul(hx, self.WoT), self.b_o))
        h_t = T.mul(o_t, T.tanh(c_t))
        return h_t, c_t


def lstm_cell(x_t: T.Tensor, h_prev: T.Tensor, c_prev: T.Tensor, layer: LstmLayerParams):
    """Single gate update; returns (h_t, c_t)."""
    expected = layer.hidden + x_t.data.shape[1]
    if layer.W_f.data.shape[1] != expected:
        raise ShapeMismatch(f"gate weights {layer.W_f.data.shape} vs [h, x] width {expected}")
    return _LayerCell(layer, x_t.data.shape[0]).step(x_t, h_prev, c_prev)


def _dropout_mask(rng: np.random.Generator, shape, p: float) -> np.ndarray:
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def lstm_forward(window, params: LstmParams, training: bool = False, seed: int = 0):
    """Stacked forward pass; returns the (steps x last_hidden) state Tensor.

    Dropout applies between layers only, when training, from the given seed.
    """
    states = lstm_forward_batch(
        window[np.newaxis, :, :] if not isinstance(window, T.Tensor) else window.data[np.newaxis],
        params, training=training, seed=seed,
    )
    return T.concat(states, axis=0)


def lstm_forward_batch(windows: np.ndarray, params: LstmParams,
                       training: bool = False, seed: int = 0):
    """Batched forward: (B x steps x input) -> list over time of (B x
    last_hidden) tensors.
    """
    batch, steps, _ = windows.shape
    rng = np.random.default_rng(seed)
    layer_inputs = [T.constant(windows[:, i, :]) for i in range(steps)]
    for li, layer in enumerate(params.layers):
        cell = _LayerCell(layer, batch)
        h = T.constant(np.zeros((batch, layer.hidden)))
        c = T.constant(np.zeros((batch, layer.hidden)))
        outputs = []
        for x_t in layer_inputs:
            h, c = cell.step(x_t, h, c)
            outputs.append(h)
        if training and li < len(params.layers) - 1 and params.dropout_p > 0:
            outputs = [
                T.mul(o, T.constant(_dropout_mask(rng, o.data.shape, params.dropout_p)))
                for o in outputs
            ]
        layer_inputs = outputs
    return layer_inputs
