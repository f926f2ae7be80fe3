import numpy as np
import pytest

from spillnet import lstm, tensor as T
from test_tensor import assert_grads_close


def zero_layer(input_dim=2, hidden=3):
    z = lambda shape: T.parameter(np.zeros(shape))
    fan = hidden + input_dim
    return lstm.LstmLayerParams(
        W_f=z((hidden, fan)), W_i=z((hidden, fan)), W_C=z((hidden, fan)),
        W_o=z((hidden, fan)), b_f=z((1, hidden)), b_i=z((1, hidden)),
        b_C=z((1, hidden)), b_o=z((1, hidden)))


class TestCell:
    def test_zero_weights_halve_cell(self):
        layer = zero_layer()
        c_prev = np.array([[0.4, -0.8, 1.2]])
        h, c = lstm.lstm_cell(T.constant(np.zeros((1, 2))),
                              T.constant(np.zeros((1, 3))),
                              T.constant(c_prev), layer)
        assert np.allclose(c.data, 0.5 * c_prev)
        assert np.allclose(h.data, 0.5 * np.tanh(0.5 * c_prev))

    def test_saturated_gates_preserve_memory(self):
        layer = zero_layer()
        layer.b_f.data[:] = 60.0   # forget gate = 1
        layer.b_i.data[:] = -60.0  # input gate = 0
        c_prev = np.array([[0.7, -0.3, 2.0]])
        _, c = lstm.lstm_cell(T.constant(np.zeros((1, 2))),
                              T.constant(np.zeros((1, 3))),
                              T.constant(c_prev), layer)
        assert np.allclose(c.data, c_prev, atol=1e-12)

    def test_zero_candidate_keeps_cell_zero(self):
        layer = zero_layer()
        layer.b_i.data[:] = 60.0  # input gate = 1, candidate tanh(0) = 0
        _, c = lstm.lstm_cell(T.constant(np.zeros((1, 2))),
                              T.constant(np.zeros((1, 3))),
                              T.constant(np.zeros((1, 3))), layer)
        assert np.allclose(c.data, 0.0)

    def test_gates_bounded_and_cell_increment(self):
        rng = np.random.default_rng(4)
        params = lstm.init_params(5, rng, layer_sizes=(7,))
        layer = params.layers[0]
        h = T.constant(rng.normal(size=(1, 7)))
        c_prev = rng.normal(size=(1, 7))
        _, c = lstm.lstm_cell(T.constant(rng.normal(size=(1, 5))), h,
                              T.constant(c_prev), layer)
        # |c_t| <= |c_prev| + 1 because f, i in (0,1) and |candidate| < 1
        assert np.all(np.abs(c.data) <= np.abs(c_prev) + 1.0)


class TestForward:
    def test_default_stack_shapes(self):
        params = lstm.init_params(25, np.random.default_rng(0))
        window = np.random.default_rng(1).normal(size=(16, 25))
        out = lstm.lstm_forward(window, params)
        assert out.data.shape == (16, 64)

    def test_inference_deterministic(self):
        params = lstm.init_params(4, np.random.default_rng(2), layer_sizes=(6, 5))
        window = np.random.default_rng(3).normal(size=(16, 4))
        a = lstm.lstm_forward(window, params, training=False)
        b = lstm.lstm_forward(window, params, training=False)
        assert np.array_equal(a.data, b.data)

    def test_training_seeded_mask_reproducible(self):
        params = lstm.init_params(4, np.random.default_rng(2), layer_sizes=(6, 5))
        window = np.random.default_rng(3).normal(size=(16, 4))
        a = lstm.lstm_forward(window, params, training=True, seed=11)
        b = lstm.lstm_forward(window, params, training=True, seed=11)
        c = lstm.lstm_forward(window, params, training=True, seed=12)
        assert np.array_equal(a.data, b.data)
        assert not np.array_equal(a.data, c.data)

    def test_inverted_dropout_unbiased(self):
        # the mean over many seeded masks recovers the undropped activation
        rng = np.random.default_rng(9)
        activation = rng.normal(size=(4, 8))
        total = np.zeros_like(activation)
        n = 10_000
        for seed in range(n):
            mask = lstm._dropout_mask(np.random.default_rng(seed),
                                      activation.shape, lstm.DROPOUT_P)
            total += activation * mask
        assert np.allclose(total / n, activation, atol=2e-2 * np.abs(activation).max() + 2e-2)

    def test_batch_matches_single(self):
        params = lstm.init_params(4, np.random.default_rng(5), layer_sizes=(6, 5))
        windows = np.random.default_rng(6).normal(size=(3, 16, 4))
        batch = lstm.lstm_forward_batch(windows, params)
        stacked = np.stack([s.data for s in batch])
        for w in range(3):
            single = lstm.lstm_forward(windows[w], params).data
            assert np.allclose(stacked[:, w, :], single, atol=1e-12)


class TestGradients:
    @pytest.mark.parametrize("seed", range(5))
    def test_two_step_miniature_gradcheck(self, seed):
        params = lstm.init_params(2, np.random.default_rng(seed), layer_sizes=(3,))
        window = np.random.default_rng(seed + 20).normal(size=(2, 2))
        tensors = list(params.tensors().values())

        def loss_builder():
            layer = params.layers[0]
            cell = lstm._LayerCell(layer, 1)
            h = T.constant(np.zeros((1, 3)))
            c = T.constant(np.zeros((1, 3)))
            for t in range(2):
                h, c = cell.step(T.constant(window[t:t + 1]), h, c)
            return T.mean(T.mul(h, h))

        assert_grads_close(tensors, loss_builder, rel=1e-4)
