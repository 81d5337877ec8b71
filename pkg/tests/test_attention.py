import numpy as np
import pytest

from rienhance.attention import (
    AttentionParams,
    attended_embedding,
    attention_backward,
    attention_forward,
    channel_attention,
    channel_forward,
    sigmoid,
    spatial_attention,
    spatial_forward,
)
from rienhance.errors import ShapeMismatch


@pytest.fixture
def params():
    return AttentionParams.init(np.random.default_rng(0))


def _zero(p, *names):
    for n in names:
        setattr(p, n, np.zeros_like(getattr(p, n)))
    return p


class TestChannelAttention:
    def test_symmetric_mlp_gives_equal_gates_and_keeps_order(self, params):
        # channel symmetry only holds when the output map treats channels alike
        params.mlp_out[:] = params.mlp_out[0]
        levels = np.random.default_rng(1).normal(size=16)
        f = np.broadcast_to(levels[:, None, None], (16, 4, 4)).copy()
        out, cache = channel_forward(f[None], params)
        gate = cache[-1][0]
        np.testing.assert_allclose(gate, gate[0], rtol=1e-15)
        np.testing.assert_array_equal(np.argsort(out[0, :, 0, 0]), np.argsort(levels))

    def test_zero_weights_halve_input(self, params):
        _zero(params, "mlp_in", "mlp_out")
        f = np.random.default_rng(2).normal(size=(16, 4, 4))
        np.testing.assert_allclose(channel_attention(f, params), 0.5 * f, rtol=1e-15)

    def test_commutes_with_spatial_permutation(self, params):
        rng = np.random.default_rng(3)
        f = rng.normal(size=(16, 4, 4))
        perm = rng.permutation(16)
        fp = f.reshape(16, 16)[:, perm].reshape(16, 4, 4)
        out = channel_attention(f, params).reshape(16, 16)[:, perm].reshape(16, 4, 4)
        np.testing.assert_allclose(channel_attention(fp, params), out, rtol=1e-13)

    def test_wrong_channel_count(self, params):
        with pytest.raises(ShapeMismatch):
            channel_attention(np.zeros((8, 4, 4)), params)

    def test_gates_in_open_interval(self, params):
        f = np.random.default_rng(4).normal(size=(5, 16, 4, 4)) * 3
        out, cache = channel_forward(f, params)
        gate = cache[-1]
        assert np.all((gate > 0) & (gate < 1))
        assert np.all(np.abs(out) <= np.abs(f))


class TestSpatialAttention:
    def test_spatially_constant_map_gives_uniform_gates(self, params):
        _zero(params, "kernel")
        params.kernel_bias[:] = 0.3
        vals = np.random.default_rng(5).normal(size=16)
        f = np.broadcast_to(vals[:, None, None], (16, 4, 4)).copy()
        _, cache = spatial_forward(f[None], params)
        np.testing.assert_allclose(cache[-1], cache[-1][0, 0, 0])

    def test_constant_map_uniform_gates_with_random_kernel_in_interior(self, params):
        f = np.ones((16, 5, 5))
        p = AttentionParams.init(np.random.default_rng(6), height=5, width=5)
        _, cache = spatial_forward(f[None], p)
        gate = cache[-1][0]
        # same padding changes border sums; the interior sees identical windows
        np.testing.assert_allclose(gate[1:-1, 1:-1], gate[2, 2])

    def test_zero_kernel_halves_input(self, params):
        _zero(params, "kernel", "kernel_bias")
        f = np.random.default_rng(7).normal(size=(16, 4, 4))
        np.testing.assert_allclose(spatial_attention(f, params), 0.5 * f, rtol=1e-15)

    def test_commutes_with_channel_permutation(self, params):
        rng = np.random.default_rng(8)
        f = rng.normal(size=(16, 4, 4))
        perm = rng.permutation(16)
        np.testing.assert_allclose(spatial_attention(f[perm], params), spatial_attention(f, params)[perm], rtol=1e-13)

    def test_gates_in_open_interval(self, params):
        f = np.random.default_rng(9).normal(size=(3, 16, 4, 4)) * 5
        out, cache = spatial_forward(f, params)
        assert np.all((cache[-1] > 0) & (cache[-1] < 1))
        assert np.all(np.abs(out) <= np.abs(f))


class TestAttendedEmbedding:
    def test_output_dim(self, params):
        f = np.random.default_rng(10).normal(size=(16, 4, 4))
        assert attended_embedding(f, params).shape == (32,)
        assert attended_embedding(f[None].repeat(3, 0), params).shape == (3, 32)

    def test_zero_map_zero_bias(self, params):
        np.testing.assert_array_equal(attended_embedding(np.zeros((16, 4, 4)), params), np.zeros(32))

    def test_head_size_mismatch(self, params):
        with pytest.raises(ShapeMismatch):
            attended_embedding(np.zeros((16, 3, 3)), params)

    def test_bad_rank(self, params):
        with pytest.raises(ShapeMismatch):
            attended_embedding(np.zeros((16, 16)), params)

    def test_backward_returns_every_parameter(self, params):
        f = np.random.default_rng(11).normal(size=(2, 16, 4, 4))
        v, cache = attention_forward(f, params)
        d_f, grads = attention_backward(np.ones_like(v), cache, params)
        assert d_f.shape == f.shape
        assert set(grads) == set(AttentionParams.NAMES)
        for n in AttentionParams.NAMES:
            assert grads[n].shape == getattr(params, n).shape

    def test_params_round_trip(self, params):
        back = AttentionParams.from_dict(params.to_dict())
        for n in AttentionParams.NAMES:
            np.testing.assert_array_equal(getattr(back, n), getattr(params, n))

    def test_reduction_must_divide(self):
        with pytest.raises(ShapeMismatch):
            AttentionParams.init(np.random.default_rng(0), channels=10, reduction=4)


def test_sigmoid_stable_at_extremes():
    np.testing.assert_allclose(sigmoid(np.array([-800.0, 0.0, 800.0])), [0.0, 0.5, 1.0])
