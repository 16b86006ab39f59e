"""Forward semantics of the tensor engine: conv/upsample/norm/attention
against independent oracles, plus tape bookkeeping rules."""

import numpy as np
import pytest

from voxformer import numerics as nx
from voxformer.errors import NotScalar, ShapeMismatch, TapeConsumed
from voxformer.numerics import RngState, Tensor, backward, tape


def conv3d_oracle(x, w, b, stride, padding):
    """Direct nested-loop convolution; the correctness reference."""
    n, cin, W, H, D = x.shape
    cout, _, k, _, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0)) + ((padding, padding),) * 3)
    oW = (W + 2 * padding - k) // stride + 1
    oH = (H + 2 * padding - k) // stride + 1
    oD = (D + 2 * padding - k) // stride + 1
    out = np.zeros((n, cout, oW, oH, oD))
    for ni in range(n):
        for o in range(cout):
            for i in range(oW):
                for j in range(oH):
                    for l in range(oD):
                        acc = b[o]
                        for c in range(cin):
                            for a1 in range(k):
                                for a2 in range(k):
                                    for a3 in range(k):
                                        acc += (xp[ni, c, i * stride + a1,
                                                   j * stride + a2, l * stride + a3]
                                                * w[o, c, a1, a2, a3])
                        out[ni, o, i, j, l] = acc
    return out


class TestConv3d:
    def test_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((1, 1, 4, 4, 4))
        w = rng.standard_normal((2, 1, 3, 3, 3))
        b = rng.standard_normal(2)
        got = nx.conv3d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64),
                        Tensor(b, dtype=np.float64), stride=1, padding=1).numpy()
        want = conv3d_oracle(x, w, b, 1, 1)
        np.testing.assert_allclose(got, want, atol=1e-6)

    def test_stride2_extent_75_gives_38(self):
        x = Tensor(np.zeros((1, 1, 75, 5, 5), dtype=np.float32))
        w = Tensor(np.zeros((1, 1, 3, 3, 3), dtype=np.float32))
        out = nx.conv3d(x, w, stride=2, padding=1)
        assert out.shape[2] == 38

    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 3, 4, 4, 4)).astype(np.float32)
        w = np.zeros((3, 3, 1, 1, 1), dtype=np.float32)
        for c in range(3):
            w[c, c, 0, 0, 0] = 1.0
        out = nx.conv3d(Tensor(x), Tensor(w), stride=1, padding=0)
        np.testing.assert_array_equal(out.numpy(), x)

    def test_stride2_halving_chain(self):
        # padding-1 k=3 stride-2 gives ceil(n/2) for every extent in [1, 100]
        w = Tensor(np.zeros((1, 1, 3, 3, 3), dtype=np.float32))
        for n in range(1, 101):
            x = Tensor(np.zeros((1, 1, n, 3, 3), dtype=np.float32))
            out = nx.conv3d(x, w, stride=2, padding=1)
            assert out.shape[2] == (n + 1) // 2, n

    def test_channel_mismatch_raises(self):
        x = Tensor(np.zeros((1, 2, 4, 4, 4), dtype=np.float32))
        w = Tensor(np.zeros((1, 3, 3, 3, 3), dtype=np.float32))
        with pytest.raises(ShapeMismatch):
            nx.conv3d(x, w, stride=1, padding=1)


class TestUpsample:
    def test_exact_target_extents(self):
        x = Tensor(np.random.default_rng(0).standard_normal((5, 16, 10, 12, 11)).astype(np.float32))
        out = nx.upsample_to(x, (19, 24, 21))
        assert out.shape == (5, 16, 19, 24, 21)

    def test_identity_when_same_extents(self):
        x = np.random.default_rng(1).standard_normal((1, 2, 4, 5, 6)).astype(np.float32)
        out = nx.upsample_to(Tensor(x), (4, 5, 6))
        np.testing.assert_allclose(out.numpy(), x, atol=1e-6)

    def test_constant_preserved(self):
        x = Tensor(np.full((1, 1, 3, 3, 3), 2.5, dtype=np.float32))
        out = nx.upsample_to(x, (7, 8, 9))
        np.testing.assert_allclose(out.numpy(), 2.5, atol=1e-6)

    def test_shrinking_raises(self):
        x = Tensor(np.zeros((1, 1, 4, 4, 4), dtype=np.float32))
        with pytest.raises(ShapeMismatch):
            nx.upsample_to(x, (3, 4, 4))


class TestGroupNorm:
    def test_unit_stats_per_group(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((2, 8, 3, 3, 3)) * 3 + 1, dtype=np.float64)
        gamma = Tensor(np.ones(8), dtype=np.float64)
        beta = Tensor(np.zeros(8), dtype=np.float64)
        out = nx.group_norm(x, 4, gamma, beta).numpy().reshape(2, 4, -1)
        assert np.abs(out.mean(axis=-1)).max() < 1e-5
        assert np.abs(out.var(axis=-1) - 1).max() < 1e-3

    def test_fixed_point_on_normalized_input(self):
        rng = np.random.default_rng(4)
        raw = rng.standard_normal((2, 4, 3, 3, 3))
        grouped = raw.reshape(2, 2, -1)
        grouped = (grouped - grouped.mean(-1, keepdims=True)) / grouped.std(-1, keepdims=True)
        x = Tensor(grouped.reshape(2, 4, 3, 3, 3), dtype=np.float64)
        out = nx.group_norm(x, 2, Tensor(np.ones(4), dtype=np.float64),
                            Tensor(np.zeros(4), dtype=np.float64))
        np.testing.assert_allclose(out.numpy(), x.numpy(), atol=1e-4)

    def test_indivisible_channels_raise(self):
        x = Tensor(np.zeros((1, 6, 2, 2, 2), dtype=np.float32))
        with pytest.raises(ShapeMismatch):
            nx.group_norm(x, 4, Tensor(np.ones(6)), Tensor(np.zeros(6)))


class TestLeakyRelu:
    def test_values(self):
        x = Tensor(np.array([2.0, -1.0, 0.0], dtype=np.float32))
        out = nx.leaky_relu(x, 0.01).numpy()
        np.testing.assert_allclose(out, [2.0, -0.01, 0.0], atol=1e-7)


class TestAttention:
    @staticmethod
    def _params(d, rng):
        p = {}
        for k in ("wq", "wk", "wv", "wo"):
            p[k] = Tensor(rng.standard_normal((d, d)), dtype=np.float64)
        for k in ("bq", "bk", "bv", "bo"):
            p[k] = Tensor(rng.standard_normal(d), dtype=np.float64)
        return p

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        seq = Tensor(rng.standard_normal((2, 4, 8)), dtype=np.float64)
        _, attn = nx.multi_head_attention(seq, self._params(8, rng), heads=2,
                                          return_weights=True)
        np.testing.assert_allclose(attn.numpy().sum(axis=-1), 1.0, atol=1e-5)

    def test_single_token_weight_is_one(self):
        rng = np.random.default_rng(6)
        seq = Tensor(rng.standard_normal((1, 1, 8)), dtype=np.float64)
        params = self._params(8, rng)
        out, attn = nx.multi_head_attention(seq, params, heads=2, return_weights=True)
        np.testing.assert_allclose(attn.numpy(), 1.0, atol=1e-12)
        # with a single token the context is exactly its value projection
        v = seq.numpy() @ params["wv"].numpy().T + params["bv"].numpy()
        want = v @ params["wo"].numpy().T + params["bo"].numpy()
        np.testing.assert_allclose(out.numpy(), want, atol=1e-10)

    def test_width_not_divisible_raises(self):
        seq = Tensor(np.zeros((1, 2, 6), dtype=np.float32))
        with pytest.raises(ShapeMismatch):
            nx.multi_head_attention(seq, {}, heads=4)


class TestBackwardRules:
    def test_sum_gradient_is_ones(self):
        x = Tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
        with tape():
            loss = nx.sum_(x)
        backward(loss)
        np.testing.assert_array_equal(x.grad, np.ones((3, 4), dtype=np.float32))

    def test_half_mean_square_gradient(self):
        data = np.random.default_rng(1).standard_normal((4, 5)).astype(np.float32)
        x = Tensor(data, requires_grad=True)
        with tape():
            loss = nx.scale(nx.mean(nx.mul(x, x)), 0.5)
        backward(loss)
        np.testing.assert_allclose(x.grad, data / data.size, atol=1e-7)

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with tape():
            y = nx.mul(x, x)
        with pytest.raises(NotScalar):
            backward(y)

    def test_double_backward_raises(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with tape():
            loss = nx.sum_(x)
        backward(loss)
        with pytest.raises(TapeConsumed):
            backward(loss)

    def test_grad_populated_for_all_reachable_leaves(self):
        a = Tensor(np.ones(3), requires_grad=True)
        b = Tensor(np.ones(3), requires_grad=True)
        c = Tensor(np.ones(3))  # not trainable
        with tape():
            loss = nx.sum_(nx.add(nx.mul(a, b), c))
        backward(loss)
        assert a.grad is not None and b.grad is not None and c.grad is None


class TestDropout:
    def test_p_zero_is_identity(self):
        x = Tensor(np.random.default_rng(0).standard_normal(100).astype(np.float32))
        assert nx.dropout(x, 0.0, None, train=True) is x

    def test_masks_reproducible(self):
        x = Tensor(np.ones(1000, dtype=np.float32))
        a = nx.dropout(x, 0.3, RngState(42), train=True).numpy()
        b = nx.dropout(x, 0.3, RngState(42), train=True).numpy()
        np.testing.assert_array_equal(a, b)

    def test_eval_mode_is_identity(self):
        x = Tensor(np.ones(10, dtype=np.float32))
        assert nx.dropout(x, 0.5, RngState(0), train=False) is x


class TestSoftmax:
    def test_rows_normalized(self):
        x = Tensor(np.random.default_rng(2).standard_normal((5, 7)), dtype=np.float64)
        out = nx.softmax(x).numpy()
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)
        assert (out > 0).all()
