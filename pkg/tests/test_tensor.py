"""Tensor engine: forward oracles, adjoint identities and backward basics."""

import numpy as np
import pytest

from dhinet import tensor as T
from dhinet.optim import Adam, adam_step
from dhinet.tensor import BatchNormState, Tensor, backward


def conv_reference(x, w, stride=1, padding="same"):
    """Nested-loop cross-correlation, independent of the library internals."""
    B, H, W, Ci = x.shape
    Co, _, F, _ = w.shape
    if padding == "same":
        oh, ow = -(-H // stride), -(-W // stride)
        pt = max((oh - 1) * stride + F - H, 0) // 2
        pl = max((ow - 1) * stride + F - W, 0) // 2
    else:
        oh, ow = (H - F) // stride + 1, (W - F) // stride + 1
        pt = pl = 0
    out = np.zeros((B, oh, ow, Co))
    for b in range(B):
        for i in range(oh):
            for j in range(ow):
                for co in range(Co):
                    acc = 0.0
                    for m in range(F):
                        for n in range(F):
                            yi = i * stride + m - pt
                            xj = j * stride + n - pl
                            if 0 <= yi < H and 0 <= xj < W:
                                acc += (w[co, :, m, n] * x[b, yi, xj, :]).sum()
                    out[b, i, j, co] = acc
    return out


class TestConv:
    @pytest.mark.parametrize("shape,f,stride,padding", [
        ((2, 5, 5, 3), 3, 1, "same"),
        ((1, 7, 6, 2), 5, 1, "same"),
        ((2, 8, 8, 3), 3, 2, "same"),
        ((1, 9, 9, 1), 3, 2, "valid"),
        ((2, 6, 5, 4), 1, 1, "same"),
        ((1, 7, 7, 2), 3, 3, "same"),
    ])
    def test_matches_loop_reference(self, shape, f, stride, padding):
        rng = np.random.default_rng(42)
        x = rng.normal(size=shape)
        w = rng.normal(size=(4, shape[3], f, f))
        got = T.conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding)
        want = conv_reference(x, w, stride, padding)
        assert got.data.shape == want.shape
        np.testing.assert_allclose(got.data, want, rtol=0, atol=1e-12)

    def test_bias_adds_per_channel(self):
        rng = np.random.default_rng(0)
        x, w = rng.normal(size=(1, 4, 4, 2)), rng.normal(size=(3, 2, 3, 3))
        b = np.array([1.0, -2.0, 0.5])
        plain = T.conv2d(Tensor(x), Tensor(w)).data
        biased = T.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
        np.testing.assert_allclose(biased - plain, np.broadcast_to(b, plain.shape))

    def test_rejects_even_kernel(self):
        with pytest.raises(ValueError, match="odd"):
            T.conv2d(Tensor(np.zeros((1, 4, 4, 2))), Tensor(np.zeros((1, 2, 2, 2))))

    def test_rejects_channel_mismatch(self):
        with pytest.raises(ValueError, match="channels"):
            T.conv2d(Tensor(np.zeros((1, 4, 4, 3))), Tensor(np.zeros((1, 2, 3, 3))))

    def test_same_padding_preserves_extents_any_stride(self):
        x = Tensor(np.zeros((1, 11, 7, 2)))
        w = Tensor(np.zeros((3, 2, 5, 5)))
        assert T.conv2d(x, w, stride=2).data.shape == (1, 6, 4, 3)
        assert T.conv2d(x, w, stride=1).data.shape == (1, 11, 7, 3)


def dense_conv_matrix(w, in_hw, stride, in_ch):
    """Conv as an explicit matrix, column per input element, row per output."""
    H, W = in_hw
    probes = np.eye(H * W * in_ch)
    cols = []
    for p in probes:
        x = p.reshape(1, H, W, in_ch)
        cols.append(T.conv2d(Tensor(x), Tensor(w), stride=stride).data.reshape(-1))
    return np.stack(cols, axis=1)


class TestTransposedConv:
    def test_is_exact_adjoint_of_conv(self):
        # <conv(x), y> == <x, tconv(y)> for all x, y <=> tconv == conv^T.
        rng = np.random.default_rng(7)
        w = rng.normal(size=(3, 2, 3, 3))
        H, W, s = 6, 5, 2
        A = dense_conv_matrix(w, (H, W), s, 2)
        oh, ow = -(-H // s), -(-W // s)
        probes = np.eye(oh * ow * 3)
        cols = []
        for p in probes:
            y = p.reshape(1, oh, ow, 3)
            out = T.transposed_conv2d(Tensor(y), Tensor(w), stride=s, out_hw=(H, W))
            cols.append(out.data.reshape(-1))
        At = np.stack(cols, axis=1)
        np.testing.assert_allclose(At, A.T, rtol=0, atol=1e-10)

    def test_known_tiny_case(self):
        # One output pixel of value 1, 3x3 kernel of ones, stride 2: the
        # adjoint scatters the kernel over exactly the window the forward
        # conv would have read. A same-pad 4x4 stride-2 conv pads only on
        # the high side, so output (0,0) reads input rows/cols 0..2.
        w = np.ones((1, 1, 3, 3))
        y = np.zeros((1, 2, 2, 1))
        y[0, 0, 0, 0] = 1.0
        out = T.transposed_conv2d(Tensor(y), Tensor(w), stride=2).data[0, :, :, 0]
        want = np.zeros((4, 4))
        want[0:3, 0:3] = 1.0
        np.testing.assert_allclose(out, want)

    def test_gradient_of_tconv_input_is_forward_conv(self):
        rng = np.random.default_rng(3)
        w = rng.normal(size=(2, 3, 3, 3))
        y = Tensor(rng.normal(size=(1, 3, 3, 2)), requires_grad=True)
        out = T.transposed_conv2d(y, Tensor(w), stride=2)
        g = rng.normal(size=out.data.shape)
        backward((out * g).sum())
        want = T.conv2d(Tensor(g), Tensor(w), stride=2).data
        np.testing.assert_allclose(y.grad, want, atol=1e-12)

    def test_rejects_unreachable_extents(self):
        y = Tensor(np.zeros((1, 3, 3, 1)))
        w = Tensor(np.zeros((1, 1, 3, 3)))
        with pytest.raises(ValueError, match="reachable"):
            T.transposed_conv2d(y, w, stride=2, out_hw=(8, 8))


class TestMaxPool:
    def test_matches_loop_reference(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(2, 6, 6, 3))
        got = T.maxpool2d(Tensor(x), 2, 2).data
        want = x.reshape(2, 3, 2, 3, 2, 3).max(axis=(2, 4))
        np.testing.assert_allclose(got, want)

    def test_tie_routes_gradient_to_first_occurrence(self):
        x = Tensor(np.ones((1, 2, 2, 1)), requires_grad=True)
        backward(T.maxpool2d(x, 2, 2).sum())
        want = np.zeros((1, 2, 2, 1))
        want[0, 0, 0, 0] = 1.0
        np.testing.assert_allclose(x.grad, want)

    def test_window_larger_than_input_fails(self):
        with pytest.raises(ValueError, match="window"):
            T.maxpool2d(Tensor(np.zeros((1, 2, 2, 1))), 3, 1)


class TestUpsample:
    def test_nearest_repeats_pixels(self):
        x = np.arange(4.0).reshape(1, 2, 2, 1)
        got = T.upsample_nearest(Tensor(x), 2).data[0, :, :, 0]
        want = np.array([[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]], dtype=float)
        np.testing.assert_allclose(got, want)

    def test_backward_sums_each_block(self):
        x = Tensor(np.zeros((1, 2, 2, 1)), requires_grad=True)
        backward(T.upsample_nearest(x, 3).sum())
        np.testing.assert_allclose(x.grad, np.full((1, 2, 2, 1), 9.0))


class TestBatchNorm:
    def test_train_mode_normalizes_batch(self):
        rng = np.random.default_rng(1)
        x = rng.normal(3.0, 2.0, size=(4, 5, 5, 3))
        ones, zeros = Tensor(np.ones(3)), Tensor(np.zeros(3))
        y = T.batchnorm(Tensor(x), ones, zeros).data
        np.testing.assert_allclose(y.mean(axis=(0, 1, 2)), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.std(axis=(0, 1, 2)), 1.0, atol=1e-3)

    def test_scale_and_shift_apply_per_channel(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 3, 3, 2))
        y = T.batchnorm(Tensor(x), Tensor(np.array([2.0, 1.0])), Tensor(np.array([5.0, -1.0]))).data
        np.testing.assert_allclose(y.mean(axis=(0, 1, 2)), [5.0, -1.0], atol=1e-12)

    def test_running_stats_update_with_momentum(self):
        rng = np.random.default_rng(3)
        x = rng.normal(1.0, 1.0, size=(8, 4, 4, 2))
        state = BatchNormState(2)
        T.batchnorm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), state=state)
        mu = x.mean(axis=(0, 1, 2))
        var = x.var(axis=(0, 1, 2))
        np.testing.assert_allclose(state.mean, 0.1 * mu, atol=1e-12)
        np.testing.assert_allclose(state.var, 0.9 + 0.1 * var, atol=1e-12)

    def test_eval_mode_uses_running_stats(self):
        state = BatchNormState(1)
        state.mean[:] = 2.0
        state.var[:] = 4.0
        x = Tensor(np.full((1, 1, 1, 1), 6.0))
        y = T.batchnorm(x, Tensor(np.ones(1)), Tensor(np.zeros(1)), mode="eval", state=state)
        np.testing.assert_allclose(y.data, (6.0 - 2.0) / np.sqrt(4.0 + 1e-5))

    def test_eval_without_state_fails(self):
        with pytest.raises(ValueError, match="running statistics"):
            T.batchnorm(Tensor(np.zeros((1, 1, 1, 1))), Tensor(np.ones(1)),
                        Tensor(np.zeros(1)), mode="eval")


class TestBackwardBasics:
    def test_chain_through_arithmetic(self):
        x = Tensor(np.array([2.0, -1.0]), requires_grad=True)
        y = (x * x * 3.0 + 2.0 * x).sum()
        backward(y)
        np.testing.assert_allclose(x.grad, 6.0 * x.data + 2.0)

    def test_gradients_accumulate_across_reuse(self):
        x = Tensor(np.array([4.0]), requires_grad=True)
        backward((x * x + x * 5.0).sum())
        np.testing.assert_allclose(x.grad, [2.0 * 4.0 + 5.0])

    def test_broadcast_gradient_sums_back(self):
        x = Tensor(np.ones((3, 1)), requires_grad=True)
        b = Tensor(np.ones(4), requires_grad=True)
        backward((x + b).sum())
        np.testing.assert_allclose(x.grad, np.full((3, 1), 4.0))
        np.testing.assert_allclose(b.grad, np.full(4, 3.0))

    def test_non_scalar_backward_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            backward(x * 2.0)

    def test_leaky_relu_slope(self):
        x = Tensor(np.array([-2.0, 3.0]), requires_grad=True)
        y = T.leaky_relu(x)
        np.testing.assert_allclose(y.data, [-0.2, 3.0])
        backward(y.sum())
        np.testing.assert_allclose(x.grad, [0.1, 1.0])

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        p = T.softmax(Tensor(rng.normal(size=(4, 7))), axis=-1).data
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
        assert (p > 0).all()

    def test_concat_and_slice_route_gradients(self):
        a = Tensor(np.ones((2, 2)), requires_grad=True)
        b = Tensor(np.ones((2, 3)), requires_grad=True)
        c = T.concat([a, b], axis=1)
        backward(c[:, 1:4].sum())
        np.testing.assert_allclose(a.grad, [[0, 1], [0, 1]])
        np.testing.assert_allclose(b.grad, [[1, 1, 0], [1, 1, 0]])

    def test_detach_blocks_gradient(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        backward((x.detach() * x).sum())
        np.testing.assert_allclose(x.grad, [3.0])


class TestDeterminism:
    def test_identical_runs_are_bit_identical(self):
        def run():
            rng = np.random.default_rng(99)
            x = Tensor(rng.normal(size=(2, 8, 8, 3)), requires_grad=True)
            w = Tensor(rng.normal(size=(4, 3, 3, 3)), requires_grad=True)
            y = T.maxpool2d(T.leaky_relu(T.conv2d(x, w, stride=1)), 2, 2)
            loss = (y * y).sum()
            backward(loss)
            return loss.item(), x.grad.copy(), w.grad.copy()

        l1, gx1, gw1 = run()
        l2, gx2, gw2 = run()
        assert l1 == l2
        assert np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)


class TestAdam:
    def test_first_step_matches_hand_computation(self):
        # With bias correction the first update is exactly -lr * g/(|g|+eps).
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.array([0.5, -3.0])
        opt = Adam([p], lr=0.1)
        opt.step()
        want = np.array([1.0, -2.0]) - 0.1 * np.sign([0.5, -3.0]) * (
            np.abs([0.5, -3.0]) / (np.abs([0.5, -3.0]) + 1e-8))
        np.testing.assert_allclose(p.data, want, atol=1e-12)

    def test_constant_gradient_step_size_approaches_lr(self):
        value = np.array([0.0])
        m, v = np.zeros(1), np.zeros(1)
        prev = 0.0
        for t in range(1, 400):
            adam_step(value, np.array([1.0]), m, v, t, lr=0.01)
            step_len = prev - value[0]
            prev = value[0]
        assert abs(step_len - 0.01) < 1e-4

    def test_step_without_gradient_fails(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        opt = Adam([("weights", p)], lr=0.1)
        with pytest.raises(RuntimeError, match="weights"):
            opt.step()

    def test_two_optimizers_same_seed_identical(self):
        def run():
            rng = np.random.default_rng(12)
            p = Tensor(rng.normal(size=5), requires_grad=True)
            opt = Adam([p], lr=0.05)
            for _ in range(10):
                opt.zero_grad()
                backward((p * p).sum())
                opt.step()
            return p.data.copy()

        np.testing.assert_array_equal(run(), run())
