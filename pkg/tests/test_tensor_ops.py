"""Tensor engine and op-level tests: forward values against numpy, reverse
mode against hand derivatives, and the recording semantics of the tape."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from capsnet import GradientTape, Tensor
from capsnet import ops
from capsnet.errors import BatchSizeError, ShapeError


def grad_of(fn, *tensors):
    with GradientTape() as tape:
        out = fn()
    return tape.gradient(out, list(tensors))


class TestTensor:
    def test_wraps_and_casts_to_float(self):
        t = Tensor([1, 2, 3])
        assert t.dtype == np.float64
        assert t.shape == (3,)

    def test_preserves_float32(self):
        t = Tensor(np.zeros((2, 2), dtype=np.float32))
        assert t.dtype == np.float32

    def test_rejects_zero_extent(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 0)))

    def test_item_requires_scalar(self):
        with pytest.raises(ShapeError):
            Tensor([1.0, 2.0]).item()

    def test_operator_sugar(self):
        a = Tensor([2.0, 3.0])
        b = Tensor([4.0, 5.0])
        assert np.allclose((a + b).data, [6, 8])
        assert np.allclose((a - b).data, [-2, -2])
        assert np.allclose((a * b).data, [8, 15])
        assert np.allclose((a / b).data, [0.5, 0.6])
        assert np.allclose((-a).data, [-2, -3])
        assert np.allclose((1.0 - a).data, [-1, -2])


class TestTape:
    def test_no_tape_no_tracking(self):
        x = Tensor([1.0], requires_grad=True)
        y = ops.square(x)
        assert not y.requires_grad

    def test_tapes_do_not_nest(self):
        with GradientTape():
            with pytest.raises(RuntimeError):
                with GradientTape():
                    pass

    def test_gradient_requires_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with GradientTape() as tape:
            y = ops.square(x)
        with pytest.raises(ShapeError):
            tape.gradient(y, [x])

    def test_unused_source_gets_zeros(self):
        x = Tensor([1.0], requires_grad=True)
        z = Tensor([5.0], requires_grad=True)
        with GradientTape() as tape:
            y = ops.reduce_sum(ops.square(x))
        gx, gz = tape.gradient(y, [x, z])
        assert np.allclose(gx, [2.0])
        assert np.allclose(gz, [0.0])

    def test_fanout_accumulates(self):
        # y = x*x + 3x uses x twice; dy/dx = 2x + 3
        x = Tensor([2.0], requires_grad=True)
        with GradientTape() as tape:
            y = ops.reduce_sum(ops.add(ops.multiply(x, x), ops.multiply(x, 3.0)))
        (g,) = tape.gradient(y, [x])
        assert np.allclose(g, [7.0])

    def test_backward_sets_grad_on_leaves(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with GradientTape() as tape:
            y = ops.reduce_sum(ops.square(x))
        tape.backward(y)
        assert np.allclose(x.grad, [2.0, 4.0])

    def test_gradient_of_intermediate(self):
        x = Tensor([3.0], requires_grad=True)
        with GradientTape() as tape:
            h = ops.square(x)
            y = ops.reduce_sum(ops.multiply(h, 2.0))
        (gh,) = tape.gradient(y, [h])
        assert np.allclose(gh, [2.0])

    def test_constants_are_not_differentiated(self):
        x = Tensor([1.0], requires_grad=True)
        c = Tensor([2.0])
        with GradientTape() as tape:
            y = ops.reduce_sum(ops.multiply(x, c))
        assert len(tape) > 0
        (g,) = tape.gradient(y, [c])
        assert np.allclose(g, [0.0])


class TestElementwise:
    def test_broadcast_add_grad(self):
        a = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.ones((3,)), requires_grad=True)
        with GradientTape() as tape:
            y = ops.reduce_sum(ops.add(a, b))
        ga, gb = tape.gradient(y, [a, b])
        assert ga.shape == (2, 3) and np.allclose(ga, 1.0)
        assert gb.shape == (3,) and np.allclose(gb, 2.0)

    def test_divide_grads(self):
        a = Tensor([6.0], requires_grad=True)
        b = Tensor([3.0], requires_grad=True)
        with GradientTape() as tape:
            y = ops.reduce_sum(ops.divide(a, b))
        ga, gb = tape.gradient(y, [a, b])
        assert np.allclose(ga, 1 / 3)
        assert np.allclose(gb, -6 / 9)

    def test_exp_log_sqrt_square(self, rng):
        x = rng.uniform(0.5, 2.0, (4,))
        t = Tensor(x, requires_grad=True)
        for fn, dfn in [(ops.exp, np.exp), (ops.log, lambda v: 1 / v),
                        (ops.sqrt, lambda v: 0.5 / np.sqrt(v)),
                        (ops.square, lambda v: 2 * v)]:
            with GradientTape() as tape:
                y = ops.reduce_sum(fn(t))
            (g,) = tape.gradient(y, [t])
            assert np.allclose(g, dfn(x))

    def test_relu_masks_gradient(self):
        x = Tensor([-1.0, 2.0], requires_grad=True)
        with GradientTape() as tape:
            y = ops.reduce_sum(ops.relu(x))
        (g,) = tape.gradient(y, [x])
        assert np.allclose(g, [0.0, 1.0])

    def test_sigmoid_range_and_grad(self, rng):
        x = Tensor(rng.standard_normal(10), requires_grad=True)
        with GradientTape() as tape:
            y = ops.reduce_sum(ops.sigmoid(x))
        (g,) = tape.gradient(y, [x])
        s = 1 / (1 + np.exp(-x.data))
        assert np.all((s > 0) & (s < 1))
        assert np.allclose(g, s * (1 - s))

    def test_float32_stays_float32(self):
        a = Tensor(np.ones(3, dtype=np.float32))
        out = ops.add(ops.multiply(a, 2.0), 1.0)
        assert out.dtype == np.float32


class TestReductionsAndShape:
    def test_reduce_sum_axis_keepdims(self, rng):
        x = rng.standard_normal((2, 3, 4))
        t = Tensor(x, requires_grad=True)
        out = ops.reduce_sum(t, axis=(0, 2), keepdims=True)
        assert out.shape == (1, 3, 1)
        assert np.allclose(out.data, x.sum(axis=(0, 2), keepdims=True))
        with GradientTape() as tape:
            y = ops.reduce_sum(ops.square(ops.reduce_sum(t, axis=2)))
        (g,) = tape.gradient(y, [t])
        assert np.allclose(g, np.broadcast_to(2 * x.sum(axis=2)[..., None], x.shape))

    def test_reduce_mean_matches_numpy(self, rng):
        x = rng.standard_normal((3, 5))
        t = Tensor(x, requires_grad=True)
        with GradientTape() as tape:
            y = ops.reduce_mean(t)
        (g,) = tape.gradient(y, [t])
        assert np.allclose(y.data, x.mean())
        assert np.allclose(g, np.full_like(x, 1 / x.size))

    def test_reshape_is_view_roundtrip(self, rng):
        x = rng.standard_normal((2, 6))
        t = Tensor(x, requires_grad=True)
        with GradientTape() as tape:
            y = ops.reduce_sum(ops.square(ops.reshape(t, (3, 4))))
        (g,) = tape.gradient(y, [t])
        assert g.shape == (2, 6)
        assert np.allclose(g, 2 * x)

    def test_transpose(self, rng):
        x = rng.standard_normal((2, 3, 4))
        t = Tensor(x, requires_grad=True)
        out = ops.transpose(t, (2, 0, 1))
        assert out.shape == (4, 2, 3)
        proj = rng.standard_normal((4, 2, 3))
        with GradientTape() as tape:
            y = ops.reduce_sum(ops.multiply(ops.transpose(t, (2, 0, 1)), Tensor(proj)))
        (g,) = tape.gradient(y, [t])
        assert np.allclose(g, proj.transpose(1, 2, 0))

    def test_softmax_rows_sum_to_one(self, rng):
        x = rng.standard_normal((5, 9)) * 3
        y = ops.softmax(Tensor(x), axis=-1)
        assert np.allclose(y.data.sum(-1), 1.0)
        # invariant to a constant shift per row
        y2 = ops.softmax(Tensor(x + 100.0), axis=-1)
        assert np.allclose(y.data, y2.data)


class TestMatmulEinsum:
    def test_matmul_value_and_grads(self, rng):
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((4, 2))
        ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
        proj = rng.standard_normal((3, 2))
        with GradientTape() as tape:
            y = ops.reduce_sum(ops.multiply(ops.matmul(ta, tb), Tensor(proj)))
        ga, gb = tape.gradient(y, [ta, tb])
        assert np.allclose(ga, proj @ b.T)
        assert np.allclose(gb, a.T @ proj)

    def test_matmul_shape_errors(self):
        with pytest.raises(ShapeError):
            ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
        with pytest.raises(ShapeError):
            ops.matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))

    def test_einsum2_matches_numpy(self, rng):
        w = rng.standard_normal((3, 4, 5, 6))
        u = rng.standard_normal((4, 5))
        out = ops.einsum2("jnio,ni->jno", Tensor(w), Tensor(u))
        assert np.allclose(out.data, np.einsum("jnio,ni->jno", w, u))

    def test_einsum2_grads_via_swap(self, rng):
        w = Tensor(rng.standard_normal((2, 3, 4, 5)), requires_grad=True)
        u = Tensor(rng.standard_normal((6, 3, 4)), requires_grad=True)
        proj = rng.standard_normal((6, 2, 3, 5))
        with GradientTape() as tape:
            y = ops.reduce_sum(ops.multiply(
                ops.einsum2("jnio,bni->bjno", w, u), Tensor(proj)))
        gw, gu = tape.gradient(y, [w, u])
        assert np.allclose(gw, np.einsum("bjno,bni->jnio", proj, u.data))
        assert np.allclose(gu, np.einsum("bjno,jnio->bni", proj, w.data))

    @pytest.mark.parametrize("pattern", [
        "ab,bc",            # missing arrow
        "ab,bc->ac,d",      # malformed
        "aab,bc->ac",       # repeated label in one operand
        "abz,bc->ac",       # z summed out of lhs alone
        "ab,bc->ad",        # output label nowhere
    ])
    def test_einsum2_rejects_unsupported_patterns(self, pattern):
        a = Tensor(np.ones((2, 2, 2)) if pattern.startswith(("aab", "abz")) else np.ones((2, 2)))
        b = Tensor(np.ones((2, 2)))
        with pytest.raises(ShapeError):
            ops.einsum2(pattern, a, b)


def conv2d_loop_reference(x, w, stride, padding):
    """Independent direct-summation convolution used to pin conv2d down."""
    n, h, wd, c = x.shape
    kh, kw, _, co = w.shape
    if padding == "same":
        ho = -(-h // stride)
        wo = -(-wd // stride)
        ph = max((ho - 1) * stride + kh - h, 0)
        pw = max((wo - 1) * stride + kw - wd, 0)
        xp = np.pad(x, ((0, 0), (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2), (0, 0)))
    else:
        ho = (h - kh) // stride + 1
        wo = (wd - kw) // stride + 1
        xp = x
    out = np.zeros((n, ho, wo, co))
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                patch = xp[b, i * stride:i * stride + kh, j * stride:j * stride + kw, :]
                for f in range(co):
                    out[b, i, j, f] = np.sum(patch * w[:, :, :, f])
    return out


class TestConv2d:
    @pytest.mark.parametrize("stride,padding,hw", [
        (1, "same", (5, 5)), (2, "same", (5, 7)), (2, "same", (8, 8)),
        (1, "valid", (6, 4)), (3, "valid", (9, 9)),
    ])
    def test_matches_loop_reference(self, rng, stride, padding, hw):
        x = rng.standard_normal((2, hw[0], hw[1], 3))
        w = rng.standard_normal((3, 3, 3, 4))
        out = ops.conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding)
        ref = conv2d_loop_reference(x, w, stride, padding)
        assert out.shape == ref.shape
        assert np.allclose(out.data, ref, atol=1e-12)

    def test_same_output_size_rule(self, rng):
        x = Tensor(rng.standard_normal((1, 7, 7, 1)))
        w = Tensor(rng.standard_normal((3, 3, 1, 1)))
        assert ops.conv2d(x, w, stride=2, padding="same").shape == (1, 4, 4, 1)
        assert ops.conv2d(x, w, stride=1, padding="same").shape == (1, 7, 7, 1)

    def test_shape_errors(self, rng):
        x = Tensor(rng.standard_normal((1, 5, 5, 2)))
        with pytest.raises(ShapeError):
            ops.conv2d(x, Tensor(rng.standard_normal((3, 3, 3, 4))))  # channel mismatch
        with pytest.raises(ShapeError):
            ops.conv2d(x, Tensor(rng.standard_normal((3, 3, 2, 4))), stride=0)
        with pytest.raises(ShapeError):
            ops.conv2d(x, Tensor(rng.standard_normal((3, 3, 2, 4))), padding="full")
        with pytest.raises(ShapeError):
            ops.conv2d(Tensor(rng.standard_normal((1, 2, 2, 2))),
                       Tensor(rng.standard_normal((3, 3, 2, 1))), padding="valid")

    def test_gradient_against_loop_reference(self, rng):
        # numeric check of conv gradients against the loop oracle via FD
        x = rng.standard_normal((1, 4, 4, 2))
        w = rng.standard_normal((3, 3, 2, 2)) * 0.5
        tx, tw = Tensor(x, requires_grad=True), Tensor(w, requires_grad=True)
        proj = rng.standard_normal((1, 2, 2, 2))
        with GradientTape() as tape:
            y = ops.reduce_sum(ops.multiply(
                ops.conv2d(tx, tw, stride=2, padding="same"), Tensor(proj)))
        gx, gw = tape.gradient(y, [tx, tw])
        h = 1e-6

        def f(xa, wa):
            return np.sum(conv2d_loop_reference(xa, wa, 2, "same") * proj)

        for _ in range(5):
            i = tuple(rng.integers(0, s) for s in x.shape)
            xp_, xm_ = x.copy(), x.copy()
            xp_[i] += h
            xm_[i] -= h
            assert abs((f(xp_, w) - f(xm_, w)) / (2 * h) - gx[i]) < 1e-6
            j = tuple(rng.integers(0, s) for s in w.shape)
            wp_, wm_ = w.copy(), w.copy()
            wp_[j] += h
            wm_[j] -= h
            assert abs((f(x, wp_) - f(x, wm_)) / (2 * h) - gw[j]) < 1e-6


class TestPoolAndBatchNorm:
    def test_global_avg_pool(self, rng):
        x = rng.standard_normal((2, 3, 4, 5))
        out = ops.global_avg_pool(Tensor(x))
        assert np.allclose(out.data, x.mean(axis=(1, 2)))

    def test_batch_norm_normalizes_in_training(self, rng):
        x = rng.standard_normal((16, 3, 3, 4)) * 3 + 2
        stats = ops.RunningStats(4, dtype=np.float64)
        out = ops.batch_norm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)),
                             stats, training=True)
        flat = out.data.reshape(-1, 4)
        assert np.allclose(flat.mean(0), 0.0, atol=1e-10)
        assert np.allclose(flat.std(0), 1.0, atol=1e-3)

    def test_batch_norm_updates_running_stats(self, rng):
        x = rng.standard_normal((8, 4)) + 5
        stats = ops.RunningStats(4, dtype=np.float64)
        ops.batch_norm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)),
                       stats, training=True)
        expected_mean = 0.9 * 0.0 + 0.1 * x.mean(0)
        assert np.allclose(stats.mean, expected_mean)

    def test_batch_norm_eval_uses_running_stats(self, rng):
        x = rng.standard_normal((4, 4))
        stats = ops.RunningStats(4, dtype=np.float64)
        stats.load({"mean": np.full(4, 2.0), "var": np.full(4, 4.0)})
        out = ops.batch_norm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)),
                             stats, training=False)
        assert np.allclose(out.data, (x - 2.0) / np.sqrt(4.0 + 1e-5))

    def test_batch_norm_rejects_tiny_training_batch(self):
        stats = ops.RunningStats(3, dtype=np.float64)
        with pytest.raises(BatchSizeError):
            ops.batch_norm(Tensor(np.ones((1, 3))), Tensor(np.ones(3)),
                           Tensor(np.zeros(3)), stats, training=True)
        # eval mode has no batch-size requirement
        ops.batch_norm(Tensor(np.ones((1, 3))), Tensor(np.ones(3)),
                       Tensor(np.zeros(3)), stats, training=False)

    def test_batch_norm_shape_errors(self):
        stats = ops.RunningStats(3, dtype=np.float64)
        with pytest.raises(ShapeError):
            ops.batch_norm(Tensor(np.ones((4, 3))), Tensor(np.ones(2)),
                           Tensor(np.zeros(3)), stats, training=True)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-50, 50, allow_nan=False)))
def test_softmax_is_always_a_distribution(x):
    y = ops.softmax(Tensor(x), axis=-1).data
    assert np.all(y > 0)
    assert np.allclose(y.sum(-1), 1.0, atol=1e-12)
