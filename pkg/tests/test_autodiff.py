"""Tests for the reverse-mode engine: op adjoints, grad(), the FD oracle."""

import numpy as np
import pytest

from thermosplat import autodiff as ad
from thermosplat.autodiff import (ParamSet, Tensor, finite_difference_check,
                                  grad, tensor)


def numeric_grad(f, x, h=1e-6):
    """Central-difference gradient of a scalar function of one array."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        fp = f(x)
        flat[i] = keep - h
        fm = f(x)
        flat[i] = keep
        gf[i] = (fp - fm) / (2 * h)
    return g


def check_op(op, shapes, seed=0, h=1e-6, rtol=1e-6, atol=1e-9, positive=False):
    """Compare the tape gradient of sum(op(xs)) against central differences."""
    rng = np.random.default_rng(seed)
    arrays = [rng.uniform(0.5, 1.5, s) if positive else rng.normal(size=s) for s in shapes]
    for k in range(len(arrays)):
        def f(x):
            args = [a.copy() for a in arrays]
            args[k] = x
            return ad.tsum(op(*[tensor(a) for a in args])).data.item()

        ts = [tensor(a, requires_grad=(i == k)) for i, a in enumerate(arrays)]
        out = ad.tsum(op(*ts))
        out.backward()
        expected = numeric_grad(f, arrays[k], h=h)
        np.testing.assert_allclose(ts[k].grad, expected, rtol=rtol, atol=atol)


class TestElementwiseOps:
    def test_add_mul_broadcast(self):
        check_op(lambda a, b: a * b + a, [(3, 4), (4,)])
        check_op(lambda a, b: a - 2.0 * b, [(2, 1, 3), (5, 3)])

    def test_div_pow(self):
        check_op(lambda a, b: a / b, [(4, 3), (3,)], positive=True)
        check_op(lambda a: a**3, [(5,)])

    def test_unary_chain(self):
        check_op(lambda a: ad.exp(ad.sin(a)) + ad.cos(a), [(6,)])
        check_op(lambda a: ad.sqrt(a) * ad.log(a), [(4,)], positive=True)
        check_op(lambda a: ad.sigmoid(a) * ad.relu(a + 0.3), [(12,)])

    def test_abs_zero_gradient_at_kink(self):
        t = tensor(np.zeros(3), requires_grad=True)
        ad.tsum(ad.absolute(t)).backward()
        np.testing.assert_array_equal(t.grad, np.zeros(3))

    def test_clip_masks_gradient(self):
        t = tensor(np.array([-1.0, 0.5, 2.0]), requires_grad=True)
        ad.tsum(ad.clip(t, 0.0, 1.0)).backward()
        np.testing.assert_array_equal(t.grad, [0.0, 1.0, 0.0])

    def test_where(self):
        mask = np.array([True, False, True])
        check_op(lambda a, b: ad.where(mask, a, b), [(3,), (3,)])


class TestShapeAndReduce:
    def test_matmul(self):
        check_op(lambda a, b: a @ b, [(3, 4), (4, 2)])
        check_op(lambda a, b: a @ b, [(5, 2, 3), (5, 3, 2)])
        check_op(lambda a, b: a @ b, [(3, 3), (5, 3, 2)])

    def test_reductions(self):
        check_op(lambda a: ad.tsum(a, axis=0), [(3, 4)])
        check_op(lambda a: ad.tmean(a, axis=1, keepdims=True) * a, [(3, 4)])
        check_op(lambda a: ad.amax(a) - ad.amin(a), [(7,)])

    def test_indexing_scatter_adds(self):
        idx = np.array([0, 2, 2, 1])
        check_op(lambda a: ad.take(a, idx), [(3, 2)])
        check_op(lambda a: a[1:, :-1], [(4, 5)])

    def test_concat_stack_reshape(self):
        check_op(lambda a, b: ad.concatenate([a, b], axis=1), [(2, 3), (2, 2)])
        check_op(lambda a, b: ad.stack([a, b], axis=0), [(4,), (4,)])
        check_op(lambda a: ad.reshape(a, (6,)), [(2, 3)])
        check_op(lambda a: ad.swapaxes(a, 0, 1), [(2, 3)])

    def test_filter2d_and_pad(self):
        check_op(lambda a, k: ad.filter2d(a, k), [(6, 7), (3, 3)])
        check_op(lambda a: ad.pad_replicate(a, 2), [(4, 5)])

    def test_python_scalars_stay_weak(self):
        t = tensor(np.ones(3, dtype=np.float32))
        assert (2.0 * t + 1.0).dtype == np.float32
        assert (t / 3.0).dtype == np.float32
        assert ((t - 0.5) ** 2).dtype == np.float32


class TestGrad:
    def test_sum_of_squares(self):
        params = ParamSet()
        p = params.add("p", np.array([1.0, -2.0, 3.0]), group="g")
        grads = grad(lambda: ad.tsum(p * p), params)
        np.testing.assert_allclose(grads["p"], 2.0 * p.data)

    def test_constant_loss_zero_gradient(self):
        params = ParamSet()
        params.add("p", np.ones(4), group="g")
        grads = grad(lambda: tensor(7.0), params)
        np.testing.assert_array_equal(grads["p"], np.zeros(4))

    def test_non_scalar_loss_rejected(self):
        params = ParamSet()
        p = params.add("p", np.ones(4), group="g")
        with pytest.raises(ValueError):
            grad(lambda: p * 2.0, params)

    def test_gradient_of_sum_is_sum_of_gradients(self):
        rng = np.random.default_rng(3)
        params = ParamSet()
        p = params.add("p", rng.normal(size=5), group="g")

        def f():
            return ad.tsum(ad.sigmoid(p))

        def g():
            return ad.tsum(p * p * 0.5)

        gf = grad(f, params)["p"].copy()
        gg = grad(g, params)["p"].copy()
        gboth = grad(lambda: f() + g(), params)["p"]
        np.testing.assert_allclose(gboth, gf + gg, rtol=1e-12)

    def test_repeated_use_of_node_accumulates(self):
        params = ParamSet()
        p = params.add("p", np.array([2.0]), group="g")
        grads = grad(lambda: ad.tsum(p * p + p * 3.0), params)
        np.testing.assert_allclose(grads["p"], [2 * 2.0 + 3.0])

    def test_determinism_bit_identical(self):
        rng = np.random.default_rng(9)
        data = rng.normal(size=(8, 8))

        def run():
            params = ParamSet()
            p = params.add("p", data.copy(), group="g")
            return grad(lambda: ad.tsum(ad.sigmoid(p @ p.data.T @ p)), params)["p"]

        a, b = run(), run()
        assert np.array_equal(a, b)


class TestFiniteDifferenceCheck:
    def test_quadratic_is_exact(self):
        params = ParamSet()
        p = params.add("p", np.arange(1.0, 7.0), group="g")
        report = finite_difference_check(lambda: ad.tsum(p * p), params, h=1e-5)
        assert report.max_rel_error < 1e-9

    def test_sigmoid_chain(self):
        rng = np.random.default_rng(1)
        params = ParamSet()
        p = params.add("p", rng.normal(size=10), group="g")
        report = finite_difference_check(
            lambda: ad.tsum(ad.sigmoid(ad.sigmoid(p) * 2.0)), params, h=1e-5)
        assert report.max_rel_error < 1e-6

    def test_corrupted_gradient_is_flagged(self):
        params = ParamSet()
        p = params.add("p", np.array([0.7, -0.3]), group="g")

        def bad_square(t):
            out = t.data * t.data

            def backward(g):
                t._accumulate(g * 3.0 * t.data)  # wrong factor on purpose
            return Tensor(out, requires_grad=True, _parents=(t,), _backward=backward)

        report = finite_difference_check(lambda: ad.tsum(bad_square(p)), params)
        assert report.max_rel_error > 0.1
        assert report.worst_param == "p"

    def test_reports_worst_parameter_name(self):
        params = ParamSet()
        a = params.add("alpha", np.array([1.0]), group="g")
        b = params.add("beta", np.array([2.0]), group="g")
        report = finite_difference_check(lambda: ad.tsum(a * a) + ad.tsum(b * b), params)
        assert report.worst_param in ("alpha", "beta")
        assert set(report.per_param) == {"alpha", "beta"}
