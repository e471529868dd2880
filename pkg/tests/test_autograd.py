import numpy as np
import pytest

from rastergen import Tensor, concat, no_grad
from rastergen.errors import ShapeError
from rastergen.gradcheck import finite_diff_check


def t(arr, grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


class TestArithmetic:
    def test_add_mul_values(self):
        a = t([1.0, 2.0])
        b = t([3.0, 4.0])
        assert np.allclose((a + b).data, [4.0, 6.0])
        assert np.allclose((a * b).data, [3.0, 8.0])
        assert np.allclose((a - b).data, [-2.0, -2.0])
        assert np.allclose((2.0 - a).data, [1.0, 0.0])
        assert np.allclose((a / 2.0).data, [0.5, 1.0])

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            t([1.0, 2.0]) + t([[1.0], [2.0]])
        with pytest.raises(ShapeError):
            t([1.0, 2.0]) * t([1.0, 2.0, 3.0])

    def test_bias_add_last_axis(self):
        rng = np.random.default_rng(0)
        x = t(rng.normal(size=(3, 4, 5)))
        b = t(rng.normal(size=5))
        rep = finite_diff_check(lambda x, b: ((x + b) * (x + b)).sum(), [x, b], tolerance=1e-6)
        assert rep.passed, rep.max_rel_err

    def test_grad_accumulates_across_uses(self):
        x = t([2.0])
        y = x * 3.0 + x * 5.0
        y.backward(np.array([1.0]))
        assert np.allclose(x.grad, [8.0])
        # a second backward on a fresh graph adds on top
        z = x * 1.0
        z.backward(np.array([1.0]))
        assert np.allclose(x.grad, [9.0])

    def test_matmul_gradcheck(self):
        rng = np.random.default_rng(1)
        a = t(rng.normal(size=(4, 3)))
        b = t(rng.normal(size=(3, 5)))
        rep = finite_diff_check(lambda a, b: (a @ b).sum(), [a, b], tolerance=1e-6)
        assert rep.passed, rep.max_rel_err

    def test_batched_matmul_gradcheck(self):
        rng = np.random.default_rng(2)
        a = t(rng.normal(size=(2, 3, 4, 3)))
        b = t(rng.normal(size=(2, 3, 3, 2)))
        rep = finite_diff_check(lambda a, b: ((a @ b) * (a @ b)).sum(), [a, b], tolerance=1e-6)
        assert rep.passed, rep.max_rel_err

    def test_batched_matmul_rejects_mismatched_batch(self):
        a = t(np.zeros((2, 4, 3)))
        b = t(np.zeros((3, 3, 2)))
        with pytest.raises(ShapeError):
            a @ b


class TestShapeMoves:
    def test_reshape_transpose_slice_gradcheck(self):
        rng = np.random.default_rng(3)
        x = t(rng.normal(size=(2, 3, 4)))

        def f(x):
            y = x.reshape(6, 4).transpose(1, 0)
            return (y[1:3, :] * y[1:3, :]).sum()

        rep = finite_diff_check(f, [x], tolerance=1e-6)
        assert rep.passed, rep.max_rel_err

    def test_concat_gradcheck(self):
        rng = np.random.default_rng(4)
        a = t(rng.normal(size=(2, 3)))
        b = t(rng.normal(size=(4, 3)))
        rep = finite_diff_check(lambda a, b: (concat([a, b], axis=0) * concat([a, b], axis=0)).sum(),
                                [a, b], tolerance=1e-6)
        assert rep.passed, rep.max_rel_err

    def test_mean(self):
        x = t(np.arange(6, dtype=np.float64).reshape(2, 3))
        m = x.mean()
        assert m.item() == pytest.approx(2.5)
        m.backward()
        assert np.allclose(x.grad, np.full((2, 3), 1.0 / 6.0))


class TestGraphControl:
    def test_no_grad_records_nothing(self):
        x = t([1.0, 2.0])
        with no_grad():
            y = x * 2.0 + 1.0
        assert not y.requires_grad
        assert y._backward is None

    def test_detach_cuts_graph(self):
        x = t([3.0])
        y = x * 2.0
        z = y.detach() * 5.0
        z.backward(np.array([1.0]))
        assert x.grad is None

    def test_backward_needs_scalar_without_seed(self):
        x = t([[1.0, 2.0]])
        with pytest.raises(ShapeError):
            (x * 2.0).backward()

    def test_leaf_grads_survive_interior_cleanup(self):
        x = t([1.0, 2.0])
        y = (x * x).sum()
        y.backward()
        assert np.allclose(x.grad, [2.0, 4.0])
