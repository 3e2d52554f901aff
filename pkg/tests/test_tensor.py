import numpy as np
import pytest
from conftest import fd_grad, rel_err

from vibo_irt.diffcore import (
    DimensionError,
    Tensor,
    concat,
    elu,
    erf,
    log1mexp,
    logsigmoid,
    matmul,
    narrow,
    repeat_rows,
    run_backward,
    select,
    sigmoid,
    softplus,
    sqrt,
    take_rows,
    tanh,
    texp,
    tile_rows,
    tlog,
    transpose,
)

RNG = np.random.default_rng(20240811)


def check_grad(build, x0, h=1e-5, tol=1e-4):
    """build(Tensor) -> scalar Tensor; compares tape grad to central FD."""
    x0 = np.asarray(x0, dtype=np.float64)
    t = Tensor(x0, requires_grad=True)
    out = build(t)
    run_backward(out)
    ad = t.grad
    fd = fd_grad(lambda x: build(Tensor(x)).item(), x0, h=h)
    err = rel_err(ad, fd)
    assert err < tol, f"gradient mismatch {err:.3g}"


class TestForwardValues:
    def test_arithmetic_chain(self):
        a = Tensor([1.0, 2.0])
        b = Tensor([3.0, 4.0])
        out = (a * b + 2.0 - a / b).sum()
        expected = (1 * 3 + 2 - 1 / 3) + (2 * 4 + 2 - 2 / 4)
        assert abs(out.item() - expected) < 1e-12

    def test_sigmoid_tails_are_stable(self):
        x = Tensor([-800.0, 0.0, 800.0])
        y = sigmoid(x).data
        assert y[0] == 0.0 and y[1] == 0.5 and y[2] == 1.0
        ls = logsigmoid(x).data
        assert abs(ls[0] + 800.0) < 1e-9
        assert np.isfinite(ls).all()

    def test_elu_matches_piecewise_definition(self):
        x = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
        y = elu(Tensor(x)).data
        expected = np.where(x > 0, x, np.expm1(x))
        assert np.allclose(y, expected, atol=0, rtol=0)

    def test_elu_is_c1_at_zero(self):
        # one-sided difference quotients with an expm1-accurate left branch
        h = 1e-8
        right = (elu(Tensor([h])).data[0] - 0.0) / h
        left = (0.0 - elu(Tensor([-h])).data[0]) / h
        assert abs(right - left) < 1e-8

    def test_log1mexp_switches_forms_accurately(self):
        for x in [-1e-12, -1e-6, -0.1, -np.log(2.0), -5.0, -50.0]:
            got = log1mexp(Tensor([x])).data[0]
            if x > -1e-4:
                # series: 1-e^x = (-x)(1 + x/2 + x^2/6 + ...)
                want = np.log(-x) + np.log1p(x / 2.0 + x * x / 6.0)
            else:
                want = float(np.log1p(-np.exp(np.longdouble(x))))
            assert abs(got - want) < 1e-12, x

    def test_log1mexp_at_zero_is_neg_inf_not_crash(self):
        assert log1mexp(Tensor([0.0])).data[0] == -np.inf

    def test_matmul_requires_2d(self):
        with pytest.raises(DimensionError):
            matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))
        with pytest.raises(DimensionError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_backward_root_must_be_scalar(self):
        t = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(DimensionError):
            run_backward(t + 1.0)


class TestGradients:
    def test_add_mul_broadcast(self):
        x0 = RNG.standard_normal((3, 4))
        col = RNG.standard_normal((3, 1))
        row = RNG.standard_normal(4)
        check_grad(lambda t: ((t * col + row) * t).sum(), x0)

    def test_div_and_pow(self):
        x0 = RNG.uniform(0.5, 2.0, size=(2, 3))
        other = RNG.uniform(0.5, 2.0, size=(2, 3))
        check_grad(lambda t: (t / other + other / t + t ** 3).sum(), x0)

    def test_matmul_both_sides(self):
        a0 = RNG.standard_normal((3, 4))
        b = RNG.standard_normal((4, 2))
        check_grad(lambda t: (matmul(t, b) ** 2).sum(), a0)
        a = RNG.standard_normal((3, 4))
        check_grad(lambda t: (matmul(a, t) ** 2).sum(), RNG.standard_normal((4, 2)))

    def test_reductions_with_axes(self):
        x0 = RNG.standard_normal((3, 4, 2))
        check_grad(lambda t: (t.sum(axis=1) ** 2).sum(), x0)
        check_grad(lambda t: (t.mean(axis=(0, 2)) ** 2).sum(), x0)
        check_grad(lambda t: (t.sum(axis=2, keepdims=True) * t).sum(), x0)

    def test_elementwise_nonlinearities(self):
        x0 = RNG.uniform(-2.0, 2.0, size=7)
        for fn in (texp, tanh, sigmoid, softplus, elu, erf):
            check_grad(lambda t, fn=fn: (fn(t) * np.arange(1.0, 8.0)).sum(), x0)
        check_grad(lambda t: tlog(t * t + 1.0).sum(), x0)
        check_grad(lambda t: sqrt(t * t + 0.5).sum(), x0)
        check_grad(lambda t: logsigmoid(t).sum(), x0)

    def test_log1mexp_gradient(self):
        x0 = RNG.uniform(-3.0, -0.05, size=9)
        check_grad(lambda t: log1mexp(t).sum(), x0)

    def test_shape_ops(self):
        x0 = RNG.standard_normal((4, 3))
        c34 = RNG.standard_normal((3, 4))
        c123a = RNG.standard_normal((12, 3))
        c123b = RNG.standard_normal((12, 3))
        check_grad(lambda t: (t.reshape((2, 6)) ** 2).sum(), x0)
        check_grad(lambda t: (transpose(t) * c34).sum(), x0)
        check_grad(lambda t: (narrow(t, 1, 1, 2) ** 2).sum(), x0)
        check_grad(lambda t: (concat([t, t * 2.0], axis=0) ** 2).sum(), x0)
        check_grad(lambda t: (take_rows(t, [0, 2, 2, 1]) ** 3).sum(), x0)
        check_grad(lambda t: (repeat_rows(t, 3) * c123a).sum(), x0)
        check_grad(lambda t: (tile_rows(t, 3) * c123b).sum(), x0)

    def test_select_gradient_and_inf_isolation(self):
        mask = np.array([True, False, True, False])
        x0 = RNG.standard_normal(4)
        check_grad(lambda t: (select(mask, t * 2.0, t ** 2) * np.arange(1.0, 5.0)).sum(), x0)
        # an infinity on the unselected branch must not poison the result
        a = Tensor(np.array([1.0, 2.0, 3.0, 4.0]), requires_grad=True)
        bad = tlog(Tensor(np.array([1.0, 0.0, 1.0, 0.0])))  # -inf at unselected slots
        out = select(mask, a * 3.0, bad).sum()
        assert out.item() == -np.inf or np.isfinite(out.item()) is False
        picked = select(mask, a * 3.0, Tensor(np.zeros(4))).sum()
        run_backward(picked)
        assert np.allclose(a.grad, [3.0, 0.0, 3.0, 0.0])

    def test_grad_accumulates_over_reuse(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = (x * x + x).sum()  # dy/dx = 2x + 1 = 5
        run_backward(y)
        assert abs(x.grad[0] - 5.0) < 1e-12

    def test_composite_model_like_graph(self):
        w0 = RNG.standard_normal((5, 3))

        def build(t):
            x = Tensor(RNG_FIXED)
            h = elu(matmul(x, t))
            p = sigmoid(h.sum(axis=1))
            return (logsigmoid(matmul(x, t)).mean() + (p * p).sum())

        check_grad(build, w0)


RNG_FIXED = np.random.default_rng(7).standard_normal((4, 5))


class TestTapeMechanics:
    def test_constants_carry_no_tape(self):
        a = Tensor(np.ones(3))
        b = Tensor(np.ones(3))
        out = (a * b + 2.0).sum()
        assert out.requires_grad is False and out._backward is None

    def test_diamond_graph_gradient(self):
        # f = (x+x)*(x*x): df/dx = 2*x*x + (x+x)*2x = 6x^2
        x = Tensor(np.array([3.0]), requires_grad=True)
        s = x + x
        q = x * x
        run_backward((s * q).sum())
        assert abs(x.grad[0] - 54.0) < 1e-12
