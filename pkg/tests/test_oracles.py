"""The slow oracles are the ground truth everything else is judged against,
so they get their own checks: hand-computable cases, agreement between the
two independent formulations, and finite differences."""

import numpy as np
import pytest

from linattn.matrixops import DomainError
from linattn.oracles import (
    finite_difference_grads,
    left_product_backward,
    left_product_forward,
    max_rel_error,
    max_scaled_error,
    reference_backward,
    right_product_forward,
)


def test_left_product_hand_case_lam_1():
    q = k = np.array([[1.0], [1.0]])
    v = np.array([[1.0], [2.0]])
    out = left_product_forward(q, k, v, 1.0)
    assert np.array_equal(out, [[1.0], [3.0]])


def test_left_product_hand_case_lam_half():
    q = k = np.array([[1.0], [1.0]])
    v = np.array([[1.0], [2.0]])
    out = left_product_forward(q, k, v, 0.5)
    assert np.array_equal(out, [[1.0], [2.5]])  # o2 = 0.5*1 + 2


def test_single_token_case():
    rng = np.random.default_rng(0)
    q, k, v = (rng.standard_normal((1, 4)) for _ in range(3))
    expect = (q @ k.T).item() * v
    assert max_rel_error(left_product_forward(q, k, v, 0.7), expect) < 1e-15
    assert max_rel_error(right_product_forward(q, k, v, 0.7), expect) < 1e-15


def test_zero_values_give_zero_output():
    rng = np.random.default_rng(1)
    q, k = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
    out = left_product_forward(q, k, np.zeros((5, 3)), 1.0)
    assert np.array_equal(out, np.zeros((5, 3)))


@pytest.mark.parametrize("lam", [1.0, 0.9, 0.5])
@pytest.mark.parametrize("n,d", [(1, 1), (2, 4), (5, 16), (31, 4), (64, 16), (257, 1)])
def test_right_equals_left(n, d, lam):
    rng = np.random.default_rng(n * 100 + d)
    q, k, v = (rng.uniform(0.05, 1.0, (n, d)) for _ in range(3))
    err = max_rel_error(right_product_forward(q, k, v, lam), left_product_forward(q, k, v, lam))
    assert err < 1e-10, f"n={n} d={d} lam={lam}: {err:.3e}"


def test_right_equals_left_mixed_sign_scaled_metric():
    # sign-mixed data cancels catastrophically under the per-entry relative
    # metric; agreement is asserted against the overall scale instead
    rng = np.random.default_rng(7)
    q, k, v = (rng.standard_normal((129, 8)) for _ in range(3))
    err = max_scaled_error(right_product_forward(q, k, v, 0.9), left_product_forward(q, k, v, 0.9))
    assert err < 1e-13


def test_backward_hand_case():
    # n=1, d=1: o = q k v, so do=1 gives dq=kv, dk=qv, dv=qk
    g = reference_backward(np.array([[2.0]]), np.array([[3.0]]), np.array([[5.0]]), np.array([[1.0]]), 1.0)
    assert (g.dq.item(), g.dk.item(), g.dv.item()) == (15.0, 10.0, 6.0)


def test_backward_zero_cotangent():
    rng = np.random.default_rng(2)
    q, k, v = (rng.standard_normal((6, 3)) for _ in range(3))
    g = reference_backward(q, k, v, np.zeros((6, 3)), 0.8)
    for part in g:
        assert np.array_equal(part, np.zeros((6, 3)))


@pytest.mark.parametrize("lam", [1.0, 0.9, 0.5])
def test_left_route_backward_equals_recurrent_route(lam):
    rng = np.random.default_rng(11)
    q, k, v, do = (rng.uniform(0.05, 1.0, (23, 5)) for _ in range(4))
    a = left_product_backward(q, k, v, do, lam)
    b = reference_backward(q, k, v, do, lam)
    for ga, gb in zip(a, b):
        assert max_rel_error(ga, gb) < 1e-10


@pytest.mark.parametrize("n,d,lam", [(5, 3, 1.0), (9, 4, 0.9), (16, 8, 0.5)])
def test_backward_against_finite_differences(n, d, lam):
    rng = np.random.default_rng(n)
    q, k, v = (rng.uniform(0.05, 1.0, (n, d)) for _ in range(3))
    w = rng.uniform(0.05, 1.0, (n, d))  # weighting makes dO general, not all-ones
    g = reference_backward(q, k, v, w, lam)
    mats = [q, k, v]
    for idx, analytic in enumerate(g):
        def f(m, _i=idx):
            args = list(mats)
            args[_i] = m
            return float((left_product_forward(*args, lam) * w).sum())
        fd = finite_difference_grads(f, mats[idx], 1e-5)
        err = max_rel_error(analytic, fd)
        assert err < 1e-6, f"operand {idx}: {err:.3e}"


def test_finite_differences_on_known_functions():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 3))
    ones = finite_difference_grads(lambda m: float(m.sum()), x, 1e-4)
    assert np.allclose(ones, np.ones_like(x), rtol=0, atol=1e-10)
    # f(X) = ||X||^2 / 2 has gradient X, exactly quadratic so central
    # differences are exact up to roundoff
    grad = finite_difference_grads(lambda m: float((m * m).sum()) / 2.0, x, 1e-4)
    assert np.allclose(grad, x, rtol=0, atol=1e-10)


def test_finite_differences_do_not_mutate_input():
    x = np.zeros((2, 2))
    finite_difference_grads(lambda m: float(m.sum()), x, 1e-4)
    assert np.array_equal(x, np.zeros((2, 2)))


def test_oracles_reject_bad_decay_and_shapes():
    q = np.ones((3, 2))
    with pytest.raises(DomainError):
        left_product_forward(q, q, q, 0.0)
    with pytest.raises(ValueError):
        left_product_forward(q, np.ones((4, 2)), q, 1.0)


def test_max_rel_error_floor():
    # tiny absolute disagreements near zero are judged against the 1e-8 floor
    a, b = np.array([[0.0]]), np.array([[1e-12]])
    assert max_rel_error(a, b) < 1e-3
