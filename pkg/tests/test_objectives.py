import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from normcg.errors import InvalidInputError
from normcg.objectives import (AffineResidualMap, SmoothLoss, SmoothObjective,
                               compose_objective, eval_loss, l1_to_l2_norm,
                               loss_lipschitz)
from _reference import dense_matrix

vec10 = arrays(float, 10, elements=st.floats(-5, 5, allow_nan=False))


def test_quadratic_value_and_gradient():
    v, g = eval_loss(SmoothLoss("quadratic", 2), np.array([3.0, 4.0]))
    assert v == 12.5
    np.testing.assert_array_equal(g, [3.0, 4.0])


def test_smoothed_beta2_is_quadratic(rng):
    y = rng.standard_normal(7)
    v1, g1 = eval_loss(SmoothLoss("smoothed_linf", 7, beta=2.0), y)
    v2, g2 = eval_loss(SmoothLoss("quadratic", 7), y)
    assert v1 == pytest.approx(v2, rel=1e-12)
    np.testing.assert_allclose(g1, g2, rtol=1e-12)


def test_smoothed_gradient_at_zero_is_zero():
    v, g = eval_loss(SmoothLoss("smoothed_linf", 3, beta=4.0), np.zeros(3))
    assert v == 0.0 and not g.any()


def test_logistic_sandwich_example(rng):
    y = rng.standard_normal(10)
    v, _ = eval_loss(SmoothLoss("logistic", 10, beta=4.0), y)
    top = np.max(np.abs(y))
    assert top <= v <= top + np.log(20) / 4


@settings(max_examples=200, deadline=None)
@given(vec10, st.floats(0.5, 50))
def test_logistic_sandwich(y, beta):
    v, _ = eval_loss(SmoothLoss("logistic", 10, beta=beta), y)
    top = np.max(np.abs(y))
    assert top - 1e-12 <= v <= top + np.log(20) / beta + 1e-12


LOSSES = [SmoothLoss("quadratic", 6), SmoothLoss("smoothed_linf", 6, beta=4.0),
          SmoothLoss("logistic", 6, beta=3.0), SmoothLoss("quadratic", 6, one_sided=True),
          SmoothLoss("smoothed_linf", 6, beta=3.0, one_sided=True),
          SmoothLoss("logistic", 6, beta=2.0, one_sided=True)]


@pytest.mark.parametrize("loss", LOSSES, ids=lambda l: f"{l.kind}-{l.one_sided}")
def test_gradient_central_differences(loss):
    r = np.random.default_rng(3)
    h = 1e-6
    for _ in range(20):
        y = r.standard_normal(6)
        _, g = eval_loss(loss, y)
        fd = np.array([(eval_loss(loss, y + h * e)[0] - eval_loss(loss, y - h * e)[0]) / (2 * h)
                       for e in np.eye(6)])
        assert np.linalg.norm(fd - g) <= 1e-5 * max(1.0, np.linalg.norm(g))


@pytest.mark.parametrize("kind,beta", [("quadratic", None), ("smoothed_linf", 3.0)])
def test_one_sided_vanishes_on_nonpositive_orthant(kind, beta, rng):
    y = -np.abs(rng.standard_normal(5))
    v, g = eval_loss(SmoothLoss(kind, 5, beta=beta, one_sided=True), y)
    assert v == 0.0 and not g.any()


def test_lipschitz_constants():
    assert loss_lipschitz(SmoothLoss("quadratic", 3)) == 1.0
    assert loss_lipschitz(SmoothLoss("smoothed_linf", 100, beta=4.0)) == pytest.approx(30.0)
    assert loss_lipschitz(SmoothLoss("logistic", 3, beta=8.0)) == 8.0


def test_loss_validation():
    with pytest.raises(InvalidInputError):
        SmoothLoss("hinge", 3)
    with pytest.raises(InvalidInputError):
        SmoothLoss("smoothed_linf", 3, beta=1.5)
    with pytest.raises(InvalidInputError):
        eval_loss(SmoothLoss("quadratic", 3), np.ones(4))
    with pytest.raises(InvalidInputError):
        eval_loss(SmoothLoss("quadratic", 2), np.array([1.0, np.nan]))


def test_compose_identity_and_scaled():
    q = SmoothLoss("quadratic", 3)
    assert compose_objective(q, AffineResidualMap.identity((3,)), 1.0).lipschitz == 1.0
    two = AffineResidualMap.from_matrix(2 * np.eye(3))
    assert compose_objective(q, two, 2.0).lipschitz == 4.0


def test_adjoint_mismatch_detected():
    with pytest.raises(InvalidInputError):
        AffineResidualMap(lambda x: 2 * x, lambda y: y, np.zeros(3), (3,))


def test_value_from_image_matches_direct(rng):
    A = rng.standard_normal((5, 4))
    b = rng.standard_normal(5)
    obj = compose_objective(SmoothLoss("quadratic", 5), AffineResidualMap.from_matrix(A, b),
                            l1_to_l2_norm(A), shift=-0.3)
    x = rng.standard_normal(4)
    v, g = obj.value_grad(x)
    assert v == pytest.approx(0.5 * np.sum((A @ x - b) ** 2) - 0.3)
    np.testing.assert_allclose(g, A.T @ (A @ x - b))
    assert obj.value_grad_image(obj.image(x))[0] == v


def test_direct_objective_needs_exactly_one_form():
    with pytest.raises(InvalidInputError):
        SmoothObjective(1.0)
    with pytest.raises(InvalidInputError):
        SmoothObjective(0.0, value_grad=lambda x: (0.0, x))


def test_descent_lemma_l1_ball(rng):
    A = rng.standard_normal((8, 6))
    b = rng.standard_normal(8)
    obj = compose_objective(SmoothLoss("quadratic", 8), AffineResidualMap.from_matrix(A, b),
                            l1_to_l2_norm(A))
    for _ in range(1000):
        x, y = (_l1_ball_point(rng, 6) for _ in range(2))
        fx, gx = obj.value_grad(x)
        bound = fx + gx @ (y - x) + 0.5 * obj.lipschitz * np.sum(np.abs(y - x)) ** 2
        assert obj.value(y) <= bound + 1e-10


def test_descent_lemma_smoothed_linf(rng):
    A = rng.standard_normal((8, 6))
    loss = SmoothLoss("smoothed_linf", 8, beta=4.0)
    obj = compose_objective(loss, AffineResidualMap.from_matrix(A), np.max(np.abs(A)))
    for _ in range(1000):
        x, y = (_l1_ball_point(rng, 6) for _ in range(2))
        fx, gx = obj.value_grad(x)
        bound = fx + gx @ (y - x) + 0.5 * obj.lipschitz * np.sum(np.abs(y - x)) ** 2
        assert obj.value(y) <= bound + 1e-10


def _l1_ball_point(rng, d):
    v = rng.standard_normal(d)
    return v / np.sum(np.abs(v)) * rng.random()


def test_tv_norm_bound_cross_check():
    from normcg import linalg
    from normcg.harness import gaussian_kernel
    from normcg.tvflow import q_bound, tv_norm
    n = 8
    k = gaussian_kernel(7, 1.0)
    opn = np.sqrt(linalg.operator_norm_sq(lambda x: linalg.conv2d_zeropad(x, k),
                                          lambda y: linalg.conv2d_zeropad_adjoint(y, k), (n, n)))
    bound = opn * q_bound(n)
    A = dense_matrix(lambda x: linalg.conv2d_zeropad(x, k), (n, n))
    obj = compose_objective(SmoothLoss("quadratic", n * n),
                            AffineResidualMap.from_matrix(A), bound)
    assert np.isfinite(obj.lipschitz)
    r = np.random.default_rng(5)
    for _ in range(200):
        x = r.standard_normal((n, n))
        x -= x.mean()
        x /= tv_norm(x)
        assert np.linalg.norm(A @ x.ravel()) <= bound + 1e-12
