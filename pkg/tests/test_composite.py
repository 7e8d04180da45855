import copy
import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from normcg.composite import (DEFAULT_GRID, CompositeConfig, CompositePoint,
                              CompositeProblem, MemAtom, PenaltyTracker, _oracle_atoms,
                              cocndg_step, cocndgm_step, composite_step, init_composite,
                              memory_update, run_composite, stopping_nuclear,
                              stopping_progress)
from normcg.errors import InvalidConfigError
from normcg.objectives import (AffineResidualMap, SmoothLoss, compose_objective,
                               l1_to_l2_norm)
from normcg.oracles import L1Oracle, NuclearOracle, PSDTraceOracle


def _lsq(A, b):
    return compose_objective(SmoothLoss("quadratic", A.shape[0]),
                             AffineResidualMap.from_matrix(A, b), l1_to_l2_norm(A))


def _lasso(seed, m=20, d=30, kappa=1.0):
    r = np.random.default_rng(seed)
    A = r.standard_normal((m, d)) / np.sqrt(m)
    b = A @ (r.standard_normal(d) * (r.random(d) < 0.3)) * 3 + 0.3 * r.standard_normal(m)
    obj = _lsq(A, b)
    return A, b, CompositeProblem(obj, kappa, np.zeros(d))


def _lasso_reference(A, b, kappa, iters=20000):
    """FISTA with soft thresholding for kappa*||x||_1 + 0.5||Ax - b||^2."""
    L = np.linalg.norm(A, 2) ** 2
    x = np.zeros(A.shape[1])
    y, t = x.copy(), 1.0
    for _ in range(iters):
        v = y - A.T @ (A @ y - b) / L
        xn = np.sign(v) * np.maximum(np.abs(v) - kappa / L, 0.0)
        tn = (1 + np.sqrt(1 + 4 * t * t)) / 2
        y = xn + (t - 1) / tn * (xn - x)
        x, t = xn, tn
    return x, kappa * np.sum(np.abs(x)) + 0.5 * np.sum((A @ x - b) ** 2)


def test_d_plus_default_and_validation():
    A, b, prob = _lasso(0, kappa=2.0)
    assert prob.d_plus == pytest.approx(0.5 * b @ b / 2.0)
    obj = compose_objective(SmoothLoss("quadratic", 2), AffineResidualMap.from_matrix(np.eye(2)),
                            1.0, shift=-1.0)
    with pytest.raises(InvalidConfigError):
        CompositeProblem(obj, 1.0, np.zeros(2), nonnegative=False)


def test_first_step_is_one_dimensional():
    A, b, prob = _lasso(1, kappa=0.5)
    s = init_composite(prob)
    atoms = _oracle_atoms(s, prob, L1Oracle(), CompositeConfig())
    xh, D = atoms[1].x, atoms[1].r
    cocndg_step(s, prob, L1Oracle())
    u = A @ xh
    lam = float(np.clip((u @ b - prob.kappa * D) / (u @ u), 0.0, 1.0))
    np.testing.assert_allclose(s.z.x, lam * xh, atol=1e-10)
    assert s.z.r == pytest.approx(lam * D)


def _triangle_kkt(H, c):
    """min 0.5 w'Hw + c'w over w >= 0, w1 + w2 <= 1 by checking every face."""
    cands = [np.zeros(2), np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    try:
        cands.append(np.linalg.solve(H, -c))
    except np.linalg.LinAlgError:
        pass
    for i in range(2):
        if H[i, i] > 0:
            w = np.zeros(2)
            w[i] = -c[i] / H[i, i]
            cands.append(w)
    d = np.array([1.0, -1.0])
    e0 = np.array([0.0, 1.0])
    if d @ H @ d > 0:
        s = -(d @ (H @ e0 + c)) / (d @ H @ d)
        cands.append(e0 + s * d)
    best = np.inf
    for w in cands:
        if w.min() >= -1e-12 and w.sum() <= 1 + 1e-12:
            best = min(best, 0.5 * w @ H @ w + c @ w)
    return best


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_plain_step_matches_triangle_kkt(seed):
    r = np.random.default_rng(seed)
    A = r.standard_normal((6, 4))
    b = r.standard_normal(6) * 2
    prob = CompositeProblem(_lsq(A, b), 0.3, np.zeros(4))
    s = init_composite(prob)
    cocndg_step(s, prob, L1Oracle())
    atoms = _oracle_atoms(s, prob, L1Oracle(), CompositeConfig())
    V = np.column_stack([A @ atoms[0].x, A @ atoms[1].x])
    rv = np.array([atoms[0].r, atoms[1].r])
    ref = _triangle_kkt(V.T @ V, -V.T @ b + prob.kappa * rv) + 0.5 * b @ b
    cocndg_step(s, prob, L1Oracle())
    assert s.F == pytest.approx(ref, abs=1e-10 * max(1.0, abs(ref)))


CONFIGS = [CompositeConfig("plain"), CompositeConfig("hull", memory=6),
           CompositeConfig("conic", memory=6), CompositeConfig("signed", memory=6),
           CompositeConfig("signed", memory=7, gradient_atom=True)]


@pytest.mark.parametrize("cfg", CONFIGS, ids=lambda c: f"{c.mode}-{c.memory}-{c.gradient_atom}")
def test_descent_and_feasibility(cfg):
    for seed in range(3):
        A, b, prob = _lasso(seed)
        cfg2 = dataclasses.replace(cfg, max_iters=60, stopping="none")
        res = run_composite(prob, L1Oracle(), cfg2)
        F = np.array([rec.F for rec in res.trace])
        assert np.all(np.diff(F) <= 1e-12 * np.abs(F[:-1]))
        assert np.sum(np.abs(res.z.x)) <= res.z.r + 1e-9 * max(1.0, res.z.r)
        assert all(rec.r <= prob.d_plus * (1 + 1e-12) for rec in res.trace)


def test_hull_with_two_atoms_equals_plain():
    A, b, prob = _lasso(4)
    a = run_composite(prob, L1Oracle(), CompositeConfig("plain", max_iters=40, stopping="none"))
    h = run_composite(prob, L1Oracle(), CompositeConfig("hull", memory=2, max_iters=40,
                                                         stopping="none"))
    np.testing.assert_allclose([r.F for r in a.trace], [r.F for r in h.trace],
                               rtol=1e-10, atol=1e-12)


def test_mode_dominance_on_shared_state():
    for seed in range(50):
        A, b, prob = _lasso(seed, m=10, d=12, kappa=0.3)
        s = init_composite(prob)
        warm = CompositeConfig("hull", memory=6)
        for _ in range(4):
            cocndgm_step(s, prob, L1Oracle(), warm)
        F = {}
        for mode in ("hull", "conic", "signed"):
            cfg = CompositeConfig(mode, memory=6)
            s2 = copy.deepcopy(s)
            # identical state and atoms for every mode
            atoms = _oracle_atoms(s2, prob, L1Oracle(), cfg)
            composite_step(s2, prob, L1Oracle(), cfg, new_atoms=atoms)
            F[mode] = s2.F
        tol = 1e-10 * max(1.0, abs(F["hull"]))
        assert F["conic"] <= F["hull"] + tol
        assert F["signed"] <= F["conic"] + tol


def test_signed_mode_needs_whole_space():
    obj = compose_objective(SmoothLoss("quadratic", 4), AffineResidualMap.identity((2, 2)), 1.0)
    prob = CompositeProblem(obj, 1.0, np.zeros((2, 2)))
    with pytest.raises(InvalidConfigError):
        run_composite(prob, PSDTraceOracle(), CompositeConfig("signed", memory=4))


def test_signed_tv_radius_is_reset_to_norm():
    from normcg.oracles import TVOracle
    from normcg.tvflow import tv_norm
    r = np.random.default_rng(3)
    n = 6
    target = np.kron(r.standard_normal((2, 2)), np.ones((3, 3)))
    target -= target.mean()
    obj = compose_objective(
        SmoothLoss("quadratic", n * n),
        AffineResidualMap(np.ravel, lambda y: np.reshape(y, (n, n)), target.ravel(), (n, n)),
        2.0)
    prob = CompositeProblem(obj, 0.2, np.zeros((n, n)))
    res = run_composite(prob, TVOracle(), CompositeConfig("signed", memory=8, max_iters=15,
                                                          stopping="none"))
    assert res.z.r == pytest.approx(tv_norm(res.z.x), rel=1e-12, abs=1e-12)
    assert res.z.r > 0


def _atom(v, tag="oracle"):
    return MemAtom(np.array([float(v)]), abs(float(v)), None, tag)


def test_memory_update_rules():
    new = [_atom(10, "iterate"), _atom(11), _atom(12, "gradient")]
    assert memory_update([_atom(1), _atom(2)], new, 3) == new
    old = [_atom(1), _atom(2), _atom(3), _atom(4)]
    out = memory_update(old, new, 5)
    assert [a.x[0] for a in out] == [3, 4, 10, 11, 12]
    # duplicates of new atoms are dropped from the old list
    out = memory_update([_atom(11), _atom(5)], new, None)
    assert [a.x[0] for a in out] == [5, 10, 11, 12]


def test_memory_capacity_over_long_run():
    A, b, prob = _lasso(2)
    res = run_composite(prob, L1Oracle(), CompositeConfig("signed", memory=48, gradient_atom=True,
                                                          max_iters=100, stopping="none"))
    assert max(r.atoms for r in res.trace) <= 48


def test_tracker_single_gamma():
    A, b, prob = _lasso(5)
    res = run_composite(prob, L1Oracle(), CompositeConfig("hull", memory=5, max_iters=30,
                                                          stopping="none", grid=(1.0,)))
    assert res.tracker.values[prob.kappa] == pytest.approx(min(r.F for r in res.trace),
                                                           rel=1e-14)


def test_tracker_monotone_and_feasible():
    A, b, prob = _lasso(6)
    res = run_composite(prob, L1Oracle(), CompositeConfig("signed", memory=10, max_iters=50,
                                                          stopping="none", grid=DEFAULT_GRID))
    tr = res.tracker
    assert len(tr.kappas) == 25 and len(tr.history) == 49
    for k in tr.kappas:
        h = [snap[k] for snap in tr.history]
        assert all(y <= x for x, y in zip(h, h[1:]))
        z = tr.points.get(k)
        if z is not None:
            assert np.sum(np.abs(z.x)) <= z.r * (1 + 1e-9) + 1e-12
            assert tr.values[k] == pytest.approx(k * z.r + prob.objective.value(z.x),
                                                 rel=1e-12)
    assert tr.values[prob.kappa] == min(r.F for r in res.trace)


def test_tracker_json(tmp_path):
    import json
    from normcg.composite import write_tracker_json
    tr = PenaltyTracker(1.0, (0.5, 1.0))
    tr.offer(1.0, CompositePoint(np.zeros(2), 0.0), 3.0)
    write_tracker_json(tr, tmp_path / "t.json")
    d = json.load(open(tmp_path / "t.json"))
    assert d[repr(1.0)]["value"] == 3.0 and d[repr(0.5)]["r"] is None


def test_huge_kappa_stops_at_origin():
    A, b, prob = _lasso(7, kappa=1e6)
    res = run_composite(prob, L1Oracle(), CompositeConfig("plain", eps=1e-9))
    assert res.status == "stopped" and not res.z.x.any() and res.z.r == 0.0
    assert len(res.trace) == 1


@pytest.mark.parametrize("mode,memory", [("plain", None), ("hull", 6), ("signed", 6)])
def test_rate_bound(mode, memory):
    for seed in (0, 1):
        A, b, prob = _lasso(seed, kappa=1.0)
        x_ref, F_star = _lasso_reference(A, b, 1.0)
        ref = run_composite(prob, L1Oracle(), CompositeConfig("plain", max_iters=3000,
                                                              stopping="none"))
        assert ref.F >= F_star - 1e-9
        D_star = max(max(r.r for r in ref.trace), np.sum(np.abs(x_ref)))
        Lf = prob.objective.lipschitz
        res = run_composite(prob, L1Oracle(), CompositeConfig(mode, memory=memory,
                                                              max_iters=300, stopping="none"))
        for rec in res.trace[1:]:
            assert rec.F - F_star <= 8 * Lf * D_star ** 2 / (rec.t + 14)
            assert rec.F >= F_star - 1e-9


@pytest.mark.parametrize("mode,memory", [("plain", None), ("hull", 5)])
def test_rank_growth(mode, memory):
    r = np.random.default_rng(8)
    B = r.standard_normal((12, 9))
    obj = compose_objective(SmoothLoss("quadratic", 108),
                            AffineResidualMap(np.ravel, lambda y: np.reshape(y, (12, 9)),
                                              B.ravel(), (12, 9)), 1.0)
    prob = CompositeProblem(obj, 0.5, np.zeros((12, 9)))
    cfg = CompositeConfig(mode, memory=memory)
    s = init_composite(prob)
    for _ in range(8):
        step = cocndg_step if mode == "plain" else cocndgm_step
        step(s, prob, NuclearOracle(), cfg) if mode != "plain" else step(s, prob, NuclearOracle())
        rank = np.linalg.matrix_rank(s.z.x, tol=1e-10)
        assert rank <= s.t


def test_stopping_nuclear_at_origin():
    g = np.diag([0.9, 0.1])
    assert stopping_nuclear(np.zeros((2, 2)), g, kappa=0.9, eps=1e-3)
    assert not stopping_nuclear(np.zeros((2, 2)), np.diag([1.0, 0.1]), kappa=0.9, eps=1e-3)


def test_stopping_nuclear_at_closed_form_optimum():
    r = np.random.default_rng(9)
    B = r.standard_normal((8, 6))
    kappa = 1.0
    U, s, Vt = np.linalg.svd(B, full_matrices=False)
    X = (U * np.maximum(s - kappa, 0.0)) @ Vt
    grad = X - B
    residual = max(np.linalg.svd(grad, compute_uv=False)[0] - kappa,
                   abs(np.vdot(grad, X) + kappa * np.sum(np.maximum(s - kappa, 0.0))))
    eps = 10 * max(residual, 1e-15)
    assert stopping_nuclear(X, grad, kappa, eps)
    # a shrunk point fails the second condition
    assert not stopping_nuclear(0.5 * X, 0.5 * X - B, kappa, 1e-6)


def test_stopping_progress_cases():
    assert stopping_progress(1.0, 1.0, 10.0)
    assert not stopping_progress(1.0, 1.0 - 2 * 0.005, 10.0)
    # dyadic values keep the boundary exact in floating point
    eps, delta, phi0 = 2.0 ** -7, 2.0 ** -6, 128.0
    prev = 1.0          # below delta * phi0 = 2
    step = eps * delta * phi0
    assert stopping_progress(prev, prev - step, phi0, eps, delta)
    assert not stopping_progress(prev, prev - 2 * step, phi0, eps, delta)


def test_config_validation():
    with pytest.raises(InvalidConfigError):
        CompositeConfig("plain", memory=5)
    with pytest.raises(InvalidConfigError):
        CompositeConfig("hull", memory=2, gradient_atom=True)
    with pytest.raises(InvalidConfigError):
        CompositeConfig("fancy")
