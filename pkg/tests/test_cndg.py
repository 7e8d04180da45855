import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from normcg.cndg import (CndGConfig, cndg_step, init_state, inner_simplex_min,
                         run_cndg)
from normcg.objectives import (AffineResidualMap, SmoothLoss, compose_objective,
                               l1_to_l2_norm)
from normcg.oracles import L1Oracle, ball_lmo
from normcg.subproblem import project_simplex


def _lsq(A, b):
    return compose_objective(SmoothLoss("quadratic", A.shape[0]),
                             AffineResidualMap.from_matrix(A, b), l1_to_l2_norm(A))


def _instance(seed, m=30, d=50):
    r = np.random.default_rng(seed)
    A = r.standard_normal((m, d)) / np.sqrt(m)
    b = A @ (r.standard_normal(d) * 0.2) + 0.5 * r.standard_normal(m)
    return _lsq(A, b)


LMO = ball_lmo(L1Oracle(), 1.0)


@pytest.fixture(scope="module")
def reference():
    """Optimal value of instance 0 from a long unbounded-memory run."""
    obj = _instance(0)
    res = run_cndg(CndGConfig("memory", memory=None, max_iters=400, gap_tol=1e-13),
                   obj, LMO, np.zeros(50))
    assert res.certificate.gap <= 1e-9
    return obj, res.certificate.upper, res.certificate.lower


def test_first_step_moves_to_atom():
    obj = _lsq(np.eye(3), np.array([0.2, -2.0, 0.1]))
    st_ = init_state(obj, LMO, np.zeros(3))
    plus = st_.plus.copy()
    cndg_step(st_, obj, LMO, CndGConfig("step_rule"))
    np.testing.assert_array_equal(st_.x, plus)
    np.testing.assert_array_equal(plus, [0.0, -1.0, 0.0])


def test_line_search_hits_interior_minimizer():
    c = np.array([0.5, 0.0])
    obj = _lsq(np.eye(2), c)
    res = run_cndg(CndGConfig("line_search", gap_tol=1e-9, max_iters=50), obj, LMO, np.zeros(2))
    assert res.certificate.gap <= 1e-9
    np.testing.assert_allclose(res.x, c, atol=1e-9)
    assert len(res.trace) == 2


def test_memory_matches_hull_grid_search():
    r = np.random.default_rng(2)
    A = r.standard_normal((4, 2))
    obj = _lsq(A, r.standard_normal(4) * 3)
    cfg = CndGConfig("memory", memory=None)
    s = init_state(obj, LMO, np.array([0.3, -0.2]))
    first_plus = s.plus.copy()
    cndg_step(s, obj, LMO, cfg)
    atoms = np.array([s.x.copy(), s.plus.copy(), first_plus])
    cndg_step(s, obj, LMO, cfg)
    h = 1e-3
    a = np.arange(0, 1 + h / 2, h)
    l0, l1 = np.meshgrid(a, a, indexing="ij")
    ok = l0 + l1 <= 1 + 1e-12
    lam = np.stack([l0[ok], l1[ok], 1 - l0[ok] - l1[ok]], axis=1)
    pts = lam @ atoms
    vals = 0.5 * np.sum((pts @ A.T - obj.map.offset) ** 2, axis=1)
    # grid error is at most L * (diameter * h)^2 scale
    assert s.fx <= vals.min() + 1e-12
    assert s.fx >= vals.min() - 1e-4


def test_terminates_at_once_when_start_is_optimal():
    obj = _lsq(np.eye(3), np.zeros(3))
    res = run_cndg(CndGConfig("step_rule", gap_tol=1e-12), obj, LMO, np.zeros(3))
    assert len(res.trace) == 1 and res.certificate.gap <= 1e-12


@pytest.mark.parametrize("variant", ["step_rule", "line_search"])
def test_convergence_rate(reference, variant):
    obj, f_star, _ = reference
    L = 4 * obj.lipschitz
    res = run_cndg(CndGConfig(variant, max_iters=200, gap_tol=0.0), obj, LMO, np.zeros(50))
    for rec in res.trace:
        if rec.t >= 2:
            assert rec.f - f_star <= 2 * L / (rec.t + 1)
        if rec.t >= 5:
            assert rec.gap <= 4.5 * L / (rec.t - 2)


@pytest.mark.parametrize("variant,memory", [("step_rule", None), ("line_search", None),
                                            ("memory", 2), ("memory", 6), ("memory", None)])
def test_monotone_certificates(reference, variant, memory):
    obj, f_star, lower_ref = reference
    res = run_cndg(CndGConfig(variant, memory=memory, max_iters=80, gap_tol=0.0),
                   obj, LMO, np.zeros(50))
    best = np.minimum.accumulate([r.f for r in res.trace])
    lows = np.array([r.lower for r in res.trace])
    assert np.all(np.diff(lows) >= 0)
    assert np.all(lows <= best + 1e-12)
    assert np.all(lows <= f_star + 1e-10)
    assert res.certificate.upper == pytest.approx(best[-1])
    assert res.certificate.gap >= 0


@pytest.mark.parametrize("variant,memory", [("line_search", None), ("memory", 4),
                                            ("memory", None)])
def test_step_never_worse_than_rule(variant, memory):
    obj = _instance(3)
    cfg = CndGConfig(variant, memory=memory)
    s = init_state(obj, LMO, np.zeros(50))
    for _ in range(40):
        gamma = 2.0 / (s.t + 1)
        rule = obj.value(s.x + gamma * (s.plus - s.x))
        cndg_step(s, obj, LMO, cfg)
        assert obj.value(s.x) <= rule + 1e-12


def test_memory_two_equals_line_search_values():
    obj = _instance(4)
    a = run_cndg(CndGConfig("memory", memory=2, max_iters=60, gap_tol=0.0), obj, LMO,
                 np.zeros(50))
    b = run_cndg(CndGConfig("line_search", max_iters=60, gap_tol=0.0), obj, LMO, np.zeros(50))
    # line search may stop early on an exactly zero gap
    k = min(len(a.trace), len(b.trace))
    np.testing.assert_allclose([r.f for r in a.trace[:k]], [r.f for r in b.trace[:k]],
                               rtol=1e-8, atol=1e-10)


def test_memory_capacity_respected():
    obj = _instance(5)
    res = run_cndg(CndGConfig("memory", memory=5, max_iters=50, gap_tol=0.0), obj, LMO,
                   np.zeros(50))
    assert max(r.atoms for r in res.trace) <= 5


def test_inner_single_atom():
    obj = _lsq(np.eye(2), np.ones(2))
    res = inner_simplex_min([np.array([1.0, 0.0])], None, obj)
    assert res.lam.tolist() == [1.0]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_inner_two_atoms_closed_form(seed):
    r = np.random.default_rng(seed)
    A = r.standard_normal((5, 3))
    obj = _lsq(A, r.standard_normal(5))
    p, q = r.standard_normal(3), r.standard_normal(3)
    res = inner_simplex_min([p, q], [obj.image(p), obj.image(q)], obj)
    # f(q + s (p - q)) is a parabola in s
    u, v = A @ (p - q), A @ q - obj.map.offset
    s = float(np.clip(-(u @ v) / (u @ u), 0.0, 1.0))
    assert res.lam[0] == pytest.approx(s, abs=1e-7)
    assert res.value == pytest.approx(obj.value(q + s * (p - q)), abs=1e-10)


def _fista_simplex(H, c, iters):
    L = np.linalg.eigvalsh(H)[-1]
    x = np.full(c.size, 1 / c.size)
    y, tk = x.copy(), 1.0
    for _ in range(iters):
        xn = project_simplex(y - (H @ y + c) / L)
        tn = (1 + np.sqrt(1 + 4 * tk * tk)) / 2
        y = xn + (tk - 1) / tn * (xn - x)
        x, tk = xn, tn
    return x


def test_inner_five_atoms_against_long_fista():
    r = np.random.default_rng(9)
    A = r.standard_normal((6, 4))
    obj = _lsq(A, r.standard_normal(6))
    pts = [r.standard_normal(4) for _ in range(5)]
    res = inner_simplex_min(pts, [obj.image(p) for p in pts], obj)
    P = np.array(pts).T
    M = A @ P
    H, c = M.T @ M, -M.T @ obj.map.offset
    lam = _fista_simplex(H, c, 100_000)
    assert res.converged
    assert res.value == pytest.approx(obj.value(P @ lam), abs=1e-10)


def test_trace_jsonl(tmp_path):
    import json
    from normcg.cndg import write_trace_jsonl
    res = run_cndg(CndGConfig(max_iters=5, gap_tol=0.0), _instance(1), LMO, np.zeros(50))
    write_trace_jsonl(res.trace, tmp_path / "t.jsonl")
    rows = [json.loads(l) for l in open(tmp_path / "t.jsonl")]
    assert [list(r) for r in rows][0] == ["t", "f", "lower", "gap", "atoms"]
    assert len(rows) == 5
