"""Conditional gradient for ``min kappa ||x|| + f(x)`` over a cone ``K``.

The problem is lifted to ``F([x; r]) = kappa r + f(x)`` on
``K+ = {[x; r] : x in K, ||x|| <= r}``. With an a-priori radius bound ``D+``
every step takes the oracle answer ``x[f'(x_t)]``, forms the atom
``zhat_t = D+ [x[f'(x_t)]; 1]`` and minimizes ``F`` over a small set built
from stored points:

* ``plain``   triangle ``conv{0, z_t, zhat_t}``
* ``hull``    ``conv({0} u Z_t)``
* ``conic``   nonnegative combinations of ``Z_t``
* ``signed``  arbitrary combinations ``sum lam_i eta_i`` charged
  ``kappa * sum |lam_i| rho_i`` (needs ``K`` to be the whole space). The
  radius is then reset to the true norm of the combination.

``Z_t`` is a first-in-first-out memory that always holds ``z_t``, ``zhat_t``
and (if enabled) the gradient atom ``D+ [f'(x_t)/||f'(x_t)||; 1]``.

A :class:`PenaltyTracker` re-solves each step's small problem for a grid
of penalties ``gamma * kappa`` and keeps the best point per penalty. The
iterate itself never changes because of it, and no oracle calls are added.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import linalg
from .errors import InvalidConfigError, InvalidInputError
from .subproblem import SmallResult, lazy_curvature, minimize_small, quadratic_valgrad

MODES = ("plain", "hull", "conic", "signed")
STOPPING = ("gap", "nuclear", "progress", "none")
DEFAULT_GRID = tuple(2.0 ** (l / 4.0) for l in range(-12, 13))


@dataclass(frozen=True)
class CompositePoint:
    x: np.ndarray
    r: float

    def __post_init__(self):
        if self.r < 0:
            raise InvalidInputError("radius must be nonnegative")


@dataclass
class CompositeProblem:
    """``objective`` is ``f``; ``d_plus`` bounds the norm of an optimal ``x``.

    When ``d_plus`` is omitted it is set to ``f(0)/kappa``, which is valid
    for nonnegative ``f``: any point with ``F <= F(0)`` has
    ``kappa r <= f(0)``.
    """
    objective: object
    kappa: float
    zero: np.ndarray
    d_plus: Optional[float] = None
    nonnegative: bool = True

    def __post_init__(self):
        if not self.kappa > 0:
            raise InvalidInputError("kappa must be positive")
        self.zero = np.zeros_like(np.asarray(self.zero, dtype=float))
        self.f0 = float(self.objective.value(self.zero))
        if self.d_plus is None:
            if not self.nonnegative:
                raise InvalidConfigError("d_plus is required when f may be negative")
            if self.f0 < 0:
                raise InvalidInputError("f(0) < 0 contradicts nonnegative=True")
            self.d_plus = self.f0 / self.kappa
        if not self.d_plus >= 0:
            raise InvalidInputError("d_plus must be nonnegative")

    def value(self, z: CompositePoint, kappa: Optional[float] = None) -> float:
        k = self.kappa if kappa is None else kappa
        return k * z.r + float(self.objective.value(z.x))


@dataclass
class MemAtom:
    x: np.ndarray
    r: float
    image: Optional[np.ndarray]
    tag: str                      # "iterate" | "oracle" | "gradient"


def memory_update(memory: List[MemAtom], new_atoms: List[MemAtom],
                  capacity: Optional[int]) -> List[MemAtom]:
    """FIFO: keep the newest ``capacity - len(new_atoms)`` old atoms, then
    append the new ones. Exact duplicates of a new atom are dropped."""
    def same(a, b):
        return a.r == b.r and np.array_equal(a.x, b.x)

    fresh: List[MemAtom] = []
    for a in new_atoms:
        if not any(same(a, b) for b in fresh):
            fresh.append(a)
    old = [a for a in memory if not any(same(a, b) for b in fresh)]
    if capacity is not None:
        if capacity < len(new_atoms):
            raise InvalidConfigError(f"memory capacity {capacity} < {len(new_atoms)}")
        keep = capacity - len(new_atoms)
        old = old[len(old) - keep:] if keep < len(old) else old
    return old + fresh


class PenaltyTracker:
    """Best point found so far for each penalty ``gamma * kappa_w``."""

    def __init__(self, kappa_w: float, grid=DEFAULT_GRID):
        self.kappa_w = float(kappa_w)
        self.grid = tuple(float(g) for g in grid)
        self.kappas = tuple(g * self.kappa_w for g in self.grid)
        self.values: Dict[float, float] = {k: math.inf for k in self.kappas}
        self.points: Dict[float, CompositePoint] = {}
        self.history: List[Dict[float, float]] = []

    def offer(self, kappa: float, z: CompositePoint, fval: float) -> None:
        v = kappa * z.r + fval
        if v < self.values[kappa]:
            self.values[kappa] = v
            self.points[kappa] = CompositePoint(np.array(z.x, copy=True), z.r)

    def snapshot(self) -> None:
        self.history.append(dict(self.values))

    def as_json(self) -> dict:
        out = {}
        for g, k in zip(self.grid, self.kappas):
            z = self.points.get(k)
            out[repr(k)] = {"gamma": g, "value": self.values[k],
                            "r": None if z is None else z.r}
        return out


# ---------------------------------------------------------------------------
# stopping rules

def stopping_nuclear(x, grad, kappa: float, eps: float = 1e-3) -> bool:
    """Both near-optimality conditions for nuclear-norm penalties."""
    top = linalg.leading_singular_triple(grad).sigma
    if top > kappa + eps:
        return False
    nuc = float(np.sum(np.linalg.svd(np.asarray(x, dtype=float), compute_uv=False)))
    return float(np.vdot(grad, x)) + kappa * nuc <= eps * nuc


def stopping_progress(prev: float, cur: float, phi0: float,
                      eps: float = 0.005, delta: float = 0.01) -> bool:
    """Relative progress test ``prev - cur <= eps * max(prev, delta * phi0)``."""
    return prev - cur <= eps * max(prev, delta * phi0)


# ---------------------------------------------------------------------------
# small problem over weights

@dataclass
class _Sub:
    """The weight-space problem for one step (penalty enters only linearly)."""
    atoms: List[MemAtom]
    mode: str
    objective: object
    scale: np.ndarray             # lam_i = scale_i * mu_i (conic/signed conditioning)
    rvec: np.ndarray
    H: Optional[np.ndarray] = None
    lin0: Optional[np.ndarray] = None
    const: float = 0.0
    V: Optional[np.ndarray] = None
    X: Optional[np.ndarray] = None
    lip: object = 1.0             # float or lazy callable

    @property
    def kind(self) -> str:
        return {"plain": "capped", "hull": "capped", "conic": "orthant",
                "signed": "free"}[self.mode]

    def smooth(self, kappa: float):
        """Value/gradient of the smooth part in ``mu`` for penalty ``kappa``."""
        pen = None if self.mode == "signed" else kappa * self.rvec * self.scale
        if self.H is not None:
            lin = self.lin0 if pen is None else self.lin0 + pen
            return quadratic_valgrad(self.H, lin, self.const), lin
        obj = self.objective
        s = self.scale

        if self.V is not None:
            V = self.V

            def vg(mu):
                v, gy = obj.value_grad_image(V @ mu)
                g = V.T @ gy
                if pen is not None:
                    v += float(pen @ mu)
                    g = g + pen
                return v, g
            return vg, None
        X, shape = self.X, self.atoms[0].x.shape

        def vg(mu):
            v, g = obj.value_grad(np.reshape(X @ mu, shape))
            g = X.T @ np.ravel(g)
            if pen is not None:
                v += float(pen @ mu)
                g = g + pen
            return v, g
        return vg, None


def _build_sub(atoms: List[MemAtom], mode: str, objective) -> _Sub:
    k = len(atoms)
    rvec = np.array([a.r for a in atoms])
    scale = np.ones(k)
    if objective.has_map:
        V = np.column_stack([a.image for a in atoms])
        if mode in ("conic", "signed"):
            nrm = np.linalg.norm(V, axis=0)
            scale = np.where(nrm > 0, 1.0 / np.where(nrm > 0, nrm, 1.0), 1.0)
            V = V * scale
        sub = _Sub(atoms, mode, objective, scale, rvec, V=V)
        G = V.T @ V
        if objective.is_quadratic:
            b = objective.map.offset
            sub.H = G
            sub.lin0 = -(V.T @ b)
            sub.const = 0.5 * float(b @ b) + objective.shift
            sub.lip = lazy_curvature(G)
        else:
            sub.lip = lazy_curvature(G, objective.loss.lipschitz)
        return sub
    X = np.column_stack([np.ravel(a.x) for a in atoms])
    if mode in ("conic", "signed"):
        nrm = np.linalg.norm(X, axis=0)
        scale = np.where(nrm > 0, 1.0 / np.where(nrm > 0, nrm, 1.0), 1.0)
        X = X * scale
    sub = _Sub(atoms, mode, objective, scale, rvec, X=X)
    sub.lip = lazy_curvature(X.T @ X, objective.lipschitz)
    return sub


def _solve_sub(sub: _Sub, kappa: float, mu0: np.ndarray, tol: Optional[float],
               max_iter: int) -> SmallResult:
    vg, lin = sub.smooth(kappa)
    if tol is None:
        tol = 1e-12 if sub.H is not None else 1e-10
    weights = kappa * sub.rvec * sub.scale if sub.mode == "signed" else None
    return minimize_small(vg, mu0, sub.kind, sub.lip, tol=tol, max_iter=max_iter,
                          weights=weights, hessian=sub.H, linear=lin)


def _combine(sub: _Sub, mu: np.ndarray, oracle, problem: CompositeProblem):
    """Point, its image and ``f`` at the combination with weights ``scale*mu``."""
    lam = sub.scale * mu
    nz = np.flatnonzero(lam)
    x = np.zeros_like(sub.atoms[0].x)
    img = None
    for i in nz:
        x = x + lam[i] * sub.atoms[i].x
    if problem.objective.has_map:
        img = np.zeros_like(sub.atoms[0].image)
        for i in nz:
            img = img + lam[i] * sub.atoms[i].image
    if sub.mode == "signed":
        r = float(oracle.norm(x)) if nz.size else 0.0
        r = min(r, float(np.abs(lam) @ sub.rvec))
    else:
        r = float(lam @ sub.rvec)
    return CompositePoint(x, max(r, 0.0)), img


def _f_at(objective, x, img):
    if objective.has_map:
        return objective.value_grad_image(img)[0]
    return float(objective.value(x))


# ---------------------------------------------------------------------------
# driver

@dataclass(frozen=True)
class CompositeConfig:
    mode: str = "plain"
    memory: Optional[int] = None      # capacity M; None = unbounded
    gradient_atom: bool = False       # option C's extra atom
    max_iters: int = 500
    stopping: str = "gap"
    eps: float = 1e-6                 # gap tolerance, or eps of the chosen rule
    delta: float = 0.01               # progress rule only
    grid: Optional[tuple] = None      # multi-penalty tracking grid, None = off
    inner_tol: Optional[float] = None
    inner_max_iter: int = 20000

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidConfigError(f"unknown mode {self.mode!r}")
        if self.stopping not in STOPPING:
            raise InvalidConfigError(f"unknown stopping rule {self.stopping!r}")
        mandatory = 3 if self.gradient_atom else 2
        if self.memory is not None and self.memory < mandatory:
            raise InvalidConfigError(f"memory must hold at least {mandatory} atoms")
        if self.mode == "plain" and (self.gradient_atom or self.memory not in (None, 2)):
            raise InvalidConfigError("plain mode has no memory")
        if self.max_iters < 1:
            raise InvalidConfigError("max_iters must be positive")


@dataclass(frozen=True)
class CompositeRecord:
    t: int
    F: float
    r: float
    gap: float
    atoms: int
    inner_ok: bool

    def as_dict(self) -> dict:
        return {"t": self.t, "F": self.F, "r": self.r, "gap": self.gap,
                "atoms": self.atoms, "inner_ok": self.inner_ok}


@dataclass
class CompositeState:
    t: int
    z: CompositePoint
    image: Optional[np.ndarray]
    fx: float
    grad: np.ndarray
    F: float
    memory: List[MemAtom] = field(default_factory=list)
    inner_failures: int = 0
    last_atoms: int = 0
    gap: float = math.inf


@dataclass
class CompositeResult:
    z: CompositePoint
    F: float
    tracker: Optional[PenaltyTracker]
    trace: List[CompositeRecord]
    status: str                       # "stopped" | "budget"
    state: CompositeState


def _eval(problem: CompositeProblem, x, img=None):
    obj = problem.objective
    if obj.has_map:
        if img is None:
            img = obj.image(x)
        v, gy = obj.value_grad_image(img)
        return float(v), obj.pullback(gy), img
    v, g = obj.value_grad(x)
    return float(v), g, None


def init_composite(problem: CompositeProblem) -> CompositeState:
    x = problem.zero.copy()
    fx, g, img = _eval(problem, x)
    return CompositeState(1, CompositePoint(x, 0.0), img, fx, g, fx)


def _oracle_atoms(state, problem, oracle, config):
    """``zhat_t`` (and the gradient atom), plus the gap certificate at ``z_t``."""
    obj = problem.objective
    D = problem.d_plus
    atom = oracle(state.grad)
    form = atom.form_value
    # F(z) >= F(z_t) + <F'(z_t), z - z_t> and the optimum lies in K+[D+]
    state.gap = max(0.0, float(np.vdot(state.grad, state.z.x)) + problem.kappa * state.z.r
                    - D * min(0.0, form + problem.kappa))
    xh = D * atom.point
    out = [MemAtom(state.z.x, state.z.r, state.image, "iterate"),
           MemAtom(xh, D if not atom.is_zero else 0.0,
                   obj.image(xh) if obj.has_map else None, "oracle")]
    if config.gradient_atom:
        gn = float(oracle.norm(state.grad))
        if gn > 0:
            xg = (D / gn) * state.grad
            out.append(MemAtom(xg, D, obj.image(xg) if obj.has_map else None, "gradient"))
    return out


def composite_step(state: CompositeState, problem: CompositeProblem, oracle,
                   config: CompositeConfig, tracker: Optional[PenaltyTracker] = None,
                   new_atoms: Optional[List[MemAtom]] = None) -> CompositeState:
    """One step in the configured mode; ``state`` is updated in place."""
    if config.mode == "signed" and not getattr(oracle, "cone_is_space", False):
        raise InvalidConfigError("signed combinations need K to be the whole space")
    if new_atoms is None:
        new_atoms = _oracle_atoms(state, problem, oracle, config)
    if config.mode == "plain":
        atoms = new_atoms[:2]
    else:
        cap = config.memory
        state.memory = memory_update(state.memory, new_atoms, cap)
        atoms = state.memory
    state.last_atoms = len(atoms)
    it_index = next(i for i, a in enumerate(atoms) if a.tag == "iterate"
                    and a.x is state.z.x)

    kappa = problem.kappa
    chain = {"plain": ["hull"], "hull": ["hull"], "conic": ["hull", "conic"],
             "signed": ["hull", "conic", "signed"]}[config.mode]
    lam = np.zeros(len(atoms))
    lam[it_index] = 1.0                   # start at z_t: descent is guaranteed
    ok = True
    sub = res = None
    for m in chain:
        sub = _build_sub(atoms, m, problem.objective)
        mu0 = lam / sub.scale
        res = _solve_sub(sub, kappa, mu0, config.inner_tol, config.inner_max_iter)
        ok = ok and res.converged
        lam = sub.scale * res.lam
    if not ok:
        state.inner_failures += 1
    z_new, img_new = _combine(sub, res.lam, oracle, problem)
    fx, g, img = _eval(problem, z_new.x, img_new)
    F_new = kappa * z_new.r + fx
    if F_new > state.F:
        # rounding in the reset radius or the combination: keep z_t
        z_new, img, fx, g, F_new = state.z, state.image, state.fx, state.grad, state.F

    if tracker is not None:
        _sweep(tracker, sub, res, oracle, problem, config)
        tracker.offer(kappa, z_new, fx)
        for k in tracker.kappas:
            if k != kappa:
                tracker.offer(k, z_new, fx)
        tracker.snapshot()

    state.t += 1
    state.z, state.image, state.fx, state.grad, state.F = z_new, img, fx, g, F_new
    return state


def multi_penalty_sweep(tracker: PenaltyTracker, sub: _Sub, res: SmallResult, oracle,
                        problem: CompositeProblem, config: CompositeConfig) -> PenaltyTracker:
    """Re-solve the step's small problem for every grid penalty except the
    working one (whose answer is the iterate itself)."""
    _sweep(tracker, sub, res, oracle, problem, config)
    return tracker


def _sweep(tracker, sub, res, oracle, problem, config):
    for k in tracker.kappas:
        if k == problem.kappa:
            continue
        r2 = _solve_sub(sub, k, res.lam, config.inner_tol, config.inner_max_iter)
        z, img = _combine(sub, r2.lam, oracle, problem)
        tracker.offer(k, z, _f_at(problem.objective, z.x, img))


def cocndg_step(state: CompositeState, problem: CompositeProblem, oracle,
                config: Optional[CompositeConfig] = None) -> CompositeState:
    """Memoryless step: best point of the triangle ``conv{0, z_t, zhat_t}``."""
    return composite_step(state, problem, oracle, config or CompositeConfig("plain"))


def cocndgm_step(state: CompositeState, problem: CompositeProblem, oracle,
                 config: CompositeConfig, tracker: Optional[PenaltyTracker] = None):
    """Memory step in ``config.mode`` (hull, conic or signed)."""
    if config.mode == "plain":
        raise InvalidConfigError("cocndgm_step needs a memory mode")
    return composite_step(state, problem, oracle, config, tracker)


def run_composite(problem: CompositeProblem, oracle, config: Optional[CompositeConfig] = None,
                  callback=None) -> CompositeResult:
    """Iterate from ``z_1 = 0`` until the stopping rule fires or the budget ends.

    Stopping rules: ``gap`` (certificate at most ``eps``), ``nuclear``
    (the two near-optimality conditions), ``progress`` (relative decrease of
    ``F``), ``none``. ``callback(state)`` returning True also stops.
    """
    config = config or CompositeConfig()
    if config.mode == "signed" and not getattr(oracle, "cone_is_space", False):
        raise InvalidConfigError("signed combinations need K to be the whole space")
    tracker = None
    if config.grid is not None:
        tracker = PenaltyTracker(problem.kappa, config.grid)
        tracker.offer(problem.kappa, CompositePoint(problem.zero, 0.0), problem.f0)
    state = init_composite(problem)
    trace: List[CompositeRecord] = []
    status = "budget"
    prev_F = None
    inner_ok = True
    while True:
        new_atoms = _oracle_atoms(state, problem, oracle, config)
        trace.append(CompositeRecord(state.t, state.F, state.z.r, state.gap,
                                     state.last_atoms, inner_ok))
        stop = False
        if config.stopping == "gap":
            stop = state.gap <= config.eps
        elif config.stopping == "nuclear":
            stop = stopping_nuclear(state.z.x, state.grad, problem.kappa, config.eps)
        elif config.stopping == "progress" and prev_F is not None:
            stop = stopping_progress(prev_F, state.F, problem.f0, config.eps, config.delta)
        if callback is not None and callback(state):
            stop = True
        if stop:
            status = "stopped"
            break
        if state.t >= config.max_iters:
            break
        prev_F = state.F
        fails = state.inner_failures
        composite_step(state, problem, oracle, config, tracker, new_atoms)
        inner_ok = state.inner_failures == fails
    return CompositeResult(state.z, state.F, tracker, trace, status, state)


def write_tracker_json(tracker: PenaltyTracker, path) -> None:
    with open(Path(path), "w") as fh:
        json.dump(tracker.as_json(), fh, indent=1)


def write_composite_trace(records, path) -> None:
    with open(Path(path), "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.as_dict()) + "\n")
