"""Conditional gradient over a convex compact set given by an LO routine.

Three ways to pick the next iterate from ``x_t`` and the oracle answer
``x_t+``:

* ``step_rule``   ``x_t + 2/(t+1) (x_t+ - x_t)``
* ``line_search`` best point on the segment ``[x_t, x_t+]``
* ``memory``      best point in the convex hull of ``x_t``, ``x_t+`` and up
  to ``M - 2`` earlier oracle answers (``M=None`` keeps them all)

Each iterate also yields the lower bound ``f(x) - <f'(x), x - x+>`` on the
optimal value, so every run carries a duality-gap certificate.

When the objective has an affine map, images ``A x`` of the iterate and
of every stored atom are cached. A step then costs one forward product (for
the new oracle answer) and one adjoint product (for the new gradient).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from .errors import InvalidConfigError, InvalidInputError
from .subproblem import lazy_curvature, minimize_small, quadratic_valgrad

VARIANTS = ("step_rule", "line_search", "memory")


@dataclass(frozen=True)
class CndGConfig:
    variant: str = "step_rule"
    memory: Optional[int] = None      # M for the memory variant; None = unbounded
    max_iters: int = 1000
    gap_tol: float = 1e-6
    inner_tol: Optional[float] = None  # default: 1e-12 quadratic, 1e-10 otherwise
    inner_max_iter: int = 20000
    bisection_iters: int = 50

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidConfigError(f"unknown variant {self.variant!r}")
        if self.memory is not None and self.memory < 2:
            raise InvalidConfigError("memory M must be at least 2")
        if self.max_iters < 1:
            raise InvalidConfigError("max_iters must be positive")
        if not self.gap_tol >= 0:
            raise InvalidConfigError("gap_tol must be nonnegative")


@dataclass(frozen=True)
class GapCertificate:
    upper: float
    lower: float
    gap: float
    iteration: int


@dataclass
class _Atom:
    point: np.ndarray
    image: Optional[np.ndarray]
    weight: float = 0.0           # share in the last hull solution (warm start)
    key: int = 0

    def __post_init__(self):
        self.key = hash(self.point.tobytes())

    def same(self, other: "_Atom") -> bool:
        return self.key == other.key and np.array_equal(self.point, other.point)


class _GramCache:
    """Images of the stored atoms with their Gram matrix and their inner
    products with the offset ``b``, updated incrementally (quadratic losses)."""

    def __init__(self, offset: np.ndarray):
        self.b = offset
        self.V = np.zeros((offset.size, 8))
        self.G = np.zeros((0, 0))
        self.bv = np.zeros(0)
        self.k = 0

    def cross(self, img: np.ndarray) -> np.ndarray:
        return self.V[:, :self.k].T @ img

    def append(self, img: np.ndarray) -> None:
        if self.k == self.V.shape[1]:
            self.V = np.concatenate([self.V, np.zeros_like(self.V)], axis=1)
        c = self.cross(img)
        k = self.k
        G = np.empty((k + 1, k + 1))
        G[:k, :k] = self.G
        G[:k, k] = G[k, :k] = c
        G[k, k] = float(img @ img)
        self.G = G
        self.V[:, k] = img
        self.bv = np.append(self.bv, float(img @ self.b))
        self.k = k + 1

    def keep(self, idx) -> None:
        idx = np.asarray(idx, dtype=int)
        self.V[:, :idx.size] = self.V[:, idx]
        self.G = self.G[np.ix_(idx, idx)]
        self.bv = self.bv[idx]
        self.k = idx.size


@dataclass
class CndGState:
    """Mutable run state. ``cndg_step`` updates it in place and returns it."""
    t: int
    x: np.ndarray
    fx: float
    grad: np.ndarray
    image: Optional[np.ndarray]
    plus: np.ndarray
    plus_image: Optional[np.ndarray]
    lower_t: float                    # bound from the current iterate alone
    best_x: np.ndarray
    best_f: float
    lower: float                      # running max of the bounds
    memory: List[_Atom] = field(default_factory=list)
    last_atoms: int = 2
    inner_failures: int = 0
    gram: Optional[_GramCache] = None
    x_weight: Optional[float] = None  # weight of x_t in the warm start, None = cold

    @property
    def gap(self) -> float:
        return max(0.0, self.best_f - self.lower)

    def certificate(self) -> GapCertificate:
        return GapCertificate(self.best_f, self.lower, self.gap, self.t)


@dataclass(frozen=True)
class TraceRecord:
    t: int
    f: float
    lower: float
    gap: float
    atoms: int

    def as_dict(self) -> dict:
        return {"t": self.t, "f": self.f, "lower": self.lower,
                "gap": self.gap, "atoms": self.atoms}


@dataclass
class CndGResult:
    x: np.ndarray
    certificate: GapCertificate
    trace: List[TraceRecord]
    state: CndGState


# ---------------------------------------------------------------------------

def _evaluate(objective, x, image=None):
    """``(f, f', image)`` at ``x``; ``image`` may be supplied from cache."""
    if objective.has_map:
        if image is None:
            image = objective.image(x)
        v, gy = objective.value_grad_image(image)
        return v, objective.pullback(gy), image
    v, g = objective.value_grad(x)
    return v, g, None


def _value_at(objective, x, image):
    if objective.has_map:
        if image is None:
            image = objective.image(x)
        return objective.value_grad_image(image)[0]
    return objective.value(x)


def _examine(state: CndGState, objective, lmo) -> None:
    plus = np.asarray(lmo(state.grad), dtype=float)
    if plus.shape != state.x.shape:
        raise InvalidInputError(f"oracle returned shape {plus.shape}, expected {state.x.shape}")
    state.plus = plus
    state.plus_image = objective.image(plus) if objective.has_map else None
    state.lower_t = state.fx - float(np.vdot(state.grad, state.x - plus))
    state.lower = max(state.lower, state.lower_t)


def init_state(objective, lmo, x1) -> CndGState:
    """Evaluate and examine the starting point (iteration 1)."""
    x1 = np.asarray(x1, dtype=float).copy()
    fx, g, img = _evaluate(objective, x1)
    state = CndGState(t=1, x=x1, fx=fx, grad=g, image=img, plus=x1, plus_image=img,
                      lower_t=-np.inf, best_x=x1.copy(), best_f=fx, lower=-np.inf)
    _examine(state, objective, lmo)
    return state


def _segment_search(objective, state: CndGState, iters: int) -> float:
    """Minimizer over ``gamma in [0, 1]`` of ``f(x + gamma d)`` by bisection
    on the directional derivative."""
    d = state.plus - state.x
    if objective.has_map:
        dimg = state.plus_image - state.image

        def deriv(gam):
            _, gy = objective.value_grad_image(state.image + gam * dimg)
            return float(gy @ dimg)
    else:
        def deriv(gam):
            return float(np.vdot(objective.gradient(state.x + gam * d), d))

    d0 = float(np.vdot(state.grad, d))
    if d0 >= 0.0:
        return 0.0
    if objective.is_quadratic:
        # exact: derivative is affine in gamma
        d1 = deriv(1.0)
        if d1 <= 0.0:
            return 1.0
        return d0 / (d0 - d1)
    if deriv(1.0) <= 0.0:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if deriv(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def inner_simplex_min(points, images, objective, tol: Optional[float] = None,
                      lam0=None, max_iter: int = 20000, quad=None):
    """Simplex weights minimizing ``f(sum lam_i x_i)`` over the given atoms.

    With cached ``images`` (``A x_i``) only the loss is evaluated. Returns a
    :class:`~normcg.subproblem.SmallResult`; ``converged`` is False when the
    tolerance was not reached within ``max_iter``.
    """
    k = len(points)
    if k < 1:
        raise InvalidInputError("need at least one atom")
    if lam0 is None:
        lam0 = np.full(k, 1.0 / k)
    lam0 = np.asarray(lam0, dtype=float)
    if k == 1:
        lam = np.ones(1)
        x = points[0]
        val = _value_at(objective, x, None if images is None else images[0])
        from .subproblem import SmallResult
        return SmallResult(lam, val, True, 0)
    if quad is not None:
        # precomputed (H, linear) for a quadratic loss
        H, lin = quad
        b = objective.map.offset
        vg = quadratic_valgrad(H, lin, 0.5 * float(b @ b) + objective.shift)
        lip = lazy_curvature(H)
    else:
        vg, lip, quad = _hull_model(points, images, objective)
    if tol is None:
        tol = 1e-12 if quad is not None else 1e-10
    H, lin = quad if quad is not None else (None, None)
    return minimize_small(vg, lam0, "simplex", lip, tol=tol, max_iter=max_iter,
                          hessian=H, linear=lin)


def _hull_model(points, images, objective):
    """Weight-space value/gradient, a curvature estimate and, for quadratic
    losses, the pair ``(H, linear)``."""
    if objective.has_map and images is not None:
        V = np.column_stack(images)
        if objective.is_quadratic:
            b = objective.map.offset
            H = V.T @ V
            lin = -(V.T @ b)
            vg = quadratic_valgrad(H, lin, 0.5 * float(b @ b) + objective.shift)
            return vg, lazy_curvature(H), (H, lin)

        def vg(lam):
            v, gy = objective.value_grad_image(V @ lam)
            return v, V.T @ gy
        return vg, lazy_curvature(V.T @ V, objective.loss.lipschitz), None

    X = np.column_stack([np.ravel(p) for p in points])
    shape = np.shape(points[0])

    def vg(lam):
        v, g = objective.value_grad(np.reshape(X @ lam, shape))
        return v, X.T @ np.ravel(g)

    # secant curvature estimate; backtracking corrects it upward if needed
    k = X.shape[1]
    a = np.full(k, 1.0 / k)
    e = np.zeros(k)
    e[0] = 1.0
    ga, ge = vg(a)[1], vg(e)[1]
    den = float(np.linalg.norm(e - a))
    lip = float(np.linalg.norm(ge - ga)) / den if den > 0 else 1.0
    return vg, max(lip, 1e-8), None


def _memory_step(objective, state: CndGState, gamma: float, config: CndGConfig):
    """Best point of the hull of x_t, x_t+ and the stored atoms."""
    plus = _Atom(state.plus, state.plus_image)
    keep = [i for i, a in enumerate(state.memory) if not a.same(plus)]
    atoms = [_Atom(state.x, state.image), plus]
    atoms += [state.memory[i] for i in keep]
    state.last_atoms = len(atoms)
    lam0 = np.zeros(len(atoms))
    if state.x_weight is None:
        lam0[0], lam0[1] = 1.0 - gamma, gamma
    else:
        # previous hull weights: the active-set solver then starts on a nearby face
        lam0[0] = state.x_weight
        lam0[2:] = [a.weight for a in atoms[2:]]
        lam0[1] = max(0.0, 1.0 - lam0.sum())
        lam0 = np.maximum(lam0, 0.0)
        lam0 /= lam0.sum()
    images = [a.image for a in atoms] if objective.has_map else None
    quad = None
    if state.gram is not None:
        quad = _cached_quadratic(state.gram, state.image, state.plus_image, keep)
    res = inner_simplex_min([a.point for a in atoms], images, objective,
                            config.inner_tol, lam0, config.inner_max_iter, quad)
    if not res.converged:
        state.inner_failures += 1
        return None
    for l, a in zip(res.lam[2:], atoms[2:]):
        a.weight = float(l)
    plus.weight = float(res.lam[1])
    state.x_weight = float(res.lam[0])
    x = sum(l * a.point for l, a in zip(res.lam, atoms) if l != 0.0)
    img = None
    if objective.has_map:
        img = sum(l * a.image for l, a in zip(res.lam, atoms) if l != 0.0)
    return np.asarray(x, dtype=float), img, plus.weight


def _cached_quadratic(gram: _GramCache, x_img, p_img, keep):
    """``(H, linear)`` of the hull problem over ``[x, plus] + memory[keep]``."""
    k = len(keep)
    cx, cp = gram.cross(x_img)[keep], gram.cross(p_img)[keep]
    H = np.empty((k + 2, k + 2))
    H[0, 0] = float(x_img @ x_img)
    H[0, 1] = H[1, 0] = float(x_img @ p_img)
    H[1, 1] = float(p_img @ p_img)
    H[0, 2:] = H[2:, 0] = cx
    H[1, 2:] = H[2:, 1] = cp
    H[2:, 2:] = gram.G[np.ix_(keep, keep)]
    b = gram.b
    lin = -np.concatenate([[float(x_img @ b), float(p_img @ b)], gram.bv[keep]])
    return H, lin


def _remember(state: CndGState, config: CndGConfig, plus_weight: float = 0.0) -> None:
    """FIFO update of the stored oracle answers (x_t+ becomes the newest)."""
    new = _Atom(state.plus.copy(), None if state.plus_image is None
                else state.plus_image.copy(), weight=plus_weight)
    idx = [i for i, a in enumerate(state.memory) if not a.same(new)]
    mem = [state.memory[i] for i in idx] + [new]
    idx.append(len(state.memory))
    if config.memory is not None:
        # slots left after the mandatory x_{t+1} and x_{t+1}+
        keep = config.memory - 2
        mem = mem[-keep:] if keep > 0 else []
        idx = idx[-keep:] if keep > 0 else []
    if state.gram is not None:
        g = state.gram
        g.append(state.plus_image)
        if len(idx) != g.k or idx[0] != 0:
            g.keep(idx)
    if state.x_weight is not None:
        # weight of dropped atoms moves to the iterate slot
        state.x_weight = max(0.0, 1.0 - sum(a.weight for a in mem))
    state.memory = mem


def cndg_step(state: CndGState, objective, lmo, config: CndGConfig) -> CndGState:
    """Move from the examined iterate ``x_t`` to ``x_{t+1}`` and examine it."""
    t = state.t
    gamma = 2.0 / (t + 1.0)
    xg = state.x + gamma * (state.plus - state.x)
    img_g = None
    if objective.has_map:
        img_g = state.image + gamma * (state.plus_image - state.image)

    new_x, new_img = xg, img_g
    if config.variant == "line_search":
        state.last_atoms = 2
        g = _segment_search(objective, state, config.bisection_iters)
        cand = state.x + g * (state.plus - state.x)
        cimg = None if img_g is None else state.image + g * (state.plus_image - state.image)
        if _value_at(objective, cand, cimg) <= _value_at(objective, xg, img_g):
            new_x, new_img = cand, cimg
    elif config.variant == "memory":
        if state.gram is None and objective.is_quadratic and not state.memory:
            state.gram = _GramCache(objective.map.offset)
        out = _memory_step(objective, state, gamma, config)
        plus_weight = 0.0
        if out is not None:
            cand, cimg, plus_weight = out
            if _value_at(objective, cand, cimg) <= _value_at(objective, xg, img_g):
                new_x, new_img = cand, cimg
            else:
                out = None
        if out is None:
            state.x_weight = None
            for a in state.memory:
                a.weight = 0.0
        _remember(state, config, plus_weight)
    else:
        state.last_atoms = 2

    fx, grad, img = _evaluate(objective, new_x, new_img)
    state.t = t + 1
    state.x, state.fx, state.grad, state.image = new_x, fx, grad, img
    if fx < state.best_f:
        state.best_f, state.best_x = fx, new_x.copy()
    _examine(state, objective, lmo)
    return state


def run_cndg(config: CndGConfig, objective, lmo: Callable, x1,
             callback: Optional[Callable[[CndGState], bool]] = None) -> CndGResult:
    """Iterate until the gap is at most ``config.gap_tol`` or the budget ends.

    ``callback(state)`` runs after each examined iterate; returning True
    stops the run. The trace has one record per examined iterate.
    """
    state = init_state(objective, lmo, x1)
    trace = []
    while True:
        trace.append(TraceRecord(state.t, state.fx, state.lower, state.gap, state.last_atoms))
        if callback is not None and callback(state):
            break
        if state.gap <= config.gap_tol or state.t >= config.max_iters:
            break
        cndg_step(state, objective, lmo, config)
    return CndGResult(state.best_x, state.certificate(), trace, state)


def write_trace_jsonl(records, path) -> None:
    with open(Path(path), "w") as fh:
        for rec in records:
            d = rec.as_dict() if hasattr(rec, "as_dict") else dict(rec)
            fh.write(json.dumps(d, sort_keys=False) + "\n")
