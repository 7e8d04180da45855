"""Accelerated projected/proximal gradient for the small weight problems.

The memory variants of both solvers reduce each step to minimizing a smooth
convex function of a handful of combination weights ``lam`` over one of

* ``"simplex"``  ``lam >= 0, sum(lam) == 1``
* ``"capped"``   ``lam >= 0, sum(lam) <= 1``
* ``"orthant"``  ``lam >= 0``
* ``"free"``     no constraint, with a weighted l1 penalty ``sum(w * |lam|)``

plus an optional linear term. All four have closed-form projections/proxes,
so one FISTA loop with backtracking and adaptive restart serves them all.
The returned point never has a larger objective than the starting point.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConvergenceWarning

_EPS = float(np.finfo(float).eps)
SETS = ("simplex", "capped", "orthant", "free")


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the unit simplex (sort-based)."""
    k = v.size
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, k + 1)
    cond = u - css / ind > 0
    rho = ind[cond][-1]
    theta = css[cond][-1] / rho
    return np.maximum(v - theta, 0.0)


def project_capped(v: np.ndarray) -> np.ndarray:
    """Projection onto ``{lam >= 0, sum(lam) <= 1}``."""
    w = np.maximum(v, 0.0)
    if w.sum() <= 1.0:
        return w
    return project_simplex(v)


@dataclass
class SmallResult:
    lam: np.ndarray
    value: float
    converged: bool
    iterations: int


def _prox(kind: str, v: np.ndarray, step: float, weights: Optional[np.ndarray]):
    if kind == "simplex":
        return project_simplex(v)
    if kind == "capped":
        return project_capped(v)
    if kind == "orthant":
        return np.maximum(v, 0.0)
    thr = step * weights
    return np.sign(v) * np.maximum(np.abs(v) - thr, 0.0)


def _grad_noise(lam, grad, H=None, lin=None) -> float:
    """Rounding level of a computed gradient ``H lam + lin`` (or of ``grad``)."""
    mag = float(np.max(np.abs(grad)))
    if H is not None and lin is not None:
        mag = max(mag, float(np.max(np.abs(H) @ np.abs(lam) + np.abs(lin))))
    return 64 * _EPS * mag


def _gap(kind: str, lam: np.ndarray, grad: np.ndarray) -> Optional[float]:
    """Frank-Wolfe gap where the feasible set is bounded."""
    if kind == "simplex":
        return float(grad @ lam - grad.min())
    if kind == "capped":
        return float(grad @ lam - min(0.0, grad.min()))
    return None


def _face_solve(kind: str, lam: np.ndarray, hessian: np.ndarray, lin: np.ndarray):
    """Exact minimizer of a quadratic on the affine hull of the current face.

    Returns None when the support is empty or the minimizer leaves the set.
    """
    S = np.flatnonzero(lam > 0)
    if S.size == 0:
        return None
    H = hessian[np.ix_(S, S)]
    c = lin[S]
    on_boundary = kind == "simplex" or (kind == "capped" and abs(lam.sum() - 1.0) <= 1e-12)
    if on_boundary:
        k = S.size
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = H
        kkt[:k, k] = 1.0
        kkt[k, :k] = 1.0
        rhs = np.concatenate([-c, [1.0]])
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:k]
    else:
        sol = np.linalg.lstsq(H, -c, rcond=None)[0]
    if np.any(sol < 0) or (kind == "capped" and sol.sum() > 1.0 + 1e-15):
        return None
    out = np.zeros_like(lam)
    out[S] = sol
    if kind == "simplex":
        out /= out.sum()
    return out


def _exact_first(valgrad, lam0, kind, H, lin, weights):
    """Active-set answer (its own KKT test is the certificate), or None.

    The start point is returned instead when it is not worse, so the result
    never exceeds the starting objective.
    """
    lam0 = np.asarray(lam0, dtype=float)
    x, ok = solve_quadratic(kind, H, lin, lam0, weights)
    if not ok or not np.all(np.isfinite(x)):
        return None

    def total(lam):
        v = valgrad(lam)[0]
        if kind == "free":
            v += float(weights @ np.abs(lam))
        return v
    v, v0 = total(x), total(lam0)
    if v > v0:
        return SmallResult(lam0.copy(), v0, True, 0)
    return SmallResult(x, v, True, 0)


def minimize_small(valgrad: Callable[[np.ndarray], tuple], lam0: np.ndarray,
                   kind: str, lipschitz, tol: float = 1e-12,
                   max_iter: int = 20000, weights: Optional[np.ndarray] = None,
                   hessian: Optional[np.ndarray] = None,
                   linear: Optional[np.ndarray] = None) -> SmallResult:
    """Minimize ``s(lam) [+ sum(weights*|lam|)]`` over the set ``kind``.

    ``valgrad`` returns the value and gradient of the smooth part ``s``.
    ``lam0`` must be feasible. ``tol`` is relative to ``max(1, |objective|)``.
    ``lipschitz`` may be a zero-argument callable, evaluated only if the
    first-order loop runs.
    If ``s`` is the quadratic ``0.5 lam'H lam + linear'lam + const``, passing
    ``hessian`` and ``linear`` selects the exact active-set solver; the
    first-order loop below is then only a fallback.

    Momentum is restarted by the gradient test (not by objective values,
    which stop resolving progress long before the weights settle).
    """
    if kind not in SETS:
        raise ValueError(f"unknown feasible set {kind!r}")
    if kind == "free" and weights is None:
        weights = np.zeros_like(lam0)
    face = hessian is not None and linear is not None and kind != "free"
    if hessian is not None and linear is not None:
        exact = _exact_first(valgrad, lam0, kind, hessian, linear, weights)
        if exact is not None:
            return exact

    def total(lam, sval):
        if kind == "free":
            return sval + float(weights @ np.abs(lam))
        return sval

    lam0 = np.asarray(lam0, dtype=float)
    if not face and kind != "free" and lam0.size <= NEWTON_MAX_DIM:
        newton = _projected_newton(valgrad, lam0, kind, tol)
        if newton.converged:
            return newton
        lam0 = newton.lam

    if callable(lipschitz):
        lipschitz = lipschitz()
    lam = np.asarray(lam0, dtype=float).copy()
    fv, g = valgrad(lam)
    start = total(lam, fv)
    best_lam, best = lam.copy(), start
    L = max(float(lipschitz), 1e-12)
    y, fy, gy = lam.copy(), fv, g
    tk = 1.0
    converged = False
    it = 0
    new, obj = lam, start
    for it in range(1, max_iter + 1):
        while True:
            step = 1.0 / L
            new = _prox(kind, y - step * gy, step, weights)
            fn, gn = valgrad(new)
            d = new - y
            if fn <= fy + float(gy @ d) + 0.5 * L * float(d @ d) + 1e-15 * max(1.0, abs(fy)):
                break
            L *= 2.0
        if face and it % 10 == 0:
            cand = _face_solve(kind, new, hessian, linear)
            if cand is not None:
                fc, gc = valgrad(cand)
                if fc <= fn:
                    new, fn, gn = cand, fc, gc
                    tk = 1.0
        obj = total(new, fn)
        if obj < best:
            best, best_lam = obj, new.copy()
        scale = max(1.0, abs(obj))
        gap = _gap(kind, new, gn)
        if gap is not None:
            # below ~64 ulps of the gradient the gap is rounding noise
            if gap <= max(tol * scale, _grad_noise(new, gn, hessian, linear)):
                converged = True
                break
        elif L * float(np.linalg.norm(d)) * (1.0 + float(np.linalg.norm(new))) <= tol * scale:
            converged = True
            break
        if float((y - new) @ (new - lam)) > 0.0:
            tk = 1.0
        tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        y = new + ((tk - 1.0) / tn) * (new - lam)
        if kind in ("simplex", "capped", "orthant"):
            # keep the extrapolated point where the smooth part is defined
            y = _prox(kind, y, 0.0, weights)
        fy, gy = valgrad(y)
        lam, tk = new, tn
    # the final point when it is not measurably worse, else the best seen
    if obj <= best + 4e-16 * max(1.0, abs(best)) and obj <= start:
        return SmallResult(new, obj, converged, it)
    return SmallResult(best_lam, best, converged, it)


NEWTON_MAX_DIM = 16


def _fd_hessian(valgrad, lam, g):
    """Symmetrized forward-difference Hessian from gradient calls."""
    k = lam.size
    H = np.empty((k, k))
    for i in range(k):
        h = 1e-6 * max(1.0, abs(lam[i]))
        e = lam.copy()
        e[i] += h
        H[:, i] = (valgrad(e)[1] - g) / h
    H = 0.5 * (H + H.T)
    # the model only needs to be convex; clip tiny negative curvature
    w, Q = np.linalg.eigh(H)
    return (Q * np.maximum(w, 0.0)) @ Q.T


def _projected_newton(valgrad, lam0, kind, tol, max_iter=60) -> SmallResult:
    """Sequential quadratic steps on a finite-difference model.

    Each model is minimized exactly over the set, and the step toward that
    minimizer is backtracked (the set is convex, so the segment is feasible).
    Converged when the Frank-Wolfe gap passes the same test as the
    first-order loop.
    """
    lam = np.asarray(lam0, dtype=float).copy()
    fv, g = valgrad(lam)
    it = 0
    for it in range(1, max_iter + 1):
        if _stationary(kind, lam, g, fv, tol):
            return SmallResult(lam, fv, True, it - 1)
        H = _fd_hessian(valgrad, lam, g)
        target, ok = solve_quadratic(kind, H, g - H @ lam, lam)
        if not ok or not np.all(np.isfinite(target)):
            break
        d = target - lam
        slope = float(g @ d)
        if slope >= 0:
            break
        t = 1.0
        while t > 1e-10:
            cand = lam + t * d
            fc, gc = valgrad(cand)
            if fc <= fv + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            break
        lam, fv, g = cand, fc, gc
    return SmallResult(lam, fv, _stationary(kind, lam, g, fv, tol), it)


def _stationary(kind, lam, g, fv, tol) -> bool:
    gap = _gap(kind, lam, g)
    if gap is None:
        # orthant: complementarity residual scaled like a gap
        gap = float(np.max(np.abs(np.minimum(lam, g)))) * max(1.0, float(np.sum(lam)))
    return gap <= max(tol * max(1.0, abs(fv)), _grad_noise(lam, g))


def _face_basis(k: int, simplex: bool) -> np.ndarray:
    if not simplex:
        return np.eye(k)
    if k == 1:
        return np.zeros((1, 0))
    # orthonormal basis of {d : sum(d) = 0}
    q, _ = np.linalg.qr(np.eye(k)[:, :k - 1] - 1.0 / k)
    return q


def qp_active_set(H: np.ndarray, c: np.ndarray, x0: np.ndarray, simplex: bool,
                  max_iter: Optional[int] = None):
    """Primal active-set method for ``min 0.5 x'Hx + c'x`` over ``x >= 0``
    (``simplex=False``) or the unit simplex (``simplex=True``).

    ``H`` may be singular. On each face the reduced Hessian is split into its
    range (Newton step) and null space (steepest descent until a bound
    blocks). Returns ``(x, ok)``; ``ok`` is False when the iteration cap is
    reached or the problem is unbounded below.
    """
    k = c.size
    x = np.asarray(x0, dtype=float).copy()
    free = x > 0
    if simplex and not free.any():
        raise ValueError("simplex start must have positive entries")
    if max_iter is None:
        max_iter = 20 * k + 50
    hscale = max(1.0, float(np.max(np.abs(H))) if H.size else 1.0)
    for _ in range(max_iter):
        g = H @ x + c
        gscale = max(1.0, float(np.max(np.abs(g))), hscale * float(np.max(x, initial=0.0)))
        F = np.flatnonzero(free)
        Z = _face_basis(F.size, simplex)
        d = np.zeros(k)
        newton = True
        if Z.shape[1] > 0:
            R = Z.T @ H[np.ix_(F, F)] @ Z
            gz = Z.T @ g[F]
            w, Q = np.linalg.eigh(0.5 * (R + R.T))
            pos = w > 1e-12 * max(hscale, float(np.max(np.abs(w), initial=0.0)))
            gq = Q.T @ gz
            null_part = np.where(pos, 0.0, gq)
            if np.linalg.norm(null_part) > 1e-13 * gscale:
                newton = False
                y = -(Q @ null_part)
            else:
                y = -(Q @ np.where(pos, gq / np.where(pos, w, 1.0), 0.0))
            d[F] = Z @ y
        if np.any(d != 0):
            neg = d < 0
            ratios = np.full(k, np.inf)
            ratios[neg] = x[neg] / -d[neg]
            amax = float(ratios.min()) if neg.any() else np.inf
            if newton:
                alpha = min(1.0, amax)
            else:
                curv = float(d @ H @ d)
                slope = float(g @ d)
                alpha = amax if curv <= 0 else min(amax, -slope / curv)
                if not np.isfinite(alpha):
                    return x, False
            x = x + alpha * d
            if alpha >= amax:
                block = ratios <= amax * (1 + 1e-12)
                x[block] = 0.0
                free &= ~block
                if simplex and not free.any():
                    j = int(np.argmax(x))
                    free[j] = True
                x = np.maximum(x, 0.0)
                if simplex:
                    x /= x.sum()
                continue
            if not newton:
                continue
        # stationary on the face: check the multipliers of the bounds
        g = H @ x + c
        nu = float(np.mean(g[free])) if simplex else 0.0
        red = g - nu
        red[free] = 0.0
        j = int(np.argmin(red))
        if red[j] >= -1e-13 * gscale:
            return x, True
        free[j] = True
    return x, False


def solve_quadratic(kind: str, H: np.ndarray, lin: np.ndarray, lam0: np.ndarray,
                    weights: Optional[np.ndarray] = None):
    """Exact minimizer of ``0.5 lam'H lam + lin'lam [+ sum(weights*|lam|)]``
    over the set ``kind`` by reduction to :func:`qp_active_set`."""
    k = lin.size
    lam0 = np.asarray(lam0, dtype=float)
    if kind == "simplex":
        return qp_active_set(H, lin, lam0, True)
    if kind == "orthant":
        return qp_active_set(H, lin, lam0, False)
    if kind == "capped":
        Hs = np.zeros((k + 1, k + 1))
        Hs[:k, :k] = H
        slack = max(0.0, 1.0 - float(lam0.sum()))
        x0 = np.concatenate([lam0, [slack]])
        if x0.sum() <= 0:
            x0[-1] = 1.0
        x0 /= x0.sum()
        x, ok = qp_active_set(Hs, np.concatenate([lin, [0.0]]), x0, True)
        return x[:k], ok
    w = np.zeros(k) if weights is None else weights
    Hs = np.block([[H, -H], [-H, H]])
    cs = np.concatenate([lin + w, -lin + w])
    x0 = np.concatenate([np.maximum(lam0, 0.0), np.maximum(-lam0, 0.0)])
    x, ok = qp_active_set(Hs, cs, x0, False)
    return x[:k] - x[k:], ok


def quadratic_valgrad(H: np.ndarray, c: np.ndarray, const: float = 0.0):
    """Value/gradient of ``0.5 lam'H lam + c'lam + const``."""
    def vg(lam):
        Hl = H @ lam
        return 0.5 * float(lam @ Hl) + float(c @ lam) + const, Hl + c
    return vg


def lazy_curvature(H: np.ndarray, factor: float = 1.0):
    """Zero-argument callable returning ``factor * curvature(H)``, computed
    on first use and then cached."""
    cache = []

    def get():
        if not cache:
            cache.append(factor * curvature(H))
        return cache[0]
    return get


def curvature(H: np.ndarray) -> float:
    """Estimate of the largest eigenvalue of a small PSD matrix.

    A few hundred shifted power iterations, capped by the trace. Only a step
    size hint: the backtracking in :func:`minimize_small` fixes underestimates.
    """
    from .linalg import leading_eigpair
    if not np.any(H):
        return 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        lam, _ = leading_eigpair(H, "largest", tol=1e-6, max_iter=300)
    return min(max(lam, 1e-300) * 1.01, float(np.trace(H)))
