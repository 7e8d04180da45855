"""Linear minimization oracles over ``{x in K : ||x|| <= 1}``.

Every oracle returns an :class:`OracleAtom` whose point has norm exactly 0 or
1; an atom whose linear-form value is negligible is reset to zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import InvalidInputError

ZERO_FORM_RTOL = 1e-12


@dataclass(frozen=True)
class OracleAtom:
    point: np.ndarray
    norm_value: float
    form_value: float
    converged: bool = True

    @property
    def is_zero(self) -> bool:
        return self.norm_value == 0.0


@dataclass(frozen=True)
class LiftedAtom:
    x_part: np.ndarray
    r_part: float


def _finalize(eta: np.ndarray, point: np.ndarray, converged: bool = True) -> OracleAtom:
    form = float(np.vdot(eta, point))
    if abs(form) <= ZERO_FORM_RTOL * float(np.linalg.norm(eta)) or form >= 0.0:
        return OracleAtom(np.zeros_like(eta, dtype=float), 0.0, 0.0, converged)
    return OracleAtom(point, 1.0, form, converged)


def _finite(eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise InvalidInputError("linear form has non-finite entries")
    return eta


def lo_l1(eta) -> OracleAtom:
    """Minimizer of ``<eta, x>`` over the unit l1 ball."""
    eta = _finite(eta)
    point = np.zeros_like(eta)
    if not np.any(eta):
        return OracleAtom(point, 0.0, 0.0)
    k = int(np.argmax(np.abs(eta)))
    point.flat[k] = -np.sign(eta.flat[k])
    return _finalize(eta, point)


def lo_nuclear(eta, tol: float = linalg.DEFAULT_TOL,
               max_iter: int = linalg.DEFAULT_MAX_ITER, v0=None) -> OracleAtom:
    """Rank-one minimizer ``-u v^T`` over the unit nuclear-norm ball.

    ``v0`` is an optional start vector for the power iteration.
    """
    eta = linalg.as_matrix(_finite(eta))
    trip = linalg.leading_singular_triple(eta, tol, max_iter, v0)
    if trip.sigma == 0.0:
        return OracleAtom(np.zeros_like(eta), 0.0, 0.0, trip.converged)
    return _finalize(eta, -np.outer(trip.left, trip.right), trip.converged)


def lo_psd_trace(eta, tol: float = linalg.DEFAULT_TOL,
                 max_iter: int = linalg.DEFAULT_MAX_ITER) -> OracleAtom:
    """Minimizer over ``{x >= 0 (PSD), tr x <= 1}``: ``v v^T`` for the
    eigenvector of the most negative eigenvalue, or zero."""
    eta = linalg.as_sym(_finite(eta))
    lam, v = linalg.leading_eigpair(eta, "smallest", tol, max_iter)
    if lam >= 0.0:
        return OracleAtom(np.zeros_like(eta), 0.0, 0.0)
    return _finalize(eta, np.outer(v, v))


def lo_tv(eta) -> OracleAtom:
    """Minimizer over the unit TV ball of zero-mean images (flow based)."""
    from .tvflow import tv_lmo
    return tv_lmo(eta)


def lift_oracle(atom: OracleAtom, eta_plus, rho: float) -> LiftedAtom:
    """Minimizer of ``<[eta; sigma], [x; r]>`` over ``{x in K, ||x|| <= r <= rho}``.

    ``eta_plus`` is the pair ``(eta, sigma)`` and ``atom`` the oracle answer
    for ``eta``.
    """
    if rho < 0:
        raise InvalidInputError("rho must be nonnegative")
    _, sigma = eta_plus
    sigma = float(sigma)
    if sigma == 0.0 or atom.form_value + sigma <= 0.0:
        return LiftedAtom(rho * atom.point, float(rho))
    return LiftedAtom(np.zeros_like(atom.point), 0.0)


# ---------------------------------------------------------------------------
# oracle objects: an LO routine bundled with the norm it minimizes over

class L1Oracle:
    name = "l1"
    cone_is_space = True

    def __call__(self, eta) -> OracleAtom:
        return lo_l1(eta)

    @staticmethod
    def norm(x) -> float:
        return float(np.sum(np.abs(x)))


class NuclearOracle:
    name = "nuclear"
    cone_is_space = True

    def __init__(self, tol: float = linalg.DEFAULT_TOL,
                 max_iter: int = linalg.DEFAULT_MAX_ITER, method: str = "power"):
        if method not in ("power", "dense"):
            raise InvalidInputError("method must be 'power' or 'dense'")
        self.tol, self.max_iter, self.method = tol, max_iter, method

    def __call__(self, eta) -> OracleAtom:
        if self.method == "power":
            return lo_nuclear(eta, self.tol, self.max_iter)
        eta = linalg.as_matrix(_finite(eta))
        trip = linalg.leading_singular_triple_dense(eta)
        if trip.sigma == 0.0:
            return OracleAtom(np.zeros_like(eta), 0.0, 0.0)
        return _finalize(eta, -np.outer(trip.left, trip.right))

    @staticmethod
    def norm(x) -> float:
        return float(np.sum(np.linalg.svd(x, compute_uv=False)))


class PSDTraceOracle:
    name = "psd_trace"
    cone_is_space = False

    def __init__(self, tol: float = linalg.DEFAULT_TOL,
                 max_iter: int = linalg.DEFAULT_MAX_ITER):
        self.tol, self.max_iter = tol, max_iter

    def __call__(self, eta) -> OracleAtom:
        return lo_psd_trace(eta, self.tol, self.max_iter)

    @staticmethod
    def norm(x) -> float:
        return float(np.sum(np.abs(np.linalg.eigvalsh(linalg.as_sym(x)))))


class TVOracle:
    name = "tv"
    cone_is_space = True

    def __call__(self, eta) -> OracleAtom:
        return lo_tv(eta)

    @staticmethod
    def norm(x) -> float:
        from .tvflow import tv_norm
        return tv_norm(x)


def ball_lmo(oracle, rho: float):
    """LO routine for ``K[rho] = {x in K : ||x|| <= rho}`` built from ``oracle``."""
    def lmo(eta):
        return rho * oracle(eta).point
    return lmo
