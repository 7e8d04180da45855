"""Dense containers, spectral kernels and the zero-padded convolution.

Matrices and images are plain ``numpy.ndarray`` objects. The helpers below
validate them at module boundaries; everything downstream works on arrays.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import linalg as sla
from scipy import signal
from scipy.sparse import linalg as splinalg

from .errors import ConvergenceWarning, InvalidInputError

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 5000
_SEEDS = (20140419, 7331)
POWER_BUDGET = 300


# ---------------------------------------------------------------------------
# containers

def as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise InvalidInputError(f"expected a 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix has non-finite entries")
    return a


def as_sym(a) -> np.ndarray:
    """Return the symmetric part of a square matrix (exactly symmetric)."""
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"symmetric matrix must be square, got {a.shape}")
    return 0.5 * (a + a.T)


def is_zero_mean(x: np.ndarray) -> bool:
    scale = max(1.0, float(np.max(np.abs(x)))) if x.size else 1.0
    return abs(float(np.sum(x))) <= 1e-9 * x.size * scale


def as_grid_image(x, zero_mean: bool = False) -> np.ndarray:
    """Validate an n-by-n image; with ``zero_mean`` also check its mean."""
    x = as_matrix(x)
    if x.shape[0] != x.shape[1]:
        raise InvalidInputError(f"images are square, got shape {x.shape}")
    if zero_mean and not is_zero_mean(x):
        raise InvalidInputError("image is required to have zero mean")
    return x


def remove_mean(x: np.ndarray) -> np.ndarray:
    return x - x.mean()


def canonical_sign(v: np.ndarray) -> float:
    """Sign that makes the first non-negligible entry of ``v`` positive."""
    nz = np.flatnonzero(np.abs(v) > 1e-12 * max(1.0, float(np.max(np.abs(v)))))
    if nz.size == 0:
        return 1.0
    return 1.0 if v[nz[0]] > 0 else -1.0


# ---------------------------------------------------------------------------
# spectral kernels

@dataclass(frozen=True)
class SingularTriple:
    sigma: float
    left: np.ndarray
    right: np.ndarray
    converged: bool = True
    iterations: int = 0


def _start_vector(dim: int, attempt: int) -> np.ndarray:
    rng = np.random.default_rng(_SEEDS[attempt])
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _power_iteration(apply: Callable[[np.ndarray], np.ndarray], dim: int,
                     tol: float, max_iter: int, v0=None):
    """Dominant eigenpair of a PSD operator given by ``apply``.

    Stops when ``||B v - theta v|| <= tol * theta``. Returns
    ``(theta, v, converged, iterations)``. ``v0`` replaces the seeded first
    start vector.
    """
    theta, v, it = 0.0, _start_vector(dim, 0), 0
    if v0 is not None:
        v0 = np.asarray(v0, dtype=float).ravel()
        nv = float(np.linalg.norm(v0))
        v0 = v0 / nv if v0.size == dim and nv > 0 else None
    for attempt in range(2):
        v = v0 if (attempt == 0 and v0 is not None) else _start_vector(dim, attempt)
        for it in range(1, max_iter + 1):
            w = apply(v)
            theta = float(v @ w)
            res = float(np.linalg.norm(w - theta * v))
            nw = float(np.linalg.norm(w))
            if nw == 0.0:
                break
            if res <= tol * max(theta, 0.0):
                return theta, v, True, it
            v = w / nw
        if theta > 0.0:
            # not a stalled start, just slow: accept the estimate
            return float(v @ apply(v)), v, False, it
    return theta, v, False, it


def _lanczos_right_vector(a: np.ndarray, tol: float, max_iter: int, v0=None):
    p, q = a.shape
    if min(p, q) <= 2:
        _, _, vt = np.linalg.svd(a)
        return vt[0], True
    try:
        start = _start_vector(min(p, q), 0)
        if v0 is not None and p >= q:
            start = v0
        elif v0 is not None:
            start = a @ v0
        _, _, vt = splinalg.svds(a, k=1, tol=tol, maxiter=max_iter, v0=start)
    except splinalg.ArpackNoConvergence:
        _, _, vt = np.linalg.svd(a, full_matrices=False)
        return vt[0], True
    return vt[0], True


def leading_singular_triple(a, tol: float = DEFAULT_TOL,
                            max_iter: int = DEFAULT_MAX_ITER, v0=None) -> SingularTriple:
    """Largest singular value of ``a`` with unit left/right vectors.

    Power iteration on ``a.T @ a`` from a fixed seeded start; the right vector
    is sign-canonicalised so results are reproducible.
    """
    if tol <= 0 or max_iter < 1:
        raise InvalidInputError("tol must be positive and max_iter >= 1")
    a = as_matrix(a)
    p, q = a.shape
    if not np.any(a):
        return SingularTriple(0.0, np.zeros(p), np.zeros(q), True, 0)
    theta, v, ok, it = _power_iteration(lambda x: a.T @ (a @ x), q, tol,
                                        min(max_iter, POWER_BUDGET), v0)
    if not ok and max_iter > POWER_BUDGET:
        # clustered top of the spectrum: hand over to Lanczos
        v, ok = _lanczos_right_vector(a, tol, max_iter, v0)
        it = max_iter
    av = a @ v
    sigma = float(np.linalg.norm(av))
    if sigma == 0.0:
        return SingularTriple(0.0, np.zeros(p), np.zeros(q), ok, it)
    s = canonical_sign(v)
    v = s * v
    u = s * av / sigma
    if not ok:
        warnings.warn(f"singular triple not converged in {max_iter} iterations",
                      ConvergenceWarning, stacklevel=2)
    return SingularTriple(sigma, u, v, ok, it)


def leading_singular_triple_dense(a) -> SingularTriple:
    """Same contract as :func:`leading_singular_triple`, computed from the
    top eigenpair of the smaller Gram matrix by a dense LAPACK solve."""
    a = as_matrix(a)
    p, q = a.shape
    if not np.any(a):
        return SingularTriple(0.0, np.zeros(p), np.zeros(q), True, 0)
    if q <= p:
        _, vec = sla.eigh(a.T @ a, subset_by_index=[q - 1, q - 1])
        v = vec[:, 0]
    else:
        _, vec = sla.eigh(a @ a.T, subset_by_index=[p - 1, p - 1])
        v = a.T @ vec[:, 0]
        v /= np.linalg.norm(v)
    av = a @ v
    sigma = float(np.linalg.norm(av))
    if sigma == 0.0:
        return SingularTriple(0.0, np.zeros(p), np.zeros(q), True, 0)
    s = canonical_sign(v)
    return SingularTriple(sigma, s * av / sigma, s * v, True, 0)


def leading_eigpair(a, which: str = "largest", tol: float = DEFAULT_TOL,
                    max_iter: int = DEFAULT_MAX_ITER):
    """Extreme eigenpair ``(eigenvalue, unit eigvec)`` of a symmetric matrix.

    The spectrum is shifted by a Gershgorin bound ``c`` so that power
    iteration runs on a PSD matrix: ``a + c I`` for the largest eigenvalue,
    ``c I - a`` for the smallest.
    """
    if which not in ("largest", "smallest"):
        raise InvalidInputError("which must be 'largest' or 'smallest'")
    if tol <= 0 or max_iter < 1:
        raise InvalidInputError("tol must be positive and max_iter >= 1")
    a = as_sym(a)
    dim = a.shape[0]
    c = float(np.max(np.sum(np.abs(a), axis=1)))
    if c == 0.0:
        return 0.0, _start_vector(dim, 0)
    sgn = 1.0 if which == "largest" else -1.0

    def shifted(x):
        return c * x + sgn * (a @ x)

    _, v, ok, _ = _power_iteration(shifted, dim, tol * 1e-1, max_iter)
    if not ok:
        warnings.warn(f"eigenpair not converged in {max_iter} iterations",
                      ConvergenceWarning, stacklevel=2)
    v = canonical_sign(v) * v
    return float(v @ (a @ v)), v


def operator_norm_sq(apply: Callable[[np.ndarray], np.ndarray],
                     adjoint: Callable[[np.ndarray], np.ndarray],
                     shape, tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER) -> float:
    """``||A||_{2,2}^2`` by power iteration on ``A* A``.

    ``shape`` is the shape of the argument of ``apply``.
    """
    shape = tuple(np.atleast_1d(shape).tolist()) if not isinstance(shape, tuple) else shape
    dim = int(np.prod(shape))

    def normal(v):
        return np.ravel(adjoint(apply(v.reshape(shape))))

    theta, v, ok, _ = _power_iteration(normal, dim, tol, min(max_iter, POWER_BUDGET))
    if not ok and dim > 2:
        op = splinalg.LinearOperator((dim, dim), matvec=normal, dtype=float)
        try:
            w = splinalg.eigsh(op, k=1, which="LA", v0=v, tol=tol,
                               maxiter=max_iter, return_eigenvectors=False)
            theta, ok = float(w[0]), True
        except splinalg.ArpackNoConvergence:
            pass
    if not ok:
        warnings.warn("operator norm estimate not converged",
                      ConvergenceWarning, stacklevel=2)
    return max(theta, 0.0)


# ---------------------------------------------------------------------------
# convolution

def _check_kernel(x: np.ndarray, kernel) -> np.ndarray:
    kernel = as_matrix(kernel)
    if kernel.shape[0] > x.shape[0] or kernel.shape[1] > x.shape[1]:
        raise InvalidInputError(
            f"kernel {kernel.shape} larger than image {x.shape}")
    return kernel


def conv2d_zeropad(x, kernel) -> np.ndarray:
    """Zero-pad ``x``, convolve with ``kernel`` and crop back to ``x.shape``.

    The crop keeps the kernel's centre ``((kh-1)//2, (kw-1)//2)`` aligned with
    each pixel, so odd kernels give the usual 'same' convolution.
    """
    x = as_matrix(x)
    kernel = _check_kernel(x, kernel)
    full = signal.convolve2d(x, kernel, mode="full")
    r0, c0 = (kernel.shape[0] - 1) // 2, (kernel.shape[1] - 1) // 2
    return full[r0:r0 + x.shape[0], c0:c0 + x.shape[1]]


def conv2d_zeropad_adjoint(y, kernel) -> np.ndarray:
    """Adjoint of :func:`conv2d_zeropad` (correlation with the kernel)."""
    y = as_matrix(y)
    kernel = _check_kernel(y, kernel)
    kh, kw = kernel.shape
    r0, c0 = (kh - 1) // 2, (kw - 1) // 2
    padded = np.zeros((y.shape[0] + kh - 1, y.shape[1] + kw - 1))
    padded[r0:r0 + y.shape[0], c0:c0 + y.shape[1]] = y
    return signal.correlate2d(padded, kernel, mode="valid")


# ---------------------------------------------------------------------------
# CSV I/O

def read_csv_array(path) -> np.ndarray:
    arr = np.loadtxt(Path(path), delimiter=",", ndmin=2)
    return as_matrix(arr)


def write_csv_array(path, arr) -> None:
    arr = np.atleast_2d(np.asarray(arr, dtype=float))
    np.savetxt(Path(path), arr, delimiter=",", fmt="%.17g")
