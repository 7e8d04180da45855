"""Smooth convex objectives ``f(x) = phi(A x - b) + shift`` and their constants.

A loss ``phi`` knows its value, gradient and the Lipschitz constant of its
gradient with respect to its natural norm (``||.||_2`` for the quadratic loss,
``||.||_inf`` otherwise). Composing it with an affine map and a bound on the
mixed operator norm gives ``L_f = L[phi] * ||A||^2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidInputError

LOSS_KINDS = ("quadratic", "smoothed_linf", "logistic")


@dataclass(frozen=True)
class SmoothLoss:
    kind: str
    dim: int
    beta: Optional[float] = None
    one_sided: bool = False

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise InvalidInputError(f"unknown loss kind {self.kind!r}")
        if self.dim < 1:
            raise InvalidInputError("loss dimension must be positive")
        if self.kind == "smoothed_linf" and (self.beta is None or self.beta < 2):
            raise InvalidInputError("smoothed_linf needs beta >= 2")
        if self.kind == "logistic" and (self.beta is None or self.beta <= 0):
            raise InvalidInputError("logistic needs beta > 0")

    @property
    def lipschitz(self) -> float:
        return loss_lipschitz(self)

    def value_grad(self, y):
        return eval_loss(self, y)


def _smoothed_linf(y: np.ndarray, beta: float):
    ymax = float(np.max(np.abs(y))) if y.size else 0.0
    if ymax == 0.0:
        return 0.0, np.zeros_like(y)
    t = np.abs(y) / ymax
    nb = ymax * float(np.sum(t ** beta)) ** (1.0 / beta)
    grad = nb * (np.abs(y) / nb) ** (beta - 1.0) * np.sign(y)
    return 0.5 * nb * nb, grad


def eval_loss(loss: SmoothLoss, y):
    """Value and gradient of the loss at ``y``."""
    y = np.asarray(y, dtype=float)
    if y.shape != (loss.dim,):
        raise InvalidInputError(f"expected length-{loss.dim} vector, got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("loss argument has non-finite entries")
    if loss.kind == "logistic":
        b = loss.beta
        if loss.one_sided:
            stacked = np.concatenate([b * y, np.zeros_like(y)])
            lse = logsumexp(stacked)
            return float(lse / b), np.exp(b * y - lse)
        stacked = np.concatenate([b * y, -b * y])
        lse = logsumexp(stacked)
        return float(lse / b), np.exp(b * y - lse) - np.exp(-b * y - lse)
    arg = np.maximum(y, 0.0) if loss.one_sided else y
    if loss.kind == "quadratic":
        return 0.5 * float(arg @ arg), arg.copy()
    return _smoothed_linf(arg, float(loss.beta))


def loss_lipschitz(loss: SmoothLoss) -> float:
    """Gradient Lipschitz constant of the loss in its natural norm."""
    if loss.kind == "quadratic":
        return 1.0
    if loss.kind == "smoothed_linf":
        return (loss.beta - 1.0) * loss.dim ** (2.0 / loss.beta)
    return float(loss.beta)


@dataclass
class AffineResidualMap:
    """``x -> A x - b`` with an explicit adjoint.

    Adjoint consistency is probed on seeded random vectors at construction.
    """
    apply: Callable[[np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray], np.ndarray]
    offset: np.ndarray
    in_shape: tuple
    check: bool = True

    def __post_init__(self):
        self.offset = np.asarray(self.offset, dtype=float)
        self.in_shape = tuple(self.in_shape)
        if self.check:
            rng = np.random.default_rng(1234)
            for _ in range(2):
                x = rng.standard_normal(self.in_shape)
                y = rng.standard_normal(self.offset.shape)
                ax, aty = self.apply(x), self.adjoint(y)
                lhs, rhs = float(np.vdot(ax, y)), float(np.vdot(x, aty))
                scale = max(1.0, np.linalg.norm(ax) * np.linalg.norm(y),
                            np.linalg.norm(x) * np.linalg.norm(aty))
                if abs(lhs - rhs) > 1e-9 * scale:
                    raise InvalidInputError(
                        f"adjoint mismatch: <Ax,y>={lhs:.6g}, <x,A*y>={rhs:.6g}")

    @property
    def out_dim(self) -> int:
        return int(self.offset.size)

    @classmethod
    def from_matrix(cls, mat, b=None):
        mat = np.asarray(mat, dtype=float)
        b = np.zeros(mat.shape[0]) if b is None else b
        return cls(lambda x: mat @ x, lambda y: mat.T @ y, b, (mat.shape[1],))

    @classmethod
    def sampling(cls, mask, values):
        """Restriction ``x -> x[mask]`` with observed ``values`` as offset."""
        mask = np.asarray(mask, dtype=bool)
        idx = np.flatnonzero(mask.ravel())
        shape = mask.shape

        def apply(x):
            return np.asarray(x).ravel()[idx]

        def adjoint(y):
            out = np.zeros(mask.size)
            out[idx] = y
            return out.reshape(shape)

        return cls(apply, adjoint, np.asarray(values, dtype=float).ravel(), shape)

    @classmethod
    def identity(cls, shape, b=None):
        shape = tuple(shape)
        b = np.zeros(int(np.prod(shape))) if b is None else np.ravel(b)
        return cls(lambda x: np.ravel(x).copy(),
                   lambda y: np.reshape(y, shape).copy(), b, shape)


class SmoothObjective:
    """Value/gradient/Lipschitz bundle for ``f``.

    Either composite (``loss`` and ``map`` given; ``f = phi(Ax - b) + shift``)
    or direct (``value_grad`` callable given). Composite objectives expose
    :meth:`image` and :meth:`value_grad_image` so that combinations of atoms
    can be evaluated from cached images without new matrix-vector products.
    """

    def __init__(self, lipschitz: float, loss=None, map: Optional[AffineResidualMap] = None,
                 value_grad: Optional[Callable] = None, shift: float = 0.0):
        if not lipschitz > 0:
            raise InvalidInputError("L_f must be positive")
        if (map is None) == (value_grad is None):
            raise InvalidInputError("give either (loss, map) or value_grad")
        self.lipschitz = float(lipschitz)
        self.loss = loss
        self.map = map
        self.shift = float(shift)
        self._direct = value_grad

    @property
    def has_map(self) -> bool:
        return self.map is not None

    @property
    def is_quadratic(self) -> bool:
        return (self.has_map and isinstance(self.loss, SmoothLoss)
                and self.loss.kind == "quadratic" and not self.loss.one_sided)

    def image(self, x) -> np.ndarray:
        return np.ravel(self.map.apply(x))

    def value_grad_image(self, img):
        """Loss value (with shift) and loss gradient at a cached image ``A x``."""
        v, g = self.loss.value_grad(img - self.map.offset)
        return v + self.shift, g

    def pullback(self, gy) -> np.ndarray:
        return self.map.adjoint(gy)

    def value_grad(self, x):
        if self._direct is not None:
            v, g = self._direct(x)
            return float(v), np.asarray(g, dtype=float)
        v, gy = self.value_grad_image(self.image(x))
        return v, self.pullback(gy)

    def value(self, x) -> float:
        return self.value_grad(x)[0]

    def gradient(self, x) -> np.ndarray:
        return self.value_grad(x)[1]

    def __call__(self, x) -> float:
        return self.value(x)


def compose_objective(loss, map: AffineResidualMap, norm_bound: float,
                      shift: float = 0.0) -> SmoothObjective:
    """``f(x) = phi(Ax - b) + shift`` with ``L_f = L[phi] * norm_bound**2``.

    ``norm_bound`` must upper-bound ``||A||`` from the problem norm to the
    loss's natural norm.
    """
    if not norm_bound > 0:
        raise InvalidInputError("norm_bound must be positive")
    lip = loss.lipschitz * norm_bound ** 2
    return SmoothObjective(lip, loss=loss, map=map, shift=shift)


def l1_to_l2_norm(mat) -> float:
    """``max ||A x||_2`` over the unit l1 ball: the largest column norm."""
    return float(np.max(np.linalg.norm(np.asarray(mat, dtype=float), axis=0)))


def l1_to_linf_norm(mat) -> float:
    return float(np.max(np.abs(mat)))
