"""LO oracle for the anisotropic TV ball via a scaled-supply flow problem.

For a nonzero zero-mean image ``eta`` the flow LP

    s* = max { s : Q rho = s * eta,  -1 <= rho <= 1 }

on the grid network (one arc per pair of neighbouring pixels, unit
capacity in either direction) has Lagrange multipliers ``z`` for its
equality constraints; after mean removal, ``-z / TV(z)`` minimizes
``<eta, x>`` over ``{TV(x) <= 1}``. The LP is solved with HiGHS (interior
point with crossover; dual simplex as fallback) and every solution is checked
against the four optimality conditions before it is returned.

Also here: the constant ``C_n`` bounding the l2 norm of zero-mean images on
the TV unit sphere, ``||x||_2 <= sqrt(C_n) / n``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import ConsistencyError, InvalidInputError
from .linalg import as_grid_image, is_zero_mean
from .oracles import OracleAtom

TOL_A = 1e-6
TOL_B = 1e-9
TOL_C = 1e-6
TOL_D = 1e-7


# ---------------------------------------------------------------------------
# discrete gradient and TV

def discrete_gradient(x):
    """Forward differences ``(g, h)``: ``g`` is (n-1) x n along rows,
    ``h`` is n x (n-1) along columns."""
    x = np.asarray(x, dtype=float)
    return x[1:, :] - x[:-1, :], x[:, 1:] - x[:, :-1]


def discrete_gradient_adjoint(g, h):
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    n = h.shape[0]
    out = np.zeros((n, n))
    out[1:, :] += g
    out[:-1, :] -= g
    out[:, 1:] += h
    out[:, :-1] -= h
    return out


def tv_norm(x) -> float:
    g, h = discrete_gradient(x)
    return float(np.abs(g).sum() + np.abs(h).sum())


# ---------------------------------------------------------------------------
# network

@dataclass(frozen=True)
class GridNetwork:
    n: int
    arcs: np.ndarray        # (2n(n-1), 2) array of (start, end) node indices
    Q: sparse.csr_matrix    # node-arc incidence of the forward arcs

    @property
    def num_nodes(self) -> int:
        return self.n * self.n

    @property
    def num_arcs(self) -> int:
        return self.arcs.shape[0]

    @property
    def capacities(self) -> np.ndarray:
        return np.ones(self.num_arcs)

    @property
    def P(self) -> sparse.csr_matrix:
        """Incidence matrix including the backward arcs, ``[Q, -Q]``."""
        return sparse.hstack([self.Q, -self.Q], format="csr")

    def arc_gradient(self, z) -> np.ndarray:
        """``Q^T z``: for each forward arc, potential at start minus end."""
        z = np.ravel(z)
        return z[self.arcs[:, 0]] - z[self.arcs[:, 1]]


@lru_cache(maxsize=16)
def grid_network(n: int) -> GridNetwork:
    if n < 2:
        raise InvalidInputError("grid side must be >= 2")
    idx = np.arange(n * n).reshape(n, n)
    vertical = np.stack([idx[1:, :].ravel(), idx[:-1, :].ravel()], axis=1)
    horizontal = np.stack([idx[:, 1:].ravel(), idx[:, :-1].ravel()], axis=1)
    arcs = np.concatenate([vertical, horizontal])
    m = arcs.shape[0]
    cols = np.concatenate([np.arange(m), np.arange(m)])
    rows = np.concatenate([arcs[:, 0], arcs[:, 1]])
    vals = np.concatenate([np.ones(m), -np.ones(m)])
    Q = sparse.csr_matrix((vals, (rows, cols)), shape=(n * n, m))
    arcs.setflags(write=False)
    return GridNetwork(n, arcs, Q)


# ---------------------------------------------------------------------------
# flow solve and certificate

@dataclass(frozen=True)
class DualCertificate:
    a: float   # |<z, eta> - 1|
    b: float   # max(0, ||rho||_inf - 1)
    c: float   # complementary slackness between Q^T z and the arc bounds
    d: float   # ||Q rho - s eta||_inf

    def passed(self) -> bool:
        return (self.a <= TOL_A and self.b <= TOL_B
                and self.c <= TOL_C and self.d <= TOL_D)


@dataclass(frozen=True)
class FlowSolution:
    s_star: float
    flow: np.ndarray         # rho* per forward arc, in [-1, 1]
    potentials: np.ndarray   # zero-mean image z
    certificate: DualCertificate


def certify(net: GridNetwork, eta, s_star: float, flow, z) -> DualCertificate:
    eta = np.ravel(eta)
    flow = np.asarray(flow, dtype=float)
    z = np.ravel(z)
    grad = net.arc_gradient(z)
    slack = np.clip(1.0 - np.abs(flow), 0.0, None)
    res_c = max(float(np.max(np.abs(grad) * slack, initial=0.0)),
                float(np.max(np.maximum(0.0, -grad * np.sign(flow) * (1.0 - slack)),
                             initial=0.0)))
    return DualCertificate(
        a=abs(float(z @ eta) - 1.0),
        b=max(0.0, float(np.max(np.abs(flow))) - 1.0),
        c=res_c,
        d=float(np.max(np.abs(net.Q @ flow - s_star * eta))),
    )


def solve_scaling_flow(net: GridNetwork, eta) -> FlowSolution:
    """Largest multiple ``s`` of ``eta`` routable as supply, with potentials."""
    eta = as_grid_image(eta)
    if eta.shape[0] != net.n:
        raise InvalidInputError(f"image side {eta.shape[0]} != network side {net.n}")
    if not is_zero_mean(eta):
        raise InvalidInputError("supply image must have zero mean")
    if not np.any(eta):
        raise InvalidInputError("supply image must be nonzero")
    e = eta.ravel()
    m = net.num_arcs
    A_eq = sparse.hstack([net.Q, sparse.csr_matrix(-e.reshape(-1, 1))], format="csc")
    c = np.zeros(m + 1)
    c[-1] = -1.0
    bounds = [(-1.0, 1.0)] * m + [(0.0, None)]
    cert = None
    for method in ("highs-ipm", "highs-ds"):
        res = linprog(c, A_eq=A_eq, b_eq=np.zeros(e.size), bounds=bounds,
                      method=method,
                      options={"primal_feasibility_tolerance": 1e-10,
                               "dual_feasibility_tolerance": 1e-10})
        if res.status != 0:
            continue
        flow = np.clip(res.x[:m], -1.0, 1.0)
        s_star = float(res.x[-1])
        z = np.asarray(res.eqlin.marginals, dtype=float)
        if float(z @ e) < 0:
            z = -z
        z = z - z.mean()
        cert = certify(net, e, s_star, flow, z)
        if cert.passed():
            break
    if cert is None:
        raise ConsistencyError(f"flow LP failed: {res.message}")
    if not cert.passed():
        raise ConsistencyError(f"flow certificate violated: {cert}")
    return FlowSolution(s_star, flow, z.reshape(eta.shape), cert)


def extract_tv_atom(sol: FlowSolution, eta) -> OracleAtom:
    """``-z / TV(z)`` from the flow potentials: TV 1, form value ``-1/s*``."""
    z = sol.potentials
    tvz = tv_norm(z)
    if tvz < 1e-12:
        raise ConsistencyError("flow potentials have vanishing total variation")
    x = -z / tvz
    form = float(np.vdot(eta, x))
    target = -1.0 / sol.s_star
    if abs(form - target) > 1e-7 * max(1.0, abs(target)):
        raise ConsistencyError(f"atom value {form} differs from -1/s* = {target}")
    return OracleAtom(x, 1.0, form)


def tv_lmo(eta) -> OracleAtom:
    eta = as_grid_image(eta, zero_mean=True)
    if not np.any(eta):
        return OracleAtom(np.zeros_like(eta), 0.0, 0.0)
    net = grid_network(eta.shape[0])
    return extract_tv_atom(solve_scaling_flow(net, eta), eta)


# ---------------------------------------------------------------------------
# l2 / TV comparison constant

def cn_terms(n: int) -> np.ndarray:
    """``|y(p, q)|^2`` on the n x n frequency grid (zero at p = q = 0)."""
    if n < 2:
        raise InvalidInputError("n must be >= 2")
    w = 2.0 * np.pi * np.arange(n) / n
    cp, cq = np.cos(w)[:, None], np.cos(w)[None, :]
    num = np.broadcast_to(2.0 - 2.0 * cp, (n, n))
    den = (2.0 * (1.0 - 0.5 * (cp + cq))) ** 2
    out = np.zeros((n, n))
    mask = den > 0
    out[mask] = num[mask] / den[mask]
    return out


def cn_constant(n: int) -> float:
    return float(np.sum(cn_terms(n)))


def q_bound(n: int) -> float:
    """Upper bound on ``||x||_2`` over zero-mean n x n images with TV(x) <= 1."""
    return float(np.sqrt(cn_constant(n)) / n)
