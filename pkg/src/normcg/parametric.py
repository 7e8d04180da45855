"""Smallest-norm epsilon-solutions of ``min ||x|| s.t. x in K, f(x) <= 0``.

The solver runs conditional gradient on a sequence of balls ``K[rho_s]``
with increasing radii. Each iterate ``x_k`` and its oracle answer give an
affine function of ``rho``

    l_k(rho) = f(x_k) - <f'(x_k), x_k> + rho * <f'(x_k), x[f'(x_k)]>

that under-estimates ``Opt(rho) = min{f(x): x in K[rho]}``. A stage ends
either with ``f <= eps`` (done) or once the envelope ``max_k l_k`` at the
current radius is at least 3/4 of the best value. The envelope's root then
becomes the next radius. Radii never overshoot the optimal norm ``rho_*``.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from .cndg import CndGConfig, cndg_step, init_state
from .errors import ConsistencyError, InvalidConfigError, InvalidInputError, ModelError

STAGE_RATIO = 0.75


@dataclass(frozen=True)
class AffineBound:
    intercept: float   # c_k = f(x_k) - <f'(x_k), x_k>
    slope: float       # s_k = <f'(x_k), x[f'(x_k)]>, nonpositive

    def __call__(self, rho: float) -> float:
        return self.intercept + self.slope * rho


@dataclass
class StageRecord:
    stage: int
    rho: float
    iterations: int
    bounds: List[AffineBound]
    exit_reason: str              # "solved" | "bound_ratio" | "cap" | "timeout"
    best_f: float
    lower: float
    next_rho: Optional[float] = None

    def as_dict(self) -> dict:
        return {"stage": self.stage, "rho": self.rho, "iterations": self.iterations,
                "exit": self.exit_reason, "f": self.best_f, "lower": self.lower,
                "next_rho": self.next_rho}


@dataclass
class ParametricSolution:
    rho: float
    x: np.ndarray
    f: float
    stages: List[StageRecord]
    status: str = "solved"        # also "trivial_zero", "cap", "timeout"


@dataclass(frozen=True)
class ParametricConfig:
    cndg: CndGConfig = field(default_factory=lambda: CndGConfig("memory"))
    warm: str = "origin"          # or "carry": start stage s+1 at the best point of stage s
    max_stages: int = 200
    cap_factor: float = 10.0
    time_budget: Optional[float] = None   # wall-clock seconds for the whole solve

    def __post_init__(self):
        if self.warm not in ("origin", "carry"):
            raise InvalidConfigError("warm must be 'origin' or 'carry'")
        if self.max_stages < 1 or self.cap_factor <= 0:
            raise InvalidConfigError("max_stages and cap_factor must be positive")
        if self.time_budget is not None and not self.time_budget > 0:
            raise InvalidConfigError("time_budget must be positive")


@dataclass(frozen=True)
class InitResult:
    kind: str                     # "trivial_zero" | "exact_minimizer" | "radius"
    f0: float
    d: float
    rho1: Optional[float] = None


# ---------------------------------------------------------------------------
# a-priori bounds

def stage_count_bound(f0: float, lipschitz: float, rho_star: float, eps: float) -> float:
    """Upper bound on the number of stages."""
    return max(1.2 * math.log((f0 + 0.5 * lipschitz * rho_star ** 2) / eps ** 2) + 2.4, 3.0)


def stage_steps_bound(lipschitz: float, rho: float, eps: float) -> float:
    """Upper bound on the number of steps in one stage at radius ``rho``."""
    return max(6.0, 72.0 * rho ** 2 * lipschitz / eps + 3.0)


# ---------------------------------------------------------------------------

def init_rho1(objective, oracle, eps: float, zero) -> InitResult:
    """First radius ``f(0)/d`` with ``d = -<f'(0), x[f'(0)]>``.

    ``zero`` is the origin of the space (fixes the shape).
    """
    if not eps > 0:
        raise InvalidInputError("eps must be positive")
    zero = np.zeros_like(np.asarray(zero, dtype=float))
    f0, g0 = objective.value_grad(zero)
    if f0 <= eps:
        return InitResult("trivial_zero", f0, 0.0)
    atom = oracle(g0)
    if atom.is_zero:
        return InitResult("exact_minimizer", f0, 0.0)
    d = -atom.form_value
    return InitResult("radius", f0, d, f0 / d)


def root_of_lower_envelope(bounds, rho_s: float) -> float:
    """Smallest ``rho`` where ``max_k l_k(rho) <= 0``, given that it is > 0 at ``rho_s``."""
    r = -math.inf
    for b in bounds:
        if b.intercept > 0:
            if b.slope >= 0:
                raise ModelError("an affine bound is positive for every radius: "
                                 "the constraint f(x) <= 0 looks infeasible on K")
            r = max(r, b.intercept / -b.slope)
    if not r > rho_s:
        raise ConsistencyError(f"envelope root {r} does not exceed the radius {rho_s}")
    return r


def run_stage(rho: float, objective, oracle, eps: float, config: CndGConfig,
              x_start=None, stage: int = 1, cap: Optional[int] = None,
              deadline: Optional[float] = None):
    """Conditional gradient on ``K[rho]`` until one of the two stage exits.

    Returns ``(StageRecord, best_x)``. ``next_rho`` is set on a
    ``bound_ratio`` exit. ``deadline`` is a ``time.perf_counter`` value.
    """
    if not rho > 0:
        raise InvalidInputError("stage radius must be positive")

    def lmo(eta):
        return rho * oracle(eta).point

    if cap is None:
        cap = int(math.ceil(10.0 * stage_steps_bound(objective.lipschitz, rho, eps)))
    state = init_state(objective, lmo, x_start)
    bounds: List[AffineBound] = []
    reason = "cap"
    while True:
        c = state.fx - float(np.vdot(state.grad, state.x))
        s = float(np.vdot(state.grad, state.plus)) / rho
        bounds.append(AffineBound(c, min(s, 0.0)))
        if state.best_f <= eps:
            reason = "solved"
            break
        if state.lower >= STAGE_RATIO * state.best_f:
            reason = "bound_ratio"
            break
        if state.t >= cap:
            break
        if deadline is not None and time.perf_counter() > deadline:
            reason = "timeout"
            break
        cndg_step(state, objective, lmo, config)
    rec = StageRecord(stage, rho, state.t, bounds, reason, state.best_f, state.lower)
    if reason == "bound_ratio":
        rec.next_rho = root_of_lower_envelope(bounds, rho)
    return rec, state.best_x


def solve_parametric(objective, oracle, eps: float, zero,
                     config: Optional[ParametricConfig] = None) -> ParametricSolution:
    """Stage loop. ``zero`` is the origin of the space (fixes the shape)."""
    config = config or ParametricConfig()
    zero = np.zeros_like(np.asarray(zero, dtype=float))
    init = init_rho1(objective, oracle, eps, zero)
    if init.kind == "trivial_zero":
        return ParametricSolution(0.0, zero, init.f0, [], "trivial_zero")
    if init.kind == "exact_minimizer":
        raise ModelError(f"the origin minimizes f on K with f(0) = {init.f0} > eps: "
                         "the constraint is infeasible")
    rho, x_start = init.rho1, zero
    deadline = None
    if config.time_budget is not None:
        deadline = time.perf_counter() + config.time_budget
    stages: List[StageRecord] = []
    for s in range(1, config.max_stages + 1):
        cap = int(math.ceil(config.cap_factor
                            * stage_steps_bound(objective.lipschitz, rho, eps)))
        rec, best_x = run_stage(rho, objective, oracle, eps, config.cndg,
                                x_start, stage=s, cap=cap, deadline=deadline)
        stages.append(rec)
        if rec.exit_reason != "bound_ratio":
            status = {"solved": "solved", "timeout": "timeout"}.get(rec.exit_reason, "cap")
            return ParametricSolution(rho, best_x, rec.best_f, stages, status)
        rho = rec.next_rho
        x_start = best_x if config.warm == "carry" else zero
    last = stages[-1]
    return ParametricSolution(last.rho, best_x, last.best_f, stages, "cap")


def write_stage_trace(stages, path) -> None:
    with open(Path(path), "w") as fh:
        for rec in stages:
            fh.write(json.dumps(rec.as_dict()) + "\n")
