"""Command line entry point ``normcg``.

Every subcommand takes ``--config <file> --seed <u64> --out <dir>``; the
config file holds ``key = value`` lines (see the README for the keys) and
``--set key=value`` overrides single entries.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness, linalg
from .cndg import CndGConfig
from .composite import (CompositeConfig, CompositeProblem, run_composite,
                        write_composite_trace, write_tracker_json)
from .errors import ConsistencyError, InvalidConfigError, InvalidInputError, ModelError
from .objectives import AffineResidualMap, SmoothLoss, compose_objective
from .oracles import L1Oracle, NuclearOracle, PSDTraceOracle, TVOracle
from .parametric import ParametricConfig, solve_parametric, write_stage_trace
from .tvflow import grid_network, solve_scaling_flow, q_bound

ORACLES = {"l1": L1Oracle, "nuclear": NuclearOracle, "trace": PSDTraceOracle, "tv": TVOracle}


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _cmd_mc(cfg, out: Path) -> int:
    rows = harness.run_mc(cfg)
    harness.emit_results(rows, out)
    return 0


def _cmd_multiclass(cfg, out: Path) -> int:
    rows = harness.run_multiclass(cfg)
    harness.emit_results(rows, out)
    return 0


def _cmd_tvdeblur(cfg, out: Path) -> int:
    exp = harness.run_tv(cfg)
    harness.emit_results(exp.rows, out)
    harness.write_envelope(exp.envelope, out / "envelope.csv")
    _write_json(out / "summary.json", {
        "trivial_nu": exp.trivial_nu, "best_nu": exp.best_nu,
        "best_kappa": exp.best_kappa, "runs": len(exp.runs),
        "improvement": 1.0 - exp.best_nu / exp.trivial_nu})
    with open(out / "direct.csv", "w") as fh:
        fh.write("kappa_w,value,iterations\n")
        for run in exp.runs:
            fh.write(f"{run.kappa_w!r},{run.F!r},{run.iterations}\n")
    return 0


def _cmd_certify_tv(cfg, out: Path) -> int:
    if not cfg.data:
        raise InvalidConfigError("certify-tv needs 'data = <eta image CSV>'")
    eta = linalg.as_grid_image(linalg.read_csv_array(cfg.data))
    sol = solve_scaling_flow(grid_network(eta.shape[0]), eta)
    c = sol.certificate
    res = {"s_star": sol.s_star, "a": c.a, "b": c.b, "c": c.c, "d": c.d,
           "passed": c.passed()}
    _write_json(out / "certificate.json", res)
    for k in ("s_star", "a", "b", "c", "d"):
        print(f"{k} {res[k]!r}")
    print("passed" if c.passed() else "FAILED")
    return 0 if c.passed() else 2


def _least_squares(cfg):
    """``f(x) = 0.5 ||A x - b||^2 - level`` from CSV files, together with the
    origin of the variable space."""
    if not cfg.rhs:
        raise InvalidConfigError("need 'rhs = <CSV>'")
    b = linalg.read_csv_array(cfg.rhs)
    if cfg.matrix:
        A = linalg.read_csv_array(cfg.matrix)
        b = b.ravel()
        if A.shape[0] != b.size:
            raise InvalidInputError("matrix rows and rhs length differ")
        amap = AffineResidualMap.from_matrix(A, b)
        zero = np.zeros(A.shape[1])
        if cfg.norm != "l1":
            raise InvalidConfigError("a design matrix is only supported with norm = l1")
        nb = max(float(np.max(np.linalg.norm(A, axis=0))), 1e-300)
    else:
        amap = AffineResidualMap.identity(b.shape, b)
        zero = np.zeros(b.shape)
        # ||x||_2 <= q_bound(n) TV(x), and the spectral norms bound ||.||_2 by themselves
        nb = q_bound(b.shape[0]) if cfg.norm == "tv" else 1.0
    loss = SmoothLoss("quadratic", amap.out_dim)
    return compose_objective(loss, amap, nb, shift=-cfg.level), zero


def _cmd_solve_parametric(cfg, out: Path) -> int:
    obj, zero = _least_squares(cfg)
    ccfg = CndGConfig(cfg.variant, memory=cfg.cg_memory if cfg.variant == "memory" else None)
    sol = solve_parametric(obj, ORACLES[cfg.norm](), cfg.eps, zero,
                           ParametricConfig(ccfg, warm=cfg.warm))
    write_stage_trace(sol.stages, out / "stages.jsonl")
    linalg.write_csv_array(out / "solution.csv", np.atleast_2d(sol.x))
    _write_json(out / "summary.json", {"rho": sol.rho, "f": sol.f, "status": sol.status,
                                       "stages": len(sol.stages)})
    print(f"status {sol.status} rho {sol.rho!r} f {sol.f!r} stages {len(sol.stages)}")
    return 0 if sol.status != "cap" else 3


def _cmd_solve_composite(cfg, out: Path) -> int:
    obj, zero = _least_squares(cfg)
    if cfg.grid_lo > cfg.grid_hi:
        raise InvalidConfigError("grid_lo must not exceed grid_hi")
    grid = tuple(2.0 ** (l / 4.0) for l in range(cfg.grid_lo, cfg.grid_hi + 1))
    oracle = ORACLES[cfg.norm]()
    memory = cfg.cg_memory if cfg.mode != "plain" else None
    ccfg = CompositeConfig(mode=cfg.mode, memory=memory, max_iters=cfg.max_iters,
                           stopping=cfg.stopping, eps=cfg.eps, grid=grid)
    res = run_composite(CompositeProblem(obj, cfg.kappa, zero, nonnegative=cfg.level <= 0),
                        oracle, ccfg)
    write_tracker_json(res.tracker, out / "tracker.json")
    write_composite_trace(res.trace, out / "trace.jsonl")
    linalg.write_csv_array(out / "solution.csv", np.atleast_2d(res.z.x))
    print(f"status {res.status} F {res.F!r} iterations {len(res.trace)}")
    return 0


COMMANDS = {"mc": _cmd_mc, "multiclass": _cmd_multiclass, "tvdeblur": _cmd_tvdeblur,
            "certify-tv": _cmd_certify_tv, "solve-parametric": _cmd_solve_parametric,
            "solve-composite": _cmd_solve_composite}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="normcg", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", default=None, help="key = value file")
    ap.add_argument("--seed", required=True, type=int)
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override one config entry (repeatable)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = harness.load_config(args.config, args.command, args.seed, args.set)
        if cfg.norm not in ORACLES:
            raise InvalidConfigError(f"unknown norm {cfg.norm!r}")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "config.json", cfg.as_dict())
        return COMMANDS[args.command](cfg, out)
    except (InvalidConfigError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ModelError, ConsistencyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
