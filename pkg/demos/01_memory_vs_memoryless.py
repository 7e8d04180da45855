"""Memory in conditional gradient: the same least-squares problem over the
l1 ball, solved with the classical step, an exact line search, and a
bundle of five remembered atoms.

Run from the repository root:  python3 demos/01_memory_vs_memoryless.py
"""
import numpy as np

from normcg import CndGConfig, L1Oracle, ball_lmo, run_cndg
from normcg.objectives import AffineResidualMap, SmoothLoss, compose_objective, l1_to_l2_norm

rng = np.random.default_rng(0)
A = rng.standard_normal((150, 100)) / np.sqrt(150)
b = A @ rng.standard_normal(100) + 0.05 * rng.standard_normal(150)
obj = compose_objective(SmoothLoss("quadratic", 150), AffineResidualMap.from_matrix(A, b),
                        l1_to_l2_norm(A))
lmo = ball_lmo(L1Oracle(), 20.0)

# Each run keeps a certified gap: f(best point) minus the best lower bound seen.
print(f"{'variant':<14}{'iterations':>11}{'gap':>12}")
for name, variant, memory in [("step rule", "step_rule", None),
                              ("line search", "line_search", None),
                              ("memory M=5", "memory", 5),
                              ("full memory", "memory", None)]:
    cfg = CndGConfig(variant, memory=memory, max_iters=2000, gap_tol=1e-6)
    res = run_cndg(cfg, obj, lmo, np.zeros(100))
    print(f"{name:<14}{len(res.trace):>11}{res.certificate.gap:>12.2e}")
