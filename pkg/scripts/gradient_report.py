"""Finite-difference report for every autodiff op and the stylize-then-loss composite.

    python scripts/gradient_report.py --points 16
"""
import argparse

import numpy as np

from lintx.autodiff import grad_check
from lintx.checks import GRAD_TOL, composite_grad_report
from lintx.gradcases import CASES

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=16)
    ap.add_argument("--samples", type=int, default=32)
    args = ap.parse_args()
    for name, case in CASES.items():
        worst = 0.0
        for seed in range(args.points):
            g, loss, params = case(np.random.default_rng(seed))
            worst = max([worst] + [grad_check(g, loss, p, {}, samples=args.samples, seed=seed) for p in params])
        print(f"{name:22s} {worst:.2e} {'ok' if worst < GRAD_TOL else 'FAIL'}")
    r = composite_grad_report(args.points, args.samples)
    print(f"{'composite':22s} {r['worst']:.2e} {'ok' if r['worst'] < GRAD_TOL else 'FAIL'}")
    for k, v in r.items():
        print(f"  {k} {v}")
