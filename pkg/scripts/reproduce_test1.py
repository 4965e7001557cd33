"""1D Test-1 run: exact minimiser, p-continuation and distance to the limit.

    python scripts/reproduce_test1.py --m 256 --out runs/test1
"""

import argparse
import json
from pathlib import Path

import numpy as np

from infbilap.core import TEST1, eval_piecewise_quadratic
from infbilap.exact1d import absolute_minimiser, p_exact_solution
from infbilap.solver1d import ContinuationSchedule, Mesh1D, p_continuation


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--m", type=int, default=256)
    ap.add_argument("--schedule", default="2,4,12,42,202")
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()

    am = absolute_minimiser(TEST1)
    print(f"absolute minimiser: L*={am.left_curvature:.6f} R*={am.right_curvature:.6f} xi*={am.xi:.6f} level={am.level:.6f}")

    sched = ContinuationSchedule(tuple(int(p) for p in args.schedule.split(",")))
    mesh = Mesh1D(0.0, 1.0, args.m)
    res = p_continuation(TEST1, sched, mesh)
    x = np.linspace(0.0, 1.0, 8 * args.m + 1)
    ustar = eval_piecewise_quadratic(am.u, x)
    rows = []
    print(f"{'p':>5} {'iters':>6} {'residual':>10} {'|u-u*|':>10} {'|u-u_p|':>10}  breaks")
    for p, u, rep in zip(res.ps, res.solutions, res.reports):
        exact = np.nan
        if p > 2:
            exact = float(np.max(np.abs(u.values - p_exact_solution(TEST1, p)(mesh.nodes))))
        dist = float(np.max(np.abs(u(x) - ustar)))
        locs = [round(b["location"], 4) for b in rep.breaks or []]
        print(f"{p:>5} {rep.iterations:>6} {rep.residual:>10.2e} {dist:>10.2e} {exact:>10.2e}  {locs}")
        rows.append({"p": p, "report": rep.to_dict(), "dist_to_limit": dist, "nodal_error_vs_exact": exact})
    if res.error:
        print("stopped:", res.error)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "test1.json").write_text(json.dumps({"m": args.m, "stages": rows}, indent=2, default=str))


if __name__ == "__main__":
    main()
