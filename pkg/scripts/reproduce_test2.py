"""2D Test-2 run: flattening of the Laplacian as p grows.

    python scripts/reproduce_test2.py --n 65 --schedule 4,12,42 --out runs/test2
"""

import argparse
import json
from pathlib import Path

import numpy as np

from infbilap.solver2d import BoundaryData, Grid2D, laplacian_field, p_continuation_2d


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=65)
    ap.add_argument("--schedule", default="4,12,42")
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()

    ps = [int(p) for p in args.schedule.split(",")]
    res = p_continuation_2d(BoundaryData.test2(), ps, Grid2D(args.n))
    print(f"{'p':>4} {'iters':>6} {'residual':>10} {'level':>9} {'cov':>8} {'regions':>8} {'balance':>9}")
    for p, rep, m in zip(res.ps, res.reports, res.metrics):
        print(f"{p:>4} {rep.iterations:>6} {rep.residual:>10.2e} {m.level:>9.4f} {m.cov:>8.4f} {m.regions:>8} {m.balance:>9.2e}")
    if res.error:
        print("stopped:", res.error)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        for p, u in zip(res.ps, res.fields):
            np.savetxt(args.out / f"u_p{p}.csv", u.grid, delimiter=",")
            np.savetxt(args.out / f"lap_p{p}.csv", laplacian_field(u).grid, delimiter=",")
        (args.out / "metrics.json").write_text(json.dumps([m.to_dict() for m in res.metrics], indent=2))


if __name__ == "__main__":
    main()
