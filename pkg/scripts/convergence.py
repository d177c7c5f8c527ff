"""Grid convergence of the vacuum P*-transforms against their closed forms.

Halves the spacing a few times and prints the max error and the observed
order ``log2(e_h / e_{h/2})``.  With one RK4 step per grid interval the
order should approach 4.

    python3 scripts/convergence.py --case nondiag --spacings 0.04 0.02 0.01 0.005
"""

from __future__ import annotations

import argparse
import json
import warnings

import numpy as np

from vribaucour import vacuum as V
from vribaucour.geomgrid import Grid
from vribaucour.lagrangian import apply_Pstar_transform


def error_at(case: str, n: int, spacing: float, half_width: float, substeps: int) -> float:
    grid = Grid.cube(n, half_width, spacing)
    seed = V.vacuum_seed(n, grid)
    if case == "nondiag":
        spec, ref = V.nondiag_spec(n), V.nondiag_closed_form(grid)
    else:
        P = float(case.removeprefix("scalar"))
        spec, ref = V.scalar_spec(P, n), V.scalar_P_closed_form(P, grid)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = apply_Pstar_transform(seed.frame, seed.data, spec, substeps=substeps, with_frame=False)
    act = res.data.active if ref.active is None else res.data.active & ref.active
    return float(np.abs(res.frame.f - ref.f)[act].max())


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--case", default="nondiag", help="'nondiag' or 'scalarP' with P a number, e.g. scalar2")
    ap.add_argument("--n", type=int, default=2)
    ap.add_argument("--half-width", type=float, default=1.0)
    ap.add_argument("--spacings", type=float, nargs="+", default=[0.04, 0.02, 0.01, 0.005])
    ap.add_argument("--substeps", type=int, default=1)
    ap.add_argument("--json", help="also write the table to this file")
    args = ap.parse_args(argv)

    rows = []
    prev = None
    print(f"{'spacing':>9} {'max error':>12} {'order':>6}")
    for h in args.spacings:
        err = error_at(args.case, args.n, h, args.half_width, args.substeps)
        order = np.log2(prev / err) if prev is not None and err > 0 else float("nan")
        print(f"{h:9.4g} {err:12.3e} {order:6.2f}")
        rows.append({"spacing": h, "error": err, "order": None if np.isnan(order) else float(order)})
        prev = err
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"case": args.case, "n": args.n, "substeps": args.substeps, "rows": rows}, fh, indent=2)


if __name__ == "__main__":
    main()
