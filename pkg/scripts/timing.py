"""Wall-clock breakdown of the vacuum P*-transform pipeline.

Times each stage (integration, Omega, post-processing) separately on
``[-1, 1]^n`` and reports peak memory.

    python3 scripts/timing.py --n 3 --case nondiag --repeat 2
"""

from __future__ import annotations

import argparse
import resource
import time
import warnings

from vribaucour import vacuum as V
from vribaucour.geomgrid import Grid
from vribaucour.lagrangian import flat_P_kernel, integrate_system_P, lyapunov_omega, pstar_conservation
from vribaucour.ribaucour import transform_in_slabs


def run_once(n: int, case: str, spacing: float, substeps: int) -> dict:
    stamps = {}
    t = time.perf_counter()
    grid = Grid.cube(n, 1.0, spacing)
    seed = V.vacuum_seed(n, grid)
    spec = V.nondiag_spec(n) if case == "nondiag" else V.scalar_spec(float(case.removeprefix("scalar")), n)
    stamps["seed"] = time.perf_counter() - t

    t = time.perf_counter()
    comb = integrate_system_P(seed.data, spec, substeps=substeps)
    stamps["integrate"] = time.perf_counter() - t
    t = time.perf_counter()
    pstar_conservation(seed.data, comb, spec)
    stamps["conservation"] = time.perf_counter() - t
    t = time.perf_counter()
    omega = lyapunov_omega(comb, spec)
    stamps["omega"] = time.perf_counter() - t
    t = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        transform_in_slabs(seed.frame, seed.data, comb, omega, kernel=flat_P_kernel(spec))
    stamps["transform"] = time.perf_counter() - t
    stamps["total"] = sum(stamps.values())
    return stamps


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=3)
    ap.add_argument("--case", default="nondiag", help="'nondiag' or 'scalarP', e.g. scalar1")
    ap.add_argument("--spacing", type=float, default=0.01)
    ap.add_argument("--substeps", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=1)
    args = ap.parse_args(argv)

    for r in range(args.repeat):
        stamps = run_once(args.n, args.case, args.spacing, args.substeps)
        print(f"run {r + 1}: " + "  ".join(f"{k} {v:.2f}s" for k, v in stamps.items()))
    peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024
    print(f"peak memory {peak:.0f} MB")


if __name__ == "__main__":
    main()
