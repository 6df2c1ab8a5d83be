"""Lifetime difference versus field magnitude at a few azimuths.

Writes one CSV per azimuth (B, dtau, dtau_err) plus the location of the first
significant extremum and B * sin(alpha) there, which should be roughly the
same for every azimuth if the transverse projection sets the oscillation.

    python3 scripts/field_sweep.py --out runs/field --phi 0 40 --oracle
"""

import argparse
import logging
from pathlib import Path

from chiral_pl import IrfModel, SpinModelParams
from chiral_pl.io import atomic_write, fmt
from chiral_pl.sweep import NoSignificantExtremum, SweepPlan, delta_curve, first_extremum, run_sweep, transverse_profile

log = logging.getLogger("field_sweep")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/field"))
    ap.add_argument("--phi", type=float, nargs="+", default=[0.0, 40.0])
    ap.add_argument("--oracle", action="store_true", help="fit expected curves instead of Monte Carlo histograms")
    ap.add_argument("--runs", type=int, default=1, help="Monte Carlo runs accumulated per point")
    ap.add_argument("--sigma-tau", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    params = SpinModelParams(sigma_tau=args.sigma_tau)
    plan = SweepPlan(phi_values=tuple(args.phi), runs_per_point=args.runs, master_seed=args.seed, workers=args.workers)
    res = run_sweep(plan, params, IrfModel(0.5, 5.0), oracle=args.oracle)
    args.out.mkdir(parents=True, exist_ok=True)
    for phi in plan.phi_values:
        b, y, e = delta_curve(res, phi)
        rows = ["B_gauss,dtau_ns,dtau_err_ns"] + [f"{fmt(float(x))},{fmt(float(v))},{fmt(float(s))}" for x, v, s in zip(b, y, e)]
        atomic_write(args.out / f"dtau_phi{fmt(phi)}.csv", "\n".join(rows) + "\n")
        try:
            b1 = first_extremum(res, phi)
        except NoSignificantExtremum:
            log.info("phi=%6.1f  no significant extremum", phi)
            continue
        log.info("phi=%6.1f  first extremum %7.1f G  B*sin(alpha) = %7.1f G", phi, b1, b1 * transverse_profile(plan, phi))


if __name__ == "__main__":
    main()
