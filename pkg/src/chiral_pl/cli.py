"""Command-line entry point.

Exit codes: 0 ok, 2 config/parse error, 3 simulation guard, 4 fit failure,
5 every sweep point failed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import io
from .core import IrfModel, Polarization, initial_phase
from .reconvolution import FitError, calibrate_irf, fit_biexp_irf
from .simulator import SimRun, SimulationGuardError, expected_counts, expected_decay, simulate_decay, simulate_with_irf
from .sweep import NoSignificantExtremum, UnderDetermined, cosine_fit, first_extremum, run_sweep

log = logging.getLogger("chiral_pl")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GUARD = 3
EXIT_FIT = 4
EXIT_SWEEP = 5


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _config(args) -> io.RunConfig:
    cfg = io.load_config(args.config) if args.config else io.RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out(args, cfg: io.RunConfig | None = None) -> Path:
    out = args.out or (cfg.io.out if cfg is not None else None)
    if not out:
        raise CliError("no output path (use --out or io.out in the config)", EXIT_CONFIG)
    return Path(out)


def parse_irf_spec(spec: str) -> IrfModel:
    """``"s,t0"`` literals (ns) or a path to a reference-pulse histogram."""
    parts = spec.split(",")
    if len(parts) == 2:
        try:
            s, t0 = float(parts[0]), float(parts[1])
        except ValueError:
            pass
        else:
            return IrfModel(s=s, t0=t0)
    path = Path(spec)
    if not path.exists():
        raise CliError(f"--irf {spec!r} is neither 's,t0' nor an existing histogram file", EXIT_CONFIG)
    return calibrate_irf(io.read_histogram(path))


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    run = SimRun(cfg.model, cfg.geometry.build(), Polarization(cfg.simulate.polarization), cfg.simulate.seed)
    try:
        h = simulate_with_irf(run, cfg.irf.build()) if cfg.irf.enabled else simulate_decay(run)
    except SimulationGuardError as exc:
        raise CliError(str(exc), EXIT_GUARD) from None
    io.write_histogram(out, h, cfg.hash)
    sidecar = {
        "seed": cfg.simulate.seed,
        "config_hash": cfg.hash,
        "config": io._plain(cfg),
        "sampled_tau_up_ns": run.sampled_tau_up,
        "sampled_tau_down_ns": run.sampled_tau_down,
        "total_counts": h.total,
        "meta": io._plain(h.meta.extra),
    }
    io.atomic_write(out.with_name(out.name + ".meta.json"), json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    log.info("wrote %s (%d counts in %d bins)", out, h.total, h.n_bins)
    return EXIT_OK


def cmd_fit(args) -> int:
    h = io.read_histogram(args.histogram)
    cfg = _config(args)
    irf = parse_irf_spec(args.irf) if args.irf else cfg.irf.build()
    fit_cfg = cfg.fit.build()
    if args.model:
        fit_cfg = fit_cfg.__class__(**{**fit_cfg.__dict__, "model": args.model})
    out = _out(args, cfg)
    try:
        r = fit_biexp_irf(h, irf, fit_cfg)
    except FitError as exc:
        raise CliError(f"fit failed: {type(exc).__name__}: {exc}", EXIT_FIT) from None
    src = hashlib.sha256(Path(args.histogram).read_bytes()).hexdigest()[:16]
    chash = io.config_hash({"fit": fit_cfg, "irf": irf, "input": src})
    io.atomic_write(out, io.kv_text("fit report", h.meta.seed, chash, io.fit_report_items(r, h)))
    log.info("tau1 = %.4f +- %.4f ns, tau2 = %.4f ns, chi2_red = %.3f", r.tau1, r.tau1_err, r.tau2, r.chi2_reduced)
    return EXIT_OK if r.converged else EXIT_FIT


def cmd_calibrate_irf(args) -> int:
    h = io.read_histogram(args.histogram)
    out = _out(args)
    try:
        irf = calibrate_irf(h)
    except FitError as exc:
        raise CliError(f"IRF calibration failed: {exc}", EXIT_FIT) from None
    src = hashlib.sha256(Path(args.histogram).read_bytes()).hexdigest()[:16]
    items = [("s_ns", float(irf.s)), ("t0_ns", float(irf.t0)), ("resolution_limited", irf.resolution_limited)]
    io.atomic_write(out, io.kv_text("irf calibration", h.meta.seed, src, items))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    plan = cfg.sweep_plan()
    oracle = bool(args.oracle or cfg.sweep.oracle)
    res = run_sweep(plan, cfg.model, cfg.irf.build(), oracle=oracle)
    seed, chash = plan.master_seed, cfg.hash
    out.mkdir(parents=True, exist_ok=True)
    io.atomic_write(out / "points.csv", io.sweep_points_text(res, seed, chash))
    io.atomic_write(out / "delta.csv", io.sweep_delta_text(res, seed, chash))

    items = [("mode", "oracle" if oracle else "monte-carlo"), ("points", len(res.records)), ("failed_points", len(res.failures))]
    for r in res.failures:
        items.append((f"failed.phi_{io.fmt(r.phi)}.B_{io.fmt(r.B)}.{r.polarization.value}", r.flag))
    for phi in plan.phi_values:
        try:
            items.append((f"first_extremum_gauss.phi_{io.fmt(phi)}", first_extremum(res, phi)))
        except (NoSignificantExtremum, UnderDetermined) as exc:
            items.append((f"first_extremum_gauss.phi_{io.fmt(phi)}", f"none ({type(exc).__name__})"))
    for b in plan.b_values:
        try:
            c = cosine_fit(res, b)
        except UnderDetermined:
            continue
        key = f"cosine.B_{io.fmt(b)}"
        items += [(f"{key}.amplitude_ns", c.amplitude), (f"{key}.phase_deg", c.phase_deg),
                  (f"{key}.offset_ns", c.offset), (f"{key}.rms_residual_ns", c.rms_residual)]
    io.atomic_write(out / "summary.txt", io.kv_text("sweep summary", seed, chash, items))
    if res.records and len(res.failures) == len(res.records):
        raise CliError("every sweep point failed", EXIT_SWEEP)
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    geom = cfg.geometry.build()
    pol = Polarization(cfg.simulate.polarization)
    phi0 = initial_phase(pol)
    p = cfg.model
    t = (np.arange(p.n_bins) + 0.5) * p.bin_width
    surv = expected_decay(p, geom, phi0, t)
    counts = expected_counts(p, geom, phi0, cfg.irf.build() if cfg.irf.enabled else None)
    lines = io.header_lines("expected decay", None, cfg.hash, [("polarization", pol.value), ("B_gauss", float(geom.magnitude)), ("phi_deg", float(geom.phi))])
    lines.append("time_ns,survivors,expected_counts")
    lines += [f"{io.fmt(float(a))},{io.fmt(float(b))},{io.fmt(float(c))}" for a, b, c in zip(t, surv, counts)]
    io.atomic_write(out, "\n".join(lines) + "\n")
    return EXIT_OK


def _report_key(rep: dict, i: int):
    if "B_gauss" in rep and "phi_deg" in rep:
        return (float(rep["phi_deg"]), float(rep["B_gauss"]))
    return (math.nan, float(i))


def cmd_delta(args) -> int:
    """Pair RCP and LCP fit reports by (phi, B) and tabulate tau_RCP - tau_LCP."""
    out = _out(args)
    try:
        rcp = [io.read_fit_report(p) for p in args.rcp]
        lcp = [io.read_fit_report(p) for p in args.lcp]
    except (OSError, io.FormatError) as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    by_key = {}
    for i, rep in enumerate(lcp):
        by_key[_report_key(rep, i)] = rep
    lines = io.header_lines("lifetime differences (RCP - LCP)", None, io.config_hash({"rcp": rcp, "lcp": lcp}))
    lines.append(io.DELTA_HEADER)
    rows = []
    for i, rep in enumerate(rcp):
        key = _report_key(rep, i)
        other = by_key.get(key)
        if other is None:
            raise CliError(f"no LCP report matching phi={key[0]}, B={key[1]}", EXIT_CONFIG)
        d = float(rep["tau1_ns"]) - float(other["tau1_ns"])
        e = math.hypot(float(rep["tau1_err_ns"]), float(other["tau1_err_ns"]))
        rows.append((key[0], key[1], d, e))
    for row in sorted(rows, key=lambda r: (r[0], r[1])):
        lines.append(",".join(io.fmt(v) for v in row))
    io.atomic_write(out, "\n".join(lines) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chiral-pl", description="Spin-modulated PL decay simulation and reconvolution fitting")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, seed=True):
        if config:
            p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--out", help="output path")
        if seed:
            p.add_argument("--seed", type=int, help="override the configured seed")

    p = sub.add_parser("simulate", help="Monte Carlo decay histogram")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="biexponential reconvolution fit of a histogram")
    p.add_argument("histogram")
    p.add_argument("--irf", help="'s,t0' in ns or a reference-pulse histogram")
    p.add_argument("--model", choices=("biexp", "mono"))
    common(p, seed=False)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("calibrate-irf", help="Gaussian IRF from a reference-pulse histogram")
    p.add_argument("histogram")
    common(p, config=False, seed=False)
    p.set_defaults(func=cmd_calibrate_irf)

    p = sub.add_parser("sweep", help="field/azimuth sweep of the lifetime difference")
    p.add_argument("--oracle", action="store_true", help="fit noiseless expected curves instead of Monte Carlo histograms")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="export the expected decay curve")
    common(p, seed=False)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("delta", help="lifetime differences from RCP/LCP fit reports")
    p.add_argument("--rcp", nargs="+", required=True)
    p.add_argument("--lcp", nargs="+", required=True)
    common(p, config=False, seed=False)
    p.set_defaults(func=cmd_delta)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (io.ConfigError, io.FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except FitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
