"""Field-magnitude / azimuth sweeps and the lifetime-difference observables.

Every random stream is keyed by the identity of the point it belongs to
(azimuth, field, helicity, run index) mixed with the master seed through
``numpy.random.SeedSequence``, so results do not depend on execution order
or on how points are distributed over workers.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import (
    DEFAULT_CHIRAL_AZIMUTH_DEG,
    DEFAULT_CHIRAL_TILT_DEG,
    DecayHistogram,
    FieldGeometry,
    IrfModel,
    Polarization,
    SpinModelParams,
    initial_phase,
    transverse_field,
    unit_vector,
)
from .reconvolution import FitConfig, FitError, extract_long_lifetime, fit_biexp_irf, fit_curve
from .simulator import SimRun, expected_counts, simulate_with_irf

DEFAULT_B_VALUES = tuple(float(b) for b in range(60, 1021, 20))
DEFAULT_PHI_VALUES = (-40.0, -20.0, 0.0, 20.0, 40.0, 60.0, 80.0)
SIGNIFICANCE = 2.0


class MissingPolarization(KeyError):
    pass


class NoSignificantExtremum(ValueError):
    pass


class UnderDetermined(ValueError):
    pass


@dataclass(frozen=True)
class SweepPlan:
    """What to sweep and how to extract the long lifetime at each point.

    ``fit_model``: ``"tail"`` fits a single reconvolved exponential from
    ``t0 + tail_start`` onwards (the long-lived component), ``"mono"`` fits
    one exponential over the whole decay, ``"biexp"`` the full two-component
    model.
    """

    b_values: tuple = DEFAULT_B_VALUES
    phi_values: tuple = DEFAULT_PHI_VALUES
    theta: float = 45.0
    polarizations: tuple = (Polarization.LCP, Polarization.RCP)
    runs_per_point: int = 1
    master_seed: int = 0
    randomize_order: bool = True
    chiral_axis: tuple = field(default_factory=lambda: tuple(unit_vector(DEFAULT_CHIRAL_TILT_DEG, DEFAULT_CHIRAL_AZIMUTH_DEG).tolist()))
    fit_model: str = "tail"
    tail_start: float = 10.0
    workers: int = 1

    def __post_init__(self):
        b = tuple(float(x) for x in self.b_values)
        if not b:
            raise ValueError("b_values must not be empty")
        if any(not (x >= 0 and math.isfinite(x)) for x in b):
            raise ValueError("field values must be finite and >= 0")
        if len(set(b)) != len(b):
            raise ValueError("duplicate field values")
        phi = tuple(float(x) for x in self.phi_values)
        if not phi or len(set(phi)) != len(phi):
            raise ValueError("phi_values must be non-empty and distinct")
        pols = tuple(sorted({Polarization(p) for p in self.polarizations}, key=lambda p: p.value))
        if not pols:
            raise ValueError("at least one polarization is required")
        if self.runs_per_point < 1:
            raise ValueError("runs_per_point must be >= 1")
        if int(self.master_seed) != self.master_seed or self.master_seed < 0:
            raise ValueError("master_seed must be an unsigned integer")
        if self.fit_model not in ("tail", "mono", "biexp"):
            raise ValueError(f"unknown fit_model {self.fit_model!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        object.__setattr__(self, "b_values", b)
        object.__setattr__(self, "phi_values", phi)
        object.__setattr__(self, "polarizations", pols)
        # validates the axis
        FieldGeometry(0.0, self.theta, 0.0, self.chiral_axis)
        object.__setattr__(self, "chiral_axis", tuple(float(c) for c in self.chiral_axis))

    def geometry(self, b: float, phi: float) -> FieldGeometry:
        return FieldGeometry(b, self.theta, phi, self.chiral_axis)

    def fit_config(self, irf: IrfModel) -> FitConfig:
        if self.fit_model == "tail":
            return FitConfig(model="mono", window=(irf.t0 + self.tail_start, math.inf))
        return FitConfig(model=self.fit_model)


@dataclass(frozen=True)
class PointRecord:
    B: float
    phi: float
    polarization: Polarization
    tau_long: float
    tau_long_err: float
    chi2_reduced: float
    seed: int
    flag: str = ""

    @property
    def ok(self) -> bool:
        return not self.flag


@dataclass(frozen=True)
class DeltaRecord:
    B: float
    phi: float
    dtau: float
    dtau_err: float


@dataclass(frozen=True)
class SweepResult:
    records: tuple
    oracle: bool = False

    @property
    def derived(self) -> tuple:
        """Lifetime differences for every (phi, B) with both helicities fitted."""
        table = {}
        for r in self.records:
            if r.ok:
                table[(r.phi, r.B, r.polarization)] = r
        out = []
        for phi, b in sorted({(r.phi, r.B) for r in self.records}):
            rcp = table.get((phi, b, Polarization.RCP))
            lcp = table.get((phi, b, Polarization.LCP))
            if rcp is None or lcp is None:
                continue
            out.append(DeltaRecord(b, phi, rcp.tau_long - lcp.tau_long, math.hypot(rcp.tau_long_err, lcp.tau_long_err)))
        return tuple(out)

    @property
    def failures(self) -> tuple:
        return tuple(r for r in self.records if not r.ok)

    def with_swapped_polarizations(self) -> "SweepResult":
        recs = tuple(replace(r, polarization=r.polarization.swapped()) for r in self.records)
        return SweepResult(_sorted(recs), self.oracle)


def _sorted(records):
    return tuple(sorted(records, key=lambda r: (r.phi, r.B, r.polarization.value)))


def _float_key(x: float) -> int:
    return struct.unpack("<Q", struct.pack("<d", float(x) + 0.0))[0]


_POL_CODE = {Polarization.LCP: 1, Polarization.RCP: 2}


def point_seed(master_seed: int, phi: float, b: float, pol: Polarization) -> int:
    ss = np.random.SeedSequence(master_seed, spawn_key=(_float_key(phi), _float_key(b), _POL_CODE[Polarization(pol)]))
    return int(ss.generate_state(1, np.uint64)[0])


def run_seed(point: int, run: int) -> int:
    return int(np.random.SeedSequence(point, spawn_key=(run,)).generate_state(1, np.uint64)[0])


def shuffle_plan(plan: SweepPlan) -> list:
    """Execution order as a list of (phi, B); field order is permuted
    independently within each azimuth set."""
    order = []
    for i, phi in enumerate(plan.phi_values):
        bs = list(plan.b_values)
        if plan.randomize_order:
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(plan.master_seed, spawn_key=(i,))))
            bs = [bs[j] for j in rng.permutation(len(bs))]
        order.extend((phi, b) for b in bs)
    return order


def point_histogram(plan: SweepPlan, params: SpinModelParams, irf: IrfModel, phi: float, b: float, pol) -> DecayHistogram:
    """Accumulated Monte Carlo histogram of all runs at one sweep point."""
    pol = Polarization(pol)
    geom = plan.geometry(b, phi)
    seed = point_seed(plan.master_seed, phi, b, pol)
    total = None
    for k in range(plan.runs_per_point):
        h = simulate_with_irf(SimRun(params, geom, pol, run_seed(seed, k)), irf)
        total = h if total is None else total + h
    return total


def oracle_curve(plan: SweepPlan, params: SpinModelParams, irf: IrfModel, phi: float, b: float, pol):
    geom = plan.geometry(b, phi)
    y = expected_counts(params, geom, initial_phase(pol), irf) * plan.runs_per_point
    t = (np.arange(params.n_bins) + 0.5) * params.bin_width
    return t, y


def _run_point(args) -> list:
    plan, params, irf, oracle, phi, b = args
    cfg = plan.fit_config(irf)
    out = []
    for pol in plan.polarizations:
        seed = point_seed(plan.master_seed, phi, b, pol)
        try:
            if oracle:
                t, y = oracle_curve(plan, params, irf, phi, b, pol)
                lo, hi = cfg.window if cfg.window is not None else (irf.t0 - 3 * irf.s, math.inf)
                keep = (t >= lo) & (t <= hi)
                fit = fit_curve(t[keep], y[keep], irf, cfg)
            else:
                fit = fit_biexp_irf(point_histogram(plan, params, irf, phi, b, pol), irf, cfg)
            tau, err = extract_long_lifetime(fit)
            out.append(PointRecord(b, phi, pol, tau, err, fit.chi2_reduced, seed))
        except (FitError, ValueError, FloatingPointError) as exc:
            out.append(PointRecord(b, phi, pol, math.nan, math.nan, math.nan, seed, type(exc).__name__))
    return out


def run_sweep(plan: SweepPlan, params: SpinModelParams, irf: IrfModel, oracle: bool = False) -> SweepResult:
    """Extract the long lifetime at every (phi, B, helicity) of the plan.

    In oracle mode the noiseless expected histogram (scaled to the same
    number of excitations) is fitted instead of a Monte Carlo one, and the
    lifetime spread is ignored.  Failed fits are flagged, never fatal.
    """
    tasks = [(plan, params, irf, oracle, phi, b) for phi, b in shuffle_plan(plan)]
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            chunks = list(pool.map(_run_point, tasks))
    else:
        chunks = [_run_point(t) for t in tasks]
    return SweepResult(_sorted(r for chunk in chunks for r in chunk), oracle)


def delta_lifetime(result: SweepResult, B: float, phi: float) -> tuple[float, float]:
    found = {r.polarization: r for r in result.records if r.B == B and r.phi == phi and r.ok}
    for pol in Polarization:
        if pol not in found:
            raise MissingPolarization(f"no {pol.value} lifetime at B={B} G, phi={phi} deg")
    rcp, lcp = found[Polarization.RCP], found[Polarization.LCP]
    return rcp.tau_long - lcp.tau_long, math.hypot(rcp.tau_long_err, lcp.tau_long_err)


def delta_curve(result: SweepResult, phi: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows = sorted((d for d in result.derived if d.phi == phi), key=lambda d: d.B)
    return (np.array([d.B for d in rows]), np.array([d.dtau for d in rows]), np.array([d.dtau_err for d in rows]))


def significant_extrema(b, y, err, gate: float = SIGNIFICANCE) -> list:
    """Interior local extrema of y(b) with |y| > gate * err, refined by a
    parabola through the three neighbouring points: [(b_vertex, y_vertex), ...]."""
    b, y, err = map(np.asarray, (b, y, err))
    out = []
    for i in range(1, b.size - 1):
        left, right = y[i] - y[i - 1], y[i + 1] - y[i]
        if left * right >= 0 or not abs(y[i]) > gate * err[i]:
            continue
        coef = np.polyfit(b[i - 1 : i + 2], y[i - 1 : i + 2], 2)
        bv = -coef[1] / (2 * coef[0])
        out.append((float(bv), float(np.polyval(coef, bv))))
    return out


def first_extremum(result: SweepResult, phi: float) -> float:
    b, y, err = delta_curve(result, phi)
    if b.size < 5:
        raise UnderDetermined(f"need at least 5 field points at phi={phi}, have {b.size}")
    ext = significant_extrema(b, y, err)
    if not ext:
        raise NoSignificantExtremum(f"no local extremum of the lifetime difference clears {SIGNIFICANCE}x its error at phi={phi}")
    return ext[0][0]


@dataclass(frozen=True)
class CosineFit:
    amplitude: float
    phase_deg: float
    offset: float
    rms_residual: float


def fit_cosine(phi_deg, y) -> CosineFit:
    """Linear least squares for y = a cos(phi - phi_c) + b with a >= 0."""
    phi = np.radians(np.asarray(phi_deg, dtype=float))
    y = np.asarray(y, dtype=float)
    if phi.size < 4:
        raise UnderDetermined(f"cosine fit needs at least 4 azimuths, got {phi.size}")
    design = np.column_stack([np.cos(phi), np.sin(phi), np.ones_like(phi)])
    (c, s, off), *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ np.array([c, s, off])
    return CosineFit(float(math.hypot(c, s)), float(math.degrees(math.atan2(s, c))), float(off), float(np.sqrt(np.mean(resid**2))))


def cosine_fit(result: SweepResult, B: float) -> CosineFit:
    rows = sorted((d for d in result.derived if d.B == B), key=lambda d: d.phi)
    return fit_cosine([d.phi for d in rows], [d.dtau for d in rows])


def transverse_profile(plan: SweepPlan, phi: float) -> float:
    """sin(alpha) at azimuth ``phi`` for the plan's geometry."""
    return transverse_field(plan.geometry(1.0, phi))
