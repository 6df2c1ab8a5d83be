"""Biexponential decay reconvolved with a Gaussian IRF, and its least-squares fit.

The model is

    PL(t) = A E(t; tau1) + B E(t; tau2) + C
    E(t; tau) = 1/2 exp(s^2 / (2 tau^2) - (t - t0) / tau) erfc((s / tau - (t - t0) / s) / sqrt(2))

i.e. a unit-height exponential convolved with a normalised Gaussian of width
``s`` centred at ``t0``.  E -> exp(-(t - t0) / tau) for t > t0 as s -> 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares
from scipy.special import erfc, erfcx, ndtr

from .core import PARAM_NAMES, BiexpFitResult, DecayHistogram, IrfModel

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)

MAX_COVARIANCE_CONDITION = 1e12
MIN_TAU_RATIO = 1.5
MODEL_WEIGHT_PASSES = 4


class FitError(RuntimeError):
    pass


class IllConditioned(FitError):
    """The data do not determine two distinct decay components."""


class NonConvergence(FitError):
    pass


class CalibrationError(FitError):
    pass


@dataclass(frozen=True)
class FitConfig:
    """Options for ``fit_biexp_irf``.

    ``model="mono"`` pins the short amplitude to zero and fits A, tau1, C only.
    ``window`` is (t_lo, t_hi) in ns; ``None`` means t0 - 3 s to the end.

    Weighting: ``"poisson"`` uses 1 / max(counts, 1), ``"model"`` starts
    there and refits with 1 / max(fitted curve, 1) (the data-derived weights
    pull lifetimes low when many bins hold only a few counts), ``"uniform"``
    is unweighted and scales the covariance by the reduced chi-square.
    With ``strict=False`` an iteration-limited fit is returned with
    ``converged=False`` instead of raising.
    """

    max_iterations: int = 400
    gradient_tolerance: float = 1e-10
    parameter_bounds: Optional[dict] = None
    initial_guess: Optional[Sequence[float]] = None
    weighting: str = "model"
    model: str = "biexp"
    window: Optional[tuple] = None
    strict: bool = True

    def __post_init__(self):
        if self.weighting not in ("model", "poisson", "uniform"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.model not in ("biexp", "mono"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name, (lo, hi) in (self.parameter_bounds or {}).items():
            if name not in PARAM_NAMES:
                raise ValueError(f"unknown parameter {name!r} in bounds")
            if math.isnan(lo) or math.isnan(hi) or lo >= hi:
                raise ValueError(f"bad bounds for {name}: {(lo, hi)}")
            if name.startswith("tau") and not lo > 0:
                raise ValueError(f"lifetime bounds must be strictly positive ({name})")
        if self.initial_guess is not None and len(self.initial_guess) != 5:
            raise ValueError("initial_guess must have 5 entries (A, B, tau1, tau2, C)")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([0.0, -np.inf, 1e-3, 1e-3, -np.inf])
        hi = np.array([np.inf, np.inf, 1e5, 1e5, np.inf])
        for name, (a, b) in (self.parameter_bounds or {}).items():
            i = PARAM_NAMES.index(name)
            lo[i], hi[i] = a, b
        return lo, hi


def exp_gauss(t, tau: float, irf: IrfModel) -> np.ndarray:
    """Unit exponential convolved with the IRF, evaluated without overflow.

    For z >= 0 the erfc is written as erfcx(z) exp(-z^2), which folds the
    exponent into exp(-(t - t0)^2 / (2 s^2)).
    """
    x = np.asarray(t, dtype=float) - irf.t0
    s = irf.s
    z = (s / tau - x / s) / _SQRT2
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 0.5 * np.exp(-0.5 * (x[pos] / s) ** 2) * erfcx(z[pos])
    neg = ~pos
    out[neg] = 0.5 * np.exp(0.5 * (s / tau) ** 2 - x[neg] / tau) * erfc(z[neg])
    return out


def exp_gauss_dtau(t, tau: float, irf: IrfModel, e=None) -> np.ndarray:
    x = np.asarray(t, dtype=float) - irf.t0
    s = irf.s
    if e is None:
        e = exp_gauss(t, tau, irf)
    return e * (x / tau**2 - s**2 / tau**3) + s / (tau**2 * _SQRT2PI) * np.exp(-0.5 * (x / s) ** 2)


def model_eval(p, irf: IrfModel, t) -> np.ndarray:
    a, b, tau1, tau2, c = p
    if not (tau1 > 0 and tau2 > 0):
        raise ValueError("lifetimes must be > 0")
    out = a * exp_gauss(t, tau1, irf) + b * exp_gauss(t, tau2, irf) + c
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite model value")
    return out


def model_jacobian(p, irf: IrfModel, t) -> np.ndarray:
    """d(model)/d(A, B, tau1, tau2, C), shape (len(t), 5)."""
    a, b, tau1, tau2, _ = p
    t = np.asarray(t, dtype=float)
    e1 = exp_gauss(t, tau1, irf)
    e2 = exp_gauss(t, tau2, irf)
    jac = np.empty((t.size, 5))
    jac[:, 0] = e1
    jac[:, 1] = e2
    jac[:, 2] = a * exp_gauss_dtau(t, tau1, irf, e1)
    jac[:, 3] = b * exp_gauss_dtau(t, tau2, irf, e2)
    jac[:, 4] = 1.0
    return jac


def unnormalized_component(t, tau: float, irf: IrfModel) -> np.ndarray:
    """One component in the common unnormalized form, exp(-(t - t0)/tau) erfc(-(t - t0 - s^2/tau) / (sqrt(2) s)).

    Equal to ``2 exp(-s^2 / (2 tau^2)) * exp_gauss``: the same curve up to a
    constant amplitude factor.
    """
    x = np.asarray(t, dtype=float) - irf.t0
    return np.exp(-x / tau) * erfc(-(x - irf.s**2 / tau) / (_SQRT2 * irf.s))


def _loglinear_tau(t, y) -> Optional[float]:
    good = y > 0
    if good.sum() < 3:
        return None
    slope = np.polyfit(t[good], np.log(y[good]), 1, w=np.sqrt(y[good]))[0]
    if not slope < 0:
        return None
    return -1.0 / slope


def initial_guess(t: np.ndarray, y: np.ndarray, irf: IrfModel, model: str = "biexp") -> np.ndarray:
    pre = t < irf.t0 - 3 * irf.s
    if pre.sum() >= 3:
        c = float(y[pre].mean())
    else:
        c = 0.5 * float(y[-max(3, y.size // 50):].mean())
    ip = int(np.argmax(y))
    peak = float(y[ip]) - c
    tt, yy = t[ip:], y[ip:] - c
    # keep the part of the tail that is still clearly above background
    above = np.nonzero(yy > 3 * math.sqrt(max(c, 1.0)))[0]
    span = tt[: above[-1] + 1] if above.size else tt
    yy = yy[: span.size]
    span_t = span[-1] - span[0] if span.size > 1 else 1.0
    if model == "mono":
        tau = _loglinear_tau(span, yy) or max(span_t / 3, 1e-2)
        return np.array([peak, 0.0, tau, tau, c])
    third = max(span.size // 3, 3)
    tau2 = _loglinear_tau(span[:third], yy[:third])
    tau1 = _loglinear_tau(span[-third:], yy[-third:])
    tau1 = tau1 if tau1 is not None else max(span_t / 3, 1e-2)
    if tau2 is None or tau2 * MIN_TAU_RATIO > tau1:
        tau2 = tau1 / 4
    return np.array([0.5 * peak, 0.5 * peak, tau1, tau2, c])


def _select(h: DecayHistogram, irf: IrfModel, cfg: FitConfig):
    t = h.centers
    y = h.counts.astype(float)
    lo, hi = cfg.window if cfg.window is not None else (irf.t0 - 3 * irf.s, np.inf)
    keep = (t >= lo) & (t <= hi)
    return t[keep], y[keep]


def fit_biexp_irf(h: DecayHistogram, irf: IrfModel, cfg: FitConfig = FitConfig()) -> BiexpFitResult:
    """Weighted least-squares fit of the reconvolution model with the IRF held fixed."""
    t, y = _select(h, irf, cfg)
    return fit_curve(t, y, irf, cfg)


def fit_curve(t, y, irf: IrfModel, cfg: FitConfig = FitConfig()) -> BiexpFitResult:
    """Same as ``fit_biexp_irf`` on raw (t, y) arrays; ``y`` may be non-integer
    expected counts (used for noiseless oracle curves)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.count_nonzero(y > 0) < 50:
        raise FitError("need at least 50 bins with counts > 0 in the fit window")

    mono = cfg.model == "mono"
    free = np.array([0, 2, 4]) if mono else np.arange(5)
    lo, hi = cfg.bounds()
    p0 = np.array(cfg.initial_guess, dtype=float) if cfg.initial_guess is not None else initial_guess(t, y, irf, cfg.model)
    if mono:
        p0[1] = 0.0
    p0 = np.clip(p0, lo, hi)

    def full(x):
        p = p0.copy()
        p[free] = x
        if mono:
            p[3] = p[2]
        return p

    def solve(sw, x0):
        def resid(x):
            return sw * (model_eval(full(x), irf, t) - y)

        def jac(x):
            return sw[:, None] * model_jacobian(full(x), irf, t)[:, free]

        return least_squares(
            resid,
            x0,
            jac=jac,
            bounds=(lo[free], hi[free]),
            method="trf",
            x_scale="jac",
            ftol=1e-14,
            xtol=1e-14,
            gtol=cfg.gradient_tolerance,
            max_nfev=cfg.max_iterations,
        )

    if cfg.weighting == "uniform":
        sol = solve(np.ones_like(y), p0[free])
    else:
        sol = solve(1.0 / np.sqrt(np.maximum(y, 1.0)), p0[free])
        if cfg.weighting == "model":
            # variance taken from the fitted curve instead of the noisy counts
            for _ in range(MODEL_WEIGHT_PASSES):
                if sol.status <= 0:
                    break
                prev = sol.x
                mu = model_eval(full(prev), irf, t)
                sol = solve(1.0 / np.sqrt(np.maximum(mu, 1.0)), prev)
                if np.all(np.abs(sol.x - prev) <= 1e-9 * np.maximum(np.abs(prev), 1e-12)):
                    break
    p = full(sol.x)
    converged = sol.status > 0
    if not converged and cfg.strict:
        raise NonConvergence(f"no convergence after {sol.nfev} evaluations: {sol.message}")

    dof = max(t.size - free.size, 1)
    chi2_red = float(np.sum(sol.fun**2) / dof)
    jw = sol.jac
    with np.errstate(all="ignore"):
        try:
            cov_free = np.linalg.inv(jw.T @ jw)
        except np.linalg.LinAlgError:
            cov_free = np.full((free.size, free.size), np.inf)
    if cfg.weighting == "uniform":
        cov_free = cov_free * chi2_red
    cond = _correlation_condition(cov_free)
    cov = np.zeros((5, 5))
    cov[np.ix_(free, free)] = cov_free
    if mono:
        cov[3, :] = cov[2, :]
        cov[:, 3] = cov[:, 2]

    if not mono:
        if p[3] > p[2]:
            order = [1, 0, 3, 2, 4]
            p = p[order]
            cov = cov[np.ix_(order, order)]
        if p[2] / p[3] < MIN_TAU_RATIO:
            raise IllConditioned(f"decay times too close to separate (tau1/tau2 = {p[2] / p[3]:.3f})")
    tau_idx = [2] if mono else [2, 3]
    for i in tau_idx:
        pinned = p[i] <= lo[i] * (1 + 1e-6) or p[i] >= hi[i] * (1 - 1e-6)
        if pinned or not math.sqrt(max(cov[i, i], 0.0)) < p[i]:
            # the extra component only mimics a constant (or nothing at all)
            raise IllConditioned(f"lifetime {p[i]:.4g} ns is not resolved by the data (pinned at a bound or error > value)")
    if not cond <= MAX_COVARIANCE_CONDITION:
        raise IllConditioned(f"parameter correlation condition number {cond:.3g} exceeds {MAX_COVARIANCE_CONDITION:g}")
    cov = 0.5 * (cov + cov.T)

    return BiexpFitResult(
        a_long=float(p[0]),
        a_short=float(p[1]),
        tau1=float(p[2]),
        tau2=float(p[3]),
        c_offset=float(p[4]),
        irf=irf,
        covariance=cov,
        chi2_reduced=chi2_red,
        converged=bool(converged),
        n_iterations=int(sol.nfev),
        model=cfg.model,
    )


def _correlation_condition(cov: np.ndarray) -> float:
    # scale-free: raw covariance mixes count^2 and ns^2 entries
    if not np.all(np.isfinite(cov)):
        return math.inf
    var = np.diag(cov)
    if not np.all(var > 0):
        return math.inf
    d = np.sqrt(var)
    return float(np.linalg.cond(cov / np.outer(d, d)))


def extract_long_lifetime(r: BiexpFitResult) -> tuple[float, float]:
    """Long-component lifetime and its standard error."""
    if not r.converged:
        raise NonConvergence("cannot extract a lifetime from an unconverged fit")
    return r.tau1, math.sqrt(max(r.covariance[2, 2], 0.0))


def _binned_gauss(edges, total, t0, s):
    return total * np.diff(ndtr((edges - t0) / s))


def calibrate_irf(h: DecayHistogram) -> IrfModel:
    """Fit a binned Gaussian plus flat baseline to a reference-pulse histogram.

    A pulse narrower than the bins cannot be resolved; its width is then
    reported as the single-bin rms, bin_width / sqrt(12), and flagged.
    """
    y = h.counts.astype(float)
    t = h.centers
    edges = h.edges
    bw = h.bin_width
    base0 = float(np.median(y))
    ip = int(np.argmax(y))
    if y[ip] / max(base0, 1.0) < 10:
        raise CalibrationError(f"peak-to-baseline ratio {y[ip] / max(base0, 1.0):.2f} < 10; no usable pulse")
    excess = np.clip(y - base0, 0, None)
    near = np.abs(t - t[ip]) < max(20 * bw, 1e-9)
    wsum = excess[near].sum()
    var = float(np.sum(excess[near] * (t[near] - t[ip]) ** 2) / wsum) if wsum > 0 else bw**2
    s0 = max(math.sqrt(var), bw / math.sqrt(12))
    total0 = float(excess.sum())
    w = 1.0 / np.maximum(y, 1.0)
    sw = np.sqrt(w)

    def resid(x):
        total, t0, s, base = x
        return sw * (_binned_gauss(edges, total, t0, s) + base - y)

    x0 = np.array([total0, t[ip], s0, base0])
    lo = [0.0, edges[0], bw / 100, -np.inf]
    hi = [np.inf, edges[-1], edges[-1] - edges[0], np.inf]
    sol = least_squares(resid, np.clip(x0, lo, hi), bounds=(lo, hi), method="trf", x_scale="jac")
    if not sol.success:
        raise CalibrationError(f"Gaussian IRF fit failed: {sol.message}")
    _, t0, s, _ = sol.x
    limit = bw / math.sqrt(12)
    if s < limit:
        return IrfModel(s=limit, t0=float(t0), resolution_limited=True)
    return IrfModel(s=float(s), t0=float(t0))
