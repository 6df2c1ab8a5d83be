"""Domain types and field geometry.

Units at every API boundary: time in ns, field in Gauss, angles in degrees.
Radians are used internally only.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from dataclasses import field as dc_field
from typing import Optional

import numpy as np

# Default chiral-axis orientation (polar tilt from the sample normal, azimuth).
DEFAULT_CHIRAL_TILT_DEG = 45.0
DEFAULT_CHIRAL_AZIMUTH_DEG = 90.0

MIN_LIFETIME_NS = 0.1


class Polarization(str, enum.Enum):
    LCP = "LCP"
    RCP = "RCP"

    def swapped(self) -> "Polarization":
        return Polarization.LCP if self is Polarization.RCP else Polarization.RCP


def initial_phase(pol: Polarization | str) -> float:
    """Initial precession phase selected by the excitation helicity.

    RCP prepares spin-up (phase 0), LCP prepares spin-down (phase pi/2).
    """
    pol = Polarization(pol)
    return 0.0 if pol is Polarization.RCP else math.pi / 2


def unit_vector(theta_deg: float, phi_deg: float) -> np.ndarray:
    th, ph = math.radians(theta_deg), math.radians(phi_deg)
    return np.array([math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th)])


def default_chiral_axis() -> tuple[float, float, float]:
    return tuple(unit_vector(DEFAULT_CHIRAL_TILT_DEG, DEFAULT_CHIRAL_AZIMUTH_DEG).tolist())


@dataclass(frozen=True)
class FieldGeometry:
    """Applied field (magnitude, polar angle, azimuth) and the chiral axis."""

    magnitude: float
    theta: float = 45.0
    phi: float = 0.0
    chiral_axis: tuple[float, float, float] = dc_field(default_factory=default_chiral_axis)

    def __post_init__(self):
        if not (self.magnitude >= 0 and math.isfinite(self.magnitude)):
            raise ValueError(f"field magnitude must be finite and >= 0, got {self.magnitude}")
        if not (math.isfinite(self.theta) and math.isfinite(self.phi)):
            raise ValueError("field angles must be finite")
        axis = tuple(float(c) for c in self.chiral_axis)
        if len(axis) != 3:
            raise ValueError("chiral_axis must be a 3-vector")
        norm = math.sqrt(sum(c * c for c in axis))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"chiral_axis must be a unit vector (|n| = {norm!r})")
        object.__setattr__(self, "chiral_axis", axis)

    @classmethod
    def from_angles(
        cls,
        magnitude: float,
        theta: float = 45.0,
        phi: float = 0.0,
        chiral_tilt: float = DEFAULT_CHIRAL_TILT_DEG,
        chiral_azimuth: float = DEFAULT_CHIRAL_AZIMUTH_DEG,
    ) -> "FieldGeometry":
        axis = unit_vector(chiral_tilt, chiral_azimuth)
        axis = axis / np.linalg.norm(axis)
        return cls(magnitude, theta, phi, tuple(axis.tolist()))

    @property
    def direction(self) -> np.ndarray:
        return unit_vector(self.theta, self.phi)

    @property
    def alpha(self) -> float:
        """Angle between the chiral axis and the field direction (degrees)."""
        c = float(np.clip(np.dot(self.chiral_axis, self.direction), -1.0, 1.0))
        return math.degrees(math.acos(c))

    def with_field(self, magnitude: float | None = None, phi: float | None = None) -> "FieldGeometry":
        return FieldGeometry(
            self.magnitude if magnitude is None else magnitude,
            self.theta,
            self.phi if phi is None else phi,
            self.chiral_axis,
        )


def transverse_field(geom: FieldGeometry) -> float:
    """Field component perpendicular to the chiral axis, |B| sin(alpha).

    Computed as |n x B_hat| rather than sqrt(1 - cos^2), which loses all
    precision when the field is nearly parallel to the axis.
    """
    return geom.magnitude * float(np.linalg.norm(np.cross(geom.chiral_axis, geom.direction)))


@dataclass(frozen=True)
class AcquisitionMeta:
    field: Optional[FieldGeometry] = None
    polarization: Optional[Polarization] = None
    seed: Optional[int] = None
    label: str = ""
    # free-form numeric annotations (sampled lifetimes, survivors, ...)
    extra: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.polarization is not None:
            object.__setattr__(self, "polarization", Polarization(self.polarization))
        if self.seed is not None and (int(self.seed) != self.seed or self.seed < 0):
            raise ValueError(f"seed must be an unsigned integer, got {self.seed!r}")

    @property
    def phi0(self) -> Optional[float]:
        return None if self.polarization is None else initial_phase(self.polarization)


@dataclass(frozen=True, eq=False)
class DecayHistogram:
    """Binned photon arrival times; bin ``i`` covers ``t_start + [i, i+1) * bin_width``."""

    bin_width: float
    t_start: float
    counts: np.ndarray
    meta: AcquisitionMeta = dc_field(default_factory=AcquisitionMeta)

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or counts.size < 2:
            raise ValueError("histogram needs a 1-D array of at least 2 bins")
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(np.isfinite(counts)) or np.any(counts != np.round(counts)):
                raise ValueError("histogram counts must be integers")
        counts = counts.astype(np.int64)
        if np.any(counts < 0):
            raise ValueError("histogram counts must be non-negative")
        if not (self.bin_width > 0 and math.isfinite(self.bin_width)):
            raise ValueError(f"bin_width must be > 0, got {self.bin_width}")
        if not math.isfinite(self.t_start):
            raise ValueError("t_start must be finite")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def n_bins(self) -> int:
        return self.counts.size

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def centers(self) -> np.ndarray:
        return self.t_start + (np.arange(self.n_bins) + 0.5) * self.bin_width

    @property
    def edges(self) -> np.ndarray:
        return self.t_start + np.arange(self.n_bins + 1) * self.bin_width

    def __eq__(self, other):
        if not isinstance(other, DecayHistogram):
            return NotImplemented
        return (
            self.bin_width == other.bin_width
            and self.t_start == other.t_start
            and np.array_equal(self.counts, other.counts)
            and self.meta == other.meta
        )

    def __add__(self, other: "DecayHistogram") -> "DecayHistogram":
        if self.bin_width != other.bin_width or self.t_start != other.t_start or self.n_bins != other.n_bins:
            raise ValueError("cannot accumulate histograms with different binning")
        return DecayHistogram(self.bin_width, self.t_start, self.counts + other.counts, self.meta)

    def shifted(self, dt: float) -> "DecayHistogram":
        return DecayHistogram(self.bin_width, self.t_start + dt, self.counts, self.meta)


@dataclass(frozen=True)
class SpinModelParams:
    """Parameters of the two-channel precession/decay model.

    ``dt=None`` picks the step automatically (see ``simulator.choose_dt``);
    ``horizon=None`` means ten times the longer mean lifetime.
    """

    tau_up_mean: float = 20.0
    tau_down_mean: float = 12.0
    sigma_tau: float = 1.0
    gamma: float = 2.5e-4  # rad / (ns G); effective value, not a free-electron g-factor
    n0: int = 1_000_000
    dt: Optional[float] = None
    horizon: Optional[float] = None
    bin_width: float = 0.1

    def __post_init__(self):
        if not (self.tau_up_mean > 0 and self.tau_down_mean > 0):
            raise ValueError("mean lifetimes must be > 0")
        if self.sigma_tau < 0:
            raise ValueError("sigma_tau must be >= 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if int(self.n0) != self.n0 or self.n0 < 0:
            raise ValueError("n0 must be a non-negative integer")
        object.__setattr__(self, "n0", int(self.n0))
        if self.bin_width <= 0:
            raise ValueError("bin_width must be > 0")
        if self.dt is not None:
            if self.dt <= 0:
                raise ValueError("dt must be > 0")
            if self.bin_width < self.dt * (1 - 1e-12):
                raise ValueError("bin_width must be >= dt")
        if self.horizon is not None and self.horizon <= 0:
            raise ValueError("horizon must be > 0")

    @property
    def horizon_ns(self) -> float:
        if self.horizon is not None:
            return float(self.horizon)
        return 10.0 * max(self.tau_up_mean, self.tau_down_mean)

    @property
    def n_bins(self) -> int:
        return int(math.ceil(self.horizon_ns / self.bin_width - 1e-9))

    def mirrored(self) -> "SpinModelParams":
        """Opposite-handedness sample: spin channels swapped."""
        from dataclasses import replace

        return replace(self, tau_up_mean=self.tau_down_mean, tau_down_mean=self.tau_up_mean)


@dataclass(frozen=True)
class IrfModel:
    """Gaussian instrument response of width ``s`` centred at ``t0``."""

    s: float
    t0: float = 0.0
    resolution_limited: bool = False

    def __post_init__(self):
        if not (self.s > 0 and math.isfinite(self.s)):
            raise ValueError(f"IRF width must be > 0, got {self.s}")
        if not math.isfinite(self.t0):
            raise ValueError("IRF delay must be finite")


PARAM_NAMES = ("a_long", "a_short", "tau1", "tau2", "c_offset")


@dataclass(frozen=True, eq=False)
class BiexpFitResult:
    a_long: float
    a_short: float
    tau1: float
    tau2: float
    c_offset: float
    irf: IrfModel
    covariance: np.ndarray
    chi2_reduced: float
    converged: bool
    n_iterations: int = 0
    model: str = "biexp"

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (5, 5):
            raise ValueError("covariance must be 5x5")
        if not (self.tau1 >= self.tau2 > 0):
            raise ValueError("expected tau1 >= tau2 > 0")
        cov.setflags(write=False)
        object.__setattr__(self, "covariance", cov)

    @property
    def params(self) -> np.ndarray:
        return np.array([self.a_long, self.a_short, self.tau1, self.tau2, self.c_offset])

    @property
    def errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    @property
    def tau1_err(self) -> float:
        return float(self.errors[2])

    @property
    def tau2_err(self) -> float:
        return float(self.errors[3])
