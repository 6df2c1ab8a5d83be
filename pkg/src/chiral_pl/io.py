"""File formats: histogram CSV, key-value reports, YAML run configuration.

Every file starts with ``#`` comment lines carrying at least the seed and a
configuration hash.  Floats are written with ``repr`` so that reading a file
back gives the identical value; output is UTF-8 with ``\\n`` line endings and
never depends on the locale.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Optional

import yaml

from .core import (
    DEFAULT_CHIRAL_AZIMUTH_DEG,
    DEFAULT_CHIRAL_TILT_DEG,
    AcquisitionMeta,
    BiexpFitResult,
    DecayHistogram,
    FieldGeometry,
    IrfModel,
    Polarization,
    SpinModelParams,
    unit_vector,
)
from .reconvolution import FitConfig
from .sweep import SweepPlan, SweepResult

HISTOGRAM_HEADER = "time_ns,counts"
POINTS_HEADER = "phi_deg,B_gauss,polarization,tau_long_ns,tau_long_err_ns,chi2_reduced,flag"
DELTA_HEADER = "phi_deg,B_gauss,dtau_ns,dtau_err_ns"


class FormatError(ValueError):
    """Unparseable input file; ``line`` is 1-based."""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        where = f"{path or '<input>'}" + (f", line {line}" if line is not None else "")
        super().__init__(f"{where}: {message}")


class ConfigError(ValueError):
    def __init__(self, message: str, key: str = "", line: Optional[int] = None):
        self.key = key
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        field_ = f"{key}: " if key else ""
        super().__init__(f"{prefix}{field_}{message}")


def fmt(x: Any) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))
    if isinstance(x, Polarization):
        return x.value
    return str(x)


def atomic_write(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def config_hash(obj: Any) -> str:
    blob = json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _plain(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, Polarization):
        return obj.value
    if isinstance(obj, float) and not math.isfinite(obj):
        return fmt(obj)
    if hasattr(obj, "item"):
        return obj.item()
    return obj


def header_lines(kind: str, seed: Any, chash: str, extra: Iterable[tuple] = ()) -> list:
    lines = [f"# chiral_pl {kind}", f"# seed: {fmt(seed) if seed is not None else 'none'}", f"# config_hash: {chash}"]
    lines += [f"# {k}: {fmt(v)}" for k, v in extra]
    return lines


# -- histograms -----------------------------------------------------------------


def histogram_to_text(h: DecayHistogram, chash: str = "none") -> str:
    m = h.meta
    extra = []
    if m.field is not None:
        extra += [
            ("B_gauss", float(m.field.magnitude)),
            ("theta_deg", float(m.field.theta)),
            ("phi_deg", float(m.field.phi)),
            ("chiral_axis", ",".join(fmt(float(c)) for c in m.field.chiral_axis)),
        ]
    if m.polarization is not None:
        extra.append(("polarization", m.polarization.value))
    if m.label:
        extra.append(("label", m.label))
    extra += [("bin_width_ns", float(h.bin_width)), ("t_start_ns", float(h.t_start))]
    for k in sorted(m.extra):
        extra.append((f"extra.{k}", m.extra[k]))
    lines = header_lines("histogram", m.seed, chash, extra)
    lines.append(HISTOGRAM_HEADER)
    centers = h.centers
    lines += [f"{fmt(float(t))},{int(c)}" for t, c in zip(centers, h.counts)]
    return "\n".join(lines) + "\n"


def _parse_scalar(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text in ("true", "false"):
        return text == "true"
    return text


def _split_comments(lines: list) -> tuple[dict, int]:
    meta = {}
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        body = lines[i][1:].strip()
        if ":" in body:
            k, v = body.split(":", 1)
            meta[k.strip()] = v.strip()
        i += 1
    return meta, i


def parse_histogram(text: str, path: Optional[str] = None) -> DecayHistogram:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    head, i = _split_comments(lines)
    if i >= len(lines) or lines[i].strip() != HISTOGRAM_HEADER:
        raise FormatError(f"expected column header '{HISTOGRAM_HEADER}'", i + 1, path)
    times, counts = [], []
    for j in range(i + 1, len(lines)):
        row = lines[j]
        parts = row.split(",")
        if len(parts) != 2:
            raise FormatError(f"expected 2 columns, got {len(parts)}: {row!r}", j + 1, path)
        try:
            t = float(parts[0])
            c = int(parts[1])
        except ValueError:
            raise FormatError(f"malformed row {row!r}", j + 1, path) from None
        if c < 0 or not math.isfinite(t):
            raise FormatError(f"invalid values in row {row!r}", j + 1, path)
        times.append(t)
        counts.append(c)
    if len(counts) < 2:
        raise FormatError("histogram has fewer than 2 bins", len(lines), path)
    try:
        bw = float(head["bin_width_ns"]) if "bin_width_ns" in head else times[1] - times[0]
        t_start = float(head["t_start_ns"]) if "t_start_ns" in head else times[0] - bw / 2
    except ValueError as exc:
        raise FormatError(f"bad binning header: {exc}", None, path) from None
    if not bw > 0:
        raise FormatError("time column must be increasing", None, path)
    for j, t in enumerate(times):
        if abs(t - (t_start + (j + 0.5) * bw)) > 1e-6 * max(bw, abs(t)):
            raise FormatError(f"time {t!r} is not a bin centre of a uniform grid", i + 2 + j, path)

    geom = None
    if "B_gauss" in head:
        axis = tuple(float(c) for c in head["chiral_axis"].split(",")) if "chiral_axis" in head else None
        kwargs = {"chiral_axis": axis} if axis else {}
        geom = FieldGeometry(float(head["B_gauss"]), float(head.get("theta_deg", 45.0)), float(head.get("phi_deg", 0.0)), **kwargs)
    seed = head.get("seed", "none")
    extra = {k[len("extra."):]: _parse_scalar(v) for k, v in head.items() if k.startswith("extra.")}
    meta = AcquisitionMeta(
        field=geom,
        polarization=head.get("polarization") or None,
        seed=None if seed == "none" else int(seed),
        label=head.get("label", ""),
        extra=extra,
    )
    return DecayHistogram(bw, t_start, counts, meta)


def read_histogram(path) -> DecayHistogram:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(str(exc), None, str(path)) from None
    return parse_histogram(text, str(path))


def write_histogram(path, h: DecayHistogram, chash: str = "none") -> None:
    atomic_write(path, histogram_to_text(h, chash))


# -- key-value reports ------------------------------------------------------------


def kv_text(kind: str, seed, chash: str, items: Iterable[tuple]) -> str:
    lines = header_lines(kind, seed, chash)
    lines += [f"{k} = {fmt(v)}" for k, v in items]
    return "\n".join(lines) + "\n"


def parse_kv(text: str, path: Optional[str] = None) -> dict:
    out = {}
    for n, line in enumerate(text.split("\n"), 1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            body = s[1:].strip()
            if body.startswith("seed:"):
                out.setdefault("_seed", body.split(":", 1)[1].strip())
            elif body.startswith("config_hash:"):
                out.setdefault("_config_hash", body.split(":", 1)[1].strip())
            continue
        if "=" not in s:
            raise FormatError(f"expected 'key = value', got {s!r}", n, path)
        k, v = s.split("=", 1)
        out[k.strip()] = _parse_scalar(v.strip())
    return out


def fit_report_items(r: BiexpFitResult, h: Optional[DecayHistogram] = None) -> list:
    items = [
        ("a_long", r.a_long),
        ("a_short", r.a_short),
        ("tau1_ns", r.tau1),
        ("tau2_ns", r.tau2),
        ("c_offset", r.c_offset),
        ("tau1_err_ns", r.tau1_err),
        ("tau2_err_ns", r.tau2_err),
        ("chi2_reduced", r.chi2_reduced),
        ("converged", r.converged),
        ("model", r.model),
        ("irf_s_ns", float(r.irf.s)),
        ("irf_t0_ns", float(r.irf.t0)),
    ]
    if h is not None and h.meta.field is not None:
        items += [("B_gauss", float(h.meta.field.magnitude)), ("phi_deg", float(h.meta.field.phi))]
    if h is not None and h.meta.polarization is not None:
        items.append(("polarization", h.meta.polarization.value))
    return items


def read_fit_report(path) -> dict:
    return parse_kv(Path(path).read_text(encoding="utf-8"), str(path))


# -- sweep tables ----------------------------------------------------------------


def sweep_points_text(res: SweepResult, seed, chash: str) -> str:
    lines = header_lines("sweep points", seed, chash, [("mode", "oracle" if res.oracle else "monte-carlo")])
    lines.append(POINTS_HEADER)
    for r in res.records:
        lines.append(",".join(fmt(v) for v in (r.phi, r.B, r.polarization, r.tau_long, r.tau_long_err, r.chi2_reduced, r.flag)))
    return "\n".join(lines) + "\n"


def sweep_delta_text(res: SweepResult, seed, chash: str) -> str:
    lines = header_lines("lifetime differences (RCP - LCP)", seed, chash, [("mode", "oracle" if res.oracle else "monte-carlo")])
    lines.append(DELTA_HEADER)
    for d in res.derived:
        lines.append(",".join(fmt(v) for v in (d.phi, d.B, d.dtau, d.dtau_err)))
    return "\n".join(lines) + "\n"


def read_table(path) -> tuple[dict, list]:
    """Comment header and rows (as dicts of strings) of a CSV written here."""
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    head, i = _split_comments(lines)
    cols = lines[i].split(",")
    return head, [dict(zip(cols, row.split(","))) for row in lines[i + 1 :]]


# -- configuration ---------------------------------------------------------------


@dataclass(frozen=True)
class GeometryConfig:
    magnitude: float = 280.0
    theta: float = 45.0
    phi: float = 0.0
    chiral_tilt: float = DEFAULT_CHIRAL_TILT_DEG
    chiral_azimuth: float = DEFAULT_CHIRAL_AZIMUTH_DEG
    chiral_axis: Optional[tuple] = None

    def axis(self) -> tuple:
        if self.chiral_axis is not None:
            return tuple(float(c) for c in self.chiral_axis)
        return tuple(unit_vector(self.chiral_tilt, self.chiral_azimuth).tolist())

    def build(self) -> FieldGeometry:
        return FieldGeometry(self.magnitude, self.theta, self.phi, self.axis())


@dataclass(frozen=True)
class IrfConfig:
    s: float = 0.5
    t0: float = 5.0
    enabled: bool = True

    def build(self) -> IrfModel:
        return IrfModel(self.s, self.t0)


@dataclass(frozen=True)
class SimulateConfig:
    polarization: str = "RCP"
    seed: int = 0

    def __post_init__(self):
        Polarization(self.polarization)
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ValueError("seed must be an unsigned integer")


@dataclass(frozen=True)
class SweepConfig:
    b_values: Optional[list] = None
    b_min: float = 60.0
    b_max: float = 1020.0
    b_step: float = 20.0
    phi_values: tuple = (-40.0, -20.0, 0.0, 20.0, 40.0, 60.0, 80.0)
    polarizations: tuple = ("LCP", "RCP")
    runs_per_point: int = 1
    master_seed: int = 0
    randomize_order: bool = True
    fit_model: str = "tail"
    tail_start: float = 10.0
    workers: int = 1
    oracle: bool = False

    def fields(self) -> tuple:
        if self.b_values is not None:
            return tuple(float(b) for b in self.b_values)
        n = int(math.floor((self.b_max - self.b_min) / self.b_step + 1e-9)) + 1
        return tuple(self.b_min + k * self.b_step for k in range(n))


@dataclass(frozen=True)
class FitSection:
    weighting: str = "model"
    model: str = "biexp"
    max_iterations: int = 400
    gradient_tolerance: float = 1e-10
    window: Optional[tuple] = None

    def build(self) -> FitConfig:
        window = tuple(float(w) for w in self.window) if self.window is not None else None
        return FitConfig(
            max_iterations=self.max_iterations,
            gradient_tolerance=self.gradient_tolerance,
            weighting=self.weighting,
            model=self.model,
            window=window,
        )


@dataclass(frozen=True)
class IoConfig:
    out: Optional[str] = None
    histogram: Optional[str] = None


_SECTIONS = {
    "model": SpinModelParams,
    "geometry": GeometryConfig,
    "irf": IrfConfig,
    "simulate": SimulateConfig,
    "sweep": SweepConfig,
    "fit": FitSection,
    "io": IoConfig,
}


@dataclass(frozen=True)
class RunConfig:
    model: SpinModelParams = dataclasses.field(default_factory=SpinModelParams)
    geometry: GeometryConfig = dataclasses.field(default_factory=GeometryConfig)
    irf: IrfConfig = dataclasses.field(default_factory=IrfConfig)
    simulate: SimulateConfig = dataclasses.field(default_factory=SimulateConfig)
    sweep: SweepConfig = dataclasses.field(default_factory=SweepConfig)
    fit: FitSection = dataclasses.field(default_factory=FitSection)
    io: IoConfig = dataclasses.field(default_factory=IoConfig)

    @property
    def hash(self) -> str:
        return config_hash(self)

    def sweep_plan(self) -> SweepPlan:
        s = self.sweep
        g = self.geometry
        return SweepPlan(
            b_values=s.fields(),
            phi_values=tuple(float(p) for p in s.phi_values),
            theta=g.theta,
            polarizations=tuple(s.polarizations),
            runs_per_point=s.runs_per_point,
            master_seed=s.master_seed,
            randomize_order=s.randomize_order,
            chiral_axis=g.axis(),
            fit_model=s.fit_model,
            tail_start=s.tail_start,
            workers=s.workers,
        )

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(
            self,
            simulate=dataclasses.replace(self.simulate, seed=seed),
            sweep=dataclasses.replace(self.sweep, master_seed=seed),
        )


def _key_lines(text: str) -> dict:
    """Map dotted key paths to 1-based line numbers."""
    lines = {}

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                path = f"{prefix}.{k.value}" if prefix else str(k.value)
                lines[path] = k.start_mark.line + 1
                walk(v, path)

    try:
        walk(yaml.compose(text), "")
    except yaml.YAMLError:
        pass
    return lines


_TUPLE_FIELDS = {"phi_values", "polarizations", "chiral_axis", "window"}


def parse_config(text: str) -> RunConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}", line=mark.line + 1 if mark else None) from None
    doc = {} if doc is None else doc
    lines = _key_lines(text)
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a mapping of sections", line=1)
    sections = {}
    for name, body in doc.items():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section (allowed: {', '.join(_SECTIONS)})", str(name), lines.get(str(name)))
        cls = _SECTIONS[name]
        body = {} if body is None else body
        if not isinstance(body, dict):
            raise ConfigError("section must be a mapping", name, lines.get(name))
        allowed = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in body.items():
            path = f"{name}.{key}"
            if key not in allowed:
                raise ConfigError(f"unknown key (allowed: {', '.join(allowed)})", path, lines.get(path))
            kwargs[key] = tuple(value) if key in _TUPLE_FIELDS and isinstance(value, list) else value
            _check_type(path, value, allowed[key], lines.get(path))
        try:
            sections[name] = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), name, lines.get(name)) from None
    cfg = RunConfig(**sections)
    try:
        cfg.sweep_plan()
        cfg.geometry.build()
        cfg.fit.build()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _check_type(path, value, f, line):
    default = f.default if f.default is not dataclasses.MISSING else (f.default_factory() if f.default_factory is not dataclasses.MISSING else None)
    if value is None:
        if default is not None and not str(f.type).startswith("Optional"):
            raise ConfigError("must not be null", path, line)
        return
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"wrong type {type(value).__name__}", path, line)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(exc)) from None
    return parse_config(text)
