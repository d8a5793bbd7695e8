"""Run configuration: YAML schema, validation and hashing."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .bath import CHANNELS, BathSpec
from .model import VARIATION_KINDS, BasisSpec, ModelParameters, Variation

SCHEMA_VERSION = 1

_TIME_UNITS = {"fs": 1e-3, "ps": 1.0, "ns": 1e3}
_TIME_RE = re.compile(r"^\s*([-+0-9.eE]+)\s*(fs|ps|ns)\s*$")

INITIAL_KINDS = ("fc_pure", "fc_mixed")
MODES = ("secular", "nonsecular", "hybrid")
SECTORS = ("even", "odd", "both")


class ConfigError(ValueError):
    """Validation failure; ``field`` is the dotted path of the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def parse_time(value, field: str = "time") -> float:
    """``"10 ns"`` -> 10000.0 (ps).  A unit suffix is required."""
    if isinstance(value, str):
        m = _TIME_RE.match(value)
        if m:
            t = float(m.group(1)) * _TIME_UNITS[m.group(2)]
            if not math.isfinite(t) or t < 0:
                raise ConfigError(field, f"time must be finite and >= 0, got {value!r}")
            return t
    raise ConfigError(field, f"expected a time with unit suffix fs/ps/ns, got {value!r}")


def format_time(t_ps: float) -> str:
    for unit, scale in (("ns", 1e3), ("ps", 1.0)):
        if t_ps >= scale and float(repr(t_ps / scale)) * scale == t_ps:
            return f"{t_ps / scale!r} {unit}"
    return f"{t_ps * 1e3!r} fs" if t_ps < 1 else f"{t_ps!r} ps"


@dataclass(frozen=True)
class SweepSpec:
    """One parameter, a strictly monotone grid.

    ``E1`` values are offsets in eV (``E1 + V1`` held fixed); the others are
    multiplicative factors.
    """

    parameter: str
    values: tuple[float, ...]

    def __post_init__(self):
        if self.parameter not in VARIATION_KINDS:
            raise ConfigError("sweep.parameter", f"must be one of {VARIATION_KINDS}, got {self.parameter!r}")
        v = tuple(float(x) for x in self.values)
        if not v:
            raise ConfigError("sweep.values", "grid is empty")
        if len(v) > 1:
            d = [b - a for a, b in zip(v, v[1:])]
            if not (all(x > 0 for x in d) or all(x < 0 for x in d)):
                raise ConfigError("sweep.values", "grid must be strictly monotone")
        object.__setattr__(self, "values", v)

    def variations(self) -> list[Variation]:
        return [Variation(self.parameter, x) for x in self.values]

    @property
    def identity(self) -> Variation:
        return Variation(self.parameter, 0.0 if self.parameter == "E1" else 1.0)

    @classmethod
    def linspace(cls, parameter: str, lo: float, hi: float, n: int) -> "SweepSpec":
        step = (hi - lo) / (n - 1) if n > 1 else 0.0
        return cls(parameter, tuple(round(lo + i * step, 12) for i in range(n)))


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "out"
    trajectory_csv: bool = True
    eigensystem_blob: bool = True
    rates_triplets: bool = True


@dataclass(frozen=True)
class AnalysisSpec:
    bands: tuple[tuple[float, float], ...] = ((0.0, 4.0), (4.0, 6.4))
    k_local: int = 2
    tree_degree: int = 2
    transient_window: float = 0.5  # ps


@dataclass(frozen=True)
class RunConfig:
    model: ModelParameters
    basis: BasisSpec
    baths: tuple[BathSpec, ...]
    initial: str = "fc_pure"
    mode: str = "hybrid"
    t_record: float = 1.0e4  # ps
    t_switch: float = 10.0  # ps
    integrator: str = "chebyshev"
    rtol: float = 1e-8
    sector: str = "even"
    sweep: SweepSpec | None = None
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)
    outputs: OutputSpec = field(default_factory=OutputSpec)

    def __post_init__(self):
        if self.initial not in INITIAL_KINDS:
            raise ConfigError("initial", f"must be one of {INITIAL_KINDS}")
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}")
        if self.sector not in SECTORS:
            raise ConfigError("sector", f"must be one of {SECTORS}")
        if self.integrator not in ("chebyshev", "dop853"):
            raise ConfigError("integrator", "must be chebyshev or dop853")
        if not self.t_record > 0:
            raise ConfigError("t_record", "must be > 0")
        if not 0 < self.rtol < 1:
            raise ConfigError("rtol", "must lie in (0, 1)")
        if not self.baths:
            raise ConfigError("baths", "at least one bath is required")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @property
    def parities(self) -> tuple[int, ...]:
        return {"even": (1,), "odd": (-1,), "both": (1, -1)}[self.sector]

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "schema_version": SCHEMA_VERSION,
            "model": self.model.to_dict(),
            "basis": self.basis.to_dict(),
            "baths": [
                {"channel": b.channel, "eta": b.eta, "omega_c": b.omega_c, "temperature": b.temperature}
                for b in self.baths
            ],
            "initial": self.initial,
            "mode": self.mode,
            "t_record": format_time(self.t_record),
            "t_switch": format_time(self.t_switch),
            "integrator": self.integrator,
            "rtol": self.rtol,
            "sector": self.sector,
            "analysis": {
                "bands": [list(b) for b in self.analysis.bands],
                "k_local": self.analysis.k_local,
                "tree_degree": self.analysis.tree_degree,
                "transient_window": format_time(self.analysis.transient_window),
            },
            "outputs": dataclasses.asdict(self.outputs),
        }
        if self.sweep is not None:
            d["sweep"] = {"parameter": self.sweep.parameter, "values": list(self.sweep.values)}
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a mapping")
        raw = copy.deepcopy(raw)
        version = raw.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ConfigError("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")
        known = {
            "model", "basis", "baths", "initial", "mode", "t_record", "t_switch",
            "integrator", "rtol", "sector", "sweep", "analysis", "outputs",
        }
        _no_extras(raw, known, "")
        model = _build("model", ModelParameters, raw.get("model", {}))
        basis = _build("basis", BasisSpec, raw.get("basis", {}))
        baths = tuple(_bath(i, b) for i, b in enumerate(_require(raw, "baths", "")))
        kw = {}
        for key in ("initial", "mode", "integrator", "sector"):
            if key in raw:
                kw[key] = str(raw[key])
        if "rtol" in raw:
            kw["rtol"] = _float(raw["rtol"], "rtol")
        for key in ("t_record", "t_switch"):
            if key in raw:
                kw[key] = parse_time(raw[key], key)
        if raw.get("sweep") is not None:
            sw = raw["sweep"]
            _no_extras(sw, {"parameter", "values"}, "sweep.")
            kw["sweep"] = SweepSpec(_require(sw, "parameter", "sweep."), tuple(_require(sw, "values", "sweep.")))
        if "analysis" in raw:
            a = dict(raw["analysis"])
            _no_extras(a, {"bands", "k_local", "tree_degree", "transient_window"}, "analysis.")
            if "bands" in a:
                a["bands"] = tuple(tuple(float(x) for x in b) for b in a["bands"])
            if "transient_window" in a:
                a["transient_window"] = parse_time(a["transient_window"], "analysis.transient_window")
            kw["analysis"] = AnalysisSpec(**a)
        if "outputs" in raw:
            kw["outputs"] = _build("outputs", OutputSpec, raw["outputs"])
        return cls(model=model, basis=basis, baths=baths, **kw)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def hash(self) -> str:
        """SHA-256 of the canonical JSON form, output location excluded."""
        d = self.to_dict()
        d.pop("outputs")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _require(d: dict, key: str, prefix: str):
    if key not in d or d[key] is None:
        hint = ""
        if key in ("eta", "omega_c"):
            hint = " (bath parameters have no published default and must be set explicitly)"
        raise ConfigError(prefix + key, "required" + hint)
    return d[key]


def _no_extras(d: dict, allowed: set, prefix: str):
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(prefix + extra[0], "unknown field")


def _float(v, field: str) -> float:
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(field, f"expected a number, got {v!r}") from None


def _build(name: str, cls, raw):
    if not isinstance(raw, dict):
        raise ConfigError(name, "expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    _no_extras(raw, names, name + ".")
    try:
        return cls(**raw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, str(exc)) from None


def _bath(i: int, raw) -> BathSpec:
    prefix = f"baths[{i}]."
    if not isinstance(raw, dict):
        raise ConfigError(f"baths[{i}]", "expected a mapping")
    _no_extras(raw, {"channel", "eta", "omega_c", "temperature"}, prefix)
    channel = _require(raw, "channel", prefix)
    if channel not in CHANNELS:
        raise ConfigError(prefix + "channel", f"must be one of {CHANNELS}")
    eta = _float(_require(raw, "eta", prefix), prefix + "eta")
    wc = _float(_require(raw, "omega_c", prefix), prefix + "omega_c")
    temp = _float(raw.get("temperature", 0.0), prefix + "temperature")
    try:
        return BathSpec(channel, eta, wc, temp)
    except ValueError as exc:
        raise ConfigError(f"baths[{i}]", str(exc)) from None


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    return RunConfig.from_dict(raw)


def save_config(config: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(config.to_yaml())
    return path
