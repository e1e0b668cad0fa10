"""Run configuration: a versioned YAML tree with dataclass mirrors.

Example::

    schema_version: 1
    lattice: {n_atoms: 4, n_sites: 8, J: 1.0, U: 0.0, boundary: periodic}
    geometry: {preset: alternating-B2, source: direct, J2: 1.0, C: 1.0}
    initial: "0,0,1,1,1,1,0,0"
    dynamics: {kappa: 0.1, total_time: 40.0, n_trajectories: 100, seed: 2024}
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

SCHEMA_VERSION = 1
GEOMETRY_PRESETS = ("uniform-B1", "alternating-B2", "custom")
SOURCES = ("direct", "wannier")


class ConfigError(ValueError):
    pass


@dataclass
class LatticeConfig:
    n_atoms: int = 4
    n_sites: int = 8
    J: float = 1.0
    U: float = 0.0
    boundary: str = "periodic"


@dataclass
class GeometryConfig:
    preset: str = "alternating-B2"
    source: str = "direct"
    J1: float = 1.0
    J2: float = 1.0
    C: Any = 1.0
    sigma: float = 0.2
    K: int | None = None
    phi_in: float | None = None
    kx_in: float | None = None
    kx_out: float | None = None
    phi_out: float | None = None

    @property
    def C_complex(self) -> complex:
        if isinstance(self.C, (list, tuple)):
            return complex(self.C[0], self.C[1])
        return complex(self.C)


@dataclass
class DynamicsConfig:
    kappa: float = 0.1
    total_time: float = 40.0
    max_dt: float = 0.01
    record_interval: float = 0.1
    n_trajectories: int = 100
    seed: int = 2024
    master_dt: float = 0.02
    master_record_interval: float = 1.0


@dataclass
class OutputConfig:
    directory: str = "out"
    formats: list[str] = field(default_factory=lambda: ["csv", "json"])
    plots: bool = True
    event_logs: bool = True


@dataclass
class AnalysisConfig:
    subspaces: list[str] = field(default_factory=lambda: ["measurement", "conserved", "emergent"])
    compare_trajectories: int = 0
    qnd_min_samples: int = 100
    qnd_times: list[float] = field(default_factory=lambda: [2.5, 5.0, 10.0])


@dataclass
class RunConfig:
    lattice: LatticeConfig = field(default_factory=LatticeConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    initial: Any = "0,0,1,1,1,1,0,0"
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    schema_version: int = SCHEMA_VERSION

    def validate(self) -> "RunConfig":
        lat, geo, dyn = self.lattice, self.geometry, self.dynamics
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if lat.n_sites < 1 or lat.n_atoms < 0:
            raise ConfigError("lattice needs n_sites >= 1 and n_atoms >= 0")
        if lat.boundary not in ("open", "periodic"):
            raise ConfigError(f"unknown boundary {lat.boundary!r}")
        if geo.preset not in GEOMETRY_PRESETS:
            raise ConfigError(f"unknown geometry preset {geo.preset!r}; choose from {GEOMETRY_PRESETS}")
        if geo.source not in SOURCES:
            raise ConfigError(f"unknown coefficient source {geo.source!r}")
        if geo.preset == "custom":
            if geo.source != "wannier":
                raise ConfigError("custom geometry requires source: wannier")
            if geo.kx_in is None or geo.kx_out is None:
                raise ConfigError("custom geometry needs kx_in and kx_out")
        if dyn.kappa < 0 or dyn.total_time <= 0 or dyn.max_dt <= 0:
            raise ConfigError("dynamics needs kappa >= 0, total_time > 0, max_dt > 0")
        if dyn.n_trajectories < 1:
            raise ConfigError("n_trajectories must be >= 1")
        for f in self.outputs.formats:
            if f not in ("csv", "json"):
                raise ConfigError(f"unknown output format {f!r}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def content_hash(self) -> str:
        """git blob hash of the canonical YAML form."""
        body = self.dumps().encode()
        return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


_SECTIONS = {
    "lattice": LatticeConfig,
    "geometry": GeometryConfig,
    "dynamics": DynamicsConfig,
    "outputs": OutputConfig,
    "analysis": AnalysisConfig,
}


def _build(cls, data, where):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {where!r} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where!r}: {sorted(unknown)}")
    return cls(**data)


def from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    unknown = set(data) - set(_SECTIONS) - {"initial", "schema_version"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    kwargs = {name: _build(cls, data.get(name), name) for name, cls in _SECTIONS.items()}
    cfg = RunConfig(**kwargs, schema_version=data.get("schema_version", SCHEMA_VERSION))
    if "initial" in data:
        cfg.initial = data["initial"]
    return cfg.validate()


def loads(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    try:
        return from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text)
