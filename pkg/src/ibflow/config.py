"""Case configuration: dataclasses, strict YAML parsing, round-trip serialization.

Unknown keys are rejected with the offending field named; all dimensioned
values are SI (metres, seconds, Pa, kg/m^3). ``parse(serialize(c))`` is the
identity on the dictionary form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ConfigurationError


def _check_keys(d: dict, allowed, where: str):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigurationError(
            f"unknown key(s) {sorted(unknown)} in {where}; allowed: {sorted(allowed)}"
        )


def _require(d: dict, key: str, where: str):
    if key not in d or d[key] is None:
        raise ConfigurationError(f"missing required field '{key}' in {where}")
    return d[key]


@dataclass
class GridSection:
    box_min: list
    box_max: list
    h: float
    crop_band_cells: float | None = 3.0    # crop band in units of h; None = full box

    @classmethod
    def from_dict(cls, d: dict):
        _check_keys(d, ("box_min", "box_max", "h", "crop_band_cells"), "grid")
        return cls(
            box_min=[float(v) for v in _require(d, "box_min", "grid")],
            box_max=[float(v) for v in _require(d, "box_max", "grid")],
            h=float(_require(d, "h", "grid")),
            crop_band_cells=None if d.get("crop_band_cells") is None
            else float(d["crop_band_cells"]),
        )

    def to_dict(self):
        return {"box_min": list(self.box_min), "box_max": list(self.box_max),
                "h": self.h, "crop_band_cells": self.crop_band_cells}


@dataclass
class GeometrySection:
    kind: str                      # "cylinder" | "bend" | "stl" | "none"
    params: dict = field(default_factory=dict)

    _KINDS = ("cylinder", "bend", "stl", "none")

    @classmethod
    def from_dict(cls, d: dict):
        _check_keys(d, ("kind", "params"), "geometry")
        kind = _require(d, "kind", "geometry")
        if kind not in cls._KINDS:
            raise ConfigurationError(f"geometry kind must be one of {cls._KINDS}, got {kind!r}")
        return cls(kind=kind, params=dict(d.get("params") or {}))

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params)}


@dataclass
class MarkersSection:
    target_ds: float | None = None    # default: one grid spacing
    seed: int = 0
    end_margin_cells: float = 2.0     # keep markers this many h away from box faces

    @classmethod
    def from_dict(cls, d: dict):
        _check_keys(d, ("target_ds", "seed", "end_margin_cells"), "markers")
        return cls(
            target_ds=None if d.get("target_ds") is None else float(d["target_ds"]),
            seed=int(d.get("seed", 0)),
            end_margin_cells=float(d.get("end_margin_cells", 2.0)),
        )

    def to_dict(self):
        return {"target_ds": self.target_ds, "seed": self.seed,
                "end_margin_cells": self.end_margin_cells}


@dataclass
class FluidSection:
    rho: float
    mu: float

    @classmethod
    def from_dict(cls, d: dict):
        _check_keys(d, ("rho", "mu"), "fluid")
        return cls(rho=float(_require(d, "rho", "fluid")),
                   mu=float(_require(d, "mu", "fluid")))

    def to_dict(self):
        return {"rho": self.rho, "mu": self.mu}


@dataclass
class PatchSection:
    kind: str
    face: str | None = None
    disk: dict | None = None
    value: object = None
    profile: dict | None = None
    table: list | None = None
    name: str = ""

    @classmethod
    def from_dict(cls, d: dict, idx: int):
        where = f"bcs[{idx}]"
        _check_keys(d, ("kind", "face", "disk", "value", "profile", "table", "name"), where)
        kind = _require(d, "kind", where)
        disk = d.get("disk")
        if disk is not None:
            _check_keys(disk, ("center", "radius"), where + ".disk")
            disk = {"center": [float(v) for v in disk["center"]],
                    "radius": float(disk["radius"])}
        profile = d.get("profile")
        if profile is not None:
            _check_keys(profile, ("type", "peak", "direction"), where + ".profile")
            profile = {"type": profile["type"], "peak": float(profile["peak"]),
                       "direction": [float(v) for v in profile["direction"]]}
        table = d.get("table")
        if table is not None:
            table = [[float(a), float(b)] for a, b in table]
        value = d.get("value")
        if isinstance(value, (list, tuple)):
            value = [float(v) for v in value]
        elif value is not None:
            value = float(value)
        return cls(kind=kind, face=d.get("face"), disk=disk, value=value,
                   profile=profile, table=table, name=d.get("name", ""))

    def to_dict(self):
        out = {"kind": self.kind}
        for key in ("face", "disk", "value", "profile", "table"):
            v = getattr(self, key)
            if v is not None:
                out[key] = v
        if self.name:
            out["name"] = self.name
        return out


@dataclass
class TimeSection:
    dt: float
    t_end: float | None = None
    max_steps: int | None = None
    steady_tol: float = 1e-8
    monitor: str = "verbatim"

    @classmethod
    def from_dict(cls, d: dict):
        _check_keys(d, ("dt", "t_end", "max_steps", "steady_tol", "monitor"), "time")
        return cls(
            dt=float(_require(d, "dt", "time")),
            t_end=None if d.get("t_end") is None else float(d["t_end"]),
            max_steps=None if d.get("max_steps") is None else int(d["max_steps"]),
            steady_tol=float(d.get("steady_tol", 1e-8)),
            monitor=str(d.get("monitor", "verbatim")),
        )

    def to_dict(self):
        return {"dt": self.dt, "t_end": self.t_end, "max_steps": self.max_steps,
                "steady_tol": self.steady_tol, "monitor": self.monitor}


@dataclass
class SolverSection:
    momentum_tol: float = 1e-8
    poisson_tol: float = 1e-10
    poisson: str = "direct"          # "direct" | "iterative"
    advection: str = "central"       # "central" | "upwind"

    @classmethod
    def from_dict(cls, d: dict):
        _check_keys(d, ("momentum_tol", "poisson_tol", "poisson", "advection"), "solver")
        return cls(
            momentum_tol=float(d.get("momentum_tol", 1e-8)),
            poisson_tol=float(d.get("poisson_tol", 1e-10)),
            poisson=str(d.get("poisson", "direct")),
            advection=str(d.get("advection", "central")),
        )

    def to_dict(self):
        return {"momentum_tol": self.momentum_tol, "poisson_tol": self.poisson_tol,
                "poisson": self.poisson, "advection": self.advection}


@dataclass
class OutputSection:
    fields: bool = True
    log: bool = True
    surface: bool = True
    probes: list = field(default_factory=list)   # {"name", "start", "end", "n"}

    @classmethod
    def from_dict(cls, d: dict):
        _check_keys(d, ("fields", "log", "surface", "probes"), "output")
        probes = []
        for i, p in enumerate(d.get("probes") or []):
            _check_keys(p, ("name", "start", "end", "n"), f"output.probes[{i}]")
            probes.append({
                "name": str(p["name"]),
                "start": [float(v) for v in p["start"]],
                "end": [float(v) for v in p["end"]],
                "n": int(p["n"]),
            })
        return cls(fields=bool(d.get("fields", True)), log=bool(d.get("log", True)),
                   surface=bool(d.get("surface", True)), probes=probes)

    def to_dict(self):
        return {"fields": self.fields, "log": self.log, "surface": self.surface,
                "probes": [dict(p) for p in self.probes]}


@dataclass
class ErrorCheckSection:
    kind: str                        # "poiseuille"
    radius: float
    dpdz: float
    axis: int = 0
    center: list = field(default_factory=lambda: [0.0, 0.0, 0.0])

    @classmethod
    def from_dict(cls, d: dict):
        _check_keys(d, ("kind", "radius", "dpdz", "axis", "center"), "error_check")
        kind = _require(d, "kind", "error_check")
        if kind != "poiseuille":
            raise ConfigurationError(f"unknown error_check kind {kind!r}")
        return cls(kind=kind, radius=float(_require(d, "radius", "error_check")),
                   dpdz=float(_require(d, "dpdz", "error_check")),
                   axis=int(d.get("axis", 0)),
                   center=[float(v) for v in d.get("center", [0.0, 0.0, 0.0])])

    def to_dict(self):
        return {"kind": self.kind, "radius": self.radius, "dpdz": self.dpdz,
                "axis": self.axis, "center": list(self.center)}


_TOP_KEYS = ("name", "grid", "geometry", "markers", "fluid", "bcs", "time",
             "solver", "output", "error_check", "ib_enabled", "wss")


@dataclass
class CaseConfig:
    name: str
    grid: GridSection
    geometry: GeometrySection
    fluid: FluidSection
    bcs: list
    time: TimeSection
    markers: MarkersSection = field(default_factory=MarkersSection)
    solver: SolverSection = field(default_factory=SolverSection)
    output: OutputSection = field(default_factory=OutputSection)
    error_check: ErrorCheckSection | None = None
    ib_enabled: bool = True
    wss: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "CaseConfig":
        if not isinstance(d, dict):
            raise ConfigurationError("config root must be a mapping")
        _check_keys(d, _TOP_KEYS, "config")
        bcs = d.get("bcs") or []
        return cls(
            name=str(_require(d, "name", "config")),
            grid=GridSection.from_dict(_require(d, "grid", "config")),
            geometry=GeometrySection.from_dict(d.get("geometry") or {"kind": "none"}),
            markers=MarkersSection.from_dict(d.get("markers") or {}),
            fluid=FluidSection.from_dict(_require(d, "fluid", "config")),
            bcs=[PatchSection.from_dict(p, i) for i, p in enumerate(bcs)],
            time=TimeSection.from_dict(_require(d, "time", "config")),
            solver=SolverSection.from_dict(d.get("solver") or {}),
            output=OutputSection.from_dict(d.get("output") or {}),
            error_check=None if d.get("error_check") is None
            else ErrorCheckSection.from_dict(d["error_check"]),
            ib_enabled=bool(d.get("ib_enabled", True)),
            wss=bool(d.get("wss", False)),
        )

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "grid": self.grid.to_dict(),
            "geometry": self.geometry.to_dict(),
            "markers": self.markers.to_dict(),
            "fluid": self.fluid.to_dict(),
            "bcs": [p.to_dict() for p in self.bcs],
            "time": self.time.to_dict(),
            "solver": self.solver.to_dict(),
            "output": self.output.to_dict(),
            "ib_enabled": self.ib_enabled,
            "wss": self.wss,
        }
        if self.error_check is not None:
            out["error_check"] = self.error_check.to_dict()
        return out


def load_config(path) -> CaseConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return CaseConfig.from_dict(data)


def save_config(config: CaseConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)
