"""Run configuration: JSON schema, dataclasses and builders."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import jsonschema
import numpy as np

from .errors import InvalidArgument
from .evolution import DEFAULT_DT, DEFAULT_EPS_DECAY, DriveSpec, StopCondition
from .geometry import AtomArray, CavitySpec, CurvatureProfile, build_cavity, build_planar_array, remove_atoms
from .recoil import DEFAULT_DR

EXPERIMENTS = ("eigenmodes", "decay", "pulse", "steady", "cavity", "sweep")

_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}

SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "arrayrecoil run configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["geometry"],
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "output": {"type": "string"},
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "required": ["nx", "ny", "spacing"],
            "properties": {
                "kind": {"enum": ["planar", "cavity"]},
                "nx": {"type": "integer", "minimum": 1},
                "ny": {"type": "integer", "minimum": 1},
                "spacing": _POS,
                "polarization": {"enum": ["sigma_plus", "x", "y", "z"]},
                "defects": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 3},
                },
                "cavity": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["separation"],
                    "properties": {
                        "separation": _POS,
                        "profile": {"enum": ["flat", "spherical", "parabolic"]},
                        "radius": _POS,
                        "focus": _POS,
                    },
                },
            },
        },
        "drive": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rabi": _NONNEG,
                "detuning": {"oneOf": [{"type": "number"}, {"const": "peak"}]},
                "profile": {"enum": ["off", "cw", "gaussian"]},
                "width": _POS,
            },
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["ground", "eigenstate", "atom"]},
                "mode": {"oneOf": [{"type": "integer", "minimum": 0}, {"const": "most_subradiant"}]},
                "atom": {"type": "integer", "minimum": 0},
            },
        },
        "numerics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt": _POS,
                "dr": {"type": "number", "minimum": 1e-4, "maximum": 1e-2},
                "eps_decay": _POS,
                "t_max": _POS,
                "steady_tol": _POS,
                "threads": {"type": "integer", "minimum": 1},
                "evaluator": {"enum": ["analytic", "propagation"]},
                "fast": {"type": "boolean"},
                "richardson": {"type": "boolean"},
                "sample_every": {"type": "integer", "minimum": 1},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["axes", "quantity"],
            "properties": {
                "quantity": {"enum": ["mode_contribution", "cavity_intensity", "scattering", "reflectance"]},
                "axes": {
                    "type": "array",
                    "minItems": 1,
                    "maxItems": 2,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["name"],
                        "properties": {
                            "name": {"enum": ["detuning", "separation", "spacing", "rabi"]},
                            "values": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                            "start": {"type": "number"},
                            "stop": {"type": "number"},
                            "num": {"type": "integer", "minimum": 1},
                        },
                        "oneOf": [{"required": ["values"]}, {"required": ["start", "stop", "num"]}],
                    },
                },
                "modes": {"type": "integer", "minimum": 1},
            },
        },
    },
}

_POLARIZATIONS = {
    "sigma_plus": None,
    "x": np.array([1.0, 0.0, 0.0]),
    "y": np.array([0.0, 1.0, 0.0]),
    "z": np.array([0.0, 0.0, 1.0]),
}


@dataclass
class GeometryConfig:
    nx: int
    ny: int
    spacing: float
    kind: str = "planar"
    polarization: str = "sigma_plus"
    defects: list = field(default_factory=list)
    cavity: Optional[dict] = None

    def cavity_spec(self) -> CavitySpec:
        cav = self.cavity or {}
        profile = CurvatureProfile(cav.get("profile", "flat"), radius=cav.get("radius"), focus=cav.get("focus"))
        pol = _POLARIZATIONS[self.polarization]
        kwargs = {} if pol is None else {"polarization": pol}
        return CavitySpec(self.nx, self.ny, self.spacing, cav["separation"], profile, **kwargs)

    def build(self) -> AtomArray:
        if self.kind == "cavity":
            if not self.cavity:
                raise InvalidArgument("cavity geometry needs a 'cavity' block")
            array = build_cavity(self.cavity_spec())
        else:
            array = build_planar_array(self.nx, self.ny, self.spacing, _POLARIZATIONS[self.polarization])
        if self.defects:
            array = remove_atoms(array, self.defects)
        return array


@dataclass
class DriveConfig:
    rabi: float = 0.0
    detuning: Any = 0.0
    profile: str = "off"
    width: Optional[float] = None

    def build(self, detuning: Optional[float] = None) -> DriveSpec:
        d = self.detuning if detuning is None else detuning
        if d == "peak":
            raise InvalidArgument("resolve the peak detuning before building the drive")
        return DriveSpec(self.rabi, float(d), self.profile, self.width)


@dataclass
class InitialConfig:
    kind: str = "ground"
    mode: Any = "most_subradiant"
    atom: int = 0


@dataclass
class NumericsConfig:
    dt: float = DEFAULT_DT
    dr: float = DEFAULT_DR
    eps_decay: float = DEFAULT_EPS_DECAY
    t_max: float = 200.0
    steady_tol: float = 1e-9
    threads: int = 1
    evaluator: str = "analytic"
    fast: bool = False
    richardson: bool = True
    sample_every: int = 10

    def stop(self, kind: str = "decay", tail: bool = True) -> StopCondition:
        return StopCondition(kind, self.t_max, self.eps_decay, self.steady_tol, tail)


@dataclass
class SweepAxis:
    name: str
    values: list

    @classmethod
    def from_dict(cls, d: dict) -> "SweepAxis":
        if "values" in d:
            return cls(d["name"], [float(v) for v in d["values"]])
        return cls(d["name"], [float(v) for v in np.linspace(d["start"], d["stop"], d["num"])])


@dataclass
class SweepConfig:
    quantity: str
    axes: list
    modes: int = 4

    def points(self) -> list[tuple]:
        if len(self.axes) == 1:
            return [(v,) for v in self.axes[0].values]
        return [(a, b) for a in self.axes[0].values for b in self.axes[1].values]


@dataclass
class RunConfig:
    geometry: GeometryConfig
    drive: DriveConfig = field(default_factory=DriveConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    numerics: NumericsConfig = field(default_factory=NumericsConfig)
    sweep: Optional[SweepConfig] = None
    experiment: Optional[str] = None
    output: Optional[str] = None
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        validate(d)
        sweep = None
        if "sweep" in d:
            s = d["sweep"]
            sweep = SweepConfig(s["quantity"], [SweepAxis.from_dict(a) for a in s["axes"]], s.get("modes", 4))
        return cls(
            geometry=GeometryConfig(**d["geometry"]),
            drive=DriveConfig(**d.get("drive", {})),
            initial=InitialConfig(**d.get("initial", {})),
            numerics=NumericsConfig(**d.get("numerics", {})),
            sweep=sweep,
            experiment=d.get("experiment"),
            output=d.get("output"),
            raw=d,
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("raw")
        return out

    def hash(self) -> str:
        return config_hash(self.raw)


def validate(d: dict) -> None:
    """Raise ``jsonschema.ValidationError`` if ``d`` does not follow the schema."""
    jsonschema.validate(d, SCHEMA)


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
