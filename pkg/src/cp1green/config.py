"""Run configuration schema.

A run is described by one JSON file.  Every section has defaults, unknown
keys are rejected, and the fully materialized config is echoed next to the
results so a run can be repeated from its own output.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .exceptions import ConfigurationError

Command = Literal["envelope", "sections", "compare", "pullback", "sweep", "hprinciple", "diagnostics"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridConfig(_Strict):
    half_width: float = Field(1.25, gt=1.0)
    n_cells: int = Field(400, ge=4)


class SetConfig(_Strict):
    name: Literal["circle", "disk", "segment", "annulus", "whole"] = "circle"
    params: list[float | list[float]] = Field(default_factory=list)

    def spec(self) -> str:
        """Catalog string understood by ``parse_set``."""
        return f"{self.name}({_args(self.params)})"


class WeightConfig(_Strict):
    name: Literal["zero", "constant", "fs_potential", "log_dist", "radial_power", "table"] = "zero"
    params: list[float | list[float]] = Field(default_factory=list)
    path: Optional[str] = None

    @model_validator(mode="after")
    def _table_path(self):
        if self.name == "table" and not self.path:
            raise ValueError("Q.path is required for a table weight")
        if self.name != "table" and self.path is not None:
            raise ValueError("Q.path is only used by the table weight")
        return self

    def spec(self) -> str:
        if self.name == "table":
            return f"table:{self.path}"
        return f"{self.name}({_args(self.params)})"


class MapConfig(_Strict):
    kind: Literal["identity", "power", "mobius", "custom"] = "power"
    degree: int = Field(2, ge=1)
    theta: float = math.pi / 2
    P: Optional[list[list[float]]] = None
    Q: Optional[list[list[float]]] = None

    @model_validator(mode="after")
    def _custom(self):
        if self.kind == "custom" and (self.P is None or self.Q is None):
            raise ValueError("map.P and map.Q are required for a custom map")
        return self


class ToleranceConfig(_Strict):
    solver_tol: float = Field(1e-9, gt=0)
    solver_method: Literal["howard", "gauss_seidel"] = "howard"
    max_sweeps: int = Field(1_000_000, ge=1)
    roundtrip_tol: float = Field(1e-10, gt=0)


class SweepConfig(_Strict):
    direction: Literal["up", "down"] = "up"
    ns: list[int] = Field(default_factory=lambda: [1, 2, 4, 8, 16])

    @field_validator("ns")
    @classmethod
    def _positive(cls, v):
        if not v or any(n < 1 for n in v):
            raise ValueError("sweep.ns must be a non-empty list of positive integers")
        return v


class SandwichConfig(_Strict):
    alpha: Optional[float] = Field(None, gt=0)
    beta: Optional[float] = Field(None, gt=0)


class GaugeConfig(_Strict):
    kind: Literal["constant", "harmonic", "bump"] = "bump"
    amplitude: float = 0.1


class RunConfig(_Strict):
    command: Command
    grid: GridConfig = GridConfig()
    K: SetConfig = SetConfig()
    Q: WeightConfig = WeightConfig()
    method: Literal["relax", "sections", "both"] = "relax"
    degrees: list[int] = Field(default_factory=lambda: [10, 20, 40])
    section_stride: int = Field(4, ge=1)
    map: Optional[MapConfig] = None
    sandwich: SandwichConfig = SandwichConfig()
    sweep: SweepConfig = SweepConfig()
    gauge: GaugeConfig = GaugeConfig()
    tolerances: ToleranceConfig = ToleranceConfig()
    output_dir: str = "out"
    seed: int = 0

    @field_validator("degrees")
    @classmethod
    def _degrees(cls, v):
        if not v or any(n < 1 for n in v):
            raise ValueError("degrees must be a non-empty list of positive integers")
        return v

    @model_validator(mode="after")
    def _command_needs(self):
        if self.command == "pullback" and self.map is None:
            raise ValueError("map is required for the pullback command")
        if self.command == "compare" and self.method != "both":
            raise ValueError("compare needs method = 'both'")
        return self

    def effective(self) -> dict:
        return self.model_dump(mode="json")


def _args(params) -> str:
    out = []
    for p in params:
        if isinstance(p, list):
            if len(p) != 2:
                raise ConfigurationError(f"complex parameter must be [re, im], got {p}")
            out.append(repr(complex(p[0], p[1])).strip("()"))
        else:
            out.append(repr(float(p)))
    return ",".join(out)


def _describe(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        key = ".".join(str(x) for x in e["loc"]) or "<root>"
        if e["type"] == "extra_forbidden":
            lines.append(f"unknown key {key!r}")
        else:
            lines.append(f"{key}: {e['msg']}")
    return "; ".join(lines)


def load_config(path) -> RunConfig:
    """Parse and validate a config file; errors name the offending key."""
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file {str(p)!r} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {str(p)!r} is not valid JSON: {exc}") from None
    return parse_config(raw)


def parse_config(raw) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object")
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigurationError(_describe(exc)) from None


__all__ = ["RunConfig", "load_config", "parse_config"]
