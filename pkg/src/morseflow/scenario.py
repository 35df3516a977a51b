"""Scenario files: JSON descriptions binding a catalog function, flow and
scan configuration, optional covering data, and a named form battery.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import functions
from .connections import ScanConfig
from .derham import AmbientForm, CoordinateForm, DifferentialForm, QuadConfig
from .errors import ScenarioError
from .flow import FlowConfig
from .geometry import EMBEDDED_SURFACE, FLAT_TORUS, STANDARD_MODEL
from .morse import MorseSystem

_KIND_ALIASES = {"flat_torus": FLAT_TORUS, "standard_model": STANDARD_MODEL,
                 "embedded_surface": EMBEDDED_SURFACE}


@dataclass
class Scenario:
    name: str
    function: str
    params: Dict[str, float] = field(default_factory=dict)
    model_kind: Optional[str] = None
    grid_density: int = 16
    flow: FlowConfig = field(default_factory=FlowConfig)
    scan: ScanConfig = field(default_factory=ScanConfig)
    quad: QuadConfig = field(default_factory=QuadConfig)
    covering: Optional[dict] = None
    forms: List[str] = field(default_factory=list)

    def build_system(self) -> MorseSystem:
        sys_ = functions.build_system(self.function, self.params)
        if self.model_kind and sys_.model.kind != self.model_kind:
            raise ScenarioError(
                f"scenario model kind {self.model_kind!r} does not match the "
                f"function's model {sys_.model.kind!r}")
        return sys_

    def build_forms(self, sys_: MorseSystem) -> List[DifferentialForm]:
        return [build_form(sys_, name) for name in self.forms]


def _cfg_from(cls, data: dict, what: str):
    try:
        return cls(**data)
    except TypeError as exc:
        raise ScenarioError(f"bad {what} configuration: {exc}") from exc


def load_scenario(path) -> Scenario:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError("scenario file must hold a JSON object")
    fn = raw.get("function", {})
    name = fn.get("name")
    if name not in functions.catalog_names():
        raise ScenarioError(
            f"unknown function {name!r}; known: "
            f"{', '.join(functions.catalog_names())}")
    params = fn.get("params", {})
    for key, val in params.items():
        if not isinstance(val, (int, float)) or not math.isfinite(val):
            raise ScenarioError(f"parameter {key} must be a finite number")
    model_kind = None
    if "model" in raw:
        kind = raw["model"].get("kind")
        if kind not in _KIND_ALIASES:
            raise ScenarioError(f"unknown model kind {kind!r}")
        model_kind = _KIND_ALIASES[kind]
    scn = Scenario(
        name=raw.get("name", Path(path).stem),
        function=name,
        params=params,
        model_kind=model_kind,
        grid_density=int(raw.get("grid_density", 16)),
        flow=_cfg_from(FlowConfig, raw.get("flow", {}), "flow"),
        scan=_cfg_from(ScanConfig, raw.get("connections", {}), "connections"),
        quad=_cfg_from(QuadConfig, raw.get("quadrature", {}), "quadrature"),
        covering=raw.get("covering"),
        forms=list(raw.get("forms", [])),
    )
    if scn.covering is not None:
        cov = scn.covering
        if not isinstance(cov.get("coordinate"), int):
            raise ScenarioError("covering.coordinate must be an integer")
        ms = cov.get("ms", [cov.get("m")])
        if not all(isinstance(m, int) and m >= 1 for m in ms):
            raise ScenarioError("covering.ms must be positive integers")
    # validate the form names resolve
    sys_ = scn.build_system()
    for fm in scn.forms:
        build_form(sys_, fm)
    return scn


# --- form catalog -------------------------------------------------------------

def _flat_forms() -> Dict[str, CoordinateForm]:
    sin, cos = math.sin, math.cos
    two_pi = 2.0 * math.pi
    return {
        "sin_x": CoordinateForm(
            0, lambda p: sin(p[0]),
            d_coeffs=(lambda p: cos(p[0]), lambda p: 0.0), name="sin_x"),
        "cos_y": CoordinateForm(
            0, lambda p: cos(p[1]),
            d_coeffs=(lambda p: 0.0, lambda p: -sin(p[1])), name="cos_y"),
        "sin_y_dx": CoordinateForm(
            1, (lambda p: sin(p[1]), lambda p: 0.0),
            d_coeffs=lambda p: -cos(p[1]), name="sin_y_dx"),
        "cos_x_dy": CoordinateForm(
            1, (lambda p: 0.0, lambda p: cos(p[0])),
            d_coeffs=lambda p: -sin(p[0]), name="cos_x_dy"),
        "sin_x_sin_y_dx": CoordinateForm(
            1, (lambda p: sin(p[0]) * sin(p[1]), lambda p: 0.0),
            d_coeffs=lambda p: -sin(p[0]) * cos(p[1]), name="sin_x_sin_y_dx"),
        "dx_over_2pi": CoordinateForm(
            1, (lambda p: 1.0 / two_pi, lambda p: 0.0),
            d_coeffs=lambda p: 0.0, name="dx_over_2pi"),
        "dy_over_2pi": CoordinateForm(
            1, (lambda p: 0.0, lambda p: 1.0 / two_pi),
            d_coeffs=lambda p: 0.0, name="dy_over_2pi"),
        "area_form_normalized": CoordinateForm(
            2, lambda p: 1.0 / (4.0 * math.pi ** 2),
            name="area_form_normalized"),
    }


def _ambient_forms() -> Dict[str, AmbientForm]:
    zero = lambda x: 0.0
    one = lambda x: 1.0
    return {
        "x_coord": AmbientForm(
            0, lambda x: x[0], d_coeffs=(one, zero, zero), name="x_coord"),
        "yz": AmbientForm(
            0, lambda x: x[1] * x[2],
            d_coeffs=(zero, lambda x: x[2], lambda x: x[1]), name="yz"),
        "z_dx": AmbientForm(
            1, (lambda x: x[2], zero, zero),
            d_coeffs=(zero, one, zero), name="z_dx"),
        "x_dy_minus_y_dx": AmbientForm(
            1, (lambda x: -x[1], lambda x: x[0], zero),
            d_coeffs=(zero, zero, lambda x: 2.0), name="x_dy_minus_y_dx"),
        "y_dz": AmbientForm(
            1, (zero, zero, lambda x: x[1]),
            d_coeffs=(one, zero, zero), name="y_dz"),
        "area_xy": AmbientForm(
            2, (zero, zero, one), name="area_xy"),
    }


def build_form(sys_: MorseSystem, name: str) -> DifferentialForm:
    catalog = (_flat_forms() if sys_.model.kind != EMBEDDED_SURFACE
               else _ambient_forms())
    if name not in catalog:
        raise ScenarioError(
            f"unknown form {name!r} for model kind {sys_.model.kind}; "
            f"known: {', '.join(sorted(catalog))}")
    return catalog[name]


def bundled_scenario_path(name: str) -> Path:
    return Path(__file__).parent / "scenarios" / f"{name}.json"
