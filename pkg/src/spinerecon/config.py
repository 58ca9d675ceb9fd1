"""Pipeline configuration: defaults, JSON loading, and key=value overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass

import numpy as np

from .anatomy import AxesEstimate
from .registration import MODES, IcpParams

_AXIS_VECTORS = {
    "+x": (1.0, 0.0, 0.0), "-x": (-1.0, 0.0, 0.0),
    "+y": (0.0, 1.0, 0.0), "-y": (0.0, -1.0, 0.0),
    "+z": (0.0, 0.0, 1.0), "-z": (0.0, 0.0, -1.0),
}

DEFAULTS = {
    "axes": {"lateral": "+x", "anterior": "+y", "longitudinal": "+z"},
    "anatomy": {
        "cos_threshold": 0.8,
        "slab_half_width_mm": None,  # null: adaptive, 2x median plate edge
        "use_spine_curve": False,
    },
    "registration": {"mode": "ours", "seed": 0},
    "icp": {
        "max_iterations": 50,
        "convergence_tol_mm": 1e-4,
        "sample_count": 2000,
        "outlier_trim_fraction": 0.0,
    },
    "facet": {
        "target_width_mm": 1.5,  # scalar or per-pair map like {"L1-L2": 1.5}
        "falloff_radius_mm": 5.0,
        "max_passes": 5,
    },
    "output": {"format": "ply"},
}


@dataclass(frozen=True)
class PipelineConfig:
    """Validated view over the configuration tree."""

    raw: dict

    @property
    def orientation_hint(self) -> AxesEstimate:
        axes = self.raw["axes"]
        return AxesEstimate(
            lateral=np.array(_AXIS_VECTORS[axes["lateral"]]),
            anterior=np.array(_AXIS_VECTORS[axes["anterior"]]),
            longitudinal=np.array(_AXIS_VECTORS[axes["longitudinal"]]),
        )

    @property
    def cos_threshold(self) -> float:
        return float(self.raw["anatomy"]["cos_threshold"])

    @property
    def slab_half_width(self) -> float | None:
        v = self.raw["anatomy"]["slab_half_width_mm"]
        return None if v is None else float(v)

    @property
    def use_spine_curve(self) -> bool:
        return bool(self.raw["anatomy"]["use_spine_curve"])

    @property
    def mode(self) -> str:
        return str(self.raw["registration"]["mode"])

    @property
    def seed(self) -> int:
        return int(self.raw["registration"]["seed"])

    @property
    def icp_params(self) -> IcpParams:
        icp = self.raw["icp"]
        return IcpParams(
            max_iterations=int(icp["max_iterations"]),
            convergence_tol=float(icp["convergence_tol_mm"]),
            sample_count=int(icp["sample_count"]),
            outlier_trim_fraction=float(icp["outlier_trim_fraction"]),
        )

    @property
    def facet_target_width(self):
        v = self.raw["facet"]["target_width_mm"]
        return dict(v) if isinstance(v, dict) else float(v)

    @property
    def facet_falloff_radius(self) -> float:
        return float(self.raw["facet"]["falloff_radius_mm"])

    @property
    def facet_max_passes(self) -> int:
        return int(self.raw["facet"]["max_passes"])

    @property
    def mesh_format(self) -> str:
        return str(self.raw["output"]["format"])


def _merge(base: dict, override: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in out:
            raise ValueError(f"unknown config key {path + key!r}")
        if isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _merge(out[key], value, path + key + ".")
        else:
            out[key] = value
    return out


def _coerce(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def build_config(config_path: str | None = None,
                 overrides: list[str] | None = None) -> PipelineConfig:
    """Assemble and validate the configuration.

    `overrides` are "section.key=value" strings; values are parsed as
    JSON when possible, otherwise taken as strings. Everything is
    validated against module preconditions before any work starts.
    """
    raw = copy.deepcopy(DEFAULTS)
    if config_path:
        with open(config_path) as fh:
            raw = _merge(raw, json.load(fh))
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        dotted, value = item.split("=", 1)
        keys = dotted.split(".")
        node = raw
        for key in keys[:-1]:
            if key not in node or not isinstance(node[key], dict):
                raise ValueError(f"unknown config section {dotted!r}")
            node = node[key]
        if keys[-1] not in node:
            raise ValueError(f"unknown config key {dotted!r}")
        node[keys[-1]] = _coerce(value)
    config = PipelineConfig(raw)
    validate_config(config)
    return config


def validate_config(config: PipelineConfig) -> None:
    axes = config.raw["axes"]
    for role in ("lateral", "anterior", "longitudinal"):
        if axes[role] not in _AXIS_VECTORS:
            raise ValueError(
                f"axes.{role} must be one of {sorted(_AXIS_VECTORS)}, got {axes[role]!r}")
    config.orientation_hint  # raises if not right-handed
    if not 0.0 < config.cos_threshold < 1.0:
        raise ValueError("anatomy.cos_threshold must lie in (0, 1)")
    if config.slab_half_width is not None and config.slab_half_width <= 0:
        raise ValueError("anatomy.slab_half_width_mm must be positive or null")
    if config.mode not in MODES:
        raise ValueError(f"registration.mode must be one of {MODES}")
    config.icp_params  # validates itself
    width = config.facet_target_width
    values = width.values() if isinstance(width, dict) else [width]
    if any(float(v) <= 0 for v in values):
        raise ValueError("facet.target_width_mm must be positive")
    if config.facet_falloff_radius <= 0:
        raise ValueError("facet.falloff_radius_mm must be positive")
    if config.facet_max_passes < 1:
        raise ValueError("facet.max_passes must be >= 1")
    if config.mesh_format not in ("ply", "stl", "obj"):
        raise ValueError("output.format must be ply, stl, or obj")


def dump_config(config: PipelineConfig) -> str:
    return json.dumps(config.raw, indent=2)
