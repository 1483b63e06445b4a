"""
Optimization parameters and configuration layering for the gripper co-design toolkit.

Precedence (lowest to highest): built-in defaults, named preset, environment
variables (loaded through python-dotenv), problem-file parameters, explicit
overrides such as CLI flags.
"""

import logging
import math
import os
from typing import Any, Dict, Literal, Mapping, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, model_validator

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)


class ParameterConfig:
    """Defaults, presets and environment bindings for optimization parameters."""

    SCHEMA_VERSION = 1

    DEFAULT_PARAMETERS: Dict[str, Any] = {
        "mu": 0.3,
        "gamma_bounds": (-1.0, 4.0),
        "phi": 2.0,
        "rho0": 1.0,
        "rho_s": 3.0,
        "sigma": 0.2,
        "w_s": 3e-4,
        "w_p": 0.1,
        "shape_weight": 1.0,
        "iterations": 30,
        "n_y": 50,
        "grid_span": (-1.2, 1.2),
        "position_bounds": (1.0, 0.5),
        "d_bounds": (0.1, 0.9),
        "starts": 60,
        "post_process": 5,
        "seed": 0,
        "workers": 1,
        "outer_iterations": 25,
        "fd_step": 1e-5,
        "gradient": "envelope",
        "qp_tolerance": 1e-8,
        "stability_regularization": 0.0,
        "structural_penalty": 1e6,
        "repair_theta_deg": 5.0,
        "repair_d": 0.05,
        "repair_length_fraction": 0.1,
        "band_sigmas": 3.0,
        "display_scale": 100.0,
    }

    # Experiment classes: object sets of letters, random polygons and a toolset.
    PRESETS: Dict[str, Dict[str, Any]] = {
        "letters": {
            "starts": 60, "post_process": 0, "position_bounds": (1.0, 0.5),
            "n_y": 50, "grid_span": (-1.2, 1.2), "w_s": 3e-4, "w_p": 0.1,
        },
        "polygons": {
            "starts": 60, "post_process": 5, "position_bounds": (1.0, 0.3),
            "n_y": 50, "grid_span": (-1.3, 1.3), "w_s": 3e-4, "w_p": 0.1,
        },
        "toolset": {
            "starts": 200, "post_process": 5, "position_bounds": (1.0, 0.8),
            "n_y": 100, "grid_span": (-2.2, 2.2), "w_s": 3.0, "w_p": 0.01,
        },
    }

    ENVIRONMENT_OVERRIDES: Dict[str, Tuple[str, type]] = {
        "GRIPPER_SEED": ("seed", int),
        "GRIPPER_WORKERS": ("workers", int),
        "GRIPPER_STARTS": ("starts", int),
        "GRIPPER_ITERATIONS": ("iterations", int),
        "GRIPPER_QP_TOLERANCE": ("qp_tolerance", float),
    }


class OptimizationParams(BaseModel):
    """Every tunable of the co-design search. Angles are stored in degrees only where named so."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    mu: float = Field(gt=0)
    gamma_bounds: Tuple[float, float]
    phi: float = Field(gt=1)
    rho0: float = Field(gt=0)
    rho_s: float = Field(gt=0)
    sigma: float = Field(gt=0)
    w_s: float = Field(ge=0)
    w_p: float = Field(ge=0)
    shape_weight: float = Field(gt=0)
    iterations: int = Field(ge=1)
    n_y: int = Field(ge=2)
    grid_span: Tuple[float, float]
    position_bounds: Tuple[float, float]
    d_bounds: Tuple[float, float]
    starts: int = Field(ge=1)
    post_process: int = Field(ge=0)
    seed: int = Field(ge=0)
    workers: int = Field(ge=1)
    outer_iterations: int = Field(ge=1)
    fd_step: float = Field(gt=0)
    gradient: Literal["envelope", "resolve"]
    qp_tolerance: float = Field(gt=0)
    stability_regularization: float = Field(ge=0)
    structural_penalty: float = Field(gt=0)
    repair_theta_deg: float = Field(gt=0)
    repair_d: float = Field(gt=0)
    repair_length_fraction: float = Field(gt=0)
    band_sigmas: float = Field(gt=0)
    display_scale: float = Field(gt=0)

    @model_validator(mode="after")
    def _validate_ranges(self) -> "OptimizationParams":
        for name in ("gamma_bounds", "grid_span", "d_bounds"):
            low, high = getattr(self, name)
            if not (math.isfinite(low) and math.isfinite(high)) or low >= high:
                raise ValueError(f"{name} must be a finite increasing pair, got ({low}, {high})")
        if min(self.position_bounds) < 0:
            raise ValueError("position_bounds are half-widths and must be non-negative")
        if self.d_bounds[0] < 0 or self.d_bounds[1] > 1:
            raise ValueError("d_bounds must lie within [0, 1]")
        return self

    @property
    def rho_final(self) -> float:
        """Penalty after the last dual/penalty update."""
        return self.rho0 * self.phi ** self.iterations

    @property
    def repair_theta(self) -> float:
        return math.radians(self.repair_theta_deg)

    def with_overrides(self, **overrides: Any) -> "OptimizationParams":
        data = self.model_dump()
        data.update(overrides)
        return OptimizationParams(**data)


def _environment_parameters() -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    for variable, (name, caster) in ParameterConfig.ENVIRONMENT_OVERRIDES.items():
        raw = os.getenv(variable)
        if raw is None or raw == "":
            continue
        try:
            values[name] = caster(raw)
        except ValueError:
            logger.warning(f"⚠️ Ignoring {variable}={raw!r}: not a valid {caster.__name__}")
    return values


def load_parameters(
    overrides: Optional[Mapping[str, Any]] = None,
    preset: Optional[str] = None,
    use_environment: bool = True,
) -> OptimizationParams:
    """
    Build validated parameters from defaults, a preset, the environment and overrides.

    Args:
        overrides: Highest-precedence values (problem file, then CLI flags merged by the caller)
        preset: Name of an experiment preset in ParameterConfig.PRESETS
        use_environment: Whether GRIPPER_* variables participate

    Returns:
        Frozen OptimizationParams
    """
    values = dict(ParameterConfig.DEFAULT_PARAMETERS)

    if preset:
        if preset not in ParameterConfig.PRESETS:
            raise ValueError(f"Unknown preset '{preset}'. Available: {sorted(ParameterConfig.PRESETS)}")
        values.update(ParameterConfig.PRESETS[preset])

    if use_environment:
        values.update(_environment_parameters())

    if overrides:
        values.update(overrides)

    params = OptimizationParams(**values)
    logger.debug(f"Parameters resolved (preset={preset}, seed={params.seed}, starts={params.starts})")
    return params


def default_parameters(**overrides: Any) -> OptimizationParams:
    """Defaults plus keyword overrides, ignoring the environment."""
    return load_parameters(overrides=overrides, use_environment=False)
