#!/usr/bin/env python3
"""
Run Configuration
Strict schema for every command: simulator, model, training and evaluation
sections. Files are YAML or JSON; unknown keys are rejected and cross-field
rules are checked before any work starts.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from errors import ConfigError

DEFAULT_CONFIG_PATH = Path(__file__).parent.parent / "hiprssm-config.yaml"


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class TaskValues(StrictModel):
    """Discrete task generator: the task parameter takes one of these values per segment"""
    train: List[float] = Field(min_length=1)
    test: List[float] = Field(min_length=1)

    @model_validator(mode="after")
    def _disjoint(self):
        shared = set(self.train) & set(self.test)
        if shared:
            raise ValueError(f"held-out task values also appear in training values: {sorted(shared)}")
        return self


class SimConfig(StrictModel):
    system: Literal["spring_mass", "pendulum"] = "spring_mass"
    dt: float = Field(0.01, gt=0)
    traj_len: int = Field(900, ge=2)
    n_traj: int = Field(50, ge=2)
    n_test: int = Field(10, ge=1)
    segment_len: int = Field(150, ge=1)
    obs_noise_std: float = Field(0.01, ge=0)
    action_policy: Literal["random_smooth", "sinusoid_mix"] = "random_smooth"
    action_std: float = Field(2.0, ge=0)
    action_cutoff_hz: float = Field(1.0, gt=0)
    # parameter name -> (low, high); empty means the simulator's defaults
    param_ranges: Dict[str, Tuple[float, float]] = Field(default_factory=dict)
    task_param: str = "stiffness"
    # fraction of the task parameter's range reserved for test trajectories
    holdout_band: Optional[Tuple[float, float]] = (0.4, 0.6)
    task_values: Optional[TaskValues] = None
    seed: int = 0
    workers: int = Field(4, ge=1)

    @field_validator("param_ranges")
    @classmethod
    def _ranges_nonempty(cls, ranges):
        for name, (low, high) in ranges.items():
            if low > high:
                raise ValueError(f"range for '{name}' is empty ({low} > {high})")
        return ranges

    @field_validator("holdout_band")
    @classmethod
    def _band_inside_unit(cls, band):
        if band is not None and not (0.0 <= band[0] < band[1] <= 1.0):
            raise ValueError("holdout_band must satisfy 0 <= low < high <= 1")
        return band


class ModelConfig(StrictModel):
    latent_state_dim: int = Field(30, ge=2)        # n
    task_dim: int = Field(30, ge=1)                # d_l
    num_bases: int = Field(15, ge=1)               # K
    task_variant: Literal["linear", "locally_linear", "nonlinear", "none"] = "nonlinear"
    obs_encoder_hidden: int = Field(120, ge=1)
    context_encoder_hidden: int = Field(240, ge=1)
    control_hidden: List[int] = Field(default_factory=lambda: [120, 120, 120])
    task_hidden: int = Field(120, ge=1)
    decoder_hidden: int = Field(120, ge=1)
    context_size: int = Field(150, ge=1)           # N, also the target window length
    loss: Literal["rmse", "nll"] = "rmse"
    trans_noise_init: float = Field(0.1, gt=0)
    initial_variance: float = Field(10.0, gt=0)

    @property
    def m(self) -> int:
        return self.latent_state_dim // 2

    @model_validator(mode="after")
    def _latent_dims(self):
        if self.latent_state_dim % 2:
            raise ValueError(f"model.latent_state_dim must be even, got {self.latent_state_dim}")
        if self.task_variant in ("linear", "locally_linear") and self.task_dim != self.latent_state_dim:
            raise ValueError(
                f"model.task_dim must equal model.latent_state_dim ({self.latent_state_dim}) "
                f"for the {self.task_variant} task transform, got {self.task_dim}"
            )
        if any(w < 1 for w in self.control_hidden):
            raise ValueError("model.control_hidden widths must be positive")
        return self


class TrainConfig(StrictModel):
    lr: float = Field(8e-4, gt=0)
    batch_size: int = Field(16, ge=1)
    epochs: int = Field(20, ge=1)
    clip_norm: float = Field(5.0, gt=0)
    seed: int = 0
    imputation_rate: float = Field(0.5, ge=0, lt=1)
    eval_every: int = Field(1, ge=0)               # epochs between held-out evaluations; 0 disables
    baseline: Literal["none", "context_free", "np"] = "none"


class EvalConfig(StrictModel):
    protocols: List[Literal["full", "imputed_50", "multi_step"]] = Field(
        default_factory=lambda: ["full", "imputed_50", "multi_step"])
    horizon: int = Field(50, ge=1)
    seed: int = 1234
    batch_size: int = Field(32, ge=1)
    workers: int = Field(4, ge=1)


class RunConfig(StrictModel):
    sim: SimConfig = Field(default_factory=SimConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @model_validator(mode="after")
    def _cross_section(self):
        sim, N = self.sim, self.model.context_size
        if sim.segment_len > sim.traj_len:
            raise ValueError(f"sim.segment_len ({sim.segment_len}) must not exceed sim.traj_len ({sim.traj_len})")
        if sim.traj_len < 2 * N:
            raise ValueError(
                f"sim.traj_len ({sim.traj_len}) must be at least twice model.context_size ({N})")
        if sim.n_test >= sim.n_traj:
            raise ValueError(f"sim.n_test ({sim.n_test}) must be smaller than sim.n_traj ({sim.n_traj})")
        if self.eval.horizon > N - N // 2:
            raise ValueError(
                f"eval.horizon ({self.eval.horizon}) exceeds the steps left after a burn-in of "
                f"{N // 2} (model.context_size={N})")
        return self


def _validation_error(exc: ValidationError) -> ConfigError:
    fields = []
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "config"
        fields.append(loc)
        lines.append(f"{loc}: {err['msg']}")
    return ConfigError("invalid configuration:\n  " + "\n  ".join(lines), fields)


def parse_override(expr: str) -> Tuple[List[str], Any]:
    """'section.field=value' -> (['section', 'field'], parsed value); values parse as YAML scalars"""
    if "=" not in expr:
        raise ConfigError(f"override '{expr}' is not of the form section.field=value", [expr])
    key, raw = expr.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if len(path) < 2:
        raise ConfigError(f"override key '{key}' must name a section and a field", [key])
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse override value '{raw}': {e}", [key])
    return path, value


def apply_overrides(raw: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    for expr in overrides:
        path, value = parse_override(expr)
        node = raw
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"override '{expr}' descends into non-section '{part}'", [expr])
            node = child
        node[path[-1]] = value
    return raw


def read_config_file(path) -> Dict[str, Any]:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: not valid YAML/JSON: {e}")
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def load_config(path=None, overrides: Sequence[str] = (), seed: Optional[int] = None,
                seed_section: str = "train") -> RunConfig:
    """
    Build a validated RunConfig.

    Args:
        path: YAML or JSON file; None means all defaults
        overrides: 'section.field=value' expressions applied on top of the file
        seed: replaces <seed_section>.seed when given

    Raises:
        ConfigError: schema or cross-field validation failed (exit code 2)
    """
    raw = read_config_file(path) if path else {}
    raw = apply_overrides(raw, overrides)
    if seed is not None:
        raw.setdefault(seed_section, {})["seed"] = seed
    return validate_config(raw)


def validate_config(raw: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise _validation_error(e) from None


def config_to_dict(config: RunConfig) -> Dict[str, Any]:
    return config.model_dump(mode="json")


def dump_config(config: RunConfig) -> str:
    return json.dumps(config_to_dict(config), indent=2)
