"""Experiment configuration: a JSON file, validated before anything runs.

Top-level keys and defaults::

    scenario     "experiment"    label used in output names
    dim          2               state dimension
    steps        100             number of reverse steps N
    beta_min     1e-4            first beta (t = 1)
    beta_max     0.2             last beta (t = N)
    seed         0               seed of run 0; run k uses seed + k
    runs         1               number of seeded runs
    output       "out"           output directory
    score        {"kind": "gmm", "weights": [1], "means": [[0]*dim], "vars": [1]}
    conditions   (required)      ordered list of {kind, params, scale, mode, name}
    guidance     {"mode": "independent", "order": [0, 1], "stop_t": 0}
    cagrad       {"c": 0.4, "inner_iters": 200, "inner_step": 0.1, "inner_tol": 1e-8}
    sampler      {"suppress_final_noise": true, "fresh_noise": false,
                  "record_every": 1, "hessian": "trick"}
    landscape    {"t": 50, "samples": 2000, "grid": [41, 41], "extent": 3.0}

Unknown keys anywhere are errors.
"""
from __future__ import annotations

import json
import os
from importlib import resources
from typing import Any, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .condition import ConditionEnergy, ConditionError, from_spec
from .mtl import CAGradConfig
from .schedule import NoiseSchedule, ScheduleError, linear_schedule
from .score import GaussianMixture

REFERENCE_CONFIGS = ("two_quad_d64", "gmm_valley_d2", "three_cond_d16", "block_separable_d8")


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ScoreSpec(_Strict):
    kind: Literal["gmm"] = "gmm"
    weights: Optional[list[float]] = None
    means: Optional[list[list[float]]] = None
    vars: Optional[list[float]] = None


class ConditionSpec(_Strict):
    kind: Literal["quadratic_target", "logistic_classifier", "ring", "alignment"]
    params: dict[str, Any]
    scale: float = Field(1.0, ge=0.0)
    mode: Literal["direct", "denoised"] = "direct"
    name: Optional[str] = None


class GuidanceSpec(_Strict):
    mode: Literal["unconditional", "independent", "dependent_pair", "cagrad_multi"] = "independent"
    order: list[int] = [0, 1]
    stop_t: int = Field(0, ge=0)


class CAGradSpec(_Strict):
    c: float = Field(0.4, ge=0.0, lt=1.0)
    inner_iters: int = Field(200, ge=1)
    inner_step: float = Field(0.1, gt=0.0)
    inner_tol: float = Field(1e-8, ge=0.0)


class SamplerSpec(_Strict):
    suppress_final_noise: bool = True
    fresh_noise: bool = False
    record_every: int = Field(1, ge=1)
    hessian: Literal["trick", "dual"] = "trick"


class LandscapeSpec(_Strict):
    t: int = Field(50, ge=0)
    samples: int = Field(2000, ge=100)
    grid: list[int] = [41, 41]
    extent: float = Field(3.0, gt=0.0)


class ExperimentConfig(_Strict):
    scenario: str = "experiment"
    dim: int = Field(2, ge=1)
    steps: int = Field(100, ge=1)
    beta_min: float = 1e-4
    beta_max: float = 0.2
    seed: int = Field(0, ge=0, lt=2**64)
    runs: int = Field(1, ge=1)
    output: str = "out"
    score: ScoreSpec = ScoreSpec()
    conditions: list[ConditionSpec]
    guidance: GuidanceSpec = GuidanceSpec()
    cagrad: CAGradSpec = CAGradSpec()
    sampler: SamplerSpec = SamplerSpec()
    landscape: LandscapeSpec = LandscapeSpec()

    @model_validator(mode="after")
    def _cross_checks(self):
        if sorted(self.guidance.order) != [0, 1]:
            raise ValueError("guidance.order must be a permutation of [0, 1]")
        if self.guidance.stop_t >= self.steps:
            raise ValueError(f"guidance.stop_t must be < steps ({self.steps})")
        n = len(self.conditions)
        if self.guidance.mode == "dependent_pair" and n != 2:
            raise ValueError(f"guidance.mode 'dependent_pair' needs exactly 2 conditions, got {n}")
        if self.guidance.mode == "cagrad_multi" and n < 2:
            raise ValueError(f"guidance.mode 'cagrad_multi' needs at least 2 conditions, got {n}")
        if len(self.landscape.grid) != 2 or min(self.landscape.grid) < 2:
            raise ValueError("landscape.grid must be two counts >= 2")
        if self.landscape.t > self.steps:
            raise ValueError(f"landscape.t must be <= steps ({self.steps})")
        return self

    # -- domain objects ------------------------------------------------------

    def schedule(self) -> NoiseSchedule:
        return linear_schedule(self.steps, self.beta_min, self.beta_max)

    def mixture(self) -> GaussianMixture:
        s = self.score
        if s.means is None:
            return GaussianMixture.standard_normal(self.dim)
        k = len(s.means)
        weights = s.weights if s.weights is not None else [1.0 / k] * k
        variances = s.vars if s.vars is not None else [1.0] * k
        return GaussianMixture(weights, s.means, variances)

    def condition_list(self) -> list[ConditionEnergy]:
        return [from_spec(c.model_dump(), i) for i, c in enumerate(self.conditions)]

    def cagrad_config(self) -> CAGradConfig:
        return CAGradConfig(**self.cagrad.model_dump())


def _fmt_loc(loc) -> str:
    return ".".join(str(p) for p in loc) or "<root>"


def validate(raw: dict) -> ExperimentConfig:
    """Parse and cross-check a config dict; raises ConfigError naming key paths."""
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        lines = [f"{_fmt_loc(e['loc'])}: {e['msg']}" for e in exc.errors()]
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines)) from None
    try:
        cfg.schedule()
        mixture = cfg.mixture()
        conds = cfg.condition_list()
    except (ScheduleError, ConditionError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    if mixture.dim != cfg.dim:
        raise ConfigError(f"invalid config: score.means have dimension {mixture.dim}, dim is {cfg.dim}")
    for i, c in enumerate(conds):
        if c.dim != cfg.dim:
            raise ConfigError(f"invalid config: conditions.{i}.params have dimension {c.dim}, dim is {cfg.dim}")
    return cfg


def load(path_or_name: str) -> ExperimentConfig:
    """Load a config file, or one of the shipped reference configs by name."""
    if not os.path.exists(path_or_name) and path_or_name in REFERENCE_CONFIGS:
        text = resources.files("depguide.configs").joinpath(f"{path_or_name}.json").read_text()
        source = path_or_name
    else:
        try:
            with open(path_or_name, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path_or_name}: {exc.strerror or exc}") from None
        source = path_or_name
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: not valid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be an object")
    return validate(raw)


def reference(name: str) -> ExperimentConfig:
    if name not in REFERENCE_CONFIGS:
        raise ConfigError(f"unknown reference config {name!r}; choose from {REFERENCE_CONFIGS}")
    return load(name)


def random_unit(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)
