"""Experiment configuration: a single JSON document validated into dataclasses.

Unknown keys anywhere are rejected so a typo never silently falls back to a
default. Closed-form sources and coefficients are referenced by preset name.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import sympy as sp

from .errors import ConfigError
from .fields import Field, coordinates
from .grid import Grid
from .operator import CoefficientField, coefficient_preset
from .perturb import SHAPES, PerturbationSpec

SOURCE_PRESETS = ("sine", "polynomial", "sine_exp")
NETWORK_SOURCE_PRESETS = ("exact", "perturbed")


def _take(cls, data, where: str):
    """Build dataclass ``cls`` from ``data`` rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown field(s) {unknown} in {where}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _number(value, name: str, minimum: float | None = None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{name} must be a finite number, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return float(value)


def _integer(value, name: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return value


@dataclass(frozen=True)
class PresetConfig:
    preset: str
    params: dict = field(default_factory=dict)


def source_field(preset: PresetConfig, dim: int) -> Field:
    """Closed-form source ``f``.

    ``sine``       sum_j amplitudes[j] prod_i sin(modes[j][i] pi x_i)
    ``polynomial`` scale prod_i x_i (1 - x_i)
    ``sine_exp``   scale prod_i sin(pi x_i) exp(x_1)
    """
    xs = coordinates(dim)
    p = dict(preset.params)
    if preset.preset == "sine":
        allowed = {"modes", "amplitudes"}
        modes = p.get("modes", [[1] * dim])
        amplitudes = p.get("amplitudes", [1.0] * len(modes))
    elif preset.preset in ("polynomial", "sine_exp"):
        allowed = {"scale"}
        scale = sp.Float(_number(p.get("scale", 1.0), "scale"))
    else:
        raise ConfigError(f"unknown source preset {preset.preset!r}; choose from {list(SOURCE_PRESETS)}")
    unknown = sorted(set(p) - allowed)
    if unknown:
        raise ConfigError(f"unknown parameter(s) {unknown} for source preset {preset.preset!r}")
    if preset.preset == "sine":
        if len(modes) != len(amplitudes) or not modes:
            raise ConfigError("sine source needs one amplitude per mode")
        expr = sp.Integer(0)
        for mode, amp in zip(modes, amplitudes):
            if len(mode) != dim or any(isinstance(m, bool) or not isinstance(m, int) or m < 1 for m in mode):
                raise ConfigError(f"sine mode {mode} must list {dim} positive integers")
            term = sp.Mul(*[sp.sin(m * sp.pi * x) for m, x in zip(mode, xs)])
            expr += sp.nsimplify(_number(amp, "amplitude")) * term
        return Field(expr, dim)
    if preset.preset == "polynomial":
        return Field(scale * sp.Mul(*[x * (1 - x) for x in xs]), dim)
    return Field(scale * sp.Mul(*[sp.sin(sp.pi * x) for x in xs]) * sp.exp(xs[0]), dim)


def network_source_field(preset: PresetConfig, f: Field) -> Field:
    """Closed form of the source network ``f_nn``.

    ``exact``     f_nn = f
    ``perturbed`` f_nn = f + amplitude prod_i sin(mode[i] pi x_i)
    """
    p = dict(preset.params)
    if preset.preset == "exact":
        if p:
            raise ConfigError(f"unknown parameter(s) {sorted(p)} for f_nn preset 'exact' (it takes none)")
        return f
    if preset.preset != "perturbed":
        raise ConfigError(f"unknown f_nn preset {preset.preset!r}; choose from {list(NETWORK_SOURCE_PRESETS)}")
    unknown = sorted(set(p) - {"amplitude", "mode"})
    if unknown:
        raise ConfigError(f"unknown parameter(s) {unknown} for f_nn preset 'perturbed'")
    amplitude = _number(p.get("amplitude", 1e-6), "amplitude")
    mode = p.get("mode", [2] * f.dim)
    if len(mode) != f.dim or any(isinstance(m, bool) or not isinstance(m, int) or m < 1 for m in mode):
        raise ConfigError(f"f_nn mode {mode} must list {f.dim} positive integers")
    xs = coordinates(f.dim)
    bump = sp.Mul(*[sp.sin(m * sp.pi * x) for m, x in zip(mode, xs)])
    return Field(f.expr + sp.Float(amplitude) * bump, f.dim)


@dataclass(frozen=True)
class SweepConfig:
    shapes: list = field(default_factory=lambda: list(SHAPES))
    epsilons: list = field(default_factory=lambda: [0.0, 1e-5, 1e-4, 1e-3])
    trials: int = 200


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description shared by all subcommands."""

    dim: int = 1
    n: int = 63
    coefficients: PresetConfig = field(default_factory=lambda: PresetConfig("constant", {"a": 1.0, "c": 0.0}))
    k: int = 2
    T: int = 10
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    source: PresetConfig = field(default_factory=lambda: PresetConfig("sine"))
    f_nn: PresetConfig = field(default_factory=lambda: PresetConfig("exact"))
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seed: int = 0
    out: str = "results"

    @property
    def grid(self) -> Grid:
        return Grid(self.dim, self.n)

    def coefficient_field(self) -> CoefficientField:
        return coefficient_preset(self.coefficients.preset, self.dim, **self.coefficients.params)

    def source_field(self) -> Field:
        return source_field(self.source, self.dim)

    def network_source_field(self) -> Field:
        return network_source_field(self.f_nn, self.source_field())


def parse_config(data: dict, *, seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    """Validate a decoded JSON document; ``seed`` and ``out`` override the file."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    top = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown field(s) {unknown} in configuration")
    values = dict(data)
    for name in ("coefficients", "source", "f_nn"):
        if name in values:
            values[name] = _take(PresetConfig, values[name], name)
            if not isinstance(values[name].params, dict):
                raise ConfigError(f"{name}.params must be a JSON object")
    if "perturbation" in values:
        values["perturbation"] = _take(PerturbationSpec, values["perturbation"], "perturbation")
    if "sweep" in values:
        values["sweep"] = _take(SweepConfig, values["sweep"], "sweep")
    if seed is not None:
        values["seed"] = seed
    if out is not None:
        values["out"] = out
    cfg = ExperimentConfig(**values)

    _integer(cfg.dim, "dim", 1)
    _integer(cfg.n, "n", 3)
    _integer(cfg.k, "k", 1)
    _integer(cfg.T, "T", 0)
    _integer(cfg.seed, "seed", 0)
    if cfg.seed >= 2**64:
        raise ConfigError("seed must fit in 64 bits")
    _integer(cfg.sweep.trials, "sweep.trials", 2)
    for eps in cfg.sweep.epsilons:
        _number(eps, "sweep epsilon", 0.0)
    for shape in cfg.sweep.shapes:
        PerturbationSpec(0.0, 0.0, shape)
    if not cfg.sweep.shapes or not cfg.sweep.epsilons:
        raise ConfigError("sweep needs at least one shape and one epsilon")
    grid = cfg.grid
    if cfg.k + 1 > grid.size:
        raise ConfigError(f"k + 1 = {cfg.k + 1} eigenpairs exceed the {grid.size} grid nodes")
    # Build every closed-form object once so preset errors surface at load time.
    cfg.coefficient_field()
    cfg.network_source_field()
    return cfg


def load_config(path, *, seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration {path} is not valid JSON: {exc}") from None
    return parse_config(data, seed=seed, out=out)
