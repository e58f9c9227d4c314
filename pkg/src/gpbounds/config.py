"""Experiment configuration: YAML ingestion, defaults, and prior presets."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .bounds import DEFAULT_BETA_MAX_SQRT, DEFAULT_BETA_PRACTICAL, BoundMode
from .hyperposterior import SamplerConfig, UniformBoxPrior
from .kernels import HyperVector, KernelFamily

__all__ = [
    "ConfigError",
    "PriorBoxConfig",
    "BetaConfig",
    "SampleStudyConfig",
    "BenchmarkConfig",
    "ControlConfig",
    "ExperimentConfig",
    "PRIOR_PRESETS",
    "load_config_file",
    "build_config",
]


class ConfigError(ValueError):
    """Bad or inconsistent experiment configuration."""


@dataclass(frozen=True)
class PriorBoxConfig:
    """Uniform hyperprior bounds; lengthscale bounds repeat per input dim."""

    lengthscales: tuple[float, float]
    signal_variance: tuple[float, float]
    noise_variance: tuple[float, float]

    def __post_init__(self):
        for name, (lo, hi) in (
            ("lengthscales", self.lengthscales),
            ("signal_variance", self.signal_variance),
            ("noise_variance", self.noise_variance),
        ):
            if not (0.0 < lo <= hi):
                raise ConfigError(f"prior bounds for {name} need 0 < low <= high, got ({lo}, {hi})")

    def to_prior(self, dim: int) -> UniformBoxPrior:
        lower = HyperVector(
            np.full(dim, self.lengthscales[0]), self.signal_variance[0], self.noise_variance[0]
        )
        upper = HyperVector(
            np.full(dim, self.lengthscales[1]), self.signal_variance[1], self.noise_variance[1]
        )
        return UniformBoxPrior(lower, upper)


# Uniform hyperprior bounds for the benchmark datasets, plus desk-scale boxes
# for the synthetic studies.  "control" is deliberately wider in lengthscale
# and signal variance than "control_narrow" (the literal benchmark setting for
# the manipulator), since states of order one need lengthscales of order one
# for the fitted models to generalize at all.
PRIOR_PRESETS: dict[str, PriorBoxConfig] = {
    "boston": PriorBoxConfig((1e-1, 1e2), (1.0, 50.0), (1e-1, 1e2)),
    "mauna_loa": PriorBoxConfig((1e-10, 5e12), (1e-10, 1e5), (1e-5, 1e2)),
    "wine": PriorBoxConfig((1e-2, 10.0), (1e-2, 1e2), (1e-2, 1.0)),
    "sarcos": PriorBoxConfig((1e-1, 50.0), (1e-1, 1e3), (1e-2, 80.0)),
    "control_narrow": PriorBoxConfig((1e-15, 1e-2), (1e-6, 10.0), (1e-5, 1e-1)),
    "control": PriorBoxConfig((1e-1, 50.0), (1e-1, 1e2), (1e-5, 1e-1)),
    "study": PriorBoxConfig((0.1, 2.0), (0.5, 2.0), (1e-4, 1e-2)),
}


@dataclass(frozen=True)
class BetaConfig:
    mode: BoundMode = BoundMode.PRACTICAL
    beta: float = DEFAULT_BETA_PRACTICAL
    beta_max_sqrt: float = DEFAULT_BETA_MAX_SQRT

    @property
    def beta_sqrt(self) -> float:
        return math.sqrt(self.beta)


@dataclass(frozen=True)
class SampleStudyConfig:
    dim: int = 1
    grid_low: float = 0.0
    grid_high: float = 4.0
    grid_points: int = 150
    train_sizes: tuple[int, ...] = (2, 4, 6)
    repetitions: int = 100
    # None draws observation noise at the true hyperparameters; a number
    # overrides the generating noise std (e.g. 0.0 for the interpolation limit)
    noise_std: float | None = None


@dataclass(frozen=True)
class BenchmarkConfig:
    train_sizes: tuple[int, ...] = (50,)
    repetitions: int = 100
    n_test_cap: int = 500
    standardize: bool = True


@dataclass(frozen=True)
class ControlConfig:
    n_train: int = 10
    noise_std: float = 0.01
    xi_des: float = 1.0
    duration: float = 10.0
    dt: float = 1e-3
    filter_bandwidth: float = 100.0
    excitation_amplitude: float = 1.0
    excitation_frequency: float = 0.5
    initial_state_std: float = 1.0
    repetitions: int = 20
    record_stride: int = 10
    full_bayes_models: int = 20
    policies: tuple[str, ...] = ("robust", "vanilla", "full_bayes")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    dataset_path: str | None = None
    kernel: KernelFamily = KernelFamily.SQUARED_EXPONENTIAL
    delta: float = 0.05
    seed: int = 0
    ml_restarts: int = 6
    full_bayes_models: int = 50
    prior: PriorBoxConfig = PRIOR_PRESETS["study"]
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(chains=2, steps=2500, burn_in=500))
    beta: BetaConfig = BetaConfig()
    study: SampleStudyConfig = SampleStudyConfig()
    benchmark: BenchmarkConfig = BenchmarkConfig()
    control: ControlConfig = ControlConfig()

    def __post_init__(self):
        if self.experiment not in ("sample-study", "benchmark", "control"):
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must be in (0, 1), got {self.delta}")
        for reps in (self.study.repetitions, self.benchmark.repetitions, self.control.repetitions):
            if reps < 1:
                raise ConfigError("repetitions must be >= 1")

    def manifest(self) -> dict:
        """Fully resolved configuration for the run manifest."""
        out = asdict(self)
        out["kernel"] = self.kernel.value
        out["beta"]["mode"] = self.beta.mode.value
        return out


_DEFAULT_PRESET = {"sample-study": "study", "benchmark": "boston", "control": "control"}


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config root in {path} must be a mapping")
    return raw


def _pair(value, name: str) -> tuple[float, float]:
    try:
        lo, hi = value
        return float(lo), float(hi)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be a [low, high] pair, got {value!r}") from exc


def _prior_from_dict(raw: dict, default_preset: str) -> PriorBoxConfig:
    preset_name = raw.get("preset", default_preset)
    if preset_name not in PRIOR_PRESETS:
        raise ConfigError(f"unknown prior preset {preset_name!r}; choose from {sorted(PRIOR_PRESETS)}")
    preset = PRIOR_PRESETS[preset_name]
    return PriorBoxConfig(
        lengthscales=_pair(raw.get("lengthscales", preset.lengthscales), "prior.lengthscales"),
        signal_variance=_pair(raw.get("signal_variance", preset.signal_variance), "prior.signal_variance"),
        noise_variance=_pair(raw.get("noise_variance", preset.noise_variance), "prior.noise_variance"),
    )


def _subconfig(cls, raw: dict, name: str):
    known = {f for f in cls.__dataclass_fields__}
    bad = set(raw) - known
    if bad:
        raise ConfigError(f"unknown keys in {name}: {sorted(bad)}; known keys: {sorted(known)}")
    coerced = {}
    for key, value in raw.items():
        if isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {name} section: {exc}") from exc


def build_config(experiment: str, raw: dict | None = None, **overrides) -> ExperimentConfig:
    """Assemble an :class:`ExperimentConfig` from a raw mapping plus overrides.

    ``overrides`` (seed, repetitions, ...) win over the file contents, which
    win over the per-experiment defaults.
    """
    raw = dict(raw or {})
    raw.pop("experiment", None)

    prior = _prior_from_dict(raw.pop("prior", {}), _DEFAULT_PRESET.get(experiment, "study"))

    sampler_raw = raw.pop("sampler", {})
    sampler = _subconfig(SamplerConfig, sampler_raw, "sampler")

    beta_raw = dict(raw.pop("beta", {}))
    if "mode" in beta_raw:
        try:
            beta_raw["mode"] = BoundMode(str(beta_raw["mode"]).lower())
        except ValueError as exc:
            raise ConfigError(f"beta.mode must be 'practical' or 'theoretical': {exc}") from exc
    beta = _subconfig(BetaConfig, beta_raw, "beta")

    study = _subconfig(SampleStudyConfig, raw.pop("study", {}), "study")
    benchmark = _subconfig(BenchmarkConfig, raw.pop("benchmark", {}), "benchmark")
    control = _subconfig(ControlConfig, raw.pop("control", {}), "control")

    kernel = raw.pop("kernel", "se")
    try:
        family = kernel if isinstance(kernel, KernelFamily) else KernelFamily.parse(str(kernel))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    reps = overrides.pop("repetitions", None)
    if reps is not None:
        study = _subconfig(SampleStudyConfig, {**asdict(study), "repetitions": int(reps)}, "study")
        benchmark = _subconfig(BenchmarkConfig, {**asdict(benchmark), "repetitions": int(reps)}, "benchmark")
        control = _subconfig(ControlConfig, {**asdict(control), "repetitions": int(reps)}, "control")

    top = {
        "dataset_path": raw.pop("dataset_path", None),
        "delta": raw.pop("delta", 0.05),
        "seed": raw.pop("seed", 0),
        "ml_restarts": raw.pop("ml_restarts", 6),
        "full_bayes_models": raw.pop("full_bayes_models", 50),
    }
    top.update(overrides)
    if raw:
        raise ConfigError(f"unknown top-level config keys: {sorted(raw)}")
    try:
        return ExperimentConfig(
            experiment=experiment,
            kernel=family,
            prior=prior,
            sampler=sampler,
            beta=beta,
            study=study,
            benchmark=benchmark,
            control=control,
            **top,
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
