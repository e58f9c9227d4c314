"""Experiment harness: violation-rate benchmarks, GP-sample studies, control.

Three experiment families share the same plumbing: fit working
hyperparameters by maximum likelihood, sample the hyperparameter posterior,
wrap a bounding box around the working point, and compare the robust
interval's coverage against a vanilla GP and a fully Bayesian mixture.
Repetitions derive their seeds from the master seed and the repetition
index, so partial runs and reruns produce identical rows.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.linalg

from .bounds import BoundingPair, build_robust_bound, find_bounding_pair
from .config import ExperimentConfig
from .control import (
    DIVERGENCE_LIMIT,
    BacksteppingController,
    DivergenceError,
    SinusoidExcitation,
    Trajectory,
    collect_training_data,
    manipulator_system,
    simulate,
)
from .gp import Dataset, GPModel, NumericsError, maximize_log_marginal_likelihood, sample_prior_function
from .hyperposterior import PosteriorSampleSet, sample_posterior
from .kernels import HyperVector, KernelFamily, KernelSpec, kernel_profile

__all__ = [
    "ResultRow",
    "MixtureGP",
    "violation_rate",
    "fully_bayesian_predict",
    "load_dataset_csv",
    "write_dataset_csv",
    "run_sample_study",
    "run_violation_benchmark",
    "run_control_experiment",
    "StudyOutput",
    "BenchmarkOutput",
    "ControlOutput",
]

log = logging.getLogger(__name__)

METHOD_VANILLA = "vanilla"
METHOD_ROBUST = "robust"
METHOD_FULL_BAYES = "full_bayes"


@dataclass(frozen=True)
class ResultRow:
    method: str
    train_size: int
    repetition: int
    violation_rate: float
    wall_time: float

    def __post_init__(self):
        if not 0.0 <= self.violation_rate <= 1.0:
            raise ValueError(f"violation_rate must be in [0, 1], got {self.violation_rate}")


def violation_rate(means, sigmas, beta_sqrt: float, ytest) -> float:
    """Fraction of test points whose residual exceeds the scaled deviation.

    Counts ``|y - mu| - beta_sqrt * sigma > 0``; a residual exactly on the
    boundary does not violate.
    """
    means = np.asarray(means, dtype=float).ravel()
    sigmas = np.asarray(sigmas, dtype=float).ravel()
    ytest = np.asarray(ytest, dtype=float).ravel()
    if ytest.size == 0:
        raise ValueError("empty test set")
    if not (means.size == sigmas.size == ytest.size):
        raise ValueError(f"length mismatch: {means.size} means, {sigmas.size} sigmas, {ytest.size} targets")
    return float(np.mean(np.abs(ytest - means) - beta_sqrt * sigmas > 0.0))


class MixtureGP:
    """Equal-weight mixture of GP posteriors over hyperparameter samples.

    All members share the training inputs, so kernel vectors for every member
    are computed in one broadcast pass; predictions stay fast enough to sit
    inside a control loop.  Exposes the same ``mean_at`` / ``var_at`` surface
    as a single model.
    """

    def __init__(self, thetas: np.ndarray, data: Dataset, family: KernelFamily, max_models: int | None = None):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        if max_models is not None and thetas.shape[0] > max_models:
            keep = np.unique(np.round(np.linspace(0, thetas.shape[0] - 1, max_models)).astype(int))
            thetas = thetas[keep]
        self.data = data
        self.family = family
        members, skipped = [], 0
        for row in thetas:
            hyper = HyperVector.from_array(row)
            try:
                members.append(GPModel(KernelSpec(family, hyper), data))
            except NumericsError:
                skipped += 1
        if skipped:
            log.warning("mixture: skipped %d of %d members with failed factorizations", skipped, thetas.shape[0])
        if not members:
            raise NumericsError("every mixture member failed to factorize")
        self.n_members = len(members)
        d = members[0].spec.hyper.dim
        self._ls = np.stack([m.spec.hyper.lengthscales for m in members])  # (S, d)
        self._sf2 = np.array([m.spec.hyper.signal_variance for m in members])  # (S,)
        if data.n:
            eye = np.eye(data.n)
            self._alpha = np.stack([m._alpha for m in members])  # (S, N)
            self._Kinv = np.stack([scipy.linalg.cho_solve((m._L, True), eye) for m in members])  # (S, N, N)

    def member_moments(self, Xstar: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-member posterior means and variances, shape (S, Q)."""
        Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
        q = Xstar.shape[0]
        if self.data.n == 0:
            return np.zeros((self.n_members, q)), np.tile(self._sf2[:, None], (1, q))
        scaled_q = Xstar[None, :, None, :] / self._ls[:, None, None, :]
        scaled_x = self.data.X[None, None, :, :] / self._ls[:, None, None, :]
        d2 = np.sum((scaled_q - scaled_x) ** 2, axis=-1)  # (S, Q, N)
        K = self._sf2[:, None, None] * kernel_profile(self.family, d2)
        mu = np.einsum("sqn,sn->sq", K, self._alpha)
        var = self._sf2[:, None] - np.einsum("sqn,snm,sqm->sq", K, self._Kinv, K)
        return mu, np.clip(var, 0.0, self._sf2[:, None])

    def mean_at(self, Xstar: np.ndarray) -> np.ndarray:
        mu, _ = self.member_moments(Xstar)
        return mu.mean(axis=0)

    def var_at(self, Xstar: np.ndarray) -> np.ndarray:
        """Mixture variance by the law of total variance."""
        mu, var = self.member_moments(Xstar)
        mean = mu.mean(axis=0)
        return np.maximum((var + mu**2).mean(axis=0) - mean**2, 0.0)


def fully_bayesian_predict(
    samples: PosteriorSampleSet,
    data: Dataset,
    xstar: np.ndarray,
    family: KernelFamily = KernelFamily.SQUARED_EXPONENTIAL,
    max_models: int | None = None,
) -> tuple[float, float]:
    """Mixture mean and variance at one test point, averaged over samples."""
    if len(samples) == 0:
        raise ValueError("empty sample set")
    mix = MixtureGP(samples.thetas, data, family, max_models=max_models)
    x = np.atleast_1d(np.asarray(xstar, dtype=float))[None, :]
    return float(mix.mean_at(x)[0]), float(mix.var_at(x)[0])


def load_dataset_csv(path) -> Dataset:
    """Read a dataset CSV with header ``x1,...,xd,y``."""
    path = Path(path)
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    if not header or header[-1].strip().lower() != "y":
        raise ValueError(f"{path} must have a header ending in 'y', got {header}")
    raw = np.atleast_2d(np.genfromtxt(path, delimiter=",", skip_header=1))
    if raw.shape[1] != len(header):
        raise ValueError(f"{path}: header names {len(header)} columns but rows have {raw.shape[1]}")
    return Dataset(X=raw[:, :-1], y=raw[:, -1])


def write_dataset_csv(path, data: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i + 1}" for i in range(data.dim)] + ["y"])
        for row, target in zip(data.X, data.y):
            writer.writerow([f"{v:.17g}" for v in row] + [f"{target:.17g}"])


@dataclass(frozen=True)
class PairRecord:
    context: str
    pair: BoundingPair


def _standardize(y_train: np.ndarray, y_test: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    center = float(np.mean(y_train))
    scale = float(np.std(y_train))
    if scale <= 0.0:
        scale = 1.0
    return (y_train - center) / scale, (y_test - center) / scale


def _fit_and_bound(cfg: ExperimentConfig, data: Dataset, prior, sampler_seed) -> tuple:
    """Shared pipeline: ML point, posterior samples, bounding pair, robust bound."""
    t_start = time.perf_counter()
    theta0 = maximize_log_marginal_likelihood(
        data,
        cfg.kernel,
        prior.lower,
        prior.upper,
        restarts=cfg.ml_restarts,
        seed=np.random.default_rng(list(sampler_seed) + [881]),
        maxiter=200,
    )
    ml_time = time.perf_counter() - t_start
    t_start = time.perf_counter()
    sampler = replace(cfg.sampler, seed=tuple(sampler_seed))
    samples = sample_posterior(data, prior, sampler, cfg.kernel)
    pair = find_bounding_pair(samples, theta0, cfg.delta)
    robust = build_robust_bound(
        data, cfg.kernel, theta0, pair, cfg.beta.mode, beta=cfg.beta.beta, beta_max_sqrt=cfg.beta.beta_max_sqrt
    )
    robust_time = time.perf_counter() - t_start
    return theta0, samples, pair, robust, ml_time, robust_time


@dataclass(frozen=True)
class StudyOutput:
    rows: list
    pairs: list
    containment: list  # dicts: repetition, train_size, contained_fraction


def run_sample_study(cfg: ExperimentConfig) -> StudyOutput:
    """Draw ground truth from the prior, then score all three interval styles.

    Each repetition draws hyperparameters from the uniform prior box, draws
    f from the corresponding GP on a grid, reveals a few noisy observations,
    and measures how often each method's interval misses the true function
    on the full grid.
    """
    study = cfg.study
    prior = cfg.prior.to_prior(study.dim)
    lo, hi = prior.lower.to_array(), prior.upper.to_array()
    rows: list[ResultRow] = []
    pairs: list[PairRecord] = []
    containment: list[dict] = []
    grid_rng = np.random.default_rng([cfg.seed, 424242])
    if study.dim == 1:
        grid = np.linspace(study.grid_low, study.grid_high, study.grid_points)[:, None]
    else:
        grid = grid_rng.uniform(study.grid_low, study.grid_high, size=(study.grid_points, study.dim))
    beta_sqrt = cfg.beta.beta_sqrt
    for n_train in study.train_sizes:
        for rep in range(study.repetitions):
            rng = np.random.default_rng([cfg.seed, n_train, rep])
            theta_true = HyperVector.from_array(rng.uniform(lo, hi))
            f_true = sample_prior_function(KernelSpec(cfg.kernel, theta_true), grid, rng)
            idx = rng.choice(grid.shape[0], size=min(n_train, grid.shape[0]), replace=False)
            noise_std = study.noise_std if study.noise_std is not None else np.sqrt(theta_true.noise_variance)
            data = Dataset(grid[idx], f_true[idx] + noise_std * rng.standard_normal(idx.size))

            theta0, samples, pair, robust, ml_time, robust_time = _fit_and_bound(
                cfg, data, prior, (cfg.seed, n_train, rep)
            )
            vanilla = robust.working_model
            sigma_vanilla = np.sqrt(vanilla.var_at(grid))
            mu = vanilla.mean_at(grid)
            rate_vanilla = violation_rate(mu, sigma_vanilla, beta_sqrt, f_true)
            rows.append(ResultRow(METHOD_VANILLA, n_train, rep, rate_vanilla, ml_time))

            sigma_robust = robust.envelope_stds(grid)
            rate_robust = violation_rate(mu, sigma_robust, robust.beta_bar_sqrt, f_true)
            rows.append(ResultRow(METHOD_ROBUST, n_train, rep, rate_robust, robust_time))

            t_fb = time.perf_counter()
            mix = MixtureGP(samples.thetas, data, cfg.kernel, max_models=cfg.full_bayes_models)
            rate_fb = violation_rate(
                mix.mean_at(grid), np.sqrt(mix.var_at(grid)), beta_sqrt, f_true
            )
            rows.append(ResultRow(METHOD_FULL_BAYES, n_train, rep, rate_fb, time.perf_counter() - t_fb))

            pairs.append(PairRecord(f"n={n_train},rep={rep}", pair))
            contained = np.mean(
                robust.beta_bar_sqrt * sigma_robust + 1e-12 >= beta_sqrt * sigma_vanilla
            )
            containment.append(
                {"train_size": n_train, "repetition": rep, "contained_fraction": float(contained)}
            )
    return StudyOutput(rows, pairs, containment)


@dataclass(frozen=True)
class BenchmarkOutput:
    rows: list
    pairs: list


def run_violation_benchmark(cfg: ExperimentConfig) -> BenchmarkOutput:
    """Random train/test splits of a CSV dataset, scored by violation rate."""
    if cfg.dataset_path is None:
        raise ValueError("benchmark needs dataset_path")
    full = load_dataset_csv(cfg.dataset_path)
    prior = cfg.prior.to_prior(full.dim)
    bench = cfg.benchmark
    beta_sqrt = cfg.beta.beta_sqrt
    rows: list[ResultRow] = []
    pairs: list[PairRecord] = []
    for n_train in bench.train_sizes:
        if n_train >= full.n:
            raise ValueError(f"train size {n_train} needs more rows than dataset has ({full.n})")
        for rep in range(bench.repetitions):
            rng = np.random.default_rng([cfg.seed, n_train, rep])
            perm = rng.permutation(full.n)
            train_idx = perm[:n_train]
            test_idx = perm[n_train : n_train + min(bench.n_test_cap, full.n - n_train)]
            y_train, y_test = full.y[train_idx], full.y[test_idx]
            if bench.standardize:
                y_train, y_test = _standardize(y_train, y_test)
            data = Dataset(full.X[train_idx], y_train)
            X_test = full.X[test_idx]

            theta0, samples, pair, robust, ml_time, robust_time = _fit_and_bound(
                cfg, data, prior, (cfg.seed, n_train, rep)
            )
            vanilla = robust.working_model
            mu = vanilla.mean_at(X_test)
            rate_vanilla = violation_rate(mu, np.sqrt(vanilla.var_at(X_test)), beta_sqrt, y_test)
            rows.append(ResultRow(METHOD_VANILLA, n_train, rep, rate_vanilla, ml_time))

            rate_robust = violation_rate(mu, robust.envelope_stds(X_test), robust.beta_bar_sqrt, y_test)
            rows.append(ResultRow(METHOD_ROBUST, n_train, rep, rate_robust, robust_time))

            t_fb = time.perf_counter()
            mix = MixtureGP(samples.thetas, data, cfg.kernel, max_models=cfg.full_bayes_models)
            rate_fb = violation_rate(mix.mean_at(X_test), np.sqrt(mix.var_at(X_test)), beta_sqrt, y_test)
            rows.append(ResultRow(METHOD_FULL_BAYES, n_train, rep, rate_fb, time.perf_counter() - t_fb))

            pairs.append(PairRecord(f"n={n_train},rep={rep}", pair))
    return BenchmarkOutput(rows, pairs)


@dataclass(frozen=True)
class ControlRun:
    policy: str
    repetition: int
    max_error_post_transient: float
    exceed_fraction: float  # share of post-transient time with error > xi_des
    diverged: bool
    wall_time: float


@dataclass(frozen=True)
class ControlOutput:
    rows: list  # ResultRow view of the runs (violation_rate = exceed_fraction)
    runs: list  # ControlRun details
    deciles: dict  # policy -> dict(times, median, q10, q90)
    trajectories: list  # (policy, repetition, Trajectory) at the record stride
    pairs: list


def _control_policies(cfg: ExperimentConfig, datasets) -> tuple[dict, list]:
    """Fit per-subsystem models and assemble the three gain policies."""
    ctl = cfg.control
    working, envelopes, beta_bars, mixes = [], [], [], []
    pairs: list[PairRecord] = []
    for j, data in enumerate(datasets):
        prior = cfg.prior.to_prior(data.dim)
        theta0, samples, pair, robust, _, _ = _fit_and_bound(cfg, data, prior, (cfg.seed, 301 + j))
        working.append(robust.working_model)
        envelopes.append(robust.envelope_model)
        beta_bars.append(robust.beta_bar)
        mixes.append(MixtureGP(samples.thetas, data, cfg.kernel, max_models=ctl.full_bayes_models))
        pairs.append(PairRecord(f"subsystem={j + 1}", pair))
    policies = {}
    beta = cfg.beta.beta
    if "robust" in ctl.policies:
        policies["robust"] = BacksteppingController(
            working, envelopes, beta_bars, ctl.xi_des, ctl.filter_bandwidth
        )
    if "vanilla" in ctl.policies:
        policies["vanilla"] = BacksteppingController(
            working, working, [beta] * len(working), ctl.xi_des, ctl.filter_bandwidth
        )
    if "full_bayes" in ctl.policies:
        policies["full_bayes"] = BacksteppingController(
            working, mixes, [beta] * len(working), ctl.xi_des, ctl.filter_bandwidth
        )
    return policies, pairs


def run_control_experiment(cfg: ExperimentConfig) -> ControlOutput:
    """Manipulator runs from random initial states under each gain policy.

    Diverged runs keep their partial trajectory and enter the summary at the
    divergence limit from the blow-up time on, so they drag the deciles in
    the direction the failure deserves.
    """
    ctl = cfg.control
    system = manipulator_system()
    excitation = SinusoidExcitation(ctl.excitation_amplitude, ctl.excitation_frequency)
    datasets = collect_training_data(
        system,
        excitation,
        ctl.n_train,
        ctl.noise_std,
        np.random.default_rng([cfg.seed, 17]),
        duration=ctl.duration,
    )
    policies, pairs = _control_policies(cfg, datasets)

    steps = int(round(ctl.duration / ctl.dt))
    stride = max(ctl.record_stride, 1)
    rec_times = np.arange(0, steps + 1, stride) * ctl.dt
    rows: list[ResultRow] = []
    runs: list[ControlRun] = []
    trajectories = []
    error_table: dict[str, list[np.ndarray]] = {name: [] for name in policies}
    for rep in range(ctl.repetitions):
        x0 = np.random.default_rng([cfg.seed, 7000 + rep]).normal(0.0, ctl.initial_state_std, system.m)
        for name, controller in policies.items():
            t0 = time.perf_counter()
            diverged = False
            try:
                traj = simulate(system, controller, x0, ctl.duration, ctl.dt)
            except DivergenceError as exc:
                traj = exc.trajectory
                diverged = True
            wall = time.perf_counter() - t0
            # diverged runs keep the divergence limit from the blow-up time on,
            # so quantiles stay finite but failures still dominate them
            errors = np.full(steps + 1, DIVERGENCE_LIMIT)
            errors[: traj.error_norms.size] = traj.error_norms
            post = errors[steps // 2 :]
            max_post = float(np.max(post))
            exceed = float(np.mean(post > ctl.xi_des))
            error_table[name].append(errors[::stride])
            runs.append(ControlRun(name, rep, max_post, exceed, diverged, wall))
            rows.append(ResultRow(name, ctl.n_train, rep, exceed, wall))
            trajectories.append(
                (
                    name,
                    rep,
                    Trajectory(
                        traj.times[::stride],
                        traj.states[::stride],
                        traj.inputs[::stride],
                        traj.error_norms[::stride],
                    ),
                )
            )
    deciles = {}
    for name, series in error_table.items():
        stacked = np.vstack(series)
        deciles[name] = {
            "times": rec_times,
            "median": np.median(stacked, axis=0),
            "q10": np.quantile(stacked, 0.10, axis=0),
            "q90": np.quantile(stacked, 0.90, axis=0),
        }
    return ControlOutput(rows, runs, deciles, trajectories, pairs)
