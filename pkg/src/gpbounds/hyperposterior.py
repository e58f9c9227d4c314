"""Hyperpriors, the hyperparameter posterior, and ways to explore it.

The posterior over hyperparameters combines the GP log marginal likelihood
with a prior (uniform box or Gaussian-in-log).  All densities returned here
are over *raw* hyperparameters; the sampler proposes in log space and carries
the change-of-variables Jacobian internally, so its draws follow the raw
density.  A trapezoidal quadrature routine provides an exact (1-D slice)
reference the sampler is validated against.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .gp import Dataset, NumericsError, make_lml_evaluator
from .kernels import HyperVector, KernelFamily

__all__ = [
    "UniformBoxPrior",
    "GaussianLogPrior",
    "SamplerConfig",
    "PosteriorSampleSet",
    "SamplerStuckError",
    "LaplaceCurvatureError",
    "log_prior_density",
    "log_unnormalized_posterior",
    "sample_posterior",
    "laplace_approximation",
    "empirical_bayes_prior",
    "hp_from_hessian",
    "posterior_mass_in_box",
    "quadrature_posterior_1d",
]

log = logging.getLogger(__name__)

HP_FLOOR = 1e-6  # precision floor when the likelihood Hessian has no positive curvature


class SamplerStuckError(RuntimeError):
    """A chain accepted no proposals at all; the step size needs changing."""


class LaplaceCurvatureError(RuntimeError):
    """The log posterior is not concave at the expansion point."""


@dataclass(frozen=True, eq=False)
class UniformBoxPrior:
    """Componentwise uniform prior over raw hyperparameters.

    Coordinates with ``lower == upper`` are pinned: the optimizer, sampler and
    quadrature all hold them fixed at that value.
    """

    lower: HyperVector
    upper: HyperVector

    def __post_init__(self):
        lo, hi = self.lower.to_array(), self.upper.to_array()
        if lo.size != hi.size:
            raise ValueError("lower and upper bounds have different sizes")
        if not np.all(lo <= hi):
            raise ValueError("prior box needs lower <= upper componentwise")

    @property
    def free(self) -> np.ndarray:
        return self.upper.to_array() > self.lower.to_array()

    def contains(self, theta: HyperVector) -> bool:
        # log-space comparison with one-ULP slack, so pinned coordinates
        # (lower == upper) survive an exp(log(.)) round trip
        z = theta.to_log_array()
        return bool(
            np.all(z >= self.lower.to_log_array() - 1e-12) and np.all(z <= self.upper.to_log_array() + 1e-12)
        )


@dataclass(frozen=True, eq=False)
class GaussianLogPrior:
    """Gaussian prior on log hyperparameters (lognormal over raw values).

    ``mean`` lives in log space; ``covariance`` is the log-space covariance.
    Zero diagonal entries pin the corresponding coordinate at its mean.  Also
    serves as the return type of the Laplace approximation.
    """

    mean: np.ndarray
    covariance: np.ndarray
    hp: float | None = None  # precision scale when built by empirical Bayes

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean size {mean.size}")
        if np.any(np.diag(cov) < 0.0):
            raise ValueError("covariance diagonal must be nonnegative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @classmethod
    def from_precision(cls, mean: np.ndarray, hp: float) -> "GaussianLogPrior":
        """Prior with log-density -hp * ||z - mean||^2, i.e. covariance I/(2 hp)."""
        mean = np.asarray(mean, dtype=float).ravel()
        return cls(mean, np.eye(mean.size) / (2.0 * hp), hp=hp)

    @property
    def free(self) -> np.ndarray:
        return np.diag(self.covariance) > 0.0

    def _free_precision(self) -> np.ndarray:
        free = self.free
        return np.linalg.inv(self.covariance[np.ix_(free, free)])

    def log_quadratic(self, log_theta: np.ndarray) -> float:
        """The Gaussian exponent -0.5 (z - m)^T Cov^{-1} (z - m) on free coords."""
        free = self.free
        d = np.asarray(log_theta, dtype=float).ravel() - self.mean
        if np.any(np.abs(d[~free]) > 1e-9):
            return -np.inf
        df = d[free]
        return float(-0.5 * df @ self._free_precision() @ df)


HyperPrior = UniformBoxPrior | GaussianLogPrior


def log_prior_density(prior: HyperPrior, theta: HyperVector) -> float:
    """Unnormalized log prior density over raw hyperparameters."""
    if isinstance(prior, UniformBoxPrior):
        return 0.0 if prior.contains(theta) else -np.inf
    z = theta.to_log_array()
    quad = prior.log_quadratic(z)
    if not np.isfinite(quad):
        return -np.inf
    # lognormal change of variables: free coordinates carry a 1/theta factor
    return quad - float(np.sum(z[prior.free]))


class PosteriorEvaluator:
    """Cached evaluator of the unnormalized hyperparameter posterior.

    Bundles the fast marginal-likelihood closure with the prior so samplers,
    quadrature and finite differences all score hyperparameters through the
    same arithmetic.  ``log_raw`` is the density over raw hyperparameters;
    ``log_z`` adds the exp-transform Jacobian and is the log-space sampling
    target.
    """

    def __init__(self, data: Dataset, prior: HyperPrior, family: KernelFamily):
        self.prior = prior
        self.free = prior.free
        self._lml = make_lml_evaluator(data, family)
        if isinstance(prior, UniformBoxPrior):
            self._log_lo = prior.lower.to_log_array() - 1e-12
            self._log_hi = prior.upper.to_log_array() + 1e-12

    def _log_prior_z(self, z: np.ndarray) -> float:
        """Raw-space log prior density evaluated at theta = exp(z)."""
        if isinstance(self.prior, UniformBoxPrior):
            if np.all(z >= self._log_lo) and np.all(z <= self._log_hi):
                return 0.0
            return -np.inf
        quad = self.prior.log_quadratic(z)
        if not np.isfinite(quad):
            return -np.inf
        return quad - float(np.sum(z[self.free]))

    def log_raw(self, z: np.ndarray) -> float:
        lp = self._log_prior_z(z)
        if not np.isfinite(lp):
            return -np.inf
        try:
            lml = self._lml(np.exp(z))
        except NumericsError:
            log.debug("factorization failed at log-theta=%s; treating as zero posterior", z)
            return -np.inf
        if not np.isfinite(lml):
            return -np.inf
        return lml + lp

    def log_z(self, z: np.ndarray) -> float:
        value = self.log_raw(z)
        if not np.isfinite(value):
            return -np.inf
        return value + float(np.sum(z[self.free]))


def log_unnormalized_posterior(
    data: Dataset,
    prior: HyperPrior,
    theta: HyperVector,
    family: KernelFamily = KernelFamily.SQUARED_EXPONENTIAL,
) -> float:
    """Log marginal likelihood plus log prior density (both unnormalized).

    Returns -inf outside the prior support.  A factorization failure at
    ``theta`` is treated as -inf so samplers simply reject the state.  An
    empty dataset means a constant likelihood, leaving just the prior.
    """
    return PosteriorEvaluator(data, prior, family).log_raw(theta.to_log_array())


@dataclass
class SamplerConfig:
    chains: int = 4
    steps: int = 5000
    burn_in: int = 1000
    thinning: int = 2
    seed: int | tuple = 0
    target_accept: float = 0.25
    initial_step: float = 0.5

    def __post_init__(self):
        if self.steps <= self.burn_in:
            raise ValueError("steps must exceed burn_in")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")

    def seed_entropy(self) -> list[int]:
        """Seed material as a flat list, so chains can extend it."""
        if isinstance(self.seed, (tuple, list)):
            return [int(s) for s in self.seed]
        return [int(self.seed)]


@dataclass(frozen=True, eq=False)
class PosteriorSampleSet:
    """Raw hyperparameter draws with matching unnormalized log posteriors."""

    thetas: np.ndarray  # (n_samples, p) raw hyperparameters
    log_posts: np.ndarray
    acceptance_rate: float
    chains: int
    burn_in: int
    thinning: int

    def __len__(self) -> int:
        return self.thetas.shape[0]

    @property
    def samples(self) -> list[HyperVector]:
        return [HyperVector.from_array(row) for row in self.thetas]

    def to_csv(self, path) -> None:
        """One row per sample: hyperparameters then log posterior."""
        p = self.thetas.shape[1]
        names = [f"lengthscale_{i + 1}" for i in range(p - 2)] + ["signal_variance", "noise_variance"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names + ["log_posterior"])
            for row, lp in zip(self.thetas, self.log_posts):
                writer.writerow([f"{v:.17g}" for v in row] + [f"{lp:.17g}"])

    @classmethod
    def from_csv(cls, path) -> "PosteriorSampleSet":
        raw = np.genfromtxt(path, delimiter=",", skip_header=1)
        raw = np.atleast_2d(raw)
        return cls(
            thetas=raw[:, :-1],
            log_posts=raw[:, -1],
            acceptance_rate=float("nan"),
            chains=0,
            burn_in=0,
            thinning=1,
        )


def _initial_log_point(prior: HyperPrior, rng: np.random.Generator) -> np.ndarray:
    if isinstance(prior, UniformBoxPrior):
        lo, hi = prior.lower.to_log_array(), prior.upper.to_log_array()
        return rng.uniform(lo, hi)
    z = prior.mean.copy()
    free = prior.free
    if np.any(free):
        cov = prior.covariance[np.ix_(free, free)]
        z[free] = prior.mean[free] + np.linalg.cholesky(cov) @ rng.standard_normal(int(free.sum()))
    return z


def sample_posterior(
    data: Dataset,
    prior: HyperPrior,
    cfg: SamplerConfig | None = None,
    family: KernelFamily = KernelFamily.SQUARED_EXPONENTIAL,
) -> PosteriorSampleSet:
    """Adaptive random-walk Metropolis over the free log-hyperparameters.

    The scalar proposal scale follows a Robbins-Monro recursion toward the
    target acceptance rate during burn-in and is frozen afterwards, keeping
    the kept samples a valid Metropolis chain.  Deterministic given the seed;
    chains use independent substreams.
    """
    cfg = cfg or SamplerConfig()
    target = PosteriorEvaluator(data, prior, family).log_z
    free = prior.free
    n_free = int(free.sum())
    kept: list[np.ndarray] = []
    kept_lp: list[float] = []
    accepted_post = 0
    proposals_post = 0
    for chain in range(cfg.chains):
        rng = np.random.default_rng(cfg.seed_entropy() + [chain])
        z = _initial_log_point(prior, rng)
        lp = target(z)
        tries = 0
        while not np.isfinite(lp) and tries < 100:
            z = _initial_log_point(prior, rng)
            lp = target(z)
            tries += 1
        if not np.isfinite(lp):
            raise SamplerStuckError(f"chain {chain}: could not find a finite-density starting point")
        log_step = math.log(cfg.initial_step)
        accepted_total = 0
        for t in range(cfg.steps):
            prop = z.copy()
            if n_free:
                prop[free] = z[free] + math.exp(log_step) * rng.standard_normal(n_free)
            lp_prop = target(prop)
            # 1 - random() lies in (0, 1], keeping the log finite
            accept = math.log(1.0 - rng.random()) < lp_prop - lp
            if accept:
                z, lp = prop, lp_prop
                accepted_total += 1
            if t < cfg.burn_in:
                gain = (t + 1.0) ** -0.6
                log_step += gain * ((1.0 if accept else 0.0) - cfg.target_accept)
                log_step = min(max(log_step, math.log(1e-5)), math.log(10.0))
            else:
                proposals_post += 1
                accepted_post += 1 if accept else 0
                if (t - cfg.burn_in) % cfg.thinning == 0:
                    kept.append(np.exp(z))
                    kept_lp.append(lp - float(np.sum(z[free])))  # undo the Jacobian
        if accepted_total == 0:
            raise SamplerStuckError(
                f"chain {chain} rejected every proposal; decrease initial_step (was {cfg.initial_step})"
            )
    return PosteriorSampleSet(
        thetas=np.array(kept),
        log_posts=np.array(kept_lp),
        acceptance_rate=accepted_post / max(proposals_post, 1),
        chains=cfg.chains,
        burn_in=cfg.burn_in,
        thinning=cfg.thinning,
    )


def _smooth_log_target(data, prior, family):
    """Log-space posterior with box indicators dropped (for differentiation).

    In log space the lognormal Jacobian cancels against the prior's own
    change of variables, so a Gaussian-in-log prior contributes exactly its
    quadratic; a uniform box contributes only the Jacobian term, since the
    indicator is flat almost everywhere and would break finite differences at
    the boundary.
    """
    free = prior.free
    lml = make_lml_evaluator(data, family)

    def target(z: np.ndarray) -> float:
        if isinstance(prior, GaussianLogPrior):
            value = prior.log_quadratic(z)
        else:
            value = float(np.sum(z[free]))
        try:
            value += lml(np.exp(z))
        except NumericsError:
            return -np.inf
        return value

    return target


def _fd_hessian(func, z0: np.ndarray, idx: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central finite-difference Hessian of func over the coordinates in idx."""
    k = idx.size
    H = np.empty((k, k))
    f0 = func(z0)
    for a in range(k):
        ea = np.zeros_like(z0)
        ea[idx[a]] = h
        H[a, a] = (func(z0 + ea) - 2.0 * f0 + func(z0 - ea)) / h**2
        for b in range(a + 1, k):
            eb = np.zeros_like(z0)
            eb[idx[b]] = h
            val = (func(z0 + ea + eb) - func(z0 + ea - eb) - func(z0 - ea + eb) + func(z0 - ea - eb)) / (
                4.0 * h * h
            )
            H[a, b] = H[b, a] = val
    if not np.all(np.isfinite(H)):
        raise NumericsError("finite-difference Hessian hit a non-finite target value")
    return H


def laplace_approximation(
    data: Dataset,
    prior: HyperPrior,
    theta0: HyperVector,
    family: KernelFamily = KernelFamily.SQUARED_EXPONENTIAL,
    fd_step: float = 1e-3,
) -> GaussianLogPrior:
    """Gaussian approximation of the log-space posterior around theta0.

    The covariance is the inverse negative Hessian of the log posterior,
    computed by central finite differences in log space.  Raises
    :class:`LaplaceCurvatureError` when the Hessian is not negative definite;
    :func:`empirical_bayes_prior` is the documented way out.
    """
    z0 = theta0.to_log_array()
    free = prior.free
    idx = np.flatnonzero(free)
    if idx.size == 0:
        raise ValueError("all coordinates are pinned; nothing to approximate")
    H = _fd_hessian(_smooth_log_target(data, prior, family), z0, idx, fd_step)
    eigs = np.linalg.eigvalsh(H)
    if eigs.max() >= 0.0:
        raise LaplaceCurvatureError(
            f"log posterior Hessian has eigenvalue {eigs.max():.3e} >= 0 at theta0; "
            "build the prior with empirical_bayes_prior first"
        )
    cov_free = np.linalg.inv(-H)
    p = z0.size
    cov = np.zeros((p, p))
    cov[np.ix_(free, free)] = cov_free
    return GaussianLogPrior(mean=z0, covariance=cov)


def hp_from_hessian(hessian: np.ndarray) -> float:
    """Precision scale: ten times the largest nonnegative eigenvalue, floored."""
    eigs = np.linalg.eigvalsh(np.asarray(hessian, dtype=float))
    hp = 10.0 * max(float(eigs.max()), 0.0)
    return max(hp, HP_FLOOR)


def empirical_bayes_prior(
    data: Dataset,
    theta0: HyperVector,
    family: KernelFamily = KernelFamily.SQUARED_EXPONENTIAL,
    fd_step: float = 1e-3,
) -> GaussianLogPrior:
    """Gaussian-in-log prior centered at theta0, wide enough to fix curvature.

    The precision scale starts from :func:`hp_from_hessian` of the marginal
    likelihood Hessian and doubles until the regularized Hessian is negative
    definite, which guarantees a usable Laplace approximation.
    """
    z0 = theta0.to_log_array()
    idx = np.arange(z0.size)
    lml = make_lml_evaluator(data, family)

    def lml_only(z: np.ndarray) -> float:
        try:
            return lml(np.exp(z))
        except NumericsError:
            return -np.inf

    H = _fd_hessian(lml_only, z0, idx, fd_step)
    hp = hp_from_hessian(H)
    while np.linalg.eigvalsh(-hp * np.eye(z0.size) + H).max() >= 0.0:
        hp *= 2.0
        log.info("doubling empirical-Bayes precision to %.3e to restore concavity", hp)
    return GaussianLogPrior.from_precision(z0, hp)


def posterior_mass_in_box(samples: PosteriorSampleSet, lo: HyperVector, hi: HyperVector) -> float:
    """Fraction of the sample set inside the closed box [lo, hi]."""
    if len(samples) == 0:
        raise ValueError("empty sample set")
    lov, hiv = lo.to_array(), hi.to_array()
    inside = np.all((samples.thetas >= lov) & (samples.thetas <= hiv), axis=1)
    return float(np.mean(inside))


def quadrature_posterior_1d(
    data: Dataset,
    prior: HyperPrior,
    grid: np.ndarray,
    free_index: int,
    theta0: HyperVector,
    family: KernelFamily = KernelFamily.SQUARED_EXPONENTIAL,
) -> np.ndarray:
    """Normalized posterior density along one hyperparameter coordinate.

    The remaining coordinates are pinned at ``theta0``.  Normalization is
    trapezoidal on the given (sorted, raw-space) grid, so the returned values
    integrate to one on it.  This is the slice oracle the sampler is checked
    against; it is not an approximation of the joint posterior.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size < 2:
        raise ValueError("grid needs at least two points")
    evaluator = PosteriorEvaluator(data, prior, family)
    base = theta0.to_log_array()
    logs = np.empty(grid.size)
    for i, g in enumerate(grid):
        z = base.copy()
        z[free_index] = np.log(g)
        logs[i] = evaluator.log_raw(z)
    finite = np.isfinite(logs)
    if not np.any(finite):
        raise ValueError("posterior vanishes on the entire grid")
    density = np.zeros(grid.size)
    density[finite] = np.exp(logs[finite] - logs[finite].max())
    total = np.trapezoid(density, grid)
    if total <= 0.0:
        raise ValueError("quadrature mass is zero on the grid")
    return density / total
