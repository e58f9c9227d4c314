"""Brute-force verifiers for the linear-algebra facts the package relies on.

Everything here recomputes quantities from first principles with dense
inverses (``np.linalg.inv`` / ``slogdet``), deliberately avoiding the
Cholesky machinery in :mod:`gpbounds.gp`, so the two paths can certify each
other.  Sizes are capped: these are correctness oracles, not performance
paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import HyperVector, KernelFamily, KernelSpec, cross_matrix, gram_matrix, kernel_eval

__all__ = [
    "CheckReport",
    "direct_posterior",
    "direct_mvn_loglik",
    "variance_dominance_check",
    "mean_difference_check",
    "covariance_inequality_check",
    "grid_bounding_pair_1d",
    "run_all_checks",
]


@dataclass(frozen=True)
class CheckReport:
    """Outcome of one randomized check suite.

    ``worst_violation`` is the largest amount by which the checked inequality
    was broken across all trials (negative means it held with margin), and
    ``passed`` is exactly ``worst_violation <= tolerance``.
    """

    name: str
    trials: int
    worst_violation: float
    tolerance: float
    passed: bool
    seeds: list = field(default_factory=list)


def direct_posterior(spec: KernelSpec, data, xstar) -> tuple[float, float]:
    """Posterior mean and variance via an explicit dense inverse.

    The Gram matrix is assembled entry by entry from ``kernel_eval`` and
    inverted with ``np.linalg.inv``; nothing is shared with the cached
    Cholesky path this verifies.
    """
    xstar = np.atleast_1d(np.asarray(xstar, dtype=float))
    hyper = spec.hyper
    n = data.n
    if n == 0:
        return 0.0, hyper.signal_variance
    if n > 50:
        raise ValueError("dense oracle is capped at N <= 50")
    K = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            K[i, j] = kernel_eval(spec, data.X[i], data.X[j])
    Kinv = np.linalg.inv(K + hyper.noise_variance * np.eye(n))
    k = np.array([kernel_eval(spec, data.X[i], xstar) for i in range(n)])
    mean = float(k @ Kinv @ data.y)
    var = float(kernel_eval(spec, xstar, xstar) - k @ Kinv @ k)
    return mean, var


def direct_mvn_loglik(data, covariance: np.ndarray) -> float:
    """Log-density of y under N(0, covariance), by determinant and inverse."""
    y = data.y
    n = y.size
    if n > 30:
        raise ValueError("dense log-likelihood oracle is capped at N <= 30")
    covariance = np.asarray(covariance, dtype=float)
    sign, logdet = np.linalg.slogdet(covariance)
    if sign <= 0:
        raise np.linalg.LinAlgError("covariance is not positive definite")
    quad = float(y @ np.linalg.inv(covariance) @ y)
    return -0.5 * quad - 0.5 * logdet - 0.5 * n * np.log(2.0 * np.pi)


def _dense_std(spec: KernelSpec, X: np.ndarray, Xstar: np.ndarray) -> np.ndarray:
    """Posterior standard deviations at query rows via dense inverse."""
    hyper = spec.hyper
    if X.shape[0] == 0:
        return np.full(Xstar.shape[0], np.sqrt(hyper.signal_variance))
    K = gram_matrix(spec, X) + hyper.noise_variance * np.eye(X.shape[0])
    Kinv = np.linalg.inv(K)
    C = cross_matrix(spec, X, Xstar)
    var = hyper.signal_variance - np.einsum("nk,nm,mk->k", C, Kinv, C)
    return np.sqrt(np.maximum(var, 0.0))


def _dense_mean(spec: KernelSpec, X: np.ndarray, y: np.ndarray, Xstar: np.ndarray) -> np.ndarray:
    K = gram_matrix(spec, X) + spec.hyper.noise_variance * np.eye(X.shape[0])
    return cross_matrix(spec, X, Xstar).T @ np.linalg.inv(K) @ y


def _sorted_lengthscale_draws(rng, d: int, count: int) -> np.ndarray:
    """count x d lengthscale vectors, log-uniform in [0.1, 10], sorted per coordinate."""
    draws = np.exp(rng.uniform(np.log(0.1), np.log(10.0), size=(count, d)))
    return np.sort(draws, axis=0)


def variance_dominance_check(
    trials: int,
    seed: int = 0,
    dims: int = 3,
    max_n: int = 20,
    n_test: int = 100,
    family: KernelFamily = KernelFamily.SQUARED_EXPONENTIAL,
    force_gamma_one: bool = False,
) -> CheckReport:
    """Check that sigma_theta(x) <= gamma * sigma_theta'(x) on random problems.

    Per trial: a random dataset, a componentwise-sorted lengthscale triple
    theta' <= theta <= theta'' with shared variances, and ``n_test`` random
    query points.  ``force_gamma_one`` replaces gamma by 1 to probe how much
    slack the scaling factor carries (soft check, report only).
    """
    tol = 1e-8
    worst = -np.inf
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        d = int(rng.integers(1, dims + 1))
        n = int(rng.integers(1, max_n + 1))
        X = rng.uniform(-3.0, 3.0, size=(n, d))
        lo, mid, hi = _sorted_lengthscale_draws(rng, d, 3)
        sf2 = float(np.exp(rng.uniform(np.log(0.25), np.log(4.0))))
        sn2 = float(np.exp(rng.uniform(np.log(1e-4), np.log(1.0))))
        gamma = 1.0 if force_gamma_one else float(np.sqrt(np.prod(hi / lo)))
        Xstar = rng.uniform(-3.0, 3.0, size=(n_test, d))
        spec_lo = KernelSpec(family, HyperVector(lo, sf2, sn2))
        spec_mid = KernelSpec(family, HyperVector(mid, sf2, sn2))
        std_lo = _dense_std(spec_lo, X, Xstar)
        std_mid = _dense_std(spec_mid, X, Xstar)
        worst = max(worst, float(np.max(std_mid - gamma * std_lo)))
    name = f"variance_dominance_{family.value}"
    if force_gamma_one:
        name += "_gamma1"
    return CheckReport(name, trials, worst, tol, worst <= tol, [seed])


def mean_difference_check(trials: int, seed: int = 0, n_test: int = 200) -> CheckReport:
    """Check |mu_theta0(x) - mu_theta(x)| <= 2 gamma ||y|| sigma_theta'(x) / sigma_n.

    theta0 and theta are drawn anywhere inside a random box [theta', theta'']
    with shared signal and noise variances.
    """
    tol = 1e-8
    worst = -np.inf
    family = KernelFamily.SQUARED_EXPONENTIAL
    for t in range(trials):
        rng = np.random.default_rng([seed, 1000003 + t])
        d = int(rng.integers(1, 4))
        n = int(rng.integers(2, 16))
        X = rng.uniform(-3.0, 3.0, size=(n, d))
        y = rng.normal(0.0, 1.0, size=n)
        quad = _sorted_lengthscale_draws(rng, d, 4)
        lo, hi = quad[0], quad[3]
        inner = quad[1:3][rng.permutation(2)]
        theta0, theta = inner[0], inner[1]
        sf2 = float(np.exp(rng.uniform(np.log(0.25), np.log(4.0))))
        sn2 = float(np.exp(rng.uniform(np.log(1e-2), np.log(1.0))))
        gamma = float(np.sqrt(np.prod(hi / lo)))
        Xstar = rng.uniform(-3.0, 3.0, size=(n_test, d))
        mean0 = _dense_mean(KernelSpec(family, HyperVector(theta0, sf2, sn2)), X, y, Xstar)
        mean1 = _dense_mean(KernelSpec(family, HyperVector(theta, sf2, sn2)), X, y, Xstar)
        std_lo = _dense_std(KernelSpec(family, HyperVector(lo, sf2, sn2)), X, Xstar)
        bound = 2.0 * gamma * np.linalg.norm(y) * std_lo / np.sqrt(sn2)
        worst = max(worst, float(np.max(np.abs(mean0 - mean1) - bound)))
    return CheckReport("mean_difference", trials, worst, tol, worst <= tol, [seed])


def _schur_tail(K: np.ndarray) -> float:
    """k - k^T Ktilde^{-1} k for the last row/column partition of K."""
    body = K[:-1, :-1]
    edge = K[:-1, -1]
    return float(K[-1, -1] - edge @ np.linalg.inv(body) @ edge)


def covariance_inequality_check(trials: int, seed: int = 0, size: int = 6) -> CheckReport:
    """Check the Schur-complement ordering under a PSD matrix perturbation.

    Builds a random positive-definite K2 and K1 = K2 + (PSD perturbation) and
    verifies the trailing Schur complement of K1 dominates that of K2.
    """
    tol = 1e-10
    worst = -np.inf
    for t in range(trials):
        rng = np.random.default_rng([seed, 2000003 + t])
        A = rng.normal(size=(size, size))
        K2 = A @ A.T + 0.1 * np.eye(size)
        B = rng.normal(size=(size, size))
        K1 = K2 + B @ B.T
        worst = max(worst, _schur_tail(K2) - _schur_tail(K1))
    return CheckReport("covariance_inequality", trials, worst, tol, worst <= tol, [seed])


def grid_bounding_pair_1d(grid: np.ndarray, density: np.ndarray, theta0: float, delta: float) -> tuple[float, float]:
    """Narrowest grid-aligned interval containing theta0 with mass >= 1 - delta.

    Exhaustive search over interval endpoints on the grid, with interval mass
    computed by trapezoidal quadrature of the (normalized) density.
    """
    grid = np.asarray(grid, dtype=float)
    density = np.asarray(density, dtype=float)
    if grid.size < 2:
        raise ValueError("grid needs at least two points")
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * np.diff(grid))])
    target = (1.0 - delta) * cum[-1]
    best: tuple[float, float] | None = None
    best_width = np.inf
    for i in range(grid.size):
        if grid[i] > theta0:
            break
        # smallest j with mass(i, j) >= target and grid[j] >= theta0
        j = int(np.searchsorted(cum, cum[i] + target))
        j = max(j, int(np.searchsorted(grid, theta0)))
        if j >= grid.size:
            continue
        width = grid[j] - grid[i]
        if width < best_width:
            best_width = width
            best = (float(grid[i]), float(grid[j]))
    if best is None:
        raise ValueError(f"no grid interval containing theta0={theta0} reaches mass {1 - delta}")
    return best


def run_all_checks(seed: int = 0, trials: int = 1000) -> list[CheckReport]:
    """The full randomized check suite, as run by the ``oracle`` subcommand."""
    return [
        variance_dominance_check(trials, seed=seed),
        variance_dominance_check(trials, seed=seed, family=KernelFamily.MATERN52),
        variance_dominance_check(trials, seed=seed, force_gamma_one=True),
        mean_difference_check(trials // 2, seed=seed),
        covariance_inequality_check(trials, seed=seed),
    ]
