"""Gaussian-process posterior inference and marginal-likelihood fitting.

The model keeps a Cholesky factor of ``K + sigma_n^2 I`` and the solved
weights ``alpha = (K + sigma_n^2 I)^{-1} y`` so that predicting a mean is a
single dot product and a variance is one triangular solve.  Everything here
treats hyperparameters in log space when optimizing; positivity is enforced
by construction.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize

from .kernels import HyperVector, KernelFamily, KernelSpec, cross_matrix, gram_matrix

__all__ = [
    "Dataset",
    "GPModel",
    "NumericsError",
    "FactorizationError",
    "fit",
    "posterior_mean",
    "posterior_var",
    "log_marginal_likelihood",
    "maximize_log_marginal_likelihood",
    "sample_prior_function",
]

log = logging.getLogger(__name__)

# Jitter ladder for failed factorizations, relative to the signal variance.
JITTER_START = 1e-10
JITTER_MAX = 1e-4

# Round-off tolerance separating a clampable negative variance from a real
# positive-definiteness failure, relative to the signal variance.
VAR_CLAMP_TOL = 1e-8


class NumericsError(RuntimeError):
    """A linear-algebra result was outside what round-off can explain."""


class FactorizationError(NumericsError):
    """Cholesky failed even at the largest permitted jitter."""

    def __init__(self, message: str, jitter: float):
        super().__init__(message)
        self.jitter = jitter


def as_generator(seed) -> np.random.Generator:
    """Accept an int seed or a Generator and return a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Training inputs X (N x d) and scalar targets y (length N)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.size:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.size} entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @classmethod
    def empty(cls, dim: int) -> "Dataset":
        return cls(X=np.empty((0, dim)), y=np.empty(0))


def _cholesky_with_jitter(A: np.ndarray, scale: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of A, escalating diagonal jitter on failure.

    Jitter starts at ``JITTER_START * scale`` and doubles up to
    ``JITTER_MAX * scale`` before giving up.
    """
    try:
        return scipy.linalg.cholesky(A, lower=True, check_finite=False), 0.0
    except scipy.linalg.LinAlgError:
        pass
    jitter = JITTER_START * scale
    eye = np.eye(A.shape[0])
    while jitter <= JITTER_MAX * scale:
        try:
            L = scipy.linalg.cholesky(A + jitter * eye, lower=True, check_finite=False)
            log.debug("factorization needed jitter %.3e", jitter)
            return L, jitter
        except scipy.linalg.LinAlgError:
            jitter *= 2.0
    raise FactorizationError(
        f"Cholesky failed for {A.shape[0]}x{A.shape[0]} matrix even at jitter {jitter:.3e}",
        jitter=jitter,
    )


class GPModel:
    """Zero-mean GP conditioned on a dataset, with cached factorization."""

    def __init__(self, spec: KernelSpec, data: Dataset):
        if data.n > 0 and data.dim != spec.hyper.dim:
            raise ValueError(f"data has dimension {data.dim} but kernel has {spec.hyper.dim}")
        self.spec = spec
        self.data = data
        if data.n == 0:
            self._L = None
            self._alpha = None
            self._jitter = 0.0
        else:
            K = gram_matrix(spec, data.X)
            K[np.diag_indices_from(K)] += spec.hyper.noise_variance
            self._L, self._jitter = _cholesky_with_jitter(K, spec.hyper.signal_variance)
            self._alpha = scipy.linalg.cho_solve((self._L, True), data.y)

    def mean_at(self, Xstar: np.ndarray) -> np.ndarray:
        """Posterior mean at each query row: ``k(x*)^T (K + sigma_n^2 I)^{-1} y``."""
        Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
        if self.data.n == 0:
            return np.zeros(Xstar.shape[0])
        return cross_matrix(self.spec, self.data.X, Xstar).T @ self._alpha

    def var_at(self, Xstar: np.ndarray) -> np.ndarray:
        """Posterior variance at each query row, clamped into [0, sigma_f^2].

        A computed value below ``-VAR_CLAMP_TOL * sigma_f^2`` is treated as a
        genuine positive-definiteness failure rather than round-off.
        """
        Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
        sf2 = self.spec.hyper.signal_variance
        if self.data.n == 0:
            return np.full(Xstar.shape[0], sf2)
        Ks = cross_matrix(self.spec, self.data.X, Xstar)
        V = scipy.linalg.solve_triangular(self._L, Ks, lower=True)
        var = sf2 - np.einsum("ij,ij->j", V, V)
        worst = var.min() if var.size else 0.0
        if worst < -VAR_CLAMP_TOL * sf2:
            raise NumericsError(f"posterior variance {worst:.3e} is too negative to be round-off")
        return np.clip(var, 0.0, sf2)


def fit(spec: KernelSpec, data: Dataset) -> GPModel:
    """Condition a GP on the data, caching the factorization."""
    return GPModel(spec, data)


def posterior_mean(model: GPModel, xstar: np.ndarray) -> float:
    return float(model.mean_at(np.atleast_1d(np.asarray(xstar, dtype=float))[None, :])[0])


def posterior_var(model: GPModel, xstar: np.ndarray) -> float:
    return float(model.var_at(np.atleast_1d(np.asarray(xstar, dtype=float))[None, :])[0])


def make_lml_evaluator(data: Dataset, family: KernelFamily):
    """Fast log-marginal-likelihood closure over raw hyperparameter arrays.

    Pairwise squared input differences are cached once, so each call only
    rescales them, assembles the kernel matrix, and factorizes.  Samplers and
    optimizers hit this thousands of times per fit.  Raises
    :class:`FactorizationError` like the model path when jitter runs out.
    """
    from .kernels import kernel_profile  # local import avoids a cycle at module load

    n = data.n
    if n == 0:
        return lambda theta: 0.0
    diffs2 = (data.X[:, None, :] - data.X[None, :, :]) ** 2
    y = data.y
    const = 0.5 * n * math.log(2.0 * math.pi)

    def lml(theta: np.ndarray) -> float:
        theta = np.asarray(theta, dtype=float)
        ls, sf2, sn2 = theta[:-2], theta[-2], theta[-1]
        K = sf2 * kernel_profile(family, diffs2 @ (1.0 / (ls * ls)))
        K.flat[:: n + 1] = sf2 + sn2
        L, _ = _cholesky_with_jitter(K, sf2)
        half = scipy.linalg.solve_triangular(L, y, lower=True, check_finite=False)
        return -0.5 * float(half @ half) - float(np.sum(np.log(np.diag(L)))) - const

    return lml


def log_marginal_likelihood(spec: KernelSpec, data: Dataset) -> float:
    """Log-probability of the targets under the GP prior plus noise.

    The log-determinant comes from the Cholesky diagonal and the quadratic
    form from one triangular solve.
    """
    if data.n == 0:
        raise ValueError("log marginal likelihood needs at least one observation")
    return make_lml_evaluator(data, spec.family)(spec.hyper.to_array())


def _penalized_objective(data, family, log_lo, log_hi, free):
    """Negative LML over free log-coordinates with an out-of-box penalty."""
    base = 0.5 * (log_lo + log_hi)
    lml = make_lml_evaluator(data, family)

    def objective(z_free: np.ndarray) -> float:
        z = base.copy()
        z[free] = z_free
        excess = np.maximum(z - log_hi, 0.0) + np.maximum(log_lo - z, 0.0)
        penalty = float(np.sum(excess**2))
        try:
            value = lml(np.exp(np.clip(z, log_lo, log_hi)))
        except NumericsError:
            return 1e12
        if not np.isfinite(value):
            return 1e12
        return -value + 1e4 * penalty

    return objective


def maximize_log_marginal_likelihood(
    data: Dataset,
    family: KernelFamily,
    lower: HyperVector,
    upper: HyperVector,
    restarts: int = 10,
    seed=0,
    initial: list[HyperVector] | None = None,
    maxiter: int | None = None,
) -> HyperVector:
    """Best hyperparameters found by multi-start Nelder-Mead in log space.

    Starting points are drawn uniformly in the log box (plus any points given
    in ``initial``, which count against ``restarts``).  Coordinates with
    ``lower == upper`` are held fixed.  The returned point always lies inside
    the box and its log marginal likelihood is at least that of every
    starting point.
    """
    rng = as_generator(seed)
    log_lo = lower.to_log_array()
    log_hi = upper.to_log_array()
    free = log_hi > log_lo
    center = HyperVector.from_log_array(0.5 * (log_lo + log_hi))
    if not np.any(free):
        return center
    if data.n == 0:
        return center

    starts: list[np.ndarray] = []
    if initial:
        starts.extend(np.clip(h.to_log_array(), log_lo, log_hi) for h in initial)
    while len(starts) < restarts:
        starts.append(rng.uniform(log_lo, log_hi))

    objective = _penalized_objective(data, family, log_lo, log_hi, free)
    best_z = None
    best_val = np.inf
    for z0 in starts[:restarts] if restarts else starts:
        z0_free = z0[free]
        f0 = objective(z0_free)
        result = scipy.optimize.minimize(
            objective,
            z0_free,
            method="Nelder-Mead",
            options={"xatol": 1e-6, "fatol": 1e-8, "maxiter": maxiter},
        )
        for cand_val, cand in ((result.fun, result.x), (f0, z0_free)):
            if cand_val < best_val:
                best_val = cand_val
                best_z = cand
    z = 0.5 * (log_lo + log_hi)
    z[free] = best_z
    return HyperVector.from_log_array(np.clip(z, log_lo, log_hi))


def sample_prior_function(spec: KernelSpec, Xgrid: np.ndarray, seed) -> np.ndarray:
    """Draw one zero-mean GP prior sample on the grid rows.

    Exact multivariate-normal draw through a (jittered) Cholesky factor of
    the Gram matrix; deterministic for a fixed seed.
    """
    rng = as_generator(seed)
    Xgrid = np.atleast_2d(np.asarray(Xgrid, dtype=float))
    K = gram_matrix(spec, Xgrid)
    sf2 = spec.hyper.signal_variance
    K[np.diag_indices_from(K)] += JITTER_START * sf2
    L, _ = _cholesky_with_jitter(K, sf2)
    return L @ rng.standard_normal(Xgrid.shape[0])
