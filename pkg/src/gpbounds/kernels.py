"""Stationary ARD kernels with radially non-increasing Fourier transforms.

Two families are provided, squared-exponential and Matern-5/2, both of the
form ``sigma_f^2 * k((x - x') / lengthscales)`` with ``k(0) = 1``.  Each input
coordinate is scaled by its own lengthscale, and the kernel value depends only
on the Euclidean norm of the scaled difference.  This is the structural
property behind the variance-domination results in :mod:`gpbounds.bounds`:
shrinking all lengthscales by a factor inflates the Fourier transform
pointwise, so the scaled Gram matrices stay ordered in the Loewner sense.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "HyperVector",
    "KernelFamily",
    "KernelSpec",
    "kernel_eval",
    "kernel_profile",
    "gram_matrix",
    "cross_matrix",
    "cross_vector",
]

_SQRT5 = math.sqrt(5.0)


@dataclass(frozen=True, eq=False)
class HyperVector:
    """Full hyperparameter point: per-dimension lengthscales plus variances.

    All entries are strictly positive.  The vector layout used throughout the
    package (arrays, samplers, priors) is ``[lengthscales..., signal_variance,
    noise_variance]``, so a d-dimensional input space gives ``d + 2`` raw
    hyperparameters.
    """

    lengthscales: np.ndarray
    signal_variance: float
    noise_variance: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if ls.ndim != 1 or ls.size == 0:
            raise ValueError("lengthscales must be a non-empty 1-D array")
        if not np.all(ls > 0.0):
            raise ValueError(f"lengthscales must be strictly positive, got {ls}")
        if not self.signal_variance > 0.0:
            raise ValueError(f"signal_variance must be > 0, got {self.signal_variance}")
        if not self.noise_variance > 0.0:
            raise ValueError(f"noise_variance must be > 0, got {self.noise_variance}")

    @property
    def dim(self) -> int:
        """Input-space dimension d."""
        return self.lengthscales.size

    @property
    def size(self) -> int:
        """Number of raw hyperparameters, d + 2."""
        return self.lengthscales.size + 2

    def to_array(self) -> np.ndarray:
        """Raw vector ``[lengthscales..., signal_variance, noise_variance]``."""
        return np.concatenate([self.lengthscales, [self.signal_variance, self.noise_variance]])

    def to_log_array(self) -> np.ndarray:
        return np.log(self.to_array())

    @classmethod
    def from_array(cls, values: np.ndarray) -> "HyperVector":
        values = np.asarray(values, dtype=float)
        if values.size < 3:
            raise ValueError("hyperparameter array needs at least one lengthscale plus two variances")
        return cls(lengthscales=values[:-2], signal_variance=float(values[-2]), noise_variance=float(values[-1]))

    @classmethod
    def from_log_array(cls, log_values: np.ndarray) -> "HyperVector":
        return cls.from_array(np.exp(np.asarray(log_values, dtype=float)))

    def replace(self, **changes) -> "HyperVector":
        fields = {
            "lengthscales": self.lengthscales,
            "signal_variance": self.signal_variance,
            "noise_variance": self.noise_variance,
        }
        fields.update(changes)
        return HyperVector(**fields)


class KernelFamily(Enum):
    SQUARED_EXPONENTIAL = "se"
    MATERN52 = "matern52"

    @classmethod
    def parse(cls, name: str) -> "KernelFamily":
        key = name.strip().lower().replace("-", "").replace("_", "")
        aliases = {
            "se": cls.SQUARED_EXPONENTIAL,
            "rbf": cls.SQUARED_EXPONENTIAL,
            "squaredexponential": cls.SQUARED_EXPONENTIAL,
            "gaussian": cls.SQUARED_EXPONENTIAL,
            "matern52": cls.MATERN52,
        }
        if key not in aliases:
            raise ValueError(f"unknown kernel family {name!r}; choose from {sorted(set(aliases))}")
        return aliases[key]


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """A kernel family plus its hyperparameters; immutable value object."""

    family: KernelFamily
    hyper: HyperVector

    def with_hyper(self, hyper: HyperVector) -> "KernelSpec":
        return KernelSpec(self.family, hyper)


def _scaled_sq_dists(spec: KernelSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared distances of rows of A and B after ARD scaling."""
    ls = spec.hyper.lengthscales
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != ls.size or B.shape[1] != ls.size:
        raise ValueError(
            f"input dimension mismatch: points have {A.shape[1]}/{B.shape[1]} "
            f"coordinates but kernel has {ls.size} lengthscales"
        )
    diff = A[:, None, :] / ls - B[None, :, :] / ls
    return np.einsum("ijk,ijk->ij", diff, diff)


def kernel_profile(family: KernelFamily, sq_dists: np.ndarray) -> np.ndarray:
    """Unit-signal kernel value as a function of the scaled squared distance."""
    if family is KernelFamily.SQUARED_EXPONENTIAL:
        return np.exp(-0.5 * sq_dists)
    if family is KernelFamily.MATERN52:
        t = _SQRT5 * np.sqrt(np.maximum(sq_dists, 0.0))
        return (1.0 + t + t * t / 3.0) * np.exp(-t)
    raise ValueError(f"unhandled kernel family {family}")


def _kernel_from_sq_dists(spec: KernelSpec, d2: np.ndarray) -> np.ndarray:
    return spec.hyper.signal_variance * kernel_profile(spec.family, d2)


def kernel_eval(spec: KernelSpec, x: np.ndarray, x2: np.ndarray) -> float:
    """Evaluate the kernel at a single pair of points.

    Returns ``sigma_f^2 * k((x - x2) / lengthscales)``; by construction the
    value at zero lag equals the signal variance and never exceeds it.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    return float(_kernel_from_sq_dists(spec, _scaled_sq_dists(spec, x[None, :], x2[None, :]))[0, 0])


def gram_matrix(spec: KernelSpec, X: np.ndarray) -> np.ndarray:
    """N x N kernel matrix of the training inputs.

    Symmetric with diagonal exactly ``signal_variance``; positive
    semi-definite up to round-off (regularization happens at factorization
    time, not here).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    K = _kernel_from_sq_dists(spec, _scaled_sq_dists(spec, X, X))
    # exact symmetry and exact sigma_f^2 diagonal, killing round-off drift
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, spec.hyper.signal_variance)
    return K


def cross_matrix(spec: KernelSpec, X: np.ndarray, Xstar: np.ndarray) -> np.ndarray:
    """N x M matrix of kernel values between training rows and query rows."""
    return _kernel_from_sq_dists(spec, _scaled_sq_dists(spec, X, np.atleast_2d(Xstar)))


def cross_vector(spec: KernelSpec, X: np.ndarray, xstar: np.ndarray) -> np.ndarray:
    """Kernel values between each training row and one query point."""
    xstar = np.atleast_1d(np.asarray(xstar, dtype=float))
    return cross_matrix(spec, X, xstar[None, :])[:, 0]
