"""Exact GP computations on a single dataset."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, lapack, solve_triangular

from .errors import ConfigError, InputShapeError, NumericalError, NumericalWarning
from .kernels import (
    KernelSpec,
    _as_params,
    cholesky_with_jitter,
    correlation_matrix,
    grad_contractions,
    kernel_parts,
    cov_matrix,
)

__all__ = [
    "Dataset",
    "Prediction",
    "GradScaling",
    "nll",
    "full_grad",
    "stochastic_grad",
    "sample_batch",
    "predict",
    "sample_prior",
]

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Inputs (N x d) and outputs (N,) for one client."""

    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=float)
        y = np.asarray(self.outputs, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or y.ndim != 1:
            raise InputShapeError(
                f"inputs must be N x d and outputs length N, got {X.shape} and {y.shape}"
            )
        if X.shape[0] != y.shape[0]:
            raise InputShapeError(
                f"{X.shape[0]} input rows but {y.shape[0]} outputs"
            )
        if X.shape[0] < 1:
            raise InputShapeError("dataset must contain at least one point")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InputShapeError("dataset contains non-finite values")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "outputs", y)

    def __len__(self):
        return self.outputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.inputs[idx], self.outputs[idx])


@dataclass(frozen=True)
class Prediction:
    mean: np.ndarray
    latent_variance: np.ndarray
    observation_variance: np.ndarray


@dataclass(frozen=True)
class GradScaling:
    """Divide the theta1 gradient by tau*log(M) and the theta2 gradient by M."""

    tau: float = 1.0
    enabled: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")


def _factor(spec, params, data):
    K = cov_matrix(spec, params, data.inputs, add_noise=True)
    L = cholesky_with_jitter(K)
    return L


def _chol_inverse(L):
    inv, info = lapack.dpotri(L, lower=1)
    if info != 0:
        raise NumericalError(f"inverse from Cholesky factor failed (info={info})")
    # dpotri fills only the lower triangle.
    inv = np.tril(inv)
    return inv + np.tril(inv, -1).T


def nll(spec: KernelSpec, params, data: Dataset) -> float:
    """Negative log marginal likelihood of a zero-mean GP."""
    L = _factor(spec, params, data)
    alpha = cho_solve((L, True), data.outputs)
    n = len(data)
    return float(
        0.5 * data.outputs @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * n * LOG_2PI
    )


def full_grad(spec: KernelSpec, params, data: Dataset) -> np.ndarray:
    """Gradient of :func:`nll`, one entry per parameter in vector layout.

    Uses g_i = 0.5 * tr[(K^-1 - a a^T) dK/dtheta_i] with a = K^-1 y.
    """
    p = _as_params(params)
    parts = kernel_parts(spec, p.ls, data.inputs)
    K = p.theta1 ** 2 * parts[1]
    K[np.diag_indices_from(K)] += p.theta2 ** 2
    L = cholesky_with_jitter(K)
    Kinv = _chol_inverse(L)
    alpha = Kinv @ data.outputs
    W = Kinv - np.outer(alpha, alpha)
    return grad_contractions(spec, p, data.inputs, W, parts)


def stochastic_grad(spec: KernelSpec, params, data: Dataset, batch,
                    scaling: GradScaling | None = None, rng=None) -> np.ndarray:
    """Mini-batch gradient: :func:`full_grad` on the rows in ``batch``.

    ``rng`` is accepted for interface symmetry; the batch is already drawn.
    """
    batch = np.asarray(batch, dtype=int)
    n = len(data)
    if batch.ndim != 1 or batch.size == 0:
        raise InputShapeError("batch must be a non-empty 1-d index set")
    if batch.min() < 0 or batch.max() >= n:
        raise InputShapeError(f"batch indices must lie in [0, {n})")
    if np.unique(batch).size != batch.size:
        raise InputShapeError("batch indices must be distinct")
    m = batch.size
    if scaling is not None and scaling.enabled and m < 2:
        raise ConfigError("gradient scaling needs a batch of at least 2 points")
    g = full_grad(spec, params, data.subset(batch))
    if scaling is not None and scaling.enabled:
        g[0] /= scaling.tau * math.log(m)
        g[1] /= m
    return g


def sample_batch(n_total: int, batch_size: int, rng) -> np.ndarray:
    """Uniform subset of ``batch_size`` distinct indices from ``range(n_total)``."""
    if not 1 <= batch_size <= n_total:
        raise InputShapeError(
            f"batch size {batch_size} must be between 1 and {n_total}"
        )
    return rng.choice(n_total, size=batch_size, replace=False)


def predict(spec: KernelSpec, params, train: Dataset, X_star) -> Prediction:
    """Posterior predictive mean and variance of f at ``X_star``."""
    p = _as_params(params)
    X_star = np.asarray(X_star, dtype=float)
    if X_star.ndim == 1:
        X_star = X_star[:, None]
    if X_star.ndim != 2 or X_star.shape[1] != train.dim:
        raise InputShapeError(
            f"test inputs of shape {X_star.shape} do not match training dimension {train.dim}"
        )
    L = _factor(spec, p, train)
    alpha = cho_solve((L, True), train.outputs)
    Ks = p.theta1 ** 2 * correlation_matrix(spec, p.ls, X_star, train.inputs)
    mean = Ks @ alpha
    v = solve_triangular(L, Ks.T, lower=True)
    prior_var = p.theta1 ** 2
    var = prior_var - np.einsum("ij,ij->j", v, v)
    worst = float(-var.min()) if var.size else 0.0
    if worst > 1e-6 * prior_var:
        warnings.warn(
            f"clamped predictive variance of {-worst:.3e} to zero", NumericalWarning,
            stacklevel=2,
        )
    var = np.maximum(var, 0.0)
    return Prediction(mean, var, var + p.theta2 ** 2)


def sample_prior(spec: KernelSpec, params, X, rng) -> np.ndarray:
    """Draw y = f(X) + noise with f ~ GP(0, theta1^2 k_f)."""
    p = _as_params(params)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    K = correlation_matrix(spec, p.ls, X)
    K *= p.theta1 ** 2
    L = cholesky_with_jitter(K)
    del K
    n = X.shape[0]
    z = rng.standard_normal(n)
    w = rng.standard_normal(n)
    return L @ z + p.theta2 * w
