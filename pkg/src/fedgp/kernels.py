"""Stationary kernels of the form K = theta1^2 * k_f + theta2^2 * I.

Parameters are always laid out as ``[theta1, theta2, l_1, ..., l_m]`` where
``m`` is 1 for isotropic kernels and ``d`` for ARD kernels. Every function that
returns per-parameter quantities (gradients, derivative matrices) uses that
order.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InputShapeError, NumericalError, ParameterDomainError

__all__ = [
    "Family",
    "KernelSpec",
    "GPParams",
    "ParamBox",
    "base_kernel",
    "correlation_matrix",
    "cov_matrix",
    "cov_grads",
    "grad_contractions",
    "cholesky_with_jitter",
]

SQRT3 = math.sqrt(3.0)
SQRT5 = math.sqrt(5.0)

JITTER_REL = 1e-8
JITTER_DOUBLINGS = 6


class Family(str, enum.Enum):
    RBF = "rbf"
    MATERN12 = "matern12"
    MATERN32 = "matern32"
    MATERN52 = "matern52"


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus length-scale layout.

    Parameters
    ----------
    family : Family or str
        One of ``rbf``, ``matern12``, ``matern32``, ``matern52``.
    ard : bool
        One length-scale per input dimension if True, a single shared one
        otherwise.
    """

    family: Family = Family.RBF
    ard: bool = False

    def __post_init__(self):
        try:
            object.__setattr__(self, "family", Family(self.family))
        except ValueError:
            names = ", ".join(f.value for f in Family)
            raise ParameterDomainError(
                f"unknown kernel family {self.family!r}; expected one of {names}"
            ) from None

    def n_lengthscales(self, dim: int) -> int:
        return dim if self.ard else 1

    def n_params(self, dim: int) -> int:
        return 2 + self.n_lengthscales(dim)


@dataclass(frozen=True)
class GPParams:
    """GP hyperparameters (signal amplitude, noise std, length-scales)."""

    theta1: float
    theta2: float
    lengthscales: tuple

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if ls.ndim != 1 or ls.size == 0:
            raise InputShapeError("lengthscales must be a non-empty 1-d vector")
        object.__setattr__(self, "lengthscales", tuple(float(v) for v in ls))
        object.__setattr__(self, "theta1", float(self.theta1))
        object.__setattr__(self, "theta2", float(self.theta2))
        if not (self.theta1 > 0 and self.theta2 > 0 and min(self.lengthscales) > 0):
            raise ParameterDomainError(
                f"all parameters must be positive, got {self.to_vector()}"
            )

    @classmethod
    def from_vector(cls, vec) -> "GPParams":
        vec = np.asarray(vec, dtype=float)
        if vec.ndim != 1 or vec.size < 3:
            raise InputShapeError(
                f"parameter vector must be 1-d with >= 3 entries, got shape {vec.shape}"
            )
        return cls(vec[0], vec[1], vec[2:])

    def to_vector(self) -> np.ndarray:
        return np.array([self.theta1, self.theta2, *self.lengthscales])

    @property
    def ls(self) -> np.ndarray:
        return np.asarray(self.lengthscales)

    def __len__(self):
        return 2 + len(self.lengthscales)


@dataclass(frozen=True)
class ParamBox:
    """Componentwise bounds on the parameter vector."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise InputShapeError("box bounds must be 1-d vectors of equal length")
        if np.any(lo <= 0) or np.any(lo >= hi):
            raise ParameterDomainError(
                "box bounds must satisfy 0 < lower < upper componentwise"
            )
        object.__setattr__(self, "lower", tuple(lo.tolist()))
        object.__setattr__(self, "upper", tuple(hi.tolist()))

    @classmethod
    def uniform(cls, n_lengthscales, theta1=(1e-6, 100.0), theta2=(1e-6, 100.0),
                lengthscale=(1e-6, 100.0)) -> "ParamBox":
        lo = [theta1[0], theta2[0]] + [lengthscale[0]] * n_lengthscales
        hi = [theta1[1], theta2[1]] + [lengthscale[1]] * n_lengthscales
        return cls(lo, hi)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper)

    def __len__(self):
        return len(self.lower)

    def project(self, vec) -> np.ndarray:
        vec = np.asarray(vec, dtype=float)
        self._check_len(vec)
        return np.clip(vec, self.lo, self.hi)

    def contains(self, vec) -> bool:
        vec = np.asarray(vec, dtype=float)
        self._check_len(vec)
        return bool(np.all(vec >= self.lo) and np.all(vec <= self.hi))

    def sample(self, rng) -> np.ndarray:
        return rng.uniform(self.lo, self.hi)

    def _check_len(self, vec):
        if vec.shape != (len(self.lower),):
            raise InputShapeError(
                f"parameter vector of shape {vec.shape} does not match box of "
                f"length {len(self.lower)}"
            )


def _as_params(params) -> GPParams:
    if isinstance(params, GPParams):
        return params
    return GPParams.from_vector(params)


def _as_2d(X, name="X") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise InputShapeError(f"{name} must be a 2-d array, got shape {X.shape}")
    return X


def _check_lengthscales(spec: KernelSpec, ls, dim: int) -> np.ndarray:
    ls = np.atleast_1d(np.asarray(ls, dtype=float))
    expected = spec.n_lengthscales(dim)
    if ls.shape != (expected,):
        raise InputShapeError(
            f"{'ARD' if spec.ard else 'isotropic'} kernel on {dim}-d inputs needs "
            f"{expected} length-scale(s), got {ls.size}"
        )
    if np.any(ls <= 0):
        raise ParameterDomainError(f"length-scales must be positive, got {ls}")
    return ls


def _scaled_sqdist(X1, X2, ls) -> np.ndarray:
    """Squared distance after dividing each input column by its length-scale."""
    same = X1 is X2
    A = X1 / ls
    B = A if same else X2 / ls
    if A.shape[0] * B.shape[0] * A.shape[1] <= 512:
        diff = A[:, None, :] - B[None, :, :]
        return np.einsum("ijk,ijk->ij", diff, diff)
    # Expanded form; avoids the N1 x N2 x d temporary.
    r2 = A @ B.T
    r2 *= -2.0
    r2 += (A * A).sum(axis=1)[:, None]
    r2 += (B * B).sum(axis=1)[None, :]
    np.maximum(r2, 0.0, out=r2)
    if same:
        r2[np.diag_indices_from(r2)] = 0.0
    return r2


def _corr_from_r2(family: Family, r2: np.ndarray) -> np.ndarray:
    if family is Family.RBF:
        return np.exp(-0.5 * r2)
    r = np.sqrt(r2)
    if family is Family.MATERN12:
        return np.exp(-r)
    if family is Family.MATERN32:
        s = SQRT3 * r
        return (1.0 + s) * np.exp(-s)
    s = SQRT5 * r
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


def _radial_factor(family: Family, r2: np.ndarray, k: np.ndarray) -> np.ndarray:
    """phi(r) = -(dk/dr) / r, so that dk/dl_j = phi * delta_j^2 / l_j^3."""
    if family is Family.RBF:
        return k
    r = np.sqrt(r2)
    if family is Family.MATERN12:
        with np.errstate(divide="ignore", invalid="ignore"):
            phi = np.where(r > 0, np.exp(-r) / np.where(r > 0, r, 1.0), 0.0)
        return phi
    if family is Family.MATERN32:
        return 3.0 * np.exp(-SQRT3 * r)
    return (5.0 / 3.0) * (1.0 + SQRT5 * r) * np.exp(-SQRT5 * r)


def base_kernel(spec: KernelSpec, lengthscales, x1, x2) -> float:
    """Unit-amplitude, noise-free correlation k_f(x1, x2)."""
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x1.ndim != 1 or x1.shape != x2.shape:
        raise InputShapeError(
            f"points must be 1-d vectors of equal length, got {x1.shape} and {x2.shape}"
        )
    ls = _check_lengthscales(spec, lengthscales, x1.size)
    r2 = float(np.sum(((x1 - x2) / ls) ** 2))
    return float(_corr_from_r2(spec.family, np.asarray(r2)))


def correlation_matrix(spec: KernelSpec, lengthscales, X1, X2=None) -> np.ndarray:
    """Matrix of k_f values between the rows of X1 and X2."""
    X1 = _as_2d(X1, "X1")
    X2 = X1 if X2 is None or X2 is X1 else _as_2d(X2, "X2")
    if X1.shape[1] != X2.shape[1]:
        raise InputShapeError(
            f"input dimensions differ: {X1.shape[1]} vs {X2.shape[1]}"
        )
    ls = _check_lengthscales(spec, lengthscales, X1.shape[1])
    r2 = _scaled_sqdist(X1, X2, ls)
    return _corr_from_r2(spec.family, r2)


def cov_matrix(spec: KernelSpec, params, X1, X2=None, add_noise=False) -> np.ndarray:
    """Covariance theta1^2 k_f(X1, X2), plus theta2^2 on the diagonal.

    The noise term is only added when ``X2`` is omitted (or is the very same
    array object as ``X1``) and ``add_noise`` is set.
    """
    p = _as_params(params)
    same = X2 is None or X2 is X1
    K = correlation_matrix(spec, p.ls, X1, None if same else X2)
    K *= p.theta1 ** 2
    if add_noise and same:
        K[np.diag_indices_from(K)] += p.theta2 ** 2
    return K


def cov_grads(spec: KernelSpec, params, X) -> list:
    """Derivatives of cov_matrix(X, X, add_noise=True) w.r.t. each parameter.

    Returns a list ``[dK/dtheta1, dK/dtheta2, dK/dl_1, ...]``.
    """
    p = _as_params(params)
    X = _as_2d(X)
    n, d = X.shape
    ls = _check_lengthscales(spec, p.ls, d)
    r2 = _scaled_sqdist(X, X, ls)
    kf = _corr_from_r2(spec.family, r2)
    amp = p.theta1 ** 2
    grads = [2.0 * p.theta1 * kf, 2.0 * p.theta2 * np.eye(n)]
    phi = _radial_factor(spec.family, r2, kf)
    if spec.ard:
        for j in range(d):
            delta2 = (X[:, j, None] - X[None, :, j]) ** 2
            grads.append(amp * phi * delta2 / ls[j] ** 3)
    else:
        grads.append(amp * phi * r2 / ls[0])
    return grads


def kernel_parts(spec: KernelSpec, lengthscales, X):
    """Scaled squared distances and correlations of X with itself."""
    X = _as_2d(X)
    ls = _check_lengthscales(spec, lengthscales, X.shape[1])
    r2 = _scaled_sqdist(X, X, ls)
    return r2, _corr_from_r2(spec.family, r2)


def grad_contractions(spec: KernelSpec, params, X, W, parts=None) -> np.ndarray:
    """Return 0.5 * sum(W * dK/dp) for every parameter p without forming dK.

    ``W`` must be symmetric. Agrees with contracting :func:`cov_grads`.
    ``parts`` may carry ``kernel_parts(spec, params.ls, X)`` to avoid
    recomputing it.
    """
    p = _as_params(params)
    X = _as_2d(X)
    d = X.shape[1]
    ls = _check_lengthscales(spec, p.ls, d)
    r2, kf = kernel_parts(spec, ls, X) if parts is None else parts
    amp = p.theta1 ** 2
    out = np.empty(spec.n_params(d))
    out[0] = p.theta1 * np.einsum("ij,ij->", W, kf)
    out[1] = p.theta2 * np.trace(W)
    Q = W * _radial_factor(spec.family, r2, kf)
    if spec.ard:
        # sum_ab Q_ab (x_aj - x_bj)^2 = 2 * (rowsum(Q) . x_j^2 - x_j . Q x_j)
        s = Q.sum(axis=1)
        quad = s @ (X * X) - np.einsum("ij,ij->j", X, Q @ X)
        out[2:] = amp * quad / ls ** 3
    else:
        out[2] = 0.5 * amp * np.einsum("ij,ij->", Q, r2) / ls[0]
    return out


def cholesky_with_jitter(K: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of K, adding diagonal jitter if needed.

    On failure, 1e-8 * mean(diag) is added and the factorization retried,
    doubling the jitter up to six times before giving up.
    """
    try:
        return np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        pass
    base = JITTER_REL * float(np.mean(np.diag(K)))
    if not np.isfinite(base) or base <= 0:
        raise NumericalError("matrix diagonal is not positive and finite", [])
    tried = []
    eye = np.eye(K.shape[0])
    for i in range(JITTER_DOUBLINGS + 1):
        jitter = base * 2.0 ** i
        tried.append(jitter)
        try:
            return np.linalg.cholesky(K + jitter * eye)
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(
        f"Cholesky failed after jitter levels {tried}", tried
    )
