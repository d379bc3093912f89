"""Parameter errors, RMSE and global gradient norms."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InputShapeError
from .gp_core import Dataset, full_grad
from .kernels import GPParams, KernelSpec

__all__ = [
    "Components",
    "MetricReport",
    "param_sq_error",
    "rmse",
    "global_grad",
    "global_grad_sq_norm",
]


class Components(str, enum.Enum):
    THETA1_THETA2 = "theta1_theta2"
    THETA2_ONLY = "theta2_only"
    ALL = "all"


@dataclass
class MetricReport:
    param_sq_error: Optional[float] = None
    theta2_sq_error: Optional[float] = None
    global_grad_sq_norm: Optional[float] = None
    per_client_rmse: list = field(default_factory=list)

    @property
    def avg_rmse(self) -> float:
        return float(np.mean(self.per_client_rmse)) if self.per_client_rmse else float("nan")

    @property
    def std_rmse(self) -> float:
        return float(np.std(self.per_client_rmse)) if self.per_client_rmse else float("nan")


def _vec(p):
    return p.to_vector() if isinstance(p, GPParams) else np.asarray(p, dtype=float)


def param_sq_error(theta_bar, theta_star, components=Components.THETA1_THETA2) -> float:
    a, b = _vec(theta_bar), _vec(theta_star)
    if a.shape != b.shape:
        raise InputShapeError(f"parameter layouts differ: {a.shape} vs {b.shape}")
    components = Components(components)
    if components is Components.THETA1_THETA2:
        diff = a[:2] - b[:2]
    elif components is Components.THETA2_ONLY:
        diff = a[1:2] - b[1:2]
    else:
        diff = a - b
    return float(diff @ diff)


def rmse(pred_mean, truth) -> float:
    pred_mean = np.asarray(pred_mean, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred_mean.shape != truth.shape or pred_mean.size == 0:
        raise InputShapeError(
            f"rmse needs equal non-empty lengths, got {pred_mean.size} and {truth.size}"
        )
    return float(np.sqrt(np.mean((pred_mean - truth) ** 2)))


def global_grad(spec: KernelSpec, theta_bar, datasets: Sequence[Dataset],
                weights=None) -> np.ndarray:
    """sum_k p_k * full_grad(theta_bar; D_k), accumulated in client order."""
    if weights is None:
        sizes = np.array([len(d) for d in datasets], dtype=float)
        weights = sizes / sizes.sum()
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(datasets),):
        raise InputShapeError(f"{weights.size} weights for {len(datasets)} clients")
    total = None
    for w, d in zip(weights, datasets):
        if w == 0.0:
            continue
        g = w * full_grad(spec, theta_bar, d)
        total = g if total is None else total + g
    if total is None:
        total = np.zeros(len(_vec(theta_bar)))
    return total


def global_grad_sq_norm(spec: KernelSpec, theta_bar, datasets: Sequence[Dataset],
                        weights=None) -> float:
    g = global_grad(spec, theta_bar, datasets, weights)
    return float(g @ g)
