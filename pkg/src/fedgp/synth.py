"""Synthetic data: GP prior draws, multi-fidelity benchmarks, toy scenarios."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, InputShapeError, ParameterDomainError
from .gp_core import Dataset, sample_prior
from .kernels import Family, GPParams, KernelSpec

__all__ = [
    "GPWorld",
    "Level",
    "FidelityFunction",
    "FIDELITY_BOXES",
    "Standardizer",
    "draw_world",
    "make_clients",
    "imbalanced_sizes",
    "make_heterogeneous_clients",
    "evaluate",
    "fidelity_eval",
    "sample_box",
    "make_fidelity_clients",
    "standardize",
    "sin_mirror",
    "bad_init",
]

THETA1_RANGE = (0.1, 10.0)
THETA2_RANGE = (0.01, 1.0)
LENGTHSCALE_RANGE = (0.01, 1.0)
DIM_RANGE = (1, 10)


@dataclass(frozen=True, eq=False)
class GPWorld:
    spec: KernelSpec
    true_params: GPParams
    dim: int
    input_box: tuple = ()

    def __post_init__(self):
        if not self.input_box:
            object.__setattr__(self, "input_box", ((0.0, 1.0),) * self.dim)


def draw_world(rng, spec: Optional[KernelSpec] = None, dim: Optional[int] = None,
               theta1_range=THETA1_RANGE, theta2_range=THETA2_RANGE,
               lengthscale_range=LENGTHSCALE_RANGE) -> GPWorld:
    """Draw d, theta1, theta2 and length-scales uniformly from their ranges.

    Draw order is d, theta1, theta2, length-scales. When ``dim`` is given the
    d draw is skipped.
    """
    if spec is None:
        spec = KernelSpec(Family.RBF, ard=True)
    if dim is None:
        dim = int(rng.integers(DIM_RANGE[0], DIM_RANGE[1] + 1))
    elif dim < 1:
        raise InputShapeError(f"dimension must be >= 1, got {dim}")
    theta1 = rng.uniform(*theta1_range)
    theta2 = rng.uniform(*theta2_range)
    ls = rng.uniform(*lengthscale_range, size=spec.n_lengthscales(dim))
    return GPWorld(spec, GPParams(theta1, theta2, ls), dim)


def make_clients(world: GPWorld, sizes: Sequence[int], rng, shared_draw=False,
                 n_test: int = 0):
    """Uniform inputs on the unit cube with outputs drawn from the world's GP.

    Each client gets an independent function draw unless ``shared_draw``.
    With ``n_test > 0`` every client also gets ``n_test`` held-out points
    drawn jointly with its training data; the return value is then a pair
    ``(train, test)`` of dataset lists.
    """
    sizes = [int(s) for s in sizes]
    if not sizes:
        raise InputShapeError("need at least one client size")
    if min(sizes) < 1:
        raise InputShapeError(f"client sizes must be >= 1, got {sizes}")
    totals = [s + n_test for s in sizes]
    X_all = [rng.uniform(0.0, 1.0, size=(t, world.dim)) for t in totals]
    if shared_draw:
        y = sample_prior(world.spec, world.true_params, np.vstack(X_all), rng)
        y_all = np.split(y, np.cumsum(totals)[:-1])
    else:
        y_all = [sample_prior(world.spec, world.true_params, X, rng) for X in X_all]
    train = [Dataset(X[:s], y[:s]) for X, y, s in zip(X_all, y_all, sizes)]
    if n_test == 0:
        return train
    test = [Dataset(X[s:], y[s:]) for X, y, s in zip(X_all, y_all, sizes)]
    return train, test


def imbalanced_sizes(n_clients: int, rng, low=10, high=10_000) -> list:
    """Client sizes log-uniform on [low, high]."""
    u = rng.uniform(math.log(low), math.log(high), size=n_clients)
    return [int(v) for v in np.clip(np.rint(np.exp(u)), low, high)]


def make_heterogeneous_clients(sizes, rng, spec: Optional[KernelSpec] = None,
                               dim: Optional[int] = None, n_test: int = 0):
    """One independently drawn world per client, all sharing the input dimension.

    Returns ``(worlds, train)`` or ``(worlds, train, test)`` when ``n_test > 0``.
    """
    if spec is None:
        spec = KernelSpec(Family.RBF, ard=True)
    if dim is None:
        dim = int(rng.integers(DIM_RANGE[0], DIM_RANGE[1] + 1))
    worlds, train, test = [], [], []
    for s in sizes:
        w = draw_world(rng, spec, dim)
        out = make_clients(w, [s], rng, n_test=n_test)
        worlds.append(w)
        if n_test:
            train.append(out[0][0])
            test.append(out[1][0])
        else:
            train.append(out[0])
    return (worlds, train, test) if n_test else (worlds, train)


# ---------------------------------------------------------------------------
# multi-fidelity benchmarks
# ---------------------------------------------------------------------------

class Level(str, enum.Enum):
    LOW = "low"
    MID = "mid"
    HIGH = "high"


FIDELITY_BOXES = {
    "linear": ((0.0, 1.0),),
    "nonlinear": ((0.0, 2.0),),
    "currin": ((0.0, 1.0),) * 2,
    "park": ((0.0, 1.0),) * 4,  # lower bound is open: x1 = 0 divides by zero
    "branin": ((-5.0, 10.0), (0.0, 15.0)),
    "hartmann3": ((0.0, 1.0),) * 3,
    "borehole": (
        (0.05, 0.15), (100.0, 50_000.0), (63_070.0, 115_600.0), (990.0, 1110.0),
        (63.1, 115.0), (700.0, 820.0), (1120.0, 1680.0), (9855.0, 12_045.0),
    ),
}
THREE_LEVEL = {"branin", "hartmann3"}
_OPEN_LOWER = {"park"}


@dataclass(frozen=True)
class FidelityFunction:
    name: str
    level: Level = Level.HIGH

    def __post_init__(self):
        if self.name not in FIDELITY_BOXES:
            raise ConfigError(
                f"unknown benchmark {self.name!r}; expected one of {sorted(FIDELITY_BOXES)}"
            )
        object.__setattr__(self, "level", Level(self.level))
        if self.level is Level.MID and self.name not in THREE_LEVEL:
            raise ConfigError(f"{self.name} has no mid fidelity level")

    @property
    def box(self):
        return FIDELITY_BOXES[self.name]

    @property
    def dim(self) -> int:
        return len(self.box)


def _linear_high(X):
    x = X[:, 0]
    return (6 * x - 2) ** 2 * np.sin(12 * x - 4)


def _linear(X, level):
    yh = _linear_high(X)
    if level is Level.HIGH:
        return yh
    return 0.5 * yh + 10 * (X[:, 0] - 0.5) + 5


def _nonlinear(X, level):
    x = X[:, 0]
    if level is Level.LOW:
        return np.cos(15 * x)
    return x * np.exp(np.cos(15 * (2 * x - 0.2))) - 1


def _currin_high(x1, x2):
    with np.errstate(divide="ignore"):
        factor = 1 - np.exp(-1 / (2 * x2))
    num = 2300 * x1 ** 3 + 1900 * x1 ** 2 + 2092 * x1 + 60
    den = 100 * x1 ** 3 + 500 * x1 ** 2 + 4 * x1 + 20
    return factor * num / den


def _currin(X, level):
    x1, x2 = X[:, 0], X[:, 1]
    if level is Level.HIGH:
        return _currin_high(x1, x2)
    lo2 = np.maximum(0.0, x2 - 0.05)
    return 0.25 * (
        _currin_high(x1 + 0.05, x2 + 0.05) + _currin_high(x1 + 0.05, lo2)
        + _currin_high(x1 - 0.05, x2 + 0.05) + _currin_high(x1 - 0.05, lo2)
    )


def _park(X, level):
    x1, x2, x3, x4 = X.T
    yh = (x1 / 2) * (np.sqrt(1 + (x2 + x3 ** 2) * x4 / x1 ** 2) - 1) \
        + (x1 + 3 * x4) * np.exp(1 + np.sin(x3))
    if level is Level.HIGH:
        return yh
    return (1 + np.sin(x1) / 10) * yh - 2 * x1 + x2 ** 2 + x3 ** 2 + 0.5


def _branin_high(X):
    x1, x2 = X[:, 0], X[:, 1]
    return (-1.275 * x1 ** 2 / np.pi ** 2 + 5 * x1 / np.pi + x2 - 6) ** 2 \
        + (10 - 5 / (4 * np.pi)) * np.cos(x1) + 10


def _branin_mid(X):
    inner = _branin_high(X - 2)
    if np.any(inner < 0):
        raise ParameterDomainError(
            "branin mid fidelity: sqrt of a negative high-fidelity value"
        )
    return 10 * np.sqrt(inner) + 2 * (X[:, 0] - 0.5) - 3 * (3 * X[:, 1] - 1) - 1


def _branin(X, level):
    if level is Level.HIGH:
        return _branin_high(X)
    if level is Level.MID:
        return _branin_mid(X)
    return _branin_mid(1.2 * (X + 2)) - 3 * X[:, 1] + 1


_HART_A = np.array([[3, 10, 30], [0.1, 10, 35], [3, 10, 30], [0.1, 10, 35]], dtype=float)
_HART_P = np.array([
    [0.3689, 0.1170, 0.2673],
    [0.4699, 0.4387, 0.7470],
    [0.1091, 0.8732, 0.5547],
    [0.0381, 0.5743, 0.8828],
])
_HART_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_HART_DELTA = np.array([0.01, -0.01, -0.1, 0.1])
_HART_T = {Level.LOW: 1, Level.MID: 2, Level.HIGH: 3}


def _hartmann3(X, level):
    alpha = _HART_ALPHA + (3 - _HART_T[level]) * _HART_DELTA
    sq = (X[:, None, :] - _HART_P[None, :, :]) ** 2
    return np.exp(-np.einsum("nij,ij->ni", sq, _HART_A)) @ alpha


def _borehole(X, level):
    x1, x2, x3, x4, x5, x6, x7, x8 = X.T
    log_ratio = np.log(x2 / x1)
    common = 2 * x7 * x3 / (log_ratio * x1 ** 2 * x8) + x3 / x5
    if level is Level.HIGH:
        return 2 * np.pi * x3 * (x4 - x6) / (log_ratio * (1 + common))
    return 5 * np.pi * x3 * (x4 - x6) / (log_ratio * (1.5 + common))


_FORMULAS = {
    "linear": _linear,
    "nonlinear": _nonlinear,
    "currin": _currin,
    "park": _park,
    "branin": _branin,
    "hartmann3": _hartmann3,
    "borehole": _borehole,
}


def _check_in_box(name, X):
    box = np.asarray(FIDELITY_BOXES[name])
    lo, hi = box[:, 0], box[:, 1]
    below = X <= lo if name in _OPEN_LOWER else X < lo
    if np.any(below) or np.any(X > hi):
        raise InputShapeError(f"input outside the {name} domain {box.tolist()}")


def evaluate(f: FidelityFunction, X) -> np.ndarray:
    """Vectorised benchmark evaluation on the rows of X."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if f.dim == 1 else X[None, :]
    if X.ndim != 2 or X.shape[1] != f.dim:
        raise InputShapeError(f"{f.name} takes {f.dim}-d inputs, got shape {X.shape}")
    _check_in_box(f.name, X)
    return _FORMULAS[f.name](X, f.level)


def fidelity_eval(f: FidelityFunction, x) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (f.dim,):
        raise InputShapeError(f"{f.name} takes {f.dim}-d inputs, got shape {x.shape}")
    return float(evaluate(f, x[None, :])[0])


def sample_box(name: str, n: int, rng) -> np.ndarray:
    box = np.asarray(FIDELITY_BOXES[name])
    lo, hi = box[:, 0], box[:, 1]
    u = rng.uniform(size=(n, box.shape[0]))
    if name in _OPEN_LOWER:
        u = 1.0 - u  # (0, 1]
    return lo + u * (hi - lo)


def make_fidelity_clients(name: str, sizes, rng, noise: Optional[float] = None):
    """One client per fidelity level, ordered low, [mid,] high.

    ``sizes`` is ``(n_high, n_mid, n_low)`` as in the usual HF/MF/LF notation;
    ``n_mid`` must be 0 for two-level problems.
    """
    n_high, n_mid, n_low = (int(s) for s in sizes)
    three = name in THREE_LEVEL
    if n_mid and not three:
        raise ConfigError(f"{name} has only two fidelity levels; mid count must be 0")
    plan = [(Level.LOW, n_low)]
    if three:
        plan.append((Level.MID, n_mid))
    plan.append((Level.HIGH, n_high))
    out = []
    for level, n in plan:
        if n < 1:
            raise ConfigError(f"{name} {level.value} fidelity needs >= 1 point")
        X = sample_box(name, n, rng)
        y = evaluate(FidelityFunction(name, level), X)
        if noise:
            y = y + noise * rng.standard_normal(n)
        out.append(Dataset(X, y))
    return out


# ---------------------------------------------------------------------------
# standardization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Standardizer:
    mean: float
    std: float

    def forward(self, y):
        return (np.asarray(y, dtype=float) - self.mean) / self.std

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean


def standardize(datasets: Sequence[Dataset]):
    """Rescale each client's outputs to sample mean 0 and variance 1 (ddof=1)."""
    out, transforms = [], []
    for k, d in enumerate(datasets):
        if len(d) < 2:
            raise ConfigError(f"client {k}: standardizing needs >= 2 points")
        m = float(np.mean(d.outputs))
        s = float(np.std(d.outputs, ddof=1))
        if not s > 0:
            raise ConfigError(f"client {k}: outputs have zero variance")
        t = Standardizer(m, s)
        out.append(Dataset(d.inputs, t.forward(d.outputs)))
        transforms.append(t)
    return out, transforms


# ---------------------------------------------------------------------------
# toy scenarios
# ---------------------------------------------------------------------------

@dataclass
class ToyScenario:
    clients: list
    truth: list  # callables giving the noiseless curve per client
    domain: tuple
    init: Optional[GPParams] = None
    noise_std: float = 0.0
    meta: dict = field(default_factory=dict)


def sin_mirror(n: int = 100) -> ToyScenario:
    """Client 0 sees y = sin(x), client 1 sees y = -sin(x), x evenly spread on [0, 10]."""
    x = np.linspace(0.0, 10.0, n)
    clients = [Dataset(x[:, None], np.sin(x)), Dataset(x[:, None], -np.sin(x))]
    truth = [lambda X: np.sin(X[:, 0]), lambda X: -np.sin(X[:, 0])]
    return ToyScenario(clients, truth, ((0.0, 10.0),))


def bad_init(rng, n: int = 100, n_clients: int = 2, noise_is_variance=True) -> ToyScenario:
    """Noisy sin(x) on [0, 1] with an initial guess that explains everything as noise.

    ``noise_is_variance`` reads N(0, 0.2) as variance 0.2; otherwise 0.2 is the
    standard deviation.
    """
    sd = math.sqrt(0.2) if noise_is_variance else 0.2
    clients = []
    for _ in range(n_clients):
        x = rng.uniform(0.0, 1.0, size=n)
        clients.append(Dataset(x[:, None], np.sin(x) + sd * rng.standard_normal(n)))
    truth = [lambda X: np.sin(X[:, 0])] * n_clients
    return ToyScenario(clients, truth, ((0.0, 1.0),), init=GPParams(1.0, 10.0, [1.0]),
                       noise_std=sd)
