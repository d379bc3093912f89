"""FedAvg-style federation of GP hyperparameters.

A run alternates between a server step (select clients, broadcast the
current parameters, aggregate) and client steps (E local SGD updates on a
client's own data). All randomness is drawn from streams derived from the
master seed, the client id and the round index, so the outcome does not
depend on the order in which clients are executed.
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, FederationError, FedGPError, InputShapeError
from .gp_core import Dataset, GradScaling, sample_batch, stochastic_grad
from .kernels import KernelSpec, ParamBox

__all__ = [
    "ScheduleSpec",
    "Participation",
    "FederationConfig",
    "ClientState",
    "RoundTrace",
    "client_weights",
    "client_rng",
    "local_update",
    "select_clients",
    "aggregate_full",
    "aggregate_sampled",
    "make_clients_state",
    "run_federation",
]

log = logging.getLogger(__name__)

# Tags that keep the derived random streams apart.
_CLIENT_STREAM = 1
_SELECT_STREAM = 2
_INIT_STREAM = 3


class ScheduleKind(str, enum.Enum):
    CONSTANT = "constant"
    INVERSE_TIME = "inverse_time"


@dataclass(frozen=True)
class ScheduleSpec:
    """Learning rate schedule.

    ``constant`` uses eta(t) = value; ``inverse_time`` uses
    eta(t) = value / (1 + t), with t the global local-step counter.
    """

    kind: ScheduleKind = ScheduleKind.INVERSE_TIME
    value: float = 0.05

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", ScheduleKind(self.kind))
        except ValueError:
            raise ConfigError(f"unknown schedule kind {self.kind!r}") from None
        if self.value < 0 or not math.isfinite(self.value):
            raise ConfigError(f"learning rate must be finite and >= 0, got {self.value}")

    def rate(self, t: int) -> float:
        if self.kind is ScheduleKind.CONSTANT:
            return self.value
        return self.value / (1.0 + t)


class Participation(str, enum.Enum):
    SYNCHRONOUS = "synchronous"
    ASYNCHRONOUS = "asynchronous"


@dataclass(frozen=True)
class FederationConfig:
    rounds: int = 200
    local_steps: int = 5
    participation: Participation = Participation.SYNCHRONOUS
    sample_size: Optional[int] = None
    lr_schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    scaling: GradScaling = field(default_factory=GradScaling)
    box: Optional[ParamBox] = None
    clip_norm: Optional[float] = None
    freeze_lengthscales: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "participation", Participation(self.participation))
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if self.local_steps < 0:
            raise ConfigError(f"local_steps must be >= 0, got {self.local_steps}")
        if self.participation is Participation.ASYNCHRONOUS:
            if self.sample_size is None or self.sample_size < 1:
                raise ConfigError("asynchronous participation needs sample_size >= 1")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError(f"clip_norm must be positive, got {self.clip_norm}")

    def validate_for(self, n_clients: int):
        if (self.participation is Participation.ASYNCHRONOUS
                and not 1 <= self.sample_size < n_clients):
            raise ConfigError(
                f"asynchronous sample_size must satisfy 1 <= K_sample < K={n_clients}, "
                f"got {self.sample_size}"
            )


@dataclass
class ClientState:
    id: int
    data: Dataset
    params: np.ndarray
    weight: float
    batch_size: int
    rng: Optional[np.random.Generator] = None

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=float)
        if not 1 <= self.batch_size <= len(self.data):
            raise ConfigError(
                f"client {self.id}: batch size {self.batch_size} not in [1, {len(self.data)}]"
            )


@dataclass
class RoundTrace:
    round: int
    params: np.ndarray
    client_params: dict
    selected: list
    metrics: dict = field(default_factory=dict)


def client_weights(sizes: Sequence[int]) -> np.ndarray:
    """p_k = N_k / sum_j N_j."""
    sizes = np.asarray(sizes, dtype=float)
    if sizes.size == 0:
        raise InputShapeError("need at least one client size")
    if np.any(sizes < 1):
        raise InputShapeError(f"client sizes must be >= 1, got {sizes.tolist()}")
    return sizes / sizes.sum()


def client_rng(seed: int, client_id: int, round_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence([seed, _CLIENT_STREAM, client_id, round_index])
    return np.random.default_rng(ss)


def _selection_rng(seed, round_index):
    return np.random.default_rng(
        np.random.SeedSequence([seed, _SELECT_STREAM, round_index])
    )


def init_params(box: ParamBox, seed: int) -> np.ndarray:
    """Default shared starting point: uniform over the box."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, _INIT_STREAM]))
    return box.sample(rng)


def local_update(spec: KernelSpec, client: ClientState, local_steps: int,
                 schedule: ScheduleSpec, scaling: GradScaling, box: ParamBox,
                 clip_norm: Optional[float] = None, freeze: bool = False,
                 step_offset: int = 0, grad_log: Optional[list] = None) -> np.ndarray:
    """Run ``local_steps`` projected SGD steps from ``client.params``.

    The learning rate at local step s is ``schedule.rate(step_offset + s)``.
    Returns the final parameter vector; ``client.params`` is left alone.
    If ``grad_log`` is given, each applied gradient is appended to it.
    """
    theta = np.array(client.params, dtype=float)
    if not box.contains(theta):
        raise FederationError(
            f"client {client.id}: starting parameters {theta} lie outside the box",
            client_id=client.id,
        )
    rng = client.rng
    n = len(client.data)
    for s in range(local_steps):
        eta = schedule.rate(step_offset + s)
        batch = sample_batch(n, client.batch_size, rng)
        g = stochastic_grad(spec, theta, client.data, batch, scaling, rng)
        if clip_norm is not None:
            norm = float(np.linalg.norm(g))
            if norm > clip_norm:
                g *= clip_norm / norm
        if freeze:
            g[2:] = 0.0
        if grad_log is not None:
            grad_log.append(g.copy())
        theta = box.project(theta - eta * g)
        assert box.contains(theta)
    return theta


def select_clients(weights, sample_size: int, rng) -> list:
    """Draw ``sample_size`` client ids with replacement, P(k) = p_k."""
    weights = np.asarray(weights, dtype=float)
    if sample_size < 1:
        raise InputShapeError(f"sample size must be >= 1, got {sample_size}")
    if weights.size == 1:
        return [0] * sample_size
    return rng.choice(weights.size, size=sample_size, replace=True, p=weights).tolist()


def aggregate_full(params_list, weights, box: Optional[ParamBox] = None) -> np.ndarray:
    """Weighted average sum_k p_k theta_k."""
    P = np.asarray([np.asarray(p, dtype=float) for p in params_list]) \
        if _same_layout(params_list) else None
    if P is None:
        raise InputShapeError("client parameter vectors have different layouts")
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (P.shape[0],):
        raise InputShapeError(
            f"{weights.size} weights for {P.shape[0]} parameter vectors"
        )
    if abs(weights.sum() - 1.0) > 1e-9:
        raise InputShapeError(f"weights must sum to 1, got {weights.sum()!r}")
    avg = _anchored_sum(P, weights)
    if box is not None:
        projected = box.project(avg)
        # Convex combinations of in-box points stay in the box up to round-off.
        assert np.allclose(projected, avg, rtol=1e-12, atol=0.0)
        avg = projected
    return avg


def aggregate_sampled(params_list) -> np.ndarray:
    """Unweighted mean over the selected slots (duplicates count per slot)."""
    if len(params_list) == 0:
        raise InputShapeError("no selected clients to aggregate")
    if not _same_layout(params_list):
        raise InputShapeError("client parameter vectors have different layouts")
    P = np.asarray([np.asarray(p, dtype=float) for p in params_list])
    return _anchored_sum(P, np.full(P.shape[0], 1.0 / P.shape[0]))


def _anchored_sum(P, weights):
    """sum_k w_k P_k, computed as m + fsum(w_k (P_k - m)) with m the column minimum.

    Identical rows give that row exactly, and the correctly rounded fsum makes
    the result independent of row order.
    """
    m = P.min(axis=0)
    D = P - m
    return np.array([
        m[j] + math.fsum(weights * D[:, j]) for j in range(P.shape[1])
    ])


def _same_layout(params_list) -> bool:
    shapes = {np.shape(p) for p in params_list}
    return len(shapes) == 1 and len(next(iter(shapes))) == 1


def make_clients_state(datasets: Sequence[Dataset], init, batch_size=64,
                       weights=None) -> list:
    """Wrap datasets as clients sharing one starting parameter vector.

    ``batch_size`` is either one count applied as min(count, N_k), or a
    sequence with one entry per client.
    """
    if weights is None:
        weights = client_weights([len(d) for d in datasets])
    if np.isscalar(batch_size):
        sizes = [min(int(batch_size), len(d)) for d in datasets]
    else:
        sizes = [int(b) for b in batch_size]
    return [
        ClientState(k, d, np.array(init, dtype=float), float(w), m)
        for k, (d, w, m) in enumerate(zip(datasets, weights, sizes))
    ]


def run_federation(spec: KernelSpec, clients: Sequence[ClientState],
                   config: FederationConfig,
                   metric_fn: Optional[Callable[[int, np.ndarray], dict]] = None,
                   metric_every: int = 1, workers: int = 1) -> list:
    """Run ``config.rounds`` communication rounds and return one trace per round.

    All clients must start from the same parameters. ``metric_fn(round, theta)``
    is called after aggregation every ``metric_every`` rounds and on the last
    round; its dict is stored in the trace.
    """
    K = len(clients)
    if K < 1:
        raise InputShapeError("need at least one client")
    config.validate_for(K)
    dims = {c.data.dim for c in clients}
    if len(dims) != 1:
        raise InputShapeError(f"clients have different input dimensions {sorted(dims)}")
    theta = np.array(clients[0].params, dtype=float)
    box = config.box
    if box is None:
        box = ParamBox.uniform(len(theta) - 2)
    if len(box) != len(theta):
        raise InputShapeError(
            f"box has {len(box)} components but parameters have {len(theta)}"
        )
    weights = np.array([c.weight for c in clients])
    if abs(weights.sum() - 1.0) > 1e-12:
        raise InputShapeError(f"client weights must sum to 1, got {weights.sum()!r}")
    E = config.local_steps
    traces = []
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for c in range(config.rounds):
            for client in clients:
                if not np.array_equal(client.params, theta):
                    raise FederationError(
                        "clients do not share the broadcast parameters",
                        round_index=c, client_id=client.id,
                    )
            if config.participation is Participation.SYNCHRONOUS:
                selected = list(range(K))
            else:
                selected = select_clients(weights, config.sample_size,
                                          _selection_rng(config.seed, c))
            unique = sorted(set(selected))

            def work(k, c=c):
                client = clients[k]
                client.rng = client_rng(config.seed, k, c)
                try:
                    return local_update(
                        spec, client, E, config.lr_schedule, config.scaling, box,
                        config.clip_norm, config.freeze_lengthscales, step_offset=c * E,
                    )
                except FedGPError as exc:
                    raise FederationError(
                        f"round {c}, client {k}: {exc}", round_index=c, client_id=k
                    ) from exc

            if pool is None:
                results = [work(k) for k in unique]
            else:
                results = list(pool.map(work, unique))
            local = dict(zip(unique, results))

            if config.participation is Participation.SYNCHRONOUS:
                theta = aggregate_full([local[k] for k in range(K)], weights, box)
            else:
                theta = box.project(aggregate_sampled([local[k] for k in selected]))
            for client in clients:
                client.params = theta.copy()

            metrics = {}
            last = c == config.rounds - 1
            if metric_fn is not None and ((c + 1) % metric_every == 0 or last):
                metrics = metric_fn(c + 1, theta)
            traces.append(RoundTrace(c + 1, theta.copy(), local, selected, metrics))
    finally:
        if pool is not None:
            pool.shutdown()
    return traces
