"""Named experiment scenarios with their default training recipes.

Every scenario is addressable by a string key and is built from a master
seed. A built :class:`Scenario` carries the client datasets in federation
order, the shared starting point and parameter box, the held-out evaluation
sets and, for synthetic GP data, the true parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError
from .gp_core import Dataset
from .kernels import Family, KernelSpec, ParamBox
from .synth import (
    FIDELITY_BOXES,
    THREE_LEVEL,
    FidelityFunction,
    Level,
    bad_init,
    draw_world,
    evaluate,
    imbalanced_sizes,
    make_clients,
    make_fidelity_clients,
    make_heterogeneous_clients,
    sample_box,
    sin_mirror,
    standardize,
)

__all__ = [
    "Scenario",
    "SCENARIOS",
    "MULTI_FIDELITY",
    "TABLE1_SIZES",
    "build_scenario",
    "special_cases",
    "scenario_names",
    "client_count",
]

# (HF, MF, LF) training sizes.
TABLE1_SIZES = {
    "currin": (40, 0, 200),
    "park": (50, 0, 300),
    "branin": (20, 40, 200),
    "hartmann3": (50, 100, 200),
    "borehole": (50, 0, 200),
    "linear": (20, 0, 100),
    "nonlinear": (20, 0, 100),
}
MULTI_FIDELITY = tuple(TABLE1_SIZES)

# Sub-stream tags for the scenario's random draws.
_DATA_STREAM = 10
_TEST_STREAM = 11
_INIT_STREAM = 12

# Sampling ranges for synthetic GP worlds.
GP_BOX = dict(theta1=(0.1, 10.0), theta2=(0.01, 1.0), lengthscale=(0.01, 1.0))


@dataclass
class Scenario:
    """Everything needed to train and evaluate one experiment repeat.

    ``test_inputs`` and ``test_truth`` are aligned with ``eval_clients``:
    each evaluated client predicts at its own test inputs by conditioning on
    its own training data. ``recipe`` holds federation overrides that apply
    unless the user's config sets the field explicitly.
    """

    name: str
    spec: KernelSpec
    clients: list
    init: np.ndarray
    box: ParamBox
    eval_clients: list = field(default_factory=list)
    test_inputs: list = field(default_factory=list)
    test_truth: list = field(default_factory=list)
    theta_star: Optional[np.ndarray] = None
    client_theta_star: Optional[list] = None
    transforms: Optional[list] = None
    hf_index: Optional[int] = None
    noise_std: Optional[float] = None
    recipe: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.clients[0].dim


def _stream(seed, tag):
    return np.random.default_rng(np.random.SeedSequence([seed, tag]))


def _take(options: dict, allowed: dict, name: str) -> dict:
    unknown = sorted(set(options) - set(allowed))
    if unknown:
        raise ConfigError(
            f"scenario {name!r} does not accept option(s) {unknown}; "
            f"allowed: {sorted(allowed)}"
        )
    return {**allowed, **options}


def _to_unit(name, X):
    box = np.asarray(FIDELITY_BOXES[name], dtype=float)
    return (X - box[:, 0]) / (box[:, 1] - box[:, 0])


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

# Step-size scale per benchmark where the shared default of 1.0 was too slow.
_MF_RATE = {"park": 10.0}


def _multi_fidelity(name, seed, options):
    opts = _take(options, {"sizes": TABLE1_SIZES[name], "n_test": 1000, "noise": None,
                           "standardize": True, "ard": True}, name)
    sizes = tuple(int(s) for s in opts["sizes"])
    if len(sizes) != 3:
        raise ConfigError(f"sizes must be (HF, MF, LF), got {opts['sizes']!r}")
    raw = make_fidelity_clients(name, sizes, _stream(seed, _DATA_STREAM), opts["noise"])
    X_test = sample_box(name, int(opts["n_test"]), _stream(seed, _TEST_STREAM))
    y_test = evaluate(FidelityFunction(name, Level.HIGH), X_test)
    # Inputs are mapped affinely onto the unit cube so a single length-scale
    # box suits every benchmark.
    clients = [Dataset(_to_unit(name, d.inputs), d.outputs) for d in raw]
    transforms = None
    if opts["standardize"]:
        clients, transforms = standardize(clients)
        y_test = transforms[-1].forward(y_test)
    hf = len(clients) - 1
    spec = KernelSpec(Family.RBF, ard=bool(opts["ard"]))
    d = clients[0].dim
    n_ls = spec.n_lengthscales(d)
    box = ParamBox.uniform(n_ls, theta1=(0.05, 10.0), theta2=(1e-4, 1.0),
                           lengthscale=(0.01, 10.0))
    init = np.r_[1.0, 0.1, np.full(n_ls, 0.5)]
    rate = _MF_RATE.get(name, 1.0)
    return Scenario(
        name, spec, clients, init, box,
        eval_clients=[hf], test_inputs=[_to_unit(name, X_test)], test_truth=[y_test],
        transforms=transforms, hf_index=hf,
        recipe=dict(lr_schedule={"kind": "inverse_time", "value": rate}, clip_norm=1.0,
                    rounds=200),
        meta={"sizes": sizes, "levels": len(clients)},
    )


def _sin_mirror(seed, options):
    opts = _take(options, {"n": 100, "n_test": 1000}, "sin-mirror")
    toy = sin_mirror(int(opts["n"]))
    spec = KernelSpec(Family.RBF)
    X_test = np.linspace(0.0, 10.0, int(opts["n_test"]))[:, None]
    box = ParamBox.uniform(1, theta1=(0.05, 10.0), theta2=(1e-3, 1.0),
                           lengthscale=(0.05, 10.0))
    return Scenario(
        "sin-mirror", spec, toy.clients, np.array([1.0, 0.1, 1.0]), box,
        eval_clients=[0, 1], test_inputs=[X_test, X_test],
        test_truth=[f(X_test) for f in toy.truth],
        recipe=dict(lr_schedule={"kind": "inverse_time", "value": 1.0}, clip_norm=1.0, rounds=100),
    )


def _bad_init(seed, options):
    opts = _take(options, {"n": 100, "n_test": 1000, "noise_is_variance": True},
                 "bad-init")
    toy = bad_init(_stream(seed, _DATA_STREAM), int(opts["n"]),
                   noise_is_variance=bool(opts["noise_is_variance"]))
    spec = KernelSpec(Family.RBF)
    X_test = _stream(seed, _TEST_STREAM).uniform(0.0, 1.0, size=(int(opts["n_test"]), 1))
    # The box has to contain the deliberately poor starting point.
    box = ParamBox.uniform(1, theta1=(0.01, 10.0), theta2=(0.01, 10.0),
                           lengthscale=(0.01, 10.0))
    return Scenario(
        "bad-init", spec, toy.clients, toy.init.to_vector(), box,
        eval_clients=[0, 1], test_inputs=[X_test, X_test],
        test_truth=[f(X_test) for f in toy.truth], noise_std=toy.noise_std,
        recipe=dict(lr_schedule={"kind": "inverse_time", "value": 10.0}, clip_norm=1.0, rounds=200),
    )


def _gp_spec(opts):
    return KernelSpec(opts["kernel"], ard=bool(opts["ard"]))


def _gp_init(spec, d, seed, truth=None):
    rng = _stream(seed, _INIT_STREAM)
    lo = np.array([GP_BOX["theta1"][0], GP_BOX["theta2"][0]])
    hi = np.array([GP_BOX["theta1"][1], GP_BOX["theta2"][1]])
    head = rng.uniform(lo, hi)
    n_ls = spec.n_lengthscales(d)
    tail = np.asarray(truth, dtype=float) if truth is not None else \
        rng.uniform(*GP_BOX["lengthscale"], size=n_ls)
    return np.r_[head, tail]


def _gp_world(name, seed, options, sizes_fn, defaults):
    opts = _take(options, defaults, name)
    rng = _stream(seed, _DATA_STREAM)
    spec = _gp_spec(opts)
    world = draw_world(rng, spec, opts["dim"])
    sizes = sizes_fn(opts, rng)
    clients = make_clients(world, sizes, rng, shared_draw=bool(opts["shared_draw"]))
    truth = world.true_params.to_vector()
    box = ParamBox.uniform(spec.n_lengthscales(world.dim), **GP_BOX)
    # With frozen length-scales the shared start uses the true ones.
    init = _gp_init(spec, world.dim, seed,
                    truth[2:] if opts["start_at_true_lengthscales"] else None)
    return Scenario(
        name, spec, clients, init, box, theta_star=truth,
        recipe=dict(lr_schedule={"kind": "inverse_time", "value": 10.0}, clip_norm=1.0,
                    scaling={"enabled": True, "tau": 0.3},
                    freeze_lengthscales=bool(opts["start_at_true_lengthscales"])),
        meta={"sizes": sizes, "dim": world.dim},
    )


_GP_DEFAULTS = {"kernel": "rbf", "ard": True, "dim": None, "shared_draw": False,
                "start_at_true_lengthscales": True}


def _gp_homogeneous(seed, options):
    defaults = {**_GP_DEFAULTS, "n_clients": 20, "n_total": 5000}

    def sizes(opts, rng):
        k, n = int(opts["n_clients"]), int(opts["n_total"])
        if k < 1 or n < k:
            raise ConfigError(f"need n_total >= n_clients >= 1, got {n} and {k}")
        return [n // k] * k

    return _gp_world("gp-homogeneous", seed, options, sizes, defaults)


def _gp_imbalanced(seed, options):
    defaults = {**_GP_DEFAULTS, "n_clients": 10, "min_size": 10, "max_size": 10_000}

    def sizes(opts, rng):
        return imbalanced_sizes(int(opts["n_clients"]), rng,
                                int(opts["min_size"]), int(opts["max_size"]))

    return _gp_world("gp-imbalanced", seed, options, sizes, defaults)


def _gp_heterogeneous(seed, options):
    opts = _take(options, {"kernel": "rbf", "ard": True, "dim": None,
                           "n_clients": 10, "size": 200}, "gp-heterogeneous")
    rng = _stream(seed, _DATA_STREAM)
    spec = _gp_spec(opts)
    k = int(opts["n_clients"])
    worlds, clients = make_heterogeneous_clients([int(opts["size"])] * k, rng, spec,
                                                 opts["dim"])
    d = worlds[0].dim
    box = ParamBox.uniform(spec.n_lengthscales(d), **GP_BOX)
    return Scenario(
        "gp-heterogeneous", spec, clients, _gp_init(spec, d, seed), box,
        client_theta_star=[w.true_params.to_vector() for w in worlds],
        # Per-client clipping would average normalised directions, whose zero
        # is not the stationary point of the weighted loss, so it stays off.
        recipe=dict(lr_schedule={"kind": "inverse_time", "value": 0.01}, clip_norm=None,
                    scaling={"enabled": True, "tau": 0.3}),
        meta={"dim": d},
    )


SCENARIOS: dict[str, Callable] = {
    **{name: (lambda seed, options, _n=name: _multi_fidelity(_n, seed, options))
       for name in MULTI_FIDELITY},
    "sin-mirror": _sin_mirror,
    "bad-init": _bad_init,
    "gp-homogeneous": _gp_homogeneous,
    "gp-imbalanced": _gp_imbalanced,
    "gp-heterogeneous": _gp_heterogeneous,
}

_DESCRIPTIONS = {
    "currin": "2-d CURRIN, two fidelity levels",
    "park": "4-d PARK, two fidelity levels",
    "branin": "2-d BRANIN, three fidelity levels",
    "hartmann3": "3-d Hartmann, three fidelity levels",
    "borehole": "8-d Borehole, two fidelity levels",
    "linear": "1-d linear multi-fidelity pair",
    "nonlinear": "1-d nonlinear multi-fidelity pair",
    "sin-mirror": "two clients observing sin(x) and -sin(x)",
    "bad-init": "noisy sin(x) with a start that treats all signal as noise",
    "gp-homogeneous": "GP prior draws, equal client sizes",
    "gp-imbalanced": "GP prior draws, log-uniform client sizes",
    "gp-heterogeneous": "GP prior draws with a distinct world per client",
}


def scenario_names() -> list:
    return list(SCENARIOS)


def describe(name: str) -> str:
    return _DESCRIPTIONS[name]


def build_scenario(name: str, seed: int = 0, options: Optional[dict] = None) -> Scenario:
    """Construct the named scenario deterministically from ``seed``."""
    try:
        builder = SCENARIOS[name]
    except KeyError:
        raise ConfigError(
            f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}"
        ) from None
    return builder(int(seed), dict(options or {}))


def client_count(name: str, options: Optional[dict] = None) -> int:
    """Number of clients the scenario will have, without building it."""
    options = dict(options or {})
    if name in TABLE1_SIZES:
        return 3 if name in THREE_LEVEL else 2
    if name in ("sin-mirror", "bad-init"):
        return 2
    defaults = {"gp-homogeneous": 20, "gp-imbalanced": 10, "gp-heterogeneous": 10}
    if name in defaults:
        return int(options.get("n_clients", defaults[name]))
    raise ConfigError(f"unknown scenario {name!r}")


def special_cases(rng) -> dict:
    """The two hand-built toy problems keyed by scenario name."""
    return {"sin-mirror": sin_mirror(), "bad-init": bad_init(rng)}
