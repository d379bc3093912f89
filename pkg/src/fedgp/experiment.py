"""Experiment runner behind the command line.

Builds a scenario (or ingests CSV datasets), resolves the federation recipe,
runs FGPR and, for multi-fidelity problems, the HF-only ``Separate``
baseline, then writes ``trace.csv``, ``summary.csv`` and ``config.echo``.
"""

from __future__ import annotations

import copy
import csv
import io
import logging
import os
import shutil
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .config import DEFAULT_BATCH_SIZE, DEFAULTS, ExperimentConfig, dump_config
from .errors import ConfigError, FedGPError, InputShapeError
from .federation import (
    FederationConfig,
    RoundTrace,
    ScheduleSpec,
    make_clients_state,
    run_federation,
)
from .gp_core import Dataset, GradScaling, predict
from .kernels import KernelSpec, ParamBox
from .metrics import Components, global_grad_sq_norm, param_sq_error, rmse
from .scenarios import Scenario, build_scenario
from .synth import standardize

__all__ = [
    "RunResult",
    "load_csv_dataset",
    "scenario_from_csv",
    "resolve_federation",
    "prepare",
    "run_fgpr",
    "run_separate_baseline",
    "run_experiment",
    "worker_count",
]

log = logging.getLogger(__name__)

FGPR = "FGPR"
SEPARATE = "Separate"
_CSV_SPLIT_STREAM = 20


@dataclass
class RunResult:
    method: str
    repeat: int
    seed: int
    traces: list  # RoundTrace, starting with the round-0 state


def worker_count() -> int:
    """Client-level parallelism, capped by ``FEDGP_THREADS`` when set."""
    raw = os.environ.get("FEDGP_THREADS")
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"FEDGP_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"FEDGP_THREADS must be a positive integer, got {raw!r}")
    return n


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def load_csv_dataset(path) -> Dataset:
    """Read a ``x1,...,xd,y`` CSV file into a :class:`Dataset`."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputShapeError(f"cannot read {path}: {exc.strerror}") from None
    except UnicodeDecodeError:
        raise InputShapeError(f"{path}: not valid UTF-8") from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise InputShapeError(f"{path}: empty file, expected a header row")
    header = [h.strip() for h in rows[0]]
    d = len(header) - 1
    expected = [f"x{j}" for j in range(1, d + 1)] + ["y"]
    if d < 1 or header != expected:
        raise InputShapeError(
            f"{path}: header must be {','.join(expected) if d >= 1 else 'x1,...,xd,y'}, "
            f"got {','.join(header)}"
        )
    values = []
    for r, row in enumerate(rows[1:], start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != d + 1:
            raise InputShapeError(
                f"{path}: row {r} has {len(row)} columns, header has {d + 1}"
            )
        parsed = []
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise InputShapeError(
                    f"{path}: row {r}, column {header[c]}: cannot parse {cell!r} as a number"
                ) from None
            if not np.isfinite(v):
                raise InputShapeError(
                    f"{path}: row {r}, column {header[c]}: non-finite value {cell!r}"
                )
            parsed.append(v)
        values.append(parsed)
    if not values:
        raise InputShapeError(f"{path}: no data rows")
    A = np.array(values, dtype=float)
    return Dataset(A[:, :d], A[:, d])


def scenario_from_csv(paths, test_fraction=0.2, do_standardize=True, seed=0,
                      spec: Optional[KernelSpec] = None) -> Scenario:
    """One client per CSV file; each is split into train and held-out rows.

    Held-out outputs are observed values, so RMSE is measured against noisy
    observations.
    """
    if spec is None:
        spec = KernelSpec("rbf", ard=True)
    data = [load_csv_dataset(p) for p in paths]
    dims = {d.dim for d in data}
    if len(dims) != 1:
        raise InputShapeError(f"datasets have different input dimensions {sorted(dims)}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, _CSV_SPLIT_STREAM]))
    train, test = [], []
    for k, d in enumerate(data):
        n = len(d)
        n_test = int(round(test_fraction * n))
        if n - n_test < 2 or (test_fraction > 0 and n_test < 1):
            raise InputShapeError(
                f"{paths[k]}: {n} rows are too few for test_fraction={test_fraction}"
            )
        perm = rng.permutation(n)
        train.append(d.subset(np.sort(perm[n_test:])))
        test.append(d.subset(np.sort(perm[:n_test])) if n_test else None)
    transforms = None
    if do_standardize:
        train, transforms = standardize(train)
    eval_clients = [k for k, t in enumerate(test) if t is not None]
    truth = [
        transforms[k].forward(test[k].outputs) if transforms else test[k].outputs
        for k in eval_clients
    ]
    n_ls = spec.n_lengthscales(train[0].dim)
    box = ParamBox.uniform(n_ls, theta1=(0.05, 10.0), theta2=(1e-3, 1.0),
                           lengthscale=(0.01, 100.0))
    init = np.r_[1.0, 0.1, np.full(n_ls, 1.0)]
    return Scenario(
        "csv", spec, train, init, box, eval_clients=eval_clients,
        test_inputs=[test[k].inputs for k in eval_clients], test_truth=truth,
        transforms=transforms,
        recipe=dict(lr_schedule={"kind": "inverse_time", "value": 1.0}, clip_norm=1.0),
        meta={"paths": list(paths)},
    )


# ---------------------------------------------------------------------------
# recipe resolution
# ---------------------------------------------------------------------------

def _merge(base: dict, top: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in top.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = {**out[k], **v}
        else:
            out[k] = copy.deepcopy(v)
    return out


def _apply_kernel(scenario: Scenario, kernel: Optional[dict]) -> Scenario:
    if not kernel:
        return scenario
    spec = KernelSpec(kernel.get("family", scenario.spec.family.value),
                      kernel.get("ard", scenario.spec.ard))
    n_ls = spec.n_lengthscales(scenario.dim)
    if n_ls == len(scenario.init) - 2:
        return replace(scenario, spec=spec)
    # Different length-scale layout: reuse the first length-scale's settings.
    init = np.r_[scenario.init[:2], np.full(n_ls, scenario.init[2])]
    lo, hi = scenario.box.lo, scenario.box.hi
    box = ParamBox(np.r_[lo[:2], np.full(n_ls, lo[2])], np.r_[hi[:2], np.full(n_ls, hi[2])])
    return replace(scenario, spec=spec, init=init, box=box)


def resolve_federation(cfg: ExperimentConfig, scenario: Scenario) -> dict:
    """Package defaults, overlaid by the scenario recipe, overlaid by the config."""
    merged = _merge(_merge(DEFAULTS, scenario.recipe), cfg.federation)
    merged.setdefault("box", {
        "theta1": [float(scenario.box.lo[0]), float(scenario.box.hi[0])],
        "theta2": [float(scenario.box.lo[1]), float(scenario.box.hi[1])],
        "lengthscale": [float(scenario.box.lo[2]), float(scenario.box.hi[2])],
    })
    merged.setdefault("init", [float(v) for v in scenario.init])
    return merged


def _federation_config(fed: dict, n_ls: int, seed: int) -> tuple:
    box = ParamBox.uniform(n_ls, theta1=tuple(fed["box"]["theta1"]),
                           theta2=tuple(fed["box"]["theta2"]),
                           lengthscale=tuple(fed["box"]["lengthscale"]))
    lr = fed["lr_schedule"]
    sc = fed["scaling"]
    config = FederationConfig(
        rounds=fed["rounds"], local_steps=fed["local_steps"],
        participation=fed["participation"], sample_size=fed["sample_size"],
        lr_schedule=ScheduleSpec(lr["kind"], lr["value"]),
        scaling=GradScaling(sc.get("tau", 1.0), sc.get("enabled", True)),
        box=box, clip_norm=fed["clip_norm"],
        freeze_lengthscales=fed["freeze_lengthscales"], seed=seed,
    )
    init = np.asarray(fed["init"], dtype=float)
    if init.size != n_ls + 2:
        raise ConfigError(
            f"federation.init has {init.size} entries, the kernel needs {n_ls + 2}"
        )
    if not box.contains(init):
        raise ConfigError(f"federation.init {init.tolist()} lies outside the parameter box")
    return config, init


def prepare(cfg: ExperimentConfig, seed: int):
    """Build the scenario for one repeat and its resolved federation dict."""
    if cfg.scenario is not None:
        scenario = build_scenario(cfg.scenario, seed, cfg.scenario_options)
    else:
        scenario = scenario_from_csv(cfg.datasets, cfg.test_fraction, cfg.standardize, seed)
    scenario = _apply_kernel(scenario, cfg.kernel)
    return scenario, resolve_federation(cfg, scenario)


# ---------------------------------------------------------------------------
# metrics and runs
# ---------------------------------------------------------------------------

def _metric_fn(scenario: Scenario, clients: list, eval_map: list):
    """Per-round metrics; ``eval_map`` pairs training datasets with test sets."""
    spec = scenario.spec
    star = scenario.theta_star
    hetero = scenario.client_theta_star is not None
    weights = np.array([len(c) for c in clients], dtype=float)
    weights /= weights.sum()

    def fn(round_index, theta):
        out = {}
        if star is not None:
            out["param_sq_error"] = param_sq_error(theta, star)
            out["theta2_sq_error"] = param_sq_error(theta, star, Components.THETA2_ONLY)
        if hetero:
            out["global_grad_sq_norm"] = global_grad_sq_norm(spec, theta, clients, weights)
        if eval_map:
            errs = []
            for k, train, X, y in eval_map:
                e = rmse(predict(spec, theta, train, X).mean, y)
                out[f"rmse_client{k}"] = e
                errs.append(e)
            out["avg_rmse"] = float(np.mean(errs))
            out["std_rmse"] = float(np.std(errs))
        return out

    return fn


def _run(method, scenario, fed, clients_data, eval_map, seed, batch_size,
         metric_every, workers, repeat):
    n_ls = scenario.spec.n_lengthscales(scenario.dim)
    config, init = _federation_config(fed, n_ls, seed)
    clients = make_clients_state(clients_data, init, batch_size)
    fn = _metric_fn(scenario, clients_data, eval_map)
    start = RoundTrace(0, init.copy(), {}, [], fn(0, init))
    traces = run_federation(scenario.spec, clients, config, fn, metric_every, workers)
    return RunResult(method, repeat, seed, [start] + traces)


def run_fgpr(scenario: Scenario, fed: dict, seed: int, batch_size=DEFAULT_BATCH_SIZE,
             metric_every=1, workers=1, repeat=0) -> RunResult:
    """Federated training over all scenario clients."""
    eval_map = [
        (k, scenario.clients[k], X, y)
        for k, X, y in zip(scenario.eval_clients, scenario.test_inputs, scenario.test_truth)
    ]
    return _run(FGPR, scenario, fed, scenario.clients, eval_map, seed, batch_size,
                metric_every, workers, repeat)


def run_separate_baseline(scenario: Scenario, fed: dict, seed: int,
                          batch_size=DEFAULT_BATCH_SIZE, metric_every=1,
                          repeat=0) -> RunResult:
    """Same local SGD on the HF client alone: a one-client federation."""
    if scenario.hf_index is None:
        raise ConfigError(f"scenario {scenario.name!r} has no high-fidelity client")
    hf = scenario.hf_index
    pos = scenario.eval_clients.index(hf)
    data = scenario.clients[hf]
    eval_map = [(hf, data, scenario.test_inputs[pos], scenario.test_truth[pos])]
    solo = dict(fed, participation="synchronous", sample_size=None)
    return _run(SEPARATE, scenario, solo, [data], eval_map, seed, batch_size,
                metric_every, 1, repeat)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _metric_names(results) -> list:
    names = []
    for res in results:
        for tr in res.traces:
            for key in tr.metrics:
                if key not in names:
                    names.append(key)
    return names


def _trace_rows(results, n_params):
    metrics = _metric_names(results)
    header = ["method", "repeat", "seed", "round", "theta1", "theta2"] + \
        [f"lengthscale{j}" for j in range(1, n_params - 1)] + metrics
    rows = [header]
    for res in results:
        for tr in res.traces:
            rows.append([res.method, res.repeat, res.seed, tr.round, *tr.params] +
                        [tr.metrics.get(m) for m in metrics])
    return rows


def _summary_rows(results, n_params):
    metrics = _metric_names(results)
    header = ["method", "repeat", "seed", "rounds", "theta1", "theta2"] + \
        [f"lengthscale{j}" for j in range(1, n_params - 1)] + metrics
    rows = [header]
    methods = []
    for res in results:
        if res.method not in methods:
            methods.append(res.method)
    for method in methods:
        finals = []
        for res in (r for r in results if r.method == method):
            last = res.traces[-1]
            # The last round always carries metrics.
            vals = list(last.params) + [last.metrics.get(m) for m in metrics]
            finals.append(vals)
            rows.append([method, res.repeat, res.seed, last.round, *vals])
        A = np.array([[np.nan if v is None else v for v in f] for f in finals], dtype=float)
        ddof = 1 if A.shape[0] > 1 else 0
        rows.append([method, "mean", "", "", *A.mean(axis=0)])
        rows.append([method, "std", "", "", *A.std(axis=0, ddof=ddof)])
    return rows


def _write_csv(path: Path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def run_experiment(cfg: ExperimentConfig, out_dir=None, repeats=None, seed=None,
                   baseline_only=False, workers=None) -> int:
    """Run all repeats and write outputs. Returns a process exit status.

    Repeat ``r`` uses seed ``seed + r``. On failure a ``.failed`` marker with
    the error message is left in the output directory and 1 is returned.
    """
    cfg = copy.deepcopy(cfg)
    if repeats is not None:
        cfg.repeats = int(repeats)
    if seed is not None:
        cfg.seed = int(seed)
    if out_dir is not None:
        cfg.output_dir = str(out_dir)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / ".failed"
    if marker.exists():
        marker.unlink()
    tmp = out / ".partial"
    shutil.rmtree(tmp, ignore_errors=True)
    tmp.mkdir()
    workers = worker_count() if workers is None else workers
    try:
        results, echo = [], None
        for r in range(cfg.repeats):
            s = cfg.seed + r
            scenario, fed = prepare(cfg, s)
            batch = cfg.batch_size or DEFAULT_BATCH_SIZE
            if echo is None:
                echo = replace(cfg, federation=fed, batch_size=batch)
            with_separate = scenario.hf_index is not None and cfg.separate_baseline is not False
            if baseline_only:
                if scenario.hf_index is None:
                    raise ConfigError(
                        f"the Separate baseline needs a multi-fidelity scenario, "
                        f"not {scenario.name!r}"
                    )
            else:
                results.append(run_fgpr(scenario, fed, s, batch, cfg.metric_every,
                                        workers, r))
            if baseline_only or with_separate:
                results.append(run_separate_baseline(scenario, fed, s, batch,
                                                     cfg.metric_every, r))
            log.info("repeat %d (seed %d) done", r, s)
        n_params = len(results[0].traces[0].params)
        _write_csv(tmp / "trace.csv", _trace_rows(results, n_params))
        _write_csv(tmp / "summary.csv", _summary_rows(results, n_params))
        (tmp / "config.echo").write_text(dump_config(echo), encoding="utf-8")
        for name in ("trace.csv", "summary.csv", "config.echo"):
            os.replace(tmp / name, out / name)
        shutil.rmtree(tmp, ignore_errors=True)
        return 0
    except (FedGPError, OSError) as exc:
        marker.write_text(f"{type(exc).__name__}: {exc}\n", encoding="utf-8")
        log.error("experiment failed: %s", exc)
        return 1
