"""Experiment configuration files.

A config is a YAML mapping. Unknown keys are rejected with a suggestion and
the offending line. Federation fields left unset fall back first to the
scenario's recipe and then to the package defaults (see :data:`DEFAULTS`).

Example::

    scenario: currin
    repeats: 10
    seed: 0
    federation:
      rounds: 200
      lr_schedule: {kind: inverse_time, value: 1.0}
"""

from __future__ import annotations

import difflib
import math
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .errors import ConfigError

__all__ = [
    "ExperimentConfig",
    "DEFAULTS",
    "load_config",
    "parse_config",
    "dump_config",
]

# Package defaults for federation fields that neither the config nor the
# scenario recipe sets.
DEFAULTS = {
    "rounds": 200,
    "local_steps": 5,
    "participation": "synchronous",
    "sample_size": None,
    "lr_schedule": {"kind": "inverse_time", "value": 0.05},
    "scaling": {"enabled": True, "tau": 1.0},
    "clip_norm": None,
    "freeze_lengthscales": False,
}
DEFAULT_BATCH_SIZE = 64

TOP_KEYS = {
    "scenario", "scenario_options", "datasets", "test_fraction", "standardize",
    "kernel", "federation", "batch_size", "repeats", "seed", "metric_every",
    "output_dir", "separate_baseline",
}
FEDERATION_KEYS = set(DEFAULTS) | {"box", "init"}
SUBKEYS = {
    "kernel": {"family", "ard"},
    "federation.lr_schedule": {"kind", "value"},
    "federation.scaling": {"enabled", "tau"},
    "federation.box": {"theta1", "theta2", "lengthscale"},
}

# Common misspellings and synonyms mapped to the real key.
ALIASES = {
    "learningrate": "lr_schedule",
    "learning_rate": "lr_schedule",
    "lr": "lr_schedule",
    "eta": "lr_schedule",
    "schedule": "lr_schedule",
    "epochs": "rounds",
    "n_rounds": "rounds",
    "communication_rounds": "rounds",
    "local_epochs": "local_steps",
    "e": "local_steps",
    "batch": "batch_size",
    "minibatch": "batch_size",
    "m": "batch_size",
    "clip": "clip_norm",
    "k_sample": "sample_size",
    "n_sampled": "sample_size",
    "freeze": "freeze_lengthscales",
    "repeat": "repeats",
    "out": "output_dir",
    "outdir": "output_dir",
    "data": "datasets",
}


@dataclass
class ExperimentConfig:
    """A validated experiment description.

    ``federation`` only holds fields the user set explicitly; the runner
    merges it over the scenario recipe and :data:`DEFAULTS`.
    """

    scenario: Optional[str] = None
    scenario_options: dict = field(default_factory=dict)
    datasets: list = field(default_factory=list)
    test_fraction: float = 0.2
    standardize: bool = True
    kernel: Optional[dict] = None
    federation: dict = field(default_factory=dict)
    batch_size: Optional[int] = None
    repeats: int = 1
    seed: int = 0
    metric_every: int = 1
    output_dir: str = "fedgp-out"
    separate_baseline: Optional[bool] = None

    def __post_init__(self):
        validate(self)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def _fail(path, message, lines=None):
    line = (lines or {}).get(path)
    where = f"line {line}, " if line else ""
    raise ConfigError(f"{where}field '{path}': {message}")


def _suggest(key, allowed):
    low = key.lower()
    alias = ALIASES.get(low)
    if alias is not None:
        return alias
    match = difflib.get_close_matches(low, sorted(allowed), n=1, cutoff=0.6)
    return match[0] if match else None


def _check_keys(mapping, allowed, prefix, lines):
    for key in mapping:
        if key in allowed:
            continue
        path = f"{prefix}.{key}" if prefix else str(key)
        hint = _suggest(str(key), allowed)
        if hint is not None and hint not in allowed:
            # An alias can name a key that lives in another section.
            hint = f"federation.{hint}" if hint in FEDERATION_KEYS else hint
        if hint is None and prefix == "":
            # The key may belong one level down.
            fed = _suggest(str(key), FEDERATION_KEYS)
            if fed is not None:
                hint = f"federation.{fed}"
        msg = f"unknown key {key!r}"
        if hint:
            msg += f"; did you mean {hint!r}?"
        _fail(path, msg, lines)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return (isinstance(v, (int, float)) and not isinstance(v, bool)
            and math.isfinite(v))


def _interval(v):
    return (isinstance(v, (list, tuple)) and len(v) == 2 and all(map(_is_num, v))
            and 0 < v[0] < v[1])


def validate(cfg: ExperimentConfig, lines: Optional[dict] = None):
    """Check every field; raise :class:`ConfigError` naming the first bad one."""
    if (cfg.scenario is None) == (not cfg.datasets):
        _fail("scenario", "set exactly one of 'scenario' and 'datasets'", lines)
    if cfg.scenario is not None:
        from .scenarios import SCENARIOS

        if cfg.scenario not in SCENARIOS:
            hint = difflib.get_close_matches(cfg.scenario, list(SCENARIOS), n=1)
            extra = f"; did you mean {hint[0]!r}?" if hint else ""
            _fail("scenario", f"unknown scenario {cfg.scenario!r}{extra}", lines)
    if not isinstance(cfg.scenario_options, dict):
        _fail("scenario_options", "must be a mapping", lines)
    k_sample = cfg.federation.get("sample_size") if isinstance(cfg.federation, dict) else None
    if (isinstance(cfg.federation, dict) and cfg.federation.get("participation") == "asynchronous"
            and _is_int(k_sample)):
        from .scenarios import client_count

        n_clients = len(cfg.datasets) if cfg.datasets else client_count(
            cfg.scenario, cfg.scenario_options)
        if not k_sample < n_clients:
            _fail("federation.sample_size",
                  f"asynchronous sampling needs sample_size < K={n_clients}, got {k_sample}",
                  lines)
    if not isinstance(cfg.datasets, list) or not all(isinstance(p, str) for p in cfg.datasets):
        _fail("datasets", "must be a list of CSV paths", lines)
    if not (_is_num(cfg.test_fraction) and 0 <= cfg.test_fraction < 1):
        _fail("test_fraction", f"must lie in [0, 1), got {cfg.test_fraction!r}", lines)
    if not isinstance(cfg.standardize, bool):
        _fail("standardize", "must be true or false", lines)
    if cfg.kernel is not None:
        if not isinstance(cfg.kernel, dict):
            _fail("kernel", "must be a mapping with 'family' and 'ard'", lines)
        _check_keys(cfg.kernel, SUBKEYS["kernel"], "kernel", lines)
        fam = cfg.kernel.get("family", "rbf")
        if fam not in ("rbf", "matern12", "matern32", "matern52"):
            _fail("kernel.family", f"unknown kernel family {fam!r}", lines)
        if not isinstance(cfg.kernel.get("ard", False), bool):
            _fail("kernel.ard", "must be true or false", lines)
    if not isinstance(cfg.federation, dict):
        _fail("federation", "must be a mapping", lines)
    _check_keys(cfg.federation, FEDERATION_KEYS, "federation", lines)
    _validate_federation(cfg.federation, lines)
    if cfg.batch_size is not None and not (_is_int(cfg.batch_size) and cfg.batch_size >= 1):
        _fail("batch_size", f"must be a positive integer, got {cfg.batch_size!r}", lines)
    for name in ("repeats", "metric_every"):
        v = getattr(cfg, name)
        if not (_is_int(v) and v >= 1):
            _fail(name, f"must be an integer >= 1, got {v!r}", lines)
    if not (_is_int(cfg.seed) and cfg.seed >= 0):
        _fail("seed", f"must be a non-negative integer, got {cfg.seed!r}", lines)
    if not isinstance(cfg.output_dir, str) or not cfg.output_dir:
        _fail("output_dir", "must be a non-empty path", lines)
    if cfg.separate_baseline is not None and not isinstance(cfg.separate_baseline, bool):
        _fail("separate_baseline", "must be true or false", lines)


def _validate_federation(fed, lines):
    p = "federation"
    for name in ("rounds",):
        if name in fed and not (_is_int(fed[name]) and fed[name] >= 1):
            _fail(f"{p}.{name}", f"must be an integer >= 1, got {fed[name]!r}", lines)
    if "local_steps" in fed and not (_is_int(fed["local_steps"]) and fed["local_steps"] >= 1):
        _fail(f"{p}.local_steps", f"must be an integer >= 1, got {fed['local_steps']!r}", lines)
    part = fed.get("participation", "synchronous")
    if part not in ("synchronous", "asynchronous"):
        _fail(f"{p}.participation", f"must be synchronous or asynchronous, got {part!r}", lines)
    k = fed.get("sample_size")
    if k is not None and not (_is_int(k) and k >= 1):
        _fail(f"{p}.sample_size", f"must be a positive integer, got {k!r}", lines)
    if part == "asynchronous" and k is None:
        _fail(f"{p}.sample_size", "asynchronous participation needs sample_size", lines)
    if "lr_schedule" in fed:
        lr = fed["lr_schedule"]
        if not isinstance(lr, dict):
            _fail(f"{p}.lr_schedule", "must be a mapping with 'kind' and 'value'", lines)
        _check_keys(lr, SUBKEYS["federation.lr_schedule"], f"{p}.lr_schedule", lines)
        if lr.get("kind", "inverse_time") not in ("constant", "inverse_time"):
            _fail(f"{p}.lr_schedule.kind",
                  f"must be constant or inverse_time, got {lr.get('kind')!r}", lines)
        if "value" in lr and not (_is_num(lr["value"]) and lr["value"] > 0):
            _fail(f"{p}.lr_schedule.value", f"must be positive, got {lr['value']!r}", lines)
    if "scaling" in fed:
        sc = fed["scaling"]
        if not isinstance(sc, dict):
            _fail(f"{p}.scaling", "must be a mapping with 'enabled' and 'tau'", lines)
        _check_keys(sc, SUBKEYS["federation.scaling"], f"{p}.scaling", lines)
        if not isinstance(sc.get("enabled", True), bool):
            _fail(f"{p}.scaling.enabled", "must be true or false", lines)
        if "tau" in sc and not (_is_num(sc["tau"]) and sc["tau"] > 0):
            _fail(f"{p}.scaling.tau", f"must be positive, got {sc['tau']!r}", lines)
    c = fed.get("clip_norm")
    if c is not None and not (_is_num(c) and c > 0):
        _fail(f"{p}.clip_norm", f"must be positive, got {c!r}", lines)
    if "freeze_lengthscales" in fed and not isinstance(fed["freeze_lengthscales"], bool):
        _fail(f"{p}.freeze_lengthscales", "must be true or false", lines)
    if "box" in fed:
        box = fed["box"]
        if not isinstance(box, dict):
            _fail(f"{p}.box", "must be a mapping of [lower, upper] intervals", lines)
        _check_keys(box, SUBKEYS["federation.box"], f"{p}.box", lines)
        for name, v in box.items():
            if not _interval(v):
                _fail(f"{p}.box.{name}", f"must be [lower, upper] with 0 < lower < upper, got {v!r}",
                      lines)
    if "init" in fed:
        v = fed["init"]
        if not (isinstance(v, list) and len(v) >= 3 and all(_is_num(x) and x > 0 for x in v)):
            _fail(f"{p}.init", "must be a list [theta1, theta2, lengthscale...] of positive numbers",
                  lines)


# ---------------------------------------------------------------------------
# YAML I/O
# ---------------------------------------------------------------------------

def _key_lines(node, prefix="", out=None):
    """Map dotted key paths to 1-based line numbers in the source."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[path] = k.start_mark.line + 1
            _key_lines(v, path, out)
    return out


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse YAML text into a validated :class:`ExperimentConfig`."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"{where}: cannot parse config: {problem}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping of keys")
    lines = _key_lines(node)
    try:
        _check_keys(data, TOP_KEYS, "", lines)
        cfg = ExperimentConfig.__new__(ExperimentConfig)
        for f in fields(ExperimentConfig):
            if f.name in data:
                value = data[f.name]
                if value is None and f.name in ("scenario_options", "federation"):
                    value = {}
            elif f.default_factory is not MISSING:
                value = f.default_factory()
            else:
                value = f.default
            setattr(cfg, f.name, value)
        validate(cfg, lines)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read and validate a YAML config file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    cfg = parse_config(text, str(path))
    base = path.parent
    cfg.datasets = [str(p if Path(p).is_absolute() else base / p) for p in cfg.datasets]
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    """Serialize to YAML such that ``parse_config(dump_config(c)) == c``."""
    return yaml.safe_dump(_plain(asdict(cfg)), sort_keys=False, default_flow_style=None)


def _plain(obj: Any):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj
