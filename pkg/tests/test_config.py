import textwrap

import numpy as np
import pytest

from fedgp.config import DEFAULTS, ExperimentConfig, dump_config, load_config, parse_config
from fedgp.errors import ConfigError, InputShapeError
from fedgp.experiment import load_csv_dataset, prepare, resolve_federation, scenario_from_csv


def _parse(text):
    return parse_config(textwrap.dedent(text), "cfg.yaml")


# -- load_config ---------------------------------------------------------------

def test_minimal_config_gets_defaults():
    cfg = _parse("scenario: currin\n")
    assert cfg == ExperimentConfig(scenario="currin")
    assert (cfg.repeats, cfg.seed, cfg.metric_every, cfg.test_fraction) == (1, 0, 1, 0.2)
    assert cfg.federation == {}


def test_package_defaults_fill_unset_federation_fields():
    cfg = _parse("scenario: gp-homogeneous\nscenario_options: {n_total: 40}\n")
    scenario, fed = prepare(cfg, 0)
    for key in ("rounds", "local_steps", "participation", "sample_size"):
        assert fed[key] == DEFAULTS[key]
    # The scenario recipe sits between package defaults and the config.
    assert fed["lr_schedule"] == scenario.recipe["lr_schedule"]
    assert fed["init"] == list(scenario.init)


def test_config_overrides_recipe():
    cfg = _parse("""
        scenario: bad-init
        federation:
          lr_schedule: {value: 0.5}
          rounds: 3
    """)
    scenario, _ = prepare(cfg, 0)
    fed = resolve_federation(cfg, scenario)
    assert fed["lr_schedule"] == {"kind": "inverse_time", "value": 0.5}
    assert fed["rounds"] == 3


def test_unknown_key_suggests_lr_schedule():
    with pytest.raises(ConfigError, match="lr_schedule") as exc:
        _parse("""
            scenario: currin
            federation:
              learningrate: 0.1
        """)
    assert "line 4" in str(exc.value)
    assert "federation.learningrate" in str(exc.value)


def test_unknown_top_level_key_points_into_federation():
    with pytest.raises(ConfigError, match="federation.lr_schedule"):
        _parse("scenario: currin\nlearningrate: 0.1\n")


def test_typo_gets_close_match():
    with pytest.raises(ConfigError, match="repeats"):
        _parse("scenario: currin\nrepeets: 3\n")


def test_async_sample_size_must_be_below_client_count():
    with pytest.raises(ConfigError, match="sample_size"):
        _parse("""
            scenario: currin
            federation: {participation: asynchronous, sample_size: 2}
        """)
    cfg = _parse("""
        scenario: gp-homogeneous
        federation: {participation: asynchronous, sample_size: 10}
    """)
    assert cfg.federation["sample_size"] == 10


def test_async_requires_sample_size():
    with pytest.raises(ConfigError, match="sample_size"):
        _parse("scenario: gp-homogeneous\nfederation: {participation: asynchronous}\n")


def test_parse_error_reports_position():
    with pytest.raises(ConfigError, match=r"cfg\.yaml:2:8:"):
        _parse("scenario: currin\nseed: 1: 2\n")


@pytest.mark.parametrize("text, field", [
    ("scenario: nope\n", "scenario"),
    ("repeats: 2\n", "scenario"),
    ("scenario: currin\nrepeats: 0\n", "repeats"),
    ("scenario: currin\nseed: -1\n", "seed"),
    ("scenario: currin\nfederation: {rounds: 0}\n", "federation.rounds"),
    ("scenario: currin\nfederation: {clip_norm: -1}\n", "federation.clip_norm"),
    ("scenario: currin\nfederation: {lr_schedule: {kind: cosine}}\n", "federation.lr_schedule.kind"),
    ("scenario: currin\nfederation: {box: {theta1: [2, 1]}}\n", "federation.box.theta1"),
    ("scenario: currin\nkernel: {family: cubic}\n", "kernel.family"),
    ("scenario: currin\ntest_fraction: 1.5\n", "test_fraction"),
])
def test_validation_names_field(text, field):
    with pytest.raises(ConfigError, match=f"field '{field}'"):
        _parse(text)


def test_dump_load_round_trip(tmp_path):
    cfg = _parse("""
        scenario: gp-heterogeneous
        scenario_options: {dim: 2, size: 30}
        kernel: {family: matern32, ard: false}
        federation:
          rounds: 7
          lr_schedule: {kind: constant, value: 0.01}
          box: {theta1: [0.1, 5.0], theta2: [0.01, 1.0], lengthscale: [0.01, 2.0]}
        repeats: 3
        seed: 11
    """)
    path = tmp_path / "echo.yaml"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_load_config_resolves_dataset_paths(tmp_path):
    (tmp_path / "a.csv").write_text("x1,y\n0,1\n1,2\n2,3\n")
    path = tmp_path / "cfg.yaml"
    path.write_text("datasets: [a.csv]\n")
    assert load_config(path).datasets == [str(tmp_path / "a.csv")]


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.yaml")


# -- load_csv_dataset ----------------------------------------------------------

def _csv(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_csv_single_row(tmp_path):
    d = load_csv_dataset(_csv(tmp_path, "x1,y\n0.5,1.0\n"))
    assert (len(d), d.dim) == (1, 1)
    assert d.inputs[0, 0] == 0.5 and d.outputs[0] == 1.0


def test_csv_order_preserved(tmp_path):
    d = load_csv_dataset(_csv(tmp_path, "x1,x2,y\n1,2,3\n4,5,6\n7,8,9\n"))
    np.testing.assert_array_equal(d.inputs, [[1, 2], [4, 5], [7, 8]])
    np.testing.assert_array_equal(d.outputs, [3, 6, 9])


@pytest.mark.parametrize("text, pattern", [
    ("x1,x2\n1,2\n", "header"),
    ("y\n1\n", "header"),
    ("", "header"),
    ("x1,y\n", "no data rows"),
    ("x1,y\n1,2\n3\n", "row 3 has 1 columns"),
    ("x1,y\n1,abc\n", "row 2, column y"),
    ("x1,y\n1,2\nnan,3\n", "row 3, column x1"),
    ("x1,y\ninf,3\n", "non-finite"),
])
def test_csv_errors(tmp_path, text, pattern):
    with pytest.raises(InputShapeError, match=pattern):
        load_csv_dataset(_csv(tmp_path, text))


def test_csv_scenario_split_is_deterministic(tmp_path):
    rng = np.random.default_rng(0)
    rows = "\n".join(f"{x},{np.sin(6 * x)}" for x in rng.uniform(size=30))
    paths = [_csv(tmp_path, "x1,y\n" + rows + "\n", f"c{k}.csv") for k in range(2)]
    a = scenario_from_csv(paths, 0.2, seed=4)
    b = scenario_from_csv(paths, 0.2, seed=4)
    assert [len(c) for c in a.clients] == [24, 24]
    assert [len(x) for x in a.test_inputs] == [6, 6]
    for x, y in zip(a.clients, b.clients):
        np.testing.assert_array_equal(x.inputs, y.inputs)
