"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Every criterion runs at its stated tolerance with the scenario recipes shipped
in ``fedgp.scenarios``. Seeds are 0..9 throughout.
"""

import time

import numpy as np
import pytest

from fedgp.config import ExperimentConfig
from fedgp.experiment import prepare, run_experiment, run_fgpr, run_separate_baseline
from fedgp.federation import (
    FederationConfig,
    ScheduleSpec,
    aggregate_full,
    aggregate_sampled,
    make_clients_state,
    run_federation,
)
from fedgp.gp_core import Dataset, full_grad, nll, sample_prior
from fedgp.kernels import Family, GPParams, KernelSpec, ParamBox, cov_grads, cov_matrix

from _report import record
from oracles import central_diff, mvn_logpdf, rel_err

SEEDS = range(10)
pytestmark = pytest.mark.acceptance


def _report(capsys, number, passed, detail):
    line = record(number, passed, detail)
    with capsys.disabled():
        print("\n" + line)
    assert passed, line


def _trace_errors(result):
    rounds = np.array([t.round for t in result.traces], dtype=float)
    errs = np.array([t.metrics["param_sq_error"] for t in result.traces])
    return rounds, errs


def _tail_slope(rounds, errs):
    """Least-squares slope of log(error) against log(round) over the last half."""
    keep = (rounds >= rounds[-1] / 2) & (rounds > 0)
    return float(np.polyfit(np.log(rounds[keep]), np.log(errs[keep]), 1)[0])


def _convergence_runs(scenario, federation=None):
    cfg = ExperimentConfig(scenario=scenario, federation=federation or {})
    out = []
    for seed in SEEDS:
        sc, fed = prepare(cfg, seed)
        out.append(_trace_errors(run_fgpr(sc, fed, seed)))
    return out


# 1 -------------------------------------------------------------------------------

def test_criterion_1_gradient_oracles(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_grad = worst_cov = worst_nll = 0.0
    instances = 0
    for family in Family:
        for ard in (False, True):
            for _ in range(8):
                n, d = int(rng.integers(1, 13)), int(rng.integers(1, 4))
                spec = KernelSpec(family, ard)
                X = rng.uniform(size=(n, d))
                data = Dataset(X, rng.normal(size=n))
                vec = np.r_[rng.uniform(0.5, 2.0), rng.uniform(0.2, 1.0),
                            rng.uniform(0.3, 1.5, spec.n_lengthscales(d))]
                fd = central_diff(lambda v: nll(spec, v, data), vec)
                worst_grad = max(worst_grad, rel_err(full_grad(spec, vec, data), fd))
                fd_cov = central_diff(
                    lambda v: cov_matrix(spec, GPParams.from_vector(v), X, add_noise=True), vec)
                for a, b in zip(cov_grads(spec, vec, X), fd_cov):
                    worst_cov = max(worst_cov, rel_err(a, b))
                K = cov_matrix(spec, GPParams.from_vector(vec), X, add_noise=True)
                ref = -mvn_logpdf(data.outputs, K)
                worst_nll = max(worst_nll, abs(nll(spec, vec, data) - ref) / max(1.0, abs(ref)))
                instances += 1
    elapsed = time.perf_counter() - start
    ok = (instances >= 50 and worst_grad <= 1e-5 and worst_cov <= 1e-5 and worst_nll <= 1e-10
          and elapsed < 10)
    _report(capsys, 1, ok,
            f"{instances} instances; worst rel err full_grad {worst_grad:.1e}, cov_grads "
            f"{worst_cov:.1e} (limit 1e-5); nll vs MVN oracle {worst_nll:.1e} (limit 1e-10); "
            f"{elapsed:.1f} s")


# 2 -------------------------------------------------------------------------------

def test_criterion_2_sampler_covariance(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    spec = KernelSpec("matern52", ard=True)
    X = np.array([[0.1, 0.2], [0.3, 0.1], [0.5, 0.9], [0.95, 0.4]])
    params = GPParams(1.3, 0.4, [0.5, 0.8])
    draws = np.array([sample_prior(spec, params, X, rng) for _ in range(20_000)])
    emp = np.cov(draws, rowvar=False)
    dev = float(np.abs(emp - cov_matrix(spec, params, X, add_noise=True)).max())
    elapsed = time.perf_counter() - start
    _report(capsys, 2, dev <= 0.05 and elapsed < 30,
            f"max |empirical - K| = {dev:.4f} (limit 0.05); {elapsed:.1f} s")


# 3 -------------------------------------------------------------------------------

def test_criterion_3_homogeneous_convergence(capsys):
    start = time.perf_counter()
    runs = _convergence_runs("gp-homogeneous")
    ratios = [e[-1] / e[0] for _, e in runs]
    slopes = [_tail_slope(r, e) for r, e in runs]
    a = sum(x < 0.1 for x in ratios)
    b = sum(s <= -0.5 for s in slopes)
    elapsed = time.perf_counter() - start
    _report(capsys, 3, a >= 8 and b >= 7 and elapsed < 600,
            f"(a) final/initial < 0.1 in {a}/10 (need 8); (b) tail slope <= -0.5 in {b}/10 "
            f"(need 7); ratios {np.round(ratios, 3).tolist()}; slopes "
            f"{np.round(slopes, 2).tolist()}; {elapsed:.0f} s")


# 4 -------------------------------------------------------------------------------

def test_criterion_4_imbalanced_convergence(capsys):
    start = time.perf_counter()
    runs = _convergence_runs("gp-imbalanced")
    ratios = [e[-1] / e[0] for _, e in runs]
    a = sum(x < 0.1 for x in ratios)
    elapsed = time.perf_counter() - start
    _report(capsys, 4, a >= 8 and elapsed < 600,
            f"final/initial < 0.1 in {a}/10 (need 8); ratios {np.round(ratios, 3).tolist()}; "
            f"{elapsed:.0f} s")


# 5 -------------------------------------------------------------------------------

def test_criterion_5_asynchronous(capsys):
    start = time.perf_counter()
    runs = _convergence_runs("gp-homogeneous",
                             {"participation": "asynchronous", "sample_size": 10})
    ratios = [e[-1] / e[0] for _, e in runs]
    a = sum(x < 0.2 for x in ratios)
    elapsed = time.perf_counter() - start
    _report(capsys, 5, a >= 7 and elapsed < 600,
            f"K_sample=10 of K=20: final/initial < 0.2 in {a}/10 (need 7); ratios "
            f"{np.round(ratios, 3).tolist()}; {elapsed:.0f} s")


# 6 -------------------------------------------------------------------------------

def test_criterion_6_bad_initialization(capsys):
    start = time.perf_counter()
    cfg = ExperimentConfig(scenario="bad-init")
    good, finals = 0, []
    for seed in SEEDS:
        sc, fed = prepare(cfg, seed)
        res = run_fgpr(sc, fed, seed)
        r0 = res.traces[0].metrics["avg_rmse"]
        rT = res.traces[-1].metrics["avg_rmse"]
        finals.append(rT)
        good += rT <= 2 * sc.noise_std and rT <= 0.5 * r0
    elapsed = time.perf_counter() - start
    _report(capsys, 6, good >= 8 and elapsed < 120,
            f"final RMSE <= 2 sigma and <= half of round 0 in {good}/10 (need 8); finals "
            f"{np.round(finals, 3).tolist()}; {elapsed:.0f} s")


# 7 -------------------------------------------------------------------------------

def test_criterion_7_multi_fidelity(capsys):
    start = time.perf_counter()
    means = {}
    for name in ("currin", "park"):
        cfg = ExperimentConfig(scenario=name)
        f, s = [], []
        for seed in SEEDS:
            sc, fed = prepare(cfg, seed)
            f.append(run_fgpr(sc, fed, seed, metric_every=1000).traces[-1].metrics["avg_rmse"])
            s.append(run_separate_baseline(sc, fed, seed, metric_every=1000)
                     .traces[-1].metrics["avg_rmse"])
        means[name] = (float(np.mean(f)), float(np.mean(s)))
    (cf, cs), (pf, ps) = means["currin"], means["park"]
    elapsed = time.perf_counter() - start
    ok = cf < cs and pf < ps and 0.05 <= cf <= 0.35 and pf <= 0.05 and elapsed < 900
    _report(capsys, 7, ok,
            f"CURRIN FGPR {cf:.4f} vs Separate {cs:.4f} (FGPR in [0.05, 0.35]); PARK FGPR "
            f"{pf:.4f} vs Separate {ps:.4f} (FGPR <= 0.05); {elapsed:.0f} s")


# 8 -------------------------------------------------------------------------------

def test_criterion_8_personalization(capsys):
    start = time.perf_counter()
    cfg = ExperimentConfig(scenario="sin-mirror")
    sc, fed = prepare(cfg, 0)
    final = run_fgpr(sc, fed, 0).traces[-1]
    e0, e1 = final.metrics["rmse_client0"], final.metrics["rmse_client1"]
    elapsed = time.perf_counter() - start
    _report(capsys, 8, e0 <= 0.15 and e1 <= 0.15 and elapsed < 60,
            f"shared theta {np.round(final.params, 4).tolist()}; RMSE sin {e0:.2e}, "
            f"-sin {e1:.2e} (limit 0.15); {elapsed:.1f} s")


# 9 -------------------------------------------------------------------------------

def _algebra_checks():
    rng = np.random.default_rng(9)
    checks = {}
    theta = rng.uniform(0.1, 3.0, size=5)
    w = rng.dirichlet(np.ones(6))
    checks["fixed point"] = np.array_equal(aggregate_full([theta] * 6, w), theta)
    P = rng.uniform(0.1, 3.0, size=(6, 5))
    base = aggregate_full(list(P), w)
    perm_ok = True
    for _ in range(20):
        order = rng.permutation(6)
        perm_ok &= np.array_equal(aggregate_full(list(P[order]), w[order]), base)
    checks["permutation invariance"] = perm_ok
    a, b = P[0], P[1]
    checks["slot semantics"] = (
        np.allclose(aggregate_sampled([a, a, b]), (2 * a + b) / 3, rtol=1e-15)
        and np.array_equal(aggregate_sampled([a, a]), a))

    spec = KernelSpec("rbf")
    data = [Dataset(rng.uniform(size=(n, 1)), rng.normal(size=n)) for n in (12, 20, 7)]
    box = ParamBox.uniform(1, theta1=(0.1, 3.0), theta2=(0.05, 1.0), lengthscale=(0.05, 2.0))
    init = [1.0, 0.3, 0.5]
    config = FederationConfig(rounds=6, local_steps=3, lr_schedule=ScheduleSpec("constant", 0.5),
                              box=box, seed=3)
    seen = []

    def metric(_, th):
        seen.append(th.copy())
        return {}

    traces = run_federation(spec, make_clients_state(data, init, 5), config, metric)
    checks["broadcast consistency"] = all(
        np.array_equal(t.params, s) for t, s in zip(traces, seen))
    checks["box invariance"] = all(box.contains(t.params) for t in traces) and all(
        box.contains(p) for t in traces for p in t.client_params.values())
    again = run_federation(spec, make_clients_state(data, init, 5), config, workers=2)
    checks["run determinism"] = all(
        np.array_equal(x.params, y.params) for x, y in zip(traces, again))
    return checks


def test_criterion_9_federation_algebra(capsys, tmp_path):
    start = time.perf_counter()
    checks = _algebra_checks()
    cfg = ExperimentConfig(scenario="branin", repeats=2, federation={"rounds": 3})
    blobs = []
    for _ in range(2):
        assert run_experiment(cfg, out_dir=tmp_path) == 0
        blobs.append(b"".join((tmp_path / n).read_bytes()
                              for n in ("trace.csv", "summary.csv", "config.echo")))
    checks["byte-identical outputs"] = blobs[0] == blobs[1]
    elapsed = time.perf_counter() - start
    failed = [k for k, v in checks.items() if not v]
    _report(capsys, 9, not failed and elapsed < 60,
            f"{len(checks) - len(failed)}/{len(checks)} identities hold"
            + (f"; failed: {', '.join(failed)}" if failed else "") + f"; {elapsed:.1f} s")


# 10 ------------------------------------------------------------------------------

def test_criterion_10_heterogeneous_gradient(capsys):
    start = time.perf_counter()
    cfg = ExperimentConfig(scenario="gp-heterogeneous")
    ratios = []
    for seed in SEEDS:
        sc, fed = prepare(cfg, seed)
        traces = run_fgpr(sc, fed, seed).traces
        g1 = traces[1].metrics["global_grad_sq_norm"]
        gT = traces[-1].metrics["global_grad_sq_norm"]
        ratios.append(gT / g1)
    good = sum(r <= 0.2 for r in ratios)
    elapsed = time.perf_counter() - start
    _report(capsys, 10, good >= 7 and elapsed < 600,
            f"final/round-1 squared gradient norm <= 0.2 in {good}/10 (need 7); ratios "
            f"{[float(f'{r:.3g}') for r in ratios]}; {elapsed:.0f} s")
