import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedgp.errors import InputShapeError, NumericalError, ParameterDomainError
from fedgp.kernels import (
    Family,
    GPParams,
    KernelSpec,
    ParamBox,
    base_kernel,
    cholesky_with_jitter,
    correlation_matrix,
    cov_grads,
    cov_matrix,
    grad_contractions,
)

from oracles import central_diff, kernel_scalar, rel_err

FAMILIES = [f.value for f in Family]


def test_base_kernel_zero_distance():
    assert base_kernel(KernelSpec("rbf"), [1.0], [0.3], [0.3]) == 1.0


def test_base_kernel_rbf_unit_distance():
    assert base_kernel(KernelSpec("rbf"), [1.0], [0.0], [1.0]) == pytest.approx(math.exp(-0.5))
    assert base_kernel(KernelSpec("rbf"), [1.0], [0.0], [1.0]) == pytest.approx(0.60653, abs=1e-5)


def test_base_kernel_matern32_unit_distance():
    val = base_kernel(KernelSpec("matern32"), [1.0], [0.0], [1.0])
    assert val == pytest.approx((1 + math.sqrt(3)) * math.exp(-math.sqrt(3)))
    assert val == pytest.approx(0.483358, abs=1e-6)


@pytest.mark.parametrize("family", FAMILIES)
def test_base_kernel_matches_scalar_loop(family, rng):
    for _ in range(20):
        d = rng.integers(1, 4)
        ls = rng.uniform(0.1, 2.0, size=d)
        x1, x2 = rng.uniform(size=d), rng.uniform(size=d)
        got = base_kernel(KernelSpec(family, ard=True), ls, x1, x2)
        assert got == pytest.approx(kernel_scalar(family, ls, x1, x2), rel=1e-13)
        assert 0 < got <= 1


def test_base_kernel_errors():
    with pytest.raises(InputShapeError):
        base_kernel(KernelSpec("rbf"), [1.0], [0.0, 1.0], [1.0])
    with pytest.raises(InputShapeError):
        base_kernel(KernelSpec("rbf", ard=True), [1.0], [0.0, 1.0], [1.0, 0.0])
    with pytest.raises(ParameterDomainError):
        base_kernel(KernelSpec("rbf"), [0.0], [0.0], [1.0])
    with pytest.raises(ParameterDomainError):
        KernelSpec("periodic")


def test_cov_matrix_single_row():
    p = GPParams(1.3, 0.4, [0.7])
    for fam in FAMILIES:
        K = cov_matrix(KernelSpec(fam), p, [[0.2]], add_noise=True)
        assert K == pytest.approx(np.array([[1.3 ** 2 + 0.4 ** 2]]))


def test_cov_matrix_rbf_two_points():
    X = np.array([[0.0], [1.0]])
    K = cov_matrix(KernelSpec("rbf"), GPParams(1, 1, [1]), X, add_noise=True)
    e = math.exp(-0.5)
    np.testing.assert_allclose(K, [[2, e], [e, 2]], rtol=1e-14)


def test_cov_matrix_cross_no_noise():
    K = cov_matrix(KernelSpec("rbf"), GPParams(2, 0.5, [1]), [[0.0]], [[1.0]])
    np.testing.assert_allclose(K, [[4 * math.exp(-0.5)]], rtol=1e-14)


def test_cov_matrix_noise_only_when_same_inputs():
    X = np.array([[0.0], [1.0]])
    p = GPParams(1, 1, [1])
    K_same = cov_matrix(KernelSpec("rbf"), p, X, add_noise=True)
    K_cross = cov_matrix(KernelSpec("rbf"), p, X, X.copy(), add_noise=True)
    assert np.all(np.diag(K_same) == 2.0)
    assert np.all(np.diag(K_cross) == 1.0)


def test_cov_matrix_dimension_mismatch():
    with pytest.raises(InputShapeError):
        cov_matrix(KernelSpec("rbf"), GPParams(1, 1, [1]), np.zeros((2, 1)), np.zeros((2, 2)))


def test_cov_grads_single_row():
    grads = cov_grads(KernelSpec("rbf"), GPParams(1, 1, [1]), [[0.5]])
    assert grads[0] == pytest.approx(np.array([[2.0]]))
    assert grads[1] == pytest.approx(np.array([[2.0]]))
    assert grads[2] == pytest.approx(np.array([[0.0]]))


def test_cov_grads_rbf_lengthscale_entry():
    grads = cov_grads(KernelSpec("rbf"), GPParams(1, 1, [1]), [[0.0], [1.0]])
    # d/dl exp(-D^2 / (2 l^2)) = D^2 / l^3 * exp(...) = e^-0.5 at D = l = 1.
    assert grads[2][0, 1] == pytest.approx(math.exp(-0.5), rel=1e-14)
    assert grads[2][0, 0] == 0.0


def _fd_cov_grads(spec, vec, X):
    f = lambda v: cov_matrix(spec, GPParams.from_vector(v), X, add_noise=True)
    return central_diff(f, vec)


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("ard", [False, True])
def test_cov_grads_match_finite_differences(family, ard, rng):
    spec = KernelSpec(family, ard)
    for _ in range(5):
        X = rng.uniform(size=(5, 2))
        vec = np.r_[rng.uniform(0.5, 2.0, 2), rng.uniform(0.3, 1.5, spec.n_lengthscales(2))]
        analytic = cov_grads(spec, vec, X)
        numeric = _fd_cov_grads(spec, vec, X)
        for a, n in zip(analytic, numeric):
            assert rel_err(a, n) <= 1e-6
            np.testing.assert_array_equal(a, a.T)
        off = analytic[1] - np.diag(np.diag(analytic[1]))
        assert not off.any()


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("ard", [False, True])
def test_grad_contractions_agree_with_cov_grads(family, ard, rng):
    spec = KernelSpec(family, ard)
    X = rng.uniform(size=(9, 3))
    vec = np.r_[1.2, 0.3, rng.uniform(0.2, 1.0, spec.n_lengthscales(3))]
    W = rng.normal(size=(9, 9))
    W = W + W.T
    direct = [0.5 * np.sum(W * dK) for dK in cov_grads(spec, vec, X)]
    np.testing.assert_allclose(grad_contractions(spec, vec, X, W), direct, rtol=1e-10, atol=1e-12)


def test_large_inputs_use_expanded_distance(rng):
    # Above the small-problem threshold the distance is formed via A A^T;
    # compare against the scalar loop.
    spec = KernelSpec("matern52", ard=True)
    ls = np.array([0.3, 0.8, 0.5])
    X = rng.uniform(size=(60, 3))
    C = correlation_matrix(spec, ls, X)
    for i, j in [(0, 1), (5, 40), (59, 2), (7, 7)]:
        assert C[i, j] == pytest.approx(kernel_scalar("matern52", ls, X[i], X[j]), rel=1e-10)
    assert np.all(np.diag(C) == 1.0)


@settings(max_examples=60, deadline=None)
@given(
    family=st.sampled_from(FAMILIES),
    x=st.lists(st.floats(-5, 5), min_size=2, max_size=6),
    ls=st.floats(0.05, 5.0),
)
def test_symmetry(family, x, ls):
    half = len(x) // 2
    x1, x2 = x[:half], x[half:2 * half]
    spec = KernelSpec(family)
    assert base_kernel(spec, [ls], x1, x2) == base_kernel(spec, [ls], x2, x1)


@settings(max_examples=40, deadline=None)
@given(
    family=st.sampled_from(FAMILIES),
    seed=st.integers(0, 2 ** 32 - 1),
    ls=st.floats(0.05, 3.0),
)
def test_ard_equal_lengthscales_match_isotropic(family, seed, ls):
    X = np.random.default_rng(seed).uniform(size=(7, 3))
    iso = correlation_matrix(KernelSpec(family), [ls], X)
    ard = correlation_matrix(KernelSpec(family, ard=True), [ls] * 3, X)
    np.testing.assert_allclose(ard, iso, rtol=0, atol=1e-12)


def test_psd_random_draws(rng):
    for _ in range(100):
        n = int(rng.integers(2, 21))
        d = int(rng.integers(1, 4))
        spec = KernelSpec(rng.choice(FAMILIES), ard=bool(rng.integers(2)))
        p = GPParams(rng.uniform(0.1, 3), rng.uniform(0.05, 1), rng.uniform(0.05, 2, spec.n_lengthscales(d)))
        X = rng.uniform(size=(n, d))
        K0 = cov_matrix(spec, p, X)
        K1 = cov_matrix(spec, p, X, add_noise=True)
        assert np.linalg.eigvalsh(K0).min() > -1e-8
        assert np.linalg.eigvalsh(K1).min() > 0.5 * p.theta2 ** 2


def test_param_box_project_and_contains():
    box = ParamBox([0.1, 0.01, 0.01], [10, 1, 1])
    v = box.project([20.0, 0.001, 0.5])
    np.testing.assert_array_equal(v, [10, 0.01, 0.5])
    assert box.contains(v)
    assert not box.contains([0.05, 0.5, 0.5])
    with pytest.raises(ParameterDomainError):
        ParamBox([1.0, 1.0, 1.0], [0.5, 2.0, 2.0])
    with pytest.raises(InputShapeError):
        box.project([1.0, 1.0])


def test_gpparams_roundtrip_and_validation():
    p = GPParams(1.5, 0.2, [0.3, 0.4])
    assert GPParams.from_vector(p.to_vector()) == p
    with pytest.raises(ParameterDomainError):
        GPParams(-1, 0.2, [0.3])


def test_jitter_rescues_singular_matrix():
    K = np.ones((3, 3))
    L = cholesky_with_jitter(K)
    assert np.allclose(L @ L.T, K, atol=1e-6)


def test_jitter_gives_up_with_levels():
    K = np.array([[2.0, 0.0], [0.0, -1.0]])
    with pytest.raises(NumericalError) as info:
        cholesky_with_jitter(K)
    assert len(info.value.jitters) == 7
    assert info.value.jitters[1] == pytest.approx(2 * info.value.jitters[0])
