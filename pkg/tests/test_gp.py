"""GP regression tests against dense linear-algebra oracles.

The reference implementations here use plain matrix inversion and
log-determinants so they share no code path with the Cholesky-based
module under test.
"""

import math

import numpy as np
import pytest
from scipy.optimize import minimize

from fcmpc.gp import (
    GP,
    IllConditionedKernelError,
    KernelParams,
    fit,
    gram,
    kernel_eval,
    lml_gradient,
    load_gp,
    log_marginal_likelihood,
    mean_jacobian,
    params_from_log,
    params_to_log,
    predict,
    save_gp,
)

P3 = KernelParams(sigma_iso=1.2, l_iso=1.5, sigma_ard=0.8,
                  l_ard=(0.9, 2.0, 1.3), sigma_n=0.1)


def rand_problem(rng, n, d, sigma_n=0.1):
    X = rng.uniform(-2.0, 2.0, size=(n, d))
    y = np.sin(X.sum(axis=1)) + 0.05 * rng.normal(size=n)
    lard = tuple(rng.uniform(0.5, 2.5, size=d))
    p = KernelParams(rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0),
                     rng.uniform(0.3, 1.5), lard, sigma_n)
    return X, y, p


def dense_reference(p, X, y):
    """Posterior pieces via explicit inversion."""
    K = gram(p, X) + p.sigma_n ** 2 * np.eye(len(X))
    Kinv = np.linalg.inv(K)
    sign, logdet = np.linalg.slogdet(K)
    assert sign > 0
    lml = -0.5 * y @ Kinv @ y - 0.5 * logdet - 0.5 * len(y) * math.log(2 * math.pi)
    return Kinv, lml


# ---------------------------------------------------------------- kernel


def test_kernel_self_covariance():
    x = np.array([0.3, -1.0, 2.2])
    expected = P3.sigma_iso ** 2 + P3.sigma_ard ** 2
    assert kernel_eval(P3, x, x) == expected


def test_kernel_isotropic_decay():
    # with the ARD part off, distance sqrt(2) l_iso decays by exactly 1/e
    p = KernelParams(1.3, 0.7, 0.0, (1.0,), 0.0)
    x2 = np.array([math.sqrt(2.0) * 0.7])
    got = kernel_eval(p, np.array([0.0]), x2)
    assert got == pytest.approx(1.3 ** 2 * math.exp(-1.0), rel=1e-13)


def test_kernel_huge_lengthscale_ignores_dim():
    p = KernelParams(0.0, 1.0, 1.1, (1e8, 0.8), 0.0)
    a = kernel_eval(p, [0.0, 0.3], [0.0, -0.2])
    b = kernel_eval(p, [500.0, 0.3], [0.0, -0.2])
    assert a == pytest.approx(b, rel=1e-9)


def test_kernel_symmetry_bitwise():
    rng = np.random.default_rng(7)
    for _ in range(50):
        x, x2 = rng.normal(size=(2, 3))
        assert kernel_eval(P3, x, x2) == kernel_eval(P3, x2, x)


def test_gram_single_point():
    K = gram(P3, [[0.1, 0.2, 0.3]])
    assert K.shape == (1, 1)
    assert K[0, 0] == P3.sigma_iso ** 2 + P3.sigma_ard ** 2


def test_gram_symmetric_and_psd():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(40, 3))
    K = gram(P3, X)
    assert np.array_equal(K, K.T)
    w = np.linalg.eigvalsh(K + P3.sigma_n ** 2 * np.eye(40))
    assert w.min() >= P3.sigma_n ** 2 * (1.0 - 1e-8)


# ------------------------------------------------------------------- fit


def test_fit_single_point_weight():
    p = KernelParams(1.0, 1.0, 0.5, (1.0,), 0.3)
    gp = fit([[0.0]], [2.0], p, standardize=False)
    v = p.sigma_iso ** 2 + p.sigma_ard ** 2 + p.sigma_n ** 2
    assert gp.alpha[0] == pytest.approx(2.0 / v, rel=1e-13)


def test_fit_duplicate_rows_noise_free_fails():
    p = KernelParams(1.0, 1.0, 0.5, (1.0, 1.0), 0.0)
    X = [[0.0, 1.0], [0.0, 1.0], [2.0, 0.0]]
    with pytest.raises(IllConditionedKernelError):
        fit(X, [1.0, 1.0, 0.0], p, standardize=False)


def test_fit_duplicate_rows_rescued_by_jitter():
    p = KernelParams(1.0, 1.0, 0.5, (1.0, 1.0), 1e-9)
    X = [[0.0, 1.0], [0.0, 1.0], [2.0, 0.0]]
    gp = fit(X, [1.0, 1.0, 0.0], p, standardize=False)
    assert gp.jitter > 0.0
    assert np.all(np.isfinite(gp.alpha))


def test_fit_cholesky_reconstruction():
    rng = np.random.default_rng(3)
    X, y, p = rand_problem(rng, 5, 2)
    gp = fit(X, y, p)
    K = gram(p, X) + p.sigma_n ** 2 * np.eye(5)
    assert np.allclose(gp.L @ gp.L.T, K, atol=1e-10)


def test_fit_standardization_fallback():
    p = KernelParams(1.0, 1.0, 0.0, (1.0,), 0.1)
    gp = fit([[0.0], [1.0]], [3.0, 3.0], p)       # zero-variance targets
    assert gp.y_std == 1.0
    assert gp.y_mean == 3.0


# --------------------------------------------------------------- predict


def test_predict_interpolates_noise_free_point():
    p = KernelParams(1.0, 1.0, 0.5, (1.0,), 0.0)
    gp = fit([[0.4]], [1.7], p, standardize=False)
    mean, var = predict(gp, [[0.4]])
    assert mean[0] == pytest.approx(1.7, abs=1e-12)
    assert var[0] <= 1e-12


def test_predict_reverts_to_prior_far_away():
    p = KernelParams(1.0, 1.0, 0.5, (1.0,), 0.1)
    gp = fit([[0.0], [1.0]], [1.0, -1.0], p, standardize=False)
    mean, var = predict(gp, [[1e6]])
    assert mean[0] == pytest.approx(0.0, abs=1e-12)
    assert var[0] == pytest.approx(p.sigma_iso ** 2 + p.sigma_ard ** 2, rel=1e-12)


def test_predict_matches_dense_reference():
    rng = np.random.default_rng(5)
    X, y, p = rand_problem(rng, 3, 2)
    gp = fit(X, y, p, standardize=False)
    Kinv, _ = dense_reference(p, X, y)
    Xs = rng.uniform(-2, 2, size=(4, 2))
    Ks = gram(p, X, Xs)
    mean, var = predict(gp, Xs)
    prior = p.sigma_iso ** 2 + p.sigma_ard ** 2
    assert np.allclose(mean, Ks.T @ Kinv @ y, atol=1e-8)
    assert np.allclose(var, prior - np.einsum("ij,ik,kj->j", Ks, Kinv, Ks), atol=1e-8)


def test_posterior_variance_never_exceeds_prior():
    rng = np.random.default_rng(13)
    for trial in range(10):
        X, y, p = rand_problem(rng, 12, 3)
        gp = fit(X, y, p)
        _, var = predict(gp, rng.uniform(-3, 3, size=(20, 3)))
        prior = (p.sigma_iso ** 2 + p.sigma_ard ** 2) * gp.y_std ** 2
        assert np.all(var <= prior + 1e-10)


def test_extra_observation_never_raises_variance():
    rng = np.random.default_rng(17)
    X, y, p = rand_problem(rng, 10, 2)
    x_new = rng.uniform(-2, 2, size=(1, 2))
    y_new = float(rng.normal())
    gp_small = fit(X, y, p, standardize=False)
    gp_big = fit(np.vstack([X, x_new]), np.append(y, y_new), p, standardize=False)
    Xq = rng.uniform(-3, 3, size=(25, 2))
    _, v_small = predict(gp_small, Xq)
    _, v_big = predict(gp_big, Xq)
    assert np.all(v_big <= v_small + 1e-10)


# ------------------------------------------------------------- evidence


def test_lml_single_zero_target():
    p = KernelParams(1.0, 1.0, 0.5, (1.0,), 0.3)
    gp = fit([[0.0]], [0.0], p, standardize=False)
    v = p.sigma_iso ** 2 + p.sigma_ard ** 2 + p.sigma_n ** 2
    expected = -0.5 * math.log(v) - 0.5 * math.log(2 * math.pi)
    assert log_marginal_likelihood(gp) == pytest.approx(expected, rel=1e-13)


def test_lml_quadratic_term_scales_with_targets():
    rng = np.random.default_rng(19)
    X, y, p = rand_problem(rng, 6, 2)
    g1 = fit(X, y, p, standardize=False)
    g2 = fit(X, 10.0 * y, p, standardize=False)
    quad = 0.5 * float(g1.y @ g1.alpha)
    assert log_marginal_likelihood(g2) == pytest.approx(
        log_marginal_likelihood(g1) - 99.0 * quad, rel=1e-10)


def test_lml_matches_dense_reference():
    rng = np.random.default_rng(23)
    X, y, p = rand_problem(rng, 4, 3)
    gp = fit(X, y, p, standardize=False)
    _, ref = dense_reference(p, X, y)
    assert log_marginal_likelihood(gp) == pytest.approx(ref, abs=1e-9)


# -------------------------------------------------------------- gradient


def test_gradient_vanishes_at_numerical_optimum():
    """Cross-check: an optimizer using only finite differences should stop
    where the analytic gradient is (nearly) zero."""
    rng = np.random.default_rng(29)
    X = rng.uniform(-3, 3, size=(30, 1))
    y = np.sin(2.0 * X[:, 0]) + 0.1 * rng.normal(size=30)

    def nll(theta):
        try:
            gp = fit(X, y, params_from_log(theta), standardize=False)
        except IllConditionedKernelError:
            return 1e10
        return -log_marginal_likelihood(gp)

    theta0 = params_to_log(KernelParams(1.0, 1.0, 0.5, (1.5,), 0.2))
    res = minimize(nll, theta0, method="BFGS", jac="3-point",
                   options={"gtol": 1e-8, "maxiter": 500})
    gp = fit(X, y, params_from_log(res.x), standardize=False)
    assert np.linalg.norm(lml_gradient(gp)) < 1e-5


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(31)
    X, y, p = rand_problem(rng, 6, 3)
    gp = fit(X, y, p, standardize=False)
    g = lml_gradient(gp)
    theta = params_to_log(p)
    h = 1e-5
    for j in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        fp = log_marginal_likelihood(fit(X, y, params_from_log(tp), standardize=False))
        fm = log_marginal_likelihood(fit(X, y, params_from_log(tm), standardize=False))
        fd = (fp - fm) / (2.0 * h)
        assert g[j] == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_gradient_zero_ard_block():
    p = KernelParams(1.0, 1.0, 0.0, (1.0, 2.0), 0.1)
    rng = np.random.default_rng(37)
    X = rng.normal(size=(8, 2))
    y = rng.normal(size=8)
    g = lml_gradient(fit(X, y, p, standardize=False))
    assert g[2] == 0.0
    assert np.all(g[3:5] == 0.0)


# -------------------------------------------------------- mean jacobian


def test_mean_jacobian_even_data_is_flat_at_center():
    p = KernelParams(1.0, 1.0, 0.4, (1.2,), 0.05)
    gp = fit([[-1.0], [1.0]], [0.7, 0.7], p, standardize=False)
    assert mean_jacobian(gp, [0.0])[0] == pytest.approx(0.0, abs=1e-15)


def test_mean_jacobian_zero_at_lone_point():
    p = KernelParams(1.0, 1.0, 0.4, (1.2, 0.8), 0.1)
    gp = fit([[0.5, -0.5]], [2.0], p, standardize=False)
    assert np.all(mean_jacobian(gp, [0.5, -0.5]) == 0.0)


def test_mean_jacobian_matches_finite_differences():
    rng = np.random.default_rng(41)
    X, y, p = rand_problem(rng, 12, 3)
    gp = fit(X, y, p)
    xs = rng.uniform(-1, 1, size=3)
    jac = mean_jacobian(gp, xs)
    h = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        mp, _ = predict(gp, xs + e)
        mm, _ = predict(gp, xs - e)
        assert jac[j] == pytest.approx((mp[0] - mm[0]) / (2 * h), abs=1e-6)


# ---------------------------------------------------------- persistence


def test_save_load_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(43)
    X, y, p = rand_problem(rng, 15, 3)
    gp = fit(X, y, p, name="voltage")
    path = tmp_path / "model.txt"
    save_gp(gp, path)
    back = load_gp(path)
    assert back.name == "voltage"
    assert back.params == gp.params
    Xq = rng.uniform(-2, 2, size=(6, 3))
    m1, v1 = predict(gp, Xq)
    m2, v2 = predict(back, Xq)
    assert np.array_equal(m1, m2)
    assert np.array_equal(v1, v2)


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "junk.txt"
    path.write_text("not a model\n1 2 3\n")
    with pytest.raises(ValueError):
        load_gp(path)


def test_log_vector_round_trip():
    back = params_from_log(params_to_log(P3))
    assert back.sigma_iso == pytest.approx(P3.sigma_iso, rel=1e-15)
    assert back.l_ard == pytest.approx(P3.l_ard, rel=1e-15)


def test_params_validation():
    with pytest.raises(ValueError):
        KernelParams(1.0, -1.0, 0.5, (1.0,), 0.1)
    with pytest.raises(ValueError):
        KernelParams(1.0, 1.0, 0.5, (0.0,), 0.1)
    with pytest.raises(ValueError):
        KernelParams(-0.1, 1.0, 0.5, (1.0,), 0.1)
