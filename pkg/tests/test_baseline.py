from __future__ import annotations

import numpy as np
import pytest

from ttpdf.baseline import AMConfig, _chol, am_run
from ttpdf.errors import ConfigError
from ttpdf.estimators import iact


def std_normal(x):
    return -0.5 * np.sum(x * x, axis=1)


def test_standard_normal_mean_within_three_se():
    rng = np.random.default_rng(1)
    res = am_run(std_normal, [-8, -8], [8, 8], 20000, rng)
    kept = res.states[5000:]
    for k in range(2):
        v = kept[:, k]
        se = np.std(v) * np.sqrt(iact(v) / v.size)
        assert abs(v.mean()) < 3 * se
    assert res.estimates["x_1"] == pytest.approx(kept[:, 0].mean())


def test_tiny_step_without_adaptation_accepts_almost_everything():
    cfg = AMConfig(initial_cov=1e-8 * np.eye(3), adapt=False)
    res = am_run(std_normal, -np.ones(3) * 5, np.ones(3) * 5, 2000, np.random.default_rng(2), cfg)
    assert 1.0 - res.rejection_rate > 0.99


def test_piecewise_constant_target_is_stationary():
    # density proportional to 1, 2, 3 on the thirds of [0, 3]; both stages must keep it invariant
    def logp(x):
        return np.log(np.floor(np.clip(x[:, 0], 0, 2.999)) + 1.0)

    cfg = AMConfig(initial_cov=np.array([[4.0]]), adapt=False, burn_in=0.0)
    res = am_run(logp, [0.0], [3.0], 60000, np.random.default_rng(3), cfg)
    x = res.states[:, 0]
    for j, p in enumerate((1 / 6, 2 / 6, 3 / 6)):
        ind = ((x >= j) & (x < j + 1)).astype(float)
        se = np.std(ind) * np.sqrt(iact(ind) / ind.size)
        assert abs(ind.mean() - p) < 4 * se


def test_box_rejection_does_not_evaluate_target():
    calls = []

    def logp(x):
        calls.append(x.copy())
        return np.zeros(x.shape[0])

    res = am_run(logp, [0.0], [1.0], 500, np.random.default_rng(4), AMConfig(initial_cov=np.array([[25.0]])))
    pts = np.concatenate(calls)
    assert np.all((pts >= 0) & (pts <= 1))
    assert res.estimates["n_evals"] == len(calls)
    assert np.all((res.states >= 0) & (res.states <= 1))


def test_reproducible_with_seed():
    a = am_run(std_normal, [-5, -5], [5, 5], 500, np.random.default_rng(7))
    b = am_run(std_normal, [-5, -5], [5, 5], 500, np.random.default_rng(7))
    np.testing.assert_array_equal(a.states, b.states)


def test_adaptation_learns_scale():
    # strongly anisotropic Gaussian: adaptation should beat the identity random walk
    sd = np.array([0.05, 3.0])

    def logp(x):
        return -0.5 * np.sum((x / sd) ** 2, axis=1)

    lo, hi = -10 * sd - 5, 10 * sd + 5
    fixed = am_run(logp, lo, hi, 20000, np.random.default_rng(5), AMConfig(adapt=False))
    adapted = am_run(logp, lo, hi, 20000, np.random.default_rng(5))
    assert adapted.tau["x_2"] < fixed.tau["x_2"]


@pytest.mark.parametrize("kw", [{"dr_shrink": 0.0}, {"dr_shrink": 1.0}, {"burn_in": 1.0},
                                {"adapt_start": 0}, {"adapt_interval": 0}])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        AMConfig(**kw)


def test_degenerate_covariance_is_regularized():
    cov = np.ones((3, 3))  # rank one
    L = _chol(cov, 1e-8)
    np.testing.assert_allclose(L @ L.T, cov, atol=1e-6)
    assert np.all(np.linalg.eigvalsh(L @ L.T) > 0)


def test_chain_on_a_line_keeps_proposals_valid():
    # a target concentrated near a line makes the empirical covariance nearly singular
    def logp(x):
        return -0.5 * ((x[:, 0] - x[:, 1]) / 1e-4) ** 2 - 0.5 * x[:, 0] ** 2

    res = am_run(logp, [-5, -5], [5, 5], 3000, np.random.default_rng(6), x0=[0.0, 0.0])
    assert np.all(np.isfinite(res.states))
