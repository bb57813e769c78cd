import math
import warnings

import numpy as np
import pytest

from cpqr.core import Dataset, ThresholdGrid
from cpqr.tuning import (TuningConfig, draw_uniforms, lambda_matrix, lambda_process, select_kappa, select_mu,
                         select_omega, upper_order_statistic)

from conftest import random_dataset


def lambda_direct(x, q, gamma, tau, u):
    """Straight transcription of the score display, one coordinate at a time."""
    n, p = x.shape
    best = 0.0
    for j in range(2 * p):
        col = [x[i, j % p] * (1.0 if j < p or q[i] > tau else 0.0) for i in range(n)]
        d = math.sqrt(sum(c * c for c in col) / n)
        if d == 0:
            continue
        s = sum(col[i] * (gamma - (1.0 if u[i] <= gamma else 0.0)) for i in range(n)) / n
        best = max(best, abs(s / d))
    return best


def test_all_uniforms_below_gamma_closed_form(rng):
    data = random_dataset(rng, 30, 3, gamma=0.4)
    grid = [0.3, 0.6]
    u = np.full(30, 0.1)
    _, per_tau = lambda_process(data, grid, u)
    for k, tau in enumerate(grid):
        xa = np.hstack([data.x, data.x * (data.q > tau)[:, None]])
        d = np.sqrt(np.mean(xa ** 2, axis=0))
        expect = 0.6 * np.max(np.abs(xa.mean(axis=0)) / d)
        assert per_tau[k] == pytest.approx(expect, rel=1e-13)


def test_balanced_multipliers_zero_on_constant_columns():
    n = 10
    x = np.ones((n, 1))
    q = np.linspace(0, 1, n)
    data = Dataset(np.zeros(n), x, q, 0.5)
    u = np.array([0.2] * 5 + [0.8] * 5)
    _, per_tau = lambda_process(data, [-1.0], u)  # every q above tau: both columns constant
    assert per_tau[0] == 0.0


def test_matches_direct_reimplementation():
    rng = np.random.default_rng(7)
    data = random_dataset(rng, 50, 3, gamma=0.3)
    grid = ThresholdGrid.from_observations(data.q).points[::4]
    u = rng.random(50)
    sup, per_tau = lambda_process(data, grid, u)
    direct = [lambda_direct(data.x, data.q, 0.3, t, u) for t in grid]
    np.testing.assert_allclose(per_tau, direct, rtol=1e-12)
    assert sup == max(per_tau)
    assert np.all(per_tau >= 0)


def test_pointwise_omega_below_sup(rng):
    data = random_dataset(rng, 80, 4)
    grid = ThresholdGrid.from_observations(data.q)
    cfg = TuningConfig(n_sims=200, seed=3)
    u = draw_uniforms(data.n, cfg)
    full = lambda_matrix(data, grid, u)
    sups = full.max(axis=1)
    for tau in grid.points[::7]:
        at = lambda_matrix(data, [tau], u)[:, 0]
        assert np.all(at <= sups)
    assert select_omega(data, grid.points[5], cfg, u) <= select_kappa(data, grid, cfg, u)


def test_exact_invariance_under_column_rescaling(rng):
    data = random_dataset(rng, 40, 3)
    grid = ThresholdGrid.from_observations(data.q)
    u = draw_uniforms(40, TuningConfig(n_sims=100))
    base = lambda_matrix(data, grid, u)
    for c in (0.25, 8.0):
        x = data.x.copy()
        x[:, 1] *= c
        scaled = lambda_matrix(Dataset(data.y, x, data.q, data.gamma), grid, u)
        np.testing.assert_array_equal(base, scaled)


def test_rescaling_by_arbitrary_factor_within_rounding(rng):
    data = random_dataset(rng, 40, 3)
    grid = ThresholdGrid.from_observations(data.q)
    u = draw_uniforms(40, TuningConfig(n_sims=100))
    x = data.x.copy()
    x[:, 2] *= 3.7
    np.testing.assert_allclose(lambda_matrix(Dataset(data.y, x, data.q, 0.5), grid, u),
                               lambda_matrix(data, grid, u), rtol=1e-13)


def test_order_statistic_convention():
    v = np.arange(1.0, 11.0)
    assert upper_order_statistic(v, 0.1) == 9.0
    assert upper_order_statistic(v, 0.15) == 9.0
    assert upper_order_statistic(v, 1e-9) == 10.0
    assert upper_order_statistic([4.0], 0.5) == 4.0


def test_single_simulation(rng):
    data = random_dataset(rng, 20, 2)
    grid = [0.4, 0.6]
    with pytest.warns(RuntimeWarning):
        cfg = TuningConfig(n_sims=1, seed=5)
    u = draw_uniforms(20, cfg)
    sup, _ = lambda_process(data, grid, u[0])
    assert select_kappa(data, grid, cfg) == pytest.approx(1.1 * sup, rel=0, abs=0)


def test_select_mu_examples():
    assert select_mu(0.1, 200) == pytest.approx(0.1 * math.log(math.log(200)))
    # ln(ln 200) = 1.667389...
    assert select_mu(0.1, 200) == pytest.approx(0.1667389, abs=5e-8)
    assert select_mu(0.05, 200, TuningConfig(c2=2.0)) == pytest.approx(0.1)
    assert TuningConfig().c2_for(math.e ** 2) == pytest.approx(math.log(2))
    with pytest.raises(ValueError, match="c2"):
        select_mu(0.1, 2)


def test_defaults():
    cfg = TuningConfig()
    assert (cfg.c1, cfg.eps_star, cfg.c2, cfg.n_sims) == (1.1, 0.1, None, 1000)


@pytest.mark.parametrize("kw", [dict(c1=0), dict(eps_star=0), dict(eps_star=1), dict(n_sims=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TuningConfig(**kw)


def test_uniform_substreams_independent_of_count():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = draw_uniforms(15, TuningConfig(n_sims=3, seed=9))
    b = draw_uniforms(15, TuningConfig(n_sims=100, seed=9))
    np.testing.assert_array_equal(a, b[:3])


def test_golden_values_and_determinism():
    data = random_dataset(np.random.default_rng(11), 60, 3)
    grid = ThresholdGrid.from_observations(data.q)
    cfg = TuningConfig(n_sims=200, seed=1)
    kappa = select_kappa(data, grid, cfg)
    omega = select_omega(data, 0.5, cfg)
    assert kappa == select_kappa(data, grid, cfg)
    assert omega == select_omega(data, 0.5, cfg)
    assert kappa == pytest.approx(GOLDEN_KAPPA, rel=1e-12)
    assert omega == pytest.approx(GOLDEN_OMEGA, rel=1e-12)


GOLDEN_KAPPA = 0.19678488453166784
GOLDEN_OMEGA = 0.16378863420468778
