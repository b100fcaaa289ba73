import math

import numpy as np
import pytest

from errors import ConfigError, IntegrationError
from transforms import (Quadrature, adaptive_simpson, build_table, default_grid, eval_g, eval_psi,
                        eval_Q, eval_R, eval_zeta, integrand, integrate_to_endpoint, write_table_csv)

S_POINTS = np.linspace(0.0, 1.0, 101)


def g_exact(s):
    return 0.02 * (1.0 - (1.0 - s) ** 2.5)


def zeta_exact(s):
    return -(0.1 / 3.0) * (1.0 - (1.0 - s) ** 1.5)


def test_adaptive_simpson_smooth():
    value, error = adaptive_simpson(math.sin, 0.0, math.pi, 1e-12)
    assert value == pytest.approx(2.0, abs=1e-11)
    assert error <= 1e-12


def test_adaptive_simpson_reversed_limits():
    value, _ = adaptive_simpson(lambda x: x * x, 1.0, 0.0)
    assert value == pytest.approx(-1.0 / 3.0)


def test_adaptive_simpson_gives_up_at_max_depth():
    with pytest.raises(IntegrationError) as info:
        adaptive_simpson(lambda x: 1.0 if x > 0.3141 else 0.0, 0.0, 1.0, tol=1e-14, max_depth=10)
    assert 0.0 <= info.value.where <= 1.0


def test_adaptive_simpson_rejects_infinite_integrand():
    with pytest.raises(IntegrationError):
        adaptive_simpson(lambda x: 1.0 / math.sqrt(x) if x > 0 else math.inf, 0.0, 1.0)


def test_endpoint_singularity_is_integrable():
    value = integrate_to_endpoint(lambda t: 1.0 / math.sqrt(1.0 - t) if t < 1.0 else math.inf, 0.0, 1.0)
    assert value == pytest.approx(2.0, abs=1e-8)


def test_quadrature_validation():
    with pytest.raises(ConfigError):
        Quadrature(abs_tol=0.0)
    with pytest.raises(ConfigError):
        Quadrature(endpoint_guard=0.7)


def test_g_and_zeta_match_closed_forms(model):
    for s in S_POINTS:
        assert eval_g(model, s) == pytest.approx(g_exact(s), abs=1e-8)
        assert eval_zeta(model, s) == pytest.approx(zeta_exact(s), abs=1e-8)


@pytest.mark.parametrize('mu', [1.0, 1e-4, 1e-8])
def test_R_plus_Q_is_capillary_drop(model, mu):
    for s in S_POINTS:
        residual = eval_R(model, mu, s) + eval_Q(model, mu, s) - (model.p_c(s) - model.p_c(0.0))
        assert abs(residual) <= 2e-10


def test_transforms_vanish_at_zero(model):
    assert eval_g(model, 0.0) == 0.0
    assert eval_Q(model, 1e-4, 0.0) == 0.0
    assert eval_psi(model, 1e-4, 0.0) == 0.0


def test_signs(model):
    assert eval_g(model, 0.5) > 0.0
    assert eval_zeta(model, 0.5) < 0.0
    assert eval_Q(model, 1e-2, 0.5) < 0.0
    assert eval_R(model, 1e-2, 0.5) < 0.0
    assert eval_psi(model, 1e-2, 0.5) > 0.0


def test_Q_shrinks_with_mu(model):
    assert abs(eval_Q(model, 1e-6, 0.9)) < abs(eval_Q(model, 1e-2, 0.9))


@pytest.mark.parametrize('mu', [1.0, 1e-2, 1e-8])
def test_R_and_Q_bounded_by_capillary_drop(model, mu):
    drop = model.p_c(1.0) - model.p_c(0.0)
    for s in np.linspace(0.0, 1.0, 21):
        for value in (eval_R(model, mu, s), eval_Q(model, mu, s)):
            assert drop - 1e-12 <= value <= 1e-12


def test_small_mu_values(model):
    assert abs(eval_Q(model, 1e-8, 0.95)) <= 1e-5
    assert eval_R(model, 1e-8, 0.5) == pytest.approx(-0.02928932, abs=1e-5)


def test_psi_derivative_matches_integrand(model):
    delta = 1e-3
    slope = (eval_psi(model, 1e-2, 0.5 + delta) - eval_psi(model, 1e-2, 0.5 - delta)) / (2.0 * delta)
    assert slope == pytest.approx(integrand(model, 'psi', 1e-2)(0.5), rel=1e-5)
    assert slope == pytest.approx(0.048624686, rel=1e-5)


def test_limit_transforms(model):
    assert eval_Q(model, 0.0, 0.9) == 0.0
    for s in (0.1, 0.5, 0.99, 1.0):
        assert eval_R(model, 0.0, s) == pytest.approx(model.p_c(s) - model.p_c(0.0), abs=1e-9)
    # psi at mu=0 is -int k_w p_c' = 0.05 int sqrt(t)/sqrt(1-t)
    assert eval_psi(model, 0.0, 1.0) == pytest.approx(0.05 * math.pi / 2.0, abs=1e-8)


def test_argument_validation(model):
    with pytest.raises(ConfigError):
        eval_Q(model, 2.0, 0.5)
    with pytest.raises(ConfigError):
        eval_g(model, 1.5)
    with pytest.raises(ConfigError):
        eval_R(model, -1e-3, 0.5)


def test_table_matches_pointwise(model, table_small_mu):
    s = table_small_mu.s_grid
    np.testing.assert_allclose(table_small_mu.g_vals, g_exact(s), atol=1e-9)
    residual = table_small_mu.R_vals + table_small_mu.Q_vals - (model.p_c(s) - model.p_c(0.0))
    assert np.max(np.abs(residual)) <= 1e-9
    assert table_small_mu.Q_vals[40] == pytest.approx(eval_Q(model, 1e-4, s[40]), abs=1e-9)


def test_table_monotone(table_small_mu):
    assert table_small_mu.monotonicity_violations() == []


def test_table_interpolates_between_nodes(table_mu1):
    mid = 0.5 * (table_mu1.s_grid[10] + table_mu1.s_grid[11])
    expected = 0.5 * (table_mu1.zeta_vals[10] + table_mu1.zeta_vals[11])
    assert table_mu1.interp('zeta', mid) == pytest.approx(expected)


def test_table_frame_and_csv(table_mu1, tmp_path):
    frame = table_mu1.to_frame()
    assert list(frame.columns) == ['s', 'g', 'zeta', 'Q', 'R', 'psi']
    assert len(frame) == 65
    path = tmp_path / 'table.csv'
    write_table_csv(table_mu1, path)
    assert path.read_text().splitlines()[0] == 's,g,zeta,Q,R,psi'


def test_table_rejects_bad_grid(model):
    with pytest.raises(ConfigError):
        build_table(model, 1.0, [0.0, 0.5, 0.4])
    with pytest.raises(ConfigError):
        build_table(model, 1.0, [0.0, 1.5])


def test_default_grid():
    grid = default_grid()
    assert grid.size == 1025
    assert grid[0] == 0.0 and grid[-1] == 1.0
