import math
from dataclasses import replace

import numpy as np
import pytest

from config import preset
from diagnostics import (SweepResult, air_energy_both_ways, air_pressure_flatness, check_mus,
                         est_air_energy, est_g_energy, est_pressure_energy, est_zeta_energy,
                         mu_sweep, resample_uniform, space_translate, time_translate, trajectory_gap,
                         write_estimates_csv, write_sweep_csv)
from errors import ConfigError, InsufficientDataError, NumericalError
from solver import SimState, Trajectory, build_grid, reconstruct_pressure, run
from transforms import eval_zeta


def dense(states, n_cells, K_nominal=1e-3, table=None, mu=1e-4):
    return Trajectory(states, K_nominal, 'two-phase', build_grid(n_cells), mu=mu,
                      recording='dense', table=table)


def with_pressure(t, u, table, n_cells):
    state = SimState(t, np.asarray(u, dtype=float))
    state.p = reconstruct_pressure(state, table, build_grid(n_cells))
    state.p_g = state.p + table.model.p_c(state.u)
    return state


def test_uniform_trajectory_has_zero_estimates(model, table_small_mu):
    states = [with_pressure(t, np.full(6, 0.4), table_small_mu, 6) for t in (0.0, 1e-3, 2e-3)]
    traj = dense(states, 6, table=table_small_mu)
    assert est_air_energy(traj, table_small_mu, model, 1e-4).value == 0.0
    assert est_air_energy(traj, table_small_mu, model, 1e-4, via='pressure').value == 0.0
    assert est_pressure_energy(traj).value == 0.0
    assert est_zeta_energy(traj, model).value == 0.0
    assert est_g_energy(traj, model).value == 0.0
    assert space_translate(traj, model, 3).value == 0.0
    assert time_translate(traj, model, 1).value == 0.0


def test_snapshot_recording_is_rejected(model, table_small_mu):
    states = [with_pressure(t, np.full(4, 0.4), table_small_mu, 4) for t in (0.0, 1e-3)]
    traj = Trajectory(states, 1e-3, 'two-phase', build_grid(4), mu=1e-4, recording='snapshots')
    for estimate in (lambda: est_air_energy(traj, table_small_mu, model, 1e-4),
                     lambda: est_pressure_energy(traj),
                     lambda: est_zeta_energy(traj, model, table_small_mu),
                     lambda: space_translate(traj, model, 1, table_small_mu)):
        with pytest.raises(InsufficientDataError, match='dense'):
            estimate()


def test_pressure_energy_hand_sum():
    grid_cells = 2
    first = SimState(0.0, np.array([0.5, 0.5]), p=np.array([0.0, 1.0]))
    second = SimState(0.5, np.array([0.5, 0.5]), p=np.array([5.0, -3.0]))
    traj = dense([first, second], grid_cells)
    # h = 0.5, gradient 2 on the first state, dt = 0.5: 0.5 * 0.5 * 4
    assert est_pressure_energy(traj).value == pytest.approx(1.0)


def test_zeta_energy_two_cells(model, table_mu1):
    u = np.array([0.0, 0.5])
    traj = dense([SimState(0.0, u), SimState(0.25, u)], 2, table=table_mu1)
    zeta_half = eval_zeta(model, 0.5)
    # dt * h * (zeta_half / h)^2
    assert est_zeta_energy(traj, model).value == pytest.approx(0.25 * zeta_half ** 2 / 0.5, rel=1e-7)


def test_single_step_air_energy(model, table_mu1):
    u = np.array([0.25, 0.5, 0.75, 0.5])
    traj = dense([SimState(0.0, u), SimState(2e-3, u)], 4, table=table_mu1, mu=1.0)
    h = 0.25
    q = table_mu1.interp('Q', u)
    single = h * np.sum(model.k_a(u[:-1]) * (np.diff(q) / h) ** 2)
    report = est_air_energy(traj, table_mu1, model, 1.0)
    assert report.value == pytest.approx(2e-3 * single)
    assert report.ratio == pytest.approx(report.value)


def test_air_energy_two_ways_agree(model, table_mu1):
    u = [0.25, 0.5, 0.75, 0.5]
    states = [with_pressure(t, u, table_mu1, 4) for t in (0.0, 1e-3, 3e-3)]
    traj = dense(states, 4, table=table_mu1, mu=1.0)
    via_q = est_air_energy(traj, table_mu1, model, 1.0).value
    via_p = est_air_energy(traj, table_mu1, model, 1.0, via='pressure').value
    assert via_q > 0.0
    assert abs(via_p - via_q) <= 1e-10 * via_q


def test_air_energy_disagreement_raises(model, table_mu1, table_small_mu):
    u = [0.25, 0.5, 0.75, 0.5]
    states = [with_pressure(t, u, table_small_mu, 4) for t in (0.0, 1e-3, 3e-3)]
    traj = dense(states, 4, table=table_small_mu)
    by_q, by_p = air_energy_both_ways(traj, table_small_mu, model, 1e-4)
    assert by_p.name == 'air_energy_via_pressure'
    assert by_q.value > 0.0
    with pytest.raises(NumericalError, match='via pressure'):
        air_energy_both_ways(traj, table_mu1, model, 1.0)


def test_air_energy_two_ways_agree_on_a_run(model):
    config = replace(preset('test2'), mu=1e-2, T=0.002, snapshots=(0.002,), recording='dense')
    traj = run(config)
    by_q, by_p = air_energy_both_ways(traj, traj.table, model, 1e-2)
    assert by_q.value > 0.0
    assert abs(by_p.value - by_q.value) <= 1e-10 * by_q.value


def test_air_energy_agreement_survives_tiny_mu(model):
    config = replace(preset('test2'), mu=1e-8, n_cells=50, T=0.002, snapshots=(0.002,),
                     recording='dense')
    traj = run(config)
    by_q, by_p = air_energy_both_ways(traj, traj.table, model, 1e-8)
    assert by_q.value >= 0.0 and by_p.value >= 0.0


def test_air_energy_rejects_unknown_form(model, table_mu1):
    u = np.full(3, 0.5)
    traj = dense([SimState(0.0, u), SimState(1.0, u)], 3)
    with pytest.raises(ConfigError):
        est_air_energy(traj, table_mu1, model, 1.0, via='flux')


def test_space_translate(model, table_mu1):
    u = np.array([0.0, 0.5, 0.5, 0.0])
    traj = dense([SimState(0.0, u), SimState(1.0, u)], 4, table=table_mu1)
    assert space_translate(traj, model, 0).value == 0.0
    assert space_translate(traj, model, 0).ratio is None
    g = table_mu1.interp('g', 0.5)
    report = space_translate(traj, model, 1)
    # pairs (0,1) and (2,3) differ by g(0.5)
    assert report.value == pytest.approx(0.25 * 2 * g ** 2)
    assert report.scale == pytest.approx(0.0625)
    assert report.ratio == pytest.approx(report.value / 0.0625)


def test_space_translate_is_bounded_by_first_shift(model, table_mu1):
    rng = np.random.default_rng(7)
    states = [SimState(t, rng.uniform(0.0, 1.0, 16)) for t in (0.0, 0.1, 0.2)]
    traj = dense(states, 16, table=table_mu1)
    base = space_translate(traj, model, 1).ratio
    for k in (2, 4, 8):
        assert space_translate(traj, model, k).ratio <= base * (1.0 + 1e-12)


def test_resample_uniform_holds_last_state():
    states = [SimState(0.0, np.zeros(2)), SimState(0.15, np.ones(2)), SimState(0.3, np.full(2, 2.0))]
    rows = resample_uniform(dense(states, 2, K_nominal=0.1), 0.1)
    np.testing.assert_array_equal(rows[:, 0], [0.0, 0.0, 1.0, 2.0])


def test_time_translate_hand_sum(model, table_mu1):
    states = [SimState(0.0, np.zeros(2)), SimState(0.5, np.full(2, 0.5)), SimState(1.0, np.full(2, 0.5))]
    traj = dense(states, 2, K_nominal=0.5, table=table_mu1)
    g = table_mu1.interp('g', 0.5)
    report = time_translate(traj, model, 1)
    assert report.value == pytest.approx(0.5 * 0.5 * 2 * g ** 2)
    assert report.scale == 0.5
    assert time_translate(traj, model, 0).value == 0.0
    assert time_translate(traj, model, 2).value == 0.0


def test_trajectory_gap():
    grid_cells = 4
    a = dense([SimState(0.0, np.full(4, 0.5)), SimState(0.1, np.full(4, 0.6))], grid_cells)
    b = dense([SimState(0.0, np.full(4, 0.5)), SimState(0.05, np.full(4, 0.55)),
               SimState(0.1, np.full(4, 0.5))], grid_cells)
    gap = trajectory_gap(a, b)
    np.testing.assert_allclose(gap.times, [0.0, 0.1])
    assert gap.sup_final == pytest.approx(0.1)
    assert gap.l2 == pytest.approx(math.sqrt(0.1 * 0.25 * 4 * 0.01))
    same = trajectory_gap(a, a)
    assert same.l2 == 0.0 and same.sup_final == 0.0


def test_trajectory_gap_needs_matching_grids():
    a = dense([SimState(0.0, np.zeros(4))], 4)
    b = dense([SimState(0.0, np.zeros(5))], 5)
    with pytest.raises(ConfigError):
        trajectory_gap(a, b)


def test_air_pressure_flatness():
    uniform = SimState(0.0, np.full(3, 0.5), p_g=np.full(3, 0.2))
    assert air_pressure_flatness(uniform, 0.95) == 0.0
    wet = SimState(0.0, np.ones(3), p_g=np.array([1.0, 2.0, 3.0]))
    assert air_pressure_flatness(wet, 0.95) == 0.0
    mixed = SimState(0.0, np.array([0.5, 0.9, 1.0]), p_g=np.array([1.0, 3.0, 10.0]))
    assert air_pressure_flatness(mixed, 0.95) == pytest.approx(2.0)
    with pytest.raises(InsufficientDataError):
        air_pressure_flatness(SimState(0.0, np.ones(3)), 0.95)


def test_check_mus():
    np.testing.assert_array_equal(check_mus([1e-2, 1e-4, 1e-4]), [1e-2, 1e-4, 1e-4])
    for bad in ([], [1e-4, 1e-2], [0.0], [2.0]):
        with pytest.raises(ConfigError):
            check_mus(bad)


def test_stationary_run_estimates_vanish(model, stationary_config):
    traj = run(stationary_config)
    assert len(traj.states) > 2
    reports = [est_air_energy(traj, traj.table, model, stationary_config.mu),
               est_pressure_energy(traj), est_zeta_energy(traj, model),
               space_translate(traj, model, 1), time_translate(traj, model, 1)]
    assert [r.value for r in reports] == [0.0] * 5


def test_repeated_mu_gives_identical_rows():
    config = replace(preset('test1'), n_cells=20, T=2e-3, snapshots=(1e-3, 2e-3), table_points=65)
    result = mu_sweep(config, [1e-4, 1e-4])
    frame = result.to_frame()
    assert list(frame.columns) == ['mu', 'l2_diff', 'sup_diff_final', 'est1', 'est1_over_mu',
                                   'pressure_energy', 'pressure_energy_ratio', 'zeta_energy', 'zeta_energy_ratio']
    assert result.pressure_energy_ratio[0] == 1.0 and result.zeta_energy_ratio[0] == 1.0
    assert frame.iloc[0].tolist() == frame.iloc[1].tolist()


def test_sweep_is_deterministic_in_parallel():
    config = replace(preset('test1'), n_cells=20, T=1e-3, snapshots=(1e-3,), table_points=65)
    serial = mu_sweep(config, [1e-2, 1e-4])
    parallel = mu_sweep(config, [1e-2, 1e-4], n_jobs=2)
    np.testing.assert_array_equal(serial.l2_diff, parallel.l2_diff)
    np.testing.assert_array_equal(serial.mus, parallel.mus)


def test_csv_writers(tmp_path, model, table_small_mu):
    result = SweepResult(np.array([1e-2, 1e-4]), np.array([0.2, 0.1]), np.array([0.3, 0.1]),
                         np.array([1e-5, 1e-9]))
    write_sweep_csv(result, tmp_path / 'sweep.csv')
    assert (tmp_path / 'sweep.csv').read_text().splitlines()[0] == 'mu,l2_diff,sup_diff_final,est1,est1_over_mu'
    assert result.l2_strictly_decreasing()

    states = [with_pressure(t, np.full(3, 0.4), table_small_mu, 3) for t in (0.0, 1e-3)]
    reports = [est_pressure_energy(dense(states, 3))]
    write_estimates_csv(reports, tmp_path / 'est.csv')
    lines = (tmp_path / 'est.csv').read_text().splitlines()
    assert lines[0] == 'name,mu,value,normalization'
    name, mu, value, _ = lines[1].split(',')
    assert (name, float(mu), float(value)) == ('pressure_energy', 1e-4, 0.0)


def test_sweep_reports_energies_against_largest_mu():
    result = SweepResult(np.array([1e-2, 1e-4, 1e-6]), np.array([0.3, 0.2, 0.1]), np.zeros(3),
                         np.array([1e-5, 1e-7, 1e-9]), pressure_energy=np.array([2.0, 3.0, 1.0]),
                         zeta_energy=np.array([0.0, 1.0, 1.0]))
    np.testing.assert_allclose(result.pressure_energy_ratio, [1.0, 1.5, 0.5])
    assert np.all(np.isnan(result.zeta_energy_ratio))
    frame = result.to_frame()
    assert frame['pressure_energy_ratio'].tolist() == [1.0, 1.5, 0.5]
    assert frame['zeta_energy'].tolist() == [0.0, 1.0, 1.0]


@pytest.mark.slow
def test_sweep_test1_obstacle_limit_converges():
    config = replace(preset('test1'), limit_mode='obstacle')
    result = mu_sweep(config, [1e-2, 1e-4, 1e-6, 1e-8])
    assert result.l2_strictly_decreasing()
    assert result.sup_diff_final[-1] <= 0.02
    assert np.all(np.isfinite(result.est1_over_mu))


@pytest.mark.slow
def test_energy_estimates_scale_with_mu():
    config = replace(preset('test2'), T=0.01, snapshots=(0.01,))
    mus = [1e-2, 1e-3, 1e-4, 1e-5]
    result = mu_sweep(config, mus)
    assert np.all(np.diff(result.est1_vals) <= 0.0)
    # est1 / mu may only shrink past the largest-mu value
    assert np.all(result.est1_over_mu <= 100.0 * result.est1_over_mu[0])
    for ratio in (result.pressure_energy_ratio, result.zeta_energy_ratio):
        assert np.all((ratio >= 0.1) & (ratio <= 10.0))


@pytest.mark.slow
def test_translate_estimates_on_dense_test2(model):
    config = replace(preset('test2'), T=0.01, snapshots=(0.01,), recording='dense')
    traj = run(config)
    space = [space_translate(traj, model, k).ratio for k in (1, 2, 4, 8)]
    times = [time_translate(traj, model, m).ratio for m in (1, 2, 4, 8)]
    assert all(r > 0.0 for r in space + times)
    # normalized translates stay within a factor 4 across shifts
    assert max(space) / min(space) <= 4.0
    assert max(times) / min(times) <= 4.0
