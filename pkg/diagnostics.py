"""
Post-processing of recorded trajectories: discrete energy estimates,
space and time translate estimates, the trajectory gap between two runs
and the mu-sweep that drives the two-phase scheme towards its limit.

Time integrals are left-endpoint sums over the recorded states,
sum_n (t_{n+1} - t_n) * F(state_n), so they need every accepted step
(recording = dense). Spatial gradients are forward differences weighted
at the left cell, the same stencil the solver's fluxes use.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from errors import ConfigError, InsufficientDataError, NumericalError
from physics import ConstitutiveModel
from solver import SimState, Trajectory, run
from transforms import TransformTable, build_table, default_grid

logger = logging.getLogger(__name__)

TIME_MATCH_TOL = 1e-12
AGREEMENT_RTOL = 1e-10
DEFAULT_MUS = (1e-2, 1e-4, 1e-6, 1e-8)


@dataclass
class EstimateReport:
    name: str
    value: float
    mu: Optional[float] = None
    normalization: str = ''
    scale: Optional[float] = None
    ratio: Optional[float] = None


def _require_dense(traj: Trajectory, name: str):
    if traj.recording != 'dense':
        raise InsufficientDataError(
            f"{name} needs every accepted step; rerun with recording = dense "
            f"(this trajectory was recorded as '{traj.recording}')")
    if len(traj.states) < 2:
        raise InsufficientDataError(f"{name} needs at least two recorded states")


def _require_pressures(traj: Trajectory, name: str):
    if any(s.p is None for s in traj.states):
        raise InsufficientDataError(f"{name} needs reconstructed pressures on every recorded state")


def _time_sum(traj: Trajectory, per_state) -> float:
    states = traj.states
    total = 0.0
    for now, after in zip(states[:-1], states[1:]):
        total += (after.t - now.t) * per_state(now)
    return total


def _gradient_energy(values: np.ndarray, h: float, weight: Optional[np.ndarray] = None) -> float:
    grad = np.diff(values) / h
    if weight is not None:
        return float(h * np.sum(weight * grad ** 2))
    return float(h * np.sum(grad ** 2))


def _table_for(traj: Trajectory, model: ConstitutiveModel) -> TransformTable:
    if traj.table is not None:
        return traj.table
    return build_table(model, 1.0, default_grid())


def est_air_energy(traj: Trajectory, table: TransformTable, model: ConstitutiveModel,
                   mu: Optional[float], via: str = 'transform') -> EstimateReport:
    """
    sum_n dt h sum_i k_a(u_i) [(D_{i+1} - D_i)/h]^2 with D = P + p_c(u).

    via='transform' uses D = Q^mu(u) from the table, which differs from
    P + p_c(u) by a constant in space; via='pressure' uses the recorded P.
    """
    name = 'air_energy'
    _require_dense(traj, name)
    h = traj.grid.h

    def per_state(state: SimState) -> float:
        uc = np.clip(state.u, 0.0, 1.0)
        if via == 'transform':
            drive = table.interp('Q', uc)
        elif via == 'pressure':
            if state.p is None:
                raise InsufficientDataError(f"{name} via pressure needs reconstructed pressures")
            drive = state.p + np.asarray(model.p_c(uc), dtype=float)
        else:
            raise ConfigError(f"via must be 'transform' or 'pressure', got '{via}'")
        weight = np.asarray(model.k_a(uc[:-1]), dtype=float)
        return _gradient_energy(drive, h, weight)

    value = _time_sum(traj, per_state)
    ratio = value / mu if mu else None
    return EstimateReport(name, value, mu, 'sum dt h k_a(u_i) |grad(P + p_c(u))|^2', mu, ratio)


def _rounding_floor(traj: Trajectory, table: TransformTable, model: ConstitutiveModel,
                    energy: float) -> float:
    """Largest gap between the two air energies that rounding alone explains."""
    scale = max(abs(float(model.p_c(0.0))), float(np.max(np.abs(table.Q_vals))),
                float(np.max(np.abs(np.asarray(model.p_c(table.s_grid), dtype=float)))))
    grad_err = 32.0 * np.finfo(float).eps * scale / traj.grid.h
    span = float(traj.times[-1] - traj.times[0])
    floor = span * grad_err ** 2
    return 2.0 * math.sqrt(energy * floor) + floor


def air_energy_both_ways(traj: Trajectory, table: TransformTable, model: ConstitutiveModel,
                         mu: Optional[float], rtol: float = AGREEMENT_RTOL):
    """
    est_air_energy via the transform and via the recorded pressures.

    Returns both reports; raises NumericalError when they differ by more
    than rtol relative (plus the rounding floor of the pressure route).
    """
    by_transform = est_air_energy(traj, table, model, mu)
    by_pressure = est_air_energy(traj, table, model, mu, via='pressure')
    by_pressure.name = 'air_energy_via_pressure'
    a, b = by_transform.value, by_pressure.value
    larger = max(abs(a), abs(b))
    allowed = rtol * larger + _rounding_floor(traj, table, model, larger)
    if not abs(a - b) <= allowed:
        raise NumericalError(
            f"air energy via transform {a!r} and via pressure {b!r} differ by {abs(a - b):.3e} "
            f"(allowed {allowed:.3e}); was the trajectory recorded with a different table?")
    logger.debug("air energy agrees to %.3e (allowed %.3e)", abs(a - b), allowed)
    return by_transform, by_pressure


def est_pressure_energy(traj: Trajectory) -> EstimateReport:
    _require_dense(traj, 'pressure_energy')
    _require_pressures(traj, 'pressure_energy')
    h = traj.grid.h
    value = _time_sum(traj, lambda s: _gradient_energy(s.p, h))
    return EstimateReport('pressure_energy', value, traj.mu, 'sum dt h |grad P|^2')


def _transform_energy(traj, model, column, name, table=None) -> EstimateReport:
    _require_dense(traj, name)
    table = table or _table_for(traj, model)
    h = traj.grid.h
    value = _time_sum(traj, lambda s: _gradient_energy(table.interp(column, np.clip(s.u, 0.0, 1.0)), h))
    return EstimateReport(name, value, traj.mu, f"sum dt h |grad {column}(u)|^2")


def est_zeta_energy(traj: Trajectory, model: ConstitutiveModel,
                    table: Optional[TransformTable] = None) -> EstimateReport:
    return _transform_energy(traj, model, 'zeta', 'zeta_energy', table)


def est_g_energy(traj: Trajectory, model: ConstitutiveModel,
                 table: Optional[TransformTable] = None) -> EstimateReport:
    """Companion of est_zeta_energy for g; bounded by it since k_a <= 1."""
    return _transform_energy(traj, model, 'g', 'g_energy', table)


def space_translate(traj: Trajectory, model: ConstitutiveModel, k_cells: int,
                    table: Optional[TransformTable] = None) -> EstimateReport:
    """sum_n dt h sum_i [g(u_{i+k}) - g(u_i)]^2, reported against xi^2 = (k h)^2."""
    if k_cells < 0:
        raise ConfigError(f"k_cells must be nonnegative, got {k_cells}")
    name = f"space_translate_k{k_cells}"
    _require_dense(traj, name)
    table = table or _table_for(traj, model)
    grid = traj.grid
    xi2 = (k_cells * grid.h) ** 2

    def per_state(state):
        if k_cells == 0 or k_cells >= grid.n_cells:
            return 0.0
        g = table.interp('g', np.clip(state.u, 0.0, 1.0))
        return float(grid.h * np.sum((g[k_cells:] - g[:-k_cells]) ** 2))

    value = _time_sum(traj, per_state)
    return EstimateReport(name, value, traj.mu, 'sum dt h |g(u)(x+xi) - g(u)(x)|^2',
                          xi2, value / xi2 if xi2 > 0.0 else None)


def resample_uniform(traj: Trajectory, step: float) -> np.ndarray:
    """Saturation rows at t = 0, step, 2 step, ... taken from the latest recorded state."""
    times = traj.times
    n = int(math.floor(times[-1] / step * (1.0 + TIME_MATCH_TOL)))
    targets = np.arange(n + 1) * step
    idx = np.searchsorted(times, targets * (1.0 + TIME_MATCH_TOL) + 1e-15, side='right') - 1
    return traj.u_matrix()[np.clip(idx, 0, len(times) - 1)]


def time_translate(traj: Trajectory, model: ConstitutiveModel, m_steps: int,
                   table: Optional[TransformTable] = None) -> EstimateReport:
    """
    sum_k Delta h sum_i [g(u)(t_k + tau) - g(u)(t_k)]^2 on the uniform
    resampling Delta = K_nominal, tau = m_steps * Delta.
    """
    if m_steps < 0:
        raise ConfigError(f"m_steps must be nonnegative, got {m_steps}")
    name = f"time_translate_m{m_steps}"
    _require_dense(traj, name)
    table = table or _table_for(traj, model)
    delta = traj.K_nominal
    rows = table.interp('g', np.clip(resample_uniform(traj, delta), 0.0, 1.0))
    tau = m_steps * delta
    if m_steps == 0 or m_steps >= rows.shape[0] - 1:
        value = 0.0
    else:
        # interval k covers [t_k, t_k+1]; it counts while t_k+1 + tau <= T
        shifted = rows[m_steps:-1] - rows[:-1 - m_steps]
        value = float(delta * traj.grid.h * np.sum(shifted ** 2))
    return EstimateReport(name, value, traj.mu, 'sum Delta h |g(u)(t+tau) - g(u)(t)|^2',
                          tau, value / tau if tau > 0.0 else None)


@dataclass
class TrajectoryGap:
    times: np.ndarray
    sup_per_time: np.ndarray
    l2: float

    @property
    def sup_final(self) -> float:
        return float(self.sup_per_time[-1])


def _common_indices(a_times: np.ndarray, b_times: np.ndarray):
    pairs = []
    j = 0
    for i, t in enumerate(a_times):
        while j < len(b_times) and b_times[j] < t and not math.isclose(b_times[j], t, rel_tol=TIME_MATCH_TOL):
            j += 1
        if j < len(b_times) and math.isclose(b_times[j], t, rel_tol=TIME_MATCH_TOL, abs_tol=1e-15):
            pairs.append((i, j))
    return pairs


def trajectory_gap(a: Trajectory, b: Trajectory) -> TrajectoryGap:
    """
    Sup and L2(space-time) gaps between two runs on one grid, evaluated at
    the times both recorded. The L2 gap is piecewise constant in time,
    each common time standing for the interval that ends at it.
    """
    if a.grid.n_cells != b.grid.n_cells:
        raise ConfigError(f"trajectories live on different grids ({a.grid.n_cells} vs {b.grid.n_cells} cells)")
    pairs = _common_indices(a.times, b.times)
    if not pairs:
        raise InsufficientDataError("the two trajectories share no recorded time")
    h = a.grid.h
    times = np.array([a.states[i].t for i, _ in pairs])
    diffs = [a.states[i].u - b.states[j].u for i, j in pairs]
    sups = np.array([float(np.max(np.abs(d))) for d in diffs])
    total = 0.0
    for k in range(1, len(pairs)):
        total += (times[k] - times[k - 1]) * h * float(np.sum(diffs[k] ** 2))
    return TrajectoryGap(times, sups, math.sqrt(total))


def air_pressure_flatness(state: SimState, threshold_u: float) -> float:
    """max - min of P_g over the cells with u <= threshold_u (0 when there are none)."""
    if state.p_g is None:
        raise InsufficientDataError("state carries no reconstructed air pressure")
    mask = state.u <= threshold_u
    if not np.any(mask):
        return 0.0
    values = state.p_g[mask]
    return float(values.max() - values.min())


@dataclass
class MemberResult:
    mu: float
    times: np.ndarray
    u: np.ndarray
    est1: float
    est2: float
    est3: float
    steps: int


@dataclass
class SweepResult:
    mus: np.ndarray
    l2_diff: np.ndarray
    sup_diff_final: np.ndarray
    est1_vals: np.ndarray
    limit_mode: str = 'literal'
    pressure_energy: np.ndarray = field(default_factory=lambda: np.zeros(0))
    zeta_energy: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def est1_over_mu(self) -> np.ndarray:
        return self.est1_vals / self.mus

    @staticmethod
    def _against_largest_mu(values: np.ndarray) -> np.ndarray:
        if values.size == 0 or values[0] == 0.0:
            return np.full(values.shape, np.nan)
        return values / values[0]

    @property
    def pressure_energy_ratio(self) -> np.ndarray:
        """pressure_energy relative to its value at the largest mu (first row)."""
        return self._against_largest_mu(self.pressure_energy)

    @property
    def zeta_energy_ratio(self) -> np.ndarray:
        return self._against_largest_mu(self.zeta_energy)

    def l2_strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.l2_diff) < 0.0))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({'mu': self.mus, 'l2_diff': self.l2_diff,
                              'sup_diff_final': self.sup_diff_final, 'est1': self.est1_vals,
                              'est1_over_mu': self.est1_over_mu})
        if self.pressure_energy.size == self.mus.size:
            frame['pressure_energy'] = self.pressure_energy
            frame['pressure_energy_ratio'] = self.pressure_energy_ratio
        if self.zeta_energy.size == self.mus.size:
            frame['zeta_energy'] = self.zeta_energy
            frame['zeta_energy_ratio'] = self.zeta_energy_ratio
        return frame


def check_mus(mus: Sequence[float]) -> np.ndarray:
    mus = np.asarray(list(mus), dtype=float)
    if mus.size == 0:
        raise ConfigError("mu list is empty")
    if np.any(~(mus > 0.0)) or np.any(mus > 1.0):
        raise ConfigError(f"every mu must lie in (0, 1], got {mus.tolist()}")
    if np.any(np.diff(mus) > 0.0):
        raise ConfigError(f"mu list must be decreasing, got {mus.tolist()}")
    return mus


def _run_member(config, mu: float) -> MemberResult:
    member = replace(config, scheme='two-phase', mu=float(mu), recording='dense')
    traj = run(member)
    model = member.build_model()
    est1 = est_air_energy(traj, traj.table, model, mu).value
    est2 = est_pressure_energy(traj).value
    est3 = est_zeta_energy(traj, model).value
    return MemberResult(float(mu), traj.times, traj.u_matrix(), est1, est2, est3, len(traj.steps))


def _member_trajectory(member: MemberResult, like: Trajectory) -> Trajectory:
    states = [SimState(float(t), row) for t, row in zip(member.times, member.u)]
    return Trajectory(states, like.K_nominal, 'two-phase', like.grid, mu=member.mu, recording='dense')


def mu_sweep(config, mus: Sequence[float], n_jobs: int = 1) -> SweepResult:
    """
    Run the two-phase scheme for every mu and the limit scheme once
    (in config.limit_mode) on the same grid and sources.

    Members run through joblib when n_jobs > 1; rows keep the order of mus.
    """
    mus = check_mus(mus)
    config.validate()
    limit = run(replace(config, scheme='limit'))
    logger.info("limit run (%s mode) finished, sweeping %d values of mu", config.limit_mode, mus.size)

    if n_jobs > 1:
        members = Parallel(n_jobs=n_jobs)(delayed(_run_member)(config, mu) for mu in mus)
    else:
        members = [_run_member(config, mu) for mu in mus]

    l2, sup = [], []
    for member in members:
        gap = trajectory_gap(_member_trajectory(member, limit), limit)
        l2.append(gap.l2)
        sup.append(gap.sup_final)
        logger.info("mu=%g: l2 gap %.6e, final sup gap %.6e, est1 %.6e (%d steps)",
                    member.mu, gap.l2, gap.sup_final, member.est1, member.steps)

    return SweepResult(mus, np.array(l2), np.array(sup), np.array([m.est1 for m in members]),
                       config.limit_mode, np.array([m.est2 for m in members]),
                       np.array([m.est3 for m in members]))


def write_sweep_csv(result: SweepResult, path) -> None:
    result.to_frame().to_csv(path, index=False, float_format='%.17g')


def write_estimates_csv(reports: List[EstimateReport], path) -> None:
    frame = pd.DataFrame({'name': [r.name for r in reports],
                          'mu': [r.mu for r in reports],
                          'value': [r.value for r in reports],
                          'normalization': [r.normalization for r in reports]})
    frame.to_csv(path, index=False, float_format='%.17g')
