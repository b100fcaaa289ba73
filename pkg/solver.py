"""
Explicit finite-volume stepper on a uniform 1-D grid of [0, 1] for the
two-phase saturation equation and for its limit (Richards-type) equation.

Cells i = 0..n-1 with centers (i + 1/2) h. Interface j sits between cells
j-1 and j; F[0] = F[n] = 0 closes the domain (no-flow boundary). One step is

    u_i <- u_i + dt * ((F[i+1] - F[i]) / h + sources_i)

with F[j] = -(p_c(u_j) - p_c(u_{j-1})) / h * mobility(u_{j-1}, u_j), where the
two-phase mobility takes k_a at the left cell and k_w at the right cell:

    k_w(u_right) k_a(u_left) / (mu k_w(u_right) + k_a(u_left))

and the limit mobility is k_w(u_right) alone.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from errors import ConfigError, StabilityError
from physics import ConstitutiveModel, frac_flow
from transforms import TransformTable, build_table, default_grid

logger = logging.getLogger(__name__)

TOL_SAT = 1e-9
BOUND_TOL = 1e-12
DENOM_FLOOR = 1e-300
DU_FLOOR = 1e-14
DEFAULT_SIGMA = 0.45


@dataclass(frozen=True)
class Grid:
    n_cells: int
    h: float
    centers: np.ndarray

    @property
    def interfaces(self) -> np.ndarray:
        return np.arange(self.n_cells + 1) * self.h


def build_grid(n_cells: int) -> Grid:
    if int(n_cells) != n_cells or n_cells < 2:
        raise ConfigError(f"n_cells must be an integer >= 2, got {n_cells}")
    n_cells = int(n_cells)
    h = 1.0 / n_cells
    return Grid(n_cells, h, (np.arange(n_cells) + 0.5) * h)


@dataclass(frozen=True)
class Dirac:
    location: float
    strength: float = 1.0


SourceField = Union[Dirac, np.ndarray, None]


@dataclass(frozen=True)
class SourceSpec:
    """
    Injection/extraction fields and the injected saturation c.

    balance=True adds the mean imbalance of an incompatible pair back as a
    uniform extraction (or injection) so the total injected and extracted
    volumes agree.
    """
    injection: SourceField = None
    extraction: SourceField = None
    c: float = 1.0
    balance: bool = False

    def __post_init__(self):
        if not 0.0 <= self.c <= 1.0:
            raise ConfigError(f"injected saturation c must lie in [0, 1], got {self.c}")
        for label, fld in (('injection', self.injection), ('extraction', self.extraction)):
            if isinstance(fld, Dirac) and fld.strength < 0.0:
                raise ConfigError(f"{label} strength must be nonnegative, got {fld.strength}")
            if isinstance(fld, np.ndarray) and np.any(fld < 0.0):
                raise ConfigError(f"{label} rates must be nonnegative")


def _deposit(fld: SourceField, grid: Grid, label: str) -> np.ndarray:
    out = np.zeros(grid.n_cells)
    if fld is None:
        return out
    if isinstance(fld, Dirac):
        if not 0.0 <= fld.location <= 1.0:
            raise ConfigError(f"{label} Dirac location {fld.location} outside [0, 1]")
        cell = min(int(fld.location / grid.h), grid.n_cells - 1)
        out[cell] = fld.strength / grid.h
        return out
    values = np.asarray(fld, dtype=float)
    if values.shape != (grid.n_cells,):
        raise ConfigError(f"{label} vector has {values.size} entries for {grid.n_cells} cells")
    return values.copy()


def discretize_sources(sources: SourceSpec, grid: Grid) -> Tuple[np.ndarray, np.ndarray]:
    """Per-cell injection and extraction rates; a Dirac deposits w/h in the cell holding it."""
    inj = _deposit(sources.injection, grid, 'injection')
    ext = _deposit(sources.extraction, grid, 'extraction')
    if sources.balance:
        imbalance = grid.h * np.sum(inj - ext)
        if imbalance > 0.0:
            ext = ext + imbalance
        elif imbalance < 0.0:
            inj = inj - imbalance
        if imbalance != 0.0:
            logger.info("source imbalance %.3e spread uniformly over the domain", imbalance)
    return inj, ext


@dataclass
class StepInfo:
    dt: float
    flux_min: float
    flux_max: float
    source_volume: float
    rejected_volume: float = 0.0


@dataclass
class SimState:
    t: float
    u: np.ndarray
    p: Optional[np.ndarray] = None
    p_g: Optional[np.ndarray] = None
    info: Optional[StepInfo] = None


@dataclass(frozen=True)
class ObstacleMultiplier:
    f_hat: np.ndarray


@dataclass
class Trajectory:
    states: List[SimState]
    K_nominal: float
    scheme: str
    grid: Grid
    mu: Optional[float] = None
    limit_mode: str = 'literal'
    recording: str = 'snapshots'
    snapshots: Tuple[float, ...] = ()
    steps: List[StepInfo] = field(default_factory=list)
    table: Optional[TransformTable] = None

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def dts(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def final(self) -> SimState:
        return self.states[-1]

    def u_matrix(self) -> np.ndarray:
        return np.vstack([s.u for s in self.states])

    def state_at(self, t: float) -> SimState:
        for s in self.states:
            if math.isclose(s.t, t, rel_tol=1e-12, abs_tol=1e-15):
                return s
        raise KeyError(f"no state recorded at t={t}")

    @property
    def rejected_volume(self) -> float:
        return float(sum(s.rejected_volume for s in self.steps))


def initial_state(u0, grid: Grid) -> SimState:
    """Sample u0 at the cell centers."""
    u = np.array([float(u0(x)) for x in grid.centers])
    bad = np.flatnonzero((u < 0.0) | (u > 1.0) | ~np.isfinite(u))
    if bad.size:
        i = int(bad[0])
        raise ConfigError(f"initial saturation {u[i]} at x={grid.centers[i]} outside [0, 1]")
    return SimState(0.0, u)


def chi(c: float) -> float:
    return 1.0 if c >= 1.0 - TOL_SAT else 0.0


def interface_mobility(model: ConstitutiveModel, mu: Optional[float], u_left, u_right,
                       symmetrized: bool = False) -> np.ndarray:
    """Interface mobility; mu=None selects the limit scheme."""
    def mixed(left, right):
        kw = np.asarray(model.k_w(right), dtype=float)
        if mu is None:
            return kw
        ka = np.asarray(model.k_a(left), dtype=float)
        denom = mu * kw + ka
        ok = denom >= DENOM_FLOOR
        if not np.all(ok):
            logger.debug("zero mobility denominator at %d interfaces", int(np.sum(~ok)))
        return np.where(ok, kw * ka / np.where(ok, denom, 1.0), 0.0)

    u_left = np.asarray(u_left, dtype=float)
    u_right = np.asarray(u_right, dtype=float)
    if symmetrized:
        return 0.5 * (mixed(u_left, u_right) + mixed(u_right, u_left))
    return mixed(u_left, u_right)


def two_phase_flux(model: ConstitutiveModel, mu: float, u_left: float, u_right: float, h: float,
                   symmetrized: bool = False) -> float:
    lam = float(interface_mobility(model, mu, u_left, u_right, symmetrized))
    if lam == 0.0:
        return 0.0
    return -(float(model.p_c(u_right)) - float(model.p_c(u_left))) / h * lam


def limit_flux(model: ConstitutiveModel, u_left: float, u_right: float, h: float,
               symmetrized: bool = False) -> float:
    lam = float(interface_mobility(model, None, u_left, u_right, symmetrized))
    if lam == 0.0:
        return 0.0
    return -(float(model.p_c(u_right)) - float(model.p_c(u_left))) / h * lam


def interface_fluxes(model: ConstitutiveModel, mu: Optional[float], u: np.ndarray, h: float,
                     symmetrized: bool = False) -> np.ndarray:
    """All n+1 interface fluxes, zero at both ends."""
    uc = np.clip(u, 0.0, 1.0)
    pc = np.asarray(model.p_c(uc), dtype=float)
    lam = interface_mobility(model, mu, uc[:-1], uc[1:], symmetrized)
    flux = np.zeros(u.size + 1)
    flux[1:-1] = -np.diff(pc) / h * lam
    return flux


def stable_dt(model: ConstitutiveModel, mu: Optional[float], state: SimState, grid: Grid,
              sigma: float = DEFAULT_SIGMA, K_nominal: float = math.inf, time_left: float = math.inf,
              ext: Optional[np.ndarray] = None, obstacle_mode: bool = False,
              symmetrized: bool = False) -> float:
    """
    Explicit step size: sigma * h^2 / max_i a_i with the divided-difference
    diffusivity a_i = mobility_i * |p_c(u_i+1) - p_c(u_i)| / |u_i+1 - u_i|,
    capped by K_nominal and the time left to the next recording target.

    When extraction rates are given, dt is also capped so that one step
    extracts at most sigma * u_i from any cell.
    """
    if not sigma > 0.0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    if sigma >= 1.0:
        logger.warning("sigma=%g >= 1; the explicit step is not expected to stay bounded", sigma)

    uc = np.clip(state.u, 0.0, 1.0)
    pc = np.asarray(model.p_c(uc), dtype=float)
    lam = interface_mobility(model, mu, uc[:-1], uc[1:], symmetrized)
    diffusivity = lam * np.abs(np.diff(pc)) / np.maximum(np.abs(np.diff(uc)), DU_FLOOR)
    a_max = float(diffusivity.max()) if diffusivity.size else 0.0
    dt = sigma * grid.h ** 2 / a_max if a_max > 0.0 else math.inf
    dt = min(dt, K_nominal, time_left)

    if ext is not None:
        if mu is not None:
            rate = np.asarray(frac_flow(model, mu, uc), dtype=float) * ext
        elif obstacle_mode:
            rate = np.where(uc >= 1.0 - TOL_SAT, ext, 0.0)
        else:
            rate = np.zeros_like(uc)
        drained = rate > 0.0
        if np.any(drained):
            dt = min(dt, sigma * float(np.min(uc[drained] / rate[drained])))

    if not dt > 0.0 or math.isinf(dt):
        raise StabilityError(f"no admissible time step (dt={dt}) at t={state.t}")
    return dt


def _check_dt(dt: float):
    if not dt > 0.0:
        raise ConfigError(f"dt must be positive, got {dt}")


def _cap_injection(after: np.ndarray, injection: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    room = np.maximum(1.0 - after, 0.0) / dt
    applied = np.where(injection > 0.0, np.minimum(injection, room), injection)
    return applied, injection - applied


def _check_bounds(u: np.ndarray, t: float):
    bad = np.flatnonzero((u < -BOUND_TOL) | (u > 1.0 + BOUND_TOL) | ~np.isfinite(u))
    if bad.size:
        i = int(bad[0])
        raise StabilityError(
            f"saturation {u[i]!r} in cell {i} left [0, 1] at t={t!r}; use a smaller sigma or K_nominal",
            cell=i, value=float(u[i]))


def step_two_phase(model: ConstitutiveModel, mu: float, state: SimState, grid: Grid,
                   inj: np.ndarray, ext: np.ndarray, c: float, dt: float,
                   symmetrized: bool = False, cap_injection: bool = True) -> SimState:
    """One explicit Euler step of the two-phase saturation equation."""
    _check_dt(dt)
    u = state.u
    uc = np.clip(u, 0.0, 1.0)
    flux = interface_fluxes(model, mu, u, grid.h, symmetrized)
    extraction = np.asarray(frac_flow(model, mu, uc), dtype=float) * ext
    injection = frac_flow(model, mu, c) * inj

    after = u + dt * np.diff(flux) / grid.h - dt * extraction
    rejected = np.zeros_like(u)
    if cap_injection:
        injection, rejected = _cap_injection(after, injection, dt)
        if np.any(rejected > 0.0):
            logger.debug("t=%g: rejected injection in %d saturated cells",
                         state.t, int(np.sum(rejected > 0.0)))
    new_u = after + dt * injection
    _check_bounds(new_u, state.t + dt)

    info = StepInfo(dt, float(flux.min()), float(flux.max()),
                    dt * grid.h * float(np.sum(injection - extraction)),
                    dt * grid.h * float(np.sum(rejected)))
    return SimState(state.t + dt, new_u, info=info)


def step_limit(model: ConstitutiveModel, state: SimState, grid: Grid,
               inj: np.ndarray, ext: np.ndarray, c: float, dt: float,
               obstacle_mode: bool = False, symmetrized: bool = False,
               cap_injection: bool = True) -> Tuple[SimState, ObstacleMultiplier]:
    """
    One explicit step of the limit equation with source chi(c) * inj.

    In obstacle mode, cells saturated at the start of the step also lose
    f_hat * ext, f_hat being the smallest value in [0, 1] that keeps the
    cell at or below 1; f_hat is zero in every unsaturated cell.
    """
    _check_dt(dt)
    u = state.u
    flux = interface_fluxes(model, None, u, grid.h, symmetrized)
    transport = u + dt * np.diff(flux) / grid.h
    injection = chi(c) * inj

    f_hat = np.zeros_like(u)
    if obstacle_mode:
        saturated = (u >= 1.0 - TOL_SAT) & (ext > 0.0)
        excess = transport + dt * injection - 1.0
        f_hat[saturated] = np.clip(excess[saturated] / (dt * ext[saturated]), 0.0, 1.0)

    after = transport - dt * f_hat * ext
    rejected = np.zeros_like(u)
    if cap_injection:
        injection, rejected = _cap_injection(after, injection, dt)
    new_u = after + dt * injection
    _check_bounds(new_u, state.t + dt)

    info = StepInfo(dt, float(flux.min()), float(flux.max()),
                    dt * grid.h * float(np.sum(injection - f_hat * ext)),
                    dt * grid.h * float(np.sum(rejected)))
    return SimState(state.t + dt, new_u, info=info), ObstacleMultiplier(f_hat)


def reconstruct_pressure(state: SimState, table: TransformTable, grid: Grid) -> np.ndarray:
    """
    Water pressure P_i = -R(u_i) + mean_j R(u_j), zero-mean over the domain.

    R is the transform of the table's mu, taken as p_c(u) - p_c(0) - Q(u)
    from the tabulated Q so that R + Q equals the capillary drop at every
    u, not only at the table nodes. The mean runs over all cells.
    """
    uc = np.clip(state.u, 0.0, 1.0)
    model = table.model
    r = np.asarray(model.p_c(uc), dtype=float) - float(model.p_c(0.0)) - table.interp('Q', uc)
    return -r + float(np.sum(r)) * grid.h


def reconstruct_global_pressure(state: SimState, table: TransformTable, grid: Grid) -> np.ndarray:
    """Air pressure P_g = P + p_c(u)."""
    uc = np.clip(state.u, 0.0, 1.0)
    return reconstruct_pressure(state, table, grid) + np.asarray(table.model.p_c(uc), dtype=float)


def _with_pressures(state: SimState, table: TransformTable, grid: Grid) -> SimState:
    p = reconstruct_pressure(state, table, grid)
    p_g = p + np.asarray(table.model.p_c(np.clip(state.u, 0.0, 1.0)), dtype=float)
    return replace(state, p=p, p_g=p_g)


def run(config, table: Optional[TransformTable] = None) -> Trajectory:
    """
    Advance config.u0 to config.T with stable_dt steps.

    Every snapshot time is hit exactly (the last step before it is
    shortened). Recorded states carry reconstructed pressures; in dense
    recording every accepted step is recorded, otherwise only the initial
    state, the snapshots and the final state.
    """
    model = config.build_model()
    grid = build_grid(config.n_cells)
    inj, ext = discretize_sources(config.sources, grid)
    limit = config.scheme == 'limit'
    mu = None if limit else config.mu
    obstacle = limit and config.limit_mode == 'obstacle'
    if table is None:
        table = build_table(model, 0.0 if limit else mu, default_grid(config.table_points))

    state = _with_pressures(initial_state(config.u0, grid), table, grid)
    traj = Trajectory([state], config.K_nominal, config.scheme, grid, mu=mu,
                      limit_mode=config.limit_mode, recording=config.recording,
                      snapshots=tuple(config.snapshots), table=table)
    targets = sorted({float(t) for t in config.snapshots if 0.0 < t < config.T} | {float(config.T)})
    targets = [t for t in targets if t > 0.0]
    logger.info("running %s scheme%s on %d cells to T=%g", config.scheme,
                '' if limit else f" (mu={mu:g})", grid.n_cells, config.T)

    n = 0
    for target in targets:
        while state.t < target:
            dt = stable_dt(model, mu, state, grid, config.sigma, config.K_nominal,
                           target - state.t, ext=ext, obstacle_mode=obstacle,
                           symmetrized=config.symmetrized)
            landing = state.t + dt >= target * (1.0 - 1e-14)
            if landing:
                dt = target - state.t
            try:
                if limit:
                    new, _ = step_limit(model, state, grid, inj, ext, config.sources.c, dt,
                                        obstacle_mode=obstacle, symmetrized=config.symmetrized,
                                        cap_injection=config.cap_injection)
                else:
                    new = step_two_phase(model, mu, state, grid, inj, ext, config.sources.c, dt,
                                         symmetrized=config.symmetrized,
                                         cap_injection=config.cap_injection)
            except StabilityError as e:
                raise StabilityError(f"step {n} at t={state.t!r}: {e}", e.cell, e.value) from e
            if landing:
                new.t = target
            n += 1
            traj.steps.append(new.info)
            state = new
            if config.recording == 'dense' or landing:
                state = _with_pressures(state, table, grid)
                traj.states.append(state)

    if traj.rejected_volume > 0.0:
        logger.info("injection into saturated cells rejected: %.3e volume", traj.rejected_volume)
    logger.info("finished after %d steps, %d states recorded", n, len(traj.states))
    return traj


def write_snapshot_csv(state: SimState, grid: Grid, path) -> None:
    frame = pd.DataFrame({'x': grid.centers, 'u': state.u, 'p': state.p, 'p_g': state.p_g})
    frame.to_csv(path, index=False, float_format='%.17g')
