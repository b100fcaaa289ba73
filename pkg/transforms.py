"""
Saturation integral transforms of the capillary pressure:

    g(s)    = -int_0^s k_a p_c'
    zeta(s) =  int_0^s sqrt(k_a) p_c'
    Q(s)    =  int_0^s f p_c'
    R(s)    =  int_0^s k_a/(k_a + mu k_w) p_c'
    psi(s)  = -int_0^s k_a k_w/(mu k_w + k_a) p_c'

evaluated by adaptive Simpson quadrature. p_c' may blow up at s=1 and k_w may
behave like sqrt(s) at s=0, so the parts of an integral within endpoint_guard
of either end are integrated in sigma = sqrt(1 - tau) and sigma = sqrt(tau).

mu = 0 selects the limit transforms (f = 0 and the ratio in R equal to 1
wherever k_a > 0), used by the limit scheme.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import ConfigError, IntegrationError, ModelInconsistencyError
from physics import ConstitutiveModel

logger = logging.getLogger(__name__)

DEFAULT_TABLE_POINTS = 1025
SIGMA_FLOOR = 1e-7
COLUMNS = ('g', 'zeta', 'Q', 'R', 'psi')


@dataclass(frozen=True)
class Quadrature:
    abs_tol: float = 1e-10
    max_depth: int = 40
    endpoint_guard: float = 1e-3

    def __post_init__(self):
        if not self.abs_tol > 0.0:
            raise ConfigError(f"abs_tol must be positive, got {self.abs_tol}")
        if self.max_depth < 10:
            raise ConfigError(f"max_depth must be >= 10, got {self.max_depth}")
        if not 0.0 < self.endpoint_guard < 0.5:
            raise ConfigError(f"endpoint_guard must lie in (0, 0.5), got {self.endpoint_guard}")


DEFAULT_QUADRATURE = Quadrature()


def adaptive_simpson(f: Callable[[float], float], a: float, b: float,
                     tol: float = 1e-10, max_depth: int = 40) -> Tuple[float, float]:
    """
    Adaptive Simpson's rule with interval bisection.

    Returns (value, error_estimate). Raises IntegrationError when a
    subinterval still misses its share of the tolerance at max_depth.
    """
    if a == b:
        return 0.0, 0.0
    if a > b:
        value, error = adaptive_simpson(f, b, a, tol, max_depth)
        return -value, error

    def _simpson(fa, fm, fb, h):
        return h / 3.0 * (fa + 4.0 * fm + fb)

    def _adaptive(lo, hi, flo, fmid, fhi, whole, depth, local_tol):
        mid = 0.5 * (lo + hi)
        h = 0.5 * (hi - lo)
        fl = f(0.5 * (lo + mid))
        fr = f(0.5 * (mid + hi))
        left = _simpson(flo, fl, fmid, 0.5 * h)
        right = _simpson(fmid, fr, fhi, 0.5 * h)
        error = (left + right - whole) / 15.0

        if abs(error) <= local_tol:
            return left + right + error, abs(error)
        if depth >= max_depth:
            raise IntegrationError(
                f"adaptive Simpson did not converge on [{lo!r}, {hi!r}] within depth {max_depth}",
                estimate=abs(error), where=mid)

        lv, le = _adaptive(lo, mid, flo, fl, fmid, left, depth + 1, 0.5 * local_tol)
        rv, re = _adaptive(mid, hi, fmid, fr, fhi, right, depth + 1, 0.5 * local_tol)
        return lv + rv, le + re

    fa = f(a)
    fb = f(b)
    fm = f(0.5 * (a + b))
    if not all(math.isfinite(v) for v in (fa, fm, fb)):
        raise IntegrationError(f"integrand not finite on [{a!r}, {b!r}]", where=a)
    whole = _simpson(fa, fm, fb, 0.5 * (b - a))
    return _adaptive(a, b, fa, fm, fb, whole, 0, tol)


def integrate_to_endpoint(f: Callable[[float], float], a: float, b: float,
                          quad: Quadrature = DEFAULT_QUADRATURE,
                          tol: Optional[float] = None) -> float:
    """
    Integrate f over [a, b] within [0, 1].

    Within endpoint_guard of either end the integral is taken in sigma:
    tau = sigma^2 near 0 (square-root behaviour of k_w) and
    tau = 1 - sigma^2 near 1 (singular p_c'). The tolerance is shared
    equally by the pieces.
    """
    tol = quad.abs_tol if tol is None else tol
    if b <= a:
        return 0.0
    low_end, high_end = quad.endpoint_guard, 1.0 - quad.endpoint_guard

    def near_zero(sigma):
        return f(sigma * sigma) * 2.0 * sigma

    def near_one(sigma):
        # Jacobian taken at the abscissa actually evaluated: 1 - sigma^2 rounds near 1
        t = 1.0 - max(sigma, SIGMA_FLOOR) ** 2
        return f(t) * 2.0 * math.sqrt(1.0 - t)

    pieces = []
    if a < low_end:
        pieces.append((near_zero, math.sqrt(a), math.sqrt(min(b, low_end))))
    if max(a, low_end) < min(b, high_end):
        pieces.append((f, max(a, low_end), min(b, high_end)))
    if b > high_end:
        pieces.append((near_one, math.sqrt(max(1.0 - b, 0.0)), math.sqrt(1.0 - max(a, high_end))))

    share = tol / len(pieces)
    return sum(adaptive_simpson(fn, lo, hi, share, quad.max_depth)[0] for fn, lo, hi in pieces)


def _check_mu(mu: float):
    if not 0.0 <= mu <= 1.0:
        raise ConfigError(f"mu must lie in [0, 1] (0 selects the limit transforms), got {mu}")


def _check_s(s: float):
    if not 0.0 <= s <= 1.0:
        raise ConfigError(f"saturation must lie in [0, 1], got {s}")


def integrand(model: ConstitutiveModel, name: str, mu: float = 1.0) -> Callable[[float], float]:
    """Scalar integrand of the named transform."""
    k_w, k_a, dpc = model.k_w, model.k_a, model.p_c_prime

    if name == 'g':
        return lambda t: -float(k_a(t)) * float(dpc(t))
    if name == 'zeta':
        return lambda t: math.sqrt(float(k_a(t))) * float(dpc(t))
    if name == 'Q':
        def water_fraction(t):
            kw, ka = float(k_w(t)), float(k_a(t))
            if ka == 0.0:
                if kw == 0.0:
                    raise ModelInconsistencyError(f"k_w and k_a both vanish at s={t!r}")
                return float(dpc(t))
            if mu == 0.0:
                return 0.0
            return kw / (kw + ka / mu) * float(dpc(t))
        return water_fraction
    if name == 'R':
        def air_ratio(t):
            ka = float(k_a(t))
            if ka == 0.0:
                return 0.0
            return ka / (ka + mu * float(k_w(t))) * float(dpc(t))
        return air_ratio
    if name == 'psi':
        def weighted(t):
            ka = float(k_a(t))
            if ka == 0.0:
                return 0.0
            kw = float(k_w(t))
            return -ka * kw / (mu * kw + ka) * float(dpc(t))
        return weighted
    raise KeyError(name)


def _evaluate(model, name, mu, s, quad):
    _check_s(s)
    try:
        return integrate_to_endpoint(integrand(model, name, mu), 0.0, s, quad)
    except IntegrationError as e:
        raise IntegrationError(f"{name}({s!r}): {e}", estimate=e.estimate, where=s) from e


def eval_g(model: ConstitutiveModel, s: float, quad: Quadrature = DEFAULT_QUADRATURE) -> float:
    return _evaluate(model, 'g', 1.0, s, quad)


def eval_zeta(model: ConstitutiveModel, s: float, quad: Quadrature = DEFAULT_QUADRATURE) -> float:
    return _evaluate(model, 'zeta', 1.0, s, quad)


def eval_Q(model: ConstitutiveModel, mu: float, s: float, quad: Quadrature = DEFAULT_QUADRATURE) -> float:
    _check_mu(mu)
    return _evaluate(model, 'Q', mu, s, quad)


def eval_R(model: ConstitutiveModel, mu: float, s: float, quad: Quadrature = DEFAULT_QUADRATURE) -> float:
    """R(s); the ratio k_a/(k_a + mu k_w) is taken as 0 where k_a vanishes."""
    _check_mu(mu)
    return _evaluate(model, 'R', mu, s, quad)


def eval_psi(model: ConstitutiveModel, mu: float, s: float, quad: Quadrature = DEFAULT_QUADRATURE) -> float:
    _check_mu(mu)
    return _evaluate(model, 'psi', mu, s, quad)


@dataclass(frozen=True)
class TransformTable:
    """Tabulated transforms on an increasing saturation grid for one mu."""
    s_grid: np.ndarray
    g_vals: np.ndarray
    zeta_vals: np.ndarray
    Q_vals: np.ndarray
    R_vals: np.ndarray
    psi_vals: np.ndarray
    mu: float
    model: Optional[ConstitutiveModel] = field(default=None, compare=False, repr=False)

    def column(self, name: str) -> np.ndarray:
        return getattr(self, f"{name}_vals")

    def interp(self, name: str, u) -> np.ndarray:
        """Piecewise-linear interpolation of a tabulated transform at saturations u."""
        return np.interp(u, self.s_grid, self.column(name))

    def to_frame(self) -> pd.DataFrame:
        data = {'s': self.s_grid}
        data.update({name: self.column(name) for name in COLUMNS})
        return pd.DataFrame(data)

    def monotonicity_violations(self, tol: float = 1e-12) -> list:
        directions = {'g': 1.0, 'zeta': -1.0, 'Q': -1.0, 'R': -1.0, 'psi': 1.0}
        found = []
        for name, sign in directions.items():
            steps = sign * np.diff(self.column(name))
            if steps.size and steps.min() < -tol:
                found.append((name, float(self.s_grid[int(np.argmin(steps))])))
        return found


def default_grid(points: int = DEFAULT_TABLE_POINTS) -> np.ndarray:
    return np.linspace(0.0, 1.0, points)


def build_table(model: ConstitutiveModel, mu: float, grid: Optional[Sequence[float]] = None,
                quad: Quadrature = DEFAULT_QUADRATURE) -> TransformTable:
    """
    Tabulate all five transforms on `grid` (default 1025 uniform points).

    Integrals are accumulated interval by interval, each interval getting an
    equal share of abs_tol, so the cumulative error stays within abs_tol.
    """
    _check_mu(mu)
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ConfigError("table grid must be a non-empty vector")
    if grid[0] < 0.0 or grid[-1] > 1.0 or np.any(np.diff(grid) <= 0.0):
        raise ConfigError("table grid must be strictly increasing within [0, 1]")

    share = quad.abs_tol / grid.size
    columns = {}
    for name in COLUMNS:
        f = integrand(model, name, mu)
        values = np.empty(grid.size)
        lo, acc = 0.0, 0.0
        for k, s in enumerate(grid):
            try:
                acc += integrate_to_endpoint(f, lo, float(s), quad, tol=share)
            except IntegrationError as e:
                raise IntegrationError(f"table column {name} at s={s!r}: {e}",
                                       estimate=e.estimate, where=float(s)) from e
            values[k] = acc
            lo = float(s)
        columns[name] = values

    table = TransformTable(grid, columns['g'], columns['zeta'], columns['Q'],
                           columns["R"], columns["psi"], mu, model)
    logger.info("built transform table for model %s, mu=%g, %d points", model.name, mu, grid.size)
    return table


def write_table_csv(table: TransformTable, path) -> None:
    table.to_frame().to_csv(path, index=False, float_format='%.17g')
