"""
Constitutive model of the water/air system: relative permeabilities,
capillary pressure, viscosity ratio, and the pointwise quantities built
from them (fractional flow, total mobility).

All closures accept floats or numpy arrays of saturations in [0, 1].
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Union

import numpy as np

from errors import ConfigError, ModelInconsistencyError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]
Closure = Callable[[ArrayLike], ArrayLike]

FD_STEP = 1e-6
FD_ONE_SIDED_ZONE = 1e-5
EPS_END = 1e-6
ENDPOINT_TOL = 1e-12


def _as_output(values: np.ndarray) -> ArrayLike:
    return float(values) if np.ndim(values) == 0 else values


def finite_difference_derivative(fn: Closure, step: float = FD_STEP,
                                 one_sided_zone: float = FD_ONE_SIDED_ZONE) -> Closure:
    """
    Build a derivative closure for a capillary pressure without an analytic one.

    Central differences in the interior; backward differences within
    one_sided_zone of s=1 and forward differences within one step of s=0,
    so fn is never sampled outside [0, 1].
    """
    def derivative(s: ArrayLike) -> ArrayLike:
        s = np.asarray(s, dtype=float)
        flat = np.atleast_1d(s).ravel()
        out = np.empty_like(flat)
        back = flat > 1.0 - one_sided_zone
        fwd = ~back & (flat < step)
        mid = ~(back | fwd)
        if np.any(mid):
            x = flat[mid]
            out[mid] = (np.asarray(fn(x + step)) - np.asarray(fn(x - step))) / (2.0 * step)
        if np.any(back):
            x = flat[back]
            out[back] = (np.asarray(fn(x)) - np.asarray(fn(x - step))) / step
        if np.any(fwd):
            x = flat[fwd]
            out[fwd] = (np.asarray(fn(x + step)) - np.asarray(fn(x))) / step
        return _as_output(out.reshape(s.shape))

    return derivative


@dataclass(frozen=True)
class ConstitutiveModel:
    """The triple (k_w, k_a, p_c) with p_c' and the residual saturation u_m."""
    k_w: Closure
    k_a: Closure
    p_c: Closure
    p_c_prime: Optional[Closure] = None
    u_m: float = 0.05
    name: str = 'custom'
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not 0.0 < self.u_m < 1.0:
            raise ConfigError(f"u_m must lie in (0, 1), got {self.u_m}")
        if self.p_c_prime is None:
            logger.debug("model %s has no p_c' - using finite differences", self.name)
            object.__setattr__(self, 'p_c_prime', finite_difference_derivative(self.p_c))


@dataclass(frozen=True)
class Viscosity:
    """Air/water viscosity ratio mu in (0, 1]."""
    mu: float

    def __post_init__(self):
        if not 0.0 < self.mu <= 1.0:
            raise ConfigError(f"viscosity ratio mu must lie in (0, 1], got {self.mu}")


def power_law_model(a: float, b: float, pi0: float, gamma: float,
                    u_m: float = 0.05, name: str = 'power-law') -> ConstitutiveModel:
    """
    Parametric family k_w(s)=s^a, k_a(s)=(1-s)^b, p_c(s)=pi0*(1-s)^gamma.

    Parameters:
    a, b (float): relative permeability exponents, positive
    pi0 (float): capillary entry scale, positive
    gamma (float): capillary exponent in (0, 1] keeps p_c continuous at s=1
    u_m (float): lower saturation bound
    """
    for label, value in (('a', a), ('b', b), ('pi0', pi0), ('gamma', gamma)):
        if not value > 0.0:
            raise ConfigError(f"power-law parameter {label} must be positive, got {value}")

    def k_w(s):
        return _as_output(np.power(np.asarray(s, dtype=float), a))

    def k_a(s):
        return _as_output(np.power(1.0 - np.asarray(s, dtype=float), b))

    def p_c(s):
        return _as_output(pi0 * np.power(1.0 - np.asarray(s, dtype=float), gamma))

    def p_c_prime(s):
        with np.errstate(divide='ignore'):
            return _as_output(-pi0 * gamma * np.power(1.0 - np.asarray(s, dtype=float), gamma - 1.0))

    return ConstitutiveModel(k_w=k_w, k_a=k_a, p_c=p_c, p_c_prime=p_c_prime, u_m=u_m, name=name,
                             params={'a': a, 'b': b, 'pi0': pi0, 'gamma': gamma, 'u_m': u_m})


def builtin_test_model() -> ConstitutiveModel:
    """p_c(z)=0.1*sqrt(1-z), k_a(z)=(1-z)^2, k_w(z)=sqrt(z), u_m=0.05."""

    def k_w(z):
        return _as_output(np.sqrt(np.asarray(z, dtype=float)))

    def k_a(z):
        return _as_output((1.0 - np.asarray(z, dtype=float)) ** 2)

    def p_c(z):
        return _as_output(0.1 * np.sqrt(1.0 - np.asarray(z, dtype=float)))

    def p_c_prime(z):
        with np.errstate(divide='ignore'):
            return _as_output(-0.05 / np.sqrt(1.0 - np.asarray(z, dtype=float)))

    return ConstitutiveModel(k_w=k_w, k_a=k_a, p_c=p_c, p_c_prime=p_c_prime, u_m=0.05, name='builtin')


def model_from_name(name: str, **params) -> ConstitutiveModel:
    if name == 'builtin':
        extra = sorted(set(params) - {'u_m'})
        if extra:
            raise ConfigError(f"builtin model takes only u_m, got {', '.join(extra)}")
        model = builtin_test_model()
        if 'u_m' in params:
            model = replace(model, u_m=float(params['u_m']))
        return model
    if name == 'power-law':
        try:
            return power_law_model(params['a'], params['b'], params['pi0'], params['gamma'],
                                   params.get('u_m', 0.05))
        except KeyError as e:
            raise ConfigError(f"power-law model needs parameter {e.args[0]}") from e
    raise ConfigError(f"Unknown model '{name}'. Available: builtin, power-law")


def frac_flow(model: ConstitutiveModel, mu: float, s: ArrayLike) -> ArrayLike:
    """Water fractional flow k_w / (k_w + k_a/mu)."""
    s = np.asarray(s, dtype=float)
    kw = np.asarray(model.k_w(s), dtype=float)
    ka = np.asarray(model.k_a(s), dtype=float)
    mobility = kw + ka / mu
    if np.any(mobility == 0.0):
        bad = s[mobility == 0.0] if s.ndim else s
        raise ModelInconsistencyError(
            f"k_w and k_a both vanish at s={np.ravel(bad)[0]!r}; fractional flow undefined")
    return _as_output(kw / mobility)


def total_mobility(model: ConstitutiveModel, mu: float, s: ArrayLike) -> ArrayLike:
    """M(s) = k_w(s) + k_a(s)/mu."""
    s = np.asarray(s, dtype=float)
    return _as_output(np.asarray(model.k_w(s), dtype=float) + np.asarray(model.k_a(s), dtype=float) / mu)


@dataclass
class HypothesisCheck:
    name: str
    hypothesis: str
    passed: bool
    worst_s: Optional[float] = None
    worst_value: Optional[float] = None


@dataclass
class ValidationReport:
    model_name: str
    samples: int
    checks: List[HypothesisCheck] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> List[HypothesisCheck]:
        return [c for c in self.checks if not c.passed]

    def check(self, name: str) -> HypothesisCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def _endpoint_check(name, hyp, fn, s, target) -> HypothesisCheck:
    value = float(fn(s))
    return HypothesisCheck(name, hyp, bool(abs(value - target) <= ENDPOINT_TOL), s, value)


def _monotone_check(name, hyp, grid, values, strict=False, increasing=True) -> HypothesisCheck:
    steps = np.diff(values) if increasing else -np.diff(values)
    bad = steps <= 0.0 if strict else steps < -ENDPOINT_TOL
    if np.any(~np.isfinite(steps)):
        idx = int(np.argmax(~np.isfinite(steps)))
        return HypothesisCheck(name, hyp, False, float(grid[idx]), float('nan'))
    if np.any(bad):
        idx = int(np.argmin(steps))
        return HypothesisCheck(name, hyp, False, float(grid[idx]), float(steps[idx]))
    return HypothesisCheck(name, hyp, True)


def validate_hypotheses(model: ConstitutiveModel, samples: int = 101,
                        eps_end: float = EPS_END) -> ValidationReport:
    """
    Check the structural hypotheses on the closures by sampling.

    The interior grid has `samples` uniform points on [0, 1-eps_end]; the
    endpoint conditions are evaluated at 0 and 1 exactly. Failing checks
    are reported, not raised.
    """
    if samples < 2:
        raise ConfigError(f"samples must be >= 2, got {samples}")

    report = ValidationReport(model.name, samples)
    grid = np.linspace(0.0, 1.0 - eps_end, samples)
    with np.errstate(all='ignore'):
        kw = np.asarray(model.k_w(grid), dtype=float)
        ka = np.asarray(model.k_a(grid), dtype=float)
        pc = np.asarray(model.p_c(grid), dtype=float)
        dpc = np.asarray(model.p_c_prime(grid), dtype=float)

        report.checks.append(_endpoint_check('k_w(0)=0', 'water permeability', model.k_w, 0.0, 0.0))
        report.checks.append(_endpoint_check('k_w(1)=1', 'water permeability', model.k_w, 1.0, 1.0))
        kw_um = float(model.k_w(model.u_m))
        report.checks.append(HypothesisCheck('k_w(u_m)>0', 'water permeability', kw_um > 0.0, model.u_m, kw_um))
        report.checks.append(_monotone_check('k_w nondecreasing', 'water permeability', grid, kw))

        report.checks.append(_endpoint_check('k_a(1)=0', 'air permeability', model.k_a, 1.0, 0.0))
        report.checks.append(_endpoint_check('k_a(0)=1', 'air permeability', model.k_a, 0.0, 1.0))
        report.checks.append(_monotone_check('k_a nonincreasing', 'air permeability', grid, ka, increasing=False))
        idx = int(np.argmin(ka))
        report.checks.append(HypothesisCheck('k_a>0 on [0,1)', 'air permeability', bool(ka[idx] > 0.0),
                                             float(grid[idx]), float(ka[idx])))

        report.checks.append(_monotone_check('p_c strictly decreasing', 'capillary pressure', grid, pc,
                                             strict=True, increasing=False))
        drive = -ka * dpc
        finite = np.isfinite(drive)
        if np.all(finite):
            idx = int(np.argmax(drive))
            report.checks.append(HypothesisCheck('sup(-k_a p_c\') finite', 'capillary pressure', True,
                                                 float(grid[idx]), float(drive[idx])))
        else:
            idx = int(np.argmax(~finite))
            report.checks.append(HypothesisCheck('sup(-k_a p_c\') finite', 'capillary pressure', False,
                                                 float(grid[idx]), float(drive[idx])))

    for c in report.failures():
        logger.info("model %s fails %s (%s) at s=%s", model.name, c.name, c.hypothesis, c.worst_s)
    return report
