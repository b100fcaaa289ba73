"""
Run configuration: the RunConfig dataclass, the three built-in presets and
the flat `key = value` text format used for config files and run manifests.

    # comment
    run_id = test2
    scheme = two-phase
    mu = 1e-08
    sources.injection = dirac 0.0 1.0
    u0 = piecewise 0.1 1/3 0.7

Dotted keys address nested blocks (model.*, sources.*). Floats are written
with repr so a manifest re-read with load_config reproduces the run.
"""

import logging
import math
import os
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from errors import ConfigError
from physics import ConstitutiveModel, Viscosity, model_from_name
from solver import DEFAULT_SIGMA, Dirac, SourceSpec
from transforms import DEFAULT_TABLE_POINTS

logger = logging.getLogger(__name__)

OUT_ENV = 'POROLIM_OUT'
DEFAULT_OUT_DIR = 'porolim_out'
SCHEMES = ('two-phase', 'limit')
LIMIT_MODES = ('literal', 'obstacle')
RECORDINGS = ('snapshots', 'dense')
MODEL_PARAMS = ('a', 'b', 'pi0', 'gamma', 'u_m')


@dataclass(frozen=True)
class PiecewiseConstant:
    """
    u0(x) = values[k] on the k-th piece; piece boundaries belong to the
    left piece, so (0.1, 0.7) with break 1/3 gives 0.1 on [0, 1/3].
    """
    values: Tuple[float, ...]
    breaks: Tuple[Fraction, ...] = ()

    def __post_init__(self):
        if len(self.values) != len(self.breaks) + 1:
            raise ConfigError("piecewise u0 needs exactly one more value than breakpoints")
        edges = [float(b) for b in self.breaks]
        if any(not 0.0 < b < 1.0 for b in edges) or any(np.diff(edges) <= 0.0):
            raise ConfigError(f"u0 breakpoints must be increasing inside (0, 1), got {edges}")
        for v in self.values:
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"u0 value {v} outside [0, 1]")

    def __call__(self, x: float) -> float:
        k = int(np.searchsorted([float(b) for b in self.breaks], x, side='left'))
        return self.values[k]

    def to_text(self) -> str:
        if not self.breaks:
            return f"constant {self.values[0]!r}"
        parts = [repr(self.values[0])]
        for b, v in zip(self.breaks, self.values[1:]):
            parts += [str(b), repr(v)]
        return "piecewise " + " ".join(parts)


def constant(value: float) -> PiecewiseConstant:
    return PiecewiseConstant((float(value),))


@dataclass
class RunConfig:
    run_id: str = 'run'
    model: str = 'builtin'
    model_params: Dict[str, float] = field(default_factory=dict)
    scheme: str = 'two-phase'
    mu: float = 1e-8
    limit_mode: str = 'literal'
    n_cells: int = 100
    T: float = 0.01
    snapshots: Tuple[float, ...] = (0.01,)
    sigma: float = DEFAULT_SIGMA
    K_nominal: float = 1e-4
    sources: SourceSpec = field(default_factory=SourceSpec)
    u0: PiecewiseConstant = field(default_factory=lambda: constant(1.0))
    recording: str = 'snapshots'
    symmetrized: bool = False
    cap_injection: bool = True
    table_points: int = DEFAULT_TABLE_POINTS
    out_dir: Optional[str] = None
    n_jobs: int = 1

    def build_model(self) -> ConstitutiveModel:
        return model_from_name(self.model, **self.model_params)

    def validate(self) -> 'RunConfig':
        """Raise ConfigError on the first invalid parameter; returns self."""
        if not self.run_id or any(ch in self.run_id for ch in '/\\ '):
            raise ConfigError(f"run_id must be a non-empty name without spaces or slashes, got '{self.run_id}'")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"Unknown scheme '{self.scheme}'. Available: {', '.join(SCHEMES)}")
        if self.limit_mode not in LIMIT_MODES:
            raise ConfigError(f"Unknown limit_mode '{self.limit_mode}'. Available: {', '.join(LIMIT_MODES)}")
        if self.recording not in RECORDINGS:
            raise ConfigError(f"Unknown recording '{self.recording}'. Available: {', '.join(RECORDINGS)}")
        Viscosity(self.mu)
        if isinstance(self.n_cells, bool) or int(self.n_cells) != self.n_cells or self.n_cells < 2:
            raise ConfigError(f"n_cells must be an integer >= 2, got {self.n_cells}")
        if not (self.T >= 0.0 and math.isfinite(self.T)):
            raise ConfigError(f"T must be finite and nonnegative, got {self.T}")
        for t in self.snapshots:
            if not 0.0 < t <= self.T:
                raise ConfigError(f"snapshot time {t} outside (0, T={self.T}]")
        if not 0.0 < self.sigma < 1.0:
            raise ConfigError(f"sigma must lie in (0, 1), got {self.sigma}")
        if not self.K_nominal > 0.0:
            raise ConfigError(f"K_nominal must be positive, got {self.K_nominal}")
        if self.table_points < 2:
            raise ConfigError(f"table_points must be >= 2, got {self.table_points}")
        if self.n_jobs < 1:
            raise ConfigError(f"n_jobs must be >= 1, got {self.n_jobs}")
        model = self.build_model()
        if not model.u_m <= self.sources.c <= 1.0:
            raise ConfigError(f"injected saturation c={self.sources.c} must lie in [u_m={model.u_m}, 1]")
        for label, fld in (('injection', self.sources.injection), ('extraction', self.sources.extraction)):
            if isinstance(fld, np.ndarray) and fld.size != self.n_cells:
                raise ConfigError(f"sources.{label} has {fld.size} cells, n_cells is {self.n_cells}")
        return self

    def to_text(self) -> str:
        lines = ["# porolim run manifest", f"run_id = {self.run_id}", f"model = {self.model}"]
        for key in MODEL_PARAMS:
            if key in self.model_params:
                lines.append(f"model.{key} = {float(self.model_params[key])!r}")
        lines += [
            f"scheme = {self.scheme}",
            f"mu = {self.mu!r}",
            f"limit_mode = {self.limit_mode}",
            f"n_cells = {self.n_cells}",
            f"T = {self.T!r}",
            f"snapshots = {', '.join(repr(float(t)) for t in self.snapshots)}",
            f"sigma = {self.sigma!r}",
            f"K_nominal = {self.K_nominal!r}",
            f"sources.injection = {_source_text(self.sources.injection)}",
            f"sources.extraction = {_source_text(self.sources.extraction)}",
            f"sources.c = {self.sources.c!r}",
            f"sources.balance = {str(self.sources.balance).lower()}",
            f"u0 = {self.u0.to_text()}",
            f"recording = {self.recording}",
            f"symmetrized = {str(self.symmetrized).lower()}",
            f"cap_injection = {str(self.cap_injection).lower()}",
            f"table_points = {self.table_points}",
            f"n_jobs = {self.n_jobs}",
        ]
        if self.out_dir:
            lines.append(f"out_dir = {self.out_dir}")
        return "\n".join(lines) + "\n"


def _source_text(fld) -> str:
    if fld is None:
        return 'none'
    if isinstance(fld, Dirac):
        return f"dirac {fld.location!r} {fld.strength!r}"
    return "cells " + " ".join(repr(float(v)) for v in fld)


def _float(key: str, text: str) -> float:
    try:
        return float(Fraction(text)) if '/' in text else float(text)
    except (ValueError, ZeroDivisionError) as e:
        raise ConfigError(f"{key}: '{text}' is not a number") from e


def _int(key: str, text: str) -> int:
    try:
        return int(text)
    except ValueError as e:
        raise ConfigError(f"{key}: '{text}' is not an integer") from e


def _bool(key: str, text: str) -> bool:
    lowered = text.lower()
    if lowered in ('true', 'yes', 'on', '1'):
        return True
    if lowered in ('false', 'no', 'off', '0'):
        return False
    raise ConfigError(f"{key}: '{text}' is not a boolean")


def parse_source(key: str, text: str):
    parts = text.split()
    if not parts or parts[0] == 'none':
        return None
    kind, args = parts[0], parts[1:]
    if kind == 'dirac':
        if len(args) not in (1, 2):
            raise ConfigError(f"{key}: expected 'dirac <x0> [<w>]', got '{text}'")
        return Dirac(_float(key, args[0]), _float(key, args[1]) if len(args) == 2 else 1.0)
    if kind == 'cells':
        return np.array([_float(key, a) for a in args])
    raise ConfigError(f"{key}: unknown source kind '{kind}' (dirac, cells, none)")


def parse_u0(text: str) -> PiecewiseConstant:
    parts = text.split()
    if not parts:
        raise ConfigError("u0 is empty")
    kind, args = parts[0], parts[1:]
    if kind == 'constant' and len(args) == 1:
        return constant(_float('u0', args[0]))
    if kind == 'piecewise' and len(args) % 2 == 1:
        values = tuple(_float('u0', a) for a in args[0::2])
        try:
            breaks = tuple(Fraction(b) for b in args[1::2])
        except (ValueError, ZeroDivisionError) as e:
            raise ConfigError(f"u0: bad breakpoint in '{text}'") from e
        return PiecewiseConstant(values, breaks)
    if kind == 'preset' and len(args) == 1:
        return preset(args[0]).u0
    raise ConfigError(f"u0: expected 'constant v', 'piecewise v0 b1 v1 ...' or 'preset name', got '{text}'")


def load_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    """Parse `key = value` text over `base` (defaults when None) and validate it."""
    config = replace(base) if base is not None else RunConfig()
    source_kw = {}
    model_params = dict(config.model_params)
    simple = {f.name for f in fields(RunConfig)} - {'model_params', 'sources', 'u0'}

    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"line {number}: expected 'key = value', got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split('=', 1))

        if key.startswith('model.'):
            name = key[len('model.'):]
            if name not in MODEL_PARAMS:
                raise ConfigError(f"line {number}: unknown model parameter '{name}'")
            model_params[name] = _float(key, value)
        elif key in ('sources.injection', 'sources.extraction'):
            source_kw[key.split('.')[1]] = parse_source(key, value)
        elif key == 'sources.c':
            source_kw['c'] = _float(key, value)
        elif key == 'sources.balance':
            source_kw['balance'] = _bool(key, value)
        elif key == 'u0':
            config.u0 = parse_u0(value)
        elif key in ('mu', 'T', 'sigma', 'K_nominal'):
            setattr(config, key, _float(key, value))
        elif key in ('n_cells', 'table_points', 'n_jobs'):
            setattr(config, key, _int(key, value))
        elif key in ('symmetrized', 'cap_injection'):
            setattr(config, key, _bool(key, value))
        elif key == 'snapshots':
            config.snapshots = tuple(_float(key, t.strip()) for t in value.split(',') if t.strip())
        elif key in simple:
            setattr(config, key, (value or None) if key == 'out_dir' else value)
        else:
            raise ConfigError(f"line {number}: unknown key '{key}'")

    config.model_params = model_params
    if source_kw:
        config.sources = replace(config.sources, **source_kw)
    return config.validate()


def load_config_file(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    config = load_config(path.read_text())
    logger.info("loaded run %s from %s", config.run_id, path)
    return config


def resolve_out_dir(config: RunConfig, override: Optional[str] = None) -> Path:
    """--out beats the config's out_dir, which beats $POROLIM_OUT."""
    return Path(override or config.out_dir or os.environ.get(OUT_ENV) or DEFAULT_OUT_DIR)


TWO_LAYER_U0 = PiecewiseConstant((0.1, 0.7), (Fraction(1, 3),))

PRESETS = {
    'test1': ("c=0.7, u0=1: drainage of a saturated column", 0.7, constant(1.0), (0.01,)),
    'test2': ("c=0.7, u0=0.1 on [0,1/3] and 0.7 after", 0.7, TWO_LAYER_U0, (0.01, 0.1)),
    'test3': ("c=1, u0=0.1 on [0,1/3] and 0.7 after", 1.0, TWO_LAYER_U0, (0.01, 0.1)),
}


def preset(name: str) -> RunConfig:
    """Builtin model, mu=1e-8, unit Diracs at 0 (injection) and 1 (extraction)."""
    if name not in PRESETS:
        raise ConfigError(f"Unknown preset '{name}'. Available: {', '.join(PRESETS)}")
    _, c, u0, snapshots = PRESETS[name]
    sources = SourceSpec(injection=Dirac(0.0, 1.0), extraction=Dirac(1.0, 1.0), c=c)
    return RunConfig(run_id=name, model='builtin', scheme='two-phase', mu=1e-8, n_cells=100,
                     T=max(snapshots), snapshots=snapshots, sigma=DEFAULT_SIGMA, K_nominal=1e-4,
                     sources=sources, u0=u0)
