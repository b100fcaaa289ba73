#!/usr/bin/env python3
"""
Porolim - Command Line Tool
Usage:
    python porolim_cli.py run --preset test1
    python porolim_cli.py compare --preset test1 --mode obstacle
    python porolim_cli.py sweep --preset test1 --mus 1e-2,1e-4,1e-6,1e-8
    python porolim_cli.py diagnose --config run.cfg
    python porolim_cli.py presets
"""

import logging
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from config import LIMIT_MODES, PRESETS, RunConfig, load_config_file, preset, resolve_out_dir
from diagnostics import (DEFAULT_MUS, air_energy_both_ways, est_g_energy, est_pressure_energy,
                         est_zeta_energy, mu_sweep, space_translate, time_translate,
                         trajectory_gap, write_estimates_csv, write_sweep_csv)
from errors import ConfigError, InsufficientDataError, NumericalError, PorolimError
from solver import Trajectory, run, write_snapshot_csv
from transforms import write_table_csv

logger = logging.getLogger(__name__)

TRANSLATE_SHIFTS = (1, 2, 4, 8)


def print_help():
    """Print help message for command-line usage"""
    print("""
💧 Porolim - Command Line Usage
===============================

Commands:
1. Run one simulation and write snapshot CSVs, a manifest and a plot script:
   python porolim_cli.py run (--preset NAME | --config FILE) [options]

2. Compare the two-phase scheme with the limit scheme:
   python porolim_cli.py compare (--preset NAME | --config FILE) [--mode literal|obstacle]

3. Sweep the viscosity ratio towards the limit:
   python porolim_cli.py sweep (--preset NAME | --config FILE) [--mus 1e-2,1e-4] [--jobs N]

4. Compute the energy and translate estimates on a dense recording
   (writes RUN_estimates.csv and the transform table RUN_table.csv):
   python porolim_cli.py diagnose (--preset NAME | --config FILE) --recording dense

5. List the built-in presets:
   python porolim_cli.py presets

Options:
   --config FILE    key = value run configuration
   --preset NAME    test1, test2 or test3
   --out DIR        output directory (default: config out_dir, then $POROLIM_OUT)
   --cells N        number of cells
   --sigma X        CFL factor in (0, 1)
   --mu X           viscosity ratio in (0, 1]
   --scheme S       two-phase or limit
   --mode M         limit scheme mode: literal or obstacle
   --T X            final time
   --mus LIST       comma-separated decreasing mu values (sweep)
   --jobs N         parallel sweep members
   --recording R    snapshots or dense (diagnose needs dense)
   --quiet          only warnings and errors in the log

Examples:
   python porolim_cli.py run --preset test2
   python porolim_cli.py compare --preset test1 --mu 1e-8 --mode obstacle
   python porolim_cli.py sweep --preset test1 --mode obstacle --jobs 4
""")


VALUE_OPTIONS = {'--config', '--preset', '--out', '--cells', '--sigma', '--mu', '--scheme',
                 '--mode', '--T', '--mus', '--jobs', '--recording'}


def parse_options(args: List[str]) -> Dict[str, object]:
    options: Dict[str, object] = {'quiet': False}
    i = 0
    while i < len(args):
        arg = args[i]
        if arg == '--quiet':
            options['quiet'] = True
            i += 1
        elif arg in VALUE_OPTIONS:
            if i + 1 >= len(args):
                raise ConfigError(f"option {arg} needs a value")
            options[arg[2:]] = args[i + 1]
            i += 2
        else:
            raise ConfigError(f"unknown option: {arg}")
    return options


def _number(options, key, cast=float):
    try:
        return cast(options[key])
    except ValueError as e:
        raise ConfigError(f"--{key}: '{options[key]}' is not a valid number") from e


def build_config(options: Dict[str, object]) -> RunConfig:
    """Resolve --config/--preset and apply the command-line overrides."""
    if 'config' in options and 'preset' in options:
        raise ConfigError("give either --config or --preset, not both")
    if 'config' in options:
        config = load_config_file(options['config'])
    elif 'preset' in options:
        config = preset(str(options['preset']))
    else:
        raise ConfigError("a run needs --config FILE or --preset NAME")

    overrides = {}
    if 'cells' in options:
        overrides['n_cells'] = _number(options, 'cells', int)
    if 'sigma' in options:
        overrides['sigma'] = _number(options, 'sigma')
    if 'mu' in options:
        overrides['mu'] = _number(options, 'mu')
    if 'scheme' in options:
        overrides['scheme'] = options['scheme']
    if 'mode' in options:
        overrides['limit_mode'] = options['mode']
    if 'T' in options:
        T = _number(options, 'T')
        overrides['T'] = T
        overrides['snapshots'] = tuple(t for t in config.snapshots if t <= T) or ((T,) if T > 0.0 else ())
    if 'recording' in options:
        overrides['recording'] = options['recording']
    if 'jobs' in options:
        overrides['n_jobs'] = _number(options, 'jobs', int)
    return replace(config, **overrides).validate()


def _parse_mus(text: Optional[str]):
    if text is None:
        return list(DEFAULT_MUS)
    try:
        return [float(m) for m in str(text).split(',') if m.strip()]
    except ValueError as e:
        raise ConfigError(f"--mus: '{text}' is not a comma-separated list of numbers") from e


def snapshot_name(run_id: str, t: float, tag: str = '') -> str:
    return f"{run_id}{tag}_t{t:g}.csv"


def plot_script(config: RunConfig, files: List[str]) -> str:
    """gnuplot script: u with crosses, p_g with diamonds, one page per snapshot."""
    lines = ["# gnuplot script written by porolim", "set datafile separator ','",
             "set xlabel 'x'", "set key outside", "set terminal pngcairo size 900,600"]
    for name in files:
        stem = Path(name).stem
        lines += [f"set output '{stem}.png'",
                  f"set title '{config.run_id}: {stem}'",
                  f"plot '{name}' every ::1 using 1:2 with linespoints pt 2 title 'u', \\",
                  f"     '{name}' every ::1 using 1:4 with linespoints pt 12 title 'p_g'"]
    return "\n".join(lines) + "\n"


class ExperimentRunner:
    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.written: List[Path] = []

        # Statistics tracking
        self.stats = {
            'runs': 0,
            'steps': 0,
            'states_recorded': 0,
            'rejected_volume': 0.0,
            'files_written': 0,
        }

    def _simulate(self, config: RunConfig) -> Trajectory:
        traj = run(config)
        self.stats['runs'] += 1
        self.stats['steps'] += len(traj.steps)
        self.stats['states_recorded'] += len(traj.states)
        self.stats['rejected_volume'] += traj.rejected_volume
        return traj

    def _target(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / name
        self.written.append(path)
        self.stats['files_written'] += 1
        logger.info("writing %s", path)
        return path

    @staticmethod
    def _output_times(config: RunConfig) -> List[float]:
        return sorted({float(t) for t in config.snapshots} | ({float(config.T)} if config.T > 0.0 else set()))

    def run_experiment(self, config: RunConfig) -> Trajectory:
        """Run once; write snapshot CSVs, the manifest and the plot script."""
        print(f"💧 RUNNING {config.run_id} ({config.scheme})")
        print("=" * 50)
        traj = self._simulate(config)

        files = []
        for t in self._output_times(config):
            name = snapshot_name(config.run_id, t)
            write_snapshot_csv(traj.state_at(t), traj.grid, self._target(name))
            files.append(name)
        self._target(f"{config.run_id}.manifest").write_text(config.to_text())
        self._target(f"{config.run_id}.gp").write_text(plot_script(config, files))
        self._print_summary()
        return traj

    def compare(self, config: RunConfig, modes) -> Dict[str, object]:
        """Two-phase run against the limit run in each mode; returns the gaps by mode."""
        print(f"🔍 COMPARING two-phase (mu={config.mu:g}) with the limit scheme")
        print("=" * 50)
        two_phase = self._simulate(replace(config, scheme='two-phase'))
        gaps = {}
        for mode in modes:
            limit = self._simulate(replace(config, scheme='limit', limit_mode=mode))
            gap = trajectory_gap(two_phase, limit)
            gaps[mode] = gap
            for t in gap.times[1:]:
                a, b = two_phase.state_at(t), limit.state_at(t)
                frame = pd.DataFrame({'x': two_phase.grid.centers, 'u_mu': a.u, 'u_limit': b.u,
                                      'abs_diff': np.abs(a.u - b.u)})
                frame.to_csv(self._target(snapshot_name(config.run_id, t, f"_compare_{mode}")),
                             index=False, float_format='%.17g')
            print(f"{mode:<10} sup gap at t={gap.times[-1]:g}: {gap.sup_final:.6e}   L2 gap: {gap.l2:.6e}")
        self._print_summary()
        return gaps

    def sweep(self, config: RunConfig, mus, n_jobs: int):
        print(f"📉 SWEEPING mu over {len(mus)} values ({config.limit_mode} limit)")
        print("=" * 50)
        result = mu_sweep(config, mus, n_jobs=n_jobs)
        self.stats['runs'] += len(result.mus) + 1
        write_sweep_csv(result, self._target(f"{config.run_id}_sweep.csv"))
        print(result.to_frame().to_string(index=False))
        if result.l2_strictly_decreasing():
            print("\n✅ l2_diff strictly decreasing in mu")
        else:
            print("\n⚠️  l2_diff is not strictly decreasing in mu")
        self._print_summary()
        return result

    def diagnose(self, config: RunConfig):
        """
        Every estimate functional on a dense run; writes the estimates and
        transform table CSVs. Raises NumericalError if a value is negative
        or the two air energies disagree.
        """
        print(f"🧪 DIAGNOSING {config.run_id}")
        print("=" * 50)
        if config.recording != 'dense':
            raise InsufficientDataError(
                "diagnose needs every accepted step: set recording = dense in the config "
                "or pass --recording dense")
        traj = self._simulate(config)
        model = config.build_model()
        mu = None if config.scheme == 'limit' else config.mu

        by_transform, by_pressure = air_energy_both_ways(traj, traj.table, model, mu)
        reports = [by_transform,
                   est_pressure_energy(traj),
                   est_zeta_energy(traj, model),
                   est_g_energy(traj, model),
                   by_pressure]
        reports += [space_translate(traj, model, k) for k in TRANSLATE_SHIFTS]
        reports += [time_translate(traj, model, m) for m in TRANSLATE_SHIFTS]

        for r in reports:
            ratio = f"   ratio {r.ratio:.4e}" if r.ratio is not None else ""
            print(f"{r.name:<26} {r.value:.6e}{ratio}")
        bad = [r.name for r in reports if not (math.isfinite(r.value) and r.value >= 0.0)]
        if bad:
            raise NumericalError(f"estimate functionals not finite and nonnegative: {', '.join(bad)}")
        write_estimates_csv(reports, self._target(f"{config.run_id}_estimates.csv"))
        write_table_csv(traj.table, self._target(f"{config.run_id}_table.csv"))
        self._print_summary()
        return reports

    def _print_summary(self):
        print("\n" + "=" * 50)
        print("📊 RUN SUMMARY")
        print("=" * 50)
        print(f"Runs:                   {self.stats['runs']:,}")
        print(f"Accepted steps:         {self.stats['steps']:,}")
        print(f"States recorded:        {self.stats['states_recorded']:,}")
        print(f"Rejected injection:     {self.stats['rejected_volume']:.3e}")
        print(f"Files written:          {self.stats['files_written']:,}")
        if self.written:
            print(f"Output directory:       {self.out_dir}")


def list_presets():
    print("\n📋 BUILT-IN PRESETS:")
    print("-" * 50)
    for name, (description, *_rest) in PRESETS.items():
        config = preset(name)
        snaps = ", ".join(f"{t:g}" for t in config.snapshots)
        print(f"{name:<8} {description}  (snapshots: {snaps})")


def main(argv: Optional[List[str]] = None) -> int:
    """Main command-line interface; returns the exit status."""
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv or argv[0].lower() in ('help', '--help', '-h'):
        print_help()
        return 0

    command = argv[0].lower()
    try:
        options = parse_options(argv[1:])
        logging.basicConfig(level=logging.WARNING if options['quiet'] else logging.INFO,
                            format='%(asctime)s - %(levelname)s - %(message)s')

        if command == 'presets':
            list_presets()
            return 0
        if command not in ('run', 'compare', 'sweep', 'diagnose'):
            print(f"❌ Unknown command: {command}", file=sys.stderr)
            print_help()
            return 2

        config = build_config(options)
        runner = ExperimentRunner(resolve_out_dir(config, options.get('out')))

        if command == 'run':
            runner.run_experiment(config)
        elif command == 'compare':
            modes = (options['mode'],) if 'mode' in options else LIMIT_MODES
            runner.compare(config, modes)
        elif command == 'sweep':
            runner.sweep(config, _parse_mus(options.get('mus')), config.n_jobs)
        else:
            runner.diagnose(config)

        print(f"\n✅ {command} completed!")
        return 0

    except PorolimError as e:
        print(f"❌ {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"❌ I/O error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
