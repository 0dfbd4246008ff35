"""Command-line entry point for CBO runs, mean-field studies and scaling experiments.

    python harness.py run --config configs/quadratic.json --out out/
    python harness.py laplace --config configs/laplace_quartic.json --set laplace.samples=8192
"""
import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from dotenv import load_dotenv

from constants import earliest_iteration_K0, first_block_time, table_constants
from dynamics import CboConfig, jsonable, run_cbo
from experiments import ExperimentPlan, ExperimentRunner, Verdict
from meanfield import flow_frame, integrate_mean_flow
from objectives import ObjectiveSpec, builtin

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

EXIT_OK = 0
EXIT_RUN_FAILURE = 1
EXIT_CONFIG_ERROR = 2

# Commands backed by an experiment runner, with the sweep each one defaults to
EXPERIMENT_COMMANDS = {
    'theorem1': ('theorem1_rate', []),
    'theorem2': ('theorem2_scaling', [('n_particles', [50, 200, 800])]),
    'theorem3': ('theorem3_best', [('n_particles', [16, 64, 256])]),
    'blockcheck': ('block_check', []),
    'laplace': ('laplace_sweep', []),
    'poc': ('poc_sweep', []),
    'euler': ('euler_sweep', []),
    'decomposition': ('decomposition_check', []),
}

COMMANDS = ('run', 'meanfield', 'constants') + tuple(EXPERIMENT_COMMANDS)

_CBO_DEFAULTS = {f.name: getattr(CboConfig(), f.name) for f in fields(CboConfig) if f.name != 'dim'}
_CBO_DEFAULTS['m0'] = None

DEFAULT_CONFIG = {
    'objective': {'name': 'quadratic', 'dim': 1, 'shift': None, 'lam': 1.0},
    'cbo': _CBO_DEFAULTS,
    'run': {'record_every': 1},
    'meanfield': {'T': 5.0, 'h': 0.01, 'samples': 4096, 'method': 'auto'},
    'laplace': {'alphas': [100.0, 300.0, 1000.0, 3000.0], 't': 1.0, 'samples': 4096, 'm0': None, 'method': 'auto'},
    'poc': {'T': 2.0, 'h': 0.01, 'n_values': [25, 50, 100, 200, 400], 'seeds': [0, 1, 2, 3, 4], 'T_ratio': None,
            'systems_per_seed': 8},
    'euler': {'T': 1.0, 'eta0_values': [0.05, 0.025, 0.0125], 'seeds': [0]},
    'decomposition': {'times': [0.5, 1.0, 2.0, 5.0], 'h': 0.01, 'scheme': 'exact'},
    'constants': {'c_lap': 1.0},
    'experiment': {'sweep': [], 'replicates': 1, 'seeds': [], 'options': {}},
}

# Sections whose keys are free-form
_OPEN_SECTIONS = {'experiment.options'}


class ConfigError(ValueError):
    """A configuration problem, located by its dotted key path."""

    def __init__(self, key_path: str, message: str):
        super().__init__(f"{key_path}: {message}")
        self.key_path = key_path


@dataclass
class HarnessConfig:
    command: str
    config_path: Optional[Path]
    out_dir: Path
    overrides: List[Tuple[str, str]] = field(default_factory=list)
    threads: int = 1
    seed: Optional[int] = None
    log_level: str = 'INFO'


def _merge(defaults: Dict, given: Dict, prefix: str = '') -> Dict:
    merged = copy.deepcopy(defaults)
    for key, value in given.items():
        path = f"{prefix}{key}"
        if key not in defaults:
            raise ConfigError(path, "unknown key")
        if isinstance(defaults[key], dict) and path not in _OPEN_SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(path, "expected an object")
            merged[key] = _merge(defaults[key], value, prefix=f"{path}.")
        else:
            merged[key] = value
    return merged


def load_config(path: Optional[Path]) -> Dict:
    """Read the JSON config and fill every missing section and key with its default."""
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        with open(path) as handle:
            given = json.load(handle)
    except json.JSONDecodeError as error:
        raise ConfigError('$', f"malformed JSON in {path} at line {error.lineno} column {error.colno}: {error.msg}")
    except OSError as error:
        raise ConfigError('$', f"cannot read {path}: {error.strerror}")
    if not isinstance(given, dict):
        raise ConfigError('$', "top level must be an object")
    return _merge(DEFAULT_CONFIG, given)


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(config: Dict, overrides: List[str]) -> Tuple[Dict, List[Dict]]:
    """Apply --set a.b=value overrides; values parse as JSON, falling back to plain strings."""
    config = copy.deepcopy(config)
    applied = []
    for raw in overrides:
        if '=' not in raw:
            raise ConfigError(raw, "override must look like key.path=value")
        key_path, raw_value = raw.split('=', 1)
        parts = key_path.strip().split('.')
        node = config
        for depth, part in enumerate(parts[:-1]):
            if not isinstance(node, dict) or part not in node:
                raise ConfigError('.'.join(parts[:depth + 1]), "unknown key")
            node = node[part]
        if not isinstance(node, dict):
            raise ConfigError(key_path, "does not name a config value")
        open_section = '.'.join(parts[:-1]) in _OPEN_SECTIONS
        if parts[-1] not in node and not open_section:
            raise ConfigError(key_path, "unknown key")
        value = _parse_value(raw_value)
        node[parts[-1]] = value
        applied.append({'key': key_path, 'value': value})
    return config, applied


def build_objective(config: Dict) -> ObjectiveSpec:
    section = config['objective']
    try:
        return builtin(section['name'], int(section['dim']), section['shift'], lam=float(section['lam']))
    except (TypeError, ValueError) as error:
        raise ConfigError('objective', str(error))


def build_cbo_config(config: Dict, dim: int, seed: Optional[int] = None) -> CboConfig:
    section = dict(config['cbo'])
    if seed is not None:
        section['seed'] = seed
    try:
        cfg = CboConfig(dim=dim, **section)
        problems = cfg.problems()
    except (TypeError, ValueError) as error:
        raise ConfigError('cbo', str(error))
    if problems:
        name, message = problems[0]
        raise ConfigError(f"cbo.{name}", message)
    return cfg


def _experiment_plan(command: str, config: Dict, cfg: CboConfig) -> ExperimentPlan:
    kind, default_sweep = EXPERIMENT_COMMANDS[command]
    section = config['experiment']
    objective = config['objective']
    sweep = [tuple(item) for item in section['sweep']] or list(default_sweep)
    seeds = list(section['seeds'])
    options = dict(section['options'])

    if command == 'laplace':
        sweep = [('alpha', config['laplace']['alphas'])]
        options.update({k: v for k, v in config['laplace'].items() if k != 'alphas'})
    elif command == 'poc':
        sweep = [('n_particles', config['poc']['n_values'])]
        seeds = list(config['poc']['seeds'])
        options.update({k: v for k, v in config['poc'].items() if k not in ('n_values', 'seeds')})
    elif command == 'euler':
        sweep = [('eta0', config['euler']['eta0_values'])]
        seeds = list(config['euler']['seeds'])
        options['T'] = config['euler']['T']
    elif command == 'decomposition':
        options.update(config['decomposition'])
    elif command in ('theorem1', 'theorem2'):
        for key in ('h', 'samples'):
            options.setdefault(key, config['meanfield'][key])
    options = {k: v for k, v in options.items() if v is not None}

    try:
        return ExperimentPlan(kind=kind, base_cfg=cfg, objective=objective['name'], shift=objective['shift'],
                              lam=float(objective['lam']), sweep=sweep, replicates=int(section['replicates']),
                              seeds=seeds, options=options)
    except (TypeError, ValueError) as error:
        raise ConfigError('experiment', str(error))


def _write_json(path: Path, payload: Dict) -> Path:
    with open(path, 'w') as handle:
        json.dump(jsonable(payload), handle, indent=2, sort_keys=True)
        handle.write("\n")
    return path


def execute(hc: HarnessConfig) -> Tuple[int, str]:
    """Run one command; returns (exit code, summary line)."""
    config = load_config(hc.config_path)
    config, applied = apply_overrides(config, [f"{k}={v}" for k, v in hc.overrides])
    spec = build_objective(config)
    cfg = build_cbo_config(config, spec.dim, hc.seed)
    echo = {'command': hc.command, 'config': config, 'overrides': applied, 'seed': cfg.seed}
    try:
        hc.out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as error:
        raise ConfigError('out', f"cannot create {hc.out_dir}: {error.strerror}")

    if hc.command == 'run':
        record = run_cbo(cfg, spec, int(config['run']['record_every']))
        csv_path = record.to_csv(hc.out_dir / 'run.csv')
        K0 = earliest_iteration_K0(cfg.eta0, cfg.zeta, first_block_time(spec.lam, cfg.gamma))
        summary_path = record.write_summary(hc.out_dir / 'summary.json', extra={'echo': echo, 'K0': K0})
        line = f"run: ok terminal_mse={record.rows['mse'].iloc[-1]:.6g} artifacts: {csv_path} {summary_path}"
        return EXIT_OK, line

    if hc.command == 'meanfield':
        section = config['meanfield']
        flow = integrate_mean_flow(spec, cfg, float(section['T']), float(section['h']), int(section['samples']),
                                   method=section['method'])
        frame = flow_frame(flow)
        csv_path = hc.out_dir / 'flow.csv'
        frame.to_csv(csv_path, index=False, float_format="%.17g", lineterminator="\n")
        final = flow[-1]
        summary_path = _write_json(hc.out_dir / 'summary.json', {
            'echo': echo, 't': final.t, 'x_t': final.x_t, 'm_t': final.m_t, 'gamma_t': final.gamma_t,
        })
        return EXIT_OK, f"meanfield: ok m_T={final.m_t.tolist()} artifacts: {csv_path} {summary_path}"

    if hc.command == 'constants':
        report = table_constants(spec, cfg, float(config['constants']['c_lap']), seed=cfg.seed)
        json_path = report.write(hc.out_dir / 'constants.json')
        summary_path = _write_json(hc.out_dir / 'summary.json', {'echo': echo, 'overflow': sorted(report.overflow)})
        return EXIT_OK, f"constants: ok c1={report.c1:.6g} C0={report.C0:.6g} artifacts: {json_path} {summary_path}"

    plan = _experiment_plan(hc.command, config, cfg)
    verdict: Verdict = ExperimentRunner(hc.threads).run(plan)
    written = verdict.write(hc.out_dir)
    summary_path = _write_json(hc.out_dir / 'summary.json', {'echo': echo, 'verdict': verdict.to_dict()})
    paths = ' '.join(str(p) for p in written + [summary_path])
    if verdict.error is not None:
        logger.error("%s experiment stopped: %s", plan.kind, verdict.error)
        return EXIT_RUN_FAILURE, f"{hc.command}: error {verdict.error} artifacts: {paths}"
    status = 'pass' if verdict.passed else 'fail'
    return EXIT_OK, f"{hc.command}: {status} artifacts: {paths}"


def parse_args(argv: Optional[List[str]] = None) -> HarnessConfig:
    parser = argparse.ArgumentParser(description="Clipped consensus-based optimization runs and experiments.")
    parser.add_argument('command', choices=COMMANDS)
    parser.add_argument('--config', type=Path, default=None, help="JSON config; defaults apply to missing keys")
    parser.add_argument('--out', type=Path, default=Path(os.getenv('CBO_OUT_DIR', 'out')),
                        help="output directory (default: $CBO_OUT_DIR or ./out)")
    parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                        help="override a config value by dotted key path, e.g. cbo.alpha=200 (repeatable)")
    parser.add_argument('--threads', default=os.getenv('CBO_THREADS', '1'),
                        help="worker threads for sweeps (default: $CBO_THREADS or 1); results do not depend on it")
    parser.add_argument('--seed', type=int, default=None, help="override cbo.seed")
    parser.add_argument('--log-level', default=os.getenv('CBO_LOG_LEVEL', 'INFO'))
    args = parser.parse_args(argv)

    try:
        threads = int(args.threads)
    except ValueError:
        raise ConfigError('threads', f"expected an integer, got {args.threads!r}")
    if threads < 1:
        raise ConfigError('threads', "must be >= 1")
    overrides = []
    for raw in args.overrides:
        key, sep, value = raw.partition('=')
        if not sep:
            raise ConfigError(raw, "override must look like key.path=value")
        overrides.append((key, value))
    return HarnessConfig(command=args.command, config_path=args.config, out_dir=args.out, overrides=overrides,
                         threads=threads, seed=args.seed, log_level=args.log_level.upper())


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    try:
        hc = parse_args(argv)
    except ConfigError as error:
        logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
        logger.error("Config error: %s", error)
        print(f"config error: {error}")
        return EXIT_CONFIG_ERROR
    logging.basicConfig(level=getattr(logging, hc.log_level, logging.INFO), format=LOG_FORMAT)

    try:
        code, line = execute(hc)
    except ConfigError as error:
        logger.error("Config error: %s", error)
        print(f"{hc.command}: config error {error}")
        return EXIT_CONFIG_ERROR
    except (RuntimeError, ValueError, OSError) as error:
        logger.error("%s failed: %s", hc.command, error)
        print(f"{hc.command}: error {error}")
        return EXIT_RUN_FAILURE
    print(line)
    return code


if __name__ == '__main__':
    sys.exit(main())
