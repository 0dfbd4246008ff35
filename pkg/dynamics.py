import json
import logging
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from consensus import WeightVector, clip, consensus_point, global_best, softmin_weights
from noise_streams import StreamDomain, block_counter, gaussian_block
from objectives import ObjectiveSpec, evaluate_batch

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.17g"

# Largest schedule index first_index_reaching will sum up to
MAX_SCHEDULE_INDEX = 10_000_000


def jsonable(value):
    """Plain-JSON view of nested results: numpy scalars unwrapped, non-finite floats as strings."""
    if isinstance(value, dict):
        return {str(key): jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


class ParticleFailure(RuntimeError):
    """A particle produced a non-finite objective value."""

    def __init__(self, index: int, step: int, value: float):
        super().__init__(f"particle {index} has non-finite objective value {value!r} at step {step}")
        self.index = index
        self.step = step
        self.value = value


@dataclass(frozen=True)
class CboConfig:
    """Hyperparameters of the clipped CBO iteration.

    noise_scale_override replaces sqrt(2 gamma / alpha) when set (zero-noise tests).
    clip_radius may be inf, which runs the unclipped iteration.
    """
    dim: int = 1
    n_particles: int = 100
    alpha: float = 100.0
    gamma: float = 4.0
    clip_radius: float = 2.0
    eta0: float = 1.0
    zeta: float = 0.5
    sigma0_sq: float = 1.0
    m0: Optional[Tuple[float, ...]] = None
    seed: int = 0
    max_iter: int = 1000
    noise_scale_override: Optional[float] = None

    def __post_init__(self):
        m0 = (0.0,) * int(self.dim) if self.m0 is None else tuple(float(v) for v in np.ravel(self.m0))
        object.__setattr__(self, "m0", m0)

    @property
    def mean0(self) -> np.ndarray:
        return np.asarray(self.m0, dtype=float)

    def problems(self) -> List[Tuple[str, str]]:
        """(field, message) for every violated constraint."""
        found = []
        if self.dim < 1:
            found.append(('dim', "must be >= 1"))
        if self.n_particles < 1:
            found.append(('n_particles', "must be >= 1"))
        if not self.alpha > 0:
            found.append(('alpha', "must be > 0"))
        if not self.gamma > 0:
            found.append(('gamma', "must be > 0"))
        if not self.clip_radius > 0:
            found.append(('clip_radius', "must be > 0"))
        if not 0 < self.eta0 <= 1:
            found.append(('eta0', "must be in (0, 1]"))
        if not 0 < self.zeta <= 1:
            found.append(('zeta', "must be in (0, 1]"))
        if not self.sigma0_sq >= 0:
            found.append(('sigma0_sq', "must be >= 0"))
        if len(self.m0) != self.dim:
            found.append(('m0', f"has {len(self.m0)} entries, expected {self.dim}"))
        elif not all(math.isfinite(v) for v in self.m0):
            found.append(('m0', "must be finite"))
        if not 0 <= self.seed < (1 << 64):
            found.append(('seed', "must be in [0, 2**64)"))
        if self.max_iter < 0:
            found.append(('max_iter', "must be >= 0"))
        if self.noise_scale_override is not None and not self.noise_scale_override >= 0:
            found.append(('noise_scale_override', "must be >= 0"))
        return found

    def validate(self) -> 'CboConfig':
        found = self.problems()
        if found:
            name, message = found[0]
            raise ValueError(f"{name} {message}")
        return self

    def flags(self, spec: Optional[ObjectiveSpec] = None) -> List[str]:
        """Legal settings that fall outside the hypotheses of the convergence guarantees."""
        notes = []
        if self.sigma0_sq < self.gamma / (2.0 * self.alpha):
            notes.append(f"sigma0_sq={self.sigma0_sq:g} is below gamma/(2 alpha)={self.gamma / (2.0 * self.alpha):g}")
        if spec is not None and not spec.delta_is_unbounded:
            needed = float(np.linalg.norm(spec.x_star)) + spec.delta
            if self.clip_radius < needed:
                notes.append(f"clip_radius={self.clip_radius:g} is below ||x*|| + delta={needed:g}")
        return notes

    def replace(self, **changes) -> 'CboConfig':
        return replace(self, **changes)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['m0'] = list(self.m0)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> 'CboConfig':
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown CboConfig fields: {unknown}")
        return cls(**data)


@dataclass
class ParticleSystem:
    """Positions of n particles, the step counter k and the stream seed."""
    positions: np.ndarray
    step: int
    rng_key: int

    @property
    def n(self) -> int:
        return self.positions.shape[0]


def step_size(k: int, eta0: float, zeta: float) -> float:
    """eta_k = eta0 / k^zeta."""
    if k < 1:
        raise ValueError("step index k must be >= 1")
    return eta0 / float(k) ** zeta


def schedule(k_max: int, eta0: float, zeta: float) -> Tuple[np.ndarray, np.ndarray]:
    """(eta, t) arrays of length k_max + 1 with eta[0] = 0 and t[k] = t_k."""
    etas = np.array([0.0] + [step_size(k, eta0, zeta) for k in range(1, k_max + 1)])
    return etas, np.cumsum(etas)


def elapsed_time(k: int, eta0: float, zeta: float) -> float:
    """t_k = eta_1 + ... + eta_k, summed in index order."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0:
        return 0.0
    return float(schedule(k, eta0, zeta)[1][-1])


def _log_index_upper_bound(t: float, eta0: float, zeta: float) -> float:
    """ln of the upper end of the k_t bracket implied by eta0((k+1)^p - 1)/p <= t_k, p = 1 - zeta."""
    if zeta == 1.0:
        return t / eta0
    p = 1.0 - zeta
    return math.log1p(p * t / eta0) / p


def first_index_reaching(t: float, eta0: float, zeta: float) -> int:
    """Smallest k with t_k >= t.

    Raises ValueError when k_t may exceed MAX_SCHEDULE_INDEX (with zeta = 1,
    k_t grows like e^{t/eta0}).
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    log_bound = _log_index_upper_bound(t, eta0, zeta)
    if log_bound > math.log(MAX_SCHEDULE_INDEX):
        raise ValueError(f"t={t:g} needs up to e^{log_bound:.4g} steps with eta0={eta0:g}, zeta={zeta:g}; "
                         f"the limit is {MAX_SCHEDULE_INDEX}")
    k = 0
    elapsed = 0.0
    while elapsed < t:
        k += 1
        elapsed += step_size(k, eta0, zeta)
    return k


def init_particles(cfg: CboConfig, replica: int = 0) -> ParticleSystem:
    """i.i.d. N(m0, sigma0^2 I) positions keyed by (seed, replica, particle, coordinate)."""
    cfg.validate()
    draws = gaussian_block(cfg.seed, StreamDomain.INIT, block_counter(0, replica), (cfg.n_particles, cfg.dim))
    positions = cfg.mean0 + math.sqrt(cfg.sigma0_sq) * draws
    return ParticleSystem(positions=positions, step=0, rng_key=cfg.seed)


@dataclass
class ConsensusState:
    values: np.ndarray
    weights: WeightVector
    theta: np.ndarray
    theta_clipped: np.ndarray


def consensus_state(sys: ParticleSystem, cfg: CboConfig, spec: ObjectiveSpec) -> ConsensusState:
    """Objective values, weights and consensus point of the current system."""
    positions = sys.positions
    if not np.all(np.isfinite(positions)):
        index = int(np.flatnonzero(~np.all(np.isfinite(positions), axis=1))[0])
        raise ParticleFailure(index, sys.step, float('nan'))
    values = evaluate_batch(spec, positions)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise ParticleFailure(int(bad[0]), sys.step, float(values[bad[0]]))
    weights = softmin_weights(values, cfg.alpha)
    theta = consensus_point(positions, weights)
    return ConsensusState(values=values, weights=weights, theta=theta, theta_clipped=clip(theta, cfg.clip_radius))


def noise_coefficient(cfg: CboConfig, eta: float) -> float:
    if cfg.noise_scale_override is not None:
        return cfg.noise_scale_override * math.sqrt(eta)
    return math.sqrt(2.0 * eta * cfg.gamma / cfg.alpha)


def _advance(sys: ParticleSystem, cfg: CboConfig, state: ConsensusState) -> ParticleSystem:
    k_next = sys.step + 1
    eta = step_size(k_next, cfg.eta0, cfg.zeta)
    xi = gaussian_block(sys.rng_key, StreamDomain.CBO_NOISE, k_next, sys.positions.shape)
    positions = (1.0 - eta) * sys.positions + eta * state.theta_clipped + noise_coefficient(cfg, eta) * xi
    return ParticleSystem(positions=positions, step=k_next, rng_key=sys.rng_key)


def cbo_step(sys: ParticleSystem, cfg: CboConfig, spec: ObjectiveSpec) -> ParticleSystem:
    """One clipped CBO update X_{k+1} = X_k + eta_{k+1}(clip_R(theta_k) - X_k) + sqrt(2 eta_{k+1} gamma/alpha) xi."""
    if sys.step + 1 > cfg.max_iter:
        raise ValueError(f"step {sys.step + 1} exceeds max_iter={cfg.max_iter}")
    return _advance(sys, cfg, consensus_state(sys, cfg, spec))


@dataclass
class RunRecord:
    """Recorded time series of a CBO run."""
    rows: pd.DataFrame
    config: Dict
    seed: int
    final_positions: np.ndarray

    REQUIRED_COLUMNS = ('k', 'eta', 't', 'mse', 'best_value', 'best_index', 'ess')

    def terminal_mean(self, column: str, fraction: float = 0.1) -> float:
        """Average of a column over rows with k >= (1 - fraction) * max k."""
        k = self.rows['k'].to_numpy()
        tail = self.rows[column].to_numpy()[k >= (1.0 - fraction) * k.max()]
        return float(np.mean(tail))

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.rows.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
        return path

    def summary(self) -> Dict:
        last = self.rows.iloc[-1]
        return {
            'terminal_k': int(last['k']),
            'terminal_t': float(last['t']),
            'terminal_mse': float(last['mse']),
            'terminal_best_value': float(last['best_value']),
            'terminal_best_index': int(last['best_index']),
            'config': self.config,
            'seed': self.seed,
        }

    def write_summary(self, path, extra: Optional[Dict] = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        summary = self.summary()
        summary.update(extra or {})
        with open(path, 'w') as handle:
            json.dump(jsonable(summary), handle, indent=2, sort_keys=True)
            handle.write("\n")
        return path


def _record_row(sys: ParticleSystem, state: ConsensusState, eta: float, t: float, spec: ObjectiveSpec) -> Dict:
    offsets = sys.positions - spec.x_star
    sq_dist = np.sum(offsets * offsets, axis=1)
    best_index, _ = global_best(sys.positions, state.values)
    row = {
        'k': sys.step,
        'eta': eta,
        't': t,
        'mse': float(np.mean(sq_dist)),
        'best_value': float(state.values[best_index]),
        'best_index': best_index,
        'ess': state.weights.ess,
    }
    for j, value in enumerate(state.theta):
        row[f'theta_{j}'] = float(value)
    for j, value in enumerate(state.theta_clipped):
        row[f'theta_clipped_{j}'] = float(value)
    row['best_mse'] = float(np.min(sq_dist))
    row['second_moment'] = float(np.mean(np.sum(sys.positions * sys.positions, axis=1)))
    return row


def run_cbo(cfg: CboConfig, spec: ObjectiveSpec, record_every: int = 1) -> RunRecord:
    """Run max_iter CBO steps, recording every record_every-th iteration and the last one."""
    cfg.validate()
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    if spec.dim != cfg.dim:
        raise ValueError(f"objective dimension {spec.dim} differs from cfg.dim={cfg.dim}")
    for note in cfg.flags(spec):
        logger.warning("Config flag: %s", note)

    etas, times = schedule(cfg.max_iter, cfg.eta0, cfg.zeta)
    sys = init_particles(cfg)
    rows = []
    while True:
        state = consensus_state(sys, cfg, spec)
        k = sys.step
        if k % record_every == 0 or k == cfg.max_iter:
            rows.append(_record_row(sys, state, float(etas[k]), float(times[k]), spec))
        if k == cfg.max_iter:
            break
        sys = _advance(sys, cfg, state)

    logger.debug("CBO run finished: n=%d, k=%d, mse=%.4g", cfg.n_particles, sys.step, rows[-1]['mse'])
    frame = pd.DataFrame(rows)
    frame['k'] = frame['k'].astype(np.int64)
    frame['best_index'] = frame['best_index'].astype(np.int64)
    return RunRecord(rows=frame, config=cfg.to_dict(), seed=cfg.seed, final_positions=sys.positions)
