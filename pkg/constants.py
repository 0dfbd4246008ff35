import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Set, Tuple

import numpy as np
from scipy.special import logsumexp

from objectives import ObjectiveSpec, evaluate_batch, sample_ball

logger = logging.getLogger(__name__)

LN_MAX = math.log(np.finfo(float).max)
LN10 = math.log(10.0)

# Order in which constants are reported
REPORT_ORDER = (
    'c1', 'C0', 'T0_alpha', 'alpha0', 'E_X0_sq', 'C4', 'gamma0', 'gamma_tilde0', 'T1_int', 'c2', 'K0',
    'sup_f_ball', 'C8_int', 'L0_alpha', 'L1_alpha', 'C2_int', 'C3_int', 'C4_int', 'C5_int', 'C6_int_at_T',
    'C7_int', 'C9_int', 'C10_int_at_T1', 'C11_int', 'C18_int', 'C19_int', 'C1_int_at_T1', 'C1_alpha',
    'C2_alpha', 'C3_alpha', 'c3_alpha', 'T2_int_alpha',
)


class MissingConstantError(ValueError):
    def __init__(self, name: str):
        super().__init__(f"objective constant '{name}' is missing or not positive")
        self.name = name


def rate_constant_c1(lam: float, gamma: float) -> float:
    """c1 = 1 / (1 + 2 / (lam gamma))."""
    return 1.0 / (1.0 + 2.0 / (lam * gamma))


def plateau_constant_C0(gamma: float, dim: int) -> float:
    return 6.0 * gamma * dim


def time_shift_T0(alpha: float, gamma: float, sigma0_sq: float) -> float:
    """T0 = log(1 + (1 - 2 alpha sigma0^2 / gamma)^+) / 2; zero once sigma0^2 >= gamma / (2 alpha)."""
    return 0.5 * math.log1p(max(0.0, 1.0 - 2.0 * alpha * sigma0_sq / gamma))


def alpha_threshold(c_lap: float, lam: float, gamma: float, dim: int) -> float:
    """alpha0 = 2 (C^Lap)^2 / (c1^2 gamma d)."""
    return 2.0 * c_lap ** 2 / (rate_constant_c1(lam, gamma) ** 2 * gamma * dim)


def first_block_time(lam: float, gamma: float) -> float:
    """T1 = log(72) / c1."""
    return math.log(72.0) / rate_constant_c1(lam, gamma)


def earliest_iteration_K0(eta0: float, zeta: float, T1: float) -> float:
    if zeta >= 1:
        return math.inf
    return (2.0 + 2.0 * eta0 / ((1.0 - zeta) * T1)) ** (1.0 / (1.0 - zeta))


def step_size_bounds(k: int, t: float, eta0: float, zeta: float) -> Dict[str, float]:
    """Bounds on t_k and on k_t = min{k : t_k >= t} for eta_k = eta0 / k^zeta."""
    if zeta < 1:
        p = 1.0 - zeta
        return {
            't_lower': eta0 * ((k + 1) ** p - 1.0) / p,
            't_upper': eta0 * k ** p / p,
            'k_lower': (p * t / eta0) ** (1.0 / p),
            'k_upper': (p * t / eta0 + 1.0) ** (1.0 / p),
        }
    # Harmonic schedule
    return {
        't_lower': eta0 * math.log(k + 1.0),
        't_upper': eta0 * (1.0 + math.log(k)) if k >= 1 else 0.0,
        'k_lower': math.exp(t / eta0 - 1.0) if t > 0 else 0.0,
        'k_upper': math.exp(t / eta0),
    }


def _ln(value: float) -> float:
    if value == 0:
        return -math.inf
    return math.log(value)


def _exponent(ln_rate: float, horizon: float) -> float:
    """ln(e^{C T}) = C T for C = e^{ln_rate}; inf when C T itself overflows."""
    if ln_rate + math.log(horizon) > LN_MAX:
        return math.inf
    return math.exp(ln_rate) * horizon


def _lse(*terms: float) -> float:
    finite = [t for t in terms if t != -math.inf]
    if not finite:
        return -math.inf
    if any(t == math.inf for t in finite):
        return math.inf
    return float(logsumexp(finite))


def _log_envelope(spec: ObjectiveSpec, alpha: float, chain_rule: bool) -> Tuple[float, float]:
    """ln L0 and ln L1 from the radial upper envelope ||x|| <= ||x*|| + r."""
    gauss = 0.5 * spec.kappa * alpha
    r_max = max(10.0, (1600.0 / gauss) ** (1.0 / spec.beta))
    r = np.concatenate([[0.0], np.logspace(-8.0, math.log10(r_max), 20000)])
    rho = float(np.linalg.norm(spec.x_star)) + r
    scale = spec.lip_L * (alpha if chain_rule else 1.0)
    base = -alpha * spec.f_star - gauss * r ** spec.beta
    ln_l1 = base + math.log(scale) + np.log1p(rho ** spec.growth_a)
    ln_l0 = base + np.log1p(scale * rho + scale * rho ** (spec.growth_a + 1.0))
    return float(np.max(ln_l0)), float(np.max(ln_l1))


def lipschitz_bounds(spec: ObjectiveSpec, alpha: float, chain_rule: bool = False) -> Tuple[float, float]:
    """(L0_alpha, L1_alpha) for h0(x) = x e^{-alpha f(x)} and h1(x) = e^{-alpha f(x)}.

    L1 = e^{-alpha f*} sup_x e^{-(kappa alpha / 2)||x - x*||^beta} L (1 + ||x||^a) and
    L0 likewise with (1 + L||x|| + L||x||^{a+1}). The supremum runs over
    r = ||x - x*|| on a log-spaced grid with ||x|| replaced by its upper bound
    ||x*|| + r. chain_rule=True multiplies L by alpha, the factor that
    differentiating e^{-alpha f} contributes when alpha > 1.
    """
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    ln_l0, ln_l1 = _log_envelope(spec, alpha, chain_rule)
    return math.exp(ln_l0), math.exp(ln_l1)


def sup_over_ball(spec: ObjectiveSpec, radius: float, seed: int = 0) -> Tuple[float, str]:
    """sup of f over B(0, radius) with the search method used."""
    dim = spec.dim
    if not math.isfinite(radius):
        return math.inf, "unbounded ball"
    if dim == 1:
        grid = np.linspace(-radius, radius, 20001)[:, None]
        return float(np.max(evaluate_batch(spec, grid))), "dense grid, 20001 points"
    if dim == 2:
        axis = np.linspace(-radius, radius, 401)
        xx, yy = np.meshgrid(axis, axis)
        points = np.column_stack([xx.ravel(), yy.ravel()])
        points = points[np.linalg.norm(points, axis=1) <= radius]
        angles = np.linspace(0.0, 2.0 * math.pi, 4096, endpoint=False)
        rim = radius * np.column_stack([np.cos(angles), np.sin(angles)])
        value = float(np.max(evaluate_batch(spec, np.vstack([points, rim]))))
        return value, "dense grid, 401x401 disk plus 4096 boundary points"
    rng = np.random.default_rng(seed)
    interior = sample_ball(np.zeros(dim), radius, 100_000, rng)
    sphere = rng.standard_normal((10_000, dim))
    sphere *= radius / np.linalg.norm(sphere, axis=1, keepdims=True)
    value = float(np.max(evaluate_batch(spec, np.vstack([interior, sphere]))))
    return value, f"random search, 100000 interior + 10000 boundary points, seed {seed}"


@dataclass
class ConstantsReport:
    """Every constant of the bound tables, with natural-log values for the huge ones.

    Constants are read as attributes (report.C4) or items (report['C4']).
    """
    values: Dict[str, float]
    log10: Dict[str, float]
    notes: Dict[str, str]
    inputs_echo: Dict
    overflow: Set[str] = field(default_factory=set)

    def __getattr__(self, name):
        values = self.__dict__.get('values', {})
        if name in values:
            return values[name]
        raise AttributeError(name)

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def to_dict(self) -> Dict:
        def render(value):
            if isinstance(value, float) and not math.isfinite(value):
                return repr(value)
            return value

        return {
            'constants': {
                name: {
                    'value': render(self.values[name]),
                    'log10': render(self.log10[name]),
                    'note': self.notes.get(name, ''),
                    'overflow': name in self.overflow,
                }
                for name in self.values
            },
            'inputs': self.inputs_echo,
        }

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as handle:
            json.dump(self.to_dict(), handle, indent=2, sort_keys=True)
            handle.write("\n")
        return path


class _Ledger:
    """Collects constants as natural logs together with provenance notes."""

    def __init__(self):
        self.ln: Dict[str, float] = {}
        self.notes: Dict[str, str] = {}
        self.direct: Dict[str, float] = {}

    def put(self, name: str, ln_value: float, note: str = "") -> float:
        self.ln[name] = ln_value
        if note:
            self.notes[name] = note
        return ln_value

    def put_value(self, name: str, value: float, note: str = "") -> float:
        """Record a constant that fits in a double; its value is reported as computed."""
        self.put(name, _ln(value) if value >= 0 else math.nan, note)
        self.direct[name] = value
        return value

    def report(self, inputs: Dict) -> ConstantsReport:
        values = self.direct
        out, log10, overflow = {}, {}, set()
        for name in REPORT_ORDER:
            ln_value = self.ln[name]
            if name in values:
                value = values[name]
            elif math.isnan(ln_value):
                value = math.nan
            elif ln_value > LN_MAX:
                value = math.inf
            else:
                value = math.exp(ln_value)
            if ln_value > LN_MAX:
                overflow.add(name)
                if ln_value == math.inf:
                    self.notes[name] = (self.notes.get(name, "") + "; beyond double range even in log scale").lstrip("; ")
            out[name] = value
            log10[name] = ln_value / LN10 if not math.isnan(ln_value) else math.nan
        return ConstantsReport(values=out, log10=log10, notes=dict(self.notes), inputs_echo=inputs, overflow=overflow)


def table_constants(spec: ObjectiveSpec, cfg, c_lap: float, seed: int = 0) -> ConstantsReport:
    """Evaluate every constant of the main, time and intermediate bound tables.

    cfg is a dynamics.CboConfig. Exponentially large constants are carried as
    natural logs; values above the double range are reported as inf with their
    log10 kept finite where possible.
    """
    for name in ('lam', 'delta', 'kappa', 'beta', 'lip_L', 'growth_a'):
        value = getattr(spec, name, None)
        if value is None or not value > 0:
            raise MissingConstantError(name)
    if not c_lap > 0:
        raise ValueError("c_lap must be > 0")

    alpha, gamma, d = cfg.alpha, cfg.gamma, cfg.dim
    eta0, zeta, sigma0_sq, R = cfg.eta0, cfg.zeta, cfg.sigma0_sq, cfg.clip_radius
    m0 = cfg.mean0
    x_star = spec.x_star
    ledger = _Ledger()
    c1 = rate_constant_c1(spec.lam, gamma)
    ledger.put_value('c1', c1, "1/(1 + 2/(lam gamma))")
    C0 = plateau_constant_C0(gamma, d)
    ledger.put_value('C0', C0, "6 gamma d")
    T0 = time_shift_T0(alpha, gamma, sigma0_sq)
    ledger.put_value('T0_alpha', T0, "log(1 + (1 - 2 alpha sigma0^2/gamma)^+)/2")
    alpha0 = alpha_threshold(c_lap, spec.lam, gamma, d)
    ledger.put_value('alpha0', alpha0, "2 (C^Lap)^2/(c1^2 gamma d), C^Lap supplied")
    if alpha <= alpha0:
        logger.warning("alpha=%g does not exceed alpha0=%g", alpha, alpha0)

    ex0 = float(m0 @ m0) + d * sigma0_sq
    ledger.put_value('E_X0_sq', ex0, "||m0||^2 + d sigma0^2")
    reach = R + math.sqrt(2.0 * d * gamma / alpha0)
    C4 = math.sqrt(max(ex0, reach ** 2 + eta0 * (2.0 * d * gamma / alpha0 + 2.0 * eta0 * reach)))
    ledger.put_value('C4', C4, "sqrt(E||X0||^2 v ((R + sqrt(2 d gamma/alpha0))^2 + eta0 (...)))")
    ln_C4 = _ln(C4)

    denom = spec.kappa * spec.delta ** (spec.beta - 1.0)
    ledger.put_value('gamma0', 8.0 * max(R, float(np.linalg.norm(m0 - x_star))) / denom,
                     "8 (R v ||E X0 - x*||)/(kappa delta^(beta-1))")
    ledger.put_value('gamma_tilde0', 8.0 * (R + C4) / denom, "8 (R + C4)/(kappa delta^(beta-1))")

    T1 = first_block_time(spec.lam, gamma)
    ledger.put_value('T1_int', T1, "log(72)/c1")
    if zeta < 1:
        q = eta0 / ((1.0 - zeta) * T1)
        ledger.put_value('c2', 2.0 ** q - 1.0, "2^(eta0/((1-zeta) T1)) - 1")
        ledger.put_value('K0', earliest_iteration_K0(eta0, zeta, T1), "(2 + 2 eta0/((1-zeta) T1))^(1/(1-zeta))")
    else:
        q = math.inf
        ledger.put('c2', math.inf, "undefined for zeta = 1")
        ledger.put('K0', math.inf, "undefined for zeta = 1")

    sup_f, method = sup_over_ball(spec, 2.0 * C4, seed)
    ledger.put_value('sup_f_ball', sup_f, f"sup of f over B(0, 2 C4): {method}")
    ln_C8 = ledger.put('C8_int', math.log(0.75) - alpha * sup_f, "(3/4) exp(-alpha sup_{B(0,2C4)} f)")
    ln_L0, ln_L1 = _log_envelope(spec, alpha, chain_rule=False)
    ledger.put('L0_alpha', ln_L0, "radial envelope on a log-spaced grid, ||x|| <= ||x*|| + r")
    ledger.put('L1_alpha', ln_L1, "radial envelope on a log-spaced grid, ||x|| <= ||x*|| + r")

    ln_R = _ln(R)
    ln_C2 = ledger.put('C2_int', _lse(
        math.log(16.0) - 2.0 * ln_C8 + _lse(_ln(2.0 * R * R + C4 * C4), 2.0 * (ln_C4 - ln_C8)),
        math.log(8.0) + 2.0 * ln_R + _lse(0.0, math.log(12.0) - 2.0 * ln_C8),
    ), "16/C8^2 (2R^2 + C4^2 + (C4/C8)^2) + 8R^2 (1 + 12/C8^2)")
    inner3 = _lse(ln_L0, math.log(4.0) + ln_C4 - ln_C8 + ln_L1) - ln_C8
    ln_C3 = ledger.put('C3_int', _lse(
        math.log(2.0) + 2.0 * inner3,
        math.log(16.0) + 2.0 * ln_R + 2.0 * ln_L1 - 2.0 * ln_C8,
    ), "2((L0 + 4(C4/C8) L1)/C8)^2 + 16 R^2 L1^2/C8^2")
    C4_int = 5.0 * (2.0 * eta0 * (R * R + C4 * C4) + 2.0 * d * gamma / alpha0)
    ln_C4int = ledger.put('C4_int', _ln(C4_int), "5(2 eta0 (R^2 + C4^2) + 2 d gamma/alpha0)")
    inner5 = _lse(ln_L0, math.log(4.0) + ln_L1 + ln_C4 - ln_C8) - (ln_C8 - math.log(2.0))
    ln_C5 = ledger.put('C5_int', _lse(
        math.log(5.0) + 2.0 * inner5,
        math.log(240.0) + 2.0 * ln_L1 + 2.0 * ln_R - 2.0 * ln_C8,
    ), "5((L0 + 4 L1 C4/C8)/(C8/2))^2 + 240 L1^2 R^2/C8^2")

    growth3 = _exponent(ln_C3, T1)  # ln e^{C3 T1}
    growth5 = _exponent(ln_C5, T1)  # ln e^{C5 T1}
    ln_C6 = ledger.put('C6_int_at_T', _lse(
        2.0 * ln_R + ln_C2 + growth3 + _lse(math.log(400.0) + 2.0 * (ln_L1 - ln_C8),
                                           math.log(20.0) + 2.0 * (ln_L1 - ln_C4)),
        math.log(800.0) + 2.0 * ln_R - 2.0 * ln_C8,
        math.log(40.0) + 2.0 * ln_R,
    ), "at T = T1: R^2 C2 e^{C3 T}(400(L1/C8)^2 + 20(L1/C4)^2) + 800R^2/C8^2 + 40R^2")
    ln_C7 = ledger.put('C7_int', growth5 + ln_C4int, "e^{C5 T1} C4_int")
    ledger.put('C18_int', growth5 + ln_C4int, "in-argument constant e^{C5 T1} C4_int; equals C7_int")
    ledger.put('C19_int', math.nan, "not computable: requires the supremum of a trajectory-dependent quantity")

    if zeta < 1:
        p = zeta / (1.0 - zeta)
        span = T1 * (1.0 - zeta)
        C9 = 1.0 / min(span ** p, span, (1.0 + span) ** p - 1.0)
        ln_C9 = ledger.put('C9_int', _ln(C9), "1/min((T1(1-zeta))^p, T1(1-zeta), (1 + T1(1-zeta))^p - 1), p = zeta/(1-zeta)")
        ln_horizon = _lse(math.log(2.0), p * math.log(2.0) + _lse(math.log(span / eta0) / (1.0 - zeta), 0.0))
        ledger.put('C10_int_at_T1', ln_C4int + growth5 + zeta * ln_horizon,
                   "C4_int e^{C5 T}(2 + 2^p(((1-zeta)T/eta0)^(1/(1-zeta)) + 1))^zeta at T = T1")
        series, term, ell = 0.0, 1.0, 0
        while term > 1e-17 * series or ell < 4:
            term = 2.0 ** (-ell) * (ell + 1.0) ** p
            series += term
            ell += 1
        ln_C3a = ledger.put('C3_alpha', ln_C7 + math.log(eta0) + ln_C9
                            - p * math.log(eta0 / (2.0 * (1.0 - zeta) * T1)) + math.log(series),
                            "C7 eta0 C9 (eta0/(2(1-zeta)T1))^(-p) sum_l 2^(-l)(l+1)^p")
    else:
        for name in ('C9_int', 'C10_int_at_T1', 'C3_alpha'):
            ledger.put(name, math.inf, "undefined for zeta = 1")

    ledger.put('C11_int', _lse(growth3 + ln_C2, growth5 + ln_C6), "e^{C3 T1} C2 + e^{C5 T1} C6(T1)")
    ledger.put('C1_int_at_T1', _lse(math.log(2.0) + ln_C6 + growth5, math.log(2.0) + growth3 + ln_C2),
               "2 C6(T) e^{C5 T} + 2 e^{C3 T} C2 at T = T1")
    base1 = 3.0 * (C4 * C4 + C0 / alpha0 + gamma * d / alpha0)
    ledger.put('C1_alpha', (q + 1.0) * math.log(2.0) + _lse(_ln(base1), ln_C7 + math.log(eta0)),
               "2^(eta0/((1-zeta)T1) + 1)(3(C4^2 + C0/alpha0 + gamma d/alpha0) + C7 eta0)")
    ledger.put('C2_alpha', _lse(math.log(6.0) + growth3 + ln_C2, math.log(6.0) + growth5 + ln_C6),
               "6 e^{C3 T1} C2 + 6 e^{C5 T1} C6(T1)")
    ledger.put('c3_alpha', -math.log(2.0) - _lse(ln_C3, ln_C5, 0.0), "1/(2(C3 + C5 + 1))")
    T2_arg = math.log(alpha) + math.log(4.0) + 2.0 * ln_C4 + _lse(math.log(0.5), math.log(2.0) + growth5) - math.log(C0)
    T2 = max(0.5 * math.log(2.0), 0.5 * T2_arg)
    ledger.put_value('T2_int_alpha', T2, "max(log(2)/2, log(alpha 4 C4^2 (1/2 + 2 e^{C5 T1})/C0)/2)")

    inputs = {
        'alpha': alpha, 'gamma': gamma, 'dim': d, 'eta0': eta0, 'zeta': zeta, 'sigma0_sq': sigma0_sq,
        'clip_radius': R, 'm0': m0.tolist(), 'c_lap': c_lap, 'seed': seed, 'objective': spec.to_dict(),
    }
    report = ledger.report(inputs)
    logger.debug("Constants computed; %d beyond double range", len(report.overflow))
    return report
