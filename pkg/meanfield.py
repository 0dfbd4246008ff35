import logging
import math
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import integrate
from scipy.integrate import IntegrationWarning

from consensus import clip, consensus_point, softmin_weights
from constants import time_shift_T0
from dynamics import CboConfig, first_index_reaching, init_particles, noise_coefficient, schedule
from noise_streams import StreamDomain, block_counter, gaussian_block
from objectives import ObjectiveSpec, evaluate_batch

logger = logging.getLogger(__name__)

THETA_METHODS = ('auto', 'closed_form', 'mc', 'quadrature')


class ProxConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"prox solver did not converge: residual {residual:.3e} after {iterations} iterations")
        self.residual = residual
        self.iterations = iterations


class ImportanceSamplingError(RuntimeError):
    def __init__(self, ess: float):
        super().__init__(
            f"importance weights degenerate (ESS {ess:.2f} < 10); increase samples or reduce the alpha*var mismatch"
        )
        self.ess = ess


@dataclass
class GaussianFlowState:
    """Mean-field state: the law at time t is N(m_t, (gamma_t / alpha) I)."""
    t: float
    x_t: np.ndarray
    m_t: np.ndarray
    gamma_t: float
    drift_target: np.ndarray  # clip_R(theta_alpha(rho_t))


@dataclass
class ProxResult:
    point: np.ndarray
    iterations: int
    residual: float
    interior_condition: bool


@dataclass
class GapEstimate:
    value: float
    stderr: float


def gamma_t(t: float, alpha: float, gamma: float, sigma0_sq: float) -> float:
    """alpha sigma0^2 e^{-2t} + (1 - e^{-2t}) gamma."""
    if t < 0:
        raise ValueError("t must be >= 0")
    decay = math.exp(-2.0 * t)
    return alpha * sigma0_sq * decay + (1.0 - decay) * gamma


# ---------------------------------------------------------------------------
# Restricted proximal operator

def _fd5_gradient(spec: ObjectiveSpec, y: np.ndarray) -> np.ndarray:
    """Five-point central differences, exact for polynomials up to degree four."""
    h = 1e-4 * (1.0 + float(np.linalg.norm(y)))
    eye = h * np.eye(spec.dim)
    stencil = np.vstack([y + 2.0 * eye, y + eye, y - eye, y - 2.0 * eye])
    v = evaluate_batch(spec, stencil).reshape(4, spec.dim)
    return (-v[0] + 8.0 * v[1] - 8.0 * v[2] + v[3]) / (12.0 * h)


def prox_report(spec: ObjectiveSpec, gamma_eff: float, x, tol: float = 1e-10, max_iter: int = 10_000) -> ProxResult:
    """argmin over B(x*, delta) of f(y) + ||y - x||^2 / (2 gamma_eff).

    Projected gradient descent on finite-difference gradients. A step of length s
    is accepted when s times the local curvature ||g(y') - g(y)|| / ||y' - y||
    is at most 1, and the next step starts from the inverse of that curvature.
    Stops when the gradient-mapping norm drops below tol.
    """
    if not gamma_eff > 0:
        raise ValueError("gamma_eff must be > 0")
    x = np.asarray(x, dtype=float).reshape(spec.dim)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    center, radius = spec.x_star, spec.delta

    def project(y):
        offset = y - center
        dist = float(np.linalg.norm(offset))
        return y if dist <= radius else center + offset * (radius / dist)

    def gradient(y):
        return _fd5_gradient(spec, y) + (y - x) / gamma_eff

    interior = gamma_eff > 2.0 * float(np.linalg.norm(x - center)) / (radius ** (spec.beta - 1.0) * spec.kappa)
    y = project(x.copy())
    grad = gradient(y)
    step_len = gamma_eff
    residual = math.inf
    for iteration in range(1, max_iter + 1):
        while True:
            candidate = project(y - step_len * grad)
            distance = float(np.linalg.norm(candidate - y))
            residual = distance / step_len
            if residual <= tol:
                return ProxResult(point=candidate, iterations=iteration, residual=residual,
                                  interior_condition=interior)
            next_grad = gradient(candidate)
            curvature = float(np.linalg.norm(next_grad - grad)) / distance
            if step_len * curvature <= 1.0:
                break
            step_len *= 0.5
            if step_len < 1e-18 * gamma_eff:
                raise ProxConvergenceError(residual, iteration)
        y, grad = candidate, next_grad
        # the prox term alone has curvature 1/gamma_eff
        step_len = 1.0 / max(curvature, 1.0 / gamma_eff)
    raise ProxConvergenceError(residual, max_iter)


def prox(spec: ObjectiveSpec, gamma_eff: float, x) -> np.ndarray:
    """Proximal point of f restricted to B(x*, delta)."""
    return prox_report(spec, gamma_eff, x).point


def prox_quadratic(spec: ObjectiveSpec, gamma_eff: float, x) -> np.ndarray:
    """Closed-form prox of (lam/2)||y - x*||^2: x* + (x - x*) / (1 + gamma_eff lam)."""
    x = np.asarray(x, dtype=float)
    return spec.x_star + (x - spec.x_star) / (1.0 + gamma_eff * spec.lam)


# ---------------------------------------------------------------------------
# Consensus point of a Gaussian law

def _theta_closed_form(spec: ObjectiveSpec, m: np.ndarray, var: float, alpha: float) -> np.ndarray:
    # (m/var + alpha lam x*) / (1/var + alpha lam), multiplied through by var
    scale = var * alpha * spec.lam
    return (m + scale * spec.x_star) / (1.0 + scale)


def _theta_monte_carlo(spec, m, var, alpha, samples, seed) -> Tuple[np.ndarray, float]:
    if samples < 100:
        raise ValueError("samples must be >= 100")
    points = m + math.sqrt(var) * gaussian_block(seed, StreamDomain.THETA_MC, 0, (samples, spec.dim))
    weights = softmin_weights(evaluate_batch(spec, points), alpha).weights
    effective = 1.0 / float(np.sum(weights * weights))
    if effective < 10:
        raise ImportanceSamplingError(effective)
    estimate = consensus_point(points, weights)
    spread = points - estimate
    stderr = math.sqrt(float(np.sum((weights * weights)[:, None] * spread * spread)))
    return estimate, stderr


def _theta_quadrature(spec, m, var, alpha) -> Tuple[np.ndarray, float]:
    """Tilted mean of N(m, var) in one dimension by adaptive quadrature."""
    if spec.dim != 1:
        raise ValueError("quadrature is only available for one-dimensional objectives")
    center = float(m[0])
    spread = math.sqrt(var)
    # The tilted mode lies between m and x* for convex f; pad by 12 standard deviations
    lo = min(center, float(spec.x_star[0])) - 12.0 * spread
    hi = max(center, float(spec.x_star[0])) + 12.0 * spread

    grid = np.linspace(lo, hi, 20001)
    exponent = alpha * evaluate_batch(spec, grid[:, None]) + (grid - center) ** 2 / (2.0 * var)
    peak = int(np.argmin(exponent))
    y0, shift = float(grid[peak]), float(exponent[peak])

    def density(y):
        return math.exp(-(alpha * spec.eval([y]) + (y - center) ** 2 / (2.0 * var) - shift))

    breaks = [y0] if lo < y0 < hi else None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        mass, mass_err = integrate.quad(density, lo, hi, points=breaks, limit=400, epsabs=0.0, epsrel=1e-13)
        moment, moment_err = integrate.quad(
            lambda y: (y - y0) * density(y), lo, hi, points=breaks, limit=400,
            epsabs=1e-13 * mass * spread, epsrel=1e-13
        )
    offset = moment / mass
    stderr = (abs(moment_err) + abs(offset) * abs(mass_err)) / mass
    return np.array([y0 + offset]), stderr


def theta_gaussian(spec: ObjectiveSpec, m, var: float, alpha: float, samples: int = 4096, seed: int = 0,
                   method: str = 'auto') -> Tuple[np.ndarray, float]:
    """Consensus point of N(m, var I) and its standard error.

    method: 'closed_form' (quadratic builtin only), 'mc' (self-normalized importance
    sampling with the Gaussian as proposal), 'quadrature' (d = 1) or 'auto', which
    picks the closed form for the quadratic, quadrature for d = 1 and Monte Carlo
    otherwise.
    """
    if method not in THETA_METHODS:
        raise ValueError(f"method must be one of {THETA_METHODS}")
    m = np.asarray(m, dtype=float).reshape(spec.dim)
    if var < 0:
        raise ValueError("var must be >= 0")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if var == 0 or alpha == 0:
        # a point mass or a flat tilt leaves the mean unchanged
        return m.copy(), 0.0
    if method == 'auto':
        if spec.name == 'quadratic':
            method = 'closed_form'
        elif spec.dim == 1:
            method = 'quadrature'
        else:
            method = 'mc'
    if method == 'closed_form':
        if spec.name != 'quadratic':
            raise ValueError("closed form is only available for the quadratic objective")
        return _theta_closed_form(spec, m, var, alpha), 0.0
    if method == 'quadrature':
        return _theta_quadrature(spec, m, var, alpha)
    return _theta_monte_carlo(spec, m, var, alpha, samples, seed)


# ---------------------------------------------------------------------------
# Gaussian mean-field flow

def integrate_mean_flow(spec: ObjectiveSpec, cfg: CboConfig, T: float, h: float = 0.01, samples: int = 4096,
                        seed: Optional[int] = None, method: str = 'auto') -> List[GaussianFlowState]:
    """RK4 integration of x' = clip_R(theta_alpha(rho_t)) - x, x_0 = 0, rho_t = N(m0 e^{-t} + x_t, gamma_t/alpha I).

    Monte Carlo stages reuse one seed, so the drift is a smooth function of the state.
    """
    if not 0 < h <= 0.1:
        raise ValueError("h must be in (0, 0.1]")
    if T < h:
        raise ValueError("T must be >= h")
    seed = cfg.seed if seed is None else seed
    m0 = cfg.mean0

    def target(t, x):
        mean = m0 * math.exp(-t) + x
        g = gamma_t(t, cfg.alpha, cfg.gamma, cfg.sigma0_sq)
        theta, _ = theta_gaussian(spec, mean, g / cfg.alpha, cfg.alpha, samples, seed, method)
        return mean, g, clip(theta, cfg.clip_radius)

    def drift(t, x):
        return target(t, x)[2] - x

    steps = int(round(T / h))
    x = np.zeros(cfg.dim)
    states = []
    for i in range(steps + 1):
        t = i * h
        mean, g, goal = target(t, x)
        states.append(GaussianFlowState(t=t, x_t=x.copy(), m_t=mean, gamma_t=g, drift_target=goal))
        if i == steps:
            break
        k1 = goal - x
        k2 = drift(t + 0.5 * h, x + 0.5 * h * k1)
        k3 = drift(t + 0.5 * h, x + 0.5 * h * k2)
        k4 = drift(t + h, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return states


def flow_frame(states: Sequence[GaussianFlowState]) -> pd.DataFrame:
    """CSV layout: t, x_t coordinates, m_t coordinates, gamma_t."""
    rows = []
    for state in states:
        row = {'t': state.t}
        row.update({f'x_{j}': float(v) for j, v in enumerate(state.x_t)})
        row.update({f'm_{j}': float(v) for j, v in enumerate(state.m_t)})
        row['gamma_t'] = state.gamma_t
        rows.append(row)
    return pd.DataFrame(rows)


def laplace_gap(spec: ObjectiveSpec, m0, t: float, alpha: float, cfg: CboConfig, samples: int = 4096,
                seed: int = 0, x=None, method: str = 'auto') -> GapEstimate:
    """||theta_alpha(N(m_t, gamma_t/alpha)) - prox_{gamma_t f}(m_t)|| with m_t = (m0 - x*) e^{-t} + x.

    x defaults to m0.
    """
    m0 = np.asarray(m0, dtype=float).reshape(spec.dim)
    threshold = time_shift_T0(alpha, cfg.gamma, cfg.sigma0_sq)
    if t < threshold:
        raise ValueError(f"t={t:g} is below T0={threshold:g}")
    reach = 2.0 * max(cfg.clip_radius, float(np.linalg.norm(m0 - spec.x_star)))
    if not cfg.gamma > 4.0 * reach / (spec.kappa * spec.delta ** (spec.beta - 1.0)):
        logger.warning("gamma=%g does not exceed 4K/(kappa delta^(beta-1)) with K=%g", cfg.gamma, reach)
    g = gamma_t(t, alpha, cfg.gamma, cfg.sigma0_sq)
    base = m0 if x is None else np.asarray(x, dtype=float).reshape(spec.dim)
    mean = (m0 - spec.x_star) * math.exp(-t) + base
    theta, stderr = theta_gaussian(spec, mean, g / alpha, alpha, samples, seed, method)
    gap = float(np.linalg.norm(theta - prox(spec, g, mean)))
    logger.debug("Laplace gap at alpha=%g: %.4e (stderr %.2e)", alpha, gap, stderr)
    return GapEstimate(value=gap, stderr=stderr)


# ---------------------------------------------------------------------------
# Particle simulations against the flow

def simulate_meanfield_particles(spec: ObjectiveSpec, cfg: CboConfig, T: float, h: float = 0.01,
                                 n: Optional[int] = None, scheme: str = 'exact',
                                 record_times: Optional[Sequence[float]] = None,
                                 flow: Optional[List[GaussianFlowState]] = None) -> Dict[float, np.ndarray]:
    """i.i.d. particles driven by the flow's drift target; returns positions at record_times.

    'exact' uses the Ornstein-Uhlenbeck transition with the drift target frozen on
    each step, 'euler' the Euler-Maruyama step.
    """
    if scheme not in ('exact', 'euler'):
        raise ValueError("scheme must be 'exact' or 'euler'")
    if n is not None:
        cfg = cfg.replace(n_particles=int(n))
    flow = flow if flow is not None else integrate_mean_flow(spec, cfg, T, h)
    steps = int(round(T / h))
    wanted = {int(round(t / h)): t for t in (record_times if record_times is not None else [T])}
    if max(wanted) > steps:
        raise ValueError("record_times exceed T")

    positions = init_particles(cfg).positions
    law_var = cfg.gamma / cfg.alpha
    decay = math.exp(-h)
    if scheme == 'exact':
        noise = math.sqrt(law_var * (1.0 - decay * decay))
    else:
        noise = noise_coefficient(cfg, h)
    recorded = {}
    for k in range(steps + 1):
        if k in wanted:
            recorded[wanted[k]] = positions.copy()
        if k == steps:
            break
        goal = flow[k].drift_target
        xi = gaussian_block(cfg.seed, StreamDomain.MEANFIELD, k + 1, positions.shape)
        if scheme == 'exact':
            positions = decay * positions + (1.0 - decay) * goal + noise * xi
        else:
            positions = positions + h * (goal - positions) + noise * xi
    return recorded


def _coupled_gaps(spec: ObjectiveSpec, cfg: CboConfig, times: Sequence[float], h: float,
                  flow: Optional[List[GaussianFlowState]], drift_override: Optional[str],
                  replica: int) -> Dict[float, float]:
    horizon = max(times)
    steps = int(round(horizon / h))
    if flow is None:
        flow = integrate_mean_flow(spec, cfg, horizon, h)
    if len(flow) < steps + 1:
        raise ValueError("flow is shorter than the coupling horizon")
    wanted = {int(round(t / h)): t for t in times}

    finite = init_particles(cfg, replica).positions
    meanfield = finite.copy()
    gaps = {}
    for k in range(steps + 1):
        if k in wanted:
            diff = meanfield - finite
            gaps[wanted[k]] = float(np.mean(np.sum(diff * diff, axis=1)))
        if k == steps:
            break
        goal = flow[k].drift_target
        if drift_override == 'meanfield':
            goal_finite = goal
        else:
            weights = softmin_weights(evaluate_batch(spec, finite), cfg.alpha)
            goal_finite = clip(consensus_point(finite, weights), cfg.clip_radius)
        xi = gaussian_block(cfg.seed, StreamDomain.POC, block_counter(k + 1, replica), finite.shape)
        increment = noise_coefficient(cfg, h) * xi
        finite = finite + h * (goal_finite - finite) + increment
        meanfield = meanfield + h * (goal - meanfield) + increment
    return gaps


def coupled_poc_gap(spec: ObjectiveSpec, cfg: CboConfig, T: float, h: float = 0.01,
                    flow: Optional[List[GaussianFlowState]] = None, drift_override: Optional[str] = None,
                    replica: int = 0) -> float:
    """(1/n) sum_i ||Xbar^i_T - X^i_T||^2 for the finite system and n mean-field particles sharing noise.

    drift_override='meanfield' drives the finite system with the mean-field drift. replica selects
    an independent coupled pair under the same seed.
    """
    if drift_override not in (None, 'meanfield'):
        raise ValueError("drift_override must be None or 'meanfield'")
    return _coupled_gaps(spec, cfg, [T], h, flow, drift_override, replica)[T]


def coupled_poc_gaps(spec: ObjectiveSpec, cfg: CboConfig, times: Sequence[float], h: float = 0.01,
                     flow: Optional[List[GaussianFlowState]] = None, replica: int = 0) -> Dict[float, float]:
    """coupled_poc_gap at several horizons from one coupled simulation."""
    return _coupled_gaps(spec, cfg, list(times), h, flow, None, replica)


def euler_gap(spec: ObjectiveSpec, cfg: CboConfig, T: float) -> float:
    """Mean squared gap at t_{k_T} between the CBO iteration and the same system on the fine grid.

    Each coarse step eta_k is split into ceil(eta_k / h_ref) equal substeps with
    h_ref = eta_{k_T} / 32; coarse Brownian increments are sums of the fine ones.
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    k_final = first_index_reaching(T, cfg.eta0, cfg.zeta)
    if k_final == 0:
        return 0.0
    etas, _ = schedule(k_final, cfg.eta0, cfg.zeta)
    h_ref = etas[k_final] / 32.0
    scale = math.sqrt(2.0 * cfg.gamma / cfg.alpha) if cfg.noise_scale_override is None else cfg.noise_scale_override

    def target(points):
        weights = softmin_weights(evaluate_batch(spec, points), cfg.alpha)
        return clip(consensus_point(points, weights), cfg.clip_radius)

    discrete = init_particles(cfg).positions
    continuous = discrete.copy()
    for k in range(1, k_final + 1):
        eta = float(etas[k])
        substeps = max(1, math.ceil(eta / h_ref - 1e-9))
        h = eta / substeps
        fine = math.sqrt(h) * gaussian_block(cfg.seed, StreamDomain.EULER_FINE, block_counter(k),
                                             (substeps,) + discrete.shape)
        coarse = np.add.reduce(fine, axis=0)
        discrete = (1.0 - eta) * discrete + eta * target(discrete) + scale * coarse
        for j in range(substeps):
            continuous = (1.0 - h) * continuous + h * target(continuous) + scale * fine[j]
    diff = continuous - discrete
    return float(np.mean(np.sum(diff * diff, axis=1)))
