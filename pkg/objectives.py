import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

# Quartic coefficient of the quartic_quad builtin
QUARTIC_EPS = 0.1

# Radius at or above which delta means "strongly convex everywhere"
UNBOUNDED_DELTA = 1e6


@dataclass(frozen=True, eq=False)
class ObjectiveSpec:
    """An objective f together with the constants of its growth and convexity assumptions.

    func maps an n x d matrix of points to the n-vector of values. The declared
    constants are:
        lam, delta: f is lam-strongly convex on the ball B(x_star, delta)
        kappa, beta: f(x) >= f_star + (kappa/2)||x - x_star||^beta
        lip_L, growth_a: ||grad f(x)|| <= lip_L (1 + ||x||^growth_a)
    """
    name: str
    dim: int
    func: Callable[[np.ndarray], np.ndarray]
    x_star: np.ndarray
    f_star: float = 0.0
    lam: float = 1.0
    delta: float = UNBOUNDED_DELTA
    kappa: float = 1.0
    beta: float = 2.0
    lip_L: float = 1.0
    growth_a: float = 1.0
    satisfies_growth: bool = True
    description: str = field(default="", compare=False)

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError("dim must be >= 1")
        x_star = np.asarray(self.x_star, dtype=float).reshape(-1)
        if x_star.shape[0] != self.dim:
            raise ValueError(f"x_star has {x_star.shape[0]} entries, expected {self.dim}")
        if not np.all(np.isfinite(x_star)):
            raise ValueError("x_star must be finite")
        x_star.setflags(write=False)
        object.__setattr__(self, "x_star", x_star)
        for name in ("lam", "delta", "kappa", "lip_L", "growth_a"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.beta < 1:
            raise ValueError("beta must be >= 1")

    def eval(self, x: Sequence[float]) -> float:
        """Value of f at a single point."""
        point = np.asarray(x, dtype=float).reshape(1, self.dim)
        return float(self.func(point)[0])

    @property
    def delta_is_unbounded(self) -> bool:
        return self.delta >= UNBOUNDED_DELTA

    def to_dict(self) -> Dict:
        return {
            'name': self.name,
            'dim': self.dim,
            'x_star': self.x_star.tolist(),
            'f_star': self.f_star,
            'lam': self.lam,
            'delta': self.delta,
            'kappa': self.kappa,
            'beta': self.beta,
            'lip_L': self.lip_L,
            'growth_a': self.growth_a,
            'satisfies_growth': self.satisfies_growth,
        }


def _quadratic(x_star: np.ndarray, lam: float) -> Callable[[np.ndarray], np.ndarray]:
    def func(points: np.ndarray) -> np.ndarray:
        u = points - x_star
        return 0.5 * lam * np.sum(u * u, axis=1)
    return func


def _quartic_quad(x_star: np.ndarray, lam: float) -> Callable[[np.ndarray], np.ndarray]:
    def func(points: np.ndarray) -> np.ndarray:
        u = points - x_star
        u2 = u * u
        return 0.5 * lam * np.sum(u2, axis=1) + QUARTIC_EPS * np.sum(u2 * u2, axis=1)
    return func


def _rastrigin(x_star: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    def func(points: np.ndarray) -> np.ndarray:
        u = points - x_star
        # 10d - 10 sum cos(.) written per coordinate so f(x_star) is exactly 0
        return np.sum(u * u, axis=1) + 10.0 * np.sum(1.0 - np.cos(2.0 * np.pi * u), axis=1)
    return func


def _ackley(x_star: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    def func(points: np.ndarray) -> np.ndarray:
        u = points - x_star
        radial = np.sqrt(np.mean(u * u, axis=1))
        wave = np.mean(np.cos(2.0 * np.pi * u), axis=1)
        return (20.0 - 20.0 * np.exp(-0.2 * radial)) + (math.e - np.exp(wave))
    return func


# Declared assumption constants per builtin. Entries that depend on the
# dimension d or on s = ||shift|| are callables.
BUILTIN_OBJECTIVES = {
    'quadratic': {
        'delta': UNBOUNDED_DELTA,       # strongly convex everywhere
        'kappa': lambda lam, d, s: lam,  # growth holds with equality
        'beta': 2.0,
        'lip_L': lambda lam, d, s: lam * max(1.0, s),
        'growth_a': 1.0,
        'satisfies_growth': True,
        'description': '(lam/2)||x - x*||^2',
    },
    'quartic_quad': {
        'delta': UNBOUNDED_DELTA,       # Hessian >= lam everywhere
        'kappa': lambda lam, d, s: lam,
        'beta': 2.0,
        # lam||u|| + 4 eps ||u||^3 <= (lam + 4 eps)(1 + ||u||^3), ||u||^3 <= 4(||x||^3 + s^3)
        'lip_L': lambda lam, d, s: 4.0 * (lam + 4.0 * QUARTIC_EPS) * (1.0 + s ** 3),
        'growth_a': 3.0,
        'satisfies_growth': True,
        'description': '(lam/2)||x - x*||^2 + 0.1 sum (x_i - x*_i)^4',
    },
    'rastrigin': {
        'lam': 2.0,                     # Hessian >= 2 while |u_i| <= 1/4
        'delta': 0.05,
        'kappa': lambda lam, d, s: 2.0,
        'beta': 2.0,
        'lip_L': lambda lam, d, s: max(2.0, 2.0 * s + 20.0 * math.pi * math.sqrt(d)),
        'growth_a': 1.0,
        'satisfies_growth': True,
        'description': '||x - x*||^2 + 10d - 10 sum cos(2 pi (x_i - x*_i))',
    },
    'ackley': {
        'lam': 1.0,
        'delta': 0.01,
        'kappa': lambda lam, d, s: 0.1,  # violated far from x*: Ackley stays below 22.35
        'beta': 2.0,
        'lip_L': lambda lam, d, s: 25.0,  # 4 + 2 pi e bounds the gradient
        'growth_a': 1.0,
        'satisfies_growth': False,
        'description': 'shifted Ackley (stress objective)',
    },
}


def builtin(name: str, dim: int, shift: Optional[Sequence[float]] = None, lam: float = 1.0) -> ObjectiveSpec:
    """Build one of the builtin objectives with minimizer x* = shift.

    Args:
        name: One of quadratic, quartic_quad, rastrigin, ackley
        dim: Dimension d
        shift: Minimizer (zeros when omitted)
        lam: Curvature of the quadratic part for quadratic and quartic_quad

    Returns:
        ObjectiveSpec with the declared constants of BUILTIN_OBJECTIVES
    """
    if name not in BUILTIN_OBJECTIVES:
        raise ValueError(f"Unknown objective '{name}'. Choose from {sorted(BUILTIN_OBJECTIVES)}")
    dim = int(dim)
    if dim < 1:
        raise ValueError("dim must be >= 1")
    x_star = np.zeros(dim) if shift is None else np.asarray(shift, dtype=float).reshape(-1)
    if x_star.shape[0] != dim:
        raise ValueError(f"shift has {x_star.shape[0]} entries but dim is {dim}")
    if not np.all(np.isfinite(x_star)):
        raise ValueError("shift must be finite")

    table = BUILTIN_OBJECTIVES[name]
    lam = float(table.get('lam', lam))
    s = float(np.linalg.norm(x_star))

    def resolve(key):
        value = table[key]
        return float(value(lam, dim, s)) if callable(value) else value

    if name == 'quadratic':
        func = _quadratic(x_star.copy(), lam)
    elif name == 'quartic_quad':
        func = _quartic_quad(x_star.copy(), lam)
    elif name == 'rastrigin':
        func = _rastrigin(x_star.copy())
    else:
        func = _ackley(x_star.copy())

    return ObjectiveSpec(
        name=name,
        dim=dim,
        func=func,
        x_star=x_star,
        f_star=0.0,
        lam=lam,
        delta=resolve('delta'),
        kappa=resolve('kappa'),
        beta=resolve('beta'),
        lip_L=resolve('lip_L'),
        growth_a=resolve('growth_a'),
        satisfies_growth=table['satisfies_growth'],
        description=table['description'],
    )


def evaluate_batch(spec: ObjectiveSpec, positions) -> np.ndarray:
    """Evaluate f on every row of an n x d matrix, preserving row order."""
    points = np.asarray(positions, dtype=float)
    if points.size == 0:
        return np.empty(0)
    if points.ndim != 2:
        raise ValueError(f"positions must be a 2-D matrix, got shape {points.shape}")
    if points.shape[1] != spec.dim:
        raise ValueError(f"positions has {points.shape[1]} columns, expected {spec.dim}")
    if not np.all(np.isfinite(points)):
        raise ValueError("positions contain non-finite entries")
    return np.asarray(spec.func(points), dtype=float).reshape(points.shape[0])


def sample_ball(center: np.ndarray, radius: float, samples: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples from the closed ball B(center, radius)."""
    dim = center.shape[0]
    directions = rng.standard_normal((samples, dim))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    radii = radius * rng.random((samples, 1)) ** (1.0 / dim)
    return center + directions / norms * radii


def finite_difference_gradient(spec: ObjectiveSpec, x, h: Optional[float] = None) -> np.ndarray:
    """Central-difference gradient with step h = 1e-5 (1 + ||x||)."""
    point = np.asarray(x, dtype=float).reshape(spec.dim)
    if h is None:
        h = 1e-5 * (1.0 + float(np.linalg.norm(point)))
    offsets = h * np.eye(spec.dim)
    values = evaluate_batch(spec, np.vstack([point + offsets, point - offsets]))
    return (values[:spec.dim] - values[spec.dim:]) / (2.0 * h)


def check_growth(spec: ObjectiveSpec, radius: float, samples: int, seed: int = 0) -> Dict:
    """Probe f(x) - f* >= (kappa/2)||x - x*||^beta on uniform samples of B(x*, radius).

    The margin is compared against -1e-12 (1 + |f(x) - f*|) so that rounding
    of large values does not count as a violation.
    """
    if not radius > 0:
        raise ValueError("radius must be > 0")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    points = sample_ball(spec.x_star, radius, samples, rng)
    excess = evaluate_batch(spec, points) - spec.f_star
    distances = np.linalg.norm(points - spec.x_star, axis=1)
    margins = excess - 0.5 * spec.kappa * distances ** spec.beta
    worst = int(np.argmin(margins))
    passed = bool(np.all(margins >= -1e-12 * (1.0 + np.abs(excess))))
    if not passed:
        logger.debug("Growth violated for %s at radius %g: margin %.3e", spec.name, radius, margins[worst])
    return {
        'pass': passed,
        'worst_violation': float(margins[worst]),
        'worst_point': points[worst].copy(),
    }


def check_strong_convexity(spec: ObjectiveSpec, samples: int = 500, seed: int = 0) -> Dict:
    """Probe f(y) >= f(x) + <g(x), y - x> + (lam/2)||y - x||^2 for pairs in B(x*, delta).

    The sentinel radius of globally convex objectives is replaced by 10.
    """
    radius = min(spec.delta, 10.0)
    rng = np.random.default_rng(seed)
    xs = sample_ball(spec.x_star, radius, samples, rng)
    ys = sample_ball(spec.x_star, radius, samples, rng)
    fx = evaluate_batch(spec, xs)
    fy = evaluate_batch(spec, ys)
    margins = np.empty(samples)
    for i in range(samples):
        step = ys[i] - xs[i]
        grad = finite_difference_gradient(spec, xs[i])
        margins[i] = fy[i] - fx[i] - grad @ step - 0.5 * spec.lam * (step @ step)
    tolerance = 1e-6 * (1.0 + np.abs(fx) + np.abs(fy))
    worst = int(np.argmin(margins))
    return {
        'pass': bool(np.all(margins >= -tolerance)),
        'worst_violation': float(margins[worst]),
        'worst_pair': (xs[worst].copy(), ys[worst].copy()),
    }


def check_gradient_growth(spec: ObjectiveSpec, samples: int = 1000, seed: int = 0, radius: float = 10.0) -> Dict:
    """Probe ||g_fd(x)|| <= L (1 + ||x||^a)(1 + 1e-3) on samples of B(x*, radius)."""
    rng = np.random.default_rng(seed)
    points = sample_ball(spec.x_star, radius, samples, rng)
    ratios = np.empty(samples)
    for i, point in enumerate(points):
        bound = spec.lip_L * (1.0 + np.linalg.norm(point) ** spec.growth_a)
        ratios[i] = np.linalg.norm(finite_difference_gradient(spec, point)) / bound
    worst = int(np.argmax(ratios))
    return {
        'pass': bool(np.all(ratios <= 1.0 + 1e-3)),
        'worst_ratio': float(ratios[worst]),
        'worst_point': points[worst].copy(),
    }
