import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from consensus import WeightVector

logger = logging.getLogger(__name__)

# Exact assignment is O(n^3); larger comparisons must subsample
W2_MAX_POINTS = 512


class BlockFitError(ValueError):
    def __init__(self, n_blocks: int):
        super().__init__(f"block contraction fit needs at least 4 block boundaries, record covers {n_blocks}")
        self.n_blocks = n_blocks


@dataclass
class FitResult:
    slope: float
    intercept: float
    r_squared: float
    n_points: int

    def to_dict(self) -> Dict:
        return asdict(self)


def mse_to_minimizer(positions, x_star) -> float:
    """(1/n) sum_i ||X^i - x*||^2."""
    positions = np.asarray(positions, dtype=float)
    x_star = np.asarray(x_star, dtype=float).reshape(-1)
    if positions.ndim != 2 or positions.shape[0] == 0:
        raise ValueError("positions must be a non-empty n x d matrix")
    if positions.shape[1] != x_star.shape[0]:
        raise ValueError(f"positions have {positions.shape[1]} columns, x_star has {x_star.shape[0]} entries")
    offsets = positions - x_star
    return float(np.mean(np.sum(offsets * offsets, axis=1)))


def w2_exact(A, B) -> float:
    """Wasserstein-2 distance between two equal-size empirical measures by exact assignment."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or B.ndim != 2 or A.shape != B.shape:
        raise ValueError(f"point sets must have equal shapes, got {A.shape} and {B.shape}")
    n = A.shape[0]
    if n == 0:
        raise ValueError("point sets must not be empty")
    if n > W2_MAX_POINTS:
        raise ValueError(f"exact W2 is limited to {W2_MAX_POINTS} points, got {n}; subsample first")
    cost = cdist(A, B, 'sqeuclidean')
    rows, cols = linear_sum_assignment(cost)
    # fsum is correctly rounded, so the value does not depend on the order of the matched pairs
    return math.sqrt(math.fsum(cost[rows, cols]) / n)


def ess(weights: Union[WeightVector, np.ndarray]) -> float:
    """Effective sample size (sum w)^2 / sum w^2."""
    w = weights.weights if isinstance(weights, WeightVector) else np.asarray(weights, dtype=float)
    total = float(np.sum(w))
    return total * total / float(np.sum(w * w))


def linear_fit(xs, ys) -> FitResult:
    """Ordinary least squares y = slope x + intercept."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("xs and ys must be 1-D vectors of equal length")
    if xs.shape[0] < 2:
        raise ValueError("a fit needs at least 2 points")
    result = stats.linregress(xs, ys)
    residual = ys - (result.slope * xs + result.intercept)
    total = float(np.sum((ys - ys.mean()) ** 2))
    r_squared = 1.0 if total == 0 else 1.0 - float(np.sum(residual * residual)) / total
    return FitResult(
        slope=float(result.slope),
        intercept=float(result.intercept),
        r_squared=min(1.0, max(0.0, r_squared)),
        n_points=int(xs.shape[0]),
    )


def loglog_slope(xs, ys) -> FitResult:
    """Least-squares line through (log x, log y)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if np.any(xs <= 0) or np.any(ys <= 0) or not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ValueError("log-log fit needs finite positive data")
    return linear_fit(np.log(xs), np.log(ys))


def block_boundary_values(record, T_block: float) -> pd.DataFrame:
    """MSE at the first recorded row with t >= j T_block, for every block boundary j."""
    if not T_block > 0:
        raise ValueError("T_block must be > 0")
    rows = record.rows if hasattr(record, 'rows') else record
    times = rows['t'].to_numpy()
    mse = rows['mse'].to_numpy()
    found = []
    j = 0
    while j * T_block <= times[-1]:
        index = int(np.searchsorted(times, j * T_block, side='left'))
        found.append({'block': j, 'k': int(rows['k'].iloc[index]) if 'k' in rows else index,
                      't': float(times[index]), 'mse': float(mse[index])})
        j += 1
    return pd.DataFrame(found, columns=['block', 'k', 't', 'mse'])


def block_contraction_fit(record, T_block: float) -> Tuple[float, float]:
    """Fit u_{j+1} = rho u_j + floor on MSE sampled at block boundaries; returns (rho, floor)."""
    boundaries = block_boundary_values(record, T_block)
    if len(boundaries) < 4:
        raise BlockFitError(len(boundaries))
    u = boundaries['mse'].to_numpy()
    fit = linear_fit(u[:-1], u[1:])
    return fit.slope, fit.intercept


def gaussian_proximity(positions, alpha: float, gamma: float, sigma0_sq: float) -> Dict:
    """Variance band [gamma/(2 alpha), max(gamma/alpha, sigma0^2)] (20% slack) and pooled excess kurtosis."""
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 2 or positions.shape[0] < 100:
        raise ValueError("gaussian_proximity needs at least 100 particles")
    lower = 0.8 * gamma / (2.0 * alpha)
    upper = 1.2 * max(gamma / alpha, sigma0_sq)
    variances = positions.var(axis=0, ddof=1)
    in_band = bool(np.all((variances >= lower) & (variances <= upper)))
    if np.any(variances == 0):
        kurtosis = math.nan
    else:
        standardized = (positions - positions.mean(axis=0)) / np.sqrt(variances)
        kurtosis = float(stats.kurtosis(standardized.ravel(), fisher=True))
    return {
        'var_in_band': in_band,
        'excess_kurtosis': kurtosis,
        'variances': variances.tolist(),
        'band': [lower, upper],
    }
