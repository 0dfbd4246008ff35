import logging
import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from objectives import ObjectiveSpec, evaluate_batch

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Normalized consensus weights e^{-a f_i} / sum_j e^{-a f_j}."""
    weights: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if weights.size == 0:
            raise ValueError("weights must not be empty")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and non-negative")
        if not np.any(weights > 0):
            raise ValueError("at least one weight must be positive")
        if abs(math.fsum(weights) - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {math.fsum(weights)!r}, expected 1")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return self.weights.shape[0]

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights * self.weights))


def softmin_weights(values, alpha: float) -> WeightVector:
    """Weights proportional to exp(-alpha * values), stabilized by subtracting min(values)."""
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size == 0:
        raise ValueError("values must not be empty")
    if not np.all(np.isfinite(values)):
        raise ValueError("values must be finite")
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    unnormalized = np.exp(-alpha * (values - values.min()))
    # The minimizing entry contributes exp(0) = 1, so the sum never underflows
    return WeightVector(unnormalized / np.sum(unnormalized))


def _as_weights(weights: Union[WeightVector, np.ndarray]) -> np.ndarray:
    if isinstance(weights, WeightVector):
        return weights.weights
    return np.asarray(weights, dtype=float).reshape(-1)


def consensus_point(positions, weights: Union[WeightVector, np.ndarray]) -> np.ndarray:
    """Weighted mean sum_i w_i X^i with a fixed row-by-row summation order."""
    positions = np.asarray(positions, dtype=float)
    w = _as_weights(weights)
    if positions.ndim != 2 or positions.shape[0] != w.shape[0]:
        raise ValueError(f"positions shape {positions.shape} does not match {w.shape[0]} weights")
    return np.add.reduce(w[:, None] * positions, axis=0)


def clip(x, R: float) -> np.ndarray:
    """Radial projection onto the ball of radius R; clip(0) = 0."""
    x = np.asarray(x, dtype=float)
    norm = float(np.linalg.norm(x))
    if norm <= R:
        return x.copy()
    return x / norm * R


def global_best(positions, values) -> Tuple[int, np.ndarray]:
    """Index and position of the minimal value; ties go to the lowest index."""
    positions = np.asarray(positions, dtype=float)
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size == 0:
        raise ValueError("global_best of an empty system")
    if not np.all(np.isfinite(values)):
        raise ValueError("values must be finite")
    index = int(np.argmin(values))
    return index, positions[index].copy()


def weight_maps(spec: ObjectiveSpec, alpha: float, positions) -> Tuple[np.ndarray, np.ndarray]:
    """h0(x) = x e^{-alpha f(x)} and h1(x) = e^{-alpha f(x)} on each row (unnormalized)."""
    positions = np.asarray(positions, dtype=float)
    h1 = np.exp(-alpha * evaluate_batch(spec, positions))
    return positions * h1[:, None], h1
