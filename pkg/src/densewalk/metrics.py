"""Discrepancy of a path ``(p_0, ..., p_n)``.

``delta``  -- largest pairwise distance between step vectors.
``delta_prime`` -- twice the radius of the smallest ball holding every step
vector; its centre is the best common shift.  ``delta <= delta_prime``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import as_points, min_enclosing_ball


@dataclass(frozen=True)
class DiscrepancyReport:
    delta: float
    delta_prime: float
    shift: np.ndarray
    pair: tuple[int, int] | None


def as_path(path) -> np.ndarray:
    P = as_points(path)
    if len(P) < 2:
        raise ValueError("a path needs at least two points (n >= 1)")
    return P


def step_vectors(path) -> np.ndarray:
    return np.diff(as_path(path), axis=0)


def delta(path) -> tuple[float, tuple[int, int] | None]:
    """Exact pairwise maximum; a single step gives ``(0.0, None)``."""
    S = step_vectors(path)
    if len(S) == 1:
        return 0.0, None
    D = np.linalg.norm(S[:, None, :] - S[None, :, :], axis=2)
    i, j = np.unravel_index(int(np.argmax(np.triu(D, k=1))), D.shape)
    return float(D[i, j]), (int(min(i, j)), int(max(i, j)))


def delta_prime(path) -> tuple[float, np.ndarray]:
    ball = min_enclosing_ball(step_vectors(path))
    return 2.0 * ball.radius, ball.center


def discrepancy_report(path) -> DiscrepancyReport:
    d, pair = delta(path)
    dp, shift = delta_prime(path)
    return DiscrepancyReport(d, dp, shift, pair)


def max_residual(path, shift) -> float:
    S = step_vectors(path)
    return float(np.max(np.linalg.norm(S - np.asarray(shift, float), axis=1)))
