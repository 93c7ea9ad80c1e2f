"""Derivative-free zero finders for continuous maps ``F: R^d -> R^d``.

``bisect_root`` handles ``d = 1`` from a sign-changing bracket.

``pl_homotopy_root`` is a restart simplicial method: each stage follows the
zero curve of a piecewise-linear homotopy between ``x - x0`` and ``F`` on a
Freudenthal triangulation of the slab ``R^d x [0, 1]`` with mesh ``delta``,
then restarts from the approximate zero with a finer mesh.  It needs only
continuity of ``F`` plus a boundary condition keeping the curve bounded
(``<F(x), x - x0> > 0`` far out), so it copes with maps that are flat on
large regions and steep elsewhere, where Newton-type methods stall.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class RootSearchFailure(RuntimeError):
    """Budget exhausted; carries the best point seen and its residual."""

    def __init__(self, message: str, best_x, best_residual: float, evaluations: int):
        super().__init__(message)
        self.best_x = np.asarray(best_x, float)
        self.best_residual = float(best_residual)
        self.evaluations = evaluations


class _BudgetExceeded(Exception):
    pass


@dataclass
class _Tracker:
    F: object
    max_evals: int
    evals: int = 0
    best_x: np.ndarray | None = None
    best_f: float = np.inf

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.evals >= self.max_evals:
            raise _BudgetExceeded
        self.evals += 1
        v = np.asarray(self.F(x), dtype=float)
        f = float(np.linalg.norm(v))
        # ties keep the earlier point; evaluation order is deterministic
        if f < self.best_f:
            self.best_f, self.best_x = f, np.array(x, float)
        return v


def bisect_root(F, lo: float, hi: float, tol: float, max_evals: int = 400):
    """Zero of a scalar continuous ``F`` on ``[lo, hi]`` with ``F(lo) <= 0 <= F(hi)``.

    Returns ``(x, |F(x)|, evaluations)``.  Stops at ``|F(x)| <= tol`` or when
    the bracket can no longer be split in floating point.
    """
    track = _Tracker(lambda x: np.atleast_1d(F(x)), max_evals)
    try:
        flo = float(track(np.array([lo]))[0])
        fhi = float(track(np.array([hi]))[0])
        if flo > 0 or fhi < 0:
            raise ValueError("bracket does not change sign")
        if abs(flo) <= tol:
            return lo, abs(flo), track.evals
        if abs(fhi) <= tol:
            return hi, abs(fhi), track.evals
        while True:
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            fm = float(track(np.array([mid]))[0])
            if abs(fm) <= tol:
                return mid, abs(fm), track.evals
            if fm < 0:
                lo = mid
            else:
                hi = mid
    except _BudgetExceeded:
        pass
    raise RootSearchFailure("bisection did not reach tolerance", track.best_x, track.best_f, track.evals)


def _vertices(v0: np.ndarray, pi: list[int]) -> list[tuple[int, ...]]:
    out = [tuple(v0)]
    v = v0.copy()
    for k in pi:
        v[k] += 1
        out.append(tuple(v))
    return out


def _reflect(v0: np.ndarray, pi: list[int], out: int):
    """Freudenthal neighbour across the facet opposite vertex ``out``."""
    m = len(pi)
    v0 = v0.copy()
    if out == 0:
        v0[pi[0]] += 1
        pi = pi[1:] + pi[:1]
    elif out == m:
        v0[pi[-1]] -= 1
        pi = pi[-1:] + pi[:-1]
    else:
        pi = list(pi)
        pi[out - 1], pi[out] = pi[out], pi[out - 1]
    return v0, pi


def pl_stage(F, x0: np.ndarray, delta: float) -> tuple[np.ndarray, int]:
    """One homotopy stage; returns the approximate zero and the pivot count."""
    N = x0.size
    # put x0 at the barycentre of the starting simplex in the lambda=0 layer
    origin = x0 - delta * (N - np.arange(N)) / (N + 1.0)
    labels: dict[tuple[int, ...], np.ndarray] = {}
    coords: dict[tuple[int, ...], np.ndarray] = {}

    def label(z: tuple[int, ...]) -> np.ndarray:
        if z not in labels:
            if z[N] not in (0, 1):
                raise RuntimeError("homotopy path left the slab")
            x = origin + delta * np.asarray(z[:N], float)
            coords[z] = x
            labels[z] = x - x0 if z[N] == 0 else F(x)
        return labels[z]

    v0 = np.zeros(N + 1, dtype=np.int64)
    pi = list(range(N + 1))
    simplex = _vertices(v0, pi)
    facet = simplex[: N + 1]
    entering = simplex[N + 1]
    L = np.vstack([np.ones(N + 1), np.array([label(z) for z in facet]).T])
    e1 = np.zeros(N + 1)
    e1[0] = 1.0
    alpha = np.linalg.solve(L, e1)
    pivots = 0
    while True:
        pivots += 1
        L = np.vstack([np.ones(N + 1), np.array([labels[z] for z in facet]).T])
        y = np.concatenate([[1.0], label(entering)])
        try:
            w = np.linalg.solve(L, y)
        except np.linalg.LinAlgError:
            w = np.linalg.lstsq(L, y, rcond=None)[0]
        pos = w > 1e-13
        if not pos.any():
            raise RuntimeError("degenerate pivot: no leaving vertex")
        ratios = np.full(N + 1, np.inf)
        ratios[pos] = alpha[pos] / w[pos]
        k = int(np.argmin(ratios))
        theta = ratios[k]
        alpha = alpha - theta * w
        alpha[k] = theta
        leaving = facet[k]
        facet = list(facet)
        facet[k] = entering
        alpha = np.clip(alpha, 0.0, None)
        if all(z[N] == 1 for z in facet):
            x = sum(a * coords[z] for a, z in zip(alpha, facet)) / alpha.sum()
            return x, pivots
        out = simplex.index(leaving)
        v0, pi = _reflect(v0, pi, out)
        new_simplex = _vertices(v0, pi)
        (entering,) = [z for z in new_simplex if z not in set(simplex)]
        simplex = new_simplex


def pl_homotopy_root(F, x0, delta: float, tol: float, max_evals: int,
                     max_stages: int = 200, shrink: float = 0.5):
    """Restarted PL homotopy.  Returns ``(x, ||F(x)||, evaluations, stages)``."""
    track = _Tracker(F, max_evals)
    x = np.array(x0, dtype=float)
    delta0 = delta
    try:
        fx = float(np.linalg.norm(track(x)))
        if fx <= tol:
            return x, fx, track.evals, 0
        for stage in range(1, max_stages + 1):
            x, _ = pl_stage(track, x, delta)
            if track.best_f <= tol:
                return track.best_x, track.best_f, track.evals, stage
            fx = float(np.linalg.norm(track(x)))
            if fx <= tol:
                return x, fx, track.evals, stage
            delta *= shrink
            if delta < 1e-13 * max(1.0, float(np.abs(x).max())):
                delta = delta0
    except _BudgetExceeded:
        pass
    if track.best_x is None:
        track.best_x, track.best_f = x, np.inf
    raise RootSearchFailure("PL homotopy did not reach tolerance", track.best_x, track.best_f,
                            track.evals)
