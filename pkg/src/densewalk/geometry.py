"""Dimension-generic geometry kernel.

Points are plain ``numpy`` float arrays of shape ``(d,)``; point sets are
arrays of shape ``(k, d)``.  Every routine here is a pure function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ATOL = 1e-9
SQRT2 = math.sqrt(2.0)


class GeometryError(ValueError):
    """Invalid geometric input (empty set, dimension mismatch, NaN ...)."""


def as_vector(v, dim: int | None = None) -> np.ndarray:
    x = np.asarray(v, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.ndim != 1 or x.size == 0:
        raise GeometryError(f"expected a non-empty 1-d vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise GeometryError("vector has non-finite coordinates")
    if dim is not None and x.size != dim:
        raise GeometryError(f"dimension mismatch: expected {dim}, got {x.size}")
    return x


def as_points(P, dim: int | None = None) -> np.ndarray:
    X = np.asarray(P, dtype=float)
    if X.ndim == 1:
        # a bare list of reals is a 1-d point set
        X = X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[0] == 0:
        raise GeometryError("expected a non-empty list of points")
    if not np.all(np.isfinite(X)):
        raise GeometryError("point set has non-finite coordinates")
    if dim is not None and X.shape[1] != dim:
        raise GeometryError(f"dimension mismatch: expected {dim}, got {X.shape[1]}")
    return X


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float
    support: tuple[int, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.radius < 0:
            raise GeometryError("ball radius must be nonnegative")

    def contains(self, p, tol: float = ATOL) -> bool:
        return float(np.linalg.norm(np.asarray(p, float) - self.center)) <= self.radius + tol


@dataclass(frozen=True)
class ConvexCombination:
    supports: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        S = as_points(self.supports)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.size != S.shape[0]:
            raise GeometryError("one weight per support required")
        if np.any(w < 0):
            raise GeometryError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise GeometryError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "supports", S)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.supports.shape[1]

    def value(self) -> np.ndarray:
        return self.weights @ self.supports


def project_to_hull(y, S, tol: float = ATOL, max_iter: int = 10_000):
    """Nearest point of ``conv(S)`` to ``y``.

    Wolfe's minimum-norm-point method on the shifted set ``S - y``: linear
    minimisation (Frank-Wolfe) major cycles with an exact affine
    least-squares minor cycle over the active supports.  Stops once the
    variational certificate ``<y - z, x - z> <= tol`` holds for every
    ``x`` in ``S``.

    Returns
    -------
    z : ndarray
        The projection.
    comb : ConvexCombination
        Weights over a subset of ``S`` with ``comb.value() == z``.
    """
    if tol <= 0:
        raise GeometryError("tol must be positive")
    S = np.asarray(S, dtype=float)
    if S.size == 0:
        raise GeometryError("cannot project onto the hull of an empty set")
    y = as_vector(y)
    S = as_points(S, dim=y.size)
    P = S - y
    norms = np.einsum("ij,ij->i", P, P)
    active = [int(np.argmin(norms))]
    lam = np.array([1.0])
    x = P[active[0]].copy()
    for _ in range(max_iter):
        dots = P @ x
        j = int(np.argmin(dots))
        gap = float(x @ x - dots[j])
        if gap <= tol * 1e-3 or j in active:
            break
        active.append(j)
        lam = np.append(lam, 0.0)
        while True:
            mu = _affine_min_norm(P[active])
            if np.all(mu > 1e-14):
                lam = mu
                break
            neg = mu <= 1e-14
            theta = np.min(lam[neg] / (lam[neg] - mu[neg]))
            lam = lam + theta * (mu - lam)
            keep = lam > 1e-14
            # drop the support(s) that hit zero (at least one)
            if keep.all():
                keep[np.argmin(lam)] = False
            active = [a for a, k in zip(active, keep) if k]
            lam = lam[keep]
            lam = lam / lam.sum()
            if len(active) == 1:
                lam = np.array([1.0])
                break
        x = lam @ P[active]
    lam = np.clip(lam, 0.0, None)
    lam = lam / lam.sum()
    comb = ConvexCombination(S[active], lam)
    return comb.value(), comb


def _affine_min_norm(Q: np.ndarray) -> np.ndarray:
    """Affine weights (summing to 1) minimising ``||mu @ Q||``."""
    k = Q.shape[0]
    if k == 1:
        return np.ones(1)
    G = Q @ Q.T
    A = np.zeros((k + 1, k + 1))
    A[:k, :k] = G
    A[:k, k] = 1.0
    A[k, :k] = 1.0
    b = np.zeros(k + 1)
    b[k] = 1.0
    sol = np.linalg.lstsq(A, b, rcond=None)[0]
    mu = sol[:k]
    return mu / mu.sum()


def hull_distance(y, S) -> float:
    z, _ = project_to_hull(y, S)
    return float(np.linalg.norm(as_vector(y) - z))


def caratheodory_indices(X: np.ndarray, w: np.ndarray) -> tuple[list[int], np.ndarray]:
    """Indices of at most ``d + 1`` rows of ``X`` and new weights with the same value."""
    X = np.asarray(X, float)
    w = np.array(w, dtype=float)
    d = X.shape[1]
    active = [i for i in range(len(w)) if w[i] > 0]
    if not active:
        raise GeometryError("convex combination with all-zero weights")
    while len(active) > d + 1:
        block = active[: d + 2]
        A = np.vstack([X[block].T, np.ones(len(block))])
        mu = np.linalg.svd(A)[2][-1]
        if mu.max() <= 0:
            mu = -mu
        pos = mu > 1e-15
        ratios = np.full(len(block), np.inf)
        ratios[pos] = w[block][pos] / mu[pos]
        k = int(np.argmin(ratios))
        w[block] = np.clip(w[block] - ratios[k] * mu, 0.0, None)
        w[block[k]] = 0.0
        active = [i for i in active if w[i] > 0]
    # round-off leftovers from earlier eliminations
    active = [i for i in active if w[i] > 1e-14] or active
    return active, w[active] / w[active].sum()


def caratheodory_reduce(comb: ConvexCombination) -> ConvexCombination:
    """Re-express ``comb`` with at most ``d + 1`` of its own supports."""
    idx, w = caratheodory_indices(comb.supports, comb.weights)
    out = ConvexCombination(comb.supports[idx], w)
    scale = max(1.0, float(np.abs(comb.supports).max()))
    if np.linalg.norm(out.value() - comb.value()) > 1e-9 * scale:
        raise GeometryError("Caratheodory reduction lost precision")
    return out


def circumball(P: np.ndarray) -> tuple[np.ndarray, float]:
    """Smallest sphere through all points of ``P`` centred in their affine hull."""
    p0 = P[0]
    if len(P) == 1:
        return p0.copy(), 0.0
    Q = P[1:] - p0
    G = Q @ Q.T
    lam = np.linalg.lstsq(2.0 * G, np.diag(G), rcond=None)[0]
    c = p0 + lam @ Q
    return c, float(np.max(np.linalg.norm(P - c, axis=1)))


def min_enclosing_ball(P, seed: int = 0) -> Ball:
    """Exact minimum enclosing ball by Welzl's move-to-front recursion.

    The point order is shuffled with a fixed seed, so the result is
    deterministic.  ``Ball.support`` lists the indices (into ``P``) of the
    boundary points that pin the ball.
    """
    P = np.asarray(P, dtype=float)
    if P.size == 0:
        raise GeometryError("min_enclosing_ball of an empty set")
    P = as_points(P)
    d = P.shape[1]
    scale = max(1.0, float(np.abs(P).max()))
    eps = 1e-12 * scale
    order = list(np.random.default_rng(seed).permutation(len(P)))

    def mtf(end: int, support: list[int]):
        if support:
            c, r = circumball(P[support])
        else:
            c, r = P[order[0]].copy(), 0.0
            if end == 0:
                return c, r, []
        best_support = list(support)
        if len(support) == d + 1:
            return c, r, best_support
        i = 0
        while i < end:
            idx = order[i]
            if np.linalg.norm(P[idx] - c) > r + eps:
                c, r, best_support = mtf(i, support + [idx])
                order.insert(0, order.pop(i))
            i += 1
        return c, r, best_support

    c, r, support = mtf(len(order), [])
    if not support:
        support = [order[0]]
    r = float(np.max(np.linalg.norm(P - c, axis=1)))
    return Ball(c, r, tuple(int(i) for i in support))


def covering_select(y, Y) -> tuple[int, float]:
    """Index of the point of ``Y`` nearest to ``y`` and that distance.

    Ties resolve to the smallest index.  When every ``Y[i]`` lies in a
    common unit ball and ``y`` is within 1 of ``conv(Y)`` the distance is
    at most sqrt(2) (at most 1 in dimension one).
    """
    Y = np.asarray(Y, dtype=float)
    if Y.size == 0:
        raise GeometryError("covering_select over an empty set")
    y = as_vector(y)
    Y = as_points(Y, dim=y.size)
    dist = np.linalg.norm(Y - y, axis=1)
    i = int(np.argmin(dist))
    return i, float(dist[i])
