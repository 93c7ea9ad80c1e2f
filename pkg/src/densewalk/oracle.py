"""Brute-force ground truth for tiny instances.

Nothing here calls the geometry kernel's ball routines: the minimum
enclosing ball is recomputed by checking every support subset, so the
oracle stays an independent route to the same numbers.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .dense_sets import CloudSpec, Region, generate
from .geometry import covering_select, hull_distance
from .solver import RootSearchConfig, Solution, resolve_layers, solve

ENUMERATION_LIMIT = 10**6
TWO_SQRT2 = 2.0 * math.sqrt(2.0)


class EnumerationLimitError(ValueError):
    pass


# -- exhaustive minimum enclosing ball -------------------------------------------

def _subset_balls(P: np.ndarray, size: int):
    """Circumcentres and radii (within the affine hull) of all ``size``-subsets of ``P``.

    ``P`` has shape ``(..., k, d)``; results have shape ``(..., C)``.
    Affinely dependent subsets get radius ``inf``.
    """
    k = P.shape[-2]
    combos = np.array(list(itertools.combinations(range(k), size)), dtype=np.int64)
    S = P[..., combos, :]  # (..., C, size, d)
    base = S[..., :1, :]
    if size == 1:
        return base[..., 0, :], np.zeros(S.shape[:-2])
    Q = S[..., 1:, :] - base  # (..., C, size-1, d)
    G = Q @ np.swapaxes(Q, -1, -2)
    rhs = 0.5 * np.einsum("...ii->...i", G)
    det = np.linalg.det(G)
    scale = np.einsum("...ii->...", G) ** (size - 1) + 1e-300
    ok = np.abs(det) > 1e-12 * scale
    G = np.where(ok[..., None, None], G, np.eye(size - 1))
    lam = np.linalg.solve(G, rhs[..., None])[..., 0]
    centre = base[..., 0, :] + np.einsum("...i,...ij->...j", lam, Q)
    radius = np.linalg.norm(S[..., 0, :] - centre, axis=-1)
    return centre, np.where(ok, radius, np.inf)


def exhaustive_meb_radius(P, tol: float = 1e-12) -> np.ndarray:
    """Smallest enclosing radius by trying every subset of at most ``d + 1`` points.

    Accepts a single set ``(k, d)`` or a batch ``(m, k, d)``.
    """
    P = np.asarray(P, dtype=float)
    single = P.ndim == 2
    if single:
        P = P[None]
    k, d = P.shape[-2:]
    spread = np.abs(P).max(axis=(-1, -2)) + 1.0
    best = np.full(P.shape[0], np.inf)
    for size in range(1, min(k, d + 1) + 1):
        centre, radius = _subset_balls(P, size)
        far = np.linalg.norm(P[:, None, :, :] - centre[:, :, None, :], axis=-1).max(axis=-1)
        encloses = far <= radius + tol * spread[:, None]
        cand = np.where(encloses, far, np.inf).min(axis=-1)
        best = np.minimum(best, cand)
    return best[0] if single else best


def oracle_delta_prime(path) -> float:
    P = np.asarray(path, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    return 2.0 * float(exhaustive_meb_radius(np.diff(P, axis=0)))


def meb_grid_oracle(points, resolution: float) -> float:
    """Minimum enclosing radius by branch-and-bound over dyadic grid cells.

    Each cell is scored at its centre ``c`` by ``max ||p - c||``; that score
    is 1-Lipschitz, so a cell whose score minus its half-diagonal exceeds the
    best score seen cannot hold the optimal centre and is dropped.  Survivors
    split into ``2^d`` children until the half-diagonal is at most
    ``resolution / 2``, at which point the returned value is within
    ``resolution`` of the true radius and never below it.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    d = P.shape[1]
    if len(P) == 1:
        return 0.0
    lo, hi = P.min(axis=0), P.max(axis=0)
    centres = (0.5 * (lo + hi))[None, :]
    half = max(0.5 * float((hi - lo).max()), resolution)
    children = np.array(list(itertools.product((-1.0, 1.0), repeat=d)))
    best = math.inf
    while True:
        vals = np.sqrt(((centres[:, None, :] - P[None, :, :]) ** 2).sum(-1).max(axis=1))
        best = min(best, float(vals.min()))
        rho = half * math.sqrt(d)
        if rho <= 0.5 * resolution:
            return best
        # the slack keeps a cell whose children sit exactly rho above best
        centres = centres[vals - rho <= best + 1e-12]
        half *= 0.5
        centres = (centres[:, None, :] + children[None, :, :] * half).reshape(-1, d)


# -- tiny instances ---------------------------------------------------------------

def restriction_radius(i: int, eps_root: float) -> float:
    """Reduced-frame radius holding every point the solver can place in layer ``i``.

    A root with ``||h_n(s0)|| <= eps`` has ``||s0|| <= 1 + eps/n``, and level
    ``i`` supports lie within ``i (||s0|| + 1)`` of the origin.
    """
    return i * (2.0 + eps_root) + 1e-9


@dataclass
class TinyInstance:
    n: int
    t: np.ndarray
    candidates: list  # layer i -> (ids, points), i = 1..n-1
    clouds: object = field(repr=False, default=None)

    @property
    def enumeration_size(self) -> int:
        return int(np.prod([len(ids) for ids, _ in self.candidates], dtype=object)) if self.candidates else 1

    @classmethod
    def from_clouds(cls, clouds, n: int, t, eps_root: float = 1e-6) -> "TinyInstance":
        if not 1 <= n <= 6:
            raise ValueError("tiny instances need 1 <= n <= 6")
        t = np.atleast_1d(np.asarray(t, dtype=float))
        layers = resolve_layers(clouds, n, t)
        candidates = []
        for i in range(1, n):
            ids, pts = layers[i - 1].query((i / n) * t, restriction_radius(i, eps_root))
            candidates.append((ids, pts))
        inst = cls(n, t, candidates, clouds)
        if inst.enumeration_size > ENUMERATION_LIMIT:
            raise EnumerationLimitError(
                f"enumeration size {inst.enumeration_size} exceeds {ENUMERATION_LIMIT}"
            )
        return inst

    @classmethod
    def from_lists(cls, layers, n: int, t) -> "TinyInstance":
        t = np.atleast_1d(np.asarray(t, dtype=float))
        cands = []
        for pts in layers:
            P = np.asarray(pts, dtype=float).reshape(len(pts), t.size)
            cands.append((np.arange(len(P)), P))
        if len(cands) != n - 1:
            raise ValueError(f"need {n - 1} candidate layers")
        inst = cls(n, t, cands)
        if inst.enumeration_size > ENUMERATION_LIMIT:
            raise EnumerationLimitError(f"enumeration size {inst.enumeration_size} too large")
        return inst


TINY_MAX_N = {1: 6, 2: 4, 3: 2}


def random_tiny_instance(seed: int, eps_root: float = 1e-6) -> TinyInstance:
    """Seeded certified tiny instance: dimension 1-3, a shared cloud, a target in ``[-n, n]^d``.

    Clouds alternate between unit-spacing jittered grids and boundary-biased lattices.
    """
    rng = np.random.default_rng([seed, 7])
    dim = int(rng.choice([1, 1, 2, 2, 2, 3]))
    n = int(rng.integers(1, TINY_MAX_N[dim] + 1))
    t = rng.uniform(-n, n, size=dim)
    if rng.uniform() < 0.5:
        spec = CloudSpec("jittered_grid", 1.0, 0.9 * (1.0 - math.sqrt(dim) / 2.0) if dim > 1 else 0.4,
                         seed=int(rng.integers(2**31)))
    else:
        spec = CloudSpec("boundary_biased", seed=int(rng.integers(2**31)))
    region = Region.ball_box(3.0 * n + 1.0 + float(np.abs(t).max()), dim)
    return TinyInstance.from_clouds(generate(spec, region), n, t, eps_root)


@dataclass(frozen=True)
class OracleResult:
    delta_prime: float
    path: np.ndarray
    path_ids: tuple
    leaves: int


def _straight_bound(instance: TinyInstance) -> float:
    """``delta'`` of the tuple picking, per layer, the candidate nearest ``(i/n) t``."""
    n, t = instance.n, instance.t
    pts = [np.zeros(t.size)]
    for i, (_, P) in enumerate(instance.candidates, start=1):
        pts.append(P[int(np.argmin(np.linalg.norm(P - (i / n) * t, axis=1)))])
    pts.append(t)
    return 2.0 * float(exhaustive_meb_radius(np.diff(np.stack(pts), axis=0)))


def brute_force_optimum(instance: TinyInstance) -> OracleResult:
    """Exact minimum of ``delta'`` over all candidate tuples.

    Depth-first over layers in candidate order, pruning with the partial
    pairwise step diameter (a lower bound, as ``delta <= delta'``) against
    the incumbent; before any tuple is found the incumbent value is the
    nearest-to-the-segment tuple's ``delta'``.  The last free layer is scored
    in one batch.  Of several optimal tuples the lexicographically first wins.
    """
    n, t = instance.n, instance.t
    d = t.size
    if instance.enumeration_size > ENUMERATION_LIMIT:
        raise EnumerationLimitError("enumeration bound exceeded")
    origin = np.zeros(d)
    if n == 1:
        return OracleResult(0.0, np.stack([origin, t]), (None, None), 1)
    cands = instance.candidates
    if any(len(ids) == 0 for ids, _ in cands):
        raise ValueError("a candidate layer is empty")
    best = {"value": _straight_bound(instance), "tuple": None}
    leaves = 0

    def pruned(lower: float) -> bool:
        if best["tuple"] is None:
            return lower > best["value"]
        return lower >= best["value"]

    def finish(prefix_pts, prefix_ids, steps):
        nonlocal leaves
        ids, P = cands[-1]
        m = len(P)
        last = (P - prefix_pts[-1])[:, None]
        final = (t - P)[:, None]
        S = np.concatenate([np.broadcast_to(steps, (m,) + steps.shape), last, final], axis=1)
        rad = exhaustive_meb_radius(S)
        leaves += m
        k = int(np.argmin(rad))
        val = 2.0 * float(rad[k])
        if val < best["value"] or (best["tuple"] is None and val <= best["value"]):
            best["value"] = val
            best["tuple"] = (prefix_pts + [P[k]], prefix_ids + [int(ids[k])])

    def recurse(level, prefix_pts, prefix_ids, steps, diam):
        if level == n - 1:
            finish(prefix_pts, prefix_ids, steps)
            return
        ids, P = cands[level - 1]
        moves = P - prefix_pts[-1]
        if len(steps):
            reach = np.linalg.norm(moves[:, None, :] - steps[None, :, :], axis=2).max(axis=1)
            lower = np.maximum(reach, diam)
        else:
            lower = np.zeros(len(P))
        for j in range(len(P)):
            if pruned(lower[j]):
                continue
            recurse(level + 1, prefix_pts + [P[j]], prefix_ids + [int(ids[j])],
                    np.vstack([steps, moves[j]]), float(lower[j]))

    recurse(1, [origin], [None], np.zeros((0, d)), 0.0)
    pts, ids = best["tuple"]
    return OracleResult(best["value"], np.stack(pts + [t]), tuple(ids) + (None,), leaves)


@dataclass
class GapReport:
    oracle: float
    solver: float
    bound: float
    solution: Solution
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def gap(self) -> float:
        return self.solver - self.oracle


def compare_solver(instance: TinyInstance, config: RootSearchConfig | None = None) -> GapReport:
    """Check ``oracle optimum <= solver delta' <= 2 sqrt2 + 2 eps + 1e-9`` on one instance."""
    if instance.clouds is None:
        raise ValueError("compare_solver needs an instance built from clouds")
    config = config or RootSearchConfig()
    sol = solve(instance.clouds, instance.n, instance.t, config)
    opt = brute_force_optimum(instance)
    bound = TWO_SQRT2 + 2.0 * config.eps_root + 1e-9
    solver_dp = oracle_delta_prime(sol.path)
    violations = []
    if opt.delta_prime > solver_dp + 1e-12:
        violations.append(f"oracle {opt.delta_prime!r} above solver {solver_dp!r}")
    if solver_dp > bound:
        violations.append(f"solver delta' {solver_dp!r} above {bound!r}")
    if abs(solver_dp - sol.delta_prime) > 1e-12:
        violations.append(f"delta' routes disagree: {solver_dp!r} vs {sol.delta_prime!r}")
    return GapReport(opt.delta_prime, solver_dp, bound, sol, violations)


@dataclass(frozen=True)
class StrictCheck:
    passed: bool
    reason: str


def check_1d_strict(solution: Solution, eps_root: float | None = None) -> StrictCheck:
    """One-dimensional bound: residuals within 1 and ``delta'`` within 2 (plus ``eps``)."""
    if solution.dim != 1:
        return StrictCheck(False, f"wrong dimension {solution.dim}; the strict check is 1-d only")
    eps = solution.config.get("eps_root", 1e-6) if eps_root is None else eps_root
    P = np.asarray(solution.path, dtype=float).reshape(-1, 1)
    res = np.abs(np.diff(P, axis=0)[:, 0] - float(solution.s0[0]))
    if res.max() > 1.0 + eps + 1e-9:
        return StrictCheck(False, f"residual {res.max()!r} above 1 + eps")
    dp = float(np.ptp(np.diff(P, axis=0)))
    if dp > 2.0 + 2.0 * eps + 1e-9:
        return StrictCheck(False, f"delta' {dp!r} above 2 + 2 eps")
    return StrictCheck(True, "ok")


# -- covering lemma trials ----------------------------------------------------------

@dataclass(frozen=True)
class CoveringReport:
    trials: int
    dim: int
    bound: float
    worst: float
    violations: int
    witness: float

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_json(self) -> dict:
        return {"trials": self.trials, "dim": self.dim, "bound": self.bound, "worst": self.worst,
                "violations": self.violations, "antipodal_witness": self.witness,
                "passed": self.passed}


def _uniform_ball(rng, d: int, radius: float = 1.0, size: int | None = None) -> np.ndarray:
    k = 1 if size is None else size
    u = rng.normal(size=(k, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    out = u * radius * rng.uniform(size=(k, 1)) ** (1.0 / d)
    return out[0] if size is None else out


def covering_trial(rng, d: int):
    """One configuration: ``k <= d + 2`` points in a random unit ball and a query ``y``
    within distance 1 of their hull (by rejection).  Returns ``(Y, y)``."""
    c = rng.uniform(-2.0, 2.0, size=d)
    k = int(rng.integers(1, d + 3))
    Y = c + _uniform_ball(rng, d, 1.0, k)
    while True:
        y = c + _uniform_ball(rng, d, 2.0)
        if hull_distance(y, Y) <= 1.0:
            return Y, y


def antipodal_witness() -> float:
    return covering_select(np.array([0.0, 1.0]), np.array([[1.0, 0.0], [-1.0, 0.0]]))[1]


def covering_trials(trials: int, dim: int, seed: int = 0) -> CoveringReport:
    """Nearest-support distance over random hull-neighbourhood configurations.

    The bound is sqrt(2), or 1 in dimension one, each with 1e-9 slack.
    """
    if trials < 0 or dim < 1:
        raise ValueError("trials must be >= 0 and dim >= 1")
    rng = np.random.default_rng(seed)
    bound = (1.0 if dim == 1 else math.sqrt(2.0)) + 1e-9
    worst, bad = 0.0, 0
    for _ in range(trials):
        Y, y = covering_trial(rng, dim)
        dist = covering_select(y, Y)[1]
        worst = max(worst, dist)
        bad += dist > bound
    return CoveringReport(trials, dim, bound, worst, bad, antipodal_witness())
