"""Witness paths with every step within sqrt(2) of a common shift.

Pipeline for a target ``t`` and layers ``X_1 .. X_n``:

1. shift layer ``i`` by ``-(i/n) t`` so the target becomes the origin;
2. find ``s0`` with ``h_n(s0) = 0`` (up to ``eps_root``), where
   ``h_0 = 0`` and ``h_i(s) = g_i(h_{i-1}(s) + s)`` with ``g_i`` the
   weighted-centroid selector of layer ``i``;
3. walk the selector trace backwards, at each level picking the support
   nearest to the current point minus ``s0``;
4. undo the shift and check everything from scratch.

The top layer ``X_n`` only steers the recursion (``p_n = t`` is fixed); when
the caller supplies ``n - 1`` layers an auxiliary lattice plays its part.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .dense_sets import (DensityError, LatticeCloud, Region, translate, verify_density)
from .geometry import SQRT2, as_vector, caratheodory_indices, covering_select
from .metrics import delta as path_delta
from .metrics import delta_prime as path_delta_prime
from .rootfind import RootSearchFailure, bisect_root, pl_homotopy_root

log = logging.getLogger(__name__)

SLACK = 1e-9


class RootSearchError(RuntimeError):
    def __init__(self, message: str, best_s, best_residual: float, evaluations: int = 0):
        super().__init__(message)
        self.best_s = np.asarray(best_s, float)
        self.best_residual = float(best_residual)
        self.evaluations = evaluations


class ExtractionError(RuntimeError):
    """A covering step exceeded its bound -- an implementation bug, never clamped."""


@dataclass(frozen=True)
class ConvexSelection:
    center: np.ndarray
    ids: np.ndarray
    supports: np.ndarray
    weights: np.ndarray
    value: np.ndarray


@dataclass(frozen=True)
class SelectorTrace:
    s: np.ndarray
    levels: tuple[ConvexSelection, ...]

    @property
    def value(self) -> np.ndarray:
        return self.levels[-1].value

    @property
    def n(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class RootSearchConfig:
    eps_root: float = 1e-6
    multistart: int = 4
    refine_depth: int = 200
    max_evals: int = 60_000
    seed: int = 0
    density_sigma: float = 0.2
    caratheodory_threshold: int = 64

    def __post_init__(self):
        if not self.eps_root > 0:
            raise ValueError("eps_root must be positive")
        if self.eps_root > 1:
            raise ValueError("eps_root must not exceed 1")
        if self.multistart < 1 or self.refine_depth < 1 or self.max_evals < 1:
            raise ValueError("multistart, refine_depth and max_evals must be positive")
        if not self.density_sigma > 0:
            raise ValueError("density_sigma must be positive")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class RootReport:
    s0: np.ndarray
    residual: float
    evaluations: int
    starts: int
    method: str


# -- selector and recursion ---------------------------------------------------

def _centroid(cloud, c: np.ndarray):
    ids, pts = cloud.query(c, 1.0)
    if not len(ids):
        raise DensityError(f"no point of the layer within distance 1 of {c.tolist()}", center=c)
    dist = np.sqrt(np.einsum("ij,ij->i", pts - c, pts - c))
    raw = 1.0 - dist
    keep = raw > 0
    if not keep.any():
        raise DensityError(
            f"every point near {c.tolist()} lies on the unit sphere (strict density fails)",
            center=c,
        )
    raw = raw[keep]
    w = raw / raw.sum()
    return ids[keep], pts[keep], w, w @ pts[keep]


def select(cloud, c) -> ConvexSelection:
    """Weighted centroid of ``X ∩ B(c, 1)`` with weights ``1 - ||c - x||``.

    Points on the sphere get weight 0 and are left out of ``supports``.
    """
    c = np.asarray(c, dtype=float)
    ids, pts, w, value = _centroid(cloud, c)
    return ConvexSelection(c, ids, pts, w, value)


def _check_layers(clouds, n: int):
    if n < 1:
        raise ValueError("n must be at least 1")
    if len(clouds) < n:
        raise ValueError(f"need {n} layers, got {len(clouds)}")


def h_value(clouds, n: int, s: np.ndarray) -> np.ndarray:
    """``h_n(s)`` without building a trace."""
    v = np.zeros_like(s)
    for cloud in clouds[:n]:
        v = _centroid(cloud, v + s)[3]
    return v


def evaluate_h(clouds, n: int, s) -> tuple[np.ndarray, SelectorTrace]:
    _check_layers(clouds, n)
    s = as_vector(s, clouds[0].dim)
    v = np.zeros_like(s)
    levels = []
    for cloud in clouds[:n]:
        sel = select(cloud, v + s)
        levels.append(sel)
        v = sel.value
    return v, SelectorTrace(s, tuple(levels))


def boundary_extension(clouds, n: int, s) -> np.ndarray:
    """Blend of ``h_n`` on the radius-2 sphere with the identity on radius 3.

    ``f(s) = (3 - |s|) h_n(2 s / |s|) + (|s| - 2) s`` for ``2 <= |s| <= 3``.
    """
    s = as_vector(s)
    r = float(np.linalg.norm(s))
    if not 2.0 - 1e-12 <= r <= 3.0 + 1e-12:
        raise ValueError(f"boundary extension needs 2 <= |s| <= 3, got |s| = {r}")
    return (3.0 - r) * h_value(clouds, n, 2.0 * s / r) + (r - 2.0) * s


def extended_map(clouds, n: int, s: np.ndarray) -> np.ndarray:
    """``h_n`` inside radius 2, ``boundary_extension`` up to 3, identity beyond."""
    r = float(np.linalg.norm(s))
    if r <= 2.0:
        return h_value(clouds, n, s)
    if r >= 3.0:
        return np.array(s, dtype=float)
    return (3.0 - r) * h_value(clouds, n, 2.0 * s / r) + (r - 2.0) * s


# -- root search -------------------------------------------------------------

def find_root(clouds, n: int, config: RootSearchConfig | None = None):
    """Approximate zero ``s0`` of ``h_n`` in ``B(0, 2)``.

    One dimension uses bisection on ``[-2, 2]`` (``h_n(-2) < 0 < h_n(2)``).
    Higher dimensions run the restarted PL homotopy on the extended map from
    up to ``config.multistart`` seeded starts.  Raises
    :class:`RootSearchError` with the best point when the budget runs out.

    Returns ``(s0, trace, report)``.
    """
    config = config or RootSearchConfig()
    _check_layers(clouds, n)
    d = clouds[0].dim
    memo: dict[bytes, np.ndarray] = {}

    def F(s):
        s = np.asarray(s, dtype=float)
        key = s.tobytes()
        v = memo.get(key)
        if v is None:
            v = memo[key] = extended_map(clouds, n, s)
        return v

    eps = config.eps_root
    origin = np.zeros(d)
    h0 = F(origin)
    if np.linalg.norm(h0) <= eps:
        return _finish(clouds, n, origin, RootReport(origin, float(np.linalg.norm(h0)), 1, 0, "origin"))
    if d == 1:
        try:
            x, res, evals = bisect_root(lambda x: F(x)[0], -2.0, 2.0, eps, config.max_evals)
        except RootSearchFailure as exc:
            raise RootSearchError(str(exc), exc.best_x, exc.best_residual, exc.evaluations) from exc
        s0 = np.array([x])
        return _finish(clouds, n, s0, RootReport(s0, res, evals + 1, 1, "bisection"))

    rng = np.random.default_rng(config.seed)
    # first guess treats h_n as n*s + const
    starts = [np.clip(-h0 / n, -1.0, 1.0)]
    while len(starts) < config.multistart:
        u = rng.normal(size=d)
        starts.append(u / np.linalg.norm(u) * rng.uniform() ** (1.0 / d))
    remaining = config.max_evals - 1
    best = (float(np.linalg.norm(h0)), origin)
    total = 1
    for k, x0 in enumerate(starts):
        budget = remaining // (len(starts) - k)
        try:
            x, res, evals, _ = pl_homotopy_root(
                F, x0, delta=min(0.5, 1.0 / n), tol=eps, max_evals=budget,
                max_stages=config.refine_depth,
            )
        except RootSearchFailure as exc:
            remaining -= exc.evaluations
            total += exc.evaluations
            if exc.best_residual < best[0]:
                best = (exc.best_residual, exc.best_x)
            log.debug("start %d failed: best residual %.3g", k, exc.best_residual)
            continue
        total += evals
        if np.linalg.norm(x) <= 2.0:
            return _finish(clouds, n, x, RootReport(x, res, total, k + 1, "pl-homotopy"))
        remaining -= evals
    raise RootSearchError(
        f"root search exhausted {total} evaluations; best residual {best[0]:.3g}",
        best[1], best[0], total,
    )


def _finish(clouds, n, s0, report: RootReport):
    value, trace = evaluate_h(clouds, n, s0)
    report.residual = float(np.linalg.norm(value))
    return s0, trace, report


# -- path extraction -----------------------------------------------------------

@dataclass(frozen=True)
class ExtractedPath:
    points: np.ndarray
    ids: tuple
    residuals: np.ndarray


def extract_path(trace: SelectorTrace, y=None, *, threshold: int = 64) -> ExtractedPath:
    """Backward walk from ``p_n = y`` through the selector supports.

    ``p_i`` is drawn from the supports of level ``i``; the step into
    ``p_{i+1}`` stays within ``sqrt(2)`` of ``s0`` (plus ``|y - h_n(s0)|``
    on the top step).  Support lists longer than ``threshold`` are first
    thinned to ``d + 1`` points by a Caratheodory reduction.
    """
    s0 = trace.s
    d = s0.size
    n = trace.n
    y = np.zeros(d) if y is None else as_vector(y, d)
    top_slack = float(np.linalg.norm(y - trace.value))
    if top_slack > 1.0:
        raise ValueError(f"target is {top_slack:.3g} from h_n(s0); extraction needs <= 1")
    points = np.zeros((n + 1, d))
    ids: list = [None] * (n + 1)
    residuals = np.zeros(n)
    points[n] = y
    current = y
    for i in range(n - 1, 0, -1):
        sel = trace.levels[i - 1]
        sup, sup_ids = sel.supports, sel.ids
        if len(sup) > threshold:
            keep, _ = caratheodory_indices(sup, sel.weights)
            sup, sup_ids = sup[keep], sup_ids[keep]
        k, dist = covering_select(current, sup + s0)
        bound = SQRT2 + (top_slack if i == n - 1 else 0.0) + SLACK
        if dist > bound:
            raise ExtractionError(
                f"covering step at level {i} has length {dist!r} > {bound!r}"
            )
        points[i] = sup[k]
        ids[i] = int(sup_ids[k])
        residuals[i] = dist
        current = sup[k]
    residuals[0] = float(np.linalg.norm(points[1] - s0))
    return ExtractedPath(points, tuple(ids), residuals)


# -- full solve ----------------------------------------------------------------

def required_region(n: int, dim: int) -> Region:
    """Box every unit query ball lies in while ``|s| <= 3`` (radius ``3n + 1``)."""
    return Region.ball_box(3.0 * n + 1.0, dim)


def auxiliary_layer(dim: int, region: Region) -> LatticeCloud:
    """Lattice with covering radius 1/2, standing in for an unconstrained ``X_n``."""
    return LatticeCloud(region, 1.0 / math.sqrt(dim))


def resolve_layers(clouds, n: int, t=None) -> list:
    """Expand a shared cloud or ``n - 1`` layers into the ``n`` layers the recursion uses."""
    if not isinstance(clouds, (list, tuple)):
        return [clouds] * n
    layers = list(clouds)
    if len(layers) == n:
        return layers
    if len(layers) == n - 1:
        dim = layers[0].dim if layers else (np.asarray(t).size if t is not None else None)
        if dim is None:
            raise ValueError("cannot infer the dimension for n = 1 without a target")
        t = np.zeros(dim) if t is None else np.asarray(t, float)
        return layers + [auxiliary_layer(dim, required_region(n, dim).shifted(t))]
    raise ValueError(f"expected {n - 1} or {n} layers for n = {n}, got {len(layers)}")


def check_density(layers, n: int, sigma: float, force: bool = False) -> list[dict]:
    """Certify each (already translated) layer over the radius-``3n+1`` box."""
    region = required_region(n, layers[0].dim)
    seen: dict[int, dict] = {}
    out = []
    for i, cloud in enumerate(layers, start=1):
        key = id(cloud)
        if key not in seen:
            cert = cloud.certify(region)
            if cert is None:
                cert = verify_density(cloud, region, sigma)
            seen[key] = {"verdict": cert.verdict, "gap": cert.gap, "method": cert.method}
            if not cert.certified:
                msg = (f"layer {i} is not certified 1-dense over the required region "
                       f"(verdict {cert.verdict}, gap {cert.gap:.4g})")
                if not force:
                    raise DensityError(msg, required=region)
                log.warning(msg)
        out.append(dict(seen[key], layer=i))
    return out


@dataclass
class Solution:
    n: int
    t: np.ndarray
    s0: np.ndarray
    path: np.ndarray
    path_ids: tuple
    residuals: np.ndarray
    delta: float
    delta_prime: float
    root_residual: float
    config: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return int(self.t.size)

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals))

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "dim": self.dim,
            "t": self.t.tolist(),
            "s0": self.s0.tolist(),
            "path": self.path.tolist(),
            "path_ids": list(self.path_ids),
            "residuals": self.residuals.tolist(),
            "delta": self.delta,
            "delta_prime": self.delta_prime,
            "root_residual": self.root_residual,
            "config": self.config,
            "stats": self.stats,
            "version": __version__,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Solution":
        return cls(
            n=int(obj["n"]),
            t=np.array(obj["t"], dtype=float),
            s0=np.array(obj["s0"], dtype=float),
            path=np.array(obj["path"], dtype=float).reshape(int(obj["n"]) + 1, int(obj["dim"])),
            path_ids=tuple(obj.get("path_ids", [None] * (int(obj["n"]) + 1))),
            residuals=np.array(obj["residuals"], dtype=float),
            delta=float(obj["delta"]),
            delta_prime=float(obj["delta_prime"]),
            root_residual=float(obj["root_residual"]),
            config=dict(obj.get("config", {})),
            stats=dict(obj.get("stats", {})),
        )


def residual_bound(eps_root: float) -> float:
    return SQRT2 + eps_root + SLACK


def solve(clouds, n: int, t=None, config: RootSearchConfig | None = None, *,
          force: bool = False) -> Solution:
    """Path ``0 = p_0, p_1 in X_1, ..., p_{n-1} in X_{n-1}, p_n = t`` with a common shift.

    ``clouds`` is one shared cloud or a list of ``n - 1`` (or ``n``) layers.
    Every step of the result satisfies ``|p_{i+1} - p_i - s0| <= sqrt(2) + eps_root``.
    """
    config = config or RootSearchConfig()
    layers = resolve_layers(clouds, n, t)
    dim = layers[0].dim
    t = np.zeros(dim) if t is None else as_vector(t, dim)
    if any(c.dim != dim for c in layers):
        raise ValueError("layers have mixed dimensions")
    offsets = [(i / n) * t for i in range(1, n + 1)]
    reduced = [translate(c, -off) for c, off in zip(layers, offsets)]
    density = check_density(reduced, n, config.density_sigma, force=force)

    s_red, trace, report = find_root(reduced, n, config)
    extracted = extract_path(trace, np.zeros(dim), threshold=config.caratheodory_threshold)

    path = np.zeros((n + 1, dim))
    path[n] = t
    for i in range(1, n):
        path[i] = layers[i - 1].point(extracted.ids[i])
        if np.linalg.norm(path[i] - (extracted.points[i] + offsets[i - 1])) > 1e-9 * max(1.0, np.abs(t).max()):
            raise RuntimeError(f"map-back mismatch at level {i}")
    s0 = s_red + t / n
    if np.any(path[0] != 0) or np.any(path[n] != t):
        raise RuntimeError("endpoint mismatch after map-back")
    residuals = np.linalg.norm(np.diff(path, axis=0) - s0, axis=1)
    bound = residual_bound(config.eps_root)
    if residuals.max() > bound:
        raise ExtractionError(f"max residual {residuals.max()!r} exceeds {bound!r}")
    dlt, _ = path_delta(path)
    dprime, _ = path_delta_prime(path)
    return Solution(
        n=n, t=t, s0=s0, path=path, path_ids=extracted.ids, residuals=residuals,
        delta=dlt, delta_prime=dprime, root_residual=report.residual,
        config=config.to_json(),
        stats={"evaluations": report.evaluations, "starts": report.starts,
               "method": report.method, "density": density},
    )


# -- independent verification -------------------------------------------------

@dataclass
class VerificationReport:
    checks: dict

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.checks.values())

    def to_json(self) -> dict:
        return {"passed": self.passed,
                "checks": {k: {"ok": ok, "detail": detail} for k, (ok, detail) in self.checks.items()}}


def verify_solution(solution: Solution, clouds, t=None) -> VerificationReport:
    """Re-derive every claim of ``solution`` from the raw point sets."""
    checks: dict[str, tuple[bool, str]] = {}
    n = solution.n
    P = np.asarray(solution.path, dtype=float)
    target = solution.t if t is None else np.asarray(t, dtype=float)
    d = target.size
    checks["shape"] = (P.shape == (n + 1, d), f"path shape {P.shape}")
    if P.shape != (n + 1, d):
        return VerificationReport(checks)
    checks["endpoints"] = (
        bool(np.all(P[0] == 0) and np.all(P[n] == target)),
        f"p_0={P[0].tolist()} p_n={P[n].tolist()} t={target.tolist()}",
    )
    try:
        layers = resolve_layers(clouds, n, target)
    except ValueError as exc:
        checks["membership"] = (False, str(exc))
        return VerificationReport(checks)
    bad = [i for i in range(1, n) if layers[i - 1].find(P[i]) is None]
    checks["membership"] = (not bad, f"non-members at levels {bad}" if bad else "all members")
    eps = float(solution.config.get("eps_root", RootSearchConfig().eps_root))
    res = np.linalg.norm(np.diff(P, axis=0) - solution.s0, axis=1)
    bound = residual_bound(eps)
    checks["residual_bound"] = (bool(res.max() <= bound), f"max residual {res.max():.12g} <= {bound:.12g}")
    checks["residuals_recorded"] = (
        bool(np.allclose(res, solution.residuals, rtol=0, atol=1e-12)), "recorded residuals reproduce"
    )
    dlt, _ = path_delta(P)
    dprime, _ = path_delta_prime(P)
    checks["delta"] = (abs(dlt - solution.delta) <= 1e-9, f"delta {dlt:.12g}")
    checks["delta_prime"] = (abs(dprime - solution.delta_prime) <= 1e-9, f"delta' {dprime:.12g}")
    checks["delta_le_delta_prime"] = (dlt <= dprime + 1e-12, "delta <= delta'")
    checks["delta_prime_bound"] = (dprime <= 2.0 * bound, f"delta' <= {2 * bound:.12g}")
    return VerificationReport(checks)
