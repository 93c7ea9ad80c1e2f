"""Finite 1-dense point sets, unit-ball range queries and density certificates.

Three cloud flavours share one query interface:

* :class:`PointCloud` -- an explicit point list indexed by a uniform grid
  hash with cell size 1.
* :class:`LatticeCloud` -- a (jittered) lattice over a :class:`Region`.
  Points are a deterministic function of the lattice site and the seed, so
  the cloud is never materialised unless asked to.  This is what the
  generators return.
* :class:`TranslatedCloud` -- a view of another cloud shifted by a vector;
  point ids are those of the underlying cloud.

Every cloud answers ``query(c, r)`` with the exact closed-ball membership
``{x : ||x - c|| <= r}`` as ``(ids, points)`` in ascending id order.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.spatial import cKDTree

from .geometry import GeometryError, as_vector

_CACHE_LIMIT = 200_000


class DensityError(RuntimeError):
    """A query ball found no usable point: the set is not 1-dense there."""

    def __init__(self, message: str, center=None, required=None):
        super().__init__(message)
        self.center = None if center is None else np.asarray(center, float)
        self.required = required


class CloudFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Region:
    """Axis-aligned box ``[lo_j, hi_j]`` per coordinate."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not lo:
            raise ValueError("region bounds must be non-empty and of equal length")
        if any(l > h for l, h in zip(lo, hi)):
            raise ValueError("region needs lo <= hi in every coordinate")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, lo: float, hi: float, dim: int) -> "Region":
        return cls((lo,) * dim, (hi,) * dim)

    @classmethod
    def ball_box(cls, radius: float, dim: int, center=None) -> "Region":
        c = np.zeros(dim) if center is None else as_vector(center, dim)
        return cls(tuple(c - radius), tuple(c + radius))

    @property
    def dim(self) -> int:
        return len(self.lo)

    def contains_region(self, other: "Region", tol: float = 1e-12) -> bool:
        return all(a <= b + tol for a, b in zip(self.lo, other.lo)) and all(
            a >= b - tol for a, b in zip(self.hi, other.hi)
        )

    def shifted(self, offset) -> "Region":
        off = np.asarray(offset, float)
        return Region(tuple(np.asarray(self.lo) + off), tuple(np.asarray(self.hi) + off))

    def to_json(self):
        return [[l, h] for l, h in zip(self.lo, self.hi)]

    @classmethod
    def from_json(cls, obj) -> "Region":
        return cls(tuple(b[0] for b in obj), tuple(b[1] for b in obj))


@dataclass(frozen=True)
class DensityCertificate:
    """Outcome of a density check on a region.

    ``gap`` is the largest observed (sampled) or guaranteed (analytic)
    distance from a region point to the cloud.  ``sigma`` is the sampling
    step; it is 0 for analytic certificates issued by the generators.
    """

    verdict: str
    gap: float
    sigma: float
    region: Region | None = None
    method: str = "sampled"

    @property
    def certified(self) -> bool:
        return self.verdict == "certified"

    def to_json(self):
        return {
            "verdict": self.verdict,
            "gap": self.gap,
            "sigma": self.sigma,
            "method": self.method,
            "region": None if self.region is None else self.region.to_json(),
        }


class _Cloud:
    """Shared query plumbing; subclasses provide ``_candidates``."""

    dim: int
    certificate: DensityCertificate | None = None

    def query(self, c, r: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
        if r < 0:
            raise ValueError("query radius must be nonnegative")
        c = np.asarray(c, dtype=float)
        if c.shape != (self.dim,):
            raise GeometryError(f"dimension mismatch: cloud is {self.dim}-d, query is {c.shape}")
        ids, pts = self._candidates(c, r)
        diff = pts - c
        keep = np.einsum("ij,ij->i", diff, diff) <= r * r
        return ids[keep], pts[keep]

    def range_query(self, c, r: float = 1.0) -> np.ndarray:
        return self.query(c, r)[1]

    def find(self, p) -> int | None:
        """Id of a cloud point with exactly the coordinates ``p``, if any."""
        ids, _ = self.query(np.asarray(p, float), 0.0)
        return int(ids[0]) if len(ids) else None

    def certify(self, region: Region) -> DensityCertificate | None:
        """Analytic certificate covering ``region``, if the cloud carries one."""
        cert = self.certificate
        if cert is None or not cert.certified or cert.region is None:
            return None
        return cert if cert.region.contains_region(region) else None


class PointCloud(_Cloud):
    """Explicit finite point set with a cell-size-1 uniform grid hash."""

    def __init__(self, points, dim: int | None = None, *, dedup: bool = False):
        X = np.asarray(points, dtype=float)
        if X.size == 0:
            if dim is None:
                raise CloudFormatError("empty point list needs an explicit dim")
            X = np.zeros((0, dim))
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise CloudFormatError("points must form a 2-d array")
        if dim is not None and X.shape[1] != dim:
            raise CloudFormatError(f"points have dimension {X.shape[1]}, expected {dim}")
        if not np.all(np.isfinite(X)):
            raise CloudFormatError("points must be finite")
        if dedup and len(X):
            _, first = np.unique(X, axis=0, return_index=True)
            X = X[np.sort(first)]
        X = np.ascontiguousarray(X)
        X.setflags(write=False)
        self.points = X
        self.dim = X.shape[1]
        self._tree = None
        self._cache: dict[bytes, tuple[np.ndarray, np.ndarray]] = {}
        self._cells: dict[tuple[int, ...], np.ndarray] = {}
        if len(X):
            keys = np.floor(X).astype(np.int64)
            uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
            inverse = inverse.reshape(-1)
            order = np.argsort(inverse, kind="stable")
            bounds = np.searchsorted(inverse[order], np.arange(len(uniq) + 1))
            for j, key in enumerate(map(tuple, uniq)):
                self._cells[key] = order[bounds[j] : bounds[j + 1]]
        self._empty = (np.zeros(0, dtype=np.int64), np.zeros((0, self.dim)))

    def __len__(self):
        return len(self.points)

    def point(self, i: int) -> np.ndarray:
        return self.points[i]

    def _gather(self, lo: np.ndarray, hi: np.ndarray):
        parts = [
            self._cells[key]
            for key in itertools.product(*(range(a, b + 1) for a, b in zip(lo, hi)))
            if key in self._cells
        ]
        if not parts:
            return self._empty
        ids = np.sort(np.concatenate(parts))
        return ids, self.points[ids]

    def _candidates(self, c, r):
        if r <= 1.0:
            base = np.floor(c).astype(np.int64)
            key = base.tobytes()
            hit = self._cache.get(key)
            if hit is None:
                if len(self._cache) > _CACHE_LIMIT:
                    self._cache.clear()
                hit = self._cache[key] = self._gather(base - 1, base + 1)
            return hit
        return self._gather(np.floor(c - r).astype(np.int64), np.floor(c + r).astype(np.int64))

    def nearest_distance(self, Q: np.ndarray, cap: float = np.inf) -> np.ndarray:
        if not len(self.points):
            return np.full(len(Q), np.inf)
        if self._tree is None:
            self._tree = cKDTree(self.points)
        dist, _ = self._tree.query(Q, distance_upper_bound=cap)
        return dist


# splitmix64 finaliser; vectorised over uint64 arrays
def _mix(x: np.ndarray) -> np.ndarray:
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _site_uniforms(sites: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic U[0,1) variates, one row of ``d`` per lattice site."""
    n, d = sites.shape
    with np.errstate(over="ignore"):
        h = np.full(n, _mix(np.array([seed], dtype=np.uint64) + _GOLDEN)[0], dtype=np.uint64)
        for j in range(d):
            h = _mix(h ^ (sites[:, j].astype(np.uint64) + np.uint64(j + 1) * _GOLDEN))
        out = np.empty((n, d))
        for j in range(d):
            h = _mix(h + _GOLDEN)
            out[:, j] = (h >> np.uint64(11)).astype(np.float64) * (1.0 / 2**53)
    return out


JITTER_MODES = ("none", "cube", "corner")


class LatticeCloud(_Cloud):
    """Lattice ``a * Z^d`` over a region, each site displaced by at most ``jitter``.

    ``mode="cube"`` draws displacements uniformly from the cube of
    half-width ``jitter / sqrt(d)``; ``mode="corner"`` pushes every site to
    a random corner of that cube.  Sites run from ``floor(lo / a)`` to
    ``ceil(hi / a)`` so every region point has a site within ``a*sqrt(d)/2``.
    """

    def __init__(self, region: Region, spacing: float, jitter: float = 0.0, seed: int = 0,
                 mode: str = "cube"):
        if spacing <= 0:
            raise ValueError("lattice spacing must be positive")
        if jitter < 0:
            raise ValueError("jitter must be nonnegative")
        if mode not in JITTER_MODES:
            raise ValueError(f"unknown jitter mode {mode!r}")
        if jitter == 0:
            mode = "none"
        self.region = region
        self.dim = region.dim
        self.spacing = float(spacing)
        self.jitter = float(jitter)
        self.seed = int(seed)
        self.mode = mode
        self.klo = np.floor(np.asarray(region.lo) / spacing).astype(np.int64)
        self.khi = np.ceil(np.asarray(region.hi) / spacing).astype(np.int64)
        self.shape = tuple(int(v) for v in self.khi - self.klo + 1)
        self._strides = np.array(
            [int(np.prod(self.shape[j + 1 :])) for j in range(self.dim)], dtype=np.int64
        )
        w = int(math.ceil((1.0 + self.jitter) / spacing))
        self._stencil = np.array(
            list(itertools.product(range(-w, w + 2), repeat=self.dim)), dtype=np.int64
        )
        self._cache: dict[bytes, tuple[np.ndarray, np.ndarray]] = {}
        self.certificate = DensityCertificate(
            "certified" if self.covering_bound < 1.0 else "unknown",
            self.covering_bound, 0.0, region, method="analytic",
        )

    @property
    def covering_bound(self) -> float:
        return self.spacing * math.sqrt(self.dim) / 2.0 + self.jitter

    def __len__(self):
        return int(np.prod(self.shape))

    def _displacement(self, sites: np.ndarray) -> np.ndarray:
        if self.mode == "none":
            return 0.0
        u = _site_uniforms(sites, self.seed)
        half = self.jitter / math.sqrt(self.dim)
        if self.mode == "corner":
            return np.where(u < 0.5, -half, half)
        return (2.0 * u - 1.0) * half

    def _sites_to_points(self, sites: np.ndarray) -> np.ndarray:
        return sites * self.spacing + self._displacement(sites)

    def _ids(self, sites: np.ndarray) -> np.ndarray:
        return (sites - self.klo) @ self._strides

    def point(self, i: int) -> np.ndarray:
        site = np.array(np.unravel_index(int(i), self.shape), dtype=np.int64) + self.klo
        return self._sites_to_points(site[None, :])[0]

    def _box(self, lo_site, hi_site):
        lo_site = np.maximum(lo_site, self.klo)
        hi_site = np.minimum(hi_site, self.khi)
        if np.any(lo_site > hi_site):
            return np.zeros(0, dtype=np.int64), np.zeros((0, self.dim))
        axes = [np.arange(a, b + 1) for a, b in zip(lo_site, hi_site)]
        sites = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        return self._ids(sites), self._sites_to_points(sites)

    def _candidates(self, c, r):
        if r <= 1.0:
            base = np.floor(c / self.spacing).astype(np.int64)
            key = base.tobytes()
            hit = self._cache.get(key)
            if hit is None:
                if len(self._cache) > _CACHE_LIMIT:
                    self._cache.clear()
                sites = base + self._stencil
                inside = np.all((sites >= self.klo) & (sites <= self.khi), axis=1)
                sites = sites[inside]
                hit = self._cache[key] = (self._ids(sites), self._sites_to_points(sites))
            return hit
        reach = r + self.jitter
        lo = np.floor((c - reach) / self.spacing).astype(np.int64)
        hi = np.ceil((c + reach) / self.spacing).astype(np.int64)
        return self._box(lo, hi)

    @property
    def points(self) -> np.ndarray:
        return self._box(self.klo, self.khi)[1]

    def materialize(self) -> PointCloud:
        return PointCloud(self.points, dim=self.dim)

    def nearest_distance(self, Q: np.ndarray, cap: float = np.inf, chunk: int = 4096) -> np.ndarray:
        if not np.isfinite(cap):
            cap = 2.0 * self.covering_bound + 2.0
        w = int(math.ceil((cap + self.jitter) / self.spacing))
        stencil = np.array(list(itertools.product(range(-w, w + 2), repeat=self.dim)), dtype=np.int64)
        out = np.empty(len(Q))
        for start in range(0, len(Q), chunk):
            q = Q[start : start + chunk]
            base = np.floor(q / self.spacing).astype(np.int64)
            sites = base[:, None, :] + stencil[None, :, :]
            inside = np.all((sites >= self.klo) & (sites <= self.khi), axis=2)
            flat = sites.reshape(-1, self.dim)
            pts = self._sites_to_points(flat).reshape(sites.shape[0], sites.shape[1], self.dim)
            dist = np.linalg.norm(pts - q[:, None, :], axis=2)
            dist[~inside] = np.inf
            dmin = dist.min(axis=1)
            dmin[dmin > cap] = np.inf
            out[start : start + chunk] = dmin
        return out

    def descriptor(self) -> dict:
        return {
            "kind": "lattice",
            "spacing": self.spacing,
            "jitter": self.jitter,
            "seed": self.seed,
            "mode": self.mode,
            "region": self.region.to_json(),
        }


class TranslatedCloud(_Cloud):
    """``base + offset``, sharing point ids with ``base``."""

    def __init__(self, base, offset):
        self.base = base
        self.dim = base.dim
        self.offset = as_vector(offset, base.dim)
        cert = base.certificate
        if cert is not None and cert.region is not None:
            cert = DensityCertificate(cert.verdict, cert.gap, cert.sigma,
                                      cert.region.shifted(self.offset), cert.method)
        self.certificate = cert

    def __len__(self):
        return len(self.base)

    def query(self, c, r: float = 1.0):
        ids, pts = self.base.query(np.asarray(c, float) - self.offset, r)
        return ids, pts + self.offset

    def point(self, i: int) -> np.ndarray:
        return self.base.point(i) + self.offset

    def nearest_distance(self, Q, cap: float = np.inf):
        return self.base.nearest_distance(np.asarray(Q) - self.offset, cap)


def translate(cloud, offset):
    offset = np.asarray(offset, float)
    if not np.any(offset):
        return cloud
    return TranslatedCloud(cloud, offset)


def range_query(cloud, c, r: float = 1.0) -> np.ndarray:
    """Points of ``cloud`` in the closed ball ``B(c, r)``, ascending by id."""
    return cloud.query(c, r)[1]


# -- generators -------------------------------------------------------------

GENERATOR_KINDS = ("grid", "jittered_grid", "boundary_biased")


@dataclass(frozen=True)
class CloudSpec:
    """Instance factory parameters.

    ``boundary_biased`` pushes every site of a lattice to a corner of its
    jitter cube, with spacing and jitter tuned so the guaranteed covering
    radius is ``1 - margin``: many unit query balls then hold points close
    to their boundary.
    """

    kind: str
    spacing: float = 1.0
    jitter: float = 0.0
    seed: int = 0
    margin: float = 0.02

    def lattice_params(self, dim: int) -> tuple[float, float, str]:
        if self.kind == "grid":
            return self.spacing, 0.0, "none"
        if self.kind == "jittered_grid":
            return self.spacing, self.jitter, "cube"
        if self.kind == "boundary_biased":
            bound = 1.0 - self.margin
            jitter = 0.3 * bound
            return 2.0 * (bound - jitter) / math.sqrt(dim), jitter, "corner"
        raise ValueError(f"unknown generator kind {self.kind!r}")

    def covering_bound(self, dim: int) -> float:
        a, rho, _ = self.lattice_params(dim)
        return a * math.sqrt(dim) / 2.0 + rho

    def to_json(self):
        return {"kind": self.kind, "spacing": self.spacing, "jitter": self.jitter,
                "seed": self.seed, "margin": self.margin}


def generate(spec: CloudSpec, region: Region) -> LatticeCloud:
    """Build the cloud described by ``spec`` over ``region``.

    Raises ``ValueError`` when the parameters cannot promise 1-density,
    i.e. when ``a*sqrt(d)/2 + jitter >= 1``.
    """
    if spec.kind not in GENERATOR_KINDS:
        raise ValueError(f"unknown generator kind {spec.kind!r}")
    if spec.kind == "boundary_biased" and not 0 < spec.margin < 1:
        raise ValueError("margin must lie in (0, 1)")
    a, rho, mode = spec.lattice_params(region.dim)
    bound = a * math.sqrt(region.dim) / 2.0 + rho
    if bound >= 1.0:
        raise ValueError(
            f"covering radius bound {bound:.6g} >= 1: {spec.kind} with spacing {a:g} "
            f"and jitter {rho:g} is not 1-dense in dimension {region.dim}"
        )
    return LatticeCloud(region, a, rho, spec.seed, mode)


# -- certification ----------------------------------------------------------

def sample_nodes(region: Region, sigma: float) -> Iterable[np.ndarray]:
    """Cell centres of a step-``sigma`` grid over ``region``, in chunks."""
    axes = []
    for lo, hi in zip(region.lo, region.hi):
        m = max(1, int(math.ceil((hi - lo) / sigma)))
        axes.append(lo + sigma * (np.arange(m) + 0.5))
    sizes = [len(a) for a in axes]
    total = int(np.prod(sizes))
    step = 1 << 16
    for start in range(0, total, step):
        idx = np.unravel_index(np.arange(start, min(total, start + step)), sizes)
        yield np.stack([axes[j][idx[j]] for j in range(len(axes))], axis=1)


def verify_density(cloud, region: Region, sigma: float) -> DensityCertificate:
    """Conservative sampled density check.

    Nodes sit at the centres of step-``sigma`` cells, so every region point
    is within ``h = sigma*sqrt(d)/2`` of a node.  The verdict is
    ``certified`` iff every node is closer than ``1 - h`` to the cloud,
    ``refuted`` iff some node is at distance ``>= 1 + h``, else ``unknown``.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    h = sigma * math.sqrt(region.dim) / 2.0
    # anything farther than 1 + h already refutes, so the search can stop there
    cap = 1.0 + h + 1e-9
    worst = 0.0
    for Q in sample_nodes(region, sigma):
        dist = cloud.nearest_distance(Q, cap)
        worst = max(worst, float(np.max(dist)))
        if worst >= 1.0 + h:
            break
    if worst < 1.0 - h:
        verdict = "certified"
    elif worst >= 1.0 + h:
        verdict = "refuted"
    else:
        verdict = "unknown"
    return DensityCertificate(verdict, worst, sigma, region, method="sampled")


# -- file I/O ----------------------------------------------------------------

def cloud_to_json(cloud, materialize: bool = False) -> dict:
    if isinstance(cloud, LatticeCloud) and not materialize:
        return {"dim": cloud.dim, "generator": cloud.descriptor()}
    if isinstance(cloud, TranslatedCloud):
        raise CloudFormatError("translated views are not serialisable")
    pts = cloud.points
    return {"dim": cloud.dim, "points": [[float(v) for v in row] for row in pts]}


def cloud_from_json(obj, *, dedup: bool = False):
    if not isinstance(obj, dict) or "dim" not in obj:
        raise CloudFormatError("cloud object needs a 'dim' field")
    dim = obj["dim"]
    if not isinstance(dim, int) or dim < 1:
        raise CloudFormatError(f"bad dim {dim!r}")
    if "generator" in obj:
        g = obj["generator"]
        try:
            region = Region.from_json(g["region"])
            if region.dim != dim:
                raise CloudFormatError("generator region dimension differs from dim")
            return LatticeCloud(region, g["spacing"], g.get("jitter", 0.0), g.get("seed", 0),
                                g.get("mode", "cube"))
        except (KeyError, TypeError) as exc:
            raise CloudFormatError(f"malformed generator descriptor: {exc}") from exc
    rows = obj.get("points")
    if not isinstance(rows, list):
        raise CloudFormatError("cloud object needs a 'points' list")
    for k, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != dim:
            raise CloudFormatError(f"point {k} does not have dimension {dim}")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in row):
            raise CloudFormatError(f"point {k} has non-numeric coordinates")
    return PointCloud(np.array(rows, dtype=float).reshape(len(rows), dim), dim=dim, dedup=dedup)


def save(cloud, path, materialize: bool = False) -> None:
    Path(path).write_text(json.dumps(cloud_to_json(cloud, materialize)))


def load(path, *, dedup: bool = False):
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CloudFormatError(f"{path}: not valid JSON ({exc})") from exc
    return cloud_from_json(obj, dedup=dedup)


@dataclass
class Instance:
    """Point sets of one problem: either a shared cloud or explicit layers."""

    shared: object | None = None
    layers: list = field(default_factory=list)
    n: int | None = None

    def to_json(self, materialize: bool = False) -> dict:
        if self.shared is not None:
            out = {"shared": cloud_to_json(self.shared, materialize)}
            if self.n is not None:
                out["n"] = self.n
            return out
        return {"layers": [cloud_to_json(c, materialize) for c in self.layers]}


def load_instance(path, *, dedup: bool = False) -> Instance:
    """Read a cloud, a ``{"layers": [...]}`` file or a ``{"shared": ..., "n": n}`` file."""
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CloudFormatError(f"{path}: not valid JSON ({exc})") from exc
    if isinstance(obj, dict) and "layers" in obj:
        layers = [cloud_from_json(c, dedup=dedup) for c in obj["layers"]]
        if len({c.dim for c in layers}) > 1:
            raise CloudFormatError("layers have mixed dimensions")
        return Instance(layers=layers)
    if isinstance(obj, dict) and "shared" in obj:
        return Instance(shared=cloud_from_json(obj["shared"], dedup=dedup), n=obj.get("n"))
    return Instance(shared=cloud_from_json(obj, dedup=dedup))


def save_instance(inst: Instance, path, materialize: bool = False) -> None:
    Path(path).write_text(json.dumps(inst.to_json(materialize)))
