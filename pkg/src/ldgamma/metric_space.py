"""Finite metric spaces, point sets, balls, enlargements and the Hausdorff hyperspace.

A :class:`MetricSpace` is either a lattice embedded in a Euclidean box (points
carry coordinates, distances come from a norm) or an explicit distance matrix.
Large coordinate spaces never materialize the full matrix: distances are
computed row by row.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import EnumerationCapError

#: Absolute slack used for strict ball membership and lattice divisibility.
BOUNDARY_EPS = 1e-12
#: Largest base space whose nonempty subsets may be enumerated.
ENUMERATION_CAP = 16
#: Full distance matrices are cached only up to this many points.
DENSE_LIMIT = 4096


def _format_coord(value: float) -> str:
    value = round(float(value), 12) + 0.0
    return np.format_float_positional(value, trim="-")


class MetricSpace:
    """Immutable finite metric space.

    Parameters
    ----------
    size : int
        Number of points.
    ids : sequence of str, optional
        Point identifiers. Generated from coordinates (or indices) if omitted.
    coords : array_like, shape (size, dim), optional
        Ambient coordinates. When given, distances come from ``norm``.
    dist : array_like, shape (size, size), optional
        Explicit distance matrix.
    row_fn : callable, optional
        ``row_fn(i)`` returns the distances from point ``i`` to all points.
    resolution : float
        Grid spacing ``h``; 0 for explicit-matrix spaces.
    norm : {"euclidean", "max"}
        Norm on coordinates.
    """

    def __init__(
        self,
        size: int,
        *,
        ids: Sequence[str] | None = None,
        coords=None,
        dist=None,
        row_fn: Callable[[int], np.ndarray] | None = None,
        resolution: float = 0.0,
        norm: str = "euclidean",
    ):
        if size < 1:
            raise ValueError("a metric space needs at least one point")
        backends = sum(b is not None for b in (coords, dist, row_fn))
        if backends == 0:
            raise ValueError("need coordinates, a distance matrix or a row function")
        if norm not in ("euclidean", "max"):
            raise ValueError(f"unknown norm {norm!r}")
        if resolution < 0 or not math.isfinite(resolution):
            raise ValueError("resolution must be a finite nonnegative number")
        self._size = int(size)
        self._norm = norm
        self._resolution = float(resolution)
        self._coords = None
        self._dist = None
        self._row_fn = row_fn
        if coords is not None:
            c = np.array(coords, dtype=float)
            if c.ndim == 1:
                c = c[:, None]
            if c.shape[0] != size or not np.all(np.isfinite(c)):
                raise ValueError("coordinates must be finite with one row per point")
            c.setflags(write=False)
            self._coords = c
        if dist is not None:
            d = np.array(dist, dtype=float)
            if d.shape != (size, size):
                raise ValueError(f"distance matrix must be {size}x{size}")
            if not np.all(np.isfinite(d)) or np.any(d < 0):
                raise ValueError("distances must be finite and nonnegative")
            if np.any(np.diag(d) != 0):
                raise ValueError("dist(p, p) must be 0")
            if not np.allclose(d, d.T, rtol=0, atol=BOUNDARY_EPS):
                raise ValueError("distance matrix must be symmetric")
            off = d + np.eye(size)
            if np.any(off <= 0):
                raise ValueError("distinct points must have positive distance")
            d = 0.5 * (d + d.T)
            d.setflags(write=False)
            self._dist = d
        if ids is None:
            if self._coords is not None:
                ids = [",".join(_format_coord(v) for v in row) for row in self._coords]
            else:
                ids = [f"p{i}" for i in range(size)]
        ids = tuple(str(i) for i in ids)
        if len(ids) != size:
            raise ValueError("one id per point is required")
        if len(set(ids)) != size:
            raise ValueError("point ids must be unique")
        self._ids = ids

    # -- basic accessors -------------------------------------------------
    def __len__(self) -> int:
        return self._size

    def __repr__(self) -> str:
        kind = "coords" if self._coords is not None else "matrix" if self._dist is not None else "rows"
        return f"MetricSpace(size={self._size}, backend={kind}, h={self._resolution:g})"

    @property
    def ids(self) -> tuple[str, ...]:
        return self._ids

    @property
    def coords(self) -> np.ndarray | None:
        return self._coords

    @property
    def resolution(self) -> float:
        return self._resolution

    @property
    def norm(self) -> str:
        return self._norm

    @property
    def has_coords(self) -> bool:
        return self._coords is not None

    @cached_property
    def _id_index(self) -> dict[str, int]:
        return {pid: i for i, pid in enumerate(self._ids)}

    # -- distances -------------------------------------------------------
    def _coord_distances(self, point: np.ndarray) -> np.ndarray:
        diff = self._coords - point[None, :]
        if self._norm == "max":
            return np.max(np.abs(diff), axis=1)
        return np.sqrt(np.sum(diff * diff, axis=1))

    def distances_from(self, i: int) -> np.ndarray:
        """Distances from point index ``i`` to every point."""
        i = int(i)
        if not 0 <= i < self._size:
            raise IndexError(f"point index {i} out of range")
        if self._dist is not None:
            return self._dist[i]
        if self._coords is not None:
            return self._coord_distances(self._coords[i])
        return np.asarray(self._row_fn(i), dtype=float)

    def distances_to(self, point) -> np.ndarray:
        """Distances from an ambient point to every point of the space.

        ``point`` may be a point id, an integer index (spaces without
        coordinates) or a coordinate vector (coordinate spaces).
        """
        if isinstance(point, str):
            return self.distances_from(self._id_index_of(point))
        if self._coords is not None:
            p = np.atleast_1d(np.asarray(point, dtype=float))
            if p.shape != (self._coords.shape[1],):
                raise ValueError(f"point has dimension {p.size}, space has {self._coords.shape[1]}")
            return self._coord_distances(p)
        return self.distances_from(self.index_of(point))

    def _id_index_of(self, pid: str) -> int:
        try:
            return self._id_index[pid]
        except KeyError:
            raise KeyError(f"unknown point id {pid!r}") from None

    def index_of(self, point) -> int:
        """Index of a point given as id, index or coordinates."""
        if isinstance(point, str):
            return self._id_index_of(point)
        if self._coords is not None:
            d = self.distances_to(point)
            j = int(np.argmin(d))
            if d[j] > 1e-9 * max(1.0, self._resolution):
                raise KeyError(f"{point!r} is not a point of the space")
            return j
        if isinstance(point, (int, np.integer)) and 0 <= int(point) < self._size:
            return int(point)
        raise KeyError(f"{point!r} is not a point of the space")

    def point(self, i: int):
        """Coordinates of point ``i`` (or its id when there are none)."""
        if self._coords is not None:
            c = self._coords[i]
            return float(c[0]) if c.size == 1 else c.copy()
        return self._ids[i]

    def distance(self, i: int, j: int) -> float:
        return float(self.distances_from(i)[j])

    @cached_property
    def dist(self) -> np.ndarray:
        """Full distance matrix (only for spaces up to ``DENSE_LIMIT`` points)."""
        if self._dist is not None:
            return self._dist
        if self._size > DENSE_LIMIT:
            raise EnumerationCapError(f"refusing to materialize a {self._size}-point distance matrix")
        d = np.vstack([self.distances_from(i) for i in range(self._size)])
        d = 0.5 * (d + d.T)
        d.setflags(write=False)
        return d

    @cached_property
    def separation(self) -> float:
        """Smallest distance between distinct points (``inf`` for a single point)."""
        if self._size == 1:
            return math.inf
        if self._coords is not None and self._resolution > 0:
            return self._resolution
        d = self.dist + np.diag(np.full(self._size, np.inf))
        return float(d.min())

    @cached_property
    def diameter(self) -> float:
        if self._coords is not None:
            span = self._coords.max(axis=0) - self._coords.min(axis=0)
            return float(span.max() if self._norm == "max" else np.sqrt(np.sum(span * span)))
        return float(self.dist.max())


@dataclass(frozen=True, eq=False)
class PointSet:
    """A subset of a metric space, stored as a membership mask.

    ``tag`` optionally declares the set ``"open"`` or ``"closed"`` relative to
    the grid topology inherited from the ambient continuum.
    """

    space: MetricSpace
    mask: np.ndarray
    tag: str | None = None

    def __post_init__(self):
        m = np.array(self.mask, dtype=bool)
        if m.shape != (len(self.space),):
            raise ValueError("mask length must equal the number of points")
        if self.tag not in (None, "open", "closed"):
            raise ValueError(f"unknown tag {self.tag!r}")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @classmethod
    def from_indices(cls, space: MetricSpace, indices: Iterable[int], tag: str | None = None) -> PointSet:
        m = np.zeros(len(space), dtype=bool)
        idx = np.asarray(list(indices), dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= len(space)):
            raise IndexError("point index out of range")
        m[idx] = True
        return cls(space, m, tag)

    @classmethod
    def from_points(cls, space: MetricSpace, points: Iterable, tag: str | None = None) -> PointSet:
        return cls.from_indices(space, [space.index_of(p) for p in points], tag)

    @classmethod
    def full(cls, space: MetricSpace) -> PointSet:
        return cls(space, np.ones(len(space), dtype=bool), "open")

    @classmethod
    def empty(cls, space: MetricSpace) -> PointSet:
        return cls(space, np.zeros(len(space), dtype=bool))

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @property
    def ids(self) -> list[str]:
        return [self.space.ids[i] for i in self.indices]

    def __len__(self) -> int:
        return int(self.mask.sum())

    def __iter__(self):
        return iter(self.indices.tolist())

    def __contains__(self, i) -> bool:
        return bool(self.mask[self.space.index_of(i)])

    def is_empty(self) -> bool:
        return not self.mask.any()

    def _check(self, other: PointSet) -> None:
        if other.space is not self.space:
            raise ValueError("point sets live in different spaces")

    def __or__(self, other: PointSet) -> PointSet:
        self._check(other)
        return PointSet(self.space, self.mask | other.mask)

    def __and__(self, other: PointSet) -> PointSet:
        self._check(other)
        return PointSet(self.space, self.mask & other.mask)

    def __sub__(self, other: PointSet) -> PointSet:
        self._check(other)
        return PointSet(self.space, self.mask & ~other.mask)

    def __le__(self, other: PointSet) -> bool:
        self._check(other)
        return not np.any(self.mask & ~other.mask)

    def __ge__(self, other: PointSet) -> bool:
        return other <= self

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointSet):
            return NotImplemented
        return other.space is self.space and bool(np.array_equal(self.mask, other.mask))

    def __hash__(self) -> int:
        return hash((id(self.space), self.mask.tobytes()))

    def __repr__(self) -> str:
        shown = self.ids[:6]
        more = "" if len(self) <= 6 else f", ... ({len(self)} points)"
        return f"PointSet({{{', '.join(shown)}{more}}}, tag={self.tag})"

    def complement(self) -> PointSet:
        flipped = {"open": "closed", "closed": "open"}.get(self.tag)
        return PointSet(self.space, ~self.mask, flipped)

    def with_tag(self, tag: str | None) -> PointSet:
        return PointSet(self.space, self.mask, tag)


# -- constructors --------------------------------------------------------
def build_grid_space(dim: int, bounds, h: float, norm: str = "euclidean") -> MetricSpace:
    """Lattice points of a box with spacing ``h``.

    ``bounds`` is one ``(lo, hi)`` pair per axis, or a single pair reused on
    every axis.

    >>> build_grid_space(1, (0, 1), 0.5).ids
    ('0', '0.5', '1')
    """
    if dim < 1:
        raise ValueError("dim must be a positive integer")
    if not (h > 0 and math.isfinite(h)):
        raise ValueError("h must be positive")
    bounds = np.asarray(bounds, dtype=float)
    if bounds.shape == (2,):
        bounds = np.tile(bounds, (dim, 1))
    if bounds.shape != (dim, 2):
        raise ValueError("bounds must give one (lo, hi) pair per axis")
    axes = []
    for lo, hi in bounds:
        if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
            raise ValueError(f"empty box: [{lo}, {hi}]")
        steps = (hi - lo) / h
        k = round(steps)
        if abs(steps - k) > 1e-12 * max(1.0, abs(steps)):
            raise ValueError(f"h={h} does not divide the interval [{lo}, {hi}]")
        axes.append(lo + h * np.arange(k + 1))
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([m.ravel() for m in mesh], axis=1)
    return MetricSpace(len(coords), coords=coords, resolution=float(h), norm=norm)


def space_from_matrix(dist, ids: Sequence[str] | None = None) -> MetricSpace:
    d = np.asarray(dist, dtype=float)
    return MetricSpace(d.shape[0], ids=ids, dist=d)


def space_from_coords(coords, ids: Sequence[str] | None = None, *, resolution: float = 0.0,
                      norm: str = "euclidean") -> MetricSpace:
    c = np.asarray(coords, dtype=float)
    if c.ndim == 1:
        c = c[:, None]
    return MetricSpace(c.shape[0], ids=ids, coords=c, resolution=resolution, norm=norm)


def product_space(X: MetricSpace, Y: MetricSpace) -> MetricSpace:
    """X × Y with the max metric; point (i, j) has index ``i * len(Y) + j``."""
    nx, ny = len(X), len(Y)
    ids = [f"({a};{b})" for a in X.ids for b in Y.ids]

    def row(k: int) -> np.ndarray:
        i, j = divmod(int(k), ny)
        return np.maximum(X.distances_from(i)[:, None], Y.distances_from(j)[None, :]).ravel()

    resolution = max(X.resolution, Y.resolution)
    if nx * ny <= 1024:
        dist = np.vstack([row(k) for k in range(nx * ny)])
        return MetricSpace(nx * ny, ids=ids, dist=dist, resolution=resolution)
    return MetricSpace(nx * ny, ids=ids, row_fn=row, resolution=resolution)


# -- balls and enlargements -------------------------------------------------
def _strict_below(d: np.ndarray, radius: float) -> np.ndarray:
    return d < radius - BOUNDARY_EPS * max(1.0, radius)


def ball(space: MetricSpace, x, delta: float) -> PointSet:
    """Open ball ``{y : d(x, y) < delta}``; ``x`` may be any ambient point."""
    if not delta > 0:
        raise ValueError("ball radius must be positive")
    return PointSet(space, _strict_below(space.distances_to(x), delta), "open")


def closed_ball(space: MetricSpace, x, delta: float) -> PointSet:
    if delta < 0:
        raise ValueError("ball radius must be nonnegative")
    d = space.distances_to(x)
    return PointSet(space, d <= delta + BOUNDARY_EPS * max(1.0, delta), "closed")


def _grow(space: MetricSpace, A: PointSet, radius: float, strict: bool) -> np.ndarray:
    out = A.mask.copy()
    pad = BOUNDARY_EPS * max(1.0, radius)
    for i in A.indices:
        d = space.distances_from(i)
        out |= (d < radius - pad) if strict else (d <= radius + pad)
    return out


def enlargement(space: MetricSpace, A: PointSet, eps: float, *, closed: bool = False) -> PointSet:
    """ε-enlargement of ``A``: union of open ε-balls around its points.

    With ``closed=True`` the closed balls are used instead.
    """
    if A.space is not space:
        raise ValueError("set does not belong to this space")
    if A.is_empty():
        raise ValueError("enlargement of an empty set")
    if not eps > 0:
        raise ValueError("enlargement radius must be positive")
    if space.has_coords and len(A) > 64:
        # Vectorized nearest-distance to A avoids one pass per member.
        d = distance_to_set(space, A)
        pad = BOUNDARY_EPS * max(1.0, eps)
        mask = d <= eps + pad if closed else d < eps - pad
        return PointSet(space, mask | A.mask, "closed" if closed else "open")
    return PointSet(space, _grow(space, A, eps, strict=not closed), "closed" if closed else "open")


def distance_to_set(space: MetricSpace, A: PointSet, chunk: int = 256) -> np.ndarray:
    """``min_{a in A} d(a, y)`` for every point ``y``."""
    if A.is_empty():
        raise ValueError("distance to an empty set")
    out = np.full(len(space), np.inf)
    idx = A.indices
    if space.has_coords:
        c = space.coords
        for start in range(0, idx.size, chunk):
            block = c[idx[start:start + chunk]]
            diff = c[:, None, :] - block[None, :, :]
            if space.norm == "max":
                d = np.max(np.abs(diff), axis=2)
            else:
                d = np.sqrt(np.sum(diff * diff, axis=2))
            np.minimum(out, d.min(axis=1), out=out)
        return out
    for i in idx:
        np.minimum(out, space.distances_from(i), out=out)
    return out


def hausdorff_distance(space: MetricSpace, K: PointSet, K2: PointSet) -> float:
    """Max of the two directed max-min distances between nonempty sets."""
    if K.is_empty() or K2.is_empty():
        raise ValueError("Hausdorff distance needs nonempty sets")
    if K.space is not space or K2.space is not space:
        raise ValueError("sets do not belong to this space")
    to_k2 = distance_to_set(space, K2)
    to_k = distance_to_set(space, K)
    return float(max(to_k2[K.mask].max(), to_k[K2.mask].max()))


# -- grid topology ----------------------------------------------------------
def _layer(space: MetricSpace) -> float:
    # A hair above h so that lattice neighbors are always inside the layer.
    return space.resolution * (1.0 + 1e-9)


def interior(space: MetricSpace, A: PointSet) -> PointSet:
    """Shrink by one ball layer: drop points within ``h`` of the complement."""
    if space.resolution == 0 or A.is_empty() or len(A) == len(space):
        return A.with_tag("open")
    outside = A.complement()
    near = distance_to_set(space, outside) <= _layer(space)
    return PointSet(space, A.mask & ~near, "open")


def closure(space: MetricSpace, A: PointSet) -> PointSet:
    """Grow by one ball layer: add points within ``h`` of ``A``."""
    if space.resolution == 0 or A.is_empty():
        return A.with_tag("closed")
    near = distance_to_set(space, A) <= _layer(space)
    return PointSet(space, A.mask | near, "closed")


def open_set(A: PointSet) -> PointSet:
    """Declare ``A`` open in the grid topology."""
    return A.with_tag("open")


def closed_set(A: PointSet) -> PointSet:
    return A.with_tag("closed")


# -- hyperspace of compacts -------------------------------------------------
class HyperSpace(MetricSpace):
    """Nonempty subsets of a base space with the Hausdorff metric.

    The subset with bitmask ``b`` (bit ``i`` for base point ``i``) has index
    ``b - 1``. Rows of the metric are computed on demand.
    """

    def __init__(self, base: MetricSpace, max_points: int = ENUMERATION_CAP):
        n = len(base)
        if n > min(max_points, ENUMERATION_CAP):
            raise EnumerationCapError(
                f"subset enumeration capped at {min(max_points, ENUMERATION_CAP)} points, got {n}"
            )
        self.base = base
        codes = np.arange(1, 2 ** n, dtype=np.int64)
        members = ((codes[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)
        members.setflags(write=False)
        self.members = members
        bd = base.dist
        # nearest[s, y] = distance from base point y to subset s
        near = np.where(members[:, None, :], bd[None, :, :], np.inf).min(axis=2) if n <= 10 else None
        self._nearest = near
        ids = ["{" + ",".join(base.ids[i] for i in np.flatnonzero(m)) + "}" for m in members]
        super().__init__(len(codes), ids=ids, row_fn=self._row)

    def _nearest_rows(self) -> np.ndarray:
        if self._nearest is None:
            bd = self.base.dist
            out = np.empty(self.members.shape)
            for y in range(len(self.base)):
                out[:, y] = np.where(self.members, bd[y][None, :], np.inf).min(axis=1)
            self._nearest = out
        return self._nearest

    def _row(self, s: int) -> np.ndarray:
        near = self._nearest_rows()
        m = self.members[s]
        # directed distance from every subset t to s, and from s to every t
        t_to_s = np.where(self.members, near[s][None, :], -np.inf).max(axis=1)
        s_to_t = np.where(m[None, :], near, -np.inf).max(axis=1)
        return np.maximum(t_to_s, s_to_t)

    def subset(self, s: int) -> PointSet:
        return PointSet(self.base, self.members[s])

    def index_of_set(self, K: PointSet) -> int:
        if K.space is not self.base or K.is_empty():
            raise ValueError("need a nonempty subset of the base space")
        code = int(np.sum(1 << K.indices.astype(np.int64)))
        return code - 1


def compact_space(space: MetricSpace, max_points: int = ENUMERATION_CAP) -> HyperSpace:
    """The finite metric space of nonempty subsets with the Hausdorff distance."""
    return HyperSpace(space, max_points)


# -- diagnostics and IO -------------------------------------------------------
def check_metric_axioms(space: MetricSpace, samples: int = 2000, rng=None, tol: float = 1e-12) -> None:
    """Sampled check of the metric axioms; raises ``ValueError`` on violation."""
    rng = np.random.default_rng(0) if rng is None else rng
    n = len(space)
    if n <= 60:
        d = space.dist
        if np.any(np.abs(np.diag(d)) > tol) or np.any(np.abs(d - d.T) > tol):
            raise ValueError("identity or symmetry violated")
        if np.any(d + np.eye(n) <= 0):
            raise ValueError("distinct points at distance zero")
        tri = d[:, None, :] - (d[:, :, None] + d[None, :, :])
        if np.any(tri > tol):
            raise ValueError("triangle inequality violated")
        return
    idx = rng.integers(0, n, size=(samples, 3))
    for p, q, r in idx:
        dp = space.distances_from(p)
        dq = space.distances_from(q)
        if abs(dp[p]) > tol or abs(dp[q] - dq[p]) > tol:
            raise ValueError("identity or symmetry violated")
        if p != q and dp[q] <= 0:
            raise ValueError("distinct points at distance zero")
        if dp[q] > dp[r] + dq[r] + tol:
            raise ValueError("triangle inequality violated")


def load_distance_csv(path) -> MetricSpace:
    """CSV with a header row of point ids followed by the symmetric matrix."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path}: empty distance file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if body and len(body[0]) == len(header) + 1:
        body = [r[1:] for r in body]  # tolerate a leading id column
    try:
        mat = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric distance ({exc})") from None
    return space_from_matrix(mat, header)


def write_distance_csv(space: MetricSpace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(space.ids)
        for row in space.dist:
            w.writerow([repr(float(v)) for v in row])


def space_from_config(section: dict, base_dir: Path | None = None) -> MetricSpace:
    """Build a space from key-value settings.

    Recognized keys: ``dim``, ``bounds`` (``lo:hi`` per axis, comma separated),
    ``h``, ``norm``; or ``distances`` (path to a CSV matrix).
    """
    if "distances" in section:
        p = Path(section["distances"])
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        return load_distance_csv(p)
    try:
        dim = int(section.get("dim", 1))
        pairs = [tuple(float(v) for v in b.split(":")) for b in str(section["bounds"]).split(",")]
        h = float(section["h"])
    except KeyError as exc:
        raise ValueError(f"space definition missing key {exc}") from None
    if any(len(p) != 2 for p in pairs):
        raise ValueError("bounds must be written lo:hi")
    if len(pairs) == 1:
        pairs = pairs * dim
    return build_grid_space(dim, pairs, h, norm=section.get("norm", "euclidean"))
