"""Discrete probability measures stored in the log domain."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from .errors import EnumerationCapError, ZeroMassError
from .metric_space import MetricSpace, PointSet, product_space

NORMALIZATION_TOL = 1e-12
POWER_CAP = 10**7


def log_total(log_weights: np.ndarray) -> float:
    """Order-independent log of the total mass."""
    lw = np.asarray(log_weights, dtype=float)
    lw = np.sort(lw[lw > -np.inf])
    if lw.size == 0:
        return -math.inf
    return float(logsumexp(lw))


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Probability measure on the points of a finite metric space.

    Only the natural-log weights are stored; ``-inf`` marks zero mass, so
    weights far below floating-point underflow remain exact.
    """

    space: MetricSpace
    log_weights: np.ndarray

    def __post_init__(self):
        lw = np.array(self.log_weights, dtype=float)
        if lw.shape != (len(self.space),):
            raise ValueError("one log-weight per point is required")
        if np.any(np.isnan(lw)) or np.any(lw == np.inf):
            raise ValueError("log-weights must be finite or -inf")
        total = log_total(lw)
        if not abs(total) <= NORMALIZATION_TOL:
            raise ValueError(f"weights sum to exp({total:.3e}), not 1")
        lw.setflags(write=False)
        object.__setattr__(self, "log_weights", lw)

    @classmethod
    def from_log_weights(cls, space: MetricSpace, log_weights, normalize: bool = True) -> DiscreteMeasure:
        lw = np.array(log_weights, dtype=float)
        if np.any(np.isnan(lw)):
            raise ValueError("NaN log-weight")
        if normalize:
            total = log_total(lw)
            if total == -math.inf:
                raise ZeroMassError("all weights are zero")
            lw = lw - total
        return cls(space, lw)

    @classmethod
    def from_weights(cls, space: MetricSpace, weights, normalize: bool = False) -> DiscreteMeasure:
        w = np.array(weights, dtype=float)
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        with np.errstate(divide="ignore"):
            lw = np.log(w)
        if normalize:
            return cls.from_log_weights(space, lw)
        if abs(math.fsum(w) - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"weights sum to {math.fsum(w)!r}, not 1")
        total = log_total(lw)
        return cls(space, lw - total if abs(total) <= NORMALIZATION_TOL else lw)

    @classmethod
    def dirac(cls, space: MetricSpace, point) -> DiscreteMeasure:
        lw = np.full(len(space), -np.inf)
        lw[space.index_of(point)] = 0.0
        return cls(space, lw)

    @classmethod
    def uniform(cls, space: MetricSpace) -> DiscreteMeasure:
        return cls(space, np.full(len(space), -math.log(len(space))))

    @cached_property
    def weights(self) -> np.ndarray:
        w = np.exp(self.log_weights)
        w.setflags(write=False)
        return w

    @property
    def support(self) -> PointSet:
        return PointSet(self.space, self.log_weights > -np.inf)

    def __len__(self) -> int:
        return len(self.space)

    def __repr__(self) -> str:
        return f"DiscreteMeasure(size={len(self)}, support={len(self.support)})"

    def log_mass(self, A: PointSet | np.ndarray) -> float:
        mask = A.mask if isinstance(A, PointSet) else np.asarray(A, dtype=bool)
        return log_total(self.log_weights[mask])

    def mass(self, A: PointSet | np.ndarray) -> float:
        return math.exp(self.log_mass(A))

    def integrate(self, f) -> float:
        """``∫ f dμ`` for an array of extended reals (zero mass ignores ``f``)."""
        f = np.asarray(f, dtype=float)
        on = self.log_weights > -np.inf
        vals = f[on]
        if np.any(np.isnan(vals)):
            raise ValueError("NaN integrand")
        if np.any(vals == np.inf) and np.any(vals == -np.inf):
            raise ValueError("integrand takes both +inf and -inf on the support")
        if np.any(np.isinf(vals)):
            return float(vals[np.isinf(vals)][0])
        return math.fsum(self.weights[on] * vals)

    def log_integral_exp(self, g) -> float:
        """``log ∫ e^g dμ`` in the log domain; ``g`` may contain ±inf."""
        g = np.asarray(g, dtype=float)
        on = self.log_weights > -np.inf
        terms = self.log_weights[on] + g[on]
        if np.any(np.isnan(terms)):
            raise ValueError("NaN integrand")
        return log_total(terms)

    def same_space(self, other: DiscreteMeasure) -> None:
        if other.space is not self.space:
            raise ValueError("measures live on different spaces")

    def allclose(self, other: DiscreteMeasure, atol: float = 1e-12) -> bool:
        self.same_space(other)
        return bool(np.allclose(self.weights, other.weights, rtol=0, atol=atol))


# -- operations ------------------------------------------------------------
def condition(mu: DiscreteMeasure, A: PointSet) -> DiscreteMeasure:
    """``μ`` restricted to ``A`` and renormalized; zero mass is an error."""
    if A.space is not mu.space:
        raise ValueError("set does not belong to the measure's space")
    lw = np.where(A.mask, mu.log_weights, -np.inf)
    total = log_total(lw)
    if total == -math.inf:
        raise ZeroMassError("cannot condition on a set of zero mass")
    return DiscreteMeasure(mu.space, lw - total)


def as_index_map(theta, source: MetricSpace, target: MetricSpace) -> np.ndarray:
    """Normalize a point map to an index array (``-1`` where undefined).

    ``theta`` may be an index array, a mapping from source ids to target ids,
    or a callable taking a source index and returning a target point.
    """
    if isinstance(theta, Mapping):
        out = np.full(len(source), -1, dtype=np.int64)
        for k, v in theta.items():
            out[source.index_of(k)] = target.index_of(v)
        return out
    if callable(theta):
        out = np.full(len(source), -1, dtype=np.int64)
        for i in range(len(source)):
            v = theta(i)
            if v is not None:
                out[i] = target.index_of(v)
        return out
    arr = np.asarray(theta)
    if arr.shape != (len(source),) or not np.issubdtype(arr.dtype, np.integer):
        raise ValueError("index map must be an integer array with one entry per source point")
    if np.any(arr >= len(target)) or np.any(arr < -1):
        raise ValueError("index map points outside the target space")
    return arr.astype(np.int64)


def pushforward(mu: DiscreteMeasure, theta, target: MetricSpace) -> DiscreteMeasure:
    """Image measure ``μ∘θ⁻¹`` on ``target``."""
    idx = as_index_map(theta, mu.space, target)
    on = mu.log_weights > -np.inf
    if np.any(idx[on] < 0):
        bad = mu.space.ids[int(np.flatnonzero(on & (idx < 0))[0])]
        raise ValueError(f"map undefined at support point {bad}")
    fibers: dict[int, list[float]] = {}
    for i in np.flatnonzero(on):
        fibers.setdefault(int(idx[i]), []).append(float(mu.log_weights[i]))
    lw = np.full(len(target), -np.inf)
    for y, vals in fibers.items():
        lw[y] = log_total(np.array(vals))
    return DiscreteMeasure.from_log_weights(target, lw)


def product(mu: DiscreteMeasure, nu: DiscreteMeasure, space: MetricSpace | None = None) -> DiscreteMeasure:
    """Product measure on ``X × Y`` (max metric, row-major indexing)."""
    space = product_space(mu.space, nu.space) if space is None else space
    if len(space) != len(mu) * len(nu):
        raise ValueError("product space has the wrong size")
    lw = (mu.log_weights[:, None] + nu.log_weights[None, :]).ravel()
    return DiscreteMeasure.from_log_weights(space, lw)


def power(mu: DiscreteMeasure, n: int, cap: int = POWER_CAP) -> np.ndarray:
    """Log-weights of the n-fold product, flattened row-major.

    Materialization is refused beyond ``cap`` entries; type-class computations
    in :mod:`ldgamma.sanov` never need it.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if len(mu) ** n > cap:
        raise EnumerationCapError(f"|X|^n = {len(mu)}^{n} exceeds the cap {cap}")
    lw = np.zeros(1)
    for _ in range(n):
        lw = (lw[:, None] + mu.log_weights[None, :]).ravel()
    return lw


def narrow_distance(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Bounded-Lipschitz distance ``sup{|μ(f) − ν(f)| : |f| ≤ 1, Lip(f) ≤ 1}``.

    Solved as a linear program over vertex values of ``f``; when one measure
    is a Dirac mass the closed form ``Σ ν(y) min(2, d(x, y))`` is used.
    """
    mu.same_space(nu)
    diff = mu.weights - nu.weights
    if not np.any(diff):
        return 0.0
    for a, b in ((mu, nu), (nu, mu)):
        supp = np.flatnonzero(a.log_weights > -np.inf)
        if supp.size == 1:
            c = np.minimum(2.0, a.space.distances_from(int(supp[0])))
            return float(math.fsum(b.weights * c))
    keep = np.flatnonzero((mu.log_weights > -np.inf) | (nu.log_weights > -np.inf))
    d = mu.space.dist[np.ix_(keep, keep)]
    w = diff[keep]
    m = keep.size
    rows, rhs = [], []
    for i in range(m):
        for j in range(i + 1, m):
            r = np.zeros(m)
            r[i], r[j] = 1.0, -1.0
            rows.append(r)
            rows.append(-r)
            rhs.extend([d[i, j], d[i, j]])
    res = linprog(-w, A_ub=np.array(rows) if rows else None, b_ub=np.array(rhs) if rhs else None,
                  bounds=[(-1.0, 1.0)] * m, method="highs")
    if not res.success:
        raise RuntimeError(f"bounded-Lipschitz LP failed: {res.message}")
    return max(0.0, float(-res.fun))


# -- IO -------------------------------------------------------------------------
def _fmt_log(v: float) -> str:
    return "-inf" if v == -math.inf else repr(float(v))


def measure_to_csv(mu: DiscreteMeasure, path) -> None:
    """Rows of (point id, weight, log weight)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point", "weight", "log_weight"])
        for pid, wt, lw in zip(mu.space.ids, mu.weights, mu.log_weights):
            w.writerow([pid, repr(float(wt)), _fmt_log(lw)])


def measure_from_csv(space: MetricSpace, path) -> DiscreteMeasure:
    """Read a measure written by :func:`measure_to_csv` (or plain id,weight rows)."""
    lw = np.full(len(space), -np.inf)
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty measure file")
        use_log = len(header) >= 3 and header[2].strip() == "log_weight"
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            pid = row[0].strip()
            if pid in seen:
                raise ValueError(f"{path}:{lineno}: duplicate point {pid!r}")
            seen.add(pid)
            try:
                val = float(row[2]) if use_log else math.log(float(row[1])) if float(row[1]) > 0 else -math.inf
            except (ValueError, IndexError):
                raise ValueError(f"{path}:{lineno}: malformed weight") from None
            lw[space.index_of(pid)] = val
    return DiscreteMeasure.from_log_weights(space, lw)


def measure_to_json(mu: DiscreteMeasure) -> str:
    return json.dumps({pid: _fmt_log(v) if v == -math.inf else float(v)
                       for pid, v in zip(mu.space.ids, mu.log_weights)}, sort_keys=False)


def measure_from_json(space: MetricSpace, text: str) -> DiscreteMeasure:
    """Inverse of :func:`measure_to_json` (values are natural-log weights)."""
    data = json.loads(text)
    lw = np.full(len(space), -np.inf)
    for pid, v in data.items():
        lw[space.index_of(pid)] = -math.inf if v == "-inf" else float(v)
    return DiscreteMeasure.from_log_weights(space, lw)
