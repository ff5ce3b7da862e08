"""Relative entropy on finite spaces: sum form, partitions, conditioning and projections."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvariantViolation, ScheduleError, ZeroMassError
from .measure import DiscreteMeasure, as_index_map, condition, log_total, pushforward
from .metric_space import MetricSpace, PointSet

IDENTITY_TOL = 1e-10


def _scaled(tol: float, *values: float) -> float:
    finite = [abs(v) for v in values if math.isfinite(v)]
    return tol * max([1.0] + finite)


def relative_entropy(nu: DiscreteMeasure, mu: DiscreteMeasure) -> float:
    """``H(ν|μ) = Σ ν log(ν/μ)``; ``+inf`` unless ``ν ≪ μ``."""
    nu.same_space(mu)
    on = nu.log_weights > -np.inf
    if np.any(mu.log_weights[on] == -np.inf):
        return math.inf
    lv = nu.log_weights[on]
    terms = np.exp(lv) * (lv - mu.log_weights[on])
    return max(0.0, math.fsum(terms))


def variational_objective(nu: DiscreteMeasure, mu: DiscreteMeasure, phi) -> float:
    """``ν(φ) − log μ(e^φ)`` for a finite-valued test function ``φ``."""
    nu.same_space(mu)
    phi = np.asarray(phi, dtype=float)
    if not np.all(np.isfinite(phi)):
        raise ValueError("test function must be finite")
    return nu.integrate(phi) - mu.log_integral_exp(phi)


def optimal_test_function(nu: DiscreteMeasure, mu: DiscreteMeasure, floor: float = -745.0) -> np.ndarray:
    """``log(dν/dμ)`` on ``supp μ``, clipped below at ``floor`` where ``ν`` vanishes.

    Off ``supp μ`` the value is irrelevant and set to 0.
    """
    on = mu.log_weights > -np.inf
    phi = np.zeros(len(mu))
    phi[on] = np.maximum(nu.log_weights[on] - mu.log_weights[on], floor)
    return phi


# -- partitions -------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class Partition:
    """Cells ``E⁰..E^N`` given by a label per point; cell 0 is the remainder.

    Cells ``1..N`` are nonempty; the remainder may be empty.
    """

    space: MetricSpace
    labels: np.ndarray

    def __post_init__(self):
        lab = np.array(self.labels, dtype=np.int64)
        if lab.shape != (len(self.space),):
            raise ValueError("one label per point is required")
        if lab.min() < 0:
            raise ValueError("labels must be nonnegative")
        present = np.unique(lab[lab > 0])
        if present.size and not np.array_equal(present, np.arange(1, present.size + 1)):
            raise ValueError("non-remainder cells must be labelled 1..N without gaps")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @classmethod
    def from_cells(cls, space: MetricSpace, cells: Sequence[PointSet], remainder: PointSet | None = None) -> Partition:
        """Build from disjoint nonempty cells; uncovered points go to the remainder."""
        lab = np.zeros(len(space), dtype=np.int64)
        covered = np.zeros(len(space), dtype=bool)
        for k, cell in enumerate(cells, start=1):
            if cell.space is not space:
                raise ValueError("cell from a different space")
            if cell.is_empty():
                raise ValueError(f"cell {k} is empty")
            if np.any(covered & cell.mask):
                raise ValueError(f"cell {k} overlaps an earlier cell")
            covered |= cell.mask
            lab[cell.mask] = k
        if remainder is not None and not np.array_equal(remainder.mask, ~covered):
            raise ValueError("cells and remainder do not partition the space")
        return cls(space, lab)

    @classmethod
    def trivial(cls, space: MetricSpace) -> Partition:
        return cls(space, np.ones(len(space), dtype=np.int64))

    @classmethod
    def singletons(cls, space: MetricSpace) -> Partition:
        return cls(space, np.arange(1, len(space) + 1))

    @property
    def n_cells(self) -> int:
        return int(self.labels.max())

    def cell(self, k: int) -> PointSet:
        return PointSet(self.space, self.labels == k)

    @property
    def cells(self) -> list[PointSet]:
        return [self.cell(k) for k in range(self.n_cells + 1)]

    def refines(self, coarser: Partition) -> bool:
        """Every cell (remainder included) lies inside one cell of ``coarser``."""
        if coarser.space is not self.space:
            return False
        for k in range(self.n_cells + 1):
            inside = np.unique(coarser.labels[self.labels == k])
            if inside.size > 1:
                return False
        return True

    def diameters(self) -> np.ndarray:
        out = np.zeros(self.n_cells + 1)
        for k in range(1, self.n_cells + 1):
            idx = np.flatnonzero(self.labels == k)
            out[k] = max(float(self.space.distances_from(i)[idx].max()) for i in idx)
        return out


def _cell_log_masses(m: DiscreteMeasure, G: Partition) -> np.ndarray:
    return np.array([log_total(m.log_weights[G.labels == k]) for k in range(G.n_cells + 1)])


def partition_entropy(nu: DiscreteMeasure, mu: DiscreteMeasure, G: Partition) -> float:
    """Relative entropy of the cell masses of ``ν`` and ``μ``."""
    nu.same_space(mu)
    if G.space is not nu.space:
        raise ValueError("partition of a different space")
    lv = _cell_log_masses(nu, G)
    lm = _cell_log_masses(mu, G)
    on = lv > -np.inf
    if np.any(lm[on] == -np.inf):
        return math.inf
    return max(0.0, math.fsum(np.exp(lv[on]) * (lv[on] - lm[on])))


# -- conditioning and projections -------------------------------------------
@dataclass(frozen=True)
class ConditioningTerms:
    """``H(ν^A|μ)`` together with the identity right-hand side and the upper bound."""

    value: float
    identity_rhs: float
    bound: float


def conditioning_terms(nu: DiscreteMeasure, mu: DiscreteMeasure, A: PointSet) -> ConditioningTerms:
    nu.same_space(mu)
    log_nu_a = nu.log_mass(A)
    if log_nu_a == -math.inf:
        raise ZeroMassError("ν(A) = 0")
    nu_a = math.exp(log_nu_a)
    value = relative_entropy(condition(nu, A), mu)
    sel = A.mask & (nu.log_weights > -np.inf)
    if np.any(mu.log_weights[sel] == -np.inf):
        identity = math.inf
    else:
        lv = nu.log_weights[sel]
        identity = -log_nu_a + math.fsum(np.exp(lv) * (lv - mu.log_weights[sel])) / nu_a
    h = relative_entropy(nu, mu)
    bound = -log_nu_a + h / nu_a + 1.0 - mu.mass(A) / nu_a
    return ConditioningTerms(value, identity, bound)


def conditioned_entropy(nu: DiscreteMeasure, mu: DiscreteMeasure, A: PointSet) -> float:
    """``H(ν^A|μ)``, checked against the conditioning identity and its upper bound.

    Raises
    ------
    ZeroMassError
        If ``ν(A) = 0``.
    InvariantViolation
        If the identity fails beyond 1e-10 (relative) or the bound is exceeded.
    """
    t = conditioning_terms(nu, mu, A)
    if math.isinf(t.value) or math.isinf(t.identity_rhs):
        if t.value != t.identity_rhs:
            raise InvariantViolation(f"conditioning identity: {t.value} vs {t.identity_rhs}")
    elif abs(t.value - t.identity_rhs) > _scaled(IDENTITY_TOL, t.value, t.identity_rhs):
        raise InvariantViolation(f"conditioning identity: {t.value!r} vs {t.identity_rhs!r}")
    if t.value > t.bound + _scaled(IDENTITY_TOL, t.value, t.bound):
        raise InvariantViolation(f"conditioning bound: {t.value!r} > {t.bound!r}")
    return t.value


def pushforward_entropy(lam: DiscreteMeasure, mu: DiscreteMeasure, theta) -> tuple[float, DiscreteMeasure | None]:
    """``min{H(ν|μ) : ν∘θ⁻¹ = λ} = H(λ|μ∘θ⁻¹)`` and its minimizer.

    The minimizer spreads ``λ(y)`` over the fiber ``θ⁻¹(y)`` proportionally to
    ``μ``. Returns ``(inf, None)`` when ``λ`` charges a ``μ``-null fiber.
    """
    idx = as_index_map(theta, mu.space, lam.space)
    if np.any(idx < 0):
        raise ValueError("map must be defined at every point")
    image = pushforward(mu, idx, lam.space)
    value = relative_entropy(lam, image)
    if math.isinf(value):
        return math.inf, None
    with np.errstate(invalid="ignore"):  # −inf − (−inf) on μ-null fibers, masked below
        lw = mu.log_weights + lam.log_weights[idx] - image.log_weights[idx]
    lw = np.where(mu.log_weights > -np.inf, lw, -np.inf)
    nu_bar = DiscreteMeasure.from_log_weights(mu.space, lw)
    check = relative_entropy(nu_bar, mu)
    if abs(check - value) > _scaled(IDENTITY_TOL, value):
        raise InvariantViolation(f"projection identity: {check!r} vs {value!r}")
    return value, nu_bar


def h4_bound(nu: DiscreteMeasure, mu: DiscreteMeasure, A: PointSet) -> float:
    """Upper bound ``(log 2 + H(ν|μ)) / log(1 + 1/μ(A))`` on ``ν(A)``."""
    h = relative_entropy(nu, mu)
    if math.isinf(h):
        raise ValueError("bound needs finite relative entropy")
    log_mu_a = mu.log_mass(A)
    if log_mu_a == -math.inf:
        raise ZeroMassError("μ(A) = 0")
    # log(1 + 1/m) = logaddexp(0, -log m), stable for tiny m
    return (math.log(2.0) + h) / float(np.logaddexp(0.0, -log_mu_a))


# -- refining partitions ----------------------------------------------------------
@dataclass(frozen=True, eq=False)
class PartitionSchedule:
    """Nested partitions, one per ``(δ, K)`` level, each refining the previous one."""

    deltas: tuple[float, ...]
    truncations: tuple[PointSet, ...]
    partitions: tuple[Partition, ...]

    def entropies(self, nu: DiscreteMeasure, mu: DiscreteMeasure) -> list[float]:
        return [partition_entropy(nu, mu, G) for G in self.partitions]

    def __len__(self) -> int:
        return len(self.partitions)


def _greedy_cells(space: MetricSpace, target: np.ndarray, delta: float) -> np.ndarray:
    """Cover ``target`` by cells of diameter ``< delta`` (complete linkage from a seed)."""
    labels = np.zeros(len(space), dtype=np.int64)
    free = target.copy()
    k = 0
    limit = delta - 1e-12 * max(1.0, delta)
    while free.any():
        seed = int(np.flatnonzero(free)[0])
        k += 1
        d_seed = space.distances_from(seed)
        order = np.flatnonzero(free)
        order = order[np.argsort(d_seed[order], kind="stable")]
        reach = d_seed.copy()
        for q in order:
            if reach[q] < limit or q == seed:
                labels[q] = k
                free[q] = False
                np.maximum(reach, space.distances_from(int(q)), out=reach)
            elif d_seed[q] >= limit:
                break
    return labels


def _common_refinement(new: np.ndarray, old: np.ndarray) -> np.ndarray:
    out = np.zeros_like(new)
    keys: dict[tuple[int, int], int] = {}
    for i, (a, b) in enumerate(zip(new.tolist(), old.tolist())):
        if a == 0:
            continue
        out[i] = keys.setdefault((a, b), len(keys) + 1)
    return out


def refining_partitions(space: MetricSpace, mu: DiscreteMeasure, nu: DiscreteMeasure,
                        delta_schedule: Sequence[float], K_schedule: Sequence[PointSet]) -> PartitionSchedule:
    """Nested partitions with cells of diameter below δ covering ``K``.

    Level ``j`` pairs ``δ_j`` with ``K_j``; the shorter schedule is padded with
    its last entry. Each level covers ``K_j`` plus every non-remainder cell of
    the previous level, so the remainder only shrinks and each partition
    refines its predecessor.
    """
    mu.same_space(nu)
    if mu.space is not space:
        raise ValueError("measures live on a different space")
    deltas = [float(d) for d in delta_schedule]
    ks = list(K_schedule)
    if not deltas or not ks:
        raise ScheduleError("need at least one δ and one truncation")
    if any(d <= 0 for d in deltas) or any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ScheduleError("δ schedule must be positive and strictly decreasing")
    for a, b in zip(ks, ks[1:]):
        if not a <= b:
            raise ScheduleError("truncations must be increasing")
    if not mu.support <= ks[-1]:
        raise ScheduleError("truncations never cover the support of μ")
    levels = max(len(deltas), len(ks))
    deltas += [deltas[-1]] * (levels - len(deltas))
    ks += [ks[-1]] * (levels - len(ks))
    parts: list[Partition] = []
    prev = np.zeros(len(space), dtype=np.int64)
    for delta, K in zip(deltas, ks):
        target = K.mask | (prev > 0)
        labels = _common_refinement(_greedy_cells(space, target, delta), prev)
        G = Partition(space, labels)
        if parts and not G.refines(parts[-1]):
            raise InvariantViolation("partition does not refine its predecessor")
        parts.append(G)
        prev = labels
    return PartitionSchedule(tuple(deltas), tuple(ks), tuple(parts))
