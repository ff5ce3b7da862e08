"""Contraction principle for possibly discontinuous maps between grids.

The generalized preimages of a target point ``y`` are

    Λ̲ʸ = lim_δ Interior(θ⁻¹(B_δ(y))),    Λ̄ʸ = lim_δ Closure(θ⁻¹(B_δ(y))).

On a grid, interior and closure peel off or add one layer of lattice
neighbours, but only across neighbour pairs where ``θ`` jumps, i.e.
``d_Y(θp, θq) > L·d_X(p, q)``. Across pairs where ``θ`` is ``L``-Lipschitz
the layer operations do nothing, so continuous maps recover plain preimages.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from ._family import DEFAULT_RANGE, IndexedFamily
from .errors import ScheduleError
from .gamma import (
    Functional,
    FunctionalSequence,
    as_window,
    check_deltas,
    equicoercivity_profile,
    gamma_estimates,
    gamma_field,
)
from .ld_rate import BASE_TOLERANCE, FAIL, PASS, Verdict
from .measure import as_index_map
from .metric_space import BOUNDARY_EPS, MetricSpace, PointSet

HYPOTHESIS_FAILED = "hypothesis-failed"


@dataclass(frozen=True, eq=False)
class GridMap:
    """A map ``θ: X → Y`` between finite spaces, stored as an index array.

    ``lipschitz`` is the constant ``L`` separating continuity from jumps
    across lattice neighbours of ``X``.
    """

    source: MetricSpace
    target: MetricSpace
    index: np.ndarray
    lipschitz: float = 1.0

    def __post_init__(self):
        idx = as_index_map(np.asarray(self.index), self.source, self.target)
        if np.any(idx < 0):
            raise ValueError("map must be defined at every source point")
        idx.setflags(write=False)
        object.__setattr__(self, "index", idx)
        if not self.lipschitz > 0:
            raise ValueError("Lipschitz constant must be positive")

    @classmethod
    def from_function(cls, source: MetricSpace, target: MetricSpace, fn: Callable[[np.ndarray], np.ndarray],
                      lipschitz: float = 1.0) -> GridMap:
        """Evaluate ``fn`` on source coordinates and snap each image to the nearest target point."""
        c = source.coords[:, 0] if source.coords.shape[1] == 1 else source.coords
        images = np.asarray(fn(c), dtype=float).reshape(len(source), -1)
        idx = np.array([int(np.argmin(target.distances_to(p if p.size > 1 else p[0]))) for p in images])
        return cls(source, target, idx, lipschitz)

    @classmethod
    def identity(cls, space: MetricSpace) -> GridMap:
        return cls(space, space, np.arange(len(space)))

    @classmethod
    def constant(cls, source: MetricSpace, target: MetricSpace, y) -> GridMap:
        return cls(source, target, np.full(len(source), target.index_of(y)))

    def preimage(self, B: PointSet) -> PointSet:
        if B.space is not self.target:
            raise ValueError("set lives outside the target space")
        return PointSet(self.source, B.mask[self.index])

    @cached_property
    def jump_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Lattice-neighbour pairs ``(p, q)`` (both orders) across which ``θ`` jumps."""
        h = self.source.resolution
        if h == 0:
            return np.empty(0, dtype=int), np.empty(0, dtype=int)
        ps, qs = [], []
        reach = h * (1.0 + 1e-9)
        for p in range(len(self.source)):
            dx = self.source.distances_from(p)
            nb = np.flatnonzero((dx <= reach) & (dx > 0))
            if nb.size == 0:
                continue
            dy = self.target.distances_from(int(self.index[p]))[self.index[nb]]
            jump = nb[dy > self.lipschitz * dx[nb] + BOUNDARY_EPS]
            ps.extend([p] * jump.size)
            qs.extend(jump.tolist())
        return np.array(ps, dtype=int), np.array(qs, dtype=int)

    def is_grid_lipschitz(self) -> bool:
        return self.jump_pairs[0].size == 0

    def interior(self, A: PointSet) -> PointSet:
        """Drop points of ``A`` with a jump-neighbour outside ``A``."""
        p, q = self.jump_pairs
        drop = np.zeros(len(self.source), dtype=bool)
        sel = A.mask[p] & ~A.mask[q]
        drop[p[sel]] = True
        return PointSet(self.source, A.mask & ~drop, "open")

    def closure(self, A: PointSet) -> PointSet:
        """Add points outside ``A`` with a jump-neighbour inside ``A``."""
        p, q = self.jump_pairs
        add = np.zeros(len(self.source), dtype=bool)
        sel = A.mask[p] & ~A.mask[q]
        add[q[sel]] = True
        return PointSet(self.source, A.mask | add, "closed")

    def sup_distance(self, other: GridMap, on: PointSet | None = None) -> float:
        """``sup_x d_Y(θ(x), θ'(x))`` over ``on`` (default: all of ``X``)."""
        if other.source is not self.source or other.target is not self.target:
            raise ValueError("maps have different domains or codomains")
        mask = np.ones(len(self.source), dtype=bool) if on is None else on.mask
        best = 0.0
        for a, b in zip(self.index[mask], other.index[mask]):
            if a != b:
                best = max(best, float(self.target.distances_from(int(a))[int(b)]))
        return best


def _target_ball(theta: GridMap, y, delta: float) -> PointSet:
    d = theta.target.distances_to(y)
    return PointSet(theta.target, d < delta - BOUNDARY_EPS * max(1.0, delta))


def _lambda_schedule(theta: GridMap, y, delta_schedule) -> tuple[float, ...]:
    deltas = check_deltas(delta_schedule)
    theta.target.index_of(y)  # raises if y is not a target point
    if deltas[-1] >= theta.target.separation:
        raise ScheduleError(
            f"δ schedule must reach below the target separation {theta.target.separation:g}"
        )
    return deltas


def lambda_sets(theta: GridMap, y, delta_schedule) -> tuple[list[PointSet], list[PointSet]]:
    """Interior and closure of ``θ⁻¹(B_δ(y))`` for every δ in the schedule."""
    deltas = _lambda_schedule(theta, y, delta_schedule)
    lows, ups = [], []
    for d in deltas:
        pre = theta.preimage(_target_ball(theta, y, d))
        lows.append(theta.interior(pre))
        ups.append(theta.closure(pre))
    return lows, ups


def lambda_lower(theta: GridMap, y, delta_schedule) -> PointSet:
    """Stabilized ``Interior(θ⁻¹(B_δ(y)))``: the value at the smallest δ."""
    return lambda_sets(theta, y, delta_schedule)[0][-1]


def lambda_upper(theta: GridMap, y, delta_schedule) -> PointSet:
    """Stabilized ``Closure(θ⁻¹(B_δ(y)))``: the value at the smallest δ."""
    return lambda_sets(theta, y, delta_schedule)[1][-1]


def contracted_rates(I_lower: Functional, I_upper: Functional, theta: GridMap, y, delta_schedule) -> tuple[float, float]:
    """``(J̄(y), J̲(y))``: min of ``I_lower`` over ``Λ̲ʸ`` and of ``I_upper`` over ``Λ̄ʸ`` (inf ∅ = +inf)."""
    for I in (I_lower, I_upper):
        if I.space is not theta.source:
            raise ValueError("rate lives outside the source space")
    lows, ups = lambda_sets(theta, y, delta_schedule)
    return I_lower.min_over(lows[-1]), I_upper.min_over(ups[-1])


class MapSequence(IndexedFamily[GridMap]):
    """Maps ``θ_n: X → Y`` on a fixed domain grid, with their limit ``θ``."""

    def __init__(self, evaluator: Callable[[int], GridMap], limit: GridMap,
                 n_range: tuple[int, int] = DEFAULT_RANGE, compacts: Sequence[PointSet] = (), name: str = ""):
        super().__init__(evaluator, n_range, name)
        self.limit = limit
        self.compacts = tuple(compacts) or (PointSet.full(limit.source),)

    def _validate(self, n: int, value) -> None:
        if not isinstance(value, GridMap):
            raise TypeError("evaluator must return a GridMap")
        if value.source is not self.limit.source or value.target is not self.limit.target:
            raise ValueError("θ_n must share the domain and codomain of the limit map")

    def certificate(self, n_window) -> np.ndarray:
        """Rows per compact, columns per n: ``sup_K d_Y(θ_n, θ)``."""
        ns = as_window(n_window).ns.tolist()
        return np.array([[self(n).sup_distance(self.limit, K) for n in ns] for K in self.compacts])

    def certificate_ok(self, n_window) -> bool:
        cert = self.certificate(n_window)
        return bool(np.all(np.diff(cert, axis=1) <= 1e-12) and np.all(cert[:, -1] <= 1e-12))


@dataclass(frozen=True)
class ContractionCheck:
    """Margins of ``Γ-limsup J_n ≤ J̄`` and ``Γ-liminf J_n ≥ J̲`` at ``y``."""

    upper: Verdict
    lower: Verdict
    J_bar: float
    J_under: float
    equicoercive: bool
    certificate_ok: bool

    def to_dict(self) -> dict:
        return {
            "upper": self.upper.to_dict(),
            "lower": self.lower.to_dict(),
            "J_bar": _num(self.J_bar),
            "J_under": _num(self.J_under),
            "equicoercive_at_horizon": self.equicoercive,
            "uniform_convergence_certificate": self.certificate_ok,
        }


def _num(v: float):
    return ("inf" if v > 0 else "-inf") if math.isinf(v) else v


def fiber_minima(I: Functional, theta: GridMap) -> Functional:
    """``J(y) = min{I(x) : θ(x) = y}`` with ``+inf`` on empty fibers."""
    out = np.full(len(theta.target), np.inf)
    np.minimum.at(out, theta.index, I.values)
    return Functional(theta.target, out)


def gamma_contraction_check(I_seq: FunctionalSequence, maps: MapSequence, y, schedules: dict,
                            threads: int | None = None) -> ContractionCheck:
    """Check the Γ-limit inequalities for ``J_n(y) = min over θ_n⁻¹(y) of I_n``.

    ``schedules`` keys: ``window``; ``source_deltas`` (Γ-limits of ``I_n``
    on ``X``); ``target_deltas`` (Γ-limits of ``J_n`` at ``y``);
    ``lambda_deltas`` (generalized preimages); ``levels`` and
    ``truncations`` for the equicoercivity profile; optional ``tolerance``.
    The lower inequality is only asserted when the profile finds ``(I_n)``
    equicoercive; otherwise it is reported as hypothesis-failed.
    """
    window = schedules["window"]
    theta = maps.limit
    X = theta.source
    base = BASE_TOLERANCE if schedules.get("tolerance") is None else float(schedules["tolerance"])

    field_ = gamma_field(I_seq, X, schedules["source_deltas"], window, threads)
    J_bar, J_under = contracted_rates(field_.limsup, field_.liminf, theta, y, schedules["lambda_deltas"])

    J_seq = FunctionalSequence(lambda n: fiber_minima(I_seq(n), maps(n)), I_seq.n_range)
    lo, hi = gamma_estimates(J_seq, y, schedules["target_deltas"], window, threads)
    inc = max([v for v in (field_.increment, lo.last_step_increment, hi.last_step_increment) if math.isfinite(v)],
              default=0.0)
    tol = base + inc

    up_margin = 0.0 if J_bar == hi.value else J_bar - hi.value
    upper = Verdict(PASS if up_margin >= -tol else FAIL, up_margin, hi.value, J_bar, tol)

    report = equicoercivity_profile(I_seq, schedules.get("levels", (1.0,)),
                                    schedules.get("truncations", [PointSet.full(X)]), window, threads)
    low_margin = 0.0 if lo.value == J_under else lo.value - J_under
    if report.equicoercive:
        lower = Verdict(PASS if low_margin >= -tol else FAIL, low_margin, lo.value, J_under, tol)
    else:
        lower = Verdict(HYPOTHESIS_FAILED, low_margin, lo.value, J_under, tol,
                        {"reason": "sublevel sets escape every truncation"})
    return ContractionCheck(upper, lower, J_bar, J_under, report.equicoercive, maps.certificate_ok(window))


# -- export ---------------------------------------------------------------------
def lambda_sets_json(theta: GridMap, y, delta_schedule) -> str:
    lows, ups = lambda_sets(theta, y, delta_schedule)
    return json.dumps({"y": theta.target.ids[theta.target.index_of(y)],
                       "lambda_lower": lows[-1].ids, "lambda_upper": ups[-1].ids})


def contracted_rate_rows(I_lower: Functional, I_upper: Functional, theta: GridMap, delta_schedule) -> list[list[str]]:
    """CSV rows ``(y, J̄, J̲)`` for every target point."""
    rows = [["y", "J_bar", "J_under"]]
    for j, yid in enumerate(theta.target.ids):
        jb, ju = contracted_rates(I_lower, I_upper, theta, yid, delta_schedule)
        rows.append([yid, repr(jb) if math.isfinite(jb) else "inf", repr(ju) if math.isfinite(ju) else "inf"])
    return rows
