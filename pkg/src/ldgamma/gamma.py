"""Γ-liminf / Γ-limsup estimation by localized infima over shrinking balls.

For a sequence of functionals ``I_n`` on grids ``G_n`` inside a common ambient
space, the lower and upper Γ-limits at ``x`` are

    lim_{δ↓0} liminf_n / limsup_n  inf{ I_n(y) : y ∈ G_n, d(x, y) < δ }.

Both limits over ``n`` are rendered on a finite window: the trace matrix holds
the min (liminf) or max (limsup) of the localized infima over every tail
sub-window, and the reported value is the corner at the smallest δ and the
tail half of the window.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from ._family import DEFAULT_RANGE, IndexedFamily
from ._parallel import ordered_map
from .errors import ScheduleError
from .metric_space import BOUNDARY_EPS, MetricSpace, PointSet

LIMINF = "liminf-window"
LIMSUP = "limsup-window"
MAX_COLUMNS = 21


@dataclass(frozen=True, eq=False)
class Functional:
    """Extended-real values on the points of a space (``+inf`` allowed, NaN not)."""

    space: MetricSpace
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (len(self.space),):
            raise ValueError("one value per point is required")
        if np.any(np.isnan(v)):
            raise ValueError("functional values must not be NaN")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, space: MetricSpace, c: float) -> Functional:
        return cls(space, np.full(len(space), float(c)))

    @classmethod
    def from_function(cls, space: MetricSpace, fn: Callable[[np.ndarray], np.ndarray]) -> Functional:
        """Evaluate ``fn`` on the coordinate array (shape ``(N, dim)``, squeezed in 1D)."""
        if not space.has_coords:
            raise ValueError("space has no coordinates")
        c = space.coords[:, 0] if space.coords.shape[1] == 1 else space.coords
        return cls(space, np.broadcast_to(np.asarray(fn(c), dtype=float), (len(space),)))

    def __call__(self, point) -> float:
        return float(self.values[self.space.index_of(point)])

    def __len__(self) -> int:
        return len(self.space)

    def min_over(self, A: PointSet) -> float:
        if A.is_empty():
            return math.inf
        return float(self.values[A.mask].min())

    def is_nonnegative(self) -> bool:
        return bool(np.all(self.values >= 0))


class FunctionalSequence(IndexedFamily[Functional]):
    """Lazily evaluated family ``n ↦ I_n``, each member carrying its own grid ``G_n``.

    Members must be ``[0, +inf]``-valued unless ``signed`` is set (test
    functions such as ``φ_n`` may be negative).
    """

    def __init__(self, evaluator: Callable[[int], Functional], n_range: tuple[int, int] = DEFAULT_RANGE,
                 *, signed: bool = False, name: str = ""):
        super().__init__(evaluator, n_range, name)
        self.signed = signed

    def _validate(self, n: int, value) -> None:
        if not isinstance(value, Functional):
            raise TypeError("evaluator must return a Functional")
        if not self.signed and not value.is_nonnegative():
            raise ValueError(f"I_{n} takes negative values")

    @classmethod
    def constant(cls, I: Functional, n_range: tuple[int, int] = DEFAULT_RANGE) -> FunctionalSequence:
        return cls(lambda n: I, n_range, signed=not I.is_nonnegative())


@dataclass(frozen=True)
class Window:
    """Indices ``start, start + step, ...`` up to and including ``stop``."""

    start: int
    stop: int
    step: int = 1

    def __post_init__(self):
        if self.start < 1 or self.stop < self.start or self.step < 1:
            raise ScheduleError(f"invalid n-window [{self.start}, {self.stop}] step {self.step}")

    @property
    def ns(self) -> np.ndarray:
        ns = np.arange(self.start, self.stop + 1, self.step)
        return ns if ns[-1] == self.stop else np.append(ns, self.stop)

    @property
    def tail_start(self) -> int:
        ns = self.ns
        return int(ns[np.searchsorted(ns, 0.5 * (self.start + self.stop))])

    def starts(self, max_columns: int = MAX_COLUMNS) -> np.ndarray:
        """Window-start columns of the trace, ending at the tail start."""
        ns = self.ns
        head = ns[: int(np.searchsorted(ns, self.tail_start)) + 1]
        if head.size > max_columns:
            pick = np.unique(np.round(np.linspace(0, head.size - 1, max_columns)).astype(int))
            head = head[pick]
        return head


def as_window(spec) -> Window:
    if isinstance(spec, Window):
        return spec
    spec = tuple(int(v) for v in spec)
    if len(spec) not in (2, 3):
        raise ScheduleError("n-window must be (start, stop) or (start, stop, step)")
    return Window(*spec)


def check_deltas(deltas: Sequence[float]) -> tuple[float, ...]:
    d = tuple(float(v) for v in deltas)
    if not d:
        raise ScheduleError("empty δ schedule")
    if any(not (v > 0 and math.isfinite(v)) for v in d):
        raise ScheduleError("δ values must be positive and finite")
    if any(b >= a for a, b in zip(d, d[1:])):
        raise ScheduleError("δ schedule must be strictly decreasing")
    return d


def check_resolution(deltas: Sequence[float], resolution: float, factor: float = 2.0) -> None:
    if min(deltas) < factor * resolution * (1 - 1e-9):
        raise ScheduleError(
            f"smallest δ={min(deltas):g} is below {factor:g}× the grid resolution {resolution:g}"
        )


@dataclass(frozen=True, eq=False)
class LimitEstimate:
    """Scalar limit estimate with its schedule and convergence trace.

    ``raw[i, k]`` is the per-index quantity at ``deltas[i]`` and ``ns[k]``;
    ``trace[i, j]`` aggregates ``raw[i]`` over ``n ≥ starts[j]`` with min
    (liminf variant) or max (limsup variant).
    """

    value: float
    variant: str
    deltas: tuple[float, ...]
    ns: tuple[int, ...]
    starts: tuple[int, ...]
    trace: np.ndarray
    raw: np.ndarray
    witnesses: np.ndarray | None = None
    flags: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    @property
    def window(self) -> tuple[int, int]:
        return self.ns[0], self.ns[-1]

    @property
    def last_step_increment(self) -> float:
        """Change of the tail-window column between the last two δ values."""
        if len(self.deltas) < 2:
            return 0.0
        a, b = self.trace[-2, -1], self.trace[-1, -1]
        if a == b:
            return 0.0
        return abs(b - a) if math.isfinite(a) and math.isfinite(b) else math.inf

    @property
    def settling(self) -> float:
        """Last-step increment: along δ when there are several, else along window starts."""
        if len(self.deltas) >= 2:
            return self.last_step_increment
        if len(self.starts) < 2:
            return 0.0
        a, b = self.trace[-1, -2], self.trace[-1, -1]
        if a == b:
            return 0.0
        return abs(b - a) if math.isfinite(a) and math.isfinite(b) else math.inf

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "value": _json_num(self.value),
            "deltas": list(self.deltas),
            "n_window": [int(self.ns[0]), int(self.ns[-1])],
            "starts": [int(s) for s in self.starts],
            "last_step_increment": _json_num(self.last_step_increment),
            "flags": list(self.flags),
        }

    def trace_rows(self) -> list[list[str]]:
        header = ["delta"] + [f"n>={s}" for s in self.starts]
        rows = [header]
        for d, row in zip(self.deltas, self.trace):
            rows.append([repr(d)] + [_csv_num(v) for v in row])
        return rows

    def write_trace_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(self.trace_rows())

    def scaled(self, c: float) -> LimitEstimate:
        """Same estimate with every entry multiplied by ``c > 0``."""
        return LimitEstimate(self.value * c, self.variant, self.deltas, self.ns, self.starts,
                             self.trace * c, self.raw * c, self.witnesses, self.flags, dict(self.meta))


def _json_num(v: float):
    if math.isnan(v):
        raise ValueError("NaN in report")
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


def _csv_num(v: float) -> str:
    return "inf" if v == math.inf else "-inf" if v == -math.inf else repr(float(v))


def assemble(raw: np.ndarray, ns: np.ndarray, starts: np.ndarray, variant: str, deltas: Sequence[float],
             witnesses: np.ndarray | None = None, flags: Iterable[str] = (), meta: dict | None = None) -> LimitEstimate:
    """Aggregate a ``(δ, n)`` matrix into a windowed limit estimate."""
    raw = np.asarray(raw, dtype=float)
    if np.any(np.isnan(raw)):
        raise ValueError("NaN in per-index values")
    if variant == LIMINF:
        suffix = np.minimum.accumulate(raw[:, ::-1], axis=1)[:, ::-1]
    elif variant == LIMSUP:
        suffix = np.maximum.accumulate(raw[:, ::-1], axis=1)[:, ::-1]
    else:
        raise ValueError(f"unknown variant {variant!r}")
    cols = np.searchsorted(ns, starts)
    trace = suffix[:, cols]
    raw = raw.copy()
    raw.setflags(write=False)
    trace.setflags(write=False)
    return LimitEstimate(float(trace[-1, -1]), variant, tuple(float(d) for d in deltas),
                         tuple(int(n) for n in ns), tuple(int(s) for s in starts), trace, raw,
                         witnesses, tuple(flags), meta or {})


def localized_estimates(provider: Callable[[int], tuple[np.ndarray, np.ndarray | None]], deltas: Sequence[float],
                        window, threads: int | None = None, flags: Iterable[str] = ()) -> tuple[LimitEstimate, LimitEstimate]:
    """Run ``provider(n) -> (values per δ, witnesses per δ or None)`` over a window.

    Returns the ``(liminf, limsup)`` pair built from one shared raw matrix.
    """
    deltas = check_deltas(deltas)
    w = as_window(window)
    ns = w.ns
    results = ordered_map(provider, ns.tolist(), threads)
    raw = np.column_stack([np.asarray(r[0], dtype=float) for r in results]) if results else np.empty((len(deltas), 0))
    wit = None
    if results and results[0][1] is not None:
        wit = np.column_stack([np.asarray(r[1]) for r in results])
        wit.setflags(write=False)
    flags = tuple(flags)
    if np.any(raw == math.inf):
        flags += ("empty-or-null-ball",)
    starts = w.starts()
    return (assemble(raw, ns, starts, LIMINF, deltas, wit, flags),
            assemble(raw, ns, starts, LIMSUP, deltas, wit, flags))


def ball_infima(I: Functional, x, deltas: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """``inf`` of ``I`` over open balls ``B_δ(x)`` and an index attaining it (``-1`` if empty)."""
    d = I.space.distances_to(x)
    order = np.argsort(d, kind="stable")
    ds = d[order]
    # running minimum along increasing distance gives every ball at once
    vals = I.values[order]
    run = np.minimum.accumulate(vals)
    improved = np.ones(len(vals), dtype=bool)
    improved[1:] = run[1:] < run[:-1]
    arg = np.maximum.accumulate(np.where(improved, np.arange(len(vals)), 0))
    out = np.empty(len(deltas))
    wit = np.empty(len(deltas), dtype=np.int64)
    for i, delta in enumerate(deltas):
        cnt = int(np.searchsorted(ds, delta - BOUNDARY_EPS * max(1.0, delta), side="left"))
        if cnt == 0:
            out[i], wit[i] = math.inf, -1
        else:
            out[i], wit[i] = run[cnt - 1], order[arg[cnt - 1]]
    return out, wit


def gamma_estimates(seq: FunctionalSequence, x, delta_schedule, n_window, threads: int | None = None,
                    check_grid: bool = True) -> tuple[LimitEstimate, LimitEstimate]:
    """``(Γ-liminf, Γ-limsup)`` estimates at the ambient point ``x``."""
    deltas = check_deltas(delta_schedule)
    resolutions = []

    def provider(n: int):
        I = seq(n)
        resolutions.append(I.space.resolution)
        return ball_infima(I, x, deltas)

    lo, hi = localized_estimates(provider, deltas, n_window, threads)
    if check_grid and resolutions:
        check_resolution(deltas, max(resolutions))
    return lo, hi


def gamma_liminf(seq: FunctionalSequence, x, delta_schedule, n_window, threads: int | None = None) -> LimitEstimate:
    return gamma_estimates(seq, x, delta_schedule, n_window, threads)[0]


def gamma_limsup(seq: FunctionalSequence, x, delta_schedule, n_window, threads: int | None = None) -> LimitEstimate:
    return gamma_estimates(seq, x, delta_schedule, n_window, threads)[1]


@dataclass(frozen=True, eq=False)
class GammaField:
    """Γ-limit estimates at every point of a fixed space."""

    liminf: Functional
    limsup: Functional
    increment: float


def _ball_masks(space: MetricSpace, delta: float) -> np.ndarray:
    d = space.dist
    return d < delta - BOUNDARY_EPS * max(1.0, delta)


def gamma_field(seq: FunctionalSequence, space: MetricSpace, delta_schedule, n_window,
                threads: int | None = None) -> GammaField:
    """Γ-liminf and Γ-limsup estimates at all points of ``space``.

    When every ``G_n`` is ``space`` itself the ball infima are vectorized;
    otherwise each point is estimated separately.
    """
    deltas = check_deltas(delta_schedule)
    w = as_window(n_window)
    ns = w.ns.tolist()
    fns = ordered_map(seq, ns, threads)
    if all(f.space is space for f in fns):
        check_resolution(deltas, space.resolution)
        masks = [_ball_masks(space, d) for d in deltas]
        raw = np.empty((len(space), len(deltas), len(ns)))
        for k, f in enumerate(fns):
            for i, m in enumerate(masks):
                raw[:, i, k] = np.where(m, f.values[None, :], np.inf).min(axis=1)
        starts = w.starts()
        lo_vals, hi_vals, inc = np.empty(len(space)), np.empty(len(space)), 0.0
        for p in range(len(space)):
            lo = assemble(raw[p], w.ns, starts, LIMINF, deltas)
            hi = assemble(raw[p], w.ns, starts, LIMSUP, deltas)
            lo_vals[p], hi_vals[p] = lo.value, hi.value
            inc = max(inc, _finite_or_zero(lo.last_step_increment), _finite_or_zero(hi.last_step_increment))
        return GammaField(Functional(space, lo_vals), Functional(space, hi_vals), inc)
    lo_vals, hi_vals, inc = np.empty(len(space)), np.empty(len(space)), 0.0
    for p in range(len(space)):
        x = space.point(p)
        lo, hi = gamma_estimates(seq, x, deltas, w, threads)
        lo_vals[p], hi_vals[p] = lo.value, hi.value
        inc = max(inc, _finite_or_zero(lo.last_step_increment), _finite_or_zero(hi.last_step_increment))
    return GammaField(Functional(space, lo_vals), Functional(space, hi_vals), inc)


def _finite_or_zero(v: float) -> float:
    return v if math.isfinite(v) else 0.0


# -- equicoercivity --------------------------------------------------------------
Truncation = Callable[[MetricSpace], np.ndarray]


def box_truncations(radii: Sequence[float]) -> list[Truncation]:
    """Truncations ``{|x|_∞ ≤ r}`` for increasing radii, usable on any coordinate grid."""
    radii = [float(r) for r in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must increase")

    def make(r: float) -> Truncation:
        def trunc(space: MetricSpace) -> np.ndarray:
            return np.max(np.abs(space.coords), axis=1) <= r + BOUNDARY_EPS * max(1.0, r)
        trunc.radius = r
        return trunc

    return [make(r) for r in radii]


def _truncation_mask(trunc, space: MetricSpace) -> np.ndarray:
    if isinstance(trunc, PointSet):
        if trunc.space is not space:
            raise ValueError("PointSet truncation used on a different grid")
        return trunc.mask
    return np.asarray(trunc(space), dtype=bool)


@dataclass(frozen=True)
class EquicoercivityReport:
    """For each level, the smallest truncation holding every sublevel set (None if none does)."""

    levels: tuple[float, ...]
    indices: tuple[int | None, ...]
    window: tuple[int, int]

    @property
    def equicoercive(self) -> bool:
        return all(i is not None for i in self.indices)

    def to_dict(self) -> dict:
        return {
            "levels": list(self.levels),
            "truncation_index": [("unbounded" if i is None else i) for i in self.indices],
            "equicoercive_at_horizon": self.equicoercive,
            "n_window": list(self.window),
        }


def equicoercivity_profile(seq: FunctionalSequence, levels: Sequence[float], truncations: Sequence,
                           n_window, threads: int | None = None) -> EquicoercivityReport:
    """Smallest truncation containing ``∪_n {I_n ≤ ℓ}`` over the window, per level."""
    w = as_window(n_window)
    ns = w.ns.tolist()
    levels = tuple(float(l) for l in levels)

    def per_n(n: int) -> list[int | None]:
        I = seq(n)
        masks = [_truncation_mask(t, I.space) for t in truncations]
        out = []
        for lev in levels:
            sub = I.values <= lev
            idx = next((k for k, m in enumerate(masks) if not np.any(sub & ~m)), None)
            out.append(idx)
        return out

    per = ordered_map(per_n, ns, threads)
    indices = []
    for j in range(len(levels)):
        col = [p[j] for p in per]
        indices.append(None if any(c is None for c in col) else max(col))
    return EquicoercivityReport(levels, tuple(indices), (ns[0], ns[-1]))


def lsc_envelope(I: Functional, space: MetricSpace, delta_schedule) -> Functional:
    """Ball-infimum envelope ``x ↦ inf{I(y) : d(x, y) < δ_min}``."""
    if I.space is not space:
        raise ValueError("functional lives on a different space")
    deltas = check_deltas(delta_schedule)
    check_resolution(deltas, space.resolution, factor=1.0)
    delta = deltas[-1]
    out = np.empty(len(space))
    for p in range(len(space)):
        m = space.distances_from(p) < delta - BOUNDARY_EPS * max(1.0, delta)
        out[p] = I.values[m].min()
    return Functional(space, out)
