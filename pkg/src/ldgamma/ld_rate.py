"""Large-deviation bounds, tightness profiles and three estimators of the rate.

The optimal rates at ``x`` are estimated three ways, all on the same window
semantics as :mod:`ldgamma.gamma`:

* ball: ``lim_δ lim{sup,inf}_n −(1/a_n) log μ_n(B_δ(x))``;
* entropy: Γ-limits of ``ν ↦ (1/a_n) H(ν|μ_n)`` at the Dirac mass ``δ_x``;
* set-map: Γ-limits of ``K ↦ −(1/a_n) log μ_n(K)`` on the Hausdorff hyperspace.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from ._family import DEFAULT_RANGE, IndexedFamily
from ._parallel import ordered_map
from .errors import EnumerationCapError, ScheduleError
from .gamma import (
    LIMINF,
    LIMSUP,
    Functional,
    FunctionalSequence,
    LimitEstimate,
    as_window,
    assemble,
    ball_infima,
    check_deltas,
    check_resolution,
    gamma_field,
    localized_estimates,
    lsc_envelope,
)
from .measure import DiscreteMeasure
from .metric_space import (
    BOUNDARY_EPS,
    HyperSpace,
    MetricSpace,
    PointSet,
    compact_space,
    enlargement,
)

#: Base tolerance of bound verdicts; the estimate's last-step increment is added.
BASE_TOLERANCE = 5e-2
SIMPLEX_CAP = 200_000

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"


# -- index families ------------------------------------------------------------
class Speed:
    """Speed sequence ``n ↦ a_n > 0`` with a growth tag.

    ``growth="unbounded"`` declares ``a_n`` nondecreasing from ``n0`` on and
    divergent; :meth:`validate` checks that on a window.
    """

    def __init__(self, evaluator: Callable[[int], float], growth: str = "unbounded", n0: int = 1, name: str = ""):
        if growth not in ("bounded", "unbounded"):
            raise ValueError("growth tag must be 'bounded' or 'unbounded'")
        self._evaluator = evaluator
        self.growth = growth
        self.n0 = int(n0)
        self.name = name

    def __call__(self, n: int) -> float:
        a = float(self._evaluator(int(n)))
        if not (a > 0 and math.isfinite(a)):
            raise ValueError(f"a_{n} = {a!r} is not a positive real")
        return a

    def __repr__(self) -> str:
        return f"Speed({self.name or '<fn>'}, {self.growth})"

    def validate(self, window) -> None:
        ns = [n for n in as_window(window).ns.tolist() if n >= self.n0]
        vals = [self(n) for n in ns]
        if self.growth == "unbounded" and len(vals) >= 2:
            if any(b < a for a, b in zip(vals, vals[1:])):
                raise ScheduleError(f"speed {self.name} is not nondecreasing on the window")
            if not vals[-1] > vals[0]:
                raise ScheduleError(f"speed {self.name} does not grow on the window")

    def scaled(self, c: float) -> Speed:
        return Speed(lambda n: c * self._evaluator(n), self.growth, self.n0, f"{c}*{self.name}")

    @classmethod
    def linear(cls) -> Speed:
        return cls(float, "unbounded", name="n")

    @classmethod
    def power(cls, p: float) -> Speed:
        return cls(lambda n: float(n) ** p, "unbounded" if p > 0 else "bounded", name=f"n^{p}")

    @classmethod
    def constant(cls, c: float) -> Speed:
        return cls(lambda n: float(c), "bounded", name=str(c))


class MeasureSequence(IndexedFamily[DiscreteMeasure]):
    """Lazily evaluated family ``n ↦ μ_n`` on grids ``G_n``, with an optional limit."""

    def __init__(self, evaluator: Callable[[int], DiscreteMeasure], n_range: tuple[int, int] = DEFAULT_RANGE,
                 limit: DiscreteMeasure | None = None, name: str = ""):
        super().__init__(evaluator, n_range, name)
        self.limit = limit

    def _validate(self, n: int, value) -> None:
        if not isinstance(value, DiscreteMeasure):
            raise TypeError("evaluator must return a DiscreteMeasure")

    def fixed_space(self, window) -> MetricSpace | None:
        """The common grid of the window, or None if the grids change with n."""
        ns = as_window(window).ns
        first = self(int(ns[0])).space
        return first if all(self(int(n)).space is first for n in (ns[len(ns) // 2], ns[-1])) else None


# -- verdicts -------------------------------------------------------------------
@dataclass(frozen=True)
class Verdict:
    """Outcome of a diagnostic check with its margin (positive is comfortable)."""

    status: str
    margin: float
    lhs: float
    rhs: float
    tolerance: float
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "margin": _num(self.margin),
            "lhs": _num(self.lhs),
            "rhs": _num(self.rhs),
            "tolerance": _num(self.tolerance),
            **{k: v for k, v in self.details.items()},
        }


def _num(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _diff(a: float, b: float) -> float:
    """``a − b`` in extended reals with ``inf − inf`` read as 0."""
    if a == b:
        return 0.0
    return a - b


def _verdict(margin: float, lhs: float, rhs: float, tol: float, **details) -> Verdict:
    status = PASS if margin >= -tol else FAIL
    return Verdict(status, float(margin), float(lhs), float(rhs), float(tol), details)


# -- set maps -------------------------------------------------------------------
def setmap_l(a: float, mu: DiscreteMeasure, K: PointSet) -> float:
    """``−(1/a) log μ(K)``; ``+inf`` when ``μ(K) = 0``."""
    if not a > 0:
        raise ValueError("speed must be positive")
    if K.is_empty():
        raise ValueError("set map needs a nonempty set")
    lm = mu.log_mass(K)
    return math.inf if lm == -math.inf else max(0.0, -lm / a)


def setmap_lI(I: Functional, K: PointSet) -> float:
    """``min_K I``."""
    if K.is_empty():
        raise ValueError("set map needs a nonempty set")
    if K.space is not I.space:
        raise ValueError("set and functional live on different spaces")
    return float(I.values[K.mask].min())


# -- ball representation ----------------------------------------------------------------
def _ball_rates(mu: DiscreteMeasure, a: float, x, deltas: Sequence[float]) -> np.ndarray:
    d = mu.space.distances_to(x)
    out = np.empty(len(deltas))
    for i, delta in enumerate(deltas):
        lm = mu.log_mass(d < delta - BOUNDARY_EPS * max(1.0, delta))
        out[i] = math.inf if lm == -math.inf else max(0.0, -lm / a)
    return out


def estimate_rate_ball(seq: MeasureSequence, speed: Speed, x, delta_schedule, n_window,
                       threads: int | None = None) -> tuple[LimitEstimate, LimitEstimate]:
    """``(limsup, liminf)`` window estimates of ``−(1/a_n) log μ_n(B_δ(x))``."""
    deltas = check_deltas(delta_schedule)
    speed.validate(n_window)
    res = []

    def provider(n: int):
        mu = seq(n)
        res.append(mu.space.resolution)
        return _ball_rates(mu, speed(n), x, deltas), None

    lo, hi = localized_estimates(provider, deltas, n_window, threads)
    check_resolution(deltas, max(res))
    if np.all(lo.raw == math.inf):
        lo = _flag(lo, "null-ball-throughout")
        hi = _flag(hi, "null-ball-throughout")
    return hi, lo


def _flag(est: LimitEstimate, flag: str) -> LimitEstimate:
    return LimitEstimate(est.value, est.variant, est.deltas, est.ns, est.starts, est.trace, est.raw,
                         est.witnesses, est.flags + (flag,), est.meta)


def ball_indicator_family(seq: MeasureSequence, speed: Speed, x, delta: float) -> FunctionalSequence:
    """The optimal test family ``V_n = −(1/a_n) log μ_n(B_δ(x))`` on the ball, ``−inf`` off it.

    Each member satisfies ``μ_n(e^{a_n V_n}) = 1``.
    """

    def ev(n: int) -> Functional:
        mu = seq(n)
        inside = mu.space.distances_to(x) < delta - BOUNDARY_EPS * max(1.0, delta)
        rate = _ball_rates(mu, speed(n), x, [delta])[0]
        return Functional(mu.space, np.where(inside, rate, -np.inf))

    return FunctionalSequence(ev, seq.n_range, signed=True)


# -- bound checks ------------------------------------------------------------------------
def _scaled_log_mass(seq: MeasureSequence, speed: Speed, n_window, set_for: Callable[[DiscreteMeasure], np.ndarray],
                     variant: str, threads: int | None) -> LimitEstimate:
    w = as_window(n_window)

    def provider(n: int):
        mu = seq(n)
        return mu.log_mass(set_for(mu)) / speed(n)

    # single pseudo-δ row: no localization
    raw = np.array([ordered_map(provider, w.ns.tolist(), threads)])
    return assemble(raw, w.ns, w.starts(), variant, (math.inf,))


def _fixed_set(A: PointSet):
    def pick(mu: DiscreteMeasure) -> np.ndarray:
        if mu.space is not A.space:
            raise ValueError("set lives on a different grid than μ_n")
        return A.mask
    return pick


def _tolerance(tolerance: float | None, *increments: float) -> float:
    base = BASE_TOLERANCE if tolerance is None else float(tolerance)
    inc = [v for v in increments if math.isfinite(v)]
    return base + (max(inc) if inc else 0.0)


def check_lower_bound(seq: MeasureSequence, speed: Speed, I: Functional, O: PointSet, n_window,
                      tolerance: float | None = None, threads: int | None = None) -> Verdict:
    """``liminf_n (1/a_n) log μ_n(O) ≥ −min_O I`` for an open set ``O``."""
    if O.tag != "open":
        raise ValueError("lower bound needs a set tagged open")
    speed.validate(n_window)
    est = _scaled_log_mass(seq, speed, n_window, _fixed_set(O), LIMINF, threads)
    rhs = -I.min_over(O) if not O.is_empty() else -math.inf
    lhs = est.value
    tol = _tolerance(tolerance, est.settling)
    return _verdict(_diff(lhs, rhs), lhs, rhs, tol, estimate=est.to_dict())


def check_upper_bound(seq: MeasureSequence, speed: Speed, I: Functional, K: PointSet, n_window,
                      tolerance: float | None = None, threads: int | None = None) -> Verdict:
    """``limsup_n (1/a_n) log μ_n(K) ≤ −min_K I`` for a compact ``K``."""
    speed.validate(n_window)
    est = _scaled_log_mass(seq, speed, n_window, _fixed_set(K), LIMSUP, threads)
    rhs = -I.min_over(K) if not K.is_empty() else -math.inf
    lhs = est.value
    tol = _tolerance(tolerance, est.settling)
    return _verdict(_diff(rhs, lhs), lhs, rhs, tol, estimate=est.to_dict())


# -- exponential tightness -----------------------------------------------------------
@dataclass(frozen=True, eq=False)
class TightnessProfile:
    """``profile[ℓ, j]`` = limsup over ``n ≥ starts[j]`` of ``(1/a_n) log μ_n(K_ℓᶜ)``."""

    profile: np.ndarray
    starts: tuple[int, ...]
    thresholds: tuple[float, ...]
    slope: float
    tight: bool

    @property
    def tail(self) -> np.ndarray:
        return self.profile[:, -1]

    def to_dict(self) -> dict:
        return {
            "tail_profile": [_num(float(v)) for v in self.tail],
            "starts": list(self.starts),
            "thresholds": list(self.thresholds),
            "slope": _num(self.slope),
            "exponentially_tight_at_horizon": self.tight,
        }


def _truncation_mask(trunc, space: MetricSpace) -> np.ndarray:
    if isinstance(trunc, PointSet):
        if trunc.space is not space:
            raise ValueError("truncation lives on a different grid")
        return trunc.mask
    return np.asarray(trunc(space), dtype=bool)


def exp_tightness_profile(seq: MeasureSequence, speed: Speed, truncations: Sequence, n_window,
                          thresholds: Sequence[float] = (-1.0, -2.0, -5.0), threads: int | None = None) -> TightnessProfile:
    """Tail-mass profile over increasing truncations ``K_ℓ``.

    The verdict is "exponentially tight at horizon" iff the tail column is
    nonincreasing in ``ℓ`` and eventually drops below every threshold.
    ``slope`` is the least-squares slope of the finite tail values per step.
    """
    if not truncations:
        raise ValueError("need at least one truncation")
    rows = []
    for trunc in truncations:
        est = _scaled_log_mass(seq, speed, n_window, lambda mu, t=trunc: ~_truncation_mask(t, mu.space),
                               LIMSUP, threads)
        rows.append(est.trace[0])
        starts = est.starts
    prof = np.vstack(rows)
    tail = prof[:, -1]
    finite = np.isfinite(tail)
    if finite.sum() >= 2:
        slope = float(np.polyfit(np.flatnonzero(finite).astype(float), tail[finite], 1)[0])
    elif finite.sum() < len(tail) and np.all(tail[~finite] == -np.inf):
        slope = -math.inf
    else:
        slope = 0.0
    monotone = all(b == a or b <= a + 1e-12 for a, b in zip(tail, tail[1:]))
    tight = monotone and all(tail[-1] <= t for t in thresholds)
    prof.setflags(write=False)
    return TightnessProfile(prof, tuple(starts), tuple(float(t) for t in thresholds), slope, tight)


# -- entropy representation --------------------------------------------------------------
def simplex_grid(space: MetricSpace, m: int) -> tuple[MetricSpace, np.ndarray]:
    """Probability vectors with entries in ``{0, 1/m, ..., 1}`` under the bounded-Lipschitz metric.

    Returns the grid as a metric space (rows computed on demand) and the
    weight matrix, one row per grid point.
    """
    from .measure import narrow_distance

    k = len(space)
    count = math.comb(m + k - 1, k - 1)
    if count > SIMPLEX_CAP:
        raise EnumerationCapError(f"simplex grid would have {count} points")
    comps = [c for c in itertools.product(range(m + 1), repeat=k - 1) if sum(c) <= m] if k > 1 else [()]
    W = np.array([list(c) + [m - sum(c)] for c in comps], dtype=float) / m
    d2 = np.minimum(2.0, space.dist)
    ids = ["(" + ",".join(f"{int(round(v * m))}" for v in row) + f")/{m}" for row in W]
    measures = [None] * len(W)

    def meas(i: int) -> DiscreteMeasure:
        if measures[i] is None:
            measures[i] = DiscreteMeasure.from_weights(space, W[i], normalize=True)
        return measures[i]

    def row(i: int) -> np.ndarray:
        if k == 2:
            return np.abs(W[:, 0] - W[i, 0]) * d2[0, 1]
        if np.count_nonzero(W[i]) == 1:
            return W @ d2[int(np.argmax(W[i]))]
        return np.array([0.0 if j == i else narrow_distance(meas(i), meas(j)) for j in range(len(W))])

    resolution = min(2.0, space.diameter) / m if k > 1 else 0.0
    grid = MetricSpace(len(W), ids=ids, row_fn=row, resolution=resolution)
    W.setflags(write=False)
    return grid, W


def _entropy_values(W: np.ndarray, mu: DiscreteMeasure) -> np.ndarray:
    lmu = mu.log_weights
    with np.errstate(divide="ignore", invalid="ignore"):
        lw = np.log(W)
        terms = np.where(W > 0, W * (lw - lmu[None, :]), 0.0)
    terms = np.where((W > 0) & (lmu[None, :] == -np.inf), np.inf, terms)
    return np.maximum(0.0, terms.sum(axis=1))


def _dual_ball_entropy(mu: DiscreteMeasure, x, delta: float) -> float:
    """``inf{H(ν|μ) : d_BL(ν, δ_x) < δ}``, solved through its one-parameter dual.

    With ``c = min(2, d(x, ·))`` the constraint is ``ν(c) < δ``; the minimizer
    is the tilt ``ν_β ∝ μ e^{−βc}`` with ``ν_β(c) = δ``.
    """
    c = np.minimum(2.0, mu.space.distances_to(x))
    on = mu.log_weights > -np.inf
    c, lmu = c[on], mu.log_weights[on]
    if math.fsum(np.exp(lmu) * c) < delta:
        return 0.0
    if c.min() >= delta - BOUNDARY_EPS * max(1.0, delta):
        return math.inf

    def log_z(beta: float) -> float:
        return float(logsumexp(lmu - beta * c))

    def mean_c(beta: float) -> float:
        t = lmu - beta * c
        p = np.exp(t - logsumexp(t))
        return float(p @ c)

    hi = 1.0
    while mean_c(hi) > delta:
        hi *= 2.0
        if hi > 1e300:
            return math.inf
    beta = brentq(lambda b: mean_c(b) - delta, 0.0, hi, xtol=1e-14 * hi, rtol=4 * np.finfo(float).eps, maxiter=500)
    return max(0.0, -beta * delta - log_z(beta))


def entropy_rate_gamma(seq: MeasureSequence, speed: Speed, x, simplex_resolution: int | None, delta_schedule,
                       n_window, threads: int | None = None) -> tuple[LimitEstimate, LimitEstimate]:
    """``(Γ-limsup, Γ-liminf)`` of ``ν ↦ (1/a_n) H(ν|μ_n)`` at ``δ_x``.

    With an integer ``simplex_resolution`` m the measures are restricted to the
    simplex grid of step ``1/m`` and the Γ-limits come from
    :func:`ldgamma.gamma.localized_estimates`. With ``None`` each localized
    infimum is solved exactly over all probability vectors via convex duality.
    """
    deltas = check_deltas(delta_schedule)
    speed.validate(n_window)
    w = as_window(n_window)
    if simplex_resolution is None:
        def provider(n: int):
            mu = seq(n)
            a = speed(n)
            return np.array([_dual_ball_entropy(mu, x, d) / a for d in deltas]), None

        lo, hi = localized_estimates(provider, deltas, w, threads, flags=("exact-dual",))
        return hi, lo

    space = seq(int(w.ns[0])).space
    grid, W = simplex_grid(space, int(simplex_resolution))
    check_resolution(deltas, grid.resolution)
    xi = space.index_of(x)
    target = np.zeros(len(space))
    target[xi] = 1.0
    hit = np.flatnonzero(np.all(np.abs(W - target[None, :]) < 1e-12, axis=1))
    center = int(hit[0])

    def provider(n: int):
        mu = seq(n)
        if mu.space is not space:
            raise ValueError("simplex mode needs a fixed grid across the window")
        values = _entropy_values(W, mu) / speed(n)
        return ball_infima(Functional(grid, values), center, deltas)

    lo, hi = localized_estimates(provider, deltas, w, threads, flags=(f"simplex-grid-1/{simplex_resolution}",))
    return hi, lo


# -- set-map representation ------------------------------------------------------------------
def _subset_log_masses(H: HyperSpace, mu: DiscreteMeasure) -> np.ndarray:
    lw = np.where(H.members, mu.log_weights[None, :], -np.inf)
    top = lw.max(axis=1)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(lw - safe[:, None]).sum(axis=1)) + safe


def setmap_rate_gamma(seq: MeasureSequence, speed: Speed, K: PointSet, delta_schedule, n_window,
                      method: str = "auto", threads: int | None = None) -> tuple[LimitEstimate, LimitEstimate]:
    """``(Γ-limsup, Γ-liminf)`` of ``K ↦ −(1/a_n) log μ_n(K)`` on the Hausdorff hyperspace.

    ``method="enumerate"`` builds the hyperspace of all nonempty subsets
    (base spaces up to 16 points). ``method="enlargement"`` uses that the
    largest set within Hausdorff distance ``< δ`` of ``K`` is its open
    δ-enlargement, so each localized infimum is ``l(K^δ)`` exactly. ``"auto"``
    enumerates when possible.
    """
    deltas = check_deltas(delta_schedule)
    speed.validate(n_window)
    w = as_window(n_window)
    space = K.space
    if K.is_empty():
        raise ValueError("set map needs a nonempty set")
    if method == "auto":
        method = "enumerate" if len(space) <= 16 else "enlargement"
    if method == "enumerate":
        H = compact_space(space)
        center = H.index_of_set(K)

        def provider(n: int):
            mu = seq(n)
            if mu.space is not space:
                raise ValueError("set-map estimates need a fixed grid across the window")
            lm = _subset_log_masses(H, mu)
            with np.errstate(invalid="ignore"):
                vals = np.where(lm == -np.inf, np.inf, np.maximum(0.0, -lm / speed(n)))
            return ball_infima(Functional(H, vals), center, deltas)

        lo, hi = localized_estimates(provider, deltas, w, threads, flags=("hyperspace-enumeration",))
        return hi, lo
    if method != "enlargement":
        raise ValueError(f"unknown method {method!r}")
    check_resolution(deltas, space.resolution)
    masks = [enlargement(space, K, d) for d in deltas]

    def provider(n: int):
        mu = seq(n)
        if mu.space is not space:
            raise ValueError("set-map estimates need a fixed grid across the window")
        a = speed(n)
        return np.array([setmap_l(a, mu, m) for m in masks]), None

    lo, hi = localized_estimates(provider, deltas, w, threads, flags=("enlargement-reduction",))
    return hi, lo


# -- Laplace-type checks -------------------------------------------------------------------------
def _laplace_lhs(seq: MeasureSequence, speed: Speed, phi_family: FunctionalSequence, sign: float, n_window,
                 variant: str, threads: int | None) -> LimitEstimate:
    w = as_window(n_window)

    def provider(n: int):
        mu = seq(n)
        phi = phi_family(n)
        if phi.space is not mu.space:
            raise ValueError("φ_n and μ_n live on different grids")
        a = speed(n)
        with np.errstate(invalid="ignore"):
            g = np.where(np.isinf(phi.values), sign * phi.values, a * sign * phi.values)
        return mu.log_integral_exp(g) / a

    raw = np.array([ordered_map(provider, w.ns.tolist(), threads)])
    return assemble(raw, w.ns, w.starts(), variant, (math.inf,))


def _default_deltas(space: MetricSpace) -> tuple[float, ...]:
    if space.resolution > 0:
        return (4 * space.resolution, 3 * space.resolution, 2 * space.resolution)
    return (0.5 * space.separation,) if math.isfinite(space.separation) else (1.0,)


def _sup_terms(glim: np.ndarray, I: Functional, sign: float) -> float:
    vals = sign * glim - I.values
    vals = np.where(I.values == np.inf, -np.inf, vals)
    return float(vals.max())


def laplace_lower_check(seq: MeasureSequence, speed: Speed, I: Functional, phi_family: FunctionalSequence,
                        n_window, delta_schedule=None, tolerance: float | None = None,
                        threads: int | None = None) -> Verdict:
    """``liminf (1/a_n) log μ_n(e^{a_n φ_n}) ≥ sup_x {Γ-liminf φ_n(x) − I(x)}``."""
    speed.validate(n_window)
    deltas = _default_deltas(I.space) if delta_schedule is None else check_deltas(delta_schedule)
    est = _laplace_lhs(seq, speed, phi_family, 1.0, n_window, LIMINF, threads)
    field_ = gamma_field(phi_family, I.space, deltas, n_window, threads)
    rhs = _sup_terms(field_.liminf.values, I, 1.0)
    lhs = est.value
    tol = _tolerance(tolerance, est.settling, field_.increment)
    return _verdict(_diff(lhs, rhs), lhs, rhs, tol, estimate=est.to_dict())


def _hypothesis_profile(seq, speed, phi_family, n_window, mask_for, threads) -> float:
    """limsup-window of ``(1/a_n) log μ_n(e^{−a_n φ_n} 1_E)`` for the event ``E`` from ``mask_for``."""
    w = as_window(n_window)

    def provider(n: int) -> float:
        mu = seq(n)
        phi = phi_family(n)
        a = speed(n)
        m = mask_for(phi, mu)
        with np.errstate(invalid="ignore"):
            g = np.where(np.isinf(phi.values), -phi.values, -a * phi.values)
        g = np.where(m, g, -np.inf)
        return mu.log_integral_exp(g) / a

    raw = np.array([ordered_map(provider, w.ns.tolist(), threads)])
    return assemble(raw, w.ns, w.starts(), LIMSUP, (math.inf,)).value


def laplace_upper_check(seq: MeasureSequence, speed: Speed, I: Functional, phi_family: FunctionalSequence,
                        n_window, delta_schedule=None, tolerance: float | None = None,
                        M_values: Sequence[float] = (1.0, 10.0, 100.0), truncations: Sequence | None = None,
                        negligible_gap: float = 1.0, threads: int | None = None) -> Verdict:
    """``limsup (1/a_n) log μ_n(e^{−a_n φ_n}) ≤ sup_x {−Γ-liminf φ_n(x) − I(x)}``.

    The inequality is asserted only after two tail hypotheses pass on the
    window, each read on the exponential scale: the contribution of
    ``{φ_n < −M}`` at the largest ``M``, and of the complement of the largest
    truncation (default: the whole grid), must be ``−inf`` or at least
    ``negligible_gap`` below the left-hand side. Otherwise the verdict is
    inconclusive.
    """
    speed.validate(n_window)
    deltas = _default_deltas(I.space) if delta_schedule is None else check_deltas(delta_schedule)
    est = _laplace_lhs(seq, speed, phi_family, -1.0, n_window, LIMSUP, threads)
    lhs = est.value
    M = max(M_values)
    tail_M = _hypothesis_profile(seq, speed, phi_family, n_window, lambda phi, mu: phi.values < -M, threads)
    if truncations:
        last = truncations[-1]
        tail_K = _hypothesis_profile(seq, speed, phi_family, n_window,
                                     lambda phi, mu: ~_truncation_mask(last, mu.space), threads)
    else:
        tail_K = -math.inf
    hyp = {
        "hypothesis_i": {"M": M, "value": _num(tail_M), "holds": bool(tail_M <= lhs - negligible_gap)},
        "hypothesis_ii": {"value": _num(tail_K), "holds": bool(tail_K <= lhs - negligible_gap)},
    }
    field_ = gamma_field(phi_family, I.space, deltas, n_window, threads)
    rhs = _sup_terms(field_.liminf.values, I, -1.0)
    tol = _tolerance(tolerance, est.settling, field_.increment)
    v = _verdict(_diff(rhs, lhs), lhs, rhs, tol, estimate=est.to_dict(), hypotheses=hyp)
    if not (hyp["hypothesis_i"]["holds"] and hyp["hypothesis_ii"]["holds"]):
        return Verdict(INCONCLUSIVE, v.margin, v.lhs, v.rhs, v.tolerance, v.details)
    return v


# -- combining rates ---------------------------------------------------------------------------
def combine_lower_rates(rates: Sequence[Functional], space: MetricSpace, delta_schedule) -> Functional:
    """Ball-infimum envelope of the pointwise minimum."""
    if not rates:
        raise ValueError("need at least one rate")
    for r in rates:
        if r.space is not space:
            raise ValueError("rate lives on a different space")
    low = np.min(np.vstack([r.values for r in rates]), axis=0)
    return lsc_envelope(Functional(space, low), space, delta_schedule)


def combine_upper_rates(rates: Sequence[Functional]) -> Functional:
    """Pointwise maximum."""
    if not rates:
        raise ValueError("need at least one rate")
    space = rates[0].space
    for r in rates:
        if r.space is not space:
            raise ValueError("rate lives on a different space")
    return Functional(space, np.max(np.vstack([r.values for r in rates]), axis=0))


# -- cross-representation report -----------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class RateReport:
    """Estimates of the optimal rates from the three representations.

    ``estimates[label][rep]`` is a ``(limsup, liminf)`` pair of
    :class:`LimitEstimate` for ``rep`` in ``("ball", "entropy", "setmap")``.
    """

    labels: tuple[str, ...]
    estimates: dict
    targets: dict
    discrepancies: dict
    errors: dict
    verdicts: dict
    tightness: TightnessProfile | None = None

    @property
    def max_discrepancy(self) -> float:
        vals = [v for d in self.discrepancies.values() for v in d.values()]
        return max(vals) if vals else 0.0

    @property
    def max_error(self) -> float:
        vals = [v for d in self.errors.values() for v in d.values()]
        return max(vals) if vals else 0.0

    def to_dict(self) -> dict:
        out = {"points": {}, "verdicts": {k: v.to_dict() for k, v in self.verdicts.items()}}
        for lab in self.labels:
            out["points"][lab] = {
                "target": _num(self.targets[lab]),
                "estimates": {rep: {"limsup": _num(p[0].value), "liminf": _num(p[1].value)}
                              for rep, p in self.estimates[lab].items()},
                "pairwise_discrepancy": {k: _num(v) for k, v in self.discrepancies[lab].items()},
                "error_vs_target": {k: _num(v) for k, v in self.errors[lab].items()},
            }
        out["max_discrepancy"] = _num(self.max_discrepancy)
        out["max_error"] = _num(self.max_error)
        if self.tightness is not None:
            out["tightness"] = self.tightness.to_dict()
        return out


def _gap(a: float, b: float) -> float:
    if a == b:
        return 0.0
    return abs(a - b)


def verify_equivalence(seq: MeasureSequence, speed: Speed, I: Functional, points: Sequence, compacts: Sequence[PointSet],
                       schedules: dict, threads: int | None = None) -> RateReport:
    """Cross-check the ball, entropy and set-map estimates against each other and ``I``.

    ``schedules`` keys: ``deltas`` and ``window`` (required); optional
    ``entropy_deltas``, ``setmap_deltas``, ``simplex_resolution`` (None for
    the exact dual), ``setmap_method``, ``truncations`` (for a tightness
    profile) and ``tolerance``.
    """
    window = schedules["window"]
    deltas = schedules["deltas"]
    e_deltas = schedules.get("entropy_deltas", deltas)
    s_deltas = schedules.get("setmap_deltas", deltas)
    simplex = schedules.get("simplex_resolution")
    method = schedules.get("setmap_method", "auto")
    space = I.space
    labels, estimates, targets, disc, errs, verdicts = [], {}, {}, {}, {}, {}
    for x in points:
        i = space.index_of(x)
        lab = space.ids[i]
        labels.append(lab)
        reps = {
            "ball": estimate_rate_ball(seq, speed, x, deltas, window, threads),
            "entropy": entropy_rate_gamma(seq, speed, x, simplex, e_deltas, window, threads),
            "setmap": setmap_rate_gamma(seq, speed, PointSet.from_indices(space, [i]), s_deltas, window,
                                        method, threads),
        }
        estimates[lab] = reps
        targets[lab] = float(I.values[i])
        disc[lab] = {}
        for (r1, p1), (r2, p2) in itertools.combinations(reps.items(), 2):
            disc[lab][f"{r1}-{r2}"] = max(_gap(p1[0].value, p2[0].value), _gap(p1[1].value, p2[1].value))
        errs[lab] = {r: max(_gap(p[0].value, targets[lab]), _gap(p[1].value, targets[lab])) for r, p in reps.items()}
    tol = schedules.get("tolerance")
    for k, K in enumerate(compacts):
        verdicts[f"upper[{k}]"] = check_upper_bound(seq, speed, I, K, window, tol, threads)
        if K.tag == "open":
            verdicts[f"lower[{k}]"] = check_lower_bound(seq, speed, I, K, window, tol, threads)
    tight = None
    if schedules.get("truncations"):
        tight = exp_tightness_profile(seq, speed, schedules["truncations"], window, threads=threads)
    return RateReport(tuple(labels), estimates, targets, disc, errs, verdicts, tight)
