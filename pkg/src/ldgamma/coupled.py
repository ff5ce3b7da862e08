"""Coupled fixed-point systems on finite probability spaces.

For each ``n`` the pair ``(ξ_n, η_n)`` solves ``ξ = F_n(η, ω¹)``,
``η = G_n(ξ, ω²)`` on finite grids ``X`` and ``Y``; ``ω¹`` and ``ω²`` are
independent with laws ``P¹_n`` and ``P²_n``. Everything is enumerated
exactly over ``Ω¹ × Ω²``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._family import DEFAULT_RANGE, IndexedFamily
from .errors import CycleError, EnumerationCapError, InvariantViolation
from .gamma import LIMSUP, as_window, assemble
from .ld_rate import BASE_TOLERANCE, FAIL, PASS, MeasureSequence, Speed, Verdict, estimate_rate_ball
from .measure import DiscreteMeasure, log_total, pushforward
from .metric_space import MetricSpace, product_space

OUTCOME_CAP = 4096
ITERATION_CAP = 10_000
UNSOLVED_ABORT = 1e-9


@dataclass(frozen=True)
class Modulus:
    """Tabulated modulus ``q``: piecewise linear, nondecreasing, ``q(0) = 0``, constant past the table."""

    t: tuple[float, ...]
    q: tuple[float, ...]

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if t.shape != q.shape or t.size < 2:
            raise ValueError("modulus needs at least two (t, q) nodes")
        if t[0] != 0 or q[0] != 0:
            raise ValueError("modulus must start at q(0) = 0")
        if np.any(np.diff(t) <= 0) or np.any(np.diff(q) < 0) or np.any(q < 0):
            raise ValueError("modulus nodes must increase in t and be nondecreasing in q")
        if not np.all(np.isfinite(q)):
            raise ValueError("modulus must be bounded")

    def __call__(self, s):
        return np.interp(np.asarray(s, dtype=float), self.t, self.q)

    @classmethod
    def identity_cap(cls, cap: float) -> Modulus:
        return cls((0.0, float(cap)), (0.0, float(cap)))

    @classmethod
    def constant(cls, bound: float, ramp: float = 1e-9) -> Modulus:
        return cls((0.0, ramp), (0.0, float(bound)))


@dataclass(frozen=True, eq=False)
class CoupledLevel:
    """Data of one index ``n``: outcome log-probabilities and the tabulated maps.

    ``F[j, a]`` is the ``X`` index of ``F_n(y_j, ω¹_a)`` and ``G[i, b]`` the
    ``Y`` index of ``G_n(x_i, ω²_b)``.
    """

    log_p1: np.ndarray
    log_p2: np.ndarray
    F: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        for name in ("log_p1", "log_p2"):
            lp = np.array(getattr(self, name), dtype=float)
            if abs(log_total(lp)) > 1e-12:
                raise ValueError(f"{name} is not normalized")
            lp.setflags(write=False)
            object.__setattr__(self, name, lp)
        for name in ("F", "G"):
            m = np.array(getattr(self, name), dtype=np.int64)
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        if self.F.shape[1] != self.log_p1.size or self.G.shape[1] != self.log_p2.size:
            raise ValueError("map tables do not match the outcome spaces")


class CoupledSystem(IndexedFamily[CoupledLevel]):
    """Family ``n ↦ CoupledLevel`` on fixed grids with a modulus and an initial ``y₀``."""

    def __init__(self, X: MetricSpace, Y: MetricSpace, level: Callable[[int], CoupledLevel], q: Modulus,
                 y0=0, n_range: tuple[int, int] = DEFAULT_RANGE, outcome_cap: int = OUTCOME_CAP, name: str = ""):
        super().__init__(level, n_range, name)
        self.X, self.Y, self.q = X, Y, q
        self.y0 = Y.index_of(y0)
        self.outcome_cap = outcome_cap
        self.XY = product_space(X, Y)

    def _validate(self, n: int, lev) -> None:
        if lev.F.shape[0] != len(self.Y) or lev.G.shape[0] != len(self.X):
            raise ValueError(f"level {n}: map tables do not match the grids")
        if lev.F.min() < 0 or lev.F.max() >= len(self.X) or lev.G.min() < 0 or lev.G.max() >= len(self.Y):
            raise ValueError(f"level {n}: map values leave the grids")
        if lev.log_p1.size * lev.log_p2.size > self.outcome_cap:
            raise EnumerationCapError(f"|Ω¹×Ω²| exceeds the cap {self.outcome_cap}")


def solve_system(sys: CoupledSystem, n: int, w1: int, w2: int, cap: int = ITERATION_CAP) -> tuple[int, int]:
    """Fixed point ``(x, y)`` reached by iterating from ``y₀``.

    Raises
    ------
    CycleError
        If the iteration revisits a ``y`` without reaching a fixed point.
    """
    lev = sys(n)
    y = sys.y0
    seen = {y}
    for _ in range(cap):
        x = int(lev.F[y, w1])
        y_new = int(lev.G[x, w2])
        if y_new == y:
            return x, y
        if y_new in seen:
            raise CycleError(f"outcome ({w1}, {w2}) cycles without a fixed point")
        seen.add(y_new)
        y = y_new
    raise CycleError(f"no fixed point within {cap} steps")


def _solve_all(sys: CoupledSystem, lev: CoupledLevel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized fixed points for every outcome pair; ``solved`` marks success."""
    n1, n2 = lev.log_p1.size, lev.log_p2.size
    w1 = np.repeat(np.arange(n1), n2)
    w2 = np.tile(np.arange(n2), n1)
    y = np.full(n1 * n2, sys.y0, dtype=np.int64)
    x = lev.F[y, w1]
    solved = np.zeros(n1 * n2, dtype=bool)
    # y ↦ G(F(y, ω¹), ω²) is a self-map of Y: a fixed point appears within |Y| steps or never
    for _ in range(len(sys.Y) + 1):
        x = lev.F[y, w1]
        y_new = lev.G[x, w2]
        solved = y_new == y
        if solved.all():
            break
        y = np.where(solved, y, y_new)
    x = lev.F[y, w1]
    solved = lev.G[x, w2] == y
    return x, y, solved


@dataclass(frozen=True, eq=False)
class JointLaw:
    law: DiscreteMeasure
    unsolved_mass: float


def joint_law(sys: CoupledSystem, n: int, abort: float = UNSOLVED_ABORT) -> JointLaw:
    """Law of ``(ξ_n, η_n)`` on ``X × Y``; unsolved outcomes are excluded and their mass reported."""
    lev = sys(n)
    x, y, solved = _solve_all(sys, lev)
    lp = (lev.log_p1[:, None] + lev.log_p2[None, :]).ravel()
    unsolved = math.exp(log_total(lp[~solved]))
    if unsolved > abort:
        raise InvariantViolation(f"n={n}: unsolved mass {unsolved:.3e} exceeds {abort:g}")
    ny = len(sys.Y)
    idx = np.where(solved, x * ny + y, -1)
    keep = solved & (lp > -np.inf)
    lw = np.full(len(sys.XY), -np.inf)
    cells: dict[int, list[float]] = {}
    for k, v in zip(idx[keep].tolist(), lp[keep].tolist()):
        cells.setdefault(k, []).append(v)
    for k, vals in cells.items():
        lw[k] = log_total(np.array(vals))
    return JointLaw(DiscreteMeasure.from_log_weights(sys.XY, lw), unsolved)


def frozen_laws(sys: CoupledSystem, n: int, x, y) -> tuple[DiscreteMeasure, DiscreteMeasure]:
    """Laws of ``F_n(y, ·)`` on ``X`` and ``G_n(x, ·)`` on ``Y``."""
    lev = sys(n)
    xi, yj = sys.X.index_of(x), sys.Y.index_of(y)
    omega1 = MetricSpace(lev.log_p1.size, dist=_discrete(lev.log_p1.size))
    omega2 = MetricSpace(lev.log_p2.size, dist=_discrete(lev.log_p2.size))
    p1 = DiscreteMeasure.from_log_weights(omega1, lev.log_p1)
    p2 = DiscreteMeasure.from_log_weights(omega2, lev.log_p2)
    return pushforward(p1, lev.F[yj], sys.X), pushforward(p2, lev.G[xi], sys.Y)


def _discrete(k: int) -> np.ndarray:
    return 1.0 - np.eye(k)


def frozen_sequences(sys: CoupledSystem, x, y) -> tuple[MeasureSequence, MeasureSequence]:
    return (MeasureSequence(lambda n: frozen_laws(sys, n, x, y)[0], sys.n_range),
            MeasureSequence(lambda n: frozen_laws(sys, n, x, y)[1], sys.n_range))


@dataclass(frozen=True, eq=False)
class RegularityProfile:
    """``profile[e, k] = (1/a_n) log P_n(event_ε)`` over ``ε`` rows and window columns."""

    which: str
    eps: tuple[float, ...]
    ns: tuple[int, ...]
    profile: np.ndarray
    tail: np.ndarray
    threshold: float

    @property
    def consistent(self) -> bool:
        """Every ε row ends at ``−inf`` or below ``−threshold`` on the tail window."""
        return bool(np.all(self.tail <= -self.threshold))

    def rows(self) -> list[list[str]]:
        out = [["eps"] + [str(n) for n in self.ns]]
        for e, row in zip(self.eps, self.profile):
            out.append([repr(e)] + ["-inf" if v == -np.inf else repr(float(v)) for v in row])
        return out


def check_regularity(sys: CoupledSystem, speed: Speed, x, y, eps_list: Sequence[float], n_window,
                     which: str = "iii", threshold: float = 5.0) -> RegularityProfile:
    """Profile of the regularity events comparing solved and frozen distances to ``(x, y)``.

    ``which="iii"``: ``D_sol ≥ q(D_frozen) + ε``; ``which="iv"``: the roles
    swapped. ``D_sol = d(ξ, x) + d(η, y)``, ``D_frozen = d(F(y, ω¹), x) + d(G(x, ω²), y)``.
    """
    if which not in ("iii", "iv"):
        raise ValueError("which must be 'iii' or 'iv'")
    eps = tuple(float(e) for e in eps_list)
    if any(e <= 0 for e in eps):
        raise ValueError("ε values must be positive")
    xi, yj = sys.X.index_of(x), sys.Y.index_of(y)
    dx, dy = sys.X.distances_from(xi), sys.Y.distances_from(yj)
    w = as_window(n_window)
    cols = []
    for n in w.ns.tolist():
        lev = sys(n)
        xs, ys, solved = _solve_all(sys, lev)
        n1, n2 = lev.log_p1.size, lev.log_p2.size
        w1 = np.repeat(np.arange(n1), n2)
        w2 = np.tile(np.arange(n2), n1)
        d_sol = dx[xs] + dy[ys]
        d_frz = dx[lev.F[yj, w1]] + dy[lev.G[xi, w2]]
        a, b = (d_sol, d_frz) if which == "iii" else (d_frz, d_sol)
        lp = (lev.log_p1[:, None] + lev.log_p2[None, :]).ravel()
        qb = sys.q(b)
        a_n = speed(n)
        col = []
        for e in eps:
            event = solved & (a >= qb + e - 1e-12)
            col.append(log_total(lp[event]) / a_n)
        cols.append(col)
    prof = np.array(cols).T
    tail = assemble(prof, w.ns, w.starts(), LIMSUP, eps).trace[:, -1]
    prof.setflags(write=False)
    return RegularityProfile(which, eps, tuple(w.ns.tolist()), prof, tail, threshold)


@dataclass(frozen=True, eq=False)
class CoupledRateCheck:
    verdict: Verdict
    joint: tuple
    max_unsolved_mass: float


def coupled_rate_check(sys: CoupledSystem, speed: Speed, x, y, K_value: float, J_value: float, schedules: dict,
                       threads: int | None = None) -> CoupledRateCheck:
    """Compare the joint ball-rate at ``(x, y)`` with ``K^y(x) + J^x(y)``.

    ``schedules`` keys: ``deltas``, ``window``, optional ``tolerance`` and
    ``abort`` (unsolved-mass threshold). Both window variants must lie
    within the tolerance of the sum.
    """
    abort = schedules.get("abort", UNSOLVED_ABORT)
    unsolved = []

    def law(n: int) -> DiscreteMeasure:
        jl = joint_law(sys, n, abort)
        unsolved.append(jl.unsolved_mass)
        return jl.law

    seq = MeasureSequence(law, sys.n_range)
    point = sys.XY.ids[sys.X.index_of(x) * len(sys.Y) + sys.Y.index_of(y)]
    hi, lo = estimate_rate_ball(seq, speed, point, schedules["deltas"], schedules["window"], threads)
    target = K_value + J_value
    gaps = [0.0 if v == target else abs(v - target) for v in (hi.value, lo.value)]
    base = BASE_TOLERANCE if schedules.get("tolerance") is None else float(schedules["tolerance"])
    tol = base
    margin = -max(gaps)
    status = PASS if max(gaps) <= tol else FAIL
    v = Verdict(status, margin, hi.value, target, tol,
                {"limsup": hi.value, "liminf": lo.value, "last_step_increment": hi.last_step_increment})
    return CoupledRateCheck(v, (hi, lo), max(unsolved) if unsolved else 0.0)


def frozen_rate_estimates(sys: CoupledSystem, speed: Speed, x, y, deltas, window,
                          threads: int | None = None) -> tuple[float, float]:
    """Ball-rate estimates (window limsup) of ``K^y(x)`` and ``J^x(y)`` from the frozen laws."""
    fx, fy = frozen_sequences(sys, x, y)
    kx = estimate_rate_ball(fx, speed, x, deltas, window, threads)[0].value
    jy = estimate_rate_ball(fy, speed, y, deltas, window, threads)[0].value
    return kx, jy


# -- fixtures ----------------------------------------------------------------------
def _two_point_logs(a: float, rate: float) -> np.ndarray:
    return np.array([math.log1p(-math.exp(-rate * a)), -rate * a])


def decoupled_system(speed: Speed, rate_x: float = 1.0, rate_y: float = 2.0) -> CoupledSystem:
    """``F`` ignores ``y`` and ``G`` ignores ``x``: the joint law is the product of two two-point laws."""
    from .families import two_point_space

    X, Y = two_point_space(), two_point_space()

    def level(n: int) -> CoupledLevel:
        a = speed(n)
        F = np.tile(np.arange(2), (2, 1))
        return CoupledLevel(_two_point_logs(a, rate_x), _two_point_logs(a, rate_y), F, F.copy())

    return CoupledSystem(X, Y, level, Modulus.identity_cap(4.0), y0="common", name="decoupled")


def jump_system(speed: Speed) -> CoupledSystem:
    """``F`` jumps to ``rare`` whenever ``y = rare`` and ``G`` copies ``x``; started at ``y₀ = rare``.

    The solution sits at ``(rare, rare)`` for every outcome while the frozen
    maps at ``(common, common)`` concentrate at ``common``, so the first
    regularity event keeps probability close to one.
    """
    from .families import two_point_space

    X, Y = two_point_space(), two_point_space()

    def level(n: int) -> CoupledLevel:
        a = speed(n)
        F = np.array([[0, 1], [1, 1]])
        G = np.array([[0], [1]])
        return CoupledLevel(_two_point_logs(a, 1.0), np.zeros(1), F, G)

    return CoupledSystem(X, Y, level, Modulus.identity_cap(4.0), y0="rare", name="jump")


def weak_coupling_system(speed: Speed, points: int = 33, outcomes: int = 64, centre_x: float = 0.25,
                         centre_y: float = 0.75) -> CoupledSystem:
    """Gibbs outcomes on ``[0, 1]`` grids with maps perturbed by the other coordinate at strength ``1/n``.

    ``ω`` labels a grid point ``ω mod points`` plus a penalty ``0.1·(ω div points)``.
    ``F(y, ω) = snap(p(ω) + y/n)`` and ``G(x, ω) = snap(p(ω) − x/n)``, so
    once ``1/n`` is below half a grid step the frozen rates are
    ``(x − centre_x)²`` and ``(y − centre_y)²``.
    """
    from .metric_space import build_grid_space

    h = 1.0 / (points - 1)
    X = build_grid_space(1, (0.0, 1.0), h)
    Y = build_grid_space(1, (0.0, 1.0), h)
    grid = X.coords[:, 0]
    w = np.arange(outcomes)
    p = grid[w % points]
    penalty = 0.1 * (w // points)
    c1 = (p - centre_x) ** 2 + penalty
    c2 = (p - centre_y) ** 2 + penalty

    def snap(v: np.ndarray) -> np.ndarray:
        return np.clip(np.rint(v / h), 0, points - 1).astype(np.int64)

    def gibbs(c: np.ndarray, a: float) -> np.ndarray:
        lw = -a * c
        return lw - log_total(lw)

    def level(n: int) -> CoupledLevel:
        a = speed(n)
        F = snap(p[None, :] + grid[:, None] / n)
        G = snap(p[None, :] - grid[:, None] / n)
        return CoupledLevel(gibbs(c1, a), gibbs(c2, a), F, G)

    return CoupledSystem(X, Y, level, Modulus.identity_cap(4.0), y0=0, name="weak-coupling")


def weak_coupling_rates(x: float, y: float, centre_x: float = 0.25, centre_y: float = 0.75) -> tuple[float, float]:
    return (x - centre_x) ** 2, (y - centre_y) ** 2
