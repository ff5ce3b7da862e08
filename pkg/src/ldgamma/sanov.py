"""Method of types: exact type probabilities, first- and second-order rates, Monte Carlo.

The law of the empirical measure of ``n`` i.i.d. draws from ``μ`` is
multinomial over type vectors, so every probability here is exact up to
log-gamma accuracy and never materializes the ``n``-fold product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from scipy.special import gammaln
from scipy.stats import norm

from ._parallel import ordered_map
from .entropy import relative_entropy
from .errors import EnumerationCapError, InvariantViolation
from .gamma import Functional
from .ld_rate import Speed
from .measure import DiscreteMeasure, log_total
from .metric_space import MetricSpace

TYPE_ENUMERATION_CAP = 10**6
MC_BLOCK = 4096


@dataclass(frozen=True, eq=False)
class TypeVector:
    """Counts ``k_i ≥ 0`` of each alphabet symbol, summing to ``n``."""

    alphabet: MetricSpace
    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts)
        if c.shape != (len(self.alphabet),):
            raise ValueError("one count per alphabet symbol is required")
        if not np.issubdtype(c.dtype, np.integer):
            if not np.all(c == np.round(c)):
                raise ValueError("counts must be integers")
        c = c.astype(np.int64)
        if np.any(c < 0) or c.sum() < 1:
            raise ValueError("counts must be nonnegative with a positive total")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.n

    def measure(self) -> DiscreteMeasure:
        return DiscreteMeasure.from_weights(self.alphabet, self.frequencies, normalize=True)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TypeVector):
            return NotImplemented
        return other.alphabet is self.alphabet and bool(np.array_equal(self.counts, other.counts))

    def __hash__(self) -> int:
        return hash((id(self.alphabet), self.counts.tobytes()))

    def __repr__(self) -> str:
        return f"TypeVector({self.counts.tolist()}, n={self.n})"


def empirical_measure(sample: Sequence, alphabet: MetricSpace) -> TypeVector:
    """Tally a sample of alphabet points (ids or indices)."""
    if len(sample) == 0:
        raise ValueError("empty sample")
    counts = np.zeros(len(alphabet), dtype=np.int64)
    for s in sample:
        counts[alphabet.index_of(s)] += 1
    return TypeVector(alphabet, counts)


def enumerate_types(alphabet: MetricSpace, n: int, cap: int = TYPE_ENUMERATION_CAP) -> Iterator[TypeVector]:
    """All type vectors of size ``n`` (refuses more than ``cap``)."""
    k = len(alphabet)
    total = math.comb(n + k - 1, k - 1)
    if total > cap:
        raise EnumerationCapError(f"{total} types exceed the cap {cap}")

    def rec(prefix: list[int], left: int, slots: int):
        if slots == 1:
            yield prefix + [left]
            return
        for c in range(left + 1):
            yield from rec(prefix + [c], left - c, slots - 1)

    for c in rec([], n, k):
        yield TypeVector(alphabet, np.array(c, dtype=np.int64))


def _log_multinomial(counts: np.ndarray) -> float:
    return float(gammaln(counts.sum() + 1) - gammaln(counts + 1).sum())


def exact_type_log_probability(t: TypeVector, mu: DiscreteMeasure) -> float:
    """``log[n!/∏k_i! · ∏μ_i^{k_i}]``; ``−inf`` if the type charges a null symbol."""
    if mu.space is not t.alphabet:
        raise ValueError("type and measure use different alphabets")
    on = t.counts > 0
    if np.any(mu.log_weights[on] == -np.inf):
        return -math.inf
    return _log_multinomial(t.counts) + math.fsum(t.counts[on] * mu.log_weights[on])


@dataclass(frozen=True)
class FirstOrderRate:
    value: float
    target: float
    bound: float

    @property
    def gap(self) -> float:
        return 0.0 if self.value == self.target else abs(self.value - self.target)


def types_sandwich_ok(log_p: float, n: int, H: float, k: int, slack: float = 1e-9) -> bool:
    """``(n+1)^{−k} e^{−nH} ≤ P(type) ≤ e^{−nH}`` in the log domain."""
    if math.isinf(H):
        return log_p == -math.inf
    lo = -k * math.log(n + 1) - n * H
    hi = -n * H
    scale = slack * max(1.0, abs(lo))
    return lo - scale <= log_p <= hi + scale


def first_order_rate(t: TypeVector, mu: DiscreteMeasure) -> FirstOrderRate:
    """``−(1/n) log P(π_n = t)`` against ``H(t/n | μ)`` with bound ``|Σ| log(n+1)/n``.

    Raises
    ------
    InvariantViolation
        If the value leaves the types sandwich.
    """
    n = t.n
    lp = exact_type_log_probability(t, mu)
    target = relative_entropy(t.measure(), mu)
    k = len(t.alphabet)
    bound = k * math.log(n + 1) / n
    if lp == -math.inf:
        if not math.isinf(target):
            raise InvariantViolation("zero probability with finite entropy")
        return FirstOrderRate(math.inf, math.inf, bound)
    if not types_sandwich_ok(lp, n, target, k):
        raise InvariantViolation(f"types sandwich violated for {t!r}")
    return FirstOrderRate(-lp / n, target, bound)


@dataclass(frozen=True, eq=False)
class ArraySpec:
    """Triangular-array specification: per-``n`` laws ``μ_n``, speed ``a_n`` and an optional rate."""

    laws: Callable[[int], DiscreteMeasure]
    speed: Speed
    rate: Functional | None = None

    def __post_init__(self):
        if self.rate is not None:
            v = self.rate.values
            if np.any(v < 0) or v.min() != 0:
                raise ValueError("declared rate must be nonnegative with minimum 0")


def gibbs_array(alphabet: MetricSpace, I, speed: Speed) -> ArraySpec:
    """``μ_n(x) ∝ e^{−a_n I(x)}``; its large deviations hold with speed ``a_n`` and rate ``I − min I``."""
    values = np.asarray(I.values if isinstance(I, Functional) else I, dtype=float)
    rate = Functional(alphabet, values - values[np.isfinite(values)].min())

    def laws(n: int) -> DiscreteMeasure:
        a = speed(n)
        with np.errstate(invalid="ignore"):
            lw = np.where(np.isinf(rate.values), -np.inf, -a * rate.values)
        return DiscreteMeasure.from_log_weights(alphabet, lw)

    return ArraySpec(laws, speed, rate)


@dataclass(frozen=True)
class SecondOrderRate:
    value: float
    target: float

    @property
    def gap(self) -> float:
        return 0.0 if self.value == self.target else abs(self.value - self.target)


def integral_rate(nu: DiscreteMeasure, I: Functional) -> float:
    """``Σ ν(x) I(x)``; ``+inf`` if ``ν`` charges ``{I = +inf}``."""
    if nu.space is not I.space:
        raise ValueError("measure and rate use different alphabets")
    on = nu.log_weights > -np.inf
    vals = I.values[on]
    if np.any(vals == np.inf):
        return math.inf
    return math.fsum(nu.weights[on] * vals)


def second_order_rate(t: TypeVector, spec: ArraySpec, n: int | None = None) -> SecondOrderRate:
    """``−(1/(n a_n)) log P(π_n = t)`` under ``μ_n^{⊗n}``, against ``Σ ν(x) I(x)``."""
    if spec.rate is None:
        raise ValueError("array spec declares no rate")
    n = t.n if n is None else int(n)
    if n != t.n:
        raise ValueError(f"type has size {t.n}, not {n}")
    lp = exact_type_log_probability(t, spec.laws(n))
    a = spec.speed(n)
    value = math.inf if lp == -math.inf else -lp / (n * a)
    return SecondOrderRate(value, integral_rate(t.measure(), spec.rate))


# -- type sets -------------------------------------------------------------------
@dataclass(frozen=True)
class MCEstimate:
    """Frequency estimate with a Wilson interval; zero hits give an upper bound only."""

    estimate: float
    lower: float | None
    upper: float
    hits: int
    samples: int
    confidence: float

    def covers(self, p: float) -> bool:
        lo = 0.0 if self.lower is None else self.lower
        return lo <= p <= self.upper


def wilson_interval(hits: int, samples: int, confidence: float = 0.95) -> tuple[float, float]:
    z = float(norm.ppf(0.5 + confidence / 2))
    p = hits / samples
    denom = 1 + z * z / samples
    centre = (p + z * z / (2 * samples)) / denom
    half = z * math.sqrt(p * (1 - p) / samples + z * z / (4 * samples * samples)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def mc_type_set_probability(mu: DiscreteMeasure, target: Callable[[TypeVector], bool], n: int, samples: int,
                            seed: int, confidence: float = 0.95, threads: int | None = None) -> MCEstimate:
    """Monte Carlo estimate of ``P(π_n ∈ target)``.

    Samples are drawn in fixed-size blocks, each from its own stream spawned
    from ``seed``; the result does not depend on the thread count.
    """
    if samples < 100:
        raise ValueError("need at least 100 samples")
    if n < 1:
        raise ValueError("n must be positive")
    p = mu.weights / mu.weights.sum()
    sizes = [MC_BLOCK] * (samples // MC_BLOCK)
    if samples % MC_BLOCK:
        sizes.append(samples % MC_BLOCK)
    streams = np.random.SeedSequence(seed).spawn(len(sizes))

    def block(args) -> int:
        size, ss = args
        rng = np.random.default_rng(ss)
        draws = rng.multinomial(n, p, size=size)
        return sum(1 for row in draws if target(TypeVector(mu.space, row)))

    hits = sum(ordered_map(block, list(zip(sizes, streams)), threads))
    lo, hi = wilson_interval(hits, samples, confidence)
    est = hits / samples
    if hits == 0:
        return MCEstimate(0.0, None, hi, 0, samples, confidence)
    return MCEstimate(est, lo, hi, hits, samples, confidence)


def exact_type_set_probability(mu: DiscreteMeasure, target: Callable[[TypeVector], bool], n: int,
                               cap: int = TYPE_ENUMERATION_CAP) -> float:
    """Exact ``P(π_n ∈ target)`` by enumerating every type."""
    logs = [exact_type_log_probability(t, mu) for t in enumerate_types(mu.space, n, cap) if target(t)]
    return math.exp(log_total(np.array(logs))) if logs else 0.0


def first_order_rows(mu: DiscreteMeasure, types: Iterable[TypeVector]) -> list[list]:
    """Report rows ``(n, value, target, gap, bound)``."""
    rows = []
    for t in types:
        r = first_order_rate(t, mu)
        rows.append([t.n, r.value, r.target, r.gap, r.bound])
    return rows
