"""Canonical measure families with known large-deviation behaviour.

These serve as fixtures for the estimators, the acceptance checks and the
bundled CLI configurations.
"""

from __future__ import annotations

import math

import numpy as np

from .gamma import Functional
from .ld_rate import MeasureSequence, Speed
from .measure import DiscreteMeasure
from .metric_space import MetricSpace, build_grid_space, space_from_matrix


def two_point_space(distance: float = 1.0) -> MetricSpace:
    return space_from_matrix([[0.0, distance], [distance, 0.0]], ["common", "rare"])


def two_point_family(speed: Speed, space: MetricSpace | None = None) -> MeasureSequence:
    """``μ_n = (1 − e^{−a_n}, e^{−a_n})``; the rate is 0 at ``common`` and 1 at ``rare``."""
    space = two_point_space() if space is None else space

    def ev(n: int) -> DiscreteMeasure:
        a = speed(n)
        return DiscreteMeasure.from_log_weights(space, [math.log1p(-math.exp(-a)), -a])

    return MeasureSequence(ev, name="two-point")


def gaussian_family(h: float = 0.01, bound: float = 3.0, space: MetricSpace | None = None) -> MeasureSequence:
    """Centered normal of variance ``1/n`` discretized on ``[−bound, bound]`` with step ``h``.

    Weights are proportional to the density at the grid points. With speed
    ``n`` the rate is ``x²/2``.
    """
    space = build_grid_space(1, (-bound, bound), h) if space is None else space
    y2 = space.coords[:, 0] ** 2

    def ev(n: int) -> DiscreteMeasure:
        return DiscreteMeasure.from_log_weights(space, -0.5 * n * y2)

    return MeasureSequence(ev, name="gaussian")


def gaussian_rate(space: MetricSpace) -> Functional:
    return Functional.from_function(space, lambda y: 0.5 * y * y)


def dirac_family(space: MetricSpace, x) -> MeasureSequence:
    mu = DiscreteMeasure.dirac(space, x)
    return MeasureSequence(lambda n: mu, name="dirac")


def dirac_rate(space: MetricSpace, x) -> Functional:
    """``0`` at ``x`` and ``+inf`` elsewhere."""
    v = np.full(len(space), math.inf)
    v[space.index_of(x)] = 0.0
    return Functional(space, v)


def integer_grid(length: int) -> MetricSpace:
    """``{0, 1, ..., length}`` as a 1D grid with unit spacing."""
    return build_grid_space(1, (0, length), 1.0)


def geometric_family(speed: Speed, length: int = 40) -> MeasureSequence:
    """``μ_n(k) ∝ e^{−a_n k}`` on ``{0..length}``; tail beyond ``ℓ`` decays like ``e^{−a_n ℓ}``."""
    space = integer_grid(length)
    k = space.coords[:, 0]
    return MeasureSequence(lambda n: DiscreteMeasure.from_log_weights(space, -speed(n) * k), name="geometric")


def cubic_tail_family(length: int = 1000) -> MeasureSequence:
    """``μ_n(k) ∝ (1 + k)^{−3}`` on ``{0..length}`` for every ``n``: tails do not decay with ``n``."""
    space = integer_grid(length)
    mu = DiscreteMeasure.from_log_weights(space, -3.0 * np.log1p(space.coords[:, 0]))
    return MeasureSequence(lambda n: mu, name="cubic-tail")


def prefix_truncations(space: MetricSpace, levels) -> list:
    """Truncations ``K_ℓ = {0, ..., ℓ − 1}`` on an integer grid."""
    from .metric_space import PointSet

    k = space.coords[:, 0]
    return [PointSet(space, k < l - 0.5) for l in levels]
