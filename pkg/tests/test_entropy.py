import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from conftest import random_matrix_space, random_measure
from ldgamma.entropy import (
    Partition,
    conditioned_entropy,
    conditioning_terms,
    h4_bound,
    optimal_test_function,
    partition_entropy,
    pushforward_entropy,
    refining_partitions,
    relative_entropy,
    variational_objective,
)
from ldgamma.errors import ScheduleError, ZeroMassError
from ldgamma.measure import DiscreteMeasure, pushforward
from ldgamma.metric_space import PointSet, build_grid_space, space_from_matrix


def two_points():
    return space_from_matrix([[0, 1], [1, 0]], ["p1", "p2"])


def _variational_sup(nu, mu, labels):
    """Numerical sup of ν(φ) − log μ(e^φ) over φ constant on the cells given by ``labels``."""
    cells = np.unique(labels)

    def neg(c):
        return -variational_objective(nu, mu, c[np.searchsorted(cells, labels)])

    res = minimize(neg, np.zeros(cells.size), method="BFGS", options={"gtol": 1e-12})
    return -res.fun


class TestRelativeEntropy:
    def test_identity(self, rng):
        mu = random_measure(rng, random_matrix_space(rng, 5))
        assert relative_entropy(mu, mu) == 0.0

    def test_single_atom(self):
        X = two_points()
        h = relative_entropy(DiscreteMeasure.dirac(X, "p1"), DiscreteMeasure.uniform(X))
        assert h == pytest.approx(math.log(2), abs=1e-15)

    def test_not_absolutely_continuous(self):
        X = two_points()
        assert relative_entropy(DiscreteMeasure.uniform(X), DiscreteMeasure.dirac(X, "p1")) == math.inf

    def test_variational_sup(self, rng):
        """The sum formula equals the numerical sup, which is attained at log dν/dμ."""
        for _ in range(5):
            X = random_matrix_space(rng, 5)
            nu, mu = random_measure(rng, X), random_measure(rng, X)
            h = relative_entropy(nu, mu)
            assert _variational_sup(nu, mu, np.arange(5)) == pytest.approx(h, abs=1e-8)
            assert variational_objective(nu, mu, optimal_test_function(nu, mu)) == pytest.approx(h, abs=1e-10)

    def test_optimal_function_with_zeros(self, rng):
        X = random_matrix_space(rng, 6)
        mu = random_measure(rng, X)
        nu = random_measure(rng, X, zeros=0.4)
        h = relative_entropy(nu, mu)
        assert variational_objective(nu, mu, optimal_test_function(nu, mu)) == pytest.approx(h, abs=1e-10)

    def test_convexity(self, rng):
        X = random_matrix_space(rng, 6)
        for _ in range(20):
            mu, n1, n2 = (random_measure(rng, X) for _ in range(3))
            t = float(rng.uniform())
            mix = DiscreteMeasure.from_weights(X, t * n1.weights + (1 - t) * n2.weights, normalize=True)
            assert relative_entropy(mix, mu) <= t * relative_entropy(n1, mu) + (1 - t) * relative_entropy(n2, mu) + 1e-12


class TestPartitionEntropy:
    def test_trivial_and_singletons(self, rng):
        X = random_matrix_space(rng, 6)
        nu, mu = random_measure(rng, X), random_measure(rng, X)
        assert partition_entropy(nu, mu, Partition.trivial(X)) == 0.0
        assert partition_entropy(nu, mu, Partition.singletons(X)) == pytest.approx(relative_entropy(nu, mu), abs=1e-14)

    def test_cell_constant_sup(self, rng):
        X = random_matrix_space(rng, 7)
        nu, mu = random_measure(rng, X), random_measure(rng, X)
        labels = np.array([1, 1, 2, 2, 2, 3, 0])
        G = Partition(X, labels)
        assert partition_entropy(nu, mu, G) == pytest.approx(_variational_sup(nu, mu, labels), abs=1e-8)

    def test_monotone_under_refinement(self, rng):
        X = random_matrix_space(rng, 8)
        coarse = Partition(X, [1, 1, 1, 1, 2, 2, 2, 2])
        fine = Partition(X, [1, 1, 2, 2, 3, 3, 4, 4])
        assert fine.refines(coarse) and not coarse.refines(fine)
        for _ in range(30):
            nu, mu = random_measure(rng, X, zeros=0.2), random_measure(rng, X)
            a, b = partition_entropy(nu, mu, coarse), partition_entropy(nu, mu, fine)
            assert a <= b + 1e-12 <= relative_entropy(nu, mu) + 2e-12

    def test_null_cell(self):
        X = space_from_matrix(np.ones((3, 3)) - np.eye(3))
        mu = DiscreteMeasure.from_weights(X, [0.5, 0.5, 0.0])
        nu = DiscreteMeasure.from_weights(X, [0.5, 0.0, 0.5])
        assert partition_entropy(nu, mu, Partition(X, [1, 2, 3])) == math.inf
        assert partition_entropy(nu, mu, Partition(X, [1, 2, 2])) == 0.0

    def test_invalid_partition(self):
        X = two_points()
        with pytest.raises(ValueError):
            Partition(X, [1, 3])
        with pytest.raises(ValueError):
            Partition.from_cells(X, [PointSet.full(X), PointSet.from_points(X, ["p1"])])


class TestConditioning:
    def test_full_space(self, rng):
        X = random_matrix_space(rng, 5)
        nu, mu = random_measure(rng, X), random_measure(rng, X)
        assert conditioned_entropy(nu, mu, PointSet.full(X)) == pytest.approx(relative_entropy(nu, mu), abs=1e-12)

    def test_self_conditioning(self, rng):
        X = random_matrix_space(rng, 5)
        mu = random_measure(rng, X)
        A = PointSet.from_indices(X, [0, 2])
        want = -math.log(mu.weights[0] + mu.weights[2])
        assert conditioned_entropy(mu, mu, A) == pytest.approx(want, abs=1e-12)

    def test_identity_and_printed_bound(self, rng):
        """Both sides of the identity agree and the bound holds as printed, sign of 1 − μ(A)/ν(A) regardless."""
        X = random_matrix_space(rng, 6)
        negative_seen = False
        for _ in range(200):
            nu, mu = random_measure(rng, X, zeros=0.2), random_measure(rng, X)
            A = PointSet(X, rng.uniform(size=6) < 0.5)
            if nu.mass(A) == 0:
                continue
            t = conditioning_terms(nu, mu, A)
            assert t.value == pytest.approx(t.identity_rhs, rel=1e-10, abs=1e-10)
            assert t.value <= t.bound + 1e-10
            negative_seen |= nu.mass(A) < mu.mass(A)
            conditioned_entropy(nu, mu, A)
        assert negative_seen

    def test_zero_mass(self):
        X = two_points()
        with pytest.raises(ZeroMassError):
            conditioned_entropy(DiscreteMeasure.dirac(X, "p1"), DiscreteMeasure.uniform(X),
                                PointSet.from_points(X, ["p2"]))


class TestPushforward:
    def test_identity_map(self, rng):
        X = random_matrix_space(rng, 4)
        lam, mu = random_measure(rng, X), random_measure(rng, X)
        v, nb = pushforward_entropy(lam, mu, np.arange(4))
        assert v == pytest.approx(relative_entropy(lam, mu), abs=1e-14)
        assert nb.allclose(lam)

    def test_constant_map(self, rng):
        X = random_matrix_space(rng, 4)
        Y = space_from_matrix([[0.0]], ["y"])
        mu = random_measure(rng, X)
        v, nb = pushforward_entropy(DiscreteMeasure.dirac(Y, "y"), mu, np.zeros(4, dtype=np.int64))
        assert v == 0.0 and nb.allclose(mu)

    def test_fiber_grid_search(self, rng):
        """Brute-force minimum over fiber reallocations at resolution 1e-3."""
        X, Y = random_matrix_space(rng, 4), two_points()
        theta = np.array([0, 0, 1, 1])
        for _ in range(3):
            mu, lam = random_measure(rng, X), random_measure(rng, Y)
            v, nb = pushforward_entropy(lam, mu, theta)
            s = np.linspace(0, 1, 1001)
            best = math.inf
            for a in s:
                w0 = [a * lam.weights[0], (1 - a) * lam.weights[0]]
                rows = np.array([[*w0, b * lam.weights[1], (1 - b) * lam.weights[1]] for b in s])
                with np.errstate(divide="ignore", invalid="ignore"):
                    terms = np.where(rows > 0, rows * np.log(rows / mu.weights), 0.0)
                best = min(best, float(terms.sum(axis=1).min()))
            assert v <= best + 1e-12
            assert best - v < 1e-5
            assert pushforward(nb, theta, Y).allclose(lam)
            assert relative_entropy(nb, mu) == pytest.approx(v, abs=1e-10)

    def test_below_any_lift(self, rng):
        X, Y = random_matrix_space(rng, 6), random_matrix_space(rng, 3)
        theta = np.array([0, 0, 1, 1, 2, 2])
        mu = random_measure(rng, X)
        for _ in range(30):
            nu = random_measure(rng, X)
            v, _ = pushforward_entropy(pushforward(nu, theta, Y), mu, theta)
            assert v <= relative_entropy(nu, mu) + 1e-12

    def test_null_fiber(self):
        X = space_from_matrix(np.ones((3, 3)) - np.eye(3))
        mu = DiscreteMeasure.from_weights(X, [0.5, 0.5, 0.0])
        Y = two_points()
        assert pushforward_entropy(DiscreteMeasure.uniform(Y), mu, np.array([0, 0, 1])) == (math.inf, None)


class TestH4Bound:
    def test_uniform(self):
        X = two_points()
        mu = DiscreteMeasure.uniform(X)
        b = h4_bound(mu, mu, PointSet.from_points(X, ["p1"]))
        assert b == pytest.approx(math.log(2) / math.log(3), abs=1e-12)
        assert b == pytest.approx(0.6309, abs=1e-4)

    def test_skewed(self):
        X = two_points()
        mu, nu = DiscreteMeasure.uniform(X), DiscreteMeasure.from_weights(X, [0.9, 0.1])
        assert relative_entropy(nu, mu) == pytest.approx(0.3681, abs=1e-4)
        b = h4_bound(nu, mu, PointSet.from_points(X, ["p1"]))
        assert b == pytest.approx(0.9660, abs=1e-4) and b >= 0.9

    def test_dirac(self):
        X = two_points()
        b = h4_bound(DiscreteMeasure.dirac(X, "p2"), DiscreteMeasure.uniform(X), PointSet.from_points(X, ["p2"]))
        assert math.isfinite(b) and b >= 1

    def test_dominates_mass(self, rng):
        X = random_matrix_space(rng, 6)
        for _ in range(100):
            nu, mu = random_measure(rng, X), random_measure(rng, X)
            A = PointSet(X, rng.uniform(size=6) < 0.4)
            if A.is_empty():
                continue
            assert h4_bound(nu, mu, A) >= nu.mass(A)

    def test_errors(self):
        X = two_points()
        with pytest.raises(ValueError):
            h4_bound(DiscreteMeasure.uniform(X), DiscreteMeasure.dirac(X, "p1"), PointSet.full(X))
        with pytest.raises(ZeroMassError):
            h4_bound(DiscreteMeasure.dirac(X, "p1"), DiscreteMeasure.dirac(X, "p1"), PointSet.from_points(X, ["p2"]))


class TestRefiningPartitions:
    def setup_method(self):
        self.X = build_grid_space(1, (0, 1), 0.125)
        rng = np.random.default_rng(7)
        self.mu, self.nu = random_measure(rng, self.X), random_measure(rng, self.X)

    def test_coarse(self):
        S = refining_partitions(self.X, self.mu, self.nu, [2.0], [PointSet.full(self.X)])
        assert S.partitions[0].n_cells == 1
        assert S.entropies(self.nu, self.mu) == [0.0]

    def test_fine(self):
        S = refining_partitions(self.X, self.mu, self.nu, [0.1], [PointSet.full(self.X)])
        assert S.partitions[0].n_cells == len(self.X)
        assert S.entropies(self.nu, self.mu)[0] == pytest.approx(relative_entropy(self.nu, self.mu), abs=1e-14)

    def test_schedule(self):
        X = self.X
        Ks = [PointSet(X, X.coords[:, 0] <= 0.5), PointSet.full(X), PointSet.full(X)]
        S = refining_partitions(X, self.mu, self.nu, [0.5, 0.3, 0.1], Ks)
        for k, G in enumerate(S.partitions):
            assert np.all(G.diameters() < S.deltas[k])
            assert Ks[k] <= PointSet(X, G.labels > 0)
            if k:
                assert G.refines(S.partitions[k - 1])
        h = S.entropies(self.nu, self.mu)
        assert all(a <= b + 1e-14 for a, b in zip(h, h[1:]))
        assert h[-1] == pytest.approx(relative_entropy(self.nu, self.mu), abs=1e-14)

    def test_bad_schedules(self):
        full = [PointSet.full(self.X)]
        with pytest.raises(ScheduleError):
            refining_partitions(self.X, self.mu, self.nu, [0.1, 0.2], full)
        with pytest.raises(ScheduleError):
            refining_partitions(self.X, self.mu, self.nu, [0.1], [PointSet.from_indices(self.X, [0])])


@given(st.lists(st.floats(0.01, 1), min_size=3, max_size=3), st.lists(st.floats(0.01, 1), min_size=3, max_size=3))
def test_entropy_nonnegative_and_zero_iff_equal(a, b):
    X = space_from_matrix(np.ones((3, 3)) - np.eye(3))
    nu = DiscreteMeasure.from_weights(X, a, normalize=True)
    mu = DiscreteMeasure.from_weights(X, b, normalize=True)
    h = relative_entropy(nu, mu)
    assert h >= 0
    if h == 0:
        assert nu.allclose(mu, atol=1e-6)
