import itertools
import math

import numpy as np
import pytest

from ldgamma.coupled import (
    CoupledLevel,
    CoupledSystem,
    Modulus,
    check_regularity,
    coupled_rate_check,
    decoupled_system,
    frozen_laws,
    frozen_rate_estimates,
    joint_law,
    jump_system,
    solve_system,
    weak_coupling_rates,
    weak_coupling_system,
    _solve_all,
)
from ldgamma.errors import CycleError, EnumerationCapError, InvariantViolation
from ldgamma.ld_rate import PASS, Speed
from ldgamma.measure import product
from ldgamma.metric_space import build_grid_space
from ldgamma.families import two_point_space

LIN = Speed.linear()


def uniform_logs(k):
    return np.full(k, -math.log(k))


def contraction_system(points=11, outcomes=5):
    """F(y, ω) = snap(u_ω + y/4), G(x, ω) = snap(v_ω + x/4) on [0, 1]: both maps contract by 1/4."""
    X = build_grid_space(1, (0, 1), 1 / (points - 1))
    g = X.coords[:, 0]
    u = np.linspace(0, 0.7, outcomes)
    v = u[::-1]
    snap = lambda t: np.clip(np.rint(t * (points - 1)), 0, points - 1).astype(np.int64)
    F = snap(u[None, :] + g[:, None] / 4)
    G = snap(v[None, :] + g[:, None] / 4)
    lev = CoupledLevel(uniform_logs(outcomes), uniform_logs(outcomes), F, G)
    return CoupledSystem(X, X, lambda n: lev, Modulus.identity_cap(4.0), y0=0)


def swap_system():
    """ω¹ = 0 makes F flip y while G copies x (a 2-cycle); ω¹ = 1 sends everything to ``common``."""
    X = two_point_space()
    lev = CoupledLevel(uniform_logs(2), np.zeros(1), np.array([[1, 0], [0, 0]]), np.array([[0], [1]]))
    return CoupledSystem(X, X, lambda n: lev, Modulus.identity_cap(4.0), y0="common")


class TestModulusAndValidation:
    def test_modulus(self):
        q = Modulus.identity_cap(2.0)
        assert q(0.0) == 0.0 and q(1.5) == 1.5 and q(10.0) == 2.0
        with pytest.raises(ValueError):
            Modulus((0.0, 1.0), (0.5, 1.0))
        with pytest.raises(ValueError):
            Modulus((0.0, 1.0), (0.0, np.inf))
        with pytest.raises(ValueError):
            Modulus((0.0, 1.0, 2.0), (0.0, 2.0, 1.0))

    def test_level_normalization(self):
        with pytest.raises(ValueError):
            CoupledLevel(np.array([0.0, 0.0]), np.zeros(1), np.zeros((2, 2)), np.zeros((2, 1)))

    def test_outcome_cap(self):
        X = two_point_space()
        lev = CoupledLevel(uniform_logs(100), uniform_logs(100), np.zeros((2, 100)), np.zeros((2, 100)))
        sys = CoupledSystem(X, X, lambda n: lev, Modulus.identity_cap(1.0))
        with pytest.raises(EnumerationCapError):
            sys(1)

    def test_map_range(self):
        X = two_point_space()
        lev = CoupledLevel(np.zeros(1), np.zeros(1), np.full((2, 1), 5), np.zeros((2, 1)))
        with pytest.raises(ValueError):
            CoupledSystem(X, X, lambda n: lev, Modulus.identity_cap(1.0))(1)


class TestSolve:
    def test_decoupled(self):
        sys = decoupled_system(LIN)
        lev = sys(3)
        for w1, w2 in itertools.product(range(2), repeat=2):
            assert solve_system(sys, 3, w1, w2) == (lev.F[0, w1], lev.G[0, w2])

    def test_contraction_exhaustive(self):
        """The iterated fixed point solves both equations and matches a scan of X × Y.

        Rounding to the grid can create a second solution next to the first;
        then the iteration must still return one of the scanned solutions.
        """
        sys = contraction_system()
        lev = sys(1)
        unique = 0
        for w1, w2 in itertools.product(range(5), repeat=2):
            sols = [(i, j) for i in range(len(sys.X)) for j in range(len(sys.Y))
                    if lev.F[j, w1] == i and lev.G[i, w2] == j]
            got = solve_system(sys, 1, w1, w2)
            assert got in sols
            unique += len(sols) == 1
        assert unique >= 20

    def test_two_cycle(self):
        sys = swap_system()
        with pytest.raises(CycleError):
            solve_system(sys, 1, 0, 0)
        with pytest.raises(InvariantViolation, match="unsolved"):
            joint_law(sys, 1)
        jl = joint_law(sys, 1, abort=1.0)
        assert jl.unsolved_mass == pytest.approx(0.5, abs=1e-15)
        assert jl.law.weights[0] == pytest.approx(1.0)

    def test_vectorized_agrees(self, rng):
        X = build_grid_space(1, (0, 1), 0.25)
        for _ in range(10):
            lev = CoupledLevel(uniform_logs(6), uniform_logs(4), rng.integers(0, 5, (5, 6)), rng.integers(0, 5, (5, 4)))
            sys = CoupledSystem(X, X, lambda n, lev=lev: lev, Modulus.identity_cap(1.0))
            xs, ys, ok = _solve_all(sys, lev)
            for k, (w1, w2) in enumerate(itertools.product(range(6), range(4))):
                try:
                    x, y = solve_system(sys, 1, w1, w2)
                except CycleError:
                    assert not ok[k]
                    continue
                assert ok[k] and (xs[k], ys[k]) == (x, y)
                assert lev.F[y, w1] == x and lev.G[x, w2] == y


class TestFrozenLaws:
    def test_decoupled_marginals(self):
        sys = decoupled_system(LIN)
        mx, my = frozen_laws(sys, 4, "common", "rare")
        np.testing.assert_allclose(mx.log_weights, sys(4).log_p1, atol=1e-15)
        np.testing.assert_allclose(my.log_weights, sys(4).log_p2, atol=1e-15)

    def test_dirac_inputs(self):
        X = two_point_space()
        lev = CoupledLevel(np.zeros(1), np.zeros(1), np.array([[1], [1]]), np.array([[0], [0]]))
        sys = CoupledSystem(X, X, lambda n: lev, Modulus.identity_cap(1.0))
        mx, my = frozen_laws(sys, 1, "common", "common")
        assert mx.support.ids == ["rare"] and my.support.ids == ["common"]

    def test_fiber_sums(self):
        sys = weak_coupling_system(LIN)
        lev = sys(7)
        x, y = 0.5, 0.25
        mx, my = frozen_laws(sys, 7, x, y)
        j, i = sys.Y.index_of(y), sys.X.index_of(x)
        p1, p2 = np.exp(lev.log_p1), np.exp(lev.log_p2)
        want_x = [math.fsum(p1[lev.F[j] == k]) for k in range(len(sys.X))]
        want_y = [math.fsum(p2[lev.G[i] == k]) for k in range(len(sys.Y))]
        np.testing.assert_allclose(mx.weights, want_x, atol=1e-14)
        np.testing.assert_allclose(my.weights, want_y, atol=1e-14)


class TestRegularity:
    def test_decoupled_is_empty(self):
        prof = check_regularity(decoupled_system(LIN), LIN, "rare", "rare", (0.1, 0.5), (10, 100))
        assert np.all(prof.profile == -np.inf) and prof.consistent
        prof4 = check_regularity(decoupled_system(LIN), LIN, "rare", "rare", (0.1, 0.5), (10, 100), which="iv")
        assert prof4.consistent

    def test_jump_stalls(self):
        prof = check_regularity(jump_system(LIN), LIN, "common", "common", (0.1, 0.5, 1.0), (10, 100))
        assert not prof.consistent
        np.testing.assert_allclose(prof.tail, 0.0, atol=1e-3)
        # direct enumeration: solution is (rare, rare), frozen images are common unless ω¹ = rare
        n = 100
        p_common = 1 - math.exp(-n)
        assert prof.profile[0, -1] == pytest.approx(math.log(p_common) / n, abs=1e-15)

    def test_large_constant_modulus(self):
        """Frozen images stay at distance 1 from (common, common); a modulus above the diameters empties the event."""
        X = two_point_space()
        lev = CoupledLevel(np.zeros(1), np.zeros(1), np.ones((2, 1)), np.array([[0], [1]]))
        make = lambda q: CoupledSystem(X, X, lambda n: lev, q, y0="rare")
        tight = check_regularity(make(Modulus.identity_cap(4.0)), LIN, "common", "common", (0.5,), (10, 100))
        assert np.all(tight.profile == 0.0) and not tight.consistent
        loose = check_regularity(make(Modulus.constant(10.0)), LIN, "common", "common", (0.5,), (10, 100))
        assert np.all(loose.profile == -np.inf) and loose.consistent

    def test_monotone_in_eps(self):
        sys = weak_coupling_system(LIN)
        for which in ("iii", "iv"):
            prof = check_regularity(sys, LIN, 0.5, 0.5, (0.01, 0.05, 0.1, 0.3), (5, 40, 5), which=which)
            for a, b in zip(prof.profile, prof.profile[1:]):
                assert all(v == u or v <= u + 1e-12 for u, v in zip(a, b))
            assert prof.rows()[0][0] == "eps"

    def test_validation(self):
        with pytest.raises(ValueError):
            check_regularity(jump_system(LIN), LIN, "common", "common", (0.1,), (1, 5), which="v")
        with pytest.raises(ValueError):
            check_regularity(jump_system(LIN), LIN, "common", "common", (0.0,), (1, 5))


class TestRateCheck:
    def test_decoupled_exact_additivity(self):
        """γ_n is the product of the frozen laws and the joint ball-rate is the sum of marginal ones."""
        sys = decoupled_system(LIN)
        for n in (3, 30):
            mx, my = frozen_laws(sys, n, "rare", "rare")
            np.testing.assert_array_equal(joint_law(sys, n).law.log_weights, product(mx, my, sys.XY).log_weights)
        c = coupled_rate_check(sys, LIN, "rare", "rare", 1.0, 2.0, {"deltas": (0.5,), "window": (10, 100)})
        assert c.verdict.status == PASS and c.verdict.lhs == pytest.approx(3.0, abs=1e-12)
        k, j = frozen_rate_estimates(sys, LIN, "rare", "rare", (0.5,), (10, 100))
        assert c.verdict.lhs == pytest.approx(k + j, abs=1e-12)
        assert c.max_unsolved_mass == 0.0

    def test_dirac_system(self):
        X = two_point_space()
        lev = CoupledLevel(np.zeros(1), np.zeros(1), np.zeros((2, 1)), np.zeros((2, 1)))
        sys = CoupledSystem(X, X, lambda n: lev, Modulus.identity_cap(1.0))
        c = coupled_rate_check(sys, LIN, "common", "common", 0.0, 0.0, {"deltas": (0.5,), "window": (1, 20)})
        assert c.verdict.lhs == 0.0 and c.verdict.status == PASS

    def test_weak_coupling(self):
        sys = weak_coupling_system(LIN)
        for x, y in ((0.5, 0.5), (0.25, 0.75), (0.375, 0.5)):
            K, J = weak_coupling_rates(x, y)
            c = coupled_rate_check(sys, LIN, x, y, K, J, {"deltas": (0.125, 0.0625), "window": (50, 400, 25),
                                                          "tolerance": 0.1})
            assert c.verdict.status == PASS, (x, y, c.verdict)
            # every outcome solves: F, G move by at most a grid step when 1/n is small
            assert c.max_unsolved_mass == 0.0

    def test_unsolved_abort_propagates(self):
        with pytest.raises(InvariantViolation):
            coupled_rate_check(swap_system(), LIN, "common", "common", 0, 0, {"deltas": (0.5,), "window": (1, 5)})
