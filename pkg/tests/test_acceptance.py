"""Acceptance criteria 1-11.

Each test prints one ``criterion N: PASS|FAIL`` line with its measured
numbers and wall time, then asserts. Run ``pytest tests/test_acceptance.py -v``
or ``python tests/test_acceptance.py`` for just the summary lines.
"""

import json
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
from scipy.special import rel_entr
from scipy.stats import binom, multinomial

from ldgamma.cli import main
from ldgamma.contraction import GridMap, lambda_lower, lambda_sets, lambda_upper
from ldgamma.entropy import (
    Partition,
    conditioning_terms,
    h4_bound,
    optimal_test_function,
    partition_entropy,
    pushforward_entropy,
    refining_partitions,
    relative_entropy,
    variational_objective,
)
from ldgamma.families import cubic_tail_family, gaussian_family, geometric_family, prefix_truncations, two_point_family
from ldgamma.gamma import Functional, FunctionalSequence, gamma_estimates
from ldgamma.ld_rate import Speed, entropy_rate_gamma, estimate_rate_ball, exp_tightness_profile, setmap_rate_gamma
from ldgamma.measure import DiscreteMeasure
from ldgamma.metric_space import PointSet, build_grid_space, space_from_matrix
from ldgamma.sanov import TypeVector, first_order_rate, gibbs_array, mc_type_set_probability, second_order_rate

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "ldgamma" / "fixtures"
LIN = Speed.linear()


class Check:
    """Collects failures for one criterion; ``ok`` is False once anything fails."""

    def __init__(self):
        self.failures: list[str] = []
        self.notes: list[str] = []

    def expect(self, cond, what: str) -> None:
        if not cond:
            self.failures.append(what)

    def note(self, text: str) -> None:
        self.notes.append(text)


@contextmanager
def criterion(number: int, limit: float, capsys):
    chk = Check()
    t0 = time.perf_counter()
    yield chk
    elapsed = time.perf_counter() - t0
    chk.expect(elapsed < limit, f"runtime {elapsed:.1f} s exceeds {limit:g} s")
    status = "PASS" if not chk.failures else "FAIL"
    detail = "; ".join(chk.notes + chk.failures[:3])
    with capsys.disabled():
        print(f"\ncriterion {number}: {status} ({elapsed:.2f} s < {limit:g} s) {detail}")
    assert not chk.failures, chk.failures


def random_pair(rng, k, nu_zeros=0.0, mu_zeros=0.0):
    """Random ``(ν, μ)`` on a random metric space of ``k`` points."""
    pts = rng.uniform(0, 1, (k, 2))
    X = space_from_matrix(np.linalg.norm(pts[:, None] - pts[None], axis=-1))
    mu = rng.dirichlet(np.ones(k)) * (rng.uniform(size=k) >= mu_zeros)
    nu = rng.dirichlet(np.ones(k)) * (rng.uniform(size=k) >= nu_zeros)
    mu[rng.integers(k)] += 0.1
    nu[rng.integers(k)] += 0.1
    return X, DiscreteMeasure.from_weights(X, nu, normalize=True), DiscreteMeasure.from_weights(X, mu, normalize=True)


def oracle_entropy(nu: np.ndarray, mu: np.ndarray) -> float:
    return float(math.fsum(rel_entr(nu, mu)))


def run_cli(tmp_path, name, *extra, out=None):
    cfg = FIXTURES / f"{name}.ini"
    out_dir = tmp_path / (out or name)
    code = main([cfg.stem.split("_", 1)[0], "--config", str(cfg), "--out-dir", str(out_dir), *extra])
    return code, json.loads((out_dir / "report.json").read_text()), out_dir


def output_bytes(out_dir: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(out_dir.iterdir()) if p.name != "runtime.json"}


def test_criterion_1_entropy_exactness(capsys):
    rng = np.random.default_rng(1)
    with criterion(1, 5.0, capsys) as c:
        worst = worst_cond = 0.0
        infinite = 0
        for i in range(1000):
            k = int(rng.integers(1, 21))
            X, nu, mu = random_pair(rng, k, nu_zeros=0.2, mu_zeros=0.1 if i % 10 == 0 else 0.0)
            H = relative_entropy(nu, mu)
            ref = oracle_entropy(nu.weights, mu.weights)
            c.expect(H == ref or abs(H - ref) <= 1e-10 * max(1.0, ref), f"H vs oracle at {i}")
            A = PointSet(X, rng.uniform(size=k) < 0.5)
            if math.isinf(H):
                infinite += 1
                bad = (nu.weights > 0) & (mu.weights == 0)
                phi = np.where(bad, 1e6, 0.0)
                c.expect(variational_objective(nu, mu, phi) >= 1e6 * nu.weights[bad].sum() - 1e-6, f"sup at {i}")
            else:
                phi = optimal_test_function(nu, mu)
                v = variational_objective(nu, mu, phi)
                worst = max(worst, abs(v - H))
                c.expect(abs(v - H) <= 1e-10, f"sup attained at {i}")
                for _ in range(3):
                    c.expect(variational_objective(nu, mu, rng.normal(0, 3, k)) <= H + 1e-10, f"sup bound at {i}")
                if mu.mass(A) > 0:
                    c.expect(nu.mass(A) <= h4_bound(nu, mu, A) + 1e-12, f"H4 at {i}")
            if nu.mass(A) > 0:
                t = conditioning_terms(nu, mu, A)
                w = np.where(A.mask, nu.weights, 0.0)
                direct = oracle_entropy(w / w.sum(), mu.weights)
                if math.isinf(direct):
                    c.expect(t.value == t.identity_rhs == math.inf, f"conditioning at {i}")
                else:
                    err = max(abs(t.value - direct), abs(t.value - t.identity_rhs))
                    worst_cond = max(worst_cond, err / max(1.0, direct))
                    c.expect(err <= 1e-10 * max(1.0, direct), f"conditioning identity at {i}")
                    c.expect(t.value <= t.bound + 1e-10 * max(1.0, abs(t.bound)), f"conditioning bound at {i}")
        c.expect(infinite > 0, "no instance without absolute continuity")
        c.note(f"max sup gap {worst:.1e}, max conditioning gap {worst_cond:.1e}, {infinite} infinite cases")


def test_criterion_2_projection_identity(capsys):
    rng = np.random.default_rng(2)
    with criterion(2, 10.0, capsys) as c:
        worst = 0.0
        checked = 0
        for i in range(200):
            k, m = int(rng.integers(2, 21)), int(rng.integers(1, 8))
            X, _, mu = random_pair(rng, k, mu_zeros=0.15)
            Y = space_from_matrix(np.abs(np.subtract.outer(np.arange(m), np.arange(m))).astype(float))
            idx = rng.integers(0, m, k)
            image = np.bincount(idx, weights=mu.weights, minlength=m)
            lam_w = rng.dirichlet(np.ones(m)) * (image > 0 if i % 5 else np.ones(m))
            if lam_w.sum() == 0:
                lam_w = image.copy()
            lam = DiscreteMeasure.from_weights(Y, lam_w, normalize=True)
            value, nu_bar = pushforward_entropy(lam, mu, idx)
            ref = oracle_entropy(lam.weights, image)
            if math.isinf(ref):
                c.expect(value == math.inf and nu_bar is None, f"infinite case at {i}")
                continue
            c.expect(abs(value - ref) <= 1e-10 * max(1.0, ref), f"value at {i}")
            h_bar = oracle_entropy(nu_bar.weights, mu.weights)
            worst = max(worst, abs(h_bar - ref))
            c.expect(abs(h_bar - ref) <= 1e-10 * max(1.0, ref), f"minimizer entropy at {i}")
            c.expect(np.allclose(np.bincount(idx, weights=nu_bar.weights, minlength=m), lam.weights, atol=1e-12),
                     f"minimizer marginal at {i}")
            for _ in range(50):
                w = rng.uniform(0, 1, k) * (mu.weights > 0)
                fiber = np.bincount(idx, weights=w, minlength=m)
                nu = np.where(fiber[idx] > 0, lam.weights[idx] * w / np.where(fiber[idx] > 0, fiber[idx], 1), 0.0)
                if not np.allclose(np.bincount(idx, weights=nu, minlength=m), lam.weights, atol=1e-12):
                    continue
                checked += 1
                c.expect(value <= oracle_entropy(nu, mu.weights) + 1e-12, f"projection minimality at {i}")
        c.expect(checked >= 5000, f"only {checked} fiber-consistent measures")
        c.note(f"max identity gap {worst:.1e}, {checked} fiber-consistent competitors")


def test_criterion_3_partition_convergence(capsys):
    rng = np.random.default_rng(3)
    grids = [build_grid_space(1, (0, 1), 1 / 16), build_grid_space(1, (0, 2), 1 / 8), build_grid_space(2, (0, 1), 1 / 4)]
    with criterion(3, 5.0, capsys) as c:
        worst = 0.0
        for i in range(100):
            X = grids[i % 3]
            h = X.resolution
            mu = DiscreteMeasure.from_weights(X, rng.dirichlet(np.ones(len(X))) * (rng.uniform(size=len(X)) > 0.05),
                                              normalize=True)
            nu = DiscreteMeasure.from_weights(X, rng.dirichlet(np.ones(len(X))) * (mu.weights > 0 if i % 10 else 1),
                                              normalize=True)
            centre = X.coords.mean(axis=0)
            radius = np.abs(X.coords - centre).max(axis=1)
            ks = [PointSet(X, radius <= r + 1e-12) for r in np.linspace(0.25, 1, 4) * radius.max()]
            deltas = [h * f for f in (8, 4, 2, 1)]
            sched = refining_partitions(X, mu, nu, deltas, ks)
            ents = sched.entropies(nu, mu)
            c.expect(all(b >= a - 1e-12 for a, b in zip(ents, ents[1:])), f"not nondecreasing at {i}: {ents}")
            last: Partition = sched.partitions[-1]
            c.expect(last.n_cells == len(X) and not np.any(last.labels == 0), f"not singletons at {i}")
            H = relative_entropy(nu, mu)
            single = partition_entropy(nu, mu, last)
            if math.isinf(H):
                c.expect(single == math.inf, f"singleton entropy at {i}")
            else:
                worst = max(worst, abs(single - H))
                c.expect(abs(single - H) <= 1e-12 * max(1.0, H), f"singleton entropy at {i}")
        c.note(f"max singleton gap {worst:.1e}")


def test_criterion_4_gamma_oracle(capsys):
    def ev(n):
        X = build_grid_space(1, (0, 1), 1.0 / (20 * n))
        return Functional.from_function(X, lambda y: (y - 0.5) ** 2 + 1 + np.sin(2 * np.pi * n * y))

    seq = FunctionalSequence(ev)
    with criterion(4, 30.0, capsys) as c:
        worst = 0.0
        for y in np.linspace(0, 1, 11):
            lo, hi = gamma_estimates(seq, float(y), (0.05, 0.025, 0.0125, 0.00625), (50, 200))
            target = (y - 0.5) ** 2
            err = max(abs(lo.value - target), abs(hi.value - target))
            worst = max(worst, err)
            c.expect(err <= 2e-2, f"y={y:.1f}: {lo.value:.4f}, {hi.value:.4f} vs {target:.4f}")
            c.expect(bool(np.all(lo.trace <= hi.trace)), f"trace order at y={y:.1f}")
            c.expect(lo.ns[-1] == 200, "window end")
        c.note(f"max error {worst:.4f} <= 2e-2")


def test_criterion_5_first_order_sanov(capsys):
    rng = np.random.default_rng(5)
    with criterion(5, 10.0, capsys) as c:
        count = 0
        worst = 0.0
        for k in (2, 3):
            A = space_from_matrix(1.0 - np.eye(k))
            for n in (10, 10**2, 10**3, 10**4):
                for _ in range(50):
                    p = rng.dirichlet(np.ones(k))
                    mu = DiscreteMeasure.from_weights(A, p)
                    t = TypeVector(A, rng.multinomial(n, rng.dirichlet(np.ones(k))))
                    r = first_order_rate(t, mu)
                    ref = -float(multinomial.logpmf(t.counts, n, mu.weights)) / n
                    c.expect(abs(r.value - ref) <= 1e-9 * max(1.0, ref), f"probability oracle k={k} n={n}")
                    c.expect(abs(r.value - r.target) <= k * math.log(n + 1) / n, f"sandwich k={k} n={n}")
                    worst = max(worst, abs(r.value - r.target) / r.bound)
                    count += 1
        c.note(f"{count} instances, max |rate - H| / bound = {worst:.3f}")


def test_criterion_6_second_order_sanov(capsys):
    A = space_from_matrix(1.0 - np.eye(2))
    speed = Speed(lambda n: math.sqrt(n), name="sqrt n")
    spec = gibbs_array(A, [0.0, 1.0], speed)
    with criterion(6, 5.0, capsys) as c:
        summary = []
        for q in (0.0, 0.25, 0.5, 0.75):
            gaps = []
            for n in (10**2, 10**3, 10**4):
                ones = int(round(q * n))
                r = second_order_rate(TypeVector(A, [n - ones, ones]), spec)
                p1 = math.exp(-math.sqrt(n)) / (1 + math.exp(-math.sqrt(n)))
                ref = -float(binom.logpmf(ones, n, p1)) / (n * math.sqrt(n))
                c.expect(abs(r.value - ref) <= 1e-9 * max(1.0, ref), f"binomial oracle q={q} n={n}")
                c.expect(r.target == q, f"target q={q}")
                gaps.append(abs(r.value - q))
            c.expect(gaps[-1] <= 0.1, f"gap {gaps[-1]:.4f} at q={q}")
            c.expect(all(b < a for a, b in zip(gaps, gaps[1:])), f"gaps not decreasing at q={q}: {gaps}")
            summary.append(f"{q}: {gaps[-1]:.4f}")
        c.note("gap at n=1e4 " + ", ".join(summary))


def test_criterion_7_three_representations(capsys):
    window = (1000, 10000, 250)
    with criterion(7, 60.0, capsys) as c:
        seq = two_point_family(LIN)
        X = seq(1).space
        deltas = (0.5, 0.2, 0.1, 0.05, 0.02)
        vals = [v.value for v in estimate_rate_ball(seq, LIN, "rare", deltas, window)
                + entropy_rate_gamma(seq, LIN, "rare", None, deltas, window)
                + setmap_rate_gamma(seq, LIN, PointSet.from_points(X, ["rare"]), deltas, window)]
        c.expect(max(vals) - min(vals) <= 1e-1, f"two-point spread {vals}")
        c.expect(all(abs(v - 1.0) <= 1e-1 for v in vals), f"two-point values {vals}")
        c.note(f"two-point {min(vals):.4f}..{max(vals):.4f}")

        seq = gaussian_family()
        X = seq(1).space
        worst = 0.0
        for x in (0.0, 0.5, 1.0):
            vals = [v.value for v in estimate_rate_ball(seq, LIN, x, (0.05,), window)
                    + entropy_rate_gamma(seq, LIN, x, None, (0.05,), window)
                    + setmap_rate_gamma(seq, LIN, PointSet.from_points(X, [x]), (0.05,), window)]
            c.expect(max(vals) - min(vals) <= 1e-1, f"gaussian spread at {x}: {vals}")
            err = max(abs(v - x * x / 2) for v in vals)
            worst = max(worst, err)
            c.expect(err <= 5e-2, f"gaussian x={x}: {vals}")
        c.note(f"gaussian max |estimate - x^2/2| {worst:.4f} at delta=0.05, N1=1e4")


def test_criterion_8_tightness(capsys):
    window = (100, 1000, 50)
    with criterion(8, 10.0, capsys) as c:
        seq = geometric_family(LIN)
        X = seq(1).space
        prof = exp_tightness_profile(seq, LIN, prefix_truncations(X, range(1, 7)), window)
        steps = np.diff(prof.tail)
        c.expect(prof.tight, "geometric family not classified tight")
        c.expect(prof.slope <= -0.9 and bool(np.all(steps <= -0.9)), f"geometric slope {prof.slope}")
        seq = cubic_tail_family()
        X = seq(1).space
        heavy = exp_tightness_profile(seq, LIN, prefix_truncations(X, [1, 2, 4, 8, 16, 32]), window)
        c.expect(not heavy.tight, "cubic tail classified tight")
        c.expect(bool(np.all(heavy.profile >= -0.1)), f"cubic profile min {heavy.profile.min()}")
        c.note(f"geometric slope {prof.slope:.4f}, cubic profile min {heavy.profile.min():.4f}")


def test_criterion_9_contraction(tmp_path, capsys):
    rng = np.random.default_rng(9)
    with criterion(9, 20.0, capsys) as c:
        X1, X2 = build_grid_space(1, (0, 1), 0.125), build_grid_space(2, (0, 1), 0.25)
        Y = build_grid_space(1, (0, 1), 0.25)
        for i in range(500):
            X = X1 if i % 2 else X2
            theta = GridMap(X, Y, rng.integers(0, len(Y), len(X)), lipschitz=float(rng.uniform(0.5, 4)))
            y = Y.ids[int(rng.integers(len(Y)))]
            fiber = theta.preimage(PointSet.from_points(Y, [y]))
            lows, ups = lambda_sets(theta, y, (1.0, 0.6, 0.3, 0.2, 0.1))
            c.expect(lows[-1] <= fiber <= ups[-1], f"sandwich at {i}")

        Xs, Yt = build_grid_space(1, (0, 1), 0.05), build_grid_space(1, (-1, 2), 0.1)
        for i in range(100):
            a, b = rng.uniform(-1, 1), rng.uniform(-0.5, 0.5)
            theta = GridMap.from_function(Xs, Yt, lambda x: a * x + b, lipschitz=2.0)
            c.expect(theta.is_grid_lipschitz(), f"map {i} not grid-Lipschitz")
            for y in Yt.ids:
                fiber = theta.preimage(PointSet.from_points(Yt, [y]))
                c.expect(lambda_lower(theta, y, (0.05,)) == fiber == lambda_upper(theta, y, (0.05,)),
                         f"collapse at map {i}, y={y}")

        code, rep, _ = run_cli(tmp_path, "contract_step")
        p0 = next(p for p in rep["results"]["points"] if p["y"] == "0")
        # grid increment: oscillation of (x-1)^2 over the finest source ball around the jump
        x = np.arange(-2, 3) * 0.01
        inc = float(np.abs((x - 1) ** 2 - 1).max())
        c.expect(abs(p0["J_bar"] - 1) <= inc and abs(p0["J_under"] - 1) <= inc,
                 f"step J_bar={p0['J_bar']}, J_under={p0['J_under']}, increment {inc:.4f}")
        margins = []
        for name in ("contract_step", "contract_halving", "contract_fold"):
            code, rep, _ = run_cli(tmp_path, name)
            c.expect(code == 0 and rep["status"] == "pass", f"{name} status {rep['status']}")
            for p in rep["results"]["points"]:
                margins += [p["upper"]["margin"], p["lower"]["margin"]]
        c.expect(min(margins) >= 0, f"negative margin {min(margins)}")
        code, rep, _ = run_cli(tmp_path, "contract_runaway")
        low = rep["results"]["points"][0]["lower"]
        c.expect(code == 2 and rep["status"] == "hypothesis-failed" and low["status"] == "hypothesis-failed",
                 "non-equicoercive case not reported as hypothesis-failed")
        c.note(f"step J_bar={p0['J_bar']:.4f} J_under={p0['J_under']:.4f} (increment {inc:.4f}), "
               f"min margin {min(margins):.4f} over {len(margins)}")


def test_criterion_10_coupled(tmp_path, capsys):
    with criterion(10, 60.0, capsys) as c:
        code, rep, _ = run_cli(tmp_path, "coupled_decoupled")
        gaps = [abs(p["rate_check"]["lhs"] - (p["K"] + p["J"])) for p in rep["results"]["points"]]
        c.expect(code == 0 and max(gaps) <= 1e-10, f"decoupled additivity gaps {gaps}")
        code, rep, _ = run_cli(tmp_path, "coupled_weak")
        weak = rep["results"]["points"]
        c.expect(code == 0 and all(p["rate_check"]["status"] == "pass" for p in weak), "weak coupling check")
        c.expect(all(p["rate_check"]["tolerance"] == 0.1 for p in weak), "weak coupling tolerance")
        c.expect(all(p["max_unsolved_mass"] == 0 for p in weak), "weak coupling unsolved outcomes")
        code, rep, _ = run_cli(tmp_path, "coupled_jump")
        jump = rep["results"]["points"][0]
        c.expect(code == 2 and not jump["regularity"]["iii"]["consistent"] and not jump["asserted"],
                 "jump system not flagged")
        c.note(f"decoupled gap {max(gaps):.1e}, weak margins "
               + ", ".join(f"{p['rate_check']['margin']:.3f}" for p in weak) + ", jump flagged")


def test_criterion_11_determinism(tmp_path, capsys):
    with criterion(11, 120.0, capsys) as c:
        for name in ("sanov_mc", "gamma_oscillating", "coupled_weak"):
            outs = []
            for run, threads in enumerate(("1", "8", "1", "8")):
                _, _, out_dir = run_cli(tmp_path, name, "--threads", threads, "--seed", "99", out=f"{name}-{run}")
                outs.append(output_bytes(out_dir))
            c.expect(all(o == outs[0] for o in outs), f"{name} outputs differ")
        A = space_from_matrix(1.0 - np.eye(3))
        mu = DiscreteMeasure.from_weights(A, [0.5, 0.3, 0.2])
        event = lambda t: t.counts[2] >= 6
        runs = [mc_type_set_probability(mu, event, 15, 20000, seed=11, threads=th) for th in (1, 8, 1, 8)]
        c.expect(all(r == runs[0] for r in runs), "library Monte Carlo differs across threads")
        c.note("3 fixtures x 4 runs byte-identical; library MC identical under 1 and 8 threads")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
