"""Config-driven experiment runner.

Every subcommand reads a plain-text config, validates it completely, runs,
and writes CSV tables plus ``report.json`` into ``--out-dir``. Wall-clock
timings go to a separate ``runtime.json`` so reports are byte-identical
across runs with the same config and seed.

Exit codes: 0 pass, 1 fail, 2 inconclusive, 3 invalid config or schedule.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np
import scipy

from . import __version__
from ._parallel import set_default_threads
from .config import Config, ConfigError, Section, load_config
from .contraction import HYPOTHESIS_FAILED, GridMap, MapSequence, gamma_contraction_check
from .coupled import (
    CoupledLevel,
    CoupledSystem,
    Modulus,
    check_regularity,
    coupled_rate_check,
    decoupled_system,
    frozen_rate_estimates,
    jump_system,
    weak_coupling_rates,
    weak_coupling_system,
)
from .entropy import (
    optimal_test_function,
    refining_partitions,
    relative_entropy,
    variational_objective,
)
from .errors import InvariantViolation, ScheduleError
from .expr import ExprError
from .families import (
    cubic_tail_family,
    gaussian_family,
    gaussian_rate,
    geometric_family,
    prefix_truncations,
    two_point_family,
    two_point_space,
)
from .gamma import Functional, FunctionalSequence, as_window, box_truncations, check_deltas, check_resolution, gamma_estimates
from .ld_rate import FAIL, INCONCLUSIVE, PASS, MeasureSequence, Speed, verify_equivalence
from .measure import DiscreteMeasure, log_total
from .metric_space import MetricSpace, PointSet, build_grid_space, load_distance_csv, space_from_matrix
from .sanov import (
    TypeVector,
    exact_type_set_probability,
    first_order_rate,
    gibbs_array,
    mc_type_set_probability,
    second_order_rate,
)

SCHEMA_VERSION = "1.0"
EXIT = {PASS: 0, FAIL: 1, INCONCLUSIVE: 2, HYPOTHESIS_FAILED: 2}
EXIT_INVALID = 3
COMMANDS = ("entropy", "gamma", "rate", "sanov", "contract", "coupled", "verify")


class ValidationError(ValueError):
    pass


@dataclass
class Outcome:
    status: str
    results: dict
    tables: dict[str, list[list]] = field(default_factory=dict)


# -- config helpers ------------------------------------------------------------------
def _num(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, dict):
        return {str(k): _num(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_num(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_num(x) for x in v.tolist()]
    return v


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _override(config_value, flag_value):
    """Command-line values win; the config value is still parsed so it is validated and marked used."""
    return config_value if flag_value is None else flag_value


def read_space(sec: Section, base_dir: Path) -> MetricSpace:
    """``kind = grid`` (dim, bounds, h, norm), ``discrete`` (ids) or ``csv`` (distances)."""
    kind = sec.str("kind", "grid", choices=("grid", "discrete", "csv"))
    if kind == "discrete":
        ids = sec.strs("ids", required=True)
        if len(set(ids)) != len(ids):
            raise sec.error("ids", "duplicate ids")
        k = len(ids)
        return space_from_matrix(1.0 - np.eye(k), list(ids))
    if kind == "csv":
        p = Path(sec.str("distances", required=True))
        try:
            return load_distance_csv(p if p.is_absolute() else base_dir / p)
        except (OSError, ValueError) as exc:
            raise sec.error("distances", str(exc)) from None
    return _grid(sec, sec.float("h", required=True))


def _grid(sec: Section, h: float) -> MetricSpace:
    dim = sec.int("dim", 1)
    text = sec.raw("bounds")
    if text is None:
        raise sec.error(None, "missing required key 'bounds'")
    try:
        pairs = [tuple(float(v) for v in b.split(":")) for b in text.split(",")]
        if any(len(p) != 2 for p in pairs):
            raise ValueError("bounds must be written lo:hi")
        if len(pairs) == 1:
            pairs = pairs * dim
        return build_grid_space(dim, pairs, h, norm=sec.str("norm", "euclidean", choices=("euclidean", "max")))
    except ValueError as exc:
        raise sec.error("bounds", str(exc)) from None


def read_point(space: MetricSpace, token: str, sec: Section, key: str):
    if token in space.ids:
        return token
    try:
        vals = [float(v) for v in token.split(":")]
        return space.ids[space.index_of(vals[0] if len(vals) == 1 else np.array(vals))]
    except (ValueError, KeyError):
        raise sec.error(key, f"{token!r} is not a point of the space") from None


def read_points(space: MetricSpace, sec: Section, key: str, required: bool = True) -> list:
    toks = sec.strs(key, required=required) or ()
    return [read_point(space, t, sec, key) for t in toks]


def read_speed(sec: Section, key: str = "speed", default: str = "n") -> Speed:
    e = sec.expr(key, ("n",), default=default)
    growth = sec.str(f"{key}_growth", "unbounded", choices=("bounded", "unbounded"))
    return Speed(lambda n: e(n=n), growth, name=e.source)


def read_window(sec: Section, key: str = "window"):
    ns = sec.ints(key, required=True)
    try:
        return as_window(ns)
    except ScheduleError as exc:
        raise sec.error(key, str(exc)) from None


def read_deltas(sec: Section, key: str, default=None, required: bool = True) -> tuple[float, ...]:
    d = sec.floats(key, default, required=required and default is None)
    try:
        return check_deltas(d)
    except ScheduleError as exc:
        raise sec.error(key, str(exc)) from None


def check_res(sec: Section, key: str, deltas, resolution: float) -> None:
    try:
        check_resolution(deltas, resolution)
    except ScheduleError as exc:
        raise sec.error(key, str(exc)) from None


def _variables(space: MetricSpace) -> tuple[str, ...]:
    return ("x",) if not space.has_coords or space.coords.shape[1] <= 1 else tuple(f"x{k + 1}" for k in range(space.coords.shape[1]))


def _coord_env(space: MetricSpace) -> dict:
    if not space.has_coords:
        raise ValueError("expressions need a coordinate space")
    c = space.coords
    return {"x": c[:, 0]} if c.shape[1] == 1 else {f"x{k + 1}": c[:, k] for k in range(c.shape[1])}


def read_values(sec: Section, space: MetricSpace, key: str, expr_key: str, extra=()) -> Callable | np.ndarray | None:
    """A table (``key``) or an expression over coordinates (``expr_key``)."""
    if key in sec and expr_key in sec:
        raise sec.error(expr_key, f"give either {key!r} or {expr_key!r}")
    if key in sec:
        v = np.array(sec.floats(key), dtype=float)
        if v.size != len(space):
            raise sec.error(key, f"expected {len(space)} values, got {v.size}")
        return v
    if expr_key in sec:
        e = sec.expr(expr_key, _variables(space) + tuple(extra))
        if not space.has_coords:
            raise sec.error(expr_key, "expressions need a coordinate space")
        return e
    return None


def read_measure(sec: Section, space: MetricSpace) -> DiscreteMeasure:
    """``weights``, ``log_weights`` or ``log_density`` (expression); normalized."""
    given = [k for k in ("weights", "log_weights", "log_density") if k in sec]
    if len(given) != 1:
        raise sec.error(None, "give exactly one of weights, log_weights, log_density")
    k = given[0]
    try:
        if k == "log_density":
            e = sec.expr(k, _variables(space))
            lw = np.broadcast_to(e(**_coord_env(space)), (len(space),)).copy()
        else:
            v = np.array(sec.floats(k), dtype=float)
            if v.size != len(space):
                raise ValueError(f"expected {len(space)} values, got {v.size}")
            if k == "weights":
                if np.any(v < 0):
                    raise ValueError("weights must be nonnegative")
                with np.errstate(divide="ignore"):
                    lw = np.log(v)
            else:
                lw = v
        if log_total(lw) == -math.inf:
            raise ValueError("measure has zero mass")
        return DiscreteMeasure.from_log_weights(space, lw)
    except ValueError as exc:
        raise sec.error(k, str(exc)) from None


def read_truncations(sec: Section, key: str = "truncation_radii"):
    r = sec.floats(key)
    if r is None:
        return None
    if any(b <= a for a, b in zip(r, r[1:])) or r[0] <= 0:
        raise sec.error(key, "radii must be positive and increasing")
    return box_truncations(r)


# -- subcommands ---------------------------------------------------------------------------
def cmd_entropy(cfg: Config, ctx: dict) -> Outcome:
    space = read_space(cfg.section("space"), ctx["base"])
    mu = read_measure(cfg.section("mu"), space)
    nu = read_measure(cfg.section("nu"), space)
    sec = cfg.section("entropy", required=False)
    deltas = sec.floats("partition_deltas")
    if deltas is not None:
        deltas = read_deltas(sec, "partition_deltas")
    cfg.check_unused()

    def run() -> Outcome:
        H = relative_entropy(nu, mu)
        results = {"relative_entropy": H}
        status = PASS
        if math.isfinite(H):
            phi = optimal_test_function(nu, mu)
            obj = variational_objective(nu, mu, phi)
            gap = abs(obj - H)
            results.update(variational_value=obj, variational_gap=gap)
            if gap > 1e-10 * max(1.0, abs(H)):
                status = FAIL
        tables = {}
        if deltas is not None:
            sched = refining_partitions(space, mu, nu, deltas, [PointSet.full(space)])
            values = sched.entropies(nu, mu)
            tables["partition_entropy.csv"] = [["delta", "cells", "partition_entropy"]] + [
                [repr(d), G.n_cells, _cell(v)] for d, G, v in zip(sched.deltas, sched.partitions, values)]
            mono = all(b >= a - 1e-12 for a, b in zip(values, values[1:]))
            results.update(partition_entropies=values, partition_monotone=mono)
            if not mono:
                status = FAIL
        return Outcome(status, results, tables)

    return run


def cmd_gamma(cfg: Config, ctx: dict) -> Outcome:
    ssec = cfg.section("space")
    fsec = cfg.section("functional")
    gsec = cfg.section("gamma")
    grid_h = fsec.expr("grid_h", ("n",))
    if grid_h is None:
        base_space = read_space(ssec, ctx["base"])
        space_for = lambda n: base_space  # noqa: E731
    else:
        ssec.str("kind", "grid", choices=("grid",))
        cache: dict = {}

        def space_for(n: int) -> MetricSpace:
            if n not in cache:
                cache[n] = _grid(ssec, grid_h(n=n))
            return cache[n]

        base_space = _grid(ssec, grid_h(n=1))
    f = fsec.expr("expr", _variables(base_space) + ("n",), required=True)
    limit = gsec.expr("limit", _variables(base_space))
    deltas = read_deltas(gsec, "deltas")
    window = read_window(gsec)
    points = gsec.strs("points", required=True)
    try:
        probes = [float(t) if ":" not in t else np.array([float(v) for v in t.split(":")]) for t in points]
    except ValueError:
        raise gsec.error("points", "points must be coordinates") from None
    tol = _override(gsec.float("tolerance", 2e-2), ctx["tolerance"])
    cfg.check_unused()
    try:
        res = max(space_for(int(n)).resolution for n in (window.ns[0], window.ns[-1]))
    except ValueError as exc:
        raise fsec.error("grid_h", str(exc)) from None
    check_res(gsec, "deltas", deltas, res)

    def functional(n: int) -> Functional:
        sp = space_for(n)
        v = np.broadcast_to(f(n=n, **_coord_env(sp)), (len(sp),)).copy()
        return Functional(sp, v)

    def run() -> Outcome:
        seq = FunctionalSequence(functional, signed=True)
        rows = [["point", "liminf", "limsup", "limit", "error"]]
        status, results, tables = PASS, {"points": []}, {}
        for k, x in enumerate(probes):
            lo, hi = gamma_estimates(seq, x, deltas, window, ctx["threads"])
            ordered = bool(np.all(lo.trace <= hi.trace))
            entry = {"point": _num(x), "liminf": lo.to_dict(), "limsup": hi.to_dict(), "ordered": ordered}
            err = math.nan
            target = None
            if limit is not None:
                env = {"x": x} if np.ndim(x) == 0 else {f"x{i + 1}": v for i, v in enumerate(x)}
                target = float(limit(**env))
                err = max(abs(lo.value - target), abs(hi.value - target))
                entry.update(limit=target, error=err)
                if not err <= tol:
                    status = FAIL
            if not ordered:
                status = FAIL
            results["points"].append(entry)
            rows.append([_cell(x if np.ndim(x) == 0 else ":".join(map(repr, x))), _cell(lo.value), _cell(hi.value),
                         "" if target is None else _cell(target), "" if target is None else _cell(err)])
            tables[f"trace_liminf_{k}.csv"] = lo.trace_rows()
            tables[f"trace_limsup_{k}.csv"] = hi.trace_rows()
        results["tolerance"] = tol
        tables["gamma.csv"] = rows
        return Outcome(status, results, tables)

    return run


def read_family(sec: Section, base: Path, cfg: Config):
    """Measure family, its speed, the declared rate and the underlying space."""
    kind = sec.str("kind", required=True, choices=("two-point", "gaussian", "geometric", "cubic-tail", "gibbs"))
    speed = read_speed(sec)
    if kind == "two-point":
        space = two_point_space()
        seq = two_point_family(speed, space)
        rate = Functional(space, [0.0, 1.0])
    elif kind == "gaussian":
        h, bound = sec.float("h", 0.01), sec.float("bound", 3.0)
        space = build_grid_space(1, (-bound, bound), h)
        seq = gaussian_family(h, bound, space)
        rate = gaussian_rate(space)
    elif kind == "geometric":
        seq = geometric_family(speed, sec.int("length", 40))
        space = seq(1).space
        rate = Functional(space, space.coords[:, 0].copy())
    elif kind == "cubic-tail":
        seq = cubic_tail_family(sec.int("length", 1000))
        space = seq(1).space
        rate = Functional(space, np.zeros(len(space)))
    else:
        space = read_space(cfg.section("space"), base)
        energy = read_values(sec, space, "energy", "energy_expr")
        if energy is None:
            raise sec.error(None, "gibbs family needs 'energy' or 'energy_expr'")
        E = energy if isinstance(energy, np.ndarray) else np.broadcast_to(energy(**_coord_env(space)), (len(space),))
        E = np.asarray(E, dtype=float) - np.min(E)
        spec = gibbs_array(space, E, speed)
        seq = MeasureSequence(spec.laws, name="gibbs")
        rate = spec.rate
    return seq, speed, rate, space


def _rate_job(cfg: Config, ctx: dict):
    fsec = cfg.section("family")
    seq, speed, rate, space = read_family(fsec, ctx["base"], cfg)
    csec = cfg.section("check")
    points = read_points(space, csec, "points")
    deltas = read_deltas(csec, "deltas")
    sched = {"deltas": deltas, "window": read_window(csec)}
    for key in ("entropy_deltas", "setmap_deltas"):
        if key in csec:
            sched[key] = read_deltas(csec, key)
    m = csec.int("simplex_resolution")
    if m is not None and m < 1:
        raise csec.error("simplex_resolution", "must be a positive integer")
    sched["simplex_resolution"] = m
    sched["setmap_method"] = csec.str("setmap_method", "auto", choices=("auto", "enumerate", "enlargement"))
    levels = csec.ints("truncation_levels")
    if levels is not None:
        if not space.has_coords or space.coords.shape[1] != 1:
            raise csec.error("truncation_levels", "prefix truncations need a 1D grid")
        sched["truncations"] = prefix_truncations(space, levels)
    disc_limit = csec.float("discrepancy_limit", 0.1)
    tol = _override(csec.float("tolerance", 5e-2), ctx["tolerance"])
    sched["tolerance"] = tol
    for key in ("deltas", "entropy_deltas", "setmap_deltas"):
        if key in sched:
            check_res(csec, key, sched[key], space.resolution)
    try:
        speed.validate(sched["window"])
    except ScheduleError as exc:
        raise fsec.error("speed", str(exc)) from None

    def run() -> Outcome:
        rep = verify_equivalence(seq, speed, rate, points, [], sched, ctx["threads"])
        ok = rep.max_discrepancy <= disc_limit and rep.max_error <= tol
        if rep.tightness is not None:
            ok = ok and rep.tightness.tight
        rows = [["point", "representation", "limsup", "liminf", "target"]]
        for lab in rep.labels:
            for r, (hi, lo) in rep.estimates[lab].items():
                rows.append([lab, r, _cell(hi.value), _cell(lo.value), _cell(rep.targets[lab])])
        res = rep.to_dict()
        res.update(discrepancy_limit=disc_limit, tolerance=tol)
        return Outcome(PASS if ok else FAIL, res, {"rates.csv": rows})

    return run


def cmd_rate(cfg: Config, ctx: dict) -> Outcome:
    run = _rate_job(cfg, ctx)
    cfg.check_unused()
    return run


def _type_at(alphabet: MetricSpace, freqs: np.ndarray, n: int) -> TypeVector:
    """Largest-remainder rounding of ``n·freqs`` to integer counts summing to ``n``."""
    raw = freqs * n
    counts = np.floor(raw).astype(np.int64)
    short = n - int(counts.sum())
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return TypeVector(alphabet, counts)


def cmd_sanov(cfg: Config, ctx: dict) -> Outcome:
    sec = cfg.section("sanov")
    mode = sec.str("mode", required=True, choices=("first", "second", "mc"))
    ids = sec.strs("alphabet", required=True)
    alphabet = space_from_matrix(1.0 - np.eye(len(ids)), list(ids))
    ns = sec.ints("n", required=True)
    if any(n < 1 for n in ns) or any(b <= a for a, b in zip(ns, ns[1:])):
        raise sec.error("n", "n values must be positive and increasing")
    tol = _override(sec.float("tolerance", 0.1), ctx["tolerance"])

    def freq_list(key: str) -> list[np.ndarray]:
        text = sec.raw(key)
        if text is None:
            raise sec.error(None, f"missing required key {key!r}")
        out = []
        try:
            for part in text.split(";"):
                v = np.array([float(p) for p in part.split(":")])
                if v.size != len(ids) or np.any(v < 0) or abs(v.sum() - 1) > 1e-9:
                    raise ValueError("each target needs one nonnegative frequency per symbol, summing to 1")
                out.append(v)
        except ValueError as exc:
            raise sec.error(key, str(exc)) from None
        return out

    if mode in ("first", "mc"):
        mu_w = np.array(sec.floats("mu", required=True))
        if mu_w.size != len(ids) or np.any(mu_w < 0) or mu_w.sum() <= 0:
            raise sec.error("mu", "need one nonnegative weight per symbol")
        mu = DiscreteMeasure.from_weights(alphabet, mu_w, normalize=True)
    if mode in ("first", "second"):
        targets = freq_list("targets")
    if mode == "second":
        I = np.array(sec.floats("rate", required=True))
        if I.size != len(ids):
            raise sec.error("rate", "need one rate value per symbol")
        speed = read_speed(sec, default="sqrt n")
        spec = gibbs_array(alphabet, I, speed)
    if mode == "mc":
        symbol = sec.str("event_symbol", required=True)
        if symbol not in ids:
            raise sec.error("event_symbol", f"{symbol!r} is not in the alphabet")
        threshold = sec.float("event_threshold", required=True)
        samples = sec.int("samples", 10_000)
        if samples < 100:
            raise sec.error("samples", "need at least 100 samples")
        if ctx["seed"] is None:
            seed = sec.int("seed")
            if seed is None:
                raise sec.error(None, "Monte Carlo runs need a seed (key 'seed' or --seed)")
        else:
            seed = ctx["seed"]
            sec.raw("seed")
        confidence = sec.float("confidence", 0.95)
    cfg.check_unused()

    def run() -> Outcome:
        if mode == "mc":
            k = alphabet.index_of(symbol)
            event = lambda t: t.counts[k] >= threshold * t.n  # noqa: E731
            rows = [["n", "estimate", "lower", "upper", "hits", "samples", "exact"]]
            status, res = PASS, {"runs": [], "seed": seed}
            for n in ns:
                est = mc_type_set_probability(mu, event, n, samples, seed, confidence, ctx["threads"])
                try:
                    exact = exact_type_set_probability(mu, event, n)
                except ValueError:
                    exact = None
                rows.append([n, _cell(est.estimate), "" if est.lower is None else _cell(est.lower), _cell(est.upper),
                             est.hits, est.samples, "" if exact is None else _cell(exact)])
                covers = None if exact is None else est.covers(exact)
                if covers is False:
                    status = FAIL
                res["runs"].append({"n": n, "estimate": est.estimate, "lower": est.lower, "upper": est.upper,
                                    "hits": est.hits, "exact": exact, "covers_exact": covers})
            return Outcome(status, res, {"sanov_mc.csv": rows})
        rows = [["target", "n", "value", "target_rate", "gap", "bound"]]
        res = {"targets": []}
        status = PASS
        for v in targets:
            label = ":".join(repr(float(p)) for p in v)
            gaps = []
            for n in ns:
                t = _type_at(alphabet, v, n)
                if mode == "first":
                    r = first_order_rate(t, mu)
                    rows.append([label, n, _cell(r.value), _cell(r.target), _cell(r.gap), _cell(r.bound)])
                    gaps.append(r.gap)
                    if not r.gap <= r.bound:
                        status = FAIL
                else:
                    r = second_order_rate(t, spec)
                    rows.append([label, n, _cell(r.value), _cell(r.target), _cell(r.gap), ""])
                    gaps.append(r.gap)
            entry = {"frequencies": [float(p) for p in v], "gaps": gaps}
            if mode == "second":
                decreasing = all(b <= a for a, b in zip(gaps, gaps[1:]))
                entry.update(gap_decreasing=decreasing, final_gap=gaps[-1])
                if not gaps[-1] <= tol:
                    status = FAIL
            res["targets"].append(entry)
        res["tolerance"] = tol
        return Outcome(status, res, {"sanov.csv": rows})

    return run


def cmd_contract(cfg: Config, ctx: dict) -> Outcome:
    X = read_space(cfg.section("source"), ctx["base"])
    Y = read_space(cfg.section("target"), ctx["base"])
    msec, fsec, csec = cfg.section("map"), cfg.section("functional"), cfg.section("contract")
    if not (X.has_coords and Y.has_coords):
        raise msec.error(None, "contraction configs need grid spaces")
    theta_e = msec.expr("theta", ("x",), required=True)
    theta_n_e = msec.expr("theta_n", ("x", "n"))
    L = msec.float("lipschitz", 1.0)
    f = fsec.expr("expr", ("x", "n"), required=True)
    window = read_window(csec)
    ys = read_points(Y, csec, "y")
    sched = {"window": window}
    for key in ("source_deltas", "target_deltas", "lambda_deltas"):
        sched[key] = read_deltas(csec, key)
    check_res(csec, "source_deltas", sched["source_deltas"], X.resolution)
    check_res(csec, "target_deltas", sched["target_deltas"], Y.resolution)
    sched["levels"] = csec.floats("levels", (1.0,))
    trunc = read_truncations(csec)
    if trunc is not None:
        sched["truncations"] = trunc
    sched["tolerance"] = _override(csec.float("tolerance"), ctx["tolerance"])
    cfg.check_unused()
    try:
        theta = GridMap.from_function(X, Y, lambda x: theta_e(x=x), L)
    except (ValueError, ExprError) as exc:
        raise msec.error("theta", str(exc)) from None

    def run() -> Outcome:
        def map_n(n: int) -> GridMap:
            if theta_n_e is None:
                return theta
            return GridMap.from_function(X, Y, lambda x: theta_n_e(x=x, n=n), L)

        maps = MapSequence(map_n, theta)
        I_seq = FunctionalSequence(lambda n: Functional(X, np.broadcast_to(f(x=X.coords[:, 0], n=n), (len(X),)).copy()))
        rows = [["y", "J_bar", "J_under", "gamma_limsup", "gamma_liminf", "upper", "lower"]]
        res = {"points": []}
        statuses = []
        for y in ys:
            chk = gamma_contraction_check(I_seq, maps, y, sched, ctx["threads"])
            rows.append([y, _cell(chk.J_bar), _cell(chk.J_under), _cell(chk.upper.lhs), _cell(chk.lower.lhs),
                         chk.upper.status, chk.lower.status])
            res["points"].append({"y": y, **chk.to_dict()})
            statuses += [chk.upper.status, chk.lower.status]
        return Outcome(_combine(statuses), res, {"contraction.csv": rows})

    return run


def _combine(statuses) -> str:
    if FAIL in statuses:
        return FAIL
    if INCONCLUSIVE in statuses:
        return INCONCLUSIVE
    if HYPOTHESIS_FAILED in statuses:
        return HYPOTHESIS_FAILED
    return PASS


def read_coupled_system(sec: Section, cfg: Config, base: Path, speed: Speed) -> tuple[CoupledSystem, Callable | None]:
    kind = sec.str("kind", required=True, choices=("decoupled", "jump", "weak-coupling", "expression"))
    if kind == "decoupled":
        rx, ry = sec.float("rate_x", 1.0), sec.float("rate_y", 2.0)
        sys_ = decoupled_system(speed, rx, ry)
        return sys_, lambda x, y: (0.0 if x == "common" else rx, 0.0 if y == "common" else ry)
    if kind == "jump":
        return jump_system(speed), None
    if kind == "weak-coupling":
        sys_ = weak_coupling_system(speed, sec.int("grid_points", 33), sec.int("outcomes", 64))
        return sys_, lambda x, y: weak_coupling_rates(float(x), float(y))
    X = read_space(cfg.section("X"), base)
    Y = read_space(cfg.section("Y"), base)
    if X.coords.shape[1] != 1 or Y.coords.shape[1] != 1:
        raise sec.error("kind", "expression systems need 1D grids")
    m1, m2 = sec.int("omega1", required=True), sec.int("omega2", required=True)
    c1 = sec.expr("cost1", ("w", "n"), required=True)
    c2 = sec.expr("cost2", ("w", "n"), required=True)
    F = sec.expr("F", ("y", "w", "n"), required=True)
    G = sec.expr("G", ("x", "w", "n"), required=True)
    y0 = read_point(Y, sec.str("y0", required=True), sec, "y0")
    cap = sec.float("q_cap", 4.0)
    gx, gy = X.coords[:, 0], Y.coords[:, 0]

    def snap(grid: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.abs(v[..., None] - grid).argmin(axis=-1)

    def gibbs(c: np.ndarray, a: float) -> np.ndarray:
        lw = -a * np.broadcast_to(c, c.shape)
        return lw - log_total(lw)

    def level(n: int) -> CoupledLevel:
        a = speed(n)
        w1, w2 = np.arange(m1, dtype=float), np.arange(m2, dtype=float)
        lp1 = gibbs(np.broadcast_to(c1(w=w1, n=n), (m1,)), a)
        lp2 = gibbs(np.broadcast_to(c2(w=w2, n=n), (m2,)), a)
        Ft = snap(gx, np.broadcast_to(F(y=gy[:, None], w=w1[None, :], n=n), (len(gy), m1)))
        Gt = snap(gy, np.broadcast_to(G(x=gx[:, None], w=w2[None, :], n=n), (len(gx), m2)))
        return CoupledLevel(lp1, lp2, Ft, Gt)

    return CoupledSystem(X, Y, level, Modulus.identity_cap(cap), y0=y0, name="expression"), None


def cmd_coupled(cfg: Config, ctx: dict) -> Outcome:
    sec = cfg.section("coupled")
    speed = read_speed(sec)
    sys_, analytic = read_coupled_system(sec, cfg, ctx["base"], speed)
    toks = sec.strs("points", required=True)
    points = []
    for t in toks:
        if "/" not in t:
            raise sec.error("points", "write points as x/y")
        xs, ys = t.split("/", 1)
        points.append((read_point(sys_.X, xs, sec, "points"), read_point(sys_.Y, ys, sec, "points")))
    deltas = read_deltas(sec, "deltas")
    window = read_window(sec)
    eps = sec.floats("eps", (0.1,))
    which = sec.strs("which", ("iii", "iv"))
    if any(w not in ("iii", "iv") for w in which):
        raise sec.error("which", "use iii and/or iv")
    threshold = sec.float("threshold", 5.0)
    rates_from = sec.str("rates", "estimate" if analytic is None else "analytic", choices=("analytic", "estimate"))
    if rates_from == "analytic" and analytic is None:
        raise sec.error("rates", "this system has no analytic frozen rates")
    tol = _override(sec.float("tolerance", 0.1), ctx["tolerance"])
    cfg.check_unused()
    check_res(sec, "deltas", deltas, sys_.XY.resolution)

    def run() -> Outcome:
        rows = [["x", "y", "K", "J", "sum", "limsup", "liminf", "status"]]
        prof_rows = [["which", "x", "y", "eps"] + [str(n) for n in window.ns.tolist()]]
        res = {"points": []}
        statuses = []
        for x, y in points:
            if rates_from == "analytic":
                K, J = analytic(x, y)
            else:
                K, J = frozen_rate_estimates(sys_, speed, x, y, deltas, window, ctx["threads"])
            chk = coupled_rate_check(sys_, speed, x, y, K, J, {"deltas": deltas, "window": window, "tolerance": tol},
                                     ctx["threads"])
            entry = {"x": x, "y": y, "K": K, "J": J, "rate_check": chk.verdict.to_dict(),
                     "max_unsolved_mass": chk.max_unsolved_mass, "regularity": {}}
            regular = True
            for w in which:
                prof = check_regularity(sys_, speed, x, y, eps, window, w, threshold)
                entry["regularity"][w] = {"consistent": prof.consistent, "tail": _num(prof.tail)}
                for e, row in zip(prof.eps, prof.profile):
                    prof_rows.append([w, x, y, repr(e)] + [_cell(v) for v in row])
                regular = regular and prof.consistent
            # without the regularity hypotheses the rate identity is reported, not asserted
            entry["asserted"] = regular
            statuses.append(chk.verdict.status if regular else HYPOTHESIS_FAILED)
            rows.append([x, y, _cell(K), _cell(J), _cell(K + J), _cell(chk.joint[0].value), _cell(chk.joint[1].value),
                         chk.verdict.status])
            res["points"].append(entry)
        return Outcome(_combine(statuses), res, {"coupled.csv": rows, "regularity.csv": prof_rows})

    return run


COMMAND_TABLE = {
    "entropy": cmd_entropy,
    "gamma": cmd_gamma,
    "rate": cmd_rate,
    "sanov": cmd_sanov,
    "contract": cmd_contract,
    "coupled": cmd_coupled,
}


# -- verify ----------------------------------------------------------------------
def bundled_configs() -> list[Path]:
    root = resources.files("ldgamma") / "fixtures"
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.startswith("rate_") and p.name.endswith(".ini"))


def run_verify(paths: list[Path], ctx: dict) -> Outcome:
    """Aggregate the three-representation reports of several rate configs."""
    res = {"fixtures": []}
    rows = [["fixture", "status", "max_discrepancy", "max_error"]]
    status = PASS
    for p in paths:
        entry = {"config": p.name}
        try:
            cfg = load_config(p)
            run = _rate_job(cfg, dict(ctx, base=p.parent))
            cfg.check_unused()
            out = run()
            entry.update(status=out.status, max_discrepancy=out.results["max_discrepancy"],
                         max_error=out.results["max_error"], report=out.results)
        except (ConfigError, ExprError, ValueError, InvariantViolation) as exc:
            entry.update(status=FAIL, error=str(exc))
        if entry["status"] != PASS:
            status = FAIL
        res["fixtures"].append(entry)
        rows.append([p.name, entry["status"], _cell(entry.get("max_discrepancy", "")), _cell(entry.get("max_error", ""))])
    return Outcome(status, res, {"verify.csv": rows})


# -- driver -------------------------------------------------------------------------
def _write_outputs(out_dir: Path, report: dict, tables: dict, runtime: dict) -> None:
    """Write into a temporary sibling directory, then move files into place."""
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".ldgamma-", dir=out_dir.parent))
    try:
        for name, rows in tables.items():
            with open(tmp / name, "w", newline="", encoding="utf-8") as fh:
                csv.writer(fh, lineterminator="\n").writerows([[_cell(c) for c in r] for r in rows])
        (tmp / "report.json").write_text(json.dumps(_num(report), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (tmp / "runtime.json").write_text(json.dumps(runtime, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        out_dir.mkdir(parents=True, exist_ok=True)
        for f in sorted(tmp.iterdir()):
            os.replace(f, out_dir / f.name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def _versions() -> dict:
    return {"ldgamma": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ldgamma", description="Large-deviation and Gamma-limit experiments.")
    p.add_argument("--version", action="version", version=f"ldgamma {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        if name == "verify":
            s.add_argument("--config", action="append", default=[], type=Path,
                           help="rate config (repeatable); none gives an empty, passing set")
            s.add_argument("--bundled", action="store_true", help="add the bundled rate fixtures")
        else:
            s.add_argument("--config", required=True, type=Path)
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--out-dir", type=Path, default=Path("out"))
        s.add_argument("--threads", type=int, default=None)
        s.add_argument("--tolerance", type=float, default=None)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_INVALID
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_INVALID
    if args.tolerance is not None and not args.tolerance > 0:
        print("error: --tolerance must be positive", file=sys.stderr)
        return EXIT_INVALID
    set_default_threads(args.threads or 1)
    ctx = {"seed": args.seed, "threads": args.threads, "tolerance": args.tolerance}
    inputs: dict = {"command": args.command, "seed": args.seed, "tolerance": args.tolerance}
    t0 = time.perf_counter()
    try:
        if args.command == "verify":
            paths = list(args.config) + (bundled_configs() if args.bundled else [])
            inputs["configs"] = [{"name": p.name, "text": p.read_text(encoding="utf-8")} for p in paths]
            outcome = run_verify(paths, ctx)
        else:
            cfg = load_config(args.config)
            inputs["config"] = cfg.text
            run = COMMAND_TABLE[args.command](cfg, dict(ctx, base=args.config.resolve().parent))
            outcome = run()
    except (ConfigError, ExprError, ScheduleError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except InvariantViolation as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT[FAIL]
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    elapsed = time.perf_counter() - t0
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": args.command,
        "inputs": inputs,
        "versions": _versions(),
        "status": outcome.status,
        "results": outcome.results,
        "outputs": sorted(outcome.tables),
    }
    _write_outputs(args.out_dir, report, outcome.tables, {"seconds": round(elapsed, 6), "threads": args.threads})
    print(f"{args.command}: {outcome.status} -> {args.out_dir}")
    return EXIT.get(outcome.status, EXIT[FAIL])


if __name__ == "__main__":
    raise SystemExit(main())
