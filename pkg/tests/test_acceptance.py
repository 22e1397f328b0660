"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line through the ``criterion`` fixture; the lines
are repeated in the pytest terminal summary.
"""

import json
import math
import time

import numpy as np
import pytest

from spectrum_oligopoly.cli import run
from spectrum_oligopoly.graphs import (
    Partition,
    build_graph,
    cycle_graph,
    king_grid,
    king_grid_partition,
    linear_graph,
    mean_valid_partitions,
)
from spectrum_oligopoly.market import (
    MarketParams,
    additive_cubic,
    expected_payoff_at,
    quadratic_cubic,
    solve_single_location,
)
from spectrum_oligopoly.meanvalid import (
    SameStateModel,
    best_response_audit,
    dominance_gap,
    equalization_residual,
    equilibrium_from_t,
    partition_equivalence_audit,
    solve_mean_valid,
)
from spectrum_oligopoly.simulator import efficiency_curve, estimate_ne_payoff
from spectrum_oligopoly.spsym import (
    SPsym,
    component_stats,
    linear_family_audit,
    node_offer_profile,
    run_length_table,
    spsym_ne_audit,
)
from spectrum_oligopoly.states import (
    IID,
    MarkovRandomField,
    SameEverywhere,
    SampledIID,
    audit_isomorphism_invariance,
    binary_joint_table,
)

Q3 = SameStateModel((0.2, 0.2, 0.2))
FIG5 = MarketParams.create(l=21, m=10, n=3, v=100, c=1)
EX1 = MarketParams.create(l=20, m=6, n=3, v=100, c=1)
BINARY = MarketParams.create(l=5, m=2, n=1, v=100, c=1)


def test_criterion_01_single_location_regression(criterion):
    t0 = time.perf_counter()
    sol = solve_single_location(FIG5, additive_cubic(3), (0.2, 0.2, 0.2))
    elapsed = time.perf_counter() - t0
    want = {"L3": 17.2766, "U3=L2": 17.345, "U2=L1": 22.864}
    got = {"L3": sol.L[2], "U3=L2": sol.L[1], "U2=L1": sol.L[0]}
    ok = (
        all(abs(got[k] - want[k]) <= 1e-3 for k in want)
        and sol.U[2] == sol.L[1] and sol.U[1] == sol.L[0]
        and elapsed < 1.0
    )
    detail = ", ".join(f"{k}={got[k]:.4f} (want {want[k]})" for k in want) + f", {elapsed:.3f}s"
    assert criterion(1, "single-location support endpoints", ok, detail)


def test_criterion_02_example_regression(criterion):
    t0 = time.perf_counter()
    eq = solve_mean_valid((9, 6, 6, 4), Q3, EX1, additive_cubic(3))
    elapsed = time.perf_counter() - t0
    want = {
        3: [1, 0, 0, 0],
        2: [0.2532, 0.3734, 0.3734, 0],
        1: [0.071, 0.4645, 0.4645, 0],
    }
    t_err = max(float(np.max(np.abs(eq.t[:, j - 1] - want[j]))) for j in want)
    level = eq.levels[2]
    ok = t_err <= 1e-3 and eq.d == (3, 3, 1) and abs(level - 7.5324) <= 1e-3 and elapsed < 1.0
    detail = f"max |t - ref| = {t_err:.2e}, d = {eq.d}, M1 W(gamma13) = {level:.5f}, {elapsed:.3f}s"
    assert criterion(2, "mean-valid selection probabilities", ok, detail)


def test_criterion_03_payoff_constancy(criterion):
    fam = additive_cubic(3)
    sol = solve_single_location(FIG5, fam, (0.2, 0.2, 0.2))
    lo_dom, hi_dom = sol.L[-1], FIG5.v
    worst, edges_ok, edges_checked = 0.0, True, 0
    for j in (1, 2, 3):
        L, U = sol.support(j)
        vals = np.array([expected_payoff_at(float(x), j, sol, FIG5, fam) for x in np.linspace(L, U, 100)])
        ref = sol.p[j - 1] - FIG5.c
        worst = max(worst, float(np.max(np.abs(vals - ref)) / ref))
        for x in (L - 1e-3, U + 1e-3):
            if lo_dom <= x <= hi_dom:
                edges_checked += 1
                edges_ok &= expected_payoff_at(x, j, sol, FIG5, fam) < ref
    ok = worst < 1e-9 and edges_ok
    detail = f"max relative spread {worst:.2e}, {edges_checked} off-support points all lower: {edges_ok}"
    assert criterion(3, "payoff constant on each support", ok, detail)


def random_config(rng):
    d = int(rng.integers(1, 6))
    M = tuple(sorted(rng.integers(1, 13, size=d).tolist(), reverse=True))
    n = int(rng.integers(1, 5))
    raw = rng.uniform(0.05, 1.0, size=n)
    q = tuple(float(x) for x in rng.uniform(0.1, 0.9) * raw / raw.sum())
    l = int(rng.integers(2, 26))
    m = int(rng.integers(1, l))
    fam = quadratic_cubic(n) if rng.random() < 0.5 else additive_cubic(n)
    return M, SameStateModel(q), MarketParams.create(l=l, m=m, n=n, v=100, c=1), fam


def test_criterion_04_structural_properties(criterion):
    rng = np.random.default_rng(2024)
    stoch = resid = agree = 0.0
    mono = nested = prefix = True
    for _ in range(100):
        M, model, params, fam = random_config(rng)
        eq = solve_mean_valid(M, model, params, fam)
        again = solve_mean_valid(M, model, params, fam, bracket="wide")
        stoch = max(stoch, float(np.max(np.abs(eq.t.sum(axis=0) - 1.0))))
        resid = max(resid, equalization_residual(eq, params))
        agree = max(agree, float(np.max(np.abs(eq.t - again.t))))
        mono &= all(a >= b for a, b in zip(eq.d, eq.d[1:]))
        prefix &= dominance_gap(eq, params) >= -1e-9 and all(
            np.all(eq.t[: eq.d[j], j] > 0) and np.all(eq.t[eq.d[j]:, j] == 0) for j in range(model.n)
        )
        for sol in eq.pricing:
            nested &= all(abs(sol.U[j] - sol.L[j - 1]) < 1e-9 for j in range(1, model.n))
            nested &= all(sol.L[j] <= sol.U[j] for j in range(model.n))
    ok = stoch <= 1e-10 and mono and resid < 1e-9 and nested and prefix and agree < 1e-9
    detail = (f"column error {stoch:.1e}, thresholds monotone {mono}, residual {resid:.1e}, "
              f"supports nested {nested and prefix}, bracket agreement {agree:.1e}")
    assert criterion(4, "structure over 100 random configurations", ok, detail)


def test_criterion_05_best_response_audit(criterion):
    t0 = time.perf_counter()
    fam = additive_cubic(3)
    parts = []
    for name, G in (("king 3x3", king_grid(3)), ("line 6", linear_graph(6))):
        part = mean_valid_partitions(G, limit=1)[0]
        eq = solve_mean_valid(part.cardinalities, Q3, EX1, fam)
        clean = best_response_audit(G, part, eq, EX1, fam, grid=500)
        t = eq.t.copy()
        t[0, 0] += 0.1
        t[:, 0] /= t[:, 0].sum()
        bad = best_response_audit(G, part, equilibrium_from_t(part.cardinalities, t, Q3, EX1, fam), EX1, fam)
        parts.append((name, clean.passed, not bad.passed))
    elapsed = time.perf_counter() - t0
    ok = all(a and b for _, a, b in parts) and elapsed < 30
    detail = "; ".join(f"{n}: clean passes {a}, perturbed fails {b}" for n, a, b in parts) + f"; {elapsed:.2f}s"
    assert criterion(5, "best-response audit", ok, detail)


def test_criterion_06_partition_equivalence(criterion):
    G = build_graph("edge-list", edges=[(0, 1), (1, 2), (2, 3), (3, 0), (4, 5)])
    A, B = mean_valid_partitions(G)
    report = partition_equivalence_audit(G, A, B, Q3, EX1, additive_cubic(3))
    ok = report.passed and report.max_alpha_diff <= 1e-9
    detail = f"partitions {A.sets} and {B.sets}, max alpha difference {report.max_alpha_diff:.1e}"
    assert criterion(6, "partition equivalence on six nodes", ok, detail)


def test_criterion_07_symmetric_strategy(criterion, tmp_path, capsys):
    cyc = spsym_ne_audit(IID(0.5), cycle_graph(6), BINARY, additive_cubic(1))
    spread = float(cyc.alpha.max() - cyc.alpha.min())
    t = run_length_table(IID(0.5), 4)
    runs_ok = t[(0, 1)] == 0.25 and t[(1, 1)] == 0.125 and t[(1, 2)] == 0.0625
    line = spsym_ne_audit(IID(0.5), linear_graph(4), BINARY, additive_cubic(1))
    cfg = {"schema": 1, "l": 5, "m": 2, "n": 1, "v": 100, "c": 1,
           "graph": {"kind": "linear", "size": 4}, "state_model": {"kind": "iid", "q": 0.5}}
    path = tmp_path / "line4.json"
    path.write_text(json.dumps(cfg))
    code = run(["spsym-audit", "--config", str(path)])
    capsys.readouterr()
    w = line.witness
    ok = (spread < 1e-12 and cyc.passed and runs_ok and line.alpha[0] > line.alpha[1]
          and not line.passed and w is not None and code == 2)
    detail = (f"cycle: spread {spread:.1e}, audit passes {cyc.passed}; line: run table exact {runs_ok}, "
              f"alpha1 {line.alpha[0]:.5f} > alpha2 {line.alpha[1]:.5f}, witness state {w.state if w else None} "
              f"prefers {w.better_set if w else None}, exit code {code}")
    assert criterion(7, "symmetric strategy audits", ok, detail)


def test_criterion_08_linear_family(criterion):
    results = []
    for r, r1 in ((0.0, 0.75), (0.1, 0.55), (0.25, 0.25)):
        rep = linear_family_audit(r, r1, BINARY, additive_cubic(1))
        spread = float(rep.alpha.max() - rep.alpha.min())
        results.append((r, r1, spread, rep.passed and rep.ne.passed))
    ok = all(s < 1e-12 and p for _, _, s, p in results)
    detail = "; ".join(f"({r}, {r1}): spread {s:.1e}, equilibrium {p}" for r, r1, s, p in results)
    assert criterion(8, "line family equalises offers", ok, detail)


def test_criterion_09_component_bound(criterion):
    t0 = time.perf_counter()
    cyc = component_stats(SampledIID(0.5, 0.5), cycle_graph(1000), 10_000, np.random.default_rng(1))
    line = component_stats(SampledIID(1.0, 0.5), linear_graph(100), 10_000, np.random.default_rng(2))
    elapsed = time.perf_counter() - t0
    ok = (cyc.bound == 2.0 and cyc.mean_rooted_size <= 2.0 and cyc.mean_size <= 2.0
          and math.isinf(line.bound) and math.isfinite(line.mean_largest) and line.mean_largest < 30
          and elapsed < 60)
    detail = (f"cycle: mean size {cyc.mean_size:.3f}, size seen from a node {cyc.mean_rooted_size:.3f} "
              f"<= bound {cyc.bound}; line: mean largest {line.mean_largest:.2f} with bound {line.bound}; "
              f"{elapsed:.1f}s")
    assert criterion(9, "component size bound", ok, detail)


def test_criterion_10_simulation_consistency(criterion):
    G = king_grid(3)
    part = Partition(tuple(king_grid_partition(3)))
    fam = additive_cubic(3)
    eq = solve_mean_valid(part.cardinalities, Q3, EX1, fam)
    zs = []
    for seed in range(10):
        est = estimate_ne_payoff(1, eq, SameEverywhere(Q3.q), G, EX1, fam, 100_000,
                                 np.random.default_rng(seed), partition=part)
        zs.append(est.z_score)
    ok = all(abs(z) < 3 for z in zs)
    detail = f"analytic {eq.expected_payoff():.4f}; z-scores " + " ".join(f"{z:+.2f}" for z in zs)
    assert criterion(10, "simulation matches analytic payoff", ok, detail)


def test_criterion_11_efficiency_trend(criterion):
    G = king_grid(3)
    part = Partition(tuple(king_grid_partition(3)))
    params = MarketParams.create(l=10, m=2, n=3, v=100, c=1)
    report = efficiency_curve(1, G, params, [2, 4, 6, 8, 10], SameEverywhere(Q3.q), quadratic_cubic(3),
                              20_000, np.random.default_rng(11), partition=part)
    pts = report.points
    trend = pts[:4]
    increasing = all(b.eta > a.eta for a, b in zip(trend, trend[1:]))
    precise = all(p.eta_stderr < 0.02 * p.eta for p in trend)
    full = pts[4]
    saturated = abs(full.eta - 1.0) <= 3 * full.eta_stderr
    ok = increasing and precise and saturated
    detail = ("eta " + ", ".join(f"m={p.m}: {p.eta:.4f}+-{p.eta_stderr:.4f}" for p in pts)
              + f"; increasing {increasing}, stderr < 2% {precise}, m >= l within 3 sigma {saturated}")
    assert criterion(11, "efficiency trend", ok, detail)


def test_criterion_12_mrf_audits(criterion):
    G = cycle_graph(4)
    sym = audit_isomorphism_invariance(MarkovRandomField((0.8, 0.6, 1.0)), G)
    asym = audit_isomorphism_invariance(
        MarkovRandomField((0.8, 0.6, 1.0), clique_tables={(0, 1): [0.8, 0.2, 0.3, 1.0]}), G)
    norm_ok = abs(sym.normalisation - 1.0) <= 1e-10 and abs(asym.normalisation - 1.0) <= 1e-10
    same = all(
        np.array_equal(binary_joint_table(SampledIID(q, p), G), binary_joint_table(IID(p * q), G))
        for q in (0.3, 0.5, 0.9) for p in (0.2, 0.5, 1.0)
    )
    ok = sym.passed and not asym.passed and norm_ok and same
    detail = (f"symmetric passes {sym.passed}, perturbed fails {not asym.passed}, "
              f"normalisation {sym.normalisation!r}, sampled IID identical {same}")
    assert criterion(12, "random-field audits", ok, detail)
