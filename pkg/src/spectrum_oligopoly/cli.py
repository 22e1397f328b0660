"""Command-line front end.

Exit codes: 0 success, 1 validation error, 2 audit failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import __version__
from .config import (
    family_from,
    graph_from,
    load_config,
    params_from,
    partition_from,
    same_state_from,
    state_model_from,
)
from .errors import ValidationError
from .graphs import Partition
from .market import check_assumption1, solve_single_location
from .meanvalid import (
    best_response_audit,
    dominance_gap,
    equalization_residual,
    equilibrium_from_t,
    solve_mean_valid,
)
from .simulator import efficiency_curve, estimate_ne_payoff
from .spsym import (
    component_stats,
    exact_component_stats,
    linear_family_audit,
    node_offer_profile,
    spsym_ne_audit,
    SPsym,
)
from .states import EXACT_CAP, SameEverywhere, audit_isomorphism_invariance, binary_joint_table

EXIT_OK, EXIT_INVALID, EXIT_AUDIT = 0, 1, 2


@dataclass
class Result:
    columns: list[str]
    rows: list[dict]
    summary: dict
    status: int = EXIT_OK


DESCRIBE: dict[str, dict[str, str]] = {
    "pricing": {
        "j": "channel state (1 = lowest quality)",
        "alpha": "probability a competitor offers a state-j channel at the location",
        "p": "equilibrium price level; p - c is the expected payoff at state j",
        "L": "lower end of the state-j penalty support",
        "U": "upper end of the state-j penalty support",
    },
    "mean-valid": {
        "s": "partition set index (1 = largest)",
        "j": "network-wide channel state",
        "M": "size of set s",
        "t": "probability of selecting set s at state j",
        "gamma": "probability a competitor offers a state >= j channel at a node of set s",
        "alpha": "probability a competitor offers a state-j channel at a node of set s",
        "p": "price level at a node of set s, state j",
        "L": "lower end of the penalty support at a node of set s, state j",
        "U": "upper end of the penalty support at a node of set s, state j",
    },
    "audit-ne": {
        "j": "network-wide channel state",
        "target": "equilibrium total payoff P*_j",
        "best": "best total payoff over maximal independent sets",
        "best_set": "nodes of the best maximal independent set",
        "gain": "largest payoff gain for a primary on a supported set that switches to best_set (0 when none)",
        "passed": "1 when no maximal set beats the equilibrium at this state",
    },
    "spsym-audit": {
        "node": "node id",
        "alpha": "exact probability that a primary offers at the node",
        "payoff": "expected payoff of an offer at the node",
    },
    "linear-family": {
        "node": "node id on the 4-node line (0-based)",
        "alpha": "exact probability that a primary offers at the node",
        "payoff": "expected payoff of an offer at the node",
    },
    "components": {
        "statistic": "largest / mean / rooted component size (rooted = component of a random available node)",
        "value": "Monte Carlo mean over sampled availability patterns",
        "stderr": "standard error of the mean",
        "exact": "exact expectation by enumeration (blank when the graph is too large)",
    },
    "mrf-audit": {
        "state": "availability pattern, one digit per node",
        "prob": "exact probability of the pattern",
    },
    "simulate": {
        "setting": "1 = same state everywhere, 2 = per-node availability",
        "rounds": "number of simulated rounds",
        "mean": "mean payoff per primary per round",
        "stderr": "standard error of the mean",
        "analytic": "equilibrium payoff predicted by the solver",
        "z": "(mean - analytic) / stderr",
    },
    "efficiency": {
        "m": "buyers per node",
        "ne_welfare": "simulated total equilibrium payoff of all primaries",
        "ne_stderr": "standard error of ne_welfare",
        "ne_analytic": "analytic total equilibrium payoff",
        "r_opt": "collusive optimum of total welfare",
        "r_opt_stderr": "standard error of r_opt (0 when exact)",
        "eta": "efficiency ne_welfare / r_opt",
        "eta_stderr": "standard error of eta",
    },
}


def _clean(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def _cell(x: Any) -> str:
    x = _clean(x)
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, list):
        return " ".join(_cell(v) for v in x)
    return "" if x is None else str(x)


def _to_csv(result: Result) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(result.columns)
    for row in result.rows:
        writer.writerow([_cell(row.get(c)) for c in result.columns])
    return buf.getvalue()


def _to_json(command: str, result: Result) -> str:
    doc = {"command": command, "summary": result.summary, "rows": result.rows,
           "status": result.status}
    return json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n"


def _seed(cfg: dict) -> int:
    if cfg.get("seed") is None:
        raise ValidationError("this command is stochastic: give --seed or a 'seed' config field")
    return int(cfg["seed"])


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_pricing(cfg: dict) -> Result:
    params = params_from(cfg)
    family = family_from(cfg, params.n)
    alpha = cfg.get("offer_probs", cfg.get("q"))
    if alpha is None:
        raise ValidationError("pricing needs 'offer_probs' (or 'q')")
    sol = solve_single_location(params, family, alpha)
    rows = [
        {"j": j, "alpha": sol.alpha[j - 1], "p": sol.p[j - 1], "L": sol.L[j - 1], "U": sol.U[j - 1]}
        for j in range(1, params.n + 1)
    ]
    a1 = check_assumption1(family, params.c)
    summary = {"degenerate": sol.degenerate, "assumption1_passed": a1.passed,
               "assumption1_checked": a1.checked}
    return Result(list(DESCRIBE["pricing"]), rows, summary)


def _mean_valid_rows(eq, params) -> list[dict]:
    rows = []
    for s in range(len(eq.M)):
        for j in range(1, eq.n + 1):
            sol = eq.pricing[s]
            rows.append({
                "s": s + 1, "j": j, "M": eq.M[s], "t": eq.t[s, j - 1],
                "gamma": eq.gamma[s, j - 1], "alpha": sol.alpha[j - 1],
                "p": sol.p[j - 1], "L": sol.L[j - 1], "U": sol.U[j - 1],
            })
    return rows


def _cardinalities(cfg: dict) -> tuple[tuple[int, ...], Partition | None]:
    if cfg.get("cardinalities") is not None:
        return tuple(int(x) for x in cfg["cardinalities"]), None
    G = graph_from(cfg)
    part = partition_from(cfg, G)
    return part.cardinalities, part


def cmd_mean_valid(cfg: dict) -> Result:
    params = params_from(cfg)
    family = family_from(cfg, params.n)
    M, part = _cardinalities(cfg)
    eq = solve_mean_valid(M, same_state_from(cfg), params, family)
    summary = {
        "M": eq.M, "t": eq.t, "gamma": eq.gamma[:, :-1], "d": eq.d, "P_star": eq.payoffs,
        "levels": eq.levels, "expected_payoff": eq.expected_payoff(),
        "equalization_residual": equalization_residual(eq, params),
        "dominance_gap": dominance_gap(eq, params),
        "partition": part.sets if part else None,
    }
    return Result(list(DESCRIBE["mean-valid"]), _mean_valid_rows(eq, params), summary)


def cmd_audit_ne(cfg: dict) -> Result:
    params = params_from(cfg)
    family = family_from(cfg, params.n)
    G = graph_from(cfg)
    part = partition_from(cfg, G)
    model = same_state_from(cfg)
    eq = solve_mean_valid(part.cardinalities, model, params, family)
    delta = float(cfg.get("perturb", 0.0) or 0.0)
    if delta:
        t = eq.t.copy()
        t[0, 0] += delta
        t[:, 0] /= t[:, 0].sum()
        eq = equilibrium_from_t(part.cardinalities, t, model, params, family)
    report = best_response_audit(G, part, eq, params, family, grid=int(cfg.get("grid", 0) or 0))
    rows = []
    for st in report.states:
        gain = st.deviation[2] if st.deviation else 0.0
        rows.append({"j": st.j, "target": st.target, "best": st.best, "best_set": st.best_set,
                     "gain": max(gain, 0.0), "passed": st.passed})
    summary = {"passed": report.passed, "partition": part.sets, "t": eq.t,
               "perturb": delta, "witness": report.witness}
    return Result(list(DESCRIBE["audit-ne"]), rows, summary,
                  EXIT_OK if report.passed else EXIT_AUDIT)


def _require_n1(params) -> None:
    if params.n != 1:
        raise ValidationError("this command uses binary availability: set n = 1")


def cmd_spsym_audit(cfg: dict) -> Result:
    params = params_from(cfg)
    _require_n1(params)
    family = family_from(cfg, 1)
    G = graph_from(cfg)
    model = state_model_from(cfg)
    report = spsym_ne_audit(model, G, params, family)
    rows = [{"node": a, "alpha": report.alpha[a], "payoff": report.node_payoffs[a]}
            for a in range(G.n)]
    summary = {
        "passed": report.passed,
        "nodes_equal": report.nodes_equal,
        "alpha_spread": float(report.alpha.max() - report.alpha.min()),
        "states_checked": report.states_checked,
        "witnesses": [
            {"state": w.state, "component": w.component, "better_set": w.better_set,
             "better_value": w.better_value, "strategy_value": w.strategy_value, "gain": w.gain}
            for w in report.witnesses
        ],
    }
    return Result(list(DESCRIBE["spsym-audit"]), rows, summary,
                  EXIT_OK if report.passed else EXIT_AUDIT)


def cmd_linear_family(cfg: dict) -> Result:
    params = params_from(cfg)
    _require_n1(params)
    family = family_from(cfg, 1)
    r, r1 = float(_required(cfg, "r")), float(_required(cfg, "r1"))
    report = linear_family_audit(r, r1, params, family)
    rows = [{"node": a, "alpha": report.alpha[a], "payoff": report.ne.node_payoffs[a]}
            for a in range(4)]
    summary = {
        "passed": report.passed, "r": r, "r1": r1,
        "alpha_spread": float(report.alpha.max() - report.alpha.min()),
        "identities": {k: {"lhs": a, "rhs": b, "holds": ok} for k, (a, b, ok) in report.identities.items()},
        "deviations": len(report.ne.witnesses),
    }
    return Result(list(DESCRIBE["linear-family"]), rows, summary,
                  EXIT_OK if report.passed else EXIT_AUDIT)


def _required(cfg: dict, key: str):
    if cfg.get(key) is None:
        raise ValidationError(f"missing {key!r}")
    return cfg[key]


def cmd_components(cfg: dict) -> Result:
    G = graph_from(cfg)
    model = state_model_from(cfg)
    samples = int(cfg.get("samples", 10_000))
    rng = np.random.default_rng(_seed(cfg))
    stats = component_stats(model, G, samples, rng)
    exact = exact_component_stats(model, G) if G.n <= EXACT_CAP else None
    rows = [
        {"statistic": "largest", "value": stats.mean_largest, "stderr": stats.mean_largest_stderr,
         "exact": exact.mean_largest if exact else None},
        {"statistic": "mean", "value": stats.mean_size, "stderr": stats.mean_size_stderr,
         "exact": exact.mean_size if exact else None},
        {"statistic": "rooted", "value": stats.mean_rooted_size, "stderr": stats.mean_rooted_size_stderr,
         "exact": exact.mean_rooted_size if exact else None},
    ]
    summary = {"samples": samples, "bound": stats.bound, "mu": stats.mu, "max_degree": G.max_degree}
    return Result(list(DESCRIBE["components"]), rows, summary)


def cmd_mrf_audit(cfg: dict) -> Result:
    G = graph_from(cfg)
    model = state_model_from(cfg)
    report = audit_isomorphism_invariance(model, G)
    table = binary_joint_table(model, G)
    rows = [{"state": "".join(str((m >> a) & 1) for a in range(G.n)), "prob": table[m]}
            for m in range(len(table))]
    summary = {
        "passed": report.passed, "pairs_checked": report.pairs_checked,
        "classes": report.classes, "violation": report.violation,
        "clique_profile": report.clique_profile, "clique_uniform": report.clique_uniform,
        "normalisation": report.normalisation,
    }
    return Result(list(DESCRIBE["mrf-audit"]), rows, summary,
                  EXIT_OK if report.passed else EXIT_AUDIT)


def cmd_simulate(cfg: dict) -> Result:
    params = params_from(cfg)
    family = family_from(cfg, params.n)
    G = graph_from(cfg)
    setting = int(cfg.get("setting", 1))
    rounds = int(cfg.get("rounds", 10_000))
    rng = np.random.default_rng(_seed(cfg))
    if setting == 1:
        part = partition_from(cfg, G)
        model = same_state_from(cfg)
        eq = solve_mean_valid(part.cardinalities, model, params, family)
        est = estimate_ne_payoff(1, eq, SameEverywhere(model.q), G, params, family, rounds, rng,
                                 partition=part)
    elif setting == 2:
        _require_n1(params)
        model = state_model_from(cfg)
        mode = "exact" if G.n <= EXACT_CAP else "mc"
        profile = node_offer_profile(SPsym(), model, G, mode, rng=rng)
        est = estimate_ne_payoff(2, profile, model, G, params, family, rounds, rng)
    else:
        raise ValidationError(f"setting must be 1 or 2, got {setting}")
    row = {"setting": setting, "rounds": est.rounds, "mean": est.mean, "stderr": est.stderr,
           "analytic": est.analytic, "z": est.z_score}
    return Result(list(DESCRIBE["simulate"]), [row], dict(row))


def cmd_efficiency(cfg: dict) -> Result:
    params = params_from(cfg)
    family = family_from(cfg, params.n)
    G = graph_from(cfg)
    setting = int(cfg.get("setting", 1))
    rounds = int(cfg.get("rounds", 10_000))
    m_list = cfg.get("m_list")
    if not m_list:
        raise ValidationError("efficiency needs --m-list or an 'm_list' config field")
    rng = np.random.default_rng(_seed(cfg))
    if setting == 1:
        part = partition_from(cfg, G)
        model = SameEverywhere(same_state_from(cfg).q)
    else:
        _require_n1(params)
        part = None
        model = state_model_from(cfg)
    report = efficiency_curve(setting, G, params, [int(m) for m in m_list], model, family, rounds,
                              rng, partition=part, opt_mode=str(cfg.get("opt_mode", "auto")),
                              opt_samples=int(cfg.get("opt_samples", 2000)))
    rows = [p.as_row() for p in report.points]
    etas = report.eta
    summary = {"setting": setting, "eta": etas,
               "increasing": all(b > a for a, b in zip(etas, etas[1:]))}
    return Result(list(DESCRIBE["efficiency"]), rows, summary)


COMMANDS: dict[str, Callable[[dict], Result]] = {
    "pricing": cmd_pricing,
    "mean-valid": cmd_mean_valid,
    "audit-ne": cmd_audit_ne,
    "spsym-audit": cmd_spsym_audit,
    "linear-family": cmd_linear_family,
    "components": cmd_components,
    "mrf-audit": cmd_mrf_audit,
    "simulate": cmd_simulate,
    "efficiency": cmd_efficiency,
}

HELP = {
    "pricing": "single-location price distributions per state",
    "mean-valid": "selection probabilities on a mean valid partition",
    "audit-ne": "brute-force best-response audit on a conflict graph",
    "spsym-audit": "offer probabilities and audit for uniform maximum-set selection",
    "linear-family": "audit the line-graph strategy family at (r, r1)",
    "components": "sampled component sizes against the branching bound",
    "mrf-audit": "joint table and isomorphism audit for a state model",
    "simulate": "Monte Carlo payoff of the equilibrium",
    "efficiency": "equilibrium welfare over the collusion optimum for several m",
}


# ---------------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------------


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spectrum-oligopoly",
                                     description="Equilibrium solvers and audits for spectrum oligopolies.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", help="JSON config file (\"schema\": 1)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir", help="write <command>.csv and <command>.json here")
        p.add_argument("--format", choices=("csv", "json"), default="csv",
                       help="what to print on stdout")
        p.add_argument("--describe", action="store_true", help="document the output columns and exit")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field (value parsed as JSON)")
        if name == "linear-family":
            p.add_argument("--r", type=float)
            p.add_argument("--r1", type=float)
        if name == "components":
            p.add_argument("--samples", type=int)
        if name in ("simulate", "efficiency"):
            p.add_argument("--setting", type=int, choices=(1, 2))
            p.add_argument("--rounds", type=int)
        if name == "efficiency":
            p.add_argument("--m-list", help="comma-separated demand levels, e.g. 2,4,6,8")
        if name == "audit-ne":
            p.add_argument("--perturb", type=float, help="add this to t_{1,1} and renormalise")
    return parser


def _apply_overrides(cfg: dict, args: argparse.Namespace) -> dict:
    cfg = dict(cfg)
    for item in args.set:
        if "=" not in item:
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        cfg[key] = _parse_value(value)
    for key in ("seed", "r", "r1", "samples", "setting", "rounds", "perturb"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    m_list = getattr(args, "m_list", None)
    if m_list:
        try:
            cfg["m_list"] = [int(x) for x in m_list.split(",") if x.strip()]
        except ValueError as exc:
            raise ValidationError(f"bad --m-list {m_list!r}") from exc
    return cfg


def _describe(command: str) -> str:
    lines = [f"{command} output columns:"]
    width = max(len(k) for k in DESCRIBE[command])
    for key, text in DESCRIBE[command].items():
        lines.append(f"  {key.ljust(width)}  {text}")
    return "\n".join(lines) + "\n"


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.describe:
        sys.stdout.write(_describe(args.command))
        return EXIT_OK
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        result = COMMANDS[args.command](cfg)
    except (ValidationError, ValueError, KeyError, TypeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID
    csv_text, json_text = _to_csv(result), _to_json(args.command, result)
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        for ext, text in (("csv", csv_text), ("json", json_text)):
            with open(os.path.join(args.out_dir, f"{args.command}.{ext}"), "w", encoding="utf-8") as fh:
                fh.write(text)
    sys.stdout.write(csv_text if args.format == "csv" else json_text)
    if result.status == EXIT_AUDIT:
        sys.stderr.write("audit failed\n")
    return result.status


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
