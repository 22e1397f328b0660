"""Equilibrium when the channel state is the same at every location.

The graph enters only through the sizes ``M_1 >= ... >= M_d`` of a partition
into maximal independent sets. For each state ``j`` (from the best state down)
the selection probabilities ``t_{.,j}`` are chosen so that every set that is
used earns the same total expected payoff, and unused sets earn no more.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .graphs import ConflictGraph, Partition, check_mean_valid, independent_sets
from .market import (
    MarketParams,
    PenaltyFamily,
    PricingSolution,
    bisect_increasing,
    keep_prob,
    keep_prob_inverse,
    payoff_at,
    solve_single_location,
)

SNAP = 1e-12


@dataclass(frozen=True)
class SameStateModel:
    """Network-wide state ``j`` with probability ``q[j-1]``; the rest is the all-zero state."""

    q: tuple[float, ...]

    def __post_init__(self):
        q = tuple(float(x) for x in self.q)
        object.__setattr__(self, "q", q)
        if not q:
            raise ValidationError("need at least one state probability")
        if any((not math.isfinite(x)) or x < 0 for x in q):
            raise ValidationError("state probabilities must be non-negative")
        total = math.fsum(q)
        if total > 1.0 + 1e-12:
            raise ValidationError(f"state probabilities sum to {total!r} > 1")
        if total >= 1.0 - 1e-12:
            warnings.warn("state probabilities sum to 1; outside the modelled regime",
                          stacklevel=2)

    @property
    def n(self) -> int:
        return len(self.q)


@dataclass(frozen=True)
class MeanValidEquilibrium:
    """Selection probabilities and pricing for the same-state setting.

    Arrays are indexed ``[s, j-1]`` for set ``s`` (0-based, largest first) and
    state ``j``. ``gamma`` has an extra trailing column of zeros.
    """

    M: tuple[int, ...]
    q: tuple[float, ...]
    t: np.ndarray
    gamma: np.ndarray
    d: tuple[int, ...]
    payoffs: tuple[float, ...]
    pricing: tuple[PricingSolution, ...]
    levels: tuple[float, ...] = field(default=())

    @property
    def n(self) -> int:
        return len(self.q)

    def alpha(self, s: int) -> tuple[float, ...]:
        """Offer probabilities seen at a node of set ``s``."""
        return tuple(self.q[j] * self.t[s, j] for j in range(self.n))

    def expected_payoff(self) -> float:
        """Per-primary expected payoff, sum_j q_j P*_j."""
        return math.fsum(q * p for q, p in zip(self.q, self.payoffs))


def _validate_cardinalities(M: Sequence[int]) -> tuple[int, ...]:
    M = tuple(int(x) for x in M)
    if not M:
        raise ValidationError("need at least one set size")
    if any(x < 1 for x in M):
        raise ValidationError("set sizes must be positive")
    if any(M[i] < M[i + 1] for i in range(len(M) - 1)):
        raise ValidationError(f"set sizes must be sorted in decreasing order, got {M}")
    return M


def _solve_column(M, gamma_next, qj, params, bracket: str) -> tuple[np.ndarray, float]:
    """Column of ``t`` at one state and its common payoff level.

    Bisecting on the level directly is ill-conditioned: W is flat near the
    entry point of a set, so a set's mass jumps between adjacent floats. We
    instead find the last set to enter and bisect on its own offer mass ``z``.
    """
    theta = [Ms * keep_prob(min(g, 1.0), params) for Ms, g in zip(M, gamma_next)]
    order = sorted(range(len(M)), key=lambda s: -theta[s])
    groups: list[list[int]] = []
    for s in order:
        if theta[s] <= 0:
            break
        if groups and theta[s] == theta[groups[-1][0]] and M[s] == M[groups[-1][0]]:
            groups[-1].append(s)
        else:
            groups.append([s])
    if not groups:
        raise ArithmeticError("no set can earn a positive payoff at this state")

    def column(level: float, tied: list[int], z: float) -> np.ndarray:
        t = np.zeros(len(M))
        for s, Ms in enumerate(M):
            if s in tied:
                t[s] = max(z - gamma_next[s], 0.0) / qj
            elif level < theta[s]:
                t[s] = (keep_prob_inverse(level / Ms, params) - gamma_next[s]) / qj
        return t

    # the entering group is the last one whose entry level still leaves total mass below 1
    last = groups[0]
    for g in groups[1:]:
        if column(theta[g[0]], [], 0.0).sum() >= 1.0:
            break
        last = g
    k = last[0]
    g0 = min(gamma_next[k], 1.0)
    if bracket == "tight":
        lo, hi = g0, min(g0 + qj, 1.0)
    elif bracket == "wide":
        lo, hi = 0.0, 1.0
    else:
        raise ValidationError(f"unknown bracket {bracket!r}")

    def total(z: float) -> float:
        return float(column(M[k] * keep_prob(z, params), last, z).sum())

    z = bisect_increasing(total, 1.0, lo, hi)
    level = M[k] * keep_prob(z, params)
    t = column(level, last, z)
    t[t < SNAP] = 0.0
    s = t.sum()
    if not abs(s - 1.0) < 1e-8:
        raise ArithmeticError(f"column sums to {s!r} after bisection")
    return t / s, level


def _degenerate_column(M) -> np.ndarray:
    top = [s for s, Ms in enumerate(M) if Ms == M[0]]
    t = np.zeros(len(M))
    t[top] = 1.0 / len(top)
    return t


def solve_mean_valid(
    M: Sequence[int],
    model: SameStateModel,
    params: MarketParams,
    family: PenaltyFamily,
    bracket: str = "tight",
) -> MeanValidEquilibrium:
    """Solve for ``t``, ``gamma``, thresholds ``d_j``, payoffs ``P*_j`` and pricing chains.

    ``bracket`` selects the starting interval of the payoff-level bisection
    (``tight`` or ``wide``); both must give the same answer.
    """
    M = _validate_cardinalities(M)
    if model.n != params.n:
        raise ValidationError(f"model has {model.n} states, params say n={params.n}")
    if any(qj <= 0 for qj in model.q):
        raise ValidationError("every state needs positive probability; drop unused states")
    d, n = len(M), model.n
    t = np.zeros((d, n))
    gamma = np.zeros((d, n + 1))
    levels = [0.0] * n
    for j in range(n - 1, -1, -1):
        qj = model.q[j]
        if params.degenerate:
            col, level = _degenerate_column(M), float(M[0])
        else:
            col, level = _solve_column(M, gamma[:, j + 1], qj, params, bracket)
        t[:, j] = col
        gamma[:, j] = qj * col + gamma[:, j + 1]
        levels[j] = level

    thresholds = tuple(int(max(np.nonzero(t[:, j] > 0)[0])) + 1 for j in range(n))
    pricing = tuple(
        solve_single_location(params, family, [model.q[j] * t[s, j] for j in range(n)])
        for s in range(d)
    )
    payoffs = tuple(
        max(M[s] * (pricing[s].p[j] - params.c) for s in range(d) if t[s, j] > 0)
        for j in range(n)
    )
    return MeanValidEquilibrium(M, model.q, t, gamma, thresholds, payoffs, pricing, tuple(levels))


def equilibrium_from_t(
    M: Sequence[int],
    t: np.ndarray,
    model: SameStateModel,
    params: MarketParams,
    family: PenaltyFamily,
) -> MeanValidEquilibrium:
    """Package an arbitrary selection matrix with its induced pricing, for audits.

    ``P*_j`` is taken as the best payoff among the sets that ``t`` uses.
    """
    M = _validate_cardinalities(M)
    t = np.asarray(t, dtype=float)
    d, n = t.shape
    if d != len(M) or n != model.n:
        raise ValidationError("t has the wrong shape")
    if np.any(t < 0) or np.max(np.abs(t.sum(axis=0) - 1.0)) > 1e-10:
        raise ValidationError("columns of t must be probability vectors")
    gamma = np.zeros((d, n + 1))
    for j in range(n - 1, -1, -1):
        gamma[:, j] = model.q[j] * t[:, j] + gamma[:, j + 1]
    thresholds = tuple(int(max(np.nonzero(t[:, j] > 0)[0])) + 1 for j in range(n))
    pricing = tuple(
        solve_single_location(params, family, [model.q[j] * t[s, j] for j in range(n)])
        for s in range(d)
    )
    payoffs = tuple(
        max(M[s] * (pricing[s].p[j] - params.c) for s in range(d) if t[s, j] > 0)
        for j in range(n)
    )
    return MeanValidEquilibrium(M, model.q, t, gamma, thresholds, payoffs, pricing)


def node_pricing(eq: MeanValidEquilibrium, s: int, j: int) -> tuple[float, float, float]:
    """``(p, L, U)`` at a node of set ``s`` (0-based) in state ``j`` (1-based)."""
    sol = eq.pricing[s]
    return sol.p[j - 1], sol.L[j - 1], sol.U[j - 1]


def equalization_residual(eq: MeanValidEquilibrium, params: MarketParams) -> float:
    """Largest spread of M_s W(gamma_{s,j}) among the sets used at each state."""
    worst = 0.0
    for j in range(eq.n):
        vals = [eq.M[s] * keep_prob(min(eq.gamma[s, j], 1.0), params) for s in range(eq.d[j])]
        worst = max(worst, max(vals) - min(vals))
    return worst


def dominance_gap(eq: MeanValidEquilibrium, params: MarketParams) -> float:
    """Most negative margin by which a used set beats an unused one (>= 0 when dominance holds)."""
    gap = math.inf
    for j in range(eq.n):
        dj = eq.d[j]
        used = eq.M[dj - 1] * keep_prob(min(eq.gamma[dj - 1, j], 1.0), params)
        for s in range(dj, len(eq.M)):
            gap = min(gap, used - eq.M[s] * keep_prob(min(eq.gamma[s, j], 1.0), params))
    return gap


# ---------------------------------------------------------------------------
# Audits
# ---------------------------------------------------------------------------


@dataclass
class StateAudit:
    j: int
    target: float
    best: float
    best_set: tuple[int, ...]
    supported: dict[int, float]
    passed: bool
    deviation: tuple[int, tuple[int, ...], float] | None = None


@dataclass
class BestResponseReport:
    passed: bool
    states: list[StateAudit]
    grid_checked: bool = False

    @property
    def witness(self):
        for st in self.states:
            if st.deviation is not None:
                return st.j, st.deviation
        return None


def _node_best(eq, s, j, params, family, grid: int) -> float:
    sol = eq.pricing[s]
    candidates = set(sol.L) | {params.v}
    best = max(payoff_at(x, j, sol, params, family) for x in candidates)
    if grid:
        lo = sol.L[-1]
        xs = np.linspace(lo, params.v, grid)
        dense = max(payoff_at(float(x), j, sol, params, family) for x in xs)
        if dense > best + 1e-9 * max(1.0, abs(best)):
            raise ArithmeticError(
                f"grid payoff {dense!r} beats endpoint candidates {best!r} at set {s}, state {j}"
            )
    return best


def best_response_audit(
    G: ConflictGraph,
    partition: Partition,
    eq: MeanValidEquilibrium,
    params: MarketParams,
    family: PenaltyFamily,
    tol: float = 1e-9,
    grid: int = 0,
) -> BestResponseReport:
    """Brute-force check that no maximal independent set beats the equilibrium payoff.

    A node's best payoff is taken over its lower endpoints and ``v``; ``grid``
    points (e.g. 1000) additionally scan the whole penalty range as a cross-check.
    """
    if tuple(partition.cardinalities) != tuple(eq.M):
        raise ValidationError("partition sizes do not match the equilibrium")
    where = partition.set_of()
    maximal = independent_sets(G, "maximal")
    states = []
    for j in range(1, eq.n + 1):
        node_best = [_node_best(eq, s, j, params, family, grid) for s in range(len(eq.M))]
        best, best_set = -math.inf, ()
        for I in maximal:
            val = math.fsum(node_best[where[a]] for a in I)
            if val > best:
                best, best_set = val, I
        target = eq.payoffs[j - 1]
        supported = {
            s: eq.M[s] * node_best[s] for s in range(len(eq.M)) if eq.t[s, j - 1] > 0
        }
        deviation = None
        ok = best <= target + tol
        for s, val in supported.items():
            if abs(val - target) > tol or val < best - tol:
                ok = False
                if deviation is None or best - val > deviation[2]:
                    deviation = (s, best_set, best - val)
        if deviation is None and not ok:
            deviation = (-1, best_set, best - target)
        states.append(StateAudit(j, target, best, best_set, supported, ok, deviation))
    return BestResponseReport(all(st.passed for st in states), states, bool(grid))


@dataclass
class EquivalenceReport:
    passed: bool
    max_alpha_diff: float
    cardinalities_match: bool
    disjoint_unequal: bool
    alpha_a: np.ndarray
    alpha_b: np.ndarray
    reason: str = ""


def node_alpha(partition: Partition, eq: MeanValidEquilibrium, n_nodes: int) -> np.ndarray:
    """alpha[a, j-1] = q_j t_{s(a), j}."""
    out = np.zeros((n_nodes, eq.n))
    for s, nodes in enumerate(partition.sets):
        for a in nodes:
            out[a] = [eq.q[j] * eq.t[s, j] for j in range(eq.n)]
    return out


def partition_equivalence_audit(
    G: ConflictGraph,
    partition_a: Partition,
    partition_b: Partition,
    model: SameStateModel,
    params: MarketParams,
    family: PenaltyFamily,
    tol: float = 1e-9,
) -> EquivalenceReport:
    """Solve on two mean-valid partitions and compare the per-node offer probabilities."""
    for part in (partition_a, partition_b):
        rep = check_mean_valid(G, part)
        if not rep.valid:
            raise ValidationError(f"partition {part.sets} is not mean valid: {rep.reason}")
    eq_a = solve_mean_valid(partition_a.cardinalities, model, params, family)
    eq_b = solve_mean_valid(partition_b.cardinalities, model, params, family)
    alpha_a = node_alpha(partition_a, eq_a, G.n)
    alpha_b = node_alpha(partition_b, eq_b, G.n)
    diff = float(np.max(np.abs(alpha_a - alpha_b)))
    card = partition_a.cardinalities == partition_b.cardinalities
    disjoint = all(
        not (set(sa) & set(sb))
        for sa in partition_a.sets
        for sb in partition_b.sets
        if len(sa) != len(sb)
    )
    passed = card and disjoint and diff <= tol
    reason = "" if passed else (
        "cardinalities differ" if not card else
        "unequal-size sets intersect" if not disjoint else f"alpha differs by {diff!r}"
    )
    return EquivalenceReport(passed, diff, card, disjoint, alpha_a, alpha_b, reason)
