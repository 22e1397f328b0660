"""Monte Carlo play of the market, the collusive benchmark and efficiency curves.

``run_round`` is the readable reference: one realisation, any mix of policies.
The batch engines (``simulate_mean_valid`` and ``simulate_symmetric``) play many
rounds at once with numpy and are what the estimators use.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from .errors import CapExceededError, ValidationError
from .graphs import ConflictGraph, Partition, maximal_independent_masks, nodes_of
from .market import (
    MarketParams,
    PenaltyFamily,
    PricingSolution,
    keep_prob,
    penalty_quantile,
    solve_single_location,
)
from .meanvalid import MeanValidEquilibrium, solve_mean_valid
from .spsym import SetSelectionStrategy, SPsym, node_offer_profile, node_payoffs
from .states import (
    EXACT_CAP,
    ChannelStateModel,
    SameEverywhere,
    binary_joint_table,
)

EXACT_REALIZATION_CAP = 50_000
BRUTE_FORCE_CAP = 200_000


# ---------------------------------------------------------------------------
# Reference round
# ---------------------------------------------------------------------------


@dataclass
class AuctionOutcome:
    states: np.ndarray
    chosen: tuple[int, ...]
    penalties: dict[int, float]
    sold: dict[int, bool]
    payoff: float


class Policy:
    """How one primary acts given its state vector: a list of ``(node, penalty, state)`` offers."""

    def act(self, J: np.ndarray, rng: np.random.Generator) -> list[tuple[int, float, int]]:
        raise NotImplementedError


class FixedPolicy(Policy):
    """Always the same offers; handy for hand-checked allocations."""

    def __init__(self, offers: Sequence[tuple[int, float, int]]):
        self.offers = [(int(a), float(x), int(j)) for a, x, j in offers]

    def act(self, J, rng):
        return list(self.offers)


class MeanValidPolicy(Policy):
    """Same-state equilibrium play: draw a partition set, then a penalty per node."""

    def __init__(self, eq: MeanValidEquilibrium, partition: Partition,
                 params: MarketParams, family: PenaltyFamily):
        if partition.cardinalities != eq.M:
            raise ValidationError("partition sizes do not match the equilibrium")
        self.eq, self.partition, self.params, self.family = eq, partition, params, family

    def act(self, J, rng):
        j = int(J[0]) if len(J) else 0
        if j == 0:
            return []
        col = self.eq.t[:, j - 1]
        s = int(rng.choice(len(col), p=col / col.sum()))
        sol = self.eq.pricing[s]
        return [
            (a, float(penalty_quantile(rng.random(), j, sol, self.params, self.family)), j)
            for a in self.partition.sets[s]
        ]


class SymmetricPolicy(Policy):
    """Binary-availability play: a set from ``strategy`` and single-location pricing per node."""

    def __init__(self, strategy: SetSelectionStrategy, G: ConflictGraph, alpha: np.ndarray,
                 params: MarketParams, family: PenaltyFamily):
        self.strategy, self.G, self.params, self.family = strategy, G, params, family
        self.pricing = _node_pricing(alpha, params, family)

    def act(self, J, rng):
        mask = _row_mask(np.asarray(J))
        if not mask:
            return []
        chosen = self.strategy.sample(self.G, mask, rng)
        return [
            (a, float(penalty_quantile(rng.random(), 1, self.pricing[a], self.params, self.family)), 1)
            for a in nodes_of(chosen)
        ]


def _node_pricing(alpha, params, family) -> list[PricingSolution | None]:
    return [
        solve_single_location(params, family, [float(a)]) if a > 0 else None for a in alpha
    ]


def _row_mask(row: np.ndarray) -> int:
    bits = np.packbits(np.asarray(row, dtype=bool), bitorder="little")
    return int.from_bytes(bits.tobytes(), "little")


def run_round(policies: Sequence[Policy], model: ChannelStateModel, G: ConflictGraph,
              params: MarketParams, family: PenaltyFamily,
              rng: np.random.Generator) -> list[AuctionOutcome]:
    """Play one round: sample states, collect offers, sell the cheapest ``min(offers, demand)`` per node."""
    states = model.sample(G, rng, len(policies))
    offers = [policy.act(states[k], rng) for k, policy in enumerate(policies)]
    demand = np.atleast_1d(params.demand.sample(rng, G.n))
    per_node: dict[int, list[tuple[float, float, int]]] = {}
    for k, row in enumerate(offers):
        for a, x, _ in row:
            if x > params.v + 1e-9:
                raise ValidationError(f"penalty {x!r} above the cap {params.v!r}")
            per_node.setdefault(a, []).append((x, float(rng.random()), k))
    sold: list[dict[int, bool]] = [{a: False for a, _, _ in row} for row in offers]
    for a, bids in sorted(per_node.items()):
        bids.sort()
        for x, _, k in bids[: int(demand[a])]:
            sold[k][a] = True
    out = []
    for k, row in enumerate(offers):
        payoff = math.fsum(
            float(family.f(j, x)) - params.c for a, x, j in row if sold[k][a]
        )
        out.append(AuctionOutcome(states[k], tuple(a for a, _, _ in row),
                                  {a: x for a, x, _ in row}, sold[k], payoff))
    return out


# ---------------------------------------------------------------------------
# Batch engines
# ---------------------------------------------------------------------------


def allocate(P: np.ndarray, demand: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sold flags for a ``(rows, l)`` penalty matrix (``inf`` = no offer).

    Each row sells its ``demand`` lowest penalties; ties at the cut-off are
    broken uniformly at random.
    """
    rows, l = P.shape
    demand = np.asarray(demand, dtype=np.int64)
    offered = np.isfinite(P)
    S = np.sort(P, axis=1)
    idx = np.minimum(demand, l) - 1
    tau = S[np.arange(rows), idx]
    tau = np.where(demand >= l, np.inf, tau)
    below = P < tau[:, None]
    at = (P == tau[:, None]) & offered
    sold = below | at
    slots = demand - below.sum(axis=1)
    tied = np.nonzero(at.sum(axis=1) > slots)[0]
    if len(tied):
        keys = rng.random((len(tied), l))
        keys[~at[tied]] = np.inf
        order = np.argsort(keys, axis=1)
        rank = np.empty_like(order)
        np.put_along_axis(rank, order, np.arange(l)[None, :].repeat(len(tied), 0), axis=1)
        sold[tied] = below[tied] | (at[tied] & (rank < slots[tied, None]))
    return sold


def _chunks(rounds: int, batch: int):
    done = 0
    while done < rounds:
        b = min(batch, rounds - done)
        yield b
        done += b


def simulate_mean_valid(eq: MeanValidEquilibrium, partition: Partition, G: ConflictGraph,
                        params: MarketParams, family: PenaltyFamily, rounds: int,
                        rng: np.random.Generator, batch: int | None = None) -> np.ndarray:
    """Per-round average payoff per primary under same-state equilibrium play."""
    if partition.cardinalities != eq.M:
        raise ValidationError("partition sizes do not match the equilibrium")
    l, N = params.l, G.n
    d, n = eq.t.shape
    member = np.zeros((d, N), dtype=bool)
    for s, nodes in enumerate(partition.sets):
        member[s, list(nodes)] = True
    cum = np.cumsum(eq.t, axis=0).T  # (n, d)
    last = np.array(eq.d) - 1
    probs = np.array([max(0.0, 1.0 - math.fsum(eq.q)), *eq.q])
    probs /= probs.sum()
    batch = batch or max(1, 400_000 // (l * max(N, 1)))
    out = []
    for b in _chunks(rounds, batch):
        states = rng.choice(n + 1, size=(b, l), p=probs)
        u_set = rng.random((b, l))
        active = states > 0
        cum_rows = cum[np.maximum(states, 1) - 1]  # (b, l, d)
        s_idx = (u_set[..., None] >= cum_rows).sum(axis=-1)
        s_idx = np.minimum(s_idx, last[np.maximum(states, 1) - 1])
        offered = member[s_idx] & active[..., None]
        u = rng.random((b, l, N))
        P = np.full((b, l, N), np.inf)
        for j in range(1, n + 1):
            for s in range(d):
                if eq.t[s, j - 1] <= 0:
                    continue
                sel = offered & ((states == j) & (s_idx == s))[..., None]
                if sel.any():
                    P[sel] = penalty_quantile(u[sel], j, eq.pricing[s], params, family)
        rows = P.transpose(0, 2, 1).reshape(b * N, l)
        demand = np.atleast_1d(params.demand.sample(rng, b * N))
        sold = allocate(rows, demand, rng).reshape(b, N, l).transpose(0, 2, 1)
        value = np.zeros((b, l, N))
        for j in range(1, n + 1):
            sel = sold & (states == j)[..., None]
            if sel.any():
                value[sel] = np.asarray(family.f(j, P[sel]), dtype=float) - params.c
        out.append(value.sum(axis=2).mean(axis=1))
    return np.concatenate(out) if out else np.zeros(0)


def simulate_symmetric(strategy: SetSelectionStrategy, alpha: np.ndarray,
                       model: ChannelStateModel, G: ConflictGraph, params: MarketParams,
                       family: PenaltyFamily, rounds: int, rng: np.random.Generator,
                       batch: int | None = None) -> np.ndarray:
    """Per-round average payoff per primary under binary-availability play."""
    if params.n != 1:
        raise ValidationError("binary-availability play needs n = 1")
    l, N = params.l, G.n
    pricing = _node_pricing(alpha, params, family)
    batch = batch or max(1, 400_000 // (l * max(N, 1)))
    cache: dict[int, np.ndarray] = {}
    out = []
    for b in _chunks(rounds, batch):
        states = model.sample(G, rng, b * l).astype(bool)
        chosen = np.zeros((b * l, N), dtype=bool)
        for k in range(b * l):
            mask = _row_mask(states[k])
            if mask:
                cm = strategy.sample(G, mask, rng)
                row = cache.get(cm)
                if row is None:
                    row = np.array([(cm >> a) & 1 for a in range(N)], dtype=bool)
                    cache[cm] = row
                chosen[k] = row
        chosen = chosen.reshape(b, l, N)
        u = rng.random((b, l, N))
        P = np.full((b, l, N), np.inf)
        for a in range(N):
            sel = chosen[:, :, a]
            if sel.any():
                if pricing[a] is None:
                    raise ValidationError(f"node {a} is chosen but has zero offer probability")
                P[:, :, a][sel] = penalty_quantile(u[:, :, a][sel], 1, pricing[a], params, family)
        rows = P.transpose(0, 2, 1).reshape(b * N, l)
        demand = np.atleast_1d(params.demand.sample(rng, b * N))
        sold = allocate(rows, demand, rng).reshape(b, N, l).transpose(0, 2, 1)
        value = np.zeros((b, l, N))
        if sold.any():
            value[sold] = np.asarray(family.f(1, P[sold]), dtype=float) - params.c
        out.append(value.sum(axis=2).mean(axis=1))
    return np.concatenate(out) if out else np.zeros(0)


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


@dataclass
class Estimate:
    mean: float
    stderr: float
    analytic: float | None = None
    rounds: int = 0

    @property
    def z_score(self) -> float | None:
        if self.analytic is None or self.stderr == 0:
            return None
        return (self.mean - self.analytic) / self.stderr


def _summarise(x: np.ndarray, analytic=None) -> Estimate:
    se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    return Estimate(float(x.mean()), se, analytic, len(x))


def symmetric_payoff(alpha: np.ndarray, params: MarketParams, family: PenaltyFamily) -> float:
    """Per-primary expected payoff when every primary offers at node ``a`` w.p. ``alpha_a``."""
    return float(np.dot(alpha, node_payoffs(alpha, params, family)))


def estimate_ne_payoff(setting: int, equilibrium, model: ChannelStateModel, G: ConflictGraph,
                       params: MarketParams, family: PenaltyFamily, rounds: int,
                       rng: np.random.Generator, partition: Partition | None = None,
                       strategy: SetSelectionStrategy | None = None) -> Estimate:
    """Simulated per-primary payoff with its standard error and the analytic target.

    Setting 1 takes a ``MeanValidEquilibrium`` and its partition; setting 2 takes
    the per-node offer probabilities (array or profile) of ``strategy``
    (the uniform maximum-set rule by default).
    """
    if rounds < 1000:
        raise ValidationError("need at least 1000 rounds for a meaningful estimate")
    if setting == 1:
        if partition is None:
            raise ValidationError("setting 1 needs the partition the equilibrium was solved on")
        x = simulate_mean_valid(equilibrium, partition, G, params, family, rounds, rng)
        return _summarise(x, equilibrium.expected_payoff())
    if setting == 2:
        alpha = np.asarray(getattr(equilibrium, "alpha", equilibrium), dtype=float)
        x = simulate_symmetric(strategy or SPsym(), alpha, model, G, params, family, rounds, rng)
        return _summarise(x, symmetric_payoff(alpha, params, family))
    raise ValidationError(f"unknown setting {setting!r}")


# ---------------------------------------------------------------------------
# Collusive benchmark
# ---------------------------------------------------------------------------


def _welfare(choice: Sequence[int], values: np.ndarray, caps: np.ndarray) -> float:
    l, N = values.shape
    total = 0.0
    for a in range(N):
        vals = sorted((values[k, a] for k in range(l) if (choice[k] >> a) & 1), reverse=True)
        total += math.fsum(vals[: int(caps[a])])
    return total


def realization_optimum(values: np.ndarray, G: ConflictGraph, caps, solver: str = "auto") -> float:
    """Best total welfare for one realisation.

    ``values[k, a]`` is what primary ``k`` earns from a sale at node ``a`` (0 when
    unavailable); each primary offers on an independent set and node ``a`` sells
    at most ``caps[a]`` channels.
    """
    values = np.asarray(values, dtype=float)
    l, N = values.shape
    caps = np.broadcast_to(np.asarray(caps, dtype=np.int64), (N,))
    options = []
    for k in range(l):
        mask = sum(1 << a for a in range(N) if values[k, a] > 0)
        options.append(maximal_independent_masks(G.adj, mask) if mask else [0])
    size = math.prod(len(o) for o in options)
    if solver == "auto":
        solver = "brute" if size <= 2_000 else "milp"
    if solver == "brute":
        if size > BRUTE_FORCE_CAP:
            raise CapExceededError(f"{size} joint set choices exceed the brute-force cap")
        return max(_welfare(choice, values, caps) for choice in itertools.product(*options))
    if solver != "milp":
        raise ValidationError(f"unknown solver {solver!r}")
    idx = {(k, a): i for i, (k, a) in enumerate(
        (k, a) for k in range(l) for a in range(N) if values[k, a] > 0)}
    if not idx:
        return 0.0
    cost = np.zeros(len(idx))
    for (k, a), i in idx.items():
        cost[i] = -values[k, a]
    rows, ub = [], []
    for u, v in G.edges:
        for k in range(l):
            if (k, u) in idx and (k, v) in idx:
                row = np.zeros(len(idx))
                row[idx[k, u]] = row[idx[k, v]] = 1.0
                rows.append(row)
                ub.append(1.0)
    for a in range(N):
        members = [idx[k, a] for k in range(l) if (k, a) in idx]
        if len(members) > caps[a]:
            row = np.zeros(len(idx))
            row[members] = 1.0
            rows.append(row)
            ub.append(float(caps[a]))
    constraints = [LinearConstraint(np.array(rows), -np.inf, np.array(ub))] if rows else []
    res = milp(cost, constraints=constraints, integrality=np.ones(len(idx)),
               bounds=Bounds(0, 1))
    if not res.success:
        raise ArithmeticError(f"integer program failed: {res.message}")
    return float(-res.fun)


def _value_matrix(states: np.ndarray, params: MarketParams, family: PenaltyFamily) -> np.ndarray:
    top = {j: float(family.f(j, params.v)) - params.c for j in range(1, params.n + 1)}
    out = np.zeros(states.shape)
    for j, val in top.items():
        out[states == j] = val
    return out


def _multinomial(counts: Sequence[int], probs: Sequence[float]) -> float:
    total = math.factorial(sum(counts))
    for c in counts:
        total //= math.factorial(c)
    return total * math.prod(p**c for p, c in zip(probs, counts))


def collusion_optimum(model: ChannelStateModel, G: ConflictGraph, params: MarketParams,
                      family: PenaltyFamily, mode: str = "exact",
                      rng: np.random.Generator | None = None, samples: int = 2000,
                      solver: str = "auto") -> Estimate:
    """Expected total welfare when all primaries jointly choose sets and price at ``v``.

    ``exact`` sums over every realisation of the primaries' states, grouping
    exchangeable primaries; ``monte-carlo`` averages exact per-realisation
    optima over sampled realisations (and sampled demand).
    """
    l, N = params.l, G.n
    cache: dict[bytes, float] = {}

    def solve(states: np.ndarray, caps) -> float:
        order = np.lexsort(states.T[::-1])
        key = states[order].tobytes() + np.asarray(caps, dtype=np.int64).tobytes()
        hit = cache.get(key)
        if hit is None:
            hit = realization_optimum(_value_matrix(states[order], params, family), G, caps, solver)
            cache[key] = hit
        return hit

    if mode == "exact":
        if not params.demand.is_fixed:
            raise ValidationError("exact collusive benchmark needs fixed demand; use monte-carlo")
        caps = np.full(N, params.m)
        if isinstance(model, SameEverywhere):
            probs = [max(0.0, 1.0 - math.fsum(model.q)), *model.q]
            outcomes = [np.full(N, j) for j in range(len(probs))]
        else:
            if N > EXACT_CAP:
                raise CapExceededError(f"exact benchmark capped at {EXACT_CAP} nodes")
            table = binary_joint_table(model, G)
            keep = np.nonzero(table > 0)[0]
            probs = [float(table[m]) for m in keep]
            outcomes = [np.array([(int(m) >> a) & 1 for a in range(N)]) for m in keep]
        count = math.comb(len(probs) + l - 1, l)
        if count > EXACT_REALIZATION_CAP:
            raise CapExceededError(
                f"{count} realisations exceed the exact cap of {EXACT_REALIZATION_CAP}; use monte-carlo"
            )
        total = 0.0
        for combo in itertools.combinations_with_replacement(range(len(probs)), l):
            counts = [combo.count(i) for i in sorted(set(combo))]
            weight = _multinomial(counts, [probs[i] for i in sorted(set(combo))])
            states = np.stack([outcomes[i] for i in combo])
            total += weight * solve(states, caps)
        return Estimate(total, 0.0, None, 0)
    if mode == "monte-carlo":
        if rng is None:
            raise ValidationError("monte-carlo mode needs a seeded generator")
        vals = np.empty(samples)
        for s in range(samples):
            states = model.sample(G, rng, l)
            caps = np.atleast_1d(params.demand.sample(rng, N))
            vals[s] = solve(np.asarray(states), caps)
        return _summarise(vals)
    raise ValidationError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# Efficiency
# ---------------------------------------------------------------------------


@dataclass
class EfficiencyPoint:
    m: int
    ne_welfare: float
    ne_stderr: float
    ne_analytic: float
    r_opt: float
    r_opt_stderr: float
    eta: float
    eta_stderr: float

    def as_row(self) -> dict:
        return dict(self.__dict__)


@dataclass
class EfficiencyReport:
    setting: int
    points: list[EfficiencyPoint] = field(default_factory=list)

    @property
    def eta(self) -> list[float]:
        return [p.eta for p in self.points]


def efficiency_curve(setting: int, G: ConflictGraph, params: MarketParams, m_values: Sequence[int],
                     model: ChannelStateModel, family: PenaltyFamily, rounds: int,
                     rng: np.random.Generator, partition: Partition | None = None,
                     opt_mode: str = "auto", opt_samples: int = 2000,
                     strategy: SetSelectionStrategy | None = None) -> EfficiencyReport:
    """Efficiency (total equilibrium welfare over the collusive optimum) for each demand level."""
    report = EfficiencyReport(setting)
    l = params.l
    for m in m_values:
        pm = params.with_demand(int(m))
        if setting == 1:
            if partition is None or not isinstance(model, SameEverywhere):
                raise ValidationError("setting 1 needs a partition and a same-everywhere model")
            eq = solve_mean_valid(partition.cardinalities, model.as_same_state(), pm, family)
            x = simulate_mean_valid(eq, partition, G, pm, family, rounds, rng)
            analytic = l * eq.expected_payoff()
        elif setting == 2:
            strat = strategy or SPsym()
            profile = node_offer_profile(strat, model, G, "exact" if G.n <= EXACT_CAP else "mc",
                                         rng=rng)
            x = simulate_symmetric(strat, profile.alpha, model, G, pm, family, rounds, rng)
            analytic = l * symmetric_payoff(profile.alpha, pm, family)
        else:
            raise ValidationError(f"unknown setting {setting!r}")
        ne = _summarise(x)
        mode = opt_mode
        if mode == "auto":
            try:
                opt = collusion_optimum(model, G, pm, family, "exact")
            except CapExceededError:
                opt = collusion_optimum(model, G, pm, family, "monte-carlo", rng, opt_samples)
        else:
            opt = collusion_optimum(model, G, pm, family, mode, rng, opt_samples)
        welfare, welfare_se = l * ne.mean, l * ne.stderr
        eta = welfare / opt.mean if opt.mean > 0 else math.nan
        rel = math.hypot(welfare_se / welfare if welfare else 0.0,
                         opt.stderr / opt.mean if opt.mean else 0.0)
        report.points.append(EfficiencyPoint(int(m), welfare, welfare_se, analytic,
                                             opt.mean, opt.stderr, eta, abs(eta) * rel))
    return report
