"""Equilibrium checks when availability differs from node to node (binary states).

A primary sees which nodes its channel is available at, picks an independent
set of that available subgraph, and prices at each chosen node with the
single-location rule using the node's offer probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import CapExceededError, ValidationError
from .graphs import (
    ConflictGraph,
    component_masks,
    linear_graph,
    mask_of,
    maximal_independent_masks,
    nodes_of,
)
from .market import MarketParams, PenaltyFamily, keep_prob
from .states import EXACT_CAP, IID, ChannelStateModel, binary_joint_table

Dist = list[tuple[int, float]]


def _mask_from_state(J: Sequence[int]) -> int:
    return mask_of(a for a, s in enumerate(J) if s)


def _product(dists: list[Dist]) -> Dist:
    out: Dist = [(0, 1.0)]
    for dist in dists:
        out = [(m | m2, p * p2) for m, p in out for m2, p2 in dist if p2 > 0]
    return out


class SetSelectionStrategy:
    """Maps an availability pattern (bitmask over the base graph) to a distribution over independent sets."""

    name = "strategy"

    def distribution(self, G: ConflictGraph, mask: int) -> Dist:
        raise NotImplementedError

    def marginals(self, G: ConflictGraph, mask: int) -> np.ndarray:
        out = np.zeros(G.n)
        for m, p in self.distribution(G, mask):
            for a in nodes_of(m):
                out[a] += p
        return out

    def sample(self, G: ConflictGraph, mask: int, rng: np.random.Generator) -> int:
        dist = self.distribution(G, mask)
        probs = np.array([p for _, p in dist])
        k = int(np.searchsorted(np.cumsum(probs), rng.random() * probs.sum(), side="right"))
        return dist[min(k, len(dist) - 1)][0]


class SPsym(SetSelectionStrategy):
    """Uniform over the maximum independent sets, drawn separately in each component."""

    name = "spsym"

    def __init__(self):
        self._cache: dict[tuple, list[int]] = {}

    def maximum_sets(self, G: ConflictGraph, comp: int) -> list[int]:
        key = (G.adj, comp)
        hit = self._cache.get(key)
        if hit is None:
            sets = maximal_independent_masks(G.adj, comp)
            top = max(m.bit_count() for m in sets)
            hit = sorted((m for m in sets if m.bit_count() == top), key=nodes_of)
            self._cache[key] = hit
        return hit

    def distribution(self, G, mask):
        dists = []
        for comp in component_masks(G.adj, mask):
            sets = self.maximum_sets(G, comp)
            dists.append([(m, 1.0 / len(sets)) for m in sets])
        return _product(dists)

    def marginals(self, G, mask):
        out = np.zeros(G.n)
        for comp in component_masks(G.adj, mask):
            sets = self.maximum_sets(G, comp)
            for m in sets:
                for a in nodes_of(m):
                    out[a] += 1.0 / len(sets)
        return out

    def sample(self, G, mask, rng):
        chosen = 0
        for comp in component_masks(G.adj, mask):
            sets = self.maximum_sets(G, comp)
            chosen |= sets[int(rng.integers(len(sets)))] if len(sets) > 1 else sets[0]
        return chosen


class LinearFamily(SetSelectionStrategy):
    """Two-parameter family of selection rules on the 4-node line.

    Odd runs take every other node starting at the run's first node. Two-node
    runs and the full line split according to ``r`` and ``r1``.
    """

    name = "linear-family"

    def __init__(self, r: float, r1: float, tol: float = 1e-12):
        if abs(2 * r + r1 - 0.75) > tol:
            raise ValidationError(f"need 2r + r1 = 0.75, got {2 * r + r1!r}")
        if not (0.0 <= r <= 0.25):
            raise ValidationError(f"need 0 <= r <= 0.25, got {r!r}")
        self.r, self.r1 = float(r), float(r1)

    def _run(self, start: int, length: int) -> Dist:
        if length % 2 == 1:
            return [(mask_of(range(start, start + length, 2)), 1.0)]
        if length == 4:
            return [(mask_of((0, 2)), self.r1), (mask_of((1, 3)), 1.0 - self.r1)]
        split = {0: self.r, 1: 0.5, 2: 0.75 + self.r}[start]
        return [(1 << start, split), (1 << (start + 1), 1.0 - split)]

    def distribution(self, G, mask):
        if G.n != 4 or G.edges != linear_graph(4).edges:
            raise ValidationError("this family is defined on the 4-node line only")
        runs = []
        for comp in component_masks(G.adj, mask):
            nodes = nodes_of(comp)
            runs.append(self._run(nodes[0], len(nodes)))
        return _product(runs)


class ExplicitStrategy(SetSelectionStrategy):
    """Selection given by a table ``{state tuple: [(node set, prob), ...]}``."""

    name = "explicit"

    def __init__(self, table: Mapping[tuple[int, ...], Sequence[tuple[Sequence[int], float]]]):
        self.table = {
            _mask_from_state(J): [(mask_of(I), float(p)) for I, p in rows]
            for J, rows in table.items()
        }

    def distribution(self, G, mask):
        if mask not in self.table:
            if mask == 0:
                return [(0, 1.0)]
            raise ValidationError(f"no selection rule for availability pattern {nodes_of(mask)}")
        rows = self.table[mask]
        for m, _ in rows:
            if m & ~mask or not G.is_independent(nodes_of(m)):
                raise ValidationError(f"set {nodes_of(m)} is not an independent set of the available nodes")
        return rows


def spsym_select(G_J: ConflictGraph, rng: np.random.Generator,
                 strategy: SPsym | None = None) -> tuple[int, ...]:
    """Draw a maximum independent set of a (restricted) graph; returns original node labels."""
    if G_J.n == 0:
        raise ValidationError("no available node to select")
    strategy = strategy or SPsym()
    chosen = strategy.sample(G_J, G_J.full_mask, rng)
    return G_J.to_labels(nodes_of(chosen))


# ---------------------------------------------------------------------------
# Offer probabilities
# ---------------------------------------------------------------------------


@dataclass
class NodeOfferProfile:
    alpha: np.ndarray
    stderr: np.ndarray | None = None

    @property
    def exact(self) -> bool:
        return self.stderr is None

    @property
    def spread(self) -> float:
        return float(self.alpha.max() - self.alpha.min()) if len(self.alpha) else 0.0


def _require_binary(model: ChannelStateModel) -> None:
    if getattr(model, "n_states", 1) != 1:
        raise ValidationError("this setting supports binary availability (n = 1) only")


def node_offer_profile(
    strategy: SetSelectionStrategy,
    model: ChannelStateModel,
    G: ConflictGraph,
    mode: str = "exact",
    samples: int = 10_000,
    rng: np.random.Generator | None = None,
) -> NodeOfferProfile:
    """Probability that a primary offers its channel at each node."""
    _require_binary(model)
    if mode == "exact":
        if G.n > EXACT_CAP:
            raise CapExceededError(f"exact offer probabilities capped at {EXACT_CAP} nodes")
        table = binary_joint_table(model, G)
        alpha = np.zeros(G.n)
        for mask in np.nonzero(table > 0)[0]:
            if mask:
                alpha += table[mask] * strategy.marginals(G, int(mask))
        return NodeOfferProfile(alpha)
    if mode == "mc":
        if rng is None:
            raise ValidationError("Monte Carlo mode needs a seeded generator")
        states = model.sample(G, rng, samples)
        hits = np.zeros((samples, G.n))
        for k in range(samples):
            mask = _mask_from_state(states[k])
            if mask:
                chosen = strategy.sample(G, mask, rng)
                for a in nodes_of(chosen):
                    hits[k, a] = 1.0
        return NodeOfferProfile(hits.mean(axis=0), hits.std(axis=0, ddof=1) / math.sqrt(samples))
    raise ValidationError(f"unknown mode {mode!r}")


def run_length_table(model: ChannelStateModel, n_nodes: int) -> dict[tuple[int, int], float]:
    """On a line, P(the run of available nodes starting at ``start`` has length ``length``)."""
    G = linear_graph(n_nodes)
    table = binary_joint_table(model, G)
    out: dict[tuple[int, int], float] = {}
    for mask in range(len(table)):
        for comp in component_masks(G.adj, mask):
            nodes = nodes_of(comp)
            key = (nodes[0], len(nodes))
            out[key] = out.get(key, 0.0) + float(table[mask])
    return out


# ---------------------------------------------------------------------------
# Equilibrium audits
# ---------------------------------------------------------------------------


@dataclass
class DeviationWitness:
    state: tuple[int, ...]
    component: tuple[int, ...]
    better_set: tuple[int, ...]
    better_value: float
    strategy_value: float

    @property
    def gain(self) -> float:
        return self.better_value - self.strategy_value


@dataclass
class NEAuditReport:
    passed: bool
    alpha: np.ndarray
    node_payoffs: np.ndarray
    nodes_equal: bool
    witnesses: list[DeviationWitness] = field(default_factory=list)
    states_checked: int = 0

    @property
    def witness(self) -> DeviationWitness | None:
        return self.witnesses[0] if self.witnesses else None


def node_payoffs(alpha: np.ndarray, params: MarketParams, family: PenaltyFamily) -> np.ndarray:
    """Equilibrium payoff of an offer at each node: (f_1(v) - c) W(alpha_a)."""
    top = float(family.f(1, params.v)) - params.c
    return np.array([top * keep_prob(float(min(a, 1.0)), params) for a in alpha])


def strategy_ne_audit(
    strategy: SetSelectionStrategy,
    model: ChannelStateModel,
    G: ConflictGraph,
    params: MarketParams,
    family: PenaltyFamily,
    tol: float = 1e-9,
    equal_tol: float = 1e-12,
) -> NEAuditReport:
    """Check, pattern by pattern, that no maximal independent set beats the strategy's mix.

    Payoffs decompose over the components of the available subgraph, so each
    component is compared separately. Witnesses are deduplicated by component.
    """
    _require_binary(model)
    if params.n != 1:
        raise ValidationError("this setting supports n = 1 only")
    profile = node_offer_profile(strategy, model, G, "exact")
    u = node_payoffs(profile.alpha, params, family)
    table = binary_joint_table(model, G)
    best_cache: dict[int, tuple[float, int]] = {}
    seen: set[int] = set()
    witnesses: list[DeviationWitness] = []
    checked = 0
    for mask in range(1, len(table)):
        if table[mask] <= 0:
            continue
        checked += 1
        marg = strategy.marginals(G, mask)
        for comp in component_masks(G.adj, mask):
            if comp not in best_cache:
                best_cache[comp] = max(
                    (math.fsum(u[a] for a in nodes_of(m)), m)
                    for m in maximal_independent_masks(G.adj, comp)
                )
            best, best_set = best_cache[comp]
            value = math.fsum(marg[a] * u[a] for a in nodes_of(comp))
            if best > value + tol and comp not in seen:
                seen.add(comp)
                witnesses.append(
                    DeviationWitness(
                        tuple((mask >> a) & 1 for a in range(G.n)),
                        nodes_of(comp),
                        nodes_of(best_set),
                        best,
                        value,
                    )
                )
    witnesses.sort(key=lambda w: w.component)
    return NEAuditReport(
        passed=not witnesses,
        alpha=profile.alpha,
        node_payoffs=u,
        nodes_equal=profile.spread < equal_tol,
        witnesses=witnesses,
        states_checked=checked,
    )


def spsym_ne_audit(model: ChannelStateModel, G: ConflictGraph, params: MarketParams,
                   family: PenaltyFamily, tol: float = 1e-9) -> NEAuditReport:
    return strategy_ne_audit(SPsym(), model, G, params, family, tol)


@dataclass
class LinearFamilyReport:
    passed: bool
    identities: dict[str, tuple[float, float, bool]]
    alpha: np.ndarray
    ne: NEAuditReport


def linear_family_identities(model: ChannelStateModel) -> dict[str, tuple[float, float, bool]]:
    """Run-length identities on the 4-node line that force equal offer probabilities.

    Keys use 1-based (start, length) labels, e.g. ``t13`` is a run starting at
    the first node with length 3.
    """
    t = run_length_table(model, 4)

    def T(i, j):
        return t.get((i - 1, j), 0.0)

    checks = {
        "t13 = t23": (T(1, 3), T(2, 3)),
        "t41 = t11": (T(4, 1), T(1, 1)),
        "t31 = t21": (T(3, 1), T(2, 1)),
        "t32 = t12": (T(3, 2), T(1, 2)),
        "t22 = t14": (T(2, 2), T(1, 4)),
        "t12 = 2 t14": (T(1, 2), 2 * T(1, 4)),
        "t21 + t12 = t11": (T(2, 1) + T(1, 2), T(1, 1)),
        "t41 = t31 + t32": (T(4, 1), T(3, 1) + T(3, 2)),
    }
    return {k: (a, b, abs(a - b) < 1e-12) for k, (a, b) in checks.items()}


def linear_family_audit(r: float, r1: float, params: MarketParams, family: PenaltyFamily,
                        q: float = 0.5) -> LinearFamilyReport:
    """Audit one member of the line family under IID availability ``q``."""
    strategy = LinearFamily(r, r1)
    model = IID(q)
    G = linear_graph(4)
    identities = linear_family_identities(model)
    ne = strategy_ne_audit(strategy, model, G, params, family)
    passed = ne.passed and ne.nodes_equal and all(ok for _, _, ok in identities.values())
    return LinearFamilyReport(passed, identities, ne.alpha, ne)


# ---------------------------------------------------------------------------
# Component statistics
# ---------------------------------------------------------------------------


@dataclass
class ComponentStats:
    samples: int
    mean_largest: float
    mean_largest_stderr: float
    mean_size: float
    mean_size_stderr: float
    mean_rooted_size: float
    mean_rooted_size_stderr: float
    bound: float
    mu: float | None

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _bound(model: ChannelStateModel, G: ConflictGraph) -> tuple[float, float | None]:
    if not isinstance(model, IID):
        return math.inf, None
    mu = model.availability * G.max_degree
    return (1.0 / (1.0 - mu) if mu < 1.0 else math.inf), mu


def _batch_components(G: ConflictGraph, avail: np.ndarray):
    b, N = avail.shape
    edges = np.array(sorted(G.edges), dtype=np.int64).reshape(-1, 2)
    offset = (np.arange(b, dtype=np.int64) * N)[:, None]
    if len(edges):
        act = avail[:, edges[:, 0]] & avail[:, edges[:, 1]]
        rows = (edges[:, 0][None, :] + offset)[act]
        cols = (edges[:, 1][None, :] + offset)[act]
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(b * N, b * N)).tocsr()
    ncomp, labels = connected_components(graph, directed=False)
    flat = avail.ravel()
    sizes = np.bincount(labels[flat], minlength=ncomp)
    owner = np.zeros(ncomp, dtype=np.int64)
    owner[labels] = np.arange(b * N) // N
    live = np.nonzero(sizes)[0]
    comp_sizes = sizes[live].astype(float)
    comp_owner = owner[live]
    largest = np.zeros(b)
    np.maximum.at(largest, comp_owner, comp_sizes)
    count = np.bincount(comp_owner, minlength=b)
    total = np.bincount(comp_owner, weights=comp_sizes, minlength=b)
    square = np.bincount(comp_owner, weights=comp_sizes**2, minlength=b)
    mean = np.divide(total, count, out=np.zeros(b), where=count > 0)
    rooted = np.divide(square, total, out=np.zeros(b), where=total > 0)
    return largest, mean, rooted


def _se(x: np.ndarray) -> float:
    return float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0


def component_stats(model: ChannelStateModel, G: ConflictGraph, samples: int,
                    rng: np.random.Generator, batch: int | None = None) -> ComponentStats:
    """Monte Carlo statistics of the available subgraph's components.

    Per sample: the largest component, the mean component size, and the size of
    the component holding a uniformly chosen available node (0 when nothing is
    available). Means and standard errors are across samples.
    """
    if samples < 1:
        raise ValidationError("need at least one sample")
    _require_binary(model)
    if batch is None:
        batch = max(1, min(samples, 200_000 // max(G.n, 1)))
    largest, mean, rooted = [], [], []
    done = 0
    while done < samples:
        b = min(batch, samples - done)
        avail = model.sample(G, rng, b).astype(bool)
        lg, mn, rt = _batch_components(G, avail)
        largest.append(lg)
        mean.append(mn)
        rooted.append(rt)
        done += b
    lg, mn, rt = (np.concatenate(x) for x in (largest, mean, rooted))
    bound, mu = _bound(model, G)
    return ComponentStats(samples, float(lg.mean()), _se(lg), float(mn.mean()), _se(mn),
                          float(rt.mean()), _se(rt), bound, mu)


def exact_component_stats(model: ChannelStateModel, G: ConflictGraph) -> ComponentStats:
    """The same statistics by summing over every availability pattern (small graphs)."""
    table = binary_joint_table(model, G)
    e_largest = e_mean = e_rooted = 0.0
    for mask in range(1, len(table)):
        p = float(table[mask])
        if p <= 0:
            continue
        sizes = [c.bit_count() for c in component_masks(G.adj, mask)]
        e_largest += p * max(sizes)
        e_mean += p * sum(sizes) / len(sizes)
        e_rooted += p * sum(s * s for s in sizes) / sum(sizes)
    bound, mu = _bound(model, G)
    return ComponentStats(0, e_largest, 0.0, e_mean, 0.0, e_rooted, 0.0, bound, mu)
