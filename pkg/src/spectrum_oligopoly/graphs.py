"""Conflict graphs and the combinatorial queries the equilibrium code needs.

Node sets are handled internally as integer bitmasks; public functions return
sorted tuples of node ids.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

from .errors import CapExceededError, ValidationError

MAXIMAL_CAP = 25
ALL_CAP = 20
SYMMETRY_CAP = 10


def _bits(mask: int) -> Iterator[int]:
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def mask_of(nodes: Iterable[int]) -> int:
    out = 0
    for a in nodes:
        out |= 1 << a
    return out


def nodes_of(mask: int) -> tuple[int, ...]:
    return tuple(_bits(mask))


@dataclass(frozen=True)
class ConflictGraph:
    """Undirected simple graph on nodes ``0..n-1``.

    ``labels`` maps each node to its id in the graph it was restricted from.
    ``transitive`` is a certificate set by generators known to be vertex-transitive.
    """

    n: int
    edges: frozenset[tuple[int, int]]
    labels: tuple[int, ...] = ()
    transitive: bool | None = None
    adj: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 0:
            raise ValidationError("node count must be non-negative")
        norm = set()
        for u, v in self.edges:
            if u == v:
                raise ValidationError(f"self-loop at node {u}")
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise ValidationError(f"edge ({u}, {v}) references a node outside 0..{self.n - 1}")
            norm.add((min(u, v), max(u, v)))
        object.__setattr__(self, "edges", frozenset(norm))
        if not self.labels:
            object.__setattr__(self, "labels", tuple(range(self.n)))
        elif len(self.labels) != self.n:
            raise ValidationError("one label per node required")
        adj = [0] * self.n
        for u, v in norm:
            adj[u] |= 1 << v
            adj[v] |= 1 << u
        object.__setattr__(self, "adj", tuple(adj))

    @property
    def full_mask(self) -> int:
        return (1 << self.n) - 1

    def neighbors(self, a: int) -> tuple[int, ...]:
        return nodes_of(self.adj[a])

    def degree(self, a: int) -> int:
        return self.adj[a].bit_count()

    @property
    def max_degree(self) -> int:
        return max((self.degree(a) for a in range(self.n)), default=0)

    def is_independent(self, nodes: Iterable[int]) -> bool:
        m = mask_of(nodes)
        return all(not (self.adj[a] & m) for a in _bits(m))

    def is_maximal_independent(self, nodes: Iterable[int]) -> bool:
        m = mask_of(nodes)
        if not self.is_independent(nodes):
            return False
        blocked = m
        for a in _bits(m):
            blocked |= self.adj[a]
        return blocked == self.full_mask

    def to_labels(self, nodes: Iterable[int]) -> tuple[int, ...]:
        return tuple(sorted(self.labels[a] for a in nodes))


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


def linear_graph(size: int) -> ConflictGraph:
    return ConflictGraph(size, frozenset((i, i + 1) for i in range(size - 1)))


def cycle_graph(size: int) -> ConflictGraph:
    edges = {(i, i + 1) for i in range(size - 1)}
    if size >= 3:
        edges.add((0, size - 1))
    return ConflictGraph(size, frozenset(edges), transitive=True)


def complete_graph(size: int) -> ConflictGraph:
    edges = frozenset((i, j) for i in range(size) for j in range(i + 1, size))
    return ConflictGraph(size, edges, transitive=True)


def circulant_graph(size: int, hops: Sequence[int]) -> ConflictGraph:
    if not hops:
        raise ValidationError("circulant graph needs a non-empty hop set")
    edges = set()
    for i in range(size):
        for h in hops:
            j = (i + int(h)) % size
            if j != i:
                edges.add((min(i, j), max(i, j)))
    return ConflictGraph(size, frozenset(edges), transitive=True)


def king_grid(k: int) -> ConflictGraph:
    """k-by-k grid where each cell conflicts with its 8 surrounding cells; node = row*k + col."""
    edges = set()
    for r in range(k):
        for c in range(k):
            for dr, dc in ((0, 1), (1, -1), (1, 0), (1, 1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < k and 0 <= cc < k:
                    edges.add((r * k + c, rr * k + cc))
    return ConflictGraph(k * k, frozenset(edges))


def king_grid_partition(k: int) -> list[tuple[int, ...]]:
    """Split a king grid by (row parity, column parity), largest class first."""
    groups: dict[tuple[int, int], list[int]] = {}
    for r in range(k):
        for c in range(k):
            groups.setdefault((r % 2, c % 2), []).append(r * k + c)
    parts = [tuple(g) for _, g in sorted(groups.items())]
    return sorted(parts, key=lambda s: (-len(s), s))


def parse_edge_list(text: str, n_nodes: int | None = None) -> ConflictGraph:
    """Parse one ``u v`` pair per line (0-indexed). Blank lines and ``#`` comments are skipped."""
    edges = []
    top = -1
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValidationError(f"line {lineno}: expected 'u v', got {raw!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise ValidationError(f"line {lineno}: non-integer node id in {raw!r}") from exc
        if u < 0 or v < 0:
            raise ValidationError(f"line {lineno}: negative node id")
        edges.append((u, v))
        top = max(top, u, v)
    n = top + 1 if n_nodes is None else int(n_nodes)
    if n <= top:
        raise ValidationError(f"edge list references node {top} but only {n} nodes declared")
    return ConflictGraph(n, frozenset(edges))


def build_graph(kind: str, **kw) -> ConflictGraph:
    """Build a graph by kind: linear, cycle, complete, circulant, king-grid or edge-list."""
    if kind in ("linear", "cycle", "complete", "circulant"):
        size = int(kw.get("size", 0))
        if size < 1:
            raise ValidationError(f"{kind} graph needs size >= 1")
        if kind == "linear":
            return linear_graph(size)
        if kind == "cycle":
            return cycle_graph(size)
        if kind == "complete":
            return complete_graph(size)
        return circulant_graph(size, kw.get("hops") or [])
    if kind == "king-grid":
        k = int(kw.get("k", 0))
        if k < 1:
            raise ValidationError("king-grid needs k >= 1")
        return king_grid(k)
    if kind == "edge-list":
        if "edges" in kw:
            text = "\n".join(f"{u} {v}" for u, v in kw["edges"])
        elif "path" in kw:
            with open(kw["path"], encoding="utf-8") as fh:
                text = fh.read()
        elif "text" in kw:
            text = kw["text"]
        else:
            raise ValidationError("edge-list graph needs 'edges', 'path' or 'text'")
        return parse_edge_list(text, kw.get("nodes"))
    raise ValidationError(f"unknown graph kind {kind!r}")


def restrict(G: ConflictGraph, J: Sequence[int]) -> ConflictGraph:
    """Induced subgraph on the nodes whose state is non-zero; labels keep the original ids."""
    if len(J) != G.n:
        raise ValidationError(f"state vector has length {len(J)}, graph has {G.n} nodes")
    keep = [a for a in range(G.n) if J[a] >= 1]
    index = {a: i for i, a in enumerate(keep)}
    edges = frozenset(
        (index[u], index[v]) for u, v in G.edges if u in index and v in index
    )
    transitive = G.transitive if len(keep) == G.n else None
    return ConflictGraph(len(keep), edges, tuple(G.labels[a] for a in keep), transitive)


# ---------------------------------------------------------------------------
# Independent sets, cliques and components (bitmask kernels)
# ---------------------------------------------------------------------------


def _bron_kerbosch(nbr: Sequence[int], mask: int) -> list[int]:
    """All maximal cliques, as bitmasks, of the graph given by ``nbr`` restricted to ``mask``."""
    out: list[int] = []

    def expand(R: int, P: int, X: int) -> None:
        if not P and not X:
            out.append(R)
            return
        PX = P | X
        pivot = max(_bits(PX), key=lambda u: (P & nbr[u]).bit_count())
        for v in _bits(P & ~nbr[pivot]):
            bit = 1 << v
            expand(R | bit, P & nbr[v], X & nbr[v])
            P &= ~bit
            X |= bit

    if mask:
        expand(0, mask, 0)
    return out


def maximal_independent_masks(adj: Sequence[int], mask: int) -> list[int]:
    """Maximal independent sets of the subgraph induced by ``mask``."""
    full = mask
    comp = [(full & ~adj[a] & ~(1 << a)) if (mask >> a) & 1 else 0 for a in range(len(adj))]
    return _bron_kerbosch(comp, mask)


def maximal_clique_masks(adj: Sequence[int], mask: int) -> list[int]:
    nbr = [adj[a] & mask for a in range(len(adj))]
    return _bron_kerbosch(nbr, mask)


def component_masks(adj: Sequence[int], mask: int) -> list[int]:
    """Connected components of the induced subgraph, ordered by lowest node."""
    out = []
    rest = mask
    while rest:
        low = rest & -rest
        comp = low
        frontier = low
        while frontier:
            grow = 0
            for a in _bits(frontier):
                grow |= adj[a]
            frontier = grow & rest & ~comp
            comp |= frontier
        out.append(comp)
        rest &= ~comp
    return out


def _sort_sets(masks: Iterable[int]) -> list[tuple[int, ...]]:
    return sorted(nodes_of(m) for m in masks)


def independent_sets(G: ConflictGraph, mode: str = "maximal", cap: int | None = None
                     ) -> list[tuple[int, ...]]:
    """Enumerate independent sets: ``all``, ``maximal`` or ``maximum``, in lexicographic order."""
    if mode not in ("all", "maximal", "maximum"):
        raise ValidationError(f"unknown enumeration mode {mode!r}")
    limit = cap if cap is not None else (ALL_CAP if mode == "all" else MAXIMAL_CAP)
    if G.n > limit:
        raise CapExceededError(
            f"{mode} independent-set enumeration capped at {limit} nodes (graph has {G.n}); "
            "enumerate per component instead"
        )
    if mode == "all":
        found: list[int] = []

        def grow(chosen: int, start: int) -> None:
            found.append(chosen)
            blocked = chosen
            for a in _bits(chosen):
                blocked |= G.adj[a]
            for a in range(start, G.n):
                if not (blocked >> a) & 1:
                    grow(chosen | (1 << a), a + 1)

        grow(0, 0)
        return _sort_sets(found)
    masks = maximal_independent_masks(G.adj, G.full_mask)
    if mode == "maximum" and masks:
        top = max(m.bit_count() for m in masks)
        masks = [m for m in masks if m.bit_count() == top]
    return _sort_sets(masks)


def maximal_cliques(G: ConflictGraph) -> list[tuple[int, ...]]:
    if G.n > MAXIMAL_CAP:
        raise CapExceededError(f"clique enumeration capped at {MAXIMAL_CAP} nodes")
    return _sort_sets(maximal_clique_masks(G.adj, G.full_mask))


def components(G: ConflictGraph) -> list[tuple[int, ...]]:
    return [nodes_of(m) for m in component_masks(G.adj, G.full_mask)]


# ---------------------------------------------------------------------------
# Partitions into maximal independent sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Partition:
    """Disjoint node sets ordered by decreasing size (ties by lowest node)."""

    sets: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        ordered = tuple(sorted((tuple(sorted(s)) for s in self.sets), key=lambda s: (-len(s), s)))
        object.__setattr__(self, "sets", ordered)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.sets)

    @property
    def d(self) -> int:
        return len(self.sets)

    def set_of(self) -> dict[int, int]:
        """Node -> index of the set holding it."""
        return {a: s for s, nodes in enumerate(self.sets) for a in nodes}


@dataclass
class MeanValidReport:
    valid: bool
    reason: str = ""
    witness: tuple[int, ...] | None = None
    load: Fraction | None = None


def partition_load(partition: Partition, nodes: Iterable[int]) -> Fraction:
    """sum_s |I & I_s| / |I_s| for a node set I."""
    where = partition.set_of()
    counts: dict[int, int] = {}
    for a in nodes:
        counts[where[a]] = counts.get(where[a], 0) + 1
    return sum((Fraction(k, len(partition.sets[s])) for s, k in counts.items()), Fraction(0))


def check_mean_valid(G: ConflictGraph, partition: Partition | Sequence[Sequence[int]],
                     cap: int = MAXIMAL_CAP) -> MeanValidReport:
    """Check the partition invariants and that no independent set overloads the partition.

    The load of an independent set only grows when nodes are added, so checking
    maximal sets covers every independent set.
    """
    if not isinstance(partition, Partition):
        partition = Partition(tuple(tuple(s) for s in partition))
    seen: set[int] = set()
    for s in partition.sets:
        if not s:
            return MeanValidReport(False, "empty set in partition")
        if seen & set(s):
            return MeanValidReport(False, "partition sets overlap")
        seen |= set(s)
    if seen != set(range(G.n)):
        return MeanValidReport(False, "partition does not cover every node")
    for s in partition.sets:
        if not G.is_independent(s):
            return MeanValidReport(False, f"set {s} is not independent", witness=s)
        if not G.is_maximal_independent(s):
            return MeanValidReport(False, f"set {s} is not maximal", witness=s)
    for I in independent_sets(G, "maximal", cap=cap):
        load = partition_load(partition, I)
        if load > 1:
            return MeanValidReport(False, "independent set exceeds unit load", witness=I, load=load)
    return MeanValidReport(True)


def mean_valid_partitions(G: ConflictGraph, limit: int | None = None) -> list[Partition]:
    """Every partition of the nodes into maximal independent sets that passes the mean-valid check."""
    if G.n > MAXIMAL_CAP:
        raise CapExceededError(f"partition search capped at {MAXIMAL_CAP} nodes")
    sets = maximal_independent_masks(G.adj, G.full_mask)
    maximal = [nodes_of(m) for m in sets]
    results: list[Partition] = []

    def cover(used: int, chosen: list[int]) -> bool:
        if used == G.full_mask:
            part = Partition(tuple(nodes_of(m) for m in chosen))
            report = _load_ok(part, maximal)
            if report:
                results.append(part)
            return limit is not None and len(results) >= limit
        first = (~used & G.full_mask) & -(~used & G.full_mask)
        for m in sets:
            if m & first and not (m & used):
                if cover(used | m, chosen + [m]):
                    return True
        return False

    cover(0, [])
    return sorted(results, key=lambda p: p.sets)


def _load_ok(part: Partition, maximal: list[tuple[int, ...]]) -> bool:
    return all(partition_load(part, I) <= 1 for I in maximal)


# ---------------------------------------------------------------------------
# Isomorphism and vertex transitivity (backtracking)
# ---------------------------------------------------------------------------


def _extend_map(G1: ConflictGraph, G2: ConflictGraph, order: list[int],
                mapping: dict[int, int], used: int) -> dict[int, int] | None:
    if len(mapping) == len(order):
        return dict(mapping)
    a = order[len(mapping)]
    for b in range(G2.n):
        if (used >> b) & 1 or G1.degree(a) != G2.degree(b):
            continue
        ok = True
        for a2, b2 in mapping.items():
            if bool((G1.adj[a] >> a2) & 1) != bool((G2.adj[b] >> b2) & 1):
                ok = False
                break
        if ok:
            mapping[a] = b
            found = _extend_map(G1, G2, order, mapping, used | (1 << b))
            del mapping[a]
            if found is not None:
                return found
    return None


def find_isomorphism(G1: ConflictGraph, G2: ConflictGraph,
                     fixed: tuple[int, int] | None = None,
                     cap: int = SYMMETRY_CAP) -> dict[int, int] | None:
    """A node bijection preserving adjacency, optionally forced to send ``fixed[0]`` to ``fixed[1]``."""
    if max(G1.n, G2.n) > cap:
        raise CapExceededError(f"isomorphism search capped at {cap} nodes")
    if G1.n != G2.n or len(G1.edges) != len(G2.edges):
        return None
    if sorted(G1.degree(a) for a in range(G1.n)) != sorted(G2.degree(b) for b in range(G2.n)):
        return None
    # map high-degree, well-connected nodes first so conflicts surface early
    order = sorted(range(G1.n), key=lambda a: -G1.degree(a))
    mapping: dict[int, int] = {}
    used = 0
    if fixed is not None:
        a, b = fixed
        if G1.degree(a) != G2.degree(b):
            return None
        order.remove(a)
        order.insert(0, a)
        mapping[a] = b
        used = 1 << b
    return _extend_map(G1, G2, order, mapping, used)


def are_isomorphic(G1: ConflictGraph, G2: ConflictGraph, cap: int = SYMMETRY_CAP) -> bool:
    return find_isomorphism(G1, G2, cap=cap) is not None


def is_vertex_transitive(G: ConflictGraph, cap: int = SYMMETRY_CAP) -> bool:
    """True when an automorphism maps node 0 to every other node.

    Automorphisms form a group, so reaching every node from node 0 is enough.
    Graphs built by symmetric generators skip the search.
    """
    if G.transitive is not None:
        return G.transitive
    if G.n <= 1:
        return True
    return all(find_isomorphism(G, G, fixed=(0, b), cap=cap) is not None for b in range(1, G.n))
