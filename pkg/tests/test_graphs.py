import itertools
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from spectrum_oligopoly.errors import CapExceededError, ValidationError
from spectrum_oligopoly.graphs import (
    ConflictGraph,
    Partition,
    are_isomorphic,
    build_graph,
    check_mean_valid,
    circulant_graph,
    complete_graph,
    components,
    cycle_graph,
    find_isomorphism,
    independent_sets,
    is_vertex_transitive,
    king_grid,
    king_grid_partition,
    linear_graph,
    maximal_cliques,
    mean_valid_partitions,
    parse_edge_list,
    partition_load,
    restrict,
)


def brute_independent(G):
    out = []
    for r in range(G.n + 1):
        for combo in itertools.combinations(range(G.n), r):
            if all((min(u, v), max(u, v)) not in G.edges for u, v in itertools.combinations(combo, 2)):
                out.append(combo)
    return out


def brute_maximal(G):
    ind = [set(s) for s in brute_independent(G)]
    return sorted(tuple(sorted(s)) for s in ind if not any(s < t for t in ind))


graphs = st.integers(1, 9).flatmap(
    lambda n: st.sets(
        st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)).filter(lambda e: e[0] < e[1]),
        max_size=n * (n - 1) // 2,
    ).map(lambda E: ConflictGraph(n, frozenset(E)))
)


@settings(max_examples=80, deadline=None)
@given(G=graphs)
def test_enumeration_matches_brute_force(G):
    assert independent_sets(G, "all") == sorted(brute_independent(G))
    maximal = brute_maximal(G)
    assert independent_sets(G, "maximal") == maximal
    top = max(len(s) for s in maximal)
    assert independent_sets(G, "maximum") == [s for s in maximal if len(s) == top]


@settings(max_examples=50, deadline=None)
@given(G=graphs)
def test_components_partition_nodes(G):
    comps = components(G)
    assert sorted(a for c in comps for a in c) == list(range(G.n))
    for u, v in G.edges:
        assert any(u in c and v in c for c in comps)


def test_independent_set_counts_on_paths():
    # all independent sets of a path on n nodes: Fibonacci F(n + 2)
    fib = [0, 1]
    while len(fib) < 16:
        fib.append(fib[-1] + fib[-2])
    for n in range(1, 13):
        assert len(independent_sets(linear_graph(n), "all")) == fib[n + 2]


def test_maximal_sets_on_cycles():
    # maximal independent sets of a cycle follow the Perrin sequence
    perrin = {3: 3, 4: 2, 5: 5, 6: 5, 7: 7, 8: 10, 9: 12, 10: 17}
    for n, count in perrin.items():
        assert len(independent_sets(cycle_graph(n), "maximal")) == count


def test_cycle_six_maximal_sets():
    assert independent_sets(cycle_graph(6), "maximal") == [
        (0, 2, 4), (0, 3), (1, 3, 5), (1, 4), (2, 5)
    ]


def test_enumeration_caps():
    with pytest.raises(CapExceededError):
        independent_sets(linear_graph(26), "maximal")
    with pytest.raises(CapExceededError):
        independent_sets(linear_graph(21), "all")
    assert len(independent_sets(linear_graph(21), "all", cap=21)) == 28657


def test_king_grid_structure():
    G = king_grid(3)
    assert G.degree(4) == 8
    assert G.degree(0) == 3
    assert G.max_degree == 8
    assert len(G.edges) == 20
    part = Partition(tuple(king_grid_partition(3)))
    assert part.cardinalities == (4, 2, 2, 1)
    assert check_mean_valid(G, part).valid


def test_king_grid_five_partition():
    part = Partition(tuple(king_grid_partition(5)))
    assert part.cardinalities == (9, 6, 6, 4)
    assert check_mean_valid(king_grid(5), part).valid


def test_partition_load_exact():
    part = Partition(((0, 2, 4), (1, 3)))
    assert partition_load(part, (0, 3)) == Fraction(5, 6)


def test_overloaded_partition_rejected():
    G = ConflictGraph(5, frozenset({(0, 3), (0, 4), (1, 3), (2, 3)}))
    report = check_mean_valid(G, [(0, 1, 2), (3, 4)])
    assert not report.valid
    assert report.witness == (1, 2, 4)
    assert report.load == Fraction(7, 6)


def test_partition_invariant_errors():
    G = cycle_graph(6)
    assert "cover" in check_mean_valid(G, [(0, 2, 4)]).reason
    assert "overlap" in check_mean_valid(G, [(0, 2, 4), (1, 3, 5), (0, 3)]).reason
    assert "not maximal" in check_mean_valid(G, [(0, 2), (1, 3, 5), (4,)]).reason
    assert "not independent" in check_mean_valid(G, [(0, 1), (2, 3), (4, 5)]).reason


def test_two_node_graph_partitions():
    # C4 plus a disjoint edge admits exactly two mean-valid partitions
    G = build_graph("edge-list", edges=[(0, 1), (1, 2), (2, 3), (3, 0), (4, 5)])
    found = mean_valid_partitions(G)
    assert [p.sets for p in found] == [((0, 2, 4), (1, 3, 5)), ((0, 2, 5), (1, 3, 4))]


@settings(max_examples=30, deadline=None)
@given(G=graphs)
def test_found_partitions_are_valid(G):
    for part in mean_valid_partitions(G, limit=3):
        assert check_mean_valid(G, part).valid
        for I in independent_sets(G, "all"):
            assert partition_load(part, I) <= 1


def test_restrict_keeps_labels():
    G = linear_graph(5)
    H = restrict(G, [1, 0, 2, 2, 0])
    assert H.n == 3
    assert H.labels == (0, 2, 3)
    assert H.edges == frozenset({(1, 2)})
    assert H.to_labels((0, 2)) == (0, 3)
    with pytest.raises(ValidationError):
        restrict(G, [1, 1])


def test_edge_list_parsing():
    G = parse_edge_list("# ring\n0 1\n1 2\n\n2 0  # close\n", n_nodes=4)
    assert G.n == 4 and len(G.edges) == 3
    with pytest.raises(ValidationError):
        parse_edge_list("0 1 2")
    with pytest.raises(ValidationError):
        parse_edge_list("0 x")
    with pytest.raises(ValidationError):
        parse_edge_list("0 5", n_nodes=3)
    with pytest.raises(ValidationError):
        parse_edge_list("1 1")


def test_build_graph_kinds(tmp_path):
    path = tmp_path / "g.txt"
    path.write_text("0 1\n1 2\n")
    assert build_graph("edge-list", path=str(path)).n == 3
    assert build_graph("circulant", size=6, hops=[1, 2]).max_degree == 4
    with pytest.raises(ValidationError):
        build_graph("hypercube", size=3)
    with pytest.raises(ValidationError):
        build_graph("cycle", size=0)


def test_cliques():
    assert maximal_cliques(king_grid(2)) == [(0, 1, 2, 3)]
    assert maximal_cliques(linear_graph(3)) == [(0, 1), (1, 2)]


def test_isomorphism_search():
    shifted = build_graph("edge-list", edges=[(1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 1)])
    assert are_isomorphic(cycle_graph(6), shifted)
    assert not are_isomorphic(cycle_graph(6), linear_graph(6))
    iso = find_isomorphism(linear_graph(4), linear_graph(4), fixed=(0, 3))
    assert iso == {0: 3, 1: 2, 2: 1, 3: 0}
    assert find_isomorphism(linear_graph(4), linear_graph(4), fixed=(0, 1)) is None


def test_vertex_transitivity():
    untagged = lambda G: ConflictGraph(G.n, G.edges)
    assert is_vertex_transitive(untagged(cycle_graph(7)))
    assert is_vertex_transitive(untagged(circulant_graph(8, [1, 3])))
    assert is_vertex_transitive(untagged(complete_graph(5)))
    assert not is_vertex_transitive(untagged(linear_graph(4)))
    assert not is_vertex_transitive(untagged(king_grid(3)))
    with pytest.raises(CapExceededError):
        is_vertex_transitive(untagged(linear_graph(11)))
