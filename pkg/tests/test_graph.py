import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbda.graph import (Y, GraphError, LatentDag, blanket_partition, check_assumption3,
                        d_separated, fig1_dag, graph_report, intimate_neighbors, markov_network,
                        moralize, proposition_premises)


@st.composite
def dags(draw, max_n=6):
    n = draw(st.integers(1, max_n))
    nodes = list(range(n)) + [Y]
    order = draw(st.permutations(nodes))
    pairs = [(a, b) for i, a in enumerate(order) for b in order[i + 1:]]
    keep = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    return LatentDag(n, [p for p, k in zip(pairs, keep) if k])


def _ancestral_moral_separated(dag, a, b, cond):
    # textbook criterion: moralize the ancestral subgraph, delete cond, check connectivity
    keep = set(a) | set(b) | set(cond)
    stack = list(keep)
    while stack:
        v = stack.pop()
        for p in dag.parents(v):
            if p not in keep:
                keep.add(p)
                stack.append(p)
    adj = {v: set() for v in keep}
    for u, v in dag.edges:
        if u in keep and v in keep:
            adj[u].add(v)
            adj[v].add(u)
    for v in keep:
        for p, q in itertools.combinations(dag.parents(v), 2):
            adj[p].add(q)
            adj[q].add(p)
    seen = set(a)
    stack = list(a)
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if w in cond or w in seen:
                continue
            if w in b:
                return False
            seen.add(w)
            stack.append(w)
    return True


def test_fig1_partition_and_moral_edges():
    dag = fig1_dag()
    part = blanket_partition(dag)
    assert (part.pa, part.ch, part.sps, part.comp) == ((1,), (2,), (3,), (0,))
    mn = moralize(dag)
    want = {frozenset(e) for e in [(0, 1), (1, 2), (1, Y), (Y, 2), (3, 2), (1, 3), (Y, 3)]}
    assert mn.edge_pairs() == want
    assert mn.neighbors(Y) == {1, 2, 3}


def test_fig1_premises():
    # Z2 -> Z3 is a direct edge, so the child is not separated from the parent
    pr = proposition_premises(fig1_dag())
    assert pr == {"ch_indep_pa": False, "y_indep_sps": True, "holds": False}


def test_cycle_and_bad_nodes_rejected():
    with pytest.raises(GraphError):
        LatentDag(2, [(0, 1), (1, 0)])
    with pytest.raises(GraphError):
        LatentDag(2, [(0, 2)])
    with pytest.raises(GraphError):
        LatentDag(2, [(0, 0)])
    with pytest.raises(GraphError):
        LatentDag(2, [(0, 1), (0, 1)])
    with pytest.raises(GraphError):
        LatentDag.from_json({"edges": []})


def test_node_in_both_pa_and_ch_is_impossible():
    # a cycle would be needed; construction already refuses it
    with pytest.raises(GraphError):
        LatentDag(1, [(0, Y), (Y, 0)])


def test_d_separation_small_cases():
    chain = LatentDag(3, [(0, 1), (1, 2)])
    assert not d_separated(chain, {0}, {2}, set())
    assert d_separated(chain, {0}, {2}, {1})
    collider = LatentDag(3, [(0, 1), (2, 1)])
    assert d_separated(collider, {0}, {2}, set())
    assert not d_separated(collider, {0}, {2}, {1})
    with pytest.raises(GraphError):
        d_separated(chain, {0}, {0}, set())


def test_intimate_neighbors_and_assumption3():
    mn = markov_network([0, 1, 2], [(0, 1), (1, 2)])
    assert intimate_neighbors(mn, 1) == set()
    assert intimate_neighbors(mn, 0) == {1}
    rep = check_assumption3(LatentDag(2, [(0, Y), (Y, 1)]))
    assert rep["holds"]
    # a lone parent whose only neighbours are Y and a child: intimate across groups
    rep = check_assumption3(LatentDag(2, [(0, Y), (0, 1), (Y, 1)]))
    assert not rep["holds"]


def test_graph_report_round_trips():
    rep = graph_report(fig1_dag())
    assert rep["partition"] == {"pa": [1], "ch": [2], "sps": [3], "comp": [0]}
    assert [1, "Y"] in rep["moral_edges"]


@settings(max_examples=150, deadline=None)
@given(dags())
def test_partition_is_moral_blanket(dag):
    part = blanket_partition(dag)
    groups = part.pa + part.ch + part.sps + part.comp
    assert sorted(groups) == list(range(dag.n))
    assert set(part.mb) == moralize(dag).neighbors(Y) - {Y}


@settings(max_examples=150, deadline=None)
@given(dags(), st.data())
def test_bayes_ball_matches_moral_criterion(dag, data):
    nodes = dag.nodes
    a = data.draw(st.sampled_from(nodes))
    rest = [v for v in nodes if v != a]
    b = data.draw(st.sampled_from(rest)) if rest else None
    if b is None:
        return
    cond = data.draw(st.sets(st.sampled_from([v for v in rest if v != b]) if len(rest) > 1 else st.nothing()))
    assert d_separated(dag, {a}, {b}, cond) == _ancestral_moral_separated(dag, {a}, {b}, cond)


@settings(max_examples=100, deadline=None)
@given(dags(), st.randoms())
def test_relabel_moves_partition(dag, rnd):
    perm = list(range(dag.n))
    rnd.shuffle(perm)
    part, new = blanket_partition(dag), blanket_partition(dag.relabel(perm))
    for name in ("pa", "ch", "sps", "comp"):
        assert set(getattr(new, name)) == {perm[v] for v in getattr(part, name)}


@settings(max_examples=100, deadline=None)
@given(dags())
def test_json_round_trip(dag):
    assert LatentDag.from_json(dag.to_json()) == dag


@settings(max_examples=100, deadline=None)
@given(dags())
def test_moral_graph_pairwise_markov(dag):
    # non-adjacent in the moral graph means separated given all other nodes
    mn = moralize(dag)
    for a, b in itertools.combinations(dag.nodes, 2):
        others = set(dag.nodes) - {a, b}
        assert mn.adjacent(a, b) != d_separated(dag, {a}, {b}, others)


def test_isolated_label_is_vacuous():
    dag = LatentDag(3, [(0, 1), (1, 2)])
    part = blanket_partition(dag)
    assert part.mb == () and part.comp == (0, 1, 2)
    assert check_assumption3(dag) == {"holds": True, "violations": []}


def test_fig1_assumption3_violations():
    # Z3 is adjacent to Z2 and Z4, which are married through it, so all three are mutually intimate
    rep = check_assumption3(fig1_dag())
    pairs = {frozenset((v["node"], v["neighbor"])) for v in rep["violations"]}
    assert not rep["holds"]
    assert pairs == {frozenset((1, 2)), frozenset((2, 3)), frozenset((1, 3))}
    assert not d_separated(fig1_dag(), {2}, {1}, {Y, 3})
