"""Latent causal graph over ``Z_0..Z_{n-1}`` and the label ``Y``.

Latent nodes are the integers ``0..n-1``; the label is the string sentinel
:data:`Y`.  All graph values are immutable.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable

Y = "Y"

Node = Hashable


class GraphError(ValueError):
    """Raised for malformed graphs or invalid graph queries."""


def _node_key(v: Node) -> tuple[int, int]:
    return (1, 0) if v == Y else (0, int(v))


def sorted_nodes(nodes: Iterable[Node]) -> list[Node]:
    return sorted(nodes, key=_node_key)


def node_name(v: Node) -> str:
    """``0 -> "Z1"``; matches the 1-based naming used in figures."""
    return "Y" if v == Y else f"Z{int(v) + 1}"


@dataclass(frozen=True)
class LatentDag:
    n: int
    edges: frozenset = field(default_factory=frozenset)

    def __init__(self, n: int, edges: Iterable[tuple[Node, Node]] = ()):
        if n < 0:
            raise GraphError("n must be non-negative")
        edge_list = [(_norm(a, n), _norm(b, n)) for a, b in edges]
        if len(set(edge_list)) != len(edge_list):
            raise GraphError("duplicate edges")
        for a, b in edge_list:
            if a == b:
                raise GraphError(f"self-edge on {node_name(a)}")
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "edges", frozenset(edge_list))
        # raises on cycles
        object.__setattr__(self, "_order", tuple(self._topological_order()))

    @property
    def nodes(self) -> list[Node]:
        return list(range(self.n)) + [Y]

    @property
    def latent_nodes(self) -> list[int]:
        return list(range(self.n))

    def parents(self, v: Node) -> list[Node]:
        return sorted_nodes(a for a, b in self.edges if b == v)

    def children(self, v: Node) -> list[Node]:
        return sorted_nodes(b for a, b in self.edges if a == v)

    def latent_parents(self, v: Node) -> list[int]:
        return [p for p in self.parents(v) if p != Y]

    def topological_order(self) -> list[Node]:
        return list(self._order)

    def _topological_order(self) -> list[Node]:
        indeg = {v: 0 for v in self.nodes}
        for _, b in self.edges:
            indeg[b] += 1
        ready = sorted_nodes(v for v, d in indeg.items() if d == 0)
        order = []
        while ready:
            v = ready.pop(0)
            order.append(v)
            for c in self.children(v):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
                    ready = sorted_nodes(ready)
        if len(order) != len(indeg):
            raise GraphError("graph contains a cycle")
        return order

    def relabel(self, perm: list[int]) -> "LatentDag":
        """Return the DAG with latent node ``i`` renamed to ``perm[i]``."""
        f = lambda v: v if v == Y else perm[v]
        return LatentDag(self.n, [(f(a), f(b)) for a, b in self.edges])

    def to_json(self) -> dict:
        enc = lambda v: Y if v == Y else int(v)
        edges = sorted(self.edges, key=lambda e: (_node_key(e[0]), _node_key(e[1])))
        return {"n": self.n, "edges": [[enc(a), enc(b)] for a, b in edges]}

    @classmethod
    def from_json(cls, payload: dict) -> "LatentDag":
        try:
            return cls(int(payload["n"]), [tuple(e) for e in payload["edges"]])
        except (KeyError, TypeError) as exc:
            raise GraphError(f"malformed DAG document: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "LatentDag":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _norm(v, n: int) -> Node:
    if v == Y:
        return Y
    if isinstance(v, bool) or not isinstance(v, int):
        if isinstance(v, str) and v.isdigit():
            v = int(v)
        else:
            raise GraphError(f"invalid node id {v!r}")
    if not 0 <= v < n:
        raise GraphError(f"node id {v} out of range for n={n}")
    return int(v)


@dataclass(frozen=True)
class MarkovNetwork:
    nodes: tuple
    edges: frozenset

    def neighbors(self, v: Node) -> set:
        if v not in self.nodes:
            raise GraphError(f"unknown node {v!r}")
        out = set()
        for e in self.edges:
            if v in e:
                (other,) = e - {v}
                out.add(other)
        return out

    def adjacent(self, a: Node, b: Node) -> bool:
        return frozenset((a, b)) in self.edges

    def latent_edges(self) -> list[tuple[int, int]]:
        """Latent-latent edges as ``(i, j)`` with ``i < j``, sorted."""
        pairs = []
        for e in self.edges:
            if Y in e:
                continue
            i, j = sorted(e)
            pairs.append((i, j))
        return sorted(pairs)

    def edge_pairs(self) -> set[frozenset]:
        return set(self.edges)


def markov_network(nodes: Iterable[Node], edges: Iterable[tuple[Node, Node]]) -> MarkovNetwork:
    es = set()
    for a, b in edges:
        if a == b:
            raise GraphError("self-loop in Markov network")
        es.add(frozenset((a, b)))
    return MarkovNetwork(tuple(nodes), frozenset(es))


def moralize(dag: LatentDag) -> MarkovNetwork:
    edges = set(frozenset(e) for e in dag.edges)
    for v in dag.nodes:
        for a, b in itertools.combinations(dag.parents(v), 2):
            edges.add(frozenset((a, b)))
    return MarkovNetwork(tuple(dag.nodes), frozenset(edges))


@dataclass(frozen=True)
class BlanketPartition:
    pa: tuple
    ch: tuple
    sps: tuple
    comp: tuple

    @property
    def mb(self) -> tuple:
        return tuple(sorted(self.pa + self.ch + self.sps))

    def group_of(self, v: int) -> str:
        for name in ("pa", "ch", "sps", "comp"):
            if v in getattr(self, name):
                return name
        raise GraphError(f"node {v!r} not in partition")

    def to_json(self) -> dict:
        return {k: list(getattr(self, k)) for k in ("pa", "ch", "sps", "comp")}


def blanket_partition(dag: LatentDag) -> BlanketPartition:
    pa = set(dag.parents(Y))
    ch = set(dag.children(Y))
    if pa & ch:
        raise GraphError("node is both parent and child of Y")
    sps = set()
    for c in ch:
        sps.update(p for p in dag.parents(c) if p != Y)
    # co-parents that already are parents of Y stay in pa only
    sps -= pa
    # a child can parent another child; it stays a child
    sps -= ch
    comp = set(dag.latent_nodes) - pa - ch - sps
    return BlanketPartition(*(tuple(sorted(s)) for s in (pa, ch, sps, comp)))


def intimate_neighbors(mn: MarkovNetwork, node: Node) -> set:
    nb = mn.neighbors(node)
    out = set()
    for v in nb:
        if all(mn.adjacent(v, u) for u in nb if u != v):
            out.add(v)
    return out


def check_assumption3(dag: LatentDag) -> dict:
    """Group-specific intimate neighbours on the moral graph.

    Every intimate neighbour (other than ``Y``) of a parent, child or spouse
    of ``Y`` must belong to the same group.  Violations are reported once per
    unordered pair.
    """
    mn = moralize(dag)
    part = blanket_partition(dag)
    seen = set()
    violations = []
    for v in part.mb:
        gv = part.group_of(v)
        for w in sorted_nodes(intimate_neighbors(mn, v) - {Y}):
            gw = part.group_of(w)
            if gw == gv:
                continue
            key = frozenset((v, w))
            if key in seen:
                continue
            seen.add(key)
            a, b = sorted((v, w))
            violations.append(
                {"node": a, "neighbor": b, "groups": [part.group_of(a), part.group_of(b)]}
            )
    return {"holds": not violations, "violations": violations}


def d_separated(dag: LatentDag, a: Iterable[Node], b: Iterable[Node], cond: Iterable[Node]) -> bool:
    """Bayes-ball reachability test of ``a _||_ b | cond``."""
    a, b, cond = set(a), set(b), set(cond)
    for s in (a, b, cond):
        for v in s:
            if v not in dag.nodes:
                raise GraphError(f"unknown node {v!r}")
    if a & b or a & cond or b & cond:
        raise GraphError("query sets must be pairwise disjoint")
    if not a or not b:
        return True

    # ancestors of the conditioning set (colliders open iff in here)
    anc = set(cond)
    stack = list(cond)
    while stack:
        v = stack.pop()
        for p in dag.parents(v):
            if p not in anc:
                anc.add(p)
                stack.append(p)

    # states: (node, came_from_child)
    visited = set()
    stack = [(v, True) for v in a]
    while stack:
        v, up = stack.pop()
        if (v, up) in visited:
            continue
        visited.add((v, up))
        if v in b:
            return False
        if up:
            if v in cond:
                continue
            for p in dag.parents(v):
                stack.append((p, True))
            for c in dag.children(v):
                stack.append((c, False))
        else:
            if v not in cond:
                for c in dag.children(v):
                    stack.append((c, False))
            if v in anc:
                for p in dag.parents(v):
                    stack.append((p, True))
    return True


def proposition_premises(dag: LatentDag) -> dict:
    """The two independences the blanket factorisation of P(Y|Z) relies on."""
    part = blanket_partition(dag)
    cond1 = {Y} | set(part.sps)
    first = d_separated(dag, part.ch, part.pa, cond1) if part.ch and part.pa else True
    second = d_separated(dag, {Y}, part.sps, part.pa) if part.sps else True
    return {"ch_indep_pa": first, "y_indep_sps": second, "holds": first and second}


def fig1_dag() -> LatentDag:
    """Z1->Z2, Z2->Z3, Z2->Y, Y->Z3, Z4->Z3 (0-based ids)."""
    return LatentDag(4, [(0, 1), (1, 2), (1, Y), (Y, 2), (3, 2)])


def graph_report(dag: LatentDag) -> dict:
    mn = moralize(dag)
    enc = lambda v: Y if v == Y else int(v)
    return {
        "partition": blanket_partition(dag).to_json(),
        "assumption3": check_assumption3(dag),
        "premises": proposition_premises(dag),
        "moral_edges": sorted(
            ([enc(x) for x in sorted_nodes(e)] for e in mn.edges),
            key=lambda p: tuple(_node_key(x) for x in p),
        ),
    }
