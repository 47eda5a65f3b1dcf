"""Chordal sparsity of the OPF constraint graph and its maximal-clique decomposition.

Buses are identified by their position in ``NetworkCase.buses`` throughout.
"""

import json
import logging

from dataclasses import dataclass

import networkx as nx

from ._errors import DisconnectedNetworkError, NonChordalGraphError
from ._models import NetworkCase


logger = logging.getLogger("mopf")


def network_graph(case: NetworkCase) -> nx.Graph:
    """Bus graph of the power network itself (parallel branches collapse)."""
    pos = case.positions()
    graph = nx.Graph()
    graph.add_nodes_from(range(case.n))
    graph.add_edges_from((pos[b.from_bus], pos[b.to_bus]) for b in case.branches)
    return graph


def build_constraint_graph(case: NetworkCase) -> nx.Graph:
    """Network graph with every pair of neighbours of each bus connected.

    Raises:
        DisconnectedNetworkError: The network has more than one island.
    """
    network = network_graph(case)
    if not nx.is_connected(network):
        raise DisconnectedNetworkError(
            f"network has {nx.number_connected_components(network)} islands"
        )
    graph = network.copy()
    for k in network.nodes:
        neighbours = sorted(network.neighbors(k))
        for i, a in enumerate(neighbours):
            for b in neighbours[i + 1 :]:
                graph.add_edge(a, b)
    return graph


def minimum_degree_ordering(graph: nx.Graph) -> list[int]:
    """Greedy minimum-degree elimination order, ties broken by lowest node.

    This is exact minimum degree, not approximate minimum degree (AMD):
    every step recomputes true degrees in the elimination graph, i.e. after
    the fill created by the nodes already eliminated.
    """
    work = {v: set(graph.neighbors(v)) for v in graph.nodes}
    order = []
    while work:
        v = min(work, key=lambda node: (len(work[node]), node))
        neighbours = work.pop(v)
        for a in neighbours:
            work[a].discard(v)
            work[a].update(neighbours - {a})
        order.append(v)
    return order


def symbolic_cholesky(graph: nx.Graph, order: list[int]) -> set[tuple[int, int]]:
    """Off-diagonal pattern of the Cholesky factor of the permuted (adjacency + I) matrix.

    Returned as undirected edges ``(min, max)`` in original node labels; it
    always contains the input edges.
    """
    rank = {v: i for i, v in enumerate(order)}
    higher = {v: {u for u in graph.neighbors(v) if rank[u] > rank[v]} for v in graph.nodes}
    edges = set()
    for v in order:
        later = higher[v]
        if later:
            # the column of v fills into the row of its first later neighbour
            parent = min(later, key=rank.__getitem__)
            higher[parent].update(later - {parent})
        for u in later:
            edges.add((min(u, v), max(u, v)))
    return edges


def chordal_extension(graph: nx.Graph) -> nx.Graph:
    """Chordal supergraph from a minimum-degree symbolic factorization."""
    order = minimum_degree_ordering(graph)
    fill = symbolic_cholesky(graph, order)
    chordal = nx.Graph()
    chordal.add_nodes_from(graph.nodes)
    chordal.add_edges_from(fill)
    added = chordal.number_of_edges() - graph.number_of_edges()
    logger.debug("chordal extension added %d fill edges", added, extra={"fill_edges": added})
    return chordal


def perfect_elimination_ordering(graph: nx.Graph) -> list[int]:
    """Perfect elimination ordering by maximum cardinality search.

    Raises:
        NonChordalGraphError: The graph is not chordal.
    """
    weight = {v: 0 for v in graph.nodes}
    visited: list[int] = []
    remaining = set(graph.nodes)
    while remaining:
        v = max(remaining, key=lambda node: (weight[node], -node))
        remaining.remove(v)
        visited.append(v)
        for u in graph.neighbors(v):
            if u in remaining:
                weight[u] += 1
    order = visited[::-1]
    rank = {v: i for i, v in enumerate(order)}
    for v in order:
        later = [u for u in graph.neighbors(v) if rank[u] > rank[v]]
        if not later:
            continue
        first = min(later, key=rank.__getitem__)
        for u in later:
            if u != first and not graph.has_edge(first, u):
                raise NonChordalGraphError(f"graph is not chordal: no perfect elimination ordering at node {v}")
    return order


def maximal_cliques(chordal: nx.Graph) -> list[tuple[int, ...]]:
    """Maximal cliques of a chordal graph read off a perfect elimination ordering.

    Cliques are returned as sorted tuples, ordered by their sorted contents.
    """
    order = perfect_elimination_ordering(chordal)
    rank = {v: i for i, v in enumerate(order)}
    candidates = []
    for v in order:
        later = {u for u in chordal.neighbors(v) if rank[u] > rank[v]}
        candidates.append(frozenset(later | {v}))
    candidates = set(candidates)
    cliques = [c for c in candidates if not any(c < other for other in candidates)]
    return sorted(tuple(sorted(c)) for c in cliques)


def clique_tree(cliques: list[tuple[int, ...]], root: int = 0) -> tuple[list[int | None], list[tuple[int, ...]]]:
    """Maximum-weight spanning tree on separator sizes, rooted at ``root``.

    Returns:
        (parent, separator): ``parent[i]`` is the parent clique index (None at
        the root) and ``separator[i]`` the buses shared with the parent.
    """
    graph = nx.Graph()
    graph.add_nodes_from(range(len(cliques)))
    sets = [set(c) for c in cliques]
    for i in range(len(cliques)):
        for j in range(i + 1, len(cliques)):
            shared = len(sets[i] & sets[j])
            if shared:
                graph.add_edge(i, j, weight=shared)
    tree = nx.maximum_spanning_tree(graph, weight="weight")
    parent: list[int | None] = [None] * len(cliques)
    separator: list[tuple[int, ...]] = [()] * len(cliques)
    for a, b in nx.bfs_edges(tree, root, sort_neighbors=sorted):
        parent[b] = a
        separator[b] = tuple(sorted(sets[a] & sets[b]))
    return parent, separator


def covering_cliques(cliques: list[tuple[int, ...]], network: nx.Graph) -> list[int]:
    """Smallest maximal clique containing each bus and its network neighbours.

    Ties go to the lowest clique index.
    """
    sets = [set(c) for c in cliques]
    covering = []
    for k in sorted(network.nodes):
        need = {k} | set(network.neighbors(k))
        candidates = [i for i, s in enumerate(sets) if need <= s]
        if not candidates:
            raise NonChordalGraphError(f"no maximal clique covers bus position {k} and its neighbours")
        covering.append(min(candidates, key=lambda i: (len(sets[i]), i)))
    return covering


def clique_orders(orders: list[int], covering: list[int], n_cliques: int) -> list[int]:
    """Per-clique order: the highest order among buses the clique covers, 1 otherwise."""
    out = [1] * n_cliques
    for k, order in enumerate(orders):
        if order < 1:
            raise ValueError(f"relaxation order of bus position {k} must be >= 1, got {order}")
        out[covering[k]] = max(out[covering[k]], order)
    return out


def first_order_block_dim(n_buses: int) -> int:
    """Dimension of the full first-order moment matrix of a clique."""
    return 2 * n_buses + 1


def merge_cliques(chordal: nx.Graph, reference: int, max_block_dim: int | None = None) -> nx.Graph:
    """Merge clique-tree neighbours whose separator misses at most one bus of the smaller clique.

    With ``max_block_dim`` a merge is also refused when the merged clique's
    first-order moment matrix would exceed that dimension. Returns the graph
    with the merged cliques completed; it stays chordal.
    """
    merged = chordal.copy()
    while True:
        cliques = maximal_cliques(merged)
        root = next(i for i, c in enumerate(cliques) if reference in c)
        parent, separator = clique_tree(cliques, root)
        for child, par in enumerate(parent):
            if par is None:
                continue
            union = set(cliques[child]) | set(cliques[par])
            smaller = min(len(cliques[child]), len(cliques[par]))
            if len(separator[child]) < smaller - 1:
                continue
            if max_block_dim is not None and first_order_block_dim(len(union)) > max_block_dim:
                continue
            nodes = sorted(union)
            merged.add_edges_from((a, b) for i, a in enumerate(nodes) for b in nodes[i + 1 :])
            break
        else:
            return merged


@dataclass(frozen=True)
class CliqueDecomposition:
    """Chordal decomposition of one case.

    ``cliques`` are tuples of bus positions; ``covering[k]`` is the clique
    index assigned to bus position k; the tree is rooted at the covering
    clique of the reference bus.
    """

    graph: nx.Graph
    chordal: nx.Graph
    cliques: list[tuple[int, ...]]
    covering: list[int]
    parent: list[int | None]
    separator: list[tuple[int, ...]]
    root: int

    def orders(self, bus_orders: list[int]) -> list[int]:
        return clique_orders(bus_orders, self.covering, len(self.cliques))

    def children(self, clique: int) -> list[int]:
        return [i for i, p in enumerate(self.parent) if p == clique]

    def traversal(self) -> list[int]:
        """Clique indices in breadth-first order from the root."""
        out, queue = [], [self.root]
        while queue:
            c = queue.pop(0)
            out.append(c)
            queue.extend(self.children(c))
        return out

    def to_json(self, bus_ids: list[int] | None = None) -> str:
        label = (lambda k: bus_ids[k]) if bus_ids else (lambda k: k)
        return json.dumps(
            {
                "fill_edges": sorted(
                    [label(a), label(b)] for a, b in self.chordal.edges if not self.graph.has_edge(a, b)
                ),
                "cliques": [[label(k) for k in c] for c in self.cliques],
                "covering": {str(label(k)): m for k, m in enumerate(self.covering)},
                "parent": self.parent,
                "separator": [[label(k) for k in s] for s in self.separator],
                "root": self.root,
            },
            indent=2,
        )


def build_decomposition(
    case: NetworkCase, merge: bool = True, max_block_dim: int | None = None
) -> CliqueDecomposition:
    """Constraint graph, chordal extension, cliques, covering map and clique tree for ``case``.

    With ``merge`` (the default) near-duplicate neighbouring cliques are
    merged, see :py:func:`merge_cliques`. ``max_block_dim`` defaults to the
    first-order moment matrix of the largest unmerged clique, so merging
    never grows the largest block.
    """
    graph = build_constraint_graph(case)
    chordal = chordal_extension(graph)
    if merge:
        if max_block_dim is None:
            max_block_dim = first_order_block_dim(max(len(c) for c in maximal_cliques(chordal)))
        chordal = merge_cliques(chordal, case.reference(), max_block_dim)
    cliques = maximal_cliques(chordal)
    network = network_graph(case)
    covering = covering_cliques(cliques, network)
    root = covering[case.reference()]
    parent, separator = clique_tree(cliques, root)
    logger.info(
        "decomposed %s into %d cliques (largest %d buses)",
        case.name,
        len(cliques),
        max(len(c) for c in cliques),
        extra={"cliques": len(cliques)},
    )
    return CliqueDecomposition(
        graph=graph,
        chordal=chordal,
        cliques=cliques,
        covering=covering,
        parent=parent,
        separator=separator,
        root=root,
    )
