"""Smoothing graphs over outcome entries and their incidence operators.

Nodes are 0-based vectorization positions of the outcome entries. Edges are
stored with the canonical orientation tail < head; the penalty is invariant
to orientation so one convention is fixed for reproducibility.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .tensor import TensorLayout


@dataclass(frozen=True)
class PenaltyGraph:
    """Undirected graph whose edges carry the smoothing penalty."""

    node_count: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.node_count < 1:
            raise ValueError("graph needs at least one node")
        seen = set()
        canon = []
        for u, v in self.edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValueError(f"self-loop at node {u}")
            if u > v:
                u, v = v, u
            if not (0 <= u < v < self.node_count):
                raise ValueError(
                    f"edge ({u},{v}) outside node range [0, {self.node_count})"
                )
            if (u, v) in seen:
                raise ValueError(f"duplicate edge ({u},{v})")
            seen.add((u, v))
            canon.append((u, v))
        object.__setattr__(self, "edges", tuple(canon))

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.node_count, dtype=np.int64)
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg

    def max_degree(self) -> int:
        if self.edge_count == 0:
            return 0
        return int(self.degrees().max())

    def is_chain(self) -> bool:
        """True when the edge set is exactly {(i, i+1)}."""
        return self.edges == tuple(
            (i, i + 1) for i in range(self.node_count - 1)
        )


def build_chain(node_count: int) -> PenaltyGraph:
    """Path graph joining consecutive entries."""
    if node_count < 1:
        raise ValueError("chain needs at least one node")
    return PenaltyGraph(
        node_count=node_count,
        edges=tuple((i, i + 1) for i in range(node_count - 1)),
    )


def build_grid(dims) -> PenaltyGraph:
    """Lattice graph joining entries adjacent along one axis.

    Face adjacency only: each node has up to 2 * ndim neighbours. Node ids
    follow the column-major vectorization of :class:`~tvreg.tensor.TensorLayout`.
    """
    layout = TensorLayout(tuple(dims))
    shape = layout.dims
    M = layout.M
    ids = np.arange(M, dtype=np.int64).reshape(shape, order="F")
    edges = []
    for axis in range(len(shape)):
        if shape[axis] < 2:
            continue
        lo = [slice(None)] * len(shape)
        hi = [slice(None)] * len(shape)
        lo[axis] = slice(0, shape[axis] - 1)
        hi[axis] = slice(1, shape[axis])
        tails = ids[tuple(lo)].ravel(order="F")
        heads = ids[tuple(hi)].ravel(order="F")
        edges.extend(zip(tails.tolist(), heads.tolist()))
    edges.sort()
    return PenaltyGraph(node_count=M, edges=tuple(edges))


def add_periodic_edges(graph: PenaltyGraph, period: int) -> PenaltyGraph:
    """Add edges joining entries a fixed offset apart (duplicates skipped)."""
    period = int(period)
    if period < 1:
        raise ValueError("period must be >= 1")
    if period >= graph.node_count:
        raise ValueError(f"period {period} >= node count {graph.node_count}")
    existing = set(graph.edges)
    new_edges = list(graph.edges)
    for i in range(graph.node_count - period):
        e = (i, i + period)
        if e not in existing:
            new_edges.append(e)
            existing.add(e)
    return PenaltyGraph(node_count=graph.node_count, edges=tuple(new_edges))


def load_edge_list(text: str, node_count: int | None = None) -> PenaltyGraph:
    """Parse a whitespace-separated edge list ("u v" per line, 0-based ids).

    Lines starting with '#' and blank lines are skipped. Duplicate edges
    (either orientation) are collapsed with a warning; self-loops are an
    error. When ``node_count`` is omitted it is inferred as max id + 1.
    """
    edges = []
    max_id = -1
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'u v', got {raw!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise ValueError(
                f"line {lineno}: node ids must be integers, got {raw!r}"
            ) from None
        if u < 0 or v < 0:
            raise ValueError(f"line {lineno}: negative node id in {raw!r}")
        if u == v:
            raise ValueError(f"line {lineno}: self-loop at node {u}")
        if u > v:
            u, v = v, u
        max_id = max(max_id, v)
        edges.append((u, v))
    if node_count is None:
        node_count = max_id + 1
    if max_id >= node_count:
        raise ValueError(
            f"edge list references node {max_id} but node count is {node_count}"
        )
    if node_count < 1:
        raise ValueError("edge list yields an empty graph")
    uniq = list(dict.fromkeys(edges))
    if len(uniq) != len(edges):
        warnings.warn(
            f"edge list contains {len(edges) - len(uniq)} duplicate edges; "
            "duplicates collapsed",
            stacklevel=2,
        )
    return PenaltyGraph(node_count=node_count, edges=tuple(uniq))


@dataclass(frozen=True)
class IncidenceOperator:
    """Sparse node-by-edge incidence matrix with -1 at tails, +1 at heads."""

    graph: PenaltyGraph
    D: sp.csr_matrix = field(repr=False)

    def edge_diff(self, beta: np.ndarray) -> np.ndarray:
        """Per-edge differences head - tail.

        Accepts a length-M vector (returns length-m) or an n-by-M matrix
        of per-subject values (returns n-by-m, rows independent).
        """
        beta = np.asarray(beta, dtype=float)
        if beta.ndim == 1:
            return self.D.T @ beta
        return (self.D.T @ beta.T).T

    def divergence(self, z: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`edge_diff`: signed sums of edge values per node."""
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            return self.D @ z
        return (self.D @ z.T).T


def incidence(graph: PenaltyGraph) -> IncidenceOperator:
    m = graph.edge_count
    if m == 0:
        D = sp.csr_matrix((graph.node_count, 0))
        return IncidenceOperator(graph=graph, D=D)
    tails = np.fromiter((u for u, _ in graph.edges), dtype=np.int64, count=m)
    heads = np.fromiter((v for _, v in graph.edges), dtype=np.int64, count=m)
    rows = np.concatenate([tails, heads])
    cols = np.concatenate([np.arange(m), np.arange(m)])
    vals = np.concatenate([-np.ones(m), np.ones(m)])
    D = sp.csr_matrix((vals, (rows, cols)), shape=(graph.node_count, m))
    return IncidenceOperator(graph=graph, D=D)


def connected_components(graph: PenaltyGraph) -> np.ndarray:
    """Component label per node; labels ordered by smallest member."""
    parent = np.arange(graph.node_count, dtype=np.int64)

    def find(a):
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    for u, v in graph.edges:
        ru, rv = find(u), find(v)
        if ru != rv:
            # keep the smaller id as representative so labels are canonical
            if ru < rv:
                parent[rv] = ru
            else:
                parent[ru] = rv
    labels = np.empty(graph.node_count, dtype=np.int64)
    next_label = 0
    seen: dict[int, int] = {}
    for node in range(graph.node_count):
        root = find(node)
        if root not in seen:
            seen[root] = next_label
            next_label += 1
        labels[node] = seen[root]
    return labels


@dataclass(frozen=True)
class TrailDecomposition:
    """Edge partition of a graph into trails (edge-disjoint walks).

    ``multiplicity[i]`` counts how many trail positions map to node ``i``
    (a trail revisiting a node counts each visit); these are the consensus
    weights used by the graph prox.
    """

    graph: PenaltyGraph
    trails: tuple[tuple[int, ...], ...]
    multiplicity: np.ndarray = field(repr=False)

    @property
    def trail_count(self) -> int:
        return len(self.trails)


def _euler_circuit(adj, start, used):
    """Iterative Hierholzer walk; returns (nodes, edge ids) along the circuit.

    ``adj[v]`` is a sorted list of (neighbour, edge id); every vertex must
    have even degree so a closed circuit exists. Step t goes from nodes[t-1]
    to nodes[t] over edge eids[t-1].
    """
    stack = [(start, -1)]
    ptr: dict[int, int] = {}
    rev_nodes: list[int] = []
    rev_eids: list[int] = []
    while stack:
        v, ein = stack[-1]
        lst = adj[v]
        i = ptr.get(v, 0)
        while i < len(lst) and used[lst[i][1]]:
            i += 1
        ptr[v] = i
        if i < len(lst):
            w, eid = lst[i]
            used[eid] = True
            stack.append((w, eid))
        else:
            stack.pop()
            rev_nodes.append(v)
            rev_eids.append(ein)
    rev_nodes.reverse()
    rev_eids.reverse()
    return rev_nodes, rev_eids[1:]  # drop the start marker


def trail_decompose(graph: PenaltyGraph) -> TrailDecomposition:
    """Partition edges into trails via Hierholzer's procedure.

    Odd-degree vertices are paired greedily in ascending node order; the
    virtual edge added per pair closes the component into an Eulerian
    circuit, which is cut back at the virtual edges. Per component the
    trail count is odd_vertices / 2, or 1 when all degrees are even.
    Isolated nodes carry no edges and appear in no trail.
    """
    m = graph.edge_count
    if m == 0:
        return TrailDecomposition(
            graph=graph,
            trails=(),
            multiplicity=np.zeros(graph.node_count, dtype=np.int64),
        )

    adj: dict[int, list] = {}
    for eid, (u, v) in enumerate(graph.edges):
        adj.setdefault(u, []).append((v, eid))
        adj.setdefault(v, []).append((u, eid))

    labels = connected_components(graph)
    comp_nodes: dict[int, list[int]] = {}
    for node in sorted(adj):
        comp_nodes.setdefault(int(labels[node]), []).append(node)

    virtual_id = m
    for _, nodes in sorted(comp_nodes.items()):
        odd = sorted(node for node in nodes if len(adj[node]) % 2 == 1)
        for a, b in zip(odd[0::2], odd[1::2]):
            adj[a].append((b, virtual_id))
            adj[b].append((a, virtual_id))
            virtual_id += 1
    for node in adj:
        adj[node].sort()

    used = np.zeros(virtual_id, dtype=bool)
    trails: list[tuple[int, ...]] = []
    for _, nodes in sorted(comp_nodes.items()):
        circuit, eids = _euler_circuit(adj, nodes[0], used)
        # cut the circular walk at virtual edges (ids >= m)
        pieces: list[list[int]] = [[circuit[0]]]
        for node, eid in zip(circuit[1:], eids):
            if eid >= m:
                pieces.append([node])
            else:
                pieces[-1].append(node)
        if len(pieces) > 1:
            # first and last pieces wrap around the circuit start
            last = pieces.pop()
            pieces[0] = last + pieces[0][1:]
        for piece in pieces:
            if len(piece) >= 2:
                trails.append(tuple(piece))

    multiplicity = np.zeros(graph.node_count, dtype=np.int64)
    for trail in trails:
        for node in trail:
            multiplicity[node] += 1
    return TrailDecomposition(
        graph=graph, trails=tuple(trails), multiplicity=multiplicity
    )
