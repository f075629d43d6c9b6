"""Numeric bipartite graph construction from schematics.

Nodes carry a 385-dim feature vector: the type bit (0 = net, 1 = symbol)
followed by the 384-dim name embedding. Parallel pins between the same net
and symbol are merged into one edge whose feature vector is the sum of the
pin-name embeddings plus a trailing count of merged pins. Node ordering is
canonical (nets first in id order, then symbols in id order) so net-node
indices are contiguous from 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .embedding import EMBED_DIM
from .netlist import Schematic, Task, TaskAnnotations, is_positive_label

NODE_FEATURE_DIM = EMBED_DIM + 1
EDGE_FEATURE_DIM = EMBED_DIM + 1

KIND_NET = 0
KIND_SYMBOL = 1


class GraphBuildError(ValueError):
    pass


@dataclass
class PcbGraph:
    name: str
    node_kind: np.ndarray  # (N,) int8
    node_features: np.ndarray  # (N, 385)
    edges: np.ndarray  # (E, 2) int64 rows [net_index, symbol_index]
    edge_features: np.ndarray  # (E, 385); [:384] summed pin embeddings, [384] pin count
    net_node_indices: np.ndarray  # (num_nets,) int64
    provenance: list  # node index -> ("net" | "symbol", original id)
    task: Task | None = None
    y_node: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int8))  # over net nodes
    y_pair: dict = field(default_factory=dict)  # (net_idx, net_idx) a<b -> label

    @property
    def num_nodes(self) -> int:
        return len(self.node_kind)

    @property
    def num_nets(self) -> int:
        return len(self.net_node_indices)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def node_index_of_net(self, net_id: int) -> int:
        return self._net_index[net_id]

    def __post_init__(self):
        self._net_index = {
            orig_id: i for i, (kind, orig_id) in enumerate(self.provenance) if kind == "net"
        }


def build_graph(schematic: Schematic, embedder) -> PcbGraph:
    """Build the numeric graph; labels are attached separately."""
    nets = sorted(schematic.nets, key=lambda n: n.id)
    symbols = sorted(schematic.symbols, key=lambda s: s.id)
    n_nets = len(nets)
    n_nodes = n_nets + len(symbols)

    node_kind = np.empty(n_nodes, dtype=np.int8)
    node_features = np.empty((n_nodes, NODE_FEATURE_DIM), dtype=np.float64)
    provenance = []
    for i, net in enumerate(nets):
        node_kind[i] = KIND_NET
        node_features[i, 0] = KIND_NET
        node_features[i, 1:] = embedder.embed(net.name)
        provenance.append(("net", net.id))
    for j, sym in enumerate(symbols):
        i = n_nets + j
        node_kind[i] = KIND_SYMBOL
        node_features[i, 0] = KIND_SYMBOL
        node_features[i, 1:] = embedder.embed(sym.name)
        provenance.append(("symbol", sym.id))

    net_index = {net.id: i for i, net in enumerate(nets)}
    symbol_index = {sym.id: n_nets + j for j, sym in enumerate(symbols)}

    # Merge parallel pins. Within a merged edge, pin embeddings are summed in
    # (pin_name, original position) order: permuting the pin list leaves the
    # summed sequence of vectors unchanged (equal names embed identically),
    # so the result is bit-identical.
    groups: dict[tuple[int, int], list[tuple[str, int]]] = {}
    for pos, pin in enumerate(schematic.pins):
        key = (net_index[pin.net_id], symbol_index[pin.symbol_id])
        groups.setdefault(key, []).append((pin.pin_name, pos))

    edge_keys = sorted(groups)
    edges = np.array(edge_keys, dtype=np.int64).reshape(len(edge_keys), 2)
    edge_features = np.zeros((len(edge_keys), EDGE_FEATURE_DIM), dtype=np.float64)
    for e, key in enumerate(edge_keys):
        pins = sorted(groups[key])
        vecs = np.stack([embedder.embed(name) for name, _ in pins])
        edge_features[e, :EMBED_DIM] = vecs.sum(axis=0)
        edge_features[e, EMBED_DIM] = len(pins)

    return PcbGraph(
        name=schematic.name,
        node_kind=node_kind,
        node_features=node_features,
        edges=edges,
        edge_features=edge_features,
        net_node_indices=np.arange(n_nets, dtype=np.int64),
        provenance=provenance,
        task=schematic.annotations.task if schematic.annotations is not None else None,
        y_node=np.zeros(n_nets, dtype=np.int8),
        y_pair={},
    )


def attach_labels(graph: PcbGraph, annotations: TaskAnnotations) -> PcbGraph:
    """Return a copy of the graph with pair labels and derived node labels.

    Node labels are always re-derived from the positive pairs; unannotated
    net pairs are implicitly negative.
    """
    index_of = {}
    kind_of = {}
    for i, (kind, orig_id) in enumerate(graph.provenance):
        kind_of[(kind, orig_id)] = i
        if kind == "net":
            index_of[orig_id] = i
    y_pair = {}
    y_node = np.zeros(graph.num_nets, dtype=np.int8)
    for p in annotations.pair_labels:
        for net_id in (p.net_a, p.net_b):
            if net_id not in index_of:
                if ("symbol", net_id) in kind_of:
                    raise GraphBuildError(
                        f"pair label references id {net_id} which is a symbol; pairs must be net-net"
                    )
                raise GraphBuildError(f"pair label references unknown net id {net_id}")
        a, b = index_of[p.net_a], index_of[p.net_b]
        if a > b:
            a, b = b, a
        y_pair[(a, b)] = p.label
        if is_positive_label(annotations.task, p.label):
            y_node[a] = 1
            y_node[b] = 1
    return replace(graph, task=annotations.task, y_node=y_node, y_pair=y_pair)


def build_labeled_graph(schematic: Schematic, embedder) -> PcbGraph:
    g = build_graph(schematic, embedder)
    if schematic.annotations is not None:
        g = attach_labels(g, schematic.annotations)
    return g


@dataclass
class StatsReport:
    samples: int
    avg_nodes: float
    min_nodes: int
    max_nodes: int
    avg_edges: float
    avg_added_nodes: float
    added_nodes_pct: float

    def rows(self) -> list[tuple[str, str]]:
        return [
            ("No. of Graph Samples", str(self.samples)),
            ("Avg. No. of Nodes", f"{self.avg_nodes:.1f}"),
            ("Min. No. of Nodes", str(self.min_nodes)),
            ("Max. No. of Nodes", str(self.max_nodes)),
            ("Avg. No. of Edges", f"{self.avg_edges:.1f}"),
            ("Avg. No. of Added Nodes", f"{self.avg_added_nodes:.1f} ({self.added_nodes_pct:.1f}%)"),
        ]


def graph_stats(graphs: list[PcbGraph]) -> StatsReport:
    """Dataset statistics; "added nodes" counts distinct positively labeled pairs."""
    if not graphs:
        raise ValueError("graph_stats requires at least one graph")
    nodes = np.array([g.num_nodes for g in graphs])
    edges = np.array([g.num_edges for g in graphs])
    added = np.array(
        [
            sum(1 for label in g.y_pair.values() if g.task is not None and is_positive_label(g.task, label))
            for g in graphs
        ]
    )
    avg_nodes = float(nodes.mean())
    avg_added = float(added.mean())
    return StatsReport(
        samples=len(graphs),
        avg_nodes=avg_nodes,
        min_nodes=int(nodes.min()),
        max_nodes=int(nodes.max()),
        avg_edges=float(edges.mean()),
        avg_added_nodes=avg_added,
        added_nodes_pct=100.0 * avg_added / avg_nodes,
    )


def dump_debug(graph: PcbGraph) -> str:
    """Human-inspectable dump of a graph (not a stability-guaranteed format)."""
    doc = {
        "name": graph.name,
        "nodes": [
            {
                "index": i,
                "kind": "net" if graph.node_kind[i] == KIND_NET else "symbol",
                "original_id": graph.provenance[i][1],
                "type_feature": float(graph.node_features[i, 0]),
            }
            for i in range(graph.num_nodes)
        ],
        "edges": [
            {
                "net_index": int(u),
                "symbol_index": int(v),
                "pin_count": float(graph.edge_features[e, EMBED_DIM]),
            }
            for e, (u, v) in enumerate(graph.edges)
        ],
        "y_node": graph.y_node.tolist(),
        "y_pair": {f"{a},{b}": label for (a, b), label in sorted(graph.y_pair.items())},
    }
    return json.dumps(doc, indent=2)
