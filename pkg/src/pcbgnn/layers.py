"""Message-passing layers: GCN, GIN, GINe, GAT, GATv2, GraphTransformer.

All layers run over a directed expansion of the merged edge list (each
undirected edge used in both directions). GCN and the attention layers add
self-loops internally; self-loop edge features are zero vectors. Edge
features are consumed raw (summed pin embeddings plus the parallel-pin
count) by the kinds that use them; GCN and GIN are edge-feature-blind.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    add,
    concat,
    gather_rows,
    leaky_relu,
    matmul,
    multiply,
    relu,
    reshape,
    scatter_add_rows,
    segment_softmax,
    sigmoid,
    subtract,
    tsum,
)
from .graph import EDGE_FEATURE_DIM, PcbGraph

BACKBONE_KINDS = ("mlp_only", "gcn", "gin", "gine", "gat", "gatv2", "gt")
EDGE_AWARE_KINDS = frozenset({"gine", "gat", "gatv2", "gt"})
ATTENTION_KINDS = frozenset({"gat", "gatv2", "gt"})


@dataclass
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    heads: int = 1

    def __post_init__(self):
        if self.kind not in BACKBONE_KINDS or self.kind == "mlp_only":
            raise ValueError(f"unknown message-passing layer kind {self.kind!r}")
        if self.kind in ATTENTION_KINDS:
            if self.heads not in (1, 4):
                raise ValueError(f"heads must be 1 or 4, got {self.heads}")
            if self.out_dim % self.heads != 0:
                raise ValueError(f"out_dim {self.out_dim} not divisible by heads {self.heads}")
        elif self.heads != 1:
            raise ValueError(f"{self.kind} does not use attention heads")

    @property
    def uses_edge_features(self) -> bool:
        return self.kind in EDGE_AWARE_KINDS


class GraphTopology:
    """Directed-edge view of a PcbGraph used by the layers.

    Built once per graph: source/target index arrays with and without
    self-loops, maps from directed edges back to the unique merged edges
    (so edge features are projected once per layer, not per direction), and
    the symmetric GCN normalization coefficients.
    """

    def __init__(self, graph: PcbGraph):
        n = graph.num_nodes
        e = graph.num_edges
        und = graph.edges
        src = np.concatenate([und[:, 0], und[:, 1]])
        dst = np.concatenate([und[:, 1], und[:, 0]])
        self.num_nodes = n
        self.src = src
        self.dst = dst
        self.edge_features = graph.edge_features  # (E, 385), unique merged edges
        loops = np.arange(n, dtype=np.int64)
        self.src_loop = np.concatenate([src, loops])
        self.dst_loop = np.concatenate([dst, loops])
        ar = np.arange(e, dtype=np.int64)
        self.dup_map = np.concatenate([ar, ar])  # directed edge -> unique edge
        # with self-loops: index E points at an all-zero padding row
        self.dup_map_loop = np.concatenate([ar, ar, np.full(n, e, dtype=np.int64)])
        deg = np.bincount(dst, minlength=n).astype(np.float64) + 1.0  # self-loop included
        self.gcn_coeff = 1.0 / np.sqrt(deg[self.src_loop] * deg[self.dst_loop])


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape if shape is not None else (fan_in, fan_out))


class Linear:
    def __init__(self, rng, in_dim: int, out_dim: int, bias: bool = True, prefix: str = "linear"):
        self.W = Tensor(glorot(rng, in_dim, out_dim), requires_grad=True)
        self.b = Tensor(np.zeros(out_dim), requires_grad=True) if bias else None
        self.prefix = prefix

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.W)
        return add(y, self.b) if self.b is not None else y

    def params(self):
        out = [(f"{self.prefix}.W", self.W)]
        if self.b is not None:
            out.append((f"{self.prefix}.b", self.b))
        return out


class Mlp:
    """Affine-ReLU stack with a final affine layer."""

    def __init__(self, rng, dims: list[int], prefix: str = "mlp"):
        if len(dims) < 2:
            raise ValueError("Mlp needs at least input and output dims")
        self.layers = [
            Linear(rng, dims[i], dims[i + 1], prefix=f"{prefix}.{i}") for i in range(len(dims) - 1)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = relu(x)
        return x

    def params(self):
        return [p for layer in self.layers for p in layer.params()]


def _per_head_scores(t: Tensor, a: Tensor, heads: int, head_dim: int) -> Tensor:
    """Project (E, heads*dh) onto per-head attention vectors -> (E, heads)."""
    t3 = reshape(t, (t.shape[0], heads, head_dim))
    return tsum(multiply(t3, a), axis=2)


def _project_edges(lin: "Linear", topo: GraphTopology, with_loops: bool) -> Tensor:
    """Project unique edge features and expand to the directed edge list.

    Self-loop rows are exact zeros (the projections carry no bias), realized
    by gathering a zero padding row rather than projecting zero vectors.
    """
    proj = lin(Tensor(topo.edge_features))
    if not with_loops:
        return gather_rows(proj, topo.dup_map)
    padded = concat([proj, Tensor(np.zeros((1, proj.shape[1])))], axis=0)
    return gather_rows(padded, topo.dup_map_loop)


def _weight_messages(msgs: Tensor, alpha: Tensor, heads: int, head_dim: int) -> Tensor:
    """Scale (E, heads*dh) messages by (E, heads) attention weights."""
    m3 = reshape(msgs, (msgs.shape[0], heads, head_dim))
    a3 = reshape(alpha, (alpha.shape[0], heads, 1))
    return reshape(multiply(m3, a3), (msgs.shape[0], heads * head_dim))


class GcnLayer:
    """H' = ReLU(A_hat H W + b), A_hat symmetrically normalized with self-loops."""

    def __init__(self, rng, spec: LayerSpec, prefix: str = "gcn"):
        self.spec = spec
        self.lin = Linear(rng, spec.in_dim, spec.out_dim, bias=False, prefix=f"{prefix}.lin")
        self.b = Tensor(np.zeros(spec.out_dim), requires_grad=True)
        self.prefix = prefix

    def forward(self, h: Tensor, topo: GraphTopology) -> Tensor:
        xw = self.lin(h)
        msgs = multiply(gather_rows(xw, topo.src_loop), Tensor(topo.gcn_coeff[:, None]))
        agg = scatter_add_rows(msgs, topo.dst_loop, topo.num_nodes)
        return relu(add(agg, self.b))

    def params(self):
        return self.lin.params() + [(f"{self.prefix}.b", self.b)]


class GinLayer:
    """H'_v = MLP((1 + eps) H_v + sum of neighbor features); eps learnable, init 0."""

    def __init__(self, rng, spec: LayerSpec, prefix: str = "gin"):
        self.spec = spec
        self.eps = Tensor(0.0, requires_grad=True)
        self.mlp = Mlp(rng, [spec.in_dim, spec.out_dim, spec.out_dim], prefix=f"{prefix}.mlp")
        self.prefix = prefix

    def forward(self, h: Tensor, topo: GraphTopology) -> Tensor:
        neigh = scatter_add_rows(gather_rows(h, topo.src), topo.dst, topo.num_nodes)
        pre = add(multiply(h, add(self.eps, 1.0)), neigh)
        return self.mlp(pre)

    def params(self):
        return [(f"{self.prefix}.eps", self.eps)] + self.mlp.params()


class GineLayer:
    """GIN aggregation with edge features: messages are ReLU(H_u + proj(e_uv))."""

    def __init__(self, rng, spec: LayerSpec, prefix: str = "gine"):
        self.spec = spec
        self.eps = Tensor(0.0, requires_grad=True)
        self.edge_proj = Linear(rng, EDGE_FEATURE_DIM, spec.in_dim, prefix=f"{prefix}.edge_proj")
        self.mlp = Mlp(rng, [spec.in_dim, spec.out_dim, spec.out_dim], prefix=f"{prefix}.mlp")
        self.prefix = prefix

    def forward(self, h: Tensor, topo: GraphTopology) -> Tensor:
        msgs = relu(add(gather_rows(h, topo.src), _project_edges(self.edge_proj, topo, with_loops=False)))
        neigh = scatter_add_rows(msgs, topo.dst, topo.num_nodes)
        pre = add(multiply(h, add(self.eps, 1.0)), neigh)
        return self.mlp(pre)

    def params(self):
        return [(f"{self.prefix}.eps", self.eps)] + self.edge_proj.params() + self.mlp.params()


class GatLayer:
    """Multi-head attention with scores LeakyReLU(a . [Wh_u | Wh_v | W_e e_uv])."""

    def __init__(self, rng, spec: LayerSpec, prefix: str = "gat"):
        self.spec = spec
        dh = spec.out_dim // spec.heads
        self.lin = Linear(rng, spec.in_dim, spec.out_dim, bias=False, prefix=f"{prefix}.lin")
        self.lin_edge = Linear(rng, EDGE_FEATURE_DIM, spec.out_dim, bias=False, prefix=f"{prefix}.lin_edge")
        self.a_src = Tensor(glorot(rng, dh, 1, (spec.heads, dh)), requires_grad=True)
        self.a_dst = Tensor(glorot(rng, dh, 1, (spec.heads, dh)), requires_grad=True)
        self.a_edge = Tensor(glorot(rng, dh, 1, (spec.heads, dh)), requires_grad=True)
        self.b = Tensor(np.zeros(spec.out_dim), requires_grad=True)
        self.prefix = prefix

    def forward(self, h: Tensor, topo: GraphTopology) -> Tensor:
        heads, dh = self.spec.heads, self.spec.out_dim // self.spec.heads
        x = self.lin(h)
        x_src = gather_rows(x, topo.src_loop)
        x_dst = gather_rows(x, topo.dst_loop)
        e_proj = _project_edges(self.lin_edge, topo, with_loops=True)
        scores = add(
            add(
                _per_head_scores(x_src, self.a_src, heads, dh),
                _per_head_scores(x_dst, self.a_dst, heads, dh),
            ),
            _per_head_scores(e_proj, self.a_edge, heads, dh),
        )
        alpha = segment_softmax(leaky_relu(scores, 0.2), topo.dst_loop, topo.num_nodes)
        agg = scatter_add_rows(_weight_messages(x_src, alpha, heads, dh), topo.dst_loop, topo.num_nodes)
        return add(agg, self.b)

    def params(self):
        return (
            self.lin.params()
            + self.lin_edge.params()
            + [
                (f"{self.prefix}.a_src", self.a_src),
                (f"{self.prefix}.a_dst", self.a_dst),
                (f"{self.prefix}.a_edge", self.a_edge),
                (f"{self.prefix}.b", self.b),
            ]
        )


class Gatv2Layer:
    """GATv2: the attention vector is applied after the LeakyReLU.

    Scores a . LeakyReLU(W_l h_u + W_r h_v + W_e e_uv); messages W_l h_u.
    """

    def __init__(self, rng, spec: LayerSpec, prefix: str = "gatv2"):
        self.spec = spec
        dh = spec.out_dim // spec.heads
        self.lin_src = Linear(rng, spec.in_dim, spec.out_dim, bias=False, prefix=f"{prefix}.lin_src")
        self.lin_dst = Linear(rng, spec.in_dim, spec.out_dim, bias=False, prefix=f"{prefix}.lin_dst")
        self.lin_edge = Linear(rng, EDGE_FEATURE_DIM, spec.out_dim, bias=False, prefix=f"{prefix}.lin_edge")
        self.a = Tensor(glorot(rng, dh, 1, (spec.heads, dh)), requires_grad=True)
        self.b = Tensor(np.zeros(spec.out_dim), requires_grad=True)
        self.prefix = prefix

    def forward(self, h: Tensor, topo: GraphTopology) -> Tensor:
        heads, dh = self.spec.heads, self.spec.out_dim // self.spec.heads
        x_src = self.lin_src(h)
        x_dst = self.lin_dst(h)
        e_proj = _project_edges(self.lin_edge, topo, with_loops=True)
        pre = leaky_relu(
            add(add(gather_rows(x_src, topo.src_loop), gather_rows(x_dst, topo.dst_loop)), e_proj),
            0.2,
        )
        scores = _per_head_scores(pre, self.a, heads, dh)
        alpha = segment_softmax(scores, topo.dst_loop, topo.num_nodes)
        msgs = gather_rows(x_src, topo.src_loop)
        agg = scatter_add_rows(_weight_messages(msgs, alpha, heads, dh), topo.dst_loop, topo.num_nodes)
        return add(agg, self.b)

    def params(self):
        return (
            self.lin_src.params()
            + self.lin_dst.params()
            + self.lin_edge.params()
            + [(f"{self.prefix}.a", self.a), (f"{self.prefix}.b", self.b)]
        )


class GtLayer:
    """Graph transformer: scaled dot-product attention over neighborhoods.

    score(u->v) = (W_Q h_v) . (W_K h_u + W_E e_uv) / sqrt(d_head);
    message = W_V h_u + W_E' e_uv; output gated between the attention
    aggregate and a skip projection of the node itself.
    """

    def __init__(self, rng, spec: LayerSpec, prefix: str = "gt"):
        self.spec = spec
        self.lin_q = Linear(rng, spec.in_dim, spec.out_dim, bias=False, prefix=f"{prefix}.lin_q")
        self.lin_k = Linear(rng, spec.in_dim, spec.out_dim, bias=False, prefix=f"{prefix}.lin_k")
        self.lin_v = Linear(rng, spec.in_dim, spec.out_dim, bias=False, prefix=f"{prefix}.lin_v")
        self.lin_edge_k = Linear(rng, EDGE_FEATURE_DIM, spec.out_dim, bias=False, prefix=f"{prefix}.lin_edge_k")
        self.lin_edge_v = Linear(rng, EDGE_FEATURE_DIM, spec.out_dim, bias=False, prefix=f"{prefix}.lin_edge_v")
        self.lin_skip = Linear(rng, spec.in_dim, spec.out_dim, prefix=f"{prefix}.lin_skip")
        self.gate = Linear(rng, 3 * spec.out_dim, 1, prefix=f"{prefix}.gate")
        self.prefix = prefix

    def forward(self, h: Tensor, topo: GraphTopology) -> Tensor:
        heads, dh = self.spec.heads, self.spec.out_dim // self.spec.heads
        q = gather_rows(self.lin_q(h), topo.dst_loop)
        k = add(gather_rows(self.lin_k(h), topo.src_loop), _project_edges(self.lin_edge_k, topo, with_loops=True))
        v = add(gather_rows(self.lin_v(h), topo.src_loop), _project_edges(self.lin_edge_v, topo, with_loops=True))
        q3 = reshape(q, (q.shape[0], heads, dh))
        k3 = reshape(k, (k.shape[0], heads, dh))
        scores = multiply(tsum(multiply(q3, k3), axis=2), 1.0 / np.sqrt(dh))
        alpha = segment_softmax(scores, topo.dst_loop, topo.num_nodes)
        agg = scatter_add_rows(_weight_messages(v, alpha, heads, dh), topo.dst_loop, topo.num_nodes)
        skip = self.lin_skip(h)
        beta = sigmoid(self.gate(concat([agg, skip, subtract(agg, skip)], axis=1)))
        return add(multiply(beta, skip), multiply(subtract(Tensor(1.0), beta), agg))

    def params(self):
        return (
            self.lin_q.params()
            + self.lin_k.params()
            + self.lin_v.params()
            + self.lin_edge_k.params()
            + self.lin_edge_v.params()
            + self.lin_skip.params()
            + self.gate.params()
        )


_LAYER_CLASSES = {
    "gcn": GcnLayer,
    "gin": GinLayer,
    "gine": GineLayer,
    "gat": GatLayer,
    "gatv2": Gatv2Layer,
    "gt": GtLayer,
}


def make_layer(rng, spec: LayerSpec, prefix: str):
    return _LAYER_CLASSES[spec.kind](rng, spec, prefix=prefix)


class Backbone:
    """A stack of message-passing layers with ReLU between them.

    GCN applies its ReLU inside the layer; the other kinds get a ReLU
    between consecutive layers (none after the last). mlp_only means no
    layers at all: node features pass through unchanged.
    """

    def __init__(self, rng, kind: str, num_layers: int, in_dim: int, hidden_dim: int, heads: int = 1):
        if kind == "mlp_only":
            if num_layers != 0:
                raise ValueError("mlp_only backbone must have zero layers")
            self.layers = []
            self.out_dim = in_dim
        else:
            if num_layers < 1:
                raise ValueError(f"{kind} backbone needs at least one layer")
            self.layers = []
            d = in_dim
            for i in range(num_layers):
                spec = LayerSpec(kind=kind, in_dim=d, out_dim=hidden_dim, heads=heads if kind in ATTENTION_KINDS else 1)
                self.layers.append(make_layer(rng, spec, prefix=f"backbone.{i}"))
                d = hidden_dim
            self.out_dim = hidden_dim
        self.kind = kind

    def forward(self, node_features: Tensor, topo: GraphTopology) -> Tensor:
        h = node_features
        for i, layer in enumerate(self.layers):
            h = layer.forward(h, topo)
            if self.kind != "gcn" and i < len(self.layers) - 1:
                h = relu(h)
        return h

    def params(self):
        return [p for layer in self.layers for p in layer.params()]
