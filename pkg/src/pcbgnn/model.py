"""The node-pair prediction model.

A GNN backbone computes node representations; a pre-filter MLP scores every
net node; nodes scoring above the threshold theta form the candidate set;
all unordered candidate pairs are concatenated in both orders and passed to
the task head(s). The training loss is the sum of a node-level BCE (training
the pre-filter) and the task-specific pair loss; both also backpropagate
into the backbone. At inference the two concatenation orders of a pair are
averaged into one unordered score, and every pair with an endpoint outside
the candidate set receives the negative default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    AdamW,
    Tensor,
    add,
    clip,
    concat,
    gather_rows,
    matmul,
    multiply,
    relu,
    sigmoid,
    slice_axis,
    softmax,
    subtract,
    tlog,
    tmean,
    tsum,
)
from .graph import NODE_FEATURE_DIM, PcbGraph
from .layers import ATTENTION_KINDS, BACKBONE_KINDS, Backbone, GraphTopology, Mlp
from .netlist import RC_CLASSES, RC_NONE, Task

GRID_THETAS = tuple(round(0.1 * i, 1) for i in range(8))  # 0.0 .. 0.7
GRID_HIDDEN_DIMS = (16, 32, 64)
GRID_NUM_LAYERS = (1, 2, 3)
GRID_HEADS = (1, 4)
GRID_LEARNING_RATES = (0.001, 0.0005, 0.0001)

PROB_EPS = 1e-12


@dataclass
class ModelSpec:
    task: Task
    backbone: str
    num_layers: int
    hidden_dim: int
    heads: int = 1
    theta: float = 0.0
    alpha: float | None = None

    def __post_init__(self):
        if isinstance(self.task, str):
            self.task = Task(self.task)
        if self.backbone not in BACKBONE_KINDS:
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if (self.num_layers == 0) != (self.backbone == "mlp_only"):
            raise ValueError("num_layers must be 0 exactly for the mlp_only backbone")
        if self.backbone != "mlp_only" and self.num_layers not in GRID_NUM_LAYERS:
            raise ValueError(f"num_layers must be one of {GRID_NUM_LAYERS}, got {self.num_layers}")
        if self.hidden_dim not in GRID_HIDDEN_DIMS:
            raise ValueError(f"hidden_dim must be one of {GRID_HIDDEN_DIMS}, got {self.hidden_dim}")
        if self.backbone in ATTENTION_KINDS:
            if self.heads not in GRID_HEADS:
                raise ValueError(f"heads must be one of {GRID_HEADS}, got {self.heads}")
        elif self.heads != 1:
            raise ValueError(f"backbone {self.backbone} does not use attention heads")
        snapped = round(self.theta, 1)
        if abs(snapped - self.theta) > 1e-9 or snapped not in GRID_THETAS:
            raise ValueError(f"theta must lie on the grid {GRID_THETAS}, got {self.theta}")
        self.theta = snapped
        if self.task is Task.DECOUPLING_CAPS:
            if self.alpha is None or self.alpha < 0:
                raise ValueError("decoupling task requires a regression weight alpha >= 0")
        elif self.alpha is not None:
            raise ValueError(f"alpha only applies to the decoupling task, got {self.alpha}")

    def to_dict(self) -> dict:
        d = {
            "task": self.task.value,
            "backbone": self.backbone,
            "num_layers": self.num_layers,
            "hidden_dim": self.hidden_dim,
            "heads": self.heads,
            "theta": self.theta,
        }
        if self.alpha is not None:
            d["alpha"] = self.alpha
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            task=Task(d["task"]),
            backbone=d["backbone"],
            num_layers=d["num_layers"],
            hidden_dim=d["hidden_dim"],
            heads=d.get("heads", 1),
            theta=d.get("theta", 0.0),
            alpha=d.get("alpha"),
        )


def topology_of(graph: PcbGraph) -> GraphTopology:
    topo = graph.__dict__.get("_topology")
    if topo is None:
        topo = GraphTopology(graph)
        graph.__dict__["_topology"] = topo
    return topo


def select_candidates(probs: np.ndarray, theta: float) -> np.ndarray:
    """Net node indices whose pre-filter probability exceeds theta (strictly)."""
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    return np.flatnonzero(probs > theta).astype(np.int64)


def candidate_pairs(candidates: np.ndarray) -> np.ndarray:
    """All unordered pairs (a < b) of the candidate indices, lexicographic."""
    k = len(candidates)
    if k < 2:
        return np.zeros((0, 2), dtype=np.int64)
    ia, ib = np.triu_indices(k, k=1)
    return np.stack([candidates[ia], candidates[ib]], axis=1)


def pair_representations(h: Tensor, pairs: np.ndarray) -> Tensor:
    """Concatenated representations for both orders of each unordered pair.

    Rows 0..P-1 are the (a, b) order, rows P..2P-1 the (b, a) order.
    """
    first = np.concatenate([pairs[:, 0], pairs[:, 1]])
    second = np.concatenate([pairs[:, 1], pairs[:, 0]])
    return concat([gather_rows(h, first), gather_rows(h, second)], axis=1)


def _pair_mlp(mlp, h: Tensor, pairs: np.ndarray) -> Tensor:
    """Evaluate an Mlp on pair concatenations, both orders.

    Same function as ``mlp(pair_representations(h, pairs))``: the first
    affine layer distributes over the concatenation
    ([h_a | h_b] W = h_a W_top + h_b W_bottom), so the large per-pair matmul
    is replaced by two per-node projections and gathers.
    """
    first = np.concatenate([pairs[:, 0], pairs[:, 1]])
    second = np.concatenate([pairs[:, 1], pairs[:, 0]])
    w0 = mlp.layers[0].W
    d = h.data.shape[1]
    za = matmul(h, slice_axis(w0, 0, 0, d))
    zb = matmul(h, slice_axis(w0, 0, d, 2 * d))
    x = add(add(gather_rows(za, first), gather_rows(zb, second)), mlp.layers[0].b)
    for i in range(1, len(mlp.layers)):
        x = relu(x)
        x = mlp.layers[i](x)
    return x


def pair_labels_for(task: Task, y_pair: dict, pairs: np.ndarray) -> list:
    """Labels for unordered pairs in their enumeration order (vectorized)."""
    default = RC_NONE if task is Task.RC_FILTER else 0
    labels = [default] * len(pairs)
    if y_pair and len(pairs):
        base = int(pairs.max()) + 1
        keys = pairs[:, 0] * base + pairs[:, 1]  # ascending: pairs are lexicographic
        for (a, b), lab in y_pair.items():
            if a >= base or b >= base:
                continue
            pos = int(np.searchsorted(keys, a * base + b))
            if pos < len(keys) and keys[pos] == a * base + b:
                labels[pos] = lab
    return labels


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def bce_loss(probs: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on probabilities (clamped for safety)."""
    p = clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    t = Tensor(np.asarray(targets, dtype=np.float64).reshape(p.shape))
    ll = add(multiply(t, tlog(p)), multiply(subtract(1.0, t), tlog(subtract(1.0, p))))
    return multiply(tmean(ll), -1.0)


def cross_entropy_loss(dist: Tensor, class_idx: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of a (M, C) probability tensor."""
    onehot = np.zeros(dist.shape, dtype=np.float64)
    onehot[np.arange(len(class_idx)), class_idx] = 1.0
    picked = tsum(multiply(clip(dist, PROB_EPS, 1.0), Tensor(onehot)), axis=1)
    return multiply(tmean(tlog(picked)), -1.0)


def mse_loss(pred: Tensor, targets: np.ndarray) -> Tensor:
    t = Tensor(np.asarray(targets, dtype=np.float64).reshape(pred.shape))
    d = subtract(pred, t)
    return tmean(multiply(d, d))


@dataclass
class LossParts:
    total: Tensor
    node_bce: float
    task_loss: float
    num_pairs_evaluated: int


def pair_label_of(task: Task, y_pair: dict, a: int, b: int):
    default = RC_NONE if task is Task.RC_FILTER else 0
    return y_pair.get((a, b) if a < b else (b, a), default)


def compose_loss(
    task: Task,
    node_probs: Tensor,
    y_node: np.ndarray,
    pair_outputs: dict,
    pair_labels: list,
    alpha: float | None = None,
) -> LossParts:
    """Composite loss: node-level BCE plus the task pair term.

    ``pair_outputs`` holds the head outputs over surviving pair orders (see
    PairModel.head_outputs); ``pair_labels`` the matching per-order labels.
    An empty surviving set contributes 0 to the task term.
    """
    node_term = bce_loss(node_probs, y_node)
    n_orders = len(pair_labels)
    if n_orders == 0:
        task_term = Tensor(0.0)
    elif task is Task.PULL_UP_DOWN:
        task_term = bce_loss(pair_outputs["prob"], np.asarray(pair_labels, dtype=np.float64))
    elif task is Task.RC_FILTER:
        class_idx = np.array([RC_CLASSES.index(lab) for lab in pair_labels], dtype=np.int64)
        task_term = cross_entropy_loss(pair_outputs["dist"], class_idx)
    else:
        if alpha is None:
            raise ValueError("decoupling loss requires alpha")
        counts = np.asarray(pair_labels, dtype=np.float64)
        z_labels = (counts >= 1).astype(np.float64)
        task_term = add(
            bce_loss(pair_outputs["prob"], z_labels),
            multiply(mse_loss(pair_outputs["count"], counts), alpha),
        )
    total = add(node_term, task_term)
    return LossParts(
        total=total,
        node_bce=float(node_term.data),
        task_loss=float(task_term.data),
        num_pairs_evaluated=n_orders // 2,
    )


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


class PairModel:
    def __init__(self, spec: ModelSpec, seed: int = 0):
        self.spec = spec
        rng = np.random.default_rng(seed)
        self.backbone = Backbone(
            rng, spec.backbone, spec.num_layers, NODE_FEATURE_DIM, spec.hidden_dim, spec.heads
        )
        rep = self.backbone.out_dim
        h = spec.hidden_dim
        self.prefilter = Mlp(rng, [rep, h, h, 1], prefix="prefilter")
        pair_in = 2 * rep
        if spec.task is Task.PULL_UP_DOWN:
            self.heads = {"prob": Mlp(rng, [pair_in, h, h, 1], prefix="pair_head.prob")}
        elif spec.task is Task.RC_FILTER:
            self.heads = {"dist": Mlp(rng, [pair_in, h, h, 3], prefix="pair_head.dist")}
        else:
            self.heads = {
                "prob": Mlp(rng, [pair_in, h, h, 1], prefix="pair_head.prob"),
                "count": Mlp(rng, [pair_in, h, h, 1], prefix="pair_head.count"),
            }

    def params(self) -> list:
        out = list(self.backbone.params()) + list(self.prefilter.params())
        for key in sorted(self.heads):
            out.extend(self.heads[key].params())
        return out

    def param_tensors(self) -> list:
        return [t for _, t in self.params()]

    def node_representations(self, graph: PcbGraph) -> Tensor:
        return self.backbone.forward(Tensor(graph.node_features), topology_of(graph))

    def prefilter_scores(self, h_net: Tensor) -> Tensor:
        """Per-net-node probabilities of serving as a new-component terminal."""
        return sigmoid(self.prefilter(h_net))

    def head_outputs(self, h: Tensor, pairs: np.ndarray) -> dict:
        """Raw head outputs over both orders of the given unordered pairs.

        Output rows follow pair_representations: first all (a, b) orders,
        then all (b, a) orders.
        """
        out = {}
        if "prob" in self.heads:
            out["prob"] = sigmoid(_pair_mlp(self.heads["prob"], h, pairs))
        if "dist" in self.heads:
            out["dist"] = softmax(_pair_mlp(self.heads["dist"], h, pairs), axis=1)
        if "count" in self.heads:
            out["count"] = _pair_mlp(self.heads["count"], h, pairs)
        return out

    def training_loss(self, graph: PcbGraph) -> LossParts:
        """Eq.-style composite loss on one labeled graph at threshold theta."""
        if graph.task is not self.spec.task:
            raise ValueError(f"graph is labeled for {graph.task}, model expects {self.spec.task}")
        h = self.node_representations(graph)
        h_net = gather_rows(h, graph.net_node_indices)
        node_probs = self.prefilter_scores(h_net)
        candidates = select_candidates(node_probs.data, self.spec.theta)
        pairs = candidate_pairs(candidates)
        labels_one_order = pair_labels_for(self.spec.task, graph.y_pair, pairs)
        pair_labels = labels_one_order + labels_one_order  # both orders share the label
        pair_outputs = self.head_outputs(h, pairs) if len(pairs) else {}
        return compose_loss(
            self.spec.task,
            node_probs,
            graph.y_node,
            pair_outputs,
            pair_labels,
            alpha=self.spec.alpha,
        )


# ---------------------------------------------------------------------------
# Full-matrix prediction
# ---------------------------------------------------------------------------


def filtered_default_output(task: Task) -> np.ndarray:
    """Output assigned to pairs not evaluated by the pair head (negative)."""
    if task is Task.PULL_UP_DOWN:
        return np.array(0.0)
    if task is Task.RC_FILTER:
        return np.array([1.0, 0.0, 0.0])  # confident "none"
    return np.array([0.0, 0.0])  # (probability, count)


@dataclass
class PairPrediction:
    task: Task
    num_nets: int
    candidate_set: np.ndarray  # net node indices above theta
    pairs: np.ndarray  # (P, 2) evaluated unordered pairs, a < b
    outputs: np.ndarray  # order-averaged outputs, (P,), (P, 3) or (P, 2)
    order_outputs: np.ndarray  # (P, 2, ...) raw outputs for (a,b) and (b,a)
    filtered_default: np.ndarray
    node_probs: np.ndarray  # (num_nets,)
    theta: float

    @property
    def scores(self) -> dict:
        """Map over all unordered net pairs, defaults included. O(num_nets^2)."""
        out = {}
        for i in range(self.num_nets):
            for j in range(i + 1, self.num_nets):
                out[(i, j)] = self.filtered_default
        for row, (a, b) in enumerate(self.pairs):
            out[(int(a), int(b))] = self.outputs[row]
        return out

    def pair_linear_indices(self) -> np.ndarray:
        """Positions of the evaluated pairs in triu(num_nets, k=1) order."""
        if not len(self.pairs):
            return np.zeros(0, dtype=np.int64)
        a = self.pairs[:, 0]
        b = self.pairs[:, 1]
        return a * self.num_nets - a * (a + 1) // 2 + (b - a - 1)

    def positive_scores_dense(self) -> np.ndarray:
        """Positive-class score for every unordered pair, triu order.

        Pull-up/-down: the probability. RC filter: 1 - P(none). Decoupling:
        the binary-head probability.
        """
        if self.task is Task.RC_FILTER:
            default = 1.0 - float(self.filtered_default[0])
            evaluated = 1.0 - self.outputs[:, 0] if len(self.outputs) else np.zeros(0)
        elif self.task is Task.DECOUPLING_CAPS:
            default = float(self.filtered_default[0])
            evaluated = self.outputs[:, 0] if len(self.outputs) else np.zeros(0)
        else:
            default = float(self.filtered_default)
            evaluated = self.outputs
        num_pairs = self.num_nets * (self.num_nets - 1) // 2
        dense = np.full(num_pairs, default, dtype=np.float64)
        dense[self.pair_linear_indices()] = evaluated
        return dense


def predict_full_matrix(graph: PcbGraph, model: PairModel, theta: float | None = None) -> PairPrediction:
    """Scores for all unordered net pairs; non-candidates get the default."""
    theta = model.spec.theta if theta is None else theta
    h = model.node_representations(graph)
    h_net = gather_rows(h, graph.net_node_indices)
    node_probs = model.prefilter_scores(h_net).data.reshape(-1)
    candidates = select_candidates(node_probs, theta)
    pairs = candidate_pairs(candidates)
    task = model.spec.task
    p = len(pairs)
    if p == 0:
        tail = (3,) if task is Task.RC_FILTER else (2,) if task is Task.DECOUPLING_CAPS else ()
        outputs = np.zeros((0,) + tail)
        order_outputs = np.zeros((0, 2) + tail)
    else:
        raw = model.head_outputs(h, pairs)
        if task is Task.PULL_UP_DOWN:
            flat = raw["prob"].data.reshape(-1)  # (2P,): first orders then reversed
            order_outputs = np.stack([flat[:p], flat[p:]], axis=1)  # (P, 2)
        elif task is Task.RC_FILTER:
            d = raw["dist"].data  # (2P, 3)
            order_outputs = np.stack([d[:p], d[p:]], axis=1)  # (P, 2, 3)
        else:
            prob = raw["prob"].data.reshape(-1)
            count = raw["count"].data.reshape(-1)
            per_order = np.stack([prob, count], axis=1)  # (2P, 2)
            order_outputs = np.stack([per_order[:p], per_order[p:]], axis=1)  # (P, 2, 2)
        outputs = order_outputs.mean(axis=1)
    return PairPrediction(
        task=task,
        num_nets=graph.num_nets,
        candidate_set=candidates,
        pairs=pairs,
        outputs=outputs,
        order_outputs=order_outputs,
        filtered_default=filtered_default_output(task),
        node_probs=node_probs,
        theta=theta,
    )


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(model: PairModel, path, optimizer: AdamW | None = None, metadata: dict | None = None) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "model_spec": model.spec.to_dict(),
        "parameters": {
            name: {"shape": list(t.data.shape), "values": t.data.reshape(-1).tolist()}
            for name, t in model.params()
        },
    }
    if optimizer is not None:
        state = optimizer.state_dict()
        doc["training_state"] = {
            "step": state["step"],
            "lr": state["lr"],
            "betas": state["betas"],
            "eps": state["eps"],
            "weight_decay": state["weight_decay"],
            "m": [m.reshape(-1).tolist() for m in state["m"]],
            "v": [v.reshape(-1).tolist() for v in state["v"]],
        }
    if metadata:
        doc["metadata"] = metadata
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
        f.write("\n")


def load_checkpoint(path) -> tuple[PairModel, dict]:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {doc.get('format_version')!r}")
    spec = ModelSpec.from_dict(doc["model_spec"])
    model = PairModel(spec, seed=0)
    stored = doc["parameters"]
    for name, tensor in model.params():
        if name not in stored:
            raise ValueError(f"checkpoint missing parameter {name!r}")
        entry = stored[name]
        values = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        if tuple(values.shape) != tensor.data.shape:
            raise ValueError(
                f"checkpoint parameter {name!r} has shape {values.shape}, expected {tensor.data.shape}"
            )
        tensor.data = values
    extras = {k: doc[k] for k in ("training_state", "metadata") if k in doc}
    return model, extras
