"""Pair model: pre-filter, candidate selection, heads, losses, full-matrix
prediction against an independent brute-force evaluator, checkpoints."""

from __future__ import annotations

import numpy as np
import pytest

from oracles import pair_model_bruteforce
from pcbgnn.autodiff import Tape, Tensor, grad_check
from pcbgnn.graph import build_labeled_graph
from pcbgnn.model import (
    GRID_THETAS,
    ModelSpec,
    PairModel,
    bce_loss,
    candidate_pairs,
    compose_loss,
    filtered_default_output,
    load_checkpoint,
    pair_labels_for,
    pair_representations,
    predict_full_matrix,
    save_checkpoint,
    select_candidates,
)
from pcbgnn.netlist import RC_CAPACITOR, RC_NONE, RC_RESISTOR, Task
from conftest import random_small_schematic


@pytest.fixture()
def pullup_graph(embedder):
    rng = np.random.default_rng(5)
    return build_labeled_graph(random_small_schematic(rng, 8, Task.PULL_UP_DOWN), embedder)


def _spec(task=Task.PULL_UP_DOWN, backbone="gcn", layers=1, theta=0.0, **kw):
    alpha = kw.pop("alpha", 0.1 if task is Task.DECOUPLING_CAPS else None)
    return ModelSpec(task=task, backbone=backbone, num_layers=layers, hidden_dim=16, theta=theta, alpha=alpha, **kw)


# ---------------------------------------------------------------------------
# ModelSpec validation
# ---------------------------------------------------------------------------


def test_spec_validation():
    with pytest.raises(ValueError, match="num_layers"):
        ModelSpec(task=Task.PULL_UP_DOWN, backbone="gcn", num_layers=0, hidden_dim=16)
    with pytest.raises(ValueError, match="num_layers"):
        ModelSpec(task=Task.PULL_UP_DOWN, backbone="mlp_only", num_layers=2, hidden_dim=16)
    with pytest.raises(ValueError, match="hidden_dim"):
        ModelSpec(task=Task.PULL_UP_DOWN, backbone="gcn", num_layers=1, hidden_dim=10)
    with pytest.raises(ValueError, match="theta"):
        ModelSpec(task=Task.PULL_UP_DOWN, backbone="gcn", num_layers=1, hidden_dim=16, theta=0.75)
    with pytest.raises(ValueError, match="alpha"):
        ModelSpec(task=Task.DECOUPLING_CAPS, backbone="gcn", num_layers=1, hidden_dim=16)
    with pytest.raises(ValueError, match="heads"):
        ModelSpec(task=Task.PULL_UP_DOWN, backbone="gat", num_layers=1, hidden_dim=16, heads=2)
    with pytest.raises(ValueError, match="heads"):
        ModelSpec(task=Task.PULL_UP_DOWN, backbone="gcn", num_layers=1, hidden_dim=16, heads=4)


def test_spec_roundtrip_dict():
    spec = _spec(task=Task.DECOUPLING_CAPS, theta=0.3)
    assert ModelSpec.from_dict(spec.to_dict()) == spec


# ---------------------------------------------------------------------------
# Pre-filter and candidates
# ---------------------------------------------------------------------------


def test_prefilter_zero_weights_half(pullup_graph):
    m = PairModel(_spec(), seed=0)
    for layer in m.prefilter.layers:
        layer.W.data[:] = 0.0
        layer.b.data[:] = 0.0
    h = m.node_representations(pullup_graph)
    from pcbgnn.autodiff import gather_rows

    probs = m.prefilter_scores(gather_rows(h, pullup_graph.net_node_indices))
    assert np.allclose(probs.data, 0.5)


def test_prefilter_grad_check(pullup_graph):
    m = PairModel(_spec(), seed=3)
    _, p = next(x for x in m.params() if x[0].startswith("prefilter"))

    def f(q):
        h = m.node_representations(pullup_graph)
        from pcbgnn.autodiff import gather_rows

        probs = m.prefilter_scores(gather_rows(h, pullup_graph.net_node_indices))
        return bce_loss(probs, pullup_graph.y_node.astype(float))

    assert grad_check(f, p, eps=1e-6) < 1e-4


def test_select_candidates():
    probs = np.array([0.2, 0.9, 0.71])
    assert select_candidates(probs, 0.7).tolist() == [1, 2]
    assert select_candidates(probs, 0.0).tolist() == [0, 1, 2]
    # monotone: raising theta never adds candidates
    for lo, hi in zip(GRID_THETAS, GRID_THETAS[1:]):
        assert set(select_candidates(probs, hi)) <= set(select_candidates(probs, lo))


def test_candidate_pair_counting():
    assert len(candidate_pairs(np.array([3, 7]))) == 1
    k = 6
    pairs = candidate_pairs(np.arange(k))
    assert len(pairs) == k * (k - 1) // 2
    assert len(candidate_pairs(np.array([]))) == 0
    assert len(candidate_pairs(np.array([4]))) == 0


def test_pair_representations_both_orders():
    h = Tensor(np.arange(12.0).reshape(4, 3))
    pairs = np.array([[0, 2], [1, 3]])
    reps = pair_representations(h, pairs).data
    assert reps.shape == (4, 6)
    assert np.array_equal(reps[0], np.concatenate([h.data[0], h.data[2]]))
    assert np.array_equal(reps[2], np.concatenate([h.data[2], h.data[0]]))  # reversed order


def test_pair_labels_lookup():
    pairs = np.array([[0, 1], [0, 3], [2, 3]])
    y_pair = {(0, 3): 1, (2, 3): 1}
    assert pair_labels_for(Task.PULL_UP_DOWN, y_pair, pairs) == [0, 1, 1]
    assert pair_labels_for(Task.RC_FILTER, {(0, 1): RC_RESISTOR}, pairs) == [RC_RESISTOR, RC_NONE, RC_NONE]


# ---------------------------------------------------------------------------
# Heads and losses
# ---------------------------------------------------------------------------


def test_zero_weight_binary_head_half(pullup_graph):
    m = PairModel(_spec(), seed=0)
    for layer in m.heads["prob"].layers:
        layer.W.data[:] = 0.0
        layer.b.data[:] = 0.0
    h = m.node_representations(pullup_graph)
    out = m.head_outputs(h, np.array([[0, 1], [1, 2]]))
    assert np.allclose(out["prob"].data, 0.5)


def test_rc_head_distributions_sum_to_one(pullup_graph):
    m = PairModel(_spec(task=Task.RC_FILTER), seed=1)
    h = m.node_representations(pullup_graph)
    out = m.head_outputs(h, np.array([[0, 1], [0, 2], [1, 2]]))
    assert np.allclose(out["dist"].data.sum(axis=1), 1.0)


def test_compose_loss_perfect_predictions_near_zero():
    node_probs = Tensor(np.array([[1 - 1e-9], [1e-9]]))
    pair_out = {"prob": Tensor(np.array([[1 - 1e-9], [1e-9]]))}
    parts = compose_loss(Task.PULL_UP_DOWN, node_probs, np.array([1, 0]), pair_out, [1, 0])
    assert float(parts.total.data) < 1e-6


def test_compose_loss_alpha_zero_reduces_to_bces():
    node_probs = Tensor(np.array([[0.7], [0.4]]))
    pair_out = {"prob": Tensor(np.array([[0.6], [0.2]])), "count": Tensor(np.array([[5.0], [0.3]]))}
    with_alpha0 = compose_loss(Task.DECOUPLING_CAPS, node_probs, np.array([1, 0]), pair_out, [2, 0], alpha=0.0)
    node_term = bce_loss(node_probs, np.array([1, 0]))
    pair_term = bce_loss(pair_out["prob"], np.array([1.0, 0.0]))
    assert abs(float(with_alpha0.total.data) - (float(node_term.data) + float(pair_term.data))) < 1e-12


def test_compose_loss_regression_term_arithmetic():
    # count label 3, prediction 1.0, alpha 0.1 -> contributes 0.1 * (3-1)^2 = 0.4
    node_probs = Tensor(np.array([[0.5]]))
    pair_out = {"prob": Tensor(np.array([[0.5]])), "count": Tensor(np.array([[1.0]]))}
    a = compose_loss(Task.DECOUPLING_CAPS, node_probs, np.array([1]), pair_out, [3], alpha=0.1)
    b = compose_loss(Task.DECOUPLING_CAPS, node_probs, np.array([1]), pair_out, [3], alpha=0.0)
    assert abs((float(a.total.data) - float(b.total.data)) - 0.4) < 1e-12


def test_compose_loss_empty_pairs_contributes_zero():
    node_probs = Tensor(np.array([[0.5], [0.5]]))
    parts = compose_loss(Task.PULL_UP_DOWN, node_probs, np.array([0, 1]), {}, [])
    assert parts.task_loss == 0.0
    assert abs(float(parts.total.data) - parts.node_bce) < 1e-15


def test_compose_loss_additivity(pullup_graph):
    # with the node term analytically removed, what remains is the task term
    m = PairModel(_spec(theta=0.0), seed=2)
    parts = m.training_loss(pullup_graph)
    assert abs(float(parts.total.data) - (parts.node_bce + parts.task_loss)) < 1e-12


def test_full_model_loss_grad_check_all_tasks(embedder):
    rng = np.random.default_rng(9)
    for task in Task:
        g = build_labeled_graph(random_small_schematic(rng, 7, task), embedder)
        m = PairModel(_spec(task=task, backbone="gatv2", layers=1, heads=4), seed=4)
        name, p = next(x for x in m.params() if x[0].endswith("lin_src.W"))
        assert grad_check(lambda q: m.training_loss(g).total, p, eps=1e-6) < 1e-4, task


# ---------------------------------------------------------------------------
# Full-matrix prediction
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("task", list(Task))
def test_full_matrix_matches_bruteforce(task, embedder):
    rng = np.random.default_rng(21)
    g = build_labeled_graph(random_small_schematic(rng, 8, task), embedder)
    m = PairModel(_spec(task=task, backbone="gine", layers=2, theta=0.4), seed=7)
    pred = predict_full_matrix(g, m)
    candidates, probs, expected = pair_model_bruteforce(m, g)
    assert pred.candidate_set.tolist() == candidates
    assert len(pred.pairs) == len(expected)
    for row, (a, b) in enumerate(pred.pairs):
        assert np.allclose(pred.outputs[row], expected[(int(a), int(b))], atol=1e-10), (a, b)
    # defaults on everything else
    smap = pred.scores
    for key, value in smap.items():
        if key not in expected:
            assert np.array_equal(np.atleast_1d(value), np.atleast_1d(filtered_default_output(task)))


def test_full_matrix_theta_zero_evaluates_all(pullup_graph):
    m = PairModel(_spec(theta=0.0), seed=0)
    pred = predict_full_matrix(pullup_graph, m)
    n = pullup_graph.num_nets
    assert len(pred.candidate_set) == n
    assert len(pred.pairs) == n * (n - 1) // 2


def test_full_matrix_theta_one_like_all_defaulted(pullup_graph):
    m = PairModel(_spec(theta=0.7), seed=0)
    for layer in m.prefilter.layers:
        layer.W.data[:] = 0.0
        layer.b.data[:] = 0.0  # every prob is exactly 0.5 < 0.7
    pred = predict_full_matrix(pullup_graph, m)
    assert len(pred.candidate_set) == 0 and len(pred.pairs) == 0
    assert all(np.array_equal(np.atleast_1d(v), np.atleast_1d(pred.filtered_default)) for v in pred.scores.values())


def test_full_matrix_candidate_monotonicity(pullup_graph):
    m = PairModel(_spec(theta=0.0), seed=11)
    sets = [set(predict_full_matrix(pullup_graph, m, theta=t).candidate_set.tolist()) for t in GRID_THETAS]
    for a, b in zip(sets, sets[1:]):
        assert b <= a


def test_order_average_is_symmetric(pullup_graph):
    m = PairModel(_spec(theta=0.0), seed=13)
    pred = predict_full_matrix(pullup_graph, m)
    assert np.allclose(pred.outputs, pred.order_outputs.mean(axis=1))


def test_mlp_only_depends_only_on_endpoints(embedder):
    rng = np.random.default_rng(31)
    g = build_labeled_graph(random_small_schematic(rng, 8, Task.PULL_UP_DOWN), embedder)
    m = PairModel(_spec(backbone="mlp_only", layers=0, theta=0.0), seed=17)
    pred = predict_full_matrix(g, m)
    # perturb every OTHER node's features; scores of pair (0, 1) must not move
    import dataclasses

    nf = g.node_features.copy()
    nf[2:] += np.random.default_rng(4).standard_normal(nf[2:].shape)
    g2 = dataclasses.replace(g, node_features=nf)
    g2.__dict__.pop("_topology", None)
    pred2 = predict_full_matrix(g2, m)
    assert pred.pairs[0].tolist() == [0, 1]
    assert np.allclose(pred.node_probs[:2], pred2.node_probs[:2])
    row = 0
    assert np.allclose(pred.outputs[row], pred2.outputs[row])


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def test_checkpoint_roundtrip_bitwise(tmp_path, pullup_graph):
    m = PairModel(_spec(backbone="gatv2", layers=2, heads=4, theta=0.2), seed=23)
    from pcbgnn.autodiff import AdamW

    opt = AdamW(m.param_tensors(), lr=0.01)
    with Tape() as tape:
        loss = m.training_loss(pullup_graph).total
    opt.zero_grad()
    tape.backward(loss)
    opt.step()
    path = tmp_path / "ckpt.json"
    save_checkpoint(m, path, optimizer=opt, metadata={"note": "test"})
    m2, extras = load_checkpoint(path)
    assert m2.spec == m.spec
    for (n1, p1), (n2, p2) in zip(m.params(), m2.params()):
        assert n1 == n2
        assert np.array_equal(p1.data, p2.data)  # bit-faithful reload
    assert extras["metadata"] == {"note": "test"}
    assert extras["training_state"]["step"] == 1
    pred1 = predict_full_matrix(pullup_graph, m)
    pred2 = predict_full_matrix(pullup_graph, m2)
    assert np.array_equal(pred1.outputs, pred2.outputs)


def test_checkpoint_shape_mismatch_rejected(tmp_path, pullup_graph):
    import json

    m = PairModel(_spec(), seed=1)
    path = tmp_path / "ckpt.json"
    save_checkpoint(m, path)
    doc = json.loads(path.read_text())
    first = next(iter(doc["parameters"]))
    doc["parameters"][first]["values"] = doc["parameters"][first]["values"][:-1]
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError):
        load_checkpoint(path)
