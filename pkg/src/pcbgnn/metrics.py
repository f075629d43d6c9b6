"""Evaluation metrics: AUPRC with the filtered-pairs-negative convention,
macro-averaging for the multiclass task, and the rounded-regression
error CDF.

AUPRC uses the average-precision formulation: walking the ranking in
descending score order, each positive contributes the precision at its rank
weighted by its recall increment. Equal scores form one group (the curve
has one point per distinct score), so ties cannot be gamed by ordering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import PcbGraph
from .model import PairPrediction
from .netlist import RC_CLASSES, RC_NONE, Task, is_positive_label


class UndefinedMetricError(ValueError):
    """Raised when a metric has no defined value (e.g. no positive labels)."""


def auprc(scores, labels) -> float:
    """Area under the precision-recall curve (average precision)."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError(f"scores and labels differ in length: {scores.shape} vs {labels.shape}")
    total_pos = int(np.sum(labels == 1))
    if total_pos == 0:
        raise UndefinedMetricError("AUPRC is undefined without positive labels")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = (labels[order] == 1).astype(np.int64)
    # Group equal scores: one PR point per distinct score value.
    boundaries = np.flatnonzero(np.diff(s)) + 1
    ends = np.concatenate([boundaries, [len(s)]])
    cum_tp = np.cumsum(y)
    tp_at_end = cum_tp[ends - 1]
    precision = tp_at_end / ends
    delta_tp = np.diff(np.concatenate([[0], tp_at_end]))
    return float(np.sum(precision * delta_tp) / total_pos)


def _triu_linear(n: int, a: int, b: int) -> int:
    # Index of the unordered pair (a < b) in np.triu_indices(n, k=1) order.
    return a * n - a * (a + 1) // 2 + (b - a - 1)


def pair_scores_and_labels(pred: PairPrediction, graph: PcbGraph) -> tuple[np.ndarray, np.ndarray]:
    """Positive-class score and binary label for every unordered net pair."""
    scores = pred.positive_scores_dense()
    n = pred.num_nets
    labels = np.zeros(len(scores), dtype=np.int64)
    for (a, b), lab in graph.y_pair.items():
        if is_positive_label(graph.task, lab):
            labels[_triu_linear(n, a, b)] = 1
    return scores, labels


def rc_class_scores_and_labels(pred: PairPrediction, graph: PcbGraph, class_idx: int):
    """One-vs-rest scores/labels for one RC-filter class over all net pairs."""
    n = pred.num_nets
    num_pairs = n * (n - 1) // 2
    scores = np.full(num_pairs, float(pred.filtered_default[class_idx]), dtype=np.float64)
    if len(pred.pairs):
        scores[pred.pair_linear_indices()] = pred.outputs[:, class_idx]
    labels = np.zeros(num_pairs, dtype=np.int64)
    target = RC_CLASSES[class_idx]
    if target == RC_NONE:
        labels[:] = 1
        for (a, b), lab in graph.y_pair.items():
            if lab != RC_NONE:
                labels[_triu_linear(n, a, b)] = 0
    else:
        for (a, b), lab in graph.y_pair.items():
            if lab == target:
                labels[_triu_linear(n, a, b)] = 1
    return scores, labels


def task_metric(
    predictions: list[PairPrediction],
    graphs: list[PcbGraph],
    task: Task,
    aggregation: str = "pooled",
) -> float:
    """Task evaluation metric over a test split.

    Pull-up/-down and decoupling: AUPRC over all net pairs (binary head for
    decoupling). RC filter: unweighted mean of the per-class AUPRCs.
    ``aggregation`` is "pooled" (one curve over all graphs' pairs; default)
    or "per_graph" (mean of per-graph values; graphs without positives are
    skipped).
    """
    if not predictions:
        raise ValueError("task_metric requires a non-empty test set")
    if len(predictions) != len(graphs):
        raise ValueError("predictions and graphs must align")
    if aggregation not in ("pooled", "per_graph"):
        raise ValueError(f"unknown aggregation {aggregation!r}")

    if task is Task.RC_FILTER:
        values = []
        for c in range(len(RC_CLASSES)):
            try:
                values.append(_aggregate(predictions, graphs, aggregation, lambda p, g: rc_class_scores_and_labels(p, g, c)))
            except UndefinedMetricError:
                continue  # class absent from the split
        if not values:
            raise UndefinedMetricError("no RC class has positive labels in this split")
        return float(np.mean(values))
    return _aggregate(predictions, graphs, aggregation, pair_scores_and_labels)


def _aggregate(predictions, graphs, aggregation, collect) -> float:
    if aggregation == "pooled":
        scores, labels = [], []
        for p, g in zip(predictions, graphs):
            s, l = collect(p, g)
            scores.append(s)
            labels.append(l)
        return auprc(np.concatenate(scores), np.concatenate(labels))
    values = []
    for p, g in zip(predictions, graphs):
        s, l = collect(p, g)
        try:
            values.append(auprc(s, l))
        except UndefinedMetricError:
            continue
    if not values:
        raise UndefinedMetricError("no graph in the split has positive labels")
    return float(np.mean(values))


@dataclass
class RegressionReport:
    cdf: np.ndarray  # CDF(t) for t = 0..t_max
    auc: float
    num_pairs: int

    def rows(self) -> list[tuple[int, float]]:
        return [(t, float(v)) for t, v in enumerate(self.cdf)]


def regression_eval(
    predictions: list[PairPrediction], graphs: list[PcbGraph], t_max: int = 4
) -> RegressionReport:
    """Absolute-error CDF of the rounded capacitor-count regression.

    Only pairs with a non-zero count label are evaluated; pairs the
    pre-filter dropped predict 0. Rounding is round-half-to-even, and
    AUC = mean of CDF(0..t_max).
    """
    errors = []
    for pred, graph in zip(predictions, graphs):
        if graph.task is not Task.DECOUPLING_CAPS:
            raise ValueError("regression_eval applies to the decoupling task only")
        evaluated = {(int(a), int(b)): row for row, (a, b) in enumerate(pred.pairs)}
        for (a, b), count in graph.y_pair.items():
            if count < 1:
                continue
            row = evaluated.get((a, b))
            raw = float(pred.outputs[row, 1]) if row is not None else 0.0
            errors.append(abs(float(np.round(raw)) - count))
    if not errors:
        raise UndefinedMetricError("no non-zero count labels in this split")
    errors = np.asarray(errors)
    cdf = np.array([np.mean(errors <= t) for t in range(t_max + 1)])
    return RegressionReport(cdf=cdf, auc=float(cdf.mean()), num_pairs=len(errors))
