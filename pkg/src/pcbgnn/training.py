"""Training protocol: splits, cross-validation folds, the AdamW training
loop with early stopping on the task metric, theta sweeps, and grid search.

Splits are graph-level. For k folds the shuffled dataset is read as a ring:
fold i takes the i-th test-sized window as its test set, the next window as
validation, and the rest as training, so per-fold test sets are disjoint
whenever folds * test_size <= n.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import AdamW, Tape, multiply
from .graph import PcbGraph
from .metrics import RegressionReport, UndefinedMetricError, regression_eval, task_metric
from .model import (
    GRID_HEADS,
    GRID_HIDDEN_DIMS,
    GRID_LEARNING_RATES,
    GRID_NUM_LAYERS,
    GRID_THETAS,
    ModelSpec,
    PairModel,
    predict_full_matrix,
)
from .netlist import Task

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 128
    early_stop_patience: int = 20
    max_epochs: int = 500
    seed: int = 0
    split_ratios: tuple = (0.8, 0.1, 0.1)
    folds: int = 9

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1, got {self.split_ratios}")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1 or self.folds < 1:
            raise ValueError("batch_size, max_epochs, and folds must be >= 1")


@dataclass
class FoldSplit:
    fold: int
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray


def split_dataset(num_graphs: int, config: TrainConfig) -> list[FoldSplit]:
    """Deterministic graph-level splits; test sets disjoint across folds."""
    n = num_graphs
    r_train, r_val, r_test = config.split_ratios
    test_size = max(1, round(r_test * n))
    val_size = max(1, round(r_val * n))
    if config.folds * test_size > n:
        raise ValueError(
            f"too few graphs: {config.folds} folds with test size {test_size} need "
            f"at least {config.folds * test_size} graphs, got {n}"
        )
    if test_size + val_size >= n:
        raise ValueError(f"too few graphs for ratios {config.split_ratios}: n={n}")
    perm = np.random.default_rng(config.seed).permutation(n)
    folds = []
    for i in range(config.folds):
        ring = np.roll(perm, -i * test_size)
        folds.append(
            FoldSplit(
                fold=i,
                test_idx=ring[:test_size].copy(),
                val_idx=ring[test_size : test_size + val_size].copy(),
                train_idx=ring[test_size + val_size :].copy(),
            )
        )
    return folds


def evaluate_model(
    model: PairModel,
    graphs: list[PcbGraph],
    theta: float | None = None,
    aggregation: str = "pooled",
) -> float:
    predictions = [predict_full_matrix(g, model, theta) for g in graphs]
    return task_metric(predictions, graphs, model.spec.task, aggregation=aggregation)


@dataclass
class TrainResult:
    model: PairModel
    history: list  # dicts: epoch, train_loss, val_metric
    best_epoch: int
    best_val_metric: float
    test_metric: float
    fold: FoldSplit
    config: TrainConfig
    spec: ModelSpec


def train(
    spec: ModelSpec,
    config: TrainConfig,
    graphs: list[PcbGraph],
    fold: FoldSplit | None = None,
) -> TrainResult:
    """Optimize the composite loss; return the best-validation checkpoint.

    One epoch is a pass over the training graphs in shuffled mini-batches
    (loss averaged over the graphs of a batch). After each epoch the task
    metric is computed on the validation split; training stops once it has
    not improved for ``early_stop_patience`` epochs.
    """
    for g in graphs:
        if g.task is not spec.task:
            raise ValueError(f"graph {g.name!r} is labeled for {g.task}, expected {spec.task}")
    if fold is None:
        fold = split_dataset(len(graphs), config)[0]
    model = PairModel(spec, seed=config.seed)
    optimizer = AdamW(model.param_tensors(), lr=config.learning_rate)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    train_graphs = [graphs[i] for i in fold.train_idx]
    val_graphs = [graphs[i] for i in fold.val_idx]
    test_graphs = [graphs[i] for i in fold.test_idx]

    history = []
    best_val = -math.inf
    best_epoch = -1
    best_params = None
    epochs_without_improvement = 0

    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(train_graphs))
        epoch_loss = 0.0
        num_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            optimizer.zero_grad()
            batch_loss = 0.0
            # one tape per graph keeps memory at a single graph's
            # intermediates; gradients of the batch-mean accumulate in .grad
            for i in batch:
                with Tape() as tape:
                    part = multiply(model.training_loss(train_graphs[i]).total, 1.0 / len(batch))
                if not np.isfinite(part.data):
                    raise TrainingError(f"non-finite loss at epoch {epoch}")
                tape.backward(part)
                batch_loss += float(part.data)
            optimizer.step()
            epoch_loss += batch_loss
            num_batches += 1
        val_metric = evaluate_model(model, val_graphs)
        history.append(
            {"epoch": epoch, "train_loss": epoch_loss / max(1, num_batches), "val_metric": val_metric}
        )
        if val_metric > best_val:
            best_val = val_metric
            best_epoch = epoch
            best_params = [t.data.copy() for t in model.param_tensors()]
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1
        if epochs_without_improvement >= config.early_stop_patience:
            logger.info("early stop at epoch %d (best epoch %d)", epoch, best_epoch)
            break

    if best_params is not None:
        for t, data in zip(model.param_tensors(), best_params):
            t.data = data
    test_metric = evaluate_model(model, test_graphs)
    return TrainResult(
        model=model,
        history=history,
        best_epoch=best_epoch,
        best_val_metric=best_val,
        test_metric=test_metric,
        fold=fold,
        config=config,
        spec=spec,
    )


def theta_sweep(
    model: PairModel, graphs: list[PcbGraph], thetas=GRID_THETAS
) -> list[dict]:
    """Task metric of one checkpoint at each pre-filter threshold."""
    rows = []
    for theta in thetas:
        try:
            value = evaluate_model(model, graphs, theta=theta)
        except UndefinedMetricError:
            value = float("nan")
        rows.append({"theta": theta, "metric": value})
    return rows


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------


@dataclass
class GridSpace:
    backbones: tuple = ("mlp_only", "gcn", "gin", "gine", "gat", "gatv2", "gt")
    num_layers: tuple = GRID_NUM_LAYERS
    hidden_dims: tuple = GRID_HIDDEN_DIMS
    heads: tuple = GRID_HEADS
    learning_rates: tuple = GRID_LEARNING_RATES
    thetas: tuple = GRID_THETAS
    alphas: tuple = (0.1,)  # decoupling only

    def __post_init__(self):
        if not set(self.num_layers) <= set(GRID_NUM_LAYERS):
            raise ValueError(f"num_layers outside the grid: {self.num_layers}")
        if not set(self.hidden_dims) <= set(GRID_HIDDEN_DIMS):
            raise ValueError(f"hidden_dims outside the grid: {self.hidden_dims}")
        if not set(self.heads) <= set(GRID_HEADS):
            raise ValueError(f"heads outside the grid: {self.heads}")
        if not set(self.learning_rates) <= set(GRID_LEARNING_RATES):
            raise ValueError(f"learning_rates outside the grid: {self.learning_rates}")
        if not set(self.thetas) <= set(GRID_THETAS):
            raise ValueError(f"thetas outside the grid: {self.thetas}")
        if not self.backbones:
            raise ValueError("grid space is empty")

    def specs(self, task: Task):
        """Yield (ModelSpec, learning_rate) for every grid point."""
        from .layers import ATTENTION_KINDS

        for backbone in self.backbones:
            layer_options = (0,) if backbone == "mlp_only" else self.num_layers
            head_options = self.heads if backbone in ATTENTION_KINDS else (1,)
            alpha_options = self.alphas if task is Task.DECOUPLING_CAPS else (None,)
            for layers, hidden, heads, theta, lr, alpha in itertools.product(
                layer_options, self.hidden_dims, head_options, self.thetas, self.learning_rates, alpha_options
            ):
                yield (
                    ModelSpec(
                        task=task,
                        backbone=backbone,
                        num_layers=layers,
                        hidden_dim=hidden,
                        heads=heads,
                        theta=theta,
                        alpha=alpha,
                    ),
                    lr,
                )


@dataclass
class GridTrial:
    spec: ModelSpec
    learning_rate: float
    val_metric: float
    test_metric: float
    best_epoch: int


def grid_search(
    space: GridSpace,
    graphs: list[PcbGraph],
    task: Task,
    config: TrainConfig,
    all_folds: bool = False,
) -> list[GridTrial]:
    """Train every grid combination; return trials ranked by validation metric.

    By default each combination trains on fold 0 only; with ``all_folds``
    the validation/test metrics are averaged over every fold.
    """
    folds = split_dataset(len(graphs), config)
    use = folds if all_folds else folds[:1]
    trials = []
    for spec, lr in space.specs(task):
        cfg = replace(config, learning_rate=lr)
        vals, tests, epochs = [], [], []
        for fold in use:
            result = train(spec, cfg, graphs, fold)
            vals.append(result.best_val_metric)
            tests.append(result.test_metric)
            epochs.append(result.best_epoch)
        trials.append(
            GridTrial(
                spec=spec,
                learning_rate=lr,
                val_metric=float(np.mean(vals)),
                test_metric=float(np.mean(tests)),
                best_epoch=int(epochs[0]),
            )
        )
        logger.info(
            "grid trial %s lr=%g theta=%.1f: val=%.4f test=%.4f",
            spec.backbone,
            lr,
            spec.theta,
            trials[-1].val_metric,
            trials[-1].test_metric,
        )
    trials.sort(key=lambda t: -t.val_metric)
    return trials


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    task: Task
    metric_name: str
    fold_values: list  # (fold, value)
    best_epoch: int | None = None
    theta_sweep_rows: list = field(default_factory=list)
    error_cdf: RegressionReport | None = None

    @property
    def mean(self) -> float:
        return float(np.mean([v for _, v in self.fold_values]))

    @property
    def std(self) -> float:
        return float(np.std([v for _, v in self.fold_values]))


def metric_name_of(task: Task) -> str:
    return {
        Task.PULL_UP_DOWN: "auprc",
        Task.RC_FILTER: "macro_auprc",
        Task.DECOUPLING_CAPS: "auprc",
    }[task]


def write_eval_report_csv(path, report: EvalReport, spec: ModelSpec, learning_rate: float) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(
            ["fold", "task", "backbone", "num_layers", "hidden_dim", "heads", "theta", "alpha", "lr", "metric", "value"]
        )
        for fold, value in report.fold_values:
            w.writerow(
                [
                    fold,
                    spec.task.value,
                    spec.backbone,
                    spec.num_layers,
                    spec.hidden_dim,
                    spec.heads,
                    spec.theta,
                    "" if spec.alpha is None else spec.alpha,
                    learning_rate,
                    report.metric_name,
                    f"{value:.6f}",
                ]
            )
        w.writerow(
            ["mean", spec.task.value, spec.backbone, spec.num_layers, spec.hidden_dim, spec.heads, spec.theta,
             "" if spec.alpha is None else spec.alpha, learning_rate, report.metric_name, f"{report.mean:.6f}"]
        )
        w.writerow(
            ["std", spec.task.value, spec.backbone, spec.num_layers, spec.hidden_dim, spec.heads, spec.theta,
             "" if spec.alpha is None else spec.alpha, learning_rate, report.metric_name, f"{report.std:.6f}"]
        )


def write_theta_sweep_csv(path, rows: list, metric_name: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["theta", f"{metric_name}_mean", f"{metric_name}_std"])
        for row in rows:
            values = np.atleast_1d(np.asarray(row["metric"], dtype=np.float64))
            w.writerow([f"{row['theta']:.1f}", f"{np.mean(values):.6f}", f"{np.std(values):.6f}"])


def write_error_cdf_csv(path, report: RegressionReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["abs_error_at_most", "fraction"])
        for t, v in report.rows():
            w.writerow([t, f"{v:.6f}"])
        w.writerow(["auc", f"{report.auc:.6f}"])


def write_grid_report_csv(path, trials: list[GridTrial]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(
            ["rank", "backbone", "num_layers", "hidden_dim", "heads", "theta", "alpha", "lr", "val_metric", "test_metric", "best_epoch"]
        )
        for rank, t in enumerate(trials, start=1):
            w.writerow(
                [
                    rank,
                    t.spec.backbone,
                    t.spec.num_layers,
                    t.spec.hidden_dim,
                    t.spec.heads,
                    t.spec.theta,
                    "" if t.spec.alpha is None else t.spec.alpha,
                    t.learning_rate,
                    f"{t.val_metric:.6f}",
                    f"{t.test_metric:.6f}",
                    t.best_epoch,
                ]
            )
