"""Command-line interface.

Subcommands: gen-data, train, eval, predict, grid, stats, embed-sim. All
commands are deterministic given their flags, seeds, and input files. On
failure a single machine-readable "error: ..." line goes to stderr and the
exit code is nonzero. Set PCBGNN_LOG=debug|info|warning to control log
verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, fields

import numpy as np

from . import embedding, graph, metrics, model, netlist, synth, training

logger = logging.getLogger("pcbgnn")


def _setup_logging() -> None:
    level = os.environ.get("PCBGNN_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _embedder_from_args(args) -> object:
    table_path = getattr(args, "embedding_table", None)
    if table_path:
        return embedding.TableEmbedder(embedding.load_table(table_path))
    return embedding.HashNgramEmbedder()


def _load_labeled_graphs(path, embedder, task: netlist.Task | None = None) -> tuple[list, list]:
    schematics = netlist.load_dataset(path)
    if task is not None:
        for s in schematics:
            if s.annotations is None or s.annotations.task is not task:
                raise ValueError(f"schematic {s.name!r} is not annotated for task {task.value}")
    graphs = [graph.build_labeled_graph(s, embedder) for s in schematics]
    return schematics, graphs


def _read_single_schematic(path) -> netlist.Schematic:
    with open(path, "r", encoding="utf-8") as f:
        lines = [line.strip() for line in f if line.strip()]
    if not lines:
        raise ValueError(f"{path} contains no schematic document")
    if len(lines) > 1:
        raise ValueError(f"{path} contains {len(lines)} documents; predict expects exactly one")
    return netlist.parse_netlist(lines[0], line=1)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    overrides = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            overrides = json.load(f)
    allowed = {f.name for f in fields(synth.GenConfig)}
    unknown = set(overrides) - allowed
    if unknown:
        raise ValueError(f"unknown generator config keys: {sorted(unknown)}")
    overrides.update({"task": netlist.Task(args.task), "count": args.count, "seed": args.seed})
    config = synth.GenConfig(**overrides)
    schematics = synth.generate(config)
    netlist.store_dataset(schematics, args.out)
    print(f"wrote {len(schematics)} schematics to {args.out}")
    return 0


def cmd_stats(args) -> int:
    embedder = embedding.HashNgramEmbedder()
    _, graphs = _load_labeled_graphs(args.data, embedder)
    report = graph.graph_stats(graphs)
    out = args.out or None
    rows = report.rows()
    if out:
        with open(out, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["statistic", "value"])
            w.writerows(rows)
    for label, value in rows:
        print(f"{label}: {value}")
    return 0


def cmd_embed_sim(args) -> int:
    s = _read_single_schematic(args.netlist)
    names = [n.name for n in sorted(s.nets, key=lambda n: n.id)]
    names += [y.name for y in sorted(s.symbols, key=lambda y: y.id)]
    embedder = _embedder_from_args(args)
    mat = embedding.similarity_matrix(names, embedder)
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["name"] + names)
        for name, row in zip(names, mat):
            w.writerow([name] + [f"{v:.6f}" for v in row])
    print(f"wrote {len(names)}x{len(names)} similarity matrix to {args.out}")
    return 0


def _train_config_from_args(args) -> training.TrainConfig:
    return training.TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        early_stop_patience=args.patience,
        max_epochs=args.max_epochs,
        seed=args.seed,
        folds=args.folds,
    )


def _model_spec_from_args(args, task: netlist.Task) -> model.ModelSpec:
    return model.ModelSpec(
        task=task,
        backbone=args.backbone,
        num_layers=args.layers,
        hidden_dim=args.hidden,
        heads=args.heads,
        theta=args.theta,
        alpha=args.alpha if task is netlist.Task.DECOUPLING_CAPS else None,
    )


def cmd_train(args) -> int:
    task = netlist.Task(args.task)
    embedder = _embedder_from_args(args)
    _, graphs = _load_labeled_graphs(args.data, embedder, task)
    spec = _model_spec_from_args(args, task)
    config = _train_config_from_args(args)
    fold = training.split_dataset(len(graphs), config)[args.fold]
    result = training.train(spec, config, graphs, fold)
    metadata = {
        "train_config": asdict(config),
        "fold": fold.fold,
        "best_epoch": result.best_epoch,
        "best_val_metric": result.best_val_metric,
        "test_metric": result.test_metric,
        "embedder_source": embedder.source,
    }
    model.save_checkpoint(result.model, args.out_checkpoint, metadata=metadata)
    if args.metrics_out:
        report = training.EvalReport(
            task=task,
            metric_name=training.metric_name_of(task),
            fold_values=[(fold.fold, result.test_metric)],
            best_epoch=result.best_epoch,
        )
        training.write_eval_report_csv(args.metrics_out, report, spec, config.learning_rate)
    print(
        f"trained {spec.backbone} on fold {fold.fold}: best epoch {result.best_epoch}, "
        f"val {result.best_val_metric:.4f}, test {result.test_metric:.4f}"
    )
    return 0


def cmd_eval(args) -> int:
    loaded, extras = model.load_checkpoint(args.checkpoint)
    meta = extras.get("metadata", {})
    source = meta.get("embedder_source", "hash-ngram-v1")
    embedder = _embedder_from_args(args)
    if embedder.source != source:
        logger.warning("checkpoint was trained with embedder %s, evaluating with %s", source, embedder.source)
    task = loaded.spec.task
    _, graphs = _load_labeled_graphs(args.data, embedder, task)
    cfg_dict = meta.get("train_config")
    if cfg_dict is not None:
        cfg_dict = dict(cfg_dict)
        cfg_dict["split_ratios"] = tuple(cfg_dict.get("split_ratios", (0.8, 0.1, 0.1)))
        config = training.TrainConfig(**cfg_dict)
    else:
        config = training.TrainConfig(seed=args.seed)
    fold = training.split_dataset(len(graphs), config)[meta.get("fold", 0)]
    test_graphs = [graphs[i] for i in fold.test_idx]
    value = training.evaluate_model(loaded, test_graphs)
    report = training.EvalReport(
        task=task,
        metric_name=training.metric_name_of(task),
        fold_values=[(fold.fold, value)],
        best_epoch=meta.get("best_epoch"),
    )
    training.write_eval_report_csv(args.report, report, loaded.spec, config.learning_rate)
    print(f"{report.metric_name} on fold {fold.fold} test split: {value:.6f}")
    if args.sweep_theta:
        rows = training.theta_sweep(loaded, test_graphs)
        sweep_path = args.report + ".theta_sweep.csv"
        training.write_theta_sweep_csv(sweep_path, rows, report.metric_name)
        print(f"wrote theta sweep to {sweep_path}")
    if task is netlist.Task.DECOUPLING_CAPS:
        predictions = [model.predict_full_matrix(g, loaded) for g in test_graphs]
        try:
            reg = metrics.regression_eval(predictions, test_graphs)
            cdf_path = args.report + ".error_cdf.csv"
            training.write_error_cdf_csv(cdf_path, reg)
            print(f"regression error CDF auc={reg.auc:.4f}, wrote {cdf_path}")
        except metrics.UndefinedMetricError:
            logger.warning("no non-zero count labels in the test split; skipping error CDF")
    return 0


def cmd_predict(args) -> int:
    loaded, extras = model.load_checkpoint(args.checkpoint)
    embedder = _embedder_from_args(args)
    s = _read_single_schematic(args.netlist)
    g = graph.build_graph(s, embedder)
    pred = model.predict_full_matrix(g, loaded)
    net_name = {n.id: n.name for n in s.nets}
    rows = []
    for row, (a, b) in enumerate(pred.pairs):
        name_a = net_name[g.provenance[int(a)][1]]
        name_b = net_name[g.provenance[int(b)][1]]
        if loaded.spec.task is netlist.Task.PULL_UP_DOWN:
            output, score = "resistor", float(pred.outputs[row])
        elif loaded.spec.task is netlist.Task.RC_FILTER:
            dist = pred.outputs[row]
            cls = int(np.argmax(dist[1:])) + 1
            output, score = netlist.RC_CLASSES[cls], float(dist[cls])
        else:
            prob, count = pred.outputs[row]
            output, score = str(int(np.round(count))), float(prob)
        rows.append((name_a, name_b, output, score))
    rows.sort(key=lambda r: (-r[3], r[0], r[1]))
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["net_a", "net_b", "output", "score"])
        for name_a, name_b, output, score in rows:
            w.writerow([name_a, name_b, output, f"{score:.6f}"])
    print(f"wrote {len(rows)} ranked suggestions to {args.out}")
    return 0


def cmd_grid(args) -> int:
    task = netlist.Task(args.task)
    embedder = _embedder_from_args(args)
    _, graphs = _load_labeled_graphs(args.data, embedder, task)
    with open(args.space, "r", encoding="utf-8") as f:
        space_doc = json.load(f)
    allowed = {f.name for f in fields(training.GridSpace)}
    unknown = set(space_doc) - allowed
    if unknown:
        raise ValueError(f"unknown grid space keys: {sorted(unknown)}")
    space = training.GridSpace(**{k: tuple(v) for k, v in space_doc.items()})
    config = _train_config_from_args(args)
    trials = training.grid_search(space, graphs, task, config, all_folds=args.all_folds)
    training.write_grid_report_csv(args.report, trials)
    best = trials[0]
    print(
        f"best config: {best.spec.backbone} layers={best.spec.num_layers} hidden={best.spec.hidden_dim} "
        f"heads={best.spec.heads} theta={best.spec.theta} lr={best.learning_rate} "
        f"(val {best.val_metric:.4f}, test {best.test_metric:.4f})"
    )
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_train_flags(p, with_model_flags: bool = True) -> None:
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--max-epochs", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--folds", type=int, default=9)
    p.add_argument("--fold", type=int, default=0)
    if with_model_flags:
        p.add_argument("--backbone", required=True, choices=["mlp_only", "gcn", "gin", "gine", "gat", "gatv2", "gt"])
        p.add_argument("--layers", type=int, default=3)
        p.add_argument("--hidden", type=int, default=64)
        p.add_argument("--heads", type=int, default=1)
        p.add_argument("--theta", type=float, default=0.0)
        p.add_argument("--alpha", type=float, default=0.1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcbgnn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a labeled synthetic dataset")
    p.add_argument("--task", required=True, choices=[t.value for t in netlist.Task])
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file with GenConfig overrides")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model configuration")
    p.add_argument("--data", required=True)
    p.add_argument("--task", required=True, choices=[t.value for t in netlist.Task])
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--metrics-out")
    p.add_argument("--embedding-table")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on its test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--sweep-theta", action="store_true")
    p.add_argument("--embedding-table")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="rank insertion suggestions for one schematic")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--netlist", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--embedding-table")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("grid", help="grid search over a hyperparameter space file")
    p.add_argument("--space", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--task", required=True, choices=[t.value for t in netlist.Task])
    p.add_argument("--report", required=True)
    p.add_argument("--all-folds", action="store_true")
    p.add_argument("--embedding-table")
    _add_train_flags(p, with_model_flags=False)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("stats", help="dataset statistics table")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("embed-sim", help="name-embedding similarity matrix for one schematic")
    p.add_argument("--netlist", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--embedding-table")
    p.set_defaults(func=cmd_embed_sim)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # noqa: BLE001 - single error surface for the CLI
        print(f"error: {e}", file=sys.stderr)
        if os.environ.get("PCBGNN_LOG", "").lower() == "debug":
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
