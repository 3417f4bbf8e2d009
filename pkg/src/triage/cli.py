"""Command-line entry points: preprocess, build-graph, train, grid,
ablation, serve, and synth-data (regenerates the bundled dataset replica).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np


def _add_common_train_flags(p):
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--fan-out", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=3000)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="triage",
        description="Patient-similarity-network triage pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="run the five preprocessing steps")
    p.add_argument("--in", dest="input", required=True, help="raw CSV path")
    p.add_argument("--schema", required=True, help="column-mapping JSON")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output dataset binary")
    p.add_argument("--report", help="write the preprocess report JSON here")
    p.add_argument("--csv", help="also export an inspection CSV")
    p.add_argument("--smote-k", type=int, default=5)

    p = sub.add_parser("build-graph", help="build one similarity graph")
    p.add_argument("--metric", required=True,
                   help="cosine|euclidean|manhattan|minkowski<p>")
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--in", dest="input", required=True, help="dataset binary")
    p.add_argument("--out", required=True, help="graph binary path")
    p.add_argument("--edge-csv", help="optional edge-list CSV export")

    p = sub.add_parser("train", help="train one model on one graph")
    p.add_argument("--data", required=True)
    p.add_argument("--metric", required=True)
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--model", required=True,
                   choices=["gcn5", "gcn4", "gat2", "sage5", "knn", "svm"])
    p.add_argument("--out-dir", required=True)
    _add_common_train_flags(p)

    p = sub.add_parser("grid", help="run the metric x threshold x model grid")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--metrics", nargs="*", default=None,
                   help="restrict to these metrics (default: full grid)")
    _add_common_train_flags(p)

    p = sub.add_parser("ablation", help="run the SAGE ablation study")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    _add_common_train_flags(p)

    p = sub.add_parser("serve", help="serve inductive predictions over HTTP")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--bind", default="127.0.0.1:8000")

    p = sub.add_parser("synth-data",
                       help="regenerate the bundled synthetic dataset replica")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--seed", type=int, default=7)

    return parser


def _cmd_preprocess(args):
    from .ingest import export_csv, preprocess_pipeline, save_dataset

    ds = preprocess_pipeline(args.input, args.schema, args.seed,
                             smote_k=args.smote_k)
    save_dataset(ds, args.out)
    if args.report:
        with open(args.report, "w") as f:
            f.write(ds.report.to_json())
    if args.csv:
        export_csv(ds, args.csv)
    print(f"preprocessed {ds.X.shape[0]} x {ds.X.shape[1]} -> {args.out}")
    print(ds.report.to_json())


def _cmd_build_graph(args):
    from .ingest import load_dataset
    from .simnet import (SimilarityMetric, build_graph, export_edge_csv,
                         save_graph)

    ds = load_dataset(args.input)
    metric = SimilarityMetric.parse(args.metric)
    g = build_graph(ds.X, ds.y, metric, args.threshold)
    save_graph(g, args.out)
    if args.edge_csv:
        export_edge_csv(g, args.edge_csv)
    print(f"graph {metric.label()}@{args.threshold:g}: "
          f"{g.stats.edge_count} edges, {g.stats.isolated_node_count} isolated "
          f"-> {args.out}")


def _base_config(args, dataset_path):
    from .harness import RunConfig

    return RunConfig(dataset=dataset_path, seed=args.seed, lr=args.lr,
                     weight_decay=args.weight_decay, epochs=args.epochs,
                     patience=args.patience, fan_out=args.fan_out,
                     batch_size=args.batch_size)


def _cmd_train(args):
    from dataclasses import asdict

    from .harness import (BASELINE_MODELS, RunConfig, config_hash,
                          split_masks, train_baseline, train_model)
    from .gnnlayers import model_spec
    from .ingest import load_dataset
    from .serve import Checkpoint, save_checkpoint
    from .simnet import SimilarityMetric, build_graph, save_graph

    os.makedirs(args.out_dir, exist_ok=True)
    ds = load_dataset(args.data)
    masks = split_masks(ds.y, args.seed)
    config = RunConfig(**{**asdict(_base_config(args, args.data)),
                          "metric": args.metric, "threshold": args.threshold,
                          "model": args.model})
    if args.model in BASELINE_MODELS:
        _, result = train_baseline(ds, args.model, masks, config)
    else:
        metric = SimilarityMetric.parse(args.metric)
        g = build_graph(ds.X, ds.y, metric, args.threshold)
        g.train_mask, g.eval_mask, g.test_mask = masks
        spec = model_spec(args.model)
        params, result = train_model(g, spec, config)
        graph_path = os.path.join(args.out_dir, "graph.bin")
        save_graph(g, graph_path)
        ckpt = Checkpoint(spec, params, metric, args.threshold,
                          ds.column_names, ds.column_kinds, ds.column_mins,
                          ds.column_maxs, ds.encoders, graph_path,
                          config_hash(config))
        save_checkpoint(ckpt, os.path.join(args.out_dir, "checkpoint.bin"))
    with open(os.path.join(args.out_dir, "result.json"), "w") as f:
        json.dump(result.to_payload(), f, indent=1, sort_keys=True)
    print(f"{args.model} on {args.metric}@{args.threshold:g}: "
          f"test accuracy {result.test_accuracy:.4f} "
          f"({result.epochs_run} epochs, {result.wall_clock_s:.1f}s)")


def _cmd_grid(args):
    from .harness import DEFAULT_GRID, run_grid

    grid = DEFAULT_GRID
    if args.metrics:
        grid = {m: DEFAULT_GRID[m] for m in args.metrics}
    run_grid(args.data, args.out_dir, args.seed, grid=grid,
             base_config=_base_config(args, args.data), workers=args.workers)
    print(f"grid results in {args.out_dir}/results.csv")


def _cmd_ablation(args):
    from .harness import run_ablation

    run_ablation(args.data, args.out_dir, args.seed,
                 base_config=_base_config(args, args.data))
    print(f"ablation results in {args.out_dir}/results.csv")


def _cmd_serve(args):
    from .serve import run_server

    run_server(args.checkpoint, args.graph, args.bind)


def _cmd_synth_data(args):
    from .datagen import write_replica_csv

    n = write_replica_csv(args.out, seed=args.seed)
    print(f"wrote {n} rows -> {args.out}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    np.seterr(all="warn")
    handlers = {
        "preprocess": _cmd_preprocess,
        "build-graph": _cmd_build_graph,
        "train": _cmd_train,
        "grid": _cmd_grid,
        "ablation": _cmd_ablation,
        "serve": _cmd_serve,
        "synth-data": _cmd_synth_data,
    }
    handlers[args.command](args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
