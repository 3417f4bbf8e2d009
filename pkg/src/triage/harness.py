"""Experiment orchestration: stratified splits, the training loop with
early stopping, the metric x threshold x model grid, the SAGE ablation
study, and machine-readable result files.

Every cell's RNG streams derive from (master seed, cell index), so results
are bit-identical whether cells run serially or across workers. Wall-clock
timings are observational and live in the run log, never in the
deterministic result payload.
"""

from __future__ import annotations

import hashlib
import json
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .autograd import AdamState, Tape, adam_step, cross_entropy
from .baselines import knn_fit, knn_predict, svm_predict, svm_train
from .gnnlayers import (ModelSpec, init_params, model_forward, model_spec,
                        neighbor_sample, sage_variant)
from .ingest import Dataset, load_dataset
from .simnet import PatientGraph, SimilarityMetric, build_graph

GNN_MODELS = ("gcn5", "gcn4", "gat2", "sage5")
BASELINE_MODELS = ("knn", "svm")

# threshold sets from the published network-characteristics tables
DEFAULT_GRID = {
    "cosine": ([0.90, 0.92, 0.94, 0.95, 0.98], ["gcn5", "gat2", "sage5"]),
    "euclidean": ([0.20, 0.23, 0.25, 0.28, 0.31, 0.38], ["gcn4", "gat2", "sage5"]),
    "manhattan": ([0.10, 0.13, 0.22, 0.31, 0.33], ["gcn5", "gat2", "sage5"]),
    "minkowski10": ([0.20, 0.25, 0.30, 0.35, 0.40], ["sage5"]),
    "minkowski4": ([0.20, 0.25], ["sage5"]),
}

ABLATION_BASE_METRIC = "cosine"
ABLATION_BASE_THRESHOLD = 0.95
ABLATION_REMOVALS = ([2], [3], [4], [2, 3, 4])
ABLATION_WIDTHS = (8, 64)


@dataclass
class RunConfig:
    dataset: str = ""
    seed: int = 0
    metric: str = "cosine"
    threshold: float = 0.95
    model: str = "sage5"
    lr: float | None = None  # None: model default (0.01; 0.005 for gat2)
    weight_decay: float = 5e-4
    epochs: int = 200
    patience: int = 20
    fan_out: int = 10
    batch_size: int = 3000
    smote_k: int = 5
    ablation_variant: str = ""

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr is not None and self.lr < 0:
            raise ValueError("lr must be non-negative")

    def resolved_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        return 0.005 if self.model == "gat2" else 0.01


def config_hash(config: RunConfig) -> str:
    payload = json.dumps(asdict(config), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


@dataclass
class ExperimentResult:
    config_hash: str
    model: str
    metric: str
    threshold: float
    seed: int
    edge_count: int
    isolated_node_count: int
    train_losses: list[float]
    eval_accuracies: list[float]
    test_accuracy: float
    confusion: list[list[int]]
    best_epoch: int
    epochs_run: int
    wall_clock_s: float = field(default=0.0, compare=False)

    def to_payload(self) -> dict:
        d = asdict(self)
        d.pop("wall_clock_s")  # observational, breaks byte-stability
        return d


# ---------------------------------------------------------------------------
# splits


def split_masks(labels: np.ndarray, seed: int):
    """Stratified 70/21/9 train/test/eval masks, disjoint and exhaustive."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    n = labels.size
    train = np.zeros(n, dtype=bool)
    ev = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < 4:
            raise ValueError(f"class {c} has only {idx.size} samples")
        idx = idx[rng.permutation(idx.size)]
        n_held = int(round(0.30 * idx.size))
        n_eval = int(round(0.30 * n_held))
        ev[idx[:n_eval]] = True
        test[idx[n_eval:n_held]] = True
        train[idx[n_held:]] = True
    return train, ev, test


# ---------------------------------------------------------------------------
# training


def _rng_streams(seed: int, salt: int = 0):
    ss = np.random.SeedSequence([seed, salt])
    init_ss, dropout_ss, sampler_ss = ss.spawn(3)
    return (int(init_ss.generate_state(1)[0]),
            np.random.default_rng(dropout_ss),
            np.random.default_rng(sampler_ss))


def evaluate(params: dict, spec: ModelSpec, g: PatientGraph,
             mask: np.ndarray, n_classes: int = 4):
    """Eval-mode forward, argmax over the four logits."""
    logits = model_forward(spec, params, g, training=False).data
    preds = logits.argmax(axis=1)
    return _score(preds, g.node_labels, mask, n_classes)


def _score(preds, labels, mask, n_classes=4):
    idx = np.flatnonzero(mask)
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(labels[idx], preds[idx]):
        confusion[int(t), int(p)] += 1
    accuracy = float(np.trace(confusion) / max(idx.size, 1))
    return accuracy, confusion


def train_model(g: PatientGraph, spec: ModelSpec, config: RunConfig,
                stream_salt: int = 0):
    """Train on the train mask with per-epoch eval monitoring; keep the
    best-eval parameters; early stop after ``patience`` epochs without
    improvement."""
    if not g.train_mask.any():
        raise ValueError("graph has no train mask")
    t0 = time.perf_counter()
    init_seed, dropout_rng, sampler_rng = _rng_streams(config.seed, stream_salt)
    params = init_params(spec, init_seed)
    state = AdamState(lr=config.resolved_lr(), weight_decay=config.weight_decay)
    labels = g.node_labels
    train_ids = np.flatnonzero(g.train_mask)
    is_sage = all(layer.kind == "sage" for layer in spec.layers)

    train_losses: list[float] = []
    eval_accs: list[float] = []
    best_acc = -1.0
    best_epoch = -1
    best_params = None
    waited = 0
    for epoch in range(config.epochs):
        if is_sage:
            blocks = neighbor_sample(g, train_ids, fan_out=config.fan_out,
                                     hops=spec.depth,
                                     batch_size=config.batch_size,
                                     rng=sampler_rng)
            losses = []
            for block in blocks:
                for p in params.values():
                    p.zero_grad()
                with Tape() as tape:
                    logits = model_forward(spec, params, block, training=True,
                                           rng=dropout_rng)
                    loss = cross_entropy(logits, labels[block.seed_nodes])
                    tape.backward(loss)
                adam_step(params, state)
                losses.append(loss.item())
            train_losses.append(float(np.mean(losses)))
        else:
            for p in params.values():
                p.zero_grad()
            with Tape() as tape:
                logits = model_forward(spec, params, g, training=True,
                                       rng=dropout_rng)
                loss = cross_entropy(logits, labels, g.train_mask)
                tape.backward(loss)
            adam_step(params, state)
            train_losses.append(loss.item())

        acc, _ = evaluate(params, spec, g, g.eval_mask)
        eval_accs.append(acc)
        if acc > best_acc:
            best_acc = acc
            best_epoch = epoch
            best_params = {k: p.data.copy() for k, p in params.items()}
            waited = 0
        else:
            waited += 1
            if waited >= config.patience:
                break

    for k, p in params.items():
        p.data = best_params[k]
    test_acc, confusion = evaluate(params, spec, g, g.test_mask)
    result = ExperimentResult(
        config_hash=config_hash(config), model=spec.name,
        metric=g.stats.metric, threshold=g.stats.threshold,
        seed=config.seed, edge_count=g.stats.edge_count,
        isolated_node_count=g.stats.isolated_node_count,
        train_losses=train_losses, eval_accuracies=eval_accs,
        test_accuracy=test_acc, confusion=confusion.tolist(),
        best_epoch=best_epoch, epochs_run=len(train_losses),
        wall_clock_s=time.perf_counter() - t0)
    return params, result


def train_baseline(ds: Dataset, model_name: str, masks, config: RunConfig):
    """KNN / SVM on the tabular features, same masks as the GNN runs."""
    t0 = time.perf_counter()
    train, ev, test = masks
    X_train = ds.X[train]
    y_train = ds.y[train]
    if model_name == "knn":
        model = knn_fit(X_train, y_train, k=5)
        preds = knn_predict(model, ds.X)
    elif model_name == "svm":
        model = svm_train(X_train, y_train.astype(np.int64),
                          seed=config.seed)
        preds = svm_predict(model, ds.X)
    else:
        raise ValueError(f"unknown baseline {model_name!r}")
    test_acc, confusion = _score(preds, ds.y, test)
    eval_acc, _ = _score(preds, ds.y, ev)
    result = ExperimentResult(
        config_hash=config_hash(config), model=model_name,
        metric="tabular", threshold=0.0, seed=config.seed,
        edge_count=0, isolated_node_count=0, train_losses=[],
        eval_accuracies=[eval_acc], test_accuracy=test_acc,
        confusion=confusion.tolist(), best_epoch=0, epochs_run=0,
        wall_clock_s=time.perf_counter() - t0)
    return model, result


# ---------------------------------------------------------------------------
# grid and ablation


def grid_cells(grid: dict | None = None) -> list[dict]:
    """Deterministic enumeration of (metric, threshold, model) cells."""
    grid = grid if grid is not None else DEFAULT_GRID
    cells = []
    for metric_name in sorted(grid):
        thresholds, models = grid[metric_name]
        for threshold in thresholds:
            for model_name in models:
                cells.append({"metric": metric_name, "threshold": threshold,
                              "model": model_name})
    return cells


def _atomic_write(path: str, text: str):
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def _cell_filename(cell: dict, seed: int) -> str:
    return (f"{cell['metric']}_{cell['threshold']:g}_{cell['model']}"
            f"_seed{seed}.json")


def run_cell(ds: Dataset, cell: dict, cell_index: int, seed: int,
             base_config: RunConfig, masks,
             graph: PatientGraph | None = None) -> ExperimentResult:
    config = RunConfig(**{**asdict(base_config), "seed": seed,
                          "metric": cell["metric"],
                          "threshold": cell["threshold"],
                          "model": cell["model"]})
    if cell["model"] in BASELINE_MODELS:
        return train_baseline(ds, cell["model"], masks, config)[1]
    if graph is None:
        graph = build_graph(ds.X, ds.y, SimilarityMetric.parse(cell["metric"]),
                            cell["threshold"])
    graph.train_mask, graph.eval_mask, graph.test_mask = masks
    spec = model_spec(cell["model"])
    return train_model(graph, spec, config, stream_salt=cell_index)[1]


def _run_cell_worker(args):
    dataset_path, cell, cell_index, seed, base_config_dict, out_path = args
    ds = load_dataset(dataset_path)
    masks = split_masks(ds.y, seed)
    base = RunConfig(**base_config_dict)
    result = run_cell(ds, cell, cell_index, seed, base, masks)
    _atomic_write(out_path, json.dumps(result.to_payload(), indent=1,
                                       sort_keys=True))
    return result.wall_clock_s


def run_grid(dataset_path: str, out_dir: str, seed: int,
             grid: dict | None = None, base_config: RunConfig | None = None,
             workers: int = 1) -> list[str]:
    """One result file per cell; existing files are skipped, so interrupted
    runs resume to the identical final table. Returns the cell file paths."""
    cells = grid_cells(grid)
    base = base_config or RunConfig(dataset=dataset_path)
    cell_dir = os.path.join(out_dir, "cells")
    os.makedirs(cell_dir, exist_ok=True)
    paths = []
    jobs = []
    for i, cell in enumerate(cells):
        path = os.path.join(cell_dir, _cell_filename(cell, seed))
        paths.append(path)
        if os.path.exists(path):
            continue
        jobs.append((dataset_path, cell, i, seed, asdict(base), path))
    log_lines = []
    if workers > 1 and len(jobs) > 1:
        # spawn: the numba threading layer is not fork-safe
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            for job, wall in zip(jobs, pool.map(_run_cell_worker, jobs)):
                log_lines.append(f"{os.path.basename(job[5])}\t{wall:.2f}s")
    elif jobs:
        # sequential path shares the dataset and the current graph across
        # cells (cells are sorted, so equal (metric, threshold) are adjacent)
        ds = load_dataset(dataset_path)
        masks = split_masks(ds.y, seed)
        graph_key = None
        graph = None
        for job in jobs:
            _, cell, cell_index, _, _, path = job
            key = (cell["metric"], cell["threshold"])
            if cell["model"] not in BASELINE_MODELS and key != graph_key:
                graph = build_graph(ds.X, ds.y,
                                    SimilarityMetric.parse(cell["metric"]),
                                    cell["threshold"])
                graph_key = key
            g = None if cell["model"] in BASELINE_MODELS else graph
            result = run_cell(ds, cell, cell_index, seed, base, masks, g)
            _atomic_write(path, json.dumps(result.to_payload(), indent=1,
                                           sort_keys=True))
            log_lines.append(f"{os.path.basename(path)}\t"
                             f"{result.wall_clock_s:.2f}s")
    if log_lines:
        with open(os.path.join(out_dir, "runlog.txt"), "a") as f:
            f.write("\n".join(log_lines) + "\n")
    emit_results(paths, out_dir)
    return paths


def ablation_specs() -> list[ModelSpec]:
    specs = [model_spec("sage5")]
    for removed in ABLATION_REMOVALS:
        for width in ABLATION_WIDTHS:
            specs.append(sage_variant(list(removed), width))
    return specs


def run_ablation(dataset_path: str, out_dir: str, seed: int,
                 base_config: RunConfig | None = None) -> list[str]:
    """Base SAGE plus the eight remove-layer/width variants on the
    cosine-0.95 graph."""
    ds = load_dataset(dataset_path)
    masks = split_masks(ds.y, seed)
    graph = build_graph(ds.X, ds.y, SimilarityMetric(ABLATION_BASE_METRIC),
                        ABLATION_BASE_THRESHOLD)
    graph.train_mask, graph.eval_mask, graph.test_mask = masks
    base = base_config or RunConfig(dataset=dataset_path)
    cell_dir = os.path.join(out_dir, "cells")
    os.makedirs(cell_dir, exist_ok=True)
    paths = []
    for i, spec in enumerate(ablation_specs()):
        path = os.path.join(cell_dir, f"ablation_{spec.name}_seed{seed}.json")
        paths.append(path)
        if os.path.exists(path):
            continue
        config = RunConfig(**{**asdict(base), "seed": seed,
                              "metric": ABLATION_BASE_METRIC,
                              "threshold": ABLATION_BASE_THRESHOLD,
                              "model": "sage5", "ablation_variant": spec.name})
        _, result = train_model(graph, spec, config, stream_salt=1000 + i)
        result.model = spec.name
        _atomic_write(path, json.dumps(result.to_payload(), indent=1,
                                       sort_keys=True))
    emit_results(paths, out_dir)
    return paths


def emit_results(cell_paths: list[str], out_dir: str):
    """Aggregate per-cell files into results.csv plus a plot-ready
    long-format table (accuracy against threshold per metric and model)."""
    rows = []
    for path in cell_paths:
        if not os.path.exists(path):
            continue
        with open(path) as f:
            rows.append(json.load(f))
    rows.sort(key=lambda r: (r["metric"], r["threshold"], r["model"], r["seed"]))
    header = ("metric,threshold,model,seed,config_hash,edge_count,"
              "isolated_nodes,test_accuracy,best_epoch,epochs_run\n")
    lines = [header]
    for r in rows:
        lines.append(
            f"{r['metric']},{r['threshold']:g},{r['model']},{r['seed']},"
            f"{r['config_hash']},{r['edge_count']},{r['isolated_node_count']},"
            f"{r['test_accuracy']:.6f},{r['best_epoch']},{r['epochs_run']}\n")
    _atomic_write(os.path.join(out_dir, "results.csv"), "".join(lines))
    long_lines = ["metric,threshold,model,accuracy\n"]
    for r in rows:
        long_lines.append(f"{r['metric']},{r['threshold']:g},{r['model']},"
                          f"{r['test_accuracy']:.6f}\n")
    _atomic_write(os.path.join(out_dir, "plot_long.csv"), "".join(long_lines))


def load_results(out_dir: str) -> list[dict]:
    cell_dir = os.path.join(out_dir, "cells")
    rows = []
    for name in sorted(os.listdir(cell_dir)):
        if name.endswith(".json"):
            with open(os.path.join(cell_dir, name)) as f:
                rows.append(json.load(f))
    return rows
