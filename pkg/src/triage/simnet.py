"""Patient-similarity graphs: pairwise metrics, thresholded CSR construction,
per-threshold statistics, and probe-node attachment for inductive inference.

Pairwise work is blocked over row tiles so an n x n score matrix is never a
required allocation; tiles are processed in row order so results are
deterministic regardless of thread count.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numba
import numpy as np

_MAGIC = b"PSNG"
_VERSION = 1
_BLOCK_ROWS = 256


@dataclass(frozen=True)
class SimilarityMetric:
    """One of the four edge rules.

    Cosine connects pairs *above* the threshold; the distance metrics connect
    pairs *below* it. Minkowski-p distances are divided by d**(1/p) so every
    distance over [0,1]^d inputs lands in [0,1].
    """

    kind: str  # cosine | euclidean | manhattan | minkowski
    p: float = 2.0

    def __post_init__(self):
        if self.kind not in ("cosine", "euclidean", "manhattan", "minkowski"):
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if self.kind == "manhattan":
            object.__setattr__(self, "p", 1.0)
        elif self.kind == "euclidean":
            object.__setattr__(self, "p", 2.0)
        elif self.kind == "minkowski" and self.p < 1.0:
            raise ValueError(f"minkowski exponent must be >= 1, got {self.p}")

    @property
    def is_similarity(self) -> bool:
        return self.kind == "cosine"

    def label(self) -> str:
        if self.kind == "minkowski":
            return f"minkowski{self.p:g}"
        return self.kind

    @staticmethod
    def parse(text: str) -> "SimilarityMetric":
        if text.startswith("minkowski"):
            return SimilarityMetric("minkowski", float(text[len("minkowski"):] or 2))
        return SimilarityMetric(text)


@dataclass
class GraphStats:
    metric: str
    threshold: float
    edge_count: int  # undirected pairs
    isolated_node_count: int


@dataclass
class PatientGraph:
    """Symmetric weighted adjacency in CSR form with node payloads.

    Targets are sorted within each row and self-edges are never stored;
    layers that need a self contribution add it analytically.
    """

    n: int
    csr_offsets: np.ndarray  # int64, n+1
    csr_targets: np.ndarray  # int32
    csr_weights: np.ndarray  # float32
    node_features: np.ndarray  # float64, n x d
    node_labels: np.ndarray  # int32
    train_mask: np.ndarray
    eval_mask: np.ndarray
    test_mask: np.ndarray
    stats: GraphStats
    _mirror: np.ndarray | None = field(default=None, repr=False)
    _prop_cache: dict = field(default_factory=dict, repr=False)

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.csr_offsets)

    def neighbors(self, u: int) -> np.ndarray:
        return self.csr_targets[self.csr_offsets[u]:self.csr_offsets[u + 1]]

    def mirror_permutation(self) -> np.ndarray:
        """Edge-position map p -> position of the reverse edge (lazy, cached)."""
        if self._mirror is None:
            self._mirror = _build_mirror(self.csr_offsets, self.csr_targets)
        return self._mirror


# ---------------------------------------------------------------------------
# pairwise scores


@numba.njit(parallel=True, cache=True)
def _pnorm_block(X, i0, i1, p, out):
    n, d = X.shape
    inv_d = 1.0 / d
    for bi in numba.prange(i1 - i0):
        i = i0 + bi
        for j in range(n):
            s = 0.0
            if p == 1.0:
                for k in range(d):
                    s += abs(X[i, k] - X[j, k])
                out[bi, j] = s * inv_d
            elif p == 4.0:
                for k in range(d):
                    t2 = (X[i, k] - X[j, k]) ** 2
                    s += t2 * t2
                out[bi, j] = (s * inv_d) ** 0.25
            elif p == 10.0:
                for k in range(d):
                    t2 = (X[i, k] - X[j, k]) ** 2
                    t4 = t2 * t2
                    s += t4 * t4 * t2
                out[bi, j] = (s * inv_d) ** 0.1
            else:
                for k in range(d):
                    s += abs(X[i, k] - X[j, k]) ** p
                out[bi, j] = (s * inv_d) ** (1.0 / p)


class PairwiseScores:
    """Blocked accessor over pairwise scores (similarity or normalized
    distance, depending on the metric). Never materializes n x n."""

    def __init__(self, X: np.ndarray, metric: SimilarityMetric):
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 2:
            raise ValueError("pairwise scores need an (n>=2) x d matrix")
        if np.isnan(X).any():
            raise ValueError("pairwise scores over NaN input")
        self.X = X
        self.n, self.d = X.shape
        self.metric = metric
        if metric.kind == "cosine":
            norms = np.sqrt((X * X).sum(axis=1))
            safe = np.where(norms > 0.0, norms, 1.0)
            self._Xn = X / safe[:, None]  # zero-norm rows become zero vectors
        elif metric.kind == "euclidean":
            self._sq = (X * X).sum(axis=1)

    def block(self, i0: int, i1: int) -> np.ndarray:
        """Scores of rows [i0, i1) against all n columns."""
        if self.metric.kind == "cosine":
            out = self._Xn[i0:i1] @ self._Xn.T
            np.clip(out, -1.0, 1.0, out=out)
            return out
        if self.metric.kind == "euclidean":
            d2 = self._sq[i0:i1, None] + self._sq[None, :] - 2.0 * (self.X[i0:i1] @ self.X.T)
            np.maximum(d2, 0.0, out=d2)
            return np.sqrt(d2 / self.d)
        out = np.empty((i1 - i0, self.n))
        _pnorm_block(self.X, i0, i1, self.metric.p, out)
        return out

    def row(self, i: int) -> np.ndarray:
        return self.block(i, i + 1)[0]

    def pair(self, i: int, j: int) -> float:
        return float(self.row(i)[j])

    def probe_row(self, x: np.ndarray) -> np.ndarray:
        """Scores of an external vector against every stored row."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.d,):
            raise ValueError(f"probe has dimension {x.shape}, expected ({self.d},)")
        stacked = np.vstack([x[None, :], self.X])
        return PairwiseScores(stacked, self.metric).block(0, 1)[0][1:]


def pairwise_scores(X: np.ndarray, metric: SimilarityMetric) -> PairwiseScores:
    return PairwiseScores(X, metric)


# ---------------------------------------------------------------------------
# graph construction


def _validate_threshold(metric: SimilarityMetric, threshold: float):
    if metric.is_similarity:
        if not -1.0 <= threshold <= 1.0:
            raise ValueError(f"cosine threshold must be in [-1,1]: {threshold}")
    elif not 0.0 <= threshold <= 1.0:
        raise ValueError(f"distance threshold must be in [0,1]: {threshold}")


def _pass_mask(block: np.ndarray, i0: int, metric: SimilarityMetric,
               threshold: float) -> np.ndarray:
    """Strict threshold rule over the upper triangle of one row tile."""
    b, n = block.shape
    if metric.is_similarity:
        ok = block > threshold
    else:
        ok = block < threshold
    cols = np.arange(n)[None, :]
    rows = (i0 + np.arange(b))[:, None]
    ok &= cols > rows
    return ok


@numba.njit(cache=True)
def _fill_csr(us, vs, ws, offsets, targets, weights):
    cursor = offsets[:-1].copy()
    for e in range(us.shape[0]):
        u = us[e]
        v = vs[e]
        w = ws[e]
        targets[cursor[u]] = v
        weights[cursor[u]] = w
        cursor[u] += 1
        targets[cursor[v]] = u
        weights[cursor[v]] = w
        cursor[v] += 1


@numba.njit(cache=True)
def _build_mirror(offsets, targets):
    m = targets.shape[0]
    mirror = np.empty(m, dtype=np.int64)
    n = offsets.shape[0] - 1
    for u in range(n):
        for p in range(offsets[u], offsets[u + 1]):
            v = targets[p]
            lo = offsets[v]
            hi = offsets[v + 1]
            while lo < hi:  # targets sorted within each row
                mid = (lo + hi) // 2
                if targets[mid] < u:
                    lo = mid + 1
                else:
                    hi = mid
            mirror[p] = lo
    return mirror


def build_graph(X: np.ndarray, labels: np.ndarray, metric: SimilarityMetric,
                threshold: float) -> PatientGraph:
    """Thresholded similarity graph; isolated nodes stay in the node set.

    Edge weights are the similarity value: raw cosine, or 1 - normalized
    distance for the distance metrics.
    """
    _validate_threshold(metric, threshold)
    scores = PairwiseScores(X, metric)
    n = scores.n
    u_parts, v_parts, w_parts = [], [], []
    for i0 in range(0, n, _BLOCK_ROWS):
        i1 = min(i0 + _BLOCK_ROWS, n)
        block = scores.block(i0, i1)
        ok = _pass_mask(block, i0, metric, threshold)
        bi, cols = np.nonzero(ok)
        u_parts.append((bi + i0).astype(np.int32))
        v_parts.append(cols.astype(np.int32))
        vals = block[bi, cols]
        if not metric.is_similarity:
            vals = 1.0 - vals
        w_parts.append(vals.astype(np.float32))
    us = np.concatenate(u_parts) if u_parts else np.empty(0, np.int32)
    vs = np.concatenate(v_parts) if v_parts else np.empty(0, np.int32)
    ws = np.concatenate(w_parts) if w_parts else np.empty(0, np.float32)

    deg = np.bincount(us, minlength=n) + np.bincount(vs, minlength=n)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(deg, out=offsets[1:])
    targets = np.empty(offsets[-1], dtype=np.int32)
    weights = np.empty(offsets[-1], dtype=np.float32)
    if us.size:
        _fill_csr(us, vs, ws, offsets, targets, weights)

    labels = np.asarray(labels, dtype=np.int32)
    stats = GraphStats(metric.label(), float(threshold),
                       int(us.size), int((deg == 0).sum()))
    zeros = np.zeros(n, dtype=bool)
    return PatientGraph(n, offsets, targets, weights,
                        np.ascontiguousarray(X, dtype=np.float64), labels,
                        zeros.copy(), zeros.copy(), zeros.copy(), stats)


def graph_stats(g: PatientGraph) -> GraphStats:
    deg = g.degrees
    return GraphStats(g.stats.metric, g.stats.threshold,
                      int(g.csr_targets.size // 2), int((deg == 0).sum()))


@numba.njit(parallel=True, cache=True)
def _tally_block(block, i0, thresholds, is_similarity, counts):
    b, n = block.shape
    T = thresholds.shape[0]
    for bi in numba.prange(b):
        i = i0 + bi
        for j in range(i + 1, n):
            s = block[bi, j]
            for t in range(T):
                if is_similarity:
                    if s > thresholds[t]:
                        counts[bi, t] += 1
                elif s < thresholds[t]:
                    counts[bi, t] += 1


def threshold_sweep(X: np.ndarray, labels: np.ndarray, metric: SimilarityMetric,
                    thresholds: list[float]) -> list[GraphStats]:
    """Edge/isolated-node statistics for every threshold in one pairwise pass."""
    thr = np.asarray(sorted(thresholds), dtype=np.float64)
    if list(thr) != list(thresholds):
        raise ValueError("thresholds must be sorted ascending")
    for t in thresholds:
        _validate_threshold(metric, t)
    scores = PairwiseScores(X, metric)
    n = scores.n
    edge_counts = np.zeros(thr.size, dtype=np.int64)
    # per-node best score against any *other* node
    best = np.full(n, -np.inf if metric.is_similarity else np.inf)
    for i0 in range(0, n, _BLOCK_ROWS):
        i1 = min(i0 + _BLOCK_ROWS, n)
        block = scores.block(i0, i1)
        counts = np.zeros((i1 - i0, thr.size), dtype=np.int64)
        _tally_block(block, i0, thr, metric.is_similarity, counts)
        edge_counts += counts.sum(axis=0)
        rows = np.arange(i0, i1)
        block[rows - i0, rows] = -np.inf if metric.is_similarity else np.inf
        if metric.is_similarity:
            best[i0:i1] = np.maximum(best[i0:i1], block.max(axis=1))
            np.maximum(best, block.max(axis=0), out=best)
        else:
            best[i0:i1] = np.minimum(best[i0:i1], block.min(axis=1))
            np.minimum(best, block.min(axis=0), out=best)
    out = []
    for t, c in zip(thr, edge_counts):
        if metric.is_similarity:
            isolated = int((best <= t).sum())
        else:
            isolated = int((best >= t).sum())
        out.append(GraphStats(metric.label(), float(t), int(c), isolated))
    return out


# ---------------------------------------------------------------------------
# probe attachment


@dataclass
class AttachedNeighborhood:
    """Edges from a probe vector into an existing graph (view; the base graph
    is never modified)."""

    graph: PatientGraph
    x: np.ndarray
    metric: SimilarityMetric
    threshold: float
    neighbor_ids: np.ndarray
    neighbor_weights: np.ndarray  # similarity scale, same convention as edges
    fallback_used: bool


def attach_node(g: PatientGraph, x_new: np.ndarray, metric: SimilarityMetric,
                threshold: float, fallback_k: int = 10) -> AttachedNeighborhood:
    """Connect a new patient vector to every node passing the threshold rule;
    with no qualifying node, fall back to the ``fallback_k`` nearest and flag
    the result."""
    _validate_threshold(metric, threshold)
    x_new = np.asarray(x_new, dtype=np.float64)
    if x_new.shape != (g.node_features.shape[1],):
        raise ValueError(
            f"probe dimension {x_new.shape} != ({g.node_features.shape[1]},)")
    scores = PairwiseScores(g.node_features, metric)
    row = scores.probe_row(x_new)
    if metric.is_similarity:
        ids = np.flatnonzero(row > threshold)
    else:
        ids = np.flatnonzero(row < threshold)
    fallback = ids.size == 0
    if fallback:
        k = min(fallback_k, g.n)
        order = np.argsort(-row if metric.is_similarity else row, kind="stable")
        ids = np.sort(order[:k])
    sims = row[ids] if metric.is_similarity else 1.0 - row[ids]
    return AttachedNeighborhood(g, x_new, metric, float(threshold),
                                ids.astype(np.int64), sims, fallback)


# ---------------------------------------------------------------------------
# persistence


def save_graph(g: PatientGraph, path: str):
    d = g.node_features.shape[1]
    trailer = json.dumps({"metric": g.stats.metric,
                          "threshold": g.stats.threshold}).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IQQQ", _VERSION, g.n, g.csr_targets.size // 2, d))
        f.write(g.csr_offsets.astype("<i8").tobytes())
        f.write(g.csr_targets.astype("<i4").tobytes())
        f.write(g.csr_weights.astype("<f4").tobytes())
        f.write(g.node_features.astype("<f8").tobytes())
        f.write(g.node_labels.astype("<i4").tobytes())
        for mask in (g.train_mask, g.eval_mask, g.test_mask):
            f.write(mask.astype(np.uint8).tobytes())
        f.write(struct.pack("<Q", len(trailer)))
        f.write(trailer)


def load_graph(path: str) -> PatientGraph:
    with open(path, "rb") as f:
        raw = f.read()
    buf = io.BytesIO(raw)
    magic = buf.read(4)
    if magic != _MAGIC:
        raise ValueError(f"not a patient-graph file (magic {magic!r})")
    version, n, pairs, d = struct.unpack("<IQQQ", buf.read(28))
    if version != _VERSION:
        raise ValueError(f"unsupported graph format version {version}")
    m = 2 * pairs

    def block(dtype, count):
        arr = np.frombuffer(buf.read(np.dtype(dtype).itemsize * count), dtype=dtype)
        if arr.size != count:
            raise ValueError("truncated graph file")
        return arr.copy()

    offsets = block("<i8", n + 1)
    targets = block("<i4", m)
    weights = block("<f4", m)
    features = block("<f8", n * d).reshape(n, d)
    labels = block("<i4", n)
    masks = [block(np.uint8, n).astype(bool) for _ in range(3)]
    trailer_len = struct.unpack("<Q", buf.read(8))[0]
    meta = json.loads(buf.read(trailer_len).decode())
    deg = np.diff(offsets)
    stats = GraphStats(meta["metric"], meta["threshold"],
                       int(pairs), int((deg == 0).sum()))
    return PatientGraph(int(n), offsets, targets.astype(np.int32),
                        weights.astype(np.float32), features,
                        labels.astype(np.int32), *masks, stats)


def export_edge_csv(g: PatientGraph, path: str):
    """Undirected edge list (u < v) for debugging."""
    with open(path, "w") as f:
        f.write("source,target,weight\n")
        for u in range(g.n):
            for p in range(g.csr_offsets[u], g.csr_offsets[u + 1]):
                v = g.csr_targets[p]
                if u < v:
                    f.write(f"{u},{v},{g.csr_weights[p]:.6f}\n")
