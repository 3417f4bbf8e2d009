"""Graph layers (GCN, GATv2, GraphSAGE) over CSR adjacency, the four model
assemblies used in the experiments, neighbor-sampled minibatch blocks for
SAGE training, and Glorot parameter initialization.

Sparse kernels are row-parallel numba loops; every output row is produced by
exactly one thread, so results are bit-identical for any thread count. The
adjacency is symmetric, which lets the transposed products in the backward
passes reuse the forward CSR (via the mirror permutation where a per-edge
value must follow the reversed edge).
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .simnet import PatientGraph

SLOPE = 0.2  # LeakyReLU negative slope inside attention scoring


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # gcn | gatv2 | sage
    in_dim: int
    out_dim: int  # per head for gatv2
    heads: int = 1
    combine: str = "concat"  # gatv2: concat | mean
    aggregator: str = "mean"  # sage: mean | max
    activation_after: bool = True
    dropout_after: bool = False

    def __post_init__(self):
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ValueError("layer dimensions must be positive")
        if self.heads < 1:
            raise ValueError("heads must be >= 1")
        if self.kind == "sage" and self.aggregator not in ("mean", "max"):
            raise ValueError(f"unknown aggregator {self.aggregator!r}")

    @property
    def width(self) -> int:
        if self.kind == "gatv2" and self.combine == "concat":
            return self.out_dim * self.heads
        return self.out_dim


@dataclass(frozen=True)
class ModelSpec:
    name: str
    layers: tuple
    lr: float = 0.01
    dropout_rate: float = 0.2
    input_dropout: bool = False

    @property
    def depth(self) -> int:
        return len(self.layers)


def model_spec(name: str, in_dim: int = 16, n_classes: int = 4) -> ModelSpec:
    """The four architectures, exactly as parameterized for the experiments."""
    if name == "gcn5":
        dims = [(in_dim, 64), (64, 64), (64, 64), (64, 64), (64, n_classes)]
        layers = [LayerSpec("gcn", a, b, activation_after=i < 4, dropout_after=i < 4)
                  for i, (a, b) in enumerate(dims)]
        return ModelSpec(name, tuple(layers), lr=0.01)
    if name == "gcn4":
        dims = [(in_dim, 32), (32, 32), (32, 32), (32, n_classes)]
        layers = [LayerSpec("gcn", a, b, activation_after=i < 3, dropout_after=i < 3)
                  for i, (a, b) in enumerate(dims)]
        return ModelSpec(name, tuple(layers), lr=0.01)
    if name == "gat2":
        layers = [
            LayerSpec("gatv2", in_dim, 8, heads=4, combine="concat",
                      activation_after=True, dropout_after=True),
            LayerSpec("gatv2", 32, n_classes, heads=4, combine="mean",
                      activation_after=False, dropout_after=False),
        ]
        return ModelSpec(name, tuple(layers), lr=0.005, input_dropout=True)
    if name == "sage5":
        dims = [(in_dim, 64), (64, 32), (32, 16), (16, 8), (8, n_classes)]
        aggs = ["max", "max", "mean", "max", "max"]
        layers = [LayerSpec("sage", a, b, aggregator=aggs[i],
                            activation_after=i < 4, dropout_after=i == 3)
                  for i, (a, b) in enumerate(dims)]
        return ModelSpec(name, tuple(layers), lr=0.01)
    raise ValueError(f"unknown model {name!r}")


def sage_variant(removed_layers: list[int], hidden_width: int,
                 in_dim: int = 16, n_classes: int = 4) -> ModelSpec:
    """Ablation variant: drop the given 1-based layer positions from the
    5-layer SAGE stack and set every hidden width to ``hidden_width``."""
    base_aggs = ["max", "max", "mean", "max", "max"]
    keep = [i for i in range(5) if (i + 1) not in removed_layers]
    if not keep:
        raise ValueError("cannot remove every layer")
    n = len(keep)
    dims = []
    for pos in range(n):
        a = in_dim if pos == 0 else hidden_width
        b = n_classes if pos == n - 1 else hidden_width
        dims.append((a, b))
    layers = [LayerSpec("sage", a, b, aggregator=base_aggs[keep[pos]],
                        activation_after=pos < n - 1,
                        dropout_after=pos == n - 2 and n > 1)
              for pos, (a, b) in enumerate(dims)]
    name = "sage_rm" + "".join(str(i) for i in removed_layers) + f"_w{hidden_width}"
    return ModelSpec(name, tuple(layers), lr=0.01)


def init_params(spec: ModelSpec, seed: int) -> dict[str, Tensor]:
    """Glorot-uniform weights, zero biases; deterministic under the seed."""
    rng = np.random.default_rng(seed)

    def glorot(fan_in, fan_out, shape=None):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return Tensor(rng.uniform(-limit, limit, shape or (fan_in, fan_out)),
                      requires_grad=True)

    params: dict[str, Tensor] = {}
    for i, layer in enumerate(spec.layers):
        pre = f"layer{i}."
        if layer.kind == "gcn":
            params[pre + "W"] = glorot(layer.in_dim, layer.out_dim)
            params[pre + "b"] = Tensor(np.zeros(layer.out_dim), requires_grad=True)
        elif layer.kind == "sage":
            # the self and neighbor branches sum, so size their fan-in as one
            # (2*in -> out) operator to keep the output variance Glorot-flat
            params[pre + "Ws"] = glorot(2 * layer.in_dim, layer.out_dim,
                                        (layer.in_dim, layer.out_dim))
            params[pre + "Wn"] = glorot(2 * layer.in_dim, layer.out_dim,
                                        (layer.in_dim, layer.out_dim))
            params[pre + "b"] = Tensor(np.zeros(layer.out_dim), requires_grad=True)
        elif layer.kind == "gatv2":
            for h in range(layer.heads):
                params[f"{pre}h{h}.Ws"] = glorot(layer.in_dim, layer.out_dim)
                params[f"{pre}h{h}.Wt"] = glorot(layer.in_dim, layer.out_dim)
                params[f"{pre}h{h}.a"] = glorot(layer.out_dim, 1, (layer.out_dim,))
            params[pre + "b"] = Tensor(np.zeros(layer.width), requires_grad=True)
        else:
            raise ValueError(f"unknown layer kind {layer.kind!r}")
    return params


# ---------------------------------------------------------------------------
# sparse kernels


@numba.njit(parallel=True, cache=True)
def _spmm_plain(offsets, targets, H, out):
    n, d = out.shape
    for u in numba.prange(n):
        for k in range(d):
            out[u, k] = 0.0
        for p in range(offsets[u], offsets[u + 1]):
            v = targets[p]
            for k in range(d):
                out[u, k] += H[v, k]


@numba.njit(parallel=True, cache=True)
def _spmax(offsets, targets, H, out, argpos):
    n, d = out.shape
    for u in numba.prange(n):
        lo = offsets[u]
        hi = offsets[u + 1]
        for k in range(d):
            out[u, k] = 0.0
            argpos[u, k] = -1
        if hi > lo:
            for k in range(d):
                best = -1.7976931348623157e308
                bestp = -1
                for p in range(lo, hi):
                    h = H[targets[p], k]
                    if h > best:
                        best = h
                        bestp = p
                out[u, k] = best
                argpos[u, k] = bestp


@numba.njit(cache=True)
def _spmax_backward(argpos, targets, up, dH):
    n, d = argpos.shape
    for u in range(n):
        for k in range(d):
            p = argpos[u, k]
            if p >= 0:
                dH[targets[p], k] += up[u, k]


@numba.njit(parallel=True, cache=True)
def _gat_forward(offsets, targets, s, t, a, out, alpha, alpha_self):
    n, d = s.shape
    for u in numba.prange(n):
        lo = offsets[u]
        hi = offsets[u + 1]
        # raw scores: self edge plus row edges
        e_self = 0.0
        for k in range(d):
            z = s[u, k] + t[u, k]
            e_self += a[k] * (z if z > 0.0 else SLOPE * z)
        m = e_self
        for p in range(lo, hi):
            v = targets[p]
            e = 0.0
            for k in range(d):
                z = s[u, k] + t[v, k]
                e += a[k] * (z if z > 0.0 else SLOPE * z)
            alpha[p] = e
            if e > m:
                m = e
        denom = np.exp(e_self - m)
        alpha_self[u] = denom
        for p in range(lo, hi):
            w = np.exp(alpha[p] - m)
            alpha[p] = w
            denom += w
        alpha_self[u] /= denom
        for k in range(d):
            out[u, k] = alpha_self[u] * t[u, k]
        for p in range(lo, hi):
            alpha[p] /= denom
            v = targets[p]
            for k in range(d):
                out[u, k] += alpha[p] * t[v, k]


@numba.njit(parallel=True, cache=True)
def _gat_backward_rows(offsets, targets, s, t, a, alpha, alpha_self, up,
                       de, de_self, ds, da_rows):
    n, d = s.shape
    for u in numba.prange(n):
        lo = offsets[u]
        hi = offsets[u + 1]
        # d(loss)/d(score) through the row softmax
        g_self = 0.0
        for k in range(d):
            g_self += up[u, k] * t[u, k]
        dot = alpha_self[u] * g_self
        for p in range(lo, hi):
            v = targets[p]
            g = 0.0
            for k in range(d):
                g += up[u, k] * t[v, k]
            de[p] = g
            dot += alpha[p] * g
        de_self[u] = alpha_self[u] * (g_self - dot)
        for p in range(lo, hi):
            de[p] = alpha[p] * (de[p] - dot)
        # chain through LeakyReLU into s_u and the attention vector
        for k in range(d):
            z = s[u, k] + t[u, k]
            slope = 1.0 if z > 0.0 else SLOPE
            ds[u, k] = de_self[u] * a[k] * slope
            da_rows[u, k] = de_self[u] * (z if z > 0.0 else SLOPE * z)
        for p in range(lo, hi):
            v = targets[p]
            for k in range(d):
                z = s[u, k] + t[v, k]
                slope = 1.0 if z > 0.0 else SLOPE
                ds[u, k] += de[p] * a[k] * slope
                da_rows[u, k] += de[p] * (z if z > 0.0 else SLOPE * z)


@numba.njit(parallel=True, cache=True)
def _gat_backward_cols(offsets, targets, mirror, s, t, a, alpha, alpha_self,
                       up, de, de_self, dt):
    n, d = s.shape
    for v in numba.prange(n):
        # self edge of v's own attention row
        for k in range(d):
            z = s[v, k] + t[v, k]
            slope = 1.0 if z > 0.0 else SLOPE
            dt[v, k] = de_self[v] * a[k] * slope + alpha_self[v] * up[v, k]
        # contributions from every row u that attends to v
        for q in range(offsets[v], offsets[v + 1]):
            u = targets[q]
            p = mirror[q]  # position of edge (u -> v) in u's row
            for k in range(d):
                z = s[u, k] + t[v, k]
                slope = 1.0 if z > 0.0 else SLOPE
                dt[v, k] += de[p] * a[k] * slope + alpha[p] * up[u, k]


@numba.njit(cache=True)
def _bip_mean(offsets, targets, H, out):
    # sum first, scale after: matches the full-graph kernel bit-for-bit
    r, d = out.shape
    for u in range(r):
        lo = offsets[u]
        hi = offsets[u + 1]
        for k in range(d):
            out[u, k] = 0.0
        if hi > lo:
            for p in range(lo, hi):
                v = targets[p]
                for k in range(d):
                    out[u, k] += H[v, k]
            inv = 1.0 / (hi - lo)
            for k in range(d):
                out[u, k] *= inv


@numba.njit(cache=True)
def _bip_mean_backward(offsets, targets, up, dH):
    r, d = up.shape
    for u in range(r):
        lo = offsets[u]
        hi = offsets[u + 1]
        if hi > lo:
            inv = 1.0 / (hi - lo)
            for p in range(lo, hi):
                v = targets[p]
                for k in range(d):
                    dH[v, k] += up[u, k] * inv


# ---------------------------------------------------------------------------
# graph-level helpers


def _graph_arrays(g: PatientGraph):
    cache = g._prop_cache
    if "deg" not in cache:
        deg = g.degrees.astype(np.float64)
        cache["deg"] = deg
        cache["inv_sqrt"] = 1.0 / np.sqrt(deg + 1.0)
        cache["inv_deg"] = np.where(deg > 0.0, 1.0 / np.maximum(deg, 1.0), 0.0)
    return cache


def _gcn_propagate_data(g: PatientGraph, H: np.ndarray) -> np.ndarray:
    """A_hat @ H with A_hat = D^{-1/2} (A+I) D^{-1/2}, D the A+I degrees."""
    cache = _graph_arrays(g)
    inv = cache["inv_sqrt"]
    Hs = H * inv[:, None]
    out = np.empty_like(Hs)
    _spmm_plain(g.csr_offsets, g.csr_targets, np.ascontiguousarray(Hs), out)
    out += Hs
    out *= inv[:, None]
    return out


def gcn_propagate(H: Tensor, g: PatientGraph) -> Tensor:
    out = _gcn_propagate_data(g, H.data)
    # A_hat is symmetric, so the backward product reuses the forward kernel
    return ag.record_op([H], out, lambda up: [_gcn_propagate_data(g, up)])


def mean_aggregate(H: Tensor, g: PatientGraph) -> Tensor:
    cache = _graph_arrays(g)
    inv_deg = cache["inv_deg"]
    out = np.empty_like(H.data)
    _spmm_plain(g.csr_offsets, g.csr_targets, np.ascontiguousarray(H.data), out)
    out *= inv_deg[:, None]

    def backward(up):
        dH = np.empty_like(up)
        _spmm_plain(g.csr_offsets, g.csr_targets,
                    np.ascontiguousarray(up * inv_deg[:, None]), dH)
        return [dH]

    return ag.record_op([H], out, backward)


def max_aggregate(H: Tensor, g: PatientGraph) -> Tensor:
    out = np.empty_like(H.data)
    argpos = np.empty(H.data.shape, dtype=np.int64)
    _spmax(g.csr_offsets, g.csr_targets, np.ascontiguousarray(H.data), out, argpos)

    def backward(up):
        dH = np.zeros_like(up)
        _spmax_backward(argpos, g.csr_targets, up, dH)
        return [dH]

    return ag.record_op([H], out, backward)


def gat_attention(s: Tensor, t: Tensor, a: Tensor, g: PatientGraph) -> Tensor:
    """One attention head: scores a . LeakyReLU(s_u + t_v) over N(u) + {u},
    softmax per row, output sum alpha * t_v."""
    n, d = s.data.shape
    out = np.empty((n, d))
    alpha = np.empty(g.csr_targets.size)
    alpha_self = np.empty(n)
    sc = np.ascontiguousarray(s.data)
    tc = np.ascontiguousarray(t.data)
    _gat_forward(g.csr_offsets, g.csr_targets, sc, tc, a.data, out,
                 alpha, alpha_self)

    def backward(up):
        up = np.ascontiguousarray(up)
        de = np.empty_like(alpha)
        de_self = np.empty(n)
        ds = np.empty((n, d))
        da_rows = np.empty((n, d))
        _gat_backward_rows(g.csr_offsets, g.csr_targets, sc, tc, a.data,
                           alpha, alpha_self, up, de, de_self, ds, da_rows)
        dt = np.empty((n, d))
        _gat_backward_cols(g.csr_offsets, g.csr_targets, g.mirror_permutation(),
                           sc, tc, a.data, alpha, alpha_self, up, de, de_self, dt)
        return [ds, dt, da_rows.sum(axis=0)]

    return ag.record_op([s, t, a], out, backward)


def attention_coefficients(s: np.ndarray, t: np.ndarray, a: np.ndarray,
                           g: PatientGraph) -> tuple[np.ndarray, np.ndarray]:
    """Per-edge and per-self attention weights (inspection/testing helper)."""
    n, d = s.shape
    out = np.empty((n, d))
    alpha = np.empty(g.csr_targets.size)
    alpha_self = np.empty(n)
    _gat_forward(g.csr_offsets, g.csr_targets, np.ascontiguousarray(s),
                 np.ascontiguousarray(t), a, out, alpha, alpha_self)
    return alpha, alpha_self


# ---------------------------------------------------------------------------
# neighbor-sampled blocks


@dataclass
class SampledBlock:
    """One minibatch for SAGE: per-hop node id lists (level 0 = seeds, each
    level a prefix of the next) and per-hop sub-adjacency into the next
    level's positions."""

    seed_nodes: np.ndarray
    levels: list  # list of np.ndarray of global node ids
    adj: list  # list of (offsets int64, targets int32) aligned with levels[l]
    features: np.ndarray  # global node feature matrix


@numba.njit(cache=True)
def _expand_level(g_offsets, g_targets, cur, fan_out, draws, position_of):
    n_cur = cur.shape[0]
    next_ids = np.empty(n_cur * (fan_out + 1), dtype=np.int64)
    n_next = 0
    for i in range(n_cur):
        position_of[cur[i]] = i
        next_ids[n_next] = cur[i]
        n_next += 1
    offsets = np.empty(n_cur + 1, dtype=np.int64)
    offsets[0] = 0
    targets = np.empty(n_cur * fan_out, dtype=np.int32)
    m = 0
    draw_row = 0
    chosen = np.empty(fan_out, dtype=np.int64)
    for i in range(n_cur):
        u = cur[i]
        lo = g_offsets[u]
        deg = g_offsets[u + 1] - lo
        if deg <= fan_out:
            for p in range(lo, lo + deg):
                v = g_targets[p]
                pos = position_of[v]
                if pos < 0:
                    pos = n_next
                    position_of[v] = pos
                    next_ids[n_next] = v
                    n_next += 1
                targets[m] = pos
                m += 1
        else:
            # Floyd's sampling: fan_out distinct positions in [0, deg)
            n_chosen = 0
            for j in range(deg - fan_out, deg):
                r = int(draws[draw_row, n_chosen] * (j + 1))
                dup = False
                for c in range(n_chosen):
                    if chosen[c] == r:
                        dup = True
                        break
                chosen[n_chosen] = j if dup else r
                n_chosen += 1
            chosen[:n_chosen] = np.sort(chosen[:n_chosen])  # keep CSR order
            draw_row += 1
            for c in range(n_chosen):
                v = g_targets[lo + chosen[c]]
                pos = position_of[v]
                if pos < 0:
                    pos = n_next
                    position_of[v] = pos
                    next_ids[n_next] = v
                    n_next += 1
                targets[m] = pos
                m += 1
        offsets[i + 1] = m
    out_ids = next_ids[:n_next].copy()
    for i in range(n_next):  # reset scratch for the next call
        position_of[out_ids[i]] = -1
    return out_ids, offsets, targets[:m].copy()


def neighbor_sample(g: PatientGraph, seed_nodes: np.ndarray, fan_out: int = 10,
                    hops: int = 5, batch_size: int = 3000,
                    rng: np.random.Generator | None = None) -> list[SampledBlock]:
    """Partition seeds into batches and sample ``min(fan_out, degree)``
    neighbors per node per hop, without replacement, deterministically under
    the rng."""
    seed_nodes = np.asarray(seed_nodes, dtype=np.int64)
    if seed_nodes.size == 0:
        raise ValueError("neighbor_sample needs a non-empty seed set")
    if rng is None:
        rng = np.random.default_rng(0)
    order = rng.permutation(seed_nodes.size)
    shuffled = seed_nodes[order]
    position_of = np.full(g.n, -1, dtype=np.int64)
    blocks = []
    for start in range(0, shuffled.size, batch_size):
        chunk = shuffled[start:start + batch_size]
        levels = [chunk]
        adj = []
        for _ in range(hops):
            cur = levels[-1]
            degs = np.diff(g.csr_offsets)[cur]
            n_draws = int((degs > fan_out).sum())
            draws = rng.random((n_draws, fan_out))
            ids, offsets, targets = _expand_level(
                g.csr_offsets, g.csr_targets, cur, fan_out, draws, position_of)
            levels.append(ids)
            adj.append((offsets, targets))
        blocks.append(SampledBlock(chunk, levels, adj, g.node_features))
    return blocks


def bip_mean_aggregate(H: Tensor, offsets, targets, n_rows: int) -> Tensor:
    out = np.empty((n_rows, H.data.shape[1]))
    _bip_mean(offsets, targets, np.ascontiguousarray(H.data), out)

    def backward(up):
        dH = np.zeros_like(H.data)
        _bip_mean_backward(offsets, targets, np.ascontiguousarray(up), dH)
        return [dH]

    return ag.record_op([H], out, backward)


def bip_max_aggregate(H: Tensor, offsets, targets, n_rows: int) -> Tensor:
    out = np.empty((n_rows, H.data.shape[1]))
    argpos = np.empty(out.shape, dtype=np.int64)
    _spmax(offsets, targets, np.ascontiguousarray(H.data), out, argpos)

    def backward(up):
        dH = np.zeros_like(H.data)
        _spmax_backward(argpos, targets, np.ascontiguousarray(up), dH)
        return [dH]

    return ag.record_op([H], out, backward)


# ---------------------------------------------------------------------------
# layer and model forwards


def gcn_forward(layer: LayerSpec, H: Tensor, g: PatientGraph,
                params: dict, prefix: str) -> Tensor:
    W = params[prefix + "W"]
    b = params[prefix + "b"]
    if H.data is g.node_features:
        # constant input: A_hat @ X never changes, cache it across epochs
        cache = g._prop_cache
        if "AX" not in cache:
            cache["AX"] = _gcn_propagate_data(g, g.node_features)
        return ag.add(ag.matmul(Tensor(cache["AX"]), W), b)
    if layer.out_dim < layer.in_dim:
        return ag.add(gcn_propagate(ag.matmul(H, W), g), b)
    return ag.add(ag.matmul(gcn_propagate(H, g), W), b)


def sage_forward(layer: LayerSpec, H: Tensor, g: PatientGraph,
                 params: dict, prefix: str) -> Tensor:
    agg = max_aggregate if layer.aggregator == "max" else mean_aggregate
    if H.data is g.node_features:
        cache = g._prop_cache
        key = "aggX_" + layer.aggregator
        if key not in cache:
            cache[key] = agg(Tensor(g.node_features), g).data
        neigh = Tensor(cache[key])
    else:
        neigh = agg(H, g)
    out = ag.add(ag.matmul(H, params[prefix + "Ws"]),
                 ag.matmul(neigh, params[prefix + "Wn"]))
    return ag.add(out, params[prefix + "b"])


def gatv2_forward(layer: LayerSpec, H: Tensor, g: PatientGraph,
                  params: dict, prefix: str) -> Tensor:
    head_outs = []
    for h in range(layer.heads):
        s = ag.matmul(H, params[f"{prefix}h{h}.Ws"])
        t = ag.matmul(H, params[f"{prefix}h{h}.Wt"])
        head_outs.append(gat_attention(s, t, params[f"{prefix}h{h}.a"], g))
    if layer.combine == "concat":
        out = ag.concat(head_outs, axis=1)
    else:
        acc = head_outs[0]
        for o in head_outs[1:]:
            acc = ag.add(acc, o)
        out = ag.scale(acc, 1.0 / layer.heads)
    return ag.add(out, params[prefix + "b"])


def sage_forward_block(layer: LayerSpec, H: Tensor, offsets, targets,
                       n_rows: int, params: dict, prefix: str) -> Tensor:
    """Bipartite SAGE: the first n_rows inputs are the output nodes
    themselves (every level is a prefix of the next)."""
    self_part = ag.slice_rows(H, np.arange(n_rows))
    agg = bip_max_aggregate if layer.aggregator == "max" else bip_mean_aggregate
    neigh = agg(H, offsets, targets, n_rows)
    out = ag.add(ag.matmul(self_part, params[prefix + "Ws"]),
                 ag.matmul(neigh, params[prefix + "Wn"]))
    return ag.add(out, params[prefix + "b"])


def model_forward(spec: ModelSpec, params: dict, target,
                  training: bool = False,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Logits for a full graph (all models) or a SampledBlock (SAGE)."""
    if isinstance(target, SampledBlock):
        return _block_forward(spec, params, target, training, rng)
    g: PatientGraph = target
    if g.node_features.shape[1] != spec.layers[0].in_dim:
        raise ValueError(
            f"graph features have dim {g.node_features.shape[1]}, "
            f"model expects {spec.layers[0].in_dim}")
    H = Tensor(g.node_features)
    if spec.input_dropout:
        H = ag.dropout(H, spec.dropout_rate, training, rng)
    for i, layer in enumerate(spec.layers):
        prefix = f"layer{i}."
        if layer.kind == "gcn":
            H = gcn_forward(layer, H, g, params, prefix)
        elif layer.kind == "sage":
            H = sage_forward(layer, H, g, params, prefix)
        else:
            H = gatv2_forward(layer, H, g, params, prefix)
        if layer.activation_after:
            H = ag.relu(H)
        if layer.dropout_after:
            H = ag.dropout(H, spec.dropout_rate, training, rng)
    return H


def _block_forward(spec: ModelSpec, params: dict, block: SampledBlock,
                   training: bool, rng) -> Tensor:
    if any(layer.kind != "sage" for layer in spec.layers):
        raise ValueError("block forward is defined for SAGE stacks only")
    hops = len(block.adj)
    if hops != spec.depth:
        raise ValueError(f"block has {hops} hops, model depth is {spec.depth}")
    H = Tensor(block.features[block.levels[hops]])
    if spec.input_dropout:
        H = ag.dropout(H, spec.dropout_rate, training, rng)
    for i, layer in enumerate(spec.layers):
        level = hops - 1 - i  # produce representations at this level
        offsets, targets = block.adj[level]
        n_rows = block.levels[level].shape[0]
        H = sage_forward_block(layer, H, offsets, targets, n_rows,
                               params, f"layer{i}.")
        if layer.activation_after:
            H = ag.relu(H)
        if layer.dropout_after:
            H = ag.dropout(H, spec.dropout_rate, training, rng)
    return H
