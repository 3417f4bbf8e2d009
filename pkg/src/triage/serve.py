"""Model persistence and inductive triage prediction.

A new patient record is encoded and scaled with the checkpoint's stored
parameters, attached to the similarity graph by the training threshold rule,
and classified by a forward pass restricted to the probe's receptive field
(message passing is local, so this equals full recomputation). The base
graph is never modified.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass

import numba
import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .autograd import Tensor
from .gnnlayers import LayerSpec, ModelSpec, model_forward
from .ingest import SEVERITY_LEVELS, UnknownCategoryError, scale_record
from .simnet import (AttachedNeighborhood, GraphStats, PatientGraph,
                     SimilarityMetric, attach_node)

_CKPT_MAGIC = b"PTCK"
_CKPT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, version-mismatched, or corrupted checkpoint file."""


class RecordValidationError(ValueError):
    """Schema-level problems with a submitted record (missing fields,
    non-numeric values, unknown fields)."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{f}: {m}" for f, m in errors))


@dataclass
class Checkpoint:
    spec: ModelSpec
    params: dict[str, Tensor]
    metric: SimilarityMetric
    threshold: float
    column_names: list[str]
    column_kinds: list[str]
    column_mins: np.ndarray
    column_maxs: np.ndarray
    encoders: dict[str, list[str]]
    graph_file: str
    config_hash: str


@dataclass
class PredictionResponse:
    predicted_class: str
    probabilities: list[float]
    neighbor_count: int
    top_neighbors: list[dict]  # node_id, label, similarity
    fallback_used: bool
    clamped_fields: list[str]
    matched_node: int | None
    model: str
    config_hash: str

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# checkpoint io


def save_checkpoint(ckpt: Checkpoint, path: str):
    names = list(ckpt.params)
    header = json.dumps({
        "spec": {
            "name": ckpt.spec.name,
            "lr": ckpt.spec.lr,
            "dropout_rate": ckpt.spec.dropout_rate,
            "input_dropout": ckpt.spec.input_dropout,
            "layers": [asdict(l) for l in ckpt.spec.layers],
        },
        "params": [{"name": k, "shape": list(ckpt.params[k].data.shape)}
                   for k in names],
        "metric": ckpt.metric.label(),
        "threshold": ckpt.threshold,
        "column_names": ckpt.column_names,
        "column_kinds": ckpt.column_kinds,
        "column_mins": ckpt.column_mins.tolist(),
        "column_maxs": ckpt.column_maxs.tolist(),
        "encoders": ckpt.encoders,
        "graph_file": ckpt.graph_file,
        "config_hash": ckpt.config_hash,
    }).encode()
    body = bytearray()
    body += _CKPT_MAGIC
    body += struct.pack("<IQ", _CKPT_VERSION, len(header))
    body += header
    for k in names:
        body += ckpt.params[k].data.astype("<f8").tobytes()
    digest = hashlib.sha256(bytes(body)).digest()
    with open(path, "wb") as f:
        f.write(bytes(body))
        f.write(digest)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 48 or raw[:4] != _CKPT_MAGIC:
        raise CheckpointError(f"not a checkpoint file: {path}")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch (truncated or corrupted)")
    version, header_len = struct.unpack("<IQ", raw[4:16])
    if version != _CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[16:16 + header_len].decode())
    layers = tuple(LayerSpec(**l) for l in header["spec"]["layers"])
    spec = ModelSpec(header["spec"]["name"], layers, lr=header["spec"]["lr"],
                     dropout_rate=header["spec"]["dropout_rate"],
                     input_dropout=header["spec"]["input_dropout"])
    params = {}
    off = 16 + header_len
    for entry in header["params"]:
        count = int(np.prod(entry["shape"]))
        arr = np.frombuffer(body[off:off + 8 * count], dtype="<f8")
        if arr.size != count:
            raise CheckpointError("checkpoint parameter block truncated")
        params[entry["name"]] = Tensor(arr.copy().reshape(entry["shape"]),
                                       requires_grad=True)
        off += 8 * count
    return Checkpoint(spec, params, SimilarityMetric.parse(header["metric"]),
                      header["threshold"], header["column_names"],
                      header["column_kinds"],
                      np.array(header["column_mins"]),
                      np.array(header["column_maxs"]), header["encoders"],
                      header["graph_file"], header["config_hash"])


# ---------------------------------------------------------------------------
# receptive-field machinery


@numba.njit(cache=True)
def _extract_subgraph(offsets, targets, weights, nodes, position_of):
    r = nodes.shape[0]
    sub_offsets = np.zeros(r + 1, dtype=np.int64)
    for i in range(r):
        u = nodes[i]
        cnt = 0
        for p in range(offsets[u], offsets[u + 1]):
            if position_of[targets[p]] >= 0:
                cnt += 1
        sub_offsets[i + 1] = sub_offsets[i] + cnt
    sub_targets = np.empty(sub_offsets[r], dtype=np.int32)
    sub_weights = np.empty(sub_offsets[r], dtype=np.float32)
    m = 0
    for i in range(r):
        u = nodes[i]
        for p in range(offsets[u], offsets[u + 1]):
            pos = position_of[targets[p]]
            if pos >= 0:
                sub_targets[m] = pos
                sub_weights[m] = weights[p]
                m += 1
    return sub_offsets, sub_targets, sub_weights


def receptive_field(g: PatientGraph, seeds: np.ndarray, hops: int) -> np.ndarray:
    """Sorted ids of every node within ``hops`` of the seed set."""
    visited = np.zeros(g.n, dtype=bool)
    visited[seeds] = True
    frontier = np.asarray(seeds, dtype=np.int64)
    for _ in range(hops):
        nxt = []
        for u in frontier:
            nbrs = g.neighbors(int(u))
            fresh = nbrs[~visited[nbrs]]
            if fresh.size:
                visited[fresh] = True
                nxt.append(fresh.astype(np.int64))
        if not nxt:
            break
        frontier = np.concatenate(nxt)
    return np.flatnonzero(visited)


def induced_subgraph(g: PatientGraph, nodes: np.ndarray):
    """Subgraph over ``nodes`` (sorted); returns the graph and the position
    lookup used to remap global ids."""
    position_of = np.full(g.n, -1, dtype=np.int64)
    position_of[nodes] = np.arange(nodes.size)
    offsets, targets, weights = _extract_subgraph(
        g.csr_offsets, g.csr_targets, g.csr_weights, nodes, position_of)
    zeros = np.zeros(nodes.size, dtype=bool)
    sub = PatientGraph(nodes.size, offsets, targets, weights,
                       np.ascontiguousarray(g.node_features[nodes]),
                       g.node_labels[nodes], zeros.copy(), zeros.copy(),
                       zeros.copy(),
                       GraphStats(g.stats.metric, g.stats.threshold,
                                  int(targets.size // 2),
                                  int((np.diff(offsets) == 0).sum())))
    # normalization must keep the base graph's degrees: interior rows are
    # complete, and boundary rows (whose degrees the cut truncates) never
    # reach the readout nodes within the model's depth
    deg = g.degrees[nodes].astype(np.float64)
    sub._prop_cache["deg"] = deg
    sub._prop_cache["inv_sqrt"] = 1.0 / np.sqrt(deg + 1.0)
    sub._prop_cache["inv_deg"] = np.where(deg > 0.0,
                                          1.0 / np.maximum(deg, 1.0), 0.0)
    return sub, position_of


def restricted_logits(spec: ModelSpec, params: dict, g: PatientGraph,
                      node: int) -> np.ndarray:
    """The model's logits at one node, computed over its receptive field
    only; equals the full-graph forward because message passing is local."""
    field = receptive_field(g, np.array([node]), spec.depth)
    sub, position_of = induced_subgraph(g, field)
    logits = model_forward(spec, params, sub, training=False).data
    return logits[position_of[node]]


def _forward_with_intermediates(spec: ModelSpec, params: dict,
                                g: PatientGraph) -> list[np.ndarray]:
    """Eval-mode forward capturing the input of every layer."""
    from . import autograd as ag
    from .gnnlayers import gatv2_forward, gcn_forward, sage_forward

    inputs = []
    H = Tensor(g.node_features)
    for i, layer in enumerate(spec.layers):
        inputs.append(H.data)
        prefix = f"layer{i}."
        if layer.kind == "gcn":
            H = gcn_forward(layer, H, g, params, prefix)
        elif layer.kind == "sage":
            H = sage_forward(layer, H, g, params, prefix)
        else:
            H = gatv2_forward(layer, H, g, params, prefix)
        if layer.activation_after:
            H = ag.relu(H)
    return inputs


def _probe_layer(layer: LayerSpec, params: dict, prefix: str,
                 probe_rep: np.ndarray, H: np.ndarray,
                 neighbor_pos: np.ndarray, base_degrees: np.ndarray):
    """One ghost-layer step: the probe sees its neighbors' representations
    but the base graph's message passing is untouched."""

    def leaky(z):
        return np.where(z > 0.0, z, 0.2 * z)

    if layer.kind == "gcn":
        W = params[prefix + "W"].data
        b = params[prefix + "b"].data
        d_probe = neighbor_pos.size + 1.0
        inv_probe = 1.0 / np.sqrt(d_probe)
        inv_base = 1.0 / np.sqrt(base_degrees[neighbor_pos] + 1.0)
        agg = (H[neighbor_pos] * inv_base[:, None]).sum(axis=0) * inv_probe
        agg += probe_rep / d_probe
        return agg @ W + b
    if layer.kind == "sage":
        Ws = params[prefix + "Ws"].data
        Wn = params[prefix + "Wn"].data
        b = params[prefix + "b"].data
        if neighbor_pos.size:
            if layer.aggregator == "max":
                agg = H[neighbor_pos].max(axis=0)
            else:
                agg = H[neighbor_pos].sum(axis=0) / neighbor_pos.size
        else:
            agg = np.zeros(H.shape[1])
        return probe_rep @ Ws + agg @ Wn + b
    # gatv2: attention over neighbors plus the probe itself
    head_outs = []
    for h in range(layer.heads):
        Ws = params[f"{prefix}h{h}.Ws"].data
        Wt = params[f"{prefix}h{h}.Wt"].data
        a = params[f"{prefix}h{h}.a"].data
        s_p = probe_rep @ Ws
        t_p = probe_rep @ Wt
        t_n = H[neighbor_pos] @ Wt
        cand_t = np.vstack([t_n, t_p[None, :]])
        scores = leaky(s_p[None, :] + cand_t) @ a
        w = np.exp(scores - scores.max())
        w /= w.sum()
        head_outs.append(w @ cand_t)
    if layer.combine == "concat":
        out = np.concatenate(head_outs)
    else:
        out = np.mean(head_outs, axis=0)
    return out + params[prefix + "b"].data


def probe_logits(spec: ModelSpec, params: dict, g: PatientGraph,
                 x: np.ndarray, attachment: AttachedNeighborhood) -> np.ndarray:
    """Ghost-node logits: messages flow from the graph into the probe; the
    probe never alters the base nodes' computation."""
    field = receptive_field(g, attachment.neighbor_ids, max(spec.depth - 1, 0))
    sub, position_of = induced_subgraph(g, field)
    inputs = _forward_with_intermediates(spec, params, sub)
    neighbor_pos = position_of[attachment.neighbor_ids]
    base_degrees = g.degrees[field].astype(np.float64)
    probe_rep = x
    for i, layer in enumerate(spec.layers):
        probe_rep = _probe_layer(layer, params, f"layer{i}.", probe_rep,
                                 inputs[i], neighbor_pos, base_degrees)
        if layer.activation_after:
            probe_rep = np.maximum(probe_rep, 0.0)
    return probe_rep


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


# ---------------------------------------------------------------------------
# prediction


def encode_record(ckpt: Checkpoint, record: dict) -> tuple[np.ndarray, list[str]]:
    """Validate and encode a raw 16-field record with the stored encoders
    and scalers; returns the scaled vector and any clamped column names."""
    errors = []
    for key in record:
        if key not in ckpt.column_names:
            errors.append((key, "unknown field"))
    values = np.zeros(len(ckpt.column_names))
    unknown_category = None
    for j, (name, kind) in enumerate(zip(ckpt.column_names, ckpt.column_kinds)):
        if name not in record or record[name] is None or record[name] == "":
            errors.append((name, "missing field"))
            continue
        v = record[name]
        if name in ckpt.encoders:
            try:
                values[j] = float(ckpt.encoders[name].index(str(v)))
            except ValueError:
                unknown_category = UnknownCategoryError(name, v)
        else:
            try:
                values[j] = float(v)
            except (TypeError, ValueError):
                errors.append((name, f"not a number: {v!r}"))
    if errors:
        raise RecordValidationError(errors)
    if unknown_category is not None:
        raise unknown_category
    scaled, clamped_idx = scale_record(values, ckpt.column_mins, ckpt.column_maxs)
    return scaled, [ckpt.column_names[j] for j in clamped_idx]


def predict_patient(ckpt: Checkpoint, g: PatientGraph,
                    record: dict, fallback_k: int = 10) -> PredictionResponse:
    x, clamped = encode_record(ckpt, record)
    attachment = attach_node(g, x, ckpt.metric, ckpt.threshold,
                             fallback_k=fallback_k)

    # a record that reproduces an existing node bit-for-bit gets that node's
    # own prediction (serving is idempotent for known patients)
    matched = None
    if attachment.neighbor_ids.size:
        cand = attachment.neighbor_ids[np.argmax(attachment.neighbor_weights)]
        if np.abs(g.node_features[cand] - x).max() < 1e-12:
            matched = int(cand)
    if matched is not None:
        logits = restricted_logits(ckpt.spec, ckpt.params, g, matched)
    else:
        logits = probe_logits(ckpt.spec, ckpt.params, g, x, attachment)
    probs = _softmax(logits)

    order = np.argsort(-attachment.neighbor_weights, kind="stable")[:5]
    top = [{"node_id": int(attachment.neighbor_ids[i]),
            "label": SEVERITY_LEVELS[int(g.node_labels[attachment.neighbor_ids[i]])],
            "similarity": float(attachment.neighbor_weights[i])}
           for i in order]
    return PredictionResponse(
        predicted_class=SEVERITY_LEVELS[int(probs.argmax())],
        probabilities=[float(p) for p in probs],
        neighbor_count=int(attachment.neighbor_ids.size),
        top_neighbors=top,
        fallback_used=attachment.fallback_used,
        clamped_fields=clamped,
        matched_node=matched,
        model=ckpt.spec.name,
        config_hash=ckpt.config_hash)


# ---------------------------------------------------------------------------
# http api


def schema_payload(ckpt: Checkpoint) -> dict:
    fields = []
    for j, (name, kind) in enumerate(zip(ckpt.column_names, ckpt.column_kinds)):
        if name in ckpt.encoders:
            fields.append({"name": name, "kind": "categorical",
                           "allowed": ckpt.encoders[name]})
        else:
            fields.append({"name": name, "kind": "numeric",
                           "min": float(ckpt.column_mins[j]),
                           "max": float(ckpt.column_maxs[j])})
    return {"fields": fields,
            "target": {"name": "Severity", "values": SEVERITY_LEVELS}}


def http_api(ckpt: Checkpoint, g: PatientGraph):
    """FastAPI app exposing /v1/predict, /v1/health, /v1/schema.

    The console is served as static assets from another origin, so the API
    answers with permissive CORS headers (demonstrator; no authentication).
    """
    from fastapi.middleware.cors import CORSMiddleware

    app = FastAPI(title="triage", docs_url=None, redoc_url=None)
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "model": ckpt.spec.name,
                "config_hash": ckpt.config_hash,
                "metric": ckpt.metric.label(), "threshold": ckpt.threshold,
                "nodes": g.n, "edges": g.stats.edge_count}

    @app.get("/v1/schema")
    def schema():
        return schema_payload(ckpt)

    @app.post("/v1/predict")
    async def predict(request: Request):
        try:
            record = await request.json()
        except Exception:
            return JSONResponse(status_code=400,
                                content={"errors": [{"field": "",
                                                     "message": "invalid JSON body"}]})
        if not isinstance(record, dict):
            return JSONResponse(status_code=400,
                                content={"errors": [{"field": "",
                                                     "message": "body must be an object"}]})
        try:
            response = predict_patient(ckpt, g, record)
        except RecordValidationError as e:
            return JSONResponse(status_code=400,
                                content={"errors": [{"field": f, "message": m}
                                                    for f, m in e.errors]})
        except UnknownCategoryError as e:
            return JSONResponse(status_code=422,
                                content={"errors": [{"field": e.column,
                                                     "message": f"unknown category {e.value!r}"}]})
        except Exception:
            # never leak internals
            return JSONResponse(status_code=500,
                                content={"error": "internal error"})
        return response.to_dict()

    return app


def run_server(checkpoint_path: str, graph_path: str, bind: str = "127.0.0.1:8000"):
    import uvicorn

    from .simnet import load_graph

    ckpt = load_checkpoint(checkpoint_path)
    g = load_graph(graph_path)
    host, _, port = bind.partition(":")
    app = http_api(ckpt, g)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000),
                log_level="warning")
