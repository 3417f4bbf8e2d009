"""Minimal dense-tensor engine with reverse-mode differentiation.

Everything is float64. A ``Tape`` records operations in execution order
(already topological); ``Tape.backward`` replays the list in reverse,
accumulating gradients into leaf tensors. With no active tape, every op
is a plain forward computation, so inference pays no recording cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradientError(RuntimeError):
    """A gradient contained NaN or Inf; the step is refused, not clamped."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), self.requires_grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


_ACTIVE_TAPE: "Tape | None" = None


class Tape:
    """Ordered record of differentiable operations for one forward pass.

    A tape supports a single backward pass; call ``reset`` (or use a fresh
    tape) before reusing it for another forward.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, object]] = []
        self._spent = False

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("nested tapes are not supported")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def record(self, out: Tensor, backward_fn):
        self._records.append((out, backward_fn))

    def backward(self, loss: Tensor):
        if self._spent:
            raise RuntimeError("tape already consumed; reset before reuse")
        if loss.data.size != 1:
            raise ValueError("backward requires a scalar loss")
        self._spent = True
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self._records):
            if out.grad is None:
                continue
            fn(out.grad)

    def reset(self):
        self._records.clear()
        self._spent = False


def _accumulate(t: Tensor, g: np.ndarray):
    # accumulation is never in-place, so aliasing an upstream buffer is safe
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def record_op(inputs: list[Tensor], out_data: np.ndarray, backward_fn) -> Tensor:
    """Wrap a custom forward result so its backward participates in the tape.

    ``backward_fn(upstream)`` must return one gradient array per input
    (``None`` for non-differentiable slots). Used by the graph layers for
    their sparse kernels.
    """
    tape = _ACTIVE_TAPE
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        def _bw(upstream):
            grads = backward_fn(upstream)
            for t, g in zip(inputs, grads):
                if g is not None:
                    _accumulate(t, g)
        tape.record(out, _bw)
    return out


# ---------------------------------------------------------------------------
# elementwise / structural ops


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward(up):
        return [_unbroadcast(up, a.data.shape), _unbroadcast(up, b.data.shape)]

    return record_op([a, b], out, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backward(up):
        return [_unbroadcast(up * b.data, a.data.shape),
                _unbroadcast(up * a.data, b.data.shape)]

    return record_op([a, b], out, backward)


def scale(a: Tensor, s: float) -> Tensor:
    out = a.data * s
    return record_op([a], out, lambda up: [up * s])


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def backward(up):
        return [up @ b.data.T, a.data.T @ up]

    return record_op([a, b], out, backward)


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(up):
        return list(np.split(up, splits, axis=axis))

    return record_op(tensors, out, backward)


def slice_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx)
    out = a.data[idx]

    def backward(up):
        g = np.zeros_like(a.data)
        np.add.at(g, idx, up)
        return [g]

    return record_op([a], out, backward)


def tsum(a: Tensor) -> Tensor:
    out = np.array(a.data.sum())
    return record_op([a], out, lambda up: [np.full_like(a.data, float(up))])


def relu(x: Tensor) -> Tensor:
    # subgradient at 0 is 0
    mask = x.data > 0.0
    out = np.where(mask, x.data, 0.0)
    return record_op([x], out, lambda up: [up * mask])


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.data > 0.0
    out = np.where(mask, x.data, slope * x.data)
    return record_op([x], out, lambda up: [np.where(mask, up, slope * up)])


def dropout(x: Tensor, rate: float = 0.2, training: bool = False,
            rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-rate) so eval is identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0,1): {rate}")
    if not training or rate == 0.0:
        return record_op([x], x.data.copy(), lambda up: [up])
    if rng is None:
        raise ValueError("training-mode dropout requires an rng")
    keep = rng.random(x.data.shape) >= rate
    scale_ = 1.0 / (1.0 - rate)
    out = np.where(keep, x.data * scale_, 0.0)
    return record_op([x], out, lambda up: [np.where(keep, up * scale_, 0.0)])


# ---------------------------------------------------------------------------
# classification head


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - logsum

    def backward(up):
        softmax = np.exp(out)
        return [up - softmax * up.sum(axis=1, keepdims=True)]

    return record_op([x], out, backward)


def cross_entropy(logits: Tensor, targets: np.ndarray,
                  mask: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood over the masked rows."""
    targets = np.asarray(targets, dtype=np.int64)
    n = logits.data.shape[0]
    rows = np.arange(n) if mask is None else np.flatnonzero(np.asarray(mask))
    if rows.size == 0:
        raise ValueError("cross_entropy over an empty mask")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = np.array(-logp[rows, targets[rows]].mean())

    def backward(up):
        g = np.zeros_like(logits.data)
        p = np.exp(logp[rows])
        p[np.arange(rows.size), targets[rows]] -= 1.0
        g[rows] = p / rows.size
        return [g * float(up)]

    return record_op([logits], out, backward)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Per-parameter Adam moments; weight decay is coupled (added to grads)."""

    lr: float = 0.01
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState):
    """In-place Adam update from each parameter's accumulated ``.grad``."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass
class GradCheckReport:
    ok: bool
    worst_rel: float
    worst_param: str
    worst_index: tuple
    analytic: float
    numeric: float

    def __str__(self):
        status = "pass" if self.ok else "FAIL"
        return (f"grad_check {status}: worst rel err {self.worst_rel:.3e} at "
                f"{self.worst_param}{list(self.worst_index)} "
                f"(analytic {self.analytic:.6e}, numeric {self.numeric:.6e})")


def grad_check(f, params: dict[str, Tensor], rtol: float = 1e-4,
               h: float = 1e-5) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f(params)`` against central
    differences, elementwise. The caller keeps ``f`` away from kinks."""
    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        loss = f(params)
        tape.backward(loss)
    analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}

    worst = (0.0, "", (), 0.0, 0.0)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = f(params).item()
            flat[i] = orig - h
            lo = f(params).item()
            flat[i] = orig
            num = (hi - lo) / (2.0 * h)
            ana = analytic[name].reshape(-1)[i]
            rel = abs(ana - num) / max(1.0, abs(ana), abs(num))
            if rel > worst[0]:
                idx = np.unravel_index(i, p.data.shape)
                worst = (rel, name, idx, float(ana), float(num))
    return GradCheckReport(worst[0] <= rtol, *worst)
