"""Dense float64 tensors with reverse-mode automatic differentiation.

A `Tape` records every primitive application in execution order; `backward`
walks the records in reverse and accumulates gradients into the `grad`
buffer of every `requires_grad` tensor that was touched. Constants
(`requires_grad=False` leaves) never receive gradients and their partials
are not computed.

Also houses the optimizer pieces the trainer needs: bias-corrected Adam
with decoupled weight decay, a cosine learning-rate schedule, inverted
dropout masks, and a versioned JSON checkpoint format.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NonScalarLoss, ShapeMismatch, StepOutOfRange

CHECKPOINT_MAGIC = "sacloc-checkpoint"
CHECKPOINT_VERSION = 1


class Tensor:
    """A float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.data.shape}, requires_grad={self.requires_grad})"


def _check(cond: bool, what: str, *shapes: tuple[int, ...]) -> None:
    if not cond:
        raise ShapeMismatch(f"{what}: " + " vs ".join(str(s) for s in shapes))


class Tape:
    """Execution record for one forward pass.

    Primitives are methods; each computes the forward value and, when
    recording, appends a backward rule. A non-recording tape evaluates
    forward only (used for inference).
    """

    def __init__(self, record: bool = True):
        self.record = record
        # (output, inputs, backward) with backward(g) -> per-input grads or None
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._on_tape: set[int] = set()
        self._leaves: dict[int, Tensor] = {}

    def _needs(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._on_tape

    def _push(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
        if self.record and any(self._needs(t) for t in inputs):
            self._nodes.append((out, inputs, backward))
            self._on_tape.add(id(out))
            for t in inputs:
                if t.requires_grad:
                    self._leaves[id(t)] = t
        return out

    # -- primitives ------------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        _check(a.data.ndim == 2 and b.data.ndim == 2 and a.shape[1] == b.shape[0],
               "matmul", a.shape, b.shape)
        out = Tensor(a.data @ b.data)
        need_a, need_b = self._needs(a), self._needs(b)

        def backward(g):
            return (g @ b.data.T if need_a else None,
                    a.data.T @ g if need_b else None)

        return self._push(out, (a, b), backward)

    def transpose(self, a: Tensor) -> Tensor:
        _check(a.data.ndim == 2, "transpose", a.shape)
        out = Tensor(np.ascontiguousarray(a.data.T))
        return self._push(out, (a,), lambda g: (np.ascontiguousarray(g.T),))

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        _check(a.shape == b.shape, "add", a.shape, b.shape)
        out = Tensor(a.data + b.data)
        return self._push(out, (a, b), lambda g: (g, g))

    def add_bias(self, x: Tensor, b: Tensor) -> Tensor:
        """Row-broadcast bias: (n, h) + (h,)."""
        _check(x.data.ndim == 2 and b.data.ndim == 1 and x.shape[1] == b.shape[0],
               "add_bias", x.shape, b.shape)
        out = Tensor(x.data + b.data[None, :])
        return self._push(out, (x, b), lambda g: (g, g.sum(axis=0)))

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        _check(a.shape == b.shape, "mul", a.shape, b.shape)
        out = Tensor(a.data * b.data)
        need_a, need_b = self._needs(a), self._needs(b)

        def backward(g):
            return (g * b.data if need_a else None,
                    g * a.data if need_b else None)

        return self._push(out, (a, b), backward)

    def scale(self, a: Tensor, c: float) -> Tensor:
        out = Tensor(a.data * c)
        return self._push(out, (a,), lambda g: (g * c,))

    def relu(self, a: Tensor) -> Tensor:
        out = Tensor(np.maximum(a.data, 0.0))
        active = a.data > 0.0
        return self._push(out, (a,), lambda g: (g * active,))

    def abs(self, a: Tensor) -> Tensor:
        out = Tensor(np.abs(a.data))
        sign = np.sign(a.data)
        return self._push(out, (a,), lambda g: (g * sign,))

    def masked_row_softmax(self, logits: Tensor, mask: np.ndarray) -> Tensor:
        """Softmax over the True entries of each row; all-False rows -> zeros."""
        _check(logits.data.ndim == 2 and mask.shape == logits.shape,
               "masked_row_softmax", logits.shape, mask.shape)
        mask = mask.astype(bool)
        masked = np.where(mask, logits.data, -np.inf)
        rowmax = np.max(masked, axis=1, keepdims=True)
        rowmax = np.where(np.isfinite(rowmax), rowmax, 0.0)
        e = np.exp(masked - rowmax)
        denom = e.sum(axis=1, keepdims=True)
        p = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0.0)
        out = Tensor(p)

        def backward(g):
            inner = (g * p).sum(axis=1, keepdims=True)
            return (p * (g - inner),)

        return self._push(out, (logits,), backward)

    def select_rows(self, x: Tensor, idx: np.ndarray) -> Tensor:
        _check(x.data.ndim == 2, "select_rows", x.shape)
        idx = np.asarray(idx, dtype=np.intp)
        out = Tensor(x.data[idx])

        def backward(g):
            dx = np.zeros_like(x.data)
            np.add.at(dx, idx, g)
            return (dx,)

        return self._push(out, (x,), backward)

    def concat_rows(self, parts: Sequence[Tensor]) -> Tensor:
        if not parts:
            raise ShapeMismatch("concat_rows: empty input")
        cols = parts[0].shape[1]
        for p in parts:
            _check(p.data.ndim == 2 and p.shape[1] == cols, "concat_rows", p.shape)
        out = Tensor(np.vstack([p.data for p in parts]))
        sizes = [p.shape[0] for p in parts]
        offsets = np.cumsum([0] + sizes)

        def backward(g):
            return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))

        return self._push(out, tuple(parts), backward)

    def sum_all(self, a: Tensor) -> Tensor:
        out = Tensor(a.data.sum())
        return self._push(out, (a,), lambda g: (np.full_like(a.data, float(g)),))

    def mean_all(self, a: Tensor) -> Tensor:
        out = Tensor(a.data.mean())
        return self._push(out, (a,), lambda g: (np.full_like(a.data, float(g) / a.data.size),))

    # -- reverse pass ------------------------------------------------------

    def gradients(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Reverse sweep; returns grads keyed by id() of requires_grad leaves."""
        if loss.data.size != 1:
            raise NonScalarLoss(f"loss has shape {loss.shape}")
        flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, backward in reversed(self._nodes):
            g = flowing.pop(id(out), None)
            if g is None:
                continue
            for t, gt in zip(inputs, backward(g)):
                if gt is None or not self._needs(t):
                    continue
                key = id(t)
                if key in flowing:
                    flowing[key] = flowing[key] + gt
                else:
                    flowing[key] = gt
        return {k: v for k, v in flowing.items() if k in self._leaves}

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into each touched leaf's grad buffer."""
        grads = self.gradients(loss)
        for key, leaf in self._leaves.items():
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)
            g = grads.get(key)
            if g is not None:
                leaf.grad += g


# -- optimizer ------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment buffers per parameter name, plus the step counter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """One bias-corrected Adam update with decoupled weight decay."""
    if lr < 0:
        raise ValueError("lr must be nonnegative")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"adam_step {name}: {g.shape} vs {p.data.shape}")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * p.data)


@dataclass(frozen=True)
class CosineSchedule:
    """Half-cosine decay from base_lr to min_lr over total_steps."""

    base_lr: float
    total_steps: int
    min_lr: float = 0.0

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if not 0.0 <= self.min_lr <= self.base_lr:
            raise ValueError("need 0 <= min_lr <= base_lr")


def cosine_lr(schedule: CosineSchedule, step: int) -> float:
    if not 0 <= step <= schedule.total_steps:
        raise StepOutOfRange(f"step {step} outside [0, {schedule.total_steps}]")
    span = schedule.base_lr - schedule.min_lr
    return schedule.min_lr + 0.5 * span * (1.0 + math.cos(math.pi * step / schedule.total_steps))


def dropout_mask(
    shape: tuple[int, ...],
    rate: float,
    rng: np.random.Generator,
    training: bool = True,
) -> Tensor:
    """Inverted dropout: Bernoulli(1-rate)/(1-rate) when training, else ones."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return Tensor(np.ones(shape))
    keep = rng.random(shape) >= rate
    return Tensor(keep / (1.0 - rate))


# -- checkpoints ----------------------------------------------------------


def save_checkpoint(
    path: str | Path,
    params: dict[str, Tensor],
    adam: Optional[AdamState] = None,
    step: int = 0,
    extra: Optional[dict] = None,
) -> None:
    """Write parameters (+ optional Adam state) as versioned JSON."""
    doc: dict = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "step": step,
        "params": {
            name: {"shape": list(p.data.shape), "data": p.data.ravel().tolist()}
            for name, p in params.items()
        },
        "extra": extra or {},
    }
    if adam is not None:
        doc["adam"] = {
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "eps": adam.eps,
            "weight_decay": adam.weight_decay,
            "t": adam.t,
            "m": {k: v.ravel().tolist() for k, v in adam.m.items()},
            "v": {k: v.ravel().tolist() for k, v in adam.v.items()},
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_checkpoint(path: str | Path) -> tuple[dict[str, Tensor], Optional[AdamState], int, dict]:
    """Inverse of save_checkpoint; validates the magic header."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    params = {
        name: Tensor(np.array(entry["data"]).reshape(entry["shape"]), requires_grad=True, name=name)
        for name, entry in doc["params"].items()
    }
    adam = None
    if "adam" in doc:
        a = doc["adam"]
        adam = AdamState(
            beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"],
            weight_decay=a["weight_decay"], t=a["t"],
            m={k: np.array(v).reshape(params[k].data.shape) for k, v in a["m"].items()},
            v={k: np.array(v).reshape(params[k].data.shape) for k, v in a["v"].items()},
        )
    return params, adam, doc.get("step", 0), doc.get("extra", {})
