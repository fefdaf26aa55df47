"""Reverse-mode automatic differentiation on dense float64 arrays.

A small tape engine: every operation returns a Tensor wired to its input
tensors together with a closure that turns the output gradient into input
gradients.  Gradients only flow toward tensors that (transitively) require
them, so frozen weights cost nothing in the backward pass.  Everything is
float64 with a fixed evaluation order: repeated runs on identical inputs
are bit-identical, and central finite differences agree with the backward
pass to better than 1e-6 relative error.

Also here because training needs them: the AdamW optimizer, warmup learning
rate schedules, a finite-difference gradient checker, and a binary format
for named weight collections.
"""

import enum
import math
import struct
import threading
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    BadVersionError,
    DuplicateIdError,
    EmptyOmegaError,
    ShapeMismatchError,
    TruncatedPayloadError,
)

_local = threading.local()


def _grad_enabled():
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad():
    """Run forward passes without recording anything on the tape."""
    previous = _grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


class Tensor:
    """Dense float64 array with an optional gradient and tape linkage."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def backward(self):
        """Accumulate d(self)/d(leaf) into .grad of every grad-requiring leaf.

        self must be scalar.  Leaf gradients add onto whatever is already
        stored, so calling backward on several losses accumulates, which is
        what gradient accumulation over micro-batches wants; use zero_grad
        to reset between optimizer steps.
        """
        if self.data.size != 1:
            raise ShapeMismatchError("backward() requires a scalar tensor")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _topo_order(root):
    """Post-order over the grad-requiring subgraph; reversed = root first."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad:
                stack.append((parent, False))
    return order


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def zero_grad(params):
    for p in params:
        p.grad = None


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# elementwise ops


def _check_pairwise(a, b):
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeMismatchError(
            "operands must have equal shapes or be scalar, got %s and %s"
            % (a.shape, b.shape)
        )


def _reduce_to(shape, g):
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape) if np.prod(shape, dtype=int) == 1 else g


def add(a, b):
    _check_pairwise(a, b)
    data = a.data + b.data

    def backward(gout):
        _accumulate(a, _reduce_to(a.data.shape, gout))
        _accumulate(b, _reduce_to(b.data.shape, gout))

    return _make(data, (a, b), backward)


def mul(a, b):
    _check_pairwise(a, b)
    data = a.data * b.data

    def backward(gout):
        _accumulate(a, _reduce_to(a.data.shape, gout * b.data))
        _accumulate(b, _reduce_to(b.data.shape, gout * a.data))

    return _make(data, (a, b), backward)


def scale(a, s):
    s = float(s)
    data = a.data * s

    def backward(gout):
        _accumulate(a, gout * s)

    return _make(data, (a,), backward)


def silu(x):
    sig = _sigmoid(x.data)
    data = x.data * sig

    def backward(gout):
        _accumulate(x, gout * sig * (1.0 + x.data * (1.0 - sig)))

    return _make(data, (x,), backward)


def clamp01(x):
    data = np.clip(x.data, 0.0, 1.0)
    inside = (x.data > 0.0) & (x.data < 1.0)

    def backward(gout):
        _accumulate(x, gout * inside)

    return _make(data, (x,), backward)


# ---------------------------------------------------------------------------
# structured ops


def conv2d(x, w, b, stride=1):
    """Same-padded 2-D cross-correlation.

    x: (N, C, H, W), w: (O, C, k, k) with odd k, b: (O,).  stride 1 keeps
    the spatial size; stride 2 halves it (rounding up).
    """
    if stride not in (1, 2):
        raise ValueError("stride must be 1 or 2")
    if x.data.ndim != 4 or w.data.ndim != 4 or b.data.ndim != 1:
        raise ShapeMismatchError("conv2d expects x rank 4, w rank 4, b rank 1")
    n, c, h, wid = x.shape
    o, cin, k, k2 = w.shape
    if cin != c or k != k2 or k % 2 == 0 or b.shape != (o,):
        raise ShapeMismatchError(
            "conv2d shapes inconsistent: x %s, w %s, b %s" % (x.shape, w.shape, b.shape)
        )
    pad = k // 2
    xpad = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xpad, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    cols = cols.reshape(n * oh * ow, c * k * k)
    wmat = w.data.reshape(o, c * k * k)
    out = (cols @ wmat.T).reshape(n, oh, ow, o).transpose(0, 3, 1, 2)
    out = out + b.data[None, :, None, None]

    def backward(gout):
        gmat = np.ascontiguousarray(gout.transpose(0, 2, 3, 1)).reshape(n * oh * ow, o)
        _accumulate(b, gout.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            _accumulate(w, (gmat.T @ cols).reshape(o, c, k, k))
        if x.requires_grad:
            gwin = (gmat @ wmat).reshape(n, oh, ow, c, k, k).transpose(0, 3, 1, 2, 4, 5)
            gpad = np.zeros_like(xpad)
            for i in range(k):
                for j in range(k):
                    gpad[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += (
                        gwin[:, :, :, :, i, j]
                    )
            _accumulate(x, gpad[:, :, pad:pad + h, pad:pad + wid])

    return _make(out, (x, w, b), backward)


def linear(v, w, b):
    """Affine map: v (E,) or (N, E), w (C, E), b (C,) -> (C,) or (N, C)."""
    if w.data.ndim != 2 or b.data.ndim != 1 or v.data.ndim not in (1, 2):
        raise ShapeMismatchError("linear expects v rank 1 or 2, w rank 2, b rank 1")
    cdim, e = w.shape
    if v.shape[-1] != e or b.shape != (cdim,):
        raise ShapeMismatchError(
            "linear shapes inconsistent: v %s, w %s, b %s" % (v.shape, w.shape, b.shape)
        )
    data = v.data @ w.data.T + b.data

    def backward(gout):
        if v.data.ndim == 1:
            _accumulate(b, gout)
            _accumulate(w, np.outer(gout, v.data))
        else:
            _accumulate(b, gout.sum(axis=0))
            _accumulate(w, gout.T @ v.data)
        _accumulate(v, gout @ w.data)

    return _make(data, (v, w, b), backward)


def add_chan(x, e):
    """Add a per-channel vector e of shape (C,) or (N, C) onto x (N, C, H, W)."""
    if x.data.ndim != 4 or e.data.ndim not in (1, 2):
        raise ShapeMismatchError("add_chan expects x rank 4 and e rank 1 or 2")
    if e.shape[-1] != x.shape[1] or (e.data.ndim == 2 and e.shape[0] != x.shape[0]):
        raise ShapeMismatchError(
            "add_chan channel mismatch: x %s, e %s" % (x.shape, e.shape)
        )
    data = x.data + e.data[..., None, None]

    def backward(gout):
        _accumulate(x, gout)
        if e.data.ndim == 1:
            _accumulate(e, gout.sum(axis=(0, 2, 3)))
        else:
            _accumulate(e, gout.sum(axis=(2, 3)))

    return _make(data, (x, e), backward)


def nearest_upsample2(x):
    """Duplicate every pixel of x (N, C, H, W) into a 2x2 block."""
    if x.data.ndim != 4:
        raise ShapeMismatchError("nearest_upsample2 expects rank 4")
    n, c, h, w = x.shape
    data = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(gout):
        _accumulate(x, gout.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _make(data, (x,), backward)


def reshape(x, shape):
    data = x.data.reshape(shape)

    def backward(gout):
        _accumulate(x, gout.reshape(x.data.shape))

    return _make(data, (x,), backward)


def matmul2d(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(
            "matmul2d shapes inconsistent: %s @ %s" % (a.shape, b.shape)
        )
    data = a.data @ b.data

    def backward(gout):
        _accumulate(a, gout @ b.data.T)
        _accumulate(b, a.data.T @ gout)

    return _make(data, (a, b), backward)


# ---------------------------------------------------------------------------
# reductions and losses


def tsum(x):
    data = np.asarray(x.data.sum())

    def backward(gout):
        _accumulate(x, np.full_like(x.data, float(gout)))

    return _make(data, (x,), backward)


def masked_mse(pred, target, omega):
    """Mean squared difference over the pixels where omega is set.

    omega is a boolean (H, W) array (or an object with a .bits one) matched
    against the trailing two axes of pred; leading axes are covered in full.
    Pixels outside omega contribute exactly zero to both the value and every
    gradient.
    """
    bits = np.asarray(getattr(omega, "bits", omega), dtype=bool)
    if not isinstance(target, Tensor):
        target = Tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatchError(
            "pred and target differ: %s vs %s" % (pred.shape, target.shape)
        )
    if bits.shape != pred.shape[-2:]:
        raise ShapeMismatchError(
            "omega %s does not match image shape %s" % (bits.shape, pred.shape[-2:])
        )
    full = np.broadcast_to(bits, pred.shape)
    count = int(np.count_nonzero(full))
    if count == 0:
        raise EmptyOmegaError("omega selects no pixels")
    diff = np.where(full, pred.data - target.data, 0.0)
    data = np.asarray((diff * diff).sum() / count)

    def backward(gout):
        g = (2.0 * float(gout) / count) * diff
        _accumulate(pred, g)
        _accumulate(target, -g)

    return _make(data, (pred, target), backward)


# ---------------------------------------------------------------------------
# optimizer


class AdamW:
    """AdamW with bias-corrected moments and decoupled weight decay."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        zero_grad(self.params)

    def step(self, lr=None):
        """Apply one update from the gradients currently stored on params."""
        lr = self.lr if lr is None else float(lr)
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeMismatchError("gradient shape does not match parameter")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= lr * (update + self.weight_decay * p.data)


# ---------------------------------------------------------------------------
# learning-rate schedules


class ScheduleKind(enum.Enum):
    ConstantWarmup = "constant-warmup"
    CosineWarmup = "cosine-warmup"


@dataclass(frozen=True)
class LrSchedule:
    kind: ScheduleKind
    warmup_steps: int
    total_steps: int
    base_lr: float

    def __post_init__(self):
        if self.warmup_steps < 0 or self.total_steps < 0:
            raise ValueError("schedule step counts must be non-negative")
        if self.warmup_steps > self.total_steps:
            raise ValueError("warmup_steps must not exceed total_steps")


def lr_at(schedule, step):
    """Learning rate at an integer step: linear warmup, then flat or cosine."""
    if step < 0:
        raise ValueError("step must be non-negative")
    warm = schedule.warmup_steps
    if warm > 0 and step < warm:
        return schedule.base_lr * step / warm
    if schedule.kind is ScheduleKind.ConstantWarmup:
        return schedule.base_lr
    span = schedule.total_steps - warm
    if span <= 0 or step >= schedule.total_steps:
        return 0.0
    return schedule.base_lr * 0.5 * (1.0 + math.cos(math.pi * (step - warm) / span))


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(fn, params, h=1e-5):
    """Max relative error between backward() and central finite differences.

    fn must be a zero-argument callable returning a scalar Tensor computed
    from params, and must be pure in them.  The relative error denominator
    is max(|analytic|, |numeric|, 1e-8) per element.
    """
    for p in params:
        p.grad = None
    fn().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]
    zero_grad(params)
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gfl = ga.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            with no_grad():
                fp = float(fn().data)
            flat[i] = keep - h
            with no_grad():
                fm = float(fn().data)
            flat[i] = keep
            numeric = (fp - fm) / (2.0 * h)
            rel = abs(gfl[i] - numeric) / max(abs(gfl[i]), abs(numeric), 1e-8)
            if rel > worst:
                worst = rel
    return worst


# ---------------------------------------------------------------------------
# weight checkpoint format

_SPMW_MAGIC = b"SPMW"
_SPMW_VERSION = 1


def save_weights(path, named):
    """Write named float64 arrays to a binary checkpoint.

    Layout: magic "SPMW", version u8, u32 tensor count; then per tensor a
    u16 name length, the UTF-8 name, a u8 rank, u32 dims, and the row-major
    float64 little-endian payload.  Iteration order of `named` is preserved.
    """
    blobs = [struct.pack("<4sBI", _SPMW_MAGIC, _SPMW_VERSION, len(named))]
    for name, value in named.items():
        arr = np.asarray(
            value.data if isinstance(value, Tensor) else value,
            dtype=np.float64, order="C",
        )
        raw = name.encode("utf-8")
        blobs.append(struct.pack("<H", len(raw)))
        blobs.append(raw)
        blobs.append(struct.pack("<B", arr.ndim))
        blobs.append(struct.pack("<%dI" % arr.ndim, *arr.shape))
        blobs.append(arr.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(blobs))


def load_weights(path):
    """Read a checkpoint written by save_weights back into {name: array}."""
    with open(path, "rb") as fh:
        buf = fh.read()

    def take(n):
        nonlocal off
        if off + n > len(buf):
            raise TruncatedPayloadError("checkpoint ends mid-record")
        piece = buf[off:off + n]
        off += n
        return piece

    off = 0
    magic, version, count = struct.unpack("<4sBI", take(9))
    if magic != _SPMW_MAGIC:
        raise BadMagicError("not a weight checkpoint: magic %r" % magic)
    if version != _SPMW_VERSION:
        raise BadVersionError("unsupported checkpoint version %d" % version)
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack("<%dI" % rank, take(4 * rank)) if rank else ()
        nelem = 1
        for d in dims:
            nelem *= d
        arr = np.frombuffer(take(8 * nelem), dtype="<f8").reshape(dims).copy()
        if name in out:
            raise DuplicateIdError("duplicate tensor name %r" % name)
        out[name] = arr
    if off != len(buf):
        raise TruncatedPayloadError("trailing bytes after last tensor")
    return out
