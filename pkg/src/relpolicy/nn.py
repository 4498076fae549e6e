"""A small reverse-mode autodiff engine over numpy arrays.

Only the operations the graph policy needs are provided. Every tensor is
float64; parameters live as views into one flat buffer owned by a
:class:`ParamStore`, so the optimizer runs as a handful of vector operations.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
from pathlib import Path

import numpy as np

from . import _kernels
from .exceptions import (
    AllMasked,
    BadSegmentIndex,
    ChecksumMismatch,
    NonFiniteGrad,
    NotScalar,
    ShapeMismatch,
)

MASK_VALUE = -1e9

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "is_param", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.is_param = False
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def _accum(self, g):
        if self.is_param:
            self.grad += g
        elif self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        if self.data.size != 1:
            raise NotScalar(f"backward() needs a scalar, got shape {self.shape}")
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accum(np.ones_like(self.data) if grad is None else np.asarray(grad, float))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if not node.is_param:
                    node._backward = None

    # arithmetic sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return add(self, neg(_t(o)))

    def __rsub__(self, o):
        return add(_t(o), neg(self))

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, o):
        if isinstance(o, Tensor):
            return mul(self, reciprocal(o))
        return mul(self, 1.0 / np.asarray(o, float))

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    @property
    def T(self):
        return transpose(self)


def _t(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.is_param = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b):
    a, b = _t(a), _t(b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def neg(a):
    return _make(-a.data, (a,), lambda g: a._accum(-g))


def mul(a, b):
    a, b = _t(a), _t(b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def reciprocal(a):
    y = 1.0 / a.data
    return _make(y, (a,), lambda g: a._accum(-g * y * y))


def square(a):
    return _make(a.data * a.data, (a,), lambda g: a._accum(2.0 * g * a.data))


def exp(a):
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: a._accum(g * y))


def log(a, floor=None):
    """Natural log. With ``floor``, inputs at or below it read as ``floor``
    and pass no gradient."""
    if floor is None:
        return _make(np.log(a.data), (a,), lambda g: a._accum(g / a.data))
    keep = a.data > floor
    safe = np.where(keep, a.data, floor)
    return _make(np.log(safe), (a,), lambda g: a._accum(np.where(keep, g / safe, 0.0)))


def tanh(a):
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: a._accum(g * (1.0 - y * y)))


def tsum(a, axis=None):
    y = a.data.sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape))

    return _make(np.asarray(y, float), (a,), backward)


def mean(a, axis=None):
    n = a.data.size if axis is None else a.data.shape[axis]
    return tsum(a, axis) * (1.0 / n)


def transpose(a):
    return _make(a.data.T, (a,), lambda g: a._accum(g.T))


def minimum(a, b):
    a, b = _t(a), _t(b)
    pick_a = a.data <= b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(np.where(pick_a, g, 0.0), a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.where(pick_a, 0.0, g), b.shape))

    return _make(np.minimum(a.data, b.data), (a, b), backward)


def clip(a, lo, hi):
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: a._accum(np.where(inside, g, 0.0)))


def matmul(a, b):
    a, b = _t(a), _t(b)

    def backward(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward)


def getitem(a, idx):
    y = a.data[idx]

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        a._accum(out)

    return _make(y, (a,), backward)


def take_rows(a, rows):
    """``a[rows]`` for a 2-D tensor.

    ``rows`` is an integer array or a :class:`SegmentIndex` grouping output
    rows by source row; the latter makes the backward a segment sum.
    """
    if isinstance(rows, SegmentIndex):
        y = a.data[rows.segment_of]
        return _make(y, (a,), lambda g: a._accum(rows.sum(g)))
    rows = np.asarray(rows, np.int64)
    y = a.data[rows]

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, rows, g)
        a._accum(out)

    return _make(y, (a,), backward)


def concat(tensors, axis=-1):
    tensors = [_t(t) for t in tensors]
    y = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, gi in zip(tensors, np.split(g, sizes, axis=axis)):
            if t.requires_grad:
                t._accum(gi)

    return _make(y, tuple(tensors), backward)


def affine(x, weight, bias=None, activation="tanh"):
    """``activation(x @ weight.T + bias)`` for a batch of row vectors."""
    x = _t(x)
    if x.shape[-1] != weight.shape[1]:
        raise ShapeMismatch(f"input width {x.shape[-1]} != layer input {weight.shape[1]}")
    z = x.data @ weight.data.T
    if bias is not None:
        z = z + bias.data
    y = np.tanh(z) if activation == "tanh" else z
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gz = g * (1.0 - y * y) if activation == "tanh" else g
        if x.requires_grad:
            x._accum(gz @ weight.data)
        if weight.requires_grad:
            weight._accum(gz.T @ x.data if gz.ndim == 2 else np.outer(gz, x.data))
        if bias is not None and bias.requires_grad:
            bias._accum(gz.sum(axis=0) if gz.ndim == 2 else gz)

    return _make(y, parents, backward)


def gather_affine(parts, weight, bias=None, activation="tanh"):
    """``affine(concat([x[rows] for x, rows in parts]), weight, bias)`` computed
    without materializing the gathered concatenation.

    Each part is ``(tensor, rows)``; ``rows`` is ``None`` (use rows as-is) or a
    :class:`SegmentIndex` whose ``segment_of`` selects source rows. Applying
    the weight slice at the source rows first is exact and much cheaper when
    many output rows share a source row.
    """
    W = weight.data
    bounds = np.cumsum([0] + [x.shape[1] for x, _ in parts])
    if bounds[-1] != W.shape[1]:
        raise ShapeMismatch(f"input width {bounds[-1]} != layer input {W.shape[1]}")
    n = next((len(r.segment_of) for _, r in parts if r is not None), None)
    n = parts[0][0].shape[0] if n is None else n
    z = np.zeros((n, W.shape[0])) if bias is None else np.tile(bias.data, (n, 1))
    for (x, rows), lo, hi in zip(parts, bounds[:-1], bounds[1:]):
        zi = x.data @ W[:, lo:hi].T
        if rows is None:
            z += zi
        else:
            _kernels.gather_add(z, zi, rows.segment_of)
    y = np.tanh(z, out=z) if activation == "tanh" else z
    parents = tuple(x for x, _ in parts) + ((weight,) if bias is None else (weight, bias))

    def backward(g):
        gz = g * (1.0 - y * y) if activation == "tanh" else g
        gW = np.empty_like(W) if weight.requires_grad else None
        for (x, rows), lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            gp = gz if rows is None else rows.sum(gz)
            if x.requires_grad:
                x._accum(gp @ W[:, lo:hi])
            if gW is not None:
                gW[:, lo:hi] = gp.T @ x.data
        if gW is not None:
            weight._accum(gW)
        if bias is not None and bias.requires_grad:
            bias._accum(gz.sum(axis=0))

    return _make(y, parents, backward)


# ---------------------------------------------------------------- segments


class SegmentIndex:
    """Precomputed grouping of rows into segments for the compiled kernels."""

    __slots__ = ("segment_of", "num_segments", "order", "counts", "bounds")

    def __init__(self, segment_of, num_segments):
        seg = np.asarray(segment_of, dtype=np.int64)
        if seg.size and (seg.min() < 0 or seg.max() >= num_segments):
            raise BadSegmentIndex(f"segment index out of range [0, {num_segments})")
        self.segment_of = seg
        self.num_segments = int(num_segments)
        self.order = np.argsort(seg, kind="stable")
        self.counts = np.bincount(seg, minlength=num_segments)
        self.bounds = np.concatenate([[0], np.cumsum(self.counts)]).astype(np.int64)

    def sum(self, x):
        x = np.asarray(x, np.float64)
        flat = np.ascontiguousarray(x.reshape(x.shape[0], int(np.prod(x.shape[1:]))))
        out = _kernels.segment_sum(flat, self.order, self.bounds)
        return out.reshape((self.num_segments,) + x.shape[1:])

    def max(self, x):
        """``(max, argmax)`` per segment and column; empty segments give ``(0, -1)``."""
        x = np.asarray(x, np.float64)
        flat = np.ascontiguousarray(x.reshape(x.shape[0], int(np.prod(x.shape[1:]))))
        out, arg = _kernels.segment_max(flat, self.order, self.bounds)
        shape = (self.num_segments,) + x.shape[1:]
        return out.reshape(shape), arg.reshape(shape)

    def reduce(self, ufunc, x, fill=0.0):
        if ufunc is np.add:
            out = self.sum(x)
        elif ufunc is np.maximum:
            out = self.max(x)[0]
        else:
            raise ValueError(f"unsupported reduction {ufunc}")
        if fill != 0.0:
            out[self.counts == 0] = fill
        return out


def _segments(segment_of, num_segments):
    if isinstance(segment_of, SegmentIndex):
        return segment_of
    return SegmentIndex(segment_of, num_segments)


def segment_max(values, segment_of, num_segments=None):
    """Per-segment elementwise max of a 2-D tensor. Empty segments give 0.

    The gradient of each output entry flows to the lowest-index row attaining
    the max in that channel.
    """
    seg = _segments(segment_of, num_segments)
    out, arg = seg.max(values.data)

    def backward(g):
        hit = arg >= 0
        gv = np.zeros_like(values.data)
        gv[arg[hit], np.nonzero(hit)[1]] = g[hit]
        values._accum(gv)

    return _make(out, (values,), backward)


def segment_sum(values, segment_of, num_segments=None):
    seg = _segments(segment_of, num_segments)
    out = seg.sum(values.data)
    return _make(out, (values,), lambda g: values._accum(g[seg.segment_of]))


def _masked(x, mask):
    return x if mask is None else np.where(mask, x, MASK_VALUE)


def log_softmax(x, mask=None, axis=-1):
    """Masked log-softmax along ``axis``; masked entries get logit -1e9."""
    z = _masked(x.data, mask)
    m = z.max(axis=axis, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=axis, keepdims=True)
    p = e / s
    y = z - m - np.log(s)

    def backward(g):
        gx = g - p * g.sum(axis=axis, keepdims=True)
        if mask is not None:
            gx = np.where(mask, gx, 0.0)
        x._accum(gx)

    return _make(y, (x,), backward)


def softmax(x, mask=None, axis=-1):
    """Masked softmax along ``axis``.

    A 1-D input with every entry masked raises :class:`AllMasked`.
    """
    x = _t(x)
    if mask is not None:
        mask = np.asarray(mask, bool)
        if x.ndim == 1 and not mask.any():
            raise AllMasked("softmax needs at least one unmasked entry")
    z = _masked(x.data, mask)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x._accum(p * (g - (g * p).sum(axis=axis, keepdims=True)))

    return _make(p, (x,), backward)


def segment_log_softmax(x, segment_of, num_segments=None, mask=None):
    """Log-softmax over the rows of each segment, independently per column."""
    seg = _segments(segment_of, num_segments)
    z = _masked(x.data, mask)
    if z.shape[0] == 0:
        return _make(z.copy(), (x,), lambda g: None)
    m = seg.reduce(np.maximum, z, fill=0.0)[seg.segment_of]
    e = np.exp(z - m)
    s = seg.reduce(np.add, e, fill=1.0)[seg.segment_of]
    p = e / s
    y = z - m - np.log(s)

    def backward(g):
        gx = g - p * seg.sum(g)[seg.segment_of]
        if mask is not None:
            gx = np.where(mask, gx, 0.0)
        x._accum(gx)

    return _make(y, (x,), backward)


# ---------------------------------------------------------------- parameters


class ParamStore:
    """Named trainable tensors plus Amsgrad state.

    Call :meth:`pack` once all parameters are registered; afterwards every
    tensor's ``data`` and ``grad`` are views into ``flat`` and ``flat_grad``.
    """

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.step = 0
        self.flat = self.flat_grad = None
        self.m = self.v = self.vmax = None

    def add(self, name, array):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        if self.flat is not None:
            raise RuntimeError("store is already packed")
        t = Tensor(np.array(array, dtype=np.float64), requires_grad=True)
        t.is_param = True
        self.params[name] = t
        return t

    def pack(self):
        size = sum(t.data.size for t in self.params.values())
        self.flat = np.zeros(size)
        self.flat_grad = np.zeros(size)
        off = 0
        for t in self.params.values():
            n = t.data.size
            view = self.flat[off:off + n].reshape(t.data.shape)
            view[...] = t.data
            t.data = view
            t.grad = self.flat_grad[off:off + n].reshape(view.shape)
            off += n
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.vmax = np.zeros(size)
        return self

    def __getitem__(self, name):
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    @property
    def size(self):
        return 0 if self.flat is None else self.flat.size

    def zero_grad(self):
        self.flat_grad[:] = 0.0

    def grad_norm(self):
        return float(np.sqrt(np.dot(self.flat_grad, self.flat_grad)))

    def manifest(self):
        out, off = [], 0
        for name, t in self.params.items():
            out.append({"name": name, "shape": list(t.data.shape), "offset": off})
            off += t.data.size
        return out


def optimizer_step(store, lr, max_grad_norm=1.0, betas=(0.9, 0.999), eps=1e-8):
    """Clip the global gradient norm, apply one Amsgrad update and zero grads.

    Returns the gradient norm measured before clipping.
    """
    g = store.flat_grad
    norm = store.grad_norm()
    if not np.isfinite(norm):
        bad = [n for n, t in store if not np.all(np.isfinite(t.grad))]
        raise NonFiniteGrad(f"non-finite gradient in {bad}")
    if max_grad_norm is not None and norm > max_grad_norm:
        g *= max_grad_norm / norm
    b1, b2 = betas
    store.step += 1
    store.m *= b1
    store.m += (1.0 - b1) * g
    store.v *= b2
    store.v += (1.0 - b2) * g * g
    np.maximum(store.vmax, store.v, out=store.vmax)
    bc1 = 1.0 - b1 ** store.step
    bc2 = 1.0 - b2 ** store.step
    denom = np.sqrt(store.vmax) / np.sqrt(bc2) + eps
    store.flat -= (lr / bc1) * store.m / denom
    store.zero_grad()
    return norm


class MlpBlock:
    """One affine layer, optionally followed by tanh."""

    def __init__(self, store, name, in_dim, out_dim, rng, activation="tanh"):
        bound = 1.0 / np.sqrt(in_dim)
        self.weight = store.add(f"{name}.weight", rng.uniform(-bound, bound, (out_dim, in_dim)))
        self.bias = store.add(f"{name}.bias", np.zeros(out_dim))
        self.activation = activation

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]

    def __call__(self, x):
        return affine(x, self.weight, self.bias, self.activation)

    def gather(self, *parts):
        """Apply to the row-gathered concatenation of ``parts``; see :func:`gather_affine`."""
        return gather_affine(parts, self.weight, self.bias, self.activation)


# ---------------------------------------------------------------- checkpoints

_CKPT_FORMAT = "relpolicy-checkpoint/1"


def save_checkpoint(path, store, meta=None):
    """Write ``manifest.json`` and ``params.bin`` (little-endian float64)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = np.concatenate([store.flat, store.m, store.v, store.vmax]).astype("<f8").tobytes()
    manifest = {
        "format": _CKPT_FORMAT,
        "meta": meta or {},
        "step": store.step,
        "size": store.size,
        "params": store.manifest(),
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    (path / "params.bin").write_bytes(blob)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def read_checkpoint(path):
    """Return ``(manifest, arrays)`` after verifying the checksum."""
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format") != _CKPT_FORMAT:
        raise ChecksumMismatch(f"unknown checkpoint format {manifest.get('format')!r}")
    blob = (path / "params.bin").read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise ChecksumMismatch(f"{path}: params.bin does not match its manifest")
    arr = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    n = manifest["size"]
    if arr.size != 4 * n:
        raise ChecksumMismatch(f"{path}: expected {4 * n} values, found {arr.size}")
    return manifest, {"flat": arr[:n], "m": arr[n:2 * n], "v": arr[2 * n:3 * n],
                      "vmax": arr[3 * n:]}


def load_into(store, manifest, arrays):
    if [p["name"] for p in manifest["params"]] != list(store.params) or \
            [p["shape"] for p in manifest["params"]] != [list(t.shape) for _, t in store]:
        raise ChecksumMismatch("checkpoint parameters do not match the model layout")
    store.flat[:] = arrays["flat"]
    store.m[:] = arrays["m"]
    store.v[:] = arrays["v"]
    store.vmax[:] = arrays["vmax"]
    store.step = manifest["step"]
    return store
