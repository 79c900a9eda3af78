"""Dense float64 tensors with tape-based reverse-mode differentiation.

Conventions:
  * double precision everywhere; every op output is checked for finiteness
  * conv1d uses the cross-correlation convention (no kernel flip)
  * softmax subtracts the row max before exponentiating
  * the tape records primitive applications in execution order and is
    consumed (and cleared) by backward(); a fresh graph is built on every
    forward pass, never reused across batches

Broadcasting in add/sub/mul is deliberately narrow: identical shapes, a
one-element tensor against anything, or a row vector against a matrix.
Anything else raises ConformanceError.

Tensors may move between threads, but the active tape is a single shared
structure: recording and backward must stay on one thread at a time.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager

import numpy as np

from .errors import (
    ConformanceError,
    ContractError,
    DegenerateBatchError,
    FormatError,
    NumericDomainError,
)


class Tensor:
    """A dense float64 array plus an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.size and not np.all(np.isfinite(arr)):
            raise NumericDomainError("tensor values must be finite")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Graph:
    """Execution-ordered tape of recorded primitive applications.

    Each node is (op name, input tensors, output tensor, backward fn); inputs
    always precede their consumers because nodes are appended as ops run.
    """

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list = []

    def clear(self) -> None:
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)


_graph = Graph()
_grad_enabled = True


def active_graph() -> Graph:
    return _graph


@contextmanager
def no_grad():
    """Disable tape recording inside the block (pure inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _emit(op: str, inputs: tuple, out_data: np.ndarray, bwd) -> Tensor:
    out_data = np.asarray(out_data, dtype=np.float64)
    if out_data.size and not np.all(np.isfinite(out_data)):
        raise NumericDomainError(f"{op}: result contains non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    track = _grad_enabled and any(t.requires_grad for t in inputs)
    out.requires_grad = track
    out.grad = np.zeros_like(out_data) if track else None
    if track:
        _graph.nodes.append((op, inputs, out, bwd))
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf; clear the tape."""
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ContractError("backward expects a scalar tensor")
    if not loss.requires_grad:
        raise ContractError("loss is not connected to the active graph")
    loss.grad[...] = 1.0
    try:
        for op, inputs, out, bwd in reversed(_graph.nodes):
            grads = bwd(out.grad)
            for t, g in zip(inputs, grads):
                if g is not None and t.requires_grad:
                    t.grad += g
    finally:
        _graph.clear()


# ---------------------------------------------------------------------------
# broadcasting helpers
# ---------------------------------------------------------------------------

def _check_binary(op: str, a: Tensor, b: Tensor) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or a.size == 1 or b.size == 1:
        return
    # row vector against matrix
    for row, mat in ((sa, sb), (sb, sa)):
        if len(mat) == 2 and row in ((mat[1],), (1, mat[1])):
            return
    raise ConformanceError(f"{op}: shapes {sa} and {sb} do not conform")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) < g.ndim:
        g = g.sum(axis=tuple(range(g.ndim - len(shape))))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and reduction primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary("add", a, b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit("add", (a, b), a.data + b.data, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary("sub", a, b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _emit("sub", (a, b), a.data - b.data, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary("mul", a, b)
    da, db = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * db, a.shape), _unbroadcast(g * da, b.shape)

    return _emit("mul", (a, b), da * db, bwd)


def scalar_mul(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)

    def bwd(g):
        return (g * c,)

    return _emit("scalar-mul", (a,), a.data * c, bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ConformanceError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    da, db = a.data, b.data

    def bwd(g):
        return g @ db.T, da.T @ g

    return _emit("matmul", (a, b), da @ db, bwd)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w.T + b for x (n,f), w (c,f), b (c,)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ConformanceError(
            f"linear: shapes {x.shape}, {w.shape}, {b.shape} do not conform"
        )
    dx, dw = x.data, w.data

    def bwd(g):
        return g @ dw, g.T @ dx, g.sum(axis=0)

    return _emit("linear", (x, w, b), dx @ dw.T + b.data, bwd)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0

    def bwd(g):
        return (g * mask,)

    return _emit("relu", (a,), np.where(mask, a.data, 0.0), bwd)


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)

    def bwd(g):
        return (g * out,)

    return _emit("exp", (a,), out, bwd)


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    da = a.data

    def bwd(g):
        return (g / da,)

    return _emit("log", (a,), out, bwd)


def _expand_reduced(g: np.ndarray, shape: tuple, axis) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    return np.broadcast_to(np.expand_dims(g, axis), shape).copy()


def mean(a: Tensor, axis=None) -> Tensor:
    a = _as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    shape = a.shape

    def bwd(g):
        return (_expand_reduced(g, shape, axis) / n,)

    return _emit("mean", (a,), a.data.mean(axis=axis), bwd)


def tensor_sum(a: Tensor, axis=None) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape

    def bwd(g):
        return (_expand_reduced(g, shape, axis),)

    return _emit("sum", (a,), a.data.sum(axis=axis), bwd)


def softmax(a: Tensor) -> Tensor:
    """Row-stable softmax over the last axis; rows sum to one."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", (a,), s, bwd)


def l2_norm(a: Tensor) -> Tensor:
    """Euclidean norm over the last axis; gradient defined as 0 at the origin."""
    a = _as_tensor(a)
    n = np.sqrt((a.data * a.data).sum(axis=-1))
    safe = np.where(n == 0.0, 1.0, n)
    da = a.data

    def bwd(g):
        return ((g / safe)[..., None] * da,)

    return _emit("l2-norm", (a,), n, bwd)


def cosine_pairs(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise cosine similarity between rows of a (n,d) and b (m,d).

    Pairs involving a zero-norm row get similarity 0 and zero gradient.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ConformanceError(
            f"cosine-similarity: shapes {a.shape} and {b.shape} do not conform"
        )
    da, db = a.data, b.data
    na = np.sqrt((da * da).sum(axis=1))
    nb = np.sqrt((db * db).sum(axis=1))
    inv_a = np.where(na == 0.0, 0.0, 1.0 / np.where(na == 0.0, 1.0, na))
    inv_b = np.where(nb == 0.0, 0.0, 1.0 / np.where(nb == 0.0, 1.0, nb))
    denom = inv_a[:, None] * inv_b[None, :]
    cos = (da @ db.T) * denom

    def bwd(g):
        gd = g * denom
        row = (g * cos).sum(axis=1) * inv_a * inv_a
        col = (g * cos).sum(axis=0) * inv_b * inv_b
        return gd @ db - row[:, None] * da, gd.T @ da - col[:, None] * db

    return _emit("cosine-similarity", (a, b), cos, bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(_as_tensor(t) for t in tensors)
    if not tensors:
        raise ContractError("concatenate needs at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    shapes = {t.shape[:axis] + t.shape[axis + 1:] for t in tensors}
    if len(shapes) != 1:
        raise ConformanceError(
            f"concatenate: shapes {[t.shape for t in tensors]} do not conform"
        )

    def bwd(g):
        sl = [slice(None)] * g.ndim
        pieces = []
        for i in range(len(sizes)):
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    return _emit("concatenate", tensors, np.concatenate([t.data for t in tensors], axis=axis), bwd)


def index_select(a: Tensor, indices, axis: int = 0) -> Tensor:
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ContractError("index-select expects a flat index list")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[axis]):
        raise ConformanceError(
            f"index-select: indices out of range for extent {a.shape[axis]}"
        )
    shape = a.shape

    def bwd(g):
        dz = np.zeros(shape)
        np.add.at(np.moveaxis(dz, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (dz,)

    return _emit("index-select", (a,), np.take(a.data, idx, axis=axis), bwd)


# ---------------------------------------------------------------------------
# network ops: 1-D convolution, batch norm, max pooling
# ---------------------------------------------------------------------------

def conv1d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate x (B,Cin,L) with kernels w (Cout,Cin,k) plus bias b (Cout,).

    Lout = floor((L + 2*padding - k) / stride) + 1.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ConformanceError(
            f"conv1d: shapes {x.shape}, {w.shape}, {b.shape} do not conform"
        )
    if stride < 1 or padding < 0:
        raise ContractError("conv1d: stride must be >= 1 and padding >= 0")
    bsz, cin, length = x.shape
    cout, _, k = w.shape
    if length + 2 * padding < k:
        raise ConformanceError(
            f"conv1d: kernel of width {k} wider than padded input of length "
            f"{length + 2 * padding}"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    lout = win.shape[2]
    # (B, Lout, Cin*k) @ (Cin*k, Cout) keeps everything in BLAS
    cols = win.transpose(0, 2, 1, 3).reshape(bsz * lout, cin * k)
    w2 = w.data.reshape(cout, cin * k)
    out = (cols @ w2.T).reshape(bsz, lout, cout).transpose(0, 2, 1) + b.data[None, :, None]
    lpad = xp.shape[2]

    def bwd(g):
        g2 = g.transpose(0, 2, 1).reshape(bsz * lout, cout)
        dw = (g2.T @ cols).reshape(cout, cin, k)
        db = g.sum(axis=(0, 2))
        dcols = (g2 @ w2).reshape(bsz, lout, cin, k).transpose(0, 2, 1, 3)
        dxp = np.zeros((bsz, cin, lpad))
        for j in range(k):
            dxp[:, :, j + stride * np.arange(lout)] += dcols[:, :, :, j]
        dx = dxp[:, :, padding:padding + length] if padding else dxp
        return dx, dw, db

    return _emit("conv1d", (x, w, b), out, bwd)


class BNState:
    """Running statistics of one batch-norm layer (one value per channel)."""

    __slots__ = ("running_mean", "running_var", "momentum")

    def __init__(self, channels: int, momentum: float = 0.1):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = float(momentum)

    def clone(self) -> "BNState":
        c = BNState(len(self.running_mean), self.momentum)
        c.running_mean = self.running_mean.copy()
        c.running_var = self.running_var.copy()
        return c


def batch_norm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BNState,
    mode: str = "train-stats",
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization of x (B,C,L); output = gamma * xhat + beta.

    train-stats normalizes with current batch statistics and folds them into
    the running estimates (momentum update, unbiased variance); running-stats
    normalizes with the stored estimates and mutates nothing.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.ndim != 3 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ConformanceError(
            f"batch_norm1d: shapes {x.shape}, {gamma.shape}, {beta.shape} do not conform"
        )
    if mode not in ("train-stats", "running-stats"):
        raise ContractError(f"batch_norm1d: unknown mode {mode!r}")
    bsz, _, length = x.shape
    m = bsz * length
    g_dat, b_dat = gamma.data, beta.data

    if mode == "train-stats":
        if m < 2:
            raise DegenerateBatchError(
                f"batch_norm1d: need at least 2 values per channel, got {m}"
            )
        mu = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu[None, :, None]) * inv[None, :, None]
        mom = state.momentum
        state.running_mean = (1.0 - mom) * state.running_mean + mom * mu
        state.running_var = (1.0 - mom) * state.running_var + mom * var * (m / (m - 1))

        def bwd(g):
            dgamma = (g * xhat).sum(axis=(0, 2))
            dbeta = g.sum(axis=(0, 2))
            gx = g * g_dat[None, :, None]
            dx = inv[None, :, None] * (
                gx
                - gx.mean(axis=(0, 2), keepdims=True)
                - xhat * (gx * xhat).mean(axis=(0, 2), keepdims=True)
            )
            return dx, dgamma, dbeta

    else:
        inv = 1.0 / np.sqrt(state.running_var + eps)
        xhat = (x.data - state.running_mean[None, :, None]) * inv[None, :, None]

        def bwd(g):
            dgamma = (g * xhat).sum(axis=(0, 2))
            dbeta = g.sum(axis=(0, 2))
            return g * (g_dat * inv)[None, :, None], dgamma, dbeta

    out = g_dat[None, :, None] * xhat + b_dat[None, :, None]
    return _emit("batch_norm1d", (x, gamma, beta), out, bwd)


def max_pool1d(x: Tensor, width: int) -> Tensor:
    """Non-overlapping max pooling over time; trailing remainder is dropped."""
    x = _as_tensor(x)
    if x.ndim != 3:
        raise ConformanceError(f"max_pool1d: expected 3-d input, got {x.shape}")
    bsz, ch, length = x.shape
    if width < 1 or length < width:
        raise ConformanceError(
            f"max_pool1d: pool width {width} does not fit length {length}"
        )
    lout = length // width
    view = x.data[:, :, : lout * width].reshape(bsz, ch, lout, width)
    arg = view.argmax(axis=-1)

    def bwd(g):
        dz = np.zeros((bsz, ch, lout, width))
        np.put_along_axis(dz, arg[..., None], g[..., None], axis=-1)
        dx = np.zeros((bsz, ch, length))
        dx[:, :, : lout * width] = dz.reshape(bsz, ch, lout * width)
        return (dx,)

    return _emit("max_pool1d", (x,), view.max(axis=-1), bwd)


# ---------------------------------------------------------------------------
# generic dispatch
# ---------------------------------------------------------------------------

PRIMITIVES = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scalar-mul": scalar_mul,
    "matmul": matmul,
    "relu": relu,
    "exp": exp,
    "log": log,
    "mean": mean,
    "sum": tensor_sum,
    "softmax": softmax,
    "l2-norm": l2_norm,
    "cosine-similarity": cosine_pairs,
    "concatenate": concat,
    "index-select": index_select,
}


def apply_primitive(kind: str, *inputs, **kwargs) -> Tensor:
    """Apply one of the named primitives; unknown kinds are contract errors."""
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ContractError(f"unknown primitive kind {kind!r}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# parameter snapshots ("TTAW" little-endian container)
# ---------------------------------------------------------------------------

_MAGIC = b"TTAW"
_VERSION = 1


def save_tensors(path, named: dict) -> None:
    """Write named tensors: magic, version u32, count u32, then per tensor
    (name length u16, utf-8 name, rank u8, extents u64 each, f64 values)."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(named)))
        for name, t in named.items():
            arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
            enc = name.encode("utf-8")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", arr.ndim))
            if arr.ndim:
                f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.astype("<f8").tobytes())


def load_tensors(path) -> dict:
    """Read a snapshot back as name -> float64 ndarray."""

    def take(f, n, what):
        buf = f.read(n)
        if len(buf) != n:
            raise FormatError(f"snapshot truncated while reading {what}")
        return buf

    out = {}
    with open(path, "rb") as f:
        if take(f, 4, "magic") != _MAGIC:
            raise FormatError("bad magic: not a TTAW snapshot")
        version, count = struct.unpack("<II", take(f, 8, "header"))
        if version != _VERSION:
            raise FormatError(f"unsupported snapshot version {version}")
        for _ in range(count):
            (nlen,) = struct.unpack("<H", take(f, 2, "name length"))
            name = take(f, nlen, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", take(f, 1, "rank"))
            shape = struct.unpack(f"<{rank}Q", take(f, 8 * rank, "extents")) if rank else ()
            n = int(np.prod(shape)) if rank else 1
            vals = np.frombuffer(take(f, 8 * n, "values"), dtype="<f8")
            if n and not np.all(np.isfinite(vals)):
                raise NumericDomainError(
                    f"snapshot tensor {name!r} contains non-finite values"
                )
            out[name] = vals.reshape(shape).astype(np.float64)
    return out
