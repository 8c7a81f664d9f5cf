"""Dense reverse-mode automatic differentiation on numpy arrays.

Only the kernels needed by the 3D U-Net, the reconstruction losses and the
tomographic projector are provided. Every operation records a node holding
references to its inputs and a backward rule; :func:`backward` orders the
reachable nodes topologically (the tape) and sweeps it once in reverse.

Arrays are float32 unless :func:`precision` selects another dtype, which the
gradient-check tests use to run in float64.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "precision",
    "get_default_dtype",
    "no_grad",
    "elementwise",
    "reduce",
    "conv3d",
    "upsample_trilinear",
    "instance_norm",
    "concat",
    "backward",
    "clear_grads",
    "linear_interp_matrix",
]

_DEFAULT_DTYPE = np.dtype(np.float32)
_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


def get_default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for new tensors."""
    global _DEFAULT_DTYPE
    previous = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = previous


@contextlib.contextmanager
def no_grad():
    """Disable recording of operations inside the block."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class _Node:
    __slots__ = ("op", "inputs", "backward_fn", "output_id")

    def __init__(self, op, inputs, backward_fn, output_id):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.output_id = output_id

    def __repr__(self):
        return f"<{self.op} node>"


class Tensor:
    """An array with an optional gradient accumulator.

    Leaf tensors (those not produced by a recorded operation) with
    ``requires_grad=True`` receive gradients in ``grad`` when
    :func:`backward` is called on a loss that depends on them.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        dtype = _DEFAULT_DTYPE if dtype is None else np.dtype(dtype)
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._node: _Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        label = f"{self.name}: " if self.name else ""
        return f"Tensor({label}shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return elementwise("add", self, _as_tensor(other, self))

    def __radd__(self, other):
        return elementwise("add", _as_tensor(other, self), self)

    def __sub__(self, other):
        return elementwise("sub", self, _as_tensor(other, self))

    def __rsub__(self, other):
        return elementwise("sub", _as_tensor(other, self), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return elementwise("scale", self, factor=float(other))
        return elementwise("mul", self, _as_tensor(other, self))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return elementwise("scale", self, factor=-1.0)


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    arr = np.asarray(value, dtype=like.dtype)
    if arr.shape != like.shape:
        arr = np.broadcast_to(arr, like.shape)
    return Tensor(arr, dtype=like.dtype)


def _record(op: str, out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(out_data, dtype=out_data.dtype)
    if _GRAD_ENABLED and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = _Node(op, tuple(inputs), backward_fn, id(out))
    return out


class Tape:
    """Recorded operations reachable from an output, in topological order."""

    def __init__(self, nodes: list[_Node]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, output: Tensor) -> "Tape":
        order: list[_Node] = []
        if output._node is None:
            return cls(order)
        seen: set[int] = set()
        stack: list[tuple[_Node, bool]] = [(output._node, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for inp in node.inputs:
                if inp._node is not None and id(inp._node) not in seen:
                    stack.append((inp._node, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def leaves(self) -> list[Tensor]:
        """Leaf tensors that require gradients, each listed once."""
        found: dict[int, Tensor] = {}
        for node in self.nodes:
            for inp in node.inputs:
                if inp.is_leaf and inp.requires_grad:
                    found.setdefault(id(inp), inp)
        return list(found.values())


def backward(loss: Tensor) -> Tape:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    Returns the tape that was swept.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = Tape.from_output(loss)
    if loss.is_leaf:
        if loss.requires_grad:
            _accumulate(loss, np.ones_like(loss.data))
        return tape
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        upstream = pending.pop(node.output_id, None)
        if upstream is None:
            continue
        grads = node.backward_fn(upstream)
        for inp, g in zip(node.inputs, grads):
            if g is None or not inp.requires_grad:
                continue
            if inp.is_leaf:
                _accumulate(inp, g)
            else:
                key = id(inp)
                if key in pending:
                    pending[key] = pending[key] + g
                else:
                    pending[key] = g
    return tape


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=t.dtype).reshape(t.shape)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def clear_grads(tensors: Iterable[Tensor]) -> None:
    """Reset gradient accumulators to zero."""
    for t in tensors:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        else:
            t.grad.fill(0)


# ---------------------------------------------------------------------------
# elementwise and reductions


_BINARY = {"add", "sub", "mul"}
_UNARY = {"scale", "abs", "square", "leaky_relu", "sigmoid"}


def elementwise(kind: str, a: Tensor, b: Tensor | None = None, *, slope: float = 0.1,
                factor: float | None = None) -> Tensor:
    """Value-wise operation.

    ``kind`` is one of add, sub, mul (binary, equal shapes), or scale, abs,
    square, leaky_relu, sigmoid (unary). ``scale`` multiplies by ``factor``;
    ``leaky_relu`` uses ``slope`` for negative inputs.
    """
    if kind in _BINARY:
        if b is None:
            raise ValueError(f"{kind} needs two operands")
        if a.shape != b.shape:
            raise ShapeError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")
        x, y = a.data, b.data
        if kind == "add":
            return _record("add", x + y, (a, b), lambda g: (g, g))
        if kind == "sub":
            return _record("sub", x - y, (a, b), lambda g: (g, -g))
        return _record("mul", x * y, (a, b), lambda g: (g * y, g * x))

    if kind not in _UNARY:
        raise ValueError(f"unknown elementwise op {kind!r}")
    if b is not None:
        raise ValueError(f"{kind} takes a single operand")
    x = a.data
    if kind == "scale":
        if factor is None:
            raise ValueError("scale needs a factor")
        c = x.dtype.type(factor)
        return _record("scale", x * c, (a,), lambda g: (g * c,))
    if kind == "abs":
        sign = np.sign(x)
        return _record("abs", np.abs(x), (a,), lambda g: (g * sign,))
    if kind == "square":
        return _record("square", x * x, (a,), lambda g: (2 * g * x,))
    if kind == "leaky_relu":
        s = x.dtype.type(slope)
        mult = np.where(x > 0, x.dtype.type(1), s)
        return _record("leaky_relu", x * mult, (a,), lambda g: (g * mult,))
    # sigmoid, split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _record("sigmoid", out, (a,), lambda g: (g * out * (1 - out),))


def reduce(kind: str, a: Tensor) -> Tensor:
    """Reduce to a scalar by ``sum`` or ``mean``."""
    if a.size == 0:
        raise ShapeError("cannot reduce an empty tensor")
    shape, dtype = a.shape, a.dtype
    if kind == "sum":
        out = np.asarray(a.data.sum(dtype=dtype))
        return _record("sum", out, (a,), lambda g: (np.full(shape, g, dtype=dtype),))
    if kind == "mean":
        n = a.size
        out = np.asarray(a.data.mean(dtype=dtype))
        return _record("mean", out, (a,), lambda g: (np.full(shape, g / n, dtype=dtype),))
    raise ValueError(f"unknown reduction {kind!r}")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis`` (channel axis by default)."""
    arrays = [t.data for t in tensors]
    ref = list(arrays[0].shape)
    for arr in arrays[1:]:
        other = list(arr.shape)
        if len(other) != len(ref) or any(
            i != axis % len(ref) and p != q for i, (p, q) in enumerate(zip(ref, other))
        ):
            raise ShapeError(f"concat: incompatible shapes {tuple(ref)} and {arr.shape}")
    bounds = np.cumsum([arr.shape[axis] for arr in arrays])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record("concat", np.concatenate(arrays, axis=axis), tuple(tensors), back)


# ---------------------------------------------------------------------------
# convolution


def _triple(v, what: str) -> tuple[int, int, int]:
    if np.isscalar(v):
        v = (int(v),) * 3
    v = tuple(int(i) for i in v)
    if len(v) != 3:
        raise ValueError(f"{what} needs 1 or 3 values, got {v}")
    return v


def conv3d(input: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """3D cross-correlation with zero padding.

    ``input`` is (N, C, D, H, W) and ``weight`` is (O, C, kd, kh, kw).
    """
    if input.ndim != 5:
        raise ShapeError(f"conv3d input must be 5-D, got shape {input.shape}")
    if weight.ndim != 5:
        raise ShapeError(f"conv3d weight must be 5-D, got shape {weight.shape}")
    n, c, d, h, w = input.shape
    o, wc, kd, kh, kw = weight.shape
    if wc != c:
        raise ShapeError(f"conv3d channel mismatch: input has {c}, weight expects {wc}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv3d bias must have shape ({o},), got {bias.shape}")
    sd, sh, sw = _triple(stride, "stride")
    pd, ph, pw = _triple(padding, "padding")
    if min(sd, sh, sw) < 1 or min(pd, ph, pw) < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    dp, hp, wp = d + 2 * pd, h + 2 * ph, w + 2 * pw
    if kd > dp or kh > hp or kw > wp:
        raise ShapeError(f"conv3d kernel {weight.shape[2:]} larger than padded input {(dp, hp, wp)}")
    do, ho, wo = (dp - kd) // sd + 1, (hp - kh) // sh + 1, (wp - kw) // sw + 1

    x = input.data
    if pd or ph or pw:
        xp = np.zeros((n, c, dp, hp, wp), dtype=x.dtype)
        xp[:, :, pd:pd + d, ph:ph + h, pw:pw + w] = x
    else:
        xp = np.ascontiguousarray(x)
    wdata = weight.data.astype(x.dtype, copy=False)
    if (sd, sh, sw) == (1, 1, 1) and c >= 4 and kd * kh * kw > 1:
        out, back_core = _conv3d_shifted(xp, wdata, (do, ho, wo), input.requires_grad, weight.requires_grad)
    else:
        out, back_core = _conv3d_im2col(xp, wdata, (sd, sh, sw), (do, ho, wo),
                                        input.requires_grad, weight.requires_grad)
    if bias is not None:
        out += bias.data.reshape(1, o, 1, 1, 1)

    def back(g):
        gxp, gw = back_core(g)
        gx = None if gxp is None else gxp[:, :, pd:pd + d, ph:ph + h, pw:pw + w]
        if bias is None:
            return gx, gw
        gb = g.sum(axis=(0, 2, 3, 4)) if bias.requires_grad else None
        return gx, gw, gb

    inputs = (input, weight) if bias is None else (input, weight, bias)
    return _record("conv3d", out, inputs, back)


def _conv3d_im2col(xp, wdata, stride, out_ext, need_gx, need_gw):
    n, c, dp, hp, wp = xp.shape
    o, _, kd, kh, kw = wdata.shape
    sd, sh, sw = stride
    do, ho, wo = out_ext
    k = kd * kh * kw
    pointwise = k == 1 and stride == (1, 1, 1)
    if pointwise:
        cols = xp.reshape(n, c, dp * hp * wp)
    else:
        s = xp.strides
        view = as_strided(
            xp,
            shape=(n, c, kd, kh, kw, do, ho, wo),
            strides=(s[0], s[1], s[2], s[3], s[4], s[2] * sd, s[3] * sh, s[4] * sw),
            writeable=False,
        )
        cols = view.reshape(n, c * k, do * ho * wo)
    wmat = wdata.reshape(o, c * k)
    out = np.matmul(wmat, cols).reshape(n, o, do, ho, wo)

    def back(g):
        g2 = g.reshape(n, o, do * ho * wo)
        gw = gxp = None
        if need_gw:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(wdata.shape)
        if need_gx:
            gcols = np.matmul(wmat.T, g2)
            if pointwise:
                gxp = gcols.reshape(n, c, dp, hp, wp)
            else:
                gcols = gcols.reshape(n, c, kd, kh, kw, do, ho, wo)
                gxp = np.zeros((n, c, dp, hp, wp), dtype=g.dtype)
                for i in range(kd):
                    for j in range(kh):
                        for m in range(kw):
                            gxp[:, :, i:i + sd * do:sd, j:j + sh * ho:sh, m:m + sw * wo:sw] += gcols[:, :, i, j, m]
        return gxp, gw

    return out, back


def _column_blocks(span: int, channels: int) -> list[tuple[int, int]]:
    width = int(np.clip(65536 // channels, 4096, 16384))
    return [(s, min(s + width, span)) for s in range(0, span, width)]


def _conv3d_shifted(xp, wdata, out_ext, need_gx, need_gw):
    # Stride-1 case. On the flattened padded grid every kernel tap is a
    # contiguous shifted window, so each tap is one matmul on a view; outputs
    # are computed on the padded row pitch and the valid part cropped. The grid
    # is walked in column blocks so the accumulator stays in cache across taps.
    n, c, dp, hp, wp = xp.shape
    o, _, kd, kh, kw = wdata.shape
    do, ho, wo = out_ext
    plane = hp * wp
    offsets = [i * plane + j * wp + m for i in range(kd) for j in range(kh) for m in range(kw)]
    span = (do - 1) * plane + (ho - 1) * wp + wo
    blocks = _column_blocks(span, max(c, o))
    taps = np.ascontiguousarray(wdata.reshape(o, c, -1).transpose(2, 0, 1))
    xf = xp.reshape(n, c, dp * plane)
    full = np.zeros((n, o, do * plane), dtype=xp.dtype)
    tmp = np.empty((o, blocks[0][1]), dtype=xp.dtype)
    for b in range(n):
        for s, e in blocks:
            acc, tb = full[b, :, s:e], tmp[:, :e - s]
            for t, off in enumerate(offsets):
                np.matmul(taps[t], xf[b, :, off + s:off + e], out=tb)
                acc += tb
    out = np.ascontiguousarray(full.reshape(n, o, do, hp, wp)[:, :, :, :ho, :wo])

    def back(g):
        gfull = np.zeros((n, o, do, hp, wp), dtype=g.dtype)
        gfull[:, :, :, :ho, :wo] = g
        gq = gfull.reshape(n, o, do * plane)[:, :, :span]
        gw = gxp = None
        if need_gw:
            gtaps = np.zeros_like(taps)
            for b in range(n):
                for s, e in blocks:
                    gb = gq[b, :, s:e]
                    for t, off in enumerate(offsets):
                        gtaps[t] += gb @ xf[b, :, off + s:off + e].T
            gw = np.ascontiguousarray(gtaps.transpose(1, 2, 0)).reshape(wdata.shape)
        if need_gx:
            gxf = np.zeros((n, c, dp * plane), dtype=g.dtype)
            buf = np.empty((c, blocks[0][1]), dtype=g.dtype)
            tapsT = np.ascontiguousarray(taps.transpose(0, 2, 1))
            for b in range(n):
                for s, e in blocks:
                    gb, bb = gq[b, :, s:e], buf[:, :e - s]
                    for t, off in enumerate(offsets):
                        np.matmul(tapsT[t], gb, out=bb)
                        gxf[b, :, off + s:off + e] += bb
            gxp = gxf.reshape(n, c, dp, hp, wp)
        return gxp, gw

    return out, back


# ---------------------------------------------------------------------------
# interpolation


def linear_interp_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Dense (n_out, n_in) matrix of 1-D linear interpolation weights.

    Sample positions use half-pixel centres, ``src = (i + 0.5) * n_in / n_out - 0.5``,
    clamped to the valid index range.
    """
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    mat = np.zeros((n_out, n_in), dtype=dtype)
    rows = np.arange(n_out)
    np.add.at(mat, (rows, lo), 1.0 - frac)
    np.add.at(mat, (rows, hi), frac)
    return mat


def _apply_axis(x: np.ndarray, mat: np.ndarray, axis: int) -> np.ndarray:
    """Contract ``mat`` (n_out, n_in) with ``x`` along ``axis``."""
    moved = np.moveaxis(x, axis, -1)
    out = moved @ mat.T
    return np.moveaxis(out, -1, axis)


def _axis_slice(axis: int, sl: slice) -> tuple:
    return (slice(None),) * axis + (sl,)


def _double_axis(x: np.ndarray, axis: int) -> np.ndarray:
    # Factor-2 case of linear_interp_matrix: even outputs sit a quarter pixel
    # before each input sample, odd outputs a quarter pixel after, edges clamp.
    n = x.shape[axis]
    q, t = x.dtype.type(0.25), x.dtype.type(0.75)
    shape = list(x.shape)
    shape[axis] = 2 * n
    out = np.empty(shape, dtype=x.dtype)
    even, odd = out[_axis_slice(axis, slice(0, None, 2))], out[_axis_slice(axis, slice(1, None, 2))]
    np.multiply(x, t, out=even)
    np.multiply(x, t, out=odd)
    if n > 1:
        even[_axis_slice(axis, slice(1, None))] += q * x[_axis_slice(axis, slice(0, n - 1))]
        odd[_axis_slice(axis, slice(0, n - 1))] += q * x[_axis_slice(axis, slice(1, None))]
    even[_axis_slice(axis, slice(0, 1))] += q * x[_axis_slice(axis, slice(0, 1))]
    odd[_axis_slice(axis, slice(n - 1, n))] += q * x[_axis_slice(axis, slice(n - 1, n))]
    return out


def _double_axis_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    n = g.shape[axis] // 2
    q, t = g.dtype.type(0.25), g.dtype.type(0.75)
    even, odd = g[_axis_slice(axis, slice(0, None, 2))], g[_axis_slice(axis, slice(1, None, 2))]
    gx = t * even
    gx += t * odd
    if n > 1:
        gx[_axis_slice(axis, slice(0, n - 1))] += q * even[_axis_slice(axis, slice(1, None))]
        gx[_axis_slice(axis, slice(1, None))] += q * odd[_axis_slice(axis, slice(0, n - 1))]
    gx[_axis_slice(axis, slice(0, 1))] += q * even[_axis_slice(axis, slice(0, 1))]
    gx[_axis_slice(axis, slice(n - 1, n))] += q * odd[_axis_slice(axis, slice(n - 1, n))]
    return gx


def upsample_trilinear(input: Tensor, factor: int) -> Tensor:
    """Trilinear upsampling of a 5-D tensor by an integer factor."""
    if input.ndim != 5:
        raise ShapeError(f"upsample_trilinear input must be 5-D, got shape {input.shape}")
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if factor == 2:
        out = input.data
        for axis in (2, 3, 4):
            out = _double_axis(out, axis)

        def back(g):
            gx = g
            for axis in (4, 3, 2):
                gx = _double_axis_adjoint(gx, axis)
            return (gx,)

        return _record("upsample_trilinear", out, (input,), back)

    spatial = input.shape[2:]
    mats = [linear_interp_matrix(s, s * factor, dtype=input.dtype) for s in spatial]
    out = input.data
    for axis, mat in zip((2, 3, 4), mats):
        out = _apply_axis(out, mat, axis)
    out = np.ascontiguousarray(out)

    def back(g):
        gx = g
        for axis, mat in zip((4, 3, 2), mats[::-1]):
            gx = _apply_axis(gx, mat.T, axis)
        return (np.ascontiguousarray(gx),)

    return _record("upsample_trilinear", out, (input,), back)


# ---------------------------------------------------------------------------
# normalization


def instance_norm(input: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel standardization over spatial voxels, then affine."""
    if input.ndim != 5:
        raise ShapeError(f"instance_norm input must be 5-D, got shape {input.shape}")
    c = input.shape[1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise ShapeError(f"instance_norm gain/bias must have shape ({c},)")
    x = input.data
    axes = (2, 3, 4)
    mean = x.mean(axis=axes, keepdims=True)
    centred = x - mean
    var = (centred * centred).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = centred * inv_std
    g = gain.data.reshape(1, c, 1, 1, 1)
    out = xhat * g + bias.data.reshape(1, c, 1, 1, 1)

    def back(up):
        ggain = (up * xhat).sum(axis=(0, 2, 3, 4)) if gain.requires_grad else None
        gbias = up.sum(axis=(0, 2, 3, 4)) if bias.requires_grad else None
        gx = None
        if input.requires_grad:
            dxhat = up * g
            gx = inv_std * (
                dxhat
                - dxhat.mean(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True)
            )
        return gx, ggain, gbias

    return _record("instance_norm", out, (input, gain, bias), back)
