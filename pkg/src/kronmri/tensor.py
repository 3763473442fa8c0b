"""Minimal reverse-mode autodiff over numpy arrays.

One `Tape` records one forward pass; `backward` walks it once in reverse and
returns leaf gradients. Recording is explicit: ops only build graph nodes
while a tape is active (`with Tape(): ...`), otherwise they just compute
values, which is what inference and finite differencing want.

Broadcasting is deliberately narrow: binary elementwise ops accept equal
shapes, or a scalar (python number or 0-d tensor) against anything. Every op
validates shapes and dtypes up front and checks its output for NaN/Inf, so a
numerical problem surfaces at the op that created it.

Multiply-accumulate counts for the contraction ops (matmul, bmm, kron, kron4,
conv2d) accumulate into a module-level counter, read with `mac_count()`.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import NumericError, ShapeError, TapeError

_FLOAT_DTYPES = (np.float32, np.float64)

_mac_total = 0


def mac_count() -> int:
    """Multiply-accumulate operations counted since the last reset."""
    return _mac_total


def reset_mac_count() -> None:
    global _mac_total
    _mac_total = 0


def _count_macs(n: int) -> None:
    global _mac_total
    _mac_total += int(n)


class Tensor:
    """Dense float array plus autodiff bookkeeping.

    `data` is the raw numpy buffer (row-major, float32 or float64).
    `requires_grad` marks leaves whose gradient `backward` should report;
    on op outputs it just means "participates in the recorded graph".
    """

    __slots__ = ("data", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in _FLOAT_DTYPES:
            if arr.dtype.kind in "biu":
                arr = arr.astype(np.float64)
            else:
                raise ShapeError(f"unsupported tensor dtype {arr.dtype}")
        if arr.dtype not in _FLOAT_DTYPES:
            raise ShapeError(f"unsupported tensor dtype {arr.dtype}")
        # ascontiguousarray promotes 0-d to 1-d; keep scalars 0-d.
        self.data = np.ascontiguousarray(arr) if arr.ndim else arr
        self.requires_grad = bool(requires_grad)
        self.node = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(scale(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("name", "out", "inputs", "vjp", "needs", "tape")

    def __init__(self, name, out, inputs, vjp, needs, tape):
        self.name = name
        self.out = out
        self.inputs = inputs
        self.vjp = vjp
        self.needs = needs
        self.tape = tape


_ACTIVE_TAPE = None


class Tape:
    """Ordered record of one forward pass; context manager sets it active."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise TapeError("a tape is already recording; nested tapes are not supported")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False


def _apply(name: str, inputs: tuple, out_data: np.ndarray, vjp) -> Tensor:
    """Wrap an op result, recording a node when a tape is active.

    `vjp(g, needs)` must return per-input gradient arrays (None where
    `needs` is False), aligned with `inputs`.
    """
    if not np.all(np.isfinite(out_data)):
        raise NumericError(f"non-finite values in output of op '{name}'")
    out = Tensor(out_data)
    tape = _ACTIVE_TAPE
    if tape is not None:
        if tape.consumed:
            raise TapeError("recording onto a consumed tape")
        needs = tuple(t.requires_grad or t.node is not None for t in inputs)
        if any(needs):
            node = _Node(name, out, inputs, vjp, needs, tape)
            tape.nodes.append(node)
            out.node = node
            out.requires_grad = True
    return out


def record_op(name: str, inputs: tuple, out_data: np.ndarray, vjp) -> Tensor:
    """Public hook for ops defined outside this module (e.g. FFT wrappers)."""
    return _apply(name, inputs, out_data, vjp)


def backward(loss: Tensor) -> dict[Tensor, Tensor]:
    """Reverse sweep from a scalar loss; returns {leaf tensor: gradient}.

    The tape is single-use: a second backward over the same tape raises.
    """
    if loss.node is None:
        raise TapeError("loss is not attached to a tape (was it computed while recording?)")
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss.node.tape
    if tape.consumed:
        raise TapeError("backward called twice on the same tape")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        holders.pop(id(node.out), None)
        if g is None:
            continue
        contribs = node.vjp(g, node.needs)
        for t, gt in zip(node.inputs, contribs):
            if gt is None:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gt
            else:
                grads[key] = gt
                holders[key] = t

    out: dict[Tensor, Tensor] = {}
    for key, g in grads.items():
        t = holders[key]
        if t.requires_grad and t.node is None:
            if not np.all(np.isfinite(g)):
                raise NumericError("non-finite gradient for a leaf tensor")
            out[t] = Tensor(g)

    # The tape is single-use, so drop the graph eagerly. Tensor <-> node
    # references form cycles that otherwise wait for the garbage collector,
    # and the vjp closures pin every forward intermediate until then.
    for node in tape.nodes:
        node.out.node = None
        node.inputs = ()
        node.vjp = None
    tape.nodes.clear()
    return out


# ---------------------------------------------------------------------------
# shape / dtype plumbing


def _as_pair(a, b, op: str):
    """Resolve operands for a binary elementwise op.

    Returns (a_data, b_data, inputs, mode) with mode one of
    'equal', 'scalar_right', 'scalar_left'.
    """
    a_t = isinstance(a, Tensor)
    b_t = isinstance(b, Tensor)
    if not a_t and not b_t:
        raise ShapeError(f"{op}: at least one operand must be a Tensor")
    if a_t and b_t:
        if a.data.dtype != b.data.dtype:
            raise ShapeError(f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")
        if a.shape == b.shape:
            return a.data, b.data, (a, b), "equal"
        if b.data.size == 1 and b.data.ndim == 0:
            return a.data, b.data, (a, b), "scalar_right"
        if a.data.size == 1 and a.data.ndim == 0:
            return a.data, b.data, (a, b), "scalar_left"
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match "
                         "(only equal-shape or scalar broadcasting is supported)")
    if a_t:
        if not isinstance(b, (int, float)):
            raise ShapeError(f"{op}: unsupported operand type {type(b).__name__}")
        return a.data, a.data.dtype.type(b), (a,), "const_right"
    if not isinstance(a, (int, float)):
        raise ShapeError(f"{op}: unsupported operand type {type(a).__name__}")
    return b.data.dtype.type(a), b.data, (b,), "const_left"


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    # Reduce a broadcast gradient back to a 0-d scalar operand.
    if shape == ():
        return np.asarray(g.sum(), dtype=g.dtype)
    return g


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Tensor:
    ad, bd, inputs, mode = _as_pair(a, b, "add")
    out = ad + bd

    def vjp(g, needs):
        if mode in ("const_right", "const_left"):
            return (g,)
        ga = _reduce_to(g, inputs[0].shape) if needs[0] else None
        gb = _reduce_to(g, inputs[1].shape) if needs[1] else None
        return (ga, gb)

    return _apply("add", inputs, out, vjp)


def sub(a, b) -> Tensor:
    ad, bd, inputs, mode = _as_pair(a, b, "sub")
    out = ad - bd

    def vjp(g, needs):
        if mode == "const_right":
            return (g,)
        if mode == "const_left":
            return (-g,)
        ga = _reduce_to(g, inputs[0].shape) if needs[0] else None
        gb = _reduce_to(-g, inputs[1].shape) if needs[1] else None
        return (ga, gb)

    return _apply("sub", inputs, out, vjp)


def mul(a, b) -> Tensor:
    ad, bd, inputs, mode = _as_pair(a, b, "mul")
    out = ad * bd

    def vjp(g, needs):
        if mode == "const_right":
            return (g * bd,)
        if mode == "const_left":
            return (g * ad,)
        ga = _reduce_to(g * bd, inputs[0].shape) if needs[0] else None
        gb = _reduce_to(g * ad, inputs[1].shape) if needs[1] else None
        return (ga, gb)

    return _apply("mul", inputs, out, vjp)


def scale(x: Tensor, s: float) -> Tensor:
    if not isinstance(x, Tensor):
        raise ShapeError("scale: first operand must be a Tensor")
    s = x.data.dtype.type(s)
    out = x.data * s

    def vjp(g, needs):
        return (g * s,)

    return _apply("scale", (x,), out, vjp)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    mask = x.data > 0

    def vjp(g, needs):
        return (g * mask,)

    return _apply("relu", (x,), out, vjp)


def abs_(x: Tensor) -> Tensor:
    out = np.abs(x.data)
    sign = np.sign(x.data)

    def vjp(g, needs):
        return (g * sign,)

    return _apply("abs", (x,), out, vjp)


def sqrt_(x: Tensor) -> Tensor:
    """Elementwise square root; differentiable only for strictly positive input."""
    if np.any(x.data < 0):
        raise NumericError("sqrt of negative value")
    out = np.sqrt(x.data)

    def vjp(g, needs):
        return (g * (0.5 / out),)

    return _apply("sqrt", (x,), out, vjp)


# ---------------------------------------------------------------------------
# contractions


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} vs {b.shape}")
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"matmul dtype mismatch {a.data.dtype} vs {b.data.dtype}")
    m, k = a.shape
    n = b.shape[1]
    _count_macs(m * k * n)
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def vjp(g, needs):
        ga = g @ bd.T if needs[0] else None
        gb = ad.T @ g if needs[1] else None
        return (ga, gb)

    return _apply("matmul", (a, b), out, vjp)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul: [B,m,k] x [B,k,n] -> [B,m,n]."""
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise ShapeError(f"bmm expects 3-D operands, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm shapes incompatible: {a.shape} vs {b.shape}")
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"bmm dtype mismatch {a.data.dtype} vs {b.data.dtype}")
    bsz, m, k = a.shape
    n = b.shape[2]
    _count_macs(bsz * m * k * n)
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def vjp(g, needs):
        ga = g @ bd.transpose(0, 2, 1) if needs[0] else None
        gb = ad.transpose(0, 2, 1) @ g if needs[1] else None
        return (ga, gb)

    return _apply("bmm", (a, b), out, vjp)


def kron(a: Tensor, b: Tensor) -> Tensor:
    """Kronecker product of two matrices: [p,q] x [r,s] -> [p*r, q*s]."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"kron expects 2-D operands, got {a.shape} and {b.shape}")
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"kron dtype mismatch {a.data.dtype} vs {b.data.dtype}")
    p, q = a.shape
    r, s = b.shape
    _count_macs(p * q * r * s)
    out = (a.data[:, None, :, None] * b.data[None, :, None, :]).reshape(p * r, q * s)
    ad, bd = a.data, b.data

    def vjp(g, needs):
        g4 = g.reshape(p, r, q, s)
        ga = np.einsum("iujv,uv->ij", g4, bd) if needs[0] else None
        gb = np.einsum("iujv,ij->uv", g4, ad) if needs[1] else None
        return (ga, gb)

    return _apply("kron", (a, b), out, vjp)


def kron4(a: Tensor, f: Tensor) -> Tensor:
    """Kronecker product of a matrix with a conv kernel stack:
    [n,n] x [o,i,k,k] -> [n*o, n*i, k, k]."""
    if a.data.ndim != 2 or f.data.ndim != 4:
        raise ShapeError(f"kron4 expects 2-D and 4-D operands, got {a.shape} and {f.shape}")
    if a.data.dtype != f.data.dtype:
        raise ShapeError(f"kron4 dtype mismatch {a.data.dtype} vs {f.data.dtype}")
    n, n2 = a.shape
    o, ci, kh, kw = f.shape
    _count_macs(n * n2 * o * ci * kh * kw)
    out = (a.data[:, None, :, None, None, None]
           * f.data[None, :, None, :, :, :]).reshape(n * o, n2 * ci, kh, kw)
    ad, fd = a.data, f.data

    def vjp(g, needs):
        g6 = g.reshape(n, o, n2, ci, kh, kw)
        ga = np.einsum("upvqij,pqij->uv", g6, fd) if needs[0] else None
        gf = np.einsum("upvqij,uv->pqij", g6, ad) if needs[1] else None
        return (ga, gf)

    return _apply("kron4", (a, f), out, vjp)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast bias add: [B,F] + [F]."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias expects [B,F] + [F], got {x.shape} and {b.shape}")
    if x.data.dtype != b.data.dtype:
        raise ShapeError(f"add_bias dtype mismatch {x.data.dtype} vs {b.data.dtype}")
    out = x.data + b.data[None, :]

    def vjp(g, needs):
        gx = g if needs[0] else None
        gb = g.sum(axis=0) if needs[1] else None
        return (gx, gb)

    return _apply("add_bias", (x, b), out, vjp)


def _conv_windows(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    bsz, c = xp.shape[:2]
    sb, sc, sh, sw = xp.strides
    return as_strided(xp, (bsz, c, ho, wo, k, k),
                      (sb, sc, sh * stride, sw * stride, sh, sw))


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, NCHW layout.

    Output spatial size is floor((H + 2*padding - k) / stride) + 1 per axis.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects [B,C,H,W] and [O,C,k,k], got {x.shape} and {w.shape}")
    if x.data.dtype != w.data.dtype:
        raise ShapeError(f"conv2d dtype mismatch {x.data.dtype} vs {w.data.dtype}")
    bsz, c, h, wd = x.shape
    o, cw, kh, kw = w.shape
    if cw != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernel expects {cw}")
    if kh != kw:
        raise ShapeError(f"conv2d kernels must be square, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: bad stride/padding ({stride}, {padding})")
    k = kh
    hp, wp = h + 2 * padding, wd + 2 * padding
    if k > hp or k > wp:
        raise ShapeError(f"conv2d kernel {k} exceeds padded input {hp}x{wp}")
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d output size would be empty")
    if bias is not None:
        if bias.data.ndim != 1 or bias.shape[0] != o:
            raise ShapeError(f"conv2d bias must be [O]={o}, got {bias.shape}")
        if bias.data.dtype != x.data.dtype:
            raise ShapeError("conv2d bias dtype mismatch")

    _count_macs(bsz * o * ho * wo * c * k * k)
    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    win = _conv_windows(xp, k, stride, ho, wo)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(bsz * ho * wo, c * k * k)
    wr = w.data.reshape(o, c * k * k)
    out = (cols @ wr.T).reshape(bsz, ho, wo, o).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    wd_arr = w.data

    inputs = (x, w) if bias is None else (x, w, bias)

    def vjp(g, needs):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, bsz * ho * wo)
        gw = None
        if needs[1]:
            gw = (g2 @ cols).reshape(o, c, k, k)
        gx = None
        if needs[0]:
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    t = np.tensordot(g, wd_arr[:, :, i, j], axes=([1], [0]))
                    gxp[:, :,
                        i:i + stride * (ho - 1) + 1:stride,
                        j:j + stride * (wo - 1) + 1:stride] += t.transpose(0, 3, 1, 2)
            if padding:
                gx = np.ascontiguousarray(gxp[:, :, padding:padding + h, padding:padding + wd])
            else:
                gx = gxp
        if bias is None:
            return (gx, gw)
        gb = g.sum(axis=(0, 2, 3)) if needs[2] else None
        return (gx, gw, gb)

    return _apply("conv2d", inputs, out, vjp)


# ---------------------------------------------------------------------------
# reductions and shape ops


def _norm_axes(axis, ndim: int, op: str):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % ndim for a in axes)
    if len(set(axes)) != len(axes) or any(a >= ndim for a in axes):
        raise ShapeError(f"{op}: bad axis {axis} for rank {ndim}")
    return axes


def sum_(x: Tensor, axis=None) -> Tensor:
    axes = _norm_axes(axis, x.data.ndim, "sum")
    out = x.data.sum(axis=axes)
    in_shape = x.shape

    def vjp(g, needs):
        keep = list(in_shape)
        for a in axes:
            keep[a] = 1
        return (np.broadcast_to(g.reshape(keep), in_shape).astype(g.dtype),)

    return _apply("sum", (x,), np.asarray(out), vjp)


def mean_(x: Tensor, axis=None) -> Tensor:
    axes = _norm_axes(axis, x.data.ndim, "mean")
    count = 1
    for a in axes:
        count *= x.shape[a]
    out = x.data.sum(axis=axes) / x.data.dtype.type(count)
    in_shape = x.shape

    def vjp(g, needs):
        keep = list(in_shape)
        for a in axes:
            keep[a] = 1
        gb = np.broadcast_to(g.reshape(keep), in_shape) / g.dtype.type(count)
        return (gb.astype(g.dtype),)

    return _apply("mean", (x,), np.asarray(out), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape {x.shape} -> {shape}: {e}") from None
    in_shape = x.shape

    def vjp(g, needs):
        return (g.reshape(in_shape),)

    return _apply("reshape", (x,), out, vjp)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.data.ndim)):
        raise ShapeError(f"transpose: {axes} is not a permutation of rank {x.data.ndim}")
    out = x.data.transpose(axes)
    inv = tuple(np.argsort(axes))

    def vjp(g, needs):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _apply("transpose", (x,), np.ascontiguousarray(out), vjp)


def concat(parts, axis: int) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise ShapeError("concat of zero tensors")
    nd = parts[0].data.ndim
    axis = axis % nd
    base = list(parts[0].shape)
    for t in parts[1:]:
        if t.data.ndim != nd or t.data.dtype != parts[0].data.dtype:
            raise ShapeError("concat: rank or dtype mismatch")
        for a in range(nd):
            if a != axis and t.shape[a] != base[a]:
                raise ShapeError(f"concat: shape mismatch on axis {a}")
    out = np.concatenate([t.data for t in parts], axis=axis)
    sizes = [t.shape[axis] for t in parts]

    def vjp(g, needs):
        grads = []
        start = 0
        for sz, need in zip(sizes, needs):
            sl = [slice(None)] * nd
            sl[axis] = slice(start, start + sz)
            grads.append(np.ascontiguousarray(g[tuple(sl)]) if need else None)
            start += sz
        return tuple(grads)

    return _apply("concat", parts, out, vjp)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x spatial upsampling, NCHW."""
    if x.data.ndim != 4:
        raise ShapeError(f"upsample2x expects [B,C,H,W], got {x.shape}")
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    bsz, c, h, w = x.shape

    def vjp(g, needs):
        return (g.reshape(bsz, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _apply("upsample2x", (x,), out, vjp)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g, needs):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _apply("softmax", (x,), out, vjp)


# ---------------------------------------------------------------------------
# gradient checking


class GradCheckReport:
    """Outcome of a finite-difference check (see `grad_check`)."""

    def __init__(self, max_rel_err: float, tol: float, coords: int,
                 worst_param: int, worst_index: int):
        self.max_rel_err = max_rel_err
        self.tol = tol
        self.coords = coords
        self.worst_param = worst_param
        self.worst_index = worst_index
        self.passed = max_rel_err <= tol

    def __repr__(self):
        status = "passed" if self.passed else "FAILED"
        return (f"GradCheckReport({status}, max_rel_err={self.max_rel_err:.3e}, "
                f"tol={self.tol:.1e}, coords={self.coords}, "
                f"worst=param[{self.worst_param}].flat[{self.worst_index}])")


def grad_check(f, params: list[Tensor], h: float = 1e-6, tol: float = 1e-4) -> GradCheckReport:
    """Compare tape gradients of `f()` against central differences.

    `f` is a closure over `params` returning a scalar Tensor; it is called
    once under a fresh tape for the analytic pass and twice per coordinate
    (no tape) for the numeric pass. Use float64 parameters; float32 cannot
    meet a 1e-4 relative tolerance on nontrivial graphs.
    """
    for i, p in enumerate(params):
        if not p.requires_grad:
            raise TapeError(f"grad_check: params[{i}] does not require grad")
    with Tape():
        loss = f()
    analytic = backward(loss)

    max_rel = 0.0
    worst = (0, 0)
    coords = 0
    for pi, p in enumerate(params):
        ga = analytic.get(p)
        ga_flat = (np.zeros_like(p.data) if ga is None else ga.data).reshape(-1)
        flat = p.data.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = f().item()
            flat[idx] = orig - h
            dn = f().item()
            flat[idx] = orig
            num = (up - dn) / (2.0 * h)
            if not np.isfinite(num):
                raise NumericError(f"non-finite finite-difference at params[{pi}].flat[{idx}]")
            ana = float(ga_flat[idx])
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            coords += 1
            if rel > max_rel:
                max_rel = rel
                worst = (pi, idx)
    return GradCheckReport(max_rel, tol, coords, worst[0], worst[1])
