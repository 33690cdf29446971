"""Dense float64 tensors with a reverse-mode gradient tape.

The graph is built eagerly: every operation records its op kind, parents
and attributes on the output tensor, and an optional :class:`Tape` collects
nodes in creation order (replay checks, parameter registry).  Backward
passes are expressed with the same recorded ops, so computed gradients are
themselves graph nodes and can be differentiated again -- which is what lets
an input-gradient norm appear inside a training loss.

Everything is float64.  Shapes are strict: binary elementwise ops require
identical shapes, and broadcasting is an explicit op.
"""

from __future__ import annotations

import itertools
import logging
import threading

import numpy as np
from scipy.special import expit

logger = logging.getLogger(__name__)

_node_counter = itertools.count()
_tape_stack = threading.local()


def _active_tape():
    stack = getattr(_tape_stack, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """A node in the computation graph: an ndarray plus its provenance."""

    __slots__ = ("data", "op", "parents", "attrs", "requires_grad", "node_id", "grad")

    def __init__(self, data, op="leaf", parents=(), attrs=None, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.op = op
        self.parents = tuple(parents)
        self.attrs = attrs or {}
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.node_id = next(_node_counter)
        self.grad = None  # leaf-only accumulation buffer (ndarray)
        tape = _active_tape()
        if tape is not None:
            tape.nodes.append(self)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return self.data.item()

    def detach(self):
        """A leaf copy sharing data; gradients do not flow past it."""
        return Tensor(self.data, op="leaf")

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, id={self.node_id})"

    # -- operator sugar; Tensor<->Tensor ops are shape-strict ------------
    def __add__(self, other):
        if isinstance(other, Tensor):
            return forward_op("add", self, other)
        return forward_op("add_scalar", self, c=float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return forward_op("sub", self, other)
        return forward_op("add_scalar", self, c=-float(other))

    def __rsub__(self, other):
        return forward_op("add_scalar", forward_op("scale", self, c=-1.0), c=float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return forward_op("mul", self, other)
        return forward_op("scale", self, c=float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return forward_op("mul", self, forward_op("powc", other, p=-1.0))
        return forward_op("scale", self, c=1.0 / float(other))

    def __neg__(self):
        return forward_op("scale", self, c=-1.0)

    def __pow__(self, p):
        return forward_op("powc", self, p=float(p))

    def __matmul__(self, other):
        return forward_op("matmul", self, other)

    def sum(self, axes=None):
        return forward_op("sum", self, axes=_norm_axes(axes, self.data.ndim))

    def mean(self, axes=None):
        return forward_op("mean", self, axes=_norm_axes(axes, self.data.ndim))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return forward_op("reshape", self, shape=tuple(int(s) for s in shape))


def as_tensor(x, requires_grad=False):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=requires_grad)


def leaf(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def constant(data):
    return Tensor(data)


def zeros(shape):
    return Tensor(np.zeros(shape))


def ones(shape):
    return Tensor(np.ones(shape))


class Tape:
    """Ordered record of graph nodes plus a named parameter registry.

    Single-writer: a tape must not be shared across threads.  Entering the
    tape as a context manager makes every tensor created inside it append
    itself to ``nodes`` in creation order, so node inputs always reference
    strictly earlier nodes.
    """

    def __init__(self):
        self.nodes = []
        self.params = {}

    def __enter__(self):
        stack = getattr(_tape_stack, "stack", None)
        if stack is None:
            stack = _tape_stack.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack.stack.pop()
        return False

    def parameter(self, name, data):
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(name, data)
        self.params[name] = p
        return p

    def replay(self):
        """Recompute every non-leaf node from its parents' current data.

        Returns the maximum absolute deviation from the recorded values;
        a faithful tape replays bit-exactly (deviation 0.0).
        """
        worst = 0.0
        for node in self.nodes:
            if node.op == "leaf":
                continue
            fresh = OPS[node.op].forward([p.data for p in node.parents], node.attrs)
            d = float(np.max(np.abs(fresh - node.data))) if fresh.size else 0.0
            worst = max(worst, d)
        return worst


# ---------------------------------------------------------------------------
# op registry

class OpDef:
    __slots__ = ("name", "forward", "vjp", "closed")

    def __init__(self, name, forward, vjp, closed=True):
        self.name = name
        self.forward = forward
        self.vjp = vjp
        self.closed = closed  # gradient expressible as tape ops (grad_graph-safe)


OPS = {}


def register_op(name, forward, vjp, closed=True):
    OPS[name] = OpDef(name, forward, vjp, closed)


def forward_op(kind, *inputs, **attrs):
    """Apply a registered op, validating shapes, and record the result."""
    if kind not in OPS:
        raise ValueError(f"unknown op {kind!r}")
    datas = [t.data for t in inputs]
    out = OPS[kind].forward(datas, attrs)
    return Tensor(out, op=kind, parents=inputs, attrs=attrs)


def _shape_err(kind, shapes, why):
    return ValueError(f"op {kind!r}: {why} (input shapes {shapes})")


def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(sorted(a % ndim for a in axes))


# -- elementwise ------------------------------------------------------------

def _same_shape(kind, datas):
    if datas[0].shape != datas[1].shape:
        raise _shape_err(kind, [d.shape for d in datas], "operands must have identical shapes")


register_op(
    "add",
    lambda d, a: (_same_shape("add", d), d[0] + d[1])[1],
    lambda node, g: (g, g),
)
register_op(
    "sub",
    lambda d, a: (_same_shape("sub", d), d[0] - d[1])[1],
    lambda node, g: (g, -g),
)
register_op(
    "mul",
    lambda d, a: (_same_shape("mul", d), d[0] * d[1])[1],
    lambda node, g: (g * node.parents[1], g * node.parents[0]),
)
register_op(
    "scale",
    lambda d, a: d[0] * a["c"],
    lambda node, g: (g * node.attrs["c"],),
)
register_op(
    "add_scalar",
    lambda d, a: d[0] + a["c"],
    lambda node, g: (g,),
)
register_op(
    "square",
    lambda d, a: d[0] * d[0],
    lambda node, g: (g * (node.parents[0] * 2.0),),
)
register_op(
    "abs",
    lambda d, a: np.abs(d[0]),
    # subgradient at 0 is 0 by convention
    lambda node, g: (g * constant(np.sign(node.parents[0].data)),),
)
register_op(
    "powc",
    lambda d, a: d[0] ** a["p"],
    lambda node, g: (
        g * (forward_op("powc", node.parents[0], p=node.attrs["p"] - 1.0) * node.attrs["p"]),
    ),
)
register_op(
    "exp",
    lambda d, a: np.exp(d[0]),
    lambda node, g: (g * node,),
)
register_op(
    "log",
    lambda d, a: np.log(d[0]),
    lambda node, g: (g * forward_op("powc", node.parents[0], p=-1.0),),
)
register_op(
    "sqrt",
    lambda d, a: np.sqrt(d[0]),
    lambda node, g: (g * (forward_op("powc", node.parents[0], p=-0.5) * 0.5),),
)
register_op(
    "relu",
    lambda d, a: np.maximum(d[0], 0.0),
    lambda node, g: (g * constant((node.parents[0].data > 0.0).astype(np.float64)),),
)
register_op(
    "leaky_relu",
    lambda d, a: np.where(d[0] > 0.0, d[0], a["slope"] * d[0]),
    lambda node, g: (
        g * constant(np.where(node.parents[0].data > 0.0, 1.0, node.attrs["slope"])),
    ),
)
register_op(
    "tanh",
    lambda d, a: np.tanh(d[0]),
    lambda node, g: (g * (forward_op("square", node) * -1.0 + 1.0),),
)
register_op(
    "sigmoid",
    lambda d, a: expit(d[0]),
    lambda node, g: (g * (node * (node * -1.0 + 1.0)),),
)
register_op(
    "softplus",
    lambda d, a: np.logaddexp(0.0, d[0]),
    lambda node, g: (g * forward_op("sigmoid", node.parents[0]),),
)
register_op(
    "clip",
    lambda d, a: np.clip(d[0], a["lo"], a["hi"]),
    lambda node, g: (
        g
        * constant(
            (
                (node.parents[0].data > node.attrs["lo"])
                & (node.parents[0].data < node.attrs["hi"])
            ).astype(np.float64)
        ),
    ),
)


def relu(x):
    return forward_op("relu", x)


def leaky_relu(x, slope=0.2):
    return forward_op("leaky_relu", x, slope=float(slope))


def tanh(x):
    return forward_op("tanh", x)


def sigmoid(x):
    return forward_op("sigmoid", x)


def softplus(x):
    return forward_op("softplus", x)


def exp(x):
    return forward_op("exp", x)


def log(x):
    return forward_op("log", x)


def sqrt(x):
    return forward_op("sqrt", x)


def square(x):
    return forward_op("square", x)


def absolute(x):
    return forward_op("abs", x)


def clip(x, lo, hi):
    return forward_op("clip", x, lo=float(lo), hi=float(hi))


# -- structural -------------------------------------------------------------

def _reshape_fwd(d, a):
    if int(np.prod(a["shape"])) != d[0].size:
        raise _shape_err("reshape", [d[0].shape], f"cannot reshape to {a['shape']}")
    return np.ascontiguousarray(d[0]).reshape(a["shape"])


register_op(
    "reshape",
    _reshape_fwd,
    lambda node, g: (g.reshape(node.parents[0].data.shape),),
)


def _broadcast_fwd(d, a):
    try:
        return np.ascontiguousarray(np.broadcast_to(d[0], a["shape"]))
    except ValueError:
        raise _shape_err("broadcast", [d[0].shape], f"cannot broadcast to {a['shape']}")


def _broadcast_vjp(node, g):
    src = node.parents[0].data.shape
    dst = node.attrs["shape"]
    lead = len(dst) - len(src)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, s in enumerate(src) if s == 1 and dst[lead + i] != 1
    )
    red = g.sum(axes=axes) if axes else g
    return (red.reshape(src),)


register_op("broadcast", _broadcast_fwd, _broadcast_vjp)


def broadcast(x, shape):
    return forward_op("broadcast", x, shape=tuple(int(s) for s in shape))


def _concat_fwd(d, a):
    ax = a["axis"]
    base = list(d[0].shape)
    for arr in d[1:]:
        other = list(arr.shape)
        if len(other) != len(base) or other[:ax] != base[:ax] or other[ax + 1:] != base[ax + 1:]:
            raise _shape_err("concat", [x.shape for x in d], "non-axis dims must match")
    return np.concatenate(d, axis=ax)


def _concat_vjp(node, g):
    ax = node.attrs["axis"]
    grads = []
    start = 0
    for p in node.parents:
        n = p.data.shape[ax]
        grads.append(forward_op("narrow", g, axis=ax, start=start, length=n))
        start += n
    return tuple(grads)


register_op("concat", _concat_fwd, _concat_vjp)


def concat(tensors, axis=0):
    return forward_op("concat", *tensors, axis=int(axis))


def _narrow_fwd(d, a):
    ax, start, length = a["axis"], a["start"], a["length"]
    if start < 0 or start + length > d[0].shape[ax]:
        raise _shape_err("narrow", [d[0].shape], f"slice [{start}:{start+length}] out of range on axis {ax}")
    sl = [slice(None)] * d[0].ndim
    sl[ax] = slice(start, start + length)
    return np.ascontiguousarray(d[0][tuple(sl)])


def _narrow_vjp(node, g):
    src = node.parents[0].data.shape
    ax, start, length = node.attrs["axis"], node.attrs["start"], node.attrs["length"]
    parts = []
    if start > 0:
        head = list(src)
        head[ax] = start
        parts.append(zeros(head))
    parts.append(g)
    tail_n = src[ax] - start - length
    if tail_n > 0:
        tail = list(src)
        tail[ax] = tail_n
        parts.append(zeros(tail))
    if len(parts) == 1:
        return (g,)
    return (forward_op("concat", *parts, axis=ax),)


register_op("narrow", _narrow_fwd, _narrow_vjp)


def narrow(x, axis, start, length):
    return forward_op("narrow", x, axis=int(axis), start=int(start), length=int(length))


def _transpose_fwd(d, a):
    if d[0].ndim != 2:
        raise _shape_err("transpose", [d[0].shape], "expects a 2-D tensor")
    return np.ascontiguousarray(d[0].T)


register_op(
    "transpose",
    _transpose_fwd,
    lambda node, g: (forward_op("transpose", g),),
)


def transpose(x):
    return forward_op("transpose", x)


def _matmul_fwd(d, a):
    x, y = d
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[0]:
        raise _shape_err("matmul", [x.shape, y.shape], "requires (n,k) @ (k,m)")
    return x @ y


register_op(
    "matmul",
    _matmul_fwd,
    lambda node, g: (
        forward_op("matmul", g, transpose(node.parents[1])),
        forward_op("matmul", transpose(node.parents[0]), g),
    ),
)


def matmul(a, b):
    return forward_op("matmul", a, b)


# -- reductions --------------------------------------------------------------

def _red_vjp(node, g, scale_c):
    src = node.parents[0].data.shape
    axes = node.attrs["axes"]
    keep = tuple(1 if i in axes else s for i, s in enumerate(src))
    gg = g if scale_c == 1.0 else g * scale_c
    return (broadcast(gg.reshape(keep), src),)


register_op(
    "sum",
    lambda d, a: np.ascontiguousarray(d[0].sum(axis=a["axes"])),
    lambda node, g: _red_vjp(node, g, 1.0),
)


def _mean_count(shape, axes):
    n = 1
    for ax in axes:
        n *= shape[ax]
    return n


register_op(
    "mean",
    lambda d, a: np.ascontiguousarray(d[0].mean(axis=a["axes"])),
    lambda node, g: _red_vjp(node, g, 1.0 / _mean_count(node.parents[0].data.shape, node.attrs["axes"])),
)


def tsum(x, axes=None):
    return x.sum(axes)


def tmean(x, axes=None):
    return x.mean(axes)


# -- convolution (direct, stride + zero padding) ------------------------------

def _conv_geometry(kind, x, w, stride, pad):
    nd = x.ndim - 2
    if w.ndim != nd + 2:
        raise _shape_err(kind, [x.shape, w.shape], "kernel rank does not match input rank")
    if x.shape[1] != w.shape[1]:
        raise _shape_err(kind, [x.shape, w.shape], "input channels do not match kernel channels")
    k = w.shape[2:]
    out_sp = tuple((x.shape[2 + i] + 2 * pad - k[i]) // stride + 1 for i in range(nd))
    if any(s < 1 for s in out_sp):
        raise _shape_err(kind, [x.shape, w.shape], "kernel larger than padded input")
    return nd, k, out_sp


def _pad_spatial(x, pad, nd):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0)) + ((pad, pad),) * nd)


def _offset_slices(off, out_sp, stride):
    return tuple(slice(o, o + stride * (n - 1) + 1, stride) for o, n in zip(off, out_sp))


def _conv_fwd(d, a):
    x, w = d
    stride, pad = a["stride"], a["pad"]
    nd, k, out_sp = _conv_geometry("conv", x, w, stride, pad)
    B, C = x.shape[:2]
    O = w.shape[0]
    xp = _pad_spatial(x, pad, nd)
    y = np.zeros((B,) + out_sp + (O,))
    yf = y.reshape(-1, O)
    wf = w.reshape(O, C, -1)
    for idx, off in enumerate(np.ndindex(*k)):
        sl = _offset_slices(off, out_sp, stride)
        patch = xp[(slice(None), slice(None)) + sl]
        patch = np.ascontiguousarray(np.moveaxis(patch, 1, -1)).reshape(-1, C)
        yf += patch @ wf[:, :, idx].T
    return np.ascontiguousarray(np.moveaxis(y, -1, 1))


def _convt_fwd(d, a):
    """Adjoint of conv w.r.t. its input: scatter grads back through the kernel."""
    g, w = d
    stride, pad, in_sp = a["stride"], a["pad"], a["in_sp"]
    nd = g.ndim - 2
    B, O = g.shape[:2]
    C = w.shape[1]
    k = w.shape[2:]
    out_sp = g.shape[2:]
    xp = np.zeros((B, C) + tuple(s + 2 * pad for s in in_sp))
    gf = np.ascontiguousarray(np.moveaxis(g, 1, -1)).reshape(-1, O)
    wf = w.reshape(O, C, -1)
    for idx, off in enumerate(np.ndindex(*k)):
        sl = _offset_slices(off, out_sp, stride)
        contrib = (gf @ wf[:, :, idx]).reshape((B,) + out_sp + (C,))
        xp[(slice(None), slice(None)) + sl] += np.moveaxis(contrib, -1, 1)
    if pad == 0:
        return xp
    inner = tuple(slice(pad, pad + s) for s in in_sp)
    return np.ascontiguousarray(xp[(slice(None), slice(None)) + inner])


def _convw_fwd(d, a):
    """Adjoint of conv w.r.t. the kernel."""
    x, g = d
    stride, pad, k = a["stride"], a["pad"], a["kshape"]
    nd = x.ndim - 2
    B, C = x.shape[:2]
    O = g.shape[1]
    out_sp = g.shape[2:]
    xp = _pad_spatial(x, pad, nd)
    gf = np.ascontiguousarray(np.moveaxis(g, 1, -1)).reshape(-1, O)
    dw = np.zeros((O, C) + tuple(k))
    dwf = dw.reshape(O, C, -1)
    for idx, off in enumerate(np.ndindex(*k)):
        sl = _offset_slices(off, out_sp, stride)
        patch = xp[(slice(None), slice(None)) + sl]
        patch = np.ascontiguousarray(np.moveaxis(patch, 1, -1)).reshape(-1, C)
        dwf[:, :, idx] = gf.T @ patch
    return dw


def _conv_vjp(node, g):
    x, w = node.parents
    stride, pad = node.attrs["stride"], node.attrs["pad"]
    gx = forward_op("conv_input_grad", g, w, stride=stride, pad=pad, in_sp=x.data.shape[2:])
    gw = forward_op("conv_weight_grad", x, g, stride=stride, pad=pad, kshape=w.data.shape[2:])
    return (gx, gw)


def _convt_vjp(node, g):
    gp, w = node.parents
    stride, pad = node.attrs["stride"], node.attrs["pad"]
    gg = forward_op("conv", g, w, stride=stride, pad=pad)
    gw = forward_op("conv_weight_grad", g, gp, stride=stride, pad=pad, kshape=w.data.shape[2:])
    return (gg, gw)


def _convw_vjp(node, g):
    x, gp = node.parents
    stride, pad = node.attrs["stride"], node.attrs["pad"]
    gx = forward_op("conv_input_grad", gp, g, stride=stride, pad=pad, in_sp=x.data.shape[2:])
    gg = forward_op("conv", x, g, stride=stride, pad=pad)
    return (gx, gg)


register_op("conv", _conv_fwd, _conv_vjp)
register_op("conv_input_grad", _convt_fwd, _convt_vjp)
register_op("conv_weight_grad", _convw_fwd, _convw_vjp)


def conv2d(x, w, stride=1, pad=0):
    if x.data.ndim != 4:
        raise _shape_err("conv2d", [x.data.shape], "expects (B, C, H, W)")
    return forward_op("conv", x, w, stride=int(stride), pad=int(pad))


def conv3d(x, w, stride=1, pad=0):
    if x.data.ndim != 5:
        raise _shape_err("conv3d", [x.data.shape], "expects (B, C, D, H, W)")
    return forward_op("conv", x, w, stride=int(stride), pad=int(pad))


# -- nearest-neighbor upsample ------------------------------------------------

def _upsample_fwd(d, a):
    x = d[0]
    f = a["factor"]
    nd = x.ndim - 2
    out = x
    for ax in range(2, 2 + nd):
        out = np.repeat(out, f, axis=ax)
    return out


def _upsample_vjp(node, g):
    src = node.parents[0].data.shape
    f = node.attrs["factor"]
    nd = len(src) - 2
    inter = src[:2] + tuple(v for s in src[2:] for v in (s, f))
    axes = tuple(3 + 2 * i for i in range(nd))
    return (g.reshape(inter).sum(axes=axes),)


register_op("upsample", _upsample_fwd, _upsample_vjp)


def upsample_nearest(x, factor=2):
    return forward_op("upsample", x, factor=int(factor))


# ---------------------------------------------------------------------------
# reverse-mode traversal

def _check_scalar(loss):
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar-shaped, got shape {loss.data.shape}")


def _topo_order(root, stop_at_requires_grad=True):
    """Iterative post-order over parents; skips branches that need no grad."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in node.parents:
            if p.node_id not in seen and (p.requires_grad or not stop_at_requires_grad):
                stack.append((p, False))
    return order


def _pull_gradients(loss, seed=None):
    """Propagate grads from ``loss`` to every requires_grad node.

    Returns {node_id: Tensor}.  Gradients are built out of tape ops, so the
    returned tensors are differentiable graph nodes.
    """
    _check_scalar(loss)
    if not loss.requires_grad:
        return {}
    order = _topo_order(loss)
    grads = {loss.node_id: seed if seed is not None else ones(loss.data.shape)}
    for node in reversed(order):
        g = grads.get(node.node_id)
        if g is None or node.op == "leaf":
            continue
        parent_grads = OPS[node.op].vjp(node, g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            prev = grads.get(p.node_id)
            grads[p.node_id] = pg if prev is None else prev + pg
    return grads


def backward(loss):
    """Accumulate d(loss)/d(leaf) into every reachable requires_grad leaf.

    Accumulation is additive across calls until the leaves are cleared
    explicitly (``zero_grad``).
    """
    grads = _pull_gradients(loss)
    order = _topo_order(loss)
    for node in order:
        if node.op == "leaf" and node.requires_grad and node.node_id in grads:
            node.accumulate_grad(grads[node.node_id].data)


def grad_graph(scalar, wrt):
    """Gradient of ``scalar`` w.r.t. ``wrt``, returned as new graph nodes.

    Every op on a path from ``wrt`` to ``scalar`` must have a graph-expressible
    adjoint (dense, elementwise, reductions, convolution); anything else is
    rejected by name.  The returned tensor is itself differentiable.
    """
    _check_scalar(scalar)
    single = isinstance(wrt, Tensor)
    wrt_list = [wrt] if single else list(wrt)
    wanted = {t.node_id for t in wrt_list}

    # nodes that transitively consume any wrt tensor
    on_path = set(wanted)
    for node in _topo_order(scalar, stop_at_requires_grad=False):
        if any(p.node_id in on_path for p in node.parents):
            on_path.add(node.node_id)
            if not OPS[node.op].closed:
                raise ValueError(
                    f"op {node.op!r} lies between the target and the loss but has "
                    "no graph-expressible gradient"
                )
    grads = _pull_gradients(scalar)
    out = [grads.get(t.node_id, zeros(t.data.shape)) for t in wrt_list]
    return out[0] if single else out


# ---------------------------------------------------------------------------
# parameters and the Adam update

class Parameter:
    """A named leaf tensor plus its Adam state (two moments, step counter)."""

    __slots__ = ("name", "tensor", "m1", "m2", "step")

    def __init__(self, name, data):
        self.name = name
        self.tensor = Tensor(data, requires_grad=True)
        self.m1 = np.zeros_like(self.tensor.data)
        self.m2 = np.zeros_like(self.tensor.data)
        self.step = 0

    @property
    def value(self):
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    def zero_grad(self):
        self.tensor.zero_grad()


def adam_step(params, lr, beta1=0.5, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update in place; skips a param on non-finite grads."""
    for p in params:
        g = p.tensor.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            logger.warning("adam_step: non-finite gradient for %r; step rejected", p.name)
            continue
        p.step += 1
        p.m1 += (1.0 - beta1) * (g - p.m1)
        p.m2 += (1.0 - beta2) * (g * g - p.m2)
        m_hat = p.m1 / (1.0 - beta1 ** p.step)
        v_hat = p.m2 / (1.0 - beta2 ** p.step)
        p.tensor.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def zero_grads(params):
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# deterministic rng

def make_rng(seed):
    """PCG64 generator; the same seed yields the same stream on any platform."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def rng_for(seed, *key):
    """Independent substream addressed by integer key (stage, iteration, ...)."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))
    )
