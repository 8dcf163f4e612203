"""Reverse-mode automatic differentiation over dense float64 tensors.

The engine is a classic tape: every operation appends a record to its
:class:`Graph`, and :meth:`Graph.backward` replays the tape in exact reverse
order, accumulating gradients deterministically. Tensors are thin wrappers
around row-major ``numpy`` arrays; all arithmetic is 64-bit.

Design rules enforced here:

- Binary elementwise ops require equal shapes; the only implicit broadcast is
  scalar-vs-tensor (plus the explicit ``add_bias`` axis broadcast).
- Any non-finite forward value or gradient raises :class:`NumericError`
  immediately instead of propagating.
- A graph can be differentiated once; touching it afterwards raises
  :class:`GraphConsumedError`.
- Dropout draws from the ``"dropout"`` stream of the supplied
  :class:`~edgan.rng.RngState` and is the identity in ``eval`` mode.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    GraphConsumedError,
    NumericError,
)
from .rng import RngState

Number = Union[int, float]


def _as_array(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64)


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.isfinite(values).all():
        raise NumericError(f"non-finite value produced by {what}")


class Param:
    """Named persistent parameter living outside any graph.

    ``data`` is mutated in place by the optimizer; graphs see it through
    :meth:`Graph.watch`.
    """

    __slots__ = ("name", "data")

    def __init__(self, name: str, data):
        self.name = name
        self.data = _as_array(data)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.data.shape})"


class DiffTensor:
    """A node in one computation graph: values plus a gradient slot."""

    __slots__ = ("values", "grad", "node_id", "graph", "needs_grad")

    def __init__(self, values: np.ndarray, node_id: int, graph: "Graph", needs_grad: bool):
        self.values = values
        self.grad: Optional[np.ndarray] = None
        self.node_id = node_id
        self.graph = graph
        self.needs_grad = needs_grad

    @property
    def shape(self):
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() on tensor of shape {self.values.shape}")
        return float(self.values.reshape(()))

    def backward(self):
        self.graph.backward(self)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(self.graph, other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    # pointwise ------------------------------------------------------------
    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def log(self):
        return log(self)

    def clamp(self, lo: float, hi: float):
        return clamp(self, lo, hi)

    # reductions -----------------------------------------------------------
    def mean(self, axis: Optional[int] = None):
        return reduce_mean(self, axis)

    def sum(self, axis: Optional[int] = None):
        return reduce_sum(self, axis)

    # structure ------------------------------------------------------------
    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def flatten(self):
        return reshape(self, (self.values.size,))

    def __getitem__(self, key):
        return take(self, key)

    def __repr__(self):
        return f"DiffTensor(shape={self.values.shape}, node={self.node_id})"


class Graph:
    """Ordered record of operations with a train/eval mode flag.

    Operations whose inputs carry no gradient requirement are executed but not
    recorded, so pure evaluation passes leave an empty tape.
    """

    def __init__(self, mode: str = "train"):
        if mode not in ("train", "eval"):
            raise ConfigError(f"unknown graph mode {mode!r}")
        self.mode = mode
        self._tape: list[tuple[DiffTensor, Callable[[np.ndarray], None]]] = []
        self._next_id = 0
        self._watched: dict[int, DiffTensor] = {}
        self._watched_params: dict[int, Param] = {}
        self._consumed = False

    # construction ---------------------------------------------------------
    def _fresh(self, values: np.ndarray, needs_grad: bool) -> DiffTensor:
        t = DiffTensor(values, self._next_id, self, needs_grad)
        self._next_id += 1
        return t

    def tensor(self, values, requires_grad: bool = False) -> DiffTensor:
        """Create a leaf tensor from array-like data."""
        self._check_open()
        arr = _as_array(values)
        _check_finite(arr, "leaf tensor")
        return self._fresh(arr, requires_grad)

    def constant(self, values) -> DiffTensor:
        return self.tensor(values, requires_grad=False)

    def watch(self, param: Param, trainable: bool = True) -> DiffTensor:
        """Bring a persistent parameter into this graph (cached per param).

        The first watch decides trainability for the whole graph, so shared
        weights reused across time steps accumulate into a single grad buffer.
        """
        self._check_open()
        key = id(param)
        t = self._watched.get(key)
        if t is None:
            t = self._fresh(param.data, trainable)
            self._watched[key] = t
            self._watched_params[key] = param
        return t

    def grad(self, param: Param) -> np.ndarray:
        """Gradient of the last backward pass w.r.t. a watched parameter."""
        t = self._watched.get(id(param))
        if t is None:
            raise ContractError(f"parameter {param.name!r} was not watched by this graph")
        if t.grad is None:
            return np.zeros_like(param.data)
        return t.grad

    # recording ------------------------------------------------------------
    def _check_open(self):
        if self._consumed:
            raise GraphConsumedError("graph already consumed by backward()")

    def _record(
        self,
        values: np.ndarray,
        inputs: Sequence[DiffTensor],
        backward_fn: Callable[[np.ndarray, DiffTensor], None],
        what: str,
    ) -> DiffTensor:
        self._check_open()
        _check_finite(values, what)
        needs = any(t.needs_grad for t in inputs)
        out = self._fresh(values, needs)
        if needs:
            self._tape.append((out, backward_fn))
        return out

    # differentiation ------------------------------------------------------
    def backward(self, loss: DiffTensor) -> None:
        """Populate gradients for every tensor the scalar ``loss`` depends on."""
        self._check_open()
        if loss.graph is not self:
            raise ContractError("loss belongs to a different graph")
        if loss.values.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {loss.values.shape}")
        loss.grad = np.ones_like(loss.values)
        for out, backward_fn in reversed(self._tape):
            if out.grad is None:
                continue
            backward_fn(out.grad, out)
        for key, t in self._watched.items():
            if t.needs_grad and t.grad is not None:
                _check_finite(t.grad, f"gradient of {self._watched_params[key].name}")
        self._consumed = True


def _accum(t: DiffTensor, g: np.ndarray) -> None:
    if not t.needs_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += g


def _lift(graph: Graph, value) -> DiffTensor:
    if isinstance(value, DiffTensor):
        if value.graph is not graph:
            raise ContractError("operands belong to different graphs")
        return value
    return graph.tensor(np.float64(value))


def _binary_shapes(a: DiffTensor, b: DiffTensor, opname: str) -> None:
    # equal shapes, or one side a true scalar
    if a.values.shape == b.values.shape:
        return
    if a.values.ndim == 0 or b.values.ndim == 0:
        return
    raise DimensionError(f"{opname}: shapes {a.values.shape} and {b.values.shape} differ")


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    """Collapse a gradient onto a scalar operand's shape."""
    if g.shape == tuple(shape):
        return g
    return np.sum(g).reshape(shape)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: DiffTensor, b) -> DiffTensor:
    """Matrix product of two 2-D tensors with the standard gradient pair."""
    b = _lift(a.graph, b)
    av, bv = a.values, b.values
    if av.ndim != 2 or bv.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {av.shape} and {bv.shape}")
    if av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {av.shape} vs {bv.shape}")

    def backward(g, out):
        _accum(a, g @ bv.T)
        _accum(b, av.T @ g)

    return a.graph._record(av @ bv, (a, b), backward, "matmul")


def add_bias(x: DiffTensor, b: DiffTensor, axis: int = -1) -> DiffTensor:
    """Add a 1-D bias along ``axis`` of ``x``, broadcast over the other axes."""
    b = _lift(x.graph, b)
    xv, bv = x.values, b.values
    if bv.ndim != 1:
        raise DimensionError(f"add_bias: bias must be 1-D, got shape {bv.shape}")
    ax = axis % xv.ndim
    if xv.shape[ax] != bv.shape[0]:
        raise DimensionError(f"add_bias: axis {ax} of {xv.shape} does not match bias {bv.shape}")
    expand = [1] * xv.ndim
    expand[ax] = bv.shape[0]
    sum_axes = tuple(i for i in range(xv.ndim) if i != ax)

    def backward(g, out):
        _accum(x, g)
        _accum(b, g.sum(axis=sum_axes) if sum_axes else g.copy())

    return x.graph._record(xv + bv.reshape(expand), (x, b), backward, "add_bias")


# ---------------------------------------------------------------------------
# elementwise


def add(a: DiffTensor, b) -> DiffTensor:
    b = _lift(a.graph, b)
    _binary_shapes(a, b, "add")

    def backward(g, out):
        _accum(a, _reduce_to(g, a.values.shape))
        _accum(b, _reduce_to(g, b.values.shape))

    return a.graph._record(a.values + b.values, (a, b), backward, "add")


def sub(a: DiffTensor, b) -> DiffTensor:
    b = _lift(a.graph, b)
    _binary_shapes(a, b, "sub")

    def backward(g, out):
        _accum(a, _reduce_to(g, a.values.shape))
        _accum(b, _reduce_to(-g, b.values.shape))

    return a.graph._record(a.values - b.values, (a, b), backward, "sub")


def mul(a: DiffTensor, b) -> DiffTensor:
    b = _lift(a.graph, b)
    _binary_shapes(a, b, "mul")
    av, bv = a.values, b.values

    def backward(g, out):
        _accum(a, _reduce_to(g * bv, a.values.shape))
        _accum(b, _reduce_to(g * av, b.values.shape))

    return a.graph._record(av * bv, (a, b), backward, "mul")


def relu(x: DiffTensor) -> DiffTensor:
    mask = x.values > 0.0

    def backward(g, out):
        _accum(x, g * mask)

    return x.graph._record(np.where(mask, x.values, 0.0), (x,), backward, "relu")


def sigmoid(x: DiffTensor) -> DiffTensor:
    v = x.values
    out_values = np.empty_like(v)
    pos = v >= 0
    out_values[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out_values[~pos] = ev / (1.0 + ev)

    def backward(g, out):
        _accum(x, g * out.values * (1.0 - out.values))

    return x.graph._record(out_values, (x,), backward, "sigmoid")


def tanh(x: DiffTensor) -> DiffTensor:
    out_values = np.tanh(x.values)

    def backward(g, out):
        _accum(x, g * (1.0 - out.values * out.values))

    return x.graph._record(out_values, (x,), backward, "tanh")


def log(x: DiffTensor) -> DiffTensor:
    v = x.values
    if np.any(v <= 0.0):
        raise DomainError("log requires strictly positive inputs")

    def backward(g, out):
        _accum(x, g / v)

    return x.graph._record(np.log(v), (x,), backward, "log")


def clamp(x: DiffTensor, lo: float, hi: float) -> DiffTensor:
    """Clip into [lo, hi]; gradient passes through only in the interior."""
    if lo > hi:
        raise ConfigError(f"clamp: lo {lo} > hi {hi}")
    v = x.values
    inside = (v >= lo) & (v <= hi)

    def backward(g, out):
        _accum(x, g * inside)

    return x.graph._record(np.clip(v, lo, hi), (x,), backward, "clamp")


def dropout(x: DiffTensor, rate: float, rng: Optional[RngState]) -> DiffTensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors.

    Identity in eval mode and for rate 0; no op is recorded in either case.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0 or x.graph.mode == "eval":
        return x
    if rng is None:
        raise ContractError("train-mode dropout needs an RngState")
    keep = rng.stream("dropout").random(x.values.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    factor = keep * scale

    def backward(g, out):
        _accum(x, g * factor)

    return x.graph._record(x.values * factor, (x,), backward, "dropout")


# ---------------------------------------------------------------------------
# convolution and normalization


def conv1d(x: DiffTensor, kernels: DiffTensor, stride: int = 1) -> DiffTensor:
    """Valid cross-correlation over the last axis.

    ``x`` is (c_in, T) or batched (B, c_in, T); ``kernels`` is
    (c_out, c_in, w). Output length is floor((T - w) / stride) + 1.
    """
    if stride < 1:
        raise ConfigError(f"conv1d stride must be >= 1, got {stride}")
    xv = x.values
    kv = kernels.values
    squeeze = xv.ndim == 2
    if squeeze:
        xv = xv[None, :, :]
    if xv.ndim != 3 or kv.ndim != 3:
        raise DimensionError(f"conv1d expects (B,c,T) and (o,c,w), got {x.values.shape} and {kv.shape}")
    batch, c_in, length = xv.shape
    c_out, kc_in, width = kv.shape
    if kc_in != c_in:
        raise DimensionError(f"conv1d: input channels {c_in} vs kernel channels {kc_in}")
    if width > length:
        raise DimensionError(f"conv1d: kernel width {width} exceeds input length {length}")
    out_len = (length - width) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(xv, width, axis=2)[:, :, ::stride, :]
    out_values = np.einsum("bctw,ocw->bot", windows, kv, optimize=True)

    def backward(g, out):
        if squeeze:
            g = g[None, :, :]
        if kernels.needs_grad:
            _accum(kernels, np.einsum("bot,bctw->ocw", g, windows, optimize=True))
        if x.needs_grad:
            gx = np.zeros((batch, c_in, length))
            for j in range(width):
                contrib = np.einsum("bot,oc->bct", g, kv[:, :, j], optimize=True)
                gx[:, :, j : j + stride * out_len : stride] += contrib
            _accum(x, gx[0] if squeeze else gx)

    values = out_values[0] if squeeze else out_values
    return x.graph._record(values, (x, kernels), backward, "conv1d")


def layer_norm(x: DiffTensor, gain: DiffTensor, bias: DiffTensor, eps: float = 1e-5) -> DiffTensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if eps <= 0.0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    xv = x.values
    n = xv.shape[-1]
    if gain.values.shape != (n,) or bias.values.shape != (n,):
        raise DimensionError(
            f"layer_norm: gain {gain.values.shape} / bias {bias.values.shape} must match last axis ({n},)"
        )
    mu = xv.mean(axis=-1, keepdims=True)
    var = xv.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mu) * inv_std
    out_values = xhat * gain.values + bias.values

    def backward(g, out):
        lead = tuple(range(g.ndim - 1))
        if bias.needs_grad:
            _accum(bias, g.sum(axis=lead) if lead else g.copy())
        if gain.needs_grad:
            gx_hat_sum = (g * xhat).sum(axis=lead) if lead else g * xhat
            _accum(gain, gx_hat_sum)
        if x.needs_grad:
            dxhat = g * gain.values
            term = dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accum(x, term * inv_std)

    return x.graph._record(out_values, (x, gain, bias), backward, "layer_norm")


# ---------------------------------------------------------------------------
# reductions


def _reduction(x: DiffTensor, axis: Optional[int], kind: str) -> DiffTensor:
    xv = x.values
    if axis is not None:
        if not -xv.ndim <= axis < xv.ndim:
            raise DimensionError(f"{kind}: axis {axis} invalid for shape {xv.shape}")
        axis = axis % xv.ndim
        count = xv.shape[axis]
        values = xv.mean(axis=axis) if kind == "mean" else xv.sum(axis=axis)
    else:
        count = xv.size
        values = np.asarray(xv.mean() if kind == "mean" else xv.sum())
    scale = 1.0 / count if kind == "mean" else 1.0

    def backward(g, out):
        if axis is None:
            _accum(x, np.full_like(xv, float(g) * scale))
        else:
            _accum(x, np.repeat(np.expand_dims(g * scale, axis), xv.shape[axis], axis=axis))

    return x.graph._record(values, (x,), backward, kind)


def reduce_mean(x: DiffTensor, axis: Optional[int] = None) -> DiffTensor:
    return _reduction(x, axis, "mean")


def reduce_sum(x: DiffTensor, axis: Optional[int] = None) -> DiffTensor:
    return _reduction(x, axis, "sum")


# ---------------------------------------------------------------------------
# structural ops


def concat(tensors: Iterable[DiffTensor], axis: int = 0) -> DiffTensor:
    ts = list(tensors)
    if not ts:
        raise ContractError("concat of zero tensors")
    graph = ts[0].graph
    ts = [_lift(graph, t) for t in ts]
    shapes = [t.values.shape for t in ts]
    ndim = ts[0].values.ndim
    ax = axis % ndim if ndim else 0
    for s in shapes[1:]:
        if len(s) != ndim or any(s[i] != shapes[0][i] for i in range(ndim) if i != ax):
            raise DimensionError(f"concat: incompatible shapes {shapes} along axis {axis}")
    values = np.concatenate([t.values for t in ts], axis=ax)
    sizes = [s[ax] for s in shapes]
    offsets = np.cumsum([0] + sizes)

    def backward(g, out):
        for t, start, stop in zip(ts, offsets[:-1], offsets[1:]):
            if t.needs_grad:
                index = [slice(None)] * ndim
                index[ax] = slice(start, stop)
                _accum(t, g[tuple(index)])

    return graph._record(values, ts, backward, "concat")


def reshape(x: DiffTensor, shape) -> DiffTensor:
    shape = tuple(int(s) for s in (shape if isinstance(shape, (tuple, list)) else (shape,)))
    if int(np.prod(shape)) != x.values.size:
        raise DimensionError(f"reshape: cannot view {x.values.shape} as {shape}")
    old_shape = x.values.shape

    def backward(g, out):
        _accum(x, g.reshape(old_shape))

    return x.graph._record(x.values.reshape(shape), (x,), backward, "reshape")


def transpose(x: DiffTensor, axes=None) -> DiffTensor:
    if axes is None:
        axes = tuple(reversed(range(x.values.ndim)))
    axes = tuple(int(a) for a in axes)
    inverse = np.argsort(axes)

    def backward(g, out):
        _accum(x, np.transpose(g, inverse))

    return x.graph._record(np.transpose(x.values, axes).copy(), (x,), backward, "transpose")


def take(x: DiffTensor, key) -> DiffTensor:
    """Basic slicing with gradients routed back to the selected positions."""
    values = x.values[key]
    shape = x.values.shape

    def backward(g, out):
        gx = np.zeros(shape)
        gx[key] = g
        _accum(x, gx)

    return x.graph._record(np.array(values), (x,), backward, "slice")
