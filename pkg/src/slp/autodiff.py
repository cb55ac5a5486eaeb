"""Dense float64 tensors with reverse-mode automatic differentiation.

The computation graph is define-by-run: every operation records its parent
tensors and a closure that pushes adjoints back to them. Calling
:meth:`Tensor.backward` on a scalar walks the graph in reverse topological
order exactly once. Gradients accumulate across backward calls until cleared,
which also makes shared subexpressions come out right.

Everything is stored as ``numpy`` float64 arrays; no view aliasing is exposed,
so tensors can be treated as immutable values (optimizer updates mutate leaf
``data`` in place between graphs, never inside one).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes cannot be combined."""


class ContractError(ValueError):
    """Raised when an operation's calling contract is violated."""


def _shape_error(op, *shapes):
    return DimensionError(f"{op}: incompatible shapes " + " vs ".join(str(tuple(s)) for s in shapes))


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A dense float64 array that participates in the autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None
        self._op = "leaf"

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- graph walk ----------------------------------------------------------

    def backward(self):
        """Reverse sweep from a scalar root; grads accumulate across sweeps."""
        if self.size != 1:
            raise ContractError(f"backward requires a scalar root, got shape {self.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        # propagate this sweep's adjoints in isolation, then merge them into
        # whatever grads earlier sweeps left behind
        saved = {}
        for node in topo:
            saved[id(node)] = node.grad
            node.grad = None
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)
        for node in topo:
            prior = saved[id(node)]
            if prior is not None:
                node.grad = prior if node.grad is None else prior + node.grad

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, *axes)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op):
    parents = tuple(parents)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
        out._op = op
    return out


# -- elementwise arithmetic (numpy broadcasting, trailing-axis rules) ----------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise _shape_error("add", a.shape, b.shape) from None

    def backward(gy):
        if a.requires_grad:
            a._accumulate(_unbroadcast(gy, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(gy, b.shape))

    return _make(data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise _shape_error("sub", a.shape, b.shape) from None

    def backward(gy):
        if a.requires_grad:
            a._accumulate(_unbroadcast(gy, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-gy, b.shape))

    return _make(data, (a, b), backward, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise _shape_error("mul", a.shape, b.shape) from None

    def backward(gy):
        if a.requires_grad:
            a._accumulate(_unbroadcast(gy * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(gy * a.data, b.shape))

    return _make(data, (a, b), backward, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data / b.data
    except ValueError:
        raise _shape_error("div", a.shape, b.shape) from None

    def backward(gy):
        if a.requires_grad:
            a._accumulate(_unbroadcast(gy / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-gy * a.data / (b.data * b.data), b.shape))

    return _make(data, (a, b), backward, "div")


def neg(a):
    a = as_tensor(a)

    def backward(gy):
        a._accumulate(-gy)

    return _make(-a.data, (a,), backward, "neg")


def exp(a):
    a = as_tensor(a)
    data = np.exp(a.data)

    def backward(gy):
        a._accumulate(gy * data)

    return _make(data, (a,), backward, "exp")


def log(a):
    a = as_tensor(a)

    def backward(gy):
        a._accumulate(gy / a.data)

    return _make(np.log(a.data), (a,), backward, "log")


def sqrt(a):
    a = as_tensor(a)
    data = np.sqrt(a.data)

    def backward(gy):
        a._accumulate(gy * 0.5 / data)

    return _make(data, (a,), backward, "sqrt")


def square(a):
    a = as_tensor(a)

    def backward(gy):
        a._accumulate(gy * 2.0 * a.data)

    return _make(a.data * a.data, (a,), backward, "square")


def power(a, exponent):
    a = as_tensor(a)
    c = float(exponent)

    def backward(gy):
        a._accumulate(gy * c * np.power(a.data, c - 1.0))

    return _make(np.power(a.data, c), (a,), backward, "power")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0

    def backward(gy):
        a._accumulate(gy * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), backward, "relu")


def tanh(a):
    a = as_tensor(a)
    data = np.tanh(a.data)

    def backward(gy):
        a._accumulate(gy * (1.0 - data * data))

    return _make(data, (a,), backward, "tanh")


def sigmoid(a):
    a = as_tensor(a)
    data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(gy):
        a._accumulate(gy * data * (1.0 - data))

    return _make(data, (a,), backward, "sigmoid")


# -- reductions / shape ops ----------------------------------------------------


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is not None:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        for ax in axes:
            if not -a.ndim <= ax < a.ndim:
                raise DimensionError(f"sum: axis {ax} out of range for shape {a.shape}")
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(gy):
        g = gy
        if axis is not None and not keepdims:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            axes = tuple(ax % a.ndim for ax in axes)
            g = np.expand_dims(g, tuple(sorted(axes)))
        a._accumulate(np.broadcast_to(g, a.shape).copy() if np.shape(g) != a.shape else g)

    return _make(data, (a,), backward, "sum")


def mean_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = 1
        for ax in axes:
            n *= a.shape[ax]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, *shape):
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    orig = a.shape

    def backward(gy):
        a._accumulate(gy.reshape(orig))

    return _make(a.data.reshape(shape), (a,), backward, "reshape")


def transpose(a, *axes):
    a = as_tensor(a)
    if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    if not axes:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(gy):
        a._accumulate(gy.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), backward, "transpose")


def broadcast_to(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)

    def backward(gy):
        a._accumulate(_unbroadcast(gy, a.shape))

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), backward, "broadcast_to")


def slice_axis(a, axis, start, stop):
    """The slab ``a[..., start:stop, ...]`` along ``axis``."""
    a = as_tensor(a)
    axis = axis % a.ndim
    idx = tuple(slice(None) if i != axis else slice(start, stop) for i in range(a.ndim))

    def backward(gy):
        g = np.zeros_like(a.data)
        g[idx] = gy
        a._accumulate(g)

    return _make(a.data[idx].copy(), (a,), backward, "slice_axis")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    base = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != base:
            raise _shape_error("stack", base, t.shape)
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward(gy):
        pieces = np.moveaxis(gy, axis, 0)
        for t, g in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(g)

    return _make(data, tensors, backward, "stack")


def softmax_axis(a, axis):
    """Softmax along ``axis`` with max-subtraction for stability."""
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"softmax_axis: axis {axis} out of range for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(gy):
        inner = (gy * data).sum(axis=axis, keepdims=True)
        a._accumulate(data * (gy - inner))

    return _make(data, (a,), backward, "softmax")


def stop_gradient(a):
    """Value-level identity that blocks all gradient flow."""
    a = as_tensor(a)
    return Tensor(a.data)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    data = a.data @ b.data

    def backward(gy):
        if a.requires_grad:
            a._accumulate(gy @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ gy)

    return _make(data, (a, b), backward, "matmul")


# -- convolution ---------------------------------------------------------------


def _im2col(x, k, stride, pad, out_hw):
    """Gather k*k windows of a padded (B,C,H,W) array into (B,C,k,k,Ho,Wo)."""
    b, c, h, w = x.shape
    ho, wo = out_hw
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((b, c, k, k, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols


def _col2im(cols, hw, stride, pad):
    """Adjoint of :func:`_im2col`: scatter-add windows back to (B,C,H,W)."""
    b, c, k, _, ho, wo = cols.shape
    h, w = hw
    buf = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            buf[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    return buf[:, :, pad : pad + h, pad : pad + w]


def _conv_out_extent(n, k, stride, pad):
    out = (n + 2 * pad - k) // stride + 1
    if out < 1:
        raise DimensionError(f"conv2d: extent underflow, input {n} with kernel {k}, stride {stride}, padding {pad}")
    return out


def conv2d(x, kernels, bias=None, stride=1, padding=0):
    """Cross-correlation of (C_in,H,W) or (B,C_in,H,W) with (C_out,C_in,k,k) kernels."""
    x, kernels = as_tensor(x), as_tensor(kernels)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or kernels.ndim != 4:
        raise _shape_error("conv2d", x.shape, kernels.shape)
    b, cin, h, w = xd.shape
    cout, cin_k, k, k2 = kernels.shape
    if cin != cin_k or k != k2:
        raise _shape_error("conv2d", x.shape, kernels.shape)
    if k % 2 == 0:
        raise ContractError(f"conv2d: kernel extent must be odd, got {k}")
    ho = _conv_out_extent(h, k, stride, padding)
    wo = _conv_out_extent(w, k, stride, padding)

    w2 = kernels.data.reshape(cout, cin * k * k)
    cols = _im2col(xd, k, stride, padding, (ho, wo)).reshape(b, cin * k * k, ho * wo)
    ym = np.matmul(w2[None], cols)
    data = ym.reshape(b, cout, ho, wo)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise _shape_error("conv2d bias", bias.shape, (cout,))
        data = data + bias.data[None, :, None, None]
    if squeeze:
        data = data[0]

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    needs_cols = kernels.requires_grad
    saved_cols = cols if needs_cols else None

    def backward(gy):
        gy4 = gy[None] if squeeze else gy
        gym = gy4.reshape(b, cout, ho * wo)
        if bias is not None and bias.requires_grad:
            bias._accumulate(gym.sum(axis=(0, 2)))
        if kernels.requires_grad:
            gw2 = np.matmul(gym, saved_cols.transpose(0, 2, 1)).sum(axis=0)
            kernels._accumulate(gw2.reshape(kernels.shape))
        if x.requires_grad:
            gcols = np.matmul(w2.T[None], gym).reshape(b, cin, k, k, ho, wo)
            gx = _col2im(gcols, (h, w), stride, padding)
            x._accumulate(gx[0] if squeeze else gx)

    return _make(data, parents, backward, "conv2d")


def conv_transpose2d(x, kernels, bias=None, stride=1, padding=0, output_padding=0):
    """Transposed convolution; kernels are (C_in, C_out, k, k)."""
    x, kernels = as_tensor(x), as_tensor(kernels)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or kernels.ndim != 4:
        raise _shape_error("conv_transpose2d", x.shape, kernels.shape)
    b, cin, hi, wi = xd.shape
    cin_k, cout, k, k2 = kernels.shape
    if cin != cin_k or k != k2:
        raise _shape_error("conv_transpose2d", x.shape, kernels.shape)
    if output_padding >= stride:
        raise ContractError(f"conv_transpose2d: output_padding {output_padding} must be < stride {stride}")
    ho = (hi - 1) * stride - 2 * padding + k + output_padding
    wo = (wi - 1) * stride - 2 * padding + k + output_padding
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv_transpose2d: extent underflow for input {(hi, wi)}")

    w2 = kernels.data.reshape(cin, cout * k * k)
    xm = xd.reshape(b, cin, hi * wi)
    cols = np.matmul(w2.T[None], xm).reshape(b, cout, k, k, hi, wi)
    data = _col2im(cols, (ho, wo), stride, padding)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise _shape_error("conv_transpose2d bias", bias.shape, (cout,))
        data = data + bias.data[None, :, None, None]
    if squeeze:
        data = data[0]

    parents = (x, kernels) if bias is None else (x, kernels, bias)

    def backward(gy):
        gy4 = gy[None] if squeeze else gy
        gcols = _im2col(gy4, k, stride, padding, (hi, wi)).reshape(b, cout * k * k, hi * wi)
        if bias is not None and bias.requires_grad:
            bias._accumulate(gy4.sum(axis=(0, 2, 3)))
        if kernels.requires_grad:
            gw2 = np.matmul(xm, gcols.transpose(0, 2, 1)).sum(axis=0)
            kernels._accumulate(gw2.reshape(kernels.shape))
        if x.requires_grad:
            gx = np.matmul(w2[None], gcols)
            x._accumulate(gx.reshape(xd.shape)[0] if squeeze else gx.reshape(xd.shape))

    return _make(data, parents, backward, "conv_transpose2d")


# -- composite layers ------------------------------------------------------------

LAYER_NORM_EPS = 1e-5


def layer_norm(x, gain, bias, eps=LAYER_NORM_EPS):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise _shape_error("layer_norm", x.shape, gain.shape, bias.shape)
    mu = mean_(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = mean_(square(centered), axis=-1, keepdims=True)
    normed = div(centered, sqrt(add(var, eps)))
    return add(mul(normed, gain), bias)


def linear(x, weight, bias=None):
    """Affine map on the last axis; ``x`` may carry leading batch axes."""
    x, weight = as_tensor(x), as_tensor(weight)
    lead = x.shape[:-1]
    flat = reshape(x, (-1, x.shape[-1])) if x.ndim != 2 else x
    out = matmul(flat, weight)
    if bias is not None:
        out = add(out, bias)
    if x.ndim != 2:
        out = reshape(out, lead + (weight.shape[1],))
    return out


@dataclass
class GruParams:
    """Per-gate weights of a GRU cell: input/hidden matrices plus biases."""

    w_iz: Tensor
    w_ir: Tensor
    w_in: Tensor
    w_hz: Tensor
    w_hr: Tensor
    w_hn: Tensor
    b_iz: Tensor
    b_ir: Tensor
    b_in: Tensor
    b_hz: Tensor
    b_hr: Tensor
    b_hn: Tensor

    def tensors(self):
        return {
            "w_iz": self.w_iz, "w_ir": self.w_ir, "w_in": self.w_in,
            "w_hz": self.w_hz, "w_hr": self.w_hr, "w_hn": self.w_hn,
            "b_iz": self.b_iz, "b_ir": self.b_ir, "b_in": self.b_in,
            "b_hz": self.b_hz, "b_hr": self.b_hr, "b_hn": self.b_hn,
        }


def gru_cell(state, inputs, params):
    """Row-wise gated recurrent update.

    The update gate mixes toward the candidate: z=1 returns the candidate,
    z=0 keeps the previous state.
    """
    state, inputs = as_tensor(state), as_tensor(inputs)
    if state.shape != inputs.shape:
        raise _shape_error("gru_cell", state.shape, inputs.shape)
    z = sigmoid(add(linear(inputs, params.w_iz, params.b_iz), linear(state, params.w_hz, params.b_hz)))
    r = sigmoid(add(linear(inputs, params.w_ir, params.b_ir), linear(state, params.w_hr, params.b_hr)))
    n = tanh(add(linear(inputs, params.w_in, params.b_in), mul(r, linear(state, params.w_hn, params.b_hn))))
    return add(mul(z, n), mul(sub(1.0, z), state))


# -- parameter initialization ------------------------------------------------


def glorot_uniform(rng, shape, fan_in=None, fan_out=None):
    """Xavier/Glorot uniform init as float64."""
    if fan_in is None or fan_out is None:
        if len(shape) == 2:
            fan_in, fan_out = shape
        elif len(shape) == 4:
            receptive = shape[2] * shape[3]
            fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
        else:
            raise ContractError(f"glorot_uniform: cannot infer fans for shape {shape}")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# -- outer-loop optimizer -------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment accumulators, keyed positionally."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0

    def ensure(self, params):
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in params]
            self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update, in place, with bias correction."""
    if len(params) != len(grads):
        raise ContractError(f"adam_step: {len(params)} params vs {len(grads)} grads")
    state.ensure(params)
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise _shape_error("adam_step", p.data.shape, g.shape)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def clip_global_norm(grads, max_norm):
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    total = np.sqrt(sum(float((g * g).sum()) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total
