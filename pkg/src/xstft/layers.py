"""Layer primitives with hand-written forward and backward passes.

Functional pairs (``*_forward`` / ``*_backward``) do the arithmetic; the
:class:`Layer` subclasses hold parameters, cache whatever the backward pass
needs, accumulate gradients and report their own cost.  All feature maps
are ``[b, c, t, h, w]`` arrays.
"""

from __future__ import annotations

import hashlib
from typing import Iterator, Sequence

import numpy as np

from .stft_kernel import StftBasis
from .tensor import zero_pad

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
LEAKY_SLOPE = 0.01
SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805
ELU_ALPHA = 1.0
ACTIVATIONS = ("leaky_relu", "relu", "selu", "elu")


def _triple(v) -> tuple[int, int, int]:
    if np.isscalar(v):
        return (int(v),) * 3
    v = tuple(int(a) for a in v)
    if len(v) != 3:
        raise ValueError(f"expected three per-axis values, got {v}")
    return v


def _out_len(length: int, window: int, stride: int, pad: int) -> int:
    return (length + 2 * pad - window) // stride + 1


def _check_stride(stride) -> tuple[int, int, int]:
    stride = _triple(stride)
    if min(stride) < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    return stride


def _axis_slice(ndim: int, axis: int, start: int, count: int, step: int) -> tuple:
    sl = [slice(None)] * ndim
    sl[axis] = slice(start, start + step * (count - 1) + 1, step)
    return tuple(sl)


# ---------------------------------------------------------------------------
# depthwise STFT


def _axis_corr(x, coef, axis, stride, r):
    """Strided 1D cross-correlation along ``axis`` with zero padding ``r``."""
    length = x.shape[axis]
    n_out = (length - 1) // stride + 1
    pads = [(0, 0)] * x.ndim
    pads[axis] = (r, r)
    xp = zero_pad(x, pads)
    out = None
    for i, c in enumerate(coef):
        term = c * xp[_axis_slice(x.ndim, axis, i, n_out, stride)]
        out = term if out is None else out + term
    return out


def _axis_corr_T(u, coef, axis, stride, r, length):
    """Adjoint (plain transpose, no conjugation) of :func:`_axis_corr`."""
    shape = list(u.shape)
    shape[axis] = length + 2 * r
    gp = np.zeros(shape, dtype=np.result_type(u, coef))
    n_out = u.shape[axis]
    for i, c in enumerate(coef):
        gp[_axis_slice(u.ndim, axis, i, n_out, stride)] += c * u
    sl = [slice(None)] * u.ndim
    sl[axis] = slice(r, r + length)
    return gp[tuple(sl)]


def _coef(basis: StftBasis, j: int, sign: int, dtype):
    ctype = np.complex64 if dtype == np.float32 else np.complex128
    coef = basis.factor(j, sign, ctype)
    return coef.real.astype(dtype) if sign == 0 else coef


def _subsample_plain_axes(x, basis: StftBasis, stride):
    sl = [slice(None), slice(None)]
    for a in range(3):
        step = 1 if a in basis.window_axes else stride[a]
        sl.append(slice(None, None, step))
    return x[tuple(sl)]


def stft_output_shape(in_shape, basis: StftBasis, stride=1):
    stride = _check_stride(stride)
    b, c, *dims = in_shape
    out = [(d - 1) // s + 1 for d, s in zip(dims, stride)]
    return (b, c * basis.out_per_channel, *out)


def stft_depthwise_forward(x: np.ndarray, basis: StftBasis, stride=1) -> np.ndarray:
    """Fixed depthwise STFT: ``[b, c, t, h, w] -> [b, c*2K, t', h', w']``.

    Output channel ``c*2K + q`` is row ``q`` of ``W`` applied to the windows
    of input channel ``c``.  Evaluated as a tree of strided 1D correlations,
    one per shared frequency prefix.
    """
    stride = _check_stride(stride)
    if x.ndim != 5:
        raise ValueError(f"expected [b, c, t, h, w], got shape {x.shape}")
    radius = basis.radius
    for a in basis.window_axes:
        if x.shape[2 + a] + 2 * radius[a] < basis.n_per_axis[a]:
            raise ValueError("window larger than padded input")
    arrays = {(): _subsample_plain_axes(x, basis, stride)}
    for stage in basis.plan():
        a = basis.window_axes[stage.axis]
        coef = _coef(basis, stage.axis, stage.sign, x.dtype)
        arrays[stage.child] = _axis_corr(arrays[stage.parent], coef, 2 + a, stride[a], radius[a])
    leaves = [arrays[tuple(s)] for s in basis.freqs.signs]
    b, c = x.shape[:2]
    out = np.empty((b, c, basis.out_per_channel) + leaves[0].shape[2:], dtype=x.dtype)
    for i, z in enumerate(leaves):
        out[:, :, 2 * i] = z.real
        out[:, :, 2 * i + 1] = z.imag
    return out.reshape(b, c * basis.out_per_channel, *out.shape[3:])


def stft_depthwise_backward(grad: np.ndarray, basis: StftBasis, x_shape, stride=1) -> np.ndarray:
    """Input gradient of :func:`stft_depthwise_forward` (the layer has no weights)."""
    stride = _check_stride(stride)
    expected = stft_output_shape(x_shape, basis, stride)
    if tuple(grad.shape) != expected:
        raise ValueError(f"gradient shape {grad.shape} does not match forward output {expected}")
    b, c = x_shape[:2]
    g = grad.reshape(b, c, basis.out_per_channel, *grad.shape[2:])
    adj = {}
    for i, s in enumerate(basis.freqs.signs):
        adj[tuple(s)] = g[:, :, 2 * i] - 1j * g[:, :, 2 * i + 1]

    sub_shape = list(x_shape)
    for a in range(3):
        if a not in basis.window_axes:
            sub_shape[2 + a] = (x_shape[2 + a] - 1) // stride[a] + 1
    radius = basis.radius
    for stage in reversed(basis.plan()):
        a = basis.window_axes[stage.axis]
        coef = _coef(basis, stage.axis, stage.sign, grad.dtype)
        u = adj.pop(stage.child)
        contrib = _axis_corr_T(u, coef, 2 + a, stride[a], radius[a], sub_shape[2 + a])
        if stage.parent in adj:
            adj[stage.parent] = adj[stage.parent] + contrib
        else:
            adj[stage.parent] = contrib
    dx_sub = adj[()].real.astype(grad.dtype)
    if tuple(dx_sub.shape) == tuple(x_shape):
        return dx_sub
    dx = np.zeros(x_shape, dtype=grad.dtype)
    dx[_plain_axes_index(basis, stride)] = dx_sub
    return dx


def _plain_axes_index(basis: StftBasis, stride):
    sl = [slice(None), slice(None)]
    for a in range(3):
        step = 1 if a in basis.window_axes else stride[a]
        sl.append(slice(None, None, step))
    return tuple(sl)


def stft_depthwise_dense(x: np.ndarray, basis: StftBasis, stride=1) -> np.ndarray:
    """Same map as :func:`stft_depthwise_forward` via the dense ``W`` matrix.

    Slow; kept as the second route for the separable/dense agreement checks.
    """
    stride = _check_stride(stride)
    radius = basis.radius
    b, c, t, h, w = x.shape
    out_dims = [(d - 1) // s + 1 for d, s in zip((t, h, w), stride)]
    xp = zero_pad(x, [(0, 0), (0, 0)] + [(r, r) for r in radius])
    cols = []
    for ot in range(basis.n_per_axis[0]):
        for oh in range(basis.n_per_axis[1]):
            for ow in range(basis.n_per_axis[2]):
                cols.append(
                    xp[
                        :, :,
                        ot: ot + stride[0] * (out_dims[0] - 1) + 1: stride[0],
                        oh: oh + stride[1] * (out_dims[1] - 1) + 1: stride[1],
                        ow: ow + stride[2] * (out_dims[2] - 1) + 1: stride[2],
                    ]
                )
    patches = np.stack(cols, axis=2)  # [b, c, |N|, t', h', w']
    y = np.einsum("qn,bcn...->bcq...", basis.W, patches)
    return y.reshape(b, c * basis.out_per_channel, *out_dims)


# ---------------------------------------------------------------------------
# pointwise / depthwise / dense 3D convolutions


def pointwise_forward(x, weight, bias=None):
    b, c = x.shape[:2]
    if weight.ndim != 2 or weight.shape[1] != c:
        raise ValueError(f"weight {weight.shape} does not match {c} input channels")
    y = np.matmul(weight, x.reshape(b, c, -1))
    if bias is not None:
        y += bias[:, None]
    return y.reshape(b, weight.shape[0], *x.shape[2:])


def pointwise_backward(grad, x, weight, with_bias=False):
    """Returns ``(dx, dweight, dbias_or_None)``."""
    b, c = x.shape[:2]
    f = weight.shape[0]
    g = grad.reshape(b, f, -1)
    xr = x.reshape(b, c, -1)
    dw = np.zeros_like(weight)
    for i in range(b):
        dw += g[i] @ xr[i].T
    dx = np.matmul(weight.T, g).reshape(x.shape)
    db = g.sum(axis=(0, 2)) if with_bias else None
    return dx, dw, db


def _same_pad(kernel) -> tuple[int, int, int]:
    for k in kernel:
        if k % 2 == 0:
            raise ValueError(f"kernel extents must be odd for same padding, got {kernel}")
    return tuple((k - 1) // 2 for k in kernel)


def _conv_geometry(x_shape, kernel, stride):
    pad = _same_pad(kernel)
    out = tuple(_out_len(d, k, s, p) for d, k, s, p in zip(x_shape[2:], kernel, stride, pad))
    return pad, out


def _offsets(kernel):
    for ot in range(kernel[0]):
        for oh in range(kernel[1]):
            for ow in range(kernel[2]):
                yield ot, oh, ow


def _window(xp, o, out, stride):
    return xp[
        :, :,
        o[0]: o[0] + stride[0] * (out[0] - 1) + 1: stride[0],
        o[1]: o[1] + stride[1] * (out[1] - 1) + 1: stride[1],
        o[2]: o[2] + stride[2] * (out[2] - 1) + 1: stride[2],
    ]


def depthwise_conv_forward(x, weight, stride=1):
    """Per-channel cross-correlation with zero 'same' padding."""
    stride = _check_stride(stride)
    c = x.shape[1]
    if weight.ndim != 4 or weight.shape[0] != c:
        raise ValueError(f"depthwise weight {weight.shape} does not match {c} channels")
    kernel = weight.shape[1:]
    pad, out = _conv_geometry(x.shape, kernel, stride)
    xp = zero_pad(x, [(0, 0), (0, 0)] + [(p, p) for p in pad])
    y = np.zeros(x.shape[:2] + out, dtype=x.dtype)
    for o in _offsets(kernel):
        y += weight[(slice(None),) + o][None, :, None, None, None] * _window(xp, o, out, stride)
    return y


def depthwise_conv_backward(grad, x, weight, stride=1):
    """Returns ``(dx, dweight)``."""
    stride = _check_stride(stride)
    kernel = weight.shape[1:]
    pad, out = _conv_geometry(x.shape, kernel, stride)
    if grad.shape != x.shape[:2] + out:
        raise ValueError(f"gradient shape {grad.shape} does not match output {x.shape[:2] + out}")
    xp = zero_pad(x, [(0, 0), (0, 0)] + [(p, p) for p in pad])
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(weight)
    for o in _offsets(kernel):
        win = _window(xp, o, out, stride)
        dw[(slice(None),) + o] = np.einsum("bcijk,bcijk->c", grad, win)
        _window(dxp, o, out, stride)[...] += weight[(slice(None),) + o][None, :, None, None, None] * grad
    dx = dxp[:, :, pad[0]: pad[0] + x.shape[2], pad[1]: pad[1] + x.shape[3], pad[2]: pad[2] + x.shape[4]]
    return dx, dw


def conv3d_forward(x, weight, stride=1):
    """Dense cross-correlation, weight ``[f, c, kt, kh, kw]``, same padding."""
    stride = _check_stride(stride)
    if weight.ndim != 5 or weight.shape[1] != x.shape[1]:
        raise ValueError(f"conv weight {weight.shape} does not match input {x.shape}")
    kernel = weight.shape[2:]
    pad, out = _conv_geometry(x.shape, kernel, stride)
    xp = zero_pad(x, [(0, 0), (0, 0)] + [(p, p) for p in pad])
    b = x.shape[0]
    y = np.zeros((b, weight.shape[0]) + out, dtype=x.dtype)
    for o in _offsets(kernel):
        win = np.ascontiguousarray(_window(xp, o, out, stride))
        y += np.matmul(weight[(slice(None), slice(None)) + o], win.reshape(b, x.shape[1], -1)).reshape(y.shape)
    return y


def conv3d_backward(grad, x, weight, stride=1):
    stride = _check_stride(stride)
    kernel = weight.shape[2:]
    pad, out = _conv_geometry(x.shape, kernel, stride)
    xp = zero_pad(x, [(0, 0), (0, 0)] + [(p, p) for p in pad])
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(weight)
    b, c = x.shape[:2]
    g = grad.reshape(b, weight.shape[0], -1)
    for o in _offsets(kernel):
        idx = (slice(None), slice(None)) + o
        win = np.ascontiguousarray(_window(xp, o, out, stride)).reshape(b, c, -1)
        for i in range(b):
            dw[idx] += g[i] @ win[i].T
        _window(dxp, o, out, stride)[...] += np.matmul(weight[idx].T, g).reshape((b, c) + out)
    dx = dxp[:, :, pad[0]: pad[0] + x.shape[2], pad[1]: pad[1] + x.shape[3], pad[2]: pad[2] + x.shape[4]]
    return dx, dw


# ---------------------------------------------------------------------------
# batch normalization


def batchnorm_forward(x, gain, bias, running_mean, running_var, train, momentum=BN_MOMENTUM, eps=BN_EPS):
    """Returns ``(y, cache, new_running_mean, new_running_var)``.

    Statistics are per channel over ``(b, t, h, w)``.  The running variance
    is updated with the unbiased batch variance.
    """
    axes = (0, 2, 3, 4)
    shape = (1, -1, 1, 1, 1)
    if train:
        count = x.size // x.shape[1]
        if count < 2:
            raise ValueError("train-mode batch norm needs at least 2 values per channel")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        new_mean = (1 - momentum) * running_mean + momentum * mean
        new_var = (1 - momentum) * running_var + momentum * var * count / (count - 1)
    else:
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    y = gain.reshape(shape) * xhat + bias.reshape(shape)
    cache = (xhat, inv_std, gain, train)
    return y.astype(x.dtype, copy=False), cache, new_mean, new_var


def batchnorm_backward(grad, cache):
    """Returns ``(dx, dgain, dbias)``."""
    xhat, inv_std, gain, train = cache
    axes = (0, 2, 3, 4)
    shape = (1, -1, 1, 1, 1)
    dbias = grad.sum(axis=axes)
    dgain = (grad * xhat).sum(axis=axes)
    dxhat = grad * gain.reshape(shape)
    if not train:
        return dxhat * inv_std.reshape(shape), dgain, dbias
    count = grad.size // grad.shape[1]
    dx = (
        inv_std.reshape(shape)
        / count
        * (count * dxhat - dxhat.sum(axis=axes).reshape(shape) - xhat * (dxhat * xhat).sum(axis=axes).reshape(shape))
    )
    return dx, dgain, dbias


# ---------------------------------------------------------------------------
# activations


def activation_forward(x, kind="leaky_relu", slope=LEAKY_SLOPE):
    if kind == "leaky_relu":
        return np.where(x > 0, x, x * x.dtype.type(slope))
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "elu":
        return np.where(x > 0, x, ELU_ALPHA * np.expm1(np.minimum(x, 0))).astype(x.dtype, copy=False)
    if kind == "selu":
        neg = SELU_ALPHA * np.expm1(np.minimum(x, 0))
        return (SELU_SCALE * np.where(x > 0, x, neg)).astype(x.dtype, copy=False)
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(grad, x, kind="leaky_relu", slope=LEAKY_SLOPE):
    """At exactly 0 the negative-side derivative is used."""
    pos = x > 0
    if kind == "leaky_relu":
        out = np.where(pos, grad, grad * grad.dtype.type(slope))
    elif kind == "relu":
        out = np.where(pos, grad, 0)
    elif kind == "elu":
        out = np.where(pos, grad, grad * ELU_ALPHA * np.exp(np.minimum(x, 0)))
    elif kind == "selu":
        out = SELU_SCALE * np.where(pos, grad, grad * SELU_ALPHA * np.exp(np.minimum(x, 0)))
    else:
        raise ValueError(f"unknown activation {kind!r}")
    return out.astype(grad.dtype, copy=False)


# ---------------------------------------------------------------------------
# pooling


def maxpool_geometry(in_shape, window, stride, padding):
    window, stride, padding = _triple(window), _check_stride(stride), _triple(padding)
    for d, k, p in zip(in_shape[2:], window, padding):
        if k < 1 or p < 0 or p >= k or d + 2 * p < k:
            raise ValueError(f"invalid pooling geometry: extent {d}, window {k}, pad {p}")
    out = tuple(_out_len(d, k, s, p) for d, k, s, p in zip(in_shape[2:], window, stride, padding))
    return window, stride, padding, out


def _pad_neg_inf(x, padding):
    if not any(padding):
        return x
    return np.pad(x, [(0, 0), (0, 0)] + [(p, p) for p in padding], constant_values=-np.inf)


def maxpool3d_forward(x, window, stride, padding=0):
    """Max over each window (padding never wins)."""
    window, stride, padding, out = maxpool_geometry(x.shape, window, stride, padding)
    xp = _pad_neg_inf(x, padding)
    best = None
    for o in _offsets(window):
        win = _window(xp, o, out, stride)
        best = win.copy() if best is None else np.maximum(best, win, out=best)
    return best


def maxpool3d_argmax(x, y, window, stride, padding=0):
    """Offset index of the first (lowest-offset) maximum of every window."""
    window, stride, padding, out = maxpool_geometry(x.shape, window, stride, padding)
    xp = _pad_neg_inf(x, padding)
    arg = np.full(y.shape, -1, dtype=np.int16)
    for idx, o in enumerate(_offsets(window)):
        arg[(arg < 0) & (_window(xp, o, out, stride) == y)] = idx
    return arg


def maxpool3d_backward(grad, x, y, window, stride, padding=0):
    """Routes each output gradient to the first maximum of its window."""
    window, stride, padding, out = maxpool_geometry(x.shape, window, stride, padding)
    xp = _pad_neg_inf(x, padding)
    dxp = np.zeros(xp.shape, dtype=grad.dtype)
    open_ = np.ones(y.shape, dtype=bool)
    for o in _offsets(window):
        hit = _window(xp, o, out, stride) == y
        hit &= open_
        open_ &= ~hit
        _window(dxp, o, out, stride)[...] += np.where(hit, grad, 0)
    return dxp[
        :, :,
        padding[0]: padding[0] + x.shape[2],
        padding[1]: padding[1] + x.shape[3],
        padding[2]: padding[2] + x.shape[4],
    ]


def global_avg_pool_forward(x):
    return x.reshape(x.shape[0], x.shape[1], -1).mean(axis=2)


def global_avg_pool_backward(grad, x_shape):
    count = int(np.prod(x_shape[2:]))
    g = (grad / count).astype(grad.dtype)
    return np.broadcast_to(g[:, :, None, None, None], x_shape).copy()


# ---------------------------------------------------------------------------
# stateful layers


class Layer:
    """Base class: parameters, gradients, buffers and cost reporting."""

    kind = "layer"

    def __init__(self, name: str = ""):
        self.name = name
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def out_shape(self, in_shape):
        return tuple(in_shape)

    def macs(self, in_shape) -> int:
        """Real multiply-accumulates for one forward pass at ``in_shape``."""
        return 0

    def children(self) -> Iterator["Layer"]:
        return iter(())

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def _accumulate(self, key, value):
        if key in self.grads:
            self.grads[key] += value
        else:
            self.grads[key] = value.astype(self.params[key].dtype, copy=True)

    def kink_signature(self) -> list[bytes]:
        return []

    def astype(self, dtype):
        for k in self.params:
            self.params[k] = self.params[k].astype(dtype)
        for k in self.grads:
            self.grads[k] = self.grads[k].astype(dtype)
        for k, v in self.buffers.items():
            if v.dtype.kind == "f":
                self.buffers[k] = v.astype(dtype)
        return self

    def describe(self) -> str:
        return self.kind


class StftDepthwise(Layer):
    kind = "stft"

    def __init__(self, basis: StftBasis, stride=1, name=""):
        super().__init__(name)
        self.basis = basis
        self.stride = _check_stride(stride)

    def forward(self, x, train=False):
        self._x_shape = x.shape
        return stft_depthwise_forward(x, self.basis, self.stride)

    def backward(self, grad):
        return stft_depthwise_backward(grad, self.basis, self._x_shape, self.stride)

    def out_shape(self, in_shape):
        return stft_output_shape(in_shape, self.basis, self.stride)

    def macs(self, in_shape):
        # one entry per 1D correlation of the separable tree; extents shrink
        # along an axis once that axis has been processed with its stride
        b, c = in_shape[:2]
        dims = [(d - 1) // s + 1 if a not in self.basis.window_axes else d
                for a, (d, s) in enumerate(zip(in_shape[2:], self.stride))]
        done = list(dims)
        total = 0
        current_axis = None
        for stage in self.basis.plan():
            a = self.basis.window_axes[stage.axis]
            if a != current_axis:
                current_axis = a
                done[a] = (in_shape[2 + a] - 1) // self.stride[a] + 1
            n = self.basis.n_per_axis[a]
            total += b * c * int(np.prod(done)) * n * stage.real_macs_per_tap()
        return total

    def describe(self):
        return f"stft{len(self.basis.window_axes)}d K={self.basis.K} n={self.basis.n_per_axis} s={self.stride}"


class Pointwise(Layer):
    kind = "pointwise"

    def __init__(self, in_channels, out_channels, bias=False, name=""):
        super().__init__(name)
        self.in_channels, self.out_channels = in_channels, out_channels
        self.params["weight"] = np.zeros((out_channels, in_channels))
        if bias:
            self.params["bias"] = np.zeros(out_channels)

    def forward(self, x, train=False):
        self._x = x
        return pointwise_forward(x, self.params["weight"], self.params.get("bias"))

    def backward(self, grad):
        dx, dw, db = pointwise_backward(grad, self._x, self.params["weight"], "bias" in self.params)
        self._accumulate("weight", dw)
        if db is not None:
            self._accumulate("bias", db)
        return dx

    def out_shape(self, in_shape):
        return (in_shape[0], self.out_channels) + tuple(in_shape[2:])

    def macs(self, in_shape):
        return int(np.prod(self.out_shape(in_shape))) * self.in_channels

    def describe(self):
        return f"pw {self.in_channels}->{self.out_channels}"


class DepthwiseConv(Layer):
    kind = "depthwise"

    def __init__(self, channels, kernel, stride=1, name=""):
        super().__init__(name)
        self.kernel = _triple(kernel)
        _same_pad(self.kernel)
        self.stride = _check_stride(stride)
        self.params["weight"] = np.zeros((channels,) + self.kernel)

    def forward(self, x, train=False):
        self._x = x
        return depthwise_conv_forward(x, self.params["weight"], self.stride)

    def backward(self, grad):
        dx, dw = depthwise_conv_backward(grad, self._x, self.params["weight"], self.stride)
        self._accumulate("weight", dw)
        return dx

    def out_shape(self, in_shape):
        _, out = _conv_geometry(in_shape, self.kernel, self.stride)
        return tuple(in_shape[:2]) + out

    def macs(self, in_shape):
        return int(np.prod(self.out_shape(in_shape))) * int(np.prod(self.kernel))

    def describe(self):
        return f"dw {self.kernel} s={self.stride}"


class Conv3d(Layer):
    kind = "conv3d"

    def __init__(self, in_channels, out_channels, kernel, stride=1, name=""):
        super().__init__(name)
        self.kernel = _triple(kernel)
        _same_pad(self.kernel)
        self.stride = _check_stride(stride)
        self.in_channels, self.out_channels = in_channels, out_channels
        self.params["weight"] = np.zeros((out_channels, in_channels) + self.kernel)

    def forward(self, x, train=False):
        self._x = x
        return conv3d_forward(x, self.params["weight"], self.stride)

    def backward(self, grad):
        dx, dw = conv3d_backward(grad, self._x, self.params["weight"], self.stride)
        self._accumulate("weight", dw)
        return dx

    def out_shape(self, in_shape):
        _, out = _conv_geometry(in_shape, self.kernel, self.stride)
        return (in_shape[0], self.out_channels) + out

    def macs(self, in_shape):
        return int(np.prod(self.out_shape(in_shape))) * self.in_channels * int(np.prod(self.kernel))


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, channels, momentum=BN_MOMENTUM, eps=BN_EPS, name=""):
        super().__init__(name)
        self.momentum, self.eps = momentum, eps
        self.params["gain"] = np.ones(channels)
        self.params["bias"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)
        self.buffers["updates"] = np.zeros(1, dtype=np.int64)

    def forward(self, x, train=False):
        if not train and self.buffers["updates"][0] == 0:
            raise RuntimeError(f"batch norm {self.name!r}: running statistics are uninitialized")
        y, self._cache, mean, var = batchnorm_forward(
            x, self.params["gain"], self.params["bias"],
            self.buffers["running_mean"], self.buffers["running_var"],
            train, self.momentum, self.eps,
        )
        if train:
            self.buffers["running_mean"] = mean.astype(self.buffers["running_mean"].dtype)
            self.buffers["running_var"] = var.astype(self.buffers["running_var"].dtype)
            self.buffers["updates"] = self.buffers["updates"] + 1
        return y

    def set_running_stats(self, mean, var):
        if np.any(np.asarray(var) <= 0):
            raise ValueError("running variance must be positive")
        dtype = self.params["gain"].dtype
        self.buffers["running_mean"] = np.asarray(mean, dtype=dtype).copy()
        self.buffers["running_var"] = np.asarray(var, dtype=dtype).copy()
        self.buffers["updates"] = np.maximum(self.buffers["updates"], 1)

    def backward(self, grad):
        dx, dg, db = batchnorm_backward(grad, self._cache)
        self._accumulate("gain", dg)
        self._accumulate("bias", db)
        return dx.astype(grad.dtype, copy=False)


class Activation(Layer):
    kind = "activation"

    def __init__(self, kind="leaky_relu", slope=LEAKY_SLOPE, name=""):
        super().__init__(name)
        if kind not in ACTIVATIONS:
            raise ValueError(f"unknown activation {kind!r}")
        self.fn, self.slope = kind, slope

    def forward(self, x, train=False):
        self._x = x
        return activation_forward(x, self.fn, self.slope)

    def backward(self, grad):
        return activation_backward(grad, self._x, self.fn, self.slope)

    def kink_signature(self):
        if self.fn == "elu":
            return []
        return [np.packbits(self._x > 0).tobytes()]

    def describe(self):
        return self.fn


class MaxPool3d(Layer):
    kind = "maxpool"

    def __init__(self, window, stride, padding=0, name=""):
        super().__init__(name)
        self.window, self.stride, self.padding = _triple(window), _check_stride(stride), _triple(padding)

    def forward(self, x, train=False):
        self._x = x
        self._y = maxpool3d_forward(x, self.window, self.stride, self.padding)
        return self._y

    def backward(self, grad):
        return maxpool3d_backward(grad, self._x, self._y, self.window, self.stride, self.padding)

    def out_shape(self, in_shape):
        *_, out = maxpool_geometry(in_shape, self.window, self.stride, self.padding)
        return tuple(in_shape[:2]) + out

    def kink_signature(self):
        if int(np.prod(self.window)) == 1:
            return []
        return [maxpool3d_argmax(self._x, self._y, self.window, self.stride, self.padding).tobytes()]

    def describe(self):
        return f"maxpool {self.window} s={self.stride}"


class GlobalAvgPool(Layer):
    kind = "avgpool"

    def forward(self, x, train=False):
        self._x_shape = x.shape
        return global_avg_pool_forward(x)

    def backward(self, grad):
        return global_avg_pool_backward(grad, self._x_shape)

    def out_shape(self, in_shape):
        return tuple(in_shape[:2])


class Identity(Layer):
    kind = "identity"

    def forward(self, x, train=False):
        return x

    def backward(self, grad):
        return grad


def named_layers(layer: Layer, prefix: str = "") -> Iterator[tuple[str, Layer]]:
    """Depth-first walk yielding ``(dotted_name, layer)`` for leaf layers."""
    full = f"{prefix}.{layer.name}" if prefix and layer.name else (layer.name or prefix)
    kids = list(layer.children())
    if not kids:
        yield full, layer
        return
    for child in kids:
        yield from named_layers(child, full)


def signature_digest(parts: Sequence[bytes]) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return h.hexdigest()
