"""STFT blocks, trainable baselines and the inception module.

Every block is a pointwise bottleneck: ``PW(c->b)``, a window stage, then
``PW(->f)``.  Each intermediate layer is followed by batch norm and an
activation.  Pointwise convolutions carry no bias because batch norm follows
immediately.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import (
    ACTIVATIONS,
    Activation,
    BatchNorm,
    Conv3d,
    DepthwiseConv,
    Identity,
    Layer,
    MaxPool3d,
    Pointwise,
    StftDepthwise,
    _check_stride,
)
from .stft_kernel import build_basis, enumerate_frequencies

BLOCK_KINDS = ("st_stft", "s_stft", "t_stft", "fact_dw_baseline", "conv3d_baseline")
VARIANT_BLOCK = {"st": "st_stft", "s": "s_stft", "t": "t_stft", "fact_dw": "fact_dw_baseline"}


class Sequential(Layer):
    kind = "sequential"

    def __init__(self, layers, name=""):
        super().__init__(name)
        self.layers = list(layers)

    def children(self):
        return iter(self.layers)

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def out_shape(self, in_shape):
        for layer in self.layers:
            in_shape = layer.out_shape(in_shape)
        return in_shape

    def macs(self, in_shape):
        total = 0
        for layer in self.layers:
            total += layer.macs(in_shape)
            in_shape = layer.out_shape(in_shape)
        return total

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def kink_signature(self):
        out = []
        for layer in self.layers:
            out.extend(layer.kink_signature())
        return out

    def astype(self, dtype):
        for layer in self.layers:
            layer.astype(dtype)
        return self


class Inception(Layer):
    """Parallel branches over one input, concatenated along channels."""

    kind = "inception"

    def __init__(self, branches, name=""):
        super().__init__(name)
        if not branches:
            raise ValueError("an inception module needs at least one branch")
        self.branches = list(branches)

    def children(self):
        return iter(self.branches)

    def _check(self, shapes):
        spatial = {tuple(s[2:]) for s in shapes}
        if len(spatial) != 1:
            raise ValueError(f"inception {self.name!r}: branch outputs disagree spatially: {shapes}")

    def forward(self, x, train=False):
        outs = [br.forward(x, train) for br in self.branches]
        self._check([o.shape for o in outs])
        self._widths = [o.shape[1] for o in outs]
        return np.concatenate(outs, axis=1)

    def backward(self, grad):
        dx = None
        start = 0
        for br, width in zip(self.branches, self._widths):
            g = br.backward(np.ascontiguousarray(grad[:, start: start + width]))
            start += width
            dx = g if dx is None else dx + g
        return dx

    def out_shape(self, in_shape):
        shapes = [br.out_shape(in_shape) for br in self.branches]
        self._check(shapes)
        return (in_shape[0], sum(s[1] for s in shapes)) + tuple(shapes[0][2:])

    def macs(self, in_shape):
        return sum(br.macs(in_shape) for br in self.branches)

    def zero_grad(self):
        for br in self.branches:
            br.zero_grad()

    def kink_signature(self):
        out = []
        for br in self.branches:
            out.extend(br.kink_signature())
        return out

    def astype(self, dtype):
        for br in self.branches:
            br.astype(dtype)
        return self


@dataclass
class BlockSpec:
    kind: str
    in_channels: int
    bottleneck_channels: int
    out_channels: int
    window: tuple = (3, 3, 3)
    activation: str = "leaky_relu"
    stride: tuple = (1, 1, 1)
    # "stft" or "identity"; identity drops the temporal transform of a
    # t_stft block (per-frame control network)
    temporal: str = "stft"

    def validate(self):
        if self.kind not in BLOCK_KINDS:
            raise ValueError(f"unknown block kind {self.kind!r}")
        if min(self.in_channels, self.bottleneck_channels, self.out_channels) < 1:
            raise ValueError("channel counts must be >= 1")
        window = tuple(int(v) for v in self.window)
        if len(window) != 3 or any(v < 1 or v % 2 == 0 for v in window):
            raise ValueError(f"window extents must be odd, got {self.window}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.temporal not in ("stft", "identity"):
            raise ValueError(f"unknown temporal stage {self.temporal!r}")
        _check_stride(self.stride)
        if self.kind == "st_stft" and len(set(window)) != 1:
            raise ValueError("st_stft needs a cubic window")
        if self.kind == "s_stft" and window[1] != window[2]:
            raise ValueError("s_stft needs a square spatial window")


def _norm_act(channels, activation, prefix):
    return [
        BatchNorm(channels, name=f"{prefix}_bn"),
        Activation(activation, name=f"{prefix}_act"),
    ]


def _stft(dims, n, window, stride, name):
    return StftDepthwise(build_basis(enumerate_frequencies(dims, n), window), stride, name=name)


def build_block(spec: BlockSpec, name: str = "") -> Sequential:
    spec.validate()
    c, b, f = spec.in_channels, spec.bottleneck_channels, spec.out_channels
    nt, nh, nw = (int(v) for v in spec.window)
    st, sh, sw = _check_stride(spec.stride)
    act = spec.activation
    layers: list[Layer] = [Pointwise(c, b, name="pw_in"), *_norm_act(b, act, "pw_in")]

    if spec.kind == "st_stft":
        layers += [_stft(3, nt, (nt, nh, nw), (st, sh, sw), "stft"), *_norm_act(26 * b, act, "stft")]
        mid = 26 * b
    elif spec.kind == "s_stft":
        layers += [_stft(2, nh, (1, nh, nw), (1, sh, sw), "stft"), *_norm_act(8 * b, act, "stft")]
        layers += [DepthwiseConv(8 * b, (nt, 1, 1), (st, 1, 1), name="dw_t"), *_norm_act(8 * b, act, "dw_t")]
        mid = 8 * b
    elif spec.kind == "t_stft":
        layers += [DepthwiseConv(b, (1, nh, nw), (1, sh, sw), name="dw_s"), *_norm_act(b, act, "dw_s")]
        if spec.temporal == "stft":
            layers += [_stft(1, nt, (nt, 1, 1), (st, 1, 1), "stft"), *_norm_act(2 * b, act, "stft")]
            mid = 2 * b
        else:
            layers += [MaxPool3d(1, (st, 1, 1), name="frame_identity")] if st > 1 else [Identity(name="frame_identity")]
            mid = b
    elif spec.kind == "fact_dw_baseline":
        layers += [DepthwiseConv(b, (1, nh, nw), (1, sh, sw), name="dw_s"), *_norm_act(b, act, "dw_s")]
        layers += [DepthwiseConv(b, (nt, 1, 1), (st, 1, 1), name="dw_t"), *_norm_act(b, act, "dw_t")]
        mid = b
    else:  # conv3d_baseline
        layers += [Conv3d(b, b, (nt, nh, nw), (st, sh, sw), name="conv"), *_norm_act(b, act, "conv")]
        mid = b

    layers += [Pointwise(mid, f, name="pw_out"), *_norm_act(f, act, "pw_out")]
    return Sequential(layers, name=name)


@dataclass
class InceptionSpec:
    """Four-branch module; a width of 0 drops that branch.

    ``widths`` = (pointwise out, branch-1 bottleneck, branch-1 out,
    branch-2 bottleneck, branch-2 out, pool-projection out).
    """

    in_channels: int
    widths: tuple
    block_kind: str = "t_stft"
    window: tuple = (3, 3, 3)
    activation: str = "leaky_relu"
    temporal: str = "stft"
    pool_window: tuple = (1, 3, 3)
    pool_padding: tuple = (0, 1, 1)

    @property
    def out_channels(self) -> int:
        w = self.widths
        return w[0] + (w[2] if w[1] else 0) + (w[4] if w[3] else 0) + w[5]

    def validate(self):
        if len(self.widths) != 6 or any(int(v) < 0 for v in self.widths):
            raise ValueError(f"inception widths must be six non-negative ints, got {self.widths}")
        w = self.widths
        if (w[1] == 0) != (w[2] == 0) or (w[3] == 0) != (w[4] == 0):
            raise ValueError("an STFT branch needs both bottleneck and output width")
        if self.out_channels < 1:
            raise ValueError("inception module has no branches")


def build_inception(spec: InceptionSpec, name: str = "") -> Inception:
    spec.validate()
    c = spec.in_channels
    w = [int(v) for v in spec.widths]
    act = spec.activation
    branches = []
    if w[0]:
        branches.append(Sequential([Pointwise(c, w[0], name="pw"), *_norm_act(w[0], act, "pw")], name="branch0"))
    for i, (bott, out) in enumerate(((w[1], w[2]), (w[3], w[4])), start=1):
        if bott:
            blk = BlockSpec(spec.block_kind, c, bott, out, spec.window, act, temporal=spec.temporal)
            branches.append(build_block(blk, name=f"branch{i}"))
    if w[5]:
        branches.append(
            Sequential(
                [
                    MaxPool3d(spec.pool_window, 1, spec.pool_padding, name="pool"),
                    Pointwise(c, w[5], name="pw"),
                    *_norm_act(w[5], act, "pw"),
                ],
                name="branch3",
            )
        )
    return Inception(branches, name=name)
