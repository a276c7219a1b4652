"""X-STFT networks: layout description, assembly, initialization, checkpoints.

A network is two STFT stem blocks and a run of inception modules with
interleaved max pools, followed by a per-position linear classifier and
global average pooling.  Applying the classifier before the (linear) pool
gives the same logits as pooling first and keeps every layer's cost
proportional to the clip length.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .blocks import (
    VARIANT_BLOCK,
    BlockSpec,
    Inception,
    InceptionSpec,
    Sequential,
    build_block,
    build_inception,
)
from .layers import (
    BatchNorm,
    Conv3d,
    DepthwiseConv,
    GlobalAvgPool,
    Layer,
    MaxPool3d,
    Pointwise,
    named_layers,
    signature_digest,
)

# Bottleneck multipliers per variant, applied to the base bottleneck widths of
# the layout.  They compensate for the 2K channel expansion (26x, 8x, 2x) of
# the three STFT stages.
BOTTLENECK_SCALE = {"st": 0.4, "s": 1.2, "t": 3.0, "fact_dw": 3.0}

# Base layout at width 1.0.  stem: out, bottleneck, stride.
# pool: window, stride, padding.  inception: the six InceptionSpec widths.
FULL_LAYOUT = (
    ("stem", 64, 8, (1, 2, 2)),
    ("pool", (1, 3, 3), (1, 2, 2), (0, 1, 1)),
    ("stem", 192, 32, (1, 1, 1)),
    ("pool", (1, 3, 3), (1, 2, 2), (0, 1, 1)),
    ("inception", (64, 96, 128, 16, 32, 32)),
    ("inception", (128, 128, 192, 32, 96, 64)),
    ("pool", (1, 3, 3), (1, 2, 2), (0, 1, 1)),
    ("inception", (192, 96, 208, 16, 48, 64)),
    ("inception", (160, 112, 224, 24, 64, 64)),
    ("inception", (128, 128, 256, 24, 64, 64)),
    ("inception", (112, 144, 288, 32, 64, 64)),
    ("inception", (256, 160, 320, 32, 128, 128)),
    ("pool", (1, 3, 3), (2, 2, 2), (0, 1, 1)),
    ("inception", (256, 160, 320, 32, 128, 128)),
    ("inception", (384, 192, 384, 48, 128, 128)),
)
MICRO_LAYOUT = FULL_LAYOUT[:6]


def _round(v: float) -> int:
    return max(1, int(math.floor(v + 0.5)))


@dataclass
class NetworkSpec:
    variant: str = "t"
    num_classes: int = 174
    frames: int = 16
    size: tuple = (112, 112)
    channels: int = 3
    width: float = 1.0
    window: int = 3
    activation: str = "leaky_relu"
    bottleneck_scale: float | None = None
    temporal: str = "stft"
    layout: tuple = FULL_LAYOUT

    @property
    def block_kind(self) -> str:
        return VARIANT_BLOCK[self.variant]

    @property
    def input_shape(self) -> tuple:
        return (self.channels, self.frames) + tuple(self.size)

    @property
    def scale(self) -> float:
        return self.bottleneck_scale if self.bottleneck_scale is not None else BOTTLENECK_SCALE[self.variant]

    def validate(self):
        if self.variant not in VARIANT_BLOCK:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.num_classes < 1 or self.frames < 1 or min(self.size) < 1:
            raise ValueError("classes, frames and size must be positive")
        if self.width <= 0 or self.scale <= 0:
            raise ValueError("width and bottleneck multipliers must be positive")
        kinds = [item[0] for item in self.layout]
        if kinds.count("stem") != 2:
            raise ValueError("a network has exactly two stem blocks")

    def channel_widths(self, widths):
        """Scale inception widths: outputs by width, bottlenecks also by scale."""
        w = self.width
        b = self.width * self.scale
        w0, r1, o1, r2, o2, o3 = widths
        return (
            _round(w0 * w) if w0 else 0,
            _round(r1 * b) if r1 else 0,
            _round(o1 * w) if o1 else 0,
            _round(r2 * b) if r2 else 0,
            _round(o2 * w) if o2 else 0,
            _round(o3 * w) if o3 else 0,
        )


def full_spec(variant="t", **kw) -> NetworkSpec:
    return NetworkSpec(variant=variant, **kw)


def micro_spec(variant="t", **kw) -> NetworkSpec:
    defaults = dict(num_classes=4, frames=16, size=(32, 32), width=0.125, layout=MICRO_LAYOUT)
    defaults.update(kw)
    return NetworkSpec(variant=variant, **defaults)


class Network(Sequential):
    """Ordered layer list plus parameter bookkeeping."""

    kind = "network"

    def __init__(self, layers, spec: NetworkSpec):
        super().__init__(layers, name="")
        self.spec = spec

    def predict_proba(self, x):
        return softmax(self.forward(x, train=False))

    def named_parameters(self):
        """Stable ``(name, layer, key)`` triples for every trainable tensor."""
        out = []
        for lname, layer in named_layers(self):
            for key in layer.params:
                out.append((f"{lname}.{key}", layer, key))
        return out

    def parameters(self) -> dict:
        return {name: layer.params[key] for name, layer, key in self.named_parameters()}

    def gradients(self) -> dict:
        return {name: layer.grads[key] for name, layer, key in self.named_parameters()}

    def named_buffers(self):
        out = []
        for lname, layer in named_layers(self):
            for key in layer.buffers:
                out.append((f"{lname}.{key}", layer, key))
        return out

    def state_dict(self) -> dict:
        state = {f"param/{n}": l.params[k] for n, l, k in self.named_parameters()}
        state.update({f"buffer/{n}": l.buffers[k] for n, l, k in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict):
        for n, layer, key in self.named_parameters():
            arr = state[f"param/{n}"]
            if arr.shape != layer.params[key].shape:
                raise ValueError(f"shape mismatch for {n}: {arr.shape} vs {layer.params[key].shape}")
            layer.params[key] = arr.astype(layer.params[key].dtype).copy()
        for n, layer, key in self.named_buffers():
            layer.buffers[key] = state[f"buffer/{n}"].copy()

    def batchnorms(self):
        return [layer for _, layer in named_layers(self) if isinstance(layer, BatchNorm)]

    def kink_digest(self) -> str:
        return signature_digest(self.kink_signature())

    def structure(self) -> list[tuple[str, str]]:
        """``(name, kind)`` of every leaf layer, for topology comparisons."""
        return [(n, layer.kind) for n, layer in named_layers(self)]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def build_network(spec: NetworkSpec, dtype=np.float64) -> Network:
    """Assemble the layer list and verify the geometry with a shape pass."""
    spec.validate()
    kind = spec.block_kind
    n = spec.window
    window = (n, n, n)
    layers: list[Layer] = []
    c = spec.channels
    stem = inc = pool = 0
    for item in spec.layout:
        if item[0] == "stem":
            _, out, bott, stride = item
            stem += 1
            f = _round(out * spec.width)
            b = _round(bott * spec.width * spec.scale)
            blk = BlockSpec(kind, c, b, f, window, spec.activation, tuple(stride), temporal=spec.temporal)
            layers.append(build_block(blk, name=f"stem{stem}"))
            c = f
        elif item[0] == "pool":
            _, win, stride, pad = item
            pool += 1
            layers.append(MaxPool3d(win, stride, pad, name=f"pool{pool}"))
        elif item[0] == "inception":
            inc += 1
            ispec = InceptionSpec(c, spec.channel_widths(item[1]), kind, window, spec.activation, spec.temporal)
            layers.append(build_inception(ispec, name=f"inception{inc}"))
            c = ispec.out_channels
        else:
            raise ValueError(f"unknown layout item {item[0]!r}")
    layers.append(Pointwise(c, spec.num_classes, bias=True, name="classifier"))
    layers.append(GlobalAvgPool(name="avgpool"))
    net = Network(layers, spec)

    shape = (1,) + spec.input_shape
    for layer in layers:
        shape = layer.out_shape(shape)
        if min(shape[1:]) < 1:
            raise ValueError(f"geometry underflow at {layer.name}: {shape}")
    _check_windows(net, (1,) + spec.input_shape)
    net.astype(dtype)
    return net


def _check_windows(net: Network, in_shape):
    """Every windowed layer must see at least one full window of padded input."""

    def walk(layer, shape):
        if isinstance(layer, Sequential):
            for child in layer.layers:
                shape = walk(child, shape)
            return shape
        if isinstance(layer, Inception):
            for br in layer.branches:
                walk(br, shape)
            return layer.out_shape(shape)
        if isinstance(layer, (DepthwiseConv, Conv3d)):
            for d, k in zip(shape[2:], layer.kernel):
                if d < (k + 1) // 2:
                    raise ValueError(f"geometry underflow: {layer.name} window {layer.kernel} on {shape}")
        return layer.out_shape(shape)

    walk(net, in_shape)


# ---------------------------------------------------------------------------
# initialization


def orthogonal(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Matrix with orthonormal rows (wide) or columns (tall), via QR."""
    big, small = max(rows, cols), min(rows, cols)
    a = rng.standard_normal((big, small))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))[None, :]
    return q if rows >= cols else q.T


def init_orthogonal(model: Network, seed: int) -> Network:
    """Orthogonal weights, unit BN gains, zero biases; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    for name, layer, key in model.named_parameters():
        arr = layer.params[key]
        if key == "weight":
            rows = arr.shape[0]
            cols = int(np.prod(arr.shape[1:]))
            w = orthogonal(rows, cols, rng).reshape(arr.shape)
            layer.params[key] = np.ascontiguousarray(w, dtype=arr.dtype)
        elif key == "gain":
            layer.params[key] = np.ones_like(arr)
        else:
            layer.params[key] = np.zeros_like(arr)
    model.zero_grad()
    return model


# ---------------------------------------------------------------------------
# checkpoints
#
# b"XSTFT1", u32 tensor count, then per tensor a manifest entry
# (u16 name length, utf-8 name, u8 dtype code, u8 rank, u32 extents...),
# then all payloads in manifest order, raw little-endian, row-major.

CHECKPOINT_MAGIC = b"XSTFT1"
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4"), 2: np.dtype("<i8")}
_CODES = {np.dtype("float64"): 0, np.dtype("float32"): 1, np.dtype("int64"): 2}


def encode_checkpoint(tensors: dict) -> bytes:
    names = sorted(tensors)
    head = [CHECKPOINT_MAGIC, struct.pack("<I", len(names))]
    body = []
    for name in names:
        arr = np.asarray(tensors[name])
        code = _CODES.get(arr.dtype)
        if code is None:
            raise ValueError(f"unsupported dtype {arr.dtype} for {name}")
        raw = name.encode("utf-8")
        head.append(struct.pack("<H", len(raw)) + raw)
        head.append(struct.pack("<BB", code, arr.ndim))
        head.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        body.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(head + body)


def decode_checkpoint(data: bytes) -> dict:
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError("not an XSTFT1 checkpoint")
    try:
        return _decode_checkpoint(data)
    except (struct.error, UnicodeDecodeError) as err:
        raise ValueError(f"corrupt checkpoint manifest: {err}") from None


def _decode_checkpoint(data: bytes) -> dict:
    pos = len(CHECKPOINT_MAGIC)
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    manifest = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos: pos + nlen].decode("utf-8")
        pos += nlen
        code, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        if code not in _DTYPES:
            raise ValueError(f"unknown dtype code {code} for {name}")
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        manifest.append((name, _DTYPES[code], shape))
    out = {}
    for name, dtype, shape in manifest:
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if pos + nbytes > len(data):
            raise ValueError(f"truncated checkpoint payload for {name}")
        out[name] = np.frombuffer(data, dtype=dtype, count=int(np.prod(shape)), offset=pos).reshape(shape).copy()
        pos += nbytes
    if pos != len(data):
        raise ValueError("trailing bytes after checkpoint payload")
    return out


def save_checkpoint(path, tensors: dict):
    Path(path).write_bytes(encode_checkpoint(tensors))


def load_checkpoint(path) -> dict:
    return decode_checkpoint(Path(path).read_bytes())
