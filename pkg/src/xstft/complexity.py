"""Parameter and FLOP accounting.

Empirical numbers come from walking the built model: every leaf layer
reports its trainable scalars and multiply-accumulates at a given input
geometry (one MAC = two FLOPs).  The closed-form block formulas are
evaluated alongside for every STFT block so the two can be compared.
Batch norm, activations and pooling are counted as zero FLOPs.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .blocks import Inception, Sequential
from .layers import BatchNorm, Layer, StftDepthwise, named_layers

# (params, FLOPs at 16 frames, FLOPs at 32 frames), 112x112 input
PUBLISHED = {
    "st": (5.84e6, 10.63e9, 21.26e9),
    "s": (6.03e6, 10.39e9, 20.79e9),
    "t": (6.27e6, 10.30e9, 20.60e9),
}


@dataclass
class LayerRow:
    index: int
    name: str
    kind: str
    params: int
    bn_params: int
    flops: int
    out_shape: tuple


@dataclass
class BlockRow:
    name: str
    kind: str
    c: int
    b: int
    f: int
    n: int
    positions: int
    params: int
    flops: int
    analytic_params: float
    analytic_flops: float

    @property
    def param_deviation(self) -> float:
        return self.params / self.analytic_params - 1.0

    @property
    def flop_deviation(self) -> float:
        return self.flops / self.analytic_flops - 1.0


@dataclass
class ComplexityReport:
    input_shape: tuple
    rows: list = field(default_factory=list)
    blocks: list = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_bn_params(self) -> int:
        return sum(r.bn_params for r in self.rows)

    @property
    def total_params_without_bn(self) -> int:
        return self.total_params - self.total_bn_params

    @property
    def total_flops(self) -> int:
        return sum(r.flops for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "name", "params", "flops"])
        for r in self.rows:
            w.writerow([r.index, r.name, r.params, r.flops])
        w.writerow(["total", "all", self.total_params, self.total_flops])
        return buf.getvalue()

    def render(self, variant: str | None = None, detail: bool = False) -> str:
        lines = [f"input {'x'.join(str(v) for v in self.input_shape)}"]
        if detail:
            lines.append(f"{'#':>4}  {'layer':<44} {'kind':<10} {'params':>10} {'FLOPs':>14}")
            for r in self.rows:
                lines.append(f"{r.index:>4}  {r.name:<44} {r.kind:<10} {r.params:>10,} {r.flops:>14,}")
        if self.blocks:
            lines.append("")
            lines.append("STFT blocks: empirical vs closed form")
            lines.append(
                f"  {'block':<28} {'kind':<8} {'c':>5} {'b':>5} {'f':>5} {'params':>9} {'formula':>9}"
                f" {'FLOPs':>13} {'formula':>13} {'dev':>7}"
            )
            for b in self.blocks:
                lines.append(
                    f"  {b.name:<28} {b.kind:<8} {b.c:>5} {b.b:>5} {b.f:>5} {b.params:>9,}"
                    f" {b.analytic_params:>9,.0f} {b.flops:>13,} {b.analytic_flops:>13,.0f}"
                    f" {b.flop_deviation:>+7.1%}"
                )
        lines.append("")
        lines.append(f"total params (with BN)    {self.total_params:>14,}")
        lines.append(f"total params (without BN) {self.total_params_without_bn:>14,}")
        lines.append(f"total FLOPs               {self.total_flops:>14,}  ({self.total_flops / 1e9:.2f}G)")
        if variant in PUBLISHED:
            p, f16, _ = PUBLISHED[variant]
            frames = self.input_shape[1]
            f_ref = f16 * frames / 16
            lines.append(
                f"published {variant.upper()}-STFT: params {p / 1e6:.2f}M "
                f"(ours {self.total_params / 1e6:.2f}M, {self.total_params / p - 1:+.1%}; "
                f"without BN {self.total_params_without_bn / 1e6:.2f}M, {self.total_params_without_bn / p - 1:+.1%})"
            )
            lines.append(
                f"published FLOPs at {frames} frames {f_ref / 1e9:.2f}G "
                f"(ours {self.total_flops / 1e9:.2f}G, {self.total_flops / f_ref - 1:+.1%})"
            )
        return "\n".join(lines) + "\n"


def count_params(model: Layer) -> dict:
    """Trainable scalar count per named tensor, plus ``"total"``."""
    counts = {}
    for lname, leaf in named_layers(model):
        for key, value in leaf.params.items():
            counts[f"{lname}.{key}"] = int(value.size)
    counts["total"] = sum(counts.values())
    return counts


def _leaf_rows(layer, shape, prefix, rows):
    full = f"{prefix}.{layer.name}" if prefix and layer.name else (layer.name or prefix)
    if isinstance(layer, Sequential):
        for child in layer.layers:
            shape = _leaf_rows(child, shape, full, rows)
        return shape
    if isinstance(layer, Inception):
        for br in layer.branches:
            _leaf_rows(br, shape, full, rows)
        return layer.out_shape(shape)
    out = layer.out_shape(shape)
    n = sum(int(v.size) for v in layer.params.values())
    rows.append(
        LayerRow(
            index=len(rows),
            name=full,
            kind=layer.kind,
            params=n,
            bn_params=n if isinstance(layer, BatchNorm) else 0,
            flops=2 * layer.macs(shape),
            out_shape=tuple(out),
        )
    )
    return out


def analytic_block(kind: str, c: int, b: int, f: int, n: int, positions: int) -> tuple[float, float]:
    """Closed-form (params, FLOPs) of one STFT block.

    The FLOP expressions count per-position operations of each stage; they
    are doubled here to match the two-FLOPs-per-MAC convention.  Logarithms
    are base 2.
    """
    log2 = math.log2
    if kind == "st_stft":
        params = (c + 26 * f) * b
        per_pos = c + n**3 * log2(n**3) + 26 * f
    elif kind == "s_stft":
        params = (c + 8 * n + 8 * f) * b
        per_pos = c + 8 * n * log2(n) + 8 * f
    elif kind == "t_stft":
        params = (c + n**2 + 2 * f) * b
        per_pos = c + n**2 * log2(n) + 4 * f
    else:
        raise ValueError(f"no closed form for {kind!r}")
    return float(params), float(2 * per_pos * positions * b)


def _block_rows(model, in_shape, kind, n):
    """Closed-form comparison for every STFT block (stems and inception branches)."""
    out = []

    def visit(layer, shape, prefix):
        full = f"{prefix}.{layer.name}" if prefix and layer.name else (layer.name or prefix)
        if isinstance(layer, Inception):
            for br in layer.branches:
                visit(br, shape, full)
            return layer.out_shape(shape)
        if isinstance(layer, Sequential):
            if any(isinstance(child, StftDepthwise) for child in layer.layers) and kind in (
                "st_stft", "s_stft", "t_stft"
            ):
                pw_in, pw_out = layer.layers[0], layer.layers[-3]
                out_shape = layer.out_shape(shape)
                positions = int(np.prod(out_shape[2:]))
                params = sum(
                    int(v.size) for child in layer.layers if not isinstance(child, BatchNorm) for v in child.params.values()
                )
                a_params, a_flops = analytic_block(kind, pw_in.in_channels, pw_in.out_channels, pw_out.out_channels, n, positions)
                out.append(
                    BlockRow(
                        name=full, kind=kind.split("_")[0], c=pw_in.in_channels, b=pw_in.out_channels,
                        f=pw_out.out_channels, n=n, positions=positions, params=params,
                        flops=2 * layer.macs(shape), analytic_params=a_params, analytic_flops=a_flops,
                    )
                )
                return out_shape
            for child in layer.layers:
                shape = visit(child, shape, full)
            return shape
        return layer.out_shape(shape)

    visit(model, in_shape, "")
    return out


def count_flops(model: Layer, input_shape) -> ComplexityReport:
    """Per-layer and total FLOPs for one clip of ``input_shape`` = (C, T, H, W)."""
    shape = (1,) + tuple(input_shape)
    report = ComplexityReport(input_shape=tuple(input_shape))
    _leaf_rows(model, shape, "", report.rows)
    spec = getattr(model, "spec", None)
    if spec is not None:
        report.blocks = _block_rows(model, shape, spec.block_kind, spec.window)
    return report


def analyze(model: Layer, input_shape) -> ComplexityReport:
    return count_flops(model, input_shape)
