"""Slow, independent reference computations.

``brute_dft`` evaluates the windowed Fourier sum literally, one output
position at a time, with its own neighborhood walk and phase evaluation.
``grad_check`` compares analytic gradients against central differences.
Neither touches the fast code paths they are used to check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


def brute_dft(x: np.ndarray, freqs, r, stride=1) -> np.ndarray:
    """Local Fourier coefficients of every channel of a ``[c, t, h, w]`` array.

    ``r`` gives the window radius per axis ``(r_t, r_h, r_w)``; axes with a
    non-zero radius are the windowed ones, matched in order to the frequency
    components.  Samples outside the array count as zero.  Output rows per
    channel alternate real and imaginary parts, frequency by frequency.
    """
    x = np.asarray(x, dtype=np.float64)
    radius = (r, r, r) if np.isscalar(r) else tuple(int(v) for v in r)
    stride = (stride,) * 3 if np.isscalar(stride) else tuple(stride)
    window_axes = [a for a in range(3) if radius[a] > 0]
    if len(window_axes) != freqs.dims:
        raise ValueError("window axes do not match the frequency set dimension")
    pts = np.zeros((len(freqs.signs), 3))
    for i, sign in enumerate(freqs.signs):
        for a, s in zip(window_axes, sign):
            pts[i, a] = s / freqs.n

    c, t, h, w = x.shape
    out_t, out_h, out_w = (math.ceil(d / s) for d, s in zip((t, h, w), stride))
    K = len(freqs.signs)
    out = np.zeros((c, 2 * K, out_t, out_h, out_w))
    for pt in range(out_t):
        for ph in range(out_h):
            for pw in range(out_w):
                cx = (pt * stride[0], ph * stride[1], pw * stride[2])
                ys = []
                for yt in range(cx[0] - radius[0], cx[0] + radius[0] + 1):
                    for yh in range(cx[1] - radius[1], cx[1] + radius[1] + 1):
                        for yw in range(cx[2] - radius[2], cx[2] + radius[2] + 1):
                            if 0 <= yt < t and 0 <= yh < h and 0 <= yw < w:
                                ys.append((yt, yh, yw))
                if not ys:
                    continue
                ys = np.array(ys)
                vals = x[:, ys[:, 0], ys[:, 1], ys[:, 2]]  # [c, m]
                d = np.array(cx)[None, :] - ys  # x - y
                phase = np.exp(-2j * np.pi * (pts @ d.T))  # [K, m]
                F = vals @ phase.T  # [c, K]
                out[:, 0::2, pt, ph, pw] = F.real
                out[:, 1::2, pt, ph, pw] = F.imag
    return out.reshape(c * 2 * K, out_t, out_h, out_w)


@dataclass
class GradCheckReport:
    max_rel_err: float = 0.0
    worst: tuple = ()
    checked: int = 0
    skipped: int = 0
    errors: dict = field(default_factory=dict)

    def passed(self, tol: float) -> bool:
        return self.checked > 0 and self.max_rel_err < tol


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def grad_check(
    loss_fn: Callable[[], float],
    arrays: dict,
    analytic: dict,
    step: float = 1e-5,
    max_probes: int | None = None,
    seed: int = 0,
    pattern_fn: Callable[[], object] | None = None,
) -> GradCheckReport:
    """Central-difference check of ``analytic`` gradients.

    ``loss_fn`` recomputes the scalar loss from the current contents of the
    arrays in ``arrays`` (perturbed in place, then restored).  With
    ``max_probes`` only that many randomly chosen scalars per array are
    probed.  If ``pattern_fn`` is given it must describe the non-smooth
    choices (activation signs, pooling winners) made by the last
    ``loss_fn`` call; probes whose +/- evaluations disagree with the base
    pattern straddle a kink and are skipped.
    """
    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    base_pattern = None
    if pattern_fn is not None:
        loss_fn()
        base_pattern = pattern_fn()
    for name, arr in arrays.items():
        if not arr.flags.c_contiguous:
            raise ValueError(f"{name}: grad_check perturbs in place and needs a C-contiguous array")
        flat = arr.reshape(-1)
        grad = np.asarray(analytic[name]).reshape(-1)
        idx = np.arange(flat.size)
        if max_probes is not None and flat.size > max_probes:
            idx = np.sort(rng.choice(flat.size, size=max_probes, replace=False))
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            lp = float(loss_fn())
            pp = pattern_fn() if pattern_fn is not None else None
            flat[i] = orig - step
            lm = float(loss_fn())
            pm = pattern_fn() if pattern_fn is not None else None
            flat[i] = orig
            if pattern_fn is not None and (pp != base_pattern or pm != base_pattern):
                report.skipped += 1
                continue
            num = (lp - lm) / (2 * step)
            err = relative_error(float(grad[i]), num)
            report.checked += 1
            worst = max(worst, err)
            if err > report.max_rel_err:
                report.max_rel_err = err
                report.worst = (name, int(i), float(grad[i]), num)
        report.errors[name] = worst
    return report
