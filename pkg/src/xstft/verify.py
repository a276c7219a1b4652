"""Numerical verification suite run by ``xstft verify``.

Each check returns a :class:`CheckResult` holding the worst observed error
and the tolerance it was held to.  The fast STFT path is compared with the
brute-force oracle, every layer kind and the micro network are gradient
checked at 64-bit, and the structural invariants are asserted directly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .blocks import InceptionSpec, build_inception
from .layers import (
    ACTIVATIONS,
    Activation,
    BatchNorm,
    Conv3d,
    DepthwiseConv,
    GlobalAvgPool,
    Layer,
    MaxPool3d,
    Pointwise,
    StftDepthwise,
    named_layers,
    signature_digest,
)
from .network import build_network, init_orthogonal, micro_spec, softmax
from .oracle import brute_dft, grad_check
from .stft_kernel import build_basis, enumerate_frequencies
from .training import cross_entropy

ORACLE_TOL = 1e-10
DC_TOL = 1e-12
LAYER_GRAD_TOL = 1e-5
NETWORK_GRAD_TOL = 1e-4
ORTHO_TOL = 1e-5
SOFTMAX_TOL = 1e-9


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tol: float
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"[{status}] {self.name}: worst {self.value:.3g} (tol {self.tol:.0e}, {self.seconds:.1f}s){extra}"


def _timed(fn):
    def run(*args, **kw):
        tic = time.perf_counter()
        res = fn(*args, **kw)
        res.seconds = time.perf_counter() - tic
        return res

    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


def _window_for(dims: int, n: int, rng) -> tuple:
    """Window extents with ``dims`` windowed axes; the 1-D and 2-D cases pick axes at random."""
    if dims == 3:
        return (n, n, n)
    axes = sorted(rng.choice(3, size=dims, replace=False).tolist())
    return tuple(n if a in axes else 1 for a in range(3))


def random_stft_case(rng):
    dims = int(rng.integers(1, 4))
    n = int(rng.choice([3, 5]))
    window = _window_for(dims, n, rng)
    shape = (int(rng.integers(1, 4)),) + tuple(int(rng.integers(1, 8)) for _ in range(3))
    stride = tuple(int(rng.integers(1, 3)) for _ in range(3))
    return dims, n, window, shape, stride


@_timed
def check_oracle_equivalence(num_shapes: int = 50, seed: int = 0, tol: float = ORACLE_TOL) -> CheckResult:
    """Fast separable STFT vs the brute-force windowed sum on random shapes."""
    rng = np.random.default_rng(seed)
    worst, where = 0.0, ""
    seen_dims = set()
    for _ in range(num_shapes):
        dims, n, window, shape, stride = random_stft_case(rng)
        seen_dims.add((dims, n))
        basis = build_basis(enumerate_frequencies(dims, n), window)
        x = rng.standard_normal((2,) + shape)
        layer = StftDepthwise(basis, stride)
        fast = layer.forward(x)
        radius = tuple((v - 1) // 2 for v in window)
        for b in range(x.shape[0]):
            ref = brute_dft(x[b], basis.freqs, radius, stride)
            err = float(np.max(np.abs(fast[b] - ref))) if ref.size else 0.0
            if err > worst:
                worst, where = err, f"dims={dims} n={n} window={window} shape={shape} stride={stride}"
    detail = f"{num_shapes} shapes; worst at {where}" if where else f"{num_shapes} shapes"
    return CheckResult("oracle equivalence", worst < tol, worst, tol, detail)


@_timed
def check_dc_rejection(tol: float = DC_TOL) -> CheckResult:
    """Constant input vanishes at interior positions; a centered delta gives [1, 0] per frequency."""
    worst, exact = 0.0, True
    for dims in (1, 2, 3):
        for n in (3, 5):
            trailing = tuple(n if a >= 3 - dims else 1 for a in range(3))
            leading = tuple(n if a < dims else 1 for a in range(3))
            for window in sorted({trailing, leading}):
                basis = build_basis(enumerate_frequencies(dims, n), window)
                r = basis.radius
                x = np.full((1, 2, 2 * n + 1, 2 * n + 1, 2 * n + 1), 3.25)
                y = StftDepthwise(basis).forward(x)
                interior = y[:, :, r[0]: y.shape[2] - r[0], r[1]: y.shape[3] - r[1], r[2]: y.shape[4] - r[2]]
                worst = max(worst, float(np.max(np.abs(interior))))

                delta = np.zeros((1, 1, 2 * n + 1, 2 * n + 1, 2 * n + 1))
                center = (n, n, n)
                delta[(0, 0) + center] = 1.0
                out = StftDepthwise(basis).forward(delta)[(0, slice(None)) + center]
                expected = np.tile([1.0, 0.0], basis.K)
                exact &= bool(np.array_equal(out, expected))
    return CheckResult(
        "DC rejection", worst < tol and exact, worst, tol,
        "center delta gives exactly [1, 0] x K" if exact else "center delta pattern differs",
    )


def _layer_cases(rng) -> list[tuple[str, Layer, tuple, bool]]:
    """``(label, layer, input shape, train)`` for every layer kind."""
    cases = []
    for dims, window in ((1, (3, 1, 1)), (2, (1, 3, 3)), (3, (3, 3, 3)), (3, (5, 5, 5))):
        n = window[0] if dims != 2 else window[1]
        basis = build_basis(enumerate_frequencies(dims, n), window)
        cases.append((f"stft{dims}d n={n}", StftDepthwise(basis), (2, 2, 4, 5, 5), True))
    basis = build_basis(enumerate_frequencies(3, 3), (3, 3, 3))
    cases.append(("stft3d strided", StftDepthwise(basis, (2, 2, 1)), (1, 2, 5, 4, 5), True))
    cases.append(("pointwise", Pointwise(3, 4, name="pw"), (2, 3, 2, 3, 3), True))
    cases.append(("pointwise+bias", Pointwise(3, 4, bias=True, name="pwb"), (2, 3, 2, 3, 3), True))
    cases.append(("depthwise temporal", DepthwiseConv(3, (3, 1, 1), (2, 1, 1)), (2, 3, 5, 3, 3), True))
    cases.append(("depthwise spatial", DepthwiseConv(3, (1, 3, 3), (1, 2, 2)), (2, 3, 2, 5, 5), True))
    cases.append(("conv3d", Conv3d(2, 3, (3, 3, 3), (1, 2, 1)), (2, 2, 3, 4, 4), True))
    cases.append(("batchnorm train", BatchNorm(3), (4, 3, 2, 3, 3), True))
    bn = BatchNorm(3)
    bn.set_running_stats(rng.standard_normal(3), rng.uniform(0.5, 2.0, 3))
    cases.append(("batchnorm eval", bn, (2, 3, 2, 3, 3), False))
    for kind in ACTIVATIONS:
        cases.append((f"activation {kind}", Activation(kind), (2, 3, 2, 3, 3), True))
    cases.append(("maxpool", MaxPool3d((1, 3, 3), (1, 2, 2), (0, 1, 1)), (2, 2, 2, 5, 5), True))
    cases.append(("maxpool 3d", MaxPool3d((3, 3, 3), (2, 2, 2), (1, 1, 1)), (1, 2, 4, 4, 4), True))
    cases.append(("global avgpool", GlobalAvgPool(), (2, 3, 2, 3, 3), True))
    return cases


def _randomize(layer: Layer, rng):
    # BN gains stay well away from zero so no channel collapses onto one
    # side of the following activation (which makes gradients vanish exactly)
    for k, v in layer.params.items():
        if isinstance(layer, BatchNorm):
            layer.params[k] = rng.uniform(0.5, 1.5, v.shape) if k == "gain" else rng.normal(0.0, 0.1, v.shape)
        else:
            layer.params[k] = rng.standard_normal(v.shape) * 0.5


def layer_grad_check(layer: Layer, x: np.ndarray, train: bool, rng, max_probes=None):
    """Gradient check of ``sum(y * R)`` w.r.t. the input and every leaf parameter."""
    R = rng.standard_normal(layer.out_shape(x.shape))

    def loss():
        return float(np.sum(layer.forward(x, train=train) * R))

    layer.forward(x, train=train)
    layer.zero_grad()
    dx = layer.backward(R)
    arrays, analytic = {"input": x}, {"input": dx}
    for name, leaf in named_layers(layer):
        for k, v in leaf.params.items():
            arrays[f"{name}.{k}"] = v
            analytic[f"{name}.{k}"] = leaf.grads[k]

    def pattern():
        return signature_digest(layer.kink_signature())

    return grad_check(loss, arrays, analytic, max_probes=max_probes, pattern_fn=pattern)


@_timed
def check_layer_gradients(seed: int = 0, tol: float = LAYER_GRAD_TOL) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst, where, skipped = 0.0, "", 0
    for label, layer, shape, train in _layer_cases(rng):
        _randomize(layer, rng)
        x = rng.standard_normal(shape)
        rep = layer_grad_check(layer, x, train, rng)
        skipped += rep.skipped
        if rep.checked == 0:
            return CheckResult("layer gradients", False, float("inf"), tol, f"{label}: no probes checked")
        if rep.max_rel_err > worst:
            worst, where = rep.max_rel_err, label
    return CheckResult("layer gradients", worst < tol, worst, tol, f"worst in {where}; {skipped} kink probes skipped")


def small_inception(seed: int = 0, kind: str = "t_stft"):
    spec = InceptionSpec(in_channels=3, widths=(2, 2, 3, 2, 2, 2), block_kind=kind)
    mod = build_inception(spec, name="inc")
    rng = np.random.default_rng(seed)
    for _, leaf in named_layers(mod):
        _randomize(leaf, rng)
    return mod


@_timed
def check_inception_gradient(seed: int = 0, tol: float = LAYER_GRAD_TOL) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst, where = 0.0, ""
    for kind in ("st_stft", "s_stft", "t_stft"):
        mod = small_inception(seed, kind)
        x = rng.standard_normal((2, 3, 3, 4, 4))
        rep = layer_grad_check(mod, x, True, rng, max_probes=8)
        if rep.max_rel_err > worst:
            worst, where = rep.max_rel_err, kind
    return CheckResult("inception gradient", worst < tol, worst, tol, f"worst in {where}")


def micro_gradient_report(variant: str = "t", seed: int = 0, batch: int = 2, max_probes: int = 3):
    """End-to-end check of the micro network's cross-entropy gradient at 64-bit."""
    spec = micro_spec(variant)
    net = build_network(spec, np.float64)
    init_orthogonal(net, seed)
    rng = np.random.default_rng(seed + 1)
    x = rng.standard_normal((batch,) + spec.input_shape)
    y = rng.integers(0, spec.num_classes, size=batch)
    # non-trivial BN affine parameters so every tensor carries signal
    for bn in net.batchnorms():
        bn.params["gain"] = rng.uniform(0.5, 1.5, bn.params["gain"].shape)
        bn.params["bias"] = rng.normal(0.0, 0.1, bn.params["bias"].shape)

    def loss():
        return cross_entropy(net.forward(x, train=True), y)[0]

    net.zero_grad()
    _, g = cross_entropy(net.forward(x, train=True), y)
    dx = net.backward(g)
    arrays = {"input": x, **net.parameters()}
    analytic = {"input": dx, **net.gradients()}
    return grad_check(loss, arrays, analytic, max_probes=max_probes, seed=seed, pattern_fn=net.kink_digest)


@_timed
def check_network_gradient(variant: str = "t", seed: int = 0, tol: float = NETWORK_GRAD_TOL,
                           max_probes: int = 3) -> CheckResult:
    rep = micro_gradient_report(variant, seed, max_probes=max_probes)
    name, idx, a, n = rep.worst if rep.worst else ("-", 0, 0.0, 0.0)
    return CheckResult(
        f"micro {variant.upper()} network gradient", rep.passed(tol), rep.max_rel_err, tol,
        f"{rep.checked} probes, {rep.skipped} kink probes skipped; worst {name}[{idx}]",
    )


@_timed
def check_structure(seed: int = 0) -> CheckResult:
    """Zero STFT parameters, 2K expansion, orthogonal init, softmax normalization."""
    problems = []
    worst_ortho = 0.0
    for variant in ("st", "s", "t"):
        net = build_network(micro_spec(variant), np.float64)
        init_orthogonal(net, seed)
        for name, leaf in named_layers(net):
            if isinstance(leaf, StftDepthwise):
                if leaf.params:
                    problems.append(f"{name} has trainable parameters")
                c_in = 5
                out = leaf.out_shape((1, c_in, 7, 7, 7))
                if out[1] != 2 * leaf.basis.K * c_in:
                    problems.append(f"{name} expands to {out[1]} channels, not 2K x {c_in}")
            w = leaf.params.get("weight")
            if w is not None:
                m = w.reshape(w.shape[0], -1)
                gram = m @ m.T if m.shape[0] <= m.shape[1] else m.T @ m
                worst_ortho = max(worst_ortho, float(np.max(np.abs(gram - np.eye(gram.shape[0])))))
    expected_k = {1: 1, 2: 4, 3: 13}
    for dims, k in expected_k.items():
        if enumerate_frequencies(dims, 3).K != k:
            problems.append(f"{dims}-D frequency set has K != {k}")
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((64, 174)) * 30
    p = softmax(logits)
    soft_err = float(np.max(np.abs(p.sum(axis=1) - 1.0)))
    if soft_err > SOFTMAX_TOL or p.min() < 0:
        problems.append(f"softmax rows off by {soft_err:.2g}")
    if worst_ortho >= ORTHO_TOL:
        problems.append(f"orthogonality error {worst_ortho:.2g}")
    return CheckResult(
        "structural invariants", not problems, worst_ortho, ORTHO_TOL,
        "; ".join(problems) if problems else f"softmax row error {soft_err:.1g}",
    )


def run_suite(quick: bool = False, log=print) -> list[CheckResult]:
    """Run every check; ``quick`` trims the oracle shapes and network probes."""
    checks = [
        lambda: check_oracle_equivalence(num_shapes=12 if quick else 50),
        check_dc_rejection,
        check_layer_gradients,
        check_inception_gradient,
        lambda: check_network_gradient(max_probes=1 if quick else 3),
        check_structure,
    ]
    results = []
    for check in checks:
        res = check()
        results.append(res)
        if log is not None:
            log(res.line())
    return results
