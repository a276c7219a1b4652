import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def jvp_adjoint_gap(forward, backward, x, rng, eps=1e-6):
    """|<J u, v> - <u, J^T v>| relative to the larger side, with J u taken by
    central differences of ``forward`` around ``x``."""
    u = rng.standard_normal(x.shape)
    y = forward(x)
    v = rng.standard_normal(y.shape)
    ju = (forward(x + eps * u) - forward(x - eps * u)) / (2 * eps)
    forward(x)  # restore caches at x
    jtv = backward(v)
    lhs, rhs = float(np.sum(ju * v)), float(np.sum(u * jtv))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-12)


def probe_pairs(layer, x, train, rng, probes=6, step=1e-5):
    """``(analytic, numeric)`` gradient pairs for random scalars of the input
    and every leaf parameter of ``layer`` under the loss ``sum(y * R)``."""
    from xstft.layers import named_layers

    R = rng.standard_normal(layer.out_shape(x.shape))

    def loss():
        return float(np.sum(layer.forward(x, train=train) * R))

    base = loss()
    layer.zero_grad()
    dx = layer.backward(R)
    targets = [(x, dx)] + [(leaf.params[k], leaf.grads[k]) for _, leaf in named_layers(layer) for k in leaf.params]
    pairs = []
    for arr, grad in targets:
        flat, g = arr.reshape(-1), grad.reshape(-1)
        for i in rng.choice(flat.size, size=min(probes, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + step
            lp = loss()
            flat[i] = orig - step
            lm = loss()
            flat[i] = orig
            pairs.append((float(g[i]), (lp - lm) / (2 * step), float(np.abs(g).max())))
    return base, pairs
