import numpy as np
import pytest

from xstft.complexity import count_params
from xstft.layers import BatchNorm, named_layers
from xstft.network import (
    FULL_LAYOUT,
    build_network,
    decode_checkpoint,
    encode_checkpoint,
    full_spec,
    init_orthogonal,
    load_checkpoint,
    micro_spec,
    orthogonal,
    save_checkpoint,
    softmax,
)


@pytest.fixture(scope="module")
def micro_t():
    net = build_network(micro_spec("t"), np.float64)
    return init_orthogonal(net, 0)


def test_full_forward_shape():
    net = init_orthogonal(build_network(full_spec("t"), np.float32), 0)
    x = np.random.default_rng(0).standard_normal((1, 3, 16, 112, 112)).astype(np.float32)
    assert net.forward(x, train=True).shape == (1, 174)


def test_full_layout_has_two_stems_nine_inceptions():
    kinds = [item[0] for item in FULL_LAYOUT]
    assert kinds.count("stem") == 2 and kinds.count("inception") == 9


@pytest.mark.parametrize("variant", ["st", "s", "t"])
def test_micro_is_small(variant):
    assert count_params(build_network(micro_spec(variant)))["total"] < 200_000


def test_orthogonal_square_and_wide():
    rng = np.random.default_rng(3)
    w = orthogonal(64, 64, rng)
    assert np.max(np.abs(w @ w.T - np.eye(64))) < 1e-5
    wide = orthogonal(32, 128, rng)
    assert wide.shape == (32, 128)
    assert np.max(np.abs(wide @ wide.T - np.eye(32))) < 1e-5
    tall = orthogonal(128, 32, rng)
    assert np.max(np.abs(tall.T @ tall - np.eye(32))) < 1e-5


def test_init_orthogonal_every_weight(micro_t):
    for _, leaf in named_layers(micro_t):
        if isinstance(leaf, BatchNorm):
            np.testing.assert_array_equal(leaf.params["gain"], 1.0)
            np.testing.assert_array_equal(leaf.params["bias"], 0.0)
        if "weight" in leaf.params:
            w = leaf.params["weight"]
            assert w.flags.c_contiguous
            m = w.reshape(w.shape[0], -1)
            gram = m @ m.T if m.shape[0] <= m.shape[1] else m.T @ m
            assert np.max(np.abs(gram - np.eye(gram.shape[0]))) < 1e-5


def test_init_is_deterministic():
    a = init_orthogonal(build_network(micro_spec("s")), 11)
    b = init_orthogonal(build_network(micro_spec("s")), 11)
    c = init_orthogonal(build_network(micro_spec("s")), 12)
    assert encode_checkpoint(a.state_dict()) == encode_checkpoint(b.state_dict())
    assert encode_checkpoint(a.state_dict()) != encode_checkpoint(c.state_dict())


def test_softmax_rows(rng):
    p = softmax(rng.standard_normal((16, 174)) * 50)
    assert np.max(np.abs(p.sum(axis=1) - 1)) < 1e-9
    assert p.min() >= 0


def test_predict_proba(micro_t, rng):
    x = rng.standard_normal((2,) + micro_t.spec.input_shape)
    micro_t.forward(x, train=True)
    p = micro_t.predict_proba(x)
    assert p.shape == (2, 4)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("variant", ["st", "s", "t"])
def test_census_invariant_to_batch_and_frames(variant):
    a = count_params(build_network(micro_spec(variant, frames=16)))
    b = count_params(build_network(micro_spec(variant, frames=32)))
    assert a == b


@pytest.mark.parametrize("variant", ["st", "s", "t"])
def test_micro_and_full_share_topology(variant):
    micro = build_network(micro_spec(variant)).structure()
    full = build_network(full_spec(variant)).structure()
    body = len(micro) - 2
    assert micro[:body] == full[:body]
    assert micro[-2:] == full[-2:]  # classifier + global pool


def test_parameter_names_are_stable(micro_t):
    names = [n for n, _, _ in micro_t.named_parameters()]
    assert names[0] == "stem1.pw_in.weight"
    assert names[-2:] == ["classifier.weight", "classifier.bias"]
    assert len(names) == len(set(names))


def test_geometry_underflow():
    with pytest.raises(ValueError):
        build_network(micro_spec("t", size=(4, 4)))


def test_spec_validation():
    with pytest.raises(ValueError):
        build_network(micro_spec("x"))
    with pytest.raises(ValueError):
        build_network(micro_spec("t", layout=FULL_LAYOUT[2:6]))


def test_identity_control_builds():
    net = build_network(micro_spec("t", temporal="identity"))
    kinds = {k for _, k in net.structure()}
    assert "stft" not in kinds


def test_checkpoint_roundtrip(tmp_path, micro_t):
    state = micro_t.state_dict()
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, state)
    raw = path.read_bytes()
    assert raw.startswith(b"XSTFT1")
    back = load_checkpoint(path)
    assert sorted(back) == sorted(state)
    for k in state:
        assert back[k].dtype == state[k].dtype
        np.testing.assert_array_equal(back[k], state[k])
    assert encode_checkpoint(back) == raw


def test_checkpoint_layout_by_hand():
    raw = encode_checkpoint({"b": np.array([1, 2], dtype=np.int64), "a": np.ones((1, 2), dtype=np.float32)})
    expected = (
        b"XSTFT1" + (2).to_bytes(4, "little")
        + (1).to_bytes(2, "little") + b"a" + bytes([1, 2]) + (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
        + (1).to_bytes(2, "little") + b"b" + bytes([2, 1]) + (2).to_bytes(4, "little")
        + np.ones(2, dtype="<f4").tobytes() + np.array([1, 2], dtype="<i8").tobytes()
    )
    assert raw == expected


@pytest.mark.parametrize("cut", [3, 12, -1])
def test_corrupt_checkpoints(micro_t, cut):
    raw = encode_checkpoint(micro_t.state_dict())
    with pytest.raises(ValueError):
        decode_checkpoint(raw[:cut])
    with pytest.raises(ValueError):
        decode_checkpoint(raw + b"\0")


def test_load_state_shape_mismatch(micro_t):
    other = build_network(micro_spec("s"))
    with pytest.raises((ValueError, KeyError)):
        other.load_state_dict(micro_t.state_dict())


@pytest.mark.parametrize("variant,scale", [("st", 0.4), ("s", 1.2), ("t", 3.0)])
def test_full_stem_widths(variant, scale):
    net = build_network(full_spec(variant))
    stem1, stem2 = net.layers[0], net.layers[2]
    assert stem1.layers[0].out_channels == max(1, int(np.floor(8 * scale + 0.5)))
    assert stem1.layers[-3].out_channels == 64
    assert stem2.layers[0].out_channels == int(np.floor(32 * scale + 0.5))
    assert stem2.layers[-3].out_channels == 192
    assert stem1.out_shape((1, 3, 16, 112, 112)) == (1, 64, 16, 56, 56)
