"""Line-oriented ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored.  Every key may appear once,
except ``layer``, which is repeated to spell out the network layout::

    layer = stem 64 8 1x2x2
    layer = pool 1x3x3 1x2x2 0x1x1
    layer = inception 64 96 128 16 32 32

Unknown keys and malformed values raise :class:`ConfigError` naming the key.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .blocks import BlockSpec, InceptionSpec
from .network import FULL_LAYOUT, MICRO_LAYOUT, NetworkSpec
from .training import TrainConfig


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


@dataclass
class DataConfig:
    train_samples: int = 2000
    val_samples: int = 500
    train_seed: int = 1
    val_seed: int = 2


@dataclass
class RunConfig:
    network: NetworkSpec = field(default_factory=NetworkSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    stop_at: float | None = None


PRESETS = {
    "full": dict(num_classes=174, frames=16, size=(112, 112), width=1.0, layout=FULL_LAYOUT),
    "micro": dict(num_classes=4, frames=16, size=(32, 32), width=0.125, layout=MICRO_LAYOUT),
}

# config key -> (section, attribute, parser)
_NETWORK_KEYS = {
    "variant": "variant", "classes": "num_classes", "frames": "frames", "size": "size",
    "channels": "channels", "width": "width", "window": "window", "activation": "activation",
    "bottleneck_scale": "bottleneck_scale", "temporal": "temporal",
}
_TRAIN_KEYS = {f.name: f.name for f in dataclasses.fields(TrainConfig)}
_DATA_KEYS = {f.name: f.name for f in dataclasses.fields(DataConfig)}
_OTHER_KEYS = {"preset", "stop_at", "layer"}
KNOWN_KEYS = frozenset(_NETWORK_KEYS) | frozenset(_TRAIN_KEYS) | frozenset(_DATA_KEYS) | _OTHER_KEYS


def parse_lines(text: str) -> list[tuple[str, str, int]]:
    """``(key, value, line number)`` triples; duplicate keys other than ``layer`` are errors."""
    out, seen = [], set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {lineno} is not 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("", f"line {lineno} has an empty key")
        if key in seen and key != "layer":
            raise ConfigError(key, f"repeated on line {lineno}")
        seen.add(key)
        out.append((key, value, lineno))
    return out


def _as_int(key, value):
    try:
        return int(value)
    except ValueError:
        raise ConfigError(key, f"expected an integer, got {value!r}") from None


def _as_float(key, value):
    try:
        return float(value)
    except ValueError:
        raise ConfigError(key, f"expected a number, got {value!r}") from None


def _as_bool(key, value):
    v = value.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(key, f"expected true/false, got {value!r}")


def _as_dims(key, value, rank=None):
    try:
        dims = tuple(int(v) for v in value.lower().split("x"))
    except ValueError:
        raise ConfigError(key, f"expected dimensions like 1x2x2, got {value!r}") from None
    if rank is not None and len(dims) != rank:
        raise ConfigError(key, f"expected {rank} dimensions, got {value!r}")
    return dims


def _coerce(key, value, default):
    """Parse ``value`` to the type of ``default``."""
    if isinstance(default, bool):
        return _as_bool(key, value)
    if isinstance(default, int):
        return _as_int(key, value)
    if isinstance(default, float):
        return _as_float(key, value)
    if isinstance(default, tuple):
        return _as_dims(key, value, len(default))
    return value


def parse_layer(value: str, key: str = "layer") -> tuple:
    parts = value.split()
    if not parts:
        raise ConfigError(key, "empty layer description")
    kind, args = parts[0], parts[1:]
    if kind == "stem":
        if len(args) != 3:
            raise ConfigError(key, "stem takes: out_channels bottleneck stride")
        return ("stem", _as_int(key, args[0]), _as_int(key, args[1]), _as_dims(key, args[2], 3))
    if kind == "pool":
        if len(args) != 3:
            raise ConfigError(key, "pool takes: window stride padding")
        return ("pool",) + tuple(_as_dims(key, a, 3) for a in args)
    if kind == "inception":
        if len(args) != 6:
            raise ConfigError(key, "inception takes six widths")
        return ("inception", tuple(_as_int(key, a) for a in args))
    raise ConfigError(key, f"unknown layer kind {kind!r}")


def _dims(v):
    return "x".join(str(int(d)) for d in v)


def format_layer(item: tuple) -> str:
    if item[0] == "stem":
        return f"stem {item[1]} {item[2]} {_dims(item[3])}"
    if item[0] == "pool":
        return "pool " + " ".join(_dims(v) for v in item[1:])
    return "inception " + " ".join(str(v) for v in item[1])


def load_config(text: str = "", overrides: dict | None = None) -> RunConfig:
    """Build a :class:`RunConfig` from config text, then apply ``overrides``.

    ``overrides`` maps config keys to string values (as typed on the command
    line) and wins over the file.
    """
    entries = parse_lines(text)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        entries = [e for e in entries if e[0] != key]
        entries.append((key, str(value), 0))
    for key, _, _ in entries:
        if key not in KNOWN_KEYS:
            raise ConfigError(key, "unknown key")

    values = {k: v for k, v, _ in entries if k != "layer"}
    preset = values.get("preset", "full")
    if preset not in PRESETS:
        raise ConfigError("preset", f"expected one of {sorted(PRESETS)}, got {preset!r}")
    net_kw = dict(PRESETS[preset])
    layers = [parse_layer(v) for k, v, _ in entries if k == "layer"]
    if layers:
        net_kw["layout"] = tuple(layers)

    base_net = NetworkSpec()
    for key, attr in _NETWORK_KEYS.items():
        if key not in values:
            continue
        value = values[key]
        if attr == "size":
            net_kw[attr] = _as_dims(key, value, 2)
        elif attr == "bottleneck_scale":
            net_kw[attr] = _as_float(key, value)
        else:
            net_kw[attr] = _coerce(key, value, getattr(base_net, attr))
    network = NetworkSpec(**net_kw)

    train_kw = {}
    base_train = TrainConfig()
    for key, attr in _TRAIN_KEYS.items():
        if key in values:
            train_kw[attr] = _coerce(key, values[key], getattr(base_train, attr))
    data_kw = {}
    for key, attr in _DATA_KEYS.items():
        if key in values:
            data_kw[attr] = _as_int(key, values[key])
    stop_at = _as_float("stop_at", values["stop_at"]) if "stop_at" in values else None

    cfg = RunConfig(network, TrainConfig(**train_kw), DataConfig(**data_kw), stop_at)
    for key, check in (("variant", network.validate), ("lr", cfg.train.validate)):
        try:
            check()
        except ValueError as err:
            raise ConfigError(key, str(err)) from None
    return cfg


def read_config(path, overrides: dict | None = None) -> RunConfig:
    return load_config(Path(path).read_text(encoding="utf-8"), overrides)


def dump_config(cfg: RunConfig) -> str:
    """Config text that :func:`load_config` maps back to ``cfg``."""
    net, tr, data = cfg.network, cfg.train, cfg.data
    lines = ["# network"]
    lines.append(f"variant = {net.variant}")
    lines.append(f"classes = {net.num_classes}")
    lines.append(f"frames = {net.frames}")
    lines.append(f"size = {_dims(net.size)}")
    lines.append(f"channels = {net.channels}")
    lines.append(f"width = {net.width!r}")
    lines.append(f"window = {net.window}")
    lines.append(f"activation = {net.activation}")
    if net.bottleneck_scale is not None:
        lines.append(f"bottleneck_scale = {net.bottleneck_scale!r}")
    lines.append(f"temporal = {net.temporal}")
    lines.extend(f"layer = {format_layer(item)}" for item in net.layout)
    lines.append("")
    lines.append("# training")
    for f in dataclasses.fields(TrainConfig):
        v = getattr(tr, f.name)
        lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else repr(v) if isinstance(v, float) else v}")
    if cfg.stop_at is not None:
        lines.append(f"stop_at = {cfg.stop_at!r}")
    lines.append("")
    lines.append("# data")
    for f in dataclasses.fields(DataConfig):
        lines.append(f"{f.name} = {getattr(data, f.name)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# block-level specs


def dump_spec(spec) -> str:
    """``key = value`` text for a :class:`BlockSpec` or :class:`InceptionSpec`."""
    lines = [f"type = {type(spec).__name__}"]
    for f in dataclasses.fields(spec):
        v = getattr(spec, f.name)
        if f.name == "widths":
            v = " ".join(str(int(w)) for w in v)
        elif isinstance(v, tuple):
            v = _dims(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


_SPEC_TYPES = {"BlockSpec": BlockSpec, "InceptionSpec": InceptionSpec}
_SPEC_INTS = {"in_channels", "bottleneck_channels", "out_channels"}


def load_spec(text: str):
    """Inverse of :func:`dump_spec`; the result is validated."""
    values = {k: v for k, v, _ in parse_lines(text)}
    type_name = values.pop("type", None)
    if type_name not in _SPEC_TYPES:
        raise ConfigError("type", f"expected one of {sorted(_SPEC_TYPES)}, got {type_name!r}")
    cls = _SPEC_TYPES[type_name]
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kw = {}
    for key, value in values.items():
        if key not in fields:
            raise ConfigError(key, f"unknown key for {type_name}")
        if key == "widths":
            kw[key] = tuple(_as_int(key, v) for v in value.split())
        elif key in _SPEC_INTS:
            kw[key] = _as_int(key, value)
        elif fields[key].default is not dataclasses.MISSING and isinstance(fields[key].default, tuple):
            kw[key] = _as_dims(key, value, 3)
        else:
            kw[key] = value
    missing = [name for name, f in fields.items() if f.default is dataclasses.MISSING and name not in kw]
    if missing:
        raise ConfigError(missing[0], "missing required key")
    spec = cls(**kw)
    try:
        spec.validate()
    except ValueError as err:
        raise ConfigError(type_name, str(err)) from None
    return spec
