"""Synthetic direction-of-motion videos and the clip input pipeline.

Each clip shows a bright square sliding in a straight line over per-frame
noise.  The start position is drawn so that the set of frames of an "up"
clip has the same distribution as that of a "down" clip; only frame order
tells them apart (likewise left/right).  Reversing time maps up<->down and
left<->right exactly.

File layout (little-endian)::

    b"XVID1"  u16 version  u32 samples  u32 classes  u32 frames
    u32 H  u32 W  u32 channels  u8 dtype (0 = u8, 1 = f32)
    then per sample: u32 label, u32 frame count, frames as [F, H, W, C]
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"XVID1"
VERSION = 1
_HEADER = struct.Struct("<HIIIIIIB")
_RECORD = struct.Struct("<II")
DTYPES = {0: np.dtype("u1"), 1: np.dtype("<f4")}

CLASSES = ("up", "down", "left", "right")
REVERSED_LABEL = {0: 1, 1: 0, 2: 3, 3: 2}
FLIPPED_LABEL = {0: 0, 1: 1, 2: 3, 3: 2}

SCALES = (1.0, 2 ** -0.25, 2 ** -0.75, 0.5)
CROP_POSITIONS = ("center", "top_left", "top_right", "bottom_left", "bottom_right")


@dataclass
class DatasetFile:
    num_classes: int
    frames: int
    height: int
    width: int
    channels: int
    dtype_code: int = 0
    labels: list = field(default_factory=list)
    videos: list = field(default_factory=list)  # each [F, H, W, C]

    def __len__(self):
        return len(self.labels)

    def clip(self, i: int) -> np.ndarray:
        """Sample ``i`` as ``[C, F, H, W]``."""
        return np.moveaxis(self.videos[i], 3, 0)


def encode_dataset(ds: DatasetFile) -> bytes:
    if ds.dtype_code not in DTYPES:
        raise ValueError(f"unsupported dtype code {ds.dtype_code}")
    dtype = DTYPES[ds.dtype_code]
    parts = [
        MAGIC,
        _HEADER.pack(VERSION, len(ds.labels), ds.num_classes, ds.frames, ds.height, ds.width, ds.channels, ds.dtype_code),
    ]
    for label, video in zip(ds.labels, ds.videos):
        if not 0 <= label < ds.num_classes:
            raise ValueError(f"label {label} outside {ds.num_classes} classes")
        if video.shape[1:] != (ds.height, ds.width, ds.channels):
            raise ValueError(f"video shape {video.shape} does not match header")
        parts.append(_RECORD.pack(int(label), video.shape[0]))
        parts.append(np.ascontiguousarray(video, dtype=dtype).tobytes())
    return b"".join(parts)


def decode_dataset(data: bytes) -> DatasetFile:
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError("not an XVID1 dataset file")
    pos = len(MAGIC)
    version, count, classes, frames, h, w, c, code = _HEADER.unpack_from(data, pos)
    pos += _HEADER.size
    if version != VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    if code not in DTYPES:
        raise ValueError(f"unsupported dtype code {code}")
    dtype = DTYPES[code]
    ds = DatasetFile(classes, frames, h, w, c, code)
    for _ in range(count):
        if pos + _RECORD.size > len(data):
            raise ValueError("dataset truncated: fewer records than the header states")
        label, nframes = _RECORD.unpack_from(data, pos)
        pos += _RECORD.size
        if label >= classes:
            raise ValueError(f"label {label} outside {classes} classes")
        size = nframes * h * w * c
        nbytes = size * dtype.itemsize
        if pos + nbytes > len(data):
            raise ValueError("dataset truncated inside a record payload")
        video = np.frombuffer(data, dtype=dtype, count=size, offset=pos).reshape(nframes, h, w, c).copy()
        pos += nbytes
        ds.labels.append(int(label))
        ds.videos.append(video)
    if pos != len(data):
        raise ValueError("trailing bytes after the last record")
    return ds


def write_dataset(path, ds: DatasetFile):
    Path(path).write_bytes(encode_dataset(ds))


def read_dataset(path) -> DatasetFile:
    return decode_dataset(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# synthetic generator


def _square_size(height, width):
    return max(3, min(height, width) // 6)


def direction_clip(label: int, rng: np.random.Generator, frames: int, height: int, width: int,
                   channels: int = 3, speed: int = 1) -> np.ndarray:
    """One ``[F, H, W, C]`` uint8 clip of a square moving in direction ``label``."""
    size = _square_size(height, width)
    travel = speed * (frames - 1)
    vertical = label in (0, 1)
    along, across = (height, width) if vertical else (width, height)
    if size + travel > along or size > across:
        raise ValueError(
            f"{height}x{width} frames too small for a {size}px square travelling {travel}px"
        )
    lo = int(rng.integers(0, along - size - travel + 1))
    fixed = int(rng.integers(0, across - size + 1))
    steps = np.arange(frames) * speed
    # up and left run towards smaller coordinates
    path = lo + travel - steps if label in (0, 2) else lo + steps

    video = rng.normal(80.0, 30.0, size=(frames, height, width, channels))
    color = rng.uniform(200.0, 255.0, size=channels)
    for t, p in enumerate(path):
        if vertical:
            video[t, p: p + size, fixed: fixed + size] = color
        else:
            video[t, fixed: fixed + size, p: p + size] = color
    return np.clip(np.rint(video), 0, 255).astype(np.uint8)


def gen_direction_dataset(seed: int, num_samples: int, frames: int = 16, height: int = 32,
                          width: int = 32, channels: int = 3) -> DatasetFile:
    """Four-class motion-direction dataset; sample ``i`` depends only on (seed, i)."""
    if height < 16 or width < 16 or frames < 8:
        raise ValueError("need H, W >= 16 and at least 8 frames")
    ds = DatasetFile(len(CLASSES), frames, height, width, channels, 0)
    for i in range(num_samples):
        rng = np.random.default_rng([seed, i])
        label = int(rng.integers(0, len(CLASSES)))
        ds.labels.append(label)
        ds.videos.append(direction_clip(label, rng, frames, height, width, channels))
    return ds


# ---------------------------------------------------------------------------
# sampling and augmentation


def sample_frames(num_frames: int, T: int, mode: str = "eval", rng: np.random.Generator | None = None) -> list[int]:
    """Frame indices for a ``T``-frame clip.

    Videos shorter than ``T`` are loop padded (indices wrap cyclically).
    Otherwise train mode draws one frame uniformly from each of ``T`` equal
    segments and eval mode takes equi-distant frames ``floor(i*F/T)``.
    """
    if num_frames < 1 or T < 1:
        raise ValueError("need at least one frame")
    if num_frames < T:
        return [i % num_frames for i in range(T)]
    if mode == "eval":
        return [i * num_frames // T for i in range(T)]
    if mode != "train":
        raise ValueError(f"unknown sampling mode {mode!r}")
    if rng is None:
        raise ValueError("train-mode sampling needs a seeded generator")
    out = []
    for i in range(T):
        lo, hi = i * num_frames // T, (i + 1) * num_frames // T
        out.append(int(rng.integers(lo, hi)))
    return out


def _interp_matrix(src: int, dst: int) -> np.ndarray:
    """``[dst, src]`` linear-interpolation weights, pixel-center aligned."""
    pos = np.clip((np.arange(dst) + 0.5) * src / dst - 0.5, 0, src - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    m = np.zeros((dst, src))
    m[np.arange(dst), lo] += 1 - frac
    m[np.arange(dst), hi] += frac
    return m


def resize_bilinear(clip: np.ndarray, size) -> np.ndarray:
    """Bilinear resize of the last two axes of ``[C, T, H, W]``."""
    c, t, h, w = clip.shape
    th, tw = size
    if (h, w) == (th, tw):
        return clip.astype(np.float64, copy=True)
    rows = np.matmul(_interp_matrix(h, th), clip.astype(np.float64))
    return np.matmul(rows, _interp_matrix(w, tw).T)


def crop_box(height: int, width: int, scale: float, position: str):
    side = int(round(min(height, width) * scale))
    if side < 1 or side > min(height, width):
        raise ValueError(f"crop of side {side} does not fit a {height}x{width} frame")
    if position == "center":
        y, x = (height - side) // 2, (width - side) // 2
    elif position == "top_left":
        y, x = 0, 0
    elif position == "top_right":
        y, x = 0, width - side
    elif position == "bottom_left":
        y, x = height - side, 0
    elif position == "bottom_right":
        y, x = height - side, width - side
    else:
        raise ValueError(f"unknown crop position {position!r}")
    return y, x, side


def augment(clip: np.ndarray, rng: np.random.Generator, size=None, flip_enabled: bool = False,
            scales=SCALES, positions=CROP_POSITIONS):
    """Multi-scale crop + resize (+ optional horizontal flip) of a ``[C, T, H, W]`` clip.

    One scale and one crop position are drawn per clip and shared by all
    frames.  Returns ``(clip, flipped)``.
    """
    _, _, h, w = clip.shape
    size = (h, w) if size is None else tuple(size)
    scale = scales[int(rng.integers(0, len(scales)))]
    position = positions[int(rng.integers(0, len(positions)))]
    y, x, side = crop_box(h, w, scale, position)
    out = resize_bilinear(clip[:, :, y: y + side, x: x + side], size)
    flipped = bool(flip_enabled and rng.random() < 0.5)
    if flipped:
        out = out[..., ::-1].copy()
    return out, flipped


def center_crop(clip: np.ndarray, size=None) -> np.ndarray:
    """Inference view: central square of side min(H, W), no scaling, resized to ``size``."""
    _, _, h, w = clip.shape
    size = (h, w) if size is None else tuple(size)
    y, x, side = crop_box(h, w, 1.0, "center")
    return resize_bilinear(clip[:, :, y: y + side, x: x + side], size)


def normalize(clip: np.ndarray, dtype=np.float32) -> np.ndarray:
    return (clip / 127.5 - 1.0).astype(dtype)


@dataclass
class Pipeline:
    """Turns dataset samples into network-ready batches.

    Every sample draws from its own generator seeded by
    ``(seed, epoch, sample index)``, so batch contents do not depend on
    iteration order.
    """

    T: int = 16
    size: tuple = (32, 32)
    seed: int = 0
    augment: bool = True
    flip: bool = False
    dtype: type = np.float32

    def train_clip(self, ds: DatasetFile, i: int, epoch: int):
        rng = np.random.default_rng([self.seed, epoch, i])
        clip = ds.clip(i)
        idx = sample_frames(clip.shape[1], self.T, "train", rng)
        clip = clip[:, idx]
        label = ds.labels[i]
        if self.augment:
            clip, flipped = augment(clip, rng, self.size, self.flip)
            if flipped:
                label = FLIPPED_LABEL[label]
        else:
            clip = center_crop(clip, self.size)
        return normalize(clip, self.dtype), label

    def eval_clip(self, ds: DatasetFile, i: int):
        clip = ds.clip(i)
        idx = sample_frames(clip.shape[1], self.T, "eval")
        return normalize(center_crop(clip[:, idx], self.size), self.dtype), ds.labels[i]

    def epoch_order(self, n: int, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.seed, epoch, 1 << 30]).permutation(n)

    def train_batches(self, ds: DatasetFile, batch_size: int, epoch: int):
        order = self.epoch_order(len(ds), epoch)
        for start in range(0, len(order), batch_size):
            items = [self.train_clip(ds, int(i), epoch) for i in order[start: start + batch_size]]
            yield np.stack([c for c, _ in items]), np.array([l for _, l in items])

    def eval_batches(self, ds: DatasetFile, batch_size: int):
        for start in range(0, len(ds), batch_size):
            items = [self.eval_clip(ds, i) for i in range(start, min(start + batch_size, len(ds)))]
            yield np.stack([c for c, _ in items]), np.array([l for _, l in items])
