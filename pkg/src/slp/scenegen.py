"""Procedural multi-object sprite scenes with exact ground-truth masks.

Scenes are hard-edged rasterizations of circles, squares and triangles over
a flat or low-frequency textured background, drawn back to front so
occlusion-resolved visibility masks partition the pixel set exactly.
Generation is a pure function of (spec.seed, index); images are quantized
to 8-bit levels so dataset files round-trip losslessly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"SLPD"
VERSION = 1
VISIBILITY_FLOOR = 16
MAX_ATTEMPTS = 1000

SHAPE_NAMES = ("circle", "square", "triangle")

DEFAULT_PALETTE = (
    (230, 25, 75), (60, 180, 75), (0, 130, 200), (255, 225, 25),
    (145, 30, 180), (245, 130, 48), (70, 240, 240), (240, 50, 230),
)
FLAT_BACKGROUND = (88, 88, 88)


class GenerationError(RuntimeError):
    """Raised when a scene cannot be placed within the attempt budget."""


class FormatError(ValueError):
    """Raised on malformed dataset files; carries the failing byte offset."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 64
    min_objects: int = 2
    max_objects: int = 4
    shapes: tuple = SHAPE_NAMES
    palette: tuple = DEFAULT_PALETTE
    size_range: tuple = (10, 20)
    background: str = "flat"
    occlusion: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.background not in ("flat", "textured"):
            raise ValueError(f"SceneSpec: unknown background mode {self.background!r}")
        if not 0 <= self.min_objects <= self.max_objects:
            raise ValueError(f"SceneSpec: bad object count range {(self.min_objects, self.max_objects)}")
        for s in self.shapes:
            if s not in SHAPE_NAMES:
                raise ValueError(f"SceneSpec: unknown shape {s!r}")
        lo, hi = self.size_range
        if lo < 6 or hi < lo:
            raise ValueError(f"SceneSpec: size range {self.size_range} must satisfy 6 <= lo <= hi")
        if hi >= min(self.height, self.width):
            raise ValueError(f"SceneSpec: max size {hi} does not fit a {self.height}x{self.width} image")
        if self.seed < 0:
            raise ValueError("SceneSpec: seed must be nonnegative")


@dataclass
class SceneSample:
    image: np.ndarray  # (H, W, 3) float64 in [0, 1], 8-bit quantized
    masks: np.ndarray  # (n, H, W) bool, occlusion-resolved
    background: np.ndarray  # (H, W) bool
    count: int


def sprites_easy(seed=0, size=64):
    """Flat background, 2-4 objects."""
    return SceneSpec(height=size, width=size, min_objects=2, max_objects=4,
                     size_range=_scaled_sizes(size), background="flat", seed=seed)


def sprites_tex(seed=0, size=64):
    """Low-frequency textured background, 3-6 objects."""
    return SceneSpec(height=size, width=size, min_objects=3, max_objects=6,
                     size_range=_scaled_sizes(size), background="textured", seed=seed)


def _scaled_sizes(size):
    return (max(6, size // 6), max(8, size // 3))


# -- rasterization ---------------------------------------------------------------


def shape_footprint(shape, cx, cy, half, height, width):
    """Exact pixel-center footprint of a sprite, as a boolean map."""
    ys, xs = np.mgrid[0:height, 0:width]
    if shape == "circle":
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= half * half
    if shape == "square":
        return np.maximum(np.abs(xs - cx), np.abs(ys - cy)) <= half
    if shape == "triangle":
        t = ys - (cy - half)
        inside_rows = (t >= 0) & (t <= 2 * half)
        return inside_rows & (2 * np.abs(xs - cx) <= t)
    raise ValueError(f"unknown shape {shape!r}")


def _render_background(spec, rng):
    h, w = spec.height, spec.width
    if spec.background == "flat":
        return np.broadcast_to(np.array(FLAT_BACKGROUND, dtype=np.uint8), (h, w, 3)).copy()
    ys, xs = np.mgrid[0:h, 0:w]
    img = np.full((h, w, 3), 128.0)
    for c in range(3):
        for _ in range(3):
            fx = rng.integers(-3, 4)
            fy = rng.integers(-3, 4)
            if fx == 0 and fy == 0:
                fx = 1
            amp = rng.uniform(10.0, 32.0)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            img[:, :, c] += amp * np.sin(2.0 * np.pi * (fx * xs / w + fy * ys / h) + phase)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def generate_scene(spec, index):
    """Render sample ``index``: a pure function of (spec.seed, index)."""
    rng = np.random.default_rng([spec.seed, int(index)])
    n = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    h, w = spec.height, spec.width

    for _ in range(MAX_ATTEMPTS):
        shapes, colors, footprints = [], [], []
        for _ in range(n):
            shape = spec.shapes[rng.integers(len(spec.shapes))]
            color = spec.palette[rng.integers(len(spec.palette))]
            size = int(rng.integers(spec.size_range[0], spec.size_range[1] + 1))
            half = size // 2
            cx = int(rng.integers(half, w - half))
            cy = int(rng.integers(half, h - half))
            shapes.append(shape)
            colors.append(color)
            footprints.append(shape_footprint(shape, cx, cy, half, h, w))

        if not spec.occlusion and any(
            (footprints[i] & footprints[j]).any() for i in range(n) for j in range(i + 1, n)
        ):
            continue

        masks = np.zeros((n, h, w), dtype=bool)
        occupied = np.zeros((h, w), dtype=bool)
        for i in range(n - 1, -1, -1):  # front-most object claims pixels first
            masks[i] = footprints[i] & ~occupied
            occupied |= footprints[i]
        if all(masks[i].sum() >= VISIBILITY_FLOOR for i in range(n)):
            break
    else:
        raise GenerationError(f"could not place {n} visible objects after {MAX_ATTEMPTS} attempts for spec {spec}")

    image = _render_background(spec, rng)
    for i in range(n):  # back to front
        image[footprints[i]] = colors[i]
    return SceneSample(
        image=image.astype(np.float64) / 255.0,
        masks=masks,
        background=~occupied if n else np.ones((h, w), dtype=bool),
        count=n,
    )


# -- dataset file format -----------------------------------------------------------


def _rle_encode(mask):
    """Row-major run lengths of a boolean map, zeros-run first."""
    flat = mask.reshape(-1).astype(np.uint8)
    if flat.size == 0:
        return np.zeros(0, dtype=np.uint32)
    boundaries = np.flatnonzero(np.diff(flat)) + 1
    runs = np.diff(np.concatenate([[0], boundaries, [flat.size]]))
    if flat[0] == 1:  # prepend an empty zeros-run
        runs = np.concatenate([[0], runs])
    return runs.astype(np.uint32)


def _rle_decode(runs, shape):
    values = np.zeros(len(runs), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, runs.astype(np.int64))
    expected = int(np.prod(shape))
    if flat.size != expected:
        raise FormatError(f"run-length payload decodes to {flat.size} pixels, expected {expected}", 0)
    return flat.reshape(shape)


def _pack_header(spec, count):
    parts = [MAGIC, struct.pack("<HIHH", VERSION, count, spec.height, spec.width)]
    parts.append(struct.pack("<HH", spec.min_objects, spec.max_objects))
    parts.append(struct.pack("<B", len(spec.shapes)))
    for s in spec.shapes:
        raw = s.encode("ascii")
        parts.append(struct.pack("<B", len(raw)) + raw)
    parts.append(struct.pack("<B", len(spec.palette)))
    for rgb in spec.palette:
        parts.append(struct.pack("<BBB", *rgb))
    parts.append(struct.pack("<HH", *spec.size_range))
    parts.append(struct.pack("<BBQ", 1 if spec.background == "textured" else 0, int(spec.occlusion), spec.seed))
    return b"".join(parts)


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise FormatError(f"truncated while reading {what}", self.pos)
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt), what))


def _parse_header(r):
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic bytes {magic!r}", 0)
    version, count, height, width = r.unpack("HIHH", "header")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    nmin, nmax = r.unpack("HH", "object range")
    (n_shapes,) = r.unpack("B", "shape count")
    shapes = []
    for _ in range(n_shapes):
        (slen,) = r.unpack("B", "shape name length")
        shapes.append(r.take(slen, "shape name").decode("ascii"))
    (n_colors,) = r.unpack("B", "palette size")
    palette = tuple(tuple(r.unpack("BBB", "palette entry")) for _ in range(n_colors))
    size_lo, size_hi = r.unpack("HH", "size range")
    bg, occ, seed = r.unpack("BBQ", "background/occlusion/seed")
    spec = SceneSpec(
        height=height, width=width, min_objects=nmin, max_objects=nmax,
        shapes=tuple(shapes), palette=palette, size_range=(size_lo, size_hi),
        background="textured" if bg else "flat", occlusion=bool(occ), seed=seed,
    )
    return spec, count


def encode_sample(sample):
    """Serialize one sample: count, raw 8-bit image, RLE masks (+ background)."""
    img_u8 = np.round(sample.image * 255.0).astype(np.uint8)
    parts = [struct.pack("<H", sample.count), img_u8.tobytes()]
    for mask in list(sample.masks) + [sample.background]:
        runs = _rle_encode(mask)
        parts.append(struct.pack("<I", len(runs)))
        parts.append(runs.tobytes())
    return b"".join(parts)


def _decode_sample(r, height, width):
    (count,) = r.unpack("H", "sample object count")
    raw = r.take(height * width * 3, "image payload")
    image = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3).astype(np.float64) / 255.0
    masks = []
    for _ in range(count + 1):
        (n_runs,) = r.unpack("I", "mask run count")
        runs = np.frombuffer(r.take(4 * n_runs, "mask runs"), dtype="<u4")
        masks.append(_rle_decode(runs, (height, width)))
    return SceneSample(image=image, masks=np.array(masks[:count], dtype=bool).reshape(count, height, width),
                       background=masks[count], count=count)


class Dataset:
    """Lazily decoded view over an .slpd blob."""

    def __init__(self, spec, count, blob, offsets):
        self.spec = spec
        self.count = count
        self._blob = blob
        self._offsets = offsets

    def __len__(self):
        return self.count

    def __getitem__(self, i):
        if not 0 <= i < self.count:
            raise IndexError(i)
        r = _Reader(self._blob)
        r.pos = self._offsets[i]
        return _decode_sample(r, self.spec.height, self.spec.width)

    def images(self, indices):
        """Stacked (B, 3, H, W) float64 images for the given indices."""
        return np.stack([np.transpose(self[i].image, (2, 0, 1)) for i in indices])


def write_dataset(spec, count, path):
    """Generate ``count`` scenes and write them to ``path``; returns the Dataset."""
    with open(path, "wb") as f:
        f.write(_pack_header(spec, count))
        for i in range(count):
            f.write(encode_sample(generate_scene(spec, i)))
    return read_dataset(path)


def _skip_sample(r, height, width):
    (count,) = r.unpack("H", "sample object count")
    r.take(height * width * 3, "image payload")
    for _ in range(count + 1):
        (n_runs,) = r.unpack("I", "mask run count")
        r.take(4 * n_runs, "mask runs")


def read_dataset(path):
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob)
    spec, count = _parse_header(r)
    offsets = []
    for _ in range(count):
        offsets.append(r.pos)
        _skip_sample(r, spec.height, spec.width)
    if r.pos != len(blob):
        raise FormatError(f"{len(blob) - r.pos} trailing bytes after last sample", r.pos)
    return Dataset(spec, count, blob, offsets)


def batch_iterator(dataset, batch_size, shuffle_seed):
    """One epoch of index batches in a seeded random order; final batch may be short."""
    if batch_size < 1:
        raise ValueError(f"batch_iterator: batch_size must be >= 1, got {batch_size}")
    order = epoch_permutation(len(dataset), shuffle_seed)
    for start in range(0, len(dataset), batch_size):
        yield order[start : start + batch_size]


def epoch_permutation(count, shuffle_seed):
    seed = shuffle_seed if isinstance(shuffle_seed, (list, tuple)) else [int(shuffle_seed)]
    return np.random.default_rng(seed).permutation(count)
