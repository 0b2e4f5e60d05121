"""Image tensors, synthetic datasets, preprocessing, splits and NLL file ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, EmptyDatasetError, FormatError, ParseError, ValidationError
from .rng import ByteStream, Xoshiro256

CHANNELS, HEIGHT, WIDTH = 3, 32, 32
SHAPE = (CHANNELS, HEIGHT, WIDTH)
DIMS = CHANNELS * HEIGHT * WIDTH  # d = 3072
POOL_FACTORS = (1, 2, 4, 8, 16, 32)


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """A 3x32x32 8-bit image in channel-plane, row-major order."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.size != DIMS:
            raise FormatError(f"expected {DIMS} pixels, got {px.size}")
        if px.dtype != np.uint8:
            if not np.issubdtype(px.dtype, np.integer) or px.min() < 0 or px.max() > 255:
                raise FormatError("pixel values must be integers in [0, 255]")
        px = np.array(px, dtype=np.uint8).reshape(SHAPE)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_bytes(cls, data: bytes) -> ImageTensor:
        return cls(np.frombuffer(data, dtype=np.uint8))

    @property
    def channels(self) -> int:
        return CHANNELS

    @property
    def height(self) -> int:
        return HEIGHT

    @property
    def width(self) -> int:
        return WIDTH

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageTensor):
            return NotImplemented
        return bool(np.array_equal(self.pixels, other.pixels))

    def __hash__(self) -> int:
        return hash(self.tobytes())

    def __repr__(self) -> str:
        return f"ImageTensor(min={int(self.pixels.min())}, max={int(self.pixels.max())})"


@dataclass(frozen=True)
class Dataset:
    name: str
    images: tuple[ImageTensor, ...]
    ids: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        if len(self.images) != len(self.ids):
            raise ValidationError(f"{len(self.images)} images but {len(self.ids)} ids")
        if len(set(self.ids)) != len(self.ids):
            seen: set[str] = set()
            dup = next(i for i in self.ids if i in seen or seen.add(i))
            raise ValidationError(f"duplicate id {dup!r} in dataset {self.name!r}")

    @classmethod
    def from_array(cls, name: str, arr: np.ndarray, ids: Sequence[str] | None = None) -> Dataset:
        arr = np.asarray(arr, dtype=np.uint8).reshape(-1, *SHAPE)
        if ids is None:
            ids = [f"{name}_{i:05d}" for i in range(len(arr))]
        return cls(name, tuple(ImageTensor(a) for a in arr), tuple(ids))

    def __len__(self) -> int:
        return len(self.images)

    def __iter__(self) -> Iterator[ImageTensor]:
        return iter(self.images)

    def items(self) -> Iterator[tuple[str, ImageTensor]]:
        return zip(self.ids, self.images)

    def array(self) -> np.ndarray:
        """Stacked ``(n, 3, 32, 32)`` uint8 copy."""
        if not self.images:
            return np.empty((0, *SHAPE), dtype=np.uint8)
        return np.stack([im.pixels for im in self.images])

    def subset(self, indices: Iterable[int], name: str | None = None) -> Dataset:
        idx = list(indices)
        return Dataset(name or self.name, tuple(self.images[i] for i in idx), tuple(self.ids[i] for i in idx))

    def map(self, fn, name: str | None = None) -> Dataset:
        return Dataset(name or self.name, tuple(fn(im) for im in self.images), self.ids)


@dataclass(frozen=True)
class SplitSpec:
    train: Fraction = Fraction(8, 10)
    val: Fraction = Fraction(1, 10)
    test: Fraction = Fraction(1, 10)
    seed: int = 0

    def __post_init__(self):
        for name in ("train", "val", "test"):
            v = getattr(self, name)
            v = Fraction(str(v)) if isinstance(v, float) else Fraction(v)
            if v < 0:
                raise ConfigError(f"{name} fraction must be non-negative")
            object.__setattr__(self, name, v)
        if self.train + self.val + self.test != 1:
            raise ConfigError(
                f"split fractions must sum to 1, got {self.train}+{self.val}+{self.test}"
            )


@dataclass(frozen=True)
class NllRecord:
    id: str
    nll_bpd: float

    def __post_init__(self):
        if not math.isfinite(self.nll_bpd):
            raise ValidationError(f"nll_bpd for {self.id!r} is not finite")
        if self.nll_bpd < 0:
            raise ValidationError(f"nll_bpd for {self.id!r} is negative ({self.nll_bpd})")


def _require_count(n: int) -> None:
    if n < 1:
        raise EmptyDatasetError(f"dataset size must be >= 1, got {n}")


def synth_noise(n: int, seed: int, name: str = "noise") -> Dataset:
    """``n`` images of i.i.d. uniform bytes; pixels consumed in dataset order."""
    _require_count(n)
    arr = ByteStream(seed).take(n * DIMS)
    return Dataset.from_array(name, arr)


def synth_constant(n: int, seed: int, name: str = "constant") -> Dataset:
    """``n`` images whose channel planes are each a single random byte."""
    _require_count(n)
    colors = ByteStream(seed).take(n * CHANNELS).reshape(n, CHANNELS, 1, 1)
    arr = np.broadcast_to(colors, (n, *SHAPE))
    return Dataset.from_array(name, arr)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _bilinear_taps(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.maximum(src, 0.0)
    lo = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(plane: np.ndarray, height: int = HEIGHT, width: int = WIDTH) -> np.ndarray:
    """Half-pixel-centred bilinear resize of a 2-D plane; returns float64."""
    y0, y1, wy = _bilinear_taps(plane.shape[0], height)
    x0, x1, wx = _bilinear_taps(plane.shape[1], width)
    p = plane.astype(np.float64)
    wy = wy[:, None]
    wx = wx[None, :]
    top = (1 - wx) * p[np.ix_(y0, x0)] + wx * p[np.ix_(y0, x1)]
    bottom = (1 - wx) * p[np.ix_(y1, x0)] + wx * p[np.ix_(y1, x1)]
    return (1 - wy) * top + wy * bottom


def normalize_input(raw: np.ndarray) -> ImageTensor:
    """Bring an image of any size to 3x32x32.

    ``raw`` is ``(H, W)`` or channel-first ``(C, H, W)`` with C in {1, 3}.
    Grayscale is replicated to all three channels.
    """
    raw = np.asarray(raw)
    if raw.ndim == 2:
        raw = raw[None]
    if raw.ndim != 3 or raw.shape[0] not in (1, 3):
        raise FormatError(f"expected 1 or 3 channels in (C, H, W) layout, got shape {raw.shape}")
    if raw.shape[1] < 1 or raw.shape[2] < 1:
        raise FormatError(f"empty image of shape {raw.shape}")
    if raw.dtype != np.uint8:
        if not np.issubdtype(raw.dtype, np.integer) or raw.min() < 0 or raw.max() > 255:
            raise FormatError("expected 8-bit pixel values")
    if raw.shape[1:] == (HEIGHT, WIDTH):
        planes = raw.astype(np.uint8)
    else:
        planes = np.stack([
            np.clip(round_half_away(resize_bilinear(p)), 0, 255).astype(np.uint8) for p in raw
        ])
    if planes.shape[0] == 1:
        planes = np.repeat(planes, CHANNELS, axis=0)
    return ImageTensor(planes)


def avg_pool_upsample(img: ImageTensor, f: int) -> ImageTensor:
    """Average-pool by ``f`` (rounded mean) and nearest-neighbour upsample back."""
    if f not in POOL_FACTORS:
        raise ValueError(f"pooling factor must be one of {POOL_FACTORS}, got {f!r}")
    if f == 1:
        return img
    blocks = img.pixels.astype(np.int64).reshape(CHANNELS, HEIGHT // f, f, WIDTH // f, f)
    sums = blocks.sum(axis=(2, 4))
    area = f * f
    means = (2 * sums + area) // (2 * area)  # exact half-up on non-negative integers
    up = np.repeat(np.repeat(means, f, axis=1), f, axis=2)
    return ImageTensor(up.astype(np.uint8))


def _shuffled_indices(n: int, seed: int) -> list[int]:
    idx = list(range(n))
    rng = Xoshiro256(seed)
    for i in range(n - 1, 0, -1):
        j = rng.below(i + 1)
        idx[i], idx[j] = idx[j], idx[i]
    return idx


def split(ds: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset, Dataset]:
    """Shuffle by seed and cut into train/val/test; rounding remainder goes to train."""
    n = len(ds)
    if n < 10:
        raise ValidationError(f"split needs at least 10 samples, got {n}")
    n_val = math.floor(n * spec.val)
    n_test = math.floor(n * spec.test)
    n_train = n - n_val - n_test
    order = _shuffled_indices(n, spec.seed)
    return (
        ds.subset(order[:n_train], f"{ds.name}-train"),
        ds.subset(order[n_train:n_train + n_val], f"{ds.name}-val"),
        ds.subset(order[n_train + n_val:], f"{ds.name}-test"),
    )


def split_predefined(
    train: Dataset, test: Dataset, seed: int = 0, val_fraction: Fraction = Fraction(1, 10)
) -> tuple[Dataset, Dataset, Dataset]:
    """Carve a validation split from an existing train split; ``test`` is returned as-is."""
    n = len(train)
    n_val = math.floor(n * Fraction(val_fraction))
    order = _shuffled_indices(n, seed)
    return (
        train.subset(order[n_val:], train.name),
        train.subset(order[:n_val], f"{train.name}-val"),
        test,
    )


def read_nll_file(path: str | Path) -> list[NllRecord]:
    """Read an ``id,nll_bpd`` CSV. Line numbers in errors are 1-based file lines."""
    records: list[NllRecord] = []
    seen: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["id", "nll_bpd"]:
            raise ParseError(f"expected header 'id,nll_bpd', got {header!r}", line=1)
        for row in reader:
            line = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", line=line)
            rid = row[0].strip()
            if not rid:
                raise ParseError("empty id", line=line)
            try:
                value = float(row[1])
            except ValueError:
                raise ParseError(f"not a number: {row[1]!r}", line=line) from None
            if rid in seen:
                raise ValidationError(f"duplicate id {rid!r} (lines {seen[rid]} and {line})")
            seen[rid] = line
            try:
                records.append(NllRecord(rid, value))
            except ValidationError as exc:
                raise ValidationError(f"line {line}: {exc}") from None
    return records


def write_nll_file(path: str | Path, records: Iterable[NllRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "nll_bpd"])
        for r in records:
            w.writerow([r.id, repr(float(r.nll_bpd))])
