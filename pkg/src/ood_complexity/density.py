"""Order-k autoregressive byte model with Laplace smoothing and exact log2-likelihoods.

Each channel plane is scanned in raster order and the context of a pixel is
the k bytes preceding it in that scan. Positions before the start of a plane
read as the sentinel 256, so contexts never cross planes. Counts live in a
sparse table of (context, symbol) keys; unseen contexts behave as all-zero
counts, i.e. the uniform distribution.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .data import CHANNELS, DIMS, HEIGHT, WIDTH, Dataset, ImageTensor
from .errors import ConfigError, EmptyDatasetError, FormatError

SENTINEL = 256
BASE = 257
MAX_ORDER = 4
MODEL_MAGIC = b"OODM"
MODEL_VERSION = 1
_HEADER = struct.Struct("<4sHBxdQ")


def context_keys(images: np.ndarray, k: int) -> np.ndarray:
    """Context key per pixel for a ``(n, 3, 32, 32)`` batch; returns ``(n, 3072)`` int64."""
    planes = images.reshape(-1, CHANNELS, HEIGHT * WIDTH).astype(np.int64)
    n = planes.shape[0]
    keys = np.zeros((n, CHANNELS, HEIGHT * WIDTH), dtype=np.int64)
    if k:
        padded = np.concatenate(
            [np.full((n, CHANNELS, k), SENTINEL, dtype=np.int64), planes], axis=2
        )
        weight = 1
        for j in range(1, k + 1):
            keys += padded[:, :, k - j:k - j + HEIGHT * WIDTH] * weight
            weight *= BASE
    return keys.reshape(n, DIMS)


def _as_batch(images) -> np.ndarray:
    if isinstance(images, Dataset):
        return images.array()
    if isinstance(images, ImageTensor):
        return images.pixels[None]
    arr = [im.pixels if isinstance(im, ImageTensor) else np.asarray(im, dtype=np.uint8) for im in images]
    if not arr:
        return np.empty((0, CHANNELS, HEIGHT, WIDTH), dtype=np.uint8)
    return np.stack(arr).reshape(-1, CHANNELS, HEIGHT, WIDTH)


@dataclass(frozen=True, eq=False)
class ContextModel:
    """Sparse counts keyed by ``context_key * 256 + symbol``, sorted ascending."""

    k: int
    alpha: float
    entry_keys: np.ndarray
    entry_counts: np.ndarray
    trained_on: str = ""

    def __post_init__(self):
        if not 0 <= self.k <= MAX_ORDER:
            raise ConfigError(f"order k must be in [0, {MAX_ORDER}], got {self.k}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        ek = np.asarray(self.entry_keys, dtype=np.int64)
        ec = np.asarray(self.entry_counts, dtype=np.int64)
        if ek.shape != ec.shape or (ek.size and np.any(np.diff(ek) <= 0)):
            raise FormatError("entry keys must be strictly increasing and aligned with counts")
        if ec.size and ec.min() <= 0:
            raise FormatError("stored counts must be positive")
        ctx, start = np.unique(ek >> 8, return_index=True)
        totals = np.add.reduceat(ec, start) if ec.size else np.zeros(0, dtype=np.int64)
        for name, val in (("entry_keys", ek), ("entry_counts", ec), ("_ctx_keys", ctx), ("_ctx_totals", totals)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)

    @classmethod
    def empty(cls, k: int = 2, alpha: float = 1.0, trained_on: str = "") -> ContextModel:
        z = np.zeros(0, dtype=np.int64)
        return cls(k, float(alpha), z, z, trained_on)

    @classmethod
    def from_counts(cls, k: int, alpha: float, keys: np.ndarray, trained_on: str = "") -> ContextModel:
        uniq, counts = np.unique(np.asarray(keys, dtype=np.int64).ravel(), return_counts=True)
        return cls(k, float(alpha), uniq, counts.astype(np.int64), trained_on)

    @property
    def total_contexts(self) -> int:
        return int(self._ctx_keys.size)

    @property
    def total_count(self) -> int:
        return int(self.entry_counts.sum())

    def count(self, context: tuple[int, ...], symbol: int) -> int:
        key = (self._pack_context(context) << 8) | symbol
        i = np.searchsorted(self.entry_keys, key)
        return int(self.entry_counts[i]) if i < self.entry_keys.size and self.entry_keys[i] == key else 0

    def _pack_context(self, context: tuple[int, ...]) -> int:
        """``context`` lists the preceding bytes nearest first; missing slots are the sentinel."""
        if len(context) != self.k:
            raise ValueError(f"context must have length {self.k}")
        return sum(int(c) * BASE**j for j, c in enumerate(context))

    def distribution(self, context: tuple[int, ...]) -> np.ndarray:
        """p(v | context) for v = 0..255."""
        ctx = self._pack_context(context)
        lo = np.searchsorted(self.entry_keys, ctx << 8)
        hi = np.searchsorted(self.entry_keys, (ctx + 1) << 8)
        counts = np.zeros(256, dtype=np.float64)
        counts[self.entry_keys[lo:hi] & 0xFF] = self.entry_counts[lo:hi]
        return (counts + self.alpha) / (counts.sum() + 256 * self.alpha)

    def log2_probs(self, images) -> np.ndarray:
        """log2 p(x_i | context_i) for each pixel, shape ``(n, 3072)``."""
        batch = _as_batch(images)
        ctx = context_keys(batch, self.k)
        keys = (ctx << 8) | batch.reshape(len(batch), DIMS).astype(np.int64)
        counts = _lookup(self.entry_keys, self.entry_counts, keys)
        totals = _lookup(self._ctx_keys, self._ctx_totals, ctx)
        a = self.alpha
        out = np.log2(counts + a) - np.log2(totals + 256 * a)
        out[totals == 0] = -8.0  # unseen context: exactly uniform
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ContextModel):
            return NotImplemented
        return (
            self.k == other.k
            and self.alpha == other.alpha
            and np.array_equal(self.entry_keys, other.entry_keys)
            and np.array_equal(self.entry_counts, other.entry_counts)
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return (f"ContextModel(k={self.k}, alpha={self.alpha}, contexts={self.total_contexts}, "
                f"count={self.total_count}, trained_on={self.trained_on!r})")


def _lookup(sorted_keys: np.ndarray, values: np.ndarray, query: np.ndarray) -> np.ndarray:
    if sorted_keys.size == 0:
        return np.zeros(query.shape, dtype=np.int64)
    idx = np.searchsorted(sorted_keys, query)
    idx_c = np.minimum(idx, sorted_keys.size - 1)
    hit = sorted_keys[idx_c] == query
    return np.where(hit, values[idx_c], 0)


def fit(train: Dataset | Iterable[ImageTensor], k: int = 2, alpha: float = 1.0,
        workers: int = 1, shard_size: int = 256) -> ContextModel:
    """Count (context, symbol) occurrences over every pixel of every image."""
    batch = _as_batch(train)
    name = train.name if isinstance(train, Dataset) else ""
    if len(batch) == 0:
        raise EmptyDatasetError("cannot fit a model on an empty dataset")
    ContextModel.empty(k, alpha)  # validate hyperparameters before any work

    def shard(lo: int) -> ContextModel:
        part = batch[lo:lo + shard_size]
        ctx = context_keys(part, k)
        keys = (ctx << 8) | part.reshape(len(part), DIMS).astype(np.int64)
        return ContextModel.from_counts(k, alpha, keys, name)

    starts = range(0, len(batch), shard_size)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(shard, starts))
    else:
        parts = [shard(s) for s in starts]
    model = parts[0]
    for p in parts[1:]:
        model = merge(model, p)
    return model


def merge(a: ContextModel, b: ContextModel) -> ContextModel:
    if a.k != b.k or a.alpha != b.alpha:
        raise ConfigError(f"cannot merge models with (k, alpha) = ({a.k}, {a.alpha}) and ({b.k}, {b.alpha})")
    keys = np.concatenate([a.entry_keys, b.entry_keys])
    counts = np.concatenate([a.entry_counts, b.entry_counts])
    uniq, inv = np.unique(keys, return_inverse=True)
    summed = np.zeros(uniq.size, dtype=np.int64)
    np.add.at(summed, inv, counts)
    names = [n for n in (a.trained_on, b.trained_on) if n]
    trained_on = names[0] if len(set(names)) == 1 else "+".join(names)
    return ContextModel(a.k, a.alpha, uniq, summed, trained_on)


def nll_bpd_many(model: ContextModel, images) -> np.ndarray:
    """Negative log2-likelihood in bits/dim for each image."""
    return -model.log2_probs(images).sum(axis=1) / DIMS


def nll_bpd(model: ContextModel, img: ImageTensor) -> float:
    return float(nll_bpd_many(model, img)[0])


def save_model(model: ContextModel, path: str | Path) -> None:
    name = model.trained_on.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, model.k, model.alpha, model.entry_keys.size))
        fh.write(struct.pack("<I", len(name)) + name)
        fh.write(model.entry_keys.astype("<u8").tobytes())
        fh.write(model.entry_counts.astype("<u8").tobytes())


def load_model(path: str | Path) -> ContextModel:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + 4:
        raise FormatError(f"{path}: truncated model file")
    magic, version, k, alpha, n = _HEADER.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    pos = _HEADER.size
    (name_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    name = data[pos:pos + name_len].decode("utf-8")
    pos += name_len
    if len(data) != pos + 16 * n:
        raise FormatError(f"{path}: expected {n} entries, file size disagrees")
    keys = np.frombuffer(data, dtype="<u8", count=n, offset=pos).astype(np.int64)
    counts = np.frombuffer(data, dtype="<u8", count=n, offset=pos + 8 * n).astype(np.int64)
    return ContextModel(k, alpha, keys, counts, name)
