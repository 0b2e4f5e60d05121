"""PNG-style row filtering per channel plane followed by raw DEFLATE.

Each of the 96 plane rows is written as one filter-type byte and 32 residual
bytes. The first row of every plane sees an all-zero row above it, so planes
are filtered independently.
"""

from __future__ import annotations

import zlib

import numpy as np

from ..data import CHANNELS, HEIGHT, WIDTH
from ..errors import DecodeError

NONE, SUB, UP, AVERAGE, PAETH = range(5)
ROW_BYTES = WIDTH + 1
STREAM_BYTES = CHANNELS * HEIGHT * ROW_BYTES


def _paeth(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    p = a + b - c
    pa, pb, pc = np.abs(p - a), np.abs(p - b), np.abs(p - c)
    return np.where((pa <= pb) & (pa <= pc), a, np.where(pb <= pc, b, c))


def filter_candidates(planes: np.ndarray) -> np.ndarray:
    """Residuals for all five filters: shape ``(5, C, H, W)``, uint8."""
    x = planes.astype(np.int32)
    left = np.zeros_like(x)
    left[:, :, 1:] = x[:, :, :-1]
    up = np.zeros_like(x)
    up[:, 1:, :] = x[:, :-1, :]
    upleft = np.zeros_like(x)
    upleft[:, 1:, 1:] = x[:, :-1, :-1]
    preds = np.stack([
        np.zeros_like(x),
        left,
        up,
        (left + up) >> 1,
        _paeth(left, up, upleft),
    ])
    return ((x[None] - preds) & 0xFF).astype(np.uint8)


def filter_image(planes: np.ndarray) -> bytes:
    """Pick the per-row filter with the smallest sum of |residual| (residuals read as int8)."""
    cands = filter_candidates(planes)
    signed = np.minimum(cands, 256 - cands.astype(np.int32))
    cost = signed.sum(axis=3)  # (5, C, H)
    choice = np.argmin(cost, axis=0)  # first minimum wins ties
    rows = np.take_along_axis(cands, choice[None, :, :, None], axis=0)[0]
    out = np.empty((CHANNELS, HEIGHT, ROW_BYTES), dtype=np.uint8)
    out[:, :, 0] = choice
    out[:, :, 1:] = rows
    return out.tobytes()


def unfilter_image(stream: bytes) -> np.ndarray:
    buf = np.frombuffer(stream, dtype=np.uint8).reshape(CHANNELS, HEIGHT, ROW_BYTES)
    out = np.zeros((CHANNELS, HEIGHT, WIDTH), dtype=np.uint8)
    for c in range(CHANNELS):
        prev = np.zeros(WIDTH, dtype=np.int32)
        for r in range(HEIGHT):
            ftype = int(buf[c, r, 0])
            res = buf[c, r, 1:].astype(np.int32)
            if ftype == NONE:
                row = res
            elif ftype == SUB:
                row = np.cumsum(res) & 0xFF
            elif ftype == UP:
                row = (res + prev) & 0xFF
            elif ftype in (AVERAGE, PAETH):
                row = np.empty(WIDTH, dtype=np.int32)
                a = 0
                up = prev.tolist()
                rs = res.tolist()
                for i in range(WIDTH):
                    b = up[i]
                    if ftype == AVERAGE:
                        pred = (a + b) >> 1
                    else:
                        cc = up[i - 1] if i else 0
                        p = a + b - cc
                        pa, pb, pc = abs(p - a), abs(p - b), abs(p - cc)
                        pred = a if pa <= pb and pa <= pc else (b if pb <= pc else cc)
                    a = (rs[i] + pred) & 0xFF
                    row[i] = a
            else:
                raise DecodeError(f"invalid filter type {ftype} in plane {c} row {r}")
            out[c, r] = row
            prev = row.astype(np.int32)
    return out


def deflate(data: bytes) -> bytes:
    comp = zlib.compressobj(9, zlib.DEFLATED, -15, 9, zlib.Z_DEFAULT_STRATEGY)
    return comp.compress(data) + comp.flush()


def inflate(payload: bytes, expected_size: int) -> bytes:
    d = zlib.decompressobj(-15)
    try:
        out = d.decompress(payload, expected_size + 1)
    except zlib.error as exc:
        raise DecodeError(f"corrupt DEFLATE stream: {exc}") from None
    if not d.eof:
        raise DecodeError("truncated DEFLATE stream")
    if d.unused_data or d.unconsumed_tail:
        raise DecodeError("trailing bytes after DEFLATE stream")
    if len(out) != expected_size:
        raise DecodeError(f"inflated {len(out)} bytes, expected {expected_size}")
    return out


def encode(planes: np.ndarray) -> bytes:
    return deflate(filter_image(planes))


def decode(payload: bytes) -> np.ndarray:
    return unfilter_image(inflate(payload, STREAM_BYTES))
