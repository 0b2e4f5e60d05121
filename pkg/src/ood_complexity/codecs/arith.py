"""Adaptive binary arithmetic coder over bytes (order 0).

Each byte is coded MSB first as 8 binary decisions along a 255-node tree.
Every node keeps counts (c0, c1), both starting at 1 and incremented by 1
after use; a node whose total reaches 2**15 has both counts halved (rounded
up). The coder is the classic 32-bit low/high scheme with underflow
(E3) handling. The stream ends with a full flush of the 32-bit ``low``
register, so an intact stream never asks the decoder for bits beyond its
end; any such request means the payload was truncated.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ..errors import DecodeError

STATE_BITS = 32
RESCALE_AT = 1 << 15

_FULL = (1 << STATE_BITS) - 1
_TOP = 1 << (STATE_BITS - 1)
_SECOND = _TOP >> 1
_OK, _OVERRUN, _MISMATCH = 0, 1, 2


@njit(cache=True, nogil=True)
def _put(out, nbits, bit):
    if bit:
        out[nbits >> 3] |= np.uint8(0x80 >> (nbits & 7))
    return nbits + 1


@njit(cache=True, nogil=True)
def _encode(symbols):
    n = symbols.shape[0]
    counts = np.ones((256, 2), dtype=np.int64)
    # a decision costs at most 15 bits (count ratio >= 2**-15), so 16 bytes/symbol suffices
    out = np.zeros(n * 16 + 8, dtype=np.uint8)
    nbits = 0
    low = 0
    high = _FULL
    pending = 0
    for k in range(n):
        v = np.int64(symbols[k])
        node = 1
        for shift in range(7, -1, -1):
            bit = (v >> shift) & 1
            c0 = counts[node, 0]
            total = c0 + counts[node, 1]
            rng = high - low + 1
            mid = low + (rng * c0) // total
            if bit == 0:
                high = mid - 1
            else:
                low = mid
            counts[node, bit] += 1
            if total + 1 >= RESCALE_AT:
                counts[node, 0] = (counts[node, 0] + 1) >> 1
                counts[node, 1] = (counts[node, 1] + 1) >> 1
            node = node * 2 + bit
            while ((low ^ high) & _TOP) == 0:
                b = low >> (STATE_BITS - 1)
                nbits = _put(out, nbits, b)
                for _ in range(pending):
                    nbits = _put(out, nbits, 1 - b)
                pending = 0
                low = (low << 1) & _FULL
                high = ((high << 1) & _FULL) | 1
            while (low & ~high & _SECOND) != 0:
                pending += 1
                low = (low << 1) & (_FULL >> 1)
                high = ((high << 1) & (_FULL >> 1)) | _TOP | 1
    b = low >> (STATE_BITS - 1)
    nbits = _put(out, nbits, b)
    for _ in range(pending):
        nbits = _put(out, nbits, 1 - b)
    for i in range(STATE_BITS - 2, -1, -1):
        nbits = _put(out, nbits, (low >> i) & 1)
    return out[: (nbits + 7) >> 3], nbits


@njit(cache=True, nogil=True)
def _read_bit(payload, pos):
    """Bit ``pos`` of the payload, or -1 past the end."""
    if (pos >> 3) < payload.shape[0]:
        return (np.int64(payload[pos >> 3]) >> (7 - (pos & 7))) & 1
    return -1


@njit(cache=True, nogil=True)
def _decode(payload, n):
    counts = np.ones((256, 2), dtype=np.int64)
    out = np.empty(n, dtype=np.uint8)
    low = 0
    high = _FULL
    code = 0
    pos = 0
    if payload.shape[0] * 8 < STATE_BITS:
        return out, pos, _OVERRUN
    for _ in range(STATE_BITS):
        code = (code << 1) | _read_bit(payload, pos)
        pos += 1
    for k in range(n):
        node = 1
        for _ in range(8):
            c0 = counts[node, 0]
            total = c0 + counts[node, 1]
            rng = high - low + 1
            mid = low + (rng * c0) // total
            if code < mid:
                bit = 0
                high = mid - 1
            else:
                bit = 1
                low = mid
            counts[node, bit] += 1
            if total + 1 >= RESCALE_AT:
                counts[node, 0] = (counts[node, 0] + 1) >> 1
                counts[node, 1] = (counts[node, 1] + 1) >> 1
            node = node * 2 + bit
            while ((low ^ high) & _TOP) == 0:
                bit = _read_bit(payload, pos)
                if bit < 0:
                    return out, pos, _OVERRUN
                low = (low << 1) & _FULL
                high = ((high << 1) & _FULL) | 1
                code = ((code << 1) & _FULL) | bit
                pos += 1
            while (low & ~high & _SECOND) != 0:
                bit = _read_bit(payload, pos)
                if bit < 0:
                    return out, pos, _OVERRUN
                low = (low << 1) & (_FULL >> 1)
                high = ((high << 1) & (_FULL >> 1)) | _TOP | 1
                code = (code & _TOP) | ((code << 1) & (_FULL >> 1)) | bit
                pos += 1
        out[k] = np.uint8(node - 256)
    # the final flush leaves exactly ``low`` in the decoder window
    return out, pos, _OK if code == low else _MISMATCH


def encode(symbols: np.ndarray) -> tuple[bytes, int]:
    """Returns ``(payload, exact_bit_count)``."""
    buf, nbits = _encode(np.ascontiguousarray(symbols, dtype=np.uint8).ravel())
    return buf.tobytes(), int(nbits)


def decode(payload: bytes, n: int) -> np.ndarray:
    """Decode ``n`` bytes; raises :class:`DecodeError` unless ``payload`` is exactly a full stream."""
    arr = np.frombuffer(payload, dtype=np.uint8)
    out, nbits, status = _decode(arr, n)
    nbits = int(nbits)
    if status == _OVERRUN:
        raise DecodeError("truncated arithmetic-coded stream")
    if status == _MISMATCH:
        raise DecodeError("arithmetic-coded stream does not terminate cleanly")
    if len(payload) != (nbits + 7) // 8:
        raise DecodeError(f"payload has {len(payload)} bytes, stream ends after {nbits} bits")
    if int.from_bytes(payload, "big") & ((1 << (8 * len(payload) - nbits)) - 1):
        raise DecodeError("nonzero padding after stream end")
    return out
