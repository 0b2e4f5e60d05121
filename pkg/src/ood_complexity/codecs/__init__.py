"""Lossless codecs used as complexity estimators.

``complexity(img, codec)`` is the coded length in bits per dimension. Built-in
codecs emit headerless streams; external ones subtract a declared header size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from ..data import DIMS, ImageTensor
from ..errors import CodecError, ConfigError
from ..imageio import encode_raw
from . import arith, png_like
from .external import ExternalCodec, load_external_codecs

PNG_LIKE = "png_like"
ORDER0_AC = "order0_ac"
BUILTIN = (PNG_LIKE, ORDER0_AC)


@dataclass(frozen=True)
class CodecId:
    name: str
    external: ExternalCodec | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.external is None and self.name not in BUILTIN:
            raise ConfigError(f"unknown codec {self.name!r}; built-ins are {BUILTIN}")

    @property
    def builtin(self) -> bool:
        return self.external is None

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class CompressedBlob:
    codec: CodecId
    payload: bytes
    bit_length: int

    @property
    def bpd(self) -> float:
        return self.bit_length / DIMS


@dataclass(frozen=True)
class ComplexityEstimate:
    per_codec: Mapping[str, float]
    min_bpd: float


def resolve_codec(name: str | CodecId, externals: Mapping[str, ExternalCodec] | None = None) -> CodecId:
    """Map a name to a codec; non-built-in names must be declared in ``externals``."""
    if isinstance(name, CodecId):
        return name
    if name in BUILTIN:
        return CodecId(name)
    if externals is None:
        externals = load_external_codecs()
    if name not in externals:
        raise ConfigError(f"unknown codec {name!r}; declare it in the external codec config")
    return CodecId(name, externals[name])


def compress(img: ImageTensor, codec: str | CodecId) -> CompressedBlob:
    codec = resolve_codec(codec)
    if codec.name == PNG_LIKE and codec.builtin:
        payload = png_like.encode(img.pixels)
        return CompressedBlob(codec, payload, 8 * len(payload))
    if codec.name == ORDER0_AC and codec.builtin:
        payload, nbits = arith.encode(img.pixels)
        return CompressedBlob(codec, payload, nbits)
    bits = codec.external.coded_bits(encode_raw(img.pixels))
    return CompressedBlob(codec, b"", bits)


def decompress(blob: CompressedBlob) -> ImageTensor:
    if not blob.codec.builtin:
        raise CodecError(f"decompression is not supported for external codec {blob.codec.name!r}")
    if blob.codec.name == PNG_LIKE:
        return ImageTensor(png_like.decode(blob.payload))
    return ImageTensor(arith.decode(blob.payload, DIMS))


def complexity(img: ImageTensor, codec: str | CodecId) -> float:
    """Coded length of ``img`` in bits per dimension."""
    bpd = compress(img, codec).bit_length / DIMS
    if not (bpd > 0 and math.isfinite(bpd)):
        raise CodecError(f"codec {codec} produced a non-positive length")
    return bpd


def complexity_min(img: ImageTensor, codecs: Sequence[str | CodecId]) -> ComplexityEstimate:
    """Per-codec bpd plus their minimum (best compressor per image)."""
    if not codecs:
        raise ValueError("complexity_min needs at least one codec")
    per = {str(c): complexity(img, c) for c in codecs}
    return ComplexityEstimate(per, min(per.values()))


def complexity_many(images: Iterable[ImageTensor], codec: str | CodecId, workers: int = 1) -> list[float]:
    codec = resolve_codec(codec)
    images = list(images)
    if workers <= 1 or len(images) < 2:
        return [complexity(im, codec) for im in images]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda im: complexity(im, codec), images))


__all__ = [
    "BUILTIN", "ORDER0_AC", "PNG_LIKE", "CodecId", "CompressedBlob", "ComplexityEstimate",
    "ExternalCodec", "complexity", "complexity_many", "complexity_min", "compress", "decompress",
    "load_external_codecs", "resolve_codec",
]
