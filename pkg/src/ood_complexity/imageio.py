"""On-disk image formats (PPM/PGM and the raw ``OODT`` container) and dataset manifests."""

from __future__ import annotations

import csv
import re
import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from .data import Dataset, ImageTensor, normalize_input
from .errors import FormatError, ParseError, ValidationError

RAW_MAGIC = b"OODT"
_RAW_HEADER = struct.Struct(">4sBHH7s")  # 16 bytes


def encode_raw(pixels: np.ndarray) -> bytes:
    """Serialize a ``(C, H, W)`` uint8 array to the raw container."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim == 2:
        pixels = pixels[None]
    c, h, w = pixels.shape
    return _RAW_HEADER.pack(RAW_MAGIC, c, h, w, bytes(7)) + pixels.tobytes()


def decode_raw(data: bytes) -> np.ndarray:
    if len(data) < _RAW_HEADER.size:
        raise FormatError("raw container shorter than its 16-byte header")
    magic, c, h, w, reserved = _RAW_HEADER.unpack_from(data)
    if magic != RAW_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {RAW_MAGIC!r}")
    if reserved != bytes(7):
        raise FormatError("reserved header bytes must be zero")
    body = data[_RAW_HEADER.size:]
    if len(body) != c * h * w:
        raise FormatError(f"raw body has {len(body)} bytes, header declares {c * h * w}")
    return np.frombuffer(body, dtype=np.uint8).reshape(c, h, w).copy()


_PNM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def decode_pnm(data: bytes) -> np.ndarray:
    """Decode binary PGM (P5) or PPM (P6) with maxval 255 to ``(C, H, W)``."""
    pos = 0
    fields = []
    for _ in range(4):
        m = _PNM_TOKEN.match(data, pos)
        if m is None:
            raise FormatError("truncated PNM header")
        fields.append(m.group(1))
        pos = m.end()
    magic = fields[0]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported PNM magic {magic!r}")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise FormatError("non-numeric PNM header field") from None
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    c = 3 if magic == b"P6" else 1
    body = data[pos:pos + w * h * c]
    if len(body) != w * h * c:
        raise FormatError("truncated PNM body")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, c).transpose(2, 0, 1).copy()


def encode_pnm(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim == 2:
        pixels = pixels[None]
    c, h, w = pixels.shape
    if c not in (1, 3):
        raise FormatError(f"PNM needs 1 or 3 channels, got {c}")
    magic = b"P6" if c == 3 else b"P5"
    return magic + b"\n%d %d\n255\n" % (w, h) + pixels.transpose(1, 2, 0).tobytes()


def read_image(path: str | Path) -> ImageTensor:
    """Load any supported file and normalize it to 3x32x32."""
    data = Path(path).read_bytes()
    if data[:4] == RAW_MAGIC:
        raw = decode_raw(data)
    elif data[:2] in (b"P5", b"P6"):
        raw = decode_pnm(data)
    else:
        raise FormatError(f"{path}: unrecognized image format")
    return normalize_input(raw)


def write_image(path: str | Path, img: ImageTensor) -> None:
    Path(path).write_bytes(encode_raw(img.pixels))


def read_manifest(path: str | Path) -> list[tuple[str, Path]]:
    """Read an ``id,path`` manifest; relative paths resolve against the manifest's directory."""
    path = Path(path)
    base = path.parent
    rows: list[tuple[str, Path]] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["id", "path"]:
            raise ParseError(f"expected header 'id,path', got {header!r}", line=1)
        for row in reader:
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", line=reader.line_num)
            rid, rel = row[0].strip(), row[1].strip()
            if rid in seen:
                raise ValidationError(f"duplicate id {rid!r} in manifest {path}")
            seen.add(rid)
            p = Path(rel)
            rows.append((rid, p if p.is_absolute() else base / p))
    return rows


def load_manifest(path: str | Path, name: str | None = None) -> Dataset:
    rows = read_manifest(path)
    missing = [str(p) for _, p in rows if not p.is_file()]
    if missing:
        raise FileNotFoundError("missing image files: " + ", ".join(missing))
    return Dataset(
        name or Path(path).stem,
        tuple(read_image(p) for _, p in rows),
        tuple(rid for rid, _ in rows),
    )


def save_dataset(ds: Dataset, out_dir: str | Path, manifest_name: str = "manifest.csv") -> Path:
    """Write each image as ``<id>.oodt`` plus a manifest; returns the manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    entries: list[tuple[str, str]] = []
    for rid, img in ds.items():
        rel = f"images/{rid}.oodt"
        write_image(out / rel, img)
        entries.append((rid, rel))
    manifest = out / manifest_name
    write_manifest(manifest, entries)
    return manifest


def write_manifest(path: str | Path, entries: Iterable[tuple[str, str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "path"])
        w.writerows(entries)
