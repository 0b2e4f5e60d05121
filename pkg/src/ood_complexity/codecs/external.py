"""Adapter for third-party compressors (FLIF, JPEG2000, ...) invoked as shell commands.

Configuration is a TOML file, one table per codec::

    [codecs.flif]
    command = "flif -e {in} {out}"
    header_bytes = 30

The input file handed to the command is the raw ``OODT`` container. The
coded size is the output file size minus ``header_bytes``.
"""

from __future__ import annotations

import os
import shlex
import subprocess
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import CodecError, ConfigError

ENV_VAR = "OOD_EXTERNAL_CODECS"


@dataclass(frozen=True)
class ExternalCodec:
    name: str
    command: str
    header_bytes: int = 0

    def __post_init__(self):
        if "{in}" not in self.command or "{out}" not in self.command:
            raise ConfigError(f"codec {self.name!r}: command needs {{in}} and {{out}} placeholders")
        if self.header_bytes < 0:
            raise ConfigError(f"codec {self.name!r}: header_bytes must be >= 0")

    def _run_once(self, raw: bytes) -> int:
        with tempfile.TemporaryDirectory(prefix="oodcodec-") as tmp:
            src = Path(tmp) / "in.oodt"
            dst = Path(tmp) / "out.bin"
            src.write_bytes(raw)
            argv = [a.replace("{in}", str(src)).replace("{out}", str(dst))
                    for a in shlex.split(self.command)]
            try:
                proc = subprocess.run(argv, capture_output=True, timeout=120)
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise CodecError(f"codec {self.name!r} failed to run: {exc}") from None
            if proc.returncode != 0:
                err = proc.stderr.decode(errors="replace").strip()
                raise CodecError(f"codec {self.name!r} exited with {proc.returncode}: {err}")
            if not dst.is_file():
                raise CodecError(f"codec {self.name!r} produced no output file")
            return dst.stat().st_size

    def coded_bits(self, raw: bytes) -> int:
        """Run the command twice; sizes must agree. Returns ``8 * (size - header_bytes)``."""
        first = self._run_once(raw)
        second = self._run_once(raw)
        if first != second:
            raise CodecError(f"codec {self.name!r} output size is nondeterministic ({first} vs {second})")
        body = first - self.header_bytes
        if body <= 0:
            raise CodecError(
                f"codec {self.name!r}: output of {first} bytes does not exceed header_bytes={self.header_bytes}"
            )
        return 8 * body


def load_external_codecs(path: str | os.PathLike | None = None) -> dict[str, ExternalCodec]:
    """Load codec declarations from ``path`` or ``$OOD_EXTERNAL_CODECS``; empty if neither is set."""
    if path is None:
        path = os.environ.get(ENV_VAR)
        if not path:
            return {}
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read external codec config {path}: {exc}") from None
    table = cfg.get("codecs", {})
    if not isinstance(table, dict):
        raise ConfigError("'codecs' must be a table")
    out = {}
    for name, entry in table.items():
        if not isinstance(entry, dict) or "command" not in entry:
            raise ConfigError(f"codec {name!r} needs a 'command' entry")
        out[name] = ExternalCodec(name, str(entry["command"]), int(entry.get("header_bytes", 0)))
    return out
