"""Bit-stream file formats.

Two on-disk representations are supported:

* packed binary: a 32-byte header followed by the bits packed LSB-first
  within each byte, final partial byte zero-padded.  Header layout
  (little-endian): magic ``QRFB`` (4s), version (u16), reserved (u16),
  n_bits (u64), f_bg in Hz (f64), provenance digest (8 bytes of the
  SHA-256 over the canonical config JSON).
* ASCII: one '0' or '1' character per bit, optional trailing newline;
  interoperable with external statistical suites.

``read_bit_file`` sniffs the magic bytes to pick the decoder.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BitFileError
from .eventsim import BitStream

MAGIC = b"QRFB"
VERSION = 1
_HEADER = struct.Struct("<4sHHQd8s")
HEADER_SIZE = _HEADER.size
assert HEADER_SIZE == 32

FORMATS = ("packed", "ascii")


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def config_digest(config: dict) -> bytes:
    """First 8 bytes of SHA-256 over the canonical JSON of a config dict."""
    return hashlib.sha256(_canonical_json(config).encode()).digest()[:8]


@dataclass(frozen=True)
class BitFileHeader:
    n_bits: int
    f_bg: float
    digest: bytes
    version: int = VERSION

    def pack(self) -> bytes:
        return _HEADER.pack(MAGIC, self.version, 0, self.n_bits, self.f_bg, self.digest)

    @classmethod
    def unpack(cls, raw: bytes) -> "BitFileHeader":
        if len(raw) < HEADER_SIZE:
            raise BitFileError("file too short for a packed header")
        magic, version, _, n_bits, f_bg, digest = _HEADER.unpack(raw[:HEADER_SIZE])
        if magic != MAGIC:
            raise BitFileError(f"bad magic {magic!r}")
        if version != VERSION:
            raise BitFileError(f"unsupported version {version}")
        return cls(n_bits, f_bg, digest, version)


def write_bit_file(path, stream: BitStream, fmt: str = "packed") -> None:
    """Write a BitStream in the requested format."""
    path = Path(path)
    if fmt == "packed":
        digest = config_digest(stream.provenance.get("config", {}))
        header = BitFileHeader(stream.n_bits, stream.f_bg, digest)
        with open(path, "wb") as fh:
            fh.write(header.pack())
            fh.write(stream.packed.tobytes())
    elif fmt == "ascii":
        with open(path, "wb") as fh:
            fh.write(stream.bits().astype(np.uint8) + ord("0"))
            fh.write(b"\n")
    else:
        raise BitFileError(f"unknown format {fmt!r}; expected one of {FORMATS}")


def read_bit_file(path) -> tuple[BitStream, "BitFileHeader | None"]:
    """Read either format back; returns (stream, header-or-None)."""
    raw = Path(path).read_bytes()
    if raw[:4] == MAGIC:
        header = BitFileHeader.unpack(raw)
        payload = raw[HEADER_SIZE:]
        expected = (header.n_bits + 7) // 8
        if len(payload) < expected:
            raise BitFileError(
                f"truncated payload: need {expected} bytes for {header.n_bits} bits, "
                f"got {len(payload)}")
        packed = np.frombuffer(payload[:expected], dtype=np.uint8)
        stream = BitStream(packed, header.n_bits, header.f_bg,
                           {"source": str(path), "digest": header.digest.hex()})
        return stream, header
    # ASCII fallback: every non-whitespace byte must be '0' or '1'
    arr = np.frombuffer(raw, dtype=np.uint8)
    keep = ~np.isin(arr, np.frombuffer(b" \t\r\n", dtype=np.uint8))
    arr = arr[keep]
    bad = ~np.isin(arr, np.frombuffer(b"01", dtype=np.uint8))
    if arr.size == 0 or np.any(bad):
        raise BitFileError("not a packed bit file and not ASCII '0'/'1' content")
    bits = (arr - ord("0")).astype(np.uint8)
    return BitStream.from_bits(bits, 0.0, {"source": str(path)}), None
