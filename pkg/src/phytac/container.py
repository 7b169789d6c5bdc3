"""PHYT binary container for trained parameters.

Layout (little-endian): ``b"PHYT" | u32 version | u32 section | u32 n_arrays |
u32 meta_len | meta (utf-8 JSON)`` then per array ``u16 name_len | name |
u32 ndim | u32 dims... | float32 data``; a trailing ``u32 crc32`` covers
everything before it.
"""

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ChecksumError, MissingArtifactError, TruncatedRecordError, VersionMismatchError

MAGIC = b"PHYT"
VERSION = 1
SECTION_CODEC = 0x434F4443  # "CDOC"
SECTION_DENOISER = 0x4E534944  # "DISN"


def save_params(path, section: int, arrays: dict, meta: dict):
    meta_b = json.dumps(meta, sort_keys=True).encode()
    body = [MAGIC, struct.pack("<IIII", VERSION, section, len(arrays), len(meta_b)), meta_b]
    for name in sorted(arrays):
        a = np.asarray(arrays[name], dtype="<f4")
        nb = name.encode()
        body.append(struct.pack("<H", len(nb)) + nb)
        body.append(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        body.append(a.tobytes())
    blob = b"".join(body)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(blob + struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF))


def load_params(path, section: int):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"parameter file not found: {path}")
    blob = path.read_bytes()
    if len(blob) < 24:
        raise TruncatedRecordError(f"{path}: file too short")
    if blob[:4] != MAGIC:
        raise ChecksumError(f"{path}: bad magic")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ChecksumError(f"{path}: CRC mismatch")
    version, sec, n, mlen = struct.unpack_from("<IIII", body, 4)
    if version != VERSION:
        raise VersionMismatchError(f"{path}: container version {version}")
    if sec != section:
        raise ChecksumError(f"{path}: wrong section (0x{sec:08x}, expected 0x{section:08x})")
    pos = 20
    meta = json.loads(body[pos:pos + mlen].decode())
    pos += mlen
    arrays = {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos:pos + ln].decode()
        pos += ln
        (nd,) = struct.unpack_from("<I", body, pos)
        pos += 4
        shape = struct.unpack_from(f"<{nd}I", body, pos)
        pos += 4 * nd
        size = int(np.prod(shape)) if nd else 1
        arrays[name] = np.frombuffer(body, dtype="<f4", count=size, offset=pos).reshape(shape).copy()
        pos += 4 * size
    return arrays, meta
