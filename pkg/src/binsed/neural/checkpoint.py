"""SEDM checkpoint files.

Layout (little-endian): magic ``SEDM``, version u16, descriptor length u32,
descriptor (UTF-8 JSON: architecture plus extras), block count u32, then per
block: name length u16, name (UTF-8), element count u32, float32 values.
Blocks follow the model's declaration order: parameters, buffers, then any
extra blocks such as normalization statistics.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from ..errors import FormatError, SedIOError
from .model import CBRNN, Architecture

MAGIC = b"SEDM"
VERSION = 1


def save_checkpoint(path, model: CBRNN, extra_blocks: dict[str, np.ndarray] | None = None, meta: dict | None = None):
    extra_blocks = extra_blocks or {}
    descriptor = {"architecture": model.arch.to_dict(), "meta": meta or {},
                  "shapes": {}}
    blocks = {**model.params, **model.buffers, **extra_blocks}
    descriptor["shapes"] = {k: list(v.shape) for k, v in blocks.items()}
    text = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(text)), text, struct.pack("<I", len(blocks))]
    for name, arr in blocks.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<I", arr.size))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


def read_checkpoint(path):
    """Return ``(descriptor, blocks)`` with blocks reshaped per the descriptor."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise SedIOError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    try:
        version, n = struct.unpack_from("<HI", raw, 4)
        if version != VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        pos = 10
        descriptor = json.loads(raw[pos:pos + n].decode("utf-8"))
        pos += n
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        blocks = {}
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", raw, pos)
            name = raw[pos + 2:pos + 2 + ln].decode("utf-8")
            pos += 2 + ln
            (size,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            if pos + 4 * size > len(raw):
                raise SedIOError(f"{path}: block {name} truncated")
            arr = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).astype(np.float32)
            blocks[name] = arr.reshape(descriptor["shapes"][name])
            pos += 4 * size
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, KeyError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint ({exc})") from exc
    return descriptor, blocks


def load_checkpoint(path):
    """Rebuild the model; returns ``(model, extra_blocks, meta)``."""
    descriptor, blocks = read_checkpoint(path)
    model = CBRNN(Architecture.from_dict(descriptor["architecture"]))
    own = set(model.params) | set(model.buffers)
    model.load_state({k: v for k, v in blocks.items() if k in own})
    extra = {k: v for k, v in blocks.items() if k not in own}
    return model, extra, descriptor.get("meta", {})
