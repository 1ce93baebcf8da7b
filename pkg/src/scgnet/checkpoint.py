"""Single-file checkpoint container.

Layout (little-endian): ``b"SCGC"``, u32 version, u32 length + UTF-8 config
echo, u32 entry count, then per entry u32 name length, UTF-8 name, u64 blob
length and a TSR v1 blob.

Entry names are prefixed ``param/``, ``buffer/``, ``optim/`` or ``meta/``.
Sampling randomness is derived from (seed, epoch, step), so the epoch and
step counters are the whole RNG state.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import tsr
from .tsr import CorruptFileError

MAGIC = b"SCGC"
VERSION = 1


class VersionMismatchError(ValueError):
    pass


@dataclass
class Checkpoint:
    config_text: str
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def section(self, prefix):
        p = prefix + "/"
        return {k[len(p):]: v for k, v in self.entries.items() if k.startswith(p)}

    def meta(self, key, default=0):
        arr = self.entries.get(f"meta/{key}")
        return default if arr is None else int(arr)


def dumps(ckpt: Checkpoint) -> bytes:
    echo = ckpt.config_text.encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(echo)), echo, struct.pack("<I", len(ckpt.entries))]
    for name, arr in ckpt.entries.items():
        raw = name.encode("utf-8")
        blob = tsr.dumps(arr)
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<Q", len(blob)), blob]
    return b"".join(parts)


def _take(buf, pos, n, what):
    if pos + n > len(buf):
        raise CorruptFileError(f"checkpoint truncated while reading {what}")
    return buf[pos:pos + n], pos + n


def loads(buf: bytes) -> Checkpoint:
    head, pos = _take(buf, 0, 8, "header")
    if head[:4] != MAGIC:
        raise CorruptFileError("not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", head[4:])
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    raw, pos = _take(buf, pos, 4, "config length")
    echo, pos = _take(buf, pos, struct.unpack("<I", raw)[0], "config echo")
    raw, pos = _take(buf, pos, 4, "entry count")
    (count,) = struct.unpack("<I", raw)
    entries = {}
    for _ in range(count):
        raw, pos = _take(buf, pos, 4, "entry name length")
        name, pos = _take(buf, pos, struct.unpack("<I", raw)[0], "entry name")
        raw, pos = _take(buf, pos, 8, "blob length")
        blob, pos = _take(buf, pos, struct.unpack("<Q", raw)[0], "tensor blob")
        arr, end = tsr.loads(blob)
        if end != len(blob):
            raise CorruptFileError(f"entry {name!r} has trailing bytes")
        entries[name.decode("utf-8")] = arr
    if pos != len(buf):
        raise CorruptFileError(f"{len(buf) - pos} trailing bytes after last entry")
    return Checkpoint(echo.decode("utf-8"), entries)


def save(path, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(ckpt))


def load(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return loads(fh.read())


def capture(config_text, model, optimizer=None, epoch=0, step=0) -> Checkpoint:
    entries = {}
    for name, p in model.named_parameters():
        entries[f"param/{name}"] = p.data
    for name, buf in model.named_buffers():
        entries[f"buffer/{name}"] = buf
    if optimizer is not None:
        for key, arr in optimizer.state_arrays():
            entries[f"optim/{key}"] = arr
        entries["meta/optim_t"] = np.array(optimizer.t, dtype=np.float64)
    entries["meta/epoch"] = np.array(epoch, dtype=np.float64)
    entries["meta/step"] = np.array(step, dtype=np.float64)
    return Checkpoint(config_text, entries)


def restore(ckpt: Checkpoint, model, optimizer=None) -> None:
    """Copy tensors into ``model`` (and ``optimizer``); validates everything first."""
    params = dict(model.named_parameters())
    wanted = ckpt.section("param")
    if set(wanted) != set(params):
        missing = sorted(set(params) ^ set(wanted))
        raise CorruptFileError(f"checkpoint parameters do not match model: {missing[:5]}")
    for name, arr in wanted.items():
        if arr.shape != params[name].shape:
            raise CorruptFileError(f"shape mismatch for {name}: {arr.shape} vs {params[name].shape}")
    for name, arr in wanted.items():
        params[name].data = arr.astype(params[name].data.dtype)
    for name, arr in ckpt.section("buffer").items():
        model.set_buffer(name, arr)
    if optimizer is not None and "meta/optim_t" in ckpt.entries:
        optimizer.load_state(ckpt.meta("optim_t"), ckpt.section("optim"))
