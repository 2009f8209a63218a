"""Binary container for measurement sets.

Layout (all little endian)::

    b"NDMAP01"
    u32 N_x, u32 N_t, u32 n_space
    f64 T, f64 dt_samp
    obstacle:  u8 kind (0 none, 1 disk, 2 square), f64 center_x, f64 center_y, f64 size, f64 angle
    noise:     u8 present; if present: f64 snr_db, u64 seed, N_x x f64 measured power [dB]
    N_x * N_t * N_x f64 samples in (source, time, receiver) order
"""

from __future__ import annotations

import hashlib
import os
import struct

import numpy as np

from .geometry import Obstacle
from .measurement import MeasurementConfig, MeasurementSet, NoiseSpec

MAGIC = b"NDMAP01"
_KINDS = {"none": 0, "disk": 1, "square": 2}
_KIND_NAMES = {v: k for k, v in _KINDS.items()}


class ArchiveFormatError(ValueError):
    """The archive bytes do not follow the NDMAP01 layout."""


def encode(data: MeasurementSet) -> bytes:
    cfg = data.config
    ob = data.obstacle
    parts = [
        MAGIC,
        struct.pack("<3I", cfg.n_x, cfg.n_t, cfg.n_space),
        struct.pack("<2d", cfg.T, cfg.dt_samp),
        struct.pack("<B4d", _KINDS[ob.kind], ob.center[0], ob.center[1], ob.size, ob.angle),
    ]
    if data.noise is None:
        parts.append(struct.pack("<B", 0))
    else:
        nz = data.noise
        powers = list(nz.measured_power_db) or [float("nan")] * cfg.n_x
        parts.append(struct.pack("<BdQ", 1, nz.snr_db, nz.seed))
        parts.append(struct.pack(f"<{cfg.n_x}d", *powers))
    parts.append(np.ascontiguousarray(data.traces, dtype="<f8").tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> MeasurementSet:
    view = memoryview(buf)
    pos = 0

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(view):
            raise ArchiveFormatError("archive truncated in header")
        out = struct.unpack_from(fmt, view, pos)
        pos += size
        return out

    if bytes(view[:len(MAGIC)]) != MAGIC:
        raise ArchiveFormatError("bad magic bytes; not an NDMAP01 archive")
    pos = len(MAGIC)
    n_x, n_t, n_space = take("<3I")
    T, dt_samp = take("<2d")
    if n_x == 0 or n_t == 0 or n_t % 2 or not T > 0:
        raise ArchiveFormatError("invalid grid metadata in header")
    if abs(dt_samp - 2 * T / n_t) > 1e-12 * max(1.0, dt_samp):
        raise ArchiveFormatError("sampling interval inconsistent with T and N_t")
    kind, cx, cy, size, angle = take("<B4d")
    if kind not in _KIND_NAMES:
        raise ArchiveFormatError(f"unknown obstacle kind code {kind}")
    try:
        obstacle = Obstacle(_KIND_NAMES[kind], (cx, cy), size, angle) if kind else Obstacle.none()
    except ValueError as exc:
        raise ArchiveFormatError(f"invalid obstacle descriptor: {exc}") from None
    (present,) = take("<B")
    noise = None
    if present == 1:
        snr, seed = take("<dQ")
        powers = take(f"<{n_x}d")
        noise = NoiseSpec(snr, seed, tuple(powers))
    elif present != 0:
        raise ArchiveFormatError("invalid noise flag")
    count = n_x * n_t * n_x
    if len(view) - pos != 8 * count:
        raise ArchiveFormatError(f"expected {8 * count} sample bytes, found {len(view) - pos}")
    traces = np.frombuffer(view, dtype="<f8", count=count, offset=pos).reshape(n_x, n_t, n_x)
    cfg = MeasurementConfig(n_x=n_x, n_t=n_t, T=T, n_space=n_space)
    return MeasurementSet(cfg, traces, obstacle, noise)


def checksum(buf: bytes) -> str:
    return hashlib.sha256(buf).hexdigest()


def save(data: MeasurementSet, path) -> str:
    """Write the archive and return its SHA-256 checksum."""
    buf = encode(data)
    tmp = f"{path}.part"
    with open(tmp, "wb") as fh:
        fh.write(buf)
    os.replace(tmp, path)
    return checksum(buf)


def load(path) -> MeasurementSet:
    with open(path, "rb") as fh:
        return decode(fh.read())
