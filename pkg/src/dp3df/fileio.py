"""On-disk formats: binary PPM frames, the DPT1 tensor container, and
line-based key = value config files. Everything is little-endian and
round-trips bit-exactly at the stored precision."""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import ContainerFormatError, ContractViolation

# ---------------------------------------------------------------------------
# PPM (binary P6, 8-bit)
# ---------------------------------------------------------------------------


def write_ppm(path, frame: np.ndarray) -> None:
    """Store a float [H,W,3] frame in [0,1] as binary P6 with maxval 255."""
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ContractViolation(f"write_ppm: frame must be [H,W,3], got {frame.shape}")
    h, w = frame.shape[:2]
    data = np.rint(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    """Load a binary P6 file into a float32 [H,W,3] frame in [0,1]."""
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(b"P6"):
        raise ContainerFormatError(f"{path}: not a binary P6 file")
    # header = magic, width, height, maxval; whitespace separated, # comments
    pos, fields = 2, []
    while len(fields) < 3:
        if pos >= len(blob):
            raise ContainerFormatError(f"{path}: truncated PPM header")
        ch = blob[pos:pos + 1]
        if ch == b"#":
            pos = blob.index(b"\n", pos) + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(blob) and not blob[end:end + 1].isspace():
                end += 1
            fields.append(int(blob[pos:end]))
            pos = end
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ContainerFormatError(f"{path}: unsupported maxval {maxval}")
    need = w * h * 3
    raster = blob[pos:pos + need]
    if len(raster) != need:
        raise ContainerFormatError(f"{path}: truncated PPM raster")
    img = np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3)
    return img.astype(np.float32) / 255.0


# ---------------------------------------------------------------------------
# DPT1 named-tensor container
# ---------------------------------------------------------------------------

_MAGIC = b"DPT1"


def write_container(path, tensors: dict) -> None:
    """Write named float32 tensors: magic, u32 count, then per section
    u32 name length + name, u32 rank, u64 dims, raw little-endian payload."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<Q", d))
            f.write(arr.tobytes())


def read_container(path) -> dict:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _MAGIC:
        raise ContainerFormatError(f"{path}: bad magic {blob[:4]!r}, expected {_MAGIC!r}")
    pos = 4

    def take(n, what):
        nonlocal pos
        if pos + n > len(blob):
            raise ContainerFormatError(f"{path}: truncated while reading {what}")
        out = blob[pos:pos + n]
        pos += n
        return out

    (count,) = struct.unpack("<I", take(4, "section count"))
    tensors = {}
    for i in range(count):
        label = f"section {i}"
        (name_len,) = struct.unpack("<I", take(4, f"name length of {label}"))
        name = take(name_len, f"name of {label}").decode("utf-8")
        label = f"section {name!r}"
        (rank,) = struct.unpack("<I", take(4, f"rank of {label}"))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, f"dims of {label}"))
        n_elem = 1
        for d in dims:
            n_elem *= d
        payload = take(4 * n_elem, f"payload of {label}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    return tensors


# ---------------------------------------------------------------------------
# key = value config files
# ---------------------------------------------------------------------------


def _parse_scalar(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(t)
        except ValueError:
            continue
    return t


def read_config(path) -> dict:
    """Parse `key = value` lines; # starts a comment; commas make tuples."""
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ContractViolation(f"{path}:{lineno}: expected `key = value`")
            key, value = body.split("=", 1)
            value = value.strip()
            if "," in value:
                out[key.strip()] = tuple(_parse_scalar(v) for v in value.split(","))
            else:
                out[key.strip()] = _parse_scalar(value)
    return out


def write_config(path, values: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for key, value in values.items():
            if isinstance(value, (tuple, list)):
                text = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            f.write(f"{key} = {text}\n")


def ensure_dir(path) -> None:
    os.makedirs(path, exist_ok=True)
