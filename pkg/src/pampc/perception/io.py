"""Raster and log file formats.

* Intensity: binary PGM (``P5``), 8-bit, intensity scaled by 255.
* Depth: 8-byte magic ``PAMPCDEP``, width and height as little-endian
  uint32, then ``width * height`` little-endian float32 values in row-major
  order; NaN marks invalid pixels.
* Detections and tracks: JSON lines, one object per record.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

DEPTH_MAGIC = b"PAMPCDEP"


def write_pgm(path, intensity: np.ndarray) -> None:
    I = np.asarray(intensity, dtype=float)
    h, w = I.shape
    data = np.clip(np.rint(I * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Intensity in [0, 1] from an 8- or 16-bit binary PGM."""
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    data = np.frombuffer(raw, dtype=dtype, count=w * h, offset=pos)
    return data.reshape(h, w).astype(float) / maxval


def write_depth(path, depth: np.ndarray) -> None:
    D = np.asarray(depth, dtype="<f4")
    h, w = D.shape
    with open(path, "wb") as fh:
        fh.write(DEPTH_MAGIC + struct.pack("<II", w, h))
        fh.write(D.tobytes(order="C"))


def read_depth(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != DEPTH_MAGIC:
        raise ValueError("not a depth raster file")
    w, h = struct.unpack("<II", raw[8:16])
    return np.frombuffer(raw, dtype="<f4", count=w * h, offset=16).reshape(h, w).astype(float)


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
