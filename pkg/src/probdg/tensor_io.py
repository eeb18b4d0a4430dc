"""Tensor file IO, image IO, label resampling and seeded generators.

Tensors are plain ``numpy.ndarray`` objects in float64, channel-first
(``[C, H, W]``, optionally with a leading batch axis). Label maps are integer
arrays of shape ``[H, W]``.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .exceptions import (
    DTypeUnsupported,
    MalformedHeader,
    TruncatedPayload,
    ZeroTargetDim,
)

MAGIC = b"TNSR"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {"f32": 0, "f64": 1}
_HEADER = struct.Struct("<4sHBB")


def tensor_write(t, path, dtype="f64"):
    """Write ``t`` to ``path`` in the TNSR little-endian format.

    ``dtype="f32"`` narrows with round-to-nearest-even; all reading widens back
    to float64.
    """
    if dtype not in _DTYPE_CODES:
        raise DTypeUnsupported(f"unknown storage dtype {dtype!r}")
    arr = np.asarray(t, dtype=np.float64)
    code = _DTYPE_CODES[dtype]
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    header = _HEADER.pack(MAGIC, VERSION, code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header + dims + payload)


def tensor_read(path):
    """Read a TNSR file into a float64 array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise MalformedHeader(f"{path}: file shorter than header")
    magic, version, code, rank = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise MalformedHeader(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise MalformedHeader(f"{path}: unsupported version {version}")
    if code not in _DTYPES:
        raise DTypeUnsupported(f"{path}: dtype code {code}")
    offset = _HEADER.size
    if len(raw) < offset + 8 * rank:
        raise MalformedHeader(f"{path}: truncated dims")
    shape = struct.unpack_from(f"<{rank}Q", raw, offset)
    offset += 8 * rank
    dt = _DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    nbytes = count * dt.itemsize
    if len(raw) - offset < nbytes:
        raise TruncatedPayload(
            f"{path}: expected {nbytes} payload bytes, got {len(raw) - offset}")
    data = np.frombuffer(raw, dtype=dt, count=count, offset=offset)
    return data.astype(np.float64).reshape(shape)


def read_image(path):
    """Read an 8-bit binary PGM (P5) or PPM (P6) as ``[C, H, W]`` in [-1, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise MalformedHeader(f"{path}: incomplete image header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte before the raster
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise MalformedHeader(f"{path}: unsupported image magic {magic!r}")
    width, height, maxval = (int(tok) for tok in tokens[1:])
    if maxval != 255:
        raise DTypeUnsupported(f"{path}: only 8-bit images (maxval 255) supported")
    channels = 1 if magic == b"P5" else 3
    n = width * height * channels
    if len(raw) - pos < n:
        raise TruncatedPayload(f"{path}: raster truncated")
    pix = np.frombuffer(raw, dtype=np.uint8, count=n, offset=pos)
    img = pix.reshape(height, width, channels).transpose(2, 0, 1)
    return img.astype(np.float64) / 127.5 - 1.0


def write_image(img, path):
    """Write ``[C, H, W]`` values in [-1, 1] as PGM (C=1) or PPM (C=3)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    channels, height, width = img.shape
    if channels not in (1, 3):
        raise ValueError(f"images need 1 or 3 channels, got {channels}")
    pix = np.clip(np.rint((img + 1.0) * 127.5), 0, 255).astype(np.uint8)
    magic = b"P5" if channels == 1 else b"P6"
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (width, height))
        fh.write(pix.transpose(1, 2, 0).tobytes())


def label_downsample(labels, target_h, target_w):
    """Nearest-neighbour resample of a label map at pixel centres.

    Ties between two source pixels go to the lower index, so an exact 2x
    reduction picks the top-left pixel of every 2x2 block.
    """
    labels = np.asarray(labels)
    if target_h <= 0 or target_w <= 0:
        raise ZeroTargetDim(f"target dims must be positive, got {target_h}x{target_w}")
    src_h, src_w = labels.shape[-2:]
    if target_h > src_h or target_w > src_w:
        raise ValueError("label_downsample cannot upsample")
    rows = _nearest_index(src_h, target_h)
    cols = _nearest_index(src_w, target_w)
    return labels[..., rows[:, None], cols[None, :]]


def _nearest_index(src, dst):
    centre = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    return np.clip(np.ceil(centre - 0.5), 0, src - 1).astype(np.intp)


def make_rng(seed):
    """Counter-based (Philox) generator; identical streams for identical seeds."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def split_rng(seed, n):
    """``n`` independent generators derived from one seed."""
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [make_rng(child) for child in children]


def file_sha256(path):
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
