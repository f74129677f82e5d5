"""File formats: tensor containers, label/image PNGs, edge binaries, run logs.

The tensor container is a minimal self-describing binary: magic "MIMG",
u16 version, u8 dtype code (0 = f32, 1 = u8, 2 = i32), u8 rank, u32 dims,
then the little-endian row-major payload.  Edge lists serialize as an
8-byte magic header followed by sorted (u32 i, u32 j, f32 w) triplets.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .consensus import EdgeList
from .errors import ParameterError

TENSOR_MAGIC = b"MIMG"
TENSOR_VERSION = 1
EDGE_MAGIC = b"SSEDGE01"

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("u1"), 2: np.dtype("<i4")}
_CODE_FOR_KIND = {"f": 0, "u": 1, "i": 2}


def write_tensor(path, array) -> None:
    arr = np.asarray(array)
    code = _CODE_FOR_KIND.get(arr.dtype.kind)
    if code is None:
        raise ParameterError(f"unsupported dtype {arr.dtype}")
    arr = np.ascontiguousarray(arr.astype(_DTYPE_CODES[code]))
    header = TENSOR_MAGIC + struct.pack("<HBB", TENSOR_VERSION, code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + dims + arr.tobytes())


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != TENSOR_MAGIC:
        raise ParameterError(f"{path}: not a tensor container")
    version, code, rank = struct.unpack("<HBB", raw[4:8])
    if version != TENSOR_VERSION:
        raise ParameterError(f"{path}: unsupported container version {version}")
    if code not in _DTYPE_CODES:
        raise ParameterError(f"{path}: unknown dtype code {code}")
    dims = struct.unpack(f"<{rank}I", raw[8:8 + 4 * rank])
    dtype = _DTYPE_CODES[code]
    payload = raw[8 + 4 * rank:]
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(payload) != expected:
        raise ParameterError(f"{path}: payload length {len(payload)} != {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def write_image_png(path, image, bit_depth: int = 16) -> None:
    """Grayscale PNG of a float image clipped to [0, 1]."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[2] != 1:
            raise ParameterError("PNG export supports single-channel images")
        arr = arr[..., 0]
    clipped = np.clip(arr, 0.0, 1.0)
    if bit_depth == 16:
        data = (clipped * 65535).round().astype(np.uint16)
        Image.fromarray(data).save(path)
    elif bit_depth == 8:
        data = (clipped * 255).round().astype(np.uint8)
        Image.fromarray(data, mode="L").save(path)
    else:
        raise ParameterError("bit_depth must be 8 or 16")


def read_image_png(path) -> np.ndarray:
    img = Image.open(path)
    arr = np.asarray(img, dtype=np.float64)
    scale = 65535.0 if img.mode in ("I;16", "I") else 255.0
    return arr / scale


def write_label_png(path, labels) -> None:
    """32-bit integer label PNG: the int32 value spans the RGBA bytes
    little-endian, which PNG stores losslessly."""
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise ParameterError("label maps are 2-D")
    h, w = arr.shape
    bytes_view = np.ascontiguousarray(arr.astype("<i4")).view(np.uint8).reshape(h, w, 4)
    Image.fromarray(bytes_view, mode="RGBA").save(path)


def read_label_png(path) -> np.ndarray:
    img = Image.open(path)
    if img.mode != "RGBA":
        raise ParameterError(f"{path}: not a 32-bit label PNG")
    raw = np.asarray(img, dtype=np.uint8)
    return raw.reshape(raw.shape[0], raw.shape[1], 4).view("<i4")[..., 0]


def labels_to_runs(labels) -> dict:
    """Run-length encoding of a label map, row-major, background omitted."""
    arr = np.asarray(labels).astype(np.int32)
    flat = arr.ravel()
    runs = []
    boundaries = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [flat.size]])
    for s, e in zip(starts, ends):
        if flat[s] != 0:
            runs.append([int(s), int(e - s), int(flat[s])])
    return {"dims": list(arr.shape), "runs": runs}


def runs_to_labels(payload: dict) -> np.ndarray:
    h, w = payload["dims"]
    flat = np.zeros(h * w, dtype=np.int32)
    for start, length, label in payload["runs"]:
        flat[start:start + length] = label
    return flat.reshape(h, w)


def write_edges(path, edges: EdgeList) -> None:
    """Sorted little-endian (u32, u32, f32) triplets behind an 8-byte magic."""
    order = np.lexsort((edges.j, edges.i))
    body = np.empty(len(edges), dtype=[("i", "<u4"), ("j", "<u4"), ("w", "<f4")])
    body["i"] = edges.i[order]
    body["j"] = edges.j[order]
    body["w"] = edges.w[order]
    Path(path).write_bytes(EDGE_MAGIC + body.tobytes())


def read_edges(path) -> EdgeList:
    raw = Path(path).read_bytes()
    if raw[:8] != EDGE_MAGIC:
        raise ParameterError(f"{path}: not an edge-list file")
    body = np.frombuffer(raw[8:], dtype=[("i", "<u4"), ("j", "<u4"), ("w", "<f4")])
    return EdgeList(
        i=body["i"].astype(np.int64),
        j=body["j"].astype(np.int64),
        w=body["w"].astype(np.float64),
    )


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return digest.hexdigest()


def append_runlog(path, kind: str, payload) -> None:
    """Line-delimited JSON records for streaming analysis of runs."""
    if dataclasses.is_dataclass(payload) and not isinstance(payload, type):
        payload = dataclasses.asdict(payload)
    record = {"kind": kind, **payload}
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_runlog(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
