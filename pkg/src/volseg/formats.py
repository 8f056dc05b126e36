"""On-disk volume formats.

Two formats are supported:

* a portable raw format: a little-endian binary blob next to a JSON
  sidecar carrying dims/dtype/legend, so the whole suite runs without any
  imaging library;
* NIfTI-1 (.nii / .nii.gz), read and written by a minimal self-contained
  codec (scalar datatypes, single file, no extensions).
"""

from __future__ import annotations

import gzip
import json
import struct
from pathlib import Path

import numpy as np

LABEL_LEGEND = {0: "background", 1: "necrotic_core", 2: "edema", 3: "enhancing"}

_RAW_DTYPES = {"float32": "<f4", "uint8": "|u1", "int16": "<i2", "float64": "<f8"}


def save_raw_volume(path_base: str | Path, array: np.ndarray, extra_meta: dict | None = None) -> Path:
    """Write ``<base>.raw`` + ``<base>.json``. Returns the sidecar path."""
    base = Path(path_base)
    dtype_name = array.dtype.name
    if dtype_name not in _RAW_DTYPES:
        raise ValueError(f"unsupported dtype for raw format: {dtype_name}")
    blob = np.ascontiguousarray(array).astype(_RAW_DTYPES[dtype_name]).tobytes()
    base.parent.mkdir(parents=True, exist_ok=True)
    (base.with_suffix(".raw")).write_bytes(blob)
    meta = {
        "dims": list(array.shape),
        "dtype": dtype_name,
        "byte_order": "little",
        "label_legend": LABEL_LEGEND if dtype_name == "uint8" else None,
    }
    if extra_meta:
        meta.update(extra_meta)
    sidecar = base.with_suffix(".json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return sidecar


def load_raw_volume(path_base: str | Path) -> tuple[np.ndarray, dict]:
    """Read a raw+sidecar pair written by :func:`save_raw_volume`."""
    base = Path(path_base)
    if base.suffix in (".raw", ".json"):
        base = base.with_suffix("")
    meta = json.loads(base.with_suffix(".json").read_text())
    dtype = _RAW_DTYPES[meta["dtype"]]
    blob = base.with_suffix(".raw").read_bytes()
    array = np.frombuffer(blob, dtype=dtype).reshape(meta["dims"]).astype(meta["dtype"])
    return array, meta


# --- minimal NIfTI-1 ---------------------------------------------------------
#
# Header layout (348 bytes, little-endian assumed; the dim[0] sanity check
# rejects big-endian files). Only the fields we need are parsed.

_NIFTI_DTYPES = {2: np.uint8, 4: np.int16, 8: np.int32, 16: np.float32, 64: np.float64}
_NIFTI_CODES = {np.dtype(np.uint8): 2, np.dtype(np.int16): 4, np.dtype(np.int32): 8,
                np.dtype(np.float32): 16, np.dtype(np.float64): 64}


def _open_maybe_gz(path: Path, mode: str):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def read_nifti(path: str | Path) -> np.ndarray:
    """Read a 3D/4D NIfTI-1 volume.

    Returns the image array in header index order (x, y, z[, t]), with the
    scl_slope/scl_inter scaling applied when present.
    """
    path = Path(path)
    with _open_maybe_gz(path, "rb") as f:
        hdr = f.read(348)
        if len(hdr) < 348:
            raise ValueError(f"{path}: truncated NIfTI header")
        (sizeof_hdr,) = struct.unpack("<i", hdr[0:4])
        if sizeof_hdr != 348:
            raise ValueError(f"{path}: not a little-endian NIfTI-1 file (sizeof_hdr={sizeof_hdr})")
        magic = hdr[344:348]
        if magic[:3] not in (b"n+1", b"ni1"):
            raise ValueError(f"{path}: bad NIfTI magic {magic!r}")
        dim = struct.unpack("<8h", hdr[40:56])
        ndim = dim[0]
        if not 1 <= ndim <= 4:
            raise ValueError(f"{path}: unsupported ndim {ndim} (want 3D or 4D)")
        shape = tuple(dim[1 : 1 + ndim])
        (datatype,) = struct.unpack("<h", hdr[70:72])
        if datatype not in _NIFTI_DTYPES:
            raise ValueError(f"{path}: unsupported NIfTI datatype code {datatype}")
        (vox_offset,) = struct.unpack("<f", hdr[108:112])
        (scl_slope,) = struct.unpack("<f", hdr[112:116])
        (scl_inter,) = struct.unpack("<f", hdr[116:120])
        offset = int(vox_offset) if vox_offset >= 348 else 352
        f.seek(offset)
        dtype = _NIFTI_DTYPES[datatype]
        count = int(np.prod(shape))
        blob = f.read(count * np.dtype(dtype).itemsize)
    data = np.frombuffer(blob, dtype=dtype, count=count)
    # NIfTI stores x fastest; reshape in Fortran order to get (x, y, z[, t]).
    data = data.reshape(shape, order="F")
    if scl_slope not in (0.0,) and not np.isnan(scl_slope) and (scl_slope != 1.0 or scl_inter != 0.0):
        data = data.astype(np.float32) * scl_slope + scl_inter
    return np.ascontiguousarray(data)


def write_nifti(path: str | Path, array: np.ndarray) -> Path:
    """Write a 3D/4D array as a single-file NIfTI-1 (.nii or .nii.gz).

    The array is interpreted in (x, y, z[, t]) index order, mirroring
    :func:`read_nifti`.
    """
    path = Path(path)
    array = np.asarray(array)
    if array.ndim not in (3, 4):
        raise ValueError("write_nifti expects a 3D or 4D array")
    if array.dtype not in _NIFTI_CODES:
        array = array.astype(np.float32)
    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)
    dim = [array.ndim, *array.shape] + [1] * (7 - array.ndim)
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<h", hdr, 70, _NIFTI_CODES[array.dtype])
    struct.pack_into("<h", hdr, 72, array.dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0)  # pixdim
    struct.pack_into("<f", hdr, 108, 352.0)  # vox_offset
    struct.pack_into("<f", hdr, 112, 1.0)  # scl_slope
    struct.pack_into("<f", hdr, 116, 0.0)  # scl_inter
    hdr[344:348] = b"n+1\x00"
    body = bytes(hdr) + b"\x00" * 4 + np.asfortranarray(array).tobytes(order="F")
    path.parent.mkdir(parents=True, exist_ok=True)
    if str(path).endswith(".gz"):
        # fixed mtime so identical content yields identical bytes
        with open(path, "wb") as raw:
            with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as f:
                f.write(body)
    else:
        path.write_bytes(body)
    return path


def nifti_to_depth_first(array: np.ndarray) -> np.ndarray:
    """Reorder an (x, y, z) or (x, y, z, t) NIfTI array to (D, H, W) / (C, D, H, W)."""
    if array.ndim == 3:
        return np.ascontiguousarray(array.transpose(2, 1, 0))
    if array.ndim == 4:
        return np.ascontiguousarray(array.transpose(3, 2, 1, 0))
    raise ValueError("expected a 3D or 4D array")
