"""Just enough NIfTI-1 to exchange volumes with the simulation toolkit:
single-file .nii/.nii.gz, one 3D frame, uint8 or float32, sform affine."""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

_DTYPES = {2: np.uint8, 16: np.float32}
_CODES = {np.dtype(np.uint8): 2, np.dtype(np.float32): 16}


def read_volume(path) -> tuple[np.ndarray, np.ndarray]:
    """Returns (data, affine); data indexed (i, j, k) against affine columns."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 348 or struct.unpack("<i", raw[:4])[0] != 348:
        raise ValueError(f"{path}: not a little-endian NIfTI-1 file")
    dim = struct.unpack("<8h", raw[40:56])
    if dim[0] != 3:
        raise ValueError(f"{path}: expected a 3D volume, got dim[0]={dim[0]}")
    shape = tuple(int(d) for d in dim[1:4])
    code = struct.unpack("<h", raw[70:72])[0]
    if code not in _DTYPES:
        raise ValueError(f"{path}: unsupported datatype code {code}")
    sform_code = struct.unpack("<h", raw[254:256])[0]
    if sform_code <= 0:
        raise ValueError(f"{path}: sform affine required")
    affine = np.eye(4)
    affine[:3, :] = np.array(struct.unpack("<12f", raw[280:328])).reshape(3, 4)
    offset = int(struct.unpack("<f", raw[108:112])[0])
    data = np.frombuffer(raw, dtype=_DTYPES[code], count=int(np.prod(shape)), offset=offset)
    return data.reshape(shape, order="F").copy(), affine


def write_volume(path, data: np.ndarray, affine: np.ndarray) -> None:
    path = Path(path)
    code = _CODES.get(np.dtype(data.dtype))
    if code is None:
        raise ValueError(f"unsupported dtype {data.dtype}")
    spacing = np.linalg.norm(np.asarray(affine)[:3, :3], axis=0)
    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)
    struct.pack_into("<8h", hdr, 40, 3, *data.shape, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, code)
    struct.pack_into("<h", hdr, 72, data.dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, *spacing, 0, 0, 0, 0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<f", hdr, 112, 1.0)
    struct.pack_into("<b", hdr, 123, 2)
    struct.pack_into("<h", hdr, 254, 2)
    struct.pack_into("<12f", hdr, 280, *np.asarray(affine, np.float64)[:3, :].ravel())
    hdr[344:348] = b"n+1\x00"
    payload = bytes(hdr) + b"\x00" * 4 + data.tobytes(order="F")
    if path.suffix == ".gz":
        with open(path, "wb") as fh:
            with gzip.GzipFile(filename="", fileobj=fh, mode="wb", mtime=0) as gz:
                gz.write(payload)
    else:
        path.write_bytes(payload)
