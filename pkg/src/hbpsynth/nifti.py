"""NIfTI-1 single-file (.nii / .nii.gz) reading and writing.

Only the 3D spatial subset of the format is supported: no NIfTI-2, no 4D
time series, no extensions. The affine is taken from the sform when present,
falling back to the qform and finally to a diagonal pixdim affine.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import NiftiError

HEADER_SIZE = 348
MAGIC = b"n+1\x00"

# NIfTI datatype code -> numpy dtype (without byte order)
_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}
_DTYPE_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


def _read_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _quaternion_affine(hdr: dict) -> np.ndarray:
    b, c, d = hdr["quatern_b"], hdr["quatern_c"], hdr["quatern_d"]
    a2 = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(max(a2, 0.0))
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )
    qfac = -1.0 if hdr["pixdim"][0] < 0 else 1.0
    scale = np.array([hdr["pixdim"][1], hdr["pixdim"][2], qfac * hdr["pixdim"][3]])
    affine = np.eye(4)
    affine[:3, :3] = rot * scale[np.newaxis, :]
    affine[:3, 3] = (hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"])
    return affine


def parse_header(raw: bytes) -> dict:
    """Decode the 348-byte header into a dict; raises NiftiError on damage."""
    if len(raw) < HEADER_SIZE:
        raise NiftiError("file shorter than the NIfTI-1 header", field="sizeof_hdr")
    for order in ("<", ">"):
        (sizeof_hdr,) = struct.unpack_from(order + "i", raw, 0)
        if sizeof_hdr == HEADER_SIZE:
            break
    else:
        raise NiftiError("sizeof_hdr is not 348 in either byte order", field="sizeof_hdr")

    def u(fmt: str, offset: int):
        vals = struct.unpack_from(order + fmt, raw, offset)
        return vals[0] if len(vals) == 1 else vals

    hdr = {
        "byteorder": order,
        "dim": u("8h", 40),
        "datatype": u("h", 70),
        "bitpix": u("h", 72),
        "pixdim": u("8f", 76),
        "vox_offset": u("f", 108),
        "scl_slope": u("f", 112),
        "scl_inter": u("f", 116),
        "qform_code": u("h", 252),
        "sform_code": u("h", 254),
        "quatern_b": u("f", 256),
        "quatern_c": u("f", 260),
        "quatern_d": u("f", 264),
        "qoffset_x": u("f", 268),
        "qoffset_y": u("f", 272),
        "qoffset_z": u("f", 276),
        "srow_x": u("4f", 280),
        "srow_y": u("4f", 296),
        "srow_z": u("4f", 312),
        "magic": raw[344:348],
    }
    if hdr["magic"] not in (b"n+1\x00", b"ni1\x00"):
        raise NiftiError("bad magic string", field="magic")
    ndim = hdr["dim"][0]
    if ndim < 1 or ndim > 7:
        raise NiftiError(f"dim[0]={ndim} out of range", field="dim")
    if ndim > 3 and any(hdr["dim"][k] > 1 for k in range(4, ndim + 1)):
        raise NiftiError("only 3D spatial volumes are supported", field="dim")
    if hdr["datatype"] not in _DTYPES:
        raise NiftiError(f"unsupported datatype code {hdr['datatype']}", field="datatype")
    return hdr


def header_affine(hdr: dict) -> np.ndarray:
    if hdr["sform_code"] > 0:
        return np.array(
            [hdr["srow_x"], hdr["srow_y"], hdr["srow_z"], (0.0, 0.0, 0.0, 1.0)],
            dtype=np.float64,
        )
    if hdr["qform_code"] > 0:
        return _quaternion_affine(hdr)
    affine = np.eye(4)
    for k in range(3):
        affine[k, k] = hdr["pixdim"][k + 1] or 1.0
    return affine


def read(path) -> tuple[np.ndarray, tuple[float, float, float], np.ndarray]:
    """Read a .nii/.nii.gz file; returns (data, spacing, affine).

    Data comes back in the file's native voxel order (Fortran layout of the
    on-disk stream) with scl_slope/scl_inter applied when non-trivial.
    """
    path = Path(path)
    if not path.exists():
        raise NiftiError(f"no such file: {path}", field="path")
    raw = _read_bytes(path)
    hdr = parse_header(raw)

    shape = tuple(int(n) for n in hdr["dim"][1 : max(hdr["dim"][0], 3) + 1][:3])
    shape = tuple(max(n, 1) for n in shape)
    dtype = np.dtype(_DTYPES[hdr["datatype"]]).newbyteorder(hdr["byteorder"])
    offset = int(hdr["vox_offset"])
    if offset < HEADER_SIZE:
        raise NiftiError(f"vox_offset {offset} below header size", field="vox_offset")
    count = int(np.prod(shape))
    end = offset + count * dtype.itemsize
    if len(raw) < end:
        raise NiftiError("data block truncated", field="vox_offset")
    data = np.frombuffer(raw[offset:end], dtype=dtype).reshape(shape, order="F")
    data = data.astype(data.dtype.newbyteorder("="))

    slope, inter = hdr["scl_slope"], hdr["scl_inter"]
    if not np.isfinite(slope):
        slope = 0.0
    if not np.isfinite(inter):
        inter = 0.0
    if slope not in (0.0, 1.0) or inter != 0.0:
        data = data.astype(np.float64) * (slope or 1.0) + inter

    spacing = tuple(float(abs(hdr["pixdim"][k + 1])) or 1.0 for k in range(3))
    return data, spacing, header_affine(hdr)


def write(path, data: np.ndarray, spacing, affine: np.ndarray) -> None:
    """Write a 3D array as a single-file NIfTI-1 volume (sform only).

    Float affine/spacing fields are stored at the format's float32 precision.
    Gzip members are written with mtime=0 so identical inputs yield
    byte-identical files.
    """
    path = Path(path)
    data = np.asarray(data)
    if data.ndim != 3:
        raise NiftiError(f"expected 3D data, got ndim={data.ndim}", field="dim")
    code = _DTYPE_CODES.get(data.dtype.newbyteorder("="))
    if code is None:
        raise NiftiError(f"cannot store dtype {data.dtype}", field="datatype")

    hdr = bytearray(HEADER_SIZE)
    pk = lambda fmt, off, *vals: struct.pack_into("<" + fmt, hdr, off, *vals)
    pk("i", 0, HEADER_SIZE)
    pk("c", 38, b"r")
    pk("8h", 40, 3, *data.shape, 1, 1, 1, 1)
    pk("h", 70, code)
    pk("h", 72, data.dtype.itemsize * 8)
    pk("8f", 76, 1.0, *(float(s) for s in spacing), 1.0, 1.0, 1.0, 1.0)
    pk("f", 108, float(HEADER_SIZE + 4))
    pk("f", 112, 1.0)  # scl_slope
    pk("f", 116, 0.0)  # scl_inter
    pk("h", 252, 0)  # qform_code
    pk("h", 254, 1)  # sform_code
    aff = np.asarray(affine, dtype=np.float64)
    pk("4f", 280, *aff[0])
    pk("4f", 296, *aff[1])
    pk("4f", 312, *aff[2])
    hdr[344:348] = MAGIC

    body = bytes(hdr) + b"\x00" * 4 + np.asarray(data, order="F").tobytes(order="F")
    if str(path).endswith(".gz"):
        buf = gzip.compress(body, mtime=0)
        path.write_bytes(buf)
    else:
        path.write_bytes(body)
