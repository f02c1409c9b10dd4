"""Volume file formats.

CVOL is the package's native format: a UTF-8 header of ``key = value``
lines next to a raw little-endian voxel file in x-fastest order.  A
minimal reader for gzipped single-file NIfTI-1 volumes is provided for
importing externally produced label maps.
"""

from __future__ import annotations

import gzip
import os
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .volume import LABEL_NAMES, BinaryMask, LabelVolume

_CVOL_DTYPES = {"u8": np.uint8}


def write_cvol(vol: LabelVolume | BinaryMask, header_path: str | os.PathLike) -> Path:
    """Write a volume as a CVOL header + sibling .raw file.

    Masks are stored as u8 with values 0/1.
    """
    header_path = Path(header_path)
    if header_path.suffix != ".cvol":
        header_path = header_path.with_suffix(".cvol")
    raw_path = header_path.with_suffix(".raw")
    if isinstance(vol, BinaryMask):
        arr = vol.bits.astype(np.uint8)
        kind = "mask"
    else:
        arr = vol.labels
        kind = "labels"
    lines = [
        f"dims = {vol.dims[0]} {vol.dims[1]} {vol.dims[2]}",
        f"spacing = {vol.spacing[0]!r} {vol.spacing[1]!r} {vol.spacing[2]!r}",
        "dtype = u8",
        "order = xyz",
        f"kind = {kind}",
        f"data = {raw_path.name}",
        "labelmap = " + ",".join(f"{k}:{v}" for k, v in LABEL_NAMES.items()),
    ]
    header_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    raw_path.write_bytes(arr.ravel(order="F").tobytes())
    return header_path


def _parse_header(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"bad CVOL header line: {line!r}")
        k, _, v = line.partition("=")
        out[k.strip()] = v.strip()
    return out


def read_cvol(header_path: str | os.PathLike) -> LabelVolume | BinaryMask:
    """Read a CVOL volume; returns a BinaryMask when kind=mask."""
    header_path = Path(header_path)
    hdr = _parse_header(header_path.read_text(encoding="utf-8"))
    for key in ("dims", "spacing", "dtype", "order"):
        if key not in hdr:
            raise FormatError(f"CVOL header missing key {key!r}")
    if hdr["order"] != "xyz":
        raise FormatError(f"unsupported voxel order {hdr['order']!r}")
    if hdr["dtype"] not in _CVOL_DTYPES:
        raise FormatError(f"unsupported dtype {hdr['dtype']!r}")
    dims = tuple(int(t) for t in hdr["dims"].split())
    spacing = tuple(float(t) for t in hdr["spacing"].split())
    raw_path = header_path.parent / hdr.get("data", header_path.with_suffix(".raw").name)
    buf = np.frombuffer(raw_path.read_bytes(), dtype=_CVOL_DTYPES[hdr["dtype"]])
    n = dims[0] * dims[1] * dims[2]
    if buf.size != n:
        raise FormatError(f"raw file has {buf.size} voxels, header promises {n}")
    arr = buf.reshape(dims, order="F")
    if hdr.get("kind") == "mask":
        return BinaryMask(dims, spacing, arr != 0)
    return LabelVolume(dims, spacing, arr)


# --- NIfTI-1 ----------------------------------------------------------------

_NIFTI_MAGIC = b"n+1\x00"
_NIFTI_DTYPES = {2: np.uint8, 4: np.int16, 512: np.uint16, 8: np.int32}


def read_nifti_labels(path: str | os.PathLike) -> LabelVolume:
    """Read a (optionally gzipped) single-file NIfTI-1 volume as labels.

    Only the fields needed for a label map are honored: dim, pixdim,
    datatype, and vox_offset.  Orientation is taken as stored (x-fastest).
    Values must fit the 0..7 label range.
    """
    path = Path(path)
    opener = gzip.open if path.name.endswith(".gz") else open
    with opener(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 352:
        raise FormatError("file too short for a NIfTI-1 header")
    sizeof_hdr = struct.unpack_from("<i", blob, 0)[0]
    endian = "<"
    if sizeof_hdr != 348:
        if struct.unpack_from(">i", blob, 0)[0] == 348:
            endian = ">"
        else:
            raise FormatError("not a NIfTI-1 file (sizeof_hdr != 348)")
    if blob[344:348] != _NIFTI_MAGIC:
        raise FormatError("not a single-file NIfTI-1 volume (magic != 'n+1')")
    dim = struct.unpack_from(endian + "8h", blob, 40)
    if not (1 <= dim[0] <= 7):
        raise FormatError(f"bad ndim {dim[0]}")
    if dim[0] > 3 and any(d > 1 for d in dim[4 : dim[0] + 1]):
        raise FormatError("only 3D volumes are supported")
    nx, ny, nz = (max(1, dim[i]) for i in (1, 2, 3))
    datatype = struct.unpack_from(endian + "h", blob, 70)[0]
    if datatype not in _NIFTI_DTYPES:
        raise FormatError(f"unsupported NIfTI datatype {datatype}")
    pixdim = struct.unpack_from(endian + "8f", blob, 76)
    vox_offset = int(struct.unpack_from(endian + "f", blob, 108)[0])
    np_dtype = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder(endian)
    n = nx * ny * nz
    data = np.frombuffer(blob, dtype=np_dtype, count=n, offset=vox_offset)
    if data.min(initial=0) < 0 or data.max(initial=0) > 7:
        raise FormatError("NIfTI label values outside 0..7")
    arr = data.astype(np.uint8).reshape((nx, ny, nz), order="F")
    spacing = tuple(float(abs(pixdim[i])) or 1.0 for i in (1, 2, 3))
    return LabelVolume((nx, ny, nz), spacing, arr)
