"""Strict single-file NIfTI-1 (``.nii``) reader and writer.

Supported: datatypes uint8 (2), int16 (4), int32 (8), float32 (16); either
byte order on read; no extensions, no compression. Orientation fields are
decoded but only spacing and the qform/sform translation (as the volume
origin) are used. The writer always emits little-endian with vox_offset 352.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    CorruptHeader,
    IoFailure,
    NaNInData,
    TruncatedData,
    UnsupportedDatatype,
)
from .volume import LabelMap, Volume

logger = logging.getLogger(__name__)

HEADER_SIZE = 348
DATA_OFFSET = 352
MAGIC = b"n+1\x00"

DATATYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
}

UINT8, INT16, INT32, FLOAT32 = 2, 4, 8, 16


@dataclass(frozen=True)
class NiftiHeader:
    dim: tuple[int, ...]
    datatype_code: int
    pixdim: tuple[float, ...]
    vox_offset: float
    scl_slope: float = 1.0
    scl_inter: float = 0.0
    magic: bytes = MAGIC
    bitpix: int = 0
    qform_code: int = 0
    sform_code: int = 0
    quatern: tuple[float, float, float] = (0.0, 0.0, 0.0)
    qoffset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    srow: tuple[tuple[float, ...], ...] = ((0.0,) * 4,) * 3
    xyzt_units: int = 0
    endian: str = "<"

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.dim[1:1 + self.dim[0]])

    @property
    def dtype(self) -> np.dtype:
        return DATATYPES[self.datatype_code].newbyteorder(self.endian)


def _detect_endian(buf: bytes) -> str:
    for e in ("<", ">"):
        if struct.unpack_from(e + "i", buf, 0)[0] == HEADER_SIZE:
            return e
    raise CorruptHeader("sizeof_hdr is not 348 in either byte order")


def parse_header(buf: bytes) -> NiftiHeader:
    """Decode and validate a 348-byte NIfTI-1 header."""
    buf = bytes(buf)
    if len(buf) != HEADER_SIZE:
        raise CorruptHeader(f"header must be exactly {HEADER_SIZE} bytes, got {len(buf)}")
    e = _detect_endian(buf)

    magic = buf[344:348]
    if magic != MAGIC:
        raise BadMagic(f"magic {magic!r} is not {MAGIC!r} (only single-file NIfTI-1 is supported)")

    dim = struct.unpack_from(e + "8h", buf, 40)
    datatype, bitpix = struct.unpack_from(e + "2h", buf, 70)
    pixdim = struct.unpack_from(e + "8f", buf, 76)
    vox_offset, slope, inter = struct.unpack_from(e + "3f", buf, 108)
    xyzt_units = buf[123]
    qform_code, sform_code = struct.unpack_from(e + "2h", buf, 252)
    quatern = struct.unpack_from(e + "3f", buf, 256)
    qoffset = struct.unpack_from(e + "3f", buf, 268)
    srow = tuple(struct.unpack_from(e + "4f", buf, 280 + 16 * r) for r in range(3))

    if datatype not in DATATYPES:
        raise UnsupportedDatatype(f"datatype code {datatype} (supported: {sorted(DATATYPES)})")
    if not 1 <= dim[0] <= 7:
        raise CorruptHeader(f"dim[0]={dim[0]} outside 1..7")
    if any(d < 1 for d in dim[1:1 + dim[0]]):
        raise CorruptHeader(f"non-positive extent in dim={dim}")
    if not np.isfinite(vox_offset) or vox_offset < DATA_OFFSET:
        raise CorruptHeader(f"vox_offset {vox_offset} < {DATA_OFFSET}")

    return NiftiHeader(
        dim=tuple(int(d) for d in dim),
        datatype_code=int(datatype),
        pixdim=tuple(float(p) for p in pixdim),
        vox_offset=float(vox_offset),
        scl_slope=float(slope),
        scl_inter=float(inter),
        magic=magic,
        bitpix=int(bitpix),
        qform_code=int(qform_code),
        sform_code=int(sform_code),
        quatern=tuple(float(q) for q in quatern),
        qoffset=tuple(float(q) for q in qoffset),
        srow=tuple(tuple(float(v) for v in row) for row in srow),
        xyzt_units=int(xyzt_units),
        endian=e,
    )


def build_header(shape, spacing, origin, datatype_code: int,
                 scl_slope: float = 1.0, scl_inter: float = 0.0) -> bytes:
    """Little-endian 348-byte header for a 3-D volume."""
    if datatype_code not in DATATYPES:
        raise UnsupportedDatatype(f"datatype code {datatype_code}")
    buf = bytearray(HEADER_SIZE)
    struct.pack_into("<i", buf, 0, HEADER_SIZE)
    dim = [3, *shape, 1, 1, 1, 1]
    struct.pack_into("<8h", buf, 40, *dim)
    struct.pack_into("<2h", buf, 70, datatype_code, DATATYPES[datatype_code].itemsize * 8)
    struct.pack_into("<8f", buf, 76, 1.0, *spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<3f", buf, 108, float(DATA_OFFSET), scl_slope, scl_inter)
    buf[123] = 2  # spatial units: mm
    struct.pack_into("<2h", buf, 252, 1, 0)  # qform_code scanner, no sform
    struct.pack_into("<3f", buf, 268, *origin)
    buf[344:348] = MAGIC
    return bytes(buf)


def _origin(h: NiftiHeader) -> tuple[float, float, float]:
    if h.qform_code > 0:
        origin = h.qoffset
    elif h.sform_code > 0:
        origin = tuple(row[3] for row in h.srow)
    else:
        return (0.0, 0.0, 0.0)
    if not all(np.isfinite(o) for o in origin):
        raise CorruptHeader(f"non-finite origin {origin}")
    return origin


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _decode_raw(data: bytes, path) -> tuple[NiftiHeader, np.ndarray]:
    if len(data) < HEADER_SIZE:
        raise TruncatedData(f"{path}: {len(data)} bytes, shorter than a header")
    h = parse_header(data[:HEADER_SIZE])

    shape = h.shape
    if len(shape) > 3:
        if any(s != 1 for s in shape[3:]):
            raise CorruptHeader(f"{path}: only 3-D volumes are supported, dim={h.dim}")
        shape = shape[:3]
    shape = tuple(shape) + (1,) * (3 - len(shape))

    count = int(np.prod(shape))
    start = int(h.vox_offset)
    need = count * h.dtype.itemsize
    if len(data) - start < need:
        raise TruncatedData(f"{path}: need {need} voxel bytes at offset {start}, "
                            f"have {max(0, len(data) - start)}")
    raw = np.frombuffer(data, dtype=h.dtype, count=count, offset=start)
    return h, raw.reshape(shape, order="F")


def _spacing(h: NiftiHeader, path) -> tuple[float, float, float]:
    spacing = tuple(abs(p) for p in h.pixdim[1:4])
    if not all(np.isfinite(s) and s > 0 for s in spacing):
        raise CorruptHeader(f"{path}: invalid voxel spacing {h.pixdim[1:4]}")
    return spacing


def read_volume(path) -> Volume:
    """Load a ``.nii`` file as a float64 :class:`Volume` with intensity
    scaling applied."""
    return volume_from_bytes(_read_bytes(path), path)


def volume_from_bytes(data: bytes, path="<bytes>") -> Volume:
    """Decode a complete in-memory ``.nii`` image; ``path`` only labels errors."""
    h, raw = _decode_raw(bytes(data), path)
    with np.errstate(invalid="ignore"):      # signalling NaNs are rejected just below
        vals = raw.astype(np.float64)
    # identity scaling is skipped so values such as -0.0 survive bit-exactly
    if h.scl_slope != 0 and np.isfinite(h.scl_slope) and (h.scl_slope, h.scl_inter) != (1.0, 0.0):
        vals = h.scl_slope * vals + h.scl_inter
    if not np.all(np.isfinite(vals)):
        raise NaNInData(f"{path}: non-finite voxel values (NaN/Inf)")
    return Volume(vals, _spacing(h, path), _origin(h))


def read_labels(path, num_classes: int | None = None) -> LabelMap:
    vol = read_volume(path)
    vals = vol.voxels
    if not np.array_equal(vals, np.round(vals)) or (vals.size and vals.min() < 0):
        raise CorruptHeader(f"{path}: label file contains non-integer or negative values")
    return LabelMap(vals.astype(np.int16), vol.spacing, vol.origin, num_classes)


def write_volume(v: Volume | LabelMap, datatype_code: int, path) -> None:
    """Write ``v`` as little-endian single-file NIfTI-1.

    Integer targets round to nearest and clip to the type's range (with a
    warning if anything was clipped).
    """
    if datatype_code not in DATATYPES:
        raise UnsupportedDatatype(f"datatype code {datatype_code}")
    dt = DATATYPES[datatype_code]
    vals = np.asarray(v.voxels, dtype=np.float64)
    if dt.kind in "iu":
        info = np.iinfo(dt)
        rounded = np.rint(vals)
        clipped = np.clip(rounded, info.min, info.max)
        if not np.array_equal(clipped, rounded):
            logger.warning("write_volume: %d values clipped to %s range",
                           int(np.count_nonzero(clipped != rounded)), dt.name)
        out = clipped.astype(dt)
    else:
        out = vals.astype(dt)
    header = build_header(v.shape, v.spacing, v.origin, datatype_code)
    payload = header + b"\x00" * (DATA_OFFSET - HEADER_SIZE) + \
        out.astype(dt.newbyteorder("<")).tobytes(order="F")
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def byteswap_header(buf: bytes) -> bytes:
    """Return the header with every decoded field in the opposite byte order.

    Fields this module never reads are copied unchanged.
    """
    h = parse_header(buf)
    other = ">" if h.endian == "<" else "<"
    out = bytearray(buf)
    layout = [(0, "i"), (40, "8h"), (70, "2h"), (76, "8f"), (108, "3f"),
              (252, "2h"), (256, "3f"), (268, "3f"), (280, "12f")]
    for off, fmt in layout:
        vals = struct.unpack_from(h.endian + fmt, buf, off)
        struct.pack_into(other + fmt, out, off, *vals)
    return bytes(out)


def header_of(path) -> NiftiHeader:
    try:
        with open(path, "rb") as fh:
            buf = fh.read(HEADER_SIZE)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return parse_header(buf)


__all__ = [
    "DATATYPES", "FLOAT32", "INT16", "INT32", "UINT8", "NiftiHeader",
    "build_header", "byteswap_header", "header_of", "parse_header",
    "read_labels", "read_volume", "volume_from_bytes", "write_volume",
]
