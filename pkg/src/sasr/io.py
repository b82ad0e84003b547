"""File formats: NIfTI-1 volumes, FSL-style gradient tables, checkpoint
manifests with sidecar blobs, PGM previews, JSON documents.

The NIfTI reader/writer handles the single-file ("n+1") little-endian
float32 subset and nothing else; everything it does not understand is
a FormatError, never a guess. Raw headers survive a read so unknown
fields round-trip.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .core import GradientTable, Volume4D
from .errors import DataError, FormatError

HDR_SIZE = 348
DATA_OFFSET = 352.0
DT_FLOAT32 = 16


def _pack_header(dim, pixdim) -> bytes:
    hdr = bytearray(HDR_SIZE)
    struct.pack_into("<i", hdr, 0, HDR_SIZE)
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<h", hdr, 70, DT_FLOAT32)
    struct.pack_into("<h", hdr, 72, 32)
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<f", hdr, 108, DATA_OFFSET)
    hdr[344:348] = b"n+1\x00"
    return bytes(hdr)


def write_nifti(path, data: np.ndarray, spacing=(1.0, 1.0, 1.0), header: bytes | None = None):
    """Write a 3-D or 4-D float array as single-file NIfTI-1 float32.

    An optional raw header (as returned by read_nifti) is used as the
    base; geometry fields are overwritten to match the data.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim not in (3, 4):
        raise DataError(f"can only write 3-D or 4-D data, got {data.ndim}-D")
    if len(spacing) != 3 or any(v <= 0 for v in spacing):
        raise DataError(f"bad voxel spacing {tuple(spacing)}")
    ndim = data.ndim
    shape = data.shape + (1,) * (4 - ndim)
    dim = (ndim,) + shape + (1,) * (7 - len(shape))
    pixdim = (1.0,) + tuple(float(v) for v in spacing) + (1.0, 1.0, 1.0, 1.0)
    if header is not None:
        if len(header) != HDR_SIZE:
            raise FormatError(f"template header must be {HDR_SIZE} bytes")
        hdr = bytearray(header)
        struct.pack_into("<i", hdr, 0, HDR_SIZE)
        struct.pack_into("<8h", hdr, 40, *dim)
        struct.pack_into("<h", hdr, 70, DT_FLOAT32)
        struct.pack_into("<h", hdr, 72, 32)
        struct.pack_into("<8f", hdr, 76, *pixdim)
        struct.pack_into("<f", hdr, 108, DATA_OFFSET)
        hdr[344:348] = b"n+1\x00"
        hdr = bytes(hdr)
    else:
        hdr = _pack_header(dim, pixdim)
    payload = data.astype("<f4").tobytes(order="F")
    with open(path, "wb") as fh:
        fh.write(hdr)
        fh.write(b"\x00" * (int(DATA_OFFSET) - HDR_SIZE))
        fh.write(payload)


def read_nifti(path):
    """Read a single-file NIfTI-1 volume.

    Returns (data, spacing, header) with data float64 of the stored
    dimensionality (3-D or 4-D) and header the raw 348 bytes.
    """
    raw = Path(path).read_bytes()
    if len(raw) < HDR_SIZE:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != HDR_SIZE:
        raise FormatError(
            f"{path}: sizeof_hdr {sizeof_hdr} (big-endian or not NIfTI-1)"
        )
    magic = raw[344:348]
    if magic == b"ni1\x00":
        raise FormatError(f"{path}: two-file NIfTI (hdr/img pairs unsupported)")
    if magic != b"n+1\x00":
        raise FormatError(f"{path}: bad magic {magic!r}")
    dim = struct.unpack_from("<8h", raw, 40)
    (datatype,) = struct.unpack_from("<h", raw, 70)
    if datatype != DT_FLOAT32:
        raise FormatError(f"{path}: datatype {datatype}, only float32 (16) supported")
    ndim = dim[0]
    if ndim not in (3, 4):
        raise FormatError(f"{path}: dim[0] = {ndim}, expected 3 or 4")
    shape = tuple(dim[1 : 1 + ndim])
    if any(n < 1 for n in shape):
        raise FormatError(f"{path}: non-positive dimension in {shape}")
    pixdim = struct.unpack_from("<8f", raw, 76)
    (vox_offset,) = struct.unpack_from("<f", raw, 108)
    offset = int(vox_offset)
    count = int(np.prod(shape))
    need = offset + 4 * count
    if offset < HDR_SIZE or len(raw) < need:
        raise FormatError(f"{path}: expected {need} bytes, have {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
    data = data.reshape(shape, order="F").astype(np.float64)
    spacing = tuple(float(v) for v in pixdim[1:4])
    return data, spacing, raw[:HDR_SIZE]


def read_volume(path) -> Volume4D:
    """Read a NIfTI file as a 4-D volume (3-D gets a singleton axis)."""
    data, spacing, _ = read_nifti(path)
    if data.ndim == 3:
        data = data[:, :, :, None]
    if any(v <= 0 for v in spacing):
        raise FormatError(f"{path}: non-positive pixdim {spacing}")
    return Volume4D(data, spacing)


def write_volume(path, vol: Volume4D, header: bytes | None = None):
    write_nifti(path, vol.data, vol.spacing, header=header)


def read_gradient_table(bvals_path, bvecs_path) -> GradientTable:
    """FSL-style pair: bvals one row of M values, bvecs three rows of M
    components (x, y, z). Non-zero direction vectors are renormalized to
    absorb text rounding."""
    try:
        bvals = np.loadtxt(bvals_path, dtype=np.float64, ndmin=1)
        bvecs = np.loadtxt(bvecs_path, dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"unparseable gradient table: {exc}") from None
    if bvals.ndim != 1:
        raise FormatError(f"{bvals_path}: expected a single row of b-values")
    if bvecs.shape[0] != 3:
        raise FormatError(f"{bvecs_path}: expected 3 rows, got {bvecs.shape[0]}")
    if bvecs.shape[1] != bvals.size:
        raise FormatError(
            f"{bvals.size} b-values but {bvecs.shape[1]} direction columns"
        )
    dirs = bvecs.T.copy()
    norms = np.linalg.norm(dirs, axis=1)
    dwi = bvals > 0
    if np.any(norms[dwi] == 0):
        raise DataError("zero direction vector on a b > 0 row")
    nz = norms > 0
    dirs[nz] /= norms[nz, None]
    return GradientTable(bvals, dirs)


def write_gradient_table(bvals_path, bvecs_path, table: GradientTable):
    with open(bvals_path, "w") as fh:
        fh.write(" ".join(f"{v:.17g}" for v in table.bvals) + "\n")
    with open(bvecs_path, "w") as fh:
        for row in table.dirs.T:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def save_checkpoint(path, weights: dict, meta: dict):
    """Write a JSON manifest at `path` and the arrays at `path`.blob.

    Arrays are concatenated float64 little-endian in sorted name order;
    the manifest records shapes, offsets and the blob digest, and holds
    no timestamps, so manifests of identical runs diff clean.
    """
    path = Path(path)
    blob_path = path.with_name(path.name + ".blob")
    names = sorted(weights)
    entries = []
    chunks = []
    offset = 0
    for name in names:
        arr = np.asarray(weights[name], dtype=np.float64)
        raw = arr.astype("<f8").tobytes()  # C index order regardless of layout
        entries.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "size": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "format": "coeff-field-checkpoint",
        "arrays": entries,
        "blob": blob_path.name,
        "sha256": hashlib.sha256(blob).hexdigest(),
        "meta": meta,
    }
    blob_path.write_bytes(blob)
    write_json(path, manifest)


def load_checkpoint(path):
    """Returns (weights, meta); the blob digest is verified first."""
    path = Path(path)
    manifest = read_json(path)
    for key in ("format", "arrays", "blob", "sha256", "meta"):
        if key not in manifest:
            raise FormatError(f"{path}: manifest missing '{key}'")
    if manifest["format"] != "coeff-field-checkpoint":
        raise FormatError(f"{path}: unknown checkpoint format {manifest['format']!r}")
    blob_path = path.with_name(manifest["blob"])
    if not blob_path.exists():
        raise DataError(f"{path}: missing blob {blob_path.name}")
    blob = blob_path.read_bytes()
    digest = hashlib.sha256(blob).hexdigest()
    if digest != manifest["sha256"]:
        raise FormatError(
            f"{blob_path.name}: digest mismatch ({digest[:12]} != "
            f"{manifest['sha256'][:12]})"
        )
    weights = {}
    for entry in manifest["arrays"]:
        lo, hi = entry["offset"], entry["offset"] + entry["size"]
        if hi > len(blob):
            raise FormatError(f"{blob_path.name}: array '{entry['name']}' out of range")
        arr = np.frombuffer(blob[lo:hi], dtype="<f8")
        weights[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return weights, manifest["meta"]


def write_pgm(path, img: np.ndarray, lo: float | None = None, hi: float | None = None):
    """8-bit binary PGM (P5) preview, linearly mapped from [lo, hi]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise DataError(f"PGM wants a 2-D image, got {img.ndim}-D")
    lo = float(img.min()) if lo is None else float(lo)
    hi = float(img.max()) if hi is None else float(hi)
    if hi <= lo:
        scaled = np.zeros_like(img)
    else:
        scaled = (np.clip(img, lo, hi) - lo) / (hi - lo)
    pix = np.round(scaled * 255.0).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None
