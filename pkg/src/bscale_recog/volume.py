"""Volume containers and MetaImage (.mhd + .raw) I/O.

Arrays are indexed ``data[i, j, k]`` with ``i`` along x.  On disk the payload
is x-fastest, which is Fortran order for an ``(nx, ny, nz)`` array.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

DEFAULT_SPACING = (1.17, 1.17, 1.17)

_MET_TYPES = {
    "MET_UCHAR": np.dtype("<u1"),
    "MET_CHAR": np.dtype("<i1"),
    "MET_USHORT": np.dtype("<u2"),
    "MET_SHORT": np.dtype("<i2"),
    "MET_UINT": np.dtype("<u4"),
    "MET_INT": np.dtype("<i4"),
    "MET_FLOAT": np.dtype("<f4"),
    "MET_DOUBLE": np.dtype("<f8"),
}
_DTYPE_TO_MET = {
    np.dtype("bool"): "MET_UCHAR",
    np.dtype("uint8"): "MET_UCHAR",
    np.dtype("uint16"): "MET_USHORT",
    np.dtype("float32"): "MET_FLOAT",
}
# keys written by save_volume, in order; anything else lands in Volume.meta
_STANDARD_KEYS = (
    "ObjectType",
    "NDims",
    "BinaryData",
    "BinaryDataByteOrderMSB",
    "CompressedData",
    "Offset",
    "ElementSpacing",
    "DimSize",
    "ElementType",
    "ElementDataFile",
)


class VolumeFormatError(ValueError):
    """Header or payload of a volume file is malformed."""


def _check_spacing(spacing: Sequence[float]) -> tuple[float, float, float]:
    sp = tuple(float(v) for v in spacing)
    if len(sp) != 3:
        raise ValueError(f"spacing must have 3 components, got {len(sp)}")
    if not all(np.isfinite(v) and v > 0 for v in sp):
        raise ValueError(f"spacing components must be positive, got {sp}")
    return sp  # type: ignore[return-value]


@dataclass(frozen=True)
class Volume:
    """A 3D array with physical voxel spacing (mm/voxel).  Read-only."""

    data: np.ndarray
    spacing: tuple[float, float, float] = DEFAULT_SPACING
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"volume data must be a non-empty 3D array, got shape {arr.shape}")
        if arr is self.data and arr.flags.writeable:
            arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.data.shape)  # type: ignore[return-value]

    @property
    def size(self) -> int:
        return int(self.data.size)

    def flat(self) -> np.ndarray:
        """Payload in x-fastest order."""
        return self.data.ravel(order="F")


@dataclass(frozen=True)
class Scene(Volume):
    """Scalar intensity volume with non-negative values."""

    def __post_init__(self):
        super().__post_init__()
        if self.data.dtype == bool:
            raise TypeError("Scene data must be numeric; use BinaryMask for boolean volumes")
        if self.data.size and np.min(self.data) < 0:
            raise ValueError("scene intensities must be non-negative")


@dataclass(frozen=True)
class BinaryMask(Volume):
    def __post_init__(self):
        object.__setattr__(self, "data", np.asarray(self.data).astype(bool, copy=False))
        super().__post_init__()

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.data))


def from_flat(flat: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Reshape an x-fastest flat payload into an ``(nx, ny, nz)`` array."""
    dims = tuple(int(d) for d in dims)
    if flat.size != int(np.prod(dims)):
        raise ValueError(f"payload has {flat.size} elements, dims {dims} need {int(np.prod(dims))}")
    return flat.reshape(dims, order="F")


def physical_point(index: Sequence[int], spacing: Sequence[float]) -> np.ndarray:
    """Voxel-center coordinates in mm; index (0, 0, 0) sits at the origin."""
    return np.asarray(index, dtype=float) * np.asarray(spacing, dtype=float)


def voxel_coordinates(mask: np.ndarray, spacing: Sequence[float]) -> np.ndarray:
    """(N, 3) physical coordinates of the true voxels of a boolean array."""
    idx = np.argwhere(mask)
    return idx.astype(float) * np.asarray(spacing, dtype=float)


# ---------------------------------------------------------------------------
# MetaImage I/O


def _parse_header(text: str, path: Path) -> dict[str, str]:
    header: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if "=" not in line:
            raise VolumeFormatError(f"{path}:{lineno}: expected 'Key = Value', got {line!r}")
        key, _, value = line.partition("=")
        header[key.strip()] = value.strip()
    return header


def _ints(header: dict, key: str, path: Path) -> list[int]:
    try:
        vals = [int(v) for v in header[key].split()]
    except KeyError:
        raise VolumeFormatError(f"{path}: missing header field {key}") from None
    except ValueError:
        raise VolumeFormatError(f"{path}: cannot parse {key} = {header[key]!r}") from None
    return vals


def read_header(path: str | os.PathLike) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".mha":
        # header ends at the ElementDataFile line
        marker = raw.find(b"ElementDataFile")
        if marker < 0:
            raise VolumeFormatError(f"{path}: missing header field ElementDataFile")
        end = raw.find(b"\n", marker)
        raw = raw[: end + 1 if end >= 0 else len(raw)]
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError:
        raise VolumeFormatError(f"{path}: header is not ASCII text") from None
    return _parse_header(text, path)


def _read_array(path: Path) -> tuple[np.ndarray, tuple[float, float, float], dict]:
    header = read_header(path)
    ndims = _ints(header, "NDims", path)
    if ndims != [3]:
        raise VolumeFormatError(f"{path}: only NDims = 3 is supported, got {header['NDims']}")
    dims = _ints(header, "DimSize", path)
    if len(dims) != 3 or min(dims) < 1:
        raise VolumeFormatError(f"{path}: bad DimSize {header['DimSize']!r}")
    try:
        spacing = tuple(float(v) for v in header.get("ElementSpacing", "1 1 1").split())
        spacing = _check_spacing(spacing)
    except ValueError as exc:
        raise VolumeFormatError(f"{path}: bad ElementSpacing: {exc}") from None
    etype = header.get("ElementType")
    if etype not in _MET_TYPES:
        raise VolumeFormatError(f"{path}: unsupported ElementType {etype!r}")
    if header.get("CompressedData", "False").lower() == "true":
        raise VolumeFormatError(f"{path}: compressed payloads are not supported")
    msb = header.get("BinaryDataByteOrderMSB", header.get("ElementByteOrderMSB", "False"))
    dtype = _MET_TYPES[etype]
    if msb.lower() == "true":
        dtype = dtype.newbyteorder(">")
    datafile = header.get("ElementDataFile")
    if datafile is None:
        raise VolumeFormatError(f"{path}: missing header field ElementDataFile")
    n = int(np.prod(dims))
    if datafile == "LOCAL":
        blob = path.read_bytes()
        payload = blob[blob.find(b"\n", blob.find(b"ElementDataFile")) + 1 :]
    else:
        raw_path = path.parent / datafile
        if not raw_path.exists():
            raise FileNotFoundError(raw_path)
        payload = raw_path.read_bytes()
    if len(payload) != n * dtype.itemsize:
        raise VolumeFormatError(
            f"{path}: length mismatch, header needs {n} elements "
            f"({n * dtype.itemsize} bytes) but payload has {len(payload)} bytes"
        )
    flat = np.frombuffer(payload, dtype=dtype).astype(dtype.newbyteorder("="), copy=False)
    meta = {k: v for k, v in header.items() if k not in _STANDARD_KEYS}
    return from_flat(flat, dims), spacing, meta


def load_volume(path: str | os.PathLike) -> Scene:
    """Load an intensity scene from a MetaImage header (.mhd or .mha)."""
    data, spacing, meta = _read_array(Path(path))
    return Scene(data, spacing, meta)


def load_mask(path: str | os.PathLike) -> BinaryMask:
    data, spacing, meta = _read_array(Path(path))
    return BinaryMask(data != 0, spacing, meta)


def save_volume(volume: Volume, path: str | os.PathLike) -> None:
    """Write ``path`` (.mhd header) plus a sibling ``.raw`` payload.

    Element type follows the array dtype: uint16 scenes, uint8 masks, float32
    weighted-scale scenes.  Extra ``volume.meta`` entries are appended to the
    header verbatim.
    """
    path = Path(path)
    arr = volume.data
    if arr.dtype not in _DTYPE_TO_MET:
        raise TypeError(f"no on-disk element type for dtype {arr.dtype}; cast to uint16, uint8 or float32")
    etype = _DTYPE_TO_MET[arr.dtype]
    if arr.dtype == bool:
        arr = arr.astype(np.uint8)
    raw_path = path.with_suffix(".raw")
    lines = [
        "ObjectType = Image",
        "NDims = 3",
        "BinaryData = True",
        "BinaryDataByteOrderMSB = False",
        "CompressedData = False",
        "Offset = 0 0 0",
        "ElementSpacing = " + " ".join(repr(float(v)) for v in volume.spacing),
        "DimSize = " + " ".join(str(d) for d in arr.shape),
    ]
    lines += [f"{k} = {v}" for k, v in volume.meta.items()]
    lines += [f"ElementType = {etype}", f"ElementDataFile = {raw_path.name}"]
    payload = arr.ravel(order="F").astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(raw_path, "wb") as fh:
        fh.write(payload)
