"""Dense 3D scalar volumes: construction, file I/O, preprocessing, lattice rotations.

A Volume is an immutable float32 grid indexed ``data[x, y, z]``.  The linear
order of a volume (for raw buffers and flat-array interop) is x-fastest:
``flat[x + nx*(y + ny*z)] == data[x, y, z]``, i.e. Fortran ravel order of the
(nx, ny, nz) array.
"""

from __future__ import annotations

import ast
import json
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateRangeWarning,
    IoFailure,
    NonFinite,
    ShapeMismatch,
    UnsupportedDtype,
)

_NPY_MAGIC = b"\x93NUMPY"

# fg/bg adjacency must be a complementary pair for digital topology to work
_VALID_PAIRS = {(26, 6), (6, 26)}


@dataclass(frozen=True)
class Volume:
    """Immutable 3D scalar field, float32, indexed [x, y, z]."""

    data: np.ndarray
    voxel_size: tuple[float, float, float] | None = None
    flags: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ShapeMismatch(f"volume must be 3-D, got ndim={arr.ndim}")
        if not np.all(np.isfinite(arr)):
            raise NonFinite("volume contains NaN or Inf")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def ravel(self) -> np.ndarray:
        """Flat copy in the documented x-fastest linear order."""
        return self.data.ravel(order="F").copy()

    @classmethod
    def from_flat(cls, flat, shape, **kw) -> "Volume":
        flat = np.asarray(flat, dtype=np.float32)
        n = int(np.prod(shape))
        if flat.size != n:
            raise ShapeMismatch(f"{flat.size} values for shape {tuple(shape)}")
        return cls(flat.reshape(shape, order="F"), **kw)

    def binarize(self, threshold: float = 0.5, fg_connectivity: int = 26) -> "BinaryVolume":
        return BinaryVolume(self.data >= threshold, fg_connectivity=fg_connectivity)

    def with_data(self, data) -> "Volume":
        return Volume(data, voxel_size=self.voxel_size, flags=self.flags)


@dataclass(frozen=True)
class BinaryVolume:
    """Thresholded volume plus the (foreground, background) adjacency pairing."""

    bits: np.ndarray
    fg_connectivity: int = 26
    bg_connectivity: int | None = None

    def __post_init__(self):
        bits = np.ascontiguousarray(np.asarray(self.bits, dtype=bool))
        if bits.ndim != 3:
            raise ShapeMismatch(f"binary volume must be 3-D, got ndim={bits.ndim}")
        bg = self.bg_connectivity
        if bg is None:
            bg = 6 if self.fg_connectivity == 26 else 26
        if (self.fg_connectivity, bg) not in _VALID_PAIRS:
            raise ValueError(
                f"invalid connectivity pairing ({self.fg_connectivity}, {bg}); "
                "must be (26,6) or (6,26)"
            )
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "bg_connectivity", bg)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.bits.shape

    def to_volume(self) -> Volume:
        return Volume(self.bits.astype(np.float32))


def _check_supported_dtype(dt: np.dtype) -> np.dtype:
    dt = np.dtype(dt)
    if dt.kind not in ("f", "u"):
        raise UnsupportedDtype(f"dtype {dt} not supported (need float or unsigned int)")
    return dt


def _parse_npy_header(fh):
    magic = fh.read(6)
    if magic != _NPY_MAGIC:
        raise IoFailure("not an NPY file (bad magic)")
    major, minor = fh.read(2)
    if major == 1:
        (hlen,) = struct.unpack("<H", fh.read(2))
    elif major == 2:
        (hlen,) = struct.unpack("<I", fh.read(4))
    else:
        raise IoFailure(f"unsupported NPY version {major}.{minor}")
    header = fh.read(hlen).decode("latin1")
    try:
        meta = ast.literal_eval(header)
        descr, fortran, shape = meta["descr"], meta["fortran_order"], meta["shape"]
    except Exception as exc:
        raise IoFailure(f"malformed NPY header: {exc}") from exc
    return np.dtype(descr), bool(fortran), tuple(int(s) for s in shape)


def _write_npy(path, arr: np.ndarray):
    """NPY v1.0 writer; fortran_order is always false on disk."""
    arr = np.ascontiguousarray(arr)
    descr = arr.dtype.str  # e.g. '<f4'
    header = "{'descr': %r, 'fortran_order': False, 'shape': %r, }" % (descr, arr.shape)
    # pad so that magic+version+len+header is a multiple of 64, newline-terminated
    pad = 64 - (len(_NPY_MAGIC) + 2 + 2 + len(header) + 1) % 64
    header = header + " " * pad + "\n"
    try:
        with open(path, "wb") as fh:
            fh.write(_NPY_MAGIC)
            fh.write(bytes([1, 0]))
            fh.write(struct.pack("<H", len(header)))
            fh.write(header.encode("latin1"))
            fh.write(arr.tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_volume(path, format: str = "npy") -> Volume:
    """Read a Volume from an NPY file or a raw+json little-endian f32 buffer.

    Unsigned-integer payloads are rescaled to [0,1] by their dtype max so the
    absolute intensity scale is preserved across files; float payloads are
    taken verbatim and validated finite.
    """
    if format == "npy":
        try:
            fh = open(path, "rb")
        except OSError as exc:
            raise IoFailure(f"cannot open {path}: {exc}") from exc
        with fh:
            dt, fortran, shape = _parse_npy_header(fh)
            dt = _check_supported_dtype(dt)
            if len(shape) != 3:
                raise ShapeMismatch(f"need 3 dimensions, file has shape {shape}")
            payload = fh.read()
        n = int(np.prod(shape))
        if len(payload) < n * dt.itemsize:
            raise ShapeMismatch(
                f"file holds {len(payload)} bytes, header shape {shape} needs {n * dt.itemsize}"
            )
        arr = np.frombuffer(payload[: n * dt.itemsize], dtype=dt)
        if dt.byteorder == ">":
            arr = arr.astype(dt.newbyteorder("<"))
        arr = arr.reshape(shape, order="F" if fortran else "C")
        if dt.kind == "u":
            arr = arr.astype(np.float64) / np.iinfo(dt).max
        return Volume(arr)
    if format == "raw+json":
        side = str(path) + ".json"
        try:
            with open(side) as fh:
                meta = json.load(fh)
            raw = np.fromfile(path, dtype="<f4")
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc
        shape = tuple(int(s) for s in meta["shape"])
        if len(shape) != 3:
            raise ShapeMismatch(f"sidecar declares {len(shape)} dimensions")
        if meta.get("dtype", "f32") != "f32":
            raise UnsupportedDtype(f"raw dtype {meta.get('dtype')!r} not supported")
        if raw.size != int(np.prod(shape)):
            raise ShapeMismatch(
                f"raw file holds {raw.size} values, sidecar shape {shape} "
                f"needs {int(np.prod(shape))}"
            )
        return Volume.from_flat(raw, shape)
    raise ValueError(f"unknown format {format!r}")


def write_volume(v: Volume, path, format: str = "npy") -> None:
    """Write a Volume; read_volume(write_volume(v)) is bit-exact for float32."""
    if format == "npy":
        _write_npy(path, v.data)
    elif format == "raw+json":
        try:
            v.ravel().astype("<f4").tofile(path)
            with open(str(path) + ".json", "w") as fh:
                json.dump(
                    {"shape": list(v.shape), "dtype": "f32", "order": "x-fastest"}, fh
                )
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc
    else:
        raise ValueError(f"unknown format {format!r}")


def minmax_normalize(v: Volume) -> Volume:
    """Min-max scale to [0,1]; constant volumes come back as zeros + flag."""
    data = v.data.astype(np.float64)
    lo, hi = float(data.min()), float(data.max())
    if hi == lo:
        warnings.warn("constant volume normalized to zeros", DegenerateRangeWarning)
        return Volume(
            np.zeros(v.shape, np.float32),
            voxel_size=v.voxel_size,
            flags=v.flags | {"degenerate_range"},
        )
    return Volume((data - lo) / (hi - lo), voxel_size=v.voxel_size, flags=v.flags)


def _median_truncated(data: np.ndarray, radius: int) -> np.ndarray:
    """Cubic median of side 2r+1 with windows truncated to in-bounds voxels."""
    w = 2 * radius + 1
    offs = [
        (dx, dy, dz)
        for dz in range(-radius, radius + 1)
        for dy in range(-radius, radius + 1)
        for dx in range(-radius, radius + 1)
    ]
    stack = np.full((len(offs),) + data.shape, np.nan, dtype=data.dtype)
    for i, off in enumerate(offs):
        dst, src = _shift_slices(data.shape, off)
        stack[i][dst] = data[src]
    return np.nanmedian(stack, axis=0)


def _shift_slices(shape, off):
    """Slice pairs such that dst_view[v] = src_view maps v -> v + off."""
    dst, src = [], []
    for n, d in zip(shape, off):
        dst.append(slice(max(0, -d), n - max(0, d)))
        src.append(slice(max(0, d), n - max(0, -d)))
    return tuple(dst), tuple(src)


def preprocess(v: Volume, clip_fraction: float = 0.0001, median_radius: int = 0) -> Volume:
    """Clip intensity tails at the given quantile, median-filter, min-max scale.

    clip_fraction is per-volume: values below the clip_fraction quantile and
    above the (1 - clip_fraction) quantile are clamped to those quantiles.
    median_radius = 0 disables filtering.
    """
    if not 0 <= clip_fraction < 0.5:
        raise ValueError(f"clip_fraction must be in [0, 0.5), got {clip_fraction}")
    if median_radius < 0:
        raise ValueError("median_radius must be >= 0")
    data = v.data.astype(np.float64)
    if clip_fraction > 0:
        lo = np.quantile(data, clip_fraction)
        hi = np.quantile(data, 1.0 - clip_fraction)
        data = np.clip(data, lo, hi)
    if median_radius > 0:
        data = _median_truncated(data, median_radius).astype(np.float64)
    lo, hi = float(data.min()), float(data.max())
    if hi == lo:
        warnings.warn("constant volume normalized to zeros", DegenerateRangeWarning)
        return Volume(
            np.zeros(v.shape, np.float32),
            voxel_size=v.voxel_size,
            flags=frozenset({"degenerate_range"}),
        )
    return Volume((data - lo) / (hi - lo), voxel_size=v.voxel_size)


_ROT_AXES = {"x": (1, 2), "y": (2, 0), "z": (0, 1)}


def rotate90(v: Volume, axis: str, quarter_turns: int) -> Volume:
    """Exact lattice rotation about an axis; four quarter turns is the identity."""
    if axis not in _ROT_AXES:
        raise ValueError(f"axis must be one of x/y/z, got {axis!r}")
    out = np.rot90(v.data, k=quarter_turns % 4, axes=_ROT_AXES[axis])
    return Volume(out, voxel_size=v.voxel_size, flags=v.flags)


def flip(v: Volume, axis: str) -> Volume:
    """Mirror along one axis (exact index permutation)."""
    ax = "xyz".index(axis)
    return Volume(np.flip(v.data, axis=ax), voxel_size=v.voxel_size, flags=v.flags)
