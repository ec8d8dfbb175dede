"""Dense 3D volumes, window geometry and object masks.

Arrays are indexed ``[x, y, z]``.  On disk the same data is laid out with z
slowest and x fastest (little-endian), next to a JSON sidecar describing it.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

DEFAULT_VOXEL_SIZE = (3.6, 3.6, 40.0)

LABEL_DTYPES = {1: "<u1", 2: "<u2", 4: "<u4", 8: "<u8"}
RAW_DTYPES = {1: "<u1", 2: "<u2", 4: "<f4", 8: "<f8"}


class VolumeError(ValueError):
    pass


def as_shape3(shape: Iterable[int]) -> tuple[int, int, int]:
    s = tuple(int(v) for v in shape)
    if len(s) != 3 or min(s) < 1:
        raise VolumeError(f"shape must be three positive ints, got {shape!r}")
    return s


def odd_shape(shape: Iterable[int]) -> tuple[int, int, int]:
    """Map even window sizes to the next smaller odd size (46 -> 45)."""
    return tuple(v if v % 2 else v - 1 for v in as_shape3(shape))


def radius(shape: Iterable[int]) -> tuple[int, int, int]:
    return tuple(v // 2 for v in as_shape3(shape))


@dataclass(frozen=True)
class Box3:
    """Axis-aligned box, ``lo`` inclusive and ``hi`` exclusive."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]

    def __post_init__(self):
        lo = tuple(int(v) for v in self.lo)
        hi = tuple(int(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3 or any(a > b for a, b in zip(lo, hi)):
            raise VolumeError(f"invalid box {lo}..{hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def around(cls, center, shape) -> "Box3":
        r = radius(shape)
        s = as_shape3(shape)
        lo = tuple(int(c) - ri for c, ri in zip(center, r))
        return cls(lo, tuple(a + si for a, si in zip(lo, s)))

    @classmethod
    def full(cls, shape) -> "Box3":
        return cls((0, 0, 0), as_shape3(shape))

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(b - a for a, b in zip(self.lo, self.hi))

    @property
    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(a, b) for a, b in zip(self.lo, self.hi))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def is_empty(self) -> bool:
        return self.size == 0

    def intersect(self, other: "Box3") -> "Box3":
        lo = tuple(max(a, b) for a, b in zip(self.lo, other.lo))
        hi = tuple(min(a, b) for a, b in zip(self.hi, other.hi))
        hi = tuple(max(l, h) for l, h in zip(lo, hi))
        return Box3(lo, hi)

    def clip(self, shape) -> "Box3":
        return self.intersect(Box3.full(shape))

    def dilate(self, r) -> "Box3":
        return Box3(tuple(a - ri for a, ri in zip(self.lo, r)),
                    tuple(b + ri for b, ri in zip(self.hi, r)))

    def union(self, other: "Box3") -> "Box3":
        return Box3(tuple(min(a, b) for a, b in zip(self.lo, other.lo)),
                    tuple(max(a, b) for a, b in zip(self.hi, other.hi)))

    def contains(self, point) -> bool:
        return all(a <= int(p) < b for a, p, b in zip(self.lo, point, self.hi))

    def inside(self, shape) -> bool:
        return self.clip(shape) == self

    def local(self, point) -> tuple[int, int, int]:
        return tuple(int(p) - a for p, a in zip(point, self.lo))

    def relative_to(self, outer: "Box3") -> tuple[slice, slice, slice]:
        """Slices selecting this box inside an array covering ``outer``."""
        return tuple(slice(a - o, b - o)
                     for a, b, o in zip(self.lo, self.hi, outer.lo))


@dataclass
class LabelVolume:
    data: np.ndarray
    voxel_size: tuple[float, float, float] = DEFAULT_VOXEL_SIZE

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or data.size == 0:
            raise VolumeError(f"label volume must be a non-empty 3D array, got {data.shape}")
        if not np.issubdtype(data.dtype, np.integer):
            raise VolumeError(f"labels must be integers, got {data.dtype}")
        if data.dtype.kind == "i":
            if data.size and data.min() < 0:
                raise VolumeError("labels must be non-negative")
            data = data.astype(np.uint64 if data.dtype.itemsize == 8 else
                               np.dtype(f"u{data.dtype.itemsize}"))
        self.data = data
        self.voxel_size = _check_voxel_size(self.voxel_size)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def labels(self) -> np.ndarray:
        u = np.unique(self.data)
        return u[u != 0]


@dataclass
class RawVolume:
    data: np.ndarray
    voxel_size: tuple[float, float, float] = DEFAULT_VOXEL_SIZE

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or data.size == 0:
            raise VolumeError(f"raw volume must be a non-empty 3D array, got {data.shape}")
        self.data = data
        self.voxel_size = _check_voxel_size(self.voxel_size)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


def _check_voxel_size(vs) -> tuple[float, float, float]:
    vs = tuple(float(v) for v in vs)
    if len(vs) != 3 or min(vs) <= 0:
        raise VolumeError(f"voxel size must be three positive numbers, got {vs}")
    return vs


def as_array(vol) -> np.ndarray:
    return vol.data if isinstance(vol, (LabelVolume, RawVolume)) else np.asarray(vol)


def sidecar_path(path) -> str:
    return os.fspath(path) + ".json"


def write_volume(volume: LabelVolume | RawVolume, path, bytes_per_element=None) -> None:
    """Write ``volume`` as a headerless array plus ``<path>.json``."""
    kind = "label" if isinstance(volume, LabelVolume) else "raw"
    table = LABEL_DTYPES if kind == "label" else RAW_DTYPES
    data = volume.data
    if bytes_per_element is None:
        bytes_per_element = data.dtype.itemsize
        if kind == "raw" and data.dtype.kind == "f":
            bytes_per_element = 8 if data.dtype.itemsize > 4 else 4
    if bytes_per_element not in table:
        raise VolumeError(f"unsupported element width {bytes_per_element} for {kind}")
    dtype = np.dtype(table[bytes_per_element])
    if kind == "label" and data.size and int(data.max()) > np.iinfo(dtype).max:
        raise VolumeError(f"labels do not fit in {bytes_per_element} bytes")
    # transpose so x varies fastest in C order
    blob = np.ascontiguousarray(data.astype(dtype, copy=False).transpose(2, 1, 0)).tobytes()
    with open(path, "wb") as f:
        f.write(blob)
    meta = {
        "dims": list(data.shape),
        "kind": kind,
        "bytes_per_element": bytes_per_element,
        "voxel_size_nm": list(volume.voxel_size),
    }
    with open(sidecar_path(path), "w") as f:
        json.dump(meta, f, indent=2)


def read_volume(path, sidecar=None) -> LabelVolume | RawVolume:
    sidecar = sidecar or sidecar_path(path)
    if not os.path.exists(sidecar):
        raise VolumeError(f"missing sidecar {sidecar}")
    with open(sidecar) as f:
        meta = json.load(f)
    try:
        dims = as_shape3(meta["dims"])
        kind = meta["kind"]
        width = int(meta["bytes_per_element"])
    except KeyError as e:
        raise VolumeError(f"sidecar {sidecar} lacks {e}") from None
    table = {"label": LABEL_DTYPES, "raw": RAW_DTYPES}.get(kind)
    if table is None:
        raise VolumeError(f"unknown volume kind {kind!r}")
    if width not in table:
        raise VolumeError(f"unknown element width {width}")
    blob = np.fromfile(path, dtype=np.uint8)
    expected = int(np.prod(dims)) * width
    if blob.size != expected:
        raise VolumeError(f"{path}: expected {expected} bytes for dims {dims}, found {blob.size}")
    data = blob.view(np.dtype(table[width])).reshape(dims[::-1]).transpose(2, 1, 0)
    data = np.ascontiguousarray(data).astype(np.dtype(table[width]).newbyteorder("="))
    vs = meta.get("voxel_size_nm", DEFAULT_VOXEL_SIZE)
    return LabelVolume(data, vs) if kind == "label" else RawVolume(data, vs)


def object_mask(vol, label: int) -> np.ndarray:
    if int(label) <= 0:
        raise VolumeError("label 0 is background, not an object")
    return as_array(vol) == label


def window_view(vol, center: Sequence[int], shape, mode: str = "valid"):
    """Box of ``shape`` centred on ``center`` plus the data it selects.

    ``mode='valid'`` insists the whole window lies inside the volume;
    ``'clipped'`` intersects it with the volume instead.
    """
    shape = as_shape3(shape)
    if any(s % 2 == 0 for s in shape):
        raise VolumeError(f"window dims must be odd, got {shape}")
    data = as_array(vol)
    box = Box3.around(center, shape)
    if mode == "valid":
        if not box.inside(data.shape):
            raise VolumeError(f"window {box} leaves volume of shape {data.shape}")
    elif mode == "clipped":
        box = box.clip(data.shape)
    else:
        raise VolumeError(f"unknown window mode {mode!r}")
    return box, data[box.slices]


def window_sums(mask: np.ndarray, rad, centers: Box3 | None = None) -> np.ndarray:
    """Count of true voxels in the clipped window of radius ``rad`` at each centre.

    Windows are clipped to the bounds of ``mask``.  ``centers`` restricts the
    output to a sub-box (in ``mask`` coordinates).
    """
    centers = centers or Box3.full(mask.shape)
    s = np.zeros(tuple(n + 1 for n in mask.shape), dtype=np.int64)
    s[1:, 1:, 1:] = mask.astype(np.int64).cumsum(0).cumsum(1).cumsum(2)
    lo, hi = [], []
    for ax in range(3):
        c = np.arange(centers.lo[ax], centers.hi[ax])
        lo.append(np.clip(c - rad[ax], 0, mask.shape[ax]))
        hi.append(np.clip(c + rad[ax] + 1, 0, mask.shape[ax]))
    out = np.zeros(centers.shape, dtype=np.int64)
    for cx, sx in ((hi[0], 1), (lo[0], -1)):
        for cy, sy in ((hi[1], 1), (lo[1], -1)):
            for cz, sz in ((hi[2], 1), (lo[2], -1)):
                out += (sx * sy * sz) * s[np.ix_(cx, cy, cz)]
    return out


def window_volumes(vol_shape, rad, centers: Box3) -> np.ndarray:
    """Number of voxels in the clipped window at each centre of ``centers``."""
    counts = []
    for ax in range(3):
        c = np.arange(centers.lo[ax], centers.hi[ax])
        counts.append(np.minimum(c + rad[ax] + 1, vol_shape[ax]) - np.maximum(c - rad[ax], 0))
    return counts[0][:, None, None] * counts[1][None, :, None] * counts[2][None, None, :]


def valid_domain(vol_shape, rad, box: Box3 | None = None) -> np.ndarray:
    """True where a full (unclipped) window of radius ``rad`` fits."""
    box = box or Box3.full(vol_shape)
    ok = []
    for ax in range(3):
        c = np.arange(box.lo[ax], box.hi[ax])
        ok.append((c - rad[ax] >= 0) & (c + rad[ax] < vol_shape[ax]))
    return ok[0][:, None, None] & ok[1][None, :, None] & ok[2][None, None, :]


def label_bboxes(labels: np.ndarray) -> dict[int, Box3]:
    """Bounding box of every non-zero label."""
    ids = np.unique(labels)
    ids = ids[ids != 0]
    if ids.size == 0:
        return {}
    dense = np.searchsorted(ids, labels).astype(np.int64) + 1
    dense[labels == 0] = 0
    out = {}
    for i, sl in enumerate(ndimage.find_objects(dense)):
        if sl is not None:
            out[int(ids[i])] = Box3(tuple(s.start for s in sl), tuple(s.stop for s in sl))
    return out
