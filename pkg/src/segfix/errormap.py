"""Windowed error maps for candidate objects and whole segmentations.

A voxel of the error map of an object mask is 0 exactly when the mask,
restricted to the window centred on that voxel, coincides with the
restriction of a single ground-truth object.  An empty restriction always
counts as a match.

Windows are tested with integral-volume counts: the mask matches object
``g`` inside a window iff ``#(mask & gt==g) == #mask == #(gt==g)`` there, so
only ground-truth labels overlapping the mask need to be tried.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from .volume import (Box3, VolumeError, as_array, as_shape3, label_bboxes, radius, valid_domain,
                     window_sums)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ErrorWindowSpec:
    shape: tuple[int, int, int]
    mode: str = "valid"

    def __post_init__(self):
        shape = as_shape3(self.shape)
        if any(s % 2 == 0 for s in shape):
            raise VolumeError(f"error window dims must be odd, got {shape}")
        if self.mode not in ("valid", "clipped"):
            raise VolumeError(f"unknown border mode {self.mode!r}")
        object.__setattr__(self, "shape", shape)

    @property
    def radius(self):
        return radius(self.shape)


@dataclass
class ErrorMap:
    """Scalar map in [0, 1] over ``box`` of a volume of shape ``volume_shape``."""

    data: np.ndarray
    spec: ErrorWindowSpec
    box: Box3 = None
    volume_shape: tuple = None

    def __post_init__(self):
        if self.volume_shape is None:
            self.volume_shape = self.data.shape
        if self.box is None:
            self.box = Box3.full(self.volume_shape)
        if tuple(self.data.shape) != self.box.shape:
            raise VolumeError("error map data does not match its box")

    @property
    def domain(self) -> np.ndarray:
        """Voxels where the map is defined; outside it values are held at 0."""
        if self.spec.mode == "clipped":
            return np.ones(self.data.shape, bool)
        return valid_domain(self.volume_shape, self.spec.radius, self.box)


def _check_shapes(a, b):
    if a.shape != b.shape:
        raise VolumeError(f"shape mismatch: {a.shape} vs {b.shape}")


def _object_errors(obj, gt, rad, centers: Box3) -> np.ndarray:
    """Binary error values of ``obj`` at ``centers`` (all arrays share a frame)."""
    n_obj = window_sums(obj, rad, centers)
    ok = n_obj == 0
    for g in np.unique(gt[obj]):
        if g == 0:
            continue
        is_g = gt == g
        both = window_sums(obj & is_g, rad, centers)
        cand = (both == n_obj) & ~ok
        if not cand.any():
            continue
        ok |= cand & (window_sums(is_g, rad, centers) == n_obj)
    return (~ok).astype(np.uint8)


def oracle_error_map(obj, gt, spec: ErrorWindowSpec) -> ErrorMap:
    """Error map of one object mask against the ground truth, over the whole volume."""
    obj = as_array(obj).astype(bool)
    gt = as_array(gt)
    _check_shapes(obj, gt)
    data = _object_errors(obj, gt, spec.radius, Box3.full(obj.shape)).astype(np.float32)
    em = ErrorMap(data, spec)
    data[~em.domain] = 0
    return em


def combined_error_map(proposal, gt, spec: ErrorWindowSpec, region: Box3 | None = None,
                       threads: int = 1) -> ErrorMap:
    """Sum over proposal objects of each object's error map masked to the object.

    Objects are disjoint, so each foreground voxel carries the error value of
    the object it belongs to.  Only ``region`` is evaluated when given.
    """
    proposal = as_array(proposal)
    gt = as_array(gt)
    _check_shapes(proposal, gt)
    shape = proposal.shape
    region = (region or Box3.full(shape)).clip(shape)
    rad = spec.radius
    out = np.zeros(region.shape, np.float32)
    sub = proposal[region.slices]
    boxes = label_bboxes(sub)

    def one(label, local):
        centers = Box3(tuple(a + o for a, o in zip(local.lo, region.lo)),
                       tuple(b + o for b, o in zip(local.hi, region.lo)))
        crop = centers.dilate(rad).clip(shape)
        obj = proposal[crop.slices] == label
        err = _object_errors(obj, gt[crop.slices], rad,
                             Box3(crop.local(centers.lo), crop.local(centers.hi)))
        target = out[local.slices]
        here = sub[local.slices] == label
        target[here] = err[here]

    if threads > 1 and len(boxes) > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(lambda kv: one(*kv), sorted(boxes.items())))
    else:
        for label, local in sorted(boxes.items()):
            one(label, local)
    em = ErrorMap(out, spec, region, shape)
    if spec.mode == "valid":
        out[~em.domain] = 0
    return em


def blend_max(tiles, region: Box3 | None = None) -> ErrorMap:
    """Blend overlapping tiles by taking the voxelwise maximum.

    ``tiles`` is a sequence of ``(Box3, ErrorMap or array)``; every voxel of
    ``region`` (default: bounding box of the tiles) must be covered.
    """
    tiles = list(tiles)
    if not tiles:
        raise ValueError("no tiles to blend")
    if region is None:
        region = tiles[0][0]
        for box, _ in tiles[1:]:
            region = region.union(box)
    out = np.full(region.shape, -np.inf, dtype=np.float64)
    spec = None
    for box, tile in tiles:
        if isinstance(tile, ErrorMap):
            spec = spec or tile.spec
            tile = tile.data
        if tuple(np.shape(tile)) != box.shape:
            raise VolumeError(f"tile shape {np.shape(tile)} does not match {box}")
        part = box.intersect(region)
        if part.is_empty():
            continue
        dst = out[part.relative_to(region)]
        np.maximum(dst, np.asarray(tile)[part.relative_to(box)], out=dst)
    if np.isneginf(out).any():
        raise ValueError("some voxels are covered by no tile")
    spec = spec or ErrorWindowSpec((1, 1, 1), "clipped")
    return ErrorMap(out.astype(np.float32), spec, region, region.hi)


def binarize(em: ErrorMap, threshold: float = 0.25) -> ErrorMap:
    if not 0 <= threshold <= 1:
        raise ValueError("threshold must lie in [0, 1]")
    return ErrorMap((em.data >= threshold).astype(np.float32), em.spec, em.box, em.volume_shape)


class OracleDetector:
    """Ground-truth error detector: exact combined error maps."""

    def __init__(self, gt, spec: ErrorWindowSpec, threads: int = 1):
        self.gt = as_array(gt)
        self.spec = spec
        self.threads = threads

    def __call__(self, proposal, region: Box3 | None = None, raw=None) -> ErrorMap:
        return combined_error_map(proposal, self.gt, self.spec, region, self.threads)


class NoisyDetector(OracleDetector):
    """Oracle detector whose per-location decisions are flipped at random.

    A location with a true error is reported clean with probability
    ``fn_rate``; a clean foreground location is reported as an error with
    probability ``fp_rate``.  The draw is fixed per voxel by the seed, so any
    sub-region evaluates exactly as the same voxels of a full evaluation.
    """

    def __init__(self, gt, spec, fp_rate=0.0, fn_rate=0.0, seed=0, threads=1):
        super().__init__(gt, spec, threads)
        for r in (fp_rate, fn_rate):
            if not 0 <= r <= 1:
                raise ValueError(f"rate {r} outside [0, 1]")
        self.fp_rate = float(fp_rate)
        self.fn_rate = float(fn_rate)
        self.seed = seed
        self._u = np.random.default_rng(seed).random(self.gt.shape, dtype=np.float64)

    def __call__(self, proposal, region=None, raw=None) -> ErrorMap:
        em = super().__call__(proposal, region, raw)
        proposal = as_array(proposal)
        u = self._u[em.box.slices]
        fg = (proposal[em.box.slices] != 0) & em.domain
        d = em.data
        pos = d >= 0.5
        flip = fg & ((pos & (u < self.fn_rate)) | (~pos & (u < self.fp_rate)))
        d[flip] = 1 - d[flip]
        return em


def noisy_detector(gt, spec, fp_rate, fn_rate, seed) -> OracleDetector:
    if fp_rate == 0 and fn_rate == 0:
        return OracleDetector(gt, spec)
    return NoisyDetector(gt, spec, fp_rate, fn_rate, seed)


def error_at(proposal, gt, center, spec: ErrorWindowSpec) -> int:
    """Error value of the object at ``center`` evaluated at ``center`` only."""
    proposal = as_array(proposal)
    label = proposal[tuple(center)]
    if label == 0:
        return 0
    box = Box3.around(center, spec.shape)
    if spec.mode == "valid" and not box.inside(proposal.shape):
        return 0
    crop = box.clip(proposal.shape)
    obj = proposal[crop.slices] == label
    g = as_array(gt)[crop.slices]
    # the only candidate is the gt label at the centre voxel, which obj covers
    target = g[crop.local(center)]
    return int(target == 0 or not np.array_equal(obj, g == target))
