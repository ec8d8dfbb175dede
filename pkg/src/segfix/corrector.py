"""Object mask pruning: tasks, the vector-field transform, and per-supervoxel decisions.

A corrector backend is any callable taking a :class:`PruningTask` and
returning a soft mask in (0, 1] over the task window.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .svgraph import SegmentationView
from .volume import Box3, VolumeError, as_array, as_shape3, window_view

EPS = 1e-6


@dataclass
class PruningTask:
    box: Box3
    candidate: np.ndarray  # bool, window shaped
    center: tuple[int, int, int]  # volume coordinates
    supervoxels: np.ndarray  # supervoxel ids in the window
    raw: np.ndarray | None = None
    segments: set = field(default_factory=set)  # component ids forming the candidate

    @property
    def local_center(self):
        return self.box.local(self.center)


@dataclass(frozen=True)
class SupervoxelDecision:
    merge: frozenset
    cut: frozenset
    abstain: bool

    def to_json(self) -> dict:
        return {"merge": sorted(int(v) for v in self.merge),
                "cut": sorted(int(v) for v in self.cut),
                "abstain": self.abstain}


def advice_mask(view: SegmentationView, binarized, center, shape, mode="valid",
                labels=None, raw=None) -> PruningTask:
    """Union of the central segment and every segment with an error voxel in the window.

    ``binarized`` is a full-volume binary error map (array or ErrorMap).
    ``labels`` may carry an already rendered segmentation.
    """
    center = tuple(int(c) for c in center)
    labels = view.render() if labels is None else labels
    err = as_array(binarized.data if hasattr(binarized, "spec") else binarized)
    if err.shape != labels.shape:
        raise VolumeError("error map and segmentation differ in shape")
    box, lab = window_view(labels, center, shape, mode)
    central = int(labels[center])
    if central == 0:
        raise VolumeError(f"central voxel {center} is background")
    flagged = np.unique(lab[err[box.slices] > 0])
    segments = {central} | {int(v) for v in flagged if v}
    candidate = np.isin(lab, list(segments))
    rw = None if raw is None else as_array(raw)[box.slices]
    return PruningTask(box, candidate, center, view.supervoxels.data[box.slices], rw, segments)


def mask_from_vector_field(v, anchor) -> np.ndarray:
    """Soft mask ``exp(-|v - anchor|^2)`` from a ``(..., k)`` vector field."""
    v = np.asarray(v, dtype=np.float64)
    anchor = np.asarray(anchor, dtype=np.float64)
    if anchor.ndim != 1 or v.shape[-1] != anchor.shape[0]:
        raise ValueError(f"anchor of dim {anchor.shape} does not match field dim {v.shape[-1]}")
    d = v - anchor
    return np.exp(-np.einsum("...k,...k->...", d, d))


def anchor_vector(v, sv_window, central) -> np.ndarray:
    """Mean of the field over the supervoxel containing the central voxel."""
    sv_window = as_array(sv_window)
    s = sv_window[tuple(central)]
    if s == 0:
        raise VolumeError("central voxel has no supervoxel")
    return np.asarray(v, dtype=np.float64)[sv_window == s].mean(axis=0)


def central_box(box: Box3, center) -> Box3:
    """Box of half the window extent (rounded to odd) centred on ``center``, clipped to ``box``."""
    half = tuple(max(1, (s // 2) | 1) for s in box.shape)
    return Box3.around(center, half).intersect(box)


def score_supervoxels(m, sv_window, cbox_local: Box3, candidate=None) -> dict[int, float]:
    """Average soft-mask value of each supervoxel touching the central box.

    The average runs over the supervoxel's voxels within the whole window.
    With ``candidate`` given, only supervoxels inside the candidate mask count.
    """
    m = np.asarray(m, dtype=np.float64)
    sv = as_array(sv_window).astype(np.int64)
    touching = np.unique(sv[cbox_local.slices])
    touching = touching[touching != 0]
    if candidate is not None:
        touching = np.intersect1d(touching, np.unique(sv[candidate]))
    if touching.size == 0:
        return {}
    flat = sv.ravel()
    sel = np.isin(flat, touching)
    idx = np.searchsorted(touching, flat[sel])
    sums = np.bincount(idx, m.ravel()[sel], touching.size)
    counts = np.bincount(idx, minlength=touching.size)
    return {int(s): float(a / c) for s, a, c in zip(touching, sums, counts)}


def decide(scores: dict, lo: float = 0.1, hi: float = 0.9) -> SupervoxelDecision:
    if lo >= hi:
        raise ValueError(f"need lo < hi, got {lo} >= {hi}")
    if any(lo <= s <= hi for s in scores.values()):
        return SupervoxelDecision(frozenset(), frozenset(), True)
    return SupervoxelDecision(frozenset(k for k, s in scores.items() if s > hi),
                              frozenset(k for k, s in scores.items() if s < lo), False)


def _task_rng(seed, center) -> np.random.Generator:
    key = zlib.crc32(np.asarray(center, dtype=np.int64).tobytes())
    return np.random.default_rng([int(seed), key])


class OracleCorrector:
    """Ground-truth pruning: 1 on the true central object inside the candidate, EPS elsewhere."""

    def __init__(self, gt):
        self.gt = as_array(gt)

    def target(self, task: PruningTask) -> np.ndarray:
        g = self.gt[task.box.slices]
        label = g[task.local_center]
        if label == 0:
            raise VolumeError(f"central voxel {task.center} is background in the ground truth")
        return (g == label) & task.candidate

    def __call__(self, task: PruningTask) -> np.ndarray:
        return np.where(self.target(task), 1.0, EPS)


class EmbeddingCorrector(OracleCorrector):
    """Oracle routed through the vector-field transform.

    Each ground-truth object gets a random ``k``-vector; the mask is
    ``exp(-|v - anchor|^2)`` with the anchor averaged over the central
    supervoxel.  Vectors of distinct objects are ``spread`` apart on average,
    so masks stay near 0 or 1 unless a supervoxel straddles objects.
    """

    def __init__(self, gt, k=6, spread=4.0, seed=0):
        super().__init__(gt)
        self.k = k
        self.spread = spread
        self.seed = seed

    def field(self, task: PruningTask) -> np.ndarray:
        g = self.gt[task.box.slices].astype(np.int64)
        ids, inv = np.unique(g, return_inverse=True)
        vecs = np.stack([np.random.default_rng([self.seed, int(i)]).normal(size=self.k)
                         for i in ids]) * (self.spread / np.sqrt(2 * self.k))
        return vecs[inv.reshape(g.shape)]

    def __call__(self, task: PruningTask) -> np.ndarray:
        v = self.field(task)
        m = mask_from_vector_field(v, anchor_vector(v, task.supervoxels, task.local_center))
        return np.where(task.candidate, np.maximum(m, EPS), EPS)


class NoisyCorrector(OracleCorrector):
    """Oracle whose per-supervoxel verdicts are flipped at random.

    A supervoxel of the true object is dropped with probability ``fn_rate``;
    another candidate supervoxel is kept with probability ``fp_rate``.
    Draws depend only on the seed and the task centre.
    """

    def __init__(self, gt, fp_rate=0.0, fn_rate=0.0, seed=0):
        super().__init__(gt)
        for r in (fp_rate, fn_rate):
            if not 0 <= r <= 1:
                raise ValueError(f"rate {r} outside [0, 1]")
        self.fp_rate, self.fn_rate, self.seed = fp_rate, fn_rate, seed

    def __call__(self, task: PruningTask) -> np.ndarray:
        keep = self.target(task)
        sv = task.supervoxels
        ids = np.unique(sv[task.candidate])
        rng = _task_rng(self.seed, task.center)
        u = rng.random(ids.size)
        central = sv[task.local_center]
        out = keep.copy()
        for s, x in zip(ids, u):
            if s == 0 or s == central:
                continue
            here = (sv == s) & task.candidate
            inside = keep[here].mean() > 0.5
            if inside and x < self.fn_rate:
                out[here] = False
            elif not inside and x < self.fp_rate:
                out[here] = True
        return np.where(out, 1.0, EPS)


class AbstainingCorrector:
    """Always unsure: a flat 0.5 mask, which falls inside every confidence band."""

    def __call__(self, task: PruningTask) -> np.ndarray:
        return np.full(task.candidate.shape, 0.5)


def make_pruning_task(gt, center, shape, p=None, seed=0, supervoxels=None,
                      raw=None) -> tuple[PruningTask, np.ndarray]:
    """Training-style task: the central object plus each other object with probability ``p``.

    ``p`` is drawn uniformly from [0, 1] when not given.  Returns the task and
    the target mask (the central object within the window).
    """
    gt = as_array(gt)
    center = tuple(int(c) for c in center)
    box, g = window_view(gt, center, as_shape3(shape), "valid")
    label = int(gt[center])
    if label == 0:
        raise VolumeError(f"central voxel {center} is background")
    rng = np.random.default_rng(seed)
    if p is None:
        p = rng.uniform(0.0, 1.0)
    others = [int(v) for v in np.unique(g) if v and v != label]
    chosen = {label} | {o for o, x in zip(others, rng.random(len(others))) if x < p}
    candidate = np.isin(g, list(chosen))
    sv = g if supervoxels is None else as_array(supervoxels)[box.slices]
    rw = None if raw is None else as_array(raw)[box.slices]
    return PruningTask(box, candidate, center, sv, rw, chosen), g == label
