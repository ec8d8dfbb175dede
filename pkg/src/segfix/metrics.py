"""Segmentation comparison: contingency tables, VI, Rand scores, point errors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import VolumeError, as_array


@dataclass
class ContingencyTable:
    """Sparse overlap counts between ground-truth rows and proposal columns.

    ``rows[k]``, ``cols[k]`` and ``counts[k]`` describe one non-zero cell.
    """

    rows: np.ndarray
    cols: np.ndarray
    counts: np.ndarray
    include_background: bool = False

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if not (self.rows.shape == self.cols.shape == self.counts.shape):
            raise ValueError("rows, cols and counts must align")
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")
        keep = self.counts > 0
        self.rows, self.cols, self.counts = self.rows[keep], self.cols[keep], self.counts[keep]
        self.row_ids, row_idx = np.unique(self.rows, return_inverse=True)
        self.col_ids, col_idx = np.unique(self.cols, return_inverse=True)
        self.p = np.bincount(row_idx, self.counts, len(self.row_ids)).astype(np.int64)
        self.q = np.bincount(col_idx, self.counts, len(self.col_ids)).astype(np.int64)
        self._row_idx, self._col_idx = row_idx, col_idx

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def as_dict(self) -> dict:
        return {(int(i), int(j)): int(c) for i, j, c in zip(self.rows, self.cols, self.counts)}

    def stats(self) -> dict:
        return {
            "total": self.total,
            "gt_segments": len(self.row_ids),
            "proposal_segments": len(self.col_ids),
            "nonzero_cells": len(self.counts),
            "include_background": self.include_background,
        }


def contingency(gt, prop, include_background: bool = False) -> ContingencyTable:
    gt = as_array(gt).ravel()
    prop = as_array(prop).ravel()
    if gt.shape != prop.shape:
        raise VolumeError(f"shape mismatch: {gt.shape} vs {prop.shape}")
    if not include_background:
        keep = (gt != 0) & (prop != 0)
        gt, prop = gt[keep], prop[keep]
    if gt.size == 0:
        return ContingencyTable([], [], [], include_background)
    pairs, counts = np.unique(np.stack([gt.astype(np.int64), prop.astype(np.int64)]),
                              axis=1, return_counts=True)
    return ContingencyTable(pairs[0], pairs[1], counts, include_background)


def _require(t: ContingencyTable):
    if t.total <= 0:
        raise ValueError("empty contingency table")


@dataclass(frozen=True)
class ViScores:
    vi_split: float
    vi_merge: float

    @property
    def total(self) -> float:
        return self.vi_split + self.vi_merge


def vi_scores(t: ContingencyTable) -> ViScores:
    """Split and merge variation of information, in nats."""
    _require(t)
    r = t.counts.astype(np.float64)
    R = r.sum()
    split = -np.sum(r * np.log(r / t.p[t._row_idx])) / R
    merge = -np.sum(r * np.log(r / t.q[t._col_idx])) / R
    # + 0.0 turns the -0.0 of an all-log(1) sum into 0.0
    return ViScores(float(split + 0.0), float(merge + 0.0))


@dataclass
class PerObjectVi:
    ids: np.ndarray
    vi_split: np.ndarray
    vi_merge: np.ndarray
    weight: np.ndarray

    @property
    def vi(self) -> np.ndarray:
        return self.vi_split + self.vi_merge

    def rows(self):
        for i, s, m, w in zip(self.ids, self.vi_split, self.vi_merge, self.weight):
            yield {"id": int(i), "vi_split": float(s), "vi_merge": float(m),
                   "vi": float(s + m), "weight": float(w)}


def per_object_vi(t: ContingencyTable) -> PerObjectVi:
    """Split/merge scores for every ground-truth segment.

    The table totals are recovered as ``sum(weight * score)``.
    """
    _require(t)
    r = t.counts.astype(np.float64)
    p = t.p[t._row_idx].astype(np.float64)
    q = t.q[t._col_idx].astype(np.float64)
    frac = r / p
    n = len(t.row_ids)
    split = -np.bincount(t._row_idx, frac * np.log(frac), n)
    merge = -np.bincount(t._row_idx, frac * np.log(r / q), n)
    return PerObjectVi(t.row_ids.copy(), split + 0.0, merge + 0.0, t.p / t.total)


@dataclass(frozen=True)
class RandScores:
    rand_recall: float
    rand_precision: float

    @property
    def f_score(self) -> float:
        s = self.rand_recall + self.rand_precision
        return 2 * self.rand_recall * self.rand_precision / s if s else 0.0


def rand_scores(t: ContingencyTable) -> RandScores:
    """Sum-of-squares Rand recall and precision (ordered pairs, self-pairs included)."""
    _require(t)
    rr = float(np.sum(t.counts.astype(np.float64) ** 2))
    return RandScores(rr / float(np.sum(t.p.astype(np.float64) ** 2)),
                      rr / float(np.sum(t.q.astype(np.float64) ** 2)))


def count_point_errors(before, after) -> dict:
    before = np.asarray(before, dtype=bool)
    after = np.asarray(after, dtype=bool)
    if before.shape != after.shape:
        raise ValueError(f"decision lists differ in length: {before.size} vs {after.size}")
    return {
        "errors_before": int(before.sum()),
        "errors_after": int(after.sum()),
        "fixed": int(np.sum(before & ~after)),
        "introduced": int(np.sum(~before & after)),
    }


def pr_curve(scores, labels) -> list[tuple[float, float, float]]:
    """Precision and recall at every distinct score, thresholds descending.

    A point is predicted erroneous when its score is >= the threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary")
    labels = labels.astype(bool)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("no positive labels; recall is undefined")
    order = np.argsort(-scores, kind="stable")
    s, l = scores[order], labels[order]
    tp = np.cumsum(l)
    fp = np.cumsum(~l)
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    return [(float(s[k]), float(tp[k] / (tp[k] + fp[k])), float(tp[k] / n_pos)) for k in ends]


def best_operating_point(curve, min_recall=0.95, min_precision=0.85):
    """First threshold (descending) meeting both bounds, or None."""
    for thr, prec, rec in curve:
        if rec > min_recall and prec > min_precision:
            return thr, prec, rec
    return None
