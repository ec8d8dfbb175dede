"""Synthetic ground truth, supervoxels, injected errors and point sampling."""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .errormap import ErrorWindowSpec, error_at
from .svgraph import SegGraph, SegmentationView, rag_edges
from .volume import (Box3, LabelVolume, as_array, as_shape3, label_bboxes, odd_shape, radius,
                     window_sums, window_volumes)

log = logging.getLogger(__name__)


class SynthError(ValueError):
    pass


@dataclass
class SynthConfig:
    shape: tuple = (64, 64, 16)
    n_objects: int = 12
    tube_fraction: float = 0.6
    tube_xy_thickness: tuple = (4, 7)
    tube_z_thickness: tuple = (3, 5)
    blob_xy_radius: tuple = (4, 9)
    blob_z_radius: tuple = (2, 4)
    min_gap: int = 1
    cluster_prob: float = 0.85
    supervoxel_cell: tuple = (12, 12, 6)
    corrupt_supervoxels: int = 0
    seed: int = 0
    max_attempts: int = 20000

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def _tube(rng, shape, cfg) -> np.ndarray:
    axis = int(rng.integers(0, 2)) if shape[2] < shape[0] else int(rng.integers(0, 3))
    extent = [0, 0, 0]
    for ax in range(3):
        if ax == axis:
            extent[ax] = int(rng.integers(max(2, shape[ax] // 3), shape[ax] + 1))
        elif ax == 2:
            extent[ax] = int(rng.integers(cfg.tube_z_thickness[0], cfg.tube_z_thickness[1] + 1))
        else:
            extent[ax] = int(rng.integers(cfg.tube_xy_thickness[0], cfg.tube_xy_thickness[1] + 1))
    return np.ones([min(e, s) for e, s in zip(extent, shape)], bool)


def _blob(rng, shape, cfg) -> np.ndarray:
    r = [int(rng.integers(cfg.blob_xy_radius[0], cfg.blob_xy_radius[1] + 1)) for _ in range(2)]
    r.append(int(rng.integers(cfg.blob_z_radius[0], cfg.blob_z_radius[1] + 1)))
    r = [max(1, min(ri, (s - 1) // 2)) for ri, s in zip(r, shape)]
    g = np.ogrid[tuple(slice(-ri, ri + 1) for ri in r)]
    return sum((gi / (ri + 0.5)) ** 2 for gi, ri in zip(g, r)) <= 1.0


def _position(rng, shape, extent, boxes, cfg) -> Box3 | None:
    """Random corner, or a spot a few voxels beside an already placed object."""
    if boxes and rng.random() < cfg.cluster_prob:
        anchor = boxes[int(rng.integers(len(boxes)))]
        ax = int(rng.integers(2))  # side by side in x or y; z spacing is coarse
        lo = [0, 0, 0]
        for k in range(3):
            if k == ax:
                off = cfg.min_gap + int(rng.integers(0, 2))
                lo[k] = (anchor.hi[k] + off if rng.random() < 0.5
                         else anchor.lo[k] - off - extent[k])
            else:
                lo[k] = int(rng.integers(anchor.lo[k] - extent[k] + 1, anchor.hi[k]))
        box = Box3(tuple(lo), tuple(l + e for l, e in zip(lo, extent)))
        return box if box.inside(shape) else None
    lo = [int(rng.integers(0, s - e + 1)) for s, e in zip(shape, extent)]
    return Box3(tuple(lo), tuple(l + e for l, e in zip(lo, extent)))


def _supervoxels(gt: np.ndarray, cell, rng) -> np.ndarray:
    """Cut every object along a jittered grid; each connected piece is a supervoxel."""
    idx = []
    for ax in range(3):
        off = int(rng.integers(0, cell[ax]))
        idx.append((np.arange(gt.shape[ax]) + off) // cell[ax])
    n = [int(i.max()) + 1 for i in idx]
    cell_id = (idx[0][:, None, None] * n[1] + idx[1][None, :, None]) * n[2] + idx[2][None, None, :]
    key = gt.astype(np.int64) * (n[0] * n[1] * n[2]) + cell_id
    key[gt == 0] = -1
    _, inv = np.unique(key, return_inverse=True)
    sv = inv.reshape(gt.shape).astype(np.int64)
    sv = np.where(gt == 0, 0, sv + (0 if (gt == 0).any() else 1))
    # split disconnected pieces
    out = np.zeros_like(sv)
    nxt = 1
    for i, sl in enumerate(ndimage.find_objects(sv)):
        if sl is None:
            continue
        lab, k = ndimage.label(sv[sl] == i + 1)
        region = out[sl]
        region[lab > 0] = lab[lab > 0] + nxt - 1
        nxt += k
    return out


def generate_gt(config: SynthConfig) -> tuple[LabelVolume, LabelVolume]:
    """Non-overlapping tubes and blobs, and a supervoxel over-segmentation of them."""
    shape = as_shape3(config.shape)
    rng = np.random.default_rng(config.seed)
    gt = np.zeros(shape, np.int64)
    taken = np.zeros(shape, bool)
    gap = config.min_gap
    placed = 0
    boxes: list[Box3] = []
    for _ in range(config.max_attempts):
        if placed == config.n_objects:
            break
        make = _tube if rng.random() < config.tube_fraction else _blob
        mask = make(rng, shape, config)
        box = _position(rng, shape, mask.shape, boxes, config)
        if box is None or taken[box.slices][mask].any():
            continue
        placed += 1
        boxes.append(box)
        gt[box.slices][mask] = placed
        grown = box.dilate((gap, gap, gap)).clip(shape)
        pad = np.zeros(grown.shape, bool)
        pad[box.relative_to(grown)] = mask
        if gap:
            pad = ndimage.binary_dilation(pad, np.ones((3, 3, 3), bool), iterations=gap)
        taken[grown.slices] |= pad
    if placed < config.n_objects:
        raise SynthError(f"placed only {placed} of {config.n_objects} objects in {shape}")
    sv = _supervoxels(gt, as_shape3(config.supervoxel_cell), rng)
    if config.corrupt_supervoxels:
        sv = _corrupt(gt, sv, config.corrupt_supervoxels, rng)
    return LabelVolume(gt), LabelVolume(sv)


def _corrupt(gt, sv, count, rng):
    """Fuse supervoxels of different objects that lie within 2 voxels of each other."""
    pairs, _ = near_pairs(gt, sv, (2, 2, 1))
    if len(pairs) == 0:
        return sv
    sv = sv.copy()
    used = set()
    for k in rng.permutation(len(pairs)):
        a, b = (int(v) for v in pairs[k])
        if a in used or b in used:
            continue
        sv[sv == b] = a
        used |= {a, b}
        count -= 1
        if count == 0:
            break
    _, inv = np.unique(sv, return_inverse=True)
    return inv.reshape(sv.shape).astype(np.int64)


def gt_edges(gt, sv) -> list[tuple[int, int]]:
    """Adjacent supervoxel pairs lying in the same ground-truth object."""
    gt, sv = as_array(gt), as_array(sv)
    edges = rag_edges(sv)
    if len(edges) == 0:
        return []
    owner = _owner(gt, sv)
    same = owner[edges[:, 0]] == owner[edges[:, 1]]
    return [tuple(map(int, e)) for e in edges[same]]


def _owner(gt, sv) -> np.ndarray:
    """Ground-truth label of each supervoxel (by majority)."""
    sv = as_array(sv).astype(np.int64)
    gt = as_array(gt).astype(np.int64)
    fg = sv > 0
    pairs, counts = np.unique(np.stack([sv[fg], gt[fg]]), axis=1, return_counts=True)
    owner = np.zeros(int(sv.max()) + 1, np.int64)
    best = np.zeros_like(owner)
    for (s, g), c in zip(pairs.T, counts):
        if c > best[s]:
            owner[s], best[s] = g, c
    return owner


def near_pairs(gt, sv, reach) -> tuple[np.ndarray, np.ndarray]:
    """Supervoxel pairs of different objects within ``reach`` voxels per axis.

    Returns ``(pairs, witness)``: sorted ``(a, b)`` rows and, for each, a voxel
    of ``a`` that has a voxel of ``b`` within reach.
    """
    gt, sv = as_array(gt).astype(np.int64), as_array(sv).astype(np.int64)
    shape = sv.shape
    base = int(sv.max()) + 1
    codes, wits = [], []
    for dx in range(-reach[0], reach[0] + 1):
        for dy in range(-reach[1], reach[1] + 1):
            for dz in range(-reach[2], reach[2] + 1):
                d = (dx, dy, dz)
                if d <= (0, 0, 0):
                    continue
                src = tuple(slice(max(0, -o), s - max(0, o)) for o, s in zip(d, shape))
                dst = tuple(slice(max(0, o), s - max(0, -o)) for o, s in zip(d, shape))
                a, b = sv[src], sv[dst]
                ga, gb = gt[src], gt[dst]
                hit = (ga != gb) & (ga > 0) & (gb > 0) & (a > 0) & (b > 0)
                if not hit.any():
                    continue
                pos = np.argwhere(hit)
                va, vb = a[hit], b[hit]
                code, first = np.unique(np.minimum(va, vb) * base + np.maximum(va, vb),
                                        return_index=True)
                pa = pos[first] + [sl.start for sl in src]
                pb = pos[first] + [sl.start for sl in dst]
                # witness lies in the smaller id of the pair
                wits.append(np.where((va[first] < vb[first])[:, None], pa, pb))
                codes.append(code)
    if not codes:
        return np.zeros((0, 2), np.int64), np.zeros((0, 3), np.int64)
    code = np.concatenate(codes)
    wit = np.concatenate(wits)
    code, first = np.unique(code, return_index=True)
    pairs = np.stack([code // base, code % base], axis=1)
    return pairs, wit[first]


@dataclass
class Mutation:
    kind: str  # "merge" | "split"
    objects: tuple  # gt labels involved
    supervoxels: tuple  # merge: the joined pair; split: one side of the bipartition
    edges: tuple = ()  # edges added (merge) or removed (split)
    witness: tuple = None  # a voxel where the error is visible

    def to_json(self) -> dict:
        return {"kind": self.kind, "objects": list(self.objects),
                "supervoxels": list(self.supervoxels),
                "edges": [list(e) for e in self.edges],
                "witness": None if self.witness is None else list(self.witness)}

    @classmethod
    def from_json(cls, d) -> "Mutation":
        return cls(d["kind"], tuple(d["objects"]), tuple(d["supervoxels"]),
                   tuple(tuple(e) for e in d.get("edges", ())),
                   None if d.get("witness") is None else tuple(d["witness"]))


def _contact_voxel(sv, a, b, reach, avoid=()):
    """First voxel of supervoxel ``a`` with a voxel of ``b`` within ``reach``."""
    box = Box3(tuple(map(int, np.argwhere(sv == a).min(0))),
               tuple(map(int, np.argwhere(sv == a).max(0) + 1)))
    crop = box.dilate(reach).clip(sv.shape)
    local = Box3(crop.local(box.lo), crop.local(box.hi))
    near_b = window_sums(sv[crop.slices] == b, reach, local) > 0
    hits = np.argwhere(near_b & (sv[box.slices] == a))
    for h in hits:
        p = tuple(int(v) for v in h + np.array(box.lo))
        if p not in avoid:
            return p
    return None


def _connected(nodes, adj) -> bool:
    nodes = set(nodes)
    if not nodes:
        return False
    start = next(iter(nodes))
    seen = {start}
    q = deque([start])
    while q:
        u = q.popleft()
        for w in adj.get(u, ()):
            if w in nodes and w not in seen:
                seen.add(w)
                q.append(w)
    return seen == nodes


def generate_mutations(gt, sv, n_merges, n_splits, reach=(3, 3, 1), seed=0,
                       separate=True) -> list[Mutation]:
    """Random merge and split mutations that a window of radius ``reach`` can see.

    Merges join a pair of nearby supervoxels from different objects.  Splits
    cut an object's supervoxel graph into two connected sides along its
    longest axis.  With ``separate`` the split objects are never merged, so a
    split cannot be hidden by a merge chain.
    """
    gt, sv = as_array(gt), as_array(sv)
    rng = np.random.default_rng(seed)
    owner = _owner(gt, sv)
    edges = gt_edges(gt, sv)
    adj: dict[int, set] = {}
    for a, b in edges:
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    svs_of: dict[int, list] = {}
    for s in np.unique(sv):
        if s:
            svs_of.setdefault(int(owner[s]), []).append(int(s))
    objects = sorted(svs_of)
    com = ndimage.center_of_mass(np.ones_like(sv), sv, np.arange(1, int(sv.max()) + 1))
    com = np.array(com).reshape(-1, 3)

    pairs, _ = near_pairs(gt, sv, reach)
    def cuts(o):
        """Bipartitions of an object along its longest axis with both sides connected."""
        ids = svs_of[o]
        c = com[np.array(ids) - 1]
        axis = int(np.argmax(c.max(0) - c.min(0)))
        order = [ids[i] for i in np.argsort(c[:, axis], kind="stable")]
        return [(o, order[:k], order[k:]) for k in range(1, len(order))
                if _connected(order[:k], adj) and _connected(order[k:], adj)]

    split_objs: list[int] = []
    candidates = []
    if n_splits:
        n_near = {o: 0 for o in objects}
        for a, b in pairs:
            n_near[int(owner[a])] += 1
            n_near[int(owner[b])] += 1
        options = {int(o): cuts(int(o)) for o in rng.permutation(objects)}
        order = [o for o in options if options[o]]
        # cheapest first: many possible cuts, few merge partners lost
        order.sort(key=lambda o: n_near[o] / len(options[o]))
        for o in order:
            if len(candidates) >= 2 * n_splits:  # some cuts end up redundant
                break
            split_objs.append(o)
            candidates += options[o]

    used_voxels: set = set()
    muts: list[Mutation] = []
    # merges
    banned = set(split_objs) if separate else set()
    merge_pairs = [(int(a), int(b)) for a, b in pairs
                   if owner[a] not in banned and owner[b] not in banned]
    for k in rng.permutation(len(merge_pairs)):
        if sum(m.kind == "merge" for m in muts) == n_merges:
            break
        a, b = merge_pairs[k]
        w = _contact_voxel(sv, a, b, reach, used_voxels)
        if w is None:
            continue
        used_voxels.add(w)
        muts.append(Mutation("merge", (int(owner[a]), int(owner[b])), (a, b), ((a, b),), w))
    if sum(m.kind == "merge" for m in muts) < n_merges:
        raise SynthError(f"only {len(muts)} usable supervoxel pairs for {n_merges} merges")

    removed: set = set()
    n_done = 0
    for k in rng.permutation(len(candidates)):
        if n_done == n_splits:
            break
        o, left, right = candidates[k]
        lset = set(left)
        crossing = [(min(a, b), max(a, b)) for a in left for b in adj.get(a, ()) if b not in lset]
        crossing = sorted(set(crossing))
        if not crossing or set(crossing) <= removed:
            continue
        u, v = next(e for e in crossing if e not in removed)
        side = u if u in lset else v
        other = v if side == u else u
        w = _contact_voxel(sv, side, other, (1, 1, 1), used_voxels)
        if w is None:
            continue
        used_voxels.add(w)
        removed |= set(crossing)
        muts.append(Mutation("split", (o,), tuple(sorted(left)), tuple(crossing), w))
        n_done += 1
    if n_done < n_splits:
        raise SynthError(f"could place only {n_done} of {n_splits} splits")
    return muts


def inject_errors(gt, supervoxels, mutations) -> SegmentationView:
    """Proposal segmentation: ground-truth graph plus merge edges minus split edges."""
    sv = supervoxels if isinstance(supervoxels, LabelVolume) else LabelVolume(supervoxels)
    edges = set(gt_edges(gt, sv.data))
    vertices = {int(v) for v in sv.labels()}
    for m in mutations:
        if m.kind == "merge":
            for a, b in m.edges:
                if a not in vertices or b not in vertices:
                    raise SynthError(f"merge references unknown supervoxels {a}, {b}")
                edges.add((min(a, b), max(a, b)))
        elif m.kind == "split":
            for e in m.edges:
                e = (min(e), max(e))
                if e[0] not in vertices or e[1] not in vertices:
                    raise SynthError(f"split references unknown supervoxels {e}")
                edges.discard(e)
        else:
            raise SynthError(f"unknown mutation kind {m.kind!r}")
    return SegmentationView(sv, SegGraph(vertices, sorted(edges)))


def occupancy_weights(seg, window=(128, 128, 16)) -> np.ndarray:
    """Inverse of the fraction of the (clipped) window occupied by each voxel's object."""
    seg = as_array(seg)
    window = odd_shape(window)
    rad = radius(window)
    w = np.zeros(seg.shape, np.float64)
    for label, centers in label_bboxes(seg).items():
        crop = centers.dilate(rad).clip(seg.shape)
        local = Box3(crop.local(centers.lo), crop.local(centers.hi))
        count = window_sums(seg[crop.slices] == label, rad, local)
        frac = count / window_volumes(seg.shape, rad, centers)
        here = seg[centers.slices] == label
        w[centers.slices][here] = 1.0 / frac[here]
    return w


def sample_locations(seg, n, window=(128, 128, 16), seed=0) -> np.ndarray:
    """``n`` i.i.d. voxels drawn with probability proportional to the occupancy weights."""
    w = occupancy_weights(seg, window).ravel()
    total = w.sum()
    if total <= 0:
        raise SynthError("no foreground to sample from")
    rng = np.random.default_rng(seed)
    flat = rng.choice(w.size, size=int(n), p=w / total)
    return np.stack(np.unravel_index(flat, as_array(seg).shape), axis=1)


@dataclass
class EvalPoints:
    points: np.ndarray  # (n, 3)
    labels: np.ndarray  # 1 where the small window holds an error

    def __len__(self):
        return len(self.points)


def select_eval_points(gt, proposal, small=(40, 40, 4), large=(80, 80, 8),
                       spacing=(80, 80, 8), n_candidates=2000, seed=0,
                       sampling_window=(128, 128, 16), mode="clipped") -> EvalPoints:
    """Unambiguous, well-separated evaluation points.

    Candidates are drawn with :func:`sample_locations` on the ground truth.
    A candidate is dropped when its large window shows an error that its
    small window does not, or when a kept point of the same object lies
    closer than ``spacing`` on every axis.
    """
    gt, proposal = as_array(gt), as_array(proposal)
    small_spec = ErrorWindowSpec(odd_shape(small), mode)
    large_spec = ErrorWindowSpec(odd_shape(large), mode)
    spacing = np.asarray(spacing)
    kept: dict[int, list] = {}
    points, labels = [], []
    for p in sample_locations(gt, n_candidates, sampling_window, seed):
        p = tuple(int(v) for v in p)
        obj = int(gt[p])
        near = kept.get(obj, [])
        if near and (np.abs(np.asarray(near) - p) < spacing).all(axis=1).any():
            continue
        e_small = error_at(proposal, gt, p, small_spec)
        if not e_small and error_at(proposal, gt, p, large_spec):
            continue
        kept.setdefault(obj, []).append(p)
        points.append(p)
        labels.append(e_small)
    return EvalPoints(np.array(points, dtype=np.int64).reshape(-1, 3),
                      np.array(labels, dtype=np.uint8))


def point_errors(proposal, gt, points, spec: ErrorWindowSpec) -> np.ndarray:
    """Oracle error decision at each point for the proposal object there."""
    return np.array([error_at(proposal, gt, tuple(p), spec) for p in points], dtype=np.uint8)


def save_mutations(mutations, path):
    with open(path, "w") as f:
        json.dump([m.to_json() for m in mutations], f, indent=1)


def load_mutations(path) -> list[Mutation]:
    with open(path) as f:
        return [Mutation.from_json(d) for d in json.load(f)]
