"""Supervoxel graph whose connected components are the current segments.

Edges can be removed as well as added, so components are recomputed by
breadth-first search over the vertices whose component may have changed
rather than maintained with a union-find.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable

import numpy as np
from scipy import ndimage

from .volume import Box3, LabelVolume, as_array


class GraphError(ValueError):
    pass


class SegGraph:
    """Undirected graph over supervoxel ids with a live component index.

    Each component is identified by its smallest member id.
    """

    def __init__(self, vertices: Iterable[int], edges: Iterable = ()):
        self.adj: dict[int, set[int]] = {int(v): set() for v in vertices}
        if any(v <= 0 for v in self.adj):
            raise GraphError("supervoxel ids must be positive")
        self.comp: dict[int, int] = {v: v for v in self.adj}
        self.members: dict[int, set[int]] = {v: {v} for v in self.adj}
        self.update(add=edges)

    @property
    def vertices(self):
        return self.adj.keys()

    def edges(self) -> list[tuple[int, int]]:
        return sorted((a, b) for a, nbrs in self.adj.items() for b in nbrs if a < b)

    def has_edge(self, a, b) -> bool:
        return b in self.adj.get(a, ())

    def num_components(self) -> int:
        return len(self.members)

    def components(self) -> list[set[int]]:
        return [set(m) for _, m in sorted(self.members.items())]

    def _check(self, vs):
        missing = [v for v in vs if v not in self.adj]
        if missing:
            raise GraphError(f"unknown supervoxel(s) {sorted(missing)[:10]}")

    def update(self, add: Iterable = (), remove: Iterable = ()) -> set[int]:
        """Apply a batch of edge insertions and deletions atomically.

        Returns the vertices whose component (as a member set) changed.
        """
        add = [(int(a), int(b)) for a, b in add]
        remove = [(int(a), int(b)) for a, b in remove]
        touched = {v for e in add + remove for v in e}
        self._check(touched)
        if any(a == b for a, b in add):
            raise GraphError("self-loops are not allowed")
        for a, b in remove:
            self.adj[a].discard(b)
            self.adj[b].discard(a)
        for a, b in add:
            self.adj[a].add(b)
            self.adj[b].add(a)
        if not touched:
            return set()

        old_ids = {self.comp[v] for v in touched}
        region = set().union(*(self.members[c] for c in old_ids))
        old = {c: frozenset(self.members.pop(c)) for c in old_ids}
        changed = set()
        seen = set()
        for start in sorted(region):
            if start in seen:
                continue
            comp = self._bfs(start)
            seen |= comp
            cid = min(comp)
            self.members[cid] = comp
            frozen = frozenset(comp)
            for v in comp:
                if old[self.comp[v]] != frozen:
                    changed.add(v)
            for v in comp:
                self.comp[v] = cid
        return changed

    def _bfs(self, start) -> set[int]:
        comp = {start}
        q = deque([start])
        while q:
            u = q.popleft()
            for w in self.adj[u]:
                if w not in comp:
                    comp.add(w)
                    q.append(w)
        return comp

    def add_clique(self, ids: Iterable[int]) -> set[int]:
        ids = sorted({int(v) for v in ids})
        self._check(ids)
        return self.update(add=combinations(ids, 2))

    def cut_between(self, a: Iterable[int], b: Iterable[int]) -> set[int]:
        a, b = {int(v) for v in a}, {int(v) for v in b}
        self._check(a | b)
        doomed = [(u, w) for u in a for w in self.adj[u] if w in b]
        return self.update(remove=doomed)

    def apply_decision(self, merge: Iterable[int], cut: Iterable[int]) -> set[int]:
        """Clique on ``merge`` and removal of merge-cut edges, as one update."""
        merge, cut = sorted(set(merge)), set(cut)
        self._check(set(merge) | cut)
        doomed = [(u, w) for u in merge for w in self.adj[u] if w in cut]
        return self.update(add=combinations(merge, 2), remove=doomed)

    def lookup(self, max_label: int | None = None) -> np.ndarray:
        """Array mapping supervoxel id -> canonical component id (0 -> 0)."""
        top = max(self.adj, default=0)
        n = max(top, max_label or 0) + 1
        lut = np.zeros(n, dtype=np.uint64)
        if self.comp:
            keys = np.fromiter(self.comp.keys(), dtype=np.int64, count=len(self.comp))
            vals = np.fromiter(self.comp.values(), dtype=np.int64, count=len(self.comp))
            lut[keys] = vals
        return lut

    def copy(self) -> "SegGraph":
        g = SegGraph.__new__(SegGraph)
        g.adj = {v: set(n) for v, n in self.adj.items()}
        g.comp = dict(self.comp)
        g.members = {c: set(m) for c, m in self.members.items()}
        return g

    def to_json(self) -> dict:
        return {"vertices": sorted(self.adj), "edges": [list(e) for e in self.edges()]}

    @classmethod
    def from_json(cls, obj) -> "SegGraph":
        return cls(obj["vertices"], [tuple(e) for e in obj["edges"]])

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f)

    @classmethod
    def load(cls, path) -> "SegGraph":
        with open(path) as f:
            return cls.from_json(json.load(f))


def build_graph(supervoxels, initial_merges: Iterable = ()) -> SegGraph:
    data = as_array(supervoxels)
    labels = np.unique(data)
    labels = labels[labels != 0]
    known = set(int(v) for v in labels)
    edges = [(int(a), int(b)) for a, b in initial_merges]
    bad = {v for e in edges for v in e} - known
    if bad:
        raise GraphError(f"edge endpoints not present in the volume: {sorted(bad)[:10]}")
    return SegGraph(known, edges)


@dataclass
class SegmentationView:
    supervoxels: LabelVolume
    graph: SegGraph

    def __post_init__(self):
        if not isinstance(self.supervoxels, LabelVolume):
            self.supervoxels = LabelVolume(self.supervoxels)
        present = self.supervoxels.labels()
        missing = [int(v) for v in present if int(v) not in self.graph.adj]
        if missing:
            raise GraphError(f"supervoxels missing from graph: {missing[:10]}")
        self._bboxes = None

    @property
    def shape(self):
        return self.supervoxels.shape

    def render(self) -> np.ndarray:
        sv = self.supervoxels.data
        return self.graph.lookup(int(sv.max()))[sv]

    def bbox(self, sv_id: int) -> Box3 | None:
        """Bounding box of a supervoxel, cached from one pass over the volume."""
        if self._bboxes is None:
            self._bboxes = ndimage.find_objects(self.supervoxels.data.astype(np.int64))
        i = int(sv_id) - 1
        if i >= len(self._bboxes) or self._bboxes[i] is None:
            return None
        sl = self._bboxes[i]
        return Box3(tuple(s.start for s in sl), tuple(s.stop for s in sl))


def render_labels(view: SegmentationView) -> LabelVolume:
    return LabelVolume(view.render(), view.supervoxels.voxel_size)


def segments_touching(view: SegmentationView, box: Box3, labels=None) -> set[int]:
    """Component ids with at least one voxel inside ``box``."""
    box = box.clip(view.shape)
    if box.is_empty():
        return set()
    if labels is None:
        sv = np.unique(view.supervoxels.data[box.slices])
        return {view.graph.comp[int(v)] for v in sv if v}
    u = np.unique(labels[box.slices])
    return {int(v) for v in u if v}


def rag_edges(supervoxels) -> np.ndarray:
    """Face-adjacent pairs of distinct non-zero labels, as sorted (n, 2) rows."""
    data = as_array(supervoxels).astype(np.int64)
    pairs = []
    for ax in range(3):
        a = np.moveaxis(data, ax, 0)[:-1].ravel()
        b = np.moveaxis(data, ax, 0)[1:].ravel()
        keep = (a != b) & (a != 0) & (b != 0)
        pairs.append(np.stack([np.minimum(a[keep], b[keep]), np.maximum(a[keep], b[keep])], 1))
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(np.concatenate(pairs), axis=0)
