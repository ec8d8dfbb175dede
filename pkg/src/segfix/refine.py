"""Iterative refinement: detect, advise, prune, and update the supervoxel graph."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .corrector import advice_mask, central_box, decide, score_supervoxels
from .errormap import ErrorWindowSpec
from .svgraph import SegmentationView
from .volume import Box3, odd_shape

log = logging.getLogger(__name__)

APPLIED, ABSTAINED, EXHAUSTED = "applied", "abstained", "exhausted"
COVERAGE_MODES = ("window", "central", "center")


@dataclass
class RefinementConfig:
    corrector_window: tuple = (33, 33, 9)
    error_spec: ErrorWindowSpec = field(default_factory=lambda: ErrorWindowSpec((7, 7, 3), "clipped"))
    threshold: float = 0.25
    lo: float = 0.1
    hi: float = 0.9
    max_visits: int = 2
    order: str = "lexicographic"
    coverage: str = "central"
    window_mode: str = "clipped"
    max_steps: int | None = None
    seed: int = 0

    def __post_init__(self):
        self.corrector_window = odd_shape(self.corrector_window)
        if isinstance(self.error_spec, dict):
            self.error_spec = ErrorWindowSpec(odd_shape(self.error_spec["shape"]),
                                              self.error_spec.get("mode", "clipped"))
        if self.max_visits < 1:
            raise ValueError("max_visits must be >= 1")
        if not (0 <= self.lo < self.hi <= 1):
            raise ValueError(f"need 0 <= lo < hi <= 1, got {self.lo}, {self.hi}")
        if not 0 <= self.threshold <= 1:
            raise ValueError("threshold must lie in [0, 1]")
        if self.coverage not in COVERAGE_MODES:
            raise ValueError(f"coverage must be one of {COVERAGE_MODES}")
        if self.order not in ("lexicographic", "random"):
            raise ValueError(f"unknown order {self.order!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "RefinementConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self) -> dict:
        return {
            "corrector_window": list(self.corrector_window),
            "error_spec": {"shape": list(self.error_spec.shape), "mode": self.error_spec.mode},
            "threshold": self.threshold, "lo": self.lo, "hi": self.hi,
            "max_visits": self.max_visits, "order": self.order, "coverage": self.coverage,
            "window_mode": self.window_mode, "max_steps": self.max_steps, "seed": self.seed,
        }


@dataclass
class RefinementState:
    view: SegmentationView
    labels: np.ndarray  # rendered segmentation, kept in sync with the graph
    soft: np.ndarray  # detector output
    error: np.ndarray  # binarized combined error map (uint8)
    visits: np.ndarray
    ever: np.ndarray  # voxels marked as errors at any point
    raw: np.ndarray | None = None
    steps: int = 0
    applied: int = 0
    abstained: int = 0
    edges_added: int = 0
    edges_removed: int = 0
    initial_error_voxels: int = 0
    rng: np.random.Generator | None = None
    history: list = field(default_factory=list)


@dataclass
class RefinementReport:
    steps: int
    applied: int
    abstained: int
    edges_added: int
    edges_removed: int
    initial_error_voxels: int
    final_error_voxels: int
    ever_error_voxels: int
    wall_time: float
    termination: str

    def to_json(self) -> dict:
        return dict(self.__dict__)


def init_state(view: SegmentationView, detector, config: RefinementConfig, raw=None) -> RefinementState:
    labels = view.render()
    soft = detector(labels, None, raw).data.astype(np.float32)
    error = (soft >= config.threshold).astype(np.uint8)
    return RefinementState(
        view=view, labels=labels, soft=soft, error=error,
        visits=np.zeros(labels.shape, np.int32), ever=error.astype(bool),
        raw=raw, initial_error_voxels=int(error.sum()),
        rng=np.random.default_rng(config.seed),
    )


def _next_location(state: RefinementState, config: RefinementConfig):
    selectable = (state.error > 0) & (state.visits < config.max_visits)
    if config.order == "lexicographic":
        flat = int(np.argmax(selectable))
        if not selectable.flat[flat]:
            return None
    else:
        idx = np.flatnonzero(selectable)
        if idx.size == 0:
            return None
        flat = int(idx[state.rng.integers(idx.size)])
    return tuple(int(v) for v in np.unravel_index(flat, selectable.shape))


def update_error_map_local(state: RefinementState, detector, changed, config: RefinementConfig):
    """Re-run the detector around every supervoxel whose segment changed.

    The region is the union of the changed supervoxels' bounding boxes grown by
    the error-window radius; each connected piece of it is evaluated once.
    Returns the number of voxels re-evaluated.
    """
    if not changed:
        return 0
    shape = state.labels.shape
    rad = config.error_spec.radius
    region = np.zeros(shape, bool)
    for s in changed:
        box = state.view.bbox(s)
        if box is not None:
            region[box.dilate(rad).clip(shape).slices] = True
    pieces, _ = ndimage.label(region)
    touched = 0
    for sl in ndimage.find_objects(pieces):
        box = Box3(tuple(s.start for s in sl), tuple(s.stop for s in sl))
        em = detector(state.labels, box, state.raw)
        state.soft[box.slices] = em.data
        binary = (em.data >= config.threshold).astype(np.uint8)
        state.error[box.slices] = binary
        state.ever[box.slices] |= binary.astype(bool)
        touched += box.size
    return touched


def _footprint(task_box: Box3, center, config: RefinementConfig) -> Box3:
    if config.coverage == "window":
        return task_box
    if config.coverage == "central":
        return central_box(task_box, center)
    return Box3(center, tuple(c + 1 for c in center))


def step(state: RefinementState, detector, corrector, config: RefinementConfig) -> str:
    loc = _next_location(state, config)
    if loc is None:
        return EXHAUSTED
    task = advice_mask(state.view, state.error, loc, config.corrector_window,
                       mode=config.window_mode, labels=state.labels, raw=state.raw)
    m = corrector(task)
    cbox = central_box(task.box, loc)
    scores = score_supervoxels(m, task.supervoxels,
                               Box3(task.box.local(cbox.lo), task.box.local(cbox.hi)),
                               candidate=task.candidate)
    decision = decide(scores, config.lo, config.hi)
    state.steps += 1
    if decision.abstain:
        state.abstained += 1
        outcome = ABSTAINED
    else:
        g = state.view.graph
        merge = sorted(decision.merge)
        added = sum(not g.has_edge(a, b) for i, a in enumerate(merge) for b in merge[i + 1:])
        removed = sum(1 for u in merge for w in g.adj[u] if w in decision.cut)
        changed = g.apply_decision(decision.merge, decision.cut)
        state.edges_added += added
        state.edges_removed += removed
        if changed:
            state.labels = state.view.render()
            update_error_map_local(state, detector, changed, config)
        state.applied += 1
        outcome = APPLIED
    state.visits[_footprint(task.box, loc, config).slices] += 1
    state.history.append((loc, outcome))
    return outcome


def run(state: RefinementState, detector, corrector, config: RefinementConfig,
        callback=None) -> RefinementReport:
    """Step until no error voxel has been visited fewer than ``max_visits`` times."""
    t0 = time.perf_counter()
    termination = "exhausted"
    while True:
        if config.max_steps is not None and state.steps >= config.max_steps:
            termination = "max_steps"
            break
        outcome = step(state, detector, corrector, config)
        if outcome == EXHAUSTED:
            break
        if callback is not None:
            callback(state, outcome)
    report = RefinementReport(
        steps=state.steps, applied=state.applied, abstained=state.abstained,
        edges_added=state.edges_added, edges_removed=state.edges_removed,
        initial_error_voxels=state.initial_error_voxels,
        final_error_voxels=int(state.error.sum()), ever_error_voxels=int(state.ever.sum()),
        wall_time=time.perf_counter() - t0, termination=termination,
    )
    log.info("refinement finished after %d steps (%d applied, %d abstained)",
             report.steps, report.applied, report.abstained)
    return report
