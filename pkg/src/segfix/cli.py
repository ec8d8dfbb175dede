"""Command-line pipeline: synth, detect, correct, refine, evaluate, pr-curve and run.

Every subcommand reads an optional JSON config whose keys mirror the long
flags (``--n-merges`` is ``n_merges``); a flag given on the command line wins.
Reports are JSON with floats written to 17 significant digits.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import corrector as corr
from . import errormap, metrics, refine, synth
from .svgraph import SegGraph, SegmentationView, build_graph
from .volume import Box3, LabelVolume, RawVolume, VolumeError, as_shape3, odd_shape, read_volume, write_volume

log = logging.getLogger("segfix")

EXIT_CODES = {"usage": 2, "load": 3, "synth": 4, "detect": 5, "correct": 6, "refine": 7,
              "evaluate": 8, "pr-curve": 9, "write": 10}


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage

    @property
    def exit_code(self) -> int:
        return EXIT_CODES.get(self.stage, 1)


@contextmanager
def stage(name, timings=None, key=None):
    """Tag any failure inside the block with ``name`` and record its duration."""
    t0 = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as e:  # noqa: BLE001 - every failure becomes a stage error
        raise StageError(name, f"{type(e).__name__}: {e}") from e
    finally:
        if timings is not None:
            timings[key or name] = time.perf_counter() - t0


# ---------------------------------------------------------------- JSON output

def _float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x}")
    s = format(x, ".17g")
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def dumps(obj, indent=1, _level=0) -> str:
    """JSON text with every float written to 17 significant digits."""
    pad = "\n" + " " * (indent * (_level + 1))
    end = "\n" + " " * (indent * _level)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [json.dumps(str(k)) + ": " + dumps(v, indent, _level + 1) for k, v in obj.items()]
        return "{" + pad + ("," + pad).join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool)
               for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[" + pad + ("," + pad).join(dumps(v, indent, _level + 1) for v in obj) + end + "]"
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(obj, path):
    with open(path, "w") as f:
        f.write(dumps(obj) + "\n")


# ----------------------------------------------------------------- backends

@dataclass(frozen=True)
class Backend:
    kind: str
    fp: float = 0.0
    fn: float = 0.0

    def __str__(self):
        return f"noisy:{self.fp!r},{self.fn!r}" if self.kind == "noisy" else self.kind


def parse_backend(text, allowed=("oracle", "noisy")) -> Backend:
    """Parse ``oracle`` or ``noisy:<fp>,<fn>`` (plus any extra kinds in ``allowed``)."""
    if isinstance(text, Backend):
        return text
    text = str(text).strip()
    kind, _, params = text.partition(":")
    if kind not in allowed:
        raise ValueError(f"unknown backend {text!r}; expected one of {', '.join(allowed)}")
    if kind != "noisy":
        if params:
            raise ValueError(f"backend {kind!r} takes no parameters")
        return Backend(kind)
    try:
        fp, fn = (float(v) for v in params.split(","))
    except ValueError:
        raise ValueError(f"expected noisy:<fp>,<fn>, got {text!r}") from None
    for r in (fp, fn):
        if not 0 <= r <= 1:
            raise ValueError(f"rate {r} outside [0, 1]")
    return Backend("noisy", fp, fn)


def make_detector(backend: Backend, gt, spec, seed=0, threads=1):
    if backend.kind == "oracle":
        return errormap.OracleDetector(gt, spec, threads)
    return errormap.NoisyDetector(gt, spec, backend.fp, backend.fn, seed, threads)


CORRECTORS = ("oracle", "noisy", "embedding", "abstain")


def make_corrector(backend: Backend, gt, seed=0):
    if backend.kind == "oracle":
        return corr.OracleCorrector(gt)
    if backend.kind == "noisy":
        return corr.NoisyCorrector(gt, backend.fp, backend.fn, seed)
    if backend.kind == "embedding":
        return corr.EmbeddingCorrector(gt, seed=seed)
    return corr.AbstainingCorrector()


# ------------------------------------------------------------- configuration

def _shape(v):
    if isinstance(v, str):
        v = [int(s) for s in v.split(",")]
    return as_shape3(v)


@dataclass
class EvalSettings:
    small: tuple = (7, 7, 3)
    large: tuple = (15, 15, 5)
    spacing: tuple = (8, 8, 2)
    n_candidates: int = 2000
    sampling_window: tuple = (31, 31, 7)
    include_background: bool = False

    def __post_init__(self):
        for k in ("small", "large", "spacing", "sampling_window"):
            setattr(self, k, _shape(getattr(self, k)))

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}


@dataclass
class PipelineConfig:
    seed: int = 0
    threads: int = 1
    detector: Backend = field(default_factory=lambda: Backend("oracle"))
    corrector: Backend = field(default_factory=lambda: Backend("oracle"))
    out: str = "segfix-out"
    synth: synth.SynthConfig | None = None
    n_merges: int = 10
    n_splits: int = 10
    reach: tuple = (3, 3, 1)
    inputs: dict | None = None
    error_window: errormap.ErrorWindowSpec = field(
        default_factory=lambda: errormap.ErrorWindowSpec((7, 7, 3), "clipped"))
    threshold: float = 0.25
    refinement: refine.RefinementConfig = field(default_factory=refine.RefinementConfig)
    evaluation: EvalSettings = field(default_factory=EvalSettings)
    config_text: str = ""

    @classmethod
    def from_dict(cls, d: dict, text: str = "", base_dir: str = ".", overrides: dict | None = None):
        d = {**d, **{k: v for k, v in (overrides or {}).items() if v is not None}}
        unknown = set(d) - set(cls.__dataclass_fields__) - {"config_text"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        seed = int(d.get("seed", 0))
        if seed < 0:
            raise ValueError("seed must be non-negative")
        threads = int(d.get("threads", 1))
        if threads < 1:
            raise ValueError("threads must be >= 1")
        ew = d.get("error_window", {"shape": (7, 7, 3), "mode": "clipped"})
        spec = errormap.ErrorWindowSpec(odd_shape(ew["shape"]), ew.get("mode", "clipped"))
        threshold = float(d.get("threshold", 0.25))
        rdict = {"error_spec": spec, "threshold": threshold, "seed": seed, **d.get("refinement", {})}
        inputs = d.get("inputs")
        if inputs is not None:
            inputs = {k: os.path.join(base_dir, v) for k, v in inputs.items()}
        sconf = None
        if inputs is None:
            sconf = synth.SynthConfig.from_dict({**d.get("synth", {}), "seed": seed})
        return cls(
            seed=seed, threads=threads,
            detector=parse_backend(d.get("detector", "oracle")),
            corrector=parse_backend(d.get("corrector", "oracle"), CORRECTORS),
            out=d.get("out", "segfix-out"), synth=sconf,
            n_merges=int(d.get("n_merges", 10)), n_splits=int(d.get("n_splits", 10)),
            reach=as_shape3(d.get("reach", (3, 3, 1))), inputs=inputs, error_window=spec,
            threshold=threshold, refinement=refine.RefinementConfig.from_dict(rdict),
            evaluation=EvalSettings(**d.get("evaluation", {})), config_text=text,
        )


def load_config(path, overrides=None) -> PipelineConfig:
    with stage("load"):
        if path is None:
            return PipelineConfig.from_dict({}, "", ".", overrides)
        with open(path) as f:
            text = f.read()
        return PipelineConfig.from_dict(json.loads(text), text,
                                        os.path.dirname(os.path.abspath(path)), overrides)


# ------------------------------------------------------------------ pipeline

@dataclass
class RunReport:
    config_echo: str
    timings: dict
    detect: dict
    refinement: dict
    metrics: dict
    point_errors: dict
    pr: dict
    artifacts: list

    def to_json(self) -> dict:
        return dict(self.__dict__)

    def deterministic(self) -> dict:
        """Report without wall-clock fields."""
        d = self.to_json()
        d.pop("timings")
        return d


def _load_label(path) -> LabelVolume:
    vol = read_volume(path)
    if not isinstance(vol, LabelVolume):
        raise VolumeError(f"{path} holds a {type(vol).__name__}, expected labels")
    return vol


def _load_view(sv_path, graph_path) -> SegmentationView:
    sv = _load_label(sv_path)
    g = SegGraph.load(graph_path) if graph_path else build_graph(sv)
    return SegmentationView(sv, g)


def _summary(em, threshold) -> dict:
    binary = em.data >= threshold
    dom = em.domain
    return {"num_error_voxels": int(binary.sum()),
            "coverage": float(dom.sum() / dom.size),
            "threshold": float(threshold),
            "window": list(em.spec.shape), "mode": em.spec.mode}


def _segmentation_metrics(gt, seg, include_background) -> tuple[dict, metrics.PerObjectVi]:
    t = metrics.contingency(gt, seg, include_background)
    vi = metrics.vi_scores(t)
    rs = metrics.rand_scores(t)
    pov = metrics.per_object_vi(t)
    return {"vi_split": vi.vi_split, "vi_merge": vi.vi_merge,
            "rand": {"recall": rs.rand_recall, "precision": rs.rand_precision},
            "table_stats": t.stats()}, pov


def write_per_object_csv(path, columns: dict):
    """One row per ground-truth object; ``columns`` maps a prefix to PerObjectVi."""
    names = list(columns)
    first = columns[names[0]]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        header = ["id", "weight"]
        for n in names:
            header += [f"{n}_vi_split", f"{n}_vi_merge", f"{n}_vi"]
        w.writerow(header)
        for k, gid in enumerate(first.ids):
            row = [int(gid), _float(float(first.weight[k]))]
            for n in names:
                p = columns[n]
                row += [_float(float(p.vi_split[k])), _float(float(p.vi_merge[k])),
                        _float(float(p.vi[k]))]
            w.writerow(row)


def write_pr_csv(path, curve):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["threshold", "precision", "recall"])
        for thr, p, r in curve:
            w.writerow([_float(thr), _float(p), _float(r)])


def run_pipeline(config: PipelineConfig) -> RunReport:
    """Synthesize or load, detect, refine, evaluate and score the detector."""
    from . import plotting

    out = config.out
    timings: dict = {}
    artifacts = []

    def path(name):
        artifacts.append(name)
        return os.path.join(out, name)

    with stage("write"):
        os.makedirs(out, exist_ok=True)

    if config.inputs is not None:
        with stage("load", timings):
            for key in ("gt", "supervoxels"):
                if key not in config.inputs:
                    raise ValueError(f"inputs lack {key!r}")
            gt = _load_label(config.inputs["gt"])
            view = _load_view(config.inputs["supervoxels"], config.inputs.get("graph"))
            if gt.shape != view.shape:
                raise VolumeError(f"gt {gt.shape} and supervoxels {view.shape} differ in shape")
    else:
        with stage("synth", timings):
            gt, sv = synth.generate_gt(config.synth)
            muts = synth.generate_mutations(gt, sv, config.n_merges, config.n_splits,
                                            config.reach, config.seed)
            view = synth.inject_errors(gt, sv, muts)
        with stage("write"):
            write_volume(gt, path("gt.vol"))
            write_volume(sv, path("supervoxels.vol"))
            view.graph.save(path("proposal_graph.json"))
            synth.save_mutations(muts, path("mutations.json"))

    initial_graph = view.graph.copy()
    before = view.render()
    ev = config.evaluation
    with stage("detect", timings):
        detector = make_detector(config.detector, gt.data, config.error_window, config.seed,
                                 config.threads)
        em = detector(before)
        detect_summary = _summary(em, config.threshold)
    with stage("write"):
        write_volume(RawVolume(em.data.astype(np.float32), gt.voxel_size), path("error_map.vol"))

    with stage("evaluate", timings, "select_points"):
        points = synth.select_eval_points(gt.data, before, ev.small, ev.large, ev.spacing,
                                          ev.n_candidates, config.seed, ev.sampling_window)
        small_spec = errormap.ErrorWindowSpec(odd_shape(ev.small), "clipped")

    with stage("refine", timings):
        correct = make_corrector(config.corrector, gt.data, config.seed + 1)
        state = refine.init_state(view, detector, config.refinement)
        rep = refine.run(state, detector, correct, config.refinement).to_json()
        timings["refine_loop"] = rep.pop("wall_time")
        after = state.labels
    with stage("write"):
        write_volume(LabelVolume(after, gt.voxel_size), path("segmentation.vol"))
        view.graph.save(path("final_graph.json"))

    with stage("evaluate", timings):
        m_before, pov_before = _segmentation_metrics(gt.data, before, ev.include_background)
        m_after, pov_after = _segmentation_metrics(gt.data, after, ev.include_background)
        after_labels = synth.point_errors(after, gt.data, points.points, small_spec)
        perr = {"n_points": len(points), **metrics.count_point_errors(points.labels, after_labels)}
    with stage("write"):
        write_per_object_csv(path("per_object_vi.csv"), {"before": pov_before, "after": pov_after})
        plotting.plot_per_object_vi({"before": pov_before.vi, "after": pov_after.vi},
                                    path("per_object_vi.png"))

    with stage("pr-curve", timings):
        pr = {"n_points": len(points), "base_rate": float(points.labels.mean()) if len(points) else 0.0}
        curve = []
        if points.labels.any():
            if small_spec == config.error_window:
                scores = em.data[tuple(points.points.T)]
            else:
                d2 = make_detector(config.detector, gt.data, small_spec, config.seed, config.threads)
                scores = d2(before).data[tuple(points.points.T)]
            curve = metrics.pr_curve(scores, points.labels)
            op = metrics.best_operating_point(curve)
            pr["operating_point"] = None if op is None else dict(zip(("threshold", "precision", "recall"), op))
        pr["curve"] = [list(c) for c in curve]
    if curve:
        with stage("write"):
            write_pr_csv(path("pr_curve.csv"), curve)
            plotting.plot_pr_curve(curve, path("pr_curve.png"),
                                   None if pr["operating_point"] is None
                                   else tuple(pr["operating_point"].values()))

    report = RunReport(
        config_echo=config.config_text, timings=timings, detect=detect_summary,
        refinement={**rep, "edges_initial": len(initial_graph.edges()),
                    "edges_final": len(view.graph.edges())},
        metrics={"before": m_before, "after": m_after}, point_errors=perr, pr=pr,
        artifacts=sorted(set(artifacts)) + ["report.json"],
    )
    with stage("write"):
        write_json(report.to_json(), os.path.join(out, "report.json"))
    return report


# ------------------------------------------------------------- subcommands

def _settings(args, keys, defaults) -> dict:
    """Config file values overlaid by explicit flags."""
    conf = {}
    if getattr(args, "config", None):
        with stage("load"):
            with open(args.config) as f:
                conf = json.load(f)
    out = {}
    for k in keys:
        v = getattr(args, k, None)
        out[k] = v if v is not None else conf.get(k, defaults.get(k))
    return out


def _spec_from(s) -> errormap.ErrorWindowSpec:
    return errormap.ErrorWindowSpec(odd_shape(_shape(s["window"])), s["mode"])


def cmd_synth(args) -> int:
    keys = ["seed", "out", "n_merges", "n_splits", "reach", "synth"]
    s = _settings(args, keys, {"seed": 0, "out": ".", "n_merges": 10, "n_splits": 10,
                               "reach": "3,3,1", "synth": {}})
    with stage("synth"):
        cfg = synth.SynthConfig.from_dict({**s["synth"], "seed": int(s["seed"])})
        gt, sv = synth.generate_gt(cfg)
        muts = synth.generate_mutations(gt, sv, int(s["n_merges"]), int(s["n_splits"]),
                                        _shape(s["reach"]), int(s["seed"]))
        view = synth.inject_errors(gt, sv, muts)
    with stage("write"):
        os.makedirs(s["out"], exist_ok=True)
        j = lambda n: os.path.join(s["out"], n)  # noqa: E731
        write_volume(gt, j("gt.vol"))
        write_volume(sv, j("supervoxels.vol"))
        write_volume(LabelVolume(view.render(), gt.voxel_size), j("proposal.vol"))
        view.graph.save(j("proposal_graph.json"))
        synth.save_mutations(muts, j("mutations.json"))
        write_json({"config": cfg.to_dict(), "objects": int(gt.labels().size),
                    "supervoxels": int(sv.labels().size), "merges": int(s["n_merges"]),
                    "splits": int(s["n_splits"])}, j("synth.json"))
    return 0


def cmd_detect(args) -> int:
    keys = ["seed", "out", "threads", "detector", "proposal", "gt", "window", "mode", "threshold"]
    s = _settings(args, keys, {"seed": 0, "out": ".", "threads": 1, "detector": "oracle",
                               "window": "7,7,3", "mode": "valid", "threshold": 0.25})
    with stage("load"):
        backend = parse_backend(s["detector"])
        prop, gt = _load_label(s["proposal"]), _load_label(s["gt"])
        spec = _spec_from(s)
    with stage("detect"):
        em = make_detector(backend, gt.data, spec, int(s["seed"]), int(s["threads"]))(prop.data)
        summary = _summary(em, float(s["threshold"]))
    with stage("write"):
        os.makedirs(s["out"], exist_ok=True)
        write_volume(RawVolume(em.data.astype(np.float32), prop.voxel_size),
                     os.path.join(s["out"], "error_map.vol"))
        write_json(summary, os.path.join(s["out"], "detect.json"))
    print(dumps(summary))
    return 0


def cmd_correct(args) -> int:
    keys = ["seed", "out", "threads", "detector", "corrector", "supervoxels", "graph", "gt",
            "error_map", "center", "shape", "window", "mode", "threshold", "lo", "hi"]
    s = _settings(args, keys, {"seed": 0, "out": ".", "threads": 1, "detector": "oracle",
                               "corrector": "oracle", "shape": "33,33,9", "window": "7,7,3",
                               "mode": "clipped", "threshold": 0.25, "lo": 0.1, "hi": 0.9})
    with stage("load"):
        view = _load_view(s["supervoxels"], s["graph"])
        gt = _load_label(s["gt"])
        labels = view.render()
        if s["center"] is None:
            raise ValueError("--center is required")
        center = _shape(s["center"])
        backend = parse_backend(s["corrector"], CORRECTORS)
        if s["error_map"]:
            err = read_volume(s["error_map"]).data
        else:
            det = make_detector(parse_backend(s["detector"]), gt.data, _spec_from(s),
                                int(s["seed"]), int(s["threads"]))
            err = det(labels).data
        binary = (err >= float(s["threshold"])).astype(np.uint8)
    with stage("correct"):
        task = corr.advice_mask(view, binary, center, odd_shape(_shape(s["shape"])), "clipped", labels)
        m = make_corrector(backend, gt.data, int(s["seed"]))(task)
        cbox = corr.central_box(task.box, center)
        scores = corr.score_supervoxels(m, task.supervoxels,
                                        Box3(task.box.local(cbox.lo), task.box.local(cbox.hi)),
                                        candidate=task.candidate)
        decision = corr.decide(scores, float(s["lo"]), float(s["hi"]))
    with stage("write"):
        os.makedirs(s["out"], exist_ok=True)
        write_volume(RawVolume(np.asarray(m, np.float32), view.supervoxels.voxel_size),
                     os.path.join(s["out"], "soft_mask.vol"))
        out = {**decision.to_json(), "box": {"lo": list(task.box.lo), "hi": list(task.box.hi)},
               "scores": {str(k): v for k, v in sorted(scores.items())}}
        write_json(out, os.path.join(s["out"], "decision.json"))
    print(dumps(decision.to_json()))
    return 0


def cmd_refine(args) -> int:
    keys = ["seed", "out", "threads", "detector", "corrector", "supervoxels", "graph", "gt",
            "refinement"]
    s = _settings(args, keys, {"seed": 0, "out": ".", "threads": 1, "detector": "oracle",
                               "corrector": "oracle", "refinement": {}})
    with stage("load"):
        view = _load_view(s["supervoxels"], s["graph"])
        gt = _load_label(s["gt"])
        rconf = refine.RefinementConfig.from_dict({"seed": int(s["seed"]), **s["refinement"]})
        detector = make_detector(parse_backend(s["detector"]), gt.data, rconf.error_spec,
                                 int(s["seed"]), int(s["threads"]))
        correct = make_corrector(parse_backend(s["corrector"], CORRECTORS), gt.data, int(s["seed"]) + 1)
    with stage("refine"):
        state = refine.init_state(view, detector, rconf)
        rep = refine.run(state, detector, correct, rconf)
    with stage("write"):
        os.makedirs(s["out"], exist_ok=True)
        write_volume(LabelVolume(state.labels, gt.voxel_size), os.path.join(s["out"], "segmentation.vol"))
        view.graph.save(os.path.join(s["out"], "final_graph.json"))
        write_json(rep.to_json(), os.path.join(s["out"], "refinement.json"))
    print(dumps(rep.to_json()))
    return 0


def _read_points(path) -> np.ndarray:
    with open(path) as f:
        d = json.load(f)
    if isinstance(d, dict):
        d = d["points"]
    if isinstance(d, list) and d and isinstance(d[0], dict):
        d = [p["witness"] for p in d if p.get("witness") is not None]  # a mutation log
    return np.asarray(d, dtype=np.int64).reshape(-1, 3)


def cmd_evaluate(args) -> int:
    keys = ["out", "gt", "proposal", "points", "window", "mode", "include_background"]
    s = _settings(args, keys, {"out": ".", "window": "7,7,3", "mode": "clipped",
                               "include_background": False})
    with stage("load"):
        gt, prop = _load_label(s["gt"]), _load_label(s["proposal"])
        pts = _read_points(s["points"]) if s["points"] else None
    with stage("evaluate"):
        report, pov = _segmentation_metrics(gt.data, prop.data, bool(s["include_background"]))
        report["per_object"] = list(pov.rows())
        if pts is not None:
            dec = synth.point_errors(prop.data, gt.data, pts, _spec_from(s))
            report["points"] = {"n_points": int(len(pts)), "errors": int(dec.sum()),
                                "decisions": dec.tolist()}
    with stage("write"):
        from . import plotting
        os.makedirs(s["out"], exist_ok=True)
        write_json(report, os.path.join(s["out"], "evaluate.json"))
        write_per_object_csv(os.path.join(s["out"], "per_object_vi.csv"), {"proposal": pov})
        plotting.plot_per_object_vi({"proposal": pov.vi}, os.path.join(s["out"], "per_object_vi.png"))
    print(dumps({k: report[k] for k in ("vi_split", "vi_merge", "rand")}))
    return 0


def cmd_pr_curve(args) -> int:
    keys = ["seed", "out", "threads", "detector", "gt", "proposal", "evaluation"]
    s = _settings(args, keys, {"seed": 0, "out": ".", "threads": 1, "detector": "oracle",
                               "evaluation": {}})
    with stage("load"):
        gt, prop = _load_label(s["gt"]), _load_label(s["proposal"])
        ev = EvalSettings(**s["evaluation"])
        backend = parse_backend(s["detector"])
    with stage("pr-curve"):
        seed = int(s["seed"])
        points = synth.select_eval_points(gt.data, prop.data, ev.small, ev.large, ev.spacing,
                                          ev.n_candidates, seed, ev.sampling_window)
        spec = errormap.ErrorWindowSpec(odd_shape(ev.small), "clipped")
        em = make_detector(backend, gt.data, spec, seed, int(s["threads"]))(prop.data)
        curve = metrics.pr_curve(em.data[tuple(points.points.T)], points.labels)
        op = metrics.best_operating_point(curve)
    with stage("write"):
        from . import plotting
        os.makedirs(s["out"], exist_ok=True)
        write_pr_csv(os.path.join(s["out"], "pr_curve.csv"), curve)
        plotting.plot_pr_curve(curve, os.path.join(s["out"], "pr_curve.png"), op)
        result = {"n_points": len(points), "base_rate": float(points.labels.mean()),
                  "detector": str(backend), "evaluation": ev.to_dict(),
                  "operating_point": None if op is None else
                  dict(zip(("threshold", "precision", "recall"), op)),
                  "curve": [list(c) for c in curve]}
        write_json(result, os.path.join(s["out"], "pr_curve.json"))
    print(dumps({k: result[k] for k in ("n_points", "base_rate", "operating_point")}))
    return 0


def cmd_run(args) -> int:
    overrides = {"seed": args.seed, "threads": args.threads, "detector": args.detector,
                 "corrector": args.corrector, "out": args.out}
    config = load_config(args.config, overrides)
    report = run_pipeline(config)
    print(dumps({"metrics": {k: {m: v[m] for m in ("vi_split", "vi_merge")}
                             for k, v in report.metrics.items()},
                 "point_errors": report.point_errors}))
    return 0


def _u64(text) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="segfix", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, detector=False, corrector=False):
        sp.add_argument("--config", help="JSON file whose keys mirror the flags")
        sp.add_argument("--seed", type=_u64)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--out", help="output directory")
        if detector:
            sp.add_argument("--detector", help="oracle | noisy:<fp>,<fn>")
        if corrector:
            sp.add_argument("--corrector", help="oracle | noisy:<fp>,<fn> | embedding | abstain")
        return sp

    s = common(sub.add_parser("synth", help="synthetic ground truth, supervoxels and errors"))
    s.add_argument("--n-merges", type=int)
    s.add_argument("--n-splits", type=int)
    s.add_argument("--reach")

    s = common(sub.add_parser("detect", help="error map of a proposal"), detector=True)
    s.add_argument("--proposal")
    s.add_argument("--gt")
    s.add_argument("--window", help="x,y,z (odd)")
    s.add_argument("--mode", choices=["valid", "clipped"])
    s.add_argument("--threshold", type=float)

    s = common(sub.add_parser("correct", help="one pruning task and its decision"),
               detector=True, corrector=True)
    for k in ("--supervoxels", "--graph", "--gt", "--error-map", "--center", "--shape", "--window"):
        s.add_argument(k)
    s.add_argument("--mode", choices=["valid", "clipped"])
    for k in ("--threshold", "--lo", "--hi"):
        s.add_argument(k, type=float)

    s = common(sub.add_parser("refine", help="iterative refinement of a supervoxel graph"),
               detector=True, corrector=True)
    for k in ("--supervoxels", "--graph", "--gt"):
        s.add_argument(k)

    s = common(sub.add_parser("evaluate", help="VI, Rand and per-object scores"))
    for k in ("--gt", "--proposal", "--points", "--window"):
        s.add_argument(k)
    s.add_argument("--mode", choices=["valid", "clipped"])
    s.add_argument("--include-background", action="store_true", default=None)

    s = common(sub.add_parser("pr-curve", help="detector precision-recall at evaluation points"),
               detector=True)
    for k in ("--gt", "--proposal"):
        s.add_argument(k)

    common(sub.add_parser("run", help="the whole pipeline from one config"),
           detector=True, corrector=True)
    return p


COMMANDS = {"synth": cmd_synth, "detect": cmd_detect, "correct": cmd_correct,
            "refine": cmd_refine, "evaluate": cmd_evaluate, "pr-curve": cmd_pr_curve,
            "run": cmd_run}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SEGFIX_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return COMMANDS[args.command](args)
    except StageError as e:
        log.error("%s", e)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
