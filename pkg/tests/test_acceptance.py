"""End-to-end acceptance checks, one test per criterion.

Run alone with ``pytest tests/test_acceptance.py``; a PASS/FAIL line per
criterion is printed in the terminal summary.
"""

import math
import time

import numpy as np
import pytest
from scipy.stats import chisquare, ortho_group

from segfix.corrector import (AbstainingCorrector, OracleCorrector, advice_mask, anchor_vector,
                              mask_from_vector_field)
from segfix.errormap import (ErrorWindowSpec, NoisyDetector, OracleDetector, combined_error_map,
                             oracle_error_map)
from segfix.metrics import (ContingencyTable, best_operating_point, contingency, count_point_errors,
                            per_object_vi, pr_curve, rand_scores, vi_scores)
from segfix.refine import RefinementConfig, init_state, run
from segfix.synth import (SynthConfig, generate_gt, generate_mutations, inject_errors,
                          point_errors, sample_locations, select_eval_points)
from conftest import blocky_labels
from oracles import brute_combined, brute_error_map, partition, window_count

SPEC = ErrorWindowSpec((7, 7, 3), "clipped")


def scene(seed, shape, n_objects, merges, splits):
    gt, sv = generate_gt(SynthConfig(shape=shape, n_objects=n_objects, seed=seed))
    muts = generate_mutations(gt, sv, merges, splits, seed=seed)
    return gt, sv, muts, inject_errors(gt, sv, muts)


def test_c01_error_map_matches_brute_force(record_property):
    rng = np.random.default_rng(101)
    fast_time = 0.0
    mismatches = 0
    n = 120
    for i in range(n):
        shape = (int(rng.integers(3, 25)), int(rng.integers(3, 25)), int(rng.integers(1, 9)))
        k = int(rng.integers(2, 7))
        block = (int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 3)))
        gt = blocky_labels(rng, shape, k, block)
        prop = blocky_labels(rng, shape, k, block)
        window = [(3, 3, 1), (5, 5, 3), (7, 5, 3), (3, 3, 3)][i % 4]
        spec = ErrorWindowSpec(window, "valid" if i % 2 else "clipped")
        lab = int(prop.max()) or 1
        t0 = time.perf_counter()
        fast_obj = oracle_error_map(prop == lab, gt, spec).data
        fast = combined_error_map(prop, gt, spec).data
        fast_time += time.perf_counter() - t0
        mismatches += int(np.sum(fast_obj != brute_error_map(prop == lab, gt, window, spec.mode)))
        mismatches += int(np.sum(fast != brute_combined(prop, gt, window, spec.mode)))
    record_property("detail", f"{n} volumes, {mismatches} mismatches, fast path {fast_time:.2f}s")
    assert mismatches == 0
    assert fast_time < 60


def test_c02_vi_decomposition_identity(record_property):
    rng = np.random.default_rng(202)
    worst = 0.0
    for i in range(120):
        cells = int(rng.integers(1, 400))
        budget = 10 ** 6 if i % 10 == 0 else int(rng.integers(cells, 10 ** 6))
        counts = rng.multinomial(budget - cells, np.ones(cells) / cells) + 1
        t = ContingencyTable(rng.integers(1, 40, cells), rng.integers(1, 40, cells), counts)
        assert t.total <= 10 ** 6
        vi, pov = vi_scores(t), per_object_vi(t)
        worst = max(worst, abs(vi.vi_split - np.sum(pov.weight * pov.vi_split)),
                    abs(vi.vi_merge - np.sum(pov.weight * pov.vi_merge)))
    record_property("detail", f"120 tables, worst deviation {worst:.2e}")
    assert worst <= 1e-9


def test_c03_hand_computed_metric_vectors(record_property):
    gt = np.zeros((4, 4, 1), int)
    gt[:2], gt[2:] = 1, 2
    one = np.ones_like(gt)

    def vector(a, b):
        t = contingency(a, b)
        vi, rs = vi_scores(t), rand_scores(t)
        return np.array([vi.vi_split, vi.vi_merge, rs.rand_recall, rs.rand_precision])

    ln2 = math.log(2)
    merged = vector(gt, one)
    split = vector(one, gt)
    err = max(np.abs(merged - [0, ln2, 1, 0.5]).max(), np.abs(split - [ln2, 0, 0.5, 1]).max())
    record_property("detail", f"merged {merged.round(6).tolist()}, split {split.round(6).tolist()}, "
                              f"max error {err:.1e}")
    assert err <= 1e-12


def test_c04_oracle_refinement_end_to_end(record_property):
    t0 = time.perf_counter()
    gt, sv, muts, view = scene(0, (128, 128, 32), 60, 50, 50)
    n_obj = len(gt.labels())
    before_labels = view.render()
    cfg = RefinementConfig(error_spec=SPEC)
    det = OracleDetector(gt, SPEC)
    state = init_state(view, det, cfg)
    rep = run(state, det, OracleCorrector(gt), cfg)
    vi = vi_scores(contingency(gt, state.labels))
    wit = [m.witness for m in muts]
    counts = count_point_errors(point_errors(before_labels, gt.data, wit, SPEC),
                                point_errors(state.labels, gt.data, wit, SPEC))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"{n_obj} objects, {rep.steps} steps, VI=({vi.vi_split}, {vi.vi_merge}), "
                              f"fixed {counts['fixed']}, introduced {counts['introduced']}, "
                              f"{elapsed:.1f}s")
    assert n_obj >= 20
    assert rep.termination == "exhausted"
    assert partition(state.labels) == partition(gt.data)
    assert vi.vi_split == 0 and vi.vi_merge == 0
    assert counts["fixed"] == 100 and counts["introduced"] == 0
    assert elapsed < 300


class CountingCorrector:
    def __init__(self, inner):
        self.inner, self.calls = inner, 0

    def __call__(self, task):
        self.calls += 1
        return self.inner(task)


def test_c05_termination_bound_with_abstaining_corrector(record_property):
    worst = 0.0
    for seed in range(10):
        gt, _, _, view = scene(100 + seed, (48, 48, 12), 14, 4, 4)
        det = OracleDetector(gt, SPEC)
        cfg = RefinementConfig(error_spec=SPEC)
        state = init_state(view, det, cfg)
        corr = CountingCorrector(AbstainingCorrector())
        run(state, det, corr, cfg)
        bound = cfg.max_visits * state.initial_error_voxels
        assert state.initial_error_voxels > 0
        assert corr.calls <= bound
        worst = max(worst, corr.calls / bound)
    record_property("detail", f"10 instances, max calls/bound = {worst:.3f}")


def test_c06_advice_mask_contains_true_object(record_property):
    held, total = 0, 0
    rng = np.random.default_rng(606)
    for seed in range(5):
        gt, _, _, view = scene(200 + seed, (64, 64, 16), 20, 6, 6)
        labels = view.render()
        err = (OracleDetector(gt, SPEC)(labels).data >= 0.25).astype(np.uint8)
        errs, fg = np.argwhere(err > 0), np.argwhere(labels > 0)
        for k in range(200):
            pool = errs if k % 2 == 0 else fg
            c = tuple(int(v) for v in pool[rng.integers(len(pool))])
            task = advice_mask(view, err, c, (33, 33, 9), "clipped", labels)
            g = gt.data[task.box.slices]
            truth = g == gt.data[c]
            held += int(not (truth & ~task.candidate).any())
            total += 1
    record_property("detail", f"containment held in {held}/{total}")
    assert total == 1000 and held == total


def test_c07_local_update_equals_full_recompute(record_property):
    from segfix.corrector import NoisyCorrector

    checks, runs = 0, 0
    for seed in range(20):
        shape = (64, 64, 16) if seed % 4 == 0 else (48, 48, 12)
        gt, _, _, view = scene(300 + seed, shape, 14, 4, 4)
        if seed % 2:
            det = NoisyDetector(gt, SPEC, 0.02, 0.05, seed=seed)
            corr = NoisyCorrector(gt, 0.1, 0.1, seed=seed)
        else:
            det, corr = OracleDetector(gt, SPEC), OracleCorrector(gt)
        cfg = RefinementConfig(error_spec=SPEC, seed=seed,
                               order="random" if seed % 3 == 0 else "lexicographic")
        state = init_state(view, det, cfg)
        bad = []

        def check(st, outcome):
            nonlocal checks
            if outcome != "applied":
                return
            full = det(st.labels).data
            checks += 1
            if not (np.array_equal(st.soft, full)
                    and np.array_equal(st.error, (full >= cfg.threshold).astype(np.uint8))):
                bad.append(st.steps)

        run(state, det, corr, cfg, callback=check)
        runs += 1
        assert not bad, f"run {seed}: maps diverged after steps {bad[:5]}"
    record_property("detail", f"{runs} runs, {checks} applied steps checked, 0 divergences")
    assert runs >= 20 and checks > 0


def test_c08_noisy_detector_operating_point(record_property):
    fp, fn = 0.01, 0.02
    small, large, spacing = (7, 7, 3), (15, 15, 5), (8, 8, 2)
    spec = ErrorWindowSpec(small, "clipped")
    scores, labels, before, after = [], [], [], []
    seed = 0
    while sum(len(l) for l in labels) < 5000:
        gt, _, _, view = scene(seed, (128, 128, 32), 60, 50, 50)
        prop = view.render()
        ep = select_eval_points(gt, prop, small, large, spacing, 12000, seed=seed,
                                sampling_window=(31, 31, 7))
        det = NoisyDetector(gt, spec, fp, fn, seed=seed)
        scores.append(det(prop).data[tuple(ep.points.T)])
        labels.append(ep.labels)
        cfg = RefinementConfig(error_spec=spec)
        state = init_state(view, det, cfg)
        run(state, det, OracleCorrector(gt), cfg)
        before.append(ep.labels)
        after.append(point_errors(state.labels, gt.data, ep.points, spec))
        seed += 1
    s, l = np.concatenate(scores), np.concatenate(labels)
    op = best_operating_point(pr_curve(s, l), 0.95, 0.85)
    counts = count_point_errors(np.concatenate(before), np.concatenate(after))
    reduction = 1 - counts["errors_after"] / counts["errors_before"]
    record_property("detail", f"{len(s)} points over {seed} volumes, operating point {op}, "
                              f"errors {counts['errors_before']} -> {counts['errors_after']} "
                              f"({reduction:.0%} fewer)")
    assert len(s) >= 5000
    assert op is not None and op[2] > 0.95 and op[1] > 0.85
    assert reduction >= 0.5


def test_c09_vector_field_transform(record_property):
    rng = np.random.default_rng(909)
    k = 6
    v = rng.normal(size=(9, 8, 5, k))
    center = (4, 3, 2)
    m_center = mask_from_vector_field(v, v[center])[center]
    worst_formula, worst_rot = 0.0, 0.0
    for _ in range(20):
        v = rng.normal(scale=rng.uniform(0.1, 2), size=(9, 8, 5, k))
        sv = rng.integers(1, 5, v.shape[:3])
        anchor = anchor_vector(v, sv, center)
        m = mask_from_vector_field(v, anchor)
        for c in list(np.ndindex(v.shape[:3]))[::7]:
            d2 = sum((float(v[c][j]) - float(anchor[j])) ** 2 for j in range(k))
            worst_formula = max(worst_formula, abs(m[c] - math.exp(-d2)))
        q = ortho_group.rvs(k, random_state=rng)
        vq = v @ q.T
        mq = mask_from_vector_field(vq, anchor_vector(vq, sv, center))
        worst_rot = max(worst_rot, float(np.abs(mq - m).max()))
    record_property("detail", f"M(centre)={m_center}, formula error {worst_formula:.1e}, "
                              f"rotation error {worst_rot:.1e}")
    assert m_center == 1.0
    assert worst_formula <= 1e-12
    assert worst_rot <= 1e-9


def test_c10_sampling_law_chi_square(record_property):
    seg = np.zeros((16, 16, 4), int)
    seg[:8] = 1  # solid block
    seg[8:, ::4] = 2  # sheets every fourth row: a thin object
    window = (5, 5, 3)
    rad = (2, 2, 1)
    w = np.zeros(seg.shape)
    for c in zip(*np.nonzero(seg)):
        n, size = window_count(seg == seg[c], c, rad)
        w[c] = size / n
    p = w / w.sum()
    n_draws = 10 ** 4
    pts = sample_locations(seg, n_draws, window, seed=10)
    hits = np.zeros(seg.shape)
    np.add.at(hits, tuple(pts.T), 1)
    # bin by object and x slab so every expected count is comfortably above 5
    obs, exp = [], []
    for lab in (1, 2):
        for x in range(16):
            m = np.zeros(seg.shape, bool)
            m[x] = True
            m &= seg == lab
            if m.any():
                obs.append(hits[m].sum())
                exp.append(n_draws * p[m].sum())
    obs, exp = np.array(obs), np.array(exp)
    stat, pval = chisquare(obs, exp)
    ratio = (hits[seg == 2].sum() / (seg == 2).sum()) / (hits[seg == 1].sum() / (seg == 1).sum())
    record_property("detail", f"{len(obs)} bins, chi2={stat:.2f}, p={pval:.3f}, "
                              f"thin/solid per-voxel rate {ratio:.2f}")
    assert exp.min() >= 5
    assert pval > 0.01


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
