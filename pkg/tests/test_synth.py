import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from segfix.errormap import ErrorWindowSpec, combined_error_map
from segfix.metrics import contingency
from segfix.synth import (EvalPoints, Mutation, SynthConfig, SynthError, generate_gt,
                          generate_mutations, inject_errors, load_mutations, near_pairs,
                          occupancy_weights, point_errors, sample_locations, save_mutations,
                          select_eval_points)
from oracles import partition, window_count

SMALL = dict(shape=(40, 40, 10), n_objects=8, supervoxel_cell=(8, 8, 4))


def test_single_object():
    gt, sv = generate_gt(SynthConfig(n_objects=1, seed=4, **{k: v for k, v in SMALL.items()
                                                            if k != "n_objects"}))
    assert gt.labels().tolist() == [1]
    assert np.array_equal(sv.data > 0, gt.data > 0)


def test_determinism():
    a = generate_gt(SynthConfig(seed=9, **SMALL))
    b = generate_gt(SynthConfig(seed=9, **SMALL))
    np.testing.assert_array_equal(a[0].data, b[0].data)
    np.testing.assert_array_equal(a[1].data, b[1].data)


@settings(max_examples=10)
@given(st.integers(0, 10 ** 6))
def test_supervoxels_nest_inside_objects(seed):
    gt, sv = generate_gt(SynthConfig(seed=seed, **SMALL))
    fg = sv.data > 0
    assert np.array_equal(fg, gt.data > 0)
    t = contingency(gt, sv)
    # every supervoxel column touches exactly one ground-truth row
    assert len(np.unique(t.cols)) == len(t.cols)


def test_config_roundtrip():
    c = SynthConfig(seed=3, **SMALL)
    assert SynthConfig.from_dict(c.to_dict()).to_dict() == c.to_dict()
    assert SynthConfig.from_dict({**c.to_dict(), "junk": 1}).seed == 3


def test_impossible_config():
    with pytest.raises(SynthError):
        generate_gt(SynthConfig(shape=(8, 8, 4), n_objects=50, max_attempts=200))


@pytest.fixture(scope="module")
def scene():
    gt, sv = generate_gt(SynthConfig(shape=(64, 64, 16), n_objects=20, seed=5))
    muts = generate_mutations(gt, sv, 6, 6, seed=5)
    return gt, sv, muts


def test_empty_mutations_reproduce_gt(scene):
    gt, sv, _ = scene
    assert partition(inject_errors(gt, sv, []).render()) == partition(gt.data)


def test_one_merge_and_one_split(scene):
    gt, sv, muts = scene
    merge = next(m for m in muts if m.kind == "merge")
    t = contingency(gt, inject_errors(gt, sv, [merge]).render())
    cols, counts = np.unique(t.cols, return_counts=True)
    assert sorted(counts.tolist())[-1] == 2 and (counts > 1).sum() == 1
    assert set(t.rows[t.cols == cols[counts == 2][0]]) == set(merge.objects)
    split = next(m for m in muts if m.kind == "split")
    t = contingency(gt, inject_errors(gt, sv, [split]).render())
    rows, counts = np.unique(t.rows, return_counts=True)
    assert rows[counts == 2].tolist() == list(split.objects) and (counts > 1).sum() == 1


def test_mutations_are_visible_and_distinct(scene):
    gt, sv, muts = scene
    assert sum(m.kind == "merge" for m in muts) == 6 and sum(m.kind == "split" for m in muts) == 6
    merged = {o for m in muts if m.kind == "merge" for o in m.objects}
    split = {o for m in muts if m.kind == "split" for o in m.objects}
    assert not merged & split
    wit = [m.witness for m in muts]
    assert len(set(wit)) == len(wit)
    prop = inject_errors(gt, sv, muts).render()
    spec = ErrorWindowSpec((7, 7, 3), "clipped")
    assert point_errors(prop, gt.data, wit, spec).all()
    assert not point_errors(gt.data, gt.data, wit, spec).any()
    em = combined_error_map(prop, gt, spec).data
    assert all(em[w] for w in wit)


def test_near_pairs_respect_reach(scene):
    gt, sv, _ = scene
    pairs, wit = near_pairs(gt, sv, (2, 2, 1))
    g, s = gt.data, sv.data
    for (a, b), w in zip(pairs[:30], wit[:30]):
        assert g[s == a][0] != g[s == b][0]
        sl = tuple(slice(max(0, c - r), c + r + 1) for c, r in zip(w, (2, 2, 1)))
        assert s[tuple(w)] in (a, b) and {a, b} <= set(np.unique(s[sl]).tolist())


def test_mutation_log_roundtrip(tmp_path, scene):
    _, _, muts = scene
    save_mutations(muts, tmp_path / "m.json")
    assert load_mutations(tmp_path / "m.json") == muts
    with pytest.raises(SynthError):
        inject_errors(scene[0], scene[1], [Mutation("swap", (1,), (1,))])


def test_occupancy_weights_constant_for_filling_object():
    seg = np.ones((9, 9, 3), int)
    w = occupancy_weights(seg, (5, 5, 3))
    np.testing.assert_array_equal(w, 1.0)


def test_occupancy_weights_match_direct_counts(rng):
    seg = rng.integers(0, 4, (10, 9, 4))
    w = occupancy_weights(seg, (5, 3, 3))
    for c in np.ndindex(seg.shape):
        if seg[c] == 0:
            assert w[c] == 0
        else:
            n, size = window_count(seg == seg[c], c, (2, 1, 1))
            assert w[c] == pytest.approx(size / n, rel=1e-12)


def test_sampling_avoids_background():
    seg = np.zeros((12, 12, 3), int)
    seg[2:5, 2:5] = 1
    pts = sample_locations(seg, 500, (5, 5, 3), seed=1)
    assert (seg[tuple(pts.T)] == 1).all()
    with pytest.raises(SynthError):
        sample_locations(np.zeros((3, 3, 3), int), 5)


def test_eval_points_on_perfect_proposal():
    gt, _ = generate_gt(SynthConfig(seed=2, **SMALL))
    ep = select_eval_points(gt, gt, (7, 7, 3), (15, 15, 5), (8, 8, 2), 400, seed=1,
                            sampling_window=(15, 15, 5))
    assert len(ep) > 10 and not ep.labels.any()


def test_eval_points_filter_and_spacing(scene):
    gt, sv, muts = scene
    prop = inject_errors(gt, sv, muts).render()
    small, large, spacing = (7, 7, 3), (15, 15, 5), np.array((8, 8, 2))
    ep = select_eval_points(gt, prop, small, large, tuple(spacing), 1500, seed=3,
                            sampling_window=(15, 15, 5))
    assert ep.labels.any() and isinstance(ep, EvalPoints)
    s_spec, l_spec = ErrorWindowSpec(small, "clipped"), ErrorWindowSpec(large, "clipped")
    np.testing.assert_array_equal(ep.labels, point_errors(prop, gt.data, ep.points, s_spec))
    big = point_errors(prop, gt.data, ep.points, l_spec)
    assert not (big & ~ep.labels.astype(bool)).any()  # no large-only errors survive
    obj = gt.data[tuple(ep.points.T)]
    for i in range(len(ep)):
        for j in range(i):
            if obj[i] == obj[j]:
                assert not (np.abs(ep.points[i] - ep.points[j]) < spacing).all()
