import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import memory_run, transition_schedule
from ivskit import ivs
from ivskit import segment as sg
from ivskit.imgcore import FrameRef, GrayImage
from ivskit.ivs import HeatFluxFrameSet, TrialPlan, compute_pair_ivs, sample_pairs
from ivskit.segment import SegmenterConfig
from ivskit.synth import RegimeLevel, RegimeSchedule


def refs(set_id, n):
    return tuple(FrameRef(set_id, i, f"{set_id}/{i}.pgm") for i in range(n))


def test_sample_pool_of_two_is_forced():
    fs = HeatFluxFrameSet("A", 1.0, refs("A", 2))
    for t in range(5):
        assert set(sample_pairs(fs, t, TrialPlan())) == set(fs.frames)


def test_sampling_reproducible_and_trial_dependent():
    fs = HeatFluxFrameSet("A", 1.0, refs("A", 3000))
    plan = TrialPlan(rng_seed=123)
    draws = [sample_pairs(fs, t, plan) for t in range(7)]
    assert draws == [sample_pairs(fs, t, plan) for t in range(7)]
    assert draws[0] != draws[1]
    assert all(a != b for a, b in draws)


def test_sampling_keyed_by_set_id_and_seed():
    a = HeatFluxFrameSet("A", 1.0, refs("X", 500))
    b = HeatFluxFrameSet("B", 1.0, refs("X", 500))
    assert sample_pairs(a, 0, TrialPlan()) != sample_pairs(b, 0, TrialPlan())
    assert sample_pairs(a, 0, TrialPlan(rng_seed=1)) != sample_pairs(a, 0, TrialPlan(rng_seed=2))


def test_sampling_needs_two_frames():
    with pytest.raises(ValueError, match="at least two"):
        sample_pairs(HeatFluxFrameSet("A", 1.0, refs("A", 1)), 0, TrialPlan())


def test_validation():
    with pytest.raises(ValueError):
        HeatFluxFrameSet("A", 0.0, refs("A", 2))
    with pytest.raises(ValueError):
        HeatFluxFrameSet("A", 1.0, ())
    with pytest.raises(ValueError):
        TrialPlan(n_trials=0)
    with pytest.raises(ValueError):
        ivs.check_run([HeatFluxFrameSet("A", 1.0, refs("A", 2))])
    with pytest.raises(ValueError, match="increasing"):
        ivs.check_run([HeatFluxFrameSet("A", 2.0, refs("A", 2)),
                       HeatFluxFrameSet("B", 1.0, refs("B", 2))])


def _identical_run(image, n_sets=3):
    sets = [HeatFluxFrameSet(f"S{i}", 10.0 * (i + 1), refs("pool", 2)) for i in range(n_sets)]
    return sets, (lambda ref: image)


def test_identical_sets_are_fully_similar(textured_image):
    sets, loader = _identical_run(textured_image)
    recs = compute_pair_ivs(sets, TrialPlan(n_trials=3), loader=loader)
    for r in recs:
        assert r.phys == 100.0 and r.morph_norm == 100.0
        assert r.ivs == pytest.approx(100.0, abs=2.5)


def test_duplicated_frame_pool_across_levels():
    sched = RegimeSchedule(levels=(RegimeLevel(10.0, 6, n_small=6),), frames_per_level=3)
    sets, loader, _, _ = memory_run(sched, 5)
    (base,) = sets
    run = [HeatFluxFrameSet(f"S{q}", q, base.frames) for q in (10.0, 20.0, 30.0)]
    recs = compute_pair_ivs(run, TrialPlan(n_trials=7), loader=loader)
    assert max(r.morph_norm for r in recs) == 100.0
    assert all(r.ivs > 60 for r in recs)


def _transition(seed=0, **kw):
    sets, loader, mask_loader, _ = memory_run(transition_schedule(3), seed)
    return sets, compute_pair_ivs(sets, TrialPlan(rng_seed=seed), loader=loader,
                                  mask_loader=mask_loader, **kw)


def _loaders(seed=0):
    _, loader, mask_loader, _ = memory_run(transition_schedule(3), seed)
    return loader, mask_loader


@pytest.fixture(scope="module")
def transition():
    return _transition(0)


def test_transition_is_localized(transition):
    sets, recs = transition
    assert len(recs) == len(sets) - 1
    i = int(np.argmin([r.ivs for r in recs]))
    assert (recs[i].q_n, recs[i].q_n1) == (30.0, 40.0)
    assert sg.OUT_OF_RANGE in recs[i].flags


def test_record_invariants(transition):
    _, recs = transition
    for r in recs:
        assert r.q_mid == (r.q_n + r.q_n1) / 2 and r.delta_q == r.q_n1 - r.q_n > 0
        assert r.ivs == 0.5 * r.phys + 0.5 * r.morph_norm
        assert r.phys == pytest.approx(np.mean([p for _, p in r.trial_values]), abs=1e-12)
        assert r.morph_raw == pytest.approx(np.mean([m for m, _ in r.trial_values]), abs=1e-15)
        assert len(r.running_mean) == 7
        assert r.running_mean[-1] == pytest.approx(r.ivs, abs=1e-9)
    assert max(r.morph_norm for r in recs) == pytest.approx(100.0, abs=1e-9)
    assert sum(abs(r.morph_norm - 100.0) <= 1e-9 for r in recs) >= 1


@pytest.mark.parametrize("c", [2.0, 0.5])
def test_scale_hook_leaves_morph_norm(transition, c):
    sets, recs = transition
    scaled = compute_pair_ivs(sets, TrialPlan(rng_seed=0), loader=_loaders()[0], mbar_scale=c)
    assert [r.morph_norm for r in scaled] == [r.morph_norm for r in recs]


def test_phys_shift_moves_ivs_by_half(monkeypatch, transition):
    sets, recs = transition
    real = ivs.physical_similarity
    monkeypatch.setattr(ivs, "physical_similarity",
                        lambda a, b: sg.PhysResult(real(a, b).value + 6.0, real(a, b).flags))
    shifted = compute_pair_ivs(sets, TrialPlan(rng_seed=0), loader=_loaders()[0])
    for a, b in zip(recs, shifted):
        assert b.ivs - a.ivs == pytest.approx(3.0, abs=1e-9)


def test_pair_independence():
    sched = transition_schedule(3)
    sets, loader, _, _ = memory_run(sched, 1)
    other_sets, other_loader, _, _ = memory_run(sched, 2)
    # the last set gets an unrelated pool under new keys
    alien = other_sets[-1].frames
    swapped = HeatFluxFrameSet("X", sets[-1].q, tuple(
        FrameRef("X", r.frame_index, "alien/" + r.key) for r in alien))

    def mixed_loader(ref):
        if ref.frame_set_id == "X":
            return other_loader(alien[ref.frame_index])
        return loader(ref)

    base = compute_pair_ivs(sets, TrialPlan(n_trials=3), loader=loader)
    changed = compute_pair_ivs(sets[:-1] + [swapped], TrialPlan(n_trials=3), loader=mixed_loader)
    for a, b in zip(base[:-1], changed[:-1]):
        assert a.trial_values == b.trial_values
        assert a.morph_raw == b.morph_raw and a.phys == b.phys
    assert base[-1].trial_values != changed[-1].trial_values


def test_running_means():
    assert ivs.running_means([5.0, 5.0, 5.0]) == (5.0, 5.0, 5.0)
    assert ivs.running_means([0.0, 100.0]) == (0.0, 50.0)


def test_convergence_trace_within_band(transition):
    _, recs = transition
    for r in recs:
        assert ivs.convergence_trace(r) == list(r.running_mean)
        assert ivs.convergence_gap(r, 5) <= ivs.convergence_band(r) + 1e-12
        assert ivs.convergence_gap(r, 7) == 0.0


def test_convergence_band_recovers_trial_spread():
    rec = ivs.IvsRecord("a", "b", 1, 2, 1.5, 1, 0, 0, 0, 0, (), ivs.running_means([0.0, 100.0]))
    assert ivs.convergence_band(rec) == pytest.approx(50.0)


def test_zero_keypoint_pair_is_excluded(textured_image):
    blank = GrayImage(np.full((160, 160), 0.85))
    frames = {"A": blank, "B": textured_image, "C": textured_image}
    sets = [HeatFluxFrameSet(k, 10.0 * (i + 1), refs(k, 2)) for i, k in enumerate("ABC")]
    recs = compute_pair_ivs(sets, TrialPlan(n_trials=2), loader=lambda r: frames[r.frame_set_id])
    # the blank lower-flux set has no keypoints: scored 0 and kept out of the max
    assert recs[0].morph_norm == 0.0
    assert {ivs.EXCLUDED_FROM_MAX, "zero_keypoints", sg.DEGENERATE_HISTOGRAM} <= set(recs[0].flags)
    assert recs[1].morph_norm == 100.0 and ivs.EXCLUDED_FROM_MAX not in recs[1].flags


def test_empty_upper_set_is_scored_not_excluded(textured_image):
    blank = GrayImage(np.full((160, 160), 0.85))
    frames = {"A": textured_image, "B": blank}
    sets = [HeatFluxFrameSet(k, 10.0 * (i + 1), refs(k, 2)) for i, k in enumerate("AB")]
    (rec,) = compute_pair_ivs(sets, TrialPlan(n_trials=1), loader=lambda r: frames[r.frame_set_id])
    # the first image has keypoints, so the 0 score is a genuine result
    assert rec.morph_raw == 0.0 and ivs.EXCLUDED_FROM_MAX not in rec.flags


def test_all_pairs_degenerate_have_no_reference():
    blank = GrayImage(np.full((64, 64), 0.85))
    sets = [HeatFluxFrameSet(k, 10.0 * (i + 1), refs(k, 2)) for i, k in enumerate("AB")]
    (rec,) = compute_pair_ivs(sets, TrialPlan(n_trials=1), loader=lambda r: blank)
    assert ivs.NO_REFERENCE in rec.flags and ivs.EXCLUDED_FROM_MAX in rec.flags
    assert rec.morph_norm == 0.0


def test_normalize_morphological():
    norm, ref = ivs.normalize_morphological([0.2, 0.4, 0.1])
    assert ref == 0.4 and norm == [50.0, 100.0, 25.0]
    norm, ref = ivs.normalize_morphological([0.2, 0.9], excluded=[False, True])
    assert norm == [100.0, 0.0]
    assert ivs.normalize_morphological([0.0, 0.0]) == ([0.0, 0.0], None)


def test_reference_max_overrides_run_max(transition):
    sets, recs = transition
    ref = max(r.morph_raw for r in recs) * 2
    again = compute_pair_ivs(sets, TrialPlan(rng_seed=0), loader=_loaders()[0], reference_max=ref)
    assert [r.morph_norm for r in again] == pytest.approx([r.morph_norm / 2 for r in recs], abs=1e-9)


def test_external_masks_use_ground_truth(transition):
    sets, _ = transition
    loader, mask_loader = _loaders()
    ext = compute_pair_ivs(sets, TrialPlan(rng_seed=0, n_trials=2), loader=loader,
                           mask_loader=mask_loader, seg=SegmenterConfig(mode="external"))
    i = int(np.argmin([r.ivs for r in ext]))
    assert i == 2


def test_independent_sampling_changes_only_phys(transition):
    sets, recs = transition
    indep = compute_pair_ivs(sets, TrialPlan(rng_seed=0, independent_phys_sampling=True),
                             loader=_loaders()[0])
    assert [r.morph_raw for r in indep] == [r.morph_raw for r in recs]
    assert [r.phys for r in indep] != [r.phys for r in recs]


def test_csv_is_deterministic(transition):
    sets, recs = transition
    again = compute_pair_ivs(sets, TrialPlan(rng_seed=0), loader=_loaders()[0])
    assert ivs.records_to_csv(recs) == ivs.records_to_csv(again)
    text = ivs.records_to_csv(recs)
    header = text.splitlines()[0].split(",")
    assert tuple(header) == ivs.CSV_COLUMNS
    assert len(text.splitlines()) == len(recs) + 1


def test_csv_round_trip(tmp_path, transition):
    _, recs = transition
    (tmp_path / "ivs.csv").write_text(ivs.records_to_csv(recs))
    rows = ivs.read_ivs_csv(tmp_path / "ivs.csv")
    assert [r["ivs"] for r in rows] == [r.ivs for r in recs]
    assert [r["q_mid"] for r in rows] == [r.q_mid for r in recs]


def test_json_report(transition):
    import json

    _, recs = transition
    data = json.loads(ivs.records_to_json(recs, {"rng_seed": 0}))
    assert data["meta"] == {"rng_seed": 0}
    assert [r["ivs"] for r in data["records"]] == [r.ivs for r in recs]
    assert all(math.isfinite(r["convergence_band"]) for r in data["records"])
