import numpy as np
import pytest
import torch

from gazerep.data import (
    AugmentRanges,
    ImageStore,
    LabelAccessError,
    Manifest,
    PairPolicy,
    SampleRecord,
    augment,
    load_image,
    sample_pairs,
)
from gazerep.synth import RenderSpec, generate_dataset


def _record(person, frame, pose=(0.0, 0.0, 0.0), gaze=None, split="train"):
    return SampleRecord(
        image_path=f"{person}_{frame}.png",
        person_id=person,
        frame_index=frame,
        head_pose=pose,
        gaze=gaze,
        split=split,
    )


def _manifest(persons, frames, **kw):
    recs = [_record(p, f, **kw) for p in persons for f in range(frames)]
    return Manifest(recs)


def test_temporal_window_respected():
    manifest = _manifest(["a"], 31)
    pairs, skipped = sample_pairs(manifest, PairPolicy(mode="temporal", window=(10, 20)), 0)
    assert skipped == 0
    assert pairs
    for x, y in pairs:
        assert 10 <= abs(x.frame_index - y.frame_index) <= 20


def test_no_cross_person_pairs():
    manifest = _manifest(["a", "b"], 10)
    pairs, _ = sample_pairs(manifest, PairPolicy(mode="random"), 0)
    assert pairs
    for x, y in pairs:
        assert x.person_id == y.person_id


def test_pairs_deterministic_for_seed():
    manifest = _manifest(["a", "b"], 12)
    p1, _ = sample_pairs(manifest, PairPolicy(mode="random", max_pairs=50), 7)
    p2, _ = sample_pairs(manifest, PairPolicy(mode="random", max_pairs=50), 7)
    assert [(x.image_path, y.image_path) for x, y in p1] == [
        (x.image_path, y.image_path) for x, y in p2
    ]


def test_single_image_person_skipped_in_temporal_mode():
    recs = [_record("solo", 0)] + [_record("duo", f) for f in range(25)]
    manifest = Manifest(recs)
    pairs, skipped = sample_pairs(manifest, PairPolicy(mode="temporal"), 0)
    assert skipped == 1
    assert all(x.person_id == "duo" for x, _ in pairs)


def test_head_pose_threshold_filters_random_pairs():
    recs = [
        _record("a", 0, pose=(0.0, 0.0, 0.0)),
        _record("a", 1, pose=(2.0, 2.0, 0.0)),
        _record("a", 2, pose=(50.0, 50.0, 0.0)),
    ]
    pairs, _ = sample_pairs(Manifest(recs), PairPolicy(mode="random"), 0)
    frames = {frozenset((x.frame_index, y.frame_index)) for x, y in pairs}
    assert frames == {frozenset((0, 1))}


def test_max_pairs_cap():
    manifest = _manifest(["a"], 30)
    pairs, _ = sample_pairs(manifest, PairPolicy(mode="random", max_pairs=17), 0)
    assert len(pairs) == 17


def test_empty_manifest_rejected():
    with pytest.raises(ValueError):
        sample_pairs(Manifest([]), PairPolicy(), 0)


def test_policy_validation():
    with pytest.raises(ValueError):
        PairPolicy(mode="nearest")
    with pytest.raises(ValueError):
        PairPolicy(window=(20, 10))


def test_label_guard_blocks_access():
    rec = _record("a", 0, gaze=(1.0, 2.0))
    guarded = Manifest([rec]).guarded()
    g = guarded.records[0].gaze
    with pytest.raises(LabelAccessError):
        tuple(g)
    with pytest.raises(LabelAccessError):
        g[0]
    with pytest.raises(LabelAccessError):
        float(g)
    with pytest.raises(LabelAccessError):
        bool(g)


def test_guarded_manifest_cannot_be_saved(tmp_path):
    guarded = Manifest([_record("a", 0, gaze=(1.0, 2.0))]).guarded()
    with pytest.raises(LabelAccessError):
        guarded.save(tmp_path / "m.csv")


def test_manifest_split_and_persons():
    recs = [_record("a", 0), _record("b", 0, split="test")]
    m = Manifest(recs)
    assert m.persons() == ["a", "b"]
    assert m.split("train").persons() == ["a"]
    assert m.split("test").persons() == ["b"]


def test_load_image_and_store(tmp_path):
    spec = RenderSpec(persons=2, frames_per_person=3, train_persons=1)
    manifest = generate_dataset(spec, tmp_path / "ds", seed=0)
    img = load_image(manifest.resolve(manifest.records[0]))
    assert img.shape == (1, spec.height, spec.width)
    assert img.dtype == torch.float32
    assert 0.0 <= img.min() and img.max() <= 1.0
    store = ImageStore(manifest)
    batch = store.batch(manifest.records[:4])
    assert batch.shape == (4, 1, spec.height, spec.width)
    assert torch.equal(store.get(manifest.records[0]), batch[0])


def test_augment_identity_ranges_is_noop():
    g = torch.Generator().manual_seed(0)
    img = torch.rand(2, 1, 8, 12, generator=g)
    out = augment(img, AugmentRanges(max_translate=0.0, scale=(1.0, 1.0)), g)
    assert torch.equal(out, img)


def test_augment_bounds_and_determinism():
    img = torch.rand(3, 1, 8, 12, generator=torch.Generator().manual_seed(1))
    ranges = AugmentRanges()
    out1 = augment(img, ranges, torch.Generator().manual_seed(5))
    out2 = augment(img, ranges, torch.Generator().manual_seed(5))
    out3 = augment(img, ranges, torch.Generator().manual_seed(6))
    assert torch.equal(out1, out2)
    assert not torch.equal(out1, out3)
    assert out1.min() >= img.min() - 1e-6
    assert out1.max() <= img.max() + 1e-6


def test_augment_ranges_validation():
    with pytest.raises(ValueError):
        AugmentRanges(max_translate=-0.1)
    with pytest.raises(ValueError):
        AugmentRanges(scale=(1.2, 0.8))
