from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvdeepid.synth import (
    AUGMENTED_COUNT,
    HEIGHT,
    LCR,
    UCD,
    VIEWS,
    WIDTH,
    ViewLabel,
    assemble_samples,
    augment,
    build_dataset,
    generate_identity,
    make_symmetric,
    mirror,
    random_affine,
    render_view,
    rotation,
    select_subviews,
    split_samples,
    stack_views,
)


def test_render_shape_range_and_determinism():
    ident = generate_identity(0, 3)
    a = render_view(ident, "L", [0, 3, 0, 1])
    b = render_view(ident, ViewLabel.L, [0, 3, 0, 1])
    assert a.shape == (HEIGHT, WIDTH, 3) == (55, 47, 3)
    assert a.min() >= 0.0 and a.max() <= 1.0
    assert np.array_equal(a, b)
    assert not np.array_equal(a, render_view(ident, "L", [0, 3, 0, 2]))


def test_identities_are_seeded():
    a, b = generate_identity(1, 4), generate_identity(1, 4)
    assert np.array_equal(a.as_vector(), b.as_vector())
    assert not np.array_equal(a.as_vector(), generate_identity(2, 4).as_vector())


def test_lookalike_pairs_share_frontal_layout():
    a, b = generate_identity(0, 6), generate_identity(0, 7)
    assert np.array_equal(a.axes[:2], b.axes[:2])
    assert np.array_equal(a.skin, b.skin) and np.array_equal(a.colors, b.colors)
    assert a.axes[2] != b.axes[2]
    assert not np.array_equal(a.as_vector(), generate_identity(0, 8).as_vector())


def test_symmetric_head_mirrors_left_into_right():
    ident = make_symmetric(generate_identity(0, 0))
    left = render_view(ident, "L", 1, jitter=False, noise=0.0)
    right = render_view(ident, "R", 1, jitter=False, noise=0.0)
    assert np.abs(mirror(left) - right).max() < 1e-12
    for v in ("C", "U", "D"):
        img = render_view(ident, v, 1, jitter=False, noise=0.0)
        assert np.abs(mirror(img) - img).max() < 1e-12


def test_pitch_moves_features_vertically():
    # looking up raises the mouth blob in the image (smaller row index)
    ident = make_symmetric(generate_identity(0, 0))
    colors = ident.colors.copy()
    colors[3] = ident.skin
    plain = replace(ident, colors=colors)  # mouth painted in skin tone
    rows = {}
    for v in ("U", "C", "D"):
        diff = np.abs(render_view(ident, v, 1, jitter=False, noise=0.0)
                      - render_view(plain, v, 1, jitter=False, noise=0.0)).sum(axis=-1)
        rows[v] = float((diff.sum(axis=1) * np.arange(HEIGHT)).sum() / diff.sum())
    assert rows["U"] < rows["C"] - 1 and rows["C"] < rows["D"] - 1


def test_rotation_is_orthonormal():
    r = rotation(17.0, -8.0, 3.0)
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-14)
    assert np.linalg.det(r) == pytest.approx(1.0)


def test_raw_counts(raw_small):
    assert len(raw_small) == 13 * 4
    for i in range(4):
        assert raw_small.histogram(i) == {ViewLabel.L: 2, ViewLabel.C: 5, ViewLabel.R: 2,
                                          ViewLabel.U: 2, ViewLabel.D: 2}


def test_augmented_counts(aug_small):
    assert len(aug_small) == 25 * 4
    for i in range(4):
        assert set(aug_small.histogram(i).values()) == {AUGMENTED_COUNT}


def test_augment_slot_order(raw_small, aug_small):
    raw = {(r.identity, r.view, r.instance): r.image for r in raw_small.records}
    aug = {(r.identity, r.view, r.instance): r for r in aug_small.records}
    # L: two originals, then mirrors of the two R originals, then one warp
    assert [aug[(0, ViewLabel.L, k)].source for k in range(5)] == ["raw", "raw", "mirror", "mirror", "affine"]
    assert np.array_equal(aug[(0, ViewLabel.L, 2)].image, mirror(raw[(0, ViewLabel.R, 0)]))
    assert np.array_equal(aug[(0, ViewLabel.R, 3)].image, mirror(raw[(0, ViewLabel.L, 1)]))
    # U mirrors its own images, C is already full
    assert np.array_equal(aug[(1, ViewLabel.U, 2)].image, mirror(raw[(1, ViewLabel.U, 0)]))
    assert [aug[(2, ViewLabel.C, k)].source for k in range(5)] == ["raw"] * 5


def test_augment_is_deterministic_and_single_shot(raw_small, aug_small):
    again = augment(build_dataset(4, dataset_seed=7))
    assert all(np.array_equal(a.image, b.image) for a, b in zip(aug_small.records, again.records))
    with pytest.raises(ValueError):
        augment(aug_small)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_affine_stays_in_range(seed):
    img = np.random.default_rng(seed).random((55, 47, 3))
    out = random_affine(img, np.random.default_rng(seed))
    assert out.shape == img.shape and out.min() >= 0 and out.max() <= 1


def test_splits_follow_instance(aug_small):
    for r in aug_small.records:
        assert r.split == {3: "valid", 4: "test"}.get(r.instance, "train")


def test_select_subviews(aug_small):
    lcr = select_subviews(aug_small, LCR)
    assert lcr.views() == set(LCR)
    assert select_subviews(aug_small, "UCD").views() == set(UCD)
    with pytest.raises(ValueError):
        select_subviews(aug_small, [])


def test_assemble_samples(aug_small):
    samples = assemble_samples(select_subviews(aug_small, LCR), LCR)
    assert len(samples) == 5 * 4
    assert [len(split_samples(samples, s)) for s in ("train", "valid", "test")] == [12, 4, 4]
    s = samples[7]
    assert set(s.views) == {"L", "C", "R"} and s.label == 1 and s.index == 2
    batch = stack_views(samples[:3], ("L", "C"))
    assert batch["L"].shape == (3, 55, 47, 3)


def test_assemble_wraps_on_raw(raw_small):
    samples = assemble_samples(raw_small, ("L", "C"))
    assert np.array_equal(samples[2].views["L"], samples[0].views["L"])


def test_assemble_rejects_missing_view(aug_small):
    with pytest.raises(ValueError, match="view U"):
        assemble_samples(select_subviews(aug_small, LCR), ("U",))


def test_build_rejects_tiny():
    with pytest.raises(ValueError):
        build_dataset(1)


def test_all_views_present(raw_small):
    assert raw_small.views() == set(VIEWS)
