import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from varganlab import data
from varganlab.data import (BinaryPatternSpec, McrParams, build_limited_batch, classify_images,
                            classify_pattern, denormalize, dihedral_transforms, divisors,
                            enumerate_designs, grid_spec, is_symmetric, make_dataset, mcr,
                            mode_schedule, normalize, octant_to_image, ring_spec, sample_mixture)


def test_ring_spec():
    spec = ring_spec(8)
    assert spec.std == 0.01 and spec.N == 8
    np.testing.assert_allclose(spec.centers[1], [0.0, 1.0], atol=1e-12)  # i = 2
    np.testing.assert_allclose(np.linalg.norm(spec.centers, axis=1), 1.0, atol=1e-12)
    assert len(np.unique(spec.centers.round(9), axis=0)) == 8
    with pytest.raises(ValueError):
        ring_spec(1)


def test_grid_spec():
    spec = grid_spec(5)
    assert spec.std == 0.05 and spec.N == 25
    np.testing.assert_allclose(spec.centers[0], [-1, -1])
    np.testing.assert_allclose(spec.centers[-1], [0.6, 0.6], atol=1e-12)
    assert grid_spec(6).N == 36
    with pytest.raises(ValueError):
        grid_spec(1)


def test_mixture_spec_invariants():
    with pytest.raises(ValueError):
        data.MixtureSpec(np.zeros((2, 2)), 0.1)
    with pytest.raises(ValueError):
        data.MixtureSpec(np.eye(2), 0.0)


def test_sample_mixture_counts_and_determinism():
    spec = grid_spec(5)
    x, modes = sample_mixture(spec, 100_000, seed=3, return_modes=True)
    counts = np.bincount(modes, minlength=25)
    sigma = math.sqrt(100_000 * (1 / 25) * (24 / 25))
    assert np.all(np.abs(counts - 4000) < 5 * sigma)
    assert np.array_equal(x, sample_mixture(spec, 100_000, seed=3))
    with pytest.raises(ValueError):
        sample_mixture(spec, 0)


def test_sample_mixture_degenerate_noise():
    spec = data.MixtureSpec(grid_spec(5).centers, 1e-12)
    x = sample_mixture(spec, 500, seed=0)
    d = np.linalg.norm(x[:, None] - spec.centers[None], axis=2).min(axis=1)
    assert d.max() < 1e-9


def test_normalize():
    np.testing.assert_allclose(normalize(np.array([[-1.5, -1.5]])), [[0, 0]])
    np.testing.assert_allclose(normalize(np.array([[0.0, 0.0]])), [[0.5, 0.5]])
    x = np.random.default_rng(0).uniform(-1.5, 1.5, size=(1000, 2))
    assert np.abs(denormalize(normalize(x)) - x).max() < 1e-12
    with pytest.raises(ValueError):
        normalize(np.array([[2.0, 0.0]]))


def test_mcr_values():
    for variant in data.MCR_VARIANTS:
        for N in (8, 25, 36):
            assert mcr(1, N, McrParams(variant)) == 0.0
    assert mcr(9, 36, McrParams("linear")) == 0.25
    assert mcr(25, 25) == pytest.approx(1 / (1 + 10 * math.exp(-5)), abs=1e-12)
    assert mcr(25, 25) == pytest.approx(0.93688, abs=1e-5)
    assert mcr(20, 25) == pytest.approx(0.8452, abs=1e-4)
    # shifted: n = N gives L / (1 + S1)
    assert mcr(8, 8, McrParams("shifted_sigmoid")) == pytest.approx(1 / 11)
    with pytest.raises(ValueError):
        mcr(0, 8)
    with pytest.raises(ValueError):
        mcr(9, 8)


@pytest.mark.parametrize("kwargs", [dict(variant="cubic"), dict(L=0.0), dict(L=1.5),
                                    dict(S1=0.0), dict(S2=-1.0)])
def test_mcr_params_validation(kwargs):
    with pytest.raises(ValueError):
        McrParams(**kwargs)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(data.MCR_VARIANTS), st.integers(2, 60),
       st.floats(0.05, 1.0), st.floats(0.1, 50), st.floats(0.1, 20))
def test_mcr_monotone_and_bounded(variant, N, L, S1, S2):
    p = McrParams(variant, L, S1, S2)
    vals = [mcr(n, N, p) for n in range(2, N + 1)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    L_cap = 1.0 if variant == "linear" else L
    assert all(0 <= v <= L_cap + 1e-15 for v in vals)


def test_divisor_schedule():
    assert divisors(12) == [1, 2, 3, 4, 6, 12]
    assert mode_schedule(120, 25) == [1, 2, 3, 4, 5, 6, 8, 10, 12, 15, 20, 24]
    assert mode_schedule(120, 8) == [1, 2, 3, 4, 5, 6]


def test_limited_batch_examples():
    pool = np.arange(20.0).reshape(10, 2)
    b = build_limited_batch(pool, 3, 6, 8, seed=0)
    rows, counts = np.unique(b.samples, axis=0, return_counts=True)
    assert len(rows) == 3 and set(counts) == {2}
    b = build_limited_batch(pool, 1, 6, 8, seed=0)
    assert len(np.unique(b.samples, axis=0)) == 1 and b.mcr_label == 0.0
    b = build_limited_batch(np.random.default_rng(0).normal(size=(500, 2)), 20, 120, 25)
    assert b.mcr_label == pytest.approx(0.8452, abs=1e-4)


def test_limited_batch_errors():
    pool = np.arange(20.0).reshape(10, 2)
    with pytest.raises(ValueError):
        build_limited_batch(pool, 4, 6, 8)  # 4 does not divide 6
    with pytest.raises(ValueError):
        build_limited_batch(pool, 6, 6, 6)  # n must be below N
    with pytest.raises(ValueError):
        build_limited_batch(pool[:2], 3, 6, 8)


def test_limited_batch_is_shuffled():
    pool = np.arange(200.0).reshape(100, 2)
    b = build_limited_batch(pool, 2, 120, 25, seed=1)
    # tiled-but-unshuffled output would be two contiguous blocks
    changes = np.sum(np.any(b.samples[1:] != b.samples[:-1], axis=1))
    assert changes > 1


def test_octant_to_image_basics():
    assert not octant_to_image(np.zeros(15)).any()
    assert octant_to_image(np.ones(15)).all()
    with pytest.raises(ValueError):
        octant_to_image(np.zeros(14))
    with pytest.raises(ValueError):
        octant_to_image(np.zeros(15), side=8)
    assert BinaryPatternSpec(9).octant_bits == 15
    assert BinaryPatternSpec(19).octant_bits == 55


def test_single_octant_bit_sets_its_orbit():
    img = octant_to_image(np.eye(15, dtype=np.uint8)[0])  # cell (0, 0)
    assert img.sum() == 4 and img[0, 0] and img[0, 8] and img[8, 0] and img[8, 8]
    img = octant_to_image(np.eye(15, dtype=np.uint8)[14])  # center
    assert img.sum() == 1 and img[4, 4]


@pytest.mark.parametrize("side", [3, 5, 7])
def test_small_sides_enumerate_bijectively(side):
    imgs = enumerate_designs(side)
    assert len({im.tobytes() for im in imgs}) == len(imgs)
    assert all(is_symmetric(im) for im in imgs)


def scipy_hp(image, connectivity):
    structure = ndimage.generate_binary_structure(2, 1 if connectivity == 4 else 2)
    lab, _ = ndimage.label(image, structure)
    edges = lambda a, b: (set(a.ravel()) & set(b.ravel())) - {0}
    return bool(edges(lab[:, 0], lab[:, -1]) or edges(lab[0], lab[-1]))


def test_classify_examples():
    z = np.zeros((9, 9), np.uint8)
    assert classify_pattern(z) == "LP"
    assert classify_pattern(np.ones((9, 9))) == "HP"
    cross = z.copy()
    cross[4, :] = cross[:, 4] = 1
    assert classify_pattern(cross, 4) == "HP" and classify_pattern(cross, 8) == "HP"
    diag = np.eye(9, dtype=np.uint8) | np.fliplr(np.eye(9, dtype=np.uint8))
    assert classify_pattern(diag, 8) == "HP" and classify_pattern(diag, 4) == "LP"
    with pytest.raises(ValueError):
        classify_pattern(np.zeros((3, 4)))


def test_classify_matches_scipy_label_oracle():
    rng = np.random.default_rng(0)
    for side in (5, 9, 11):
        imgs = (rng.random((300, side, side)) < rng.uniform(0.3, 0.7, size=(300, 1, 1))).astype(np.uint8)
        for conn in (4, 8):
            got = classify_images(imgs, conn)
            want = np.array([scipy_hp(im, conn) for im in imgs])
            assert np.array_equal(got, want)


def test_full_space_category_split():
    imgs = enumerate_designs(9)
    hp8 = classify_images(imgs, 8)
    hp4 = classify_images(imgs, 4)
    assert (int(hp8.sum()), int((~hp8).sum())) == (22_717, 10_051)
    assert int(hp4.sum()) == 10_051
    # 4-connectivity HP is strictly stronger than 8-connectivity HP
    assert not np.any(hp4 & ~hp8)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=15, max_size=15), st.sampled_from([4, 8]))
def test_classification_is_dihedral_invariant(bits, conn):
    img = octant_to_image(bits)
    assert is_symmetric(img)
    cat = classify_pattern(img, conn)
    assert all(classify_pattern(t, conn) == cat for t in dihedral_transforms(img))


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 10).map(lambda k: 2 * k + 1), st.integers(0, 10_000))
def test_arbitrary_images_classify_invariantly(side, seed):
    img = (np.random.default_rng(seed).random((side, side)) < 0.5).astype(np.uint8)
    cats = {classify_pattern(t, 8) for t in dihedral_transforms(img)}
    assert len(cats) == 1


def test_make_dataset():
    ds = make_dataset("grid25", 1000, seed=1)
    assert ds.kind == "mixture" and ds.train.shape == (1000, 2) and ds.target_modes == 25
    assert ds.train.min() >= 0 and ds.train.max() <= 1
    ds = make_dataset("ring8", 500)
    assert ds.mixture.N == 8
    ds = make_dataset("binary9", 10)
    assert ds.train.shape == (32768, 81) and ds.target_modes == 120
    assert np.bincount(ds.labels).tolist() == [22_717, 10_051]
    for bad in ("grid24", "moons"):
        with pytest.raises(ValueError):
            make_dataset(bad, 100)


def test_dump_dataset(tmp_path):
    x = sample_mixture(ring_spec(8), 5, seed=2)
    data.dump_dataset(tmp_path / "ring.csv", x, {"name": "ring8"}, seed=2)
    lines = (tmp_path / "ring.csv").read_text().splitlines()
    assert lines[0] == "x,y" and len(lines) == 6
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "ring.csv", delimiter=",", skiprows=1), x)
    side = json.loads((tmp_path / "ring.json").read_text())
    assert side == {"spec": {"name": "ring8"}, "seed": 2, "rows": 5}
    imgs = enumerate_designs(3)
    data.dump_dataset(tmp_path / "pat.csv", imgs, {"side": 3}, seed=0)
    assert (tmp_path / "pat.csv").read_text().splitlines()[0].count(",") == 8
