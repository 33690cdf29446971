import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import voxsynth.autodiff as ad
from voxsynth import voxel


def brute_force_df(values, threshold, truncation):
    """O(W^6) nearest-occupied search; the independent distance oracle."""
    w = values.shape[0]
    occ = np.argwhere(values >= threshold)
    out = np.full((w, w, w), float(truncation))
    if len(occ) == 0:
        return out
    for ix in range(w):
        for iy in range(w):
            for iz in range(w):
                d2 = np.min(np.sum((occ - np.array([ix, iy, iz])) ** 2, axis=1))
                out[ix, iy, iz] = min(np.sqrt(d2), truncation)
    return out


def test_df_fully_occupied_all_zero():
    g = voxel.VoxelGrid(np.ones((8, 8, 8)))
    df = voxel.df_from_voxels(g, 0.5, 3.0)
    assert np.array_equal(df.values, np.zeros((8, 8, 8)))


def test_df_single_voxel_exact_distances():
    vals = np.zeros((4, 4, 4))
    vals[0, 0, 0] = 1.0
    df = voxel.df_from_voxels(voxel.VoxelGrid(vals), 0.5, 10.0)
    assert df.values[3, 0, 0] == pytest.approx(3.0, abs=1e-12)
    assert df.values[1, 1, 1] == pytest.approx(np.sqrt(3.0), abs=1e-12)
    np.testing.assert_allclose(df.values, brute_force_df(vals, 0.5, 10.0), atol=1e-10)


def test_df_empty_grid_warns_all_truncation():
    g = voxel.VoxelGrid(np.zeros((8, 8, 8)))
    with pytest.warns(UserWarning, match="no occupied"):
        df = voxel.df_from_voxels(g, 0.5, 3.0)
    assert np.array_equal(df.values, np.full((8, 8, 8), 3.0))


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_df_matches_brute_force_on_random_small_grids(seed):
    rng = ad.rng_for(seed, 21)
    w = int(rng.integers(2, 8))
    vals = (rng.random((w, w, w)) < 0.2).astype(np.float64)
    df = voxel.df_from_voxels(voxel.VoxelGrid(vals), 0.5, 4.0) if vals.any() else None
    if df is None:
        return
    np.testing.assert_allclose(df.values, brute_force_df(vals, 0.5, 4.0), atol=1e-10)


def test_df_zero_exactly_on_occupied_set():
    rng = ad.make_rng(5)
    vals = (rng.random((8, 8, 8)) < 0.3).astype(np.float64)
    df = voxel.df_from_voxels(voxel.VoxelGrid(vals), 0.5, 3.0)
    assert np.array_equal(df.values == 0.0, vals.astype(bool))


def test_binarize_threshold_inclusive():
    g = voxel.VoxelGrid(np.full((8, 8, 8), 0.6))
    assert np.all(voxel.binarize(g, 0.5).values == 1.0)
    g = voxel.VoxelGrid(np.full((8, 8, 8), 0.5))
    assert np.all(voxel.binarize(g, 0.5).values == 1.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_binarize_idempotent(seed):
    rng = ad.rng_for(seed, 22)
    g = voxel.VoxelGrid(rng.random((8, 8, 8)))
    once = voxel.binarize(g, 0.5)
    twice = voxel.binarize(once, 0.5)
    assert np.array_equal(once.values, twice.values)


def test_box_occupied_count_matches_extent_ratio():
    # half-extent 0.25 m at W=16: 0.5 m span / (1/16 m per voxel) = 8 voxels/axis
    g = voxel.procedural_shape("box", 16, ad.make_rng(0), params={"half_extents": (0.25, 0.25, 0.25)})
    assert int(g.values.sum()) == 8**3


def test_degenerate_ellipsoid_rejected():
    with pytest.raises(ValueError, match="positive"):
        voxel.procedural_shape("ellipsoid", 16, ad.make_rng(0), params={"radii": (0.0, 0.1, 0.1)})


def test_procedural_shape_deterministic():
    a = voxel.procedural_shape("chair", 16, ad.make_rng(7))
    b = voxel.procedural_shape("chair", 16, ad.make_rng(7))
    assert np.array_equal(a.values, b.values)


@settings(max_examples=40, deadline=None)
@given(
    st.sampled_from(voxel.SHAPE_KINDS),
    st.integers(min_value=0, max_value=10_000),
)
def test_procedural_fraction_and_margin(kind, seed):
    g = voxel.procedural_shape(kind, 16, ad.rng_for(seed, 23))
    frac = float(np.mean(g.values))
    assert 0.01 <= frac <= 0.7
    # one-voxel margin: boundary shells must be empty
    assert g.values[0].sum() == 0 and g.values[-1].sum() == 0
    assert g.values[:, 0].sum() == 0 and g.values[:, -1].sum() == 0
    assert g.values[:, :, 0].sum() == 0 and g.values[:, :, -1].sum() == 0


def test_corpus_build_and_round_trip(tmp_path):
    corpus = voxel.build_corpus(10, 16, seed=3)
    assert len(corpus) == 10
    assert corpus.class_names == list(voxel.SHAPE_KINDS)
    path = tmp_path / "c.vcorp"
    voxel.save_corpus(path, corpus)
    back = voxel.load_corpus(path)
    assert back.seed == 3
    assert back.class_names == corpus.class_names
    assert np.array_equal(back.labels, corpus.labels)
    for a, b in zip(corpus.grids, back.grids):
        np.testing.assert_allclose(a.values, b.values, atol=1e-7)


def test_empty_corpus_file_valid(tmp_path):
    corpus = voxel.ShapeCorpus([], np.array([], dtype=np.int64), list(voxel.SHAPE_KINDS), 0)
    path = tmp_path / "empty.vcorp"
    voxel.save_corpus(path, corpus)
    back = voxel.load_corpus(path)
    assert len(back) == 0
    assert back.class_names == list(voxel.SHAPE_KINDS)


def test_vvox_round_trip_and_bad_magic(tmp_path):
    g = voxel.procedural_shape("car", 16, ad.make_rng(1))
    path = tmp_path / "g.vvox"
    voxel.save_vvox(path, g)
    back = voxel.load_vvox(path)
    assert isinstance(back, voxel.VoxelGrid)
    np.testing.assert_allclose(back.values, g.values, atol=1e-7)

    df = voxel.df_from_voxels(g)
    dpath = tmp_path / "d.vvox"
    voxel.save_vvox(dpath, df)
    back_df = voxel.load_vvox(dpath)
    assert isinstance(back_df, voxel.DistanceField)
    np.testing.assert_allclose(back_df.values, df.values, atol=1e-6)

    bad = tmp_path / "bad.vvox"
    bad.write_bytes(b"XXXX" + b"\x00" * 20)
    with pytest.raises(voxel.VoxelFormatError, match="offset 0"):
        voxel.load_vvox(bad)

    trunc = tmp_path / "trunc.vvox"
    trunc.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(voxel.VoxelFormatError, match="offset"):
        voxel.load_vvox(trunc)


def test_vvox_element_order_x_fastest(tmp_path):
    vals = np.zeros((8, 8, 8))
    vals[3, 0, 0] = 1.0  # ix=3 -> flat index 3
    vals[0, 2, 0] = 1.0  # iy=2 -> flat index 2*8
    vals[0, 0, 1] = 1.0  # iz=1 -> flat index 64
    path = tmp_path / "o.vvox"
    voxel.save_vvox(path, voxel.VoxelGrid(vals))
    payload = np.frombuffer(path.read_bytes()[16:], dtype="<f4")
    assert payload[3] == 1.0
    assert payload[2 * 8] == 1.0
    assert payload[64] == 1.0
    assert payload.sum() == 3.0


def test_binvox_reader(tmp_path):
    # 2x2x2 grid with a single occupied voxel at (x=1, y=0, z=1):
    # binvox flat order is x, z, y with y fastest -> index x*4 + z*2 + y = 6
    header = b"#binvox 1\ndim 2 2 2\ntranslate 0 0 0\nscale 1\ndata\n"
    runs = bytes([0, 6, 1, 1, 0, 1])
    path = tmp_path / "t.binvox"
    path.write_bytes(header + runs)
    g = voxel.load_binvox(path)
    expected = np.zeros((2, 2, 2))
    expected[1, 0, 1] = 1.0
    assert np.array_equal(g.values, expected)
