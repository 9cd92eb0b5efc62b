import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boneseg.errors import GeometryError
from boneseg.volume import (
    LabelVolume,
    ScalarVolume,
    VolumeGeometry,
    crop_or_pad_centered,
    isotropic_grid,
    nearest_index,
    normalize_min_max,
    preprocess_volume,
    resample_nearest,
    resample_trilinear,
    sample_trilinear,
)

import oracles


def _rand_scalar(rng, dims, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    g = VolumeGeometry(dims, spacing, origin)
    return ScalarVolume(g, rng.normal(size=g.shape))


def test_geometry_validation():
    with pytest.raises(GeometryError):
        VolumeGeometry((0, 4, 4))
    with pytest.raises(GeometryError):
        VolumeGeometry((4, 4, 4), (1.0, -1.0, 1.0))
    with pytest.raises(GeometryError):
        VolumeGeometry((4, 4), (1.0, 1.0, 1.0))
    g = VolumeGeometry((5, 6, 7), (0.5, 1, 2), (1, 2, 3))
    assert g.shape == (7, 6, 5)
    assert g.num_voxels == 210
    np.testing.assert_allclose(g.axis_positions(2), 3 + 2.0 * np.arange(7))


def test_volume_data_validation():
    g = VolumeGeometry((4, 3, 2))
    with pytest.raises(GeometryError):
        ScalarVolume(g, np.zeros((4, 3, 2)))
    with pytest.raises(ValueError):
        LabelVolume(g, np.full(g.shape, 3))
    assert ScalarVolume(g, np.zeros(g.shape, np.float64)).data.dtype == np.float32
    assert LabelVolume(g, np.zeros(g.shape, np.int64)).data.dtype == np.uint8


def test_identity_resampling_is_bit_exact():
    rng = np.random.default_rng(0)
    vol = _rand_scalar(rng, (7, 5, 4), (0.7, 1.3, 2.1), (3.0, -1.0, 0.5))
    out = resample_trilinear(vol, vol.geometry)
    assert out.data.tobytes() == vol.data.tobytes()
    lbl = LabelVolume(vol.geometry, rng.integers(0, 3, size=vol.geometry.shape))
    assert resample_nearest(lbl, lbl.geometry).data.tobytes() == lbl.data.tobytes()


def test_trilinear_matches_map_coordinates():
    rng = np.random.default_rng(1)
    for _ in range(10):
        src = _rand_scalar(rng, tuple(rng.integers(2, 9, 3)), tuple(rng.uniform(0.5, 2.0, 3)),
                           tuple(rng.uniform(-3, 3, 3)))
        tgt = VolumeGeometry(tuple(rng.integers(2, 9, 3)), tuple(rng.uniform(0.5, 2.0, 3)),
                             tuple(rng.uniform(-3, 3, 3)))
        out = resample_trilinear(src, tgt)
        cidx = [(tgt.axis_positions(a) - src.geometry.origin[a]) / src.geometry.spacing[a] for a in range(3)]
        cz, cy, cx = np.meshgrid(cidx[2], cidx[1], cidx[0], indexing="ij")
        ref = oracles.trilinear_scipy(src.data, cz, cy, cx)
        np.testing.assert_allclose(out.data, ref.astype(np.float32), rtol=1e-5, atol=1e-5)


def test_sample_trilinear_matches_map_coordinates():
    rng = np.random.default_rng(2)
    data = rng.normal(size=(5, 6, 7))
    cx, cy, cz = (rng.uniform(-1, n, size=50) for n in (7, 6, 5))
    np.testing.assert_allclose(
        sample_trilinear(data, cx, cy, cz), oracles.trilinear_scipy(data, cz, cy, cx), atol=1e-12
    )


def test_nearest_matches_bruteforce():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(2, 12))
        so, ss = float(rng.uniform(-2, 2)), float(rng.uniform(0.3, 2.5))
        positions = rng.uniform(so - 3, so + n * ss + 3, size=40)
        got = nearest_index((positions - so) / ss, n)
        assert list(got) == oracles.nearest_bruteforce(n, so, ss, positions)


def test_nearest_ties_round_up():
    np.testing.assert_array_equal(nearest_index(np.array([0.5, 1.5, -0.6, 9.7]), 5), [1, 2, 0, 4])


def test_resample_nearest_keeps_label_set():
    rng = np.random.default_rng(4)
    g = VolumeGeometry((6, 6, 6), (1.5, 1.5, 1.5))
    lbl = LabelVolume(g, rng.integers(0, 3, size=g.shape))
    out = resample_nearest(lbl, VolumeGeometry((9, 9, 9), (1.0, 1.0, 1.0)))
    assert set(np.unique(out.data)) <= {0, 1, 2}


def test_crop_pad_odd_surplus_goes_high():
    g = VolumeGeometry((5, 1, 1), (2.0, 1.0, 1.0), (10.0, 0.0, 0.0))
    vol = ScalarVolume(g, np.arange(5, dtype=float).reshape(1, 1, 5))
    cropped = crop_or_pad_centered(vol, (2, 1, 1))
    np.testing.assert_array_equal(cropped.data.ravel(), [1, 2])
    assert cropped.geometry.origin[0] == 12.0
    padded = crop_or_pad_centered(vol, (8, 1, 1))
    np.testing.assert_array_equal(padded.data.ravel(), [0, 0, 1, 2, 3, 4, 0, 0])
    assert padded.geometry.origin[0] == 8.0


def test_crop_pad_preserves_physical_positions():
    rng = np.random.default_rng(5)
    vol = _rand_scalar(rng, (7, 4, 6), (1.0, 2.0, 0.5), (1.0, 1.0, 1.0))
    out = crop_or_pad_centered(vol, (4, 7, 6))
    # the voxel at physical (x, y, z) must keep its value
    for x, y, z in ((3, 0, 2), (5, 3, 0)):
        px = vol.geometry.origin[0] + x * 1.0
        py = vol.geometry.origin[1] + y * 2.0
        ox = round((px - out.geometry.origin[0]) / 1.0)
        oy = round((py - out.geometry.origin[1]) / 2.0)
        if 0 <= ox < 4:
            assert out.data[z, oy, ox] == vol.data[z, y, x]


def test_label_padding_is_background():
    g = VolumeGeometry((2, 2, 2))
    lbl = LabelVolume(g, np.full(g.shape, 2))
    out = crop_or_pad_centered(lbl, (4, 4, 4))
    assert out.data.sum() == 2 * 8


def test_normalize():
    g = VolumeGeometry((3, 1, 1))
    out = normalize_min_max(ScalarVolume(g, np.array([[[2.0, 4.0, 6.0]]])))
    np.testing.assert_allclose(out.data.ravel(), [0, 0.5, 1])
    flat = normalize_min_max(ScalarVolume(g, np.full(g.shape, 7.0)))
    assert not flat.data.any()


def test_isotropic_grid_covers_extent():
    g = VolumeGeometry((10, 20, 5), (2.0, 0.5, 3.0), (1, 2, 3))
    iso = isotropic_grid(g)
    assert iso.dims == (19, 10, 13)
    assert iso.spacing == (1.0, 1.0, 1.0)
    assert iso.origin == g.origin


@settings(max_examples=25, deadline=None)
@given(
    dims=st.tuples(*(st.integers(2, 30),) * 3),
    spacing=st.tuples(*(st.floats(0.4, 3.0),) * 3),
    seed=st.integers(0, 1000),
)
def test_preprocess_contract(dims, spacing, seed):
    rng = np.random.default_rng(seed)
    vol = _rand_scalar(rng, dims, spacing)
    out = preprocess_volume(vol, dims=(16, 12, 8))
    assert out.geometry.dims == (16, 12, 8)
    assert out.geometry.spacing == (1.0, 1.0, 1.0)
    assert out.data.min() >= 0.0 and out.data.max() <= 1.0
    lbl = LabelVolume(vol.geometry, rng.integers(0, 3, size=vol.geometry.shape))
    lout = preprocess_volume(lbl, dims=(16, 12, 8))
    assert lout.geometry == out.geometry
