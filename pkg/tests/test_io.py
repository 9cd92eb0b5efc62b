import numpy as np
import pytest

from boneseg.errors import DataSizeMismatchError, MalformedHeaderError, UnknownDtypeError, VolumeFormatError
from boneseg.io import header_path, list_volumes, load_volume, parse_header, store_volume
from boneseg.volume import LabelVolume, ScalarVolume, VolumeGeometry


@pytest.fixture
def geometry():
    return VolumeGeometry((5, 4, 3), (0.1, 1.0 / 3.0, 2.5), (-1.25, 1e-7, 3.0))


def test_scalar_round_trip_is_bit_exact(tmp_path, geometry):
    rng = np.random.default_rng(0)
    vol = ScalarVolume(geometry, rng.normal(size=geometry.shape))
    hdr = store_volume(vol, tmp_path / "img")
    assert hdr.name == "img.vhdr" and (tmp_path / "img.raw").exists()
    back = load_volume(hdr)
    assert isinstance(back, ScalarVolume)
    assert back.geometry == geometry
    assert back.data.tobytes() == vol.data.tobytes()
    # storing again produces identical bytes
    store_volume(back, tmp_path / "img2")
    assert (tmp_path / "img2.raw").read_bytes() == (tmp_path / "img.raw").read_bytes()


def test_label_round_trip(tmp_path, geometry):
    rng = np.random.default_rng(1)
    lbl = LabelVolume(geometry, rng.integers(0, 3, size=geometry.shape))
    back = load_volume(store_volume(lbl, tmp_path / "lbl"))
    assert isinstance(back, LabelVolume)
    np.testing.assert_array_equal(back.data, lbl.data)


def test_payload_layout_is_x_fastest(tmp_path):
    g = VolumeGeometry((3, 2, 1))
    data = np.arange(6, dtype=np.float32).reshape(g.shape)
    store_volume(ScalarVolume(g, data), tmp_path / "v")
    raw = np.frombuffer((tmp_path / "v.raw").read_bytes(), dtype="<f4")
    np.testing.assert_array_equal(raw, [0, 1, 2, 3, 4, 5])
    text = (tmp_path / "v.vhdr").read_text()
    assert "dims = 3 2 1\n" in text and "dtype = float32\n" in text and "data = v.raw\n" in text


def _write(tmp_path, header, payload=b""):
    (tmp_path / "x.raw").write_bytes(payload)
    (tmp_path / "x.vhdr").write_text(header)
    return tmp_path / "x.vhdr"


GOOD = "dims = 2 1 1\nspacing = 1 1 1\norigin = 0 0 0\ndtype = uint8\ndata = x.raw\n"


def test_header_errors(tmp_path):
    with pytest.raises(MalformedHeaderError):
        load_volume(_write(tmp_path, GOOD.replace("origin = 0 0 0\n", ""), b"\0\0"))
    with pytest.raises(MalformedHeaderError):
        load_volume(_write(tmp_path, GOOD + "color = red\n", b"\0\0"))
    with pytest.raises(MalformedHeaderError):
        load_volume(_write(tmp_path, GOOD + "dims = 2 1 1\n", b"\0\0"))
    with pytest.raises(MalformedHeaderError):
        load_volume(_write(tmp_path, GOOD.replace("dims = 2 1 1", "dims = 2 1"), b"\0\0"))
    with pytest.raises(MalformedHeaderError):
        load_volume(_write(tmp_path, GOOD.replace("spacing = 1 1 1", "spacing = 1 -1 1"), b"\0\0"))
    with pytest.raises(MalformedHeaderError):
        parse_header("just text")


def test_dtype_and_size_errors(tmp_path):
    with pytest.raises(UnknownDtypeError):
        load_volume(_write(tmp_path, GOOD.replace("uint8", "int16"), b"\0\0\0\0"))
    with pytest.raises(DataSizeMismatchError):
        load_volume(_write(tmp_path, GOOD, b"\0\0\0"))
    with pytest.raises(VolumeFormatError):
        load_volume(_write(tmp_path, GOOD, b"\0\x07"))
    assert isinstance(load_volume(_write(tmp_path, "# note\n" + GOOD, b"\1\2")), LabelVolume)


def test_header_path_and_listing(tmp_path):
    assert header_path(tmp_path / "a").name == "a.vhdr"
    assert header_path(tmp_path / "a.vhdr").name == "a.vhdr"
    g = VolumeGeometry((2, 2, 2))
    for name in ("b", "a"):
        store_volume(ScalarVolume(g, np.zeros(g.shape)), tmp_path / name)
    assert [p.name for p in list_volumes(tmp_path)] == ["a.vhdr", "b.vhdr"]
