from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from canaltrace.imageio import (HEADER_KEYS, REPORT_KEYS, ControlPointError, DimensionError, MissingKeyError,
                                NonBinaryError, PayloadSizeError, ReportError, UnsupportedTypeError,
                                format_report, parse_control_points, read_control_points, read_report,
                                read_volume, volume_paths, write_control_points, write_report, write_volume)
from canaltrace.volume import BinaryVolume, ScalarVolume, Spacing

DATA = Path(__file__).parent / "data"


def _header(dims="2 2 2", etype="MET_UCHAR", ndims="3", drop=None):
    fields = {
        "ObjectType": "Image", "NDims": ndims, "DimSize": dims, "ElementSpacing": "1 1 1", "Offset": "0 0 0",
        "ElementType": etype, "ElementByteOrderMSB": "False", "ElementDataFile": "LOCAL",
    }
    return "".join(f"{k} = {v}\n" for k, v in fields.items() if k != drop).encode()


@pytest.mark.parametrize("dtype", [np.uint8, np.int16, np.float32])
@pytest.mark.parametrize("suffix", [".mha", ".mhd"])
def test_volume_round_trip_is_bit_exact(tmp_path, rng, dtype, suffix):
    if dtype == np.float32:
        data = rng.normal(size=(5, 4, 3)).astype(np.float32)
    else:
        info = np.iinfo(dtype)
        data = rng.integers(info.min, info.max, size=(5, 4, 3), endpoint=True).astype(dtype)
    vol = ScalarVolume(data, Spacing(0.4, 0.25, 0.1 + 0.2), (-12.5, 3.3, 1e-7))
    path = tmp_path / f"v{suffix}"
    write_volume(vol, path)
    back = read_volume(path, binary=False)
    assert back.data.dtype == dtype
    assert back.data.tobytes() == data.tobytes()
    assert back.spacing == vol.spacing and back.origin == vol.origin
    for p in volume_paths(path):
        assert Path(p).is_file()


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(1e-3, 10.0), min_size=3, max_size=3), st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3))
def test_header_floats_round_trip_exactly(tmp_path_factory, spacing, origin):
    path = tmp_path_factory.mktemp("h") / "v.mha"
    vol = BinaryVolume(np.zeros((1, 2, 3), np.uint8), Spacing(*spacing), origin)
    write_volume(vol, path)
    back = read_volume(path)
    assert tuple(back.spacing) == tuple(spacing) and back.origin == tuple(origin)


def test_binary_round_trip_and_kind(tmp_path):
    vol = BinaryVolume(np.eye(3, dtype=np.uint8)[:, :, None].repeat(2, axis=2))
    write_volume(vol, tmp_path / "b.mhd")
    back = read_volume(tmp_path / "b.mhd")
    assert isinstance(back, BinaryVolume)
    np.testing.assert_array_equal(back.data, vol.data)


def test_header_layout_and_x_fastest_payload(tmp_path):
    data = np.zeros((3, 2, 2), np.uint8)
    for x in range(3):
        for y in range(2):
            for z in range(2):
                data[x, y, z] = x + 10 * y + 100 * z
    write_volume(ScalarVolume(data), tmp_path / "v.mhd")
    lines = (tmp_path / "v.mhd").read_text().splitlines()
    assert [ln.split(" = ")[0] for ln in lines] == list(HEADER_KEYS)
    assert "ElementByteOrderMSB = False" in lines
    assert "ElementDataFile = v.raw" in lines
    raw = (tmp_path / "v.raw").read_bytes()
    assert list(raw[:4]) == [0, 1, 2, 10]


def test_single_voxel_payload(tmp_path):
    write_volume(BinaryVolume(np.ones((1, 1, 1), np.uint8)), tmp_path / "one.mhd")
    assert (tmp_path / "one.raw").read_bytes() == b"\x01"


def test_float32_payload_length(tmp_path):
    write_volume(ScalarVolume(np.zeros((3, 4, 5), np.float32)), tmp_path / "f.mhd")
    assert len((tmp_path / "f.raw").read_bytes()) == 4 * 3 * 4 * 5


def test_writes_are_deterministic(tmp_path, rng):
    vol = ScalarVolume(rng.normal(size=(4, 4, 4)).astype(np.float32), Spacing.iso(0.4))
    write_volume(vol, tmp_path / "a.mha")
    write_volume(vol, tmp_path / "b.mha")
    assert (tmp_path / "a.mha").read_bytes() == (tmp_path / "b.mha").read_bytes()


def test_payload_size_error(tmp_path):
    (tmp_path / "bad.mha").write_bytes(_header() + b"\x00" * 7)
    with pytest.raises(PayloadSizeError, match="7 bytes"):
        read_volume(tmp_path / "bad.mha")


def test_unsupported_type_error(tmp_path):
    (tmp_path / "bad.mha").write_bytes(_header(etype="MET_DOUBLE") + b"\x00" * 64)
    with pytest.raises(UnsupportedTypeError, match="MET_DOUBLE"):
        read_volume(tmp_path / "bad.mha")


def test_missing_key_error_names_key(tmp_path):
    (tmp_path / "bad.mha").write_bytes(_header(drop="Offset") + b"\x00" * 8)
    with pytest.raises(MissingKeyError, match="Offset"):
        read_volume(tmp_path / "bad.mha")


def test_non_3d_error(tmp_path):
    (tmp_path / "bad.mha").write_bytes(_header(ndims="2", dims="2 2") + b"\x00" * 4)
    with pytest.raises(DimensionError):
        read_volume(tmp_path / "bad.mha")


def test_non_binary_error_reports_offset(tmp_path):
    (tmp_path / "bad.mha").write_bytes(_header() + b"\x00\x01\x00\x05" + b"\x00" * 4)
    with pytest.raises(NonBinaryError, match="element offset 3"):
        read_volume(tmp_path / "bad.mha", binary=True)


def test_control_points_basic():
    cps = parse_control_points("0 0 0\n1 0 0")
    np.testing.assert_array_equal(cps.points, [[0, 0, 0], [1, 0, 0]])


def test_control_points_comment_and_whitespace():
    cps = parse_control_points("# header\n1\t2 3\n\n4 5 6\n7   8 9", side="right")
    assert len(cps) == 3 and cps.side == "right"


def test_control_points_parse_error_line_number():
    with pytest.raises(ControlPointError, match="line 1") as exc:
        parse_control_points("a b c\n1 2 3")
    assert exc.value.line == 1


@pytest.mark.parametrize("text", ["1 2 3", "1,5 2 3\n1 2 3", "1 2\n3 4 5", "nan 1 2\n1 2 3"])
def test_control_points_rejections(text):
    with pytest.raises(ControlPointError):
        parse_control_points(text)


def test_control_points_golden_file():
    cps = read_control_points(DATA / "golden_left.asc", "left")
    expected = [
        [12.4, 30.0, 8.25],
        [13.0, 30.4, 8.5],
        [14.125, 31.0, 9.0],
        [15.75, 31.5, 9.875],
        [17.0, 32.25, 10.5],
    ]
    assert cps.points.tolist() == expected


def test_control_points_write_read_round_trip(tmp_path, rng):
    pts = rng.normal(scale=30, size=(6, 3))
    write_control_points(pts, tmp_path / "p.asc", comment="test")
    assert read_control_points(tmp_path / "p.asc").points.tolist() == pts.tolist()


def _record(**kw):
    rec = {k: 1.0 for k in REPORT_KEYS}
    rec.update(kw)
    return rec


def test_report_format_and_round_trip(tmp_path):
    rec = _record(mcd_gp_mm=0.0, mcd_pg_mm=0.123456789)
    write_report(rec, tmp_path / "r.txt")
    text = (tmp_path / "r.txt").read_text()
    assert "mcd_gp_mm 0.000000\n" in text
    assert "mcd_pg_mm 0.123457\n" in text
    assert [ln.split()[0] for ln in text.splitlines()] == list(REPORT_KEYS)
    assert read_report(tmp_path / "r.txt")["precision"] == 1.0


def test_report_identical_bytes(tmp_path):
    write_report(_record(), tmp_path / "a")
    write_report(_record(), tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_report_missing_key():
    rec = _record()
    del rec["miou"], rec["recall"]
    with pytest.raises(ReportError, match="recall, miou"):
        format_report(rec)


def test_report_undefined_values():
    text = format_report(_record(mcd_gp_mm=None, precision=0.0, undefined=["precision"]))
    assert "mcd_gp_mm undefined" in text
    assert text.endswith("undefined precision\n")
