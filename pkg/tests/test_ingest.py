import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import posts_for_extent
from pdsfix import pds_bytes, write_sparse_pds
from terrasynth import fixtures
from terrasynth.imageio import UnsupportedImageFormat, write_pgm
from terrasynth.ingest import (
    BasedInt,
    Heightfield,
    MalformedHeader,
    MalformedLabel,
    OrthoTexture,
    TruncatedData,
    UnsupportedSampleType,
    UnsupportedValue,
    check_coregistration,
    load_dtm_grid,
    load_dtm_pds,
    load_terrain,
    load_texture,
    parse_pds3_label,
    probe_terrain,
    read_pds_dtm,
    write_dtm_grid,
)
from terrasynth.terrain import triangulate, world_bounds

# ---------------------------------------------------------------- labels


def test_label_simple_entries():
    lab = parse_pds3_label(b"LINES = 4\nLINE_SAMPLES = 3\nEND")
    assert lab.entries == {"LINES": 4, "LINE_SAMPLES": 3}


def test_label_units_stripped_and_recorded():
    lab = parse_pds3_label(b"MAP_SCALE = 0.25 <m/pixel>\nEND")
    assert lab.entries["MAP_SCALE"] == 0.25
    assert lab.units["MAP_SCALE"] == "m/pixel"


def test_label_missing_end():
    with pytest.raises(MalformedLabel):
        parse_pds3_label(b"LINES = 4\nLINE_SAMPLES = 3\n")


@pytest.mark.parametrize(
    "text",
    [
        b'NAME = "unterminated\nEND',
        b"SEQ = (1, 2\nEND",
        b"A = 1\nA = 2\nEND",
        b"OBJECT = IMAGE\nLINES = 1\nEND",
        b"OBJECT = IMAGE\nEND_OBJECT = TABLE\nEND",
        b"= 5\nEND",
    ],
)
def test_label_malformed(text):
    with pytest.raises(MalformedLabel):
        parse_pds3_label(text)


def test_label_unsupported_set():
    with pytest.raises(UnsupportedValue):
        parse_pds3_label(b"BANDS = {1, 2}\nEND")


def test_label_value_grammar():
    lab = parse_pds3_label(
        b"/* comment */\n"
        b'NOTE = "multi\n line"\n'
        b"SYM = IEEE_REAL\n"
        b"QSYM = 'N/A'\n"
        b"SEQ = (1, 2.5, ABC)\n"
        b"NEG = -3.5E2\n"
        b"HEX = 16#FF7FFFFB#\n"
        b"DATE = 2020-01-01T00:00:00\n"
        b"END\n"
        b"LINES = 99\n"
    )
    e = lab.entries
    assert e["NOTE"] == "multi line"  # line breaks inside strings fold to one space
    assert e["SYM"] == "IEEE_REAL"
    assert e["QSYM"] == "N/A"
    assert e["SEQ"] == (1, 2.5, "ABC")
    assert e["NEG"] == -350.0
    assert e["HEX"] == 0xFF7FFFFB and isinstance(e["HEX"], BasedInt)
    assert "LINES" not in e  # text after END is never read


def test_label_nested_objects_and_find():
    lab = parse_pds3_label(b"OBJECT = IMAGE\n LINES = 2\n GROUP = G\n  X = 1 <KM>\n END_GROUP = G\nEND_OBJECT = IMAGE\nEND")
    img = lab.entries["IMAGE"]
    assert img.kind == "OBJECT" and img.entries["LINES"] == 2
    assert lab.find("X") == 1 and lab.find_unit("X") == "KM"
    assert lab.find("NOPE", 7) == 7


def test_label_end_offset_from_records():
    blob = pds_bytes(np.zeros((2, 2), ">f4"), "IEEE_REAL", 32)
    lab = parse_pds3_label(blob)
    assert lab.end_offset == lab.entries["RECORD_BYTES"] * lab.entries["LABEL_RECORDS"]
    assert lab.data_offset == lab.end_offset


@settings(max_examples=50)
@given(st.dictionaries(st.from_regex(r"[A-Z][A-Z0-9_]{0,10}", fullmatch=True).filter(lambda k: k not in ("END", "OBJECT", "GROUP", "END_OBJECT", "END_GROUP")),
                       st.one_of(st.integers(-10**9, 10**9), st.from_regex(r"[A-Z][A-Z_]{0,8}", fullmatch=True)), max_size=8))
def test_label_parse_determinism_and_content(d):
    text = "".join(f"{k} = {v}\n" for k, v in d.items()) + "END\n"
    a = parse_pds3_label(text.encode())
    b = parse_pds3_label(text.encode())
    assert a.entries == b.entries == d


# ---------------------------------------------------------------- PDS rasters


def test_pds_real32_with_missing():
    missing = struct.unpack(">f", bytes.fromhex("FF7FFFFB"))[0]
    data = np.array([[1.0, 2.0], [missing, 4.0]], dtype=">f4")
    blob = pds_bytes(data, "IEEE_REAL", 32, "  MISSING_CONSTANT = 16#FF7FFFFB#\r\n")
    lab = parse_pds3_label(blob)
    h = load_dtm_pds(lab, blob[lab.data_offset:])
    assert h.nodata_mask.tolist() == [[False, False], [True, False]]
    assert h.elevations[0, 0] == 1.0 and h.elevations[1, 1] == 4.0
    assert np.isnan(h.elevations[1, 0])
    assert h.post_spacing == 1.0


def test_pds_pc_real_and_decimal_missing():
    data = np.array([[1.5, -3.4028226550889045e38], [2.5, 7.0]], dtype="<f4")
    blob = pds_bytes(data, "PC_REAL", 32, "  MISSING_CONSTANT = -3.4028226550889045E38\r\n")
    h = read_from_bytes(blob)
    assert h.nodata_mask.tolist() == [[False, True], [False, False]]
    assert h.elevations[0, 0] == 1.5


def read_from_bytes(blob):
    lab = parse_pds3_label(blob)
    return load_dtm_pds(lab, blob[lab.data_offset:])


@pytest.mark.parametrize("stype,bits,dtype", [
    ("MSB_INTEGER", 16, ">i2"), ("LSB_INTEGER", 16, "<i2"), ("MSB_UNSIGNED_INTEGER", 8, "u1"),
    ("LSB_UNSIGNED_INTEGER", 16, "<u2"), ("IEEE_REAL", 64, ">f8"),
])
def test_pds_integer_scaling(stype, bits, dtype):
    raw = np.array([[0, 10], [20, 30]], dtype=dtype)
    blob = pds_bytes(raw, stype, bits, "  SCALING_FACTOR = 0.5\r\n  OFFSET = -100.0\r\n  MISSING_CONSTANT = 30\r\n")
    h = read_from_bytes(blob)
    assert h.elevations[0].tolist() == [-100.0, -95.0]
    assert h.elevations[1, 0] == -90.0
    assert h.nodata_mask.tolist() == [[False, False], [False, True]]


def test_pds_map_scale_km():
    blob = pds_bytes(np.zeros((2, 2), ">f4"), "IEEE_REAL", 32, map_scale="MAP_SCALE = 0.001 <KM/PIXEL>")
    assert read_from_bytes(blob).post_spacing == 1.0


def test_pds_truncated():
    lab = parse_pds3_label(
        b"LINES = 1024\nLINE_SAMPLES = 1024\nSAMPLE_TYPE = IEEE_REAL\nSAMPLE_BITS = 32\nMAP_SCALE = 1.0\nEND\n"
    )
    with pytest.raises(TruncatedData):
        load_dtm_pds(lab, b"0123456789")


def test_pds_unsupported_sample_type():
    blob = pds_bytes(np.zeros((2, 2), "u1"), "VAX_REAL", 32)
    with pytest.raises(UnsupportedSampleType):
        read_from_bytes(blob)


def test_pds_file_and_probe(tmp_path):
    data = np.arange(12, dtype=">f4").reshape(3, 4)
    p = tmp_path / "dtm.img"
    p.write_bytes(pds_bytes(data, "IEEE_REAL", 32))
    h = read_pds_dtm(p)
    assert np.array_equal(h.elevations, data.astype(float))
    pr = probe_terrain(p)
    assert (pr.rows, pr.cols, pr.post_spacing, pr.kind) == (3, 4, 1.0, "pds3")
    assert np.array_equal(load_terrain(p).elevations, h.elevations)


def test_probe_full_size_product(tmp_path):
    # a Jezero-sized label: 6737 m x 14403 m at 1 m/post
    rows, cols = posts_for_extent(14403, 1), posts_for_extent(6737, 1)
    p = tmp_path / "big.img"
    write_sparse_pds(p, rows, cols)
    pr = probe_terrain(p)
    assert (pr.rows, pr.cols) == (14404, 6738)
    assert (pr.extent_x, pr.extent_y) == (6737.0, 14403.0)


def test_probe_detects_truncation(tmp_path):
    p = tmp_path / "short.img"
    write_sparse_pds(p, 100, 100)
    with open(p, "r+b") as fh:
        fh.truncate(p.stat().st_size - 4)
    with pytest.raises(TruncatedData):
        probe_terrain(p)


# ---------------------------------------------------------------- HFG


def test_hfg_3x3(tmp_path):
    p = tmp_path / "a.hfg"
    p.write_bytes(b"HFG1 3 3 1.0 -9999\n" + np.arange(9, dtype="<f4").tobytes())
    h = load_dtm_grid(p)
    assert h.rows == h.cols == 3 and h.elevations[2, 2] == 8.0 and not h.nodata_mask.any()


def test_hfg_nodata(tmp_path):
    z = np.zeros(9, dtype="<f4")
    z[4] = -9999
    p = tmp_path / "a.hfg"
    p.write_bytes(b"HFG1 3 3 1.0 -9999\n" + z.tobytes())
    h = load_dtm_grid(p)
    assert h.nodata_mask.sum() == 1 and h.nodata_mask[1, 1]


@settings(max_examples=30)
@given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-1e4, 1e4, width=32) | st.just(np.float32(np.nan))),
       st.sampled_from([0.25, 1.0, 2.0, 0.1]))
def test_hfg_round_trip_bitwise(tmp_path_factory, z, post):
    d = tmp_path_factory.mktemp("hfg")
    h = Heightfield.from_array(z.astype(np.float64), post)
    write_dtm_grid(h, d / "a.hfg")
    back = load_dtm_grid(d / "a.hfg")
    assert back.post_spacing == post
    assert np.array_equal(back.nodata_mask, h.nodata_mask)
    assert back.elevations.tobytes() == h.elevations.tobytes()
    write_dtm_grid(back, d / "b.hfg")
    assert (d / "a.hfg").read_bytes() == (d / "b.hfg").read_bytes()
    # every post is either nodata or finite
    assert back.nodata_mask.sum() + np.isfinite(back.elevations).sum() == back.rows * back.cols


@pytest.mark.parametrize("blob,err", [
    (b"HFG1 3 3 1.0 -9999\n" + bytes(20), TruncatedData),
    (b"HFG1 1 1 1.0 -9999\n" + bytes(8), MalformedHeader),
    (b"HFG1 3 x 1.0 -9999\n" + bytes(36), MalformedHeader),
    (b"HFG1 3 3 0 -9999\n" + bytes(36), MalformedHeader),
    (b"HFG1 3 3 1.0\n" + bytes(36), MalformedHeader),
])
def test_hfg_errors(tmp_path, blob, err):
    p = tmp_path / "bad.hfg"
    p.write_bytes(blob)
    with pytest.raises(err):
        load_dtm_grid(p)


def test_hfg_probe_matches_load(tmp_path):
    h = fixtures.hills(9, 2.0)
    write_dtm_grid(h, tmp_path / "a.hfg")
    pr = probe_terrain(tmp_path / "a.hfg")
    assert (pr.rows, pr.cols, pr.post_spacing, pr.kind) == (9, 9, 2.0, "hfg")


def test_extent_formula():
    h = Heightfield.from_array(np.zeros((5, 7)), 0.5)
    assert (h.extent_x, h.extent_y) == (3.0, 2.0)
    assert h.origin_world == (-1.5, 1.0)
    b = world_bounds(triangulate(h))
    assert b.max[0] - b.min[0] == h.extent_x and b.max[1] - b.min[1] == h.extent_y


# ---------------------------------------------------------------- textures


def test_texture_8bit(tmp_path):
    p = tmp_path / "t.pgm"
    write_pgm(p, np.array([[0, 255]], dtype=np.uint8))
    t = load_texture(p, 0.25)
    assert t.albedo.tolist() == [[0.0, 1.0]]


def test_texture_16bit(tmp_path):
    p = tmp_path / "t.pgm"
    write_pgm(p, np.array([[32768]], dtype=np.uint16))
    t = load_texture(p, 0.25)
    assert t.albedo[0, 0] == 32768 / 65535


def test_texture_bad_format(tmp_path):
    p = tmp_path / "t.jpg"
    p.write_bytes(b"\xff\xd8\xff\xe0garbage")
    with pytest.raises(UnsupportedImageFormat):
        load_texture(p, 0.25)


def test_texture_range_check():
    with pytest.raises(ValueError):
        OrthoTexture(1.0, np.array([[1.5]]))


# ---------------------------------------------------------------- co-registration


def test_coregistration_matched():
    h = Heightfield.from_array(np.zeros((101, 101)), 1.0)
    t = OrthoTexture(0.25, np.zeros((401, 401)))
    r = check_coregistration(h, t)
    assert r.texels_per_post == 4 and r.pass_
    assert r.extent_mismatch_x == 0 and r.extent_mismatch_y == 0


def test_coregistration_half_extent():
    h = Heightfield.from_array(np.zeros((101, 101)), 1.0)
    t = OrthoTexture(0.25, np.zeros((401, 201)))
    assert not check_coregistration(h, t).pass_


def test_coregistration_identical():
    h = Heightfield.from_array(np.zeros((11, 11)), 1.0)
    t = OrthoTexture(1.0, np.zeros((11, 11)))
    r = check_coregistration(h, t)
    assert r.pass_ and r.extent_mismatch_x == 0 and r.texels_per_post == 1
