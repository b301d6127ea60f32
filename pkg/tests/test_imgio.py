import numpy as np
import pytest

from headsynth.errors import ContractViolation, ParseError
from headsynth.imgio import (
    load_points,
    read_feature_pfm,
    read_pfm,
    read_png,
    save_points,
    write_feature_pfm,
    write_pfm,
    write_png,
)


def test_png_round_trip_quantized(rng, tmp_path):
    rgb = rng.random((12, 10, 3))
    p = tmp_path / "img.png"
    write_png(p, rgb)
    back = read_png(p)
    assert back.shape == (12, 10, 3)
    assert np.max(np.abs(back - rgb)) <= 0.5 / 255.0 + 1e-12


def test_png_deterministic_bytes(rng, tmp_path):
    rgb = rng.random((8, 8, 3))
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    write_png(a, rgb)
    write_png(b, rgb)
    assert a.read_bytes() == b.read_bytes()


def test_png_clips_out_of_range(tmp_path):
    rgb = np.array([[[-1.0, 0.5, 2.0]]])
    p = tmp_path / "c.png"
    write_png(p, rgb)
    assert np.allclose(read_png(p)[0, 0], [0.0, 0.5, 1.0], atol=0.5 / 255)


def test_png_shape_check(tmp_path):
    with pytest.raises(ContractViolation):
        write_png(tmp_path / "bad.png", np.zeros((4, 4)))


def test_pfm_gray_round_trip_bitexact(rng, tmp_path):
    data = rng.normal(size=(9, 7)).astype(np.float32)
    p = tmp_path / "m.pfm"
    write_pfm(p, data)
    assert np.array_equal(read_pfm(p), data)


def test_pfm_color_round_trip_bitexact(rng, tmp_path):
    data = rng.normal(size=(5, 6, 3)).astype(np.float32)
    p = tmp_path / "c.pfm"
    write_pfm(p, data)
    assert np.array_equal(read_pfm(p), data)


def test_pfm_header_little_endian(tmp_path, rng):
    p = tmp_path / "h.pfm"
    write_pfm(p, rng.normal(size=(3, 4)).astype(np.float32))
    head = p.read_bytes()[:20].split(b"\n")
    assert head[0] == b"Pf"
    assert head[1] == b"4 3"
    assert float(head[2]) < 0  # negative scale marks little-endian


def test_pfm_row_order_bottom_up(tmp_path):
    data = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    p = tmp_path / "r.pfm"
    write_pfm(p, data)
    raw = p.read_bytes()
    payload = np.frombuffer(raw.split(b"\n", 3)[3], dtype="<f4")
    assert np.array_equal(payload, [3.0, 4.0, 1.0, 2.0])


def test_pfm_bad_magic(tmp_path):
    p = tmp_path / "bad.pfm"
    p.write_bytes(b"P5\n2 2\n-1.0\n" + bytes(16))
    with pytest.raises(ParseError):
        read_pfm(p)


def test_pfm_truncated(tmp_path, rng):
    p = tmp_path / "t.pfm"
    write_pfm(p, rng.normal(size=(4, 4)).astype(np.float32))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ParseError):
        read_pfm(p)


def test_feature_pfm_round_trip(rng, tmp_path):
    feats = rng.normal(size=(6, 5, 32)).astype(np.float32)
    p = tmp_path / "f.pfm"
    write_feature_pfm(p, feats)
    assert np.array_equal(read_feature_pfm(p, 32), feats)


def test_feature_pfm_channel_mismatch(rng, tmp_path):
    p = tmp_path / "f.pfm"
    write_feature_pfm(p, rng.normal(size=(6, 5, 32)).astype(np.float32))
    with pytest.raises(ParseError):
        read_feature_pfm(p, 7)


def test_pts1_round_trip(rng, tmp_path):
    pts = rng.normal(size=(50, 3))
    feats = rng.normal(size=(50, 32))
    p = tmp_path / "pts.bin"
    save_points(p, pts, feats)
    back_p, back_f = load_points(p)
    assert np.array_equal(back_p, pts)  # full precision: no quantization
    assert np.array_equal(back_f, feats)


def test_pts1_header_and_errors(rng, tmp_path):
    p = tmp_path / "pts.bin"
    save_points(p, np.zeros((4, 3)), np.zeros((4, 2)))
    raw = p.read_bytes()
    assert raw[:4] == b"PTS1"
    assert len(raw) == 4 + 8 + 8 * 4 * 5
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ParseError):
        load_points(bad)
    trunc = tmp_path / "trunc.bin"
    trunc.write_bytes(raw[:-4])
    with pytest.raises(ParseError):
        load_points(trunc)
    with pytest.raises(ContractViolation):
        save_points(p, np.zeros((3, 3)), np.zeros((4, 2)))
