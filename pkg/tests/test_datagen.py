"""Dataset synthesis: sampling boxes, seeding, persistence, validation."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from headsynth.datagen import (
    BakeSpec,
    CAMERA_BOX,
    CLIP_LENGTH,
    EYE_BOX,
    FORMAT_VERSION,
    FOV_DEG,
    JAW_BOX,
    NECK_BOX,
    REBALANCE_EDGES_DEG,
    REBALANCE_FACTORS,
    STATIC_SHAPE_FACTOR,
    _stream,
    background_features,
    background_seed_for,
    identity_field,
    identity_spec,
    make_dynamic_set,
    make_static_set,
    rebalance_factor,
    record_point_features,
    sample_camera,
    sample_motion,
    sample_neck_pose,
    validate_dataset,
)
from headsynth.deform import deformation_field
from headsynth.errors import ContractViolation, ValidationError
from headsynth.headmodel import ExpressionCode, PoseCode, ShapeCode
from headsynth.imgio import load_points
from headsynth.render import CUBE_SCALE
from headsynth.triplane import bake_analytic, default_head_field, sample

TINY = BakeSpec(resolution=32, channels=8, image_size=16, n_coarse=8,
                n_fine=8, point_count=200)


def tree_digest(root):
    digest = hashlib.sha256()
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            digest.update(str(p.relative_to(root)).encode())
            digest.update(p.read_bytes())
    return digest.hexdigest()


@pytest.fixture(scope="module")
def dynamic_set(rig, tmp_path_factory):
    out = tmp_path_factory.mktemp("dyn") / "ds"
    manifest = make_dynamic_set(rig, TINY, n_id=2, n_motion=2, n_view=2,
                                seed=11, out_dir=out)
    return out, manifest


# ---------------------------------------------------------------------------
# sampling boxes


def test_camera_draws_stay_in_box_with_fixed_fov():
    cams = [sample_camera(_stream(3, 50, i)) for i in range(400)]
    for c in cams:
        assert CAMERA_BOX["pitch"][0] <= c.pitch <= CAMERA_BOX["pitch"][1]
        assert CAMERA_BOX["yaw"][0] <= c.yaw <= CAMERA_BOX["yaw"][1]
        assert CAMERA_BOX["roll"][0] <= c.roll <= CAMERA_BOX["roll"][1]
        assert CAMERA_BOX["radius"][0] <= c.radius <= CAMERA_BOX["radius"][1]
        lx, ly, lz = c.look_at
        assert CAMERA_BOX["look_x"][0] <= lx <= CAMERA_BOX["look_x"][1]
        assert CAMERA_BOX["look_y"][0] <= ly <= CAMERA_BOX["look_y"][1]
        assert CAMERA_BOX["look_z"][0] <= lz <= CAMERA_BOX["look_z"][1]
        assert c.fov_deg == FOV_DEG == 12.0


def test_camera_marginals_are_uniform():
    rng = np.random.default_rng(2024)
    cams = [sample_camera(rng) for _ in range(4000)]
    for name, values in (("pitch", [c.pitch for c in cams]),
                         ("yaw", [c.yaw for c in cams]),
                         ("radius", [c.radius for c in cams])):
        lo, hi = CAMERA_BOX[name]
        counts, _ = np.histogram(values, bins=10, range=(lo, hi))
        p = stats.chisquare(counts).pvalue
        assert p > 0.01, f"{name} marginal not uniform (p={p})"


def test_neck_pose_in_box():
    draws = np.array([sample_neck_pose(_stream(7, 8, i)) for i in range(300)])
    lo = [NECK_BOX["pitch"][0], NECK_BOX["yaw"][0], NECK_BOX["roll"][0]]
    hi = [NECK_BOX["pitch"][1], NECK_BOX["yaw"][1], NECK_BOX["roll"][1]]
    assert np.all(draws >= lo) and np.all(draws <= hi)
    # yaw range is the widest: make sure both signs actually occur
    assert draws[:, 1].min() < -0.2 and draws[:, 1].max() > 0.2


def test_motion_jaw_and_eye_boxes(rig):
    for m in range(50):
        spec = sample_motion(5, 0, m, rig.expr_dim)
        assert JAW_BOX[0] <= spec.pose.jaw[0] <= JAW_BOX[1]
        assert spec.pose.jaw[1] == spec.pose.jaw[2] == 0.0
        assert np.all(spec.pose.eye[:2] >= EYE_BOX[0])
        assert np.all(spec.pose.eye[:2] <= EYE_BOX[1])
        assert spec.pose.eye[2] == 0.0


def test_motion_expressions_form_clips(rig):
    base = sample_motion(5, 3, 0, rig.expr_dim)
    wrapped = sample_motion(5, 3, CLIP_LENGTH, rig.expr_dim)
    neighbor = sample_motion(5, 3, 1, rig.expr_dim)
    # slots repeat with the clip period; adjacent slots differ
    assert np.array_equal(base.expression.values, wrapped.expression.values)
    assert not np.array_equal(base.expression.values,
                              neighbor.expression.values)
    assert not np.array_equal(base.pose.neck, wrapped.pose.neck)
    other = sample_motion(5, 4, 0, rig.expr_dim)
    assert not np.array_equal(base.expression.values, other.expression.values)


# ---------------------------------------------------------------------------
# rebalancing


def test_rebalance_factor_examples():
    assert rebalance_factor(5.0) == 1
    assert rebalance_factor(20.0) == 2
    assert rebalance_factor(-20.0) == 2
    assert rebalance_factor(35.0) == 4
    assert rebalance_factor(50.0) == 8
    assert rebalance_factor(70.0) == 16


def test_rebalance_factor_half_open_edges():
    for edge, factor in zip(REBALANCE_EDGES_DEG, REBALANCE_FACTORS[1:]):
        assert rebalance_factor(edge) == factor
        assert rebalance_factor(edge - 1e-9) == factor // 2


# ---------------------------------------------------------------------------
# identity appearance and backgrounds


def test_identity_field_jitters_but_keeps_structure():
    base = default_head_field()
    f1 = identity_field(123)
    f2 = identity_field(123)
    f3 = identity_field(124)
    assert len(f1.parts) == len(base.parts)
    assert f1.parts[0].center == (0.0, 0.0, 0.0)  # head blob stays centred
    for got, ref in zip(f1.parts, base.parts):
        assert np.all(np.asarray(got.radii) <= np.asarray(ref.radii))
        assert 0.9 * ref.amplitude <= got.amplitude <= 1.1 * ref.amplitude
        assert got.tail_cap == ref.tail_cap
    for a, b in zip(f1.parts, f2.parts):
        assert a == b
    assert any(a != b for a, b in zip(f1.parts, f3.parts))


def test_background_is_pure_function_of_identity():
    s = background_seed_for(99)
    assert s == background_seed_for(99)
    assert s != background_seed_for(100)
    a = background_features(s, 8, 8, 5)
    b = background_features(s, 8, 8, 5)
    c = background_features(background_seed_for(100), 8, 8, 5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.shape == (8, 8, 5)
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_static_shapes_scale_dynamic_ones(rig):
    dyn = identity_spec(11, 0, rig.shape_dim)
    stat = identity_spec(11, 0, rig.shape_dim,
                         scale=STATIC_SHAPE_FACTOR * 0.8)
    ratio = stat.shape.values / dyn.shape.values
    assert np.allclose(ratio, STATIC_SHAPE_FACTOR, rtol=0, atol=1e-12)
    assert float(np.median(np.abs(stat.shape.values))
                 / np.median(np.abs(dyn.shape.values))) \
        == pytest.approx(STATIC_SHAPE_FACTOR)


# ---------------------------------------------------------------------------
# point-feature records


def test_record_point_features_selects_without_replacement(rng):
    record = {"coarse_positions": rng.normal(size=(40, 5, 3)),
              "coarse_features": rng.normal(size=(40, 5, 4))}
    pts, feats = record_point_features(record, 30, np.random.default_rng(0))
    assert pts.shape == (30, 3) and feats.shape == (30, 4)
    assert len(np.unique(pts, axis=0)) == 30
    flat_p = record["coarse_positions"].reshape(-1, 3)
    flat_f = record["coarse_features"].reshape(-1, 4)
    for p, f in zip(pts, feats):
        row = np.flatnonzero(np.all(flat_p == p, axis=1))
        assert len(row) == 1 and np.array_equal(flat_f[row[0]], f)


def test_record_point_features_reproducible(rng):
    record = {"coarse_positions": rng.normal(size=(100, 3)),
              "coarse_features": rng.normal(size=(100, 6))}
    a = record_point_features(record, 10, np.random.default_rng(4))
    b = record_point_features(record, 10, np.random.default_rng(4))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_record_point_features_needs_enough_samples(rng):
    record = {"coarse_positions": rng.normal(size=(10, 3)),
              "coarse_features": rng.normal(size=(10, 4))}
    with pytest.raises(ContractViolation):
        record_point_features(record, 11)


# ---------------------------------------------------------------------------
# generation


def test_dynamic_set_layout_and_counts(dynamic_set):
    out, manifest = dynamic_set
    assert manifest["format_version"] == FORMAT_VERSION
    assert manifest["kind"] == "dynamic"
    c = manifest["counts"]
    assert (c["identities"], c["motions_per_identity"], c["views_per_motion"]) \
        == (2, 2, 2)
    assert len(manifest["records"]) == 8
    assert manifest["ranges"]["fov_deg"] == 12.0
    assert manifest["ranges"]["camera"]["yaw"] == [-0.78, 0.78]
    assert manifest["ranges"]["neck"]["yaw"] == [-0.5, 0.5]
    assert (out / "rig.json").exists()
    for rec in manifest["records"]:
        rec_dir = out / rec["dir"]
        for fname in rec["files"].values():
            assert (rec_dir / fname).exists()
        assert rec["rebalance"] == rebalance_factor(rec["yaw_deg"])
    written = json.loads((out / "manifest.json").read_text())
    assert written["counts"] == manifest["counts"]


def test_dataset_validates_clean(dynamic_set):
    out, _ = dynamic_set
    report = validate_dataset(out)
    assert report.passed
    assert report.problems == ()
    assert "result: PASS" in report.to_text()


def test_backgrounds_constant_per_identity(dynamic_set):
    out, manifest = dynamic_set
    by_identity = {}
    for rec in manifest["records"]:
        raw = (out / rec["dir"] / "i_bg.pfm").read_bytes()
        by_identity.setdefault(rec["identity"], set()).add(raw)
    assert all(len(v) == 1 for v in by_identity.values())
    assert by_identity[0] != by_identity[1]


def test_point_features_recompute_bitwise(dynamic_set, rig):
    out, manifest = dynamic_set
    rec = manifest["records"][5]
    tp, _ = bake_analytic(identity_field(rec["identity_seed"]),
                          TINY.resolution, TINY.channels)
    field = deformation_field(
        rig, ShapeCode(np.asarray(rec["shape"])),
        ExpressionCode(np.asarray(rec["expression"])),
        PoseCode(np.asarray(rec["eye"]), np.asarray(rec["jaw"]),
                 np.asarray(rec["neck"])))
    pts, feats = load_points(out / rec["dir"] / "points.pts")
    assert len(pts) == TINY.point_count
    redo = sample(tp, (pts + field(pts).dx_head) / CUBE_SCALE)
    assert np.array_equal(redo, feats)


def test_generation_deterministic_and_schedule_free(rig, tmp_path):
    spec = BakeSpec(resolution=16, channels=4, image_size=8, n_coarse=4,
                    n_fine=4, point_count=32)
    make_dynamic_set(rig, spec, 1, 2, 1, seed=9, out_dir=tmp_path / "a")
    make_dynamic_set(rig, spec, 1, 2, 1, seed=9, out_dir=tmp_path / "b")
    make_dynamic_set(rig, spec, 1, 2, 1, seed=9, out_dir=tmp_path / "c",
                     threads=3)
    make_dynamic_set(rig, spec, 1, 2, 1, seed=10, out_dir=tmp_path / "d")
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "c")
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "d")


def test_static_set_single_motion(rig, tmp_path):
    spec = BakeSpec(resolution=16, channels=4, image_size=8, n_coarse=4,
                    n_fine=4, point_count=32)
    manifest = make_static_set(rig, spec, n_id=2, n_view=1, seed=9,
                               out_dir=tmp_path / "s")
    assert manifest["kind"] == "static"
    assert manifest["counts"]["motions_per_identity"] == 1
    assert len(manifest["records"]) == 2
    assert manifest["ranges"]["shape_scale"] \
        == pytest.approx(0.8 * STATIC_SHAPE_FACTOR)
    report = validate_dataset(tmp_path / "s")
    assert report.passed


def test_bake_spec_rejects_nonpositive():
    with pytest.raises(ValidationError):
        BakeSpec(resolution=0)
    with pytest.raises(ValidationError):
        BakeSpec(point_count=-1)


# ---------------------------------------------------------------------------
# validation failures


def test_validate_reports_missing_file(rig, dynamic_set, tmp_path):
    out, manifest = dynamic_set
    import shutil
    broken = tmp_path / "broken"
    shutil.copytree(out, broken)
    victim = broken / manifest["records"][0]["dir"] / "opa.pfm"
    victim.unlink()
    report = validate_dataset(broken)
    assert not report.passed
    assert any("opa.pfm" in p for p in report.problems)


def test_validate_reports_corrupt_points(dynamic_set, tmp_path):
    out, manifest = dynamic_set
    import shutil
    broken = tmp_path / "broken2"
    shutil.copytree(out, broken)
    victim = broken / manifest["records"][1]["dir"] / "points.pts"
    victim.write_bytes(victim.read_bytes()[:-16])
    report = validate_dataset(broken)  # reported, not raised
    assert not report.passed
    assert any("payload" in p or "point" in p for p in report.problems)


def test_validate_reports_record_count_mismatch(dynamic_set, tmp_path):
    out, _ = dynamic_set
    manifest = json.loads((out / "manifest.json").read_text())
    manifest["records"] = manifest["records"][:-1]
    clone = tmp_path / "short"
    import shutil
    shutil.copytree(out, clone)
    (clone / "manifest.json").write_text(json.dumps(manifest))
    report = validate_dataset(clone)
    assert not report.passed
    assert any("counts imply" in p for p in report.problems)


def test_validate_unreadable_manifest(tmp_path):
    report = validate_dataset(tmp_path / "nope")
    assert not report.passed
    assert report.checks == 1
