"""Synthetic multi-identity, multi-motion, multi-view dataset generation.

An identity is an integer seed paired with a shape code; the seed drives a
jittered variant of the analytic head field (its "appearance") and, through a
derived stream, a procedural background feature map, so records of one
identity share a bitwise-identical background.  Motions pair an expression
code (drawn from a contiguous 16-slot clip of a global expression pool) with
jaw/eye/neck rotations; views sample the orbit camera.

Sampling boxes (radians unless noted):
    camera   pitch [-0.25, 0.65], yaw [-0.78, 0.78], roll [-0.25, 0.25],
             radius [3.65, 4.45], look-at [-0.01, 0.01]^2 x [0.02, 0.04],
             FoV fixed at 12 degrees
    neck     pitch [-0.2, 0.2], yaw [-0.5, 0.5], roll [-0.1, 0.1]
    jaw      opening [0, 0.25] about x; eye gaze [-0.15, 0.15] about x and y

The three sampled components are axis-angle rotations about x (pitch),
y (yaw), and z (roll).  Every random stream is keyed by a tuple
(base seed, tag, indices...), so records can be generated in any order or
thread count and reruns are byte-identical.

Records persist as PNG previews, PFM float maps (features stacked one
channel-band per PFM row block), a PTS1 point-feature block holding coarse
head-branch samples with their tri-plane features, and one JSON manifest.
Profile-view rebalancing is recorded as a per-record duplication factor
(1/2/4/8/16 by absolute camera yaw) rather than physically copying files.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .deform import deformation_field
from .errors import ContractViolation, ValidationError
from .headmodel import (
    ExpressionCode,
    HeadRig,
    PoseCode,
    ShapeCode,
    save_rig,
)
from .imgio import (
    load_points,
    read_feature_pfm,
    read_pfm,
    save_points,
    write_feature_pfm,
    write_pfm,
    write_png,
)
from .render import render_full
from .triplane import (
    COLOR_CHANNELS,
    Ellipsoid,
    EllipsoidField,
    bake_analytic,
    default_head_field,
)

FORMAT_VERSION = 1
FOV_DEG = 12.0
POINT_FEATURE_COUNT = 4000
CLIP_LENGTH = 16
DYNAMIC_SHAPE_SCALE = 0.8
STATIC_SHAPE_FACTOR = 1.5
EXPR_SCALE = 0.6

CAMERA_BOX = {
    "pitch": (-0.25, 0.65),
    "yaw": (-0.78, 0.78),
    "roll": (-0.25, 0.25),
    "radius": (3.65, 4.45),
    "look_x": (-0.01, 0.01),
    "look_y": (-0.01, 0.01),
    "look_z": (0.02, 0.04),
}
NECK_BOX = {"pitch": (-0.2, 0.2), "yaw": (-0.5, 0.5), "roll": (-0.1, 0.1)}
JAW_BOX = (0.0, 0.25)
EYE_BOX = (-0.15, 0.15)

REBALANCE_EDGES_DEG = (15.0, 30.0, 45.0, 60.0)
REBALANCE_FACTORS = (1, 2, 4, 8, 16)

# stream tags: one per random role, combined as (seed, tag, indices...)
_TAG_IDENTITY = 1
_TAG_EXPRESSION = 2
_TAG_CAMERA = 3
_TAG_POINTS = 4
_TAG_FIELD = 5
_TAG_RENDER = 6
_TAG_MOTION = 7
_TAG_BACKGROUND = 8

_MAP_FILES = ("i_lr", "i_f", "i_bg", "opa", "depth", "mask", "u")


def _stream(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(tuple(int(k) for k in key)))


@dataclass(frozen=True)
class BakeSpec:
    """Bake and render configuration persisted in the manifest."""

    resolution: int = 256
    channels: int = 32
    image_size: int = 64
    n_coarse: int = 48
    n_fine: int = 48
    point_count: int = POINT_FEATURE_COUNT

    def __post_init__(self):
        if min(self.resolution, self.channels, self.image_size,
               self.n_coarse, self.n_fine, self.point_count) < 1:
            raise ValidationError("bake spec values must be positive")


@dataclass(frozen=True)
class CameraSample:
    pitch: float
    yaw: float
    roll: float
    radius: float
    look_at: tuple
    fov_deg: float = FOV_DEG

    def to_camera(self, width: int, height: int | None = None):
        from .render import camera_from_angles
        return camera_from_angles(self.pitch, self.yaw, self.roll, self.radius,
                                  np.asarray(self.look_at), self.fov_deg,
                                  width, height or width)

    def as_dict(self) -> dict:
        return {"pitch": self.pitch, "yaw": self.yaw, "roll": self.roll,
                "radius": self.radius, "look_at": list(self.look_at),
                "fov_deg": self.fov_deg}


@dataclass(frozen=True)
class IdentitySpec:
    seed: int
    shape: ShapeCode
    background_seed: int


@dataclass(frozen=True)
class MotionSpec:
    expression: ExpressionCode
    pose: PoseCode


def sample_camera(rng: np.random.Generator) -> CameraSample:
    """Uniform draw from the camera box; order: pitch, yaw, roll, radius, look."""
    def u(lo, hi):
        return float(rng.uniform(lo, hi))

    return CameraSample(
        u(*CAMERA_BOX["pitch"]), u(*CAMERA_BOX["yaw"]), u(*CAMERA_BOX["roll"]),
        u(*CAMERA_BOX["radius"]),
        (u(*CAMERA_BOX["look_x"]), u(*CAMERA_BOX["look_y"]),
         u(*CAMERA_BOX["look_z"])))


def sample_neck_pose(rng: np.random.Generator) -> np.ndarray:
    """Uniform neck axis-angle (pitch, yaw, roll components)."""
    return np.array([rng.uniform(*NECK_BOX["pitch"]),
                     rng.uniform(*NECK_BOX["yaw"]),
                     rng.uniform(*NECK_BOX["roll"])])


def rebalance_factor(yaw_deg: float) -> int:
    """Profile-view duplication factor from absolute yaw, half-open bins."""
    mag = abs(float(yaw_deg))
    for edge, factor in zip(REBALANCE_EDGES_DEG, REBALANCE_FACTORS[:-1]):
        if mag < edge:
            return factor
    return REBALANCE_FACTORS[-1]


def background_seed_for(identity_seed: int) -> int:
    """Derived stream key: backgrounds are a pure function of the identity."""
    return int(np.random.SeedSequence((int(identity_seed), _TAG_BACKGROUND))
               .generate_state(1)[0])


def identity_spec(base_seed: int, index: int, shape_dim: int,
                  scale: float = DYNAMIC_SHAPE_SCALE) -> IdentitySpec:
    rng = _stream(base_seed, _TAG_IDENTITY, index)
    seed = int(rng.integers(0, 2 ** 63))
    shape = ShapeCode(scale * rng.normal(size=shape_dim))
    return IdentitySpec(seed, shape, background_seed_for(seed))


def identity_field(seed: int) -> EllipsoidField:
    """Appearance for identity `seed`: a jittered copy of the default field."""
    rng = _stream(seed, _TAG_FIELD)
    base = default_head_field()
    parts = []
    for i, p in enumerate(base.parts):
        shift = rng.uniform(-0.02, 0.02, 3) if i else np.zeros(3)
        parts.append(Ellipsoid(
            tuple(np.asarray(p.center) + shift),
            tuple(np.asarray(p.radii) * rng.uniform(0.92, 1.0, 3)),
            p.amplitude * float(rng.uniform(0.9, 1.1)),
            tuple(np.asarray(p.color_raw)
                  + np.clip(rng.normal(0.0, 0.5, 3), -1.5, 1.5)),
            p.tail_cap))
    return EllipsoidField(tuple(parts), base.ambient_density, base.ambient_color)


def background_features(bg_seed: int, height: int, width: int,
                        channels: int) -> np.ndarray:
    """Smooth procedural gradient + cosine pattern, one recipe per channel."""
    rng = _stream(bg_seed)
    ys = np.linspace(0.0, 1.0, height)[:, None, None]
    xs = np.linspace(0.0, 1.0, width)[None, :, None]
    a = rng.uniform(0.2, 0.8, channels)
    gy = rng.uniform(-0.3, 0.3, channels)
    gx = rng.uniform(-0.3, 0.3, channels)
    amp = rng.uniform(0.0, 0.2, channels)
    fy = rng.uniform(0.5, 3.0, channels)
    fx = rng.uniform(0.5, 3.0, channels)
    phase = rng.uniform(0.0, 2.0 * np.pi, channels)
    wave = amp * np.cos(2.0 * np.pi * (fy * ys + fx * xs) + phase)
    return np.clip(a + gy * ys + gx * xs + wave, 0.0, 1.0)


def sample_motion(base_seed: int, identity: int, motion: int,
                  expr_dim: int) -> MotionSpec:
    """Expression from the identity's clip segment plus sampled jaw/eye/neck."""
    clip = int(_stream(base_seed, _TAG_EXPRESSION, identity).integers(0, 2 ** 31))
    slot = motion % CLIP_LENGTH
    expr_rng = _stream(base_seed, _TAG_EXPRESSION, clip, slot)
    expression = ExpressionCode(EXPR_SCALE * expr_rng.normal(size=expr_dim))
    rng = _stream(base_seed, _TAG_MOTION, identity, motion)
    neck = sample_neck_pose(rng)
    jaw = np.array([rng.uniform(*JAW_BOX), 0.0, 0.0])
    eye = np.array([rng.uniform(*EYE_BOX), rng.uniform(*EYE_BOX), 0.0])
    return MotionSpec(expression, PoseCode(eye, jaw, neck))


def record_point_features(record: dict, count: int = POINT_FEATURE_COUNT,
                          rng: np.random.Generator | None = None):
    """Choose `count` coarse head-branch samples uniformly without replacement.

    `record` is the dict filled by render_genhead/render_full: observation
    positions and head tri-plane features of every coarse sample.  The point
    file keeps full float64 precision, so re-deriving the deformation and
    resampling the head planes at a stored coordinate reproduces the stored
    feature bitwise.
    """
    positions = np.asarray(record["coarse_positions"]).reshape(-1, 3)
    features = np.asarray(record["coarse_features"])
    features = features.reshape(-1, features.shape[-1])
    if len(positions) < count:
        raise ContractViolation(
            f"only {len(positions)} coarse samples recorded, need {count}")
    rng = rng or np.random.default_rng(0)
    idx = rng.choice(len(positions), size=count, replace=False)
    return positions[idx], features[idx]


# ---------------------------------------------------------------------------
# generation

def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    return x


def _rig_reference(rig: HeadRig) -> dict:
    import hashlib
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(rig.template).tobytes())
    digest.update(np.ascontiguousarray(rig.triangles).tobytes())
    return {"file": "rig.json", "n_vertices": int(rig.n_vertices),
            "shape_dim": int(rig.shape_dim), "expr_dim": int(rig.expr_dim),
            "mesh_sha256": digest.hexdigest()}


def _render_record(rig, bake, tp, dec, ident, motion, dfield, base_seed,
                   i, m, v, out: Path, rel: str, background):
    cam_sample = sample_camera(_stream(base_seed, _TAG_CAMERA, i, m, v))
    camera = cam_sample.to_camera(bake.image_size)
    captured = {}
    full = render_full(tp, tp, dec, rig, ident.shape, motion.expression,
                       motion.pose, camera, background,
                       rng=_stream(base_seed, _TAG_RENDER, i, m, v),
                       n_coarse=bake.n_coarse, n_fine=bake.n_fine,
                       field=dfield, record=captured)
    points, feats = record_point_features(
        captured, bake.point_count, _stream(base_seed, _TAG_POINTS, i, m, v))
    rec_dir = out / rel
    rec_dir.mkdir(parents=True, exist_ok=True)
    write_png(rec_dir / "preview.png", np.clip(full.i_lr[..., :3], 0.0, 1.0))
    write_feature_pfm(rec_dir / "i_lr.pfm", full.i_lr)
    write_feature_pfm(rec_dir / "i_f.pfm", full.i_f.feature)
    write_feature_pfm(rec_dir / "i_bg.pfm", background)
    write_pfm(rec_dir / "opa.pfm", full.i_opa)
    write_pfm(rec_dir / "depth.pfm", full.i_depth)
    write_pfm(rec_dir / "mask.pfm", full.mask.m_p)
    write_pfm(rec_dir / "u.pfm", full.mask.u)
    save_points(rec_dir / "points.pts", points, feats)
    yaw_deg = float(np.degrees(cam_sample.yaw))
    return {
        "identity": i, "motion": m, "view": v,
        "identity_seed": ident.seed, "background_seed": ident.background_seed,
        "camera": cam_sample.as_dict(),
        "shape": ident.shape.values,
        "expression": motion.expression.values,
        "eye": motion.pose.eye, "jaw": motion.pose.jaw, "neck": motion.pose.neck,
        "yaw_deg": yaw_deg, "rebalance": rebalance_factor(yaw_deg),
        "dir": rel,
        "files": {"preview": "preview.png", "points": "points.pts",
                  **{name: f"{name}.pfm" for name in _MAP_FILES}},
    }


def _generate(rig: HeadRig, bake: BakeSpec, n_id: int, n_motion: int,
              n_view: int, seed: int, out_dir, kind: str, threads: int = 1):
    if min(n_id, n_motion, n_view) < 1:
        raise ContractViolation("dataset counts must be positive")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_rig(rig, out / "rig.json")
    shape_scale = DYNAMIC_SHAPE_SCALE
    if kind == "static":
        shape_scale *= STATIC_SHAPE_FACTOR

    jobs = []
    for i in range(n_id):
        ident = identity_spec(seed, i, rig.shape_dim, shape_scale)
        field = identity_field(ident.seed)
        tp, dec = bake_analytic(field, bake.resolution, bake.channels)
        # rendered feature maps are always decoder-width, not plane-width
        background = background_features(ident.background_seed, bake.image_size,
                                         bake.image_size, COLOR_CHANNELS)
        for m in range(n_motion):
            motion = sample_motion(seed, i, m, rig.expr_dim)
            dfield = deformation_field(rig, ident.shape, motion.expression,
                                       motion.pose)
            for v in range(n_view):
                rel = f"records/i{i:03d}_m{m:03d}_v{v:03d}"
                jobs.append((rig, bake, tp, dec, ident, motion, dfield, seed,
                             i, m, v, out, rel, background))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            entries = list(pool.map(lambda args: _render_record(*args), jobs))
    else:
        entries = [_render_record(*args) for args in jobs]

    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "seed": int(seed),
        "counts": {"identities": n_id, "motions_per_identity": n_motion,
                   "views_per_motion": n_view},
        "rig": _rig_reference(rig),
        "bake": {"resolution": bake.resolution, "channels": bake.channels,
                 "map_channels": COLOR_CHANNELS, "image_size": bake.image_size,
                 "n_coarse": bake.n_coarse, "n_fine": bake.n_fine,
                 "point_count": bake.point_count},
        "ranges": {"camera": {k: list(v) for k, v in CAMERA_BOX.items()},
                   "neck": {k: list(v) for k, v in NECK_BOX.items()},
                   "jaw": list(JAW_BOX), "eye": list(EYE_BOX),
                   "fov_deg": FOV_DEG,
                   "shape_scale": shape_scale, "expr_scale": EXPR_SCALE},
        "records": entries,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True))
    return manifest


def make_dynamic_set(rig: HeadRig, bake: BakeSpec, n_id: int, n_motion: int,
                     n_view: int, seed: int, out_dir, threads: int = 1) -> dict:
    """Multiple motions per identity, each seen from several cameras."""
    return _generate(rig, bake, n_id, n_motion, n_view, seed, out_dir,
                     "dynamic", threads)


def make_static_set(rig: HeadRig, bake: BakeSpec, n_id: int, n_view: int,
                    seed: int, out_dir, threads: int = 1) -> dict:
    """One motion per identity, wider shape-code spread (factor 1.5)."""
    return _generate(rig, bake, n_id, 1, n_view, seed, out_dir, "static",
                     threads)


# ---------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    checks: int
    problems: tuple

    def to_text(self) -> str:
        lines = [f"checks run: {self.checks}",
                 f"result: {'PASS' if self.passed else 'FAIL'}"]
        lines += [f"problem: {p}" for p in self.problems]
        return "\n".join(lines) + "\n"


def validate_dataset(manifest_path) -> ValidationReport:
    """Structural checks: files exist, shapes agree, backgrounds constant."""
    problems = []
    checks = 0
    path = Path(manifest_path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        return ValidationReport(False, 1, (f"unreadable manifest: {exc}",))
    root = path.parent

    checks += 1
    if manifest.get("format_version") != FORMAT_VERSION:
        problems.append(f"format_version {manifest.get('format_version')!r} "
                        f"!= {FORMAT_VERSION}")
    counts = manifest.get("counts", {})
    expected = (counts.get("identities", 0) * counts.get("motions_per_identity", 0)
                * counts.get("views_per_motion", 0))
    records = manifest.get("records", [])
    checks += 1
    if len(records) != expected:
        problems.append(f"{len(records)} records, counts imply {expected}")

    bake = manifest.get("bake", {})
    size = bake.get("image_size")
    channels = bake.get("channels")
    map_channels = bake.get("map_channels", COLOR_CHANNELS)
    bg_bytes = {}
    for rec in records:
        rid = f"i{rec.get('identity')}_m{rec.get('motion')}_v{rec.get('view')}"
        rec_dir = root / rec.get("dir", "")
        for name, fname in rec.get("files", {}).items():
            checks += 1
            if not (rec_dir / fname).exists():
                problems.append(f"{rid}: missing file {fname}")
        try:
            checks += 1
            for name in ("i_lr", "i_f", "i_bg"):
                maps = read_feature_pfm(rec_dir / f"{name}.pfm", map_channels)
                if maps.shape != (size, size, map_channels):
                    problems.append(f"{rid}: {name} shape {maps.shape}")
            for name in ("opa", "depth", "mask"):
                flat = read_pfm(rec_dir / f"{name}.pfm")
                if flat.shape != (size, size):
                    problems.append(f"{rid}: {name} shape {flat.shape}")
            mask = read_pfm(rec_dir / "mask.pfm")
            if not np.isin(mask, (0.0, 1.0)).all():
                problems.append(f"{rid}: mask not binary")
            checks += 1
            pts, feats = load_points(rec_dir / "points.pts")
            if len(pts) != bake.get("point_count"):
                problems.append(f"{rid}: point count {len(pts)} != "
                                f"{bake.get('point_count')}")
            if feats.shape[1] != channels:
                problems.append(f"{rid}: point feature channels {feats.shape[1]}")
            checks += 1
            raw = (rec_dir / "i_bg.pfm").read_bytes()
            key = rec.get("identity")
            if key in bg_bytes and bg_bytes[key] != raw:
                problems.append(f"{rid}: background differs within identity {key}")
            bg_bytes.setdefault(key, raw)
        except Exception as exc:  # noqa: BLE001 - reported, not thrown
            problems.append(f"{rid}: unreadable payload ({exc})")
    return ValidationReport(not problems, checks, tuple(problems))
