"""Parametric head rig: linear blendshapes plus jointed eye/jaw/neck rotations.

The rig is a generic stand-in with the usual morphable-head layout: a template
mesh, linear shape/expression bases, four rotation joints (neck, jaw, left eye,
right eye) with convex skinning weights, and named part index sets. The jaw and
both eye joints are children of the neck joint, so a neck rotation carries the
whole head rigidly while jaw/eye rotations act locally.

Axis conventions: +y up, +z out of the face, +x to the character's right as
seen from the front (so "eyeball-left" sits at negative x for the viewer).
Skinning weight columns are ordered (neck, jaw, eye_left, eye_right).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ContractViolation, ParseError, ValidationError
from .rotation import rotation_matrix

RIG_FORMAT_VERSION = 1

JOINT_NAMES = ("neck", "jaw", "eye_left", "eye_right")
VERTEX_PART_NAMES = ("eyeball-left", "eyeball-right", "eye-region", "lip-region", "full-head")
FACE_PART_NAMES = ("inner-mouth",)
# parts accepted by part_submesh (full-head is the whole mesh, inner-mouth is a face set)
CROPPABLE_PARTS = ("eyeball-left", "eyeball-right", "eye-region", "lip-region")


def _frozen(a, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ShapeCode:
    """Linear shape coefficients; dimension must match the rig's shape basis."""

    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values, np.float64)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValidationError("shape code must be a finite 1-d vector")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, dim: int = 300) -> "ShapeCode":
        return cls(np.zeros(dim))


@dataclass(frozen=True, eq=False)
class ExpressionCode:
    """Linear expression coefficients; dimension must match the rig."""

    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values, np.float64)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValidationError("expression code must be a finite 1-d vector")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, dim: int = 100) -> "ExpressionCode":
        return cls(np.zeros(dim))


@dataclass(frozen=True, eq=False)
class PoseCode:
    """Axis-angle rotations (rad) for the eye pair, jaw, and neck joints."""

    eye: np.ndarray
    jaw: np.ndarray
    neck: np.ndarray

    def __post_init__(self):
        for name in ("eye", "jaw", "neck"):
            v = _frozen(getattr(self, name), np.float64)
            if v.shape != (3,) or not np.all(np.isfinite(v)):
                raise ValidationError(f"pose component {name} must be a finite 3-vector")
            if np.linalg.norm(v) >= np.pi:
                raise ValidationError(f"pose component {name} magnitude must be < pi")
            object.__setattr__(self, name, v)

    @classmethod
    def zeros(cls) -> "PoseCode":
        return cls(np.zeros(3), np.zeros(3), np.zeros(3))

    def replace(self, eye=None, jaw=None, neck=None) -> "PoseCode":
        return PoseCode(
            self.eye if eye is None else eye,
            self.jaw if jaw is None else jaw,
            self.neck if neck is None else neck,
        )


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle mesh; per-vertex normals are optional and unit length."""

    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        v = _frozen(self.vertices, np.float64)
        t = _frozen(self.triangles, np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValidationError("vertices must be (V, 3)")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValidationError("triangles must be (F, 3)")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValidationError("triangle indices out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if self.normals is not None:
            n = _frozen(self.normals, np.float64)
            if n.shape != v.shape:
                raise ValidationError("normals must match vertices")
            if n.size and np.max(np.abs(np.linalg.norm(n, axis=1) - 1.0)) > 1e-6:
                raise ValidationError("normals must be unit length")
            object.__setattr__(self, "normals", n)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]


@dataclass(frozen=True, eq=False)
class HeadRig:
    """Template mesh + linear bases + joints + skinning + part index sets."""

    template: np.ndarray          # (V, 3)
    triangles: np.ndarray         # (F, 3)
    shape_basis: np.ndarray       # (V, 3, S)
    expr_basis: np.ndarray        # (V, 3, E)
    joints: np.ndarray            # (4, 3) ordered as JOINT_NAMES
    skin_weights: np.ndarray      # (V, 4) convex rows, columns as JOINT_NAMES
    vertex_parts: dict            # name -> sorted int array
    face_parts: dict              # name -> sorted int array

    def __post_init__(self):
        tpl = _frozen(self.template, np.float64)
        tri = _frozen(self.triangles, np.int64)
        sb = _frozen(self.shape_basis, np.float64)
        eb = _frozen(self.expr_basis, np.float64)
        joints = _frozen(self.joints, np.float64)
        sw = _frozen(self.skin_weights, np.float64)
        nv = tpl.shape[0]
        if tpl.ndim != 2 or tpl.shape[1] != 3:
            raise ValidationError("template must be (V, 3)")
        if tri.ndim != 2 or tri.shape[1] != 3 or tri.min(initial=0) < 0 or tri.max(initial=-1) >= nv:
            raise ValidationError("triangles must be (F, 3) with valid indices")
        if sb.shape[:2] != (nv, 3) or eb.shape[:2] != (nv, 3):
            raise ValidationError("basis matrices must be (V, 3, dim)")
        if joints.shape != (4, 3):
            raise ValidationError("joints must be (4, 3)")
        if sw.shape != (nv, 4):
            raise ValidationError("skin weights must be (V, 4)")
        bad = np.where((sw.min(axis=1) < -1e-12) | (np.abs(sw.sum(axis=1) - 1.0) > 1e-9))[0]
        if bad.size:
            raise ValidationError(f"skinning row not convex at vertex {int(bad[0])}")
        parts = {}
        for name, idx in dict(self.vertex_parts).items():
            arr = _frozen(np.sort(np.asarray(idx, dtype=np.int64)), np.int64)
            if arr.size and (arr[0] < 0 or arr[-1] >= nv):
                raise ValidationError(f"vertex part {name} references invalid vertices")
            parts[name] = arr
        fparts = {}
        for name, idx in dict(self.face_parts).items():
            arr = _frozen(np.sort(np.asarray(idx, dtype=np.int64)), np.int64)
            if arr.size and (arr[0] < 0 or arr[-1] >= tri.shape[0]):
                raise ValidationError(f"face part {name} references invalid faces")
            fparts[name] = arr
        for obj, name in ((tpl, "template"), (tri, "triangles"), (sb, "shape_basis"),
                          (eb, "expr_basis"), (joints, "joints"), (sw, "skin_weights")):
            object.__setattr__(self, name, obj)
        object.__setattr__(self, "vertex_parts", parts)
        object.__setattr__(self, "face_parts", fparts)

    @property
    def n_vertices(self) -> int:
        return self.template.shape[0]

    @property
    def shape_dim(self) -> int:
        return self.shape_basis.shape[2]

    @property
    def expr_dim(self) -> int:
        return self.expr_basis.shape[2]

    @cached_property
    def _adjacency(self):
        return vertex_adjacency(self.triangles, self.n_vertices)

    def equals(self, other: "HeadRig") -> bool:
        """Exact field-wise equality (used for round-trip and determinism checks)."""
        if self.vertex_parts.keys() != other.vertex_parts.keys():
            return False
        if self.face_parts.keys() != other.face_parts.keys():
            return False
        return (
            np.array_equal(self.template, other.template)
            and np.array_equal(self.triangles, other.triangles)
            and np.array_equal(self.shape_basis, other.shape_basis)
            and np.array_equal(self.expr_basis, other.expr_basis)
            and np.array_equal(self.joints, other.joints)
            and np.array_equal(self.skin_weights, other.skin_weights)
            and all(np.array_equal(self.vertex_parts[k], other.vertex_parts[k])
                    for k in self.vertex_parts)
            and all(np.array_equal(self.face_parts[k], other.face_parts[k])
                    for k in self.face_parts)
        )


def vertex_adjacency(triangles: np.ndarray, n_vertices: int):
    """CSR one-ring adjacency (offsets, flat neighbor ids sorted per vertex)."""
    tri = np.asarray(triangles, dtype=np.int64)
    if tri.size == 0:
        return np.zeros(n_vertices + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    src = np.concatenate([tri[:, 0], tri[:, 1], tri[:, 0], tri[:, 2], tri[:, 1], tri[:, 2]])
    dst = np.concatenate([tri[:, 1], tri[:, 0], tri[:, 2], tri[:, 0], tri[:, 2], tri[:, 1]])
    enc = np.unique(src * np.int64(n_vertices) + dst)
    src, dst = enc // n_vertices, enc % n_vertices
    offsets = np.zeros(n_vertices + 1, dtype=np.int64)
    np.add.at(offsets, src + 1, 1)
    np.cumsum(offsets, out=offsets)
    return offsets, dst


def blend_vertices(rig: HeadRig, alpha: ShapeCode, beta: ExpressionCode) -> np.ndarray:
    """Pre-skinning vertices: template + shape_basis @ alpha + expr_basis @ beta."""
    if alpha.values.shape[0] != rig.shape_dim:
        raise ContractViolation(
            f"shape code dim {alpha.values.shape[0]} != rig shape basis {rig.shape_dim}")
    if beta.values.shape[0] != rig.expr_dim:
        raise ContractViolation(
            f"expression code dim {beta.values.shape[0]} != rig expr basis {rig.expr_dim}")
    return (rig.template
            + rig.shape_basis @ alpha.values
            + rig.expr_basis @ beta.values)


def _joint_transforms(rig: HeadRig, gamma: PoseCode):
    """World transform (R, t) per joint; jaw and eyes are children of the neck."""
    def about(rot, pivot):
        return rot, pivot - rot @ pivot

    r_neck, t_neck = about(rotation_matrix(gamma.neck), rig.joints[0])
    out = [(r_neck, t_neck)]
    for rotvec, pivot in ((gamma.jaw, rig.joints[1]),
                          (gamma.eye, rig.joints[2]),
                          (gamma.eye, rig.joints[3])):
        r_loc, t_loc = about(rotation_matrix(rotvec), pivot)
        out.append((r_neck @ r_loc, r_neck @ t_loc + t_neck))
    return out


def evaluate_mesh(rig: HeadRig, alpha: ShapeCode, beta: ExpressionCode,
                  gamma: PoseCode) -> Mesh:
    """Posed mesh m(alpha, beta, gamma): linear blend then joint skinning."""
    v = blend_vertices(rig, alpha, beta)
    # accumulate per-joint displacements so identity rotations are bit-exact
    posed = v.copy()
    for j, (rot, trans) in enumerate(_joint_transforms(rig, gamma)):
        posed += rig.skin_weights[:, j:j + 1] * (v @ (rot - np.eye(3)).T + trans)
    return Mesh(posed, rig.triangles)


def canonical_pose(jaw_open: float = 0.2) -> PoseCode:
    """Canonical mouth-open pose: zero eye/neck, jaw rotated jaw_open about x."""
    if not (0.0 <= jaw_open <= 0.5):
        raise ContractViolation("jaw_open must lie in [0, 0.5] rad")
    return PoseCode(np.zeros(3), np.array([jaw_open, 0.0, 0.0]), np.zeros(3))


def submesh_by_vertices(mesh: Mesh, indices: np.ndarray):
    """Crop to a vertex set; returns (sub-mesh, original-vertex-id per new vertex)."""
    idx = np.unique(np.asarray(indices, dtype=np.int64))
    keep = np.zeros(mesh.n_vertices, dtype=bool)
    keep[idx] = True
    remap = -np.ones(mesh.n_vertices, dtype=np.int64)
    remap[idx] = np.arange(idx.size)
    fmask = keep[mesh.triangles].all(axis=1) if mesh.triangles.size else np.zeros(0, bool)
    tris = remap[mesh.triangles[fmask]]
    return Mesh(mesh.vertices[idx], tris), idx


def part_submesh(rig: HeadRig, posed: Mesh, part: str) -> Mesh:
    """Crop of a posed mesh to one of the rig's named vertex parts."""
    if part not in CROPPABLE_PARTS:
        raise ContractViolation(f"unknown part {part!r}; expected one of {CROPPABLE_PARTS}")
    if posed.n_vertices != rig.n_vertices:
        raise ContractViolation("posed mesh does not match rig vertex count")
    sub, _ = submesh_by_vertices(posed, rig.vertex_parts[part])
    return sub


def one_ring(rig: HeadRig, vertex: int) -> np.ndarray:
    """Vertices sharing a triangle with `vertex`, excluding itself, ascending."""
    if not (0 <= int(vertex) < rig.n_vertices):
        raise ContractViolation(f"vertex {vertex} out of range")
    offsets, flat = rig._adjacency
    return flat[offsets[vertex]:offsets[vertex + 1]].copy()


def compute_vertex_normals(mesh: Mesh) -> np.ndarray:
    """Area-weighted per-vertex normals, unit length."""
    v, t = mesh.vertices, mesh.triangles
    fn = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    out = np.zeros_like(v)
    for k in range(3):
        np.add.at(out, t[:, k], fn)
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    return out / np.maximum(norms, 1e-20)


def bounding_sphere(points: np.ndarray):
    """(center, radius) of the axis-aligned midpoint sphere."""
    pts = np.asarray(points, dtype=np.float64)
    center = (pts.min(axis=0) + pts.max(axis=0)) / 2.0
    return center, float(np.max(np.linalg.norm(pts - center, axis=1)))


# ---------------------------------------------------------------------------
# procedural rig


@dataclass(frozen=True)
class RigSpec:
    """Tessellation and proportion parameters for the procedural test rig."""

    head_lat: int = 24
    head_lon: int = 32
    eye_lat: int = 8
    eye_lon: int = 10
    head_radii: tuple = (0.28, 0.36, 0.30)
    eye_radius: float = 0.055
    eye_center: tuple = (0.11, 0.08, 0.24)   # +x eye; the -x eye is mirrored
    shape_dim: int = 8
    expr_dim: int = 6


def _uv_sphere(lat: int, lon: int, radii, center):
    """Lat-long tessellated ellipsoid with single pole vertices."""
    radii = np.asarray(radii, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    verts = [center + radii * np.array([0.0, 1.0, 0.0])]
    for i in range(1, lat):
        theta = np.pi * i / lat
        for j in range(lon):
            phi = 2.0 * np.pi * j / lon
            d = np.array([np.sin(theta) * np.sin(phi), np.cos(theta), np.sin(theta) * np.cos(phi)])
            verts.append(center + radii * d)
    verts.append(center + radii * np.array([0.0, -1.0, 0.0]))
    verts = np.array(verts)

    def ring(i, j):
        return 1 + (i - 1) * lon + (j % lon)

    faces = []
    for j in range(lon):  # top fan
        faces.append((0, ring(1, j), ring(1, j + 1)))
    for i in range(1, lat - 1):  # quad strips
        for j in range(lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append((a, c, b))
            faces.append((b, c, d))
    last = len(verts) - 1
    for j in range(lon):  # bottom fan
        faces.append((last, ring(lat - 1, j + 1), ring(lat - 1, j)))
    return verts, np.array(faces, dtype=np.int64)


def _smoothstep(x, lo, hi):
    """0 at lo, 1 at hi, C1 in between (hi may be < lo for a falling step)."""
    t = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _ellipsoid_surface_point(radii, direction):
    d = np.asarray(direction, dtype=np.float64)
    scale = 1.0 / np.sqrt(np.sum((d / np.asarray(radii)) ** 2))
    return d * scale


def _gauss(points, center, width):
    d2 = np.sum((points - np.asarray(center)) ** 2, axis=1)
    return np.exp(-d2 / (2.0 * width * width))


def procedural_rig(spec: RigSpec | None = None, seed: int = 0) -> HeadRig:
    """Deterministic test rig: ellipsoid head, two eyeball spheres, jaw falloff."""
    spec = spec or RigSpec()
    if min(spec.head_lat, spec.head_lon, spec.eye_lat, spec.eye_lon) < 4:
        raise ContractViolation("tessellation parameters must be >= 4")

    hv, hf = _uv_sphere(spec.head_lat, spec.head_lon, spec.head_radii, (0.0, 0.0, 0.0))
    ex, ey, ez = spec.eye_center
    lv, lf = _uv_sphere(spec.eye_lat, spec.eye_lon,
                        (spec.eye_radius,) * 3, (-ex, ey, ez))
    rv, rf = _uv_sphere(spec.eye_lat, spec.eye_lon,
                        (spec.eye_radius,) * 3, (ex, ey, ez))

    nh, ne = len(hv), len(lv)
    verts = np.concatenate([hv, lv, rv])
    faces = np.concatenate([hf, lf + nh, rf + nh + ne])
    head_ids = np.arange(nh)
    eye_l_ids = np.arange(nh, nh + ne)
    eye_r_ids = np.arange(nh + ne, nh + 2 * ne)
    eye_l_center = np.array([-ex, ey, ez])
    eye_r_center = np.array([ex, ey, ez])

    # anchor points on the head surface used by part sets and basis columns
    mouth_center = _ellipsoid_surface_point(spec.head_radii, [0.0, -0.40, 1.0])
    brow_center = _ellipsoid_surface_point(spec.head_radii, [0.0, 0.55, 1.0])
    cheek_l = _ellipsoid_surface_point(spec.head_radii, [-0.75, -0.15, 1.0])
    cheek_r = _ellipsoid_surface_point(spec.head_radii, [0.75, -0.15, 1.0])

    # part index sets
    d_eye = np.minimum(np.linalg.norm(hv - eye_l_center, axis=1),
                       np.linalg.norm(hv - eye_r_center, axis=1))
    eye_region = np.concatenate([head_ids[d_eye < 2.4 * spec.eye_radius], eye_l_ids, eye_r_ids])
    d_mouth = np.linalg.norm(hv - mouth_center, axis=1)
    lip_region = head_ids[d_mouth < 0.13]
    inner_mouth_faces = np.where(
        (np.linalg.norm(verts[faces].mean(axis=1) - mouth_center, axis=1) < 0.055)
        & (np.arange(len(faces)) < len(hf))
    )[0]
    vertex_parts = {
        "eyeball-left": eye_l_ids,
        "eyeball-right": eye_r_ids,
        "eye-region": np.sort(eye_region),
        "lip-region": lip_region,
        "full-head": np.arange(len(verts)),
    }
    nhf, nef = len(hf), len(lf)
    face_parts = {
        "inner-mouth": inner_mouth_faces,
        "eyeball-left": np.arange(nhf, nhf + nef),
        "eyeball-right": np.arange(nhf + nef, nhf + 2 * nef),
    }

    # joints: neck low in the head, jaw behind the chin, eyes at sphere centers
    joints = np.array([
        [0.0, -0.30, 0.0],
        [0.0, -0.12, 0.10],
        eye_l_center,
        eye_r_center,
    ])

    # skinning: eyeballs follow their eye joint; the lower front of the head
    # blends smoothly from neck to jaw
    weights = np.zeros((len(verts), 4))
    w_jaw = (_smoothstep(hv[:, 1], -0.04, -0.14)
             * _smoothstep(hv[:, 2], 0.02, 0.14))
    weights[head_ids, 1] = w_jaw
    weights[head_ids, 0] = 1.0 - w_jaw
    weights[eye_l_ids, 2] = 1.0
    weights[eye_r_ids, 3] = 1.0

    normals = np.zeros_like(verts)
    fn = np.cross(verts[faces[:, 1]] - verts[faces[:, 0]],
                  verts[faces[:, 2]] - verts[faces[:, 0]])
    for k in range(3):
        np.add.at(normals, faces[:, k], fn)
    normals /= np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-20)

    def rigid_eye_fill(col, field_at):
        # eyeballs translate rigidly by the column field sampled at their center
        col[eye_l_ids] = field_at(eye_l_center)
        col[eye_r_ids] = field_at(eye_r_center)
        return col

    # shape basis: three axis scales, a global scale, and seeded smooth bumps
    rng = np.random.default_rng(seed)
    shape_cols = []
    for axis_scale in (None, 0, 1, 2):
        col = np.zeros_like(verts)
        if axis_scale is None:
            col[head_ids] = 0.12 * hv
            fill = lambda c: 0.12 * c
        else:
            col[head_ids, axis_scale] = 0.15 * hv[:, axis_scale]
            fill = lambda c, a=axis_scale: 0.15 * c * (np.arange(3) == a)
        shape_cols.append(rigid_eye_fill(col, fill))
    far_from_eyes = head_ids[d_eye > 3.5 * spec.eye_radius]
    for _ in range(max(0, spec.shape_dim - 4)):
        center = hv[rng.choice(far_from_eyes)]
        g = _gauss(verts, center, 0.12)
        g[eye_l_ids] = 0.0
        g[eye_r_ids] = 0.0
        shape_cols.append(normals * (0.05 * g)[:, None])
    shape_basis = np.stack(shape_cols[:spec.shape_dim], axis=2)

    # expression basis: mouth/brow/cheek motions, zero on the eyeballs
    lower_lip = mouth_center + np.array([0.0, -0.05, 0.0])
    corner_l = mouth_center + np.array([-0.08, 0.0, -0.01])
    corner_r = mouth_center + np.array([0.08, 0.0, -0.01])
    expr_cols = []
    col = np.zeros_like(verts)  # mouth open: lower lip drops
    col[:, 1] = -0.06 * _gauss(verts, lower_lip, 0.09)
    expr_cols.append(col)
    col = np.zeros_like(verts)  # smile: corners spread outward
    col[:, 0] = 0.05 * (_gauss(verts, corner_r, 0.07) - _gauss(verts, corner_l, 0.07))
    expr_cols.append(col)
    col = np.zeros_like(verts)  # brow raise
    col[:, 1] = 0.05 * _gauss(verts, brow_center, 0.10)
    expr_cols.append(col)
    col = normals * (0.05 * (_gauss(verts, cheek_l, 0.09)
                             + _gauss(verts, cheek_r, 0.09)))[:, None]
    expr_cols.append(col)  # cheek puff
    col = np.zeros_like(verts)  # pucker: lips push forward
    col[:, 2] = 0.05 * _gauss(verts, mouth_center, 0.07)
    expr_cols.append(col)
    col = np.zeros_like(verts)  # asymmetric smirk
    col[:, 0] = 0.04 * _gauss(verts, corner_l, 0.07)
    col[:, 1] = 0.03 * _gauss(verts, corner_l, 0.07)
    expr_cols.append(col)
    while len(expr_cols) < spec.expr_dim:
        center = hv[rng.choice(far_from_eyes)]
        g = _gauss(verts, center, 0.10)
        col = normals * (0.04 * g)[:, None]
        expr_cols.append(col)
    expr_cols = expr_cols[:spec.expr_dim]
    for c in expr_cols:  # expressions never move the eyeballs
        c[eye_l_ids] = 0.0
        c[eye_r_ids] = 0.0
    expr_basis = np.stack(expr_cols, axis=2)

    # normalize columns to fixed RMS displacement so code norms are comparable
    def normalize(basis, target):
        rms = np.sqrt(np.mean(np.sum(basis ** 2, axis=1), axis=0))
        return basis / np.maximum(rms, 1e-12) * target

    shape_basis = normalize(shape_basis, 0.035)
    expr_basis = normalize(expr_basis, 0.030)

    return HeadRig(
        template=verts,
        triangles=faces,
        shape_basis=shape_basis,
        expr_basis=expr_basis,
        joints=joints,
        skin_weights=weights,
        vertex_parts=vertex_parts,
        face_parts=face_parts,
    )


# ---------------------------------------------------------------------------
# rig file io (versioned json, full float precision via repr round-trip)


def save_rig(rig: HeadRig, path) -> None:
    """Write the rig as a versioned json document."""
    doc = {
        "format_version": RIG_FORMAT_VERSION,
        "template": rig.template.tolist(),
        "triangles": rig.triangles.tolist(),
        "shape_basis": rig.shape_basis.tolist(),
        "expr_basis": rig.expr_basis.tolist(),
        "joints": {name: rig.joints[i].tolist() for i, name in enumerate(JOINT_NAMES)},
        "skin_weights": rig.skin_weights.tolist(),
        "vertex_parts": {k: v.tolist() for k, v in rig.vertex_parts.items()},
        "face_parts": {k: v.tolist() for k, v in rig.face_parts.items()},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)


def load_rig(path) -> HeadRig:
    """Read a rig document; malformed input raises ParseError with a location."""
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: invalid rig file at line {e.lineno} column {e.colno}: {e.msg}") from e
    try:
        version = doc["format_version"]
        if version != RIG_FORMAT_VERSION:
            raise ParseError(f"{path}: unsupported format_version {version}")
        joints = np.array([doc["joints"][name] for name in JOINT_NAMES])
        return HeadRig(
            template=np.array(doc["template"]),
            triangles=np.array(doc["triangles"]),
            shape_basis=np.array(doc["shape_basis"]),
            expr_basis=np.array(doc["expr_basis"]),
            joints=joints,
            skin_weights=np.array(doc["skin_weights"]),
            vertex_parts={k: np.array(v, dtype=np.int64) for k, v in doc["vertex_parts"].items()},
            face_parts={k: np.array(v, dtype=np.int64) for k, v in doc["face_parts"].items()},
        )
    except KeyError as e:
        raise ParseError(f"{path}: missing rig field {e.args[0]!r}") from e
