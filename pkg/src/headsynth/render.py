"""Camera model, two-pass hierarchical volume rendering, mask rasterization,
part blending, and background fusion.

Conventions (documented here and in the README):
 - World space is y-up with the head facing +z.  Camera space is x-right,
   y-up, looking along -z (right-handed).  `camera_from_angles` orbits the
   look-at point: at zero angles the camera sits at look_at + (0, 0, radius).
 - The field of view is vertical, in degrees.
 - Rays traverse depths in model units; tri-plane queries divide world
   coordinates by `CUBE_SCALE` to land in the [-1, 1]^3 feature cube.
 - Per-sample weights are computed as transmittance differences
   t_i - t_{i+1} = t_i (1 - exp(-sigma_i delta_i)), which telescopes exactly
   for piecewise-constant densities.
 - The terminal delta of a ray equals the median of its preceding deltas.
 - Depth is the opacity-normalized expected termination depth, zero where
   opacity < 1e-4.  Fusion uses the blended opacity.
 - Jitter is drawn in one vectorized call per pass, so results do not depend
   on ray scheduling order.
"""

from dataclasses import dataclass

import numpy as np

from .deform import DeformationPair
from .errors import ContractViolation, ValidationError
from .headmodel import evaluate_mesh
from .rotation import euler_matrix
from .triplane import decode, sample

CUBE_SCALE = 0.45  # world units mapped to 1.0 in tri-plane cube coordinates
OPACITY_DEPTH_FLOOR = 1e-4
DEFAULT_RESOLUTION = 64
DEFAULT_FOV_DEG = 12.0


@dataclass(frozen=True)
class Camera:
    """Orbit camera: cam-to-world rotation, position, vertical FoV, size."""

    rotation: np.ndarray  # (3, 3) camera-to-world
    position: np.ndarray  # (3,)
    fov_deg: float
    width: int
    height: int

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        pos = np.asarray(self.position, dtype=np.float64)
        if rot.shape != (3, 3) or not np.all(np.isfinite(rot)):
            raise ValidationError("camera rotation must be a finite 3x3 matrix")
        if np.max(np.abs(rot @ rot.T - np.eye(3))) > 1e-9:
            raise ValidationError("camera rotation must be orthonormal")
        if pos.shape != (3,) or not np.all(np.isfinite(pos)):
            raise ValidationError("camera position must be a finite 3-vector")
        if not 0.0 < self.fov_deg < 60.0:
            raise ValidationError("field of view must be in (0, 60) degrees")
        if self.width < 1 or self.height < 1:
            raise ValidationError("image size must be positive")
        rot = rot.copy()
        pos = pos.copy()
        rot.setflags(write=False)
        pos.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "position", pos)


def camera_from_angles(pitch: float, yaw: float, roll: float, radius: float,
                       look_at=(0.0, 0.0, 0.0), fov_deg: float = DEFAULT_FOV_DEG,
                       width: int = DEFAULT_RESOLUTION,
                       height: int = DEFAULT_RESOLUTION) -> Camera:
    """Orbit pose: rotate the (0, 0, radius) offset about the look-at point."""
    if radius <= 0.0:
        raise ValidationError("camera radius must be positive")
    rot = euler_matrix(pitch, yaw, roll)
    pos = np.asarray(look_at, dtype=np.float64) + rot @ np.array([0.0, 0.0, radius])
    return Camera(rot, pos, fov_deg, width, height)


def camera_rays(camera: Camera):
    """Per-pixel origins and unit directions, row-major pixel order."""
    w, h = camera.width, camera.height
    tan_half = np.tan(np.radians(camera.fov_deg) / 2.0)
    aspect = w / h
    cols = (np.arange(w) + 0.5) / w * 2.0 - 1.0
    rows = 1.0 - (np.arange(h) + 0.5) / h * 2.0
    u, v = np.meshgrid(cols * tan_half * aspect, rows * tan_half, indexing="xy")
    dirs_cam = np.stack([u, v, -np.ones_like(u)], axis=-1).reshape(-1, 3)
    dirs = dirs_cam @ camera.rotation.T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(camera.position, dirs.shape).copy()
    return origins, dirs


def near_far(camera: Camera, center, radius: float, margin: float = 0.1):
    """Depth range covering a bounding sphere with relative margin."""
    d = float(np.linalg.norm(camera.position - np.asarray(center, dtype=np.float64)))
    r = (1.0 + margin) * radius
    return max(d - r, 1e-3), d + r


@dataclass(frozen=True)
class RaySamples:
    """Sorted per-ray depths with positions and adjacent-sample deltas."""

    depths: np.ndarray     # (R, N)
    positions: np.ndarray  # (R, N, 3)
    deltas: np.ndarray     # (R, N); terminal = median of preceding deltas

    def __post_init__(self):
        if np.any(np.diff(self.depths, axis=1) <= 0.0):
            raise ValidationError("ray depths must be strictly increasing")
        if np.any(self.deltas <= 0.0):
            raise ValidationError("ray deltas must be positive")


def _make_samples(origins, dirs, depths) -> RaySamples:
    gaps = np.diff(depths, axis=1)
    deltas = np.concatenate([gaps, np.median(gaps, axis=1, keepdims=True)], axis=1)
    positions = origins[:, None, :] + depths[..., None] * dirs[:, None, :]
    return RaySamples(depths, positions, deltas)


def stratified_samples(origins, dirs, near: float, far: float, n: int = 48,
                       rng=None) -> RaySamples:
    """One jittered depth per equal bin of [near, far] on every ray."""
    if not near < far:
        raise ContractViolation("near must be less than far")
    if n < 2:
        raise ContractViolation("need at least two samples per ray")
    n_rays = len(origins)
    edges = np.linspace(near, far, n + 1)
    jitter = rng.random((n_rays, n)) if rng is not None \
        else np.full((n_rays, n), 0.5)
    depths = edges[:-1] + jitter * (edges[1:] - edges[:-1])
    return _make_samples(origins, dirs, depths)


def hierarchical_resample(origins, dirs, coarse: RaySamples, weights,
                          n: int = 48, rng=None) -> RaySamples:
    """Inverse-CDF draws from the piecewise-constant coarse weight profile.

    Bins span consecutive coarse depths and carry the left sample's weight.
    Returns the fine samples only; combine with `merge_samples` for the
    final integration pass.
    """
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0.0):
        raise ContractViolation("weights must be non-negative")
    if w.shape != coarse.depths.shape:
        raise ContractViolation("weights must align with coarse samples")
    edges = coarse.depths
    bins = w[:, :-1] + 1e-12
    cdf = np.cumsum(bins, axis=1)
    cdf = np.concatenate([np.zeros((len(bins), 1)), cdf / cdf[:, -1:]], axis=1)
    u = rng.random((len(bins), n)) if rng is not None \
        else (np.arange(n) + 0.5)[None, :] / n * np.ones((len(bins), 1))
    idx = np.maximum(np.array([np.searchsorted(c, row, side="right")
                               for c, row in zip(cdf, u)]) - 1, 0)
    idx = np.minimum(idx, bins.shape[1] - 1)
    rows = np.arange(len(bins))[:, None]
    lo, hi = cdf[rows, idx], cdf[rows, idx + 1]
    frac = (u - lo) / np.maximum(hi - lo, 1e-300)
    depths = edges[rows, idx] + frac * (edges[rows, idx + 1] - edges[rows, idx])
    depths = np.sort(depths, axis=1)
    # nudge exact ties apart so depth ordering stays strict
    eps = 1e-12 * max(1.0, np.max(np.abs(edges)))
    same = np.diff(depths, axis=1) <= 0.0
    while np.any(same):
        depths[:, 1:][same] = np.nextafter(depths[:, 1:][same] + eps, np.inf)
        depths = np.sort(depths, axis=1)
        same = np.diff(depths, axis=1) <= 0.0
    return _make_samples(origins, dirs, depths)


def merge_samples(origins, dirs, a: RaySamples, b: RaySamples) -> RaySamples:
    depths = np.concatenate([a.depths, b.depths], axis=1)
    depths = np.sort(depths, axis=1)
    eps = 1e-12 * max(1.0, np.max(np.abs(depths)))
    same = np.diff(depths, axis=1) <= 0.0
    while np.any(same):
        depths[:, 1:][same] = np.nextafter(depths[:, 1:][same] + eps, np.inf)
        depths = np.sort(depths, axis=1)
        same = np.diff(depths, axis=1) <= 0.0
    return _make_samples(origins, dirs, depths)


def integrate(samples: RaySamples, sigma, color):
    """Volume rendering: feature, opacity and expected-depth per ray.

    feature = sum_i t_i (1 - exp(-sigma_i delta_i)) c_i with t_i the
    accumulated transmittance; opacity substitutes c_i = 1.
    """
    s = np.asarray(sigma, dtype=np.float64)
    c = np.asarray(color, dtype=np.float64)
    if s.shape != samples.depths.shape or c.shape[:2] != s.shape:
        raise ContractViolation("radiance arrays must align with samples")
    tau = np.cumsum(s * samples.deltas, axis=1)
    trans = np.exp(-np.concatenate([np.zeros((len(s), 1)), tau], axis=1))
    w = trans[:, :-1] - trans[:, 1:]
    feature = np.einsum("rn,rnc->rc", w, c)
    opacity = 1.0 - trans[:, -1]
    depth = np.einsum("rn,rn->r", w, samples.depths)
    good = opacity > OPACITY_DEPTH_FLOOR
    depth = np.where(good, depth / np.where(good, opacity, 1.0), 0.0)
    return feature, opacity, depth


@dataclass(frozen=True)
class RenderOut:
    """Feature/opacity/depth maps of one volumetric pass."""

    feature: np.ndarray  # (H, W, C)
    opacity: np.ndarray  # (H, W)
    depth: np.ndarray    # (H, W)

    def __post_init__(self):
        for name in ("feature", "opacity", "depth"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValidationError(f"{name} must be finite")
        if np.any(self.opacity < 0.0) or np.any(self.opacity > 1.0):
            raise ValidationError("opacity must lie in [0, 1]")

    @property
    def rgb(self) -> np.ndarray:
        return self.feature[..., :3]


@dataclass(frozen=True)
class MaskMap:
    """Rasterized part mask (binary) and template-coordinate colors."""

    m_p: np.ndarray  # (H, W) in {0, 1}
    u: np.ndarray    # (H, W, 3) in [0, 1], 0 on background


def _field_offsets(field, x):
    """Observation point -> (head-branch point, part-branch point)."""
    if field is None:
        return x, x
    out = field(x)
    if isinstance(out, DeformationPair):
        return x + out.dx_head, x + out.dx_part
    canon = np.asarray(out, dtype=np.float64)  # canonicalizing fields
    return canon, canon


def render_genhead(t_h, t_p, dec, field, camera: Camera, rng=None,
                   n_coarse: int = 48, n_fine: int = 48, bounds=None,
                   record: dict | None = None):
    """Two-branch hierarchical render returning (I_h, I_p).

    Each sample point is moved by its branch deformation before tri-plane
    lookup.  One coarse jitter pass is shared; each branch then drives its
    own inverse-CDF fine pass from its coarse weights.  When `record` is
    given, the coarse head-branch positions and features are stored in it.
    """
    if bounds is None:
        bounds = (np.zeros(3), CUBE_SCALE * np.sqrt(3.0))
    origins, dirs = camera_rays(camera)
    near, far = near_far(camera, *bounds)
    coarse = stratified_samples(origins, dirs, near, far, n_coarse, rng)
    head_pts, part_pts = _field_offsets(field, coarse.positions.reshape(-1, 3))
    outs = []
    for branch, (tp, pts) in enumerate(((t_h, head_pts), (t_p, part_pts))):
        feats = sample(tp, pts / CUBE_SCALE)
        rad = decode(dec, feats)
        sigma_c = rad.sigma.reshape(coarse.depths.shape)
        if record is not None and branch == 0:
            record["coarse_positions"] = coarse.positions.copy()
            record["coarse_features"] = feats.reshape(*coarse.depths.shape, -1)
        weights = _branch_weights(coarse, sigma_c)
        fine = hierarchical_resample(origins, dirs, coarse, weights, n_fine, rng)
        merged = merge_samples(origins, dirs, coarse, fine)
        h_pts, p_pts = _field_offsets(field, merged.positions.reshape(-1, 3))
        use = h_pts if branch == 0 else p_pts
        rad_m = decode(dec, sample(tp, use / CUBE_SCALE))
        sigma = rad_m.sigma.reshape(merged.depths.shape)
        color = rad_m.color_feat.reshape(*merged.depths.shape, -1)
        feature, opacity, depth = integrate(merged, sigma, color)
        h, w = camera.height, camera.width
        outs.append(RenderOut(feature.reshape(h, w, -1),
                              opacity.reshape(h, w), depth.reshape(h, w)))
    return outs[0], outs[1]


def _branch_weights(samples: RaySamples, sigma):
    tau = np.cumsum(sigma * samples.deltas, axis=1)
    trans = np.exp(-np.concatenate([np.zeros((len(sigma), 1)), tau], axis=1))
    return trans[:, :-1] - trans[:, 1:]


def blend(i_h: RenderOut, i_p: RenderOut, mask: MaskMap) -> RenderOut:
    """I_f = I_h (1 - M_p) + I_p M_p, applied to every map."""
    if i_h.feature.shape != i_p.feature.shape \
            or mask.m_p.shape != i_h.opacity.shape:
        raise ContractViolation("blend inputs must share one resolution")
    m = mask.m_p
    return RenderOut(i_h.feature * (1.0 - m[..., None]) + i_p.feature * m[..., None],
                     i_h.opacity * (1.0 - m) + i_p.opacity * m,
                     i_h.depth * (1.0 - m) + i_p.depth * m)


def fuse(i_f: RenderOut, background) -> np.ndarray:
    """I_lr = I_f * I_opa + I_bg * (1 - I_opa) with the blended opacity."""
    bg = np.asarray(background, dtype=np.float64)
    if bg.shape != i_f.feature.shape:
        raise ContractViolation("background must match the feature map shape")
    opa = i_f.opacity[..., None]
    return i_f.feature * opa + bg * (1.0 - opa)


# ---------------------------------------------------------------------------
# rasterization


def rasterize(mesh, face_set, camera: Camera, attributes=None) -> MaskMap:
    """Z-buffered triangle rasterization.

    M_p = 1 where the front-most surface belongs to `face_set`.  U holds the
    per-pixel `attributes` (default: mesh vertex positions) of the front-most
    point, interpolated perspective-correctly, normalized to [0, 1] by the
    attribute bounding box, and 0 on background.  Triangles are not culled by
    orientation; the nearest surface wins.
    """
    w, h = camera.width, camera.height
    verts = mesh.vertices
    attr = verts if attributes is None else np.asarray(attributes, dtype=np.float64)
    a_lo, a_hi = attr.min(axis=0), attr.max(axis=0)
    attr_n = (attr - a_lo) / np.where(a_hi > a_lo, a_hi - a_lo, 1.0)

    cam_pts = (verts - camera.position) @ camera.rotation
    depth_v = -cam_pts[:, 2]
    tan_half = np.tan(np.radians(camera.fov_deg) / 2.0)
    aspect = w / h
    # guard points behind the eye; faces touching them are skipped below
    safe = np.maximum(depth_v, 1e-9)
    px = (cam_pts[:, 0] / (safe * tan_half * aspect) + 1.0) * 0.5 * w - 0.5
    py = (1.0 - cam_pts[:, 1] / (safe * tan_half)) * 0.5 * h - 0.5

    zbuf = np.full((h, w), np.inf)
    winner = np.full((h, w), -1, dtype=np.int64)
    bary_buf = np.zeros((h, w, 3))
    for t, tri in enumerate(mesh.triangles):
        if np.any(depth_v[tri] <= 1e-9):
            continue
        xs, ys = px[tri], py[tri]
        x0 = max(int(np.ceil(xs.min())), 0)
        x1 = min(int(np.floor(xs.max())), w - 1)
        y0 = max(int(np.ceil(ys.min())), 0)
        y1 = min(int(np.floor(ys.max())), h - 1)
        if x0 > x1 or y0 > y1:
            continue
        gx, gy = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1),
                             indexing="xy")
        area = ((xs[1] - xs[0]) * (ys[2] - ys[0])
                - (xs[2] - xs[0]) * (ys[1] - ys[0]))
        if area == 0.0:
            continue
        w0 = ((xs[1] - gx) * (ys[2] - gy) - (xs[2] - gx) * (ys[1] - gy)) / area
        w1 = ((xs[2] - gx) * (ys[0] - gy) - (xs[0] - gx) * (ys[2] - gy)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
        if not np.any(inside):
            continue
        inv_z = (w0 / depth_v[tri[0]] + w1 / depth_v[tri[1]]
                 + w2 / depth_v[tri[2]])
        z = 1.0 / inv_z
        rows, cols = gy[inside], gx[inside]
        zi = z[inside]
        better = zi < zbuf[rows, cols]
        rows, cols, zi = rows[better], cols[better], zi[better]
        zbuf[rows, cols] = zi
        winner[rows, cols] = t
        bary_buf[rows, cols] = np.stack(
            [w0[inside][better], w1[inside][better], w2[inside][better]], axis=-1)

    m_p = np.zeros((h, w))
    u = np.zeros((h, w, 3))
    hit = winner >= 0
    if np.any(hit):
        face_mask = np.zeros(mesh.n_triangles, dtype=bool)
        face_mask[np.asarray(face_set, dtype=np.int64)] = True
        m_p[hit] = face_mask[winner[hit]].astype(np.float64)
        tri_hit = mesh.triangles[winner[hit]]
        b = bary_buf[hit]
        inv_z = np.sum(b / depth_v[tri_hit], axis=1)
        u[hit] = np.einsum("pk,pkc->pc", b / depth_v[tri_hit],
                           attr_n[tri_hit]) / inv_z[:, None]
    return MaskMap(m_p, np.clip(u, 0.0, 1.0))


# ---------------------------------------------------------------------------
# full pipeline


@dataclass(frozen=True)
class FullRender:
    """Every intermediate the data pipeline records."""

    i_lr: np.ndarray    # (H, W, C) fused feature map
    i_f: RenderOut      # blended foreground
    i_h: RenderOut      # head branch
    i_p: RenderOut      # part branch
    mask: MaskMap

    @property
    def i_opa(self) -> np.ndarray:
        return self.i_f.opacity

    @property
    def i_depth(self) -> np.ndarray:
        return self.i_f.depth


def part_face_set(rig) -> np.ndarray:
    """Eyeball and inner-mouth faces: the M_p region."""
    return np.concatenate([rig.face_parts["eyeball-left"],
                           rig.face_parts["eyeball-right"],
                           rig.face_parts["inner-mouth"]])


def render_full(t_h, t_p, dec, rig, alpha, beta, gamma, camera: Camera,
                background, rng=None, n_coarse: int = 48, n_fine: int = 48,
                field=None, record: dict | None = None) -> FullRender:
    """deformation field -> two-branch render -> mask -> blend -> fuse."""
    from .deform import deformation_field

    if field is None:
        field = deformation_field(rig, alpha, beta, gamma)
    posed = evaluate_mesh(rig, alpha, beta, gamma)
    lo, hi = posed.vertices.min(axis=0), posed.vertices.max(axis=0)
    center = (lo + hi) / 2.0
    radius = float(np.linalg.norm(posed.vertices - center, axis=1).max())
    i_h, i_p = render_genhead(t_h, t_p, dec, field, camera, rng,
                              n_coarse, n_fine, bounds=(center, radius),
                              record=record)
    mask = rasterize(posed, part_face_set(rig), camera, attributes=rig.template)
    i_f = blend(i_h, i_p, mask)
    i_lr = fuse(i_f, background)
    return FullRender(i_lr, i_f, i_h, i_p, mask)


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB."""
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)
