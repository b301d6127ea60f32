"""Tri-plane feature fields: storage, point sampling, radiance decoding,
procedural baking from analytic fields, and a binary file format.

Geometry convention: the field lives in the cube [-1, 1]^3.  A query point
(x, y, z) projects to (x, y) on plane 0, (x, z) on plane 1 and (y, z) on
plane 2.  Each plane is an R x R texture with C channels; the row index
follows the first projected coordinate and the column index the second, with
texel centers at the R uniform grid points of [-1, 1] (corner texels sit
exactly on the cube faces).  Features from the three planes are averaged;
queries outside the cube clamp to the boundary.

Channel layout produced by `bake_analytic` and read by the pass-through
decoder: feature 0 is the raw (pre-softplus) density, features 1..3 are the
RGB logits, remaining channels are zero.  With all-zero planes the decoded
density is softplus(0) = ln 2 everywhere (`EMPTY_DENSITY`).
"""

import struct
from dataclasses import dataclass

import numpy as np
from numba import njit, prange
from scipy.special import expit

from .errors import ContractViolation, ParseError, ValidationError

PLANE_AXES = ((0, 1), (0, 2), (1, 2))
TRIPLANE_MAGIC = b"TPL1"
COLOR_CHANNELS = 32
EMPTY_DENSITY = float(np.log(2.0))  # softplus(0): density of all-zero planes


@dataclass(frozen=True)
class TriPlane:
    """Three axis-aligned feature planes over [-1, 1]^3, float32 storage."""

    planes: np.ndarray  # (3, R, R, C)

    def __post_init__(self):
        p = np.asarray(self.planes, dtype=np.float32)
        if p.ndim != 4 or p.shape[0] != 3 or p.shape[1] != p.shape[2]:
            raise ValidationError("planes must be (3, R, R, C)")
        if not np.all(np.isfinite(p)):
            raise ValidationError("planes must be finite")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "planes", p)

    @property
    def resolution(self) -> int:
        return self.planes.shape[1]

    @property
    def channels(self) -> int:
        return self.planes.shape[3]


@dataclass(frozen=True)
class DecoderParams:
    """Radiance decoder: 2 hidden ReLU layers, softplus density head,
    sigmoid on the first three color channels."""

    w1: np.ndarray  # (H, C)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H, H)
    b2: np.ndarray  # (H,)
    w3: np.ndarray  # (1 + COLOR_CHANNELS, H)
    b3: np.ndarray  # (1 + COLOR_CHANNELS,)

    def __post_init__(self):
        arrays = {}
        for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(a)):
                raise ValidationError(f"{name} must be finite")
            a = a.copy()
            a.setflags(write=False)
            arrays[name] = a
            object.__setattr__(self, name, a)
        h = arrays["w1"].shape[0]
        shapes = {"b1": (h,), "w2": (h, h), "b2": (h,),
                  "w3": (1 + COLOR_CHANNELS, h), "b3": (1 + COLOR_CHANNELS,)}
        for name, want in shapes.items():
            if arrays[name].shape != want:
                raise ValidationError(f"{name} must have shape {want}")

    @property
    def in_channels(self) -> int:
        return self.w1.shape[1]


@dataclass(frozen=True)
class Radiance:
    """Decoded field values: non-negative density and a 32-channel color
    feature whose first three entries are RGB in [0, 1]."""

    sigma: np.ndarray       # (...,)
    color_feat: np.ndarray  # (..., COLOR_CHANNELS)


def _bilinear(plane: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    res = plane.shape[0]
    tex = plane.astype(np.float64, copy=False)
    iu = np.minimum(u.astype(np.int64), res - 2)
    iv = np.minimum(v.astype(np.int64), res - 2)
    fu = (u - iu)[..., None]
    fv = (v - iv)[..., None]
    top = tex[iu, iv] * (1.0 - fv) + tex[iu, iv + 1] * fv
    bot = tex[iu + 1, iv] * (1.0 - fv) + tex[iu + 1, iv + 1] * fv
    return top * (1.0 - fu[..., 0, None]) + bot * fu[..., 0, None]


@njit(cache=True, parallel=True)
def _sample_kernel(planes, tc, ax0, ax1):
    # row-independent loop reproducing _bilinear's element arithmetic exactly
    n, chans, res = tc.shape[0], planes.shape[3], planes.shape[1]
    out = np.zeros((n, chans))
    for i in prange(n):
        for k in range(3):
            u = tc[i, ax0[k]]
            v = tc[i, ax1[k]]
            iu = min(int(u), res - 2)
            iv = min(int(v), res - 2)
            fu = u - iu
            fv = v - iv
            for c in range(chans):
                top = (planes[k, iu, iv, c] * (1.0 - fv)
                       + planes[k, iu, iv + 1, c] * fv)
                bot = (planes[k, iu + 1, iv, c] * (1.0 - fv)
                       + planes[k, iu + 1, iv + 1, c] * fv)
                out[i, c] += top * (1.0 - fu) + bot * fu
        for c in range(chans):
            out[i, c] /= 3.0
    return out


_PLANE_AX0 = np.array([a for a, _ in PLANE_AXES], dtype=np.int64)
_PLANE_AX1 = np.array([b for _, b in PLANE_AXES], dtype=np.int64)


def sample(tp: TriPlane, x: np.ndarray) -> np.ndarray:
    """Mean of the three bilinear plane samples at a point's projections.

    Accepts (3,) or (..., 3); out-of-cube coordinates clamp to the boundary.
    """
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[-1] != 3:
        raise ContractViolation("query points must have 3 components")
    res = tp.resolution
    tc = (np.clip(pts, -1.0, 1.0) + 1.0) * 0.5 * (res - 1)
    flat = _sample_kernel(tp.planes, np.ascontiguousarray(tc.reshape(-1, 3)),
                          _PLANE_AX0, _PLANE_AX1)
    out = flat.reshape(*pts.shape[:-1], tp.channels)
    return out[0] if single else out


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def decode(params: DecoderParams, feature: np.ndarray) -> Radiance:
    """Forward pass of the radiance decoder on (..., C) features."""
    f = np.asarray(feature, dtype=np.float64)
    if f.shape[-1] != params.in_channels:
        raise ContractViolation(
            f"feature has {f.shape[-1]} channels, decoder expects "
            f"{params.in_channels}")
    h = np.maximum(f @ params.w1.T + params.b1, 0.0)
    h = np.maximum(h @ params.w2.T + params.b2, 0.0)
    raw = h @ params.w3.T + params.b3
    sigma = _softplus(raw[..., 0])
    color = raw[..., 1:].copy()
    color[..., :3] = expit(color[..., :3])
    return Radiance(sigma, color)


def pass_through_decoder(channels: int = COLOR_CHANNELS) -> DecoderParams:
    """Decoder that forwards features unchanged through the ReLU stack.

    The first hidden layer splits each feature into its positive and negative
    parts, h = [relu(f), relu(-f)], which the output layer recombines as
    f = relu(f) - relu(-f).  Raw density reads feature 0 and color channel j
    reads feature (j + 1) mod C, so the head activations are the only
    nonlinearities applied to baked plane values.
    """
    if not 1 <= channels <= COLOR_CHANNELS:
        raise ContractViolation("pass-through decoder supports 1..32 channels")
    hidden = 2 * COLOR_CHANNELS
    w1 = np.zeros((hidden, channels))
    w1[:channels] = np.eye(channels)
    w1[COLOR_CHANNELS:COLOR_CHANNELS + channels] = -np.eye(channels)
    w3 = np.zeros((1 + COLOR_CHANNELS, hidden))
    w3[0, 0], w3[0, COLOR_CHANNELS] = 1.0, -1.0
    for j in range(COLOR_CHANNELS):
        src = (j + 1) % channels
        w3[1 + j, src], w3[1 + j, COLOR_CHANNELS + src] = 1.0, -1.0
    return DecoderParams(w1, np.zeros(hidden), np.eye(hidden),
                         np.zeros(hidden), w3, np.zeros(1 + COLOR_CHANNELS))


# ---------------------------------------------------------------------------
# analytic fields and baking


@dataclass(frozen=True)
class SeparableField:
    """Raw field given as a sum of three per-plane functions.

    Each callable maps two coordinate arrays (first, second) of a plane's
    projection to an (..., channels) raw contribution; the field value is the
    sum over the three planes, exactly representable under mean aggregation.
    """

    plane_fns: tuple  # (f_xy, f_xz, f_yz)
    channels: int = COLOR_CHANNELS

    def __post_init__(self):
        if len(self.plane_fns) != 3:
            raise ValidationError("expects exactly three plane functions")


@dataclass(frozen=True)
class Ellipsoid:
    """One soft blob built from per-axis quadratics.

    Each axis contributes gain * (1/3 - min(q_axis, tail_cap)) to the raw
    channels, where q_axis = ((x_a - c_a) / r_a)^2.  With tail_cap = inf the
    three terms sum to amplitude * (1 - q), the classic ellipsoid falloff;
    with tail_cap = 1/3 the contribution is clipped to zero outside the
    blob's axis ranges so small parts do not depress the field globally.
    """

    center: tuple
    radii: tuple
    amplitude: float
    color_raw: tuple = (0.0, 0.0, 0.0)
    tail_cap: float = np.inf


@dataclass(frozen=True)
class EllipsoidField:
    """Head/eye/mouth-style blob collection with an ambient raw offset."""

    parts: tuple
    ambient_density: float = -2.0
    ambient_color: tuple = (0.0, 0.0, 0.0)


PART_TAIL_CAP = 1.0 / 3.0


def default_head_field() -> EllipsoidField:
    """Stand-in head: one large skin blob, two dark eyes, one mouth blob.

    The skin blob is inflated ~30% past the rig's bounding radii (y capped at
    the cube boundary) so rays grazing the mesh silhouette still traverse a
    dense core and saturate opacity instead of skimming the zero-density shell.
    """
    return EllipsoidField(
        parts=(
            Ellipsoid((0.0, 0.0, 0.0), (0.81, 1.00, 0.87), 25.0,
                      (4.0, 1.0, -1.0)),
            Ellipsoid((-0.24, 0.18, 0.53), (0.22, 0.22, 0.22), 8.0,
                      (-9.0, -9.0, -7.0), tail_cap=PART_TAIL_CAP),
            Ellipsoid((0.24, 0.18, 0.53), (0.22, 0.22, 0.22), 8.0,
                      (-9.0, -9.0, -7.0), tail_cap=PART_TAIL_CAP),
            Ellipsoid((0.0, -0.28, 0.56), (0.45, 0.17, 0.21), 8.0,
                      (2.0, -7.0, -6.0), tail_cap=PART_TAIL_CAP),
        ),
        ambient_density=-2.0,
        ambient_color=(-1.0, -1.0, -1.0),
    )


def _part_channel_gains(part: Ellipsoid, channels: int) -> np.ndarray:
    gains = np.zeros(channels)
    gains[0] = part.amplitude
    gains[1:4] = part.color_raw
    return gains


def ellipsoid_to_separable(field: EllipsoidField,
                           channels: int = COLOR_CHANNELS) -> SeparableField:
    """Exact per-plane split of the per-axis blob terms.

    Each blob's x term goes to plane XY, its z term to XZ and its y term to
    YZ, so the three plane contributions sum back to the full raw value.
    """
    parts = tuple(field.parts)
    ambient = np.zeros(channels)
    ambient[0] = field.ambient_density
    ambient[1:4] = field.ambient_color

    def axis_term(pts, axis):
        total = np.zeros((*np.shape(pts), channels))
        for part in parts:
            q = ((pts - part.center[axis]) / part.radii[axis]) ** 2
            gains = _part_channel_gains(part, channels)
            total += (1.0 / 3.0 - np.minimum(q, part.tail_cap))[..., None] * gains
        return total + ambient / 3.0

    return SeparableField(
        plane_fns=(lambda u, v: axis_term(u, 0),
                   lambda u, v: axis_term(v, 2),
                   lambda u, v: axis_term(u, 1)),
        channels=channels)


def evaluate_raw(field, x: np.ndarray) -> np.ndarray:
    """Direct (un-baked) raw field values at (..., 3) points."""
    pts = np.asarray(x, dtype=np.float64)
    if isinstance(field, EllipsoidField):
        field = ellipsoid_to_separable(field)
    if not isinstance(field, SeparableField):
        raise ContractViolation(f"unknown analytic field spec {type(field)!r}")
    out = np.zeros((*pts.shape[:-1], field.channels))
    for fn, (a0, a1) in zip(field.plane_fns, PLANE_AXES):
        out += fn(pts[..., a0], pts[..., a1])
    return out


def evaluate_radiance(field, x: np.ndarray) -> Radiance:
    """Head activations applied to the direct raw field (render oracle).

    Uses the same channel mapping as the pass-through decoder: density reads
    raw channel 0 and color channel j reads raw channel (j + 1) mod C.
    """
    raw = evaluate_raw(field, x)
    chans = raw.shape[-1]
    idx = (np.arange(COLOR_CHANNELS) + 1) % chans
    color = raw[..., idx].copy()
    color[..., :3] = expit(color[..., :3])
    return Radiance(_softplus(raw[..., 0]), color)


def bake_analytic(field, resolution: int = 256,
                  channels: int = COLOR_CHANNELS):
    """Fill planes so decode(sample(x)) reproduces the analytic field.

    Returns (TriPlane, DecoderParams) with the pass-through decoder.  Each
    plane stores three times its per-plane contribution, cancelling the mean
    aggregation; the result is exact at texel-aligned queries up to float32
    plane storage.
    """
    if isinstance(field, EllipsoidField):
        field = ellipsoid_to_separable(field, channels)
    if not isinstance(field, SeparableField):
        raise ContractViolation(f"unknown analytic field spec {type(field)!r}")
    if field.channels != channels:
        raise ContractViolation("field channel count does not match bake")
    grid = np.linspace(-1.0, 1.0, resolution)
    u, v = np.meshgrid(grid, grid, indexing="ij")
    planes = np.stack([3.0 * fn(u, v) for fn in field.plane_fns])
    return TriPlane(planes.astype(np.float32)), pass_through_decoder(channels)


# ---------------------------------------------------------------------------
# binary format


def save_triplane(tp: TriPlane, path) -> None:
    """Magic "TPL1", R and C as 32-bit LE unsigned, then 3*R*R*C LE floats
    in plane-major, row-major, channel-last order."""
    with open(path, "wb") as fh:
        fh.write(TRIPLANE_MAGIC)
        fh.write(struct.pack("<II", tp.resolution, tp.channels))
        fh.write(np.ascontiguousarray(tp.planes, dtype="<f4").tobytes())


def load_triplane(path) -> TriPlane:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != TRIPLANE_MAGIC:
            raise ParseError(f"bad magic {magic!r}, expected {TRIPLANE_MAGIC!r}")
        header = fh.read(8)
        if len(header) != 8:
            raise ParseError("truncated tri-plane header")
        res, chans = struct.unpack("<II", header)
        payload = fh.read(3 * res * res * chans * 4 + 1)
        if len(payload) != 3 * res * res * chans * 4:
            raise ParseError("tri-plane payload size does not match header")
    planes = np.frombuffer(payload, dtype="<f4").reshape(3, res, res, chans)
    return TriPlane(planes)
