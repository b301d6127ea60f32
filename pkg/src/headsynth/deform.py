"""Observation-to-canonical deformation fields.

Pipeline per point x in observation space:
  (1) neck canonicalization x_n via the surface field, accelerated by a
      trilinear voxel grid built once per (alpha, beta, gamma)
  (2) head branch: one-ring inverse-distance vertex offsets from the
      neck-canonical mesh (gaze ignored) to the canonical mesh
  (3) part branch: eyeball correspondence inside the inflated eyeball boxes,
      expressionless lip correspondence elsewhere
Offsets are canonical-minus-observation, so x + dx lands in canonical space.

The surface field transfers a point between two same-topology meshes:
  x_n = t_x^n . [u,v,w] + <x - t_x . [u,v,w], n_t> * n_t^n
where t_x is x's nearest triangle on the source mesh, [u,v,w] the barycentric
coordinates of x's projection, and n_t / n_t^n the source/target face normals.
"""

from __future__ import annotations

import struct
import weakref
from dataclasses import dataclass

import numpy as np
from numba import njit, prange
from scipy.spatial import cKDTree

from .errors import ContractViolation, ParseError, ValidationError
from .headmodel import (
    ExpressionCode,
    HeadRig,
    Mesh,
    PoseCode,
    ShapeCode,
    canonical_pose,
    evaluate_mesh,
    submesh_by_vertices,
    vertex_adjacency,
)

GRID_FORMAT_MAGIC = b"SFG1"
EPS_WEIGHT = 1e-6  # clamp for inverse-distance weights


# ---------------------------------------------------------------------------
# closest point on a triangle mesh (numba kernels + BVH)


@njit(cache=True)
def _cp_tri(a, b, c, p):
    """Barycentric (u, v, w) of the closest point to p on triangle abc."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab @ ap
    d2 = ac @ ap
    if d1 <= 0.0 and d2 <= 0.0:
        return 1.0, 0.0, 0.0
    bp = p - b
    d3 = ab @ bp
    d4 = ac @ bp
    if d3 >= 0.0 and d4 <= d3:
        return 0.0, 1.0, 0.0
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return 1.0 - v, v, 0.0
    cp = p - c
    d5 = ab @ cp
    d6 = ac @ cp
    if d6 >= 0.0 and d5 <= d6:
        return 0.0, 0.0, 1.0
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return 1.0 - w, 0.0, w
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return 0.0, 1.0 - w, w
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return 1.0 - v - w, v, w


@njit(cache=True)
def _leaf_scan(p, verts, tris, order, start, count, best, bt, bbary):
    for s in range(start, start + count):
        t = order[s]
        a = verts[tris[t, 0]]
        b = verts[tris[t, 1]]
        c = verts[tris[t, 2]]
        u, v, w = _cp_tri(a, b, c, p)
        dd = 0.0
        for k in range(3):
            q = u * a[k] + v * b[k] + w * c[k]
            dd += (q - p[k]) * (q - p[k])
        if dd < best or (dd == best and (bt < 0 or t < bt)):
            best = dd
            bt = t
            bbary[0] = u
            bbary[1] = v
            bbary[2] = w
    return best, bt


@njit(cache=True)
def _bvh_query(queries, verts, tris, order, nmin, nmax, nleft, nright, nstart,
               ncount, out_tri, out_bary):
    stack = np.empty(128, dtype=np.int64)
    bary = np.zeros(3)
    for qi in range(queries.shape[0]):
        p = queries[qi]
        best = np.inf
        bt = -1
        top = 1
        stack[0] = 0
        while top > 0:
            top -= 1
            ni = stack[top]
            d2 = 0.0
            for k in range(3):
                x = p[k]
                if x < nmin[ni, k]:
                    d2 += (nmin[ni, k] - x) ** 2
                elif x > nmax[ni, k]:
                    d2 += (x - nmax[ni, k]) ** 2
            if d2 > best:  # equal distances are still visited for tie-breaks
                continue
            if nleft[ni] < 0:
                best, bt = _leaf_scan(p, verts, tris, order, nstart[ni],
                                      ncount[ni], best, bt, bary)
            else:
                # push the farther child first so the nearer pops first
                l, r = nleft[ni], nright[ni]
                dl = 0.0
                dr = 0.0
                for k in range(3):
                    x = p[k]
                    if x < nmin[l, k]:
                        dl += (nmin[l, k] - x) ** 2
                    elif x > nmax[l, k]:
                        dl += (x - nmax[l, k]) ** 2
                    if x < nmin[r, k]:
                        dr += (nmin[r, k] - x) ** 2
                    elif x > nmax[r, k]:
                        dr += (x - nmax[r, k]) ** 2
                if dl <= dr:
                    stack[top] = r
                    stack[top + 1] = l
                else:
                    stack[top] = l
                    stack[top + 1] = r
                top += 2
        # bary holds the last improvement, which is the winner by construction
        out_tri[qi] = bt
        out_bary[qi, 0] = bary[0]
        out_bary[qi, 1] = bary[1]
        out_bary[qi, 2] = bary[2]


@njit(cache=True)
def _exhaustive_query(queries, verts, tris, out_tri, out_bary):
    for qi in range(queries.shape[0]):
        p = queries[qi]
        best = np.inf
        bt = -1
        bu = 0.0
        bv = 0.0
        bw = 0.0
        for t in range(tris.shape[0]):
            a = verts[tris[t, 0]]
            b = verts[tris[t, 1]]
            c = verts[tris[t, 2]]
            u, v, w = _cp_tri(a, b, c, p)
            dd = 0.0
            for k in range(3):
                q = u * a[k] + v * b[k] + w * c[k]
                dd += (q - p[k]) * (q - p[k])
            if dd < best:  # ascending scan keeps the lowest index on ties
                best = dd
                bt = t
                bu, bv, bw = u, v, w
        out_tri[qi] = bt
        out_bary[qi, 0] = bu
        out_bary[qi, 1] = bv
        out_bary[qi, 2] = bw


class TriangleBVH:
    """Median-split BVH over mesh triangles; queries match exhaustive search."""

    def __init__(self, mesh: Mesh, leaf_size: int = 8):
        if mesh.n_triangles == 0:
            raise ContractViolation("mesh has no triangles")
        self.mesh = mesh
        verts, tris = mesh.vertices, mesh.triangles
        corners = verts[tris]
        cent = corners.mean(axis=1)
        tmin = corners.min(axis=1)
        tmax = corners.max(axis=1)
        nmin, nmax, nleft, nright, nstart, ncount = [], [], [], [], [], []
        order = []

        def build(ids):
            node = len(nmin)
            nmin.append(tmin[ids].min(axis=0))
            nmax.append(tmax[ids].max(axis=0))
            nleft.append(-1)
            nright.append(-1)
            nstart.append(-1)
            ncount.append(0)
            if len(ids) <= leaf_size:
                nstart[node] = len(order)
                ncount[node] = len(ids)
                order.extend(ids.tolist())
                return node
            axis = int(np.argmax(cent[ids].max(axis=0) - cent[ids].min(axis=0)))
            srt = ids[np.argsort(cent[ids, axis], kind="stable")]
            half = len(srt) // 2
            left = build(srt[:half])
            right = build(srt[half:])
            nleft[node] = left
            nright[node] = right
            return node

        build(np.arange(len(tris)))
        self._nmin = np.array(nmin)
        self._nmax = np.array(nmax)
        self._nleft = np.array(nleft, dtype=np.int64)
        self._nright = np.array(nright, dtype=np.int64)
        self._nstart = np.array(nstart, dtype=np.int64)
        self._ncount = np.array(ncount, dtype=np.int64)
        self._order = np.array(order, dtype=np.int64)

    def query(self, points: np.ndarray):
        """(triangle ids, barycentric, closest points, face normals) per query."""
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        out_tri = np.empty(len(pts), dtype=np.int64)
        out_bary = np.empty((len(pts), 3))
        _bvh_query(pts, self.mesh.vertices, self.mesh.triangles, self._order,
                   self._nmin, self._nmax, self._nleft, self._nright,
                   self._nstart, self._ncount, out_tri, out_bary)
        point, normal = _resolve_hits(self.mesh, out_tri, out_bary)
        return out_tri, out_bary, point, normal


def _resolve_hits(mesh: Mesh, tri_ids, bary):
    corners = mesh.vertices[mesh.triangles[tri_ids]]
    point = np.einsum("qk,qkc->qc", bary, corners)
    normal = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    normal /= np.maximum(np.linalg.norm(normal, axis=1, keepdims=True), 1e-20)
    return point, normal


_BVH_CACHE: "weakref.WeakKeyDictionary[Mesh, TriangleBVH]" = weakref.WeakKeyDictionary()


def mesh_bvh(mesh: Mesh) -> TriangleBVH:
    """BVH for a mesh, cached for the mesh's lifetime."""
    bvh = _BVH_CACHE.get(mesh)
    if bvh is None:
        bvh = TriangleBVH(mesh)
        _BVH_CACHE[mesh] = bvh
    return bvh


@dataclass(frozen=True)
class SurfaceHit:
    """Nearest-triangle projection of a query point."""

    triangle: int
    barycentric: np.ndarray
    point: np.ndarray
    normal: np.ndarray


def closest_point_on_mesh(mesh: Mesh, x: np.ndarray) -> SurfaceHit:
    """Globally nearest triangle projection; ties go to the lowest triangle id."""
    tri, bary, point, normal = mesh_bvh(mesh).query(np.asarray(x, dtype=np.float64))
    return SurfaceHit(int(tri[0]), bary[0], point[0], normal[0])


def closest_point_exhaustive(mesh: Mesh, points: np.ndarray):
    """Brute-force reference scan over every triangle (the BVH must match it)."""
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    out_tri = np.empty(len(pts), dtype=np.int64)
    out_bary = np.empty((len(pts), 3))
    _exhaustive_query(pts, mesh.vertices, mesh.triangles, out_tri, out_bary)
    point, normal = _resolve_hits(mesh, out_tri, out_bary)
    return out_tri, out_bary, point, normal


# ---------------------------------------------------------------------------
# surface field and its voxel-grid accelerator


def _check_same_topology(a: Mesh, b: Mesh):
    if a.n_vertices != b.n_vertices or not np.array_equal(a.triangles, b.triangles):
        raise ContractViolation("meshes must share topology")


def surface_field(x: np.ndarray, posed: Mesh, neck_canonical: Mesh) -> np.ndarray:
    """Transfer x from the posed mesh's space to the neck-canonical space."""
    _check_same_topology(posed, neck_canonical)
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    tri, bary, point, normal = mesh_bvh(posed).query(pts)
    corners_n = neck_canonical.vertices[neck_canonical.triangles[tri]]
    anchor = np.einsum("qk,qkc->qc", bary, corners_n)
    normal_n = np.cross(corners_n[:, 1] - corners_n[:, 0],
                        corners_n[:, 2] - corners_n[:, 0])
    normal_n /= np.maximum(np.linalg.norm(normal_n, axis=1, keepdims=True), 1e-20)
    signed = np.einsum("qc,qc->q", pts - point, normal)
    out = anchor + signed[:, None] * normal_n
    return out[0] if np.asarray(x).ndim == 1 else out


@dataclass(frozen=True)
class VoxelGrid:
    """Lattice of canonicalized positions with trilinear interpolation."""

    bounds_min: np.ndarray
    bounds_max: np.ndarray
    resolution: np.ndarray   # (3,) nodes per axis
    values: np.ndarray       # (nx, ny, nz, 3)

    def __post_init__(self):
        lo = np.asarray(self.bounds_min, dtype=np.float64)
        hi = np.asarray(self.bounds_max, dtype=np.float64)
        res = np.asarray(self.resolution, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        if res.shape != (3,) or np.any(res < 2):
            raise ValidationError("grid resolution must be >= 2 per axis")
        if np.any(hi <= lo):
            raise ValidationError("grid bounds must have positive extent")
        if vals.shape != (*res, 3):
            raise ValidationError("grid values must be (nx, ny, nz, 3)")
        for name, v in (("bounds_min", lo), ("bounds_max", hi),
                        ("resolution", res), ("values", vals)):
            object.__setattr__(self, name, v)

    def node_positions(self):
        axes = [np.linspace(self.bounds_min[k], self.bounds_max[k],
                            self.resolution[k]) for k in range(3)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)


def build_grid(posed: Mesh, canon: Mesh, resolution=32, margin: float = 0.15) -> VoxelGrid:
    """Sample the surface field on a lattice enclosing the posed mesh."""
    res = np.broadcast_to(np.asarray(resolution, dtype=np.int64), (3,)).copy()
    if np.any(res < 2):
        raise ContractViolation("grid resolution must be >= 2 per axis")
    lo = posed.vertices.min(axis=0)
    hi = posed.vertices.max(axis=0)
    pad = margin * (hi - lo)
    grid_lo, grid_hi = lo - pad, hi + pad
    axes = [np.linspace(grid_lo[k], grid_hi[k], res[k]) for k in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    if np.array_equal(posed.vertices, canon.vertices):
        # identical meshes: canonicalization is the identity map; storing node
        # positions directly avoids edge-projection residue of the raw formula
        values = nodes.reshape(*res, 3)
    else:
        values = surface_field(nodes, posed, canon).reshape(*res, 3)
    return VoxelGrid(grid_lo, grid_hi, res, values)


def build_sf_grid(rig: HeadRig, alpha: ShapeCode, beta: ExpressionCode,
                  gamma: PoseCode, resolution=32) -> VoxelGrid:
    """Pre-compute neck canonicalization on a lattice around the posed mesh."""
    posed = evaluate_mesh(rig, alpha, beta, gamma)
    gamma_n = gamma.replace(neck=np.zeros(3))
    canon = evaluate_mesh(rig, alpha, beta, gamma_n)
    return build_grid(posed, canon, resolution)


def apply_grid(grid: VoxelGrid, x: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of node values; out-of-bounds queries clamp."""
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    res = grid.resolution
    span = grid.bounds_max - grid.bounds_min
    t = (pts - grid.bounds_min) / span * (res - 1)
    t = np.clip(t, 0.0, (res - 1).astype(np.float64))
    i0 = np.minimum(t.astype(np.int64), res - 2)
    f = t - i0
    vals = grid.values
    out = np.zeros((len(pts), 3))
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1.0 - f[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1.0 - f[:, 2]
                corner = vals[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
                out += (wx * wy * wz)[:, None] * corner
    return out[0] if np.asarray(x).ndim == 1 else out


def save_grid(grid: VoxelGrid, path) -> None:
    """Debug dump: magic, uint32 resolution, float32 bounds, float32 values (LE)."""
    with open(path, "wb") as f:
        f.write(GRID_FORMAT_MAGIC)
        f.write(struct.pack("<3I", *(int(r) for r in grid.resolution)))
        f.write(np.asarray(grid.bounds_min, dtype="<f4").tobytes())
        f.write(np.asarray(grid.bounds_max, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(grid.values, dtype="<f4").tobytes())


def load_grid(path) -> VoxelGrid:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != GRID_FORMAT_MAGIC:
            raise ParseError(f"{path}: bad grid magic {magic!r}")
        header = f.read(12 + 24)
        if len(header) != 36:
            raise ParseError(f"{path}: truncated grid header")
        res = struct.unpack("<3I", header[:12])
        lo = np.frombuffer(header[12:24], dtype="<f4").astype(np.float64)
        hi = np.frombuffer(header[24:36], dtype="<f4").astype(np.float64)
        count = res[0] * res[1] * res[2] * 3
        data = f.read(count * 4)
        if len(data) != count * 4:
            raise ParseError(f"{path}: truncated grid payload")
        values = np.frombuffer(data, dtype="<f4").astype(np.float64).reshape(*res, 3)
    return VoxelGrid(lo, hi, np.array(res, dtype=np.int64), values)


# ---------------------------------------------------------------------------
# one-ring inverse-distance deformation


@njit(cache=True, parallel=True)
def _ring_delta(pts, nearest, neighbors, verts, offsets):
    """Inverse-distance blend over each query's one-ring, rows independent."""
    out = np.empty((pts.shape[0], 3))
    for i in prange(pts.shape[0]):
        row = neighbors[nearest[i]]
        z = 0.0
        a0 = a1 = a2 = 0.0
        for j in range(row.shape[0]):
            nb = row[j]
            if nb < 0:
                continue
            dx = pts[i, 0] - verts[nb, 0]
            dy = pts[i, 1] - verts[nb, 1]
            dz = pts[i, 2] - verts[nb, 2]
            w = 1.0 / max(np.sqrt(dx * dx + dy * dy + dz * dz), EPS_WEIGHT)
            z += w
            a0 += w * offsets[nb, 0]
            a1 += w * offsets[nb, 1]
            a2 += w * offsets[nb, 2]
        out[i, 0] = a0 / z
        out[i, 1] = a1 / z
        out[i, 2] = a2 / z
    return out


class _Correspondence:
    """Precomputed src->dst one-ring offsets queried by nearest src vertex."""

    def __init__(self, src: Mesh, dst: Mesh):
        _check_same_topology(src, dst)
        self.src = src
        self.offsets = dst.vertices - src.vertices
        self.tree = cKDTree(src.vertices)
        csr_off, csr_flat = vertex_adjacency(src.triangles, src.n_vertices)
        counts = np.diff(csr_off)
        width = int(counts.max()) + 1 if len(counts) else 1
        nbr = -np.ones((src.n_vertices, width), dtype=np.int64)
        nbr[:, 0] = np.arange(src.n_vertices)  # neighborhood includes v_n itself
        for v in range(src.n_vertices):
            ring = csr_flat[csr_off[v]:csr_off[v + 1]]
            nbr[v, 1:1 + len(ring)] = ring
        self.neighbors = nbr

    def delta(self, points: np.ndarray) -> np.ndarray:
        pts = np.ascontiguousarray(np.atleast_2d(points))
        _, nearest = self.tree.query(pts)
        return _ring_delta(pts, nearest.astype(np.int64), self.neighbors,
                           self.src.vertices, self.offsets)


def one_ring_deform(x_n: np.ndarray, src: Mesh, dst: Mesh,
                    rig: HeadRig | None = None) -> np.ndarray:
    """Inverse-distance weighted offset over the nearest vertex's one-ring.

    Delta = (1/Z) sum_i w_i (v_i_dst - v_i_src), w_i = 1/max(|x_n - v_i|, eps),
    taken over the nearest src vertex and its one-ring. The optional rig only
    asserts topology consistency.
    """
    if rig is not None and src.n_vertices != rig.n_vertices:
        raise ContractViolation("src mesh does not match rig topology")
    corr = _Correspondence(src, dst)
    out = corr.delta(x_n)
    return out[0] if np.asarray(x_n).ndim == 1 else out


# ---------------------------------------------------------------------------
# composed fields


@dataclass(frozen=True)
class DeformationPair:
    """Part-wise canonicalizing offsets for a batch of observation points."""

    dx_head: np.ndarray
    dx_part: np.ndarray

    def __post_init__(self):
        if not (np.all(np.isfinite(self.dx_head)) and np.all(np.isfinite(self.dx_part))):
            raise ValidationError("deformation offsets must be finite")


def _grid_canonicalize(grid: VoxelGrid, pts: np.ndarray) -> np.ndarray:
    """Grid lookup that leaves points outside the grid bounds unchanged."""
    x_n = apply_grid(grid, pts)
    outside = ~np.all((pts >= grid.bounds_min) & (pts <= grid.bounds_max), axis=1)
    x_n[outside] = pts[outside]
    return x_n


def _eyeball_boxes(rig: HeadRig, mesh: Mesh, inflate: float = 0.2):
    boxes = []
    for part in ("eyeball-left", "eyeball-right"):
        ids = rig.vertex_parts[part]
        if ids.size == 0:
            continue
        pts = mesh.vertices[ids]
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        center, half = (lo + hi) / 2.0, (hi - lo) / 2.0
        boxes.append((center - (1.0 + inflate) * half, center + (1.0 + inflate) * half))
    return boxes


class DeformationField:
    """Field object mapping observation points to part-wise offsets.

    Offsets vanish outside the voxel-grid bounds: the grid encloses the posed
    head with margin, and points beyond it sit in empty space where pulling
    them onto the boundary cell would teleport ray samples into the head.
    """

    def __init__(self, rig: HeadRig, alpha: ShapeCode, beta: ExpressionCode,
                 gamma: PoseCode, grid_res=32, canonical: PoseCode | None = None):
        canonical = canonical or canonical_pose()
        zero_expr = ExpressionCode.zeros(rig.expr_dim)
        zero_shape = ShapeCode.zeros(rig.shape_dim)
        gamma_n = gamma.replace(neck=np.zeros(3))
        gamma_head = PoseCode(np.zeros(3), gamma.jaw, np.zeros(3))  # gaze dropped
        self.rig = rig
        self.grid = build_sf_grid(rig, alpha, beta, gamma, grid_res)
        canon_mesh = evaluate_mesh(rig, zero_shape, zero_expr, canonical)
        neckcanon_mesh = evaluate_mesh(rig, alpha, beta, gamma_n)
        head_src = evaluate_mesh(rig, alpha, beta, gamma_head)
        self._head = _Correspondence(head_src, canon_mesh)
        eye_ids = np.union1d(rig.vertex_parts["eyeball-left"],
                             rig.vertex_parts["eyeball-right"])
        if eye_ids.size:
            eye_src, _ = submesh_by_vertices(neckcanon_mesh, eye_ids)
            eye_dst, _ = submesh_by_vertices(canon_mesh, eye_ids)
            self._eye = _Correspondence(eye_src, eye_dst)
        else:
            self._eye = None
        lip_ids = rig.vertex_parts["lip-region"]
        lip_src_mesh = evaluate_mesh(rig, alpha, zero_expr, gamma_n)
        if lip_ids.size:
            lip_src, _ = submesh_by_vertices(lip_src_mesh, lip_ids)
            lip_dst, _ = submesh_by_vertices(canon_mesh, lip_ids)
            self._lip = _Correspondence(lip_src, lip_dst)
        else:
            self._lip = None
        self._boxes = _eyeball_boxes(rig, neckcanon_mesh)

    def canonicalize(self, x: np.ndarray) -> np.ndarray:
        """Stage-1 neck canonicalization via the voxel grid."""
        pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
        x_n = _grid_canonicalize(self.grid, pts)
        return x_n[0] if np.asarray(x).ndim == 1 else x_n

    def __call__(self, x: np.ndarray) -> DeformationPair:
        pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
        inside = np.all((pts >= self.grid.bounds_min)
                        & (pts <= self.grid.bounds_max), axis=1)
        dx_head = np.zeros_like(pts)
        dx_part = np.zeros_like(pts)
        if inside.any():
            dx_h, dx_p = self._offsets_inside(pts[inside])
            dx_head[inside] = dx_h
            dx_part[inside] = dx_p
        single = np.asarray(x).ndim == 1
        if single:
            return DeformationPair(dx_head[0], dx_part[0])
        return DeformationPair(dx_head, dx_part)

    def _offsets_inside(self, pts: np.ndarray):
        """Offsets for points within the grid support (the non-trivial case)."""
        x_n = apply_grid(self.grid, pts)
        base = x_n - pts
        dx_head = self._head.delta(x_n) + base
        in_eye = np.zeros(len(pts), dtype=bool)
        for lo, hi in self._boxes:
            in_eye |= np.all((x_n >= lo) & (x_n <= hi), axis=1)
        dx_part = np.empty_like(dx_head)
        lip_mask = ~in_eye
        if self._eye is not None and in_eye.any():
            dx_part[in_eye] = self._eye.delta(x_n[in_eye]) + base[in_eye]
        elif in_eye.any():
            dx_part[in_eye] = dx_head[in_eye]
        if self._lip is not None and lip_mask.any():
            dx_part[lip_mask] = self._lip.delta(x_n[lip_mask]) + base[lip_mask]
        elif lip_mask.any():
            dx_part[lip_mask] = dx_head[lip_mask]
        return dx_head, dx_part


def deformation_field(rig: HeadRig, alpha: ShapeCode, beta: ExpressionCode,
                      gamma: PoseCode, grid_res=32,
                      canonical: PoseCode | None = None) -> DeformationField:
    """Build the part-wise observation-to-canonical deformation field."""
    return DeformationField(rig, alpha, beta, gamma, grid_res, canonical)


class NeckField:
    """Neck-only canonicalization field used by reconstruction-style renderers.

    Points outside the grid bounds are returned unchanged (same far-field
    rule as DeformationField).
    """

    def __init__(self, rig: HeadRig, alpha: ShapeCode, gamma_neck: np.ndarray,
                 grid_res=32):
        gamma = PoseCode(np.zeros(3), np.zeros(3), np.asarray(gamma_neck, dtype=np.float64))
        self.grid = build_sf_grid(rig, alpha, ExpressionCode.zeros(rig.expr_dim),
                                  gamma, grid_res)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
        x_n = _grid_canonicalize(self.grid, pts)
        return x_n[0] if np.asarray(x).ndim == 1 else x_n

    def offset(self, x: np.ndarray) -> np.ndarray:
        return self(x) - np.asarray(x, dtype=np.float64)


def neck_only_field(rig: HeadRig, alpha: ShapeCode, gamma_neck: np.ndarray,
                    grid_res=32) -> NeckField:
    """Surface-field neck canonicalization only (head/part stages skipped)."""
    return NeckField(rig, alpha, gamma_neck, grid_res)
