"""Differentiable perspective projection of voxel grids to depth + silhouette.

Rays march through the grid at evenly spaced distances; each sample's
occupancy comes from trilinear interpolation, and a stop-probability chain
turns samples into an expected hit (silhouette) and expected depth.  Both
are analytically differentiable with respect to the voxel values and the
camera elevation/azimuth.

Conventions: voxel centers sit on the integer lattice 0..W-1 in grid
coordinates, with the grid's geometric center at the world origin; samples
outside the grid's support interpolate to zero (transparent).  A ray that
never stops is assigned the far depth, so depth is a proper expectation
over "stops at d_j or escapes".
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .voxel import VoxelGrid

WORLD_UP = np.array([0.0, 1.0, 0.0])
_HALF_DIAG = math.sqrt(3.0) / 2.0


@dataclass(frozen=True)
class Viewpoint:
    elevation: float  # radians
    azimuth: float  # radians, wrapped to [0, 2*pi)
    distance: float = 2.0

    def __post_init__(self):
        if not -math.pi / 2 <= self.elevation <= math.pi / 2:
            raise ValueError(f"elevation {self.elevation} outside [-pi/2, pi/2]")
        if self.distance <= 0:
            raise ValueError("camera distance must be positive")
        object.__setattr__(self, "azimuth", float(self.azimuth) % (2.0 * math.pi))


@dataclass(frozen=True)
class CameraIntrinsics:
    focal_mm: float = 50.0
    sensor_mm: float = 36.0  # applied to both axes
    height: int = 128
    width: int = 128

    def __post_init__(self):
        if self.focal_mm <= 0 or self.sensor_mm <= 0:
            raise ValueError("focal length and sensor side must be positive")
        if self.height < 1 or self.width < 1:
            raise ValueError("image dimensions must be >= 1")


@dataclass(frozen=True)
class ProjectionConfig:
    samples: int = 128
    near: float = 2.0 - _HALF_DIAG
    far: float = 2.0 + _HALF_DIAG

    def __post_init__(self):
        if self.samples < 2:
            raise ValueError("need at least 2 samples per ray")
        if not self.near < self.far:
            raise ValueError("near depth must be below far depth")


@dataclass
class Sketch:
    """A 2.5D sketch: per-pixel expected depth (meters) and silhouette."""

    depth: np.ndarray  # (H, W)
    silhouette: np.ndarray  # (H, W) in [0, 1]
    near: float
    far: float

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.silhouette = np.asarray(self.silhouette, dtype=np.float64)
        if self.depth.shape != self.silhouette.shape:
            raise ValueError("depth and silhouette must share H x W")


@dataclass(frozen=True)
class CameraPose:
    center: np.ndarray
    forward: np.ndarray  # unit, points at the origin
    up: np.ndarray  # unit, world +y made orthogonal to forward
    right: np.ndarray  # unit, cross(forward, up)


def make_camera(view: Viewpoint) -> CameraPose:
    """Rigid pose on the viewing sphere; rejects straight-up/down poses."""
    e, a = view.elevation, view.azimuth
    if abs(abs(e) - math.pi / 2) < 1e-15:
        raise ValueError("elevation +-pi/2 leaves the up vector degenerate")
    unit = np.array([math.cos(e) * math.sin(a), math.sin(e), math.cos(e) * math.cos(a)])
    center = view.distance * unit
    fwd = -unit
    up0 = WORLD_UP - np.dot(WORLD_UP, fwd) * fwd
    up = up0 / np.linalg.norm(up0)
    right = np.cross(fwd, up)
    return CameraPose(center, fwd, up, right)


def _sensor_coords(intr: CameraIntrinsics):
    jj = (np.arange(intr.width) + 0.5) / intr.width - 0.5
    ii = 0.5 - (np.arange(intr.height) + 0.5) / intr.height
    sx = np.broadcast_to(jj[None, :] * intr.sensor_mm, (intr.height, intr.width))
    sy = np.broadcast_to(ii[:, None] * intr.sensor_mm, (intr.height, intr.width))
    return sx.reshape(-1), sy.reshape(-1)


def generate_rays(pose: CameraPose, intr: CameraIntrinsics):
    """Unit directions through pixel centers; origins are the camera center.

    Returns (origins (H*W, 3), directions (H*W, 3)), row-major over pixels.
    """
    sx, sy = _sensor_coords(intr)
    v = (
        pose.forward[None, :] * intr.focal_mm
        + pose.right[None, :] * sx[:, None]
        + pose.up[None, :] * sy[:, None]
    )
    dirs = v / np.linalg.norm(v, axis=1, keepdims=True)
    origins = np.broadcast_to(pose.center, dirs.shape).copy()
    return origins, dirs


# ---------------------------------------------------------------------------
# trilinear interpolation over the voxel lattice

def _world_to_grid(points, w, extent):
    return points * (w / extent) + (w - 1) / 2.0


def _corner_terms(q, w):
    """Corner indices, weights and validity for 8-corner interpolation.

    q: (N, 3) grid coordinates.  Returns (idx (N,8,3) clipped, weight (N,8),
    valid (N,8), axis_sign (8,3)) where axis_sign holds the +-1 pattern used
    by spatial derivatives.
    """
    i0 = np.floor(q).astype(np.int64)
    t = q - i0
    corners = np.array(
        [[dx, dy, dz] for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)], dtype=np.int64
    )
    idx = i0[:, None, :] + corners[None, :, :]
    valid = np.all((idx >= 0) & (idx <= w - 1), axis=2)
    wpa = np.where(corners[None, :, :] == 1, t[:, None, :], 1.0 - t[:, None, :])  # (N, 8, 3)
    weight = wpa[:, :, 0] * wpa[:, :, 1] * wpa[:, :, 2]
    return np.clip(idx, 0, w - 1), weight, valid, corners, wpa


def trilinear(grid: VoxelGrid, points) -> np.ndarray:
    """Occupancy at world points; zero outside the grid's sampling support."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    q = _world_to_grid(points, grid.side, grid.extent)
    vals = _trilinear_values(grid.values, q)
    return vals if vals.size > 1 else vals.reshape(())


def _trilinear_values(values, q):
    w = values.shape[0]
    idx, weight, valid, _, _ = _corner_terms(q, w)
    flat = (idx[:, :, 0] * w + idx[:, :, 1]) * w + idx[:, :, 2]
    v = values.reshape(-1)[flat] * valid
    return np.sum(weight * v, axis=1)


def _trilinear_with_partials(values, q):
    """Values plus d(value)/d(q) per axis, in grid coordinates."""
    w = values.shape[0]
    idx, weight, valid, corners, wpa = _corner_terms(q, w)
    flat = (idx[:, :, 0] * w + idx[:, :, 1]) * w + idx[:, :, 2]
    v = values.reshape(-1)[flat] * valid
    val = np.sum(weight * v, axis=1)
    sign = np.where(corners == 1, 1.0, -1.0)  # (8, 3)
    dq = np.empty((q.shape[0], 3))
    dq[:, 0] = np.sum(sign[None, :, 0] * wpa[:, :, 1] * wpa[:, :, 2] * v, axis=1)
    dq[:, 1] = np.sum(sign[None, :, 1] * wpa[:, :, 0] * wpa[:, :, 2] * v, axis=1)
    dq[:, 2] = np.sum(sign[None, :, 2] * wpa[:, :, 0] * wpa[:, :, 1] * v, axis=1)
    return val, dq


def _scatter_to_grid(values_shape, q, upstream):
    """Accumulate d(loss)/d(value) for samples at grid coords q."""
    w = values_shape[0]
    idx, weight, valid, _, _ = _corner_terms(q, w)
    flat = (idx[:, :, 0] * w + idx[:, :, 1]) * w + idx[:, :, 2]
    contrib = weight * upstream[:, None] * valid
    acc = np.bincount(flat.reshape(-1), weights=contrib.reshape(-1), minlength=w**3)
    return acc.reshape(values_shape)


# ---------------------------------------------------------------------------
# the projection and its adjoint

def _sample_depths(cfg: ProjectionConfig):
    return np.linspace(cfg.near, cfg.far, cfg.samples)


def _forward_internals(values, extent, view, intr, cfg):
    pose = make_camera(view)
    origins, dirs = generate_rays(pose, intr)
    depths = _sample_depths(cfg)
    pts = origins[:, None, :] + depths[None, :, None] * dirs[:, None, :]  # (R, N, 3)
    n_rays = pts.shape[0]
    q = _world_to_grid(pts.reshape(-1, 3), values.shape[0], extent)
    r = _trilinear_values(values, q).reshape(n_rays, cfg.samples)
    trans = np.cumprod(1.0 - r, axis=1)  # T_j after sample j
    t_prev = np.concatenate([np.ones((n_rays, 1)), trans[:, :-1]], axis=1)
    stop_w = t_prev * r  # probability the ray first stops at sample j
    sil = 1.0 - trans[:, -1]
    depth = stop_w @ depths + trans[:, -1] * cfg.far
    return {
        "pose": pose,
        "dirs": dirs,
        "depths": depths,
        "pts": pts,
        "q": q,
        "r": r,
        "trans": trans,
        "t_prev": t_prev,
        "stop_w": stop_w,
        "sil": sil,
        "depth": depth,
    }


def project(grid: VoxelGrid, view: Viewpoint, intr=None, cfg=None) -> Sketch:
    """Render the expected depth and silhouette of a probabilistic grid."""
    intr = intr or CameraIntrinsics()
    cfg = cfg or ProjectionConfig()
    f = _forward_internals(grid.values, grid.extent, view, intr, cfg)
    hw = (intr.height, intr.width)
    return Sketch(f["depth"].reshape(hw), f["sil"].reshape(hw), cfg.near, cfg.far)


def _chain_to_samples(f, d_depth, d_sil, cfg):
    """Upstream grads on (depth, sil) -> grads on the per-sample occupancies."""
    depths = f["depths"]
    r, t_prev = f["r"], f["t_prev"]
    n_rays, n = r.shape
    a = d_depth[:, None] * depths[None, :]  # dL/d stop_w[j]
    # dL/d T_N from the escape depth term and the silhouette (sil = 1 - T_N)
    g_t = np.empty_like(r)
    g_t[:, -1] = d_depth * cfg.far - d_sil
    for j in range(n - 2, -1, -1):
        g_t[:, j] = a[:, j + 1] * r[:, j + 1] + g_t[:, j + 1] * (1.0 - r[:, j + 1])
    return t_prev * (a - g_t)  # dL/dR_j


def project_backward(grid: VoxelGrid, view: Viewpoint, intr, cfg, d_depth, d_sil):
    """Adjoint of project(): voxel-value and (elevation, azimuth) gradients.

    d_depth/d_sil are (H, W) upstream gradients.  Returns
    (d_values (W,W,W), d_elevation, d_azimuth).
    """
    intr = intr or CameraIntrinsics()
    cfg = cfg or ProjectionConfig()
    f = _forward_internals(grid.values, grid.extent, view, intr, cfg)
    d_depth = np.asarray(d_depth, dtype=np.float64).reshape(-1)
    d_sil = np.asarray(d_sil, dtype=np.float64).reshape(-1)
    d_r = _chain_to_samples(f, d_depth, d_sil, cfg)  # (R, N)

    flat_dr = d_r.reshape(-1)
    d_values = _scatter_to_grid(grid.values.shape, f["q"], flat_dr)

    # viewpoint chain: dL/dp = dL/dR * grad_q(trilinear) / voxel_size
    _, dq = _trilinear_with_partials(grid.values, f["q"])
    scale = grid.side / grid.extent
    d_p = (dq * flat_dr[:, None] * scale).reshape(d_r.shape[0], cfg.samples, 3)
    d_elev, d_azim = _view_chain(view, intr, f, d_p)
    return d_values, d_elev, d_azim


def _frame_derivatives(view: Viewpoint):
    """d(center, forward, right, up)/d(elevation, azimuth)."""
    e, a = view.elevation, view.azimuth
    rho = view.distance
    se, ce, sa, ca = math.sin(e), math.cos(e), math.sin(a), math.cos(a)
    unit = np.array([ce * sa, se, ce * ca])
    du = {
        "e": np.array([-se * sa, ce, -se * ca]),
        "a": np.array([ce * ca, 0.0, -ce * sa]),
    }
    fwd = -unit
    up0 = WORLD_UP - np.dot(WORLD_UP, fwd) * fwd
    n0 = np.linalg.norm(up0)
    up = up0 / n0
    out = {}
    for k in ("e", "a"):
        dfwd = -du[k]
        dup0 = -dfwd[1] * fwd - fwd[1] * dfwd
        dup = (dup0 - up * np.dot(up, dup0)) / n0
        dright = np.cross(dfwd, up) + np.cross(fwd, dup)
        out[k] = {"center": rho * du[k], "forward": dfwd, "up": dup, "right": dright}
    return out


def _view_chain(view, intr, f, d_p):
    """Contract dL/d(sample positions) with d(positions)/d(elev, azim)."""
    pose = f["pose"]
    sx, sy = _sensor_coords(intr)
    v = (
        pose.forward[None, :] * intr.focal_mm
        + pose.right[None, :] * sx[:, None]
        + pose.up[None, :] * sy[:, None]
    )
    vnorm = np.linalg.norm(v, axis=1, keepdims=True)
    dirs = f["dirs"]
    depths = f["depths"]
    deriv = _frame_derivatives(view)
    grads = []
    for k in ("e", "a"):
        d = deriv[k]
        dv = (
            d["forward"][None, :] * intr.focal_mm
            + d["right"][None, :] * sx[:, None]
            + d["up"][None, :] * sy[:, None]
        )
        ddir = (dv - dirs * np.sum(dirs * dv, axis=1, keepdims=True)) / vnorm
        # p = center + t * dir  ->  dp/dtheta = dcenter + t * ddir
        term_center = np.sum(d_p, axis=(0, 1)) @ d["center"]
        per_ray = np.einsum("rns,n->rs", d_p, depths)
        term_dir = float(np.sum(per_ray * ddir))
        grads.append(term_center + term_dir)
    return grads[0], grads[1]


# ---------------------------------------------------------------------------
# exact binary rasterizer (test oracle; also used for viewpoint estimation)

def rasterize_hard(grid: VoxelGrid, view: Viewpoint, intr=None, far=None, with_normals=False):
    """Exact ray/voxel traversal of a binary grid.

    Returns (mask (H,W) bool, depth (H,W) meters along the ray; misses get
    ``far``).  With ``with_normals``, also returns entry-face unit normals
    (H, W, 3) for shading (zero where no hit).
    """
    intr = intr or CameraIntrinsics()
    if far is None:
        far = view.distance + _HALF_DIAG
    values = grid.values >= 0.5
    w = grid.side
    h = grid.extent / w
    half = grid.extent / 2.0
    pose = make_camera(view)
    origins, dirs = generate_rays(pose, intr)
    n = dirs.shape[0]

    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    lo = (-half - origins) * inv
    hi = (half - origins) * inv
    lo = np.where(np.isnan(lo), -np.inf, lo)
    hi = np.where(np.isnan(hi), np.inf, hi)
    t_near = np.nanmax(np.minimum(lo, hi), axis=1)
    t_far = np.nanmin(np.maximum(lo, hi), axis=1)
    slab_axis = np.argmax(np.minimum(lo, hi), axis=1)
    t_enter = np.maximum(t_near, 0.0)
    active = t_far > t_enter + 1e-12

    mask = np.zeros(n, dtype=bool)
    depth = np.full(n, float(far))
    normals = np.zeros((n, 3))

    eps = 1e-9
    p_in = origins + (t_enter[:, None] + eps) * dirs
    cell = np.floor((p_in + half) / h).astype(np.int64)
    cell = np.clip(cell, 0, w - 1)
    step = np.where(dirs > 0, 1, -1).astype(np.int64)
    with np.errstate(divide="ignore"):
        t_delta = np.abs(h * inv)
    next_bound = (cell + (step > 0)) * h - half
    with np.errstate(invalid="ignore"):
        t_max = (next_bound - origins) * inv
    t_max = np.where(np.isfinite(t_max), t_max, np.inf)

    t_cur = t_enter.copy()
    entry_axis = slab_axis.copy()  # axis of the face through which we entered
    flat_vals = values.reshape(-1)
    idx_active = np.nonzero(active)[0]
    for _ in range(3 * w + 3):
        if idx_active.size == 0:
            break
        c = cell[idx_active]
        flat = (c[:, 0] * w + c[:, 1]) * w + c[:, 2]
        occ = flat_vals[flat]
        hit = idx_active[occ]
        if hit.size:
            mask[hit] = True
            depth[hit] = t_cur[hit]
            ax = entry_axis[hit]
            normals[hit, ax] = -np.sign(dirs[hit, ax])
        live = idx_active[~occ]
        if live.size == 0:
            break
        ax = np.argmin(t_max[live], axis=1)
        t_cur[live] = t_max[live, ax]
        cell[live, ax] += step[live, ax]
        t_max[live, ax] += t_delta[live, ax]
        entry_axis[live] = ax
        inside = np.all((cell[live] >= 0) & (cell[live] <= w - 1), axis=1)
        over = t_cur[live] <= t_far[live] + 1e-12
        idx_active = live[inside & over]

    hw = (intr.height, intr.width)
    if with_normals:
        return mask.reshape(hw), depth.reshape(hw), normals.reshape(hw + (3,))
    return mask.reshape(hw), depth.reshape(hw)


# ---------------------------------------------------------------------------
# tape integration: projection as a recorded (non-graph-differentiable) op

def _project_op_fwd(datas, attrs):
    values = datas[0]
    if values.ndim != 3:
        raise ValueError(f"op 'project': expects a (W,W,W) tensor, got {values.shape}")
    if np.min(values) < -1e-9 or np.max(values) > 1.0 + 1e-9:
        raise AssertionError("projection input occupancies must lie in [0, 1]")
    f = _forward_internals(
        np.clip(values, 0.0, 1.0), attrs["extent"], attrs["view"], attrs["intr"], attrs["cfg"]
    )
    intr = attrs["intr"]
    hw = (intr.height, intr.width)
    return np.stack([f["depth"].reshape(hw), f["sil"].reshape(hw)])


def _project_op_vjp(node, g):
    attrs = node.attrs
    grid = VoxelGrid(np.clip(node.parents[0].data, 0.0, 1.0), attrs["extent"])
    d_values, _, _ = project_backward(
        grid, attrs["view"], attrs["intr"], attrs["cfg"], g.data[0], g.data[1]
    )
    return (ad.constant(d_values),)


ad.register_op("project", _project_op_fwd, _project_op_vjp, closed=False)


def project_op(vox: ad.Tensor, view: Viewpoint, intr=None, cfg=None, extent=1.0) -> ad.Tensor:
    """Record a projection on the tape: (W,W,W) -> (2, H, W) [depth, silhouette].

    Differentiable w.r.t. the voxel values only; the viewpoint is a sampled
    constant here.
    """
    return ad.forward_op(
        "project",
        vox,
        view=view,
        intr=intr or CameraIntrinsics(),
        cfg=cfg or ProjectionConfig(),
        extent=float(extent),
    )
