"""Street-branch BEV construction: backward preset-point gather and forward
depth splat, plus the coverage analysis comparing their density profiles.

Both transforms are linear in their feature inputs and share the same
projection geometry, so the gather and the splat-direction scatter are
transposes of one another; ``adjointness_check`` verifies that identity
numerically with an independently written scatter.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .occupancy import BevGridSpec
from .tensor import (
    DimensionError,
    GradTape,
    Tensor,
    add,
    bilinear_sample,
    elementwise_mul,
    pixelwise_outer,
    reshape,
    scatter_columns,
)


@dataclass
class Camera:
    """Pinhole camera; ``image_size`` is (H, W) of the feature grid it indexes."""

    intrinsics: np.ndarray  # 3x3
    cam_from_ego: np.ndarray  # 4x4 rigid
    image_size: tuple[int, int]

    def __post_init__(self):
        self.intrinsics = np.asarray(self.intrinsics, dtype=np.float64)
        self.cam_from_ego = np.asarray(self.cam_from_ego, dtype=np.float64)
        if self.intrinsics.shape != (3, 3):
            raise DimensionError(f"intrinsics must be 3x3, got {self.intrinsics.shape}")
        if self.cam_from_ego.shape != (4, 4):
            raise DimensionError(f"cam_from_ego must be 4x4, got {self.cam_from_ego.shape}")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        r = self.cam_from_ego[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
            raise ValueError("cam_from_ego rotation block is not orthonormal")

    @property
    def fx(self) -> float:
        return float(self.intrinsics[0, 0])

    @property
    def fy(self) -> float:
        return float(self.intrinsics[1, 1])

    @property
    def cx(self) -> float:
        return float(self.intrinsics[0, 2])

    @property
    def cy(self) -> float:
        return float(self.intrinsics[1, 2])

    @classmethod
    def from_params(cls, fx, fy, cx, cy, cam_from_ego, width, height) -> "Camera":
        k = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        return cls(k, np.asarray(cam_from_ego, dtype=np.float64).reshape(4, 4), (height, width))

    def ego_from_cam(self) -> np.ndarray:
        r = self.cam_from_ego[:3, :3]
        t = self.cam_from_ego[:3, 3]
        inv = np.eye(4)
        inv[:3, :3] = r.T
        inv[:3, 3] = -r.T @ t
        return inv


@dataclass
class CameraRig:
    cameras: list

    def __post_init__(self):
        if len(self.cameras) < 1:
            raise DimensionError("rig needs at least one camera")

    def __len__(self) -> int:
        return len(self.cameras)


def rig_write_json(path, rig: CameraRig) -> None:
    recs = []
    for cam in rig.cameras:
        recs.append(
            {
                "fx": cam.fx,
                "fy": cam.fy,
                "cx": cam.cx,
                "cy": cam.cy,
                "cam_from_ego": [float(v) for v in cam.cam_from_ego.reshape(-1)],
                "width": cam.image_size[1],
                "height": cam.image_size[0],
            }
        )
    Path(path).write_text(json.dumps({"cameras": recs}, indent=2) + "\n")


def rig_read_json(path) -> CameraRig:
    try:
        spec = json.loads(Path(path).read_text())
        cams = [
            Camera.from_params(
                float(c["fx"]), float(c["fy"]), float(c["cx"]), float(c["cy"]),
                c["cam_from_ego"], int(c["width"]), int(c["height"]),
            )
            for c in spec["cameras"]
        ]
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DimensionError(f"{path}: bad rig file: {exc}") from exc
    return CameraRig(cams)


@dataclass
class SamplePoints:
    """Preset ego-frame 3D points on a regular X x Y x Z grid, cell-centered
    in the BEV plane, x-major then y then z ordering."""

    points: np.ndarray  # N x 3
    layout: tuple[int, int, int]

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        x, y, z = self.layout
        if self.points.shape != (x * y * z, 3):
            raise DimensionError(
                f"points {self.points.shape} do not fill layout {self.layout}"
            )

    @classmethod
    def for_grid(cls, spec: BevGridSpec, z_levels: int = 4,
                 z_range: tuple[float, float] = (-1.4, 2.6)) -> "SamplePoints":
        cx, cy = spec.cell_centers()
        z_step = (z_range[1] - z_range[0]) / z_levels
        zs = z_range[0] + (np.arange(z_levels) + 0.5) * z_step
        gx, gy, gz = np.meshgrid(cx, cy, zs, indexing="ij")
        pts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
        return cls(pts, (spec.nx, spec.ny, z_levels))

    def cell_index(self) -> np.ndarray:
        """BEV cell (flattened x-major) owning each point."""
        x, y, z = self.layout
        return np.repeat(np.arange(x * y, dtype=np.intp), z)


@dataclass
class Frustum:
    """Per-pixel depth distribution and context features over fixed depth bins."""

    depth_bins: np.ndarray  # D, meters, increasing
    depth_prob: Tensor  # [D, H, W], rows sum to 1 over D
    context: Tensor  # [C, H, W]

    def __post_init__(self):
        self.depth_bins = np.asarray(self.depth_bins, dtype=np.float64)
        if self.depth_bins.ndim != 1 or np.any(np.diff(self.depth_bins) <= 0):
            raise ValueError("depth_bins must be strictly increasing")
        d, h, w = self.depth_prob.shape
        if d != self.depth_bins.size:
            raise DimensionError(
                f"depth_prob has {d} bins, depth_bins has {self.depth_bins.size}"
            )
        if self.context.shape[1:] != (h, w):
            raise DimensionError(
                f"context {self.context.shape} does not match depth_prob {self.depth_prob.shape}"
            )
        if self.depth_prob.data.min() < 0:
            raise ValueError("depth distribution has negative mass")
        sums = self.depth_prob.data.sum(axis=0)
        if not np.allclose(sums, 1.0, atol=1e-6):
            raise ValueError("depth distribution must sum to 1 over bins per pixel")


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------


def project_points(points, cam: Camera):
    """Pinhole projection of ego-frame points.

    Returns (uv, depth, valid); valid needs positive depth and uv inside the
    pixel-center hull [0, W-1] x [0, H-1]. Invalid rows carry uv = (0, 0).
    """
    pts = points.points if isinstance(points, SamplePoints) else np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DimensionError(f"points must be N x 3, got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    h, w = cam.image_size
    cam_pts = pts @ cam.cam_from_ego[:3, :3].T + cam.cam_from_ego[:3, 3]
    depth = cam_pts[:, 2]
    safe = np.where(depth > 0, depth, 1.0)
    u = cam.fx * cam_pts[:, 0] / safe + cam.cx
    v = cam.fy * cam_pts[:, 1] / safe + cam.cy
    valid = (depth > 0) & (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    uv = np.stack([np.where(valid, u, 0.0), np.where(valid, v, 0.0)], axis=1)
    return uv, depth, valid


# ---------------------------------------------------------------------------
# backward projection (preset-point gather)
# ---------------------------------------------------------------------------


def uni_sa_gather(features, rig: CameraRig, points: SamplePoints) -> Tensor:
    """Sum of bilinear feature samples over cameras and z-levels per BEV cell.

    ``features`` is one [C, H_v, W_v] tensor per camera, sized to that
    camera's ``image_size``. Differentiable w.r.t. the features.
    """
    if len(features) != len(rig):
        raise DimensionError(f"{len(features)} feature maps for {len(rig)} cameras")
    x, y, _ = points.layout
    idx = points.cell_index()
    out = None
    for feat, cam in zip(features, rig.cameras):
        if feat.shape[1:] != cam.image_size:
            raise DimensionError(
                f"feature map {feat.shape} does not match camera size {cam.image_size}"
            )
        uv, _, valid = project_points(points, cam)
        sampled, in_image = bilinear_sample(feat, uv)
        mask = Tensor((valid & in_image).astype(np.float64)[None, :])
        contrib = scatter_columns(elementwise_mul(sampled, mask), idx, x * y)
        out = contrib if out is None else add(out, contrib)
    return reshape(out, (features[0].shape[0], x, y))


def uni_sa_scatter(bev: np.ndarray, rig: CameraRig, points: SamplePoints,
                   feature_sizes, perturb_px: float = 0.0, seed: int = 0) -> list:
    """Transpose of ``uni_sa_gather`` as plain numpy, written independently of
    the tape machinery: routes each BEV cell value back to the four bilinear
    corner pixels of every valid projection.

    ``perturb_px`` jitters the projected coordinates; nonzero values break
    the transpose relation on purpose (negative control for adjointness).
    """
    bev = np.asarray(bev, dtype=np.float64)
    c = bev.shape[0]
    flat = bev.reshape(c, -1)
    idx = points.cell_index()
    rng = np.random.default_rng(seed)
    outs = []
    for cam, (fc, fh, fw) in zip(rig.cameras, feature_sizes):
        if fc != c:
            raise DimensionError(f"feature channels {fc} != bev channels {c}")
        uv, _, valid = project_points(points, cam)
        if perturb_px:
            uv = uv + rng.normal(0.0, perturb_px, size=uv.shape)
        xq, yq = uv[:, 0], uv[:, 1]
        in_image = (xq >= 0) & (xq <= fw - 1) & (yq >= 0) & (yq <= fh - 1)
        use = valid & in_image
        out = np.zeros((c, fh, fw), dtype=np.float64)
        x0 = np.floor(xq)
        y0 = np.floor(yq)
        fx = xq - x0
        fy = yq - y0
        ix0 = np.clip(x0, 0, fw - 1).astype(np.intp)
        iy0 = np.clip(y0, 0, fh - 1).astype(np.intp)
        ix1 = np.clip(x0 + 1, 0, fw - 1).astype(np.intp)
        iy1 = np.clip(y0 + 1, 0, fh - 1).astype(np.intp)
        vals = flat[:, idx] * use
        for wgt, iy, ix in (
            ((1 - fx) * (1 - fy), iy0, ix0),
            (fx * (1 - fy), iy0, ix1),
            ((1 - fx) * fy, iy1, ix0),
            (fx * fy, iy1, ix1),
        ):
            np.add.at(out, (slice(None), iy, ix), vals * wgt)
        outs.append(out)
    return outs


# ---------------------------------------------------------------------------
# forward projection (depth splat)
# ---------------------------------------------------------------------------


def lss_splat(frustum: Frustum, cam: Camera, spec: BevGridSpec) -> Tensor:
    """Lift every pixel along its ray at each depth bin and bin the product
    depth_prob x context into BEV cells; off-grid points are dropped.
    Differentiable w.r.t. both the depth distribution and the context."""
    d, h, w = frustum.depth_prob.shape
    if (h, w) != cam.image_size:
        raise DimensionError(f"frustum {h}x{w} does not match camera {cam.image_size}")
    us, vs = np.meshgrid(np.arange(w), np.arange(h), indexing="xy")
    xn = (us - cam.cx) / cam.fx
    yn = (vs - cam.cy) / cam.fy
    rays = np.stack([xn, yn, np.ones_like(xn)], axis=0)  # 3 x H x W
    depths = frustum.depth_bins[:, None, None, None]
    cam_pts = rays[None, :, :, :] * depths  # D x 3 x H x W
    ego = cam.ego_from_cam()
    ego_pts = np.einsum("ij,djhw->dihw", ego[:3, :3], cam_pts) + ego[:3, 3][None, :, None, None]

    ci = np.floor((ego_pts[:, 0] - spec.origin[0]) / spec.cell_m + 0.5).astype(np.int64)
    cj = np.floor((ego_pts[:, 1] - spec.origin[1]) / spec.cell_m + 0.5).astype(np.int64)
    inside = (ci >= 0) & (ci < spec.nx) & (cj >= 0) & (cj < spec.ny)
    idx = np.where(inside, ci * spec.ny + cj, -1).reshape(-1)

    weighted = pixelwise_outer(frustum.depth_prob, frustum.context)  # [C, D, H, W]
    c = frustum.context.shape[0]
    cols = reshape(weighted, (c, d * h * w))
    binned = scatter_columns(cols, idx, spec.nx * spec.ny)
    return reshape(binned, (c, spec.nx, spec.ny))


# ---------------------------------------------------------------------------
# verification helpers
# ---------------------------------------------------------------------------


def adjointness_check(rig: CameraRig, points: SamplePoints, spec: BevGridSpec,
                      trials: int = 20, channels: int = 3, seed: int = 0,
                      perturb_px: float = 0.0) -> float:
    """Max over trials of |<scatter(x), y> - <x, gather(y)>| for random x, y.

    Gather runs through the taped operators, scatter through the independent
    numpy transpose; agreement certifies both sides encode one linear map.
    """
    x, y, _ = points.layout
    if (x, y) != (spec.nx, spec.ny):
        raise DimensionError(f"points layout {points.layout} does not match grid {spec}")
    sizes = [(channels, *cam.image_size) for cam in rig.cameras]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(trials):
        feats = [Tensor(rng.normal(size=s)) for s in sizes]
        bev_vec = rng.normal(size=(channels, x, y))
        gathered = uni_sa_gather(feats, rig, points)
        lhs = 0.0
        scattered = uni_sa_scatter(
            bev_vec, rig, points, sizes, perturb_px=perturb_px, seed=seed + 1000 + trial
        )
        for f, s in zip(feats, scattered):
            lhs += float(np.sum(f.data * s))
        rhs = float(np.sum(bev_vec * gathered.data))
        worst = max(worst, abs(lhs - rhs))
    return worst


def bev_coverage(bev, spec: BevGridSpec, band: tuple[float, float]) -> float:
    """Fraction of cells in the radial band [r0, r1) with any nonzero channel."""
    data = bev.data if isinstance(bev, Tensor) else np.asarray(bev)
    if data.ndim == 2:
        data = data[None]
    if data.shape[1:] != (spec.nx, spec.ny):
        raise DimensionError(f"bev {data.shape} does not match grid {spec.nx}x{spec.ny}")
    cx, cy = spec.cell_centers()
    r = np.hypot(cx[:, None], cy[None, :])
    in_band = (r >= band[0]) & (r < band[1])
    if not in_band.any():
        raise ValueError(f"radial band {band} contains no cells")
    nonzero = (np.abs(data) > 0).any(axis=0)
    return float(nonzero[in_band].sum() / in_band.sum())


def frustum_fraction(rig: CameraRig, points: SamplePoints, spec: BevGridSpec,
                     band: tuple[float, float]) -> float:
    """Fraction of band cells with at least one validly projecting preset point;
    the gather of all-ones features is nonzero exactly on these cells."""
    x, y, _ = points.layout
    covered = np.zeros(x * y, dtype=bool)
    idx = points.cell_index()
    for cam in rig.cameras:
        _, _, valid = project_points(points, cam)
        np.logical_or.at(covered, idx, valid)
    return bev_coverage(covered.reshape(1, x, y).astype(float), spec, band)


def make_ring_rig(num_cameras: int = 6, image_hw: tuple[int, int] = (16, 44),
                  fov_deg: float = 70.0, height_m: float = 1.5) -> CameraRig:
    """Outward-facing ring of horizontal cameras at even azimuth spacing.

    Camera axes: +z optical, +x right, +y down; with the default 70 degree
    field of view, six cameras overlap enough to cover all azimuths.
    """
    h, w = image_hw
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    fx = cx / np.tan(np.radians(fov_deg) / 2.0)
    cams = []
    for i in range(num_cameras):
        phi = 2.0 * np.pi * i / num_cameras
        look = np.array([np.cos(phi), np.sin(phi), 0.0])
        right = np.array([np.sin(phi), -np.cos(phi), 0.0])
        down = np.array([0.0, 0.0, -1.0])
        r = np.stack([right, down, look], axis=0)
        t = np.array([0.0, 0.0, height_m])
        m = np.eye(4)
        m[:3, :3] = r
        m[:3, 3] = -r @ t
        cams.append(Camera.from_params(fx, fx, cx, cy, m, w, h))
    return CameraRig(cams)
