"""Runnable verification battery shared by the CLI and the test suite.

Each suite exercises one contract of the library (oracle equivalence,
adjointness, gradient correctness, fusion semantics, coverage geometry,
slice geometry, metric aggregation, end-to-end trainability) and reports
every invariant it checked together with the measured error.  The battery
is deterministic given a seed, so two runs with the same seed produce
byte-identical reports.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import fusion, geo, losses, metrics, occupancy, viewtrans
from .occupancy import DEFAULT_TAXONOMY, BevGridSpec, Box3D, OccGrid
from .tensor import GradTape, Tensor, conv2d, finite_diff_check, sigmoid, \
    slice_channels, sum_all

# Frozen reference rows: per-class IoU percentages (17 classes) for a
# camera-only baseline and a satellite-fused model on the same benchmark,
# with the group means each row must aggregate to.
REFERENCE_PER_CLASS = {
    "camera-baseline": [
        6.7, 37.7, 10.3, 39.6, 44.4, 14.9, 13.4, 15.8, 15.4, 27.4, 31.7,
        78.8, 38.0, 48.7, 52.5, 37.9, 32.2,
    ],
    "satellite-fused": [
        10.8, 45.9, 20.5, 46.6, 51.1, 23.0, 22.7, 23.1, 21.4, 33.3, 38.2,
        82.6, 43.8, 54.0, 58.5, 47.0, 41.4,
    ],
}
REFERENCE_MEANS = {
    "camera-baseline": {"miou": 32.08, "d_miou": 23.38, "s_miou": 48.02},
    "satellite-fused": {"miou": 39.05, "d_miou": 30.59, "s_miou": 54.55},
}
MEAN_TOLERANCE = 0.02


@dataclass
class Check:
    """One verified invariant: a measured value against a stated bound."""

    name: str
    measured: float
    bound: str
    ok: bool

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "measured": float(self.measured),
            "bound": self.bound,
            "ok": bool(self.ok),
        }


@dataclass
class SuiteResult:
    name: str
    checks: list
    runtime_s: float = 0.0  # wall time; excluded from the JSON report

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)

    def to_json(self) -> dict:
        return {
            "suite": self.name,
            "passed": self.passed,
            "checks": [c.to_json() for c in self.checks],
        }


@dataclass
class VerifyReport:
    seed: int
    perturb_geometry: bool
    suites: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.suites)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "perturb_geometry": self.perturb_geometry,
            "passed": self.passed,
            "suites": [s.to_json() for s in self.suites],
        }


# ---------------------------------------------------------------------------
# suite 1: metric aggregation on frozen reference rows
# ---------------------------------------------------------------------------


def _suite_aggregate(seed: int, perturb: bool) -> list:
    checks = []
    for label, row in REFERENCE_PER_CLASS.items():
        report = metrics.aggregate(np.asarray(row, dtype=np.float64))
        got = {"miou": report.miou, "d_miou": report.d_miou, "s_miou": report.s_miou}
        for part, want in REFERENCE_MEANS[label].items():
            err = abs(got[part] - want)
            checks.append(Check(
                f"{label} {part} vs {want}", err,
                f"<= {MEAN_TOLERANCE}", err <= MEAN_TOLERANCE,
            ))
    return checks


# ---------------------------------------------------------------------------
# suite 2: label projections vs brute-force loop oracles
# ---------------------------------------------------------------------------


def _column_oracle(occ: OccGrid):
    """Top-down scan per column, one voxel at a time."""
    nx, ny, nz = occ.dims
    tax = occ.taxonomy
    height = np.full((nx, ny), occupancy.HEIGHT_EMPTY, dtype=np.int64)
    sem = np.full((nx, ny), tax.free_id, dtype=np.int64)
    for x in range(nx):
        for y in range(ny):
            for k in range(nz - 1, -1, -1):
                cid = int(occ.classes[x, y, k])
                if cid in tax.static_ids:
                    height[x, y] = k
                    sem[x, y] = cid
                    break
    return height, sem


def _dynamic_oracle(occ: OccGrid, boxes) -> np.ndarray:
    nx, ny, _ = occ.dims
    tax = occ.taxonomy
    out = np.zeros((nx, ny), dtype=np.uint8)
    ox, oy = occ.origin[0], occ.origin[1]
    cell = occ.voxel_size
    for x in range(nx):
        for y in range(ny):
            if any(int(c) in tax.dynamic_ids for c in occ.classes[x, y, :]):
                out[x, y] = 1
                continue
            cx = ox + x * cell
            cy = oy + y * cell
            for b in boxes:
                dx, dy = cx - b.center[0], cy - b.center[1]
                c, s = math.cos(b.yaw), math.sin(b.yaw)
                lx = c * dx + s * dy
                ly = -s * dx + c * dy
                if abs(lx) <= b.size[0] / 2.0 and abs(ly) <= b.size[1] / 2.0:
                    out[x, y] = 1
                    break
    return out


def _suite_label_projection(seed: int, perturb: bool) -> list:
    rng = np.random.default_rng([seed, 2])
    grids = 100
    mismatches = {"height": 0, "semantic": 0, "dynamic": 0}
    for _ in range(grids):
        classes = rng.integers(0, 18, size=(16, 16, 8))
        classes[rng.random(classes.shape) < 0.6] = DEFAULT_TAXONOMY.free_id
        occ = OccGrid(classes.astype(np.uint8), voxel_size=0.4,
                      origin=(-3.0, -3.0, -0.8))
        boxes = [
            Box3D(center=(rng.uniform(-3.2, 3.2), rng.uniform(-3.2, 3.2),
                          rng.uniform(0.0, 1.0)),
                  size=(rng.uniform(0.3, 2.5), rng.uniform(0.3, 2.5),
                        rng.uniform(0.5, 2.0)),
                  yaw=rng.uniform(-np.pi, np.pi),
                  class_id=int(rng.integers(0, 11)))
            for _ in range(int(rng.integers(0, 4)))
        ]
        h = occupancy.height_map(occ)
        s = occupancy.semantic_map(occ, h)
        d = occupancy.dynamic_bev_mask(occ, boxes)
        oh, os_ = _column_oracle(occ)
        od = _dynamic_oracle(occ, boxes)
        mismatches["height"] += int(np.sum(h.values != oh))
        mismatches["semantic"] += int(np.sum(s.values != os_))
        mismatches["dynamic"] += int(np.sum(d.values != od))
    return [
        Check(f"{kind} map cells differing from loop oracle ({grids} grids)",
              float(n), "== 0", n == 0)
        for kind, n in mismatches.items()
    ]


# ---------------------------------------------------------------------------
# suite 3: splat/gather adjointness with negative control
# ---------------------------------------------------------------------------

ADJOINT_TOL = 1e-10
_CONTROL_JITTER_PX = 0.35


def _adjoint_worst(seed: int, trials: int, perturb_px: float) -> float:
    rng = np.random.default_rng([seed, 3])
    worst = 0.0
    for t in range(trials):
        ncam = int(rng.integers(1, 7))
        n = int(rng.integers(4, 17))
        zl = int(rng.integers(2, 5))
        ch = int(rng.integers(2, 5))
        rig = viewtrans.make_ring_rig(ncam, image_hw=(8, 16))
        spec = BevGridSpec.centered(n, n, 0.5)
        pts = viewtrans.SamplePoints.for_grid(spec, z_levels=zl)
        err = viewtrans.adjointness_check(
            rig, pts, spec, trials=1, channels=ch,
            seed=seed * 1000 + t, perturb_px=perturb_px)
        worst = max(worst, err)
    return worst


def _suite_adjointness(seed: int, perturb: bool) -> list:
    jitter = _CONTROL_JITTER_PX if perturb else 0.0
    worst = _adjoint_worst(seed, trials=20, perturb_px=jitter)
    checks = [Check(
        "inner-product identity over 20 rigs (1-6 cams, 4x4-16x16 grids)",
        worst, f"< {ADJOINT_TOL}", worst < ADJOINT_TOL,
    )]
    if not perturb:
        ctl = _adjoint_worst(seed + 1, trials=5,
                             perturb_px=_CONTROL_JITTER_PX)
        checks.append(Check(
            "0.35 px geometry jitter breaks the identity (control)",
            ctl, "> 1e-06", ctl > 1e-6,
        ))
    return checks


# ---------------------------------------------------------------------------
# suite 4: finite-difference gradient checks
# ---------------------------------------------------------------------------

GRAD_TOL = 1e-5


def _sep_channel_max_input(rng, shape):
    """Random input whose per-pixel channel argmax has a clear margin.

    channel_max has kinks where two channels tie; a margin keeps central
    differences on one smooth branch.
    """
    while True:
        f = rng.normal(size=shape)
        top2 = np.sort(f, axis=0)[-2:]
        if np.min(top2[1] - top2[0]) > 1e-3:
            return f


def _grad_soft_gate(rng) -> float:
    w = fusion.FusionWeights.random(rng, channels=3, sat_in=3, lss_channels=2)
    s = Tensor(rng.normal(size=(3, 6, 6)))
    return finite_diff_check(lambda t: sum_all(fusion.soft_gate(t, w)), s)


def _grad_ddf_fuse(rng) -> float:
    w = fusion.FusionWeights.random(rng, channels=3, sat_in=3, lss_channels=2)
    att = fusion.DynAttention.from_logits(Tensor(rng.normal(size=(1, 5, 5))))
    f_street = Tensor(rng.normal(size=(3, 5, 5)))
    f_sat = Tensor(rng.normal(size=(3, 5, 5)))
    return finite_diff_check(
        lambda t: sum_all(fusion.ddf_fuse(t, f_street, att, w)), f_sat)


def _grad_dsa_refine(rng) -> float:
    w = fusion.FusionWeights.random(rng, channels=3, sat_in=3, lss_channels=2)
    att = fusion.DynAttention.from_logits(Tensor(rng.normal(size=(1, 6, 6))))
    f = Tensor(_sep_channel_max_input(rng, (3, 6, 6)))
    return finite_diff_check(
        lambda t: sum_all(fusion.dsa_refine(t, att, w)), f)


def _grad_dual_feature_fuse(rng) -> float:
    w = fusion.FusionWeights.random(rng, channels=3, sat_in=3, lss_channels=2)
    f_lss = Tensor(rng.normal(size=(2, 5, 5)))
    f_uni = Tensor(rng.normal(size=(3, 5, 5)))
    return finite_diff_check(
        lambda t: sum_all(fusion.dual_feature_fuse(f_lss, t, w)), f_uni)


def _grad_dice_loss(rng) -> float:
    target = (rng.random((1, 6, 6)) < 0.5).astype(np.float64)
    raw = Tensor(rng.normal(size=(1, 6, 6)))
    return finite_diff_check(
        lambda t: losses.dice_loss(sigmoid(t), target), raw)


def _grad_dyn_loss(rng) -> float:
    target = (rng.random((1, 6, 6)) < 0.5).astype(np.float64)
    raw = Tensor(rng.normal(size=(1, 6, 6)))
    return finite_diff_check(
        lambda t: losses.dyn_loss(fusion.DynAttention.from_logits(t), target),
        raw)


def _grad_total_loss(rng) -> float:
    parts = losses._TOTAL_PARTS
    raw = Tensor(rng.uniform(0.1, 2.0, size=(len(parts),)))

    def op(t):
        return losses.total_loss(
            {name: sum_all(slice_channels(t, i, i + 1))
             for i, name in enumerate(parts)})

    return finite_diff_check(op, raw)


_GRAD_OPS = (
    ("soft_gate", _grad_soft_gate),
    ("ddf_fuse", _grad_ddf_fuse),
    ("dsa_refine", _grad_dsa_refine),
    ("dual_feature_fuse", _grad_dual_feature_fuse),
    ("dice_loss", _grad_dice_loss),
    ("dyn_loss", _grad_dyn_loss),
    ("total_loss", _grad_total_loss),
)
GRAD_SEEDS_PER_OP = 10


def _suite_gradients(seed: int, perturb: bool) -> list:
    checks = []
    for op_idx, (name, fn) in enumerate(_GRAD_OPS):
        worst = 0.0
        for trial in range(GRAD_SEEDS_PER_OP):
            rng = np.random.default_rng([seed, 4, op_idx, trial])
            worst = max(worst, fn(rng))
        checks.append(Check(
            f"{name} max finite-difference error ({GRAD_SEEDS_PER_OP} seeds)",
            worst, f"< {GRAD_TOL}", worst < GRAD_TOL,
        ))
    return checks


# ---------------------------------------------------------------------------
# suite 5: full-suppression bit invariance
# ---------------------------------------------------------------------------


def _suite_suppression(seed: int, perturb: bool) -> list:
    rng = np.random.default_rng([seed, 5])
    w = fusion.FusionWeights.random(rng, channels=4, sat_in=4, lss_channels=2)
    att = fusion.DynAttention.from_logits(Tensor(np.full((1, 8, 8), 40.0)))
    f_street = Tensor(rng.normal(size=(4, 8, 8)))
    base = rng.normal(size=(4, 8, 8))
    ref = fusion.ddf_fuse(Tensor(base), f_street, att, w).data

    map_exact = float(att.map.data.min()) == 1.0 == float(att.map.data.max())
    worst = 0.0
    for scale in (1e-12, 1.0, 1e6, 1e12):
        out = fusion.ddf_fuse(
            Tensor(base + scale * rng.normal(size=base.shape)),
            f_street, att, w).data
        worst = max(worst, float(np.max(np.abs(out - ref))))
    out = fusion.ddf_fuse(
        Tensor(rng.uniform(-1e15, 1e15, size=base.shape)), f_street, att, w).data
    worst = max(worst, float(np.max(np.abs(out - ref))))
    return [
        Check("attention map saturates to exactly 1", float(att.map.data.min()),
              "== 1.0", map_exact),
        Check("max |output delta| under satellite perturbations", worst,
              "== 0.0", worst == 0.0),
    ]


# ---------------------------------------------------------------------------
# suite 6: radial coverage of forward splat vs backward gather
# ---------------------------------------------------------------------------

COVERAGE_BANDS = ((0.0, 10.0), (10.0, 20.0), (20.0, 30.0), (30.0, 40.0))


def _suite_coverage(seed: int, perturb: bool) -> list:
    spec = BevGridSpec.centered(200, 200, 0.4)
    rig = viewtrans.make_ring_rig(6)
    pts = viewtrans.SamplePoints.for_grid(spec, z_levels=4)
    hw = rig.cameras[0].image_size
    ones = [Tensor(np.ones((1, *hw))) for _ in range(len(rig))]
    uni = viewtrans.uni_sa_gather(ones, rig, pts).data

    bins = np.arange(1.0, 41.0)
    nd = bins.size
    lss = np.zeros((1, 200, 200))
    for cam in rig.cameras:
        fr = viewtrans.Frustum(bins, Tensor(np.full((nd, *hw), 1.0 / nd)),
                               Tensor(np.ones((1, *hw))))
        lss += viewtrans.lss_splat(fr, cam, spec).data

    cov_u = {b: viewtrans.bev_coverage(uni, spec, b) for b in COVERAGE_BANDS}
    cov_l = {b: viewtrans.bev_coverage(lss, spec, b) for b in COVERAGE_BANDS}
    near, far = COVERAGE_BANDS[0], COVERAGE_BANDS[-1]
    checks = [Check(
        "splat coverage drop, 30-40 m minus 0-10 m band",
        cov_l[far] - cov_l[near], "< 0", cov_l[far] < cov_l[near],
    )]
    for b in COVERAGE_BANDS:
        checks.append(Check(
            f"gather minus splat coverage in {b[0]:.0f}-{b[1]:.0f} m band",
            cov_u[b] - cov_l[b], ">= 0", cov_u[b] >= cov_l[b],
        ))
    checks.append(Check(
        "gather exceeds splat in outermost band",
        cov_u[far] - cov_l[far], "> 0", cov_u[far] > cov_l[far],
    ))
    return checks


# ---------------------------------------------------------------------------
# suite 7: satellite slice geometry
# ---------------------------------------------------------------------------


def _rotate_bilinear(img: np.ndarray, theta: float) -> np.ndarray:
    """Rotate an image ccw by theta about its center, bilinear, float output."""
    n = img.shape[0]
    half = (n - 1) / 2.0
    u, v = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    du, dv = u - half, v - half
    c, s = math.cos(theta), math.sin(theta)
    # source pixel that lands at (u, v) after a ccw rotation
    su = half + c * du + s * dv
    sv = half - s * du + c * dv
    x0 = np.floor(su).astype(int)
    y0 = np.floor(sv).astype(int)
    fx, fy = su - x0, sv - y0
    x0c = np.clip(x0, 0, n - 2)
    y0c = np.clip(y0, 0, n - 2)
    out = np.zeros(img.shape, dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            wgt = (fx if dx else 1 - fx) * (fy if dy else 1 - fy)
            out += wgt[..., None] * img[y0c + dy, x0c + dx].astype(np.float64)
    return out


def _smooth_mosaic(size: int = 560, mpp: float = 0.25) -> geo.GeoMosaic:
    col, row = np.meshgrid(np.arange(size), np.arange(size), indexing="xy")
    img = np.clip(
        127.5 + 55.0 * np.sin(col / 11.0) + 55.0 * np.cos(row / 13.0), 0, 255
    ).astype(np.uint8)
    img = np.repeat(img[..., None], 3, axis=2)
    half = size * mpp / 2.0
    return geo.GeoMosaic.from_array(img, origin_x=-half, origin_y=half,
                                    meters_per_pixel=mpp, tile_size=140)


def _aligned_mosaic() -> geo.GeoMosaic:
    """0.2 m/px mosaic whose pixel centers coincide with slice sample points."""
    rng = np.random.default_rng(7)
    img = rng.integers(0, 256, size=(512, 512, 3), dtype=np.uint8)
    return geo.GeoMosaic.from_array(img, origin_x=-51.1, origin_y=51.1,
                                    meters_per_pixel=0.2, tile_size=128)


def _suite_slice_geometry(seed: int, perturb: bool) -> list:
    rng = np.random.default_rng([seed, 7])
    checks = []

    pose = geo.EgoPose(timestamp=0.0, lat=0.0, lon=0.0, yaw=0.8)
    u = rng.uniform(-0.5, 399.5, size=500)
    v = rng.uniform(-0.5, 399.5, size=500)
    east, north = geo.slice_pixel_to_ground(pose, u, v)
    ru, rv = geo.ground_to_slice_pixel(pose, east, north)
    rt = float(max(np.max(np.abs(ru - u)), np.max(np.abs(rv - v))))
    checks.append(Check("pixel->ground->pixel round trip, max px error", rt,
                        "< 1e-06", rt < 1e-6))

    ex, ey = pose.mercator()
    cu, cv = geo.ground_to_slice_pixel(pose, ex, ey)
    center_err = float(max(abs(cu - 199.5), abs(cv - 199.5)))
    checks.append(Check("ego anchors at pixel (199.5, 199.5)", center_err,
                        "== 0.0", center_err == 0.0))

    mosaic = _aligned_mosaic()
    north_up = geo.EgoPose(timestamp=0.0, lat=0.0, lon=0.0, yaw=np.pi / 2)
    base = geo.extract_oriented_slice(mosaic, north_up).pixels
    lat_step = math.degrees(0.2 / geo.EARTH_RADIUS_M)  # 0.2 m north at equator
    moved = geo.EgoPose(timestamp=0.0, lat=lat_step, lon=0.0, yaw=np.pi / 2)
    shifted = geo.extract_oriented_slice(mosaic, moved).pixels
    shift_err = float(np.max(np.abs(
        shifted[1:].astype(int) - base[:-1].astype(int))))
    checks.append(Check("0.2 m forward step shifts content one row", shift_err,
                        "== 0.0", shift_err == 0.0))

    smooth = _smooth_mosaic()
    base2 = geo.extract_oriented_slice(smooth, north_up).pixels
    theta = 0.6
    rotated_pose = geo.EgoPose(timestamp=0.0, lat=0.0, lon=0.0,
                               yaw=np.pi / 2 + theta)
    got = geo.extract_oriented_slice(smooth, rotated_pose).pixels
    want = _rotate_bilinear(base2, theta)
    interior = slice(60, 340)
    rot_err = float(np.mean(np.abs(
        got[interior, interior].astype(np.float64) - want[interior, interior])))
    checks.append(Check("rotation equivariance, mean abs LSB (interior)",
                        rot_err, "< 2.0", rot_err < 2.0))

    sl = geo.extract_oriented_slice(smooth, north_up)
    shape_ok = sl.pixels.shape == (400, 400, 3)
    res_ok = abs(geo.SLICE_RES_M - 0.2) == 0.0
    checks.append(Check("slice raster is 400x400 px",
                        float(sl.pixels.shape[0]), "== 400", shape_ok))
    checks.append(Check("slice resolution (m/px)", geo.SLICE_RES_M, "== 0.2",
                        res_ok))
    return checks


# ---------------------------------------------------------------------------
# suite 8: toy supervised fit of the dynamic head
# ---------------------------------------------------------------------------

FIT_MAX_STEPS = 200
FIT_LOSS_TARGET = 0.1
FIT_IOU_TARGET = 0.9


def _suite_supervised_fit(seed: int, perturb: bool) -> list:
    rng = np.random.default_rng([seed, 8])
    n = 16
    target = np.zeros((1, n, n))
    target[0, : n // 2, :] = 1.0  # half-plane dynamic region

    feats = np.concatenate([
        target + 0.05 * rng.normal(size=(1, n, n)),
        (1.0 - target) + 0.05 * rng.normal(size=(1, n, n)),
        0.1 * rng.normal(size=(1, n, n)),
    ])
    f_street = Tensor(feats)
    kernel = Tensor(0.05 * rng.normal(size=(1, 3, 3, 3)), requires_grad=True)

    lr = 4.0
    final_loss = math.inf
    steps_used = FIT_MAX_STEPS
    att = None
    for step in range(FIT_MAX_STEPS):
        with GradTape() as tape:
            pre = conv2d(f_street, kernel, pad=1)
            att = fusion.DynAttention.from_logits(pre)
            loss = losses.dyn_loss(att, target)
            tape.backward(loss)
        final_loss = loss.item()
        if final_loss < FIT_LOSS_TARGET:
            steps_used = step + 1
            break
        kernel.data -= lr * kernel.grad
        kernel.zero_grad()

    pred = (att.map.data > 0.5).astype(np.int64)
    inter = int(np.sum((pred == 1) & (target == 1)))
    union = int(np.sum((pred == 1) | (target == 1)))
    iou = inter / union if union else 0.0
    return [
        Check("descent loss after fit", final_loss, f"< {FIT_LOSS_TARGET}",
              final_loss < FIT_LOSS_TARGET),
        Check("gradient steps used", float(steps_used), f"<= {FIT_MAX_STEPS}",
              steps_used <= FIT_MAX_STEPS),
        Check("thresholded-map IoU vs target", iou, f"> {FIT_IOU_TARGET}",
              iou > FIT_IOU_TARGET),
    ]


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------

SUITES = (
    ("aggregate-reference", _suite_aggregate),
    ("label-projection", _suite_label_projection),
    ("adjointness", _suite_adjointness),
    ("gradients", _suite_gradients),
    ("suppression", _suite_suppression),
    ("coverage", _suite_coverage),
    ("slice-geometry", _suite_slice_geometry),
    ("supervised-fit", _suite_supervised_fit),
)
SUITE_NAMES = tuple(name for name, _ in SUITES)


def run_suite(name: str, seed: int = 0, perturb_geometry: bool = False) -> SuiteResult:
    for suite_name, fn in SUITES:
        if suite_name == name:
            start = time.perf_counter()
            checks = fn(seed, perturb_geometry)
            return SuiteResult(name, checks, time.perf_counter() - start)
    raise KeyError(f"unknown suite {name!r}; choose from {SUITE_NAMES}")


def run_verification(seed: int = 0, perturb_geometry: bool = False,
                     names=None) -> VerifyReport:
    """Run the named suites (default: all) and collect a report."""
    if names is None:
        names = SUITE_NAMES
    unknown = [n for n in names if n not in SUITE_NAMES]
    if unknown:
        raise KeyError(f"unknown suites {unknown}; choose from {SUITE_NAMES}")
    report = VerifyReport(seed=seed, perturb_geometry=perturb_geometry)
    for name in names:
        report.suites.append(run_suite(name, seed, perturb_geometry))
    return report
