"""Synthetic end-to-end runs: view-transform timing and a fusion walkthrough.

Nothing here touches real data; inputs are seeded random tensors over a
ring camera rig, sized so both routines finish in well under a second.
"""

from __future__ import annotations

import time

import numpy as np

from . import fusion, viewtrans
from .occupancy import BevGridSpec
from .tensor import Tensor, softmax_over_axis


def bench_view_transforms(seed: int = 0, repeats: int = 5) -> dict:
    """Wall-time the backward gather against the forward splat on one rig.

    Absolute seconds are machine-dependent; the ``splat_over_gather`` ratio
    is the comparable quantity.  The ``work`` block is deterministic.
    """
    rng = np.random.default_rng([seed, 11])
    spec = BevGridSpec.centered(100, 100, 0.8)
    rig = viewtrans.make_ring_rig(6)
    pts = viewtrans.SamplePoints.for_grid(spec, z_levels=4)
    hw = rig.cameras[0].image_size
    channels, depth_bins = 8, 40

    feats = [Tensor(rng.normal(size=(channels, *hw))) for _ in range(len(rig))]
    bins = np.arange(1.0, 1.0 + depth_bins)
    frustums = []
    for _ in range(len(rig)):
        prob = softmax_over_axis(Tensor(rng.normal(size=(depth_bins, *hw))), 0)
        ctx = Tensor(rng.normal(size=(channels, *hw)))
        frustums.append(viewtrans.Frustum(bins, prob, ctx))

    t0 = time.perf_counter()
    for _ in range(repeats):
        viewtrans.uni_sa_gather(feats, rig, pts)
    gather_s = (time.perf_counter() - t0) / repeats

    t0 = time.perf_counter()
    for _ in range(repeats):
        for fr, cam in zip(frustums, rig.cameras):
            viewtrans.lss_splat(fr, cam, spec)
    splat_s = (time.perf_counter() - t0) / repeats

    return {
        "work": {
            "bev_cells": spec.nx * spec.ny,
            "sample_points": pts.points.shape[0],
            "cameras": len(rig),
            "image_hw": list(hw),
            "channels": channels,
            "depth_bins": depth_bins,
        },
        "gather_s": gather_s,
        "splat_s": splat_s,
        "splat_over_gather": splat_s / gather_s,
        "repeats": repeats,
    }


def demo_fuse(seed: int = 0) -> dict:
    """Chain the fusion operators on seeded synthetic tensors.

    Gated satellite features meet a street BEV built from both view
    transforms; the dynamic head's attention map gates the fusion and is
    returned as a uint8 raster for plotting.
    """
    rng = np.random.default_rng([seed, 12])
    n = 32
    spec = BevGridSpec.centered(n, n, 0.5)
    rig = viewtrans.make_ring_rig(4, image_hw=(8, 22))
    pts = viewtrans.SamplePoints.for_grid(spec, z_levels=4)
    hw = rig.cameras[0].image_size
    channels, lss_channels, depth_bins = 4, 3, 8

    weights = fusion.FusionWeights.random(
        rng, channels=channels, sat_in=3, lss_channels=lss_channels)

    cam_feats = [Tensor(rng.normal(size=(channels, *hw))) for _ in range(len(rig))]
    f_uni = viewtrans.uni_sa_gather(cam_feats, rig, pts)

    bins = np.arange(1.0, 1.0 + depth_bins)
    f_lss = None
    for cam in rig.cameras:
        prob = softmax_over_axis(Tensor(rng.normal(size=(depth_bins, *hw))), 0)
        ctx = Tensor(rng.normal(size=(lss_channels, *hw)))
        part = viewtrans.lss_splat(viewtrans.Frustum(bins, prob, ctx), cam, spec)
        f_lss = part if f_lss is None else Tensor(f_lss.data + part.data)

    f_street = fusion.dual_feature_fuse(f_lss, f_uni, weights)
    sat_rgb = Tensor(rng.normal(size=(3, 2 * n, 2 * n)))
    f_sat = fusion.soft_gate(sat_rgb, weights)
    dyn = fusion.dyn_head(f_street, weights)
    fused = fusion.ddf_fuse(f_sat, f_street, dyn, weights)
    refined = fusion.dsa_refine(fused, dyn, weights)

    amap = dyn.map.data[0]
    return {
        "attention_map": np.rint(amap * 255.0).astype(np.uint8),
        "stats": {
            "grid": [n, n],
            "cameras": len(rig),
            "attention_min": float(amap.min()),
            "attention_max": float(amap.max()),
            "attention_mean": float(amap.mean()),
            "street_abs_mean": float(np.abs(f_street.data).mean()),
            "fused_abs_mean": float(np.abs(fused.data).mean()),
            "refined_abs_mean": float(np.abs(refined.data).mean()),
        },
    }
