"""Directory-level label generation and evaluation.

Samples are keyed by token: ``{token}.occ`` occupancy grids, optional
``{token}.boxes.jsonl`` object boxes, and the generated
``{token}.{height,semantic,dynamic}.png`` maps with a ``{token}.stats.json``
sidecar.  PNG payloads are id-coded single-channel rasters whose row index
is the grid x index; a reader reverses every encoding exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from . import occupancy
from .metrics import IouAccumulator, MetricReport, aggregate
from .occupancy import BevMap, OccGrid

HEIGHT_SENTINEL_PNG = 255  # encodes "no surface" (-1) in the height raster


class SampleSetError(ValueError):
    """Pred/gt directories disagree on which tokens exist."""

    def __init__(self, missing_pred, missing_gt):
        self.missing_pred = sorted(missing_pred)
        self.missing_gt = sorted(missing_gt)
        parts = []
        if self.missing_pred:
            parts.append(f"missing from pred: {', '.join(self.missing_pred)}")
        if self.missing_gt:
            parts.append(f"missing from gt: {', '.join(self.missing_gt)}")
        super().__init__("; ".join(parts))


def occ_tokens(directory) -> list:
    """Sample tokens in a directory; ``*.observed.occ`` masks are not samples."""
    names = (p.name[: -len(".occ")] for p in Path(directory).glob("*.occ"))
    return sorted(t for t in names if not t.endswith(".observed"))


def _write_png(path, values: np.ndarray) -> None:
    arr = np.ascontiguousarray(values.astype(np.uint8))
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def _read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"))


def encode_height_png(h: BevMap) -> np.ndarray:
    vals = h.values.astype(np.int64)
    if vals.max(initial=0) >= HEIGHT_SENTINEL_PNG:
        raise ValueError(f"height {int(vals.max())} collides with the sentinel")
    out = np.where(vals == occupancy.HEIGHT_EMPTY, HEIGHT_SENTINEL_PNG, vals)
    return out.astype(np.uint8)


def decode_height_png(arr: np.ndarray) -> BevMap:
    vals = arr.astype(np.int64)
    vals = np.where(vals == HEIGHT_SENTINEL_PNG, occupancy.HEIGHT_EMPTY, vals)
    return BevMap(vals, kind="height")


def label_stats(occ: OccGrid, boxes, dyn: BevMap, h: BevMap) -> dict:
    tax = occ.taxonomy
    ids = occ.classes
    return {
        "dims": list(occ.dims),
        "free_voxels": int(np.sum(ids == tax.free_id)),
        "static_voxels": int(np.sum(np.isin(ids, sorted(tax.static_ids)))),
        "dynamic_voxels": int(np.sum(np.isin(ids, sorted(tax.dynamic_ids)))),
        "dynamic_cells": int(np.sum(dyn.values != 0)),
        "columns_with_surface": int(np.sum(h.values != occupancy.HEIGHT_EMPTY)),
        "box_count": len(boxes),
    }


def generate_label_maps(occ_dir, out_dir) -> dict:
    """Project every ``{token}.occ`` to height/semantic/dynamic rasters.

    Returns the manifest that is also written to ``out_dir/manifest.json``.
    Deterministic: re-running over the same inputs reproduces every byte.
    """
    occ_dir = Path(occ_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tokens = occ_tokens(occ_dir)
    if not tokens:
        raise FileNotFoundError(f"no .occ samples under {occ_dir}")
    entries = []
    for token in tokens:
        occ = occupancy.occ_codec_read(occ_dir / f"{token}.occ")
        boxes_path = occ_dir / f"{token}.boxes.jsonl"
        boxes = occupancy.boxes_read_jsonl(boxes_path) if boxes_path.exists() else []
        h = occupancy.height_map(occ)
        s = occupancy.semantic_map(occ, h)
        d = occupancy.dynamic_bev_mask(occ, boxes)
        _write_png(out / f"{token}.height.png", encode_height_png(h))
        _write_png(out / f"{token}.semantic.png", s.values)
        _write_png(out / f"{token}.dynamic.png", d.values)
        stats = {"token": token, **label_stats(occ, boxes, d, h)}
        (out / f"{token}.stats.json").write_text(
            json.dumps(stats, sort_keys=True, indent=2) + "\n")
        entries.append(stats)
    manifest = {"count": len(entries), "entries": entries}
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest


def read_label_maps(out_dir, token) -> dict:
    """Reader for the generated rasters; inverse of :func:`generate_label_maps`."""
    out = Path(out_dir)
    return {
        "height": decode_height_png(_read_png(out / f"{token}.height.png")),
        "semantic": BevMap(_read_png(out / f"{token}.semantic.png").astype(np.int64),
                           kind="semantic"),
        "dynamic": BevMap(_read_png(out / f"{token}.dynamic.png").astype(np.int64),
                          kind="dynamic_mask"),
    }


def evaluate_dirs(pred_dir, gt_dir, observe_mask: bool = False) -> dict:
    """Dataset-pooled IoU over matching ``{token}.occ`` pairs.

    Pooling sums intersection/union voxel counts across all samples before
    dividing, so large scenes weigh more than small ones; a per-sample
    breakdown is included alongside.  With ``observe_mask`` each gt sample
    must ship a ``{token}.observed.occ`` 0/1 grid restricting the count.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    pred_tokens = set(occ_tokens(pred_dir))
    gt_tokens = set(occ_tokens(gt_dir))
    if pred_tokens != gt_tokens:
        raise SampleSetError(missing_pred=gt_tokens - pred_tokens,
                             missing_gt=pred_tokens - gt_tokens)
    if not pred_tokens:
        raise FileNotFoundError(f"no .occ samples under {pred_dir}")

    acc = IouAccumulator()
    per_sample = {}
    for token in sorted(pred_tokens):
        pred = occupancy.occ_codec_read(pred_dir / f"{token}.occ")
        gt = occupancy.occ_codec_read(gt_dir / f"{token}.occ")
        mask = None
        if observe_mask:
            mask_path = gt_dir / f"{token}.observed.occ"
            if not mask_path.exists():
                raise FileNotFoundError(
                    f"observe_mask requested but {mask_path} is missing")
            mask = occupancy.occ_codec_read(mask_path).classes != 0
        acc.add(pred, gt, observe_mask=mask)
        sample_acc = IouAccumulator()
        sample_acc.add(pred, gt, observe_mask=mask)
        per_sample[token] = sample_acc.report().to_json()
    return {
        "count": len(per_sample),
        "pooled": acc.report().to_json(),
        "per_sample": per_sample,
    }


def report_from_per_class(values) -> MetricReport:
    """Aggregate an explicit 17-entry per-class IoU row."""
    return aggregate(np.asarray(values, dtype=np.float64))


def read_per_class_file(path) -> np.ndarray:
    obj = json.loads(Path(path).read_text())
    if isinstance(obj, dict):
        obj = obj.get("per_class")
    if not isinstance(obj, list):
        raise ValueError(f"{path}: expected a JSON list of 17 class IoUs")
    return np.asarray(obj, dtype=np.float64)
