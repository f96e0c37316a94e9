"""Per-class IoU evaluation and the dynamic/static aggregate summaries.

All routines are unit-agnostic: feed fractions in [0, 1] or percents and
the summary means come back in the same unit. Classes absent from both
prediction and ground truth are undefined (NaN) and excluded from means.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .occupancy import DEFAULT_TAXONOMY, ClassTaxonomy, OccGrid
from .tensor import DimensionError

NUM_CLASSES = 17


def _group_mean(values: np.ndarray, ids) -> float:
    block = values[list(ids)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return float(np.nanmean(block))


@dataclass
class MetricReport:
    per_class_iou: np.ndarray  # 17 floats, NaN where undefined
    miou: float
    d_miou: float
    s_miou: float
    taxonomy: ClassTaxonomy = field(default_factory=ClassTaxonomy, repr=False)

    @property
    def defined_classes(self) -> list:
        return [int(i) for i in np.flatnonzero(~np.isnan(self.per_class_iou))]

    def to_json(self) -> dict:
        return {
            "per_class": [None if np.isnan(v) else float(v) for v in self.per_class_iou],
            "miou": None if np.isnan(self.miou) else self.miou,
            "d_miou": None if np.isnan(self.d_miou) else self.d_miou,
            "s_miou": None if np.isnan(self.s_miou) else self.s_miou,
            "defined_classes": self.defined_classes,
        }

    def to_json_str(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2)


def report_from_json(obj: dict) -> MetricReport:
    vals = np.array([np.nan if v is None else float(v) for v in obj["per_class"]])
    return aggregate(vals)


def aggregate(per_class, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY) -> MetricReport:
    """Means over all / dynamic / static classes, skipping undefined entries."""
    values = np.asarray(per_class, dtype=np.float64)
    if values.shape != (taxonomy.num_semantic,):
        raise DimensionError(
            f"aggregate expects {taxonomy.num_semantic} per-class values, got {values.shape}"
        )
    return MetricReport(
        per_class_iou=values,
        miou=_group_mean(values, range(taxonomy.num_semantic)),
        d_miou=_group_mean(values, sorted(taxonomy.dynamic_ids)),
        s_miou=_group_mean(values, sorted(taxonomy.static_ids)),
        taxonomy=taxonomy,
    )


def _check_pair(pred: OccGrid, gt: OccGrid, observe_mask):
    if pred.dims != gt.dims:
        raise DimensionError(f"grid dims differ: {pred.dims} vs {gt.dims}")
    if observe_mask is not None:
        observe_mask = np.asarray(observe_mask)
        if observe_mask.shape != pred.dims:
            raise DimensionError(
                f"observe mask {observe_mask.shape} does not match grids {pred.dims}"
            )
        observe_mask = observe_mask.astype(bool)
    return observe_mask


def iou_counts(pred: OccGrid, gt: OccGrid, observe_mask=None):
    """Integer intersection/union counts per semantic class."""
    observe_mask = _check_pair(pred, gt, observe_mask)
    p = pred.classes if observe_mask is None else pred.classes[observe_mask]
    g = gt.classes if observe_mask is None else gt.classes[observe_mask]
    n = pred.taxonomy.num_semantic
    inter = np.zeros(n, dtype=np.int64)
    union = np.zeros(n, dtype=np.int64)
    for c in range(n):
        pc = p == c
        gc = g == c
        inter[c] = np.count_nonzero(pc & gc)
        union[c] = np.count_nonzero(pc | gc)
    return inter, union


def iou_per_class(pred: OccGrid, gt: OccGrid, observe_mask=None) -> np.ndarray:
    """IoU per class over observed voxels; NaN where the class is absent from
    both grids."""
    inter, union = iou_counts(pred, gt, observe_mask)
    out = np.full(inter.shape, np.nan)
    defined = union > 0
    out[defined] = inter[defined] / union[defined]
    return out


@dataclass
class IouAccumulator:
    """Dataset-wide IoU: pools integer counts over scenes before dividing,
    rather than averaging per-scene ratios."""

    taxonomy: ClassTaxonomy = field(default_factory=ClassTaxonomy)

    def __post_init__(self):
        n = self.taxonomy.num_semantic
        self.inter = np.zeros(n, dtype=np.int64)
        self.union = np.zeros(n, dtype=np.int64)
        self.scenes = 0

    def add(self, pred: OccGrid, gt: OccGrid, observe_mask=None) -> None:
        inter, union = iou_counts(pred, gt, observe_mask)
        self.inter += inter
        self.union += union
        self.scenes += 1

    def per_class(self) -> np.ndarray:
        out = np.full(self.inter.shape, np.nan)
        defined = self.union > 0
        out[defined] = self.inter[defined] / self.union[defined]
        return out

    def report(self) -> MetricReport:
        return aggregate(self.per_class(), self.taxonomy)
