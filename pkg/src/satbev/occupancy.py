"""Occupancy-grid data model and label-side projections.

Covers the static 3D mask, the per-column height and semantic maps used to
supervise the satellite branch, the dynamic BEV mask used to supervise the
fusion attention, and the on-disk codecs for grids and object boxes.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import DimensionError

# Class id layout: 11 movable categories, 6 non-movable, then free space.
CLASS_NAMES = (
    "others",
    "barrier",
    "bicycle",
    "bus",
    "car",
    "construction_vehicle",
    "motorcycle",
    "pedestrian",
    "traffic_cone",
    "trailer",
    "truck",
    "driveable_surface",
    "other_flat",
    "sidewalk",
    "terrain",
    "manmade",
    "vegetation",
)

HEIGHT_EMPTY = -1  # sentinel for BEV columns with no static voxel


class OccFormatError(ValueError):
    """Malformed occupancy or box file."""


@dataclass(frozen=True)
class ClassTaxonomy:
    """Partition of class ids into dynamic, static, and free."""

    dynamic_ids: frozenset = frozenset(range(0, 11))
    static_ids: frozenset = frozenset(range(11, 17))
    free_id: int = 17
    names: tuple = CLASS_NAMES

    def __post_init__(self):
        if self.dynamic_ids & self.static_ids:
            raise ValueError("dynamic and static ids overlap")
        if self.free_id in self.dynamic_ids | self.static_ids:
            raise ValueError("free id collides with a semantic class")
        if len(self.names) != len(self.dynamic_ids) + len(self.static_ids):
            raise ValueError("names do not cover the semantic classes")

    @property
    def num_semantic(self) -> int:
        return len(self.dynamic_ids) + len(self.static_ids)

    @property
    def max_id(self) -> int:
        return max(self.dynamic_ids | self.static_ids | {self.free_id})


DEFAULT_TAXONOMY = ClassTaxonomy()


@dataclass(frozen=True)
class BevGridSpec:
    """Regular BEV grid: cell (i, j) has its center at origin + (i, j) * cell_m."""

    nx: int
    ny: int
    cell_m: float
    origin: tuple[float, float]  # ego-frame meters of cell (0, 0) center

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1 or self.cell_m <= 0:
            raise ValueError(f"invalid BEV grid spec {self}")

    @classmethod
    def centered(cls, nx: int, ny: int, cell_m: float) -> "BevGridSpec":
        """Grid whose overall footprint is centered on the ego origin."""
        x0 = -(nx - 1) / 2.0 * cell_m
        y0 = -(ny - 1) / 2.0 * cell_m
        return cls(nx, ny, cell_m, (x0, y0))

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        cx = self.origin[0] + np.arange(self.nx) * self.cell_m
        cy = self.origin[1] + np.arange(self.ny) * self.cell_m
        return cx, cy

    def extent_m(self) -> tuple[float, float]:
        return self.nx * self.cell_m, self.ny * self.cell_m


@dataclass
class OccGrid:
    """X x Y x Z grid of class ids in the ego frame.

    ``origin`` holds the ego-frame position of the center of voxel (0, 0, 0).
    """

    classes: np.ndarray
    voxel_size: float = 0.4
    origin: tuple[float, float, float] = (-39.8, -39.8, -0.8)
    taxonomy: ClassTaxonomy = field(default_factory=ClassTaxonomy)

    def __post_init__(self):
        self.classes = np.asarray(self.classes, dtype=np.uint8)
        if self.classes.ndim != 3:
            raise DimensionError(f"OccGrid needs 3 dims, got {self.classes.shape}")
        if self.classes.max(initial=0) > self.taxonomy.max_id:
            raise OccFormatError(
                f"class id {int(self.classes.max())} exceeds {self.taxonomy.max_id}"
            )

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.classes.shape

    @classmethod
    def free(cls, dims: tuple[int, int, int], **kw) -> "OccGrid":
        tax = kw.get("taxonomy", DEFAULT_TAXONOMY)
        return cls(np.full(dims, tax.free_id, dtype=np.uint8), **kw)

    def bev_spec(self) -> BevGridSpec:
        return BevGridSpec(
            self.dims[0], self.dims[1], self.voxel_size, (self.origin[0], self.origin[1])
        )


@dataclass
class BevMap:
    """2-D map over the BEV grid; ``kind`` names the projection that built it."""

    values: np.ndarray
    kind: str  # static_mask_bev | height | semantic | dynamic_mask

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise DimensionError(f"BevMap needs 2 dims, got {self.values.shape}")


@dataclass
class Box3D:
    """Oriented 3-D object box in the ego frame (l along heading, w across)."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]  # l, w, h
    yaw: float
    class_id: int
    taxonomy: ClassTaxonomy = field(default_factory=ClassTaxonomy, repr=False)

    def __post_init__(self):
        if min(self.size) <= 0:
            raise ValueError(f"box size must be positive, got {self.size}")
        if self.class_id not in self.taxonomy.dynamic_ids:
            raise ValueError(f"box class {self.class_id} is not a dynamic class")


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------


def static_mask(occ: OccGrid) -> np.ndarray:
    """Binary X x Y x Z mask of voxels holding a static class (free and dynamic are 0)."""
    ids = np.fromiter(sorted(occ.taxonomy.static_ids), dtype=np.uint8)
    return np.isin(occ.classes, ids).astype(np.uint8)


def dynamic_mask_3d(occ: OccGrid) -> np.ndarray:
    ids = np.fromiter(sorted(occ.taxonomy.dynamic_ids), dtype=np.uint8)
    return np.isin(occ.classes, ids).astype(np.uint8)


def height_map(occ: OccGrid) -> BevMap:
    """Top static voxel index per BEV column; HEIGHT_EMPTY where none exists.

    Equivalent to the argmax over the height-weighted static volume (the
    static mask multiplied by the voxel index along z).
    """
    m = static_mask(occ)
    z = occ.dims[2]
    # (k+1)-weighting makes the all-empty column come out as the -1 sentinel
    weighted = m.astype(np.int32) * (np.arange(1, z + 1, dtype=np.int32))
    return BevMap(weighted.max(axis=2) - 1, kind="height")


def semantic_map(occ: OccGrid, h: BevMap) -> BevMap:
    """Class id of the top static voxel per column; free where the column is empty."""
    if h.values.shape != occ.dims[:2]:
        raise DimensionError(
            f"height map {h.values.shape} does not match grid {occ.dims[:2]}"
        )
    idx = np.clip(h.values, 0, occ.dims[2] - 1).astype(np.intp)
    top = np.take_along_axis(occ.classes, idx[:, :, None], axis=2)[:, :, 0]
    out = np.where(h.values == HEIGHT_EMPTY, occ.taxonomy.free_id, top)
    return BevMap(out.astype(np.uint8), kind="semantic")


def rasterize_box_bev(box: Box3D, spec: BevGridSpec) -> np.ndarray:
    """Binary mask of BEV cells whose centers lie inside the box footprint."""
    cx, cy = spec.cell_centers()
    dx = cx[:, None] - box.center[0]
    dy = cy[None, :] - box.center[1]
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    lx = c * dx + s * dy  # along heading
    ly = -s * dx + c * dy  # across
    inside = (np.abs(lx) <= box.size[0] / 2.0) & (np.abs(ly) <= box.size[1] / 2.0)
    return inside.astype(np.uint8)


def dynamic_bev_mask(occ: OccGrid, boxes: list[Box3D]) -> BevMap:
    """Union of the column-wise dynamic-voxel projection and all box footprints."""
    mask = dynamic_mask_3d(occ).any(axis=2).astype(np.uint8)
    spec = occ.bev_spec()
    for box in boxes:
        mask |= rasterize_box_bev(box, spec)
    return BevMap(mask, kind="dynamic_mask")


# ---------------------------------------------------------------------------
# codecs
# ---------------------------------------------------------------------------

OCC_MAGIC = b"OCC1"


def occ_codec_write(path, occ: OccGrid) -> None:
    """Write a grid as magic 'OCC1', little-endian u32 X, Y, Z, then x-major ids."""
    x, y, z = occ.dims
    payload = OCC_MAGIC + struct.pack("<III", x, y, z) + occ.classes.tobytes(order="C")
    Path(path).write_bytes(payload)


def occ_codec_read(path, **grid_kw) -> OccGrid:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != OCC_MAGIC:
        raise OccFormatError(f"{path}: bad magic")
    x, y, z = struct.unpack("<III", raw[4:16])
    expect = 16 + x * y * z
    if len(raw) < expect:
        raise OccFormatError(
            f"{path}: truncated payload ({len(raw)} bytes, header declares {expect})"
        )
    classes = np.frombuffer(raw[16:expect], dtype=np.uint8).reshape(x, y, z)
    return OccGrid(classes.copy(), **grid_kw)


def boxes_write_jsonl(path, boxes: list[Box3D]) -> None:
    with open(path, "w") as fh:
        for b in boxes:
            fh.write(
                json.dumps(
                    {
                        "center": list(b.center),
                        "size": list(b.size),
                        "yaw": b.yaw,
                        "class_id": b.class_id,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def boxes_read_jsonl(path) -> list[Box3D]:
    boxes = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            boxes.append(
                Box3D(
                    center=tuple(rec["center"]),
                    size=tuple(rec["size"]),
                    yaw=float(rec["yaw"]),
                    class_id=int(rec["class_id"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise OccFormatError(f"{path}:{lineno}: bad box record: {exc}") from exc
    return boxes
