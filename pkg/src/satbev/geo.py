"""Pose-driven satellite slice extraction from a georeferenced mosaic.

Coordinate conventions, fixed here and relied on everywhere else:

* Ego pose: WGS84 lat/lon plus yaw in radians, measured counterclockwise
  from east in the local tangent plane, normalized to (-pi, pi].
* Mosaic raster: Web Mercator (EPSG:3857), pixel center (col, row) at
  (origin_x + col * mpp, origin_y - row * mpp).
* Slice raster: 400 x 400 at 0.2 ground meters per pixel, ego at pixel
  (199.5, 199.5), vehicle heading pointing to the image top.

Mercator meters shrink by cos(lat) relative to ground meters, so slice
sampling applies the local scale k = 1/cos(lat); without it an 80 m
request covers only ~59 m of true ground at mid latitudes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

EARTH_RADIUS_M = 6378137.0
MAX_MERCATOR_LAT = 85.05

SLICE_SIZE = 400
SLICE_RANGE_M = 80.0
SLICE_RES_M = SLICE_RANGE_M / SLICE_SIZE  # 0.2
_HALF = (SLICE_SIZE - 1) / 2.0  # ego pixel coordinate, 199.5

MOSAIC_CRS = "EPSG:3857"


class GeoError(Exception):
    """Base for geolocation and mosaic failures; ``kind`` is machine readable."""

    kind = "geo"


class GeodesyError(GeoError, ValueError):
    kind = "geodesy"


class MosaicNotFoundError(GeoError, FileNotFoundError):
    kind = "mosaic-not-found"


class MosaicFormatError(GeoError, ValueError):
    kind = "mosaic-format"


class CoverageError(GeoError):
    """Requested slice footprint extends past the mosaic raster."""

    kind = "coverage"


class TileError(GeoError):
    """A tile inside the requested footprint is not in the store."""

    kind = "tile"


# ---------------------------------------------------------------------------
# geodesy
# ---------------------------------------------------------------------------


def wgs84_to_mercator(lat: float, lon: float) -> tuple[float, float]:
    """Forward spherical Web Mercator, meters."""
    if abs(lat) > MAX_MERCATOR_LAT:
        raise GeodesyError(f"latitude {lat} outside +-{MAX_MERCATOR_LAT}")
    x = EARTH_RADIUS_M * math.radians(lon)
    # asinh(tan(lat)) == ln(tan(pi/4 + lat/2)) but is exact at the equator
    y = EARTH_RADIUS_M * math.asinh(math.tan(math.radians(lat)))
    return x, y


def mercator_to_wgs84(x: float, y: float) -> tuple[float, float]:
    lat = math.degrees(math.atan(math.sinh(y / EARTH_RADIUS_M)))
    lon = math.degrees(x / EARTH_RADIUS_M)
    return lat, lon


def local_scale(lat: float) -> float:
    """Mercator meters per ground meter at this latitude, 1/cos(lat)."""
    if abs(lat) > MAX_MERCATOR_LAT:
        raise GeodesyError(f"latitude {lat} outside +-{MAX_MERCATOR_LAT}")
    return 1.0 / math.cos(math.radians(lat))


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle in radians into (-pi, pi]."""
    r = math.remainder(yaw, 2.0 * math.pi)
    if r <= -math.pi:
        r += 2.0 * math.pi
    return r


def yaw_from_compass(bearing_deg: float) -> float:
    """Compass bearing (degrees clockwise from north) to ENU yaw."""
    return normalize_yaw(math.pi / 2.0 - math.radians(bearing_deg))


def compass_from_yaw(yaw: float) -> float:
    return math.degrees(math.pi / 2.0 - yaw) % 360.0


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EgoPose:
    timestamp: float
    lat: float
    lon: float
    yaw: float  # radians, ccw from east
    token: str | None = None

    def __post_init__(self):
        if abs(self.lat) > MAX_MERCATOR_LAT:
            raise GeodesyError(f"pose latitude {self.lat} outside +-{MAX_MERCATOR_LAT}")
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    def mercator(self) -> tuple[float, float]:
        return wgs84_to_mercator(self.lat, self.lon)


@dataclass
class GeoMosaic:
    """Read-only tile store over one Web Mercator raster.

    ``tiles`` maps (row, col) to uint8 H x W x 3 arrays; absent keys are
    declared-missing tiles and only fail when a request touches them.
    """

    origin_x: float
    origin_y: float
    meters_per_pixel: float
    tile_size: int
    rows: int
    cols: int
    tiles: dict = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if self.meters_per_pixel <= 0:
            raise MosaicFormatError(f"meters_per_pixel must be > 0, got {self.meters_per_pixel}")
        if self.tile_size < 2 or self.rows < 1 or self.cols < 1:
            raise MosaicFormatError("mosaic raster is degenerate")

    @property
    def width_px(self) -> int:
        return self.cols * self.tile_size

    @property
    def height_px(self) -> int:
        return self.rows * self.tile_size

    def mercator_of(self, col, row):
        return (
            self.origin_x + np.asarray(col) * self.meters_per_pixel,
            self.origin_y - np.asarray(row) * self.meters_per_pixel,
        )

    def pixel_of(self, x, y):
        col = (np.asarray(x) - self.origin_x) / self.meters_per_pixel
        row = (self.origin_y - np.asarray(y)) / self.meters_per_pixel
        return col, row

    @classmethod
    def from_array(cls, image: np.ndarray, origin_x: float, origin_y: float,
                   meters_per_pixel: float, tile_size: int = 256) -> "GeoMosaic":
        """Split one full raster into tiles; pads the fringe with zeros."""
        image = np.asarray(image, dtype=np.uint8)
        if image.ndim == 2:
            image = np.repeat(image[:, :, None], 3, axis=2)
        h, w = image.shape[:2]
        rows = -(-h // tile_size)
        cols = -(-w // tile_size)
        tiles = {}
        for r in range(rows):
            for c in range(cols):
                tile = np.zeros((tile_size, tile_size, 3), dtype=np.uint8)
                block = image[r * tile_size:(r + 1) * tile_size, c * tile_size:(c + 1) * tile_size]
                tile[: block.shape[0], : block.shape[1]] = block
                tiles[(r, c)] = tile
        return cls(origin_x, origin_y, meters_per_pixel, tile_size, rows, cols, tiles)

    def patch(self, col0: int, row0: int, width: int, height: int) -> np.ndarray:
        """Assemble a rectangular pixel region as float64 H x W x 3."""
        if col0 < 0 or row0 < 0 or col0 + width > self.width_px or row0 + height > self.height_px:
            raise CoverageError(
                f"patch cols [{col0}, {col0 + width}) rows [{row0}, {row0 + height}) "
                f"exceeds mosaic {self.width_px} x {self.height_px} px"
            )
        out = np.empty((height, width, 3), dtype=np.float64)
        ts = self.tile_size
        for tr in range(row0 // ts, (row0 + height - 1) // ts + 1):
            for tc in range(col0 // ts, (col0 + width - 1) // ts + 1):
                if (tr, tc) not in self.tiles:
                    raise TileError(f"tile ({tr}, {tc}) missing from mosaic store")
                tile = self.tiles[(tr, tc)]
                r_lo, r_hi = max(row0, tr * ts), min(row0 + height, (tr + 1) * ts)
                c_lo, c_hi = max(col0, tc * ts), min(col0 + width, (tc + 1) * ts)
                out[r_lo - row0:r_hi - row0, c_lo - col0:c_hi - col0] = tile[
                    r_lo - tr * ts:r_hi - tr * ts, c_lo - tc * ts:c_hi - tc * ts
                ]
        return out

    def to_dir(self, path) -> None:
        p = Path(path)
        p.mkdir(parents=True, exist_ok=True)
        meta = {
            "crs": MOSAIC_CRS,
            "origin_x": self.origin_x,
            "origin_y": self.origin_y,
            "meters_per_pixel": self.meters_per_pixel,
            "tile_size": self.tile_size,
            "rows": self.rows,
            "cols": self.cols,
        }
        (p / "mosaic.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
        for (r, c), tile in sorted(self.tiles.items()):
            Image.fromarray(tile).save(p / f"tile_{r}_{c}.png")

    @classmethod
    def from_dir(cls, path) -> "GeoMosaic":
        p = Path(path)
        meta_path = p / "mosaic.json"
        if not meta_path.is_file():
            raise MosaicNotFoundError(f"no mosaic.json under {p}")
        try:
            meta = json.loads(meta_path.read_text())
        except json.JSONDecodeError as exc:
            raise MosaicFormatError(f"{meta_path}: {exc}") from exc
        if meta.get("crs") != MOSAIC_CRS:
            raise MosaicFormatError(f"{meta_path}: crs must be {MOSAIC_CRS}, got {meta.get('crs')!r}")
        try:
            mosaic = cls(
                origin_x=float(meta["origin_x"]),
                origin_y=float(meta["origin_y"]),
                meters_per_pixel=float(meta["meters_per_pixel"]),
                tile_size=int(meta["tile_size"]),
                rows=int(meta["rows"]),
                cols=int(meta["cols"]),
            )
        except KeyError as exc:
            raise MosaicFormatError(f"{meta_path}: missing field {exc}") from exc
        for r in range(mosaic.rows):
            for c in range(mosaic.cols):
                tile_path = p / f"tile_{r}_{c}.png"
                if tile_path.is_file():
                    mosaic.tiles[(r, c)] = np.asarray(
                        Image.open(tile_path).convert("RGB"), dtype=np.uint8
                    )
        return mosaic


@dataclass
class SatSlice:
    """Heading-aligned 80 m x 80 m satellite crop around one ego pose."""

    pixels: np.ndarray
    pose: EgoPose
    ground_resolution: float = SLICE_RES_M
    range_m: float = SLICE_RANGE_M

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.shape != (SLICE_SIZE, SLICE_SIZE, 3):
            raise MosaicFormatError(
                f"slice must be {SLICE_SIZE} x {SLICE_SIZE} x 3, got {self.pixels.shape}"
            )


# ---------------------------------------------------------------------------
# slice geometry
# ---------------------------------------------------------------------------


def slice_pixel_to_ground(pose: EgoPose, u, v):
    """Slice pixel coordinates to true ground meters (east, north) from the ego."""
    su = (np.asarray(u, dtype=np.float64) - _HALF) * SLICE_RES_M
    sv = (_HALF - np.asarray(v, dtype=np.float64)) * SLICE_RES_M
    sy, cy = math.sin(pose.yaw), math.cos(pose.yaw)
    east = sy * su + cy * sv
    north = -cy * su + sy * sv
    return east, north


def ground_to_slice_pixel(pose: EgoPose, east, north):
    east = np.asarray(east, dtype=np.float64)
    north = np.asarray(north, dtype=np.float64)
    sy, cy = math.sin(pose.yaw), math.cos(pose.yaw)
    su = sy * east - cy * north
    sv = cy * east + sy * north
    return su / SLICE_RES_M + _HALF, _HALF - sv / SLICE_RES_M


def slice_footprint_mercator(pose: EgoPose) -> list:
    """Mercator corners of the slice, image order TL, TR, BR, BL."""
    ex, ey = pose.mercator()
    k = local_scale(pose.lat)
    corners = []
    for u, v in ((-0.5, -0.5), (SLICE_SIZE - 0.5, -0.5),
                 (SLICE_SIZE - 0.5, SLICE_SIZE - 0.5), (-0.5, SLICE_SIZE - 0.5)):
        east, north = slice_pixel_to_ground(pose, u, v)
        corners.append([ex + k * float(east), ey + k * float(north)])
    return corners


def _bilinear_rgb(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample H x W x 3 float image at fractional (x=col, y=row); caller keeps
    coordinates inside [0, W-1] x [0, H-1]."""
    h, w = img.shape[:2]
    x0 = np.clip(np.floor(x).astype(np.intp), 0, w - 1)
    y0 = np.clip(np.floor(y).astype(np.intp), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def extract_oriented_slice(mosaic: GeoMosaic, pose: EgoPose) -> SatSlice:
    """Bilinear resample of the mosaic on the pose's heading-aligned grid."""
    ex, ey = pose.mercator()
    k = local_scale(pose.lat)
    uu = np.arange(SLICE_SIZE, dtype=np.float64)[None, :]
    vv = np.arange(SLICE_SIZE, dtype=np.float64)[:, None]
    east, north = slice_pixel_to_ground(pose, uu, vv)
    col, row = mosaic.pixel_of(ex + k * east, ey + k * north)

    if (col.min() < 0 or row.min() < 0
            or col.max() > mosaic.width_px - 1 or row.max() > mosaic.height_px - 1):
        raise CoverageError(
            f"slice needs mosaic cols [{col.min():.1f}, {col.max():.1f}] "
            f"rows [{row.min():.1f}, {row.max():.1f}], "
            f"raster is {mosaic.width_px} x {mosaic.height_px} px"
        )
    col0 = int(math.floor(col.min()))
    row0 = int(math.floor(row.min()))
    col1 = min(int(math.floor(col.max())) + 1, mosaic.width_px - 1)
    row1 = min(int(math.floor(row.max())) + 1, mosaic.height_px - 1)
    region = mosaic.patch(col0, row0, col1 - col0 + 1, row1 - row0 + 1)
    vals = _bilinear_rgb(region, col - col0, row - row0)
    return SatSlice(np.clip(np.rint(vals), 0, 255).astype(np.uint8), pose)


# ---------------------------------------------------------------------------
# curation
# ---------------------------------------------------------------------------


def slice_sidecar(sl: SatSlice) -> dict:
    return {
        "timestamp": sl.pose.timestamp,
        "lat": sl.pose.lat,
        "lon": sl.pose.lon,
        "yaw_rad": sl.pose.yaw,
        "ground_resolution_m": sl.ground_resolution,
        "footprint_mercator": slice_footprint_mercator(sl.pose),
    }


def curate(poses, mosaic: GeoMosaic, out_dir) -> dict:
    """Write one slice PNG + JSON sidecar per pose; failures are recorded in
    the manifest instead of aborting the batch. Deterministic given inputs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    n_ok = n_failed = 0
    for i, pose in enumerate(poses):
        token = pose.token if pose.token else f"{i:06d}"
        try:
            sl = extract_oriented_slice(mosaic, pose)
        except (CoverageError, TileError) as exc:
            entries.append(
                {"token": token, "status": "error", "kind": exc.kind, "message": str(exc)}
            )
            n_failed += 1
            continue
        Image.fromarray(sl.pixels).save(out / f"{token}.png")
        (out / f"{token}.json").write_text(
            json.dumps(slice_sidecar(sl), sort_keys=True, indent=2) + "\n"
        )
        entries.append(
            {"token": token, "status": "ok", "image": f"{token}.png", "sidecar": f"{token}.json"}
        )
        n_ok += 1
    manifest = {"count_ok": n_ok, "count_failed": n_failed, "entries": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest


def poses_read_jsonl(path) -> list:
    """One pose per line; ``yaw_rad`` (or ``yaw``) in radians ccw from east."""
    poses = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            yaw = rec["yaw_rad"] if "yaw_rad" in rec else rec["yaw"]
            poses.append(
                EgoPose(
                    timestamp=float(rec["timestamp"]),
                    lat=float(rec["lat"]),
                    lon=float(rec["lon"]),
                    yaw=float(yaw),
                    token=rec.get("token"),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MosaicFormatError(f"{path}:{lineno}: bad pose record: {exc}") from exc
    return poses


def poses_write_jsonl(path, poses) -> None:
    with open(path, "w") as fh:
        for p in poses:
            rec = {"timestamp": p.timestamp, "lat": p.lat, "lon": p.lon, "yaw_rad": p.yaw}
            if p.token:
                rec["token"] = p.token
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
