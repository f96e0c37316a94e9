"""Run configuration: one JSON file, overridable field by field from the CLI."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, model_validator

from .occupancy import BevGridSpec


class BevConfig(BaseModel):
    """BEV grid dimensions; ``x * voxel_size`` must equal ``extent`` (meters)."""

    model_config = ConfigDict(extra="forbid")

    x: int = 200
    y: int = 200
    z: int = 16
    voxel_size: float = 0.4
    extent: float = 80.0

    @model_validator(mode="after")
    def _consistent(self):
        if self.x <= 0 or self.y <= 0 or self.z <= 0 or self.voxel_size <= 0:
            raise ValueError("bev dims and voxel size must be positive")
        for n, label in ((self.x, "x"), (self.y, "y")):
            if abs(n * self.voxel_size - self.extent) > 1e-9:
                raise ValueError(
                    f"bev {label}={n} x voxel {self.voxel_size} != extent {self.extent}"
                )
        return self

    def grid_spec(self) -> BevGridSpec:
        return BevGridSpec.centered(self.x, self.y, self.voxel_size)


class RunConfig(BaseModel):
    """Paths, grid, seed, and toggles shared by every subcommand."""

    model_config = ConfigDict(extra="forbid")

    mosaic: Optional[str] = None
    poses: Optional[str] = None
    occ_dir: Optional[str] = None
    rig: Optional[str] = None
    out: Optional[str] = None
    bev: BevConfig = BevConfig()
    seed: int = 0
    observe_mask: bool = False
    z_levels: int = 4

    def to_json_str(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_json_str())

    @classmethod
    def read(cls, path) -> "RunConfig":
        return cls.model_validate_json(Path(path).read_text())


def load_config(path=None, **overrides) -> RunConfig:
    """Config from ``path`` (or defaults) with non-None overrides applied."""
    cfg = RunConfig.read(path) if path else RunConfig()
    fields = {k: v for k, v in overrides.items() if v is not None}
    if fields:
        merged = cfg.model_dump()
        merged.update(fields)
        cfg = RunConfig.model_validate(merged)
    return cfg
