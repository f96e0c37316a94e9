import json

import pytest

from satbev.config import BevConfig, RunConfig, load_config
from satbev.occupancy import BevGridSpec


class TestBevConfig:
    def test_defaults_consistent(self):
        bev = BevConfig()
        assert bev.x * bev.voxel_size == pytest.approx(bev.extent, abs=1e-9)

    def test_inconsistent_extent_rejected(self):
        with pytest.raises(ValueError, match="extent"):
            BevConfig(x=100, voxel_size=0.4, extent=80.0)

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            BevConfig(x=0, voxel_size=0.4, extent=0.0)

    def test_grid_spec_matches_dims(self):
        spec = BevConfig(x=50, y=50, voxel_size=1.6, extent=80.0).grid_spec()
        assert isinstance(spec, BevGridSpec)
        assert (spec.nx, spec.ny) == (50, 50)
        assert spec.cell_m == 1.6


class TestRunConfig:
    def test_json_round_trip_lossless(self, tmp_path):
        cfg = RunConfig(mosaic="/data/mosaic", poses="/data/poses.jsonl",
                        seed=7, observe_mask=True, z_levels=6)
        path = tmp_path / "run.json"
        cfg.write(path)
        assert RunConfig.read(path) == cfg

    def test_round_trip_string_stable(self):
        cfg = RunConfig(seed=3)
        once = cfg.to_json_str()
        again = RunConfig.model_validate_json(once).to_json_str()
        assert once == again

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError):
            RunConfig.model_validate({"sedd": 3})

    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.seed == 0
        assert cfg.observe_mask is False
        assert cfg.z_levels == 4
        assert cfg.mosaic is None


class TestLoadConfig:
    def test_overrides_win_over_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        RunConfig(seed=1, occ_dir="/from/file").write(path)
        cfg = load_config(path, seed=9)
        assert cfg.seed == 9
        assert cfg.occ_dir == "/from/file"

    def test_none_overrides_ignored(self, tmp_path):
        path = tmp_path / "cfg.json"
        RunConfig(seed=5).write(path)
        assert load_config(path, seed=None).seed == 5

    def test_without_file_uses_defaults(self):
        cfg = load_config(None, out="/tmp/out")
        assert cfg.out == "/tmp/out"
        assert cfg.seed == 0

    def test_override_revalidates(self, tmp_path):
        path = tmp_path / "cfg.json"
        RunConfig().write(path)
        bad_bev = {"x": 10, "y": 200, "z": 16, "voxel_size": 0.4, "extent": 80.0}
        with pytest.raises(ValueError, match="extent"):
            load_config(path, bev=bad_bev)
