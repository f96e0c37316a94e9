"""Label projection tests against brute-force voxel-loop oracles."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from satbev.occupancy import (
    DEFAULT_TAXONOMY,
    HEIGHT_EMPTY,
    BevGridSpec,
    BevMap,
    Box3D,
    ClassTaxonomy,
    OccFormatError,
    OccGrid,
    boxes_read_jsonl,
    boxes_write_jsonl,
    dynamic_bev_mask,
    height_map,
    occ_codec_read,
    occ_codec_write,
    rasterize_box_bev,
    semantic_map,
    static_mask,
)


def random_grid(rng, dims=(16, 16, 8)) -> OccGrid:
    # skew toward free so columns with no static voxel actually occur
    ids = rng.integers(0, 18, size=dims)
    free = rng.random(dims) < 0.5
    ids[free] = 17
    return OccGrid(ids.astype(np.uint8))


def height_semantic_oracle(occ: OccGrid):
    """Independent per-column scan from the top of the grid downward."""
    x, y, z = occ.dims
    h = np.full((x, y), HEIGHT_EMPTY, dtype=np.int64)
    s = np.full((x, y), occ.taxonomy.free_id, dtype=np.uint8)
    for i in range(x):
        for j in range(y):
            for k in range(z - 1, -1, -1):
                if int(occ.classes[i, j, k]) in occ.taxonomy.static_ids:
                    h[i, j] = k
                    s[i, j] = occ.classes[i, j, k]
                    break
    return h, s


def dynamic_column_oracle(occ: OccGrid):
    x, y, z = occ.dims
    m = np.zeros((x, y), dtype=np.uint8)
    for i in range(x):
        for j in range(y):
            for k in range(z):
                if int(occ.classes[i, j, k]) in occ.taxonomy.dynamic_ids:
                    m[i, j] = 1
                    break
    return m


class TestTaxonomy:
    def test_partition_covers_all_ids(self):
        tax = DEFAULT_TAXONOMY
        all_ids = tax.dynamic_ids | tax.static_ids | {tax.free_id}
        assert all_ids == frozenset(range(18))
        assert tax.num_semantic == 17
        assert len(tax.names) == 17

    def test_overlapping_partition_rejected(self):
        with pytest.raises(ValueError, match="overlap"):
            ClassTaxonomy(dynamic_ids=frozenset({0, 11}), static_ids=frozenset({11}))

    def test_free_id_collision_rejected(self):
        with pytest.raises(ValueError, match="free id"):
            ClassTaxonomy(free_id=5)

    def test_vehicle_names_in_dynamic_block(self):
        tax = DEFAULT_TAXONOMY
        assert tax.names[4] == "car"
        assert tax.names[11] == "driveable_surface"


class TestStaticMask:
    def test_matches_membership_loop(self):
        rng = np.random.default_rng(11)
        occ = random_grid(rng, (7, 5, 6))
        got = static_mask(occ)
        for i in range(7):
            for j in range(5):
                for k in range(6):
                    want = 1 if 11 <= int(occ.classes[i, j, k]) <= 16 else 0
                    assert got[i, j, k] == want

    def test_disjoint_from_dynamic_mask(self):
        from satbev.occupancy import dynamic_mask_3d

        rng = np.random.default_rng(12)
        occ = random_grid(rng)
        assert not np.any(static_mask(occ) & dynamic_mask_3d(occ))


class TestHeightSemantic:
    def test_single_voxel_column(self):
        occ = OccGrid.free((4, 4, 8))
        occ.classes[2, 3, 5] = 13
        h = height_map(occ)
        s = semantic_map(occ, h)
        assert h.values[2, 3] == 5
        assert s.values[2, 3] == 13
        assert h.values[0, 0] == HEIGHT_EMPTY
        assert s.values[0, 0] == 17

    def test_top_voxel_wins(self):
        occ = OccGrid.free((2, 2, 8))
        occ.classes[0, 0, 1] = 11
        occ.classes[0, 0, 6] = 15
        h = height_map(occ)
        s = semantic_map(occ, h)
        assert h.values[0, 0] == 6
        assert s.values[0, 0] == 15

    def test_dynamic_voxels_do_not_register(self):
        occ = OccGrid.free((2, 2, 8))
        occ.classes[1, 1, 7] = 4  # car above
        occ.classes[1, 1, 2] = 14  # sidewalk below
        h = height_map(occ)
        s = semantic_map(occ, h)
        assert h.values[1, 1] == 2
        assert s.values[1, 1] == 14

    def test_oracle_on_random_grids(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            occ = random_grid(rng, (9, 11, 7))
            h = height_map(occ)
            s = semantic_map(occ, h)
            oh, os_ = height_semantic_oracle(occ)
            assert_array_equal(h.values, oh)
            assert_array_equal(s.values, os_)

    def test_height_monotone_in_added_voxel(self):
        rng = np.random.default_rng(14)
        occ = random_grid(rng, (6, 6, 8))
        before = height_map(occ).values.copy()
        occ.classes[3, 3, 7] = 16
        after = height_map(occ).values
        assert after[3, 3] == 7
        other = np.ones((6, 6), dtype=bool)
        other[3, 3] = False
        assert_array_equal(after[other], before[other])

    def test_shape_mismatch_rejected(self):
        occ = OccGrid.free((4, 4, 8))
        bad = BevMap(np.zeros((3, 4), dtype=np.int64), kind="height")
        with pytest.raises(Exception, match="does not match"):
            semantic_map(occ, bad)


class TestRasterize:
    def test_small_box_at_cell_corner(self):
        # 0.8 m box centered on the shared corner of four 0.4 m cells covers
        # exactly those four cell centers
        spec = BevGridSpec.centered(10, 10, 0.4)
        cx, cy = spec.cell_centers()
        corner = (cx[4] + 0.2, cy[4] + 0.2)
        box = Box3D(center=(corner[0], corner[1], 0.0), size=(0.8, 0.8, 1.5), yaw=0.0, class_id=4)
        mask = rasterize_box_bev(box, spec)
        assert mask.sum() == 4
        assert_array_equal(np.argwhere(mask), [[4, 4], [4, 5], [5, 4], [5, 5]])

    def test_rotation_by_quarter_turn_is_transpose_for_square(self):
        spec = BevGridSpec.centered(21, 21, 0.4)
        kw = dict(center=(0.0, 0.0, 0.0), size=(3.0, 1.2, 1.5), class_id=10)
        m0 = rasterize_box_bev(Box3D(yaw=0.0, **kw), spec)
        m90 = rasterize_box_bev(Box3D(yaw=np.pi / 2, **kw), spec)
        assert_array_equal(m90, m0.T)

    def test_enumeration_oracle_rotated(self):
        spec = BevGridSpec.centered(25, 25, 0.4)
        box = Box3D(center=(0.7, -0.9, 0.0), size=(4.2, 1.8, 1.4), yaw=0.6, class_id=9)
        mask = rasterize_box_bev(box, spec)
        cx, cy = spec.cell_centers()
        c, s = np.cos(box.yaw), np.sin(box.yaw)
        for i in range(25):
            for j in range(25):
                dx, dy = cx[i] - box.center[0], cy[j] - box.center[1]
                lx = c * dx + s * dy
                ly = -s * dx + c * dy
                want = int(abs(lx) <= 2.1 and abs(ly) <= 0.9)
                assert mask[i, j] == want

    def test_off_grid_box_is_empty(self):
        spec = BevGridSpec.centered(10, 10, 0.4)
        box = Box3D(center=(50.0, 50.0, 0.0), size=(2.0, 2.0, 2.0), yaw=0.1, class_id=0)
        assert rasterize_box_bev(box, spec).sum() == 0


class TestDynamicBevMask:
    def test_column_projection_oracle(self):
        rng = np.random.default_rng(15)
        for _ in range(10):
            occ = random_grid(rng, (8, 8, 6))
            got = dynamic_bev_mask(occ, [])
            assert_array_equal(got.values, dynamic_column_oracle(occ))

    def test_boxes_union_dominates(self):
        rng = np.random.default_rng(16)
        occ = random_grid(rng, (32, 32, 8))
        occ.voxel_size = 0.4
        base = dynamic_bev_mask(occ, []).values
        box = Box3D(center=(1.0, 2.0, 0.0), size=(4.0, 2.0, 1.6), yaw=0.3, class_id=4)
        with_box = dynamic_bev_mask(occ, [box]).values
        assert np.all(with_box >= base)
        assert np.all(with_box >= rasterize_box_bev(box, occ.bev_spec()))

    def test_free_grid_gives_zero_mask(self):
        occ = OccGrid.free((16, 16, 8))
        assert dynamic_bev_mask(occ, []).values.sum() == 0


class TestCodec:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(17)
        occ = random_grid(rng, (12, 10, 8))
        p = tmp_path / "grid.occ"
        occ_codec_write(p, occ)
        back = occ_codec_read(p)
        assert_array_equal(back.classes, occ.classes)
        assert back.dims == (12, 10, 8)

    @given(
        x=st.integers(1, 6), y=st.integers(1, 6), z=st.integers(1, 6), seed=st.integers(0, 2**31)
    )
    @settings(max_examples=25, deadline=None)
    def test_round_trip_any_dims(self, tmp_path_factory, x, y, z, seed):
        rng = np.random.default_rng(seed)
        occ = OccGrid(rng.integers(0, 18, size=(x, y, z)).astype(np.uint8))
        p = tmp_path_factory.mktemp("occ") / "g.occ"
        occ_codec_write(p, occ)
        assert_array_equal(occ_codec_read(p).classes, occ.classes)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.occ"
        p.write_bytes(b"XXXX" + b"\x00" * 20)
        with pytest.raises(OccFormatError, match="bad magic"):
            occ_codec_read(p)

    def test_truncated_payload_rejected(self, tmp_path):
        rng = np.random.default_rng(18)
        occ = random_grid(rng, (4, 4, 4))
        p = tmp_path / "trunc.occ"
        occ_codec_write(p, occ)
        p.write_bytes(p.read_bytes()[:-5])
        with pytest.raises(OccFormatError, match="truncated"):
            occ_codec_read(p)

    def test_out_of_range_id_rejected(self, tmp_path):
        p = tmp_path / "range.occ"
        import struct

        p.write_bytes(b"OCC1" + struct.pack("<III", 1, 1, 1) + bytes([99]))
        with pytest.raises(OccFormatError, match="exceeds"):
            occ_codec_read(p)


class TestBoxJsonl:
    def test_round_trip(self, tmp_path):
        boxes = [
            Box3D(center=(1.0, 2.0, 0.5), size=(4.0, 2.0, 1.5), yaw=0.3, class_id=4),
            Box3D(center=(-3.0, 0.0, 0.2), size=(0.8, 0.8, 1.8), yaw=-1.2, class_id=7),
        ]
        p = tmp_path / "boxes.jsonl"
        boxes_write_jsonl(p, boxes)
        back = boxes_read_jsonl(p)
        assert len(back) == 2
        for a, b in zip(boxes, back):
            assert a.center == b.center and a.size == b.size
            assert a.yaw == b.yaw and a.class_id == b.class_id

    def test_bad_record_reports_line(self, tmp_path):
        p = tmp_path / "boxes.jsonl"
        p.write_text('{"center": [0, 0, 0], "size": [1, 1, 1], "yaw": 0.0}\n')
        with pytest.raises(OccFormatError, match="boxes.jsonl:1"):
            boxes_read_jsonl(p)

    def test_static_class_box_rejected(self):
        with pytest.raises(ValueError, match="not a dynamic class"):
            Box3D(center=(0, 0, 0), size=(1, 1, 1), yaw=0.0, class_id=12)
