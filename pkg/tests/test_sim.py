import numpy as np
import pytest

from lineage_ilp.evaluate import GroundTruth
from lineage_ilp.io import TrackRow
from lineage_ilp.sim import (
    CorruptionConfig,
    SimConfig,
    corrupt,
    ideal_proposals,
    simulate,
)


def busy_config(seed=42):
    return SimConfig(
        seed=seed,
        frames=24,
        width=128,
        height=128,
        initial_cells=8,
        motion_sigma=1.5,
        division_rate=0.02,
        enter_rate=0.15,
        noise_sigma=0.02,
    )


class TestSimulate:
    def test_deterministic(self):
        a = simulate(busy_config())
        b = simulate(busy_config())
        assert len(a.frames) == len(b.frames)
        for fa, fb in zip(a.frames, b.frames):
            assert np.array_equal(fa.intensity, fb.intensity)
        assert a.gt.tracks == b.gt.tracks
        assert a.gt.markers == b.gt.markers

    def test_seed_changes_output(self):
        a = simulate(busy_config(seed=1))
        b = simulate(busy_config(seed=2))
        assert not np.array_equal(a.frames[0].intensity, b.frames[0].intensity)

    def test_ground_truth_is_consistent(self):
        res = simulate(busy_config())
        # GroundTruth.__post_init__ validates spans and parent links; check grids too.
        assert len(res.gt.label_grids) == len(res.frames)
        assert res.gt.n_frames == len(res.frames)

    def test_markers_inside_own_region(self):
        res = simulate(busy_config())
        for t, rows in res.gt.markers.items():
            grid = res.gt.label_grids[t]
            for track_id, x, y in rows:
                r = int(np.floor(y + 0.5))
                c = int(np.floor(x + 0.5))
                assert grid[r, c] == track_id

    def test_divisions_produce_two_daughters(self):
        res = simulate(busy_config())
        divisions = res.gt.divisions()
        assert len(divisions) == res.counts["divisions"]
        spans = {row.label: row for row in res.gt.tracks}
        for parent, d1, d2, t_end in divisions:
            assert spans[d1].birth == t_end + 1
            assert spans[d2].birth == t_end + 1

    def test_intensity_range(self):
        res = simulate(busy_config())
        for f in res.frames:
            assert f.intensity.min() >= 0.0
            assert f.intensity.max() <= 1.0

    def test_reflect_border_never_exits(self):
        cfg = busy_config()
        cfg.border = "reflect"
        cfg.enter_rate = 0.0
        cfg.division_rate = 0.0
        res = simulate(cfg)
        assert res.counts["exits"] == 0
        assert all(row.end == cfg.frames - 1 for row in res.gt.tracks)


def tiny_gt():
    """Two touching 2x2 regions plus one far region, single frame."""
    grid = np.zeros((10, 10), dtype=np.int64)
    grid[2:4, 2:4] = 1
    grid[2:4, 4:6] = 2
    grid[7:9, 7:9] = 3
    tracks = [TrackRow(1, 0, 0, 0), TrackRow(2, 0, 0, 0), TrackRow(3, 0, 0, 0)]
    markers = {0: [(1, 2.5, 2.5), (2, 4.5, 2.5), (3, 7.5, 7.5)]}
    return GroundTruth(tracks=tracks, markers=markers, label_grids=[grid])


class TestCorrupt:
    def test_zero_rates_reproduce_regions(self):
        res = simulate(busy_config())
        props = corrupt(res.gt, res.frames, CorruptionConfig(seed=0))
        per_frame = ideal_proposals(res.gt)
        by_t = {}
        for p in props:
            by_t.setdefault(p.t, []).append(p)
        for t, frame_masks in enumerate(per_frame):
            got = by_t.get(t, [])
            assert len(got) == len(frame_masks)
            for p, (_label, m) in zip(got, frame_masks):
                assert p.mask == m

    def test_deterministic(self):
        res = simulate(busy_config())
        ccfg = CorruptionConfig(seed=9, drop_rate=0.1, clutter_rate=0.1, jitter_px=0.5)
        a = corrupt(res.gt, res.frames, ccfg)
        b = corrupt(res.gt, res.frames, ccfg)
        assert len(a) == len(b)
        for pa, pb in zip(a, b):
            assert pa.id == pb.id and pa.t == pb.t and pa.mask == pb.mask
            assert pa.raw_score == pb.raw_score

    def test_merge_creates_single_two_marker_proposal(self):
        gt = tiny_gt()
        props = corrupt(gt, [], CorruptionConfig(seed=1, merge_rate=1.0))
        two_marker = [
            p
            for p in props
            if sum(p.mask.contains_point(x, y) for _id, x, y in gt.markers_at(0)) == 2
        ]
        assert len(two_marker) == 1
        assert len(props) == 2  # merged pair plus the far region

    def test_drop_everything(self):
        gt = tiny_gt()
        assert corrupt(gt, [], CorruptionConfig(seed=1, drop_rate=1.0)) == []

    def test_split_bisects(self):
        gt = tiny_gt()
        props = corrupt(gt, [], CorruptionConfig(seed=1, split_rate=1.0))
        assert len(props) == 6
        assert all(p.mask.area == 2 for p in props)

    def test_jitter_stays_in_frame(self):
        res = simulate(busy_config())
        props = corrupt(res.gt, res.frames, CorruptionConfig(seed=3, jitter_px=2.0))
        h, w = res.gt.label_grids[0].shape
        for p in props:
            assert p.mask.x0 >= 0 and p.mask.y0 >= 0
            assert p.mask.x0 + p.mask.bits.shape[1] <= w
            assert p.mask.y0 + p.mask.bits.shape[0] <= h

    def test_clutter_adds_disks(self):
        gt = tiny_gt()
        props = corrupt(gt, [], CorruptionConfig(seed=2, clutter_rate=1.0))
        assert len(props) > 3
        scores = sorted({round(p.raw_score, 2) for p in props})
        assert scores == [0.35, 0.9]
