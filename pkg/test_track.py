#!/usr/bin/env python3
"""
Tests for component labelling, lesion matching, tracking and the mask path.
"""

import inspect
import itertools
import math
import sys
from collections import deque

import numpy as np
import pytest

import curation.ingest
import curation.resample
import curation.track
import curation.volume_io
from analysis import featspace
from curation.resample import resample
from curation.track import build_trajectories, connected_components, match_components, track_manifest
from curation.volume_io import (
    read_label_volume,
    read_series_manifest,
    write_label_volume,
    write_series_manifest,
)
from synthgen.masks import SphereLesion, sphere_mask_series, voxel_sphere_volume
from trajcore.errors import AlignmentError, InvalidTrajectoryError
from trajcore.response import classify_trajectory
from trajcore.shape import shape_features
from trajcore.types import LabelVolume, ResponseCategory


def volume_from(array, spacing=(1.0, 1.0, 1.0)):
    return LabelVolume.from_array(np.asarray(array, dtype=np.uint16), spacing)


def blob(dims, boxes):
    arr = np.zeros(dims, dtype=np.uint16)
    for (x0, x1), (y0, y1), (z0, z1) in boxes:
        arr[x0:x1, y0:y1, z0:z1] = 1
    return arr


def test_components_sorted_by_size_then_centroid():
    arr = blob((20, 20, 20), [((0, 2), (0, 2), (0, 2)), ((10, 13), (10, 13), (10, 13)),
                              ((15, 17), (0, 2), (0, 2))])
    comps = connected_components(volume_from(arr, spacing=(0.5, 1.0, 2.0)))
    assert [c.voxel_count for c in comps] == [27, 8, 8]
    assert [c.component_id for c in comps] == [0, 1, 2]
    assert comps[1].centroid_mm < comps[2].centroid_mm
    assert comps[0].volume_mm3 == pytest.approx(27 * 0.5 * 1.0 * 2.0)
    assert comps[0].centroid_mm == pytest.approx((11 * 0.5, 11 * 1.0, 11 * 2.0))


def test_diagonal_voxels_are_connected():
    arr = np.zeros((5, 5, 5), dtype=np.uint16)
    arr[1, 1, 1] = 3
    arr[2, 2, 2] = 7
    comps = connected_components(volume_from(arr))
    assert len(comps) == 1 and comps[0].voxel_count == 2


def test_empty_volume_has_no_components():
    assert connected_components(volume_from(np.zeros((4, 4, 4)))) == []


def test_labels_length_must_match_dims():
    with pytest.raises(InvalidTrajectoryError):
        LabelVolume((2, 2, 2), (1, 1, 1), (0, 0, 0), np.zeros(7))


def test_match_prefers_overlap_then_distance():
    a = connected_components(volume_from(blob((30, 30, 30), [((0, 4), (0, 4), (0, 4)),
                                                             ((20, 24), (20, 24), (20, 24))])))
    b = connected_components(volume_from(blob((30, 30, 30), [((2, 5), (2, 5), (2, 5)),
                                                             ((24, 27), (20, 24), (20, 24))])))
    result = match_components(a, b, max_centroid_mm=10.0)
    assert len(result.pairs) == 2
    for ca, cb in result.pairs:
        assert np.linalg.norm(np.subtract(ca.centroid_mm, cb.centroid_mm)) < 10.0
    assert result.appeared == [] and result.disappeared == []


def test_far_components_do_not_match():
    a = connected_components(volume_from(blob((30, 30, 30), [((0, 3), (0, 3), (0, 3))])))
    b = connected_components(volume_from(blob((30, 30, 30), [((20, 23), (20, 23), (20, 23))])))
    result = match_components(a, b, max_centroid_mm=10.0)
    assert result.pairs == []
    assert len(result.appeared) == 1 and len(result.disappeared) == 1


def test_match_rejects_different_grids():
    a = connected_components(volume_from(blob((10, 10, 10), [((0, 3), (0, 3), (0, 3))])))
    b = connected_components(volume_from(blob((12, 10, 10), [((0, 3), (0, 3), (0, 3))])))
    with pytest.raises(AlignmentError):
        match_components(a, b)


def flood_fill_sizes(mask):
    """Component sizes by breadth-first search over the 26 neighbours."""
    offsets = [d for d in itertools.product((-1, 0, 1), repeat=3) if d != (0, 0, 0)]
    seen = np.zeros(mask.shape, dtype=bool)
    sizes = []
    for start in zip(*np.nonzero(mask)):
        if seen[start]:
            continue
        seen[start] = True
        queue, size = deque([start]), 0
        while queue:
            x, y, z = queue.popleft()
            size += 1
            for dx, dy, dz in offsets:
                n = (x + dx, y + dy, z + dz)
                if all(0 <= c < s for c, s in zip(n, mask.shape)) and mask[n] and not seen[n]:
                    seen[n] = True
                    queue.append(n)
        sizes.append(size)
    return sorted(sizes, reverse=True)


def test_components_match_flood_fill_on_random_volume():
    rng = np.random.default_rng(7)
    arr = (rng.random((16, 16, 16)) < 0.1).astype(np.uint16)
    comps = connected_components(volume_from(arr))
    expected = flood_fill_sizes(arr != 0)
    assert len(comps) == len(expected)
    assert [c.voxel_count for c in comps] == expected


def test_component_volumes_sum_to_foreground():
    rng = np.random.default_rng(11)
    labels = rng.integers(1, 5, size=(16, 12, 10))
    arr = np.where(rng.random((16, 12, 10)) < 0.15, labels, 0).astype(np.uint16)
    volume = volume_from(arr, spacing=(0.5, 1.0, 2.0))
    comps = connected_components(volume)
    foreground = int(np.count_nonzero(arr))
    assert sum(c.voxel_count for c in comps) == foreground
    assert sum(c.volume_mm3 for c in comps) == pytest.approx(foreground * volume.voxel_volume_mm3)


def test_curation_layer_does_not_import_analysis():
    for module in (curation.ingest, curation.resample, curation.track, curation.volume_io):
        source = inspect.getsource(module)
        assert "from analysis" not in source and "import analysis" not in source, module.__name__
    assert featspace.shape_features is shape_features


def test_shape_features_of_a_cube():
    comps = connected_components(volume_from(blob((6, 6, 6), [((1, 3), (1, 3), (1, 3))])))
    features, observed = shape_features(comps[0])
    assert observed
    assert features["shape_volume_mm3"] == 8.0
    assert features["shape_surface_area_mm2"] == 24.0
    assert features["shape_max_axis_extent_mm"] == 2.0
    expected = math.pi ** (1 / 3) * 48 ** (2 / 3) / 24.0
    assert features["shape_sphericity"] == pytest.approx(expected)

    empty, observed = shape_features(None)
    assert not observed and set(empty.values()) == {0.0}


def test_ghost_reattachment_and_new_lesions():
    dims = (30, 30, 30)
    base = blob(dims, [((2, 6), (2, 6), (2, 6))])
    gone = np.zeros(dims, dtype=np.uint16)
    back = blob(dims, [((3, 6), (3, 6), (3, 6)), ((20, 24), (20, 24), (20, 24))])
    series = [(0, volume_from(base)), (60, volume_from(gone)), (130, volume_from(back))]
    result = build_trajectories(series, "P9", with_shape=False)

    assert len(result.trajectories) == 1
    traj = result.trajectories[0]
    assert traj.key == "P9/L001"
    assert traj.volumes.tolist() == [64.0, 0.0, 27.0]
    assert len(result.new_lesions) == 1
    assert result.new_lesions[0].day == 130
    assert any("reappears" in e for e in result.events)


def test_merge_keeps_one_trajectory_and_logs_event():
    dims = (30, 30, 30)
    two = blob(dims, [((2, 6), (2, 6), (2, 6)), ((8, 11), (2, 6), (2, 6))])
    merged = blob(dims, [((2, 11), (2, 6), (2, 6))])
    result = build_trajectories([(0, volume_from(two)), (60, volume_from(merged))], "P1",
                                with_shape=False)
    volumes = sorted(t.volumes[1] for t in result.trajectories)
    assert volumes == [0.0, 9 * 4 * 4]
    assert any("overlap one component" in e for e in result.events)


def test_series_must_start_at_day_zero():
    vol = volume_from(blob((8, 8, 8), [((1, 3), (1, 3), (1, 3))]))
    with pytest.raises(InvalidTrajectoryError):
        build_trajectories([(10, vol), (60, vol)])
    other = volume_from(blob((9, 8, 8), [((1, 3), (1, 3), (1, 3))]))
    with pytest.raises(AlignmentError):
        build_trajectories([(0, vol), (60, other)])


def test_label_volume_file_round_trip(tmp_path):
    arr = blob((7, 5, 3), [((1, 4), (0, 2), (1, 3))])
    arr[6, 4, 2] = 513
    vol = LabelVolume.from_array(arr, (0.5, 0.8, 2.0), (-10.0, 4.0, 1.5))
    write_label_volume(vol, tmp_path / "v.raw", tmp_path / "v.json")
    back = read_label_volume(tmp_path / "v.raw", tmp_path / "v.json")
    assert back.grid == vol.grid
    assert np.array_equal(back.array(), arr)


def sphere_lesions():
    return [
        SphereLesion((12.0, 12.0, 12.0), (5, 5, 5, 5, 5, 5, 5)),
        SphereLesion((34.0, 12.0, 12.0), (5, 4, 0, 0, 0, 0, 0)),
        SphereLesion((12.0, 34.0, 34.0), (3, 4, 5, 6, 6, 6, 6)),
    ]


def brute_force_categories(volumes):
    out = []
    for k in range(1, len(volumes)):
        if volumes[k] == 0:
            out.append(ResponseCategory.CR)
        elif volumes[k] > 1.728 * min(volumes[:k]):
            out.append(ResponseCategory.PD)
        elif volumes[k] < 0.343 * volumes[0]:
            out.append(ResponseCategory.PR)
        else:
            out.append(ResponseCategory.SD)
    return out


def test_sphere_series_through_track_resample_classify():
    lesions = sphere_lesions()
    result = build_trajectories(sphere_mask_series(lesions), "S1")
    assert len(result.trajectories) == 3 and result.new_lesions == []

    by_center = {}
    for traj in result.trajectories:
        x = traj.records[0].features["shape_centroid_x_mm"]
        y = traj.records[0].features["shape_centroid_y_mm"]
        by_center[(round(x), round(y))] = traj

    for lesion in lesions:
        traj = by_center[(round(lesion.center_mm[0]), round(lesion.center_mm[1]))]
        expected = [voxel_sphere_volume(r, center_mm=lesion.center_mm) for r in lesion.radii_mm]
        assert traj.volumes.tolist() == expected
        grid = resample(traj, "nn")
        categories = [c for _, c in classify_trajectory(grid)]
        assert categories == brute_force_categories(expected)

    vanishing = by_center[(34, 12)]
    categories = [c for _, c in classify_trajectory(resample(vanishing))]
    assert categories[1:] == [ResponseCategory.CR] * 5
    assert vanishing.records[2].features["shape_volume_mm3"] == 0.0


def test_track_manifest(tmp_path):
    rows = []
    for day, vol in sphere_mask_series(sphere_lesions()[:2], dims=(48, 24, 24)):
        name = f"s_{day:03d}"
        write_label_volume(vol, tmp_path / f"{name}.raw", tmp_path / f"{name}.json")
        rows.append(("S2", day, f"{name}.raw", f"{name}.json"))
    write_series_manifest(tmp_path / "manifest.csv", rows[::-1])

    assert [d for d, _, _ in read_series_manifest(tmp_path / "manifest.csv")["S2"]] == \
        [0, 60, 120, 180, 240, 300, 360]
    result = track_manifest(tmp_path / "manifest.csv", threads=2)
    assert sorted(t.key for t in result.trajectories) == ["S2/L001", "S2/L002"]


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
