#!/usr/bin/env python3
"""
Tests for grid resampling and the resampled-table interchange.
"""

import logging
import sys

import numpy as np
import pytest

from curation.resample import (
    ResampleConfig,
    normalize,
    read_resampled_table,
    resample,
    resample_all,
    resample_bspline,
    resample_linear,
    resample_nn,
    write_resampled_table,
)
from trajcore.errors import InvalidTrajectoryError, ParseError
from trajcore.types import GRID_DAYS, LesionTrajectory, ScanRecord


def make_traj(days, volumes, features=None):
    features = features or [{} for _ in days]
    return LesionTrajectory("P1", "L1", [ScanRecord(d, float(v), f)
                                         for d, v, f in zip(days, volumes, features)])


def test_nn_picks_nearest_and_earlier_on_ties():
    traj = make_traj([0, 30, 90, 170, 250, 330, 400], [10, 20, 30, 40, 50, 60, 70])
    res = resample_nn(traj)
    # day 60 is equidistant from 30 and 90
    assert res.source_index == (0, 1, 2, 3, 4, 5, 5)
    assert res.volumes_mm3 == (10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 60.0)
    assert res.normalized == (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 6.0)


def test_nn_copies_features_of_the_chosen_scan():
    traj = make_traj([0, 55, 370], [10, 5, 1], [{"f": 1.0}, {"f": 2.0}, {"f": 3.0}])
    res = resample_nn(traj)
    assert [f["f"] for f in res.features] == [1.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0]


def test_linear_interpolates_and_clamps():
    traj = make_traj([0, 120, 300], [100, 40, 10], [{"f": 0.0}, {"f": 12.0}, {"f": 30.0}])
    res = resample_linear(traj)
    assert res.volumes_mm3 == pytest.approx((100, 70, 40, 30, 20, 10, 10))
    assert res.source_index == (0, None, 1, None, None, 2, None)
    assert res.features[1]["f"] == pytest.approx(6.0)
    assert res.features[6]["f"] == pytest.approx(30.0)


def test_bspline_interpolates_on_grid_days():
    volumes = [100, 80, 75, 60, 20, 5, 0]
    res = resample_bspline(make_traj(list(GRID_DAYS), volumes))
    assert res.volumes_mm3 == pytest.approx(volumes, abs=1e-9)


def test_bspline_is_floored_at_zero():
    traj = make_traj([0, 45, 100, 170, 230, 290, 365], [100, 1, 0, 0, 0, 0, 0])
    res = resample_bspline(traj)
    assert min(res.volumes_mm3) >= 0.0


def test_bspline_falls_back_to_linear(caplog):
    traj = make_traj([0, 200, 370], [100, 50, 20])
    with caplog.at_level(logging.WARNING):
        res = resample_bspline(traj)
    assert res == resample_linear(traj)
    assert "B-spline needs 4" in caplog.text


def test_dispatch_and_unknown_method():
    traj = make_traj([0, 60, 120, 180, 240, 300, 360], [5, 4, 3, 2, 1, 1, 1])
    assert resample(traj, "linear") == resample_linear(traj)
    assert resample(traj) == resample_nn(traj)
    with pytest.raises(InvalidTrajectoryError):
        resample(traj, "cubic")
    with pytest.raises(InvalidTrajectoryError):
        ResampleConfig(method="cubic")


def test_normalize():
    assert normalize([4.0, 2.0, 0.0]) == (1.0, 0.5, 0.0)
    with pytest.raises(InvalidTrajectoryError):
        normalize([0.0, 1.0])


def test_resampled_table_round_trip():
    trajs = [make_traj([0, 70, 130, 200, 250, 310, 380], [10, 9.5, 7.25, 3, 1e-3, 0, 0])]
    resampled = resample_all(trajs)
    data = write_resampled_table(resampled)
    back = read_resampled_table(data, {"P1/L1": {"age": 50.0}})
    assert back[0].volumes_mm3 == resampled[0].volumes_mm3
    assert back[0].normalized == resampled[0].normalized
    assert back[0].clinical == {"age": 50.0}
    assert write_resampled_table(resampled, normalized=True).splitlines()[1].startswith(b"P1,L1,1.0,")


def test_resampled_table_bad_value():
    bad = b"patient_id,lesion_id,t0,t1,t2,t3,t4,t5,t6\nP1,L1,1,2,x,4,5,6,7\n"
    with pytest.raises(ParseError) as info:
        read_resampled_table(bad)
    assert info.value.row == 2


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
