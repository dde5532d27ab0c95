#!/usr/bin/env python3
"""
Tests for domain types, volumetric response classification and flows.
"""

import sys

import numpy as np
import pytest

from curation.resample import normalize
from trajcore.errors import InsufficientDataError, InvalidTrajectoryError, ShapeError
from trajcore.flows import category_histogram, compute_flows, flow_links
from trajcore.response import classify_response, classify_trajectory, final_category
from trajcore.types import (
    GRID_DAYS,
    LesionTrajectory,
    ResampledTrajectory,
    ResponseCategory,
    ResponseCriteria,
    ScanRecord,
)

CR, PR, SD, PD = (ResponseCategory.CR, ResponseCategory.PR,
                  ResponseCategory.SD, ResponseCategory.PD)


def make_traj(volumes, days=None, patient_id="P1", lesion_id="L1"):
    days = days if days is not None else [60 * k for k in range(len(volumes))]
    return LesionTrajectory(patient_id, lesion_id,
                            [ScanRecord(d, float(v)) for d, v in zip(days, volumes)])


def make_grid(volumes, patient_id="P1", lesion_id="L1"):
    return ResampledTrajectory(patient_id, lesion_id, tuple(float(v) for v in volumes),
                               tuple(range(len(GRID_DAYS))), normalize(volumes))


def brute_force_category(volumes, k, pr=0.343, pd=1.728):
    """Independent rule evaluator: precedence CR, PD, PR, SD."""
    current = volumes[k]
    if current == 0:
        return CR
    lowest = volumes[0]
    for v in volumes[1:k]:
        if v < lowest:
            lowest = v
    if current > pd * lowest:
        return PD
    if current < pr * volumes[0]:
        return PR
    return SD


def test_basic_categories():
    assert classify_response(100.0, [100.0], 0.0) == CR
    assert classify_response(100.0, [100.0], 20.0) == PR
    assert classify_response(100.0, [100.0], 80.0) == SD
    assert classify_response(100.0, [100.0], 200.0) == PD


def test_threshold_equality_is_stable_disease():
    assert classify_response(100.0, [100.0], 34.3) == SD
    assert classify_response(100.0, [100.0], 172.8) == SD
    assert classify_response(1e-3, [1e-3], 1.728e-3) == SD


def test_progression_is_relative_to_prior_minimum():
    # 40 is below baseline but more than 1.728x the nadir of 20
    assert classify_response(100.0, [100.0, 20.0], 40.0) == PD


def test_regrowth_after_complete_response_is_progression():
    assert classify_response(100.0, [100.0, 0.0], 1.0) == PD


def test_classify_trajectory_returns_day_category_pairs():
    traj = make_traj([100, 150, 20, 0], days=[0, 50, 110, 200])
    assert classify_trajectory(traj) == [(50, SD), (110, PR), (200, CR)]


def test_classify_trajectory_needs_two_points():
    with pytest.raises(InsufficientDataError):
        classify_trajectory(make_traj([100]))


def test_final_category_on_grid():
    grid = make_grid([10, 8, 6, 4, 3, 2, 0])
    assert final_category(grid) == CR
    assert final_category(make_grid([10, 12, 14, 16, 18, 20, 30])) == PD


def test_classifier_matches_brute_force_oracle():
    rng = np.random.default_rng(1234)
    for _ in range(1000):
        n = int(rng.integers(2, 8))
        baseline = float(rng.uniform(1.0, 100.0))
        volumes = [baseline] + list(rng.uniform(0.0, 3.0 * baseline, n - 1))
        if rng.random() < 0.2:
            volumes[int(rng.integers(1, n))] = 0.0
        traj = make_traj(volumes)
        got = [c for _, c in classify_trajectory(traj)]
        expected = [brute_force_category(volumes, k) for k in range(1, n)]
        assert got == expected


def test_classification_is_scale_invariant():
    rng = np.random.default_rng(99)
    for _ in range(500):
        n = int(rng.integers(2, 8))
        baseline = float(rng.uniform(1.0, 100.0))
        volumes = [baseline] + list(rng.uniform(0.0, 3.0 * baseline, n - 1))
        reference = [c for _, c in classify_trajectory(make_traj(volumes))]
        for scale in (2.0 ** -10, 0.37, 3.0, 1e4):
            scaled = [c for _, c in classify_trajectory(make_traj([scale * v for v in volumes]))]
            assert scaled == reference, (volumes, scale)

    for scale in (1e-3, 7.0, 1e5):
        assert classify_response(100.0 * scale, [100.0 * scale], 34.3 * scale) == SD
        assert classify_response(100.0 * scale, [100.0 * scale, 50.0 * scale], 86.4 * scale) == SD


def test_complete_response_absorbs_trailing_zeros():
    rng = np.random.default_rng(5)
    for _ in range(200):
        n = int(rng.integers(2, 8))
        k = int(rng.integers(1, n))
        volumes = ([float(rng.uniform(1.0, 100.0))] + list(rng.uniform(0.0, 300.0, k - 1))
                   + [0.0] * (n - k))
        categories = [c for _, c in classify_trajectory(make_traj(volumes))]
        assert categories[k - 1:] == [CR] * (n - k)


def test_custom_criteria():
    loose = ResponseCriteria(pr_fraction_of_baseline=0.5, pd_fraction_of_nadir=1.5, cr_volume_mm3=1.0)
    assert classify_response(100.0, [100.0], 0.5, loose) == CR
    assert classify_response(100.0, [100.0], 45.0, loose) == PR
    assert classify_response(100.0, [100.0], 160.0, loose) == PD


def test_invalid_criteria_rejected():
    with pytest.raises(InvalidTrajectoryError):
        ResponseCriteria(pr_fraction_of_baseline=1.2)
    with pytest.raises(InvalidTrajectoryError):
        ResponseCriteria(pd_fraction_of_nadir=0.9)


def test_trajectory_invariants():
    with pytest.raises(InvalidTrajectoryError):
        make_traj([100, 50], days=[10, 60])
    with pytest.raises(InvalidTrajectoryError):
        make_traj([0, 50])
    with pytest.raises(InvalidTrajectoryError):
        make_traj([100, 50, 40], days=[0, 60, 60])
    with pytest.raises(InvalidTrajectoryError):
        ScanRecord(30, -1.0)


def test_flows_conserve_lesions():
    rng = np.random.default_rng(7)
    categories = list(ResponseCategory)
    classified = [[categories[i] for i in rng.integers(0, 4, 6)] for _ in range(50)]
    flows = compute_flows(classified)
    assert [f.interval_index for f in flows] == [1, 2, 3, 4, 5]
    for k, flow in enumerate(flows):
        assert flow.counts.sum() == 50
        source = category_histogram([seq[k] for seq in classified])
        target = category_histogram([seq[k + 1] for seq in classified])
        assert flow.counts.sum(axis=1).tolist() == list(source.values())
        assert flow.counts.sum(axis=0).tolist() == list(target.values())


def test_flow_links_skip_zero_counts():
    flows = compute_flows([[SD, SD, PR, PR, CR, CR], [SD, PD, PD, PD, PD, PD]])
    links = flow_links(flows)
    assert {"interval": 1, "source": "t1:SD", "target": "t2:PD", "count": 1} in links
    assert sum(link["count"] for link in links) == 2 * 5
    assert flows[0].as_dict()["categories"] == ["CR", "PR", "SD", "PD"]


def test_flows_reject_ragged_sequences():
    with pytest.raises(ShapeError):
        compute_flows([[SD] * 6, [SD] * 5])


def test_histogram_lists_every_category():
    assert category_histogram([CR, CR, PD]) == {"CR": 2, "PR": 0, "SD": 0, "PD": 1}
    assert category_histogram([]) == {"CR": 0, "PR": 0, "SD": 0, "PD": 0}


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
