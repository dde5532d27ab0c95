#!/usr/bin/env python3
"""
Tests for noisy-point imputation, clinical encoding and feature assembly.
"""

import sys

import numpy as np
import pytest

from analysis.featspace import (
    ClinicalEncoder,
    ColumnMeta,
    FeatureConfig,
    FeatureMatrix,
    assemble,
    encode_clinical,
    impute_noisy_points,
    impute_series,
    standardize_apply,
    standardize_fit,
)
from curation.resample import normalize
from trajcore.errors import InsufficientDataError, ShapeError
from trajcore.types import ResampledTrajectory


def make_grid(volumes, lesion_id="L1", clinical=None, features=None):
    volumes = tuple(float(v) for v in volumes)
    return ResampledTrajectory("P1", lesion_id, volumes, tuple(range(7)), normalize(volumes),
                               features=tuple(features) if features else (),
                               clinical=clinical or {})


def test_impute_series_isolated_zero():
    values, mask = impute_series([0, 60, 120, 180], [10.0, 0.0, 4.0, 0.0])
    assert values.tolist() == [10.0, 7.0, 4.0, 0.0]
    assert mask.tolist() == [False, True, False, False]


def test_impute_series_weights_by_time():
    values, _ = impute_series([0, 30, 120], [10.0, 0.0, 1.0])
    assert values[1] == pytest.approx(0.75 * 10.0 + 0.25 * 1.0)


def test_impute_leaves_runs_of_zeros():
    values, mask = impute_series([0, 60, 120, 180], [10.0, 0.0, 0.0, 5.0])
    assert values.tolist() == [10.0, 0.0, 0.0, 5.0] and not mask.any()
    with pytest.raises(ShapeError):
        impute_series([0, 60], [1.0])


def test_impute_noisy_points_on_grid():
    features = [{"f": float(k)} for k in range(7)]
    res = make_grid([100, 80, 0, 60, 50, 40, 30], features=features)
    out = impute_noisy_points(res)
    assert out.volumes_mm3[2] == pytest.approx(70.0)
    assert out.normalized[2] == pytest.approx(0.7)
    assert out.features[2]["f"] == pytest.approx(2.0)
    assert out.observed[2] is False and out.observed[1] is True
    clean = make_grid([100, 80, 70, 60, 50, 40, 30])
    assert impute_noisy_points(clean) is clean


def test_clinical_encoder_orders_and_one_hot():
    records = [
        {"sex": "F", "age": 61.0, "primary": "lung"},
        {"sex": "M", "age": 50.0, "primary": "breast"},
        {"sex": "F", "primary": "melanoma"},
    ]
    names, matrix = encode_clinical(records)
    assert names == ["age", "primary=breast", "primary=lung", "primary=melanoma", "sex=F", "sex=M"]
    assert matrix.tolist() == [
        [61.0, 0.0, 1.0, 0.0, 1.0, 0.0],
        [50.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 0.0, 1.0, 1.0, 0.0],
    ]


def test_encoder_ignores_unseen_categories_and_requires_fit():
    encoder = ClinicalEncoder()
    with pytest.raises(InsufficientDataError):
        encoder.transform_one({"sex": "F"})
    encoder.fit([{"sex": "F"}, {"sex": "M"}])
    assert encoder.transform_one({"sex": "X"}) == [0.0, 0.0]


def test_assemble_column_layout():
    trajs = [
        make_grid([100, 80, 60, 40, 20, 10, 0], "L1", {"age": 60.0, "sex": "F"}),
        make_grid([50, 60, 70, 80, 90, 100, 110], "L2", {"age": 70.0, "sex": "M"}),
    ]
    matrix = assemble(trajs, horizon=2)
    assert matrix.names == ["volume@t0", "relative@t0", "volume@t1", "relative@t1",
                            "volume@t2", "relative@t2", "age", "sex=F", "sex=M"]
    assert matrix.rows == ["P1/L1", "P1/L2"]
    assert matrix.values[1].tolist() == pytest.approx([50, 1.0, 60, 1.2, 70, 1.4, 70.0, 0.0, 1.0])
    assert [c.block for c in matrix.columns][-3:] == ["clinical"] * 3


def test_assemble_volume_only_horizon_zero():
    matrix = assemble([make_grid([5, 4, 3, 2, 1, 1, 1])], horizon=0, include=("volume",))
    assert matrix.names == ["volume@t0"] and matrix.shape == (1, 1)


def test_assemble_shape_block_requires_features_everywhere():
    features = [{"shape_sphericity": 0.9, "mean_intensity": 1.0} for _ in range(7)]
    good = make_grid([5, 4, 3, 2, 1, 1, 1], "L1", features=features)
    matrix = assemble([good], horizon=1, include=("volume", "shape", "injected"))
    assert matrix.names == ["volume@t0", "shape_sphericity@t0", "mean_intensity@t0",
                            "volume@t1", "shape_sphericity@t1", "mean_intensity@t1"]

    bad = make_grid([5, 4, 3, 2, 1, 1, 1], "L2", features=[{"shape_sphericity": 0.9}] + [{}] * 6)
    with pytest.raises(InsufficientDataError) as info:
        assemble([good, bad], horizon=1, include=("volume", "shape"))
    assert "P1/L2" in info.value.context
    with pytest.raises(InsufficientDataError):
        assemble([make_grid([5, 4, 3, 2, 1, 1, 1])], horizon=1, include=("shape",))


def test_assemble_rejects_bad_horizon_and_blocks():
    trajs = [make_grid([5, 4, 3, 2, 1, 1, 1])]
    with pytest.raises(ShapeError):
        assemble(trajs, horizon=6)
    with pytest.raises(ShapeError):
        FeatureConfig(include=("volume", "texture"))


def test_standardize_uses_only_training_rows():
    trajs = [make_grid([v, v, v, v, v, v, v], f"L{i}", {"age": float(a)})
             for i, (v, a) in enumerate([(10, 50), (20, 50), (30, 50), (1000, 50)])]
    matrix = assemble(trajs, horizon=0, include=("volume", "relative", "clinical"))
    seen = []
    params = standardize_fit(matrix, rows=[0, 1, 2], hook=seen.extend)
    assert seen == ["P1/L0", "P1/L1", "P1/L2"]
    assert params.mean[0] == pytest.approx(20.0)
    assert params.std[0] == pytest.approx(np.std([10, 20, 30]))
    assert params.constant.tolist() == [False, True, True]

    z = standardize_apply(params, matrix)
    assert z.values[:3, 0].tolist() == pytest.approx([-1.2247448714, 0.0, 1.2247448714])
    assert z.values[:, 1:].tolist() == [[0.0, 0.0]] * 4
    assert params.to_dict()["age"] == {"mean": 50.0, "std": 0.0, "constant": True}

    with pytest.raises(InsufficientDataError):
        standardize_fit(matrix, rows=[])


def test_rounded_constant_column_standardizes_to_zero():
    columns = [ColumnMeta("dose", "clinical", "clinical"), ColumnMeta("volume@t0", "volume", 0)]
    values = np.column_stack([np.full(7, 0.1), np.arange(7.0)])
    matrix = FeatureMatrix([f"P1/L{i}" for i in range(7)], columns, values)
    params = standardize_fit(matrix)
    assert params.constant.tolist() == [True, False]
    assert params.std[0] == 0.0
    z = standardize_apply(params, matrix)
    assert z.values[:, 0].tolist() == [0.0] * 7
    assert z.values[:, 1].mean() == pytest.approx(0.0)


def test_feature_matrix_csv():
    matrix = assemble([make_grid([4, 2, 1, 1, 1, 1, 1])], horizon=1, include=("volume",))
    lines = matrix.to_csv().decode("utf-8").splitlines()
    assert lines == ["lesion,volume@t0,volume@t1", "P1/L1,4,2"]


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
