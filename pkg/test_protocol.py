#!/usr/bin/env python3
"""
Tests for the cross-validation protocol, method comparison and the report bundle.
"""

import io
import json
import sys

import numpy as np
import pandas as pd
import pytest

from curation.resample import resample_all
from evaluation.evalstat import make_fold_plan, make_targets
from evaluation.protocol import EvalConfig, Method, compare_methods, prepare_cohort, run_protocol
from evaluation.report import (
    build_report,
    format_cell,
    horizon_label,
    pvalue_csv,
    report_json,
    report_table_csv,
    summarize_cohort,
)
from models.boost import GbdtConfig
from models.tgat import TrainConfig
from synthgen.generator import generate
from trajcore.errors import EvaluationError

SMALL_EVAL = EvalConfig(n_folds=3, n_boot=50, n_perm=50, horizons=(0, 3, 5))
SMALL_GBDT = GbdtConfig(n_rounds=15)
SMALL_GAT = TrainConfig(lr0=1e-2, max_epochs=3, hidden=4)


@pytest.fixture(scope="module")
def cohort():
    synthetic = generate(n_lesions=90, seed=3)
    return prepare_cohort(resample_all(synthetic.trajectories))


def run(cohort, method, **kwargs):
    options = dict(eval_cfg=SMALL_EVAL, gbdt_cfg=SMALL_GBDT, train_cfg=SMALL_GAT, seed=1)
    options.update(kwargs)
    return run_protocol(cohort, "resp", method, **options)


def test_gbdt_outcomes_per_horizon(cohort):
    outcomes = run(cohort, "gbdt")
    assert [o.horizon for o in outcomes] == [0, 3, 5]
    for outcome in outcomes:
        assert outcome.keys == cohort.keys
        assert np.array_equal(outcome.labels, make_targets(cohort.categories, "resp"))
        assert not np.isnan(outcome.scores).any()
        assert outcome.ci95[0] <= outcome.auc <= outcome.ci95[1]
    # volumes at t5 nearly settle the t6 category
    assert outcomes[-1].auc > 0.75


def test_protocol_is_deterministic_across_threads(cohort):
    a = run(cohort, "gbdt")
    b = run(cohort, "gbdt", threads=3)
    assert [o.to_dict(include_scores=True) for o in a] == [o.to_dict(include_scores=True) for o in b]


def test_standardization_reads_only_training_rows(cohort):
    reads = []
    outcomes = run(cohort, Method.GBDT, hook=lambda keys: reads.append(set(keys)))
    assert len(reads) == SMALL_EVAL.n_folds * len(SMALL_EVAL.horizons)

    labels = outcomes[0].labels
    plan = make_fold_plan(cohort.keys, labels, cohort.groups, SMALL_EVAL.n_folds, 1)
    keys = np.array(cohort.keys)
    train_sets = [set(keys[train]) for train, _ in plan.splits(cohort.keys)]
    test_sets = [set(keys[test]) for _, test in plan.splits(cohort.keys)]
    for read in reads:
        fold = train_sets.index(read)
        assert read.isdisjoint(test_sets[fold])


def test_graph_methods_and_comparison(cohort):
    outcomes = {
        "gbdt": run(cohort, "gbdt"),
        "gat-general": run(cohort, "gat-general"),
        "gat-specific": run(cohort, "gat-specific"),
    }
    for rows in outcomes.values():
        assert [o.horizon for o in rows] == [0, 3, 5]
    table = compare_methods(outcomes, n_perm=30, seed=4)
    assert sorted(table) == [0, 3, 5]
    assert sorted(table[3]) == ["gat-general|gat-specific", "gat-general|gbdt", "gat-specific|gbdt"]
    for row in table.values():
        assert all(1.0 / 31.0 <= p <= 1.0 for p in row.values())


def test_compare_rejects_misaligned_outcomes(cohort):
    outcomes = run(cohort, "gbdt")
    shifted = run(cohort, "gbdt")
    for o in shifted:
        o.keys = list(reversed(o.keys))
    with pytest.raises(EvaluationError):
        compare_methods({"a": outcomes, "b": shifted}, n_perm=5)


def test_report_bundle(cohort):
    outcomes = {"gbdt": run(cohort, "gbdt")}
    pvalues = {0: {"gat-general|gbdt": 0.5}}
    report = build_report(summarize_cohort(cohort), outcomes, pvalues, {"flows": {"n": 1}})

    assert report["tasks"] == ["resp"]
    assert report["cohort"]["n_lesions"] == 90
    assert sum(report["cohort"]["t6_histogram"].values()) == 90
    assert report["evaluation"]["columns"] == ["t0->t6", "t0:t3->t6", "t0:t5->t6"]
    assert report["reference"]["resp"]["reproducible"] is False
    assert report["reference"]["resp"]["rows"]["gbdt"]["t0:t5->t6"] == "0.97 [0.96-0.98]"
    assert report["flows"] == {"n": 1}
    assert report_json(report) == report_json(json.loads(report_json(report)))
    assert b"seconds" not in report_json(report)

    table = pd.read_csv(io.BytesIO(report_table_csv(report)))
    assert list(table.columns) == ["method", "t0->t6", "t0:t3->t6", "t0:t5->t6"]
    assert table.loc[0, "method"] == "gbdt"
    assert pvalue_csv(report).decode("utf-8").splitlines() == [
        "horizon,pair,p_value", "t0->t6,gat-general|gbdt,0.5"]


def test_labels_and_cells():
    assert horizon_label(0) == "t0->t6" and horizon_label(4) == "t0:t4->t6"
    assert format_cell(0.8765, 0.85, 0.9) == "0.88 [0.85-0.90]"


def test_eval_config_validation():
    with pytest.raises(EvaluationError):
        EvalConfig(n_folds=1)
    with pytest.raises(EvaluationError):
        EvalConfig(horizons=(6,))
    with pytest.raises(EvaluationError):
        EvalConfig(n_boot=0)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
