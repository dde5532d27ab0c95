#!/usr/bin/env python3
"""
Tests for the synthetic cohort generator.
"""

import sys

import numpy as np
import pytest

from curation.ingest import apply_cohort_criteria, parse_clinical_table, parse_trajectory_table
from curation.resample import resample
from synthgen.generator import (
    ARCHETYPES,
    SynthConfig,
    archetype_weights,
    generate,
    label_targets,
    read_labels_table,
    scan_schedule,
    write_cohort,
    write_labels_table,
)
from trajcore.errors import ConfigError, ParseError
from trajcore.flows import compute_flows
from trajcore.response import classify_trajectory
from trajcore.types import ResponseCategory

NOISE_FREE = dict(noise_sigma=0.0, jitter=False)


def only(archetype, **kwargs):
    weights = [0.0] * len(ARCHETYPES)
    weights[archetype] = 1.0
    return SynthConfig(weights=tuple(weights), **{**NOISE_FREE, **kwargs})


def test_shapes_start_at_one():
    for spec in ARCHETYPES:
        assert spec.shape(0.0) == pytest.approx(1.0)
        assert np.all(spec.shape(np.linspace(0, 1.3, 50)) >= 0.0)


def test_same_seed_same_cohort():
    a = generate(n_lesions=40, seed=7)
    b = generate(n_lesions=40, seed=7, threads=3)
    assert a.trajectories == b.trajectories and a.archetypes == b.archetypes
    c = generate(n_lesions=40, seed=8)
    assert c.trajectories != a.trajectories
    assert len(a) == 40


def test_noise_free_resolution_ends_in_complete_response():
    cohort = generate(n_lesions=30, seed=1, cfg=only(0))
    targets = label_targets(cohort)
    assert set(cohort.archetypes) == {0}
    assert targets.categories == [ResponseCategory.CR] * 30
    assert targets.cr.tolist() == [1] * 30


def test_noise_free_rapid_growth_progresses_at_every_point():
    cohort = generate(n_lesions=20, seed=2, cfg=only(3))
    for traj in cohort.trajectories:
        categories = [c for _, c in classify_trajectory(resample(traj))]
        assert categories == [ResponseCategory.PD] * 6
    assert label_targets(cohort).resp.tolist() == [0] * 20


def test_noise_free_mix_cr_prevalence_matches_resolving_share():
    cohort = generate(n_lesions=1000, seed=11, cfg=SynthConfig(**NOISE_FREE))
    targets = label_targets(cohort)
    resolving = np.mean(np.array(cohort.archetypes) == 0)
    assert abs(targets.cr.mean() - resolving) <= 0.05


def test_most_eventual_complete_responses_resolve_by_first_follow_up():
    cohort = generate(seed=42)
    sequences = [[c for _, c in classify_trajectory(resample(t))] for t in cohort.trajectories]
    eventual = [seq for seq in sequences if seq[-1] is ResponseCategory.CR]
    early = sum(seq[0] is ResponseCategory.CR for seq in eventual)
    assert eventual and early > len(eventual) / 2
    flows = compute_flows(sequences)
    assert all(int(f.counts.sum()) == len(sequences) for f in flows)


def test_empty_cohort_gives_empty_labels():
    targets = label_targets([])
    assert targets.keys == [] and targets.cr.shape == (0,) and targets.resp.shape == (0,)


def test_scan_schedule_bounds():
    rng = np.random.default_rng(0)
    cfg = SynthConfig()
    for _ in range(200):
        days = scan_schedule(rng, cfg)
        steps = np.diff(days)
        assert days[0] == 0 and days[-1] >= 360 and days[-2] < 360
        assert steps.min() >= 30 and steps.max() <= 119


def test_generated_cohort_passes_inclusion_criteria():
    cohort = generate(n_lesions=200, seed=42)
    kept, flags = apply_cohort_criteria(cohort.trajectories)
    assert len(kept) >= 190, [f.kind for f in flags]


def test_covariates_shift_archetype_weights():
    lung = {"primary": "lung", "age": 63.0, "lesion_count": 5.0}
    older = dict(lung, age=80.0)
    assert archetype_weights(older)[0] < archetype_weights(lung)[0]
    flat = archetype_weights(older, SynthConfig(covariate_effect=False))
    assert flat.tolist() == pytest.approx([a.weight for a in ARCHETYPES])


def test_labels_table_round_trip():
    cohort = generate(n_lesions=25, seed=4)
    assert read_labels_table(write_labels_table(cohort)) == cohort.labels
    with pytest.raises(ParseError):
        read_labels_table(b"patient_id,lesion_id,archetype\nP001,L01,two\n")
    with pytest.raises(ParseError):
        read_labels_table(b"lesion_id,archetype\nL01,2\n")


def test_write_cohort_files(tmp_path):
    cohort = generate(n_lesions=12, seed=5)
    paths = write_cohort(cohort, tmp_path / "synth")
    trajs = parse_trajectory_table(paths["trajectories"].read_bytes())
    assert [t.key for t in trajs] == sorted(t.key for t in cohort.trajectories)
    clinical = parse_clinical_table(paths["clinical"].read_bytes())
    first = cohort.trajectories[0]
    assert clinical[(first.patient_id, first.lesion_id)]["primary"] == first.clinical["primary"]
    assert read_labels_table(paths["labels"].read_bytes()) == cohort.labels


def test_config_errors():
    with pytest.raises(ConfigError):
        SynthConfig(n_lesions=5)
    with pytest.raises(ConfigError):
        SynthConfig(weights=(1.0, 0.0))
    with pytest.raises(ConfigError):
        SynthConfig(min_interval_days=0)
    with pytest.raises(ConfigError):
        generate(n_lesions=3)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
