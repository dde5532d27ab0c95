"""
Synthetic lesion cohorts built from five growth archetypes.

Archetypes (relative volume over normalized time u = day / 360):
    0  resolution: decays to exactly 0 (CR), mostly before t1
    1  pseudoprogression: swells to ~1.8x around t1-t2, then shrinks below 0.343
    2  partial plateau: settles between 0.3 and 0.8 of baseline
    3  rapid growth: ~6x by t3
    4  accelerating growth: ~3x by t6

Magnitudes are calibrated by eye against the published mean curves; only their
categorical consequences matter downstream. Lesions are grouped into patients
that share a scan schedule and clinical covariates; the covariates shift the
archetype mix so that baseline information carries some signal.
"""

import io
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from curation.ingest import serialize_clinical_table, serialize_trajectory_table
from curation.resample import resample_all
from evaluation.evalstat import Task, make_targets
from runtime.workers import parallel_map, spawn_rngs
from trajcore.errors import ConfigError, ParseError
from trajcore.response import DEFAULT_CRITERIA, final_category
from trajcore.types import LesionTrajectory, ResponseCategory, ResponseCriteria, ScanRecord

logger = logging.getLogger(__name__)

N_ARCHETYPES = 5
LABEL_COLUMNS = ("patient_id", "lesion_id", "archetype")

_PSEUDO_KNOTS = (0.0, 0.25, 0.5, 0.75, 1.0)
_GROWTH_KNOTS = ((0.0, 1.0 / 6, 1.0 / 3, 0.5, 1.0), (1.0, 2.5, 4.5, 6.0, 6.5))
_ACCEL_KNOTS = (tuple(k / 6 for k in range(7)), (1.0, 1.05, 1.15, 1.35, 1.7, 2.3, 3.0))


def _resolution(u: np.ndarray, p: Mapping[str, float]) -> np.ndarray:
    r = p["resolve_day"] / 360.0
    return np.clip(1.0 - u / r, 0.0, 1.0) ** 1.5


def _pseudoprogression(u: np.ndarray, p: Mapping[str, float]) -> np.ndarray:
    return np.interp(u, _PSEUDO_KNOTS, (1.0, 1.8 * p["peak"], 1.0, 0.45, 0.2))


def _plateau(u: np.ndarray, p: Mapping[str, float]) -> np.ndarray:
    level = p["level"]
    return level + (1.0 - level) * np.exp(-6.0 * u)


def _rapid_growth(u: np.ndarray, p: Mapping[str, float]) -> np.ndarray:
    return 1.0 + p["gain"] * (np.interp(u, *_GROWTH_KNOTS) - 1.0)


def _accelerating(u: np.ndarray, p: Mapping[str, float]) -> np.ndarray:
    return 1.0 + p["gain"] * (np.interp(u, *_ACCEL_KNOTS) - 1.0)


def _draw_resolution(rng: np.random.Generator) -> Dict[str, float]:
    early = rng.random() < 0.65
    return {"resolve_day": float(rng.uniform(20, 55) if early else rng.uniform(60, 130))}


_SHAPES = {0: _resolution, 1: _pseudoprogression, 2: _plateau, 3: _rapid_growth, 4: _accelerating}
_NOMINAL = {0: {"resolve_day": 45.0}, 1: {"peak": 1.0}, 2: {"level": 0.5}, 3: {"gain": 1.0},
            4: {"gain": 1.0}}
_DRAWS = {
    0: _draw_resolution,
    1: lambda rng: {"peak": float(rng.uniform(0.8, 1.2))},
    2: lambda rng: {"level": float(rng.uniform(0.3, 0.8))},
    3: lambda rng: {"gain": float(rng.uniform(1.0, 1.2))},
    4: lambda rng: {"gain": float(rng.uniform(0.9, 1.1))},
}


@dataclass(frozen=True)
class ArchetypeSpec:
    """One growth archetype; shape(0) = 1 and shapes are never negative."""
    id: int
    name: str
    weight: float
    baseline_scale: float = 1.0

    def draw(self, rng: np.random.Generator, jitter: bool = True) -> Dict[str, float]:
        params = _DRAWS[self.id](rng)
        return params if jitter else dict(_NOMINAL[self.id])

    def shape(self, u, params: Optional[Mapping[str, float]] = None) -> np.ndarray:
        params = _NOMINAL[self.id] if params is None else params
        return np.maximum(_SHAPES[self.id](np.asarray(u, dtype=float), params), 0.0)


ARCHETYPES: Tuple[ArchetypeSpec, ...] = (
    ArchetypeSpec(0, "resolution", 0.40, baseline_scale=0.6),
    ArchetypeSpec(1, "pseudoprogression", 0.10),
    ArchetypeSpec(2, "plateau", 0.20),
    ArchetypeSpec(3, "rapid_growth", 0.15, baseline_scale=1.5),
    ArchetypeSpec(4, "accelerating", 0.15, baseline_scale=1.2),
)

PRIMARY_SITES = ("breast", "lung", "melanoma", "other")
_PRIMARY_PROBS = (0.25, 0.45, 0.15, 0.15)
_PRIMARY_FACTORS = {
    "breast": (1.4, 1.0, 1.1, 0.6, 0.7),
    "lung": (1.0, 1.0, 1.0, 1.0, 1.0),
    "melanoma": (0.6, 1.3, 0.8, 1.6, 1.4),
    "other": (0.9, 1.0, 1.0, 1.1, 1.1),
}
_FEMALE_PROB = {"breast": 0.98, "lung": 0.45, "melanoma": 0.4, "other": 0.5}


@dataclass(frozen=True)
class SynthConfig:
    n_lesions: int = 500
    seed: int = 42
    weights: Tuple[float, ...] = tuple(a.weight for a in ARCHETYPES)
    noise_sigma: float = 0.15
    jitter: bool = True
    covariate_effect: bool = True
    interval_mean_days: float = 60.0
    interval_sd_days: float = 20.0
    min_interval_days: int = 30
    max_interval_days: int = 119
    span_days: int = 360
    baseline_median_mm3: float = 60.0
    baseline_sigma: float = 1.0
    mean_lesions_per_patient: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.n_lesions < 10:
            raise ConfigError("n_lesions must be >= 10", f"n_lesions={self.n_lesions}")
        if len(self.weights) != N_ARCHETYPES or min(self.weights) < 0 or sum(self.weights) <= 0:
            raise ConfigError(f"weights must be {N_ARCHETYPES} non-negative values with a positive sum",
                              str(self.weights))
        if not 0 < self.min_interval_days <= self.max_interval_days:
            raise ConfigError("interval bounds must satisfy 0 < min <= max",
                              f"[{self.min_interval_days}, {self.max_interval_days}]")
        if self.interval_sd_days < 0 or self.interval_mean_days <= 0:
            raise ConfigError("interval mean must be > 0 and sd >= 0")
        if self.span_days < self.max_interval_days:
            raise ConfigError("span_days must be >= max_interval_days")
        if self.noise_sigma < 0 or self.baseline_sigma < 0 or self.baseline_median_mm3 <= 0:
            raise ConfigError("noise and baseline parameters must be non-negative")
        if self.mean_lesions_per_patient < 1:
            raise ConfigError("mean_lesions_per_patient must be >= 1")


@dataclass
class SyntheticCohort:
    trajectories: List[LesionTrajectory]
    archetypes: List[int]
    params: List[Dict[str, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def labels(self) -> Dict[str, int]:
        return {t.key: a for t, a in zip(self.trajectories, self.archetypes)}


def scan_schedule(rng: np.random.Generator, cfg: SynthConfig = SynthConfig()) -> List[int]:
    """Day 0, then clipped Normal(mean, sd) increments until span_days is reached."""
    days = [0]
    while days[-1] < cfg.span_days:
        step = rng.normal(cfg.interval_mean_days, cfg.interval_sd_days)
        step = int(np.clip(round(step), cfg.min_interval_days, cfg.max_interval_days))
        days.append(days[-1] + step)
    return days


def archetype_weights(clinical: Mapping[str, object], cfg: SynthConfig = SynthConfig()) -> np.ndarray:
    """Archetype probabilities for one patient, shifted by covariates when enabled."""
    weights = np.array(cfg.weights, dtype=float)
    if cfg.covariate_effect:
        weights = weights * np.array(_PRIMARY_FACTORS[str(clinical["primary"])])
        age = float(clinical["age"])
        count = float(clinical["lesion_count"])
        weights[0] *= np.exp(-0.015 * (age - 63.0))
        weights[3:] *= max(0.5, 1.0 + 0.05 * (count - 5.0))
    return weights / weights.sum()


def _patient_clinical(rng: np.random.Generator, n_lesions: int) -> Dict[str, object]:
    primary = PRIMARY_SITES[rng.choice(len(PRIMARY_SITES), p=_PRIMARY_PROBS)]
    sex = "F" if rng.random() < _FEMALE_PROB[primary] else "M"
    age = float(np.clip(round(rng.normal(63.0, 11.0)), 25, 90))
    return {"primary": primary, "sex": sex, "age": age, "lesion_count": float(n_lesions)}


def _lesion_counts(rng: np.random.Generator, cfg: SynthConfig) -> List[int]:
    counts, total = [], 0
    while total < cfg.n_lesions:
        n = min(1 + int(rng.poisson(cfg.mean_lesions_per_patient - 1.0)), 12, cfg.n_lesions - total)
        counts.append(n)
        total += n
    return counts


def _generate_patient(index: int, n_lesions: int, rng: np.random.Generator, cfg: SynthConfig):
    patient_id = f"P{index + 1:03d}"
    clinical = _patient_clinical(rng, n_lesions)
    days = scan_schedule(rng, cfg)
    u = np.array(days, dtype=float) / 360.0
    probs = archetype_weights(clinical, cfg)

    lesions = []
    for j in range(n_lesions):
        spec = ARCHETYPES[int(rng.choice(N_ARCHETYPES, p=probs))]
        params = spec.draw(rng, cfg.jitter)
        baseline = spec.baseline_scale * float(
            np.exp(rng.normal(np.log(cfg.baseline_median_mm3), cfg.baseline_sigma)))
        baseline = max(baseline, 0.5)
        noise = np.exp(rng.normal(0.0, cfg.noise_sigma, len(days)))
        noise[0] = 1.0
        volumes = baseline * spec.shape(u, params) * noise
        records = [ScanRecord(day, float(v)) for day, v in zip(days, volumes)]
        traj = LesionTrajectory(patient_id, f"L{j + 1:02d}", records, dict(clinical))
        lesions.append((traj, spec.id, params))
    return lesions


def generate(n_lesions: Optional[int] = None, seed: Optional[int] = None,
             cfg: SynthConfig = SynthConfig(), threads: int = 1) -> SyntheticCohort:
    """
    Generate a synthetic cohort.

    Args:
        n_lesions: Overrides cfg.n_lesions
        seed: Overrides cfg.seed
        cfg: Generator parameters
        threads: Worker cap; patients are generated independently

    Returns:
        SyntheticCohort with trajectories and their generating archetypes
    """
    overrides = {}
    if n_lesions is not None:
        overrides["n_lesions"] = n_lesions
    if seed is not None:
        overrides["seed"] = seed
    if overrides:
        cfg = replace(cfg, **overrides)

    structure = np.random.default_rng(cfg.seed)
    counts = _lesion_counts(structure, cfg)
    rngs = spawn_rngs(cfg.seed, len(counts))
    per_patient = parallel_map(lambda i: _generate_patient(i, counts[i], rngs[i], cfg),
                               range(len(counts)), threads)

    cohort = SyntheticCohort([], [], [])
    for lesions in per_patient:
        for traj, archetype, params in lesions:
            cohort.trajectories.append(traj)
            cohort.archetypes.append(archetype)
            cohort.params.append(params)
    logger.info("generated %d lesions in %d patients (seed %d)", len(cohort), len(counts), cfg.seed)
    return cohort


@dataclass
class SyntheticTargets:
    keys: List[str]
    categories: List[ResponseCategory]
    cr: np.ndarray
    resp: np.ndarray


def label_targets(cohort: Union[SyntheticCohort, Sequence[LesionTrajectory]], method="nn",
                  criteria: ResponseCriteria = DEFAULT_CRITERIA) -> SyntheticTargets:
    """Resample, classify t6 and derive both binary task labels."""
    trajectories = cohort.trajectories if isinstance(cohort, SyntheticCohort) else list(cohort)
    resampled = resample_all(trajectories, method)
    categories = [final_category(r, criteria) for r in resampled]
    return SyntheticTargets(
        keys=[r.key for r in resampled],
        categories=categories,
        cr=make_targets(categories, Task.CR_VS_NONCR),
        resp=make_targets(categories, Task.RESP_VS_NONRESP),
    )


def write_labels_table(cohort: SyntheticCohort) -> bytes:
    rows = [{"patient_id": t.patient_id, "lesion_id": t.lesion_id, "archetype": a}
            for t, a in zip(cohort.trajectories, cohort.archetypes)]
    frame = pd.DataFrame(rows, columns=list(LABEL_COLUMNS))
    return frame.to_csv(index=False, lineterminator="\n").encode("utf-8")


def read_labels_table(data: bytes) -> Dict[str, int]:
    """{lesion key: archetype} from a labels CSV."""
    try:
        frame = pd.read_csv(io.BytesIO(data), dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError("unreadable labels table", context=str(e))
    missing = [c for c in LABEL_COLUMNS if c not in frame.columns]
    if missing:
        raise ParseError("missing required column(s)", context=", ".join(missing))
    labels = {}
    for pos, row in enumerate(frame.to_dict("records")):
        try:
            labels[f"{row['patient_id']}/{row['lesion_id']}"] = int(row["archetype"])
        except ValueError:
            raise ParseError(f"archetype is not an integer: {row['archetype']!r}", row=pos + 2)
    return labels


def write_cohort(cohort: SyntheticCohort, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write trajectories.csv, clinical.csv and labels.csv into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "trajectories": out_dir / "trajectories.csv",
        "clinical": out_dir / "clinical.csv",
        "labels": out_dir / "labels.csv",
    }
    paths["trajectories"].write_bytes(serialize_trajectory_table(cohort.trajectories))
    paths["clinical"].write_bytes(serialize_clinical_table(cohort.trajectories))
    paths["labels"].write_bytes(write_labels_table(cohort))
    return paths
