"""
Trajectory/clinical table parsing and cohort inclusion criteria.

Trajectory CSV (UTF-8, header required):
    patient_id,lesion_id,day,volume_mm3[,feat_*...]
Clinical CSV (long format):
    patient_id[,lesion_id],name,value
Flag report CSV:
    patient_id,lesion_id,kind,detail

Row numbers in parse errors count the header as row 1.
"""

import io
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, BinaryIO, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from trajcore.errors import InvalidTrajectoryError, ParseError
from trajcore.types import LesionTrajectory, ScanRecord

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("patient_id", "lesion_id", "day", "volume_mm3")
FLAG_COLUMNS = ("patient_id", "lesion_id", "kind", "detail")

Source = Union[bytes, bytearray, BinaryIO]
ClinicalKey = Tuple[str, Optional[str]]


def _read_bytes(source: Source) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    return source.read()


def _read_frame(source: Source, what: str) -> pd.DataFrame:
    try:
        return pd.read_csv(io.BytesIO(_read_bytes(source)), dtype=str,
                           keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ParseError(f"unreadable {what} table", context=str(e))


def _parse_day(text: str, row: int) -> int:
    try:
        return int(text)
    except ValueError:
        pass
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"day is not a number: {text!r}", row=row)
    if not value.is_integer():
        raise ParseError(f"day must be an integer: {text!r}", row=row)
    return int(value)


def _parse_real(text: str, column: str, row: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{column} is not a number: {text!r}", row=row)
    if not math.isfinite(value):
        raise ParseError(f"{column} must be finite: {text!r}", row=row)
    return value


def parse_trajectory_table(source: Source) -> List[LesionTrajectory]:
    """
    Parse a trajectory CSV into validated trajectories.

    Args:
        source: CSV bytes or a binary stream

    Returns:
        Trajectories sorted by (patient_id, lesion_id), records sorted by day
    """
    frame = _read_frame(source, "trajectory")
    missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
    if missing:
        raise ParseError("missing required column(s)", context=", ".join(missing))
    feature_columns = [c for c in frame.columns if c not in REQUIRED_COLUMNS]

    groups: Dict[Tuple[str, str], Dict[int, Tuple[int, ScanRecord]]] = {}
    for pos, row in enumerate(frame.to_dict("records")):
        line = pos + 2
        patient_id = row["patient_id"].strip()
        lesion_id = row["lesion_id"].strip()
        if not patient_id or not lesion_id:
            raise ParseError("patient_id and lesion_id must be non-empty", row=line)
        day = _parse_day(row["day"].strip(), line)
        if day < 0:
            raise ParseError(f"day must be >= 0, got {day}", row=line)
        volume = _parse_real(row["volume_mm3"].strip(), "volume_mm3", line)
        if volume < 0:
            raise ParseError(f"negative volume {volume}", row=line)

        features = {}
        for column in feature_columns:
            text = row[column].strip()
            if text:
                features[column] = _parse_real(text, column, line)

        records = groups.setdefault((patient_id, lesion_id), {})
        if day in records:
            raise ParseError(f"duplicate day {day} for lesion {patient_id}/{lesion_id}", row=line)
        records[day] = (line, ScanRecord(day=day, volume_mm3=volume, features=features))

    trajectories = []
    for (patient_id, lesion_id), by_day in sorted(groups.items()):
        if 0 not in by_day:
            first_line = min(line for line, _ in by_day.values())
            raise ParseError(f"missing day-0 record for lesion {patient_id}/{lesion_id}",
                             row=first_line)
        records = [by_day[d][1] for d in sorted(by_day)]
        try:
            trajectories.append(LesionTrajectory(patient_id, lesion_id, tuple(records)))
        except InvalidTrajectoryError as e:
            raise ParseError(e.message, row=by_day[0][0])

    logger.debug("parsed %d trajectories from %d rows", len(trajectories), len(frame))
    return trajectories


def serialize_trajectory_table(trajectories: Sequence[LesionTrajectory]) -> bytes:
    """Write trajectories in the trajectory CSV format (inverse of the parser)."""
    feature_names = sorted({name for t in trajectories for r in t.records for name in r.features})
    rows = []
    for traj in trajectories:
        for record in traj.records:
            row = {
                "patient_id": traj.patient_id,
                "lesion_id": traj.lesion_id,
                "day": int(record.day),
                "volume_mm3": repr(float(record.volume_mm3)),
            }
            for name in feature_names:
                value = record.features.get(name)
                row[name] = "" if value is None else repr(float(value))
            rows.append(row)
    frame = pd.DataFrame(rows, columns=list(REQUIRED_COLUMNS) + feature_names)
    return frame.to_csv(index=False, lineterminator="\n").encode("utf-8")


def _coerce_clinical(text: str) -> Any:
    try:
        value = float(text)
    except ValueError:
        return text
    return value if math.isfinite(value) else text


def parse_clinical_table(source: Source) -> Dict[ClinicalKey, Dict[str, Any]]:
    """
    Parse the long-format clinical CSV.

    Numeric-looking values become floats, anything else stays a string.
    Rows without lesion_id (or with it empty) are patient-level.

    Returns:
        {(patient_id, lesion_id or None): {name: value}}
    """
    frame = _read_frame(source, "clinical")
    missing = [c for c in ("patient_id", "name", "value") if c not in frame.columns]
    if missing:
        raise ParseError("missing required column(s)", context=", ".join(missing))
    has_lesion = "lesion_id" in frame.columns

    table: Dict[ClinicalKey, Dict[str, Any]] = {}
    for pos, row in enumerate(frame.to_dict("records")):
        line = pos + 2
        patient_id = row["patient_id"].strip()
        lesion_id = row["lesion_id"].strip() if has_lesion else ""
        name = row["name"].strip()
        text = row["value"].strip()
        if not patient_id or not name:
            raise ParseError("patient_id and name must be non-empty", row=line)
        if not text:
            continue
        key = (patient_id, lesion_id or None)
        value = _coerce_clinical(text)
        entries = table.setdefault(key, {})
        if name in entries and entries[name] != value:
            raise ParseError("conflicting duplicate clinical entry",
                             context=f"{patient_id}/{lesion_id or '*'}:{name} (row {line})")
        entries[name] = value
    return table


def attach_clinical(trajectories: Sequence[LesionTrajectory],
                    clinical: Dict[ClinicalKey, Dict[str, Any]]) -> List[LesionTrajectory]:
    """Merge patient-level then lesion-level clinical entries into each trajectory."""
    merged = []
    for traj in trajectories:
        values = dict(traj.clinical)
        values.update(clinical.get((traj.patient_id, None), {}))
        values.update(clinical.get((traj.patient_id, traj.lesion_id), {}))
        merged.append(replace(traj, clinical=values))
    return merged


def serialize_clinical_table(trajectories: Sequence[LesionTrajectory]) -> bytes:
    """Write the clinical values attached to trajectories as lesion-level long rows."""
    rows = []
    for traj in trajectories:
        for name in sorted(traj.clinical):
            value = traj.clinical[name]
            text = repr(float(value)) if isinstance(value, (int, float)) else str(value)
            rows.append({"patient_id": traj.patient_id, "lesion_id": traj.lesion_id,
                         "name": name, "value": text})
    frame = pd.DataFrame(rows, columns=["patient_id", "lesion_id", "name", "value"])
    return frame.to_csv(index=False, lineterminator="\n").encode("utf-8")


class QcKind(Enum):
    """Which inclusion criterion a trajectory failed."""
    CR_SWING = "CR_SWING"
    GAP_TOO_LARGE = "GAP_TOO_LARGE"
    SHORT_OBSERVATION = "SHORT_OBSERVATION"
    SPARSE_FOLLOWUP = "SPARSE_FOLLOWUP"


@dataclass(frozen=True)
class QcFlag:
    patient_id: str
    lesion_id: str
    kind: QcKind
    detail: str


@dataclass(frozen=True)
class CohortCriteria:
    """Inclusion criteria and suspicious-trajectory rejection parameters."""
    max_mean_interval_days: float = 90.0
    min_observation_days: float = 300.0
    max_gap_days: float = 120.0
    min_rebound_fraction: float = 0.10
    min_rebound_count: int = 2
    reject_cr_swings: bool = True
    include_flagged: bool = False  # report flags but keep every lesion

    def __post_init__(self):
        if min(self.max_mean_interval_days, self.min_observation_days, self.max_gap_days) <= 0:
            raise InvalidTrajectoryError("cohort criteria must be positive")
        if self.min_observation_days <= self.max_mean_interval_days:
            raise InvalidTrajectoryError("min_observation_days must exceed max_mean_interval_days")
        if self.min_rebound_count < 1 or self.min_rebound_fraction < 0:
            raise InvalidTrajectoryError("rebound parameters must be positive")


def detect_cr_swings(traj: LesionTrajectory,
                     min_rebound_fraction: float = 0.10,
                     min_rebound_count: int = 2) -> Optional[QcFlag]:
    """
    Flag a zero-volume observation followed by a sustained rebound.

    A rebound point is a volume above min_rebound_fraction * baseline. A single
    rebound point between zeros is left to imputation and not flagged.
    """
    volumes = traj.volumes
    days = [r.day for r in traj.records]
    limit = min_rebound_fraction * traj.baseline
    n = len(volumes)
    for i in range(1, n):
        if volumes[i] != 0:
            continue
        run = 0
        j = i + 1
        while j < n and volumes[j] > limit:
            run += 1
            j += 1
        if run >= min_rebound_count:
            return QcFlag(traj.patient_id, traj.lesion_id, QcKind.CR_SWING,
                          f"zero volume at day {days[i]} followed by {run} rebound scans")
    return None


def _first_failure(traj: LesionTrajectory, criteria: CohortCriteria) -> Optional[QcFlag]:
    span = traj.span_days
    if span < criteria.min_observation_days:
        return QcFlag(traj.patient_id, traj.lesion_id, QcKind.SHORT_OBSERVATION,
                      f"observed {span} days < {criteria.min_observation_days:g}")

    days = traj.days
    intervals = np.diff(days)
    too_large = np.nonzero(intervals >= criteria.max_gap_days)[0]
    if too_large.size:
        k = int(too_large[0])
        return QcFlag(traj.patient_id, traj.lesion_id, QcKind.GAP_TOO_LARGE,
                      f"gap of {intervals[k]:g} days between day {days[k]:g} and day {days[k + 1]:g}")

    mean_interval = float(intervals.mean())
    if mean_interval > criteria.max_mean_interval_days:
        return QcFlag(traj.patient_id, traj.lesion_id, QcKind.SPARSE_FOLLOWUP,
                      f"mean interval {mean_interval:.1f} days > {criteria.max_mean_interval_days:g}")

    if criteria.reject_cr_swings:
        return detect_cr_swings(traj, criteria.min_rebound_fraction, criteria.min_rebound_count)
    return None


def apply_cohort_criteria(trajectories: Sequence[LesionTrajectory],
                          criteria: CohortCriteria = CohortCriteria()
                          ) -> Tuple[List[LesionTrajectory], List[QcFlag]]:
    """
    Split trajectories into kept and flagged.

    Criteria are checked in order: observation span, largest gap, mean
    interval, CR swings. Each flagged lesion carries its first failure only.
    With criteria.include_flagged the flags are still reported but flagged
    lesions stay in the kept list.
    """
    kept, flagged = [], []
    for traj in trajectories:
        flag = _first_failure(traj, criteria)
        if flag is not None:
            flagged.append(flag)
        if flag is None or criteria.include_flagged:
            kept.append(traj)
    logger.info("cohort criteria kept %d of %d trajectories", len(kept), len(trajectories))
    return kept, flagged


def write_flag_report(flags: Sequence[QcFlag]) -> bytes:
    rows = [{"patient_id": f.patient_id, "lesion_id": f.lesion_id,
             "kind": f.kind.value, "detail": f.detail} for f in flags]
    frame = pd.DataFrame(rows, columns=list(FLAG_COLUMNS))
    return frame.to_csv(index=False, lineterminator="\n").encode("utf-8")
