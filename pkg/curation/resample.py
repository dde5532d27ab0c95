"""
Resampling of irregular scan dates onto the fixed 60-day grid t0..t6.

Nearest neighbour is the default: every grid value is a real observation and
keeps its source scan index. Linear and clamped cubic B-spline interpolants are
available for comparison; their grid values carry no source index unless the
grid day coincides with a scan.

Resampled CSV: patient_id,lesion_id,t0..t6 (one file for volumes, one for the
normalized vectors).
"""

import io
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.interpolate import make_interp_spline

from trajcore.errors import InsufficientDataError, InvalidTrajectoryError, ParseError
from trajcore.types import GRID_DAYS, LesionTrajectory, ResampledTrajectory

logger = logging.getLogger(__name__)

GRID_COLUMNS = tuple(f"t{k}" for k in range(len(GRID_DAYS)))


class ResampleMethod(Enum):
    NN = "nn"
    LINEAR = "linear"
    BSPLINE = "bspline"


@dataclass(frozen=True)
class ResampleConfig:
    method: str = "nn"

    def __post_init__(self):
        try:
            ResampleMethod(self.method)
        except ValueError:
            raise InvalidTrajectoryError(f"unknown resampling method {self.method!r}",
                                         ", ".join(m.value for m in ResampleMethod))


def normalize(volumes: Sequence[float]) -> Tuple[float, ...]:
    """
    Divide a grid vector by its t0 value.

    Accepts a ResampledTrajectory or a plain sequence of volumes.
    """
    if isinstance(volumes, ResampledTrajectory):
        volumes = volumes.volumes_mm3
    values = np.asarray(volumes, dtype=float)
    if values.size == 0:
        raise InsufficientDataError("cannot normalize an empty vector")
    if values[0] <= 0:
        raise InvalidTrajectoryError("cannot normalize by a zero baseline", f"t0={values[0]}")
    out = values / values[0]
    out[0] = 1.0
    return tuple(float(v) for v in out)


def _check(traj: LesionTrajectory):
    if not traj.records:
        raise InsufficientDataError("cannot resample an empty trajectory", traj.key)


def _feature_names(traj: LesionTrajectory) -> List[str]:
    names = set()
    for record in traj.records:
        names.update(record.features)
    return sorted(names)


def _build(traj: LesionTrajectory, volumes: np.ndarray, source: List[Optional[int]],
           features: List[Dict[str, float]]) -> ResampledTrajectory:
    volumes = np.maximum(volumes, 0.0)
    volumes_t = tuple(float(v) for v in volumes)
    return ResampledTrajectory(
        patient_id=traj.patient_id,
        lesion_id=traj.lesion_id,
        volumes_mm3=volumes_t,
        source_index=tuple(source),
        normalized=normalize(volumes_t),
        features=tuple(features),
        clinical=dict(traj.clinical),
    )


def _coincident(traj: LesionTrajectory) -> List[Optional[int]]:
    position = {r.day: i for i, r in enumerate(traj.records)}
    return [position.get(day) for day in GRID_DAYS]


def resample_nn(traj: LesionTrajectory) -> ResampledTrajectory:
    """
    Nearest-scan resampling; equidistant scans resolve to the earlier one.

    Per-point features are copied from the chosen record.
    """
    _check(traj)
    days = traj.days
    source: List[Optional[int]] = []
    for day in GRID_DAYS:
        # argmin returns the first minimum, and days are ascending
        source.append(int(np.argmin(np.abs(days - day))))
    volumes = traj.volumes[source]
    features = [dict(traj.records[i].features) for i in source]
    return _build(traj, volumes, source, features)


def _interpolated_features(traj: LesionTrajectory, interpolate) -> List[Dict[str, float]]:
    grid = np.array(GRID_DAYS, dtype=float)
    columns = {}
    for name in _feature_names(traj):
        points = [(r.day, r.features[name]) for r in traj.records if name in r.features]
        if not points:
            continue
        x, y = (np.array(v, dtype=float) for v in zip(*points))
        columns[name] = interpolate(x, y, grid)
    return [{name: float(values[k]) for name, values in columns.items()}
            for k in range(len(GRID_DAYS))]


def _linear(x: np.ndarray, y: np.ndarray, grid: np.ndarray) -> np.ndarray:
    # np.interp holds the endpoint values outside [x[0], x[-1]]
    return np.interp(grid, x, y)


def resample_linear(traj: LesionTrajectory) -> ResampledTrajectory:
    """Piecewise-linear interpolation, clamped to the endpoint values outside the observed span."""
    _check(traj)
    volumes = _linear(traj.days, traj.volumes, np.array(GRID_DAYS, dtype=float))
    return _build(traj, volumes, _coincident(traj), _interpolated_features(traj, _linear))


def _bspline(x: np.ndarray, y: np.ndarray, grid: np.ndarray) -> np.ndarray:
    if len(x) < 4:
        return _linear(x, y, grid)
    spline = make_interp_spline(x, y, k=3, bc_type="clamped")
    inside = np.clip(grid, x[0], x[-1])
    return spline(inside)


def resample_bspline(traj: LesionTrajectory) -> ResampledTrajectory:
    """
    Cubic interpolating B-spline with clamped ends, floored at 0.

    Falls back to linear (with a warning) when fewer than 4 records exist.
    """
    _check(traj)
    if len(traj.records) < 4:
        logger.warning("%s: %d records, B-spline needs 4; using linear interpolation",
                       traj.key, len(traj.records))
        return resample_linear(traj)
    volumes = _bspline(traj.days, traj.volumes, np.array(GRID_DAYS, dtype=float))
    return _build(traj, volumes, _coincident(traj), _interpolated_features(traj, _bspline))


_METHODS = {
    ResampleMethod.NN: resample_nn,
    ResampleMethod.LINEAR: resample_linear,
    ResampleMethod.BSPLINE: resample_bspline,
}


def resample(traj: LesionTrajectory, method="nn") -> ResampledTrajectory:
    """Dispatch to the resampler named by method ('nn', 'linear', 'bspline')."""
    try:
        method = ResampleMethod(method) if not isinstance(method, ResampleMethod) else method
    except ValueError:
        raise InvalidTrajectoryError(f"unknown resampling method {method!r}",
                                     ", ".join(m.value for m in ResampleMethod))
    return _METHODS[method](traj)


def resample_all(trajectories: Sequence[LesionTrajectory], method="nn") -> List[ResampledTrajectory]:
    return [resample(traj, method) for traj in trajectories]


def write_resampled_table(resampled: Sequence[ResampledTrajectory], normalized: bool = False) -> bytes:
    """Grid CSV of volumes (or normalized vectors) with repr-exact floats."""
    rows = []
    for res in resampled:
        values = res.normalized if normalized else res.volumes_mm3
        row = {"patient_id": res.patient_id, "lesion_id": res.lesion_id}
        row.update({col: repr(float(v)) for col, v in zip(GRID_COLUMNS, values)})
        rows.append(row)
    frame = pd.DataFrame(rows, columns=["patient_id", "lesion_id", *GRID_COLUMNS])
    return frame.to_csv(index=False, lineterminator="\n").encode("utf-8")


def read_resampled_table(data: bytes,
                         clinical: Optional[Mapping[str, Mapping]] = None) -> List[ResampledTrajectory]:
    """
    Read a volume grid CSV back into ResampledTrajectory objects.

    Per-point features and source indices are not part of the interchange file;
    source indices come back absent.
    """
    frame = pd.read_csv(io.BytesIO(data), dtype=str, keep_default_na=False)
    missing = [c for c in ("patient_id", "lesion_id", *GRID_COLUMNS) if c not in frame.columns]
    if missing:
        raise ParseError("resampled table missing column(s)", context=", ".join(missing))

    out = []
    for pos, row in enumerate(frame.to_dict("records")):
        try:
            volumes = tuple(float(row[c]) for c in GRID_COLUMNS)
        except ValueError as e:
            raise ParseError(f"non-numeric grid value ({e})", row=pos + 2)
        key = f"{row['patient_id']}/{row['lesion_id']}"
        out.append(ResampledTrajectory(
            patient_id=row["patient_id"],
            lesion_id=row["lesion_id"],
            volumes_mm3=volumes,
            source_index=tuple(None for _ in GRID_COLUMNS),
            normalized=normalize(volumes),
            clinical=dict((clinical or {}).get(key, {})),
        ))
    return out
