"""
Domain types shared by every stage of the pipeline.

A lesion trajectory is a list of dated scan records anchored at the
radiosurgery day (day 0). Tracking produces trajectories from label volumes,
resampling maps them onto the fixed 60-day grid, and the response, clustering
and prediction stages consume the resampled form.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np

from trajcore.errors import InvalidTrajectoryError, ShapeError

# t0..t6, 60 days apart; t6 is the one-year endpoint
GRID_DAYS: Tuple[int, ...] = (0, 60, 120, 180, 240, 300, 360)
GRID_SPACING_DAYS = 60


class ResponseCategory(Enum):
    """Volumetric lesion-level response class."""
    CR = "CR"
    PR = "PR"
    SD = "SD"
    PD = "PD"

    @property
    def index(self) -> int:
        return CATEGORY_ORDER.index(self)


CATEGORY_ORDER: Tuple[ResponseCategory, ...] = (
    ResponseCategory.CR,
    ResponseCategory.PR,
    ResponseCategory.SD,
    ResponseCategory.PD,
)


@dataclass(frozen=True)
class ResponseCriteria:
    """Volumetric thresholds (0.343 = 0.7^3 and 1.728 = 1.2^3 of the diameter rules)."""
    pr_fraction_of_baseline: float = 0.343
    pd_fraction_of_nadir: float = 1.728
    cr_volume_mm3: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.pr_fraction_of_baseline < 1.0 < self.pd_fraction_of_nadir):
            raise InvalidTrajectoryError(
                "response thresholds must satisfy 0 < pr_fraction < 1 < pd_fraction",
                f"pr={self.pr_fraction_of_baseline}, pd={self.pd_fraction_of_nadir}",
            )
        if self.cr_volume_mm3 < 0:
            raise InvalidTrajectoryError("cr_volume_mm3 must be non-negative",
                                         f"cr_volume_mm3={self.cr_volume_mm3}")


@dataclass(frozen=True)
class ScanRecord:
    """One dated lesion measurement."""
    day: int
    volume_mm3: float
    features: Mapping[str, float] = field(default_factory=dict)
    observed: bool = True

    def __post_init__(self):
        if self.day < 0:
            raise InvalidTrajectoryError("scan day must be >= 0", f"day={self.day}")
        if not np.isfinite(self.volume_mm3) or self.volume_mm3 < 0:
            raise InvalidTrajectoryError("volume must be a finite value >= 0",
                                         f"day={self.day}, volume={self.volume_mm3}")


def lesion_key(patient_id: str, lesion_id: str) -> str:
    """Row identifier used by feature matrices and reports."""
    return f"{patient_id}/{lesion_id}"


@dataclass(frozen=True)
class LesionTrajectory:
    """Dated volume and feature records of one lesion, anchored at treatment day 0."""
    patient_id: str
    lesion_id: str
    records: Tuple[ScanRecord, ...]
    clinical: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        key = self.key
        if not self.records:
            raise InvalidTrajectoryError("trajectory has no records", key)
        if self.records[0].day != 0:
            raise InvalidTrajectoryError("first record must be day 0", key)
        days = [r.day for r in self.records]
        if any(b <= a for a, b in zip(days, days[1:])):
            raise InvalidTrajectoryError("record days must be strictly ascending", key)
        if self.records[0].volume_mm3 <= 0:
            raise InvalidTrajectoryError("baseline volume must be > 0", key)

    @property
    def key(self) -> str:
        return lesion_key(self.patient_id, self.lesion_id)

    @property
    def days(self) -> np.ndarray:
        return np.array([r.day for r in self.records], dtype=float)

    @property
    def volumes(self) -> np.ndarray:
        return np.array([r.volume_mm3 for r in self.records], dtype=float)

    @property
    def baseline(self) -> float:
        return self.records[0].volume_mm3

    @property
    def span_days(self) -> int:
        return self.records[-1].day - self.records[0].day


@dataclass(frozen=True)
class ResampledTrajectory:
    """Volumes (and per-point features) on the fixed 7-point, 60-day grid."""
    patient_id: str
    lesion_id: str
    volumes_mm3: Tuple[float, ...]
    source_index: Tuple[Optional[int], ...]
    normalized: Tuple[float, ...]
    features: Tuple[Mapping[str, float], ...] = ()
    observed: Tuple[bool, ...] = ()
    clinical: Mapping[str, Any] = field(default_factory=dict)
    grid_days: Tuple[int, ...] = GRID_DAYS

    def __post_init__(self):
        n = len(GRID_DAYS)
        if tuple(self.grid_days) != GRID_DAYS:
            raise InvalidTrajectoryError("grid is fixed to days 0..360 step 60", self.key)
        if not self.features:
            object.__setattr__(self, "features", tuple({} for _ in range(n)))
        if not self.observed:
            object.__setattr__(self, "observed", tuple(True for _ in range(n)))
        for name in ("volumes_mm3", "source_index", "normalized", "features", "observed"):
            if len(getattr(self, name)) != n:
                raise InvalidTrajectoryError(f"{name} must have {n} entries", self.key)
        if any(v < 0 for v in self.volumes_mm3):
            raise InvalidTrajectoryError("resampled volumes must be >= 0", self.key)
        if self.normalized[0] != 1.0:
            raise InvalidTrajectoryError("normalized[0] must be exactly 1", self.key)

    @property
    def key(self) -> str:
        return lesion_key(self.patient_id, self.lesion_id)

    @property
    def days(self) -> np.ndarray:
        return np.array(self.grid_days, dtype=float)

    @property
    def volumes(self) -> np.ndarray:
        return np.array(self.volumes_mm3, dtype=float)


@dataclass(frozen=True)
class TransitionFlow:
    """Category transition counts between grid points t_k and t_{k+1}."""
    interval_index: int
    counts: np.ndarray

    def as_dict(self) -> Dict[str, Any]:
        return {
            "interval_index": self.interval_index,
            "source": f"t{self.interval_index}",
            "target": f"t{self.interval_index + 1}",
            "categories": [c.value for c in CATEGORY_ORDER],
            "counts": self.counts.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TransitionFlow":
        categories = [c.value for c in CATEGORY_ORDER]
        if list(data.get("categories", categories)) != categories:
            raise ShapeError("flow categories must be CR, PR, SD, PD", str(data.get("categories")))
        counts = np.asarray(data["counts"], dtype=np.int64)
        if counts.shape != (len(categories), len(categories)):
            raise ShapeError("flow counts must be a 4x4 matrix", str(counts.shape))
        return cls(int(data["interval_index"]), counts)


Grid = Tuple[Tuple[int, int, int], Tuple[float, float, float], Tuple[float, float, float]]


@dataclass(frozen=True)
class LabelVolume:
    """3D label map; ``labels`` is flat in x-fastest order, 0 = background."""
    dims: Tuple[int, int, int]
    spacing_mm: Tuple[float, float, float]
    origin_mm: Tuple[float, float, float]
    labels: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing_mm)
        origin = tuple(float(o) for o in self.origin_mm)
        if len(dims) != 3 or any(d <= 0 for d in dims):
            raise InvalidTrajectoryError("dims must be three positive integers", str(self.dims))
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise InvalidTrajectoryError("spacing components must be > 0", str(self.spacing_mm))
        if len(origin) != 3:
            raise InvalidTrajectoryError("origin must have three components", str(self.origin_mm))
        labels = np.asarray(self.labels).ravel()
        if labels.size != dims[0] * dims[1] * dims[2]:
            raise InvalidTrajectoryError("labels length must equal nx*ny*nz",
                                         f"{labels.size} != {dims[0] * dims[1] * dims[2]}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing_mm", spacing)
        object.__setattr__(self, "origin_mm", origin)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_array(cls, array: np.ndarray, spacing_mm=(1.0, 1.0, 1.0),
                   origin_mm=(0.0, 0.0, 0.0)) -> "LabelVolume":
        """Build from an array indexed ``[x, y, z]``."""
        array = np.asarray(array)
        return cls(array.shape, spacing_mm, origin_mm, array.ravel(order="F"))

    def array(self) -> np.ndarray:
        """Labels as an array indexed ``[x, y, z]``."""
        return self.labels.reshape(self.dims, order="F")

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing_mm
        return sx * sy * sz

    @property
    def grid(self) -> Grid:
        return (self.dims, self.spacing_mm, self.origin_mm)


@dataclass(frozen=True)
class LesionComponent:
    """One connected foreground region of a label volume."""
    component_id: int
    voxel_count: int
    volume_mm3: float
    centroid_mm: Tuple[float, float, float]
    voxels: np.ndarray  # (voxel_count, 3) integer [x, y, z] indices
    grid: Grid

    @property
    def flat_indices(self) -> np.ndarray:
        """Sorted x-fastest linear indices of the member voxels."""
        nx, ny, _ = self.grid[0]
        v = self.voxels
        return np.sort(v[:, 0] + nx * (v[:, 1] + ny * v[:, 2]))
