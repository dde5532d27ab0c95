"""Sphere label-volume series for exercising the tracking path."""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from trajcore.errors import ShapeError
from trajcore.types import GRID_DAYS, LabelVolume


@dataclass(frozen=True)
class SphereLesion:
    """A sphere at a fixed centre whose radius changes per time point (0 = absent)."""
    center_mm: Tuple[float, float, float]
    radii_mm: Tuple[float, ...]


def sphere_mask(dims: Tuple[int, int, int], spacing_mm: Tuple[float, float, float],
                spheres: Sequence[Tuple[Tuple[float, float, float], float]]) -> np.ndarray:
    """Label array ``[x, y, z]``; sphere i gets label i + 1, later spheres win overlaps."""
    grid = np.meshgrid(*(np.arange(n) * s for n, s in zip(dims, spacing_mm)), indexing="ij")
    labels = np.zeros(dims, dtype=np.uint16)
    for i, (center, radius) in enumerate(spheres):
        if radius <= 0:
            continue
        d2 = sum((g - c) ** 2 for g, c in zip(grid, center))
        labels[d2 <= radius * radius] = i + 1
    return labels


def sphere_mask_series(lesions: Sequence[SphereLesion], days: Sequence[int] = GRID_DAYS,
                       dims: Tuple[int, int, int] = (48, 48, 48),
                       spacing_mm: Tuple[float, float, float] = (1.0, 1.0, 1.0)
                       ) -> List[Tuple[int, LabelVolume]]:
    """
    One label volume per day.

    Args:
        lesions: Spheres with one radius per day
        days: Scan days (first must be 0)
        dims: Grid size in voxels
        spacing_mm: Voxel spacing

    Returns:
        [(day, LabelVolume)] in day order
    """
    for lesion in lesions:
        if len(lesion.radii_mm) != len(days):
            raise ShapeError("each lesion needs one radius per day",
                             f"{len(lesion.radii_mm)} != {len(days)}")
    series = []
    for k, day in enumerate(days):
        spheres = [(lesion.center_mm, lesion.radii_mm[k]) for lesion in lesions]
        series.append((int(day), LabelVolume.from_array(sphere_mask(dims, spacing_mm, spheres),
                                                        spacing_mm)))
    return series


def voxel_sphere_volume(radius_mm: float, spacing_mm: Tuple[float, float, float] = (1.0, 1.0, 1.0),
                        center_mm: Tuple[float, float, float] = (0.0, 0.0, 0.0)) -> float:
    """Exact volume in mm^3 of the voxelized sphere sphere_mask would draw."""
    if radius_mm <= 0:
        return 0.0
    half = [int(np.ceil(radius_mm / s)) + 1 for s in spacing_mm]
    axes = [np.arange(round(c / s) - h, round(c / s) + h + 1) * s
            for c, s, h in zip(center_mm, spacing_mm, half)]
    grid = np.meshgrid(*axes, indexing="ij")
    d2 = sum((g - c) ** 2 for g, c in zip(grid, center_mm))
    return float(np.count_nonzero(d2 <= radius_mm * radius_mm)) * float(np.prod(spacing_mm))
