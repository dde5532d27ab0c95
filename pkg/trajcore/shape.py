"""
Mask-derived shape descriptors of a lesion component.
"""

import math
from typing import Dict, Optional, Tuple

import numpy as np

from trajcore.types import LesionComponent

SHAPE_PREFIX = "shape_"
SHAPE_FEATURE_NAMES = (
    "shape_volume_mm3",
    "shape_voxel_count",
    "shape_surface_area_mm2",
    "shape_sphericity",
    "shape_max_axis_extent_mm",
    "shape_centroid_x_mm",
    "shape_centroid_y_mm",
    "shape_centroid_z_mm",
)


def shape_features(component: Optional[LesionComponent]) -> Tuple[Dict[str, float], bool]:
    """
    Shape descriptors of one component.

    Surface area counts exposed voxel faces (a face between a foreground voxel
    and background), weighted by the face area for its axis.

    Returns:
        (feature map, observed); an empty component gives zeros and False
    """
    if component is None or component.voxel_count == 0:
        return {name: 0.0 for name in SHAPE_FEATURE_NAMES}, False

    _, spacing, _ = component.grid
    sx, sy, sz = spacing
    voxels = component.voxels
    low = voxels.min(axis=0)
    extent = voxels.max(axis=0) - low + 1

    mask = np.zeros(tuple(extent + 2), dtype=np.int8)
    shifted = voxels - low + 1
    mask[shifted[:, 0], shifted[:, 1], shifted[:, 2]] = 1

    face_area = (sy * sz, sx * sz, sx * sy)
    area = 0.0
    for axis in range(3):
        area += np.count_nonzero(np.diff(mask, axis=axis)) * face_area[axis]

    volume = component.voxel_count * sx * sy * sz
    sphericity = math.pi ** (1.0 / 3.0) * (6.0 * volume) ** (2.0 / 3.0) / area
    cx, cy, cz = component.centroid_mm
    features = {
        "shape_volume_mm3": float(volume),
        "shape_voxel_count": float(component.voxel_count),
        "shape_surface_area_mm2": float(area),
        "shape_sphericity": float(sphericity),
        "shape_max_axis_extent_mm": float(np.max(extent * np.asarray(spacing))),
        "shape_centroid_x_mm": float(cx),
        "shape_centroid_y_mm": float(cy),
        "shape_centroid_z_mm": float(cz),
    }
    return features, True
