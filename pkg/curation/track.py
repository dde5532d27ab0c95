"""
Lesion separation and correspondence across time points.

Lesions are the 26-connected foreground components of each label volume.
Consecutive time points are linked greedily by maximum voxel overlap, then
minimum centroid distance; a zero-overlap pair is accepted only when the
centroids are within max_centroid_mm. Volumes must be pre-aligned (same grid).
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from curation.volume_io import read_label_volume, read_series_manifest
from runtime.workers import parallel_map
from trajcore.errors import AlignmentError, InvalidTrajectoryError
from trajcore.shape import shape_features
from trajcore.types import LabelVolume, LesionComponent, LesionTrajectory, ScanRecord

logger = logging.getLogger(__name__)

_STRUCTURE_26 = np.ones((3, 3, 3), dtype=bool)


@dataclass(frozen=True)
class TrackingConfig:
    max_centroid_mm: float = 10.0
    with_shape: bool = True

    def __post_init__(self):
        if self.max_centroid_mm < 0:
            raise InvalidTrajectoryError("max_centroid_mm must be >= 0", f"{self.max_centroid_mm}")


def connected_components(volume: LabelVolume) -> List[LesionComponent]:
    """
    Split a label volume into 26-connected components.

    Any nonzero voxel is foreground. Ids are assigned by descending voxel
    count, ties broken by ascending centroid (x, y, z).
    """
    labeled, n = ndimage.label(volume.array() != 0, structure=_STRUCTURE_26)
    if n == 0:
        return []

    voxels = np.argwhere(labeled > 0)
    ids = labeled[voxels[:, 0], voxels[:, 1], voxels[:, 2]]
    order = np.argsort(ids, kind="stable")
    voxels, ids = voxels[order], ids[order]
    groups = np.split(voxels, np.flatnonzero(np.diff(ids)) + 1)

    spacing = np.asarray(volume.spacing_mm)
    origin = np.asarray(volume.origin_mm)
    voxel_volume = volume.voxel_volume_mm3
    components = []
    for members in groups:
        centroid = origin + spacing * members.mean(axis=0)
        components.append(LesionComponent(
            component_id=-1,
            voxel_count=int(len(members)),
            volume_mm3=float(len(members) * voxel_volume),
            centroid_mm=tuple(float(c) for c in centroid),
            voxels=members,
            grid=volume.grid,
        ))
    components.sort(key=lambda c: (-c.voxel_count, c.centroid_mm))
    return [replace(c, component_id=i) for i, c in enumerate(components)]


@dataclass
class MatchResult:
    pairs: List[Tuple[LesionComponent, LesionComponent]]
    appeared: List[LesionComponent]
    disappeared: List[LesionComponent]
    index_pairs: List[Tuple[int, int]] = field(default_factory=list)
    # components at t_{k+1} overlapped by more than one component at t_k
    merges: List[Tuple[int, List[int]]] = field(default_factory=list)


def _check_grid(components: Sequence[LesionComponent]):
    grids = {c.grid for c in components}
    if len(grids) > 1:
        raise AlignmentError("components come from volumes on different grids",
                             "; ".join(str(g) for g in sorted(grids, key=str)))


def match_components(a: Sequence[LesionComponent],
                     b: Sequence[LesionComponent],
                     max_centroid_mm: float = 10.0) -> MatchResult:
    """
    Greedy correspondence between components at t_k (a) and t_{k+1} (b).

    Candidate pairs are ranked by descending intersection, then ascending
    centroid distance; a pair is accepted when both sides are still free and it
    either overlaps or its centroids lie within max_centroid_mm.
    """
    _check_grid(list(a) + list(b))

    flat_a = [c.flat_indices for c in a]
    flat_b = [c.flat_indices for c in b]
    candidates = []
    overlapping = {j: [] for j in range(len(b))}
    for i, ca in enumerate(a):
        for j, cb in enumerate(b):
            inter = int(np.intersect1d(flat_a[i], flat_b[j], assume_unique=True).size)
            dist = float(np.linalg.norm(np.subtract(ca.centroid_mm, cb.centroid_mm)))
            if inter > 0:
                overlapping[j].append(i)
            candidates.append((-inter, dist, i, j))
    candidates.sort()

    used_a, used_b = set(), set()
    index_pairs = []
    for neg_inter, dist, i, j in candidates:
        if i in used_a or j in used_b:
            continue
        if neg_inter < 0 or dist <= max_centroid_mm:
            used_a.add(i)
            used_b.add(j)
            index_pairs.append((i, j))

    index_pairs.sort()
    return MatchResult(
        pairs=[(a[i], b[j]) for i, j in index_pairs],
        appeared=[c for j, c in enumerate(b) if j not in used_b],
        disappeared=[c for i, c in enumerate(a) if i not in used_a],
        index_pairs=index_pairs,
        merges=[(j, sources) for j, sources in overlapping.items() if len(sources) > 1],
    )


@dataclass(frozen=True)
class NewLesion:
    """A component first seen after day 0 (no treatment baseline)."""
    patient_id: str
    day: int
    component_id: int
    volume_mm3: float
    centroid_mm: Tuple[float, float, float]


@dataclass
class TrackingResult:
    trajectories: List[LesionTrajectory]
    new_lesions: List[NewLesion]
    events: List[str]


@dataclass
class _TrackedLesion:
    lesion_id: str
    current: Optional[LesionComponent]
    ghost: LesionComponent
    records: List[ScanRecord]


def _record(day: int, component: Optional[LesionComponent], with_shape: bool) -> ScanRecord:
    features = shape_features(component)[0] if with_shape else {}
    volume = component.volume_mm3 if component is not None else 0.0
    return ScanRecord(day=day, volume_mm3=volume, features=features)


def build_trajectories(series: Sequence[Tuple[int, LabelVolume]],
                       patient_id: str = "P0",
                       max_centroid_mm: float = 10.0,
                       with_shape: bool = True,
                       threads: int = 1) -> TrackingResult:
    """
    Chain component matches through a patient's time series.

    Args:
        series: (day, volume) pairs sorted by day, starting at day 0
        patient_id: Identifier stamped on every trajectory
        max_centroid_mm: Distance fallback for zero-overlap matches
        with_shape: Attach built-in shape features to each record
        threads: Worker cap for component labelling

    Returns:
        TrackingResult with one trajectory per day-0 component
    """
    days = [int(d) for d, _ in series]
    if not days or days[0] != 0:
        raise InvalidTrajectoryError("series must start at day 0", patient_id)
    if any(b <= a for a, b in zip(days, days[1:])):
        raise InvalidTrajectoryError("series must be sorted by strictly ascending day", patient_id)
    grids = {v.grid for _, v in series}
    if len(grids) > 1:
        raise AlignmentError("time points are not on a common grid", patient_id)

    components = parallel_map(connected_components, [v for _, v in series], threads)
    events: List[str] = []
    new_lesions: List[NewLesion] = []

    lesions = [
        _TrackedLesion(f"L{i + 1:03d}", comp, comp, [_record(0, comp, with_shape)])
        for i, comp in enumerate(components[0])
    ]
    if not lesions:
        events.append(f"{patient_id}: empty day-0 volume, no trajectories")
        logger.warning("%s: empty day-0 volume, no trajectories", patient_id)

    for k in range(1, len(series)):
        day = days[k]
        current = components[k]
        active = [lesion for lesion in lesions if lesion.current is not None]
        result = match_components([lesion.current for lesion in active], current, max_centroid_mm)

        next_component = {}
        for i, j in result.index_pairs:
            next_component[active[i].lesion_id] = current[j]
        for j, sources in result.merges:
            winner = next((active[i].lesion_id for i, jj in result.index_pairs if jj == j), None)
            names = ", ".join(active[i].lesion_id for i in sources)
            message = (f"{patient_id} day {day}: lesions {names} overlap one component; "
                       f"{winner} keeps it, the others record volume 0")
            events.append(message)
            logger.info(message)

        matched_b = {j for _, j in result.index_pairs}
        appeared = [c for j, c in enumerate(current) if j not in matched_b]
        dormant = [lesion for lesion in lesions if lesion.current is None]
        if appeared and dormant:
            revived = match_components([lesion.ghost for lesion in dormant], appeared, max_centroid_mm)
            for i, j in revived.index_pairs:
                next_component[dormant[i].lesion_id] = appeared[j]
                events.append(f"{patient_id} day {day}: lesion {dormant[i].lesion_id} reappears")
            appeared = revived.appeared

        for comp in appeared:
            new_lesions.append(NewLesion(patient_id, day, comp.component_id,
                                         comp.volume_mm3, comp.centroid_mm))

        for lesion in lesions:
            comp = next_component.get(lesion.lesion_id)
            lesion.records.append(_record(day, comp, with_shape))
            lesion.current = comp
            if comp is not None:
                lesion.ghost = comp

    trajectories = [LesionTrajectory(patient_id, lesion.lesion_id, tuple(lesion.records))
                    for lesion in lesions]
    return TrackingResult(trajectories, new_lesions, events)


def track_manifest(manifest_path: Union[str, Path],
                   max_centroid_mm: float = 10.0,
                   with_shape: bool = True,
                   threads: int = 1) -> TrackingResult:
    """Track every patient listed in a series manifest."""
    combined = TrackingResult([], [], [])
    for patient_id, items in read_series_manifest(manifest_path).items():
        series = [(day, read_label_volume(vol, sidecar)) for day, vol, sidecar in items]
        result = build_trajectories(series, patient_id, max_centroid_mm, with_shape, threads)
        combined.trajectories.extend(result.trajectories)
        combined.new_lesions.extend(result.new_lesions)
        combined.events.extend(result.events)
    return combined
