"""
Volumetric RANO-BM response classification.

Rules, evaluated in order (CR > PD > PR > SD):
    CR: current volume <= cr_volume_mm3 (empty mask by default)
    PD: current > pd_fraction_of_nadir * nadir, nadir = min of all prior volumes
    PR: current < pr_fraction_of_baseline * baseline
    SD: otherwise; values exactly on a threshold fall here
"""

import math
from typing import List, Sequence, Tuple, Union

from trajcore.errors import InsufficientDataError, InvalidTrajectoryError
from trajcore.types import (
    LesionTrajectory,
    ResampledTrajectory,
    ResponseCategory,
    ResponseCriteria,
)

DEFAULT_CRITERIA = ResponseCriteria()

# relative tolerance that makes threshold equality scale-invariant in floating point
_BOUNDARY_RTOL = 1e-9


def _strictly_above(value: float, limit: float) -> bool:
    return value > limit and not math.isclose(value, limit, rel_tol=_BOUNDARY_RTOL)


def _strictly_below(value: float, limit: float) -> bool:
    return value < limit and not math.isclose(value, limit, rel_tol=_BOUNDARY_RTOL)


def classify_response(baseline_volume: float,
                      prior_volumes: Sequence[float],
                      current_volume: float,
                      criteria: ResponseCriteria = DEFAULT_CRITERIA) -> ResponseCategory:
    """
    Classify one time point against the baseline and the prior minimum.

    Args:
        baseline_volume: Volume at t0 (mm^3), must be > 0
        prior_volumes: Volumes of all earlier time points, baseline first
        current_volume: Volume at the time point being classified
        criteria: Response thresholds

    Returns:
        ResponseCategory
    """
    if baseline_volume <= 0:
        raise InvalidTrajectoryError("baseline volume must be > 0", f"baseline={baseline_volume}")
    if len(prior_volumes) == 0:
        raise InsufficientDataError("at least one prior volume (the baseline) is required")
    if current_volume < 0 or any(v < 0 for v in prior_volumes):
        raise InvalidTrajectoryError("volumes must be >= 0")

    nadir = min(prior_volumes)
    if current_volume <= criteria.cr_volume_mm3:
        return ResponseCategory.CR
    if _strictly_above(current_volume, criteria.pd_fraction_of_nadir * nadir):
        return ResponseCategory.PD
    if _strictly_below(current_volume, criteria.pr_fraction_of_baseline * baseline_volume):
        return ResponseCategory.PR
    return ResponseCategory.SD


def classify_trajectory(traj: Union[LesionTrajectory, ResampledTrajectory],
                        criteria: ResponseCriteria = DEFAULT_CRITERIA
                        ) -> List[Tuple[int, ResponseCategory]]:
    """
    Classify every time point after t0.

    Returns:
        [(day, category), ...] for indices 1..n-1
    """
    days = [int(d) for d in traj.days]
    volumes = [float(v) for v in traj.volumes]
    if len(volumes) < 2:
        raise InsufficientDataError("classification needs at least 2 time points", traj.key)

    baseline = volumes[0]
    return [
        (days[k], classify_response(baseline, volumes[:k], volumes[k], criteria))
        for k in range(1, len(volumes))
    ]


def final_category(traj: Union[LesionTrajectory, ResampledTrajectory],
                   criteria: ResponseCriteria = DEFAULT_CRITERIA) -> ResponseCategory:
    """Category at the last time point (t6 on the resampled grid)."""
    return classify_trajectory(traj, criteria)[-1][1]
