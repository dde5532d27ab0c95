"""
Feature assembly for the prediction models.

Per-time-point blocks carry a ``@tk`` suffix and are laid out t0..tN, each
point in block order volume, relative, shape, injected. The clinical block
follows once. Standardization is fitted on training rows only.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from curation.resample import normalize
from trajcore.errors import InsufficientDataError, ShapeError
from trajcore.shape import SHAPE_PREFIX, shape_features  # noqa: F401
from trajcore.types import ResampledTrajectory

logger = logging.getLogger(__name__)

MAX_HORIZON = 5
BLOCKS = ("volume", "relative", "shape", "injected", "clinical")


# ----------------------------------------------------------------------------
# Noisy-point imputation
# ----------------------------------------------------------------------------

def impute_series(days: Sequence[float], values: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Replace isolated interior zeros by time-weighted linear interpolation.

    A point k is noisy when values[k] == 0 and both neighbours are > 0.

    Returns:
        (imputed values, boolean mask of imputed indices)
    """
    days = np.asarray(days, dtype=float)
    values = np.asarray(values, dtype=float)
    if days.shape != values.shape:
        raise ShapeError("days and values must have the same length",
                         f"{days.shape} != {values.shape}")
    out = values.copy()
    imputed = np.zeros(values.shape, dtype=bool)
    for k in range(1, len(values) - 1):
        if values[k] == 0 and values[k - 1] > 0 and values[k + 1] > 0:
            w_prev = (days[k + 1] - days[k]) / (days[k + 1] - days[k - 1])
            out[k] = w_prev * values[k - 1] + (1.0 - w_prev) * values[k + 1]
            imputed[k] = True
    return out, imputed


def impute_noisy_points(res: ResampledTrajectory) -> ResampledTrajectory:
    """
    Impute 'entering and immediately leaving CR' points on the grid.

    Volume and every numeric per-point feature present at both neighbours are
    interpolated; the observed flag at an imputed point becomes False.
    """
    days = np.array(res.grid_days, dtype=float)
    volumes, imputed = impute_series(days, res.volumes_mm3)
    if not imputed.any():
        return res

    features = [dict(f) for f in res.features]
    observed = list(res.observed)
    for k in np.flatnonzero(imputed):
        w_prev = (days[k + 1] - days[k]) / (days[k + 1] - days[k - 1])
        before, after = res.features[k - 1], res.features[k + 1]
        for name in set(before) & set(after):
            features[k][name] = w_prev * before[name] + (1.0 - w_prev) * after[name]
        observed[k] = False
        logger.debug("%s: imputed noisy point t%d", res.key, k)

    volumes_t = tuple(float(v) for v in volumes)
    return replace(res, volumes_mm3=volumes_t, normalized=normalize(volumes_t),
                   features=tuple(features), observed=tuple(observed))


# ----------------------------------------------------------------------------
# Clinical encoding
# ----------------------------------------------------------------------------

def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(value, bool)


class ClinicalEncoder:
    """
    One-hot encoder for clinical variables, frozen on the full cohort.

    Variables whose present values are all numeric pass through; any other
    variable is categorical with one column per observed category, named
    ``variable=category``. Variables and categories are ordered alphabetically.
    Missing values encode as 0 (numeric) or an all-zero one-hot group.
    """

    def __init__(self):
        self.numeric: List[str] = []
        self.categories: Dict[str, List[str]] = {}
        self.fitted = False

    def fit(self, records: Sequence[Mapping[str, Any]]) -> "ClinicalEncoder":
        values: Dict[str, List[Any]] = {}
        for record in records:
            for name, value in record.items():
                if value is None or (isinstance(value, str) and not value.strip()):
                    continue
                values.setdefault(name, []).append(value)
        self.numeric = sorted(n for n, vs in values.items() if all(_is_number(v) for v in vs))
        self.categories = {
            n: sorted({str(v) for v in vs})
            for n, vs in values.items() if n not in self.numeric
        }
        self.fitted = True
        return self

    @property
    def variables(self) -> List[str]:
        return sorted(self.numeric + list(self.categories))

    @property
    def columns(self) -> List[Tuple[str, str]]:
        """(column name, kind) pairs in encoding order."""
        cols = []
        for name in self.variables:
            if name in self.categories:
                cols.extend((f"{name}={c}", "one-hot") for c in self.categories[name])
            else:
                cols.append((name, "numeric"))
        return cols

    def transform_one(self, record: Mapping[str, Any]) -> List[float]:
        if not self.fitted:
            raise InsufficientDataError("ClinicalEncoder.transform called before fit")
        row: List[float] = []
        for name in self.variables:
            value = record.get(name)
            if name in self.categories:
                row.extend(1.0 if value is not None and str(value) == c else 0.0
                           for c in self.categories[name])
            else:
                row.append(float(value) if _is_number(value) and math.isfinite(value) else 0.0)
        return row

    def transform(self, records: Sequence[Mapping[str, Any]]) -> np.ndarray:
        return np.array([self.transform_one(r) for r in records], dtype=float).reshape(
            len(records), len(self.columns))


def encode_clinical(records: Sequence[Mapping[str, Any]]) -> Tuple[List[str], np.ndarray]:
    """Fit an encoder on records and return (column names, encoded matrix)."""
    encoder = ClinicalEncoder().fit(records)
    return [name for name, _ in encoder.columns], encoder.transform(records)


# ----------------------------------------------------------------------------
# Feature matrix
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ColumnMeta:
    name: str
    block: str
    origin: Union[int, str]  # time index k, or "clinical"
    kind: str = "numeric"  # numeric | one-hot


@dataclass
class FeatureMatrix:
    rows: List[str]
    columns: List[ColumnMeta]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.rows), len(self.columns))
        names = self.names
        if len(set(names)) != len(names):
            raise ShapeError("feature column names must be unique")

    @property
    def names(self) -> List[str]:
        return [c.name for c in self.columns]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def take(self, indices: Sequence[int]) -> "FeatureMatrix":
        indices = list(indices)
        return FeatureMatrix([self.rows[i] for i in indices], list(self.columns),
                             self.values[indices])

    def with_values(self, values: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(list(self.rows), list(self.columns), values)

    def to_csv(self) -> bytes:
        frame = pd.DataFrame(self.values, columns=self.names)
        frame.insert(0, "lesion", self.rows)
        return frame.to_csv(index=False, lineterminator="\n", float_format="%.17g").encode("utf-8")


@dataclass(frozen=True)
class FeatureConfig:
    include: Tuple[str, ...] = ("volume", "relative", "clinical")
    impute: bool = True

    def __post_init__(self):
        object.__setattr__(self, "include", tuple(self.include))
        unknown = [b for b in self.include if b not in BLOCKS]
        if unknown:
            raise ShapeError(f"unknown feature block(s) {unknown}", f"known: {', '.join(BLOCKS)}")


def _point_names(trajs: Sequence[ResampledTrajectory], horizon: int, block: str) -> List[str]:
    """Per-point feature names of a block, checked present for every lesion and point."""
    names = set()
    for res in trajs:
        for k in range(horizon + 1):
            names.update(n for n in res.features[k]
                         if n.startswith(SHAPE_PREFIX) == (block == "shape"))
    names = sorted(names)
    if not names:
        raise InsufficientDataError(f"no {block} features present in any lesion")
    lacking = [
        res.key for res in trajs
        if any(n not in res.features[k] for k in range(horizon + 1) for n in names)
    ]
    if lacking:
        raise InsufficientDataError(f"{block} features missing", ", ".join(lacking))
    return names


def assemble(trajs: Sequence[ResampledTrajectory],
             horizon: int,
             include: Sequence[str] = FeatureConfig.include,
             encoder: Optional[ClinicalEncoder] = None) -> FeatureMatrix:
    """
    Concatenate per-time-point blocks for t0..t_horizon, then the clinical block.

    Args:
        trajs: Resampled (and imputed) trajectories
        horizon: N in [0, 5]; points t0..tN are used
        include: Subset of BLOCKS
        encoder: Frozen clinical encoder; fitted on trajs when None

    Returns:
        FeatureMatrix with rows keyed by lesion
    """
    config = FeatureConfig(include=tuple(include))
    if not 0 <= horizon <= MAX_HORIZON:
        raise ShapeError(f"horizon must be in [0, {MAX_HORIZON}]", f"horizon={horizon}")

    named = {}
    for block in ("shape", "injected"):
        if block in config.include:
            named[block] = _point_names(trajs, horizon, block)

    columns: List[ColumnMeta] = []
    for k in range(horizon + 1):
        for block in ("volume", "relative", "shape", "injected"):
            if block not in config.include:
                continue
            if block in ("volume", "relative"):
                columns.append(ColumnMeta(f"{block}@t{k}", block, k))
            else:
                columns.extend(ColumnMeta(f"{n}@t{k}", block, k) for n in named[block])

    clinical = np.zeros((len(trajs), 0))
    if "clinical" in config.include:
        if encoder is None:
            encoder = ClinicalEncoder().fit([res.clinical for res in trajs])
        columns.extend(ColumnMeta(name, "clinical", "clinical", kind) for name, kind in encoder.columns)
        clinical = encoder.transform([res.clinical for res in trajs])

    rows = []
    for res in trajs:
        row = []
        for k in range(horizon + 1):
            for block in ("volume", "relative", "shape", "injected"):
                if block not in config.include:
                    continue
                if block == "volume":
                    row.append(res.volumes_mm3[k])
                elif block == "relative":
                    row.append(res.normalized[k])
                else:
                    row.extend(res.features[k][n] for n in named[block])
        rows.append(row)

    point_values = np.array(rows, dtype=float).reshape(len(trajs), len(columns) - clinical.shape[1])
    values = np.hstack([point_values, clinical])
    if not np.all(np.isfinite(values)):
        raise ShapeError("assembled features contain non-finite values")
    return FeatureMatrix([res.key for res in trajs], columns, values)


# ----------------------------------------------------------------------------
# Fold-wise standardization
# ----------------------------------------------------------------------------

@dataclass
class StandardizationParams:
    names: List[str]
    mean: np.ndarray
    std: np.ndarray
    constant: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.constant is None:
            self.constant = self.std == 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            name: {"mean": float(m), "std": float(s), "constant": bool(c)}
            for name, m, s, c in zip(self.names, self.mean, self.std, self.constant)
        }


FitHook = Callable[[Sequence[str]], None]


def standardize_fit(matrix: FeatureMatrix,
                    rows: Optional[Sequence[int]] = None,
                    hook: Optional[FitHook] = None) -> StandardizationParams:
    """
    Per-column mean and population standard deviation over training rows.

    Args:
        matrix: Full feature matrix
        rows: Indices of the training rows (all rows when None)
        hook: Called with the lesion keys of every row read by the fit
    """
    train = matrix if rows is None else matrix.take(rows)
    if not train.rows:
        raise InsufficientDataError("standardization needs at least one training row")
    if hook is not None:
        hook(list(train.rows))
    mean = train.values.mean(axis=0)
    # rounding leaves a tiny nonzero std on constant columns such as 0.1
    constant = np.ptp(train.values, axis=0) == 0
    std = np.where(constant, 0.0, train.values.std(axis=0))
    return StandardizationParams(list(matrix.names), mean, std, constant)


def standardize_apply(params: StandardizationParams, matrix: FeatureMatrix) -> FeatureMatrix:
    """z-score with the fitted parameters; constant columns map to 0."""
    if params.names != matrix.names:
        raise ShapeError("standardization columns do not match the matrix")
    safe = np.where(params.constant, 1.0, params.std)
    z = (matrix.values - params.mean) / safe
    z[:, params.constant] = 0.0
    return matrix.with_values(z)

