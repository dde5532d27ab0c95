"""
Cross-validated evaluation of the response predictors.

For every fold: standardization is fitted on the training rows only, the
method is trained on those rows, and the test rows are scored. Test scores are
pooled over folds and summarized per horizon by AUC with a bootstrap CI.
A GENERAL graph model is trained once per fold and scored at every horizon;
the other methods train once per horizon per fold.
"""

import logging
import time
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from analysis.featspace import (
    ClinicalEncoder,
    FeatureConfig,
    FeatureMatrix,
    MAX_HORIZON,
    assemble,
    impute_noisy_points,
    standardize_apply,
    standardize_fit,
)
from evaluation.evalstat import (
    EvalOutcome,
    FoldPlan,
    Task,
    auc,
    bootstrap_ci,
    make_fold_plan,
    make_targets,
    permutation_test,
)
from models import boost, tgat
from runtime.workers import parallel_map, spawn_seeds
from trajcore.errors import EvaluationError
from trajcore.response import DEFAULT_CRITERIA, final_category
from trajcore.types import ResampledTrajectory, ResponseCategory, ResponseCriteria

logger = logging.getLogger(__name__)


class Method(Enum):
    GBDT = "gbdt"
    GAT_SPECIFIC = "gat-specific"
    GAT_GENERAL = "gat-general"


@dataclass(frozen=True)
class EvalConfig:
    n_folds: int = 5
    grouped: bool = True
    n_boot: int = 1000
    n_perm: int = 1000
    horizons: Tuple[int, ...] = tuple(range(MAX_HORIZON + 1))

    def __post_init__(self):
        object.__setattr__(self, "horizons", tuple(int(h) for h in self.horizons))
        if self.n_folds < 2:
            raise EvaluationError("n_folds must be >= 2", f"n_folds={self.n_folds}")
        if self.n_boot < 1 or self.n_perm < 1:
            raise EvaluationError("n_boot and n_perm must be >= 1")
        if not self.horizons or any(not 0 <= h <= MAX_HORIZON for h in self.horizons):
            raise EvaluationError(f"horizons must lie in [0, {MAX_HORIZON}]", str(self.horizons))


@dataclass
class Cohort:
    """Imputed grid trajectories with their t6 categories."""
    trajectories: List[ResampledTrajectory]
    categories: List[ResponseCategory]

    @property
    def keys(self) -> List[str]:
        return [t.key for t in self.trajectories]

    @property
    def groups(self) -> List[str]:
        return [t.patient_id for t in self.trajectories]


def prepare_cohort(resampled: Sequence[ResampledTrajectory], impute: bool = True,
                   criteria: ResponseCriteria = DEFAULT_CRITERIA) -> Cohort:
    """Impute noisy points, then classify the t6 response of every lesion."""
    trajectories = [impute_noisy_points(r) for r in resampled] if impute else list(resampled)
    return Cohort(trajectories, [final_category(t, criteria) for t in trajectories])


StandardizationHook = Callable[[Sequence[str]], None]


def _standardized(matrix: FeatureMatrix, train: np.ndarray,
                  hook: Optional[StandardizationHook]) -> FeatureMatrix:
    params = standardize_fit(matrix, train, hook)
    return standardize_apply(params, matrix)


def _run_fold(method: Method, matrices: Dict[int, FeatureMatrix], labels: np.ndarray,
              train: np.ndarray, test: np.ndarray, horizons: Sequence[int], seed: int,
              gbdt_cfg: boost.GbdtConfig, train_cfg: tgat.TrainConfig,
              hook: Optional[StandardizationHook]) -> Dict[int, np.ndarray]:
    """Test-row scores per horizon for one fold."""
    scores: Dict[int, np.ndarray] = {}
    if method is Method.GBDT:
        for h in horizons:
            X = _standardized(matrices[h], train, hook)
            model = boost.fit(X.take(train), labels[train],
                              replace(gbdt_cfg, seed=seed))
            scores[h] = boost.predict_proba(model, X.take(test))
    elif method is Method.GAT_SPECIFIC:
        for h in horizons:
            X = _standardized(matrices[h], train, hook)
            graphs = tgat.graphs_from_matrix(X, labels)
            cfg = replace(train_cfg, mode=tgat.TrainMode.TIME_SPECIFIC, horizon=h, seed=seed)
            result = tgat.train([graphs[i] for i in train], cfg)
            scores[h] = tgat.predict(result.params, [graphs[i] for i in test], h)
    else:
        X = _standardized(matrices[MAX_HORIZON], train, hook)
        graphs = tgat.graphs_from_matrix(X, labels)
        cfg = replace(train_cfg, mode=tgat.TrainMode.GENERAL, seed=seed)
        result = tgat.train([graphs[i] for i in train], cfg)
        for h in horizons:
            scores[h] = tgat.predict(result.params, [graphs[i] for i in test], h)
    return scores


def run_protocol(cohort: Cohort, task, method, eval_cfg: EvalConfig = EvalConfig(),
                 feature_cfg: FeatureConfig = FeatureConfig(),
                 gbdt_cfg: boost.GbdtConfig = boost.GbdtConfig(),
                 train_cfg: tgat.TrainConfig = tgat.TrainConfig(),
                 seed: int = 0, threads: int = 1,
                 hook: Optional[StandardizationHook] = None,
                 plan: Optional[FoldPlan] = None) -> List[EvalOutcome]:
    """
    Cross-validate one method over the configured horizons.

    Args:
        cohort: Prepared cohort (see prepare_cohort)
        task: Task or its value ('cr', 'resp')
        method: Method or its value ('gbdt', 'gat-specific', 'gat-general')
        eval_cfg: Folds, bootstrap/permutation counts and horizons
        feature_cfg: Feature blocks to assemble
        gbdt_cfg: Boosting hyperparameters
        train_cfg: Graph-model training hyperparameters
        seed: Master seed for folds, models and bootstrap
        threads: Worker cap; folds run concurrently
        hook: Receives the lesion keys read by every standardization fit
        plan: Precomputed fold plan (made from seed otherwise)

    Returns:
        One EvalOutcome per horizon, scores pooled in cohort order
    """
    task, method = Task(task), Method(method)
    keys = cohort.keys
    labels = make_targets(cohort.categories, task)
    if plan is None:
        plan = make_fold_plan(keys, labels, cohort.groups, eval_cfg.n_folds, seed, eval_cfg.grouped)
    splits = plan.splits(keys)

    encoder = ClinicalEncoder().fit([t.clinical for t in cohort.trajectories])
    needed = {MAX_HORIZON} if method is Method.GAT_GENERAL else set(eval_cfg.horizons)
    matrices = {h: assemble(cohort.trajectories, h, feature_cfg.include, encoder) for h in needed}

    fold_seeds = spawn_seeds(seed, plan.n_folds)
    started = time.perf_counter()

    def run(fold: int) -> Dict[int, np.ndarray]:
        train, test = splits[fold]
        if len(test) == 0:
            raise EvaluationError("empty test fold", f"fold {fold}")
        result = _run_fold(method, matrices, labels, train, test, eval_cfg.horizons,
                           fold_seeds[fold], gbdt_cfg, train_cfg, hook)
        logger.info("%s %s: fold %d/%d done", method.value, task.value, fold + 1, plan.n_folds)
        return result

    per_fold = parallel_map(run, range(plan.n_folds), threads)
    elapsed = time.perf_counter() - started

    ci_seeds = spawn_seeds(seed + 1, len(eval_cfg.horizons))
    outcomes = []
    for h, ci_seed in zip(eval_cfg.horizons, ci_seeds):
        pooled = np.full(len(keys), np.nan)
        for (_, test), fold_scores in zip(splits, per_fold):
            pooled[test] = fold_scores[h]
        if np.isnan(pooled).any():
            raise EvaluationError("some lesions were never scored", f"horizon {h}")
        outcomes.append(EvalOutcome(
            task=task,
            method=method.value,
            horizon=h,
            keys=list(keys),
            labels=labels,
            scores=pooled,
            auc=auc(labels, pooled),
            ci95=bootstrap_ci(labels, pooled, eval_cfg.n_boot, ci_seed),
            runtime={"seconds": elapsed},
        ))
    return outcomes


PValueTable = Dict[int, Dict[str, float]]


def compare_methods(outcomes: Dict[str, Sequence[EvalOutcome]], n_perm: int = 1000,
                    seed: int = 0) -> PValueTable:
    """
    Permutation p-values for every method pair at every shared horizon.

    Returns:
        {horizon: {"method_a|method_b": p}}
    """
    names = sorted(outcomes)
    by_horizon: Dict[int, Dict[str, EvalOutcome]] = {}
    for name in names:
        for outcome in outcomes[name]:
            by_horizon.setdefault(outcome.horizon, {})[name] = outcome

    table: PValueTable = {}
    for h in sorted(by_horizon):
        row = {}
        present = [n for n in names if n in by_horizon[h]]
        for i, a in enumerate(present):
            for b in present[i + 1:]:
                oa, ob = by_horizon[h][a], by_horizon[h][b]
                if oa.keys != ob.keys:
                    raise EvaluationError("outcomes are not aligned on the same lesions",
                                          f"{a} vs {b} at horizon {h}")
                row[f"{a}|{b}"] = permutation_test(oa.labels, oa.scores, ob.scores, n_perm,
                                                   seed + h)
        table[h] = row
    return table
