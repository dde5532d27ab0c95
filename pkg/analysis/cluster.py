"""
Gaussian-mixture clustering of normalized trajectories.

Mixture model with diagonal covariances fitted by EM on the normalized grid
values t1..t6 (t0 is identically 1). Each restart starts from k-means++
centres; the restart with the highest final log-likelihood wins.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from runtime.workers import parallel_map, spawn_seeds
from trajcore.errors import DegenerateMixtureError, ShapeError
from trajcore.flows import category_histogram
from trajcore.response import classify_response
from trajcore.types import CATEGORY_ORDER, ResampledTrajectory, ResponseCategory

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClusterConfig:
    k: int = 5
    n_init: int = 10
    max_iter: int = 500
    tol: float = 1e-6
    var_floor: float = 1e-6
    max_reinit: int = 3

    def __post_init__(self):
        if self.k < 1 or self.n_init < 1 or self.max_iter < 1:
            raise ShapeError("k, n_init and max_iter must be >= 1")
        if self.tol <= 0 or self.var_floor <= 0:
            raise ShapeError("tol and var_floor must be > 0")


@dataclass
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: float
    seed: int
    n_iter: int = 0
    converged: bool = False
    best_restart: int = 0
    # log-likelihood per EM iteration for every restart (None = restart failed)
    histories: List[Optional[List[float]]] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "k": self.k,
            "dim": self.dim,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "log_likelihood": self.log_likelihood,
            "seed": self.seed,
            "n_iter": self.n_iter,
            "converged": self.converged,
            "best_restart": self.best_restart,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GmmModel":
        return cls(
            weights=np.asarray(data["weights"], dtype=float),
            means=np.asarray(data["means"], dtype=float),
            variances=np.asarray(data["variances"], dtype=float),
            log_likelihood=float(data["log_likelihood"]),
            seed=int(data["seed"]),
            n_iter=int(data.get("n_iter", 0)),
            converged=bool(data.get("converged", False)),
            best_restart=int(data.get("best_restart", 0)),
        )


@dataclass(frozen=True)
class ClusterAssignment:
    lesion_id: str
    cluster: int
    responsibilities: np.ndarray


def cluster_matrix(resampled: Sequence[ResampledTrajectory]) -> np.ndarray:
    """Normalized t1..t6 values, one row per lesion."""
    return np.array([res.normalized[1:] for res in resampled], dtype=float).reshape(len(resampled), -1)


def _log_joint(data: np.ndarray, weights: np.ndarray, means: np.ndarray,
               variances: np.ndarray) -> np.ndarray:
    """log(pi_k) + log N(x_i | mu_k, diag(var_k)), shape (N, K)."""
    d = data.shape[1]
    log_det = np.sum(np.log(variances), axis=1)
    diff = data[:, None, :] - means[None, :, :]
    maha = np.sum(diff * diff / variances[None, :, :], axis=2)
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    return log_w[None, :] - 0.5 * (d * np.log(2.0 * np.pi) + log_det[None, :] + maha)


def _kmeans_pp(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(data)
    centers = [data[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(((data[:, None, :] - np.array(centers)[None, :, :]) ** 2).sum(axis=2), axis=1)
        total = d2.sum()
        if total > 0:
            centers.append(data[rng.choice(n, p=d2 / total)])
        else:
            centers.append(data[rng.integers(n)])
    return np.array(centers)


def _init_params(data: np.ndarray, k: int, var_floor: float, rng: np.random.Generator):
    centers = _kmeans_pp(data, k, rng)
    labels = np.argmin(((data[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2), axis=1)
    global_var = np.maximum(data.var(axis=0), var_floor)
    counts = np.bincount(labels, minlength=k).astype(float)
    means = centers.copy()
    variances = np.tile(global_var, (k, 1))
    for c in range(k):
        members = data[labels == c]
        if len(members):
            means[c] = members.mean(axis=0)
            variances[c] = np.maximum(members.var(axis=0), var_floor)
    weights = np.maximum(counts, 1.0)
    return weights / weights.sum(), means, variances


def _m_step(data: np.ndarray, resp: np.ndarray, nk: np.ndarray, var_floor: float):
    means = (resp.T @ data) / nk[:, None]
    diff = data[:, None, :] - means[None, :, :]
    variances = np.einsum("nk,nkd->kd", resp, diff * diff) / nk[:, None]
    return means, np.maximum(variances, var_floor)


def _fit_once(data: np.ndarray, cfg: ClusterConfig, seed: int):
    """One EM restart; returns (weights, means, variances, history, converged)."""
    rng = np.random.default_rng(seed)
    n = len(data)
    weights, means, variances = _init_params(data, cfg.k, cfg.var_floor, rng)
    global_var = np.maximum(data.var(axis=0), cfg.var_floor)
    history: List[float] = []
    reinits = 0
    converged = False

    for _ in range(cfg.max_iter):
        log_p = _log_joint(data, weights, means, variances)
        lse = logsumexp(log_p, axis=1)
        ll = float(lse.sum())
        if history and abs(ll - history[-1]) <= cfg.tol * abs(history[-1]):
            history.append(ll)
            converged = True
            break
        history.append(ll)

        resp = np.exp(log_p - lse[:, None])
        nk = resp.sum(axis=0)
        weights = nk / nk.sum()

        degenerate = np.flatnonzero(weights < 1.0 / (10.0 * n))
        if degenerate.size:
            reinits += 1
            if reinits > cfg.max_reinit:
                raise DegenerateMixtureError("mixture component collapsed",
                                             f"seed={seed}, re-initialisations={cfg.max_reinit}")
            means, variances = _m_step(data, resp, np.where(nk > 0, nk, 1.0), cfg.var_floor)
            for c in degenerate:
                means[c] = data[rng.integers(n)]
                variances[c] = global_var
                weights[c] = 1.0 / cfg.k
            weights = weights / weights.sum()
            logger.info("re-initialised %d degenerate component(s) (seed %d, attempt %d)",
                        degenerate.size, seed, reinits)
            # the likelihood sequence restarts from the re-initialised parameters
            history = []
            continue

        means, variances = _m_step(data, resp, nk, cfg.var_floor)

    return weights, means, variances, history, converged


def fit_gmm(data: np.ndarray, k: int = 5, n_init: int = 10, max_iter: int = 500,
            tol: float = 1e-6, seed: int = 0, threads: int = 1,
            config: Optional[ClusterConfig] = None) -> GmmModel:
    """
    Fit a diagonal-covariance mixture with EM, best of n_init restarts.

    Args:
        data: (N, D) normalized trajectories
        k: Number of components
        n_init: Independent restarts
        max_iter: EM iteration cap per restart
        tol: Relative log-likelihood improvement threshold
        seed: Master seed; restart seeds are spawned from it
        threads: Worker cap for restarts
        config: Overrides k/n_init/max_iter/tol when given

    Returns:
        GmmModel of the best restart (ties to the lowest restart index)
    """
    cfg = config or ClusterConfig(k=k, n_init=n_init, max_iter=max_iter, tol=tol)
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise ShapeError("data must be a 2-D array", f"ndim={data.ndim}")
    if len(data) <= cfg.k:
        raise ShapeError("need more samples than components", f"N={len(data)}, K={cfg.k}")
    if not np.all(np.isfinite(data)):
        raise ShapeError("data contains non-finite values")

    seeds = spawn_seeds(seed, cfg.n_init)

    def run(index):
        try:
            return _fit_once(data, cfg, seeds[index])
        except DegenerateMixtureError as e:
            logger.warning("restart %d abandoned: %s", index, e)
            return None

    results = parallel_map(run, range(cfg.n_init), threads)
    best, best_ll = None, -np.inf
    for index, result in enumerate(results):
        if result is not None and result[3] and result[3][-1] > best_ll:
            best, best_ll = index, result[3][-1]
    if best is None:
        raise DegenerateMixtureError("every restart collapsed", f"n_init={cfg.n_init}")

    weights, means, variances, history, converged = results[best]
    logger.info("GMM K=%d: best restart %d, log-likelihood %.4f after %d iterations",
                cfg.k, best, best_ll, len(history))
    return GmmModel(
        weights=weights,
        means=means,
        variances=variances,
        log_likelihood=float(best_ll),
        seed=seed,
        n_iter=len(history),
        converged=converged,
        best_restart=best,
        histories=[None if r is None else r[3] for r in results],
    )


def responsibilities(model: GmmModel, data: np.ndarray) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    if data.size == 0:
        return np.zeros((0, model.k))
    if data.ndim != 2 or data.shape[1] != model.dim:
        raise ShapeError("data dimension does not match the model",
                         f"got {data.shape}, model dim {model.dim}")
    log_p = _log_joint(data, model.weights, model.means, model.variances)
    resp = np.exp(log_p - logsumexp(log_p, axis=1, keepdims=True))
    return resp / resp.sum(axis=1, keepdims=True)


def assign(model: GmmModel, data: np.ndarray,
           lesion_ids: Optional[Sequence[str]] = None) -> List[ClusterAssignment]:
    """Posterior responsibilities and hard labels (argmax, ties to the lowest index)."""
    resp = responsibilities(model, data)
    if lesion_ids is None:
        lesion_ids = [str(i) for i in range(len(resp))]
    if len(lesion_ids) != len(resp):
        raise ShapeError("lesion_ids and data rows differ in length")
    return [ClusterAssignment(lid, int(np.argmax(r)), r) for lid, r in zip(lesion_ids, resp)]


@dataclass
class ClusterProfile:
    cluster: int
    size: int
    mean_trajectory: List[float]  # t0..t6, t0 = 1
    histogram: Dict[str, int]  # t6 response counts


def _t6_category(row: np.ndarray) -> ResponseCategory:
    volumes = [1.0, *row.tolist()]
    return classify_response(1.0, volumes[:-1], volumes[-1])


def cluster_profiles(model: GmmModel, data: np.ndarray,
                     assignments: Sequence[ClusterAssignment],
                     categories: Optional[Sequence[ResponseCategory]] = None) -> List[ClusterProfile]:
    """
    Mean member trajectory and t6 response histogram per cluster.

    When categories are not given, the t6 category is classified from each
    normalized row (thresholds are relative, so baseline 1 is exact).
    Clusters without members are omitted with a warning.
    """
    data = np.asarray(data, dtype=float)
    if len(assignments) != len(data):
        raise ShapeError("assignments and data rows differ in length")
    if categories is None:
        categories = [_t6_category(row) for row in data]
    labels = np.array([a.cluster for a in assignments], dtype=int)

    profiles = []
    for c in range(model.k):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            logger.warning("cluster %d has no members; profile omitted", c)
            continue
        mean = data[members].mean(axis=0)
        profiles.append(ClusterProfile(
            cluster=c,
            size=int(members.size),
            mean_trajectory=[1.0, *(float(v) for v in mean)],
            histogram=category_histogram([categories[i] for i in members]),
        ))
    return profiles


def cluster_report(model: GmmModel, assignments: Sequence[ClusterAssignment],
                   profiles: Sequence[ClusterProfile]) -> Dict[str, Any]:
    """JSON-ready bundle of the model, assignments and profiles."""
    return {
        "model": model.to_dict(),
        "categories": [c.value for c in CATEGORY_ORDER],
        "assignments": [
            {"lesion": a.lesion_id, "cluster": a.cluster,
             "responsibilities": [float(v) for v in a.responsibilities]}
            for a in assignments
        ],
        "profiles": [
            {"cluster": p.cluster, "size": p.size, "mean_trajectory": p.mean_trajectory,
             "t6_histogram": p.histogram}
            for p in profiles
        ],
    }
