"""
Temporal lesion graphs and a single-layer graph-attention classifier.

Nodes are grid time points t0..tN of one lesion. Every node attends over its
predecessors and itself (edges point from later to earlier scans), with the
normalized time delta entering the attention logit:

    z_i   = W^T x_i
    s_ij  = a_l . z_i + a_r . z_j + a_e * delta_ij
    alpha = softmax_j(LeakyReLU(s_ij))          j <= i
    h_i   = ELU(sum_j alpha_ij z_j)
    p     = sigmoid(head_w . mean_i(h_i) + head_b)

Graphs are handled as dense padded batches. Cropping to a shorter horizon is
done by masking nodes, which gives the same outputs as building the shorter
graph from scratch.
"""

import io
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import expit
from sklearn.model_selection import train_test_split

from analysis.featspace import FeatureMatrix, MAX_HORIZON
from evaluation.evalstat import auc
from models.boost import class_weights
from trajcore.errors import ModelError, ShapeError
from trajcore.types import GRID_SPACING_DAYS

logger = logging.getLogger(__name__)

DELTA_SCALE_DAYS = 360.0


# ----------------------------------------------------------------------------
# Graphs
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class TemporalGraph:
    """Directed-to-past graph over the time points of one lesion."""
    time_index: Tuple[int, ...]
    features: np.ndarray  # (n_nodes, d)
    edges: Tuple[Tuple[int, int, float], ...]  # (src, dst, delta), src >= dst
    label: int
    key: str = ""

    @property
    def n_nodes(self) -> int:
        return len(self.time_index)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def horizon(self) -> int:
        return max(self.time_index)

    @property
    def n_temporal_edges(self) -> int:
        return sum(1 for src, dst, _ in self.edges if src != dst)


def _edges_for(time_index: Sequence[int]) -> Tuple[Tuple[int, int, float], ...]:
    edges = []
    for src, k_src in enumerate(time_index):
        for dst, k_dst in enumerate(time_index):
            if k_src > k_dst:
                edges.append((src, dst, GRID_SPACING_DAYS * (k_src - k_dst) / DELTA_SCALE_DAYS))
        edges.append((src, src, 0.0))
    return tuple(edges)


def build_graph(point_features: Sequence[Sequence[float]],
                clinical: Sequence[float] = (),
                label: int = 0,
                key: str = "") -> TemporalGraph:
    """
    Build the graph of time points t0..tN.

    Args:
        point_features: N+1 per-point feature vectors of equal length
        clinical: Clinical vector replicated onto every node
        label: Binary target
        key: Lesion identifier

    Returns:
        TemporalGraph with all later->earlier edges plus one self-loop per node
    """
    n = len(point_features)
    if not 1 <= n <= MAX_HORIZON + 1:
        raise ShapeError(f"graphs hold 1..{MAX_HORIZON + 1} time points", f"got {n}")
    lengths = {len(p) for p in point_features}
    if len(lengths) != 1:
        raise ShapeError("per-point feature vectors differ in length", key or str(sorted(lengths)))
    clinical = np.asarray(clinical, dtype=float).ravel()
    points = np.asarray(point_features, dtype=float).reshape(n, -1)
    features = np.hstack([points, np.tile(clinical, (n, 1))])
    time_index = tuple(range(n))
    return TemporalGraph(time_index, features, _edges_for(time_index), int(label), key)


def crop_graph(g: TemporalGraph, horizon: int) -> TemporalGraph:
    """Keep nodes t0..t_horizon."""
    if horizon < 0 or horizon > g.horizon:
        raise ShapeError("horizon exceeds the nodes available in the graph",
                         f"{g.key or 'graph'}: horizon {horizon}, available {g.horizon}")
    keep = [i for i, k in enumerate(g.time_index) if k <= horizon]
    time_index = tuple(g.time_index[i] for i in keep)
    return TemporalGraph(time_index, g.features[keep], _edges_for(time_index), g.label, g.key)


def graphs_from_matrix(matrix: FeatureMatrix, labels: Sequence[int]) -> List[TemporalGraph]:
    """
    Split an assembled feature matrix into one graph per row.

    Columns with a time origin k become node k's features; clinical columns
    are replicated onto every node.
    """
    if len(labels) != len(matrix.rows):
        raise ShapeError("labels and matrix rows differ in length")
    points = sorted({c.origin for c in matrix.columns if c.origin != "clinical"})
    if points != list(range(len(points))) or not points:
        raise ShapeError("per-point columns must cover t0..tN contiguously", str(points))
    by_point = [[j for j, c in enumerate(matrix.columns) if c.origin == k] for k in points]
    if len({len(cols) for cols in by_point}) != 1:
        raise ShapeError("time points carry different feature counts")
    clinical_cols = [j for j, c in enumerate(matrix.columns) if c.origin == "clinical"]

    graphs = []
    for r, key in enumerate(matrix.rows):
        row = matrix.values[r]
        graphs.append(build_graph([row[cols] for cols in by_point], row[clinical_cols],
                                  labels[r], key))
    return graphs


# ----------------------------------------------------------------------------
# Parameters
# ----------------------------------------------------------------------------

class TrainMode(Enum):
    TIME_SPECIFIC = "time_specific"
    GENERAL = "general"


@dataclass
class GatParams:
    W: np.ndarray  # (d, h)
    a: np.ndarray  # (2h + 1,) = a_l | a_r | a_e
    head_w: np.ndarray  # (h,)
    head_b: float = 0.0
    leaky_slope: float = 0.2
    mode: TrainMode = TrainMode.GENERAL
    horizon: Optional[int] = None  # horizon served by a TIME_SPECIFIC model

    @property
    def hidden(self) -> int:
        return self.W.shape[1]

    @property
    def a_l(self) -> np.ndarray:
        return self.a[:self.hidden]

    @property
    def a_r(self) -> np.ndarray:
        return self.a[self.hidden:2 * self.hidden]

    @property
    def a_e(self) -> float:
        return float(self.a[2 * self.hidden])

    @classmethod
    def init(cls, dim: int, hidden: int = 16, rng: Optional[np.random.Generator] = None,
             leaky_slope: float = 0.2) -> "GatParams":
        """Glorot-uniform weights, zero head bias."""
        rng = rng or np.random.default_rng(0)

        def glorot(shape, fan_in, fan_out):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-limit, limit, size=shape)

        return cls(
            W=glorot((dim, hidden), dim, hidden),
            a=glorot((2 * hidden + 1,), 2 * hidden + 1, 1),
            head_w=glorot((hidden,), hidden, 1),
            head_b=0.0,
            leaky_slope=leaky_slope,
        )

    def arrays(self) -> Dict[str, np.ndarray]:
        return {"W": self.W, "a": self.a, "head_w": self.head_w,
                "head_b": np.array([self.head_b])}

    def with_arrays(self, arrays: Dict[str, np.ndarray]) -> "GatParams":
        return replace(self, W=arrays["W"].copy(), a=arrays["a"].copy(),
                       head_w=arrays["head_w"].copy(), head_b=float(arrays["head_b"][0]))

    def copy(self) -> "GatParams":
        return self.with_arrays(self.arrays())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "W": self.W.tolist(),
            "a": self.a.tolist(),
            "head_w": self.head_w.tolist(),
            "head_b": self.head_b,
            "leaky_slope": self.leaky_slope,
            "mode": self.mode.value,
            "horizon": self.horizon,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GatParams":
        return cls(
            W=np.asarray(data["W"], dtype=float),
            a=np.asarray(data["a"], dtype=float),
            head_w=np.asarray(data["head_w"], dtype=float),
            head_b=float(data["head_b"]),
            leaky_slope=float(data.get("leaky_slope", 0.2)),
            mode=TrainMode(data.get("mode", TrainMode.GENERAL.value)),
            horizon=data.get("horizon"),
        )


# ----------------------------------------------------------------------------
# Dense batched forward / backward
# ----------------------------------------------------------------------------

@dataclass
class _Batch:
    X: np.ndarray  # (B, n, d)
    edge: np.ndarray  # (B, n, n) bool, row i attends over column j
    delta: np.ndarray  # (B, n, n)
    time: np.ndarray  # (B, n) time index, -1 for padding

    def cropped(self, horizons: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(attention mask, node mask) for per-graph horizons."""
        node = (self.time >= 0) & (self.time <= horizons[:, None])
        mask = self.edge & node[:, :, None] & node[:, None, :]
        eye = np.eye(self.time.shape[1], dtype=bool)[None, :, :]
        # rows outside the crop keep a self-loop so their softmax stays defined
        mask |= eye & ~node[:, :, None]
        return mask, node


def _dense(graphs: Sequence[TemporalGraph]) -> _Batch:
    if not graphs:
        raise ShapeError("empty graph batch")
    dims = {g.dim for g in graphs}
    if len(dims) != 1:
        raise ShapeError("graphs differ in node feature dimension", str(sorted(dims)))
    b, n, d = len(graphs), max(g.n_nodes for g in graphs), dims.pop()
    X = np.zeros((b, n, d))
    edge = np.zeros((b, n, n), dtype=bool)
    delta = np.zeros((b, n, n))
    time = np.full((b, n), -1, dtype=int)
    for i, g in enumerate(graphs):
        X[i, :g.n_nodes] = g.features
        time[i, :g.n_nodes] = g.time_index
        for src, dst, dlt in g.edges:
            edge[i, src, dst] = True
            delta[i, src, dst] = dlt
    return _Batch(X, edge, delta, time)


def _forward(params: GatParams, batch: _Batch, mask: np.ndarray, node: np.ndarray):
    Z = batch.X @ params.W
    S = (Z @ params.a_l)[:, :, None] + (Z @ params.a_r)[:, None, :] + params.a_e * batch.delta
    E = np.where(S > 0, S, params.leaky_slope * S)
    E = np.where(mask, E, -np.inf)
    E = E - E.max(axis=2, keepdims=True)
    expE = np.exp(E)
    alpha = expE / expE.sum(axis=2, keepdims=True)
    U = alpha @ Z
    H = np.where(U > 0, U, np.expm1(np.minimum(U, 0.0)))
    counts = node.sum(axis=1).astype(float)
    readout = (H * node[:, :, None]).sum(axis=1) / counts[:, None]
    logit = readout @ params.head_w + params.head_b
    cache = {"Z": Z, "S": S, "alpha": alpha, "U": U, "readout": readout,
             "counts": counts, "node": node}
    return logit, cache


def _backward(params: GatParams, batch: _Batch, cache, dlogit: np.ndarray) -> Dict[str, np.ndarray]:
    """Gradients summed over the batch for upstream dL/dlogit."""
    Z, S, alpha, U = cache["Z"], cache["S"], cache["alpha"], cache["U"]
    node, counts = cache["node"], cache["counts"]

    d_head_w = dlogit @ cache["readout"]
    d_head_b = dlogit.sum()
    d_readout = dlogit[:, None] * params.head_w[None, :]
    dH = (node[:, :, None] / counts[:, None, None]) * d_readout[:, None, :]
    dU = dH * np.where(U > 0, 1.0, np.exp(np.minimum(U, 0.0)))
    dZ = np.transpose(alpha, (0, 2, 1)) @ dU
    d_alpha = dU @ np.transpose(Z, (0, 2, 1))
    dE = alpha * (d_alpha - (alpha * d_alpha).sum(axis=2, keepdims=True))
    dS = dE * np.where(S > 0, 1.0, params.leaky_slope)

    row, col = dS.sum(axis=2), dS.sum(axis=1)
    d_a_l = np.einsum("bi,bih->h", row, Z)
    d_a_r = np.einsum("bj,bjh->h", col, Z)
    d_a_e = float((dS * batch.delta).sum())
    dZ = dZ + row[:, :, None] * params.a_l + col[:, :, None] * params.a_r
    dW = np.einsum("bnd,bnh->dh", batch.X, dZ)
    return {
        "W": dW,
        "a": np.concatenate([d_a_l, d_a_r, [d_a_e]]),
        "head_w": d_head_w,
        "head_b": np.array([d_head_b]),
    }


def _weighted_bce(logit: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    return w * (np.logaddexp(0.0, logit) - y * logit)


def _full_horizons(batch: _Batch) -> np.ndarray:
    return batch.time.max(axis=1)


def forward(params: GatParams, g: TemporalGraph) -> Tuple[float, np.ndarray]:
    """
    Probability and attention matrix of one graph.

    attention[i, j] is the weight node i puts on node j (zero off-neighbourhood).
    """
    batch = _dense([g])
    mask, node = batch.cropped(_full_horizons(batch))
    logit, cache = _forward(params, batch, mask, node)
    return float(expit(logit[0])), cache["alpha"][0]


def graph_loss(params: GatParams, g: TemporalGraph, label: int, class_weight: float = 1.0) -> float:
    """Weighted binary cross-entropy of one graph."""
    batch = _dense([g])
    mask, node = batch.cropped(_full_horizons(batch))
    logit, _ = _forward(params, batch, mask, node)
    return float(_weighted_bce(logit, np.array([float(label)]), np.array([class_weight]))[0])


def backward(params: GatParams, g: TemporalGraph, label: int,
             class_weight: float = 1.0) -> Dict[str, np.ndarray]:
    """
    Analytic gradient of the weighted BCE of one graph.

    Returns:
        {"W", "a", "head_w", "head_b"} shaped like the parameters
        (head_b as a length-1 array)
    """
    batch = _dense([g])
    mask, node = batch.cropped(_full_horizons(batch))
    logit, cache = _forward(params, batch, mask, node)
    dlogit = class_weight * (expit(logit) - float(label))
    return _backward(params, batch, cache, dlogit)


# ----------------------------------------------------------------------------
# Training
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-4
    restart_period: int = 50
    max_epochs: int = 1000
    patience: int = 20
    mode: TrainMode = TrainMode.GENERAL
    horizon: int = MAX_HORIZON
    val_fraction: float = 0.2
    hidden: int = 16
    batch_size: int = 32
    leaky_slope: float = 0.2
    class_balanced: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", TrainMode(self.mode))
        if not 0 < self.val_fraction < 1:
            raise ModelError("val_fraction must be in (0, 1)", f"val_fraction={self.val_fraction}")
        if self.lr0 <= 0 or self.restart_period < 1 or self.max_epochs < 1:
            raise ModelError("lr0, restart_period and max_epochs must be positive")
        if self.patience < 1 or self.batch_size < 1 or self.hidden < 1:
            raise ModelError("patience, batch_size and hidden must be >= 1")
        if not 0 <= self.horizon <= MAX_HORIZON:
            raise ModelError(f"horizon must be in [0, {MAX_HORIZON}]", f"horizon={self.horizon}")


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    val_auc: float


@dataclass
class TrainResult:
    params: GatParams
    log: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    def log_csv(self) -> bytes:
        frame = pd.DataFrame([vars(r) for r in self.log],
                             columns=["epoch", "lr", "train_loss", "val_loss", "val_auc"])
        buffer = io.StringIO()
        frame.to_csv(buffer, index=False, lineterminator="\n", float_format="%.10g")
        return buffer.getvalue().encode("utf-8")


class _Adam:
    def __init__(self, params: GatParams, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        self.t = 0

    def step(self, params: GatParams, grads: Dict[str, np.ndarray], lr: float) -> GatParams:
        self.t += 1
        arrays = params.arrays()
        out = {}
        for k, value in arrays.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * grads[k]
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * grads[k] ** 2
            m_hat = self.m[k] / (1 - self.beta1 ** self.t)
            v_hat = self.v[k] / (1 - self.beta2 ** self.t)
            out[k] = value - lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return params.with_arrays(out)


def cosine_lr(lr0: float, epoch: int, period: int) -> float:
    """Cosine annealing restarted every period epochs."""
    t = epoch % period
    return lr0 * (1.0 + math.cos(math.pi * t / period)) / 2.0


def _split(labels: np.ndarray, val_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    index = np.arange(len(labels))
    counts = np.bincount(labels.astype(int), minlength=2)
    stratify = labels if counts.min() >= 2 else None
    train, val = train_test_split(index, test_size=val_fraction, stratify=stratify,
                                  random_state=seed)
    return np.sort(train), np.sort(val)


def _evaluate(params: GatParams, batch: _Batch, y: np.ndarray, w: np.ndarray,
              horizons: Sequence[int]) -> Tuple[float, float]:
    """Mean weighted loss and mean AUC over the given horizons."""
    losses, aucs = [], []
    for h in horizons:
        mask, node = batch.cropped(np.minimum(np.full(len(y), h), _full_horizons(batch)))
        logit, _ = _forward(params, batch, mask, node)
        losses.append(float(_weighted_bce(logit, y, w).mean()))
        if 0 < y.sum() < len(y):
            aucs.append(auc(y, expit(logit)))
    return float(np.mean(losses)), float(np.mean(aucs)) if aucs else float("nan")


def train(graphs: Sequence[TemporalGraph], cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """
    Adam with cosine warm restarts and early stopping on a stratified validation split.

    TIME_SPECIFIC graphs are cropped to cfg.horizon every epoch; GENERAL draws
    a horizon per sample per epoch uniformly from 0..min(5, graph horizon) and
    monitors the validation loss averaged over all horizons.

    Returns:
        TrainResult holding the best-validation parameters and the epoch log
    """
    y_all = np.array([g.label for g in graphs], dtype=float)
    if len(graphs) < 2 or y_all.min() == y_all.max():
        raise ModelError("training needs both classes present", f"n={len(graphs)}")
    if cfg.mode is TrainMode.TIME_SPECIFIC:
        short = [g.key for g in graphs if g.horizon < cfg.horizon]
        if short:
            raise ShapeError(f"graphs shorter than horizon {cfg.horizon}", ", ".join(short[:5]))

    rng = np.random.default_rng(cfg.seed)
    train_idx, val_idx = _split(y_all, cfg.val_fraction, cfg.seed)
    train_batch = _dense([graphs[i] for i in train_idx])
    val_batch = _dense([graphs[i] for i in val_idx])
    y_tr, y_val = y_all[train_idx], y_all[val_idx]
    if cfg.class_balanced and 0 < y_tr.sum() < len(y_tr):
        w_tr = class_weights(y_tr)
    else:
        w_tr = np.ones(len(y_tr))
    w_val = np.ones(len(y_val))
    if cfg.class_balanced and 0 < y_val.sum() < len(y_val):
        w_val = class_weights(y_val)

    max_h = _full_horizons(train_batch)
    if cfg.mode is TrainMode.TIME_SPECIFIC:
        val_horizons = [cfg.horizon]
    else:
        val_horizons = list(range(int(_full_horizons(val_batch).max()) + 1))

    params = GatParams.init(train_batch.X.shape[2], cfg.hidden, rng, cfg.leaky_slope)
    params.mode = cfg.mode
    params.horizon = cfg.horizon if cfg.mode is TrainMode.TIME_SPECIFIC else None
    optimizer = _Adam(params)

    best = params.copy()
    best_loss, best_epoch, wait = np.inf, 0, 0
    log: List[EpochRecord] = []
    n = len(train_idx)
    for epoch in range(cfg.max_epochs):
        lr = cosine_lr(cfg.lr0, epoch, cfg.restart_period)
        order = rng.permutation(n)
        if cfg.mode is TrainMode.TIME_SPECIFIC:
            horizons = np.full(n, cfg.horizon)
        else:
            horizons = np.floor(rng.random(n) * (np.minimum(max_h, MAX_HORIZON) + 1)).astype(int)
        mask, node = train_batch.cropped(horizons)

        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            sub = _Batch(train_batch.X[rows], train_batch.edge[rows],
                         train_batch.delta[rows], train_batch.time[rows])
            logit, cache = _forward(params, sub, mask[rows], node[rows])
            epoch_loss += float(_weighted_bce(logit, y_tr[rows], w_tr[rows]).sum())
            dlogit = w_tr[rows] * (expit(logit) - y_tr[rows]) / len(rows)
            params = optimizer.step(params, _backward(params, sub, cache, dlogit), lr)

        val_loss, val_auc = _evaluate(params, val_batch, y_val, w_val, val_horizons)
        log.append(EpochRecord(epoch, lr, epoch_loss / n, val_loss, val_auc))
        if val_loss < best_loss:
            best, best_loss, best_epoch, wait = params.copy(), val_loss, epoch, 0
        else:
            wait += 1
            if wait >= cfg.patience:
                logger.info("early stop at epoch %d (best epoch %d, val loss %.5f)",
                            epoch, best_epoch, best_loss)
                break

    return TrainResult(best, log, best_epoch)


def predict(params: GatParams, graphs: Sequence[TemporalGraph], horizon: int) -> np.ndarray:
    """
    Probabilities after cropping every graph to t0..t_horizon.

    A TIME_SPECIFIC model only serves the horizon it was trained for.
    """
    if params.mode is TrainMode.TIME_SPECIFIC and params.horizon != horizon:
        raise ModelError("time-specific model serves a single horizon",
                         f"trained for {params.horizon}, asked for {horizon}")
    short = [g.key for g in graphs if g.horizon < horizon]
    if short:
        raise ShapeError("horizon exceeds available nodes", ", ".join(short[:5]))
    if not graphs:
        return np.zeros(0)
    batch = _dense(graphs)
    mask, node = batch.cropped(np.full(len(graphs), horizon))
    logit, _ = _forward(params, batch, mask, node)
    return expit(logit)
