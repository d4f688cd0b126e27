"""Second-order gradient-boosted regression trees with a logistic link.

Binary classifier built from scratch on numpy: each round fits one
regression tree to the logistic-loss gradients g_i = p_i - y_i and
hessians h_i = p_i (1 - p_i), choosing splits by the exact greedy gain

    G_L^2 / (H_L + lambda) + G_R^2 / (H_R + lambda) - G^2 / (H + lambda)

with leaf value -G / (H + lambda). No histogram binning, no subsampling:
training is a deterministic function of the dataset and the config. Ties
in gain break to the lowest feature index, then the lowest threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from numba import njit

from .dataset import LabeledDataset

MODEL_FILE_VERSION = 1


class DegenerateLabelsError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    n_estimators: int = 100
    max_depth: int = 4
    learning_rate: float = 0.1
    min_samples_leaf: int = 20
    l2_lambda: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1 or self.max_depth < 1:
            raise ValueError("n_estimators and max_depth must be >= 1")
        if self.min_samples_leaf < 1 or self.l2_lambda < 0 or self.learning_rate <= 0:
            raise ValueError("bad training hyperparameters")


@dataclass
class Tree:
    """Flat node arrays; feature < 0 marks a leaf. Root is node 0."""
    feature: np.ndarray    # int32
    threshold: np.ndarray  # float64
    left: np.ndarray       # int32
    right: np.ndarray      # int32
    value: np.ndarray      # float64, leaf log-odds contribution

    def leaf_values(self, X: np.ndarray) -> np.ndarray:
        cur = np.zeros(X.shape[0], dtype=np.int32)
        while True:
            at_internal = self.feature[cur] >= 0
            if not at_internal.any():
                break
            rows = np.nonzero(at_internal)[0]
            node = cur[rows]
            go_left = X[rows, self.feature[node]] <= self.threshold[node]
            cur[rows] = np.where(go_left, self.left[node], self.right[node])
        return self.value[cur]

    def depth(self) -> int:
        depths = {0: 0}
        best = 0
        for node in range(len(self.feature)):
            d = depths[node]
            best = max(best, d)
            if self.feature[node] >= 0:
                depths[int(self.left[node])] = d + 1
                depths[int(self.right[node])] = d + 1
        return best


@dataclass
class BoostedModel:
    trees: list[Tree]
    learning_rate: float
    base_score: float  # prior log-odds
    layout_id: str
    train_config: TrainConfig = field(default_factory=TrainConfig)

    @property
    def dim_hint(self) -> int | None:
        best = -1
        for t in self.trees:
            internal = t.feature[t.feature >= 0]
            if len(internal):
                best = max(best, int(internal.max()))
        return best + 1 if best >= 0 else None


def _sigmoid(m: np.ndarray) -> np.ndarray:
    out = np.empty_like(m)
    pos = m >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    e = np.exp(m[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@njit(cache=True)
def _level_best_splits(order_t, x_t, row_slot, grad, hess, g_tot, h_tot, counts,
                       splittable, min_leaf, lam):
    """Exact greedy split scan for every frontier node, one pass per feature.

    Rows arrive in ascending feature-value order; per-slot running sums
    give the left-child statistics at every candidate boundary (adjacent
    distinct values within the same node). Strict > comparisons keep the
    first best found, so ties resolve to the lowest feature index, then
    the lowest threshold.
    """
    d, n = order_t.shape
    nf = g_tot.shape[0]
    best_gain = np.zeros(nf)
    best_feat = np.full(nf, -1, np.int64)
    best_thr = np.zeros(nf)

    base = np.empty(nf)
    for s in range(nf):
        base[s] = g_tot[s] * g_tot[s] / (h_tot[s] + lam)

    gl = np.empty(nf)
    hl = np.empty(nf)
    nl = np.empty(nf, np.int64)
    last_v = np.empty(nf)
    for f in range(d):
        for s in range(nf):
            gl[s] = 0.0
            hl[s] = 0.0
            nl[s] = 0
        for k in range(n):
            idx = order_t[f, k]
            s = row_slot[idx]
            if s < 0 or not splittable[s]:
                continue
            v = x_t[f, idx]
            if nl[s] >= min_leaf and counts[s] - nl[s] >= min_leaf and last_v[s] < v:
                gr = g_tot[s] - gl[s]
                hr = h_tot[s] - hl[s]
                gain = gl[s] * gl[s] / (hl[s] + lam) + gr * gr / (hr + lam) - base[s]
                if gain > best_gain[s]:
                    best_gain[s] = gain
                    best_feat[s] = f
                    best_thr[s] = 0.5 * (last_v[s] + v)
            gl[s] += grad[idx]
            hl[s] += hess[idx]
            nl[s] += 1
            last_v[s] = v
    return best_gain, best_feat, best_thr


def _grow_tree(x_t: np.ndarray, grad: np.ndarray, hess: np.ndarray,
               order_t: np.ndarray, cfg: TrainConfig) -> Tree:
    d, n = x_t.shape
    lam = cfg.l2_lambda
    min_leaf = cfg.min_samples_leaf

    feature = [-1]
    threshold = [0.0]
    left = [-1]
    right = [-1]
    value = [0.0]

    def add_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    node_of_row = np.zeros(n, dtype=np.int32)
    frontier = [0]

    for depth in range(cfg.max_depth + 1):
        if not frontier:
            break
        nf = len(frontier)
        slots = np.full(max(frontier) + 1, -1, dtype=np.int32)
        for s, nid in enumerate(frontier):
            slots[nid] = s
        row_slot = slots[node_of_row]
        active = row_slot >= 0
        act_slot = row_slot[active]
        G = np.bincount(act_slot, weights=grad[active], minlength=nf)
        H = np.bincount(act_slot, weights=hess[active], minlength=nf)
        counts = np.bincount(act_slot, minlength=nf)

        if depth == cfg.max_depth:
            for s, nid in enumerate(frontier):
                value[nid] = -G[s] / (H[s] + lam)
            break

        splittable = counts >= 2 * min_leaf
        if splittable.any():
            best_gain, best_feat, best_thr = _level_best_splits(
                order_t, x_t, row_slot, grad, hess, G, H, counts,
                splittable, min_leaf, lam)
        else:
            best_gain = np.zeros(nf)
            best_feat = np.full(nf, -1, dtype=np.int64)
            best_thr = np.zeros(nf)

        next_frontier: list[int] = []
        child_left = np.full(nf, -1, dtype=np.int32)
        child_right = np.full(nf, -1, dtype=np.int32)
        for s, nid in enumerate(frontier):
            if best_feat[s] >= 0:
                l = add_node()
                r = add_node()
                feature[nid] = int(best_feat[s])
                threshold[nid] = float(best_thr[s])
                left[nid] = l
                right[nid] = r
                child_left[s] = l
                child_right[s] = r
                next_frontier.extend((l, r))
            else:
                value[nid] = -G[s] / (H[s] + lam)

        if next_frontier:
            split_rows = active.copy()
            split_rows[active] = best_feat[act_slot] >= 0
            rows = np.nonzero(split_rows)[0]
            rs = row_slot[rows]
            fvals = x_t[best_feat[rs], rows]
            go_left = fvals <= best_thr[rs]
            node_of_row[rows] = np.where(go_left, child_left[rs], child_right[rs])
        frontier = next_frontier

    return Tree(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        value=np.array(value, dtype=np.float64),
    )


def train(ds: LabeledDataset, cfg: TrainConfig | None = None) -> BoostedModel:
    """Fit the boosted ensemble; deterministic given (dataset, config)."""
    if cfg is None:
        cfg = TrainConfig()
    y = np.asarray(ds.labels, dtype=np.float64)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise DegenerateLabelsError("degenerate labels: training set holds a single class")
    if len(y) < 2 * cfg.min_samples_leaf:
        raise ValueError(
            f"need at least {2 * cfg.min_samples_leaf} rows, got {len(y)}")

    X = np.ascontiguousarray(ds.vectors, dtype=np.float64)
    p1 = n_pos / len(y)
    base_score = math.log(p1 / (1.0 - p1))
    margins = np.full(len(y), base_score, dtype=np.float64)

    x_t = np.ascontiguousarray(X.T)
    order_t = np.argsort(x_t, axis=1, kind="stable").astype(np.int32)
    trees: list[Tree] = []
    for _ in range(cfg.n_estimators):
        p = _sigmoid(margins)
        grad = p - y
        hess = p * (1.0 - p)
        tree = _grow_tree(x_t, grad, hess, order_t, cfg)
        trees.append(tree)
        margins += cfg.learning_rate * tree.leaf_values(X)

    return BoostedModel(trees=trees, learning_rate=cfg.learning_rate,
                        base_score=base_score, layout_id=ds.layout_id,
                        train_config=cfg)


def predict_margin(model: BoostedModel, X: np.ndarray) -> np.ndarray:
    """Raw log-odds base_score + learning_rate * sum of tree outputs."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    hint = model.dim_hint
    if hint is not None and X.shape[1] < hint:
        raise ValueError(f"input dim {X.shape[1]} smaller than model needs ({hint})")
    acc = np.zeros(X.shape[0], dtype=np.float64)
    for tree in model.trees:
        acc += tree.leaf_values(X)
    return model.base_score + model.learning_rate * acc


def predict_proba(model: BoostedModel, x: np.ndarray):
    """Logistic of the margin; scalar for a single vector, array for a matrix."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    probs = _sigmoid(predict_margin(model, x))
    return float(probs[0]) if single else probs


def predict_label(model: BoostedModel, x: np.ndarray, threshold: float = 0.5):
    """1 iff predict_proba >= threshold (ties count as malicious)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    labels = (_sigmoid(predict_margin(model, x)) >= threshold).astype(np.int64)
    return int(labels[0]) if single else labels


def _tree_to_nodes(tree: Tree) -> list[dict]:
    nodes = []
    for i in range(len(tree.feature)):
        if tree.feature[i] >= 0:
            nodes.append({"kind": "split", "f": int(tree.feature[i]),
                          "t": float(tree.threshold[i]), "l": int(tree.left[i]),
                          "r": int(tree.right[i]), "v": 0.0})
        else:
            nodes.append({"kind": "leaf", "f": -1, "t": 0.0, "l": -1, "r": -1,
                          "v": float(tree.value[i])})
    return nodes


def _tree_from_nodes(nodes: list[dict]) -> Tree:
    n = len(nodes)
    feature = np.full(n, -1, dtype=np.int32)
    threshold = np.zeros(n, dtype=np.float64)
    left = np.full(n, -1, dtype=np.int32)
    right = np.full(n, -1, dtype=np.int32)
    value = np.zeros(n, dtype=np.float64)
    for i, node in enumerate(nodes):
        kind = node.get("kind")
        if kind == "split":
            feature[i] = node["f"]
            threshold[i] = node["t"]
            left[i] = node["l"]
            right[i] = node["r"]
            if not (0 <= left[i] < n and 0 <= right[i] < n):
                raise ModelFormatError(f"node {i} has child index out of range")
        elif kind == "leaf":
            value[i] = node["v"]
        else:
            raise ModelFormatError(f"node {i} has unknown kind {kind!r}")
    return Tree(feature=feature, threshold=threshold, left=left, right=right, value=value)


def save_model(model: BoostedModel, path) -> None:
    doc = {
        "version": MODEL_FILE_VERSION,
        "layout_id": model.layout_id,
        "base_score": model.base_score,
        "learning_rate": model.learning_rate,
        "train_config": asdict(model.train_config),
        "trees": [_tree_to_nodes(t) for t in model.trees],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_model(path) -> BoostedModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"model file is not valid JSON: {exc}") from None
    if doc.get("version") != MODEL_FILE_VERSION:
        raise ModelFormatError(
            f"unsupported model file version {doc.get('version')!r}")
    missing = {"layout_id", "base_score", "learning_rate", "trees"} - doc.keys()
    if missing:
        raise ModelFormatError(f"model file missing fields: {sorted(missing)}")
    cfg = TrainConfig(**doc["train_config"]) if "train_config" in doc else TrainConfig()
    return BoostedModel(
        trees=[_tree_from_nodes(nodes) for nodes in doc["trees"]],
        learning_rate=float(doc["learning_rate"]),
        base_score=float(doc["base_score"]),
        layout_id=str(doc["layout_id"]),
        train_config=cfg,
    )


def with_config(cfg: TrainConfig, **overrides) -> TrainConfig:
    return replace(cfg, **overrides)
