"""Histogram gradient-boosted trees for binary outcomes.

Logistic loss, leaf-wise growth under depth/leaf/min-data limits, a learned
default direction for missing values at every split, gradient-ordered
categorical splits, optional class rebalancing and early stopping on a
validation log-loss. Scores are uncalibrated pseudo-probabilities; see
:mod:`asthma_risk.model_selection.calibration`.
"""
from __future__ import annotations

import heapq
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from numba import njit

from .schema import FeatureKind, FeatureSchema, FeatureSpec

log = logging.getLogger(__name__)

ARTIFACT_FORMAT = "asthma-risk-gbdt"
ARTIFACT_VERSION = 1
_EPS_HESS = 1e-12
_MIN_GAIN = 1e-12
_P_FLOOR = 1e-15


class SchemaMismatchError(ValueError):
    def __init__(self, expected: str, got: str):
        super().__init__(f"schema fingerprint mismatch: model {expected}, data {got}")
        self.expected = expected
        self.got = got


@dataclass(frozen=True)
class GbdtHyperparams:
    """Booster settings. The learning rate is stored on a log scale: natural
    log by default, base 10 when ``learning_rate_base`` is ``"log10"``."""

    log_learning_rate: float = math.log(0.1)
    max_depth: int = 6
    num_leaves: int = 31
    min_data_in_leaf: int = 20
    early_stopping_rounds: int = 20
    max_rounds: int = 1000
    encode: bool = True
    rebalance: bool = False
    l2_leaf_penalty: float = 0.0
    max_bins: int = 255
    seed: int = 0
    learning_rate_base: str = "ln"

    def __post_init__(self):
        if self.learning_rate_base not in ("ln", "log10"):
            raise ValueError("learning_rate_base must be 'ln' or 'log10'")
        lr = self.learning_rate
        if not 0.0 < lr <= 1.0:
            raise ValueError(f"learning rate {lr:g} outside (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.num_leaves < 2:
            raise ValueError("num_leaves must be >= 2")
        if self.min_data_in_leaf < 1:
            raise ValueError("min_data_in_leaf must be >= 1")
        if self.early_stopping_rounds < 1:
            raise ValueError("early_stopping_rounds must be >= 1")
        if self.max_rounds < 0:
            raise ValueError("max_rounds must be >= 0")
        if self.l2_leaf_penalty < 0:
            raise ValueError("l2_leaf_penalty must be >= 0")
        if not 2 <= self.max_bins <= 65535:
            raise ValueError("max_bins must lie in [2, 65535]")

    @property
    def learning_rate(self) -> float:
        base = math.e if self.learning_rate_base == "ln" else 10.0
        return base**self.log_learning_rate

    @property
    def effective_num_leaves(self) -> int:
        return min(self.num_leaves, 2**self.max_depth) if self.max_depth < 31 else self.num_leaves

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GbdtHyperparams":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        kw = dict(d)
        for k in ("max_depth", "num_leaves", "min_data_in_leaf", "early_stopping_rounds",
                  "max_rounds", "max_bins", "seed"):
            if k in kw:
                kw[k] = int(kw[k])
        for k in ("encode", "rebalance"):
            if k in kw:
                v = kw[k]
                kw[k] = v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes")
        for k in ("log_learning_rate", "l2_leaf_penalty"):
            if k in kw:
                kw[k] = float(kw[k])
        return cls(**kw)


# Final tuned settings for the two outcomes; learning rates are natural logs.
FINAL_ED_PARAMS = GbdtHyperparams(
    log_learning_rate=-2.236273, max_depth=2, num_leaves=5, min_data_in_leaf=7,
    early_stopping_rounds=16, encode=True, rebalance=False,
)
FINAL_ADMISSION_PARAMS = GbdtHyperparams(
    log_learning_rate=-3.827761, max_depth=7, num_leaves=4, min_data_in_leaf=32,
    early_stopping_rounds=17, encode=True, rebalance=False,
)


# --------------------------------------------------------------------------
# binning


@dataclass
class BinMapper:
    """Per-feature bin edges fit on the training matrix.

    Numeric bin ``b`` holds values in ``(edges[b-1], edges[b]]``. Categorical
    bins are the category codes. Missing values go to the shared slot
    ``missing_bin`` (= max_bins).
    """

    edges: list[np.ndarray]
    n_bins: np.ndarray
    is_categorical: np.ndarray
    missing_bin: int

    @classmethod
    def fit(cls, X: np.ndarray, is_categorical: np.ndarray, n_categories: Sequence[int], max_bins: int):
        edges, n_bins = [], []
        for j in range(X.shape[1]):
            if is_categorical[j]:
                k = int(n_categories[j])
                if k > max_bins:
                    raise ValueError(f"feature {j}: {k} categories exceed max_bins={max_bins}")
                edges.append(np.empty(0))
                n_bins.append(max(k, 1))
                continue
            col = X[:, j]
            col = col[~np.isnan(col)]
            if col.size == 0:
                edges.append(np.empty(0))
                n_bins.append(1)
                continue
            uniq, counts = np.unique(col, return_counts=True)
            if uniq.size <= max_bins:
                e = (uniq[:-1] + uniq[1:]) / 2.0
            else:
                # equal-count cut points between distinct values
                cum = np.cumsum(counts)
                targets = cum[-1] * np.arange(1, max_bins) / max_bins
                pos = np.unique(np.searchsorted(cum, targets, side="left"))
                pos = pos[pos < uniq.size - 1]
                e = (uniq[pos] + uniq[pos + 1]) / 2.0
            edges.append(e)
            n_bins.append(e.size + 1)
        return cls(edges, np.asarray(n_bins, dtype=np.int64), np.asarray(is_categorical, bool), max_bins)

    def transform(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape, dtype=np.int64)
        for j in range(X.shape[1]):
            col = X[:, j]
            nan = np.isnan(col)
            if self.is_categorical[j]:
                b = np.where(nan, 0, col).astype(np.int64)
            else:
                b = np.searchsorted(self.edges[j], np.where(nan, 0.0, col), side="left")
            b[nan] = self.missing_bin
            out[:, j] = b
        return out


# --------------------------------------------------------------------------
# trees


@dataclass(frozen=True)
class SplitInfo:
    feature: int
    gain: float
    left_bins: np.ndarray  # bool mask over bins including the missing slot
    missing_left: bool
    threshold: float  # numeric splits: x <= threshold goes left
    left_categories: tuple[int, ...]  # categorical splits


@dataclass
class Tree:
    """Flat array tree; node 0 is the root, leaves have ``feature == -1``."""

    feature: np.ndarray
    threshold: np.ndarray
    missing_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    categorical: np.ndarray
    cat_left: list[tuple[int, ...]]
    depth: int

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index for every row of the encoded matrix."""
        n = X.shape[0]
        node = np.zeros(n, dtype=np.int64)
        if self.feature[0] < 0:
            return node
        max_cat = max((max(c) + 1 for c in self.cat_left if c), default=1)
        cat_mask = np.zeros((len(self.feature), max_cat + 1), dtype=bool)
        for i, cats in enumerate(self.cat_left):
            if cats:
                cat_mask[i, list(cats)] = True
        rows = np.arange(n)
        for _ in range(self.depth + 1):
            nd = node[rows]
            internal = self.feature[nd] >= 0
            if not internal.any():
                break
            rows = rows[internal]
            nd = nd[internal]
            x = X[rows, self.feature[nd]]
            nan = np.isnan(x)
            xs = np.where(nan, 0.0, x)
            code = np.clip(xs, 0, max_cat).astype(np.int64)
            go_left = np.where(self.categorical[nd], cat_mask[nd, code], xs <= self.threshold[nd])
            go_left = np.where(nan, self.missing_left[nd], go_left)
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "missing_left": self.missing_left.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "categorical": self.categorical.tolist(),
            "cat_left": [list(c) for c in self.cat_left],
            "depth": self.depth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=float),
            missing_left=np.asarray(d["missing_left"], dtype=bool),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=float),
            categorical=np.asarray(d["categorical"], dtype=bool),
            cat_left=[tuple(c) for c in d["cat_left"]],
            depth=int(d["depth"]),
        )


@njit(cache=True)
def _bin_order(hg, hh, hc, nb, categorical, encode, lam):
    """Scan order of a feature's bins: natural for numeric features, ascending
    gradient/hessian ratio for encoded categorical ones (absent levels last)."""
    if not (categorical and encode):
        return np.arange(nb)
    ratio = np.empty(nb)
    for b in range(nb):
        if hc[b] > 0:
            ratio[b] = hg[b] / (hh[b] + lam + _EPS_HESS)
        else:
            ratio[b] = np.inf
    return np.argsort(ratio, kind="mergesort")


@njit(cache=True)
def _scan_splits(hg, hh, hc, n_bins, is_cat, encode, lam, min_data):
    F, width = hg.shape
    B = width - 1
    best_gain, best_j, best_k, best_side = -np.inf, -1, -1, 0
    for j in range(F):
        nb = n_bins[j]
        if nb < 2:
            continue
        G, H, C = 0.0, 0.0, 0.0
        for b in range(width):
            G += hg[j, b]
            H += hh[j, b]
            C += hc[j, b]
        gm, hm, cm = hg[j, B], hh[j, B], hc[j, B]
        parent = G * G / (H + lam + (_EPS_HESS if lam == 0 else 0.0))
        order = _bin_order(hg[j], hh[j], hc[j], nb, is_cat[j], encode, lam)
        gl, hl, cl = 0.0, 0.0, 0.0
        for k in range(nb - 1):
            b = order[k]
            gl += hg[j, b]
            hl += hh[j, b]
            cl += hc[j, b]
            for side in range(2):
                if side == 1 and cm == 0:
                    continue
                a_g = gl + gm * side
                a_h = hl + hm * side
                a_c = cl + cm * side
                r_g, r_h, r_c = G - a_g, H - a_h, C - a_c
                if a_c < min_data or r_c < min_data or a_h <= _EPS_HESS or r_h <= _EPS_HESS:
                    continue
                gain = a_g * a_g / (a_h + lam) + r_g * r_g / (r_h + lam) - parent
                if gain > best_gain:
                    best_gain, best_j, best_k, best_side = gain, j, k, side
    return best_gain, best_j, best_k, best_side


def best_split(
    hist_g: np.ndarray,
    hist_h: np.ndarray,
    hist_c: np.ndarray,
    n_bins: np.ndarray,
    is_categorical: np.ndarray,
    params: GbdtHyperparams,
    *,
    edges: Sequence[np.ndarray] | None = None,
) -> SplitInfo | None:
    """Best-gain split from per-feature histograms of shape (F, max_bins + 1).

    The last histogram column is the missing slot. Gain is
    ``G_L^2/(H_L+l2) + G_R^2/(H_R+l2) - G^2/(H+l2)``; missing rows are tried on
    both sides. Ties go to the lowest feature index, then the lowest
    threshold position. Returns None when no split has positive gain.
    """
    hist_g = np.ascontiguousarray(hist_g, dtype=float)
    hist_h = np.ascontiguousarray(hist_h, dtype=float)
    hist_c = np.ascontiguousarray(hist_c, dtype=float)
    n_bins = np.asarray(n_bins, dtype=np.int64)
    is_categorical = np.asarray(is_categorical, dtype=np.bool_)
    lam = float(params.l2_leaf_penalty)
    gain, j, k, side = _scan_splits(
        hist_g, hist_h, hist_c, n_bins, is_categorical, bool(params.encode), lam,
        float(params.min_data_in_leaf),
    )
    if j < 0 or not gain > _MIN_GAIN:
        return None
    B = hist_g.shape[1] - 1
    order = _bin_order(hist_g[j], hist_h[j], hist_c[j], int(n_bins[j]), bool(is_categorical[j]),
                       bool(params.encode), lam)
    left_bins = np.zeros(B + 1, dtype=bool)
    left_bins[order[: k + 1]] = True
    if is_categorical[j]:
        threshold = math.nan
        left_categories = tuple(sorted(int(x) for x in order[: k + 1]))
    else:
        threshold = float(edges[j][k]) if edges is not None else float(k)
        left_categories = ()
    cm = hist_c[j, B]
    if side == 1:
        missing_left = True
    elif cm > 0:
        missing_left = False
    else:
        # no missing rows seen here: send future missing values to the larger child
        n_left = hist_c[j, order[: k + 1]].sum()
        missing_left = bool(n_left >= hist_c[j, :B].sum() - n_left)
    left_bins[B] = missing_left
    return SplitInfo(int(j), float(gain), left_bins, missing_left, threshold, left_categories)


@njit(cache=True)
def _build_hist(binned, idx, g, h, width):
    F = binned.shape[1]
    out = np.zeros((3, F, width))
    for r in idx:
        gi, hi = g[r], h[r]
        for j in range(F):
            b = binned[r, j]
            out[0, j, b] += gi
            out[1, j, b] += hi
            out[2, j, b] += 1.0
    return out


class _Histogrammer:
    def __init__(self, binned: np.ndarray, width: int):
        self.binned = np.ascontiguousarray(binned, dtype=np.int32)
        self.width = width

    def build(self, idx: np.ndarray, g: np.ndarray, h: np.ndarray):
        return _build_hist(self.binned, idx, g, h, self.width)


def _grow_tree(binned, hist, g, h, mapper: BinMapper, params: GbdtHyperparams, shrink: float):
    """Leaf-wise growth. Returns the tree and the leaf index of every row."""
    max_leaves = params.effective_num_leaves
    lam = params.l2_leaf_penalty
    n = binned.shape[0]
    B = mapper.missing_bin

    feature, threshold, miss_left, left, right, value, categorical, cat_left, depth = (
        [], [], [], [], [], [], [], [], []
    )

    def new_node(d):
        feature.append(-1)
        threshold.append(math.nan)
        miss_left.append(False)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        categorical.append(False)
        cat_left.append(())
        depth.append(d)
        return len(feature) - 1

    rows = {0: np.arange(n)}
    new_node(0)
    hists = {0: hist.build(rows[0], g, h)}
    heap = []

    def consider(node):
        idx = rows[node]
        if depth[node] >= params.max_depth or idx.size < 2 * params.min_data_in_leaf:
            return
        s = best_split(*hists[node], mapper.n_bins, mapper.is_categorical, params, edges=mapper.edges)
        if s is not None:
            heapq.heappush(heap, (-s.gain, node, s))

    consider(0)
    n_leaves = 1
    while heap and n_leaves < max_leaves:
        _, node, s = heapq.heappop(heap)
        idx = rows.pop(node)
        go_left = s.left_bins[binned[idx, s.feature]]
        li, ri = idx[go_left], idx[~go_left]
        a, b = new_node(depth[node] + 1), new_node(depth[node] + 1)
        feature[node] = s.feature
        threshold[node] = s.threshold
        miss_left[node] = s.missing_left
        categorical[node] = bool(mapper.is_categorical[s.feature])
        cat_left[node] = s.left_categories
        left[node], right[node] = a, b
        rows[a], rows[b] = li, ri
        parent_hist = hists.pop(node)
        small, large = (a, b) if li.size <= ri.size else (b, a)
        hists[small] = hist.build(rows[small], g, h)
        hists[large] = parent_hist - hists[small]
        n_leaves += 1
        consider(a)
        consider(b)

    leaf_of = np.empty(n, dtype=np.int64)
    for node, idx in rows.items():
        G, H = g[idx].sum(), h[idx].sum()
        value[node] = -shrink * G / (H + lam) if H + lam > 0 else 0.0
        leaf_of[idx] = node
    tree = Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=float),
        missing_left=np.asarray(miss_left, dtype=bool),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=float),
        categorical=np.asarray(categorical, dtype=bool),
        cat_left=cat_left,
        depth=max(depth),
    )
    return tree, leaf_of


# --------------------------------------------------------------------------
# ensemble


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def log_loss(y: np.ndarray, margin: np.ndarray, weights: np.ndarray | None = None) -> float:
    # log(1 + exp(-m)) for y=1 and log(1 + exp(m)) for y=0
    losses = np.logaddexp(0.0, np.where(y == 1, -margin, margin))
    if weights is None:
        return float(losses.mean())
    return float(np.sum(weights * losses) / np.sum(weights))


@dataclass(frozen=True)
class Ensemble:
    init_margin: float
    trees: tuple[Tree, ...]
    shrinkage: float
    schema: FeatureSchema
    params: GbdtHyperparams
    best_iteration: int = 0
    train_loss_path: tuple[float, ...] = field(default=(), compare=False)
    valid_loss_path: tuple[float, ...] = field(default=(), compare=False)

    @property
    def fingerprint(self) -> str:
        return self.schema.fingerprint()

    def margin_matrix(self, X: np.ndarray) -> np.ndarray:
        m = np.full(X.shape[0], self.init_margin)
        for t in self.trees:
            m += t.predict(X)
        return m

    def truncated(self, n_trees: int) -> "Ensemble":
        return replace(self, trees=self.trees[:n_trees], best_iteration=min(n_trees, len(self.trees)))

    def used_features(self) -> set[int]:
        out: set[int] = set()
        for t in self.trees:
            out |= t.used_features()
        return out

    def encode(self, schema: FeatureSchema, records, X_cached: np.ndarray | None = None) -> np.ndarray:
        """Encode records with the model's own category lists."""
        if schema.fingerprint() != self.fingerprint:
            raise SchemaMismatchError(self.fingerprint, schema.fingerprint())
        if X_cached is not None and schema == self.schema:
            return X_cached
        return self.schema.encode(records)

    def to_dict(self) -> dict:
        return {
            "format": ARTIFACT_FORMAT,
            "version": ARTIFACT_VERSION,
            "fingerprint": self.fingerprint,
            "params": self.params.to_dict(),
            "schema": schema_to_dict(self.schema),
            "init_margin": self.init_margin,
            "shrinkage": self.shrinkage,
            "best_iteration": self.best_iteration,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Ensemble":
        if d.get("format") != ARTIFACT_FORMAT or d.get("version") != ARTIFACT_VERSION:
            raise ValueError("not a version-1 GBDT artifact")
        schema = schema_from_dict(d["schema"])
        if schema.fingerprint() != d["fingerprint"]:
            raise ValueError("artifact fingerprint does not match its schema")
        return cls(
            init_margin=float(d["init_margin"]),
            trees=tuple(Tree.from_dict(t) for t in d["trees"]),
            shrinkage=float(d["shrinkage"]),
            schema=schema,
            params=GbdtHyperparams.from_dict(d["params"]),
            best_iteration=int(d["best_iteration"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text: str) -> "Ensemble":
        return cls.from_dict(json.loads(text))


def schema_to_dict(schema: FeatureSchema) -> list[dict]:
    return [
        {"name": s.name, "kind": s.kind.value, "categories": list(s.categories)}
        for s in schema.specs
    ]


def schema_from_dict(rows: list[dict]) -> FeatureSchema:
    return FeatureSchema(tuple(FeatureSpec(r["name"], r["kind"], tuple(r["categories"])) for r in rows))


def _class_weights(y: np.ndarray, rebalance: bool) -> np.ndarray:
    if not rebalance:
        return np.ones(y.shape[0])
    n = y.shape[0]
    n_pos = int(y.sum())
    return np.where(y == 1, n / (2.0 * n_pos), n / (2.0 * (n - n_pos)))


def fit_matrix(
    X: np.ndarray,
    y: np.ndarray,
    schema: FeatureSchema,
    params: GbdtHyperparams,
    X_valid: np.ndarray | None = None,
    y_valid: np.ndarray | None = None,
) -> Ensemble:
    y = np.asarray(y, dtype=int)
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    if y.min() == y.max():
        raise ValueError("degenerate labels: training set has a single class")
    if params.num_leaves > params.effective_num_leaves:
        log.warning(
            "num_leaves=%d exceeds 2**max_depth=%d; clamped",
            params.num_leaves, params.effective_num_leaves,
        )
    is_cat = schema.categorical_mask()
    n_cats = [len(s.categories) for s in schema.specs]
    mapper = BinMapper.fit(X, is_cat, n_cats, params.max_bins)
    binned = mapper.transform(X)
    hist = _Histogrammer(binned, mapper.missing_bin + 1)

    w = _class_weights(y, params.rebalance)
    pos_w = float(np.sum(w * y))
    neg_w = float(np.sum(w * (1 - y)))
    init = math.log(pos_w / neg_w)
    shrink = params.learning_rate
    margin = np.full(X.shape[0], init)

    use_valid = X_valid is not None and y_valid is not None and len(y_valid) > 0
    if use_valid:
        y_valid = np.asarray(y_valid, dtype=int)
        w_valid = np.where(y_valid == 1, w[y == 1][0], w[y == 0][0])
        m_valid = np.full(X_valid.shape[0], init)
        valid_path = [log_loss(y_valid, m_valid, w_valid)]
        best_loss, best_n = valid_path[0], 0
    train_path = [log_loss(y, margin, w)]

    trees: list[Tree] = []
    for rnd in range(params.max_rounds):
        p = sigmoid(margin)
        g = w * (p - y)
        h = w * p * (1.0 - p)
        tree, leaf_of = _grow_tree(binned, hist, g, h, mapper, params, shrink)
        if tree.feature[0] < 0:
            # no admissible split: further rounds would add the same stump
            break
        trees.append(tree)
        margin += tree.value[leaf_of]
        train_path.append(log_loss(y, margin, w))
        if use_valid:
            m_valid += tree.predict(X_valid)
            loss = log_loss(y_valid, m_valid, w_valid)
            valid_path.append(loss)
            if loss < best_loss:
                best_loss, best_n = loss, len(trees)
            elif len(trees) - best_n >= params.early_stopping_rounds:
                break
    if use_valid:
        trees = trees[:best_n]
    return Ensemble(
        init_margin=init,
        trees=tuple(trees),
        shrinkage=shrink,
        schema=schema,
        params=params,
        best_iteration=len(trees),
        train_loss_path=tuple(train_path),
        valid_loss_path=tuple(valid_path) if use_valid else (),
    )


def fit(train, valid, params: GbdtHyperparams) -> Ensemble:
    """Fit on a labeled :class:`~asthma_risk.data_io.Cohort`; ``valid`` may be
    None or empty, in which case no early stopping happens."""
    if len(train) == 0:
        raise ValueError("empty training set")
    if valid is not None and len(valid) > 0:
        Xv = valid.X if valid.schema == train.schema else train.schema.encode(valid.records)
        return fit_matrix(train.X, train.y, train.schema, params, Xv, valid.y)
    return fit_matrix(train.X, train.y, train.schema, params)


def _matrix(ensemble: Ensemble, data) -> np.ndarray:
    if isinstance(data, np.ndarray):
        if data.ndim == 1:
            data = data[None, :]
        if data.shape[1] != len(ensemble.schema):
            raise ValueError("matrix width does not match the model schema")
        return data
    return ensemble.encode(data.schema, data.records, getattr(data, "_X", None))


def predict_margin(ensemble: Ensemble, data) -> np.ndarray:
    """Raw log-odds for a Cohort (schema-checked) or an encoded matrix."""
    return ensemble.margin_matrix(_matrix(ensemble, data))


def predict_score(ensemble: Ensemble, data) -> np.ndarray:
    """Uncalibrated pseudo-probability sigmoid(margin), in input order."""
    p = sigmoid(predict_margin(ensemble, data))
    return np.clip(p, _P_FLOOR, 1.0 - _P_FLOOR)
