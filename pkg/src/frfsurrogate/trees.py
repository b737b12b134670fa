"""Extremely randomized regression trees and a best-split random forest.

Trees are grown by numba kernels over a row-index array; each tree draws
from its own splitmix64 stream seeded from ``(seed, tree_index)``, so the
forest is identical whether trees are grown sequentially or on threads.
"""
from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np

N_FEATURES = 8
EXTRA_RANDOM = "extra_random"
BEST_EXHAUSTIVE = "best_exhaustive"
FORMAT_NAME = "frfsurrogate-forest"
FORMAT_VERSION = 1


class NoSplitWarning(UserWarning):
    """The forest contains no internal nodes; importances default to uniform."""


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    m_try: int = 8
    n_min: int = 2
    bootstrap: bool = True
    split: str = EXTRA_RANDOM
    seed: int = 0

    def validate(self, n_features: int = N_FEATURES) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 1 <= self.m_try:
            raise ValueError("m_try must be >= 1")
        if self.m_try > n_features:
            raise ValueError(f"m_try={self.m_try} exceeds feature count {n_features}")
        if self.n_min < 1:
            raise ValueError("n_min must be >= 1")
        if self.split not in (EXTRA_RANDOM, BEST_EXHAUSTIVE):
            raise ValueError(f"unknown split mode {self.split!r}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat node arrays. ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    importance: np.ndarray  # summed SSE reduction per feature

    def __post_init__(self):
        n = len(self.feature)
        if n == 0:
            raise ValueError("tree has no nodes")
        inner = np.flatnonzero(self.feature >= 0)
        # routing relies on sibling pairs: right child directly follows left
        if np.any(self.right[inner] != self.left[inner] + 1) or np.any(self.left[inner] <= inner) \
                or np.any(self.right[inner] >= n):
            raise ValueError("malformed tree: children must be consecutive and follow their parent")

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _route_tree(X, self.feature, self.threshold, self.left, self.right, self.value)

    def __eq__(self, other):
        if not isinstance(other, Tree):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("feature", "threshold", "left", "right", "value", "n_samples", "importance")
        )


@dataclass(frozen=True, eq=False)
class ForestModel:
    params: ForestParams
    trees: tuple[Tree, ...]
    n_features: int = N_FEATURES
    _packed: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def _pack(self):
        if not self._packed:
            sizes = np.array([t.n_nodes for t in self.trees], dtype=np.int64)
            offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
            self._packed.update(
                offsets=offsets,
                feature=np.concatenate([t.feature for t in self.trees]),
                threshold=np.concatenate([t.threshold for t in self.trees]),
                left=np.concatenate([t.left for t in self.trees]),
                right=np.concatenate([t.right for t in self.trees]),
                value=np.concatenate([t.value for t in self.trees]),
            )
        p = self._packed
        return p["offsets"], p["feature"], p["threshold"], p["left"], p["right"], p["value"]

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Ensemble mean of the member trees' leaf values."""
        X = _as_matrix(X, self.n_features)
        return _predict_forest(X, *self._pack())

    def predict_members(self, X: np.ndarray) -> np.ndarray:
        """Per-tree predictions, shape (n_trees, rows)."""
        X = _as_matrix(X, self.n_features)
        return np.stack([t.predict(X) for t in self.trees])

    def __eq__(self, other):
        if not isinstance(other, ForestModel):
            return NotImplemented
        return self.params == other.params and self.trees == other.trees


def _as_matrix(X, p):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != p:
        raise ValueError(f"expected {p} features, got {X.shape[1]}")
    return X


# --------------------------------------------------------------------------
# numba kernels

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)


@numba.njit(cache=True, inline="always")
def _next_u64(state):
    z = state[0] + _GOLDEN
    state[0] = z
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@numba.njit(cache=True, inline="always")
def _next_unit(state):
    return np.float64(_next_u64(state) >> _S11) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True, inline="always")
def _next_below(state, n):
    return np.int64(_next_u64(state) % np.uint64(n))


@numba.njit(cache=True)
def _better(score, f, t, best_score, best_f, best_t):
    if score > best_score:
        return True
    if score == best_score and best_f >= 0:
        if f < best_f:
            return True
        if f == best_f and t < best_t:
            return True
    return False


@numba.njit(cache=True, nogil=True)
def _grow_tree(X, y, seed, bootstrap, m_try, n_min, extra):
    n, p = X.shape
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed

    idx = np.empty(n, dtype=np.int64)
    if bootstrap:
        for k in range(n):
            idx[k] = _next_below(state, n)
    else:
        for k in range(n):
            idx[k] = k

    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    n_samples = np.zeros(cap, dtype=np.int64)
    importance = np.zeros(p)

    st_node = np.empty(cap, dtype=np.int64)
    st_lo = np.empty(cap, dtype=np.int64)
    st_hi = np.empty(cap, dtype=np.int64)
    sp = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = n
    sp = 1
    n_nodes = 1

    feats = np.arange(p)
    yc = np.empty(n)
    vals = np.empty(n)
    tmp_i = np.empty(n, dtype=np.int64)
    tmp_y = np.empty(n)
    fmin = np.empty(p)
    fmax = np.empty(p)
    cand_f = np.empty(p, dtype=np.int64)
    cand_t = np.empty(p)
    cand_sl = np.empty(p)
    cand_nl = np.empty(p, dtype=np.int64)

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        lo = st_lo[sp]
        hi = st_hi[sp]
        m = hi - lo

        # one row-major pass: target stats and per-feature ranges
        total = 0.0
        ymin = np.inf
        ymax = -np.inf
        for f in range(p):
            fmin[f] = np.inf
            fmax[f] = -np.inf
        for k in range(lo, hi):
            row = idx[k]
            v = y[row]
            total += v
            ymin = min(ymin, v)
            ymax = max(ymax, v)
            for f in range(p):
                xv = X[row, f]
                fmin[f] = min(fmin[f], xv)
                fmax[f] = max(fmax[f], xv)
        mean = total / m
        # leaf value must stay inside the node's target range
        if mean < ymin:
            mean = ymin
        if mean > ymax:
            mean = ymax
        value[node] = mean
        n_samples[node] = m

        if m < 2 * n_min or ymax == ymin:
            continue

        ctot = 0.0
        for k in range(lo, hi):
            yc[k] = y[idx[k]] - mean
            ctot += yc[k]

        # partial Fisher-Yates: first m_try entries of feats are the candidates
        for k in range(m_try):
            r = k + _next_below(state, p - k)
            tmp = feats[k]
            feats[k] = feats[r]
            feats[r] = tmp

        best_score = -np.inf
        best_f = -1
        best_t = 0.0
        if extra:
            n_cand = 0
            for c in range(m_try):
                f = feats[c]
                if fmax[f] <= fmin[f]:
                    continue
                u = _next_unit(state)
                t = fmin[f] + u * (fmax[f] - fmin[f])
                if t >= fmax[f]:
                    t = fmin[f]
                cand_f[n_cand] = f
                cand_t[n_cand] = t
                cand_sl[n_cand] = 0.0
                cand_nl[n_cand] = 0
                n_cand += 1
            if n_cand == 0:
                continue
            for k in range(lo, hi):
                row = idx[k]
                yk = yc[k]
                for c in range(n_cand):
                    # branch-free: the comparison outcome is unpredictable
                    go = X[row, cand_f[c]] <= cand_t[c]
                    cand_sl[c] += yk * go
                    cand_nl[c] += go
            for c in range(n_cand):
                sl = cand_sl[c]
                nl = cand_nl[c]
                sr = ctot - sl
                nr = m - nl
                score = sl * sl / nl + sr * sr / nr
                if _better(score, cand_f[c], cand_t[c], best_score, best_f, best_t):
                    best_score = score
                    best_f = cand_f[c]
                    best_t = cand_t[c]
        else:
            for c in range(m_try):
                f = feats[c]
                if fmax[f] <= fmin[f]:
                    continue
                for k in range(lo, hi):
                    vals[k - lo] = X[idx[k], f]
                order = np.argsort(vals[:m])
                sl = 0.0
                for r in range(m - 1):
                    sl += yc[lo + order[r]]
                    a = vals[order[r]]
                    b = vals[order[r + 1]]
                    if a < b:
                        nl = r + 1
                        nr = m - nl
                        sr = ctot - sl
                        score = sl * sl / nl + sr * sr / nr
                        t = 0.5 * (a + b)
                        if t >= b:
                            t = a
                        if _better(score, f, t, best_score, best_f, best_t):
                            best_score = score
                            best_f = f
                            best_t = t

        if best_f < 0:
            continue

        # branch-free partition through scratch buffers: every row is written
        # to both ends and only the cursor on its side advances
        for k in range(lo, hi):
            tmp_i[k] = idx[k]
            tmp_y[k] = yc[k]
        i = lo
        j = hi - 1
        for k in range(lo, hi):
            row = tmp_i[k]
            go = X[row, best_f] <= best_t
            idx[i] = row
            idx[j] = row
            yc[i] = tmp_y[k]
            yc[j] = tmp_y[k]
            i += go
            j -= 1 - go
        mid = i

        feature[node] = best_f
        threshold[node] = best_t
        importance[best_f] += best_score - ctot * ctot / m
        lchild = n_nodes
        rchild = n_nodes + 1
        n_nodes += 2
        left[node] = lchild
        right[node] = rchild

        # right pushed first so the left subtree is numbered depth-first
        st_node[sp] = rchild
        st_lo[sp] = mid
        st_hi[sp] = hi
        sp += 1
        st_node[sp] = lchild
        st_lo[sp] = lo
        st_hi[sp] = mid
        sp += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        n_samples[:n_nodes].copy(),
        importance,
    )


@numba.njit(cache=True, nogil=True)
def _route_tree(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0])
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            node = left[node] + (X[r, feature[node]] > threshold[node])
        out[r] = value[node]
    return out


@numba.njit(cache=True, nogil=True)
def _predict_forest(X, offsets, feature, threshold, left, right, value):
    # tree-major so each tree's upper levels stay in cache across rows
    n_trees = offsets.shape[0]
    acc = np.zeros(X.shape[0])
    for b in range(n_trees):
        base = offsets[b]
        for r in range(X.shape[0]):
            k = base
            while feature[k] >= 0:
                # children are allocated in pairs, so right == left + 1
                k = base + left[k] + (X[r, feature[k]] > threshold[k])
            acc[r] += value[k]
    out = np.empty(X.shape[0])
    for r in range(X.shape[0]):
        out[r] = acc[r] / n_trees
    return out


# --------------------------------------------------------------------------


def tree_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def fit_arrays(X, y, params: ForestParams, threads: int = 1) -> ForestModel:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training set is empty")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y lengths differ")
    params.validate(X.shape[1])

    extra = params.split == EXTRA_RANDOM

    def grow(b):
        arrays = _grow_tree(
            X, y, np.uint64(tree_seed(params.seed, b)),
            params.bootstrap, params.m_try, params.n_min, extra,
        )
        return Tree(*arrays)

    if threads > 1 and params.n_trees > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = tuple(pool.map(grow, range(params.n_trees)))
    else:
        trees = tuple(grow(b) for b in range(params.n_trees))
    return ForestModel(params=params, trees=trees, n_features=X.shape[1])


def fit_forest(train, params: ForestParams, threads: int = 1) -> ForestModel:
    """Grow ``params.n_trees`` trees on an :class:`FrfTable`."""
    if len(train) == 0:
        raise ValueError("training set is empty")
    return fit_arrays(train.features, train.target, params, threads=threads)


def predict(model: ForestModel, features) -> np.ndarray | float:
    """Predict one 8-vector (returns float) or a matrix of rows."""
    x = np.asarray(features, dtype=np.float64)
    out = model.predict(x)
    return float(out[0]) if x.ndim == 1 else out


def feature_importance(model: ForestModel) -> np.ndarray:
    total = np.sum([t.importance for t in model.trees], axis=0)
    s = total.sum()
    if not s > 0:
        warnings.warn("forest has no splits; returning uniform importances", NoSplitWarning)
        return np.full(model.n_features, 1.0 / model.n_features)
    return total / s


def save_model(model: ForestModel, path) -> None:
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "n_features": model.n_features,
        "params": asdict(model.params),
        "trees": [
            {
                "nodes": [
                    [int(t.feature[k]), float(t.threshold[k]), int(t.left[k]),
                     int(t.right[k]), float(t.value[k]), int(t.n_samples[k])]
                    for k in range(t.n_nodes)
                ],
                "importance": t.importance.tolist(),
            }
            for t in model.trees
        ],
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_model(path) -> ForestModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != FORMAT_NAME:
        raise ValueError(f"{path}: not a forest model file")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {doc.get('version')}")
    trees = []
    for rec in doc["trees"]:
        nodes = rec["nodes"]
        cols = list(zip(*nodes)) if nodes else [()] * 6
        trees.append(
            Tree(
                feature=np.array(cols[0], dtype=np.int64),
                threshold=np.array(cols[1], dtype=np.float64),
                left=np.array(cols[2], dtype=np.int64),
                right=np.array(cols[3], dtype=np.int64),
                value=np.array(cols[4], dtype=np.float64),
                n_samples=np.array(cols[5], dtype=np.int64),
                importance=np.array(rec["importance"], dtype=np.float64),
            )
        )
    return ForestModel(
        params=ForestParams(**doc["params"]),
        trees=tuple(trees),
        n_features=doc["n_features"],
    )
