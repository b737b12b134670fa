"""Comparison regressors and the seed-table benchmark."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numba
import numpy as np

from .dataset import FrfTable, split_half
from .metrics import evaluate
from .trees import BEST_EXHAUSTIVE, EXTRA_RANDOM, ForestParams, feature_importance, fit_forest

RIDGE_JITTER = 1e-10
STD_FLOOR = 1e-12


@dataclass(frozen=True)
class BenchmarkRow:
    model: str
    r: float | None
    rmse_r: float
    wall_time_s: float
    importance: tuple[float, ...] | None = None  # forests only, in feature order

    @property
    def r_defined(self) -> bool:
        return self.r is not None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["r_defined"] = self.r_defined
        return d


def fit_linear(X, y) -> tuple[np.ndarray, float]:
    """Least squares with intercept; returns (coefficients, intercept).

    Solved through the normal equations on centred data with a tiny ridge
    on the diagonal so rank-deficient designs (e.g. a constant feature)
    still have a solution.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] < X.shape[1] + 1:
        raise ValueError(f"need at least {X.shape[1] + 1} rows, got {X.shape[0]}")
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    gram = Xc.T @ Xc
    gram[np.diag_indices_from(gram)] += RIDGE_JITTER
    try:
        coef = np.linalg.solve(gram, Xc.T @ (y - y_mean))
    except np.linalg.LinAlgError as exc:
        raise ValueError("degenerate design matrix") from exc
    if not np.all(np.isfinite(coef)):
        raise ValueError("degenerate design matrix")
    return coef, float(y_mean - x_mean @ coef)


def fit_predict_linear(train: FrfTable, test: FrfTable) -> np.ndarray:
    coef, intercept = fit_linear(train.features, train.target)
    return test.features @ coef + intercept


@numba.njit(cache=True, nogil=True)
def _knn_mean(train, y, queries, k):
    n = train.shape[0]
    p = train.shape[1]
    out = np.empty(queries.shape[0])
    best_d = np.empty(k)
    best_i = np.empty(k, dtype=np.int64)
    for r in range(queries.shape[0]):
        filled = 0
        for t in range(n):
            d = 0.0
            for c in range(p):
                diff = queries[r, c] - train[t, c]
                d += diff * diff
            # strict comparison keeps the lower row index on equal distance
            if filled < k:
                pos = filled
                filled += 1
            elif d < best_d[k - 1]:
                pos = k - 1
            else:
                continue
            while pos > 0 and best_d[pos - 1] > d:
                best_d[pos] = best_d[pos - 1]
                best_i[pos] = best_i[pos - 1]
                pos -= 1
            best_d[pos] = d
            best_i[pos] = t
        acc = 0.0
        for m in range(k):
            acc += y[best_i[m]]
        out[r] = acc / k
    return out


def fit_predict_knn(train: FrfTable, test: FrfTable, k: int = 5) -> np.ndarray:
    """Mean target of the k nearest training rows in standardised feature space."""
    n = len(train)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} training rows")
    mu = train.features.mean(axis=0)
    sd = np.maximum(train.features.std(axis=0), STD_FLOOR)
    Xt = np.ascontiguousarray((train.features - mu) / sd)
    Xq = np.ascontiguousarray((test.features - mu) / sd)
    return _knn_mean(Xt, np.ascontiguousarray(train.target), Xq, k)


def run_benchmark(
    table: FrfTable,
    seed: int,
    *,
    knn_k: int = 5,
    forest: ForestParams | None = None,
    threads: int = 1,
) -> list[BenchmarkRow]:
    """Half-split the table and score the four untuned regressors on it."""
    if len(table) < 100:
        raise ValueError(f"benchmark needs at least 100 rows, got {len(table)}")
    forest_p = forest or ForestParams()
    train, test = split_half(table, seed)

    def forest(split, bootstrap):
        return lambda: fit_forest(
            train, ForestParams(
                n_trees=forest_p.n_trees, m_try=forest_p.m_try, n_min=forest_p.n_min,
                bootstrap=bootstrap, split=split, seed=seed,
            ), threads=threads,
        )

    # fitters return predictions or a fitted forest
    models = {
        "Linear": lambda: fit_predict_linear(train, test),
        "kNN": lambda: fit_predict_knn(train, test, knn_k),
        "RandomForest": forest(BEST_EXHAUSTIVE, True),
        "ExtraTree": forest(EXTRA_RANDOM, forest_p.bootstrap),
    }
    rows = []
    for name, fn in models.items():
        t0 = time.perf_counter()
        fitted = fn()
        importance = None
        if isinstance(fitted, np.ndarray):
            pred = fitted
        else:
            pred = fitted.predict(test.features)
            importance = tuple(float(v) for v in feature_importance(fitted))
        elapsed = time.perf_counter() - t0
        ev = evaluate(test.target, pred)
        rows.append(BenchmarkRow(model=name, r=ev.r, rmse_r=ev.rmse_r, wall_time_s=elapsed, importance=importance))
    rows.sort(key=lambda row: row.rmse_r)
    return rows
