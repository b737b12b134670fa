"""Correlation and relative error between true and predicted responses."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EvalResult:
    r: float | None
    rmse_r: float
    n: int
    constant_truth: bool


def _pair(truth, pred, min_len):
    t = np.asarray(truth, dtype=np.float64).ravel()
    p = np.asarray(pred, dtype=np.float64).ravel()
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.size} vs {p.size}")
    if t.size < min_len:
        raise ValueError(f"need at least {min_len} values, got {t.size}")
    return t, p


def pearson_r(truth, pred) -> float | None:
    """Pearson correlation, or ``None`` when either series is constant."""
    t, p = _pair(truth, pred, 2)
    dt = t - t.mean()
    dp = p - p.mean()
    st = math.sqrt(float(np.dot(dt, dt)))
    sp = math.sqrt(float(np.dot(dp, dp)))
    if st == 0.0 or sp == 0.0:
        return None
    r = float(np.dot(dt, dp)) / (st * sp)
    return min(1.0, max(-1.0, r))


def rmse_rel(truth, pred) -> float:
    """RMS error normalised by the RMS of the truth."""
    t, p = _pair(truth, pred, 1)
    if not np.any(t):
        raise ValueError("truth is identically zero; relative error undefined")
    return _rms(p - t) / _rms(t)


def _rms(x: np.ndarray) -> float:
    # scaled by the largest magnitude so squares neither underflow nor overflow
    m = float(np.max(np.abs(x)))
    if m == 0.0:
        return 0.0
    xs = x / m
    return m * math.sqrt(float(np.mean(xs * xs)))


def evaluate(truth, pred) -> EvalResult:
    t, p = _pair(truth, pred, 1)
    r = pearson_r(t, p) if t.size >= 2 else None
    return EvalResult(
        r=r,
        rmse_r=rmse_rel(t, p),
        n=int(t.size),
        constant_truth=bool(t.size < 2 or np.all(t == t[0])),
    )
