"""Statistical flow features in the style of Cruz et al., without the
TCP-specific fields.

Each one-minute sample becomes 20 vectors (one per 3 s interval) of 60
values: per-second packet and byte counts for each direction, then a
12-value statistics block for upstream sizes, downstream sizes, upstream
inter-arrival gaps and downstream inter-arrival gaps.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .traffic import DEFAULT_SUBNET, TraceSample, upstream_mask

INTERVAL_MS = 3000.0
N_INTERVALS = 20
N_FEATURES = 60
STAT_NAMES = (
    "max", "min", "mean", "median", "variance", "extreme_outliers", "mild_outliers",
    "shannon_entropy", "perm_entropy_2", "perm_entropy_3", "perm_entropy_4", "perm_entropy_5",
)


def shannon_entropy(values) -> float:
    """Entropy in bits of the empirical distribution over distinct values."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return 0.0
    _, counts = np.unique(v, return_counts=True)
    if counts.size == 1:
        return 0.0
    p = counts / v.size
    return float(-(p * np.log2(p)).sum())


def permutation_entropy(values, order: int) -> float:
    """Bandt-Pompe ordinal-pattern entropy in bits.

    Ties within a window rank the earlier value lower. Series shorter than
    ``order`` give 0.
    """
    if order < 2:
        raise ValueError("order must be >= 2")
    v = np.asarray(values, dtype=np.float64)
    if v.size < order:
        return 0.0
    windows = sliding_window_view(v, order)
    patterns = np.argsort(windows, axis=1, kind="stable")
    codes = patterns @ (order ** np.arange(order, dtype=np.int64))
    _, counts = np.unique(codes, return_counts=True)
    if counts.size == 1:
        return 0.0
    p = counts / codes.size
    return float(-(p * np.log2(p)).sum())


def stat_block(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    out = np.zeros(12)
    if v.size == 0:
        return out
    mu = v.mean()
    var = float(((v - mu) ** 2).mean())
    sigma = math.sqrt(var)
    dev = np.abs(v - mu)
    out[0] = v.max()
    out[1] = v.min()
    out[2] = mu
    out[3] = np.median(v)
    out[4] = var
    out[5] = np.count_nonzero(dev > 2 * sigma)
    out[6] = np.count_nonzero(dev > sigma)
    out[7] = shannon_entropy(v)
    for j, n in enumerate((2, 3, 4, 5)):
        out[8 + j] = permutation_entropy(v, n)
    return out


def _interval_vector(t: np.ndarray, size: np.ndarray, up: np.ndarray, start: float) -> np.ndarray:
    vec = np.zeros(N_FEATURES)
    sec = np.minimum(((t - start) // 1000.0).astype(np.int64), 2)
    for d, mask in enumerate((up, ~up)):
        vec[3 * d:3 * d + 3] = np.bincount(sec[mask], minlength=3)[:3]
        vec[6 + 3 * d:6 + 3 * d + 3] = np.bincount(sec[mask], weights=size[mask], minlength=3)[:3]
    vec[12:24] = stat_block(size[up])
    vec[24:36] = stat_block(size[~up])
    vec[36:48] = stat_block(np.diff(t[up]))
    vec[48:60] = stat_block(np.diff(t[~up]))
    return vec


def extract_baseline(sample: TraceSample, client_subnet=DEFAULT_SUBNET) -> np.ndarray:
    """Baseline feature sequence, shape (20, 60), interval-major."""
    out = np.zeros((N_INTERVALS, N_FEATURES))
    if len(sample) == 0:
        return out
    up = upstream_mask(sample, client_subnet)
    t = sample.timestamps_ms
    size = sample.sizes.astype(np.float64)
    bounds = np.searchsorted(t, np.arange(N_INTERVALS + 1) * INTERVAL_MS, side="left")
    for j in range(N_INTERVALS):
        lo, hi = bounds[j], bounds[j + 1]
        if hi > lo:
            out[j] = _interval_vector(t[lo:hi], size[lo:hi], up[lo:hi], j * INTERVAL_MS)
    return out


def format_baseline_line(sample_id: str, features: np.ndarray) -> str:
    flat = np.asarray(features, dtype=np.float64).reshape(-1)
    if flat.size != N_INTERVALS * N_FEATURES:
        raise ValueError(f"expected {N_INTERVALS * N_FEATURES} values, got {flat.size}")
    return sample_id + "," + ",".join(repr(float(x)) for x in flat) + "\n"


def read_baseline(text: str) -> list[tuple[str, np.ndarray]]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.strip().split(",")
        if len(parts) != 1 + N_INTERVALS * N_FEATURES:
            raise ValueError(f"baseline line {lineno}: expected id and {N_INTERVALS * N_FEATURES} values")
        out.append((parts[0], np.array([float(x) for x in parts[1:]]).reshape(N_INTERVALS, N_FEATURES)))
    return out
