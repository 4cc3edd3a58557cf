"""Central finite-difference gradient checks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .ops import record_branches
from .tensor import Tape, Tensor

STEP = 1e-3


def relative_error(analytic, numeric, floor: float = 1e-3) -> np.ndarray:
    """Elementwise |a - n| / max(|a|, |n|, floor).

    The floor keeps near-zero gradients from turning round-off into huge
    ratios; above it the measure is a true relative error.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_grad(loss_fn: Callable[[], float], tensor: Tensor, step: float = STEP,
                 indices: Sequence[int] | None = None, skip_kinks: bool = False):
    """Central differences of ``loss_fn()`` with respect to entries of *tensor* (flat indices).

    With *skip_kinks*, also returns a boolean mask of entries whose probes
    changed a piecewise branch (a ReLU sign, a max winner, a clip), where a
    finite difference does not estimate the derivative.
    """
    flat = tensor.data.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = np.zeros(flat.size, dtype=np.float64)
    kinked = np.zeros(flat.size, dtype=bool)
    base = None
    if skip_kinks:
        with record_branches() as base:
            loss_fn()
    for i in idx:
        orig = flat[i]
        with record_branches() as plus_log:
            flat[i] = orig + step
            plus = float(loss_fn())
        with record_branches() as minus_log:
            flat[i] = orig - step
            minus = float(loss_fn())
        flat[i] = orig
        out[i] = (plus - minus) / (2 * step)
        if skip_kinks:
            kinked[i] = plus_log != base or minus_log != base
    if skip_kinks:
        return out.reshape(tensor.shape), kinked.reshape(tensor.shape)
    return out.reshape(tensor.shape)


@dataclass
class GradCheck:
    worst: float
    checked: int
    skipped: int


def check_gradients_detail(forward: Callable[[], Tensor], tensors: Sequence[Tensor], step: float = STEP,
                           max_entries: int | None = None, seed: int = 0, skip_kinks: bool = True) -> GradCheck:
    """Compare tape gradients with central differences entry by entry.

    *forward* must build a scalar loss from *tensors*. When *max_entries* is
    given, at most that many entries per tensor are probed, chosen with a
    seeded generator. Entries whose probes cross a branch point are left
    out (and counted) when *skip_kinks* is set.
    """
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = forward()
    tape.backward(loss)
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64) for t in tensors]
    rng = np.random.default_rng(seed)
    worst, checked, skipped = 0.0, 0, 0
    for t, a in zip(tensors, analytic):
        n = t.data.size
        idx = np.arange(n)
        if max_entries is not None and n > max_entries:
            idx = np.sort(rng.choice(n, size=max_entries, replace=False))
        num, kinked = numeric_grad(lambda: forward().data, t, step, idx, skip_kinks=True)
        keep = idx if not skip_kinks else idx[~kinked.reshape(-1)[idx]]
        skipped += len(idx) - len(keep)
        checked += len(keep)
        err = relative_error(a.reshape(-1)[keep], num.reshape(-1)[keep])
        if err.size:
            worst = max(worst, float(err.max()))
    return GradCheck(worst, checked, skipped)


def check_gradients(forward: Callable[[], Tensor], tensors: Sequence[Tensor], step: float = STEP,
                    max_entries: int | None = None, seed: int = 0, skip_kinks: bool = True) -> float:
    """Worst elementwise relative error; see :func:`check_gradients_detail`."""
    return check_gradients_detail(forward, tensors, step, max_entries, seed, skip_kinks).worst
