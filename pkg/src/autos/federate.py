"""Weighted parameter averaging of per-domain models."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .nn import Model, forward


@dataclass(frozen=True)
class AggregateWeights:
    omega_kept: np.ndarray
    renormalized: bool = True


def renormalize(omega, keep) -> AggregateWeights:
    """Restrict weights to kept domains and rescale them onto the simplex.

    Kept domains that all carry zero weight fall back to equal weights.
    """
    omega = np.asarray(omega, dtype=np.float64)
    keep = np.asarray(keep, dtype=bool)
    if omega.shape != keep.shape:
        raise ShapeError("omega and keep differ in length")
    if not keep.any():
        raise ValueError("at least one domain must be kept")
    if np.any(omega < 0):
        raise ValueError("weights must be non-negative")
    w = omega[keep]
    total = w.sum()
    w = w / total if total > 0 else np.full(w.size, 1.0 / w.size)
    return AggregateWeights(w, True)


def aggregate(models: list[Model], omega, keep=None) -> Model:
    """Parameter-wise sum over kept models with renormalized weights."""
    keep = np.ones(len(models), dtype=bool) if keep is None else np.asarray(keep, dtype=bool)
    if len(models) != keep.size:
        raise ShapeError("one weight and keep flag per model required")
    dims = {m.dims for m in models}
    shapes = {tuple(p.shape for p in m.params()) for m in models}
    if len(dims) != 1 or len(shapes) != 1:
        raise ShapeError(f"models disagree on dimensions: {sorted(dims)}")
    weights = renormalize(omega, keep).omega_kept
    kept = [m for m, k in zip(models, keep) if k]
    out = [np.zeros_like(p) for p in kept[0].params()]
    for w, m in zip(weights, kept):
        for acc, p in zip(out, m.params()):
            acc += w * p
    return Model.from_params(out)


def predict_target(model: Model, x_t: np.ndarray) -> np.ndarray:
    return forward(model, x_t)[1]
