"""Error metrics."""
from __future__ import annotations

import numpy as np

from .errors import ContractViolation, DomainError
from .fields import Field


def rel_l2(pred, truth, weights=None) -> float:
    """Relative error ``||pred - truth|| / ||truth||`` in the grid-weighted discrete L2 norm."""
    if isinstance(truth, Field):
        if isinstance(pred, Field) and pred.grid != truth.grid:
            raise ContractViolation("prediction and truth live on different grids")
        w = truth.grid.weights().ravel() if weights is None else np.ravel(weights)
        truth = truth.values
    else:
        w = np.ones(np.size(truth)) if weights is None else np.ravel(weights)
    p = pred.values.ravel() if isinstance(pred, Field) else np.ravel(pred)
    t = np.ravel(truth)
    if p.shape != t.shape:
        raise ContractViolation(f"shape mismatch {p.shape} vs {t.shape}")
    den = float(w @ (t * t))
    if den <= 0:
        raise DomainError("truth has zero norm")
    d = p - t
    return float(np.sqrt(w @ (d * d) / den))


def summarize(errors) -> dict:
    e = np.asarray(errors, float)
    return {"mean": float(e.mean()), "max": float(e.max()), "median": float(np.median(e))}


def ratio(test_mean: float, train_mean: float) -> float:
    return float(test_mean / train_mean) if train_mean > 0 else float("inf")
