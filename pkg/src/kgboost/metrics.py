"""Uncertainty evaluation: error-rejection curves, PRR and AUC-ROC.

Rejection curves follow the convention that rejected points are handed to
an oracle and contribute zero error, so the error after rejecting a
fraction ``q`` is ``sum(retained squared errors) / n``.  Under that
convention random rejection decreases the error linearly from the full-set
MSE to zero, which is the baseline PRR is measured against.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedMetricError


@dataclass(frozen=True)
class ScoredPrediction:
    prediction: float
    uncertainty: float
    true_target: float | None = None
    domain_label: str | None = None  # "in" | "out"

    def __post_init__(self):
        if not (math.isfinite(self.uncertainty) and self.uncertainty >= 0):
            raise ValueError(f"uncertainty must be finite and >= 0, got {self.uncertainty}")
        if self.domain_label not in (None, "in", "out"):
            raise ValueError(f"domain_label must be 'in' or 'out', got {self.domain_label!r}")


@dataclass(frozen=True)
class RejectionCurve:
    fractions: np.ndarray
    errors: np.ndarray

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fraction", "mse"])
            for q, e in zip(self.fractions, self.errors):
                w.writerow([repr(float(q)), repr(float(e))])


DEFAULT_GRID = np.linspace(0.0, 1.0, 101)


def _arrays(scored):
    """Accept ScoredPrediction lists or a ``(prediction, uncertainty, target)`` tuple."""
    if isinstance(scored, tuple):
        pred, unc, tgt = (np.asarray(a, dtype=np.float64) for a in scored)
        return pred, unc, tgt
    pred = np.array([s.prediction for s in scored], dtype=np.float64)
    unc = np.array([s.uncertainty for s in scored], dtype=np.float64)
    if any(s.true_target is None for s in scored):
        raise ValueError("every prediction needs a true_target")
    tgt = np.array([s.true_target for s in scored], dtype=np.float64)
    return pred, unc, tgt


def retained_count(q: float, n: int) -> int:
    """``ceil((1 - q) * n)``, guarded against floating-point overshoot."""
    return min(n, max(0, math.ceil(round((1.0 - q) * n, 9))))


def _cumulative_errors(sq_err: np.ndarray, order_by: np.ndarray) -> np.ndarray:
    """``out[k]`` = sum of squared errors left after rejecting the ``k`` highest scores."""
    order = np.argsort(-order_by, kind="stable")
    rejected = np.concatenate([[0.0], np.cumsum(sq_err[order])])
    return rejected[-1] - rejected


def rejection_curve(scored, grid: Sequence[float] = DEFAULT_GRID) -> RejectionCurve:
    """Error after rejecting the ``q`` most uncertain points, for each ``q`` in ``grid``.

    Exactly ``ceil((1 - q) * n)`` points are kept; ties in uncertainty are
    rejected in input order.
    """
    pred, unc, tgt = _arrays(scored)
    n = len(pred)
    sq = (pred - tgt) ** 2
    left = _cumulative_errors(sq, unc)
    grid = np.asarray(grid, dtype=np.float64)
    errors = np.array([left[n - retained_count(q, n)] / n for q in grid])
    return RejectionCurve(grid, errors)


def _area_above(left: np.ndarray) -> float:
    """Signed area between the random baseline and a rejection curve over ``k = 0..n``."""
    n = len(left) - 1
    curve = left / n
    baseline = curve[0] * (1.0 - np.arange(n + 1) / n)
    return float(np.trapezoid(baseline - curve, dx=1.0 / n))


def prr(scored) -> float:
    """Prediction-rejection ratio: uncertainty-ordered area over oracle-ordered area.

    1 means the uncertainty ranks errors perfectly, 0 is no better than
    random rejection and negative values are worse than random.
    """
    pred, unc, tgt = _arrays(scored)
    if len(pred) < 2:
        raise UndefinedMetricError("PRR needs at least two points")
    sq = (pred - tgt) ** 2
    a_orc = _area_above(_cumulative_errors(sq, sq))
    if a_orc <= 0:
        raise UndefinedMetricError("all errors are equal; the oracle rejection area is zero")
    return _area_above(_cumulative_errors(sq, unc)) / a_orc


def auc_roc(scored) -> float:
    """P(an out-of-domain score exceeds an in-domain one), ties counted one half."""
    if isinstance(scored, tuple):
        unc, is_out = (np.asarray(a) for a in scored)
        unc = unc.astype(np.float64)
        is_out = is_out.astype(bool)
    else:
        if any(s.domain_label is None for s in scored):
            raise ValueError("every prediction needs a domain_label")
        unc = np.array([s.uncertainty for s in scored], dtype=np.float64)
        is_out = np.array([s.domain_label == "out" for s in scored])
    n_out = int(is_out.sum())
    n_in = len(is_out) - n_out
    if n_out == 0 or n_in == 0:
        raise UndefinedMetricError("AUC-ROC needs both in-domain and out-of-domain points")
    ranks = rankdata(unc)
    u = ranks[is_out].sum() - n_out * (n_out + 1) / 2.0
    return float(u / (n_out * n_in))


def rmse(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    return float(np.sqrt(np.mean((pred - target) ** 2)))
