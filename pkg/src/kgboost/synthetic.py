"""The two-dimensional out-of-domain toy problem.

Points are uniform on the unit square; the training set keeps those inside
the domain predicate and the target is ``x + y``.  The printed predicate
uses a difference of squares, which gives a hyperbolic band; the ``"sum"``
variant uses the annulus ``(x - 1/2)^2 + (y - 1/2)^2`` instead.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import EmptyDatasetError
from .rng import make_rng

VARIANTS = ("verbatim", "sum")

# ensemble preset for the toy problem
PRESET = dict(learning_rate=0.3, prior_iterations=100, iterations=900, sigma=1e-2, delta=1e-4,
              beta=0.1, depth=4, bins=64)
PRESET_MEMBERS = 100
PRESET_POINTS = 10_000


def in_domain(x, y, variant: str = "verbatim") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if variant == "verbatim":
        radial = (x - 0.5) ** 2 - (y - 0.5) ** 2
    elif variant == "sum":
        radial = (x - 0.5) ** 2 + (y - 0.5) ** 2
    else:
        raise ValueError(f"unknown domain variant {variant!r}; choose from {VARIANTS}")
    return (
        (radial >= 0.1) & (radial <= 0.25)
        & ((x <= 0.4) | (x >= 0.6))
        & ((y <= 0.4) | (y >= 0.6))
    )


@dataclass
class HeartSample:
    points: np.ndarray
    target: np.ndarray
    in_domain: np.ndarray

    @property
    def train_points(self) -> np.ndarray:
        return self.points[self.in_domain]

    @property
    def train_target(self) -> np.ndarray:
        return self.target[self.in_domain]

    def write_train_csv(self, path) -> None:
        _write(path, ["x", "y", "target"], np.column_stack([self.train_points, self.train_target]))

    def write_eval_csv(self, path) -> None:
        _write(path, ["x", "y", "target", "in_domain"],
               np.column_stack([self.points, self.target, self.in_domain.astype(float)]), int_last=True)


def _write(path, header, rows, int_last=False):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            cells = [repr(float(v)) for v in row]
            if int_last:
                cells[-1] = str(int(row[-1]))
            w.writerow(cells)


def generate(seed: int, points: int = PRESET_POINTS, variant: str = "verbatim") -> HeartSample:
    """Uniform points on ``[0, 1]^2`` from the Philox stream of ``seed``."""
    pts = make_rng(seed).random((points, 2))
    mask = in_domain(pts[:, 0], pts[:, 1], variant)
    if not mask.any():
        raise EmptyDatasetError(f"no points fell inside the domain out of {points}; draw more points")
    return HeartSample(pts, pts[:, 0] + pts[:, 1], mask)
