"""Small enumerable instance used by the oracle checks and the acceptance suite.

Eight points on a 3 x 3 grid of two features, with two points sharing the
cell (0, 0).  Quantizing with two thresholds per feature puts the cuts at 0
and 1, so there are four candidate splits and C(4, 2) = 6 depth-2
structures.  Leaf indicators of those structures span every function of
the grid cell, so the minimum-norm interpolant equals the per-cell target
mean; ``REFERENCE_FIT`` records it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import BinnedDataset, RawDataset, bin_dataset

FEATURES = [[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [2.0, 1.0], [0.0, 2.0], [1.0, 1.0], [1.0, 2.0], [2.0, 0.0]]
TARGETS = [0.3, -0.5, 1.0, 0.8, -0.2, 0.4, 1.3, -0.7]
REFERENCE_FIT = [-0.1, -0.1, 1.0, 0.8, -0.2, 0.4, 1.3, -0.7]
BINS = 2
DEPTH = 2

# raw rows for probing: three training cells and the two empty cells
PROBES = [[0.0, 0.0], [1.0, 1.0], [2.0, 0.0], [0.0, 1.0], [2.0, 2.0]]


@dataclass
class Fixture:
    raw: RawDataset
    bins: int
    depth: int
    reference_fit: np.ndarray | None

    @property
    def data(self) -> BinnedDataset:
        return bin_dataset(self.raw, self.bins)

    def to_dict(self) -> dict:
        doc = {
            "features": self.raw.features.tolist(),
            "targets": self.raw.targets.tolist(),
            "bins": self.bins,
            "depth": self.depth,
        }
        if self.reference_fit is not None:
            doc["reference_fit"] = self.reference_fit.tolist()
        return doc


def bundled() -> Fixture:
    return Fixture(RawDataset(np.array(FEATURES), np.array(TARGETS)), BINS, DEPTH, np.array(REFERENCE_FIT))


def load_fixture(path) -> Fixture:
    doc = json.loads(Path(path).read_text())
    ref = doc.get("reference_fit")
    return Fixture(
        RawDataset(np.asarray(doc["features"], float), np.asarray(doc["targets"], float)),
        int(doc["bins"]),
        int(doc["depth"]),
        None if ref is None else np.asarray(ref, float),
    )


def write_fixture(fx: Fixture, path) -> None:
    Path(path).write_text(json.dumps(fx.to_dict(), indent=2) + "\n")
