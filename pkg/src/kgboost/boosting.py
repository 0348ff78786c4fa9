"""Regularized gradient boosting with randomized oblivious trees.

Each iteration fits a tree to the residuals ``r = y - f`` and updates

    f <- (1 - lr * l2 / N) * f + lr * tree(x)

Shrinkage is folded into per-tree coefficients when training ends, so tree
``t`` of ``T`` carries ``lr * (1 - lr * l2 / N) ** (T - 1 - t)``.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import _core
from .data import BinnedDataset, FeatureQuantizer
from .errors import ConfigError, ShapeError
from .rng import as_rng, open_uniforms
from .tree import FittedTree, TreeStructure

# Appendix-style experiment defaults: kernel scale and noise scale
DEFAULT_SIGMA = 1e-2
DEFAULT_DELTA = 1e-4
BETA_GRID = (1e-2, 1e-1, 1.0)

_CHUNK_DRAWS = 1 << 21


@dataclass(frozen=True)
class BoostConfig:
    """Hyper-parameters for training and posterior sampling.

    ``l2`` is the shrinkage regularization (0 gives plain boosting; the
    theory assumes it is positive).  ``prior_iterations``, ``sigma`` and
    ``delta`` are only read by posterior sampling, which overrides ``l2``
    with ``delta**2 / sigma**2``.
    """

    learning_rate: float = 0.1
    l2: float = 0.0
    iterations: int = 100
    depth: int = 6
    bins: int = 64
    beta: float = 0.1
    seed: int = 0
    prior_iterations: int = 100
    sigma: float = DEFAULT_SIGMA
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.l2 < 0:
            raise ConfigError(f"l2 must be >= 0, got {self.l2}")
        if self.iterations < 0 or self.prior_iterations < 0:
            raise ConfigError("iteration counts must be >= 0")
        if self.depth < 0:
            raise ConfigError("depth must be >= 0")
        if self.bins < 1:
            raise ConfigError("bins must be >= 1")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if not (self.sigma > 0 and self.delta > 0):
            raise ConfigError("sigma and delta must be > 0")

    def check_step(self, n_samples: int) -> None:
        """Reject ``lr * (l2 / N + 1) >= 1`` when ``l2 > 0``."""
        if self.l2 > 0 and self.learning_rate * (self.l2 / n_samples + 1.0) >= 1.0:
            raise ConfigError(
                f"learning_rate * (l2 / N + 1) = {self.learning_rate * (self.l2 / n_samples + 1.0):.6g} "
                "must be < 1 when l2 > 0"
            )

    @property
    def posterior_l2(self) -> float:
        return self.delta**2 / self.sigma**2

    def replace(self, **kw) -> "BoostConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class TreeEnsemble:
    """Trees stored column-wise; split slots past ``depth[t]`` hold -1."""

    feat: np.ndarray
    kbin: np.ndarray
    depth: np.ndarray
    leaf_values: np.ndarray
    coef: np.ndarray

    @classmethod
    def empty(cls, n_trees: int, depth: int) -> "TreeEnsemble":
        return cls(
            np.full((n_trees, depth), -1, dtype=np.int64),
            np.full((n_trees, depth), -1, dtype=np.int64),
            np.zeros(n_trees, dtype=np.int64),
            np.zeros((n_trees, 1 << depth)),
            np.zeros(n_trees),
        )

    def __len__(self) -> int:
        return len(self.depth)

    def predict_binned(self, bins) -> np.ndarray:
        bins = np.ascontiguousarray(bins, dtype=np.int64)
        out = np.zeros(bins.shape[0])
        if len(self):
            _core.predict_trees(bins, self.feat, self.kbin, self.depth, self.leaf_values, self.coef, out)
        return out

    def tree(self, t: int) -> FittedTree:
        d = int(self.depth[t])
        st = TreeStructure(tuple(zip(self.feat[t, :d].tolist(), self.kbin[t, :d].tolist())))
        return FittedTree(st, self.leaf_values[t, : 1 << d])

    def structure(self, t: int) -> TreeStructure:
        d = int(self.depth[t])
        return TreeStructure(tuple(zip(self.feat[t, :d].tolist(), self.kbin[t, :d].tolist())))

    def to_list(self) -> list[dict]:
        out = []
        for t in range(len(self)):
            doc = self.tree(t).to_dict()
            doc["coefficient"] = float(self.coef[t])
            out.append(doc)
        return out

    @classmethod
    def from_list(cls, docs: list[dict]) -> "TreeEnsemble":
        depth = max((len(d["splits"]) for d in docs), default=0)
        ens = cls.empty(len(docs), depth)
        for t, doc in enumerate(docs):
            tr = FittedTree.from_dict(doc)
            d = len(tr.structure)
            ens.depth[t] = d
            for q, s in enumerate(tr.structure.splits):
                ens.feat[t, q], ens.kbin[t, q] = s.feature, s.bin
            ens.leaf_values[t, : 1 << d] = tr.leaf_values
            ens.coef[t] = doc["coefficient"]
        return ens


@dataclass
class TrainingTrace:
    """Per-iteration ``||y - f_t||^2 / (2N)`` and cumulative shrinkage."""

    mse: np.ndarray
    factor: np.ndarray

    def rows(self) -> Iterable[tuple[int, float, float]]:
        for t in range(len(self.mse)):
            yield t, float(self.mse[t]), float(self.factor[t])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "mse", "factor"])
            for t, mse, fac in self.rows():
                w.writerow([t, repr(mse), repr(fac)])


@dataclass
class BoostedModel:
    ensemble: TreeEnsemble
    config: BoostConfig
    quantizer: FeatureQuantizer | None = None
    n_train: int = 0
    train_fit: np.ndarray | None = field(default=None, repr=False)
    trace: TrainingTrace | None = field(default=None, repr=False)
    snapshots: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def trees(self) -> list[tuple[FittedTree, float]]:
        return [(self.ensemble.tree(t), float(self.ensemble.coef[t])) for t in range(len(self.ensemble))]

    def predict_binned(self, bins) -> np.ndarray:
        return self.ensemble.predict_binned(bins)

    def predict(self, rows) -> np.ndarray:
        if self.quantizer is None:
            raise ValueError("model has no quantizer; use predict_binned")
        return self.predict_binned(self.quantizer.transform(rows))

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "n_train": self.n_train,
            "quantizer": None if self.quantizer is None else self.quantizer.to_dict(),
            "trees": self.ensemble.to_list(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":")) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_dict(cls, doc: dict) -> "BoostedModel":
        q = doc.get("quantizer")
        return cls(
            TreeEnsemble.from_list(doc["trees"]),
            BoostConfig(**doc["config"]),
            None if q is None else FeatureQuantizer.from_dict(q),
            int(doc.get("n_train", 0)),
        )

    @classmethod
    def load(cls, path) -> "BoostedModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _chunks(total: int, per_iter: int, breaks: Iterable[int] = ()):
    step = max(1, _CHUNK_DRAWS // max(per_iter, 1))
    cuts = sorted({0, total, *[b for b in breaks if 0 < b < total]})
    for a, b in zip(cuts[:-1], cuts[1:]):
        for start in range(a, b, step):
            yield start, min(b, start + step)


def run_boosting(
    data: BinnedDataset,
    targets: np.ndarray,
    learning_rate: float,
    l2: float,
    iterations: int,
    depth: int,
    beta: float,
    rng: np.random.Generator,
    trace: bool = False,
    checkpoints: Iterable[int] = (),
):
    """Core loop shared by :func:`train` and posterior sampling.

    Returns ``(ensemble, f_at_train, mse_or_None, snapshots)``.
    """
    y = np.ascontiguousarray(targets, dtype=np.float64)
    N = data.n_samples
    feat, kbin = data.candidate_arrays()
    S = len(feat)
    m_eff = min(depth, S)
    nbmax = int(data.n_per_feature.max()) + 1
    shrink = 1.0 - learning_rate * l2 / N
    ens = TreeEnsemble.empty(iterations, m_eff)
    f = np.zeros(N)
    mse = np.empty(iterations) if trace else np.empty(0)
    want = sorted({c for c in checkpoints if 0 <= c <= iterations})
    snaps = {0: f.copy()} if 0 in want else {}
    for a, b in _chunks(iterations, m_eff * S, want):
        if m_eff > 0:
            U = open_uniforms(rng, (b - a, m_eff, S))
        else:
            U = np.empty((b - a, 0, max(S, 1)))
        _core.boost_chunk(
            data.bins, y, f, feat, kbin, nbmax, depth, float(beta), float(learning_rate), shrink, U,
            ens.feat[a:b], ens.kbin[a:b], ens.depth[a:b], ens.leaf_values[a:b],
            mse[a:b] if trace else mse,
        )
        if b in want:
            snaps[b] = f.copy()
    ens.coef[:] = learning_rate * shrink ** np.arange(iterations - 1, -1, -1, dtype=np.float64)
    return ens, f, (mse if trace else None), snaps


def train(
    data: BinnedDataset,
    cfg: BoostConfig,
    rng: np.random.Generator | int | None = None,
    trace: bool = False,
    checkpoints: Iterable[int] = (),
) -> BoostedModel:
    """Fit ``cfg.iterations`` trees to ``data.targets``.

    ``rng`` defaults to the stream for ``cfg.seed``.  With ``trace`` the
    model carries a :class:`TrainingTrace` of ``T + 1`` rows; ``checkpoints``
    lists iterations at which ``f_t`` on the training rows is recorded in
    ``model.snapshots``.
    """
    cfg.check_step(data.n_samples)
    gen = as_rng(cfg.seed if rng is None else rng)
    ens, f, mse, snaps = run_boosting(
        data, data.targets, cfg.learning_rate, cfg.l2, cfg.iterations, cfg.depth, cfg.beta, gen,
        trace=trace, checkpoints=checkpoints,
    )
    model = BoostedModel(ens, cfg, data.quantizer, data.n_samples, f, snapshots=snaps)
    if trace:
        y = data.targets
        mse0 = float(np.dot(y, y)) / (2 * data.n_samples)
        shrink = 1.0 - cfg.learning_rate * cfg.l2 / data.n_samples
        model.trace = TrainingTrace(
            np.concatenate([[mse0], mse]),
            shrink ** np.arange(cfg.iterations + 1, dtype=np.float64),
        )
    return model


def predict(model: BoostedModel, rows) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    if model.quantizer is not None and rows.ndim == 2 and rows.shape[1] != model.quantizer.n_features:
        raise ShapeError(f"expected {model.quantizer.n_features} features, got {rows.shape[1]}")
    return model.predict(rows)


def training_trace(model: BoostedModel) -> TrainingTrace:
    if model.trace is None:
        raise ValueError("model was trained without trace=True")
    return model.trace
