"""Prior and posterior sampling with random-tree ensembles.

``sample_prior`` draws a centered random function whose covariance is the
prior kernel of the boosting procedure; ``sample_posterior`` shifts the
labels by a scaled prior draw plus label noise and boosts on the result
(sample-then-optimize).  Averaging many posterior samples gives Monte-Carlo
estimates of the posterior mean and variance.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _core
from .boosting import BoostConfig, BoostedModel, TreeEnsemble, _chunks, run_boosting
from .data import BinnedDataset
from .errors import ConfigError
from .rng import BOOST, NOISE, PRIOR, make_rng, open_uniforms


@dataclass
class PriorSample:
    ensemble: TreeEnsemble
    train_values: np.ndarray = field(repr=False)

    def predict_binned(self, bins) -> np.ndarray:
        return self.ensemble.predict_binned(bins)


@dataclass
class PosteriorSample:
    prior: PriorSample
    boosted: BoostedModel
    sigma: float
    delta: float

    @property
    def l2(self) -> float:
        return self.delta**2 / self.sigma**2

    def predict_binned(self, bins) -> np.ndarray:
        return self.sigma * self.prior.predict_binned(bins) + self.boosted.predict_binned(bins)

    def predict(self, rows) -> np.ndarray:
        if self.boosted.quantizer is None:
            raise ValueError("sample has no quantizer; use predict_binned")
        return self.predict_binned(self.boosted.quantizer.transform(rows))


@dataclass
class EnsembleSummary:
    """Monte-Carlo moments over ``k`` posterior samples.

    ``variance`` is the unbiased sample variance of the returned
    predictions; the label-noise term ``delta**2`` is not in it and is added
    by :attr:`predictive_variance`.
    """

    mean: np.ndarray
    variance: np.ndarray
    k: int
    delta: float
    samples: np.ndarray | None = field(default=None, repr=False)

    @property
    def predictive_variance(self) -> np.ndarray:
        return self.variance + self.delta**2

    @property
    def mean_stderr(self) -> np.ndarray:
        return np.sqrt(self.variance / self.k)

    def variance_stderr(self) -> np.ndarray:
        """Standard error of the sample variance from the fourth central moment."""
        if self.samples is None:
            raise ValueError("member predictions were not kept")
        c = self.samples - self.mean
        m4 = np.mean(c**4, axis=0)
        m2 = np.mean(c**2, axis=0)
        k = self.k
        return np.sqrt(np.maximum(m4 - (k - 3) / (k - 1) * m2**2, 0.0) / k)


def sample_prior(data: BinnedDataset, T0: int, m: int, rng: np.random.Generator) -> PriorSample:
    """Sum of ``T0`` random trees scaled by ``1/sqrt(T0)``.

    Structures come from tree sampling on zero residuals with unit random
    strength, which makes every structure equally likely; leaf ``j`` gets a
    ``N(0, N / max(N_j, 1))`` value.
    """
    if T0 < 1:
        raise ConfigError("prior needs at least one tree")
    N = data.n_samples
    feat, kbin = data.candidate_arrays()
    S = len(feat)
    m_eff = min(m, S)
    nbmax = int(data.n_per_feature.max()) + 1
    ens = TreeEnsemble.empty(T0, m_eff)
    h = np.zeros(N)
    scale = 1.0 / math.sqrt(T0)
    for a, b in _chunks(T0, m_eff * S + (1 << m_eff)):
        if m_eff > 0:
            U = open_uniforms(rng, (b - a, m_eff, S))
        else:
            U = np.empty((b - a, 0, max(S, 1)))
        Z = rng.standard_normal((b - a, 1 << m_eff))
        _core.prior_chunk(
            data.bins, h, feat, kbin, nbmax, m, scale, U, Z,
            ens.feat[a:b], ens.kbin[a:b], ens.depth[a:b], ens.leaf_values[a:b],
        )
    ens.coef[:] = scale
    return PriorSample(ens, h)


def sample_posterior(data: BinnedDataset, cfg: BoostConfig, member: int = 0) -> PosteriorSample:
    """One draw of the composite model ``sigma * h + f``.

    ``f`` is boosted for ``cfg.iterations`` rounds with ``l2 = delta**2 /
    sigma**2`` on the labels ``y - sigma * h(x) + N(0, delta**2)``.  All
    randomness comes from streams keyed by ``(cfg.seed, member)``.
    """
    sigma, delta = cfg.sigma, cfg.delta
    l2 = cfg.posterior_l2
    bcfg = cfg.replace(l2=l2)
    bcfg.check_step(data.n_samples)
    prior = sample_prior(data, cfg.prior_iterations, cfg.depth, make_rng(cfg.seed, (member, PRIOR)))
    noise = make_rng(cfg.seed, (member, NOISE)).standard_normal(data.n_samples)
    labels = data.targets - sigma * prior.train_values + delta * noise
    ens, f, _, _ = run_boosting(
        data, labels, cfg.learning_rate, l2, cfg.iterations, cfg.depth, cfg.beta,
        make_rng(cfg.seed, (member, BOOST)),
    )
    boosted = BoostedModel(ens, bcfg, data.quantizer, data.n_samples, f)
    return PosteriorSample(prior, boosted, sigma, delta)


def default_threads() -> int:
    env = os.environ.get("KGB_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def ensemble(
    data: BinnedDataset,
    cfg: BoostConfig,
    k: int,
    queries=None,
    *,
    query_bins=None,
    members: Sequence[int] | None = None,
    threads: int | None = None,
    keep_samples: bool = True,
    on_member=None,
) -> EnsembleSummary:
    """Train ``k`` independent posterior samples and summarize them at the queries.

    Member ``i`` is a pure function of ``(cfg.seed, i)``; ``members``
    overrides the index list.  ``on_member(i, sample)`` is called for each
    trained member, e.g. to persist it.
    """
    ids = list(range(k)) if members is None else [int(i) for i in members]
    if len(ids) < 2:
        raise ValueError("an ensemble needs at least two members")
    if query_bins is None:
        if queries is None:
            query_bins = data.bins
        else:
            query_bins = data.bin_rows(queries)
    query_bins = np.ascontiguousarray(query_bins, dtype=np.int64)

    def run(i):
        s = sample_posterior(data, cfg, i)
        if on_member is not None:
            on_member(i, s)
        return s.predict_binned(query_bins)

    n_threads = min(threads or default_threads(), len(ids))
    if n_threads > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            preds = list(pool.map(run, ids))
    else:
        preds = [run(i) for i in ids]
    P = np.vstack(preds)
    return EnsembleSummary(P.mean(axis=0), P.var(axis=0, ddof=1), len(ids), cfg.delta, P if keep_samples else None)
