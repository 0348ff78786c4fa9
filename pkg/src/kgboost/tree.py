"""Oblivious decision trees over binned data.

A structure is a set of splits; a row's leaf index is the word whose bit
``b`` is the outcome of split ``b``.  Structures keep the order in which the
splits were chosen but compare and hash as unordered sets, since reordering
the splits of an oblivious tree only relabels its leaves.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from . import _core
from .data import BinnedDataset, SplitCandidate
from .errors import CapacityError
from .rng import open_uniforms

MAX_STRUCTURES = 10**6
MAX_PERMUTATIONS = 720


@dataclass(frozen=True, eq=False)
class TreeStructure:
    splits: tuple[SplitCandidate, ...] = ()

    def __post_init__(self):
        splits = tuple(SplitCandidate(int(f), int(b)) for f, b in self.splits)
        if len(set(splits)) != len(splits):
            raise ValueError(f"duplicate splits in {splits}")
        object.__setattr__(self, "splits", splits)

    def __len__(self) -> int:
        return len(self.splits)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TreeStructure):
            return NotImplemented
        return frozenset(self.splits) == frozenset(other.splits)

    def __hash__(self) -> int:
        return hash(frozenset(self.splits))

    def canonical(self) -> "TreeStructure":
        return TreeStructure(tuple(sorted(self.splits)))

    @property
    def n_leaves(self) -> int:
        return 1 << len(self.splits)

    def extend(self, split: SplitCandidate) -> "TreeStructure":
        return TreeStructure(self.splits + (split,))


@dataclass(frozen=True)
class LeafAssignment:
    leaf_of: np.ndarray
    counts: np.ndarray


def leaf_index(structure: TreeStructure, binned_row) -> int:
    row = np.asarray(binned_row)
    idx = 0
    for b, (j, k) in enumerate(structure.splits):
        if row[j] > k:
            idx |= 1 << b
    return idx


def assign_leaves(structure: TreeStructure, bins: np.ndarray) -> LeafAssignment:
    bins = np.asarray(bins)
    leaf = np.zeros(bins.shape[0], dtype=np.int64)
    for b, (j, k) in enumerate(structure.splits):
        leaf |= (bins[:, j] > k).astype(np.int64) << b
    counts = np.bincount(leaf, minlength=structure.n_leaves)
    return LeafAssignment(leaf, counts)


def score(structure: TreeStructure, residuals, assignment: LeafAssignment) -> float:
    """Split score ``(1/N) sum_j (sum of residuals in leaf j)^2 / N_j``.

    Empty leaves contribute zero.
    """
    r = np.asarray(residuals, dtype=np.float64)
    sums = np.bincount(assignment.leaf_of, weights=r, minlength=structure.n_leaves)
    counts = assignment.counts
    nz = counts > 0
    return float(np.sum(sums[nz] ** 2 / counts[nz]) / len(r))


@dataclass(frozen=True)
class FittedTree:
    structure: TreeStructure
    leaf_values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.leaf_values, dtype=np.float64)
        if vals.shape != (self.structure.n_leaves,):
            raise ValueError(f"expected {self.structure.n_leaves} leaf values, got {vals.shape}")
        if not np.isfinite(vals).all():
            raise ValueError("leaf values must be finite")
        object.__setattr__(self, "leaf_values", vals)

    def predict_binned(self, bins) -> np.ndarray:
        return self.leaf_values[assign_leaves(self.structure, bins).leaf_of]

    def to_dict(self) -> dict:
        return {
            "splits": [{"feature": s.feature, "bin": s.bin} for s in self.structure.splits],
            "leaf_values": [float(v) for v in self.leaf_values],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FittedTree":
        st = TreeStructure(tuple((s["feature"], s["bin"]) for s in doc["splits"]))
        return cls(st, np.asarray(doc["leaf_values"], dtype=np.float64))


def fit_leaf_values(structure: TreeStructure, residuals, assignment: LeafAssignment) -> FittedTree:
    r = np.asarray(residuals, dtype=np.float64)
    sums = np.bincount(assignment.leaf_of, weights=r, minlength=structure.n_leaves)
    counts = assignment.counts
    theta = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return FittedTree(structure, theta)


def _candidate_arrays(data: BinnedDataset, candidates: Sequence[SplitCandidate] | None):
    if candidates is None:
        cands = data.candidates()
    else:
        cands = [SplitCandidate(int(f), int(b)) for f, b in candidates]
    feat = np.array([c.feature for c in cands], dtype=np.int64)
    kbin = np.array([c.bin for c in cands], dtype=np.int64)
    return cands, feat, kbin


def _nbmax(data: BinnedDataset) -> int:
    return int(data.n_per_feature.max()) + 1


def sample_tree(
    data: BinnedDataset,
    residuals,
    m: int,
    beta: float,
    rng: np.random.Generator,
    candidates: Sequence[SplitCandidate] | None = None,
) -> TreeStructure:
    """Grow a structure by greedy selection of ``D + beta * Gumbel`` maxima.

    One uniform is drawn per candidate per level, including candidates
    already taken, so the draw layout is ``(level, candidate)`` regardless
    of the path.  ``beta = 0`` is plain greedy with ties going to the
    lowest ``(feature, bin)``.
    """
    if beta < 0:
        raise ValueError("random strength must be non-negative")
    cands, feat, kbin = _candidate_arrays(data, candidates)
    out = sample_tree_indices(data, residuals, m, beta, rng, 1, feat, kbin)[0]
    return TreeStructure(tuple(cands[s] for s in out))


def sample_tree_indices(data, residuals, m, beta, rng, size, feat=None, kbin=None) -> np.ndarray:
    """Draw ``size`` structures at once; returns candidate indices, shape ``(size, depth)``."""
    if feat is None:
        _, feat, kbin = _candidate_arrays(data, None)
    r = np.ascontiguousarray(residuals, dtype=np.float64)
    if r.shape != (data.n_samples,):
        raise ValueError(f"residuals must have shape ({data.n_samples},)")
    S = len(feat)
    depth = min(m, S)
    out = np.empty((size, depth), dtype=np.int64)
    if depth == 0:
        return out
    chunk = max(1, 2_000_000 // (depth * S))
    for start in range(0, size, chunk):
        stop = min(size, start + chunk)
        U = open_uniforms(rng, (stop - start, depth, S))
        _core.sample_structures(data.bins, r, feat, kbin, _nbmax(data), m, float(beta), U, out[start:stop])
    return out


def enumerate_structures(
    candidates: Sequence[SplitCandidate], m: int, max_structures: int = MAX_STRUCTURES
) -> list[TreeStructure]:
    """Every structure that ``sample_tree`` can return, in canonical order."""
    cands = sorted(SplitCandidate(int(f), int(b)) for f, b in candidates)
    size = min(m, len(cands))
    count = math.comb(len(cands), size)
    if count > max_structures:
        raise CapacityError(f"C({len(cands)}, {size}) tree structures", count, max_structures)
    return [TreeStructure(c) for c in itertools.combinations(cands, size)]


class _ScoreTable:
    """Memoized scores ``D`` keyed by unordered split sets."""

    def __init__(self, bins, residuals):
        self.bins = np.asarray(bins)
        self.r = np.asarray(residuals, dtype=np.float64)
        self._cache: dict[frozenset, float] = {}

    def __call__(self, splits: Iterable[SplitCandidate]) -> float:
        key = frozenset(splits)
        val = self._cache.get(key)
        if val is None:
            st = TreeStructure(tuple(sorted(key)))
            val = score(st, self.r, assign_leaves(st, self.bins))
            self._cache[key] = val
        return val


def _log_tree_probability(structure, table: _ScoreTable, beta, cands) -> float:
    terms = []
    for perm in itertools.permutations(structure.splits):
        logp = 0.0
        prefix: list[SplitCandidate] = []
        for s_next in perm:
            rest = [s for s in cands if s not in prefix]
            logits = np.array([table(prefix + [s]) for s in rest]) / beta
            logp += table(prefix + [s_next]) / beta - logsumexp(logits)
            prefix.append(s_next)
        terms.append(logp)
    return float(logsumexp(terms)) if terms else 0.0


def tree_probability(
    structure: TreeStructure,
    residuals,
    beta: float,
    data: BinnedDataset,
    candidates: Sequence[SplitCandidate] | None = None,
    max_permutations: int = MAX_PERMUTATIONS,
) -> float:
    """Exact probability that ``sample_tree`` returns ``structure``.

    Sums, over every order in which the splits could have been picked, the
    product of per-level softmax probabilities of ``D / beta``.
    """
    if beta <= 0:
        raise ValueError("tree_probability needs beta > 0")
    n_perm = math.factorial(len(structure))
    if n_perm > max_permutations:
        raise CapacityError(f"{len(structure)}! split orderings", n_perm, max_permutations)
    cands = data.candidates() if candidates is None else [SplitCandidate(*c) for c in candidates]
    table = _ScoreTable(data.bins, residuals)
    return math.exp(_log_tree_probability(structure, table, beta, cands))


def structure_distribution(
    data: BinnedDataset,
    residuals,
    m: int,
    beta: float,
    max_structures: int = MAX_STRUCTURES,
    max_permutations: int = MAX_PERMUTATIONS,
) -> tuple[list[TreeStructure], np.ndarray]:
    """All reachable structures with their exact sampling probabilities."""
    cands = data.candidates()
    structures = enumerate_structures(cands, m, max_structures)
    if structures and math.factorial(len(structures[0])) > max_permutations:
        raise CapacityError(f"{len(structures[0])}! split orderings", math.factorial(len(structures[0])), max_permutations)
    table = _ScoreTable(data.bins, residuals)
    logp = np.array([_log_tree_probability(st, table, beta, cands) for st in structures])
    return structures, np.exp(logp)
