"""Seeded random streams.

Every random draw in the library comes from a :class:`numpy.random.Generator`
backed by the Philox4x64 counter-based bit generator.  Streams are derived
from a single integer master seed with :class:`numpy.random.SeedSequence`
and an explicit ``spawn_key``, so a stream identified by ``(seed, key)`` is
reproducible on any platform and independent of how many sibling streams
were created before it.

Key layout used throughout the package::

    (member,)            one posterior-ensemble member
    (member, PRIOR)      its SamplePrior stage
    (member, NOISE)      its label noise
    (member, BOOST)      its boosting stage
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

PRIOR = 0
NOISE = 1
BOOST = 2


def make_rng(seed: int, key: Sequence[int] = ()) -> np.random.Generator:
    """Return a Philox generator for ``seed`` and the stream ``key``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def as_rng(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        raise ValueError("an explicit seed or Generator is required")
    return make_rng(int(rng))


def open_uniforms(rng: np.random.Generator, shape) -> np.ndarray:
    """Uniform draws on the open interval (0, 1).

    ``Generator.random`` samples ``[0, 1)``; exact zeros are rejected and
    redrawn so that ``log(-log(u))`` is always finite.
    """
    u = rng.random(shape)
    zero = u == 0.0
    while zero.any():
        u[zero] = rng.random(int(zero.sum()))
        zero = u == 0.0
    return u


def gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard Gumbel draws as ``-log(-log(U))``."""
    return -np.log(-np.log(open_uniforms(rng, shape)))
