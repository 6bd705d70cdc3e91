"""Adaptive detect-ℓ algorithms.

``detect_adaptive_det`` splits the items into ℓ near-equal blocks and runs
binary splitting inside each block until ℓ defectives are confirmed.  It
needs no knowledge of d.  ``detect_adaptive_rand`` first subsamples the
items with probability cℓ/D so that the deterministic search runs on
roughly cℓn/D items; ``detect_adaptive_rand_unknown_d`` estimates D first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    DetectionOutcome,
    InvalidInput,
    TestOracle,
    as_items,
    bernoulli_pool,
)


def split_blocks(items: np.ndarray, ell: int) -> list[np.ndarray]:
    """Partition ``items`` (in order) into ``ell`` contiguous blocks whose sizes differ by at most one."""
    if ell < 1:
        raise InvalidInput(f"need at least one block, got {ell}")
    return np.array_split(np.asarray(items, dtype=np.int64), ell)


def binary_search_block(
    oracle: TestOracle, block: Sequence[int], limit: Optional[int] = None
) -> list[int]:
    """Find the defectives of ``block`` by repeated binary splitting.

    Each round tests the remaining candidates; on a positive answer it halves
    the known-positive set, probing the lower half first, until one item is
    left.  Lower halves that test negative are discarded as clean.  Per
    defective this costs at most ``ceil(log2 |block|) + 1`` tests, plus one
    final negative test unless ``limit`` defectives were found first.
    """
    candidates = np.asarray(block, dtype=np.int64)
    if candidates.size == 0:
        raise InvalidInput("block must be non-empty")
    found: list[int] = []
    while candidates.size and (limit is None or len(found) < limit):
        if not oracle.test(candidates):
            break
        positive = candidates
        discard = []
        while positive.size > 1:
            half = (positive.size + 1) // 2
            lower = positive[:half]
            if oracle.test(lower):
                positive = lower
            else:
                discard.append(lower)
                positive = positive[half:]
        found.append(int(positive[0]))
        discard.append(positive)
        candidates = np.setdiff1d(candidates, np.concatenate(discard), assume_unique=True)
    return found


def adku_bound(n: float, ell: int) -> float:
    """Worst-case test count ``ℓ·log2(n/ℓ) + 3ℓ`` of the block search."""
    return ell * math.log2(n / ell) + 3 * ell


def detect_adaptive_det(
    oracle: TestOracle, ell: int, items: Optional[Sequence[int]] = None
) -> DetectionOutcome:
    """Detect ``ell`` defectives among ``items`` (default ``1..n``) deterministically.

    Blocks are searched left to right and the search stops as soon as
    ``ell`` defectives are confirmed.  If fewer exist the outcome is FAILED
    with the defectives that were found attached as ``partial``.
    """
    pool = oracle.universe.items() if items is None else as_items(items, oracle.n)
    if ell < 1 or ell > pool.size:
        raise InvalidInput(f"need 1 <= ell <= {pool.size}, got {ell}")
    found: list[int] = []
    for block in split_blocks(pool, ell):
        found += binary_search_block(oracle, block, limit=ell - len(found))
        if len(found) == ell:
            return DetectionOutcome.success(found)
    return DetectionOutcome.failure("fewer than ell defectives", partial=found)


@dataclass(frozen=True)
class SubsampleParams:
    """Parameters of the subsampling step.

    ``c`` is ``32·log2(2/δ)`` rounded up; items are kept with probability
    ``cℓ/D`` and the subsample is abandoned when larger than
    ``ceil(3cℓn/D)``.
    """

    n: int
    D: int
    ell: int
    delta: float

    def __post_init__(self) -> None:
        if not 0.0 < self.delta < 1.0:
            raise InvalidInput(f"delta must lie in (0, 1), got {self.delta}")
        if self.D < 1 or self.ell < 1:
            raise InvalidInput("D and ell must be positive")

    @property
    def c(self) -> int:
        return math.ceil(32 * math.log2(2 / self.delta))

    @property
    def subsamples(self) -> bool:
        return self.D >= self.c * self.ell

    @property
    def inclusion_prob(self) -> float:
        return min(1.0, self.c * self.ell / self.D)

    @property
    def size_cap(self) -> int:
        return math.ceil(3 * self.c * self.ell * self.n / self.D)


def detect_adaptive_rand(
    oracle: TestOracle, params: SubsampleParams, rng: np.random.Generator
) -> DetectionOutcome:
    """Randomized adaptive detection with a known estimate ``d/4 <= D <= 4d``."""
    if params.n != oracle.n:
        raise InvalidInput("params were built for a different universe")
    if not params.subsamples:
        return detect_adaptive_det(oracle, params.ell)
    sample = bernoulli_pool(oracle.n, params.inclusion_prob, rng)
    if sample.size > params.size_cap:
        return DetectionOutcome.failure("subsample exceeds size cap", sample_size=int(sample.size))
    if sample.size < params.ell:
        return DetectionOutcome.failure("subsample smaller than ell", sample_size=int(sample.size))
    out = detect_adaptive_det(oracle, params.ell, items=sample)
    out.extra["sample_size"] = int(sample.size)
    return out


def detect_adaptive_rand_unknown_d(
    oracle: TestOracle,
    ell: int,
    delta: float,
    rng: np.random.Generator,
    estimator: Optional[Callable[[TestOracle, float, np.random.Generator], int]] = None,
) -> DetectionOutcome:
    """Estimate d within a factor of two, then run :func:`detect_adaptive_rand`.

    Each stage gets half of the failure budget.  ``estimator`` defaults to
    :func:`grouptest.estimation.estimate_factor2`.
    """
    if not 0.0 < delta < 1.0:
        raise InvalidInput(f"delta must lie in (0, 1), got {delta}")
    if estimator is None:
        from .estimation import estimate_factor2 as estimator
    D = max(1, int(estimator(oracle, delta / 2, rng)))
    out = detect_adaptive_rand(oracle, SubsampleParams(oracle.n, D, ell, delta / 2), rng)
    out.extra["D"] = D
    return out
