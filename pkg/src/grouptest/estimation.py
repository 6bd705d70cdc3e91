"""Estimators for the number of defectives d.

All estimators only look at answers, never at pool contents, so their pools
are :class:`~grouptest.core.RandomPools`.

* :func:`estimate_coarse` squares λ until a Bernoulli(1 - 2^(-λ/n)) pool
  answers 1; the output ``δn/(4λ)`` is a one-sided, polynomially loose
  estimate.
* :func:`refine_binary_search` binary-searches ``log2(d/D)`` over the
  complete tree on ``[0, 2^τ - 1]`` with half-integer node labels.
* :func:`threshold_test` separates ``d < m`` from ``d > (1+ε)m`` in one round.
* :func:`refine_to_constant_factor` binary-searches a geometric grid with
  threshold tests.
* :func:`estimate_factor2` and :func:`plan_factor4` compose these.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .core import (
    Batch,
    InvalidInput,
    PoolingMatrix,
    RandomPools,
    TestOracle,
    ZeroDefectives,
)

# Repetition constant of the threshold test: 128·(2e)^2.
K3_DEFAULT = 128 * (2 * math.e) ** 2


def _check_delta(delta: float) -> float:
    if not 0.0 < delta < 1.0:
        raise InvalidInput(f"delta must lie in (0, 1), got {delta}")
    return float(delta)


def _prob_from_exponent(x: float) -> float:
    """``1 - 2^(-x)`` without cancellation for small ``x``."""
    return -math.expm1(-x * math.log(2.0))


# ---------------------------------------------------------------------------
# threshold test


@dataclass(frozen=True)
class ThresholdParams:
    m: float
    eps: float
    delta: float
    k3: float = K3_DEFAULT

    def __post_init__(self) -> None:
        if self.m <= 0:
            raise InvalidInput(f"threshold m must be positive, got {self.m}")
        if not 0.0 < self.eps <= 1.0:
            raise InvalidInput(f"eps must lie in (0, 1], got {self.eps}")
        _check_delta(self.delta)
        if self.k3 <= 0:
            raise InvalidInput("k3 must be positive")

    @property
    def inclusion_prob(self) -> float:
        return -math.expm1(-math.log1p(self.eps) / (self.m * self.eps))

    @property
    def cutoff(self) -> float:
        e = self.eps
        return (1 + e) ** (-(1 + e) / e) + e / (4 * math.e)

    @property
    def reps(self) -> int:
        return math.ceil(self.k3 / self.eps**2 * math.log2(1 / self.delta))


def threshold_pools(n: int, params: ThresholdParams, rng: np.random.Generator) -> RandomPools:
    return RandomPools.draw(n, params.reps, params.inclusion_prob, rng)


def threshold_decide(answers: np.ndarray, params: ThresholdParams) -> int:
    """0 when the fraction of negative pools reaches the cutoff, else 1."""
    zero_fraction = 1.0 - float(np.mean(answers))
    return 0 if zero_fraction >= params.cutoff else 1


def threshold_test(oracle: TestOracle, params: ThresholdParams, rng: np.random.Generator) -> int:
    """One-round test: 0 means "d < m" and 1 means "d > (1+ε)m" (w.p. ≥ 1-δ each)."""
    answers = oracle.answer_batch(threshold_pools(oracle.n, params, rng))
    return threshold_decide(answers, params)


# ---------------------------------------------------------------------------
# coarse doubling estimate


@dataclass(frozen=True)
class CoarseEstimate:
    D: float
    lam_final: int
    tests_used: int
    ladder: tuple[int, ...] = ()


def coarse_bounds(n: int, d: int, delta: float) -> tuple[float, float]:
    """Interval ``[δd²/(4n·log2²(2/δ)), d]`` the coarse estimate lands in w.p. ≥ 1-δ."""
    return delta * d * d / (4 * n * math.log2(2 / delta) ** 2), float(d)


def estimate_coarse(oracle: TestOracle, delta: float, rng: np.random.Generator) -> CoarseEstimate:
    """Square λ (starting at 2) until a Bernoulli(1 - 2^(-λ/n)) pool is positive.

    Raises :class:`ZeroDefectives` once λ exceeds ``n²`` without a positive
    answer.
    """
    delta = _check_delta(delta)
    n = oracle.n
    lam = 2
    ladder = []
    while lam <= n * n:
        ladder.append(lam)
        pool = RandomPools.draw(n, 1, _prob_from_exponent(lam / n), rng)
        if oracle.answer_batch(pool)[0]:
            return CoarseEstimate(delta * n / (4 * lam), lam, len(ladder), tuple(ladder))
        lam = lam * lam
    raise ZeroDefectives(f"no positive answer up to lambda > n^2 after {len(ladder)} tests")


# ---------------------------------------------------------------------------
# binary search over T(τ)


@dataclass(frozen=True)
class SearchTreeParams:
    H: float
    tau: int

    @classmethod
    def from_coarse(cls, n: int, D: float, delta: float) -> "SearchTreeParams":
        H = math.sqrt(4 * math.log2(2 / delta) ** 2 / delta * n / D)
        tau = max(1, math.ceil(math.log2(1 + math.log2(H))))
        return cls(H, tau)

    @property
    def top(self) -> int:
        return 2**self.tau - 1


@dataclass(frozen=True)
class RefinedEstimate:
    D: float
    cursor: int
    tree: SearchTreeParams
    path: tuple[tuple[Fraction, int], ...] = field(default=())

    @property
    def tests_used(self) -> int:
        return len(self.path)


def refine_binary_search(
    oracle: TestOracle, coarse: CoarseEstimate | float, delta: float, rng: np.random.Generator
) -> RefinedEstimate:
    """Locate ``log2(d/D)`` in ``[0, 2^τ - 1]`` with one pool per tree node.

    Node ``m = (lo+hi)/2`` tests a pool with inclusion probability
    ``1 - 2^(-1/(2^m·D))``; a positive answer moves right (``lo = ceil(m)``),
    a negative one left (``hi = floor(m)``).  Returns ``D·2^lo``.
    """
    delta = _check_delta(delta)
    D = coarse.D if isinstance(coarse, CoarseEstimate) else float(coarse)
    if D <= 0:
        raise InvalidInput("coarse estimate must be positive")
    tree = SearchTreeParams.from_coarse(oracle.n, D, delta)
    lo, hi = Fraction(0), Fraction(tree.top)
    path = []
    while lo != hi:
        mid = (lo + hi) / 2
        p = _prob_from_exponent(1.0 / (2.0 ** float(mid) * D))
        bit = int(oracle.answer_batch(RandomPools.draw(oracle.n, 1, p, rng))[0])
        path.append((mid, bit))
        if bit:
            lo = Fraction(math.ceil(mid))
        else:
            hi = Fraction(math.floor(mid))
    cursor = int(lo)
    return RefinedEstimate(D * 2.0**cursor, cursor, tree, tuple(path))


# ---------------------------------------------------------------------------
# constant-factor refinement


def geometric_grid(lo: float, hi: float, eps: float) -> list[float]:
    """``lo·(1+ε/2)^k`` for ``k = 0..K`` with ``K`` the first index reaching ``hi``."""
    grid = [float(lo)]
    ratio = 1 + eps / 2
    while grid[-1] < hi:
        grid.append(grid[-1] * ratio)
    return grid


def refine_to_constant_factor(
    oracle: TestOracle,
    lo: float,
    hi: float,
    eps: float,
    delta: float,
    rng: np.random.Generator,
    *,
    k3: float = K3_DEFAULT,
) -> int:
    """Narrow ``d ∈ [lo, hi]`` to an integer within a factor ``1+ε`` of d.

    Binary search for the largest grid point whose threshold test (at the
    same ε) answers 1.  With every test on its guaranteed side this brackets
    ``d`` in ``[m_k, (1+ε)(1+ε/2)·m_k]`` and the geometric midpoint of that
    bracket is returned, clamped to ``[lo, hi]``.
    """
    delta = _check_delta(delta)
    if not 0.0 < eps <= 1.0:
        raise InvalidInput(f"eps must lie in (0, 1], got {eps}")
    if lo <= 0 or hi < lo:
        raise InvalidInput(f"empty or non-positive range [{lo}, {hi}]")
    if lo == hi:
        return max(1, round(lo))
    grid = geometric_grid(lo, hi, eps)
    calls = max(1, math.ceil(math.log2(len(grid))))
    a, b = 0, len(grid) - 1
    while a < b:
        mid = (a + b + 1) // 2
        params = ThresholdParams(grid[mid], eps, delta / calls, k3)
        if threshold_test(oracle, params, rng):
            a = mid
        else:
            b = mid - 1
    est = grid[a] * math.sqrt((1 + eps) * (1 + eps / 2))
    return max(1, round(min(max(est, lo), hi)))


# ---------------------------------------------------------------------------
# composed estimators


def _assert_nonempty(oracle: TestOracle) -> None:
    if not oracle.answer_batch(PoolingMatrix.from_pools([oracle.universe.items()], oracle.n))[0]:
        raise ZeroDefectives("the full universe tests negative")


def estimate_factor2(
    oracle: TestOracle, delta: float, rng: np.random.Generator, *, k3: float = K3_DEFAULT
) -> int:
    """Adaptive estimate with ``d/2 <= D <= 2d`` w.p. ≥ 1-δ.

    A threshold test at ``m = ceil(sqrt(n))`` picks the branch.  Small d:
    threshold tests on ``m = 2^(2^k)`` until one answers 0.  Large d: coarse
    estimate followed by the tree search.  Either way the bracketed range is
    finished by :func:`refine_to_constant_factor` with ε = 1.  Every stage
    gets at most δ/4.
    """
    delta = _check_delta(delta)
    n = oracle.n
    _assert_nonempty(oracle)
    quarter = delta / 4
    root = math.ceil(math.sqrt(n))
    if threshold_test(oracle, ThresholdParams(root, 1.0, quarter, k3), rng) == 0:
        lo, hi = 1.0, float(n)
        k = 0
        while True:
            m = 2.0 ** (2**k)
            if m > n:
                break
            budget = quarter / 2 ** (k + 1)
            if threshold_test(oracle, ThresholdParams(m, 1.0, budget, k3), rng) == 0:
                hi = min(float(n), 2 * m)
                break
            lo = m
            k += 1
    else:
        coarse = estimate_coarse(oracle, quarter, rng)
        refined = refine_binary_search(oracle, coarse, quarter, rng)
        lo = max(1.0, refined.D * quarter / 8)
        hi = min(float(n), max(lo, 8 * refined.D / quarter))
    return refine_to_constant_factor(oracle, lo, hi, 1.0, quarter, rng, k3=k3)


@dataclass
class Factor4Design:
    """Non-adaptive grid of threshold tests at ``m = 2^i``, ``i = 0..ceil(log2 n)``.

    Block 0 is the single pool ``1..n``; a negative answer there means d = 0.
    """

    n: int
    grid: list[float]
    params: list[ThresholdParams]
    blocks: list[Batch]

    def decode(self, answers: list[np.ndarray]) -> int:
        if len(answers) != len(self.blocks):
            raise InvalidInput("answer blocks do not match the design")
        if not answers[0][0]:
            raise ZeroDefectives("the full universe tests negative")
        positive = [
            m for m, params, ans in zip(self.grid, self.params, answers[1:])
            if threshold_decide(ans, params) == 1
        ]
        return int(2 * max(positive)) if positive else 1


def plan_factor4(
    n: int, delta: float, rng: np.random.Generator, *, k3: float = K3_DEFAULT
) -> Factor4Design:
    delta = _check_delta(delta)
    levels = max(1, math.ceil(math.log2(n)))
    grid = [2.0**i for i in range(levels + 1)]
    params = [ThresholdParams(m, 1.0, delta / (2 * levels), k3) for m in grid]
    blocks: list[Batch] = [PoolingMatrix.from_pools([np.arange(1, n + 1)], n)]
    blocks += [threshold_pools(n, p, rng) for p in params]
    return Factor4Design(n, grid, params, blocks)


def estimate_factor4_nonadaptive(
    oracle: TestOracle, delta: float, rng: np.random.Generator, *, k3: float = K3_DEFAULT
) -> int:
    """One-round estimate with ``d/4 <= D <= 4d`` w.p. ≥ 1-δ."""
    design = plan_factor4(oracle.n, delta, rng, k3=k3)
    return design.decode(oracle.answer_blocks(design.blocks))


def within(value: float, lo: float, hi: float) -> bool:
    return lo <= value <= hi


def guarantee_interval(kind: str, n: int, d: int, delta: float) -> tuple[float, float]:
    """Interval each estimator is meant to hit with probability ≥ 1-δ."""
    if kind == "coarse":
        return coarse_bounds(n, d, delta)
    if kind == "refine":
        return d * delta / 8, 8 * d / delta
    if kind == "factor2":
        return d / 2, 2 * d
    if kind == "factor4":
        return d / 4, 4 * d
    raise InvalidInput(f"unknown estimator {kind!r}")
