"""Brute-force checks and closed-form test-count bounds.

The restricted-matrix checks work on bit-packed columns: column ``j`` is a
row of uint64 words.  For a column subset ``S`` the rows of weight one are
those set in exactly one column, and ``j in S`` is isolated iff its column
meets them.
"""

from __future__ import annotations

import itertools
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Optional

import numpy as np

from .core import DetectionOutcome, InfeasibleCheck, InvalidInput, PoolingMatrix, TestOracle

ENUMERATION_LIMIT = 10**7
_BATCH_WORDS = 1 << 16
_COUNT_CACHE: "OrderedDict[tuple[str, int], np.ndarray]" = OrderedDict()
_COUNT_CACHE_SIZE = 4


def _packed_columns(matrix: PoolingMatrix) -> np.ndarray:
    """``(n, W)`` uint64 array; bit ``i`` of column ``j`` is ``M[i, j]``."""
    dense = matrix.to_dense().T
    pad = (-dense.shape[1]) % 64
    dense = np.pad(dense, ((0, 0), (0, pad)))
    packed = np.packbits(dense, axis=1, bitorder="little")
    return np.ascontiguousarray(packed).view(np.uint64)


@lru_cache(maxsize=16)
def _combinations(n: int, r: int) -> np.ndarray:
    count = math.comb(n, r)
    flat = np.fromiter(itertools.chain.from_iterable(itertools.combinations(range(n), r)), np.int32, count * r)
    return flat.reshape(count, r)


def _isolated_counts(words: np.ndarray, combos: np.ndarray) -> np.ndarray:
    """Number of isolated columns in each subset (row of ``combos``)."""
    B, r = combos.shape
    W = words.shape[1]
    out = np.empty(B, dtype=np.int64)
    step = max(1, _BATCH_WORDS // max(1, r * W))
    for a in range(0, B, step):
        G = words[combos[a : a + step]]  # (b, r, W)
        ones = np.zeros_like(G[:, 0])
        twos = np.zeros_like(ones)
        for k in range(r):
            twos |= ones & G[:, k]
            ones |= G[:, k]
        single = ones & ~twos  # rows of weight exactly one on the subset
        out[a : a + step] = (G & single[:, None, :]).any(axis=2).sum(axis=1)
    return out


def _all_subset_counts(matrix: PoolingMatrix, r: int) -> np.ndarray:
    """Isolated counts of every r-subset in lexicographic order, cached per matrix."""
    key = (matrix.digest(), r)
    if key in _COUNT_CACHE:
        _COUNT_CACHE.move_to_end(key)
        return _COUNT_CACHE[key]
    counts = _isolated_counts(_packed_columns(matrix), _combinations(matrix.n, r))
    _COUNT_CACHE[key] = counts
    if len(_COUNT_CACHE) > _COUNT_CACHE_SIZE:
        _COUNT_CACHE.popitem(last=False)
    return counts


@dataclass(frozen=True)
class RestrictedCheck:
    """Verdict of an (r, s) check; ``witness`` is a violating 1-based column set."""

    ok: bool
    r: int
    s: int
    min_isolated: Optional[int] = None
    witness: Optional[tuple[int, ...]] = None

    def __bool__(self) -> bool:
        return self.ok


def _check_rs(matrix: PoolingMatrix, r: int, s: int) -> None:
    if not (1 <= s <= r <= matrix.n):
        raise InvalidInput(f"need 1 <= s <= r <= n, got r={r}, s={s}, n={matrix.n}")


def check_restricted(matrix: PoolingMatrix, r: int, s: int) -> RestrictedCheck:
    """Exhaustively decide whether every ``r`` columns have ``s`` isolated columns.

    Distinct weight-one rows on ``r`` columns correspond to distinct columns
    that some row isolates, so the check counts isolated columns.  Raises
    :class:`InfeasibleCheck` above 10^7 subsets.
    """
    _check_rs(matrix, r, s)
    if math.comb(matrix.n, r) > ENUMERATION_LIMIT:
        raise InfeasibleCheck(f"C({matrix.n},{r}) exceeds {ENUMERATION_LIMIT}; sample instead")
    counts = _all_subset_counts(matrix, r)
    worst = int(np.argmin(counts))
    low = int(counts[worst])
    if low >= s:
        return RestrictedCheck(True, r, s, low)
    return RestrictedCheck(False, r, s, low, tuple(int(j) + 1 for j in _combinations(matrix.n, r)[worst]))


def _sample_subsets(n: int, r: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` uniform r-subsets of ``range(n)`` as sorted rows."""
    if 2 * r > n:
        return np.sort(np.argsort(rng.random((count, n)), axis=1)[:, :r], axis=1)
    out = np.empty((0, r), dtype=np.int64)
    while out.shape[0] < count:
        need = count - out.shape[0]
        cand = np.sort(rng.integers(0, n, size=(need + need // 2 + 8, r)), axis=1)
        distinct = (np.diff(cand, axis=1) > 0).all(axis=1)
        out = np.vstack([out, cand[distinct][:need]])
    return out


def check_restricted_sampled(
    matrix: PoolingMatrix, r: int, s: int, samples: int, rng: np.random.Generator
) -> RestrictedCheck:
    """Monte Carlo version of :func:`check_restricted` over uniform r-subsets."""
    _check_rs(matrix, r, s)
    if samples < 1:
        raise InvalidInput(f"need at least one sample, got {samples}")
    words = _packed_columns(matrix)
    low = None
    chunk = 1 << 14
    for a in range(0, samples, chunk):
        combos = _sample_subsets(matrix.n, r, min(chunk, samples - a), rng)
        counts = _isolated_counts(words, combos)
        worst = int(np.argmin(counts))
        low = int(counts[worst]) if low is None else min(low, int(counts[worst]))
        if counts[worst] < s:
            return RestrictedCheck(False, r, s, int(counts[worst]), tuple(int(j) + 1 for j in combos[worst]))
    return RestrictedCheck(True, r, s, low)


# ---------------------------------------------------------------------------
# exhaustive decoder runs


@dataclass
class DecoderReport:
    runs: int = 0
    failures: list[tuple[int, ...]] = field(default_factory=list)
    max_tests: int = 0
    max_rounds: int = 0

    @property
    def ok(self) -> bool:
        return not self.failures


def exhaustive_decoder_check(
    algorithm: Callable[[TestOracle, int], DetectionOutcome],
    n: int,
    d_range: Iterable[int],
    ell: int,
) -> DecoderReport:
    """Run a deterministic ``algorithm(oracle, ell)`` on every hidden set with size in ``d_range``.

    A run fails unless it returns FOUND with ``ell`` distinct true
    defectives; FAILED outcomes (e.g. ``ell > d``) count as failures.
    """
    sizes = sorted(set(d_range))
    if any(not 0 <= d <= n for d in sizes):
        raise InvalidInput(f"hidden-set sizes must lie in [0, {n}]")
    total = sum(math.comb(n, d) for d in sizes)
    if total > ENUMERATION_LIMIT:
        raise InfeasibleCheck(f"{total} hidden sets exceed {ENUMERATION_LIMIT}")
    report = DecoderReport()
    for d in sizes:
        for hidden in itertools.combinations(range(1, n + 1), d):
            oracle = TestOracle(n, hidden)
            out = algorithm(oracle, ell)
            report.runs += 1
            report.max_tests = max(report.max_tests, oracle.tests_used)
            report.max_rounds = max(report.max_rounds, oracle.rounds_used)
            if not out.correct(oracle, ell):
                report.failures.append(hidden)
    return report


# ---------------------------------------------------------------------------
# bound formulas

SETTINGS = ("AD", "AR", "ND", "NR")


@dataclass(frozen=True)
class BoundContext:
    """Instance shape for the bound table: adaptive/non-adaptive, deterministic/randomized."""

    n: int
    d: int
    ell: int
    delta: float
    setting: str
    known: bool

    def __post_init__(self) -> None:
        if self.setting not in SETTINGS:
            raise InvalidInput(f"setting must be one of {SETTINGS}, got {self.setting!r}")
        if not (1 <= self.ell <= self.d <= self.n) or self.n < 2:
            raise InvalidInput(f"need 1 <= ell <= d <= n and n >= 2, got {self}")
        if not 0.0 < self.delta < 1.0:
            raise InvalidInput(f"delta must lie in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class BoundReport:
    """Lower/upper test-count bounds of one table cell pair.

    ``*_asymptotic`` marks entries only known up to a constant, evaluated
    with constant 1.  ``consistent`` is False when the evaluated lower
    bound exceeds the upper one (possible for asymptotic entries).
    ``rows`` holds the table row numbers of the upper and the lower bound.
    """

    context: BoundContext
    lower: Optional[float]
    upper: Optional[float]
    lower_asymptotic: bool
    upper_asymptotic: bool
    rows: tuple[int, int]
    measured: Optional[float] = None

    @property
    def consistent(self) -> bool:
        return self.lower is None or self.upper is None or self.lower <= self.upper


def _lg(x: float) -> float:
    return math.log2(x)


def _lglg(x: float) -> float:
    return math.log2(max(math.log2(max(x, 2.0)), 1.0))


def bound_formulas(context: BoundContext, measured: Optional[float] = None) -> BoundReport:
    n, d, ell, delta = context.n, context.d, context.ell, context.delta
    nd = _lg(n / d)
    key = (context.setting, context.known)
    if key == ("AD", True):
        lower, upper, la, ua, rows = max(ell * nd, _lg(n) - 1), ell * _lg(n / ell) + 3 * ell, False, False, (1, 2)
    elif key == ("AD", False):
        lower, upper, la, ua, rows = ell * _lg(n / ell), ell * _lg(n / ell) + 3 * ell, False, False, (3, 4)
    elif key == ("AR", True):
        upper = ell * nd + ell * _lglg(1 / delta) + ell
        lower, la, ua, rows = ell * nd - 1, False, True, (5, 6)
    elif key == ("AR", False):
        upper = ell * nd + ell * _lglg(1 / delta) + ell + _lglg(min(n / d, d)) + _lg(1 / delta)
        lower, la, ua, rows = ell * nd - 1, False, True, (7, 8)
    elif key == ("ND", True):
        lower = upper = d * nd
        la = ua = True
        rows = (9, 10)
    elif key == ("ND", False):
        lower, upper, la, ua, rows = float(n), float(n), True, False, (12, 11)
    elif key == ("NR", True):
        upper = ell * nd + _lg(1 / delta) * nd
        lower, la, ua, rows = ell * nd - 1, False, True, (13, 14)
    else:
        upper = (ell + _lg(1 / delta)) * _lg(n) ** 2
        lower = ell * _lg(n) ** 2 / max(_lg(ell) + _lglg(n), 1.0)
        la = ua = True
        rows = (15, 16)
    return BoundReport(context, float(lower), float(upper), la, ua, rows, measured)
