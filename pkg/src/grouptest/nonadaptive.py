"""Non-adaptive pooling designs and their decoders.

Every detector here submits exactly one batch.  Randomized detectors are
split into a *plan* (the pools, built from the rng before any answer is
seen) and a *decode* step, so several plans can share one round.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .core import (
    Batch,
    DetectionOutcome,
    InvalidInput,
    PoolingMatrix,
    TestOracle,
    bernoulli_matrix,
)
from .estimation import Factor4Design, plan_factor4

# Iterations per (ℓ + log2(1/δ)) of the isolation detector.
K2 = 160 / 7
MAX_RESTRICTED_RATIO = 0.985


class MatrixFormatError(InvalidInput):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


# ---------------------------------------------------------------------------
# (r, s)-restricted weight-one matrices


def restricted_row_count(n: int, r: int, s: int, delta: float) -> int:
    """Row count ``ceil(16·(r·log2(n/r) + r + log2(1/δ)) / log2(r/(s-1)))``.

    For ``s = 1`` the denominator uses ``log2(r)`` (any single isolating row
    suffices).
    """
    denom = math.log2(r / max(s - 1, 1))
    return math.ceil(16 * (r * math.log2(n / r) + r + math.log2(1 / delta)) / denom)


def _check_restricted_args(n: int, r: int, s: int, delta: float) -> None:
    if not (1 <= s <= r):
        raise InvalidInput(f"need 1 <= s <= r, got r={r}, s={s}")
    if s / r > MAX_RESTRICTED_RATIO:
        raise InvalidInput(f"s/r = {s / r:.4f} exceeds {MAX_RESTRICTED_RATIO}")
    if n <= r:
        raise InvalidInput(f"need n > r, got n={n}, r={r}")
    if not 0.0 < delta < 1.0:
        raise InvalidInput(f"delta must lie in (0, 1), got {delta}")


def gen_restricted_matrix(
    n: int, r: int, s: int, delta: float, rng: np.random.Generator
) -> PoolingMatrix:
    """Random matrix with i.i.d. Bernoulli(1/r) entries.

    It is (r, s)-restricted weight one with probability at least 1-δ; the
    property is not certified here (see :mod:`grouptest.verify`).
    """
    _check_restricted_args(n, r, s, delta)
    return bernoulli_matrix(restricted_row_count(n, r, s, delta), n, 1.0 / r, rng)


def identity_matrix(n: int) -> PoolingMatrix:
    """Individual testing; (r, s)-restricted for every ``s <= r <= n``."""
    return PoolingMatrix(n, np.arange(n + 1, dtype=np.int64), np.arange(n, dtype=np.int64))


def decode_restricted(matrix: PoolingMatrix, answers, ell: int) -> DetectionOutcome:
    """Eliminate items of negative pools, then collect isolated survivors.

    ``X'`` is the set of items in no negative pool.  Every positive pool that
    meets ``X'`` in exactly one item contributes that item to ``Y`` (in row
    order).  FOUND with the first ``ell`` items of ``Y`` if there are enough.
    """
    answers = np.asarray(answers, dtype=bool)
    if answers.shape != (matrix.t,):
        raise InvalidInput(f"expected {matrix.t} answers, got {answers.size}")
    negative = ~answers
    covered = np.zeros(matrix.n, dtype=bool)
    covered[matrix.indices[negative[matrix.row_ids]]] = True
    survivors = ~covered
    isolating = answers & (matrix.hits(survivors) == 1)
    entry = isolating[matrix.row_ids] & survivors[matrix.indices]
    items = matrix.indices[entry] + 1
    _, first = np.unique(items, return_index=True)
    Y = items[np.sort(first)]
    extra = {"survivors": int(survivors.sum()), "isolated": int(Y.size)}
    if Y.size >= ell:
        return DetectionOutcome.success(Y[:ell], **extra)
    return DetectionOutcome.failure("too few isolated survivors", partial=Y, **extra)


def nonadaptive_det_params(D: int, ell: int) -> tuple[int, int]:
    """``(r, s) = (8D, ceil(7.75·D) + ℓ)``; requires ``ℓ <= D/8``."""
    if ell < 1 or 8 * ell > D:
        raise InvalidInput(f"need 1 <= ell <= D/8, got ell={ell}, D={D}")
    return 8 * D, math.ceil(7.75 * D) + ell


def detect_nonadaptive_det(
    oracle: TestOracle,
    D: int,
    ell: int,
    rng: np.random.Generator,
    *,
    delta: float = 0.1,
    matrix: Optional[PoolingMatrix] = None,
    allow_identity: bool = True,
) -> DetectionOutcome:
    """One-round detection through an (8D, 7.75D+ℓ)-restricted matrix.

    The random construction is replaced by individual testing when that is
    no larger (or when the random construction's preconditions fail), since
    the identity matrix satisfies every restriction.
    """
    r, s = nonadaptive_det_params(D, ell)
    if matrix is None:
        n = oracle.n
        usable = n > r and s / r <= MAX_RESTRICTED_RATIO
        if usable and not (allow_identity and restricted_row_count(n, r, s, delta) >= n):
            matrix = gen_restricted_matrix(n, r, s, delta, rng)
        elif allow_identity:
            matrix = identity_matrix(n)
        else:
            _check_restricted_args(n, r, s, delta)
    answers = oracle.answer_batch(matrix)
    return decode_restricted(matrix, answers, ell)


# ---------------------------------------------------------------------------
# single-defective design


class DetectOneKind(enum.Enum):
    NO_DEFECTIVE = "none"
    UNIQUE = "unique"
    MANY = "many"


@dataclass(frozen=True)
class DetectOneResult:
    kind: DetectOneKind
    item: Optional[int] = None


_COLEX: dict[int, list[int]] = {}


def _colex_masks(t: int, count: int) -> np.ndarray:
    """First ``count`` weight-``t//2`` masks in increasing (= colex) order."""
    masks = _COLEX.setdefault(t, [])
    k = t // 2
    v = masks[-1] if masks else None
    while len(masks) < count:
        if v is None:
            v = (1 << k) - 1
        else:  # Gosper's hack: next integer with the same popcount
            c = v & -v
            q = v + c
            v = (((q ^ v) >> 2) // c) | q
        masks.append(v)
    return np.array(masks[:count], dtype=np.int64)


def detectone_rows(n: int) -> int:
    """Smallest ``t >= 2`` with ``C(t, floor(t/2)) >= n``."""
    if n < 1:
        raise InvalidInput(f"need n >= 1, got {n}")
    t = 2
    while math.comb(t, t // 2) < n:
        t += 1
    return t


@dataclass(frozen=True)
class DetectOneDesign:
    """``t × n`` matrix whose columns are distinct weight-``floor(t/2)`` vectors.

    Column ``j`` (1-based) is the ``j``-th such vector in colex order, stored
    as the bitmask ``masks[j-1]`` (bit ``i`` = row ``i``).
    """

    n: int
    t: int
    masks: np.ndarray

    @property
    def weight(self) -> int:
        return self.t // 2

    @property
    def bits(self) -> np.ndarray:
        return ((self.masks[None, :] >> np.arange(self.t)[:, None]) & 1).astype(bool)

    @property
    def matrix(self) -> PoolingMatrix:
        return PoolingMatrix.from_dense(self.bits)


@lru_cache(maxsize=4096)
def gen_detectone_design(n: int) -> DetectOneDesign:
    t = detectone_rows(n)
    return DetectOneDesign(n, t, _colex_masks(t, n))


def decode_detectone(design: DetectOneDesign, answers) -> DetectOneResult:
    """All-zero: no defective; equal to column j: item j; anything else: many."""
    answers = np.asarray(answers, dtype=bool)
    if answers.shape != (design.t,):
        raise InvalidInput(f"expected {design.t} answers, got {answers.size}")
    weight = int(answers.sum())
    if weight == 0:
        return DetectOneResult(DetectOneKind.NO_DEFECTIVE)
    if weight == design.weight:
        mask = int(np.dot(answers.astype(np.int64), 1 << np.arange(design.t, dtype=np.int64)))
        pos = int(np.searchsorted(design.masks, mask))
        if pos < design.n and design.masks[pos] == mask:
            return DetectOneResult(DetectOneKind.UNIQUE, pos + 1)
    return DetectOneResult(DetectOneKind.MANY)


# ---------------------------------------------------------------------------
# COMP


def comp_pool_count(n: int, D: int, delta: float) -> int:
    return math.ceil(math.e * 4 * D * (math.log(n) + math.log(1 / delta)))


@dataclass
class CompPlan:
    """Bernoulli(1/(4D)) pools decoded by COMP: drop every item of a negative pool."""

    matrix: PoolingMatrix

    @property
    def blocks(self) -> list[Batch]:
        return [self.matrix]

    def decode_items(self, answers: list[np.ndarray]) -> np.ndarray:
        (ans,) = answers
        ans = np.asarray(ans, dtype=bool)
        m = self.matrix
        covered = np.zeros(m.n, dtype=bool)
        covered[m.indices[~ans[m.row_ids]]] = True
        return np.flatnonzero(~covered) + 1


def plan_comp(n: int, D: int, delta: float, rng: np.random.Generator) -> CompPlan:
    if D < 1:
        raise InvalidInput(f"D must be positive, got {D}")
    if not 0.0 < delta < 1.0:
        raise InvalidInput(f"delta must lie in (0, 1), got {delta}")
    return CompPlan(bernoulli_matrix(comp_pool_count(n, D, delta), n, 1.0 / (4 * D), rng))


def find_all_comp(oracle: TestOracle, D: int, delta: float, rng: np.random.Generator) -> np.ndarray:
    """All items not excluded by a negative pool; a superset of the defectives."""
    plan = plan_comp(oracle.n, D, delta, rng)
    return plan.decode_items(oracle.answer_blocks(plan.blocks))


# ---------------------------------------------------------------------------
# randomized isolation detector


def isolation_iterations(ell: int, delta: float) -> int:
    return math.ceil(K2 * (ell + math.log2(1 / delta)))


@dataclass
class IsolationPlan:
    """Independent subsamples, each with a single-defective design on top.

    ``segments[i]`` is ``None`` for void iterations (empty subsample or one
    larger than ``4n/D``), otherwise ``(first_row, design, items)``.
    """

    ell: int
    matrix: PoolingMatrix
    segments: list[Optional[tuple[int, DetectOneDesign, np.ndarray]]]
    comp: Optional[CompPlan] = None

    @property
    def blocks(self) -> list[Batch]:
        return self.comp.blocks if self.comp is not None else [self.matrix]

    def decode(self, answers: list[np.ndarray]) -> DetectionOutcome:
        if self.comp is not None:
            items = self.comp.decode_items(answers)
            if items.size >= self.ell:
                return DetectionOutcome.success(items[: self.ell], branch="comp")
            return DetectionOutcome.failure("COMP kept fewer than ell items", partial=items, branch="comp")
        (ans,) = answers
        ans = np.asarray(ans, dtype=bool)
        hits: dict[int, None] = {}
        for seg in self.segments:
            if seg is None:
                continue
            start, design, items = seg
            res = decode_detectone(design, ans[start : start + design.t])
            if res.kind is DetectOneKind.UNIQUE:
                hits.setdefault(int(items[res.item - 1]), None)
        found = list(hits)
        void = sum(seg is None for seg in self.segments)
        if len(found) >= self.ell:
            return DetectionOutcome.success(found[: self.ell], branch="isolation", void=void)
        return DetectionOutcome.failure("too few isolated defectives", partial=found, branch="isolation", void=void)


def plan_nonadaptive_rand(
    n: int, D: int, ell: int, delta: float, rng: np.random.Generator
) -> IsolationPlan:
    if not 0.0 < delta < 1.0:
        raise InvalidInput(f"delta must lie in (0, 1), got {delta}")
    if D < 1 or ell < 1:
        raise InvalidInput("D and ell must be positive")
    if 32 * ell >= D:
        comp = plan_comp(n, D, delta, rng)
        return IsolationPlan(ell, comp.matrix, [], comp)
    T = isolation_iterations(ell, delta)
    subsamples = bernoulli_matrix(T, n, 1.0 / (2 * D), rng)
    sizes = subsamples.row_sizes()
    cap = 4 * n / D
    rows, cols, segments = [], [], []
    offset = 0
    for i in range(T):
        size = int(sizes[i])
        if size == 0 or size > cap:
            segments.append(None)
            continue
        items = subsamples.pool(i)
        design = gen_detectone_design(size)
        r, c = np.nonzero(design.bits)
        rows.append(r + offset)
        cols.append(items[c] - 1)
        segments.append((offset, design, items))
        offset += design.t
    if rows:
        matrix = PoolingMatrix.from_coo(n, offset, np.concatenate(rows), np.concatenate(cols))
    else:
        matrix = PoolingMatrix(n, np.zeros(1, dtype=np.int64), np.zeros(0, dtype=np.int64))
    return IsolationPlan(ell, matrix, segments)


def detect_nonadaptive_rand(
    oracle: TestOracle, D: int, ell: int, delta: float, rng: np.random.Generator
) -> DetectionOutcome:
    """One-round randomized detection with a known estimate ``d/4 <= D <= 4d``.

    For ``ℓ >= D/32`` this is COMP truncated to its ``ℓ`` smallest items.
    """
    plan = plan_nonadaptive_rand(oracle.n, D, ell, delta, rng)
    return plan.decode(oracle.answer_blocks(plan.blocks))


def isolation_event_rate(
    n: int, hidden: np.ndarray, D: int, draws: int, rng: np.random.Generator
) -> float:
    """Fraction of Bernoulli(1/(2D)) subsamples with exactly one defective and size <= 4n/D."""
    sub = bernoulli_matrix(draws, n, 1.0 / (2 * D), rng)
    mask = np.zeros(n, dtype=bool)
    mask[np.asarray(hidden) - 1] = True
    good = (sub.hits(mask) == 1) & (sub.row_sizes() <= 4 * n / D)
    return float(good.mean())


# ---------------------------------------------------------------------------
# unknown d


@dataclass
class UnknownDPlan:
    ell: int
    estimator: Factor4Design
    instances: dict[int, IsolationPlan]

    @property
    def blocks(self) -> list[Batch]:
        out = list(self.estimator.blocks)
        for i in sorted(self.instances):
            out += self.instances[i].blocks
        return out

    def grid_index(self, D_est: float) -> int:
        top = max(self.instances)
        return min(top, max(1, round(math.log2(max(D_est, 1) / self.ell))))

    def decode(self, answers: list[np.ndarray], override_estimate: Optional[int] = None) -> DetectionOutcome:
        k = len(self.estimator.blocks)
        D_est = self.estimator.decode(answers[:k]) if override_estimate is None else override_estimate
        per_instance = {i: [answers[k + j]] for j, i in enumerate(sorted(self.instances))}
        center = self.grid_index(D_est)
        chosen: dict[int, None] = {}
        for i in (center, center - 1, center + 1):
            if i not in self.instances:
                continue
            out = self.instances[i].decode(per_instance[i])
            for x in out.found or out.partial:
                chosen.setdefault(int(x), None)
            if len(chosen) >= self.ell:
                break
        found = list(chosen)[: self.ell]
        extra = {"D_est": int(D_est), "grid_index": center}
        if len(found) == self.ell:
            return DetectionOutcome.success(found, **extra)
        return DetectionOutcome.failure("too few defectives near the estimated grid point", partial=found, **extra)


def unknown_d_grid(n: int, ell: int) -> list[int]:
    """Grid indices ``i = 1..ceil(log2(n/ℓ))`` of the guesses ``D = 2^i·ℓ``."""
    top = max(1, math.ceil(math.log2(n / ell)))
    return list(range(1, top + 1))


def plan_nonadaptive_rand_unknown_d(
    n: int, ell: int, delta: float, rng: np.random.Generator
) -> UnknownDPlan:
    """Estimator pools plus one detector per guess, each child on its own spawned stream.

    ``rng.spawn`` child 0 feeds the estimator and child ``i`` the guess
    ``D = 2^i·ℓ``.
    """
    if not 0.0 < delta < 1.0:
        raise InvalidInput(f"delta must lie in (0, 1), got {delta}")
    grid = unknown_d_grid(n, ell)
    children = rng.spawn(len(grid) + 1)
    estimator = plan_factor4(n, delta / 2, children[0])
    instances = {i: plan_nonadaptive_rand(n, 2**i * ell, ell, delta / 2, children[i]) for i in grid}
    return UnknownDPlan(ell, estimator, instances)


def detect_nonadaptive_rand_unknown_d(
    oracle: TestOracle,
    ell: int,
    delta: float,
    rng: np.random.Generator,
    *,
    override_estimate: Optional[int] = None,
) -> DetectionOutcome:
    plan = plan_nonadaptive_rand_unknown_d(oracle.n, ell, delta, rng)
    return plan.decode(oracle.answer_blocks(plan.blocks), override_estimate)


# ---------------------------------------------------------------------------
# matrix files: "t n" header, then t rows of exactly n characters from {0,1}

_HEADER = re.compile(r"([1-9][0-9]*) ([1-9][0-9]*)")
_ROW = re.compile(r"[01]*")


def format_matrix(matrix: PoolingMatrix) -> str:
    if matrix.t < 1:
        raise InvalidInput("matrix files need at least one row")
    dense = matrix.to_dense()
    lines = [f"{matrix.t} {matrix.n}"]
    lines += ["".join("1" if b else "0" for b in row) for row in dense]
    return "\n".join(lines) + "\n"


def parse_matrix(text: str) -> PoolingMatrix:
    if not text.endswith("\n"):
        raise MatrixFormatError(text.count("\n") + 1, "missing trailing newline")
    lines = text[:-1].split("\n")
    header = _HEADER.fullmatch(lines[0])
    if header is None:
        raise MatrixFormatError(1, "header must be 't n' with positive integers")
    t, n = int(header.group(1)), int(header.group(2))
    if len(lines) - 1 != t:
        # point at the first missing row, or the first surplus one
        where = len(lines) + 1 if len(lines) - 1 < t else t + 2
        raise MatrixFormatError(where, f"expected {t} rows, found {len(lines) - 1}")
    bits = np.zeros((t, n), dtype=bool)
    for i, line in enumerate(lines[1:]):
        if len(line) != n or _ROW.fullmatch(line) is None:
            raise MatrixFormatError(i + 2, f"row must be exactly {n} characters from {{0,1}}")
        bits[i] = np.frombuffer(line.encode(), dtype=np.uint8) == ord("1")
    return PoolingMatrix.from_dense(bits)


def write_matrix(matrix: PoolingMatrix, path: Union[str, Path]) -> None:
    Path(path).write_text(format_matrix(matrix), newline="\n")


def read_matrix(path: Union[str, Path]) -> PoolingMatrix:
    with open(path, newline="") as fh:
        return parse_matrix(fh.read())
