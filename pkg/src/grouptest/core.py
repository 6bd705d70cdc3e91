"""Item universe, pool batches, the metered test oracle and rng plumbing.

Items are 1-based (``1..n``). A *pool* is a set of items; its test answer is
1 iff it contains at least one hidden defective.  Pools are always submitted
to the oracle in batches, and every batch costs exactly one round, so the
adaptive / non-adaptive distinction is visible in ``rounds_used``.

Two batch representations exist:

* :class:`PoolingMatrix` stores the pools explicitly (CSR layout, one row per
  pool).  Decoders that need pool contents use this.
* :class:`RandomPools` describes ``count`` i.i.d. Bernoulli(p) pools as a pure
  function of a 64-bit key.  The oracle only needs the columns of the hidden
  items to answer it, which keeps estimators with tens of thousands of
  answer-only pools cheap at large ``n``.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np


class InvalidInput(ValueError):
    """Raised when arguments violate an operation's preconditions."""


class ZeroDefectives(RuntimeError):
    """Raised by estimators when every answer indicates an empty defective set."""


class InfeasibleCheck(RuntimeError):
    """Raised when an exhaustive enumeration would exceed the feasibility guard."""


# ---------------------------------------------------------------------------
# randomness


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for ``seed`` and an optional substream path (e.g. trial index).

    ``make_rng(seed, k)`` for different ``k`` gives independent streams, so
    trials can run in any order or in parallel and still reproduce.
    """
    if seed < 0 or any(s < 0 for s in stream):
        raise InvalidInput("seeds and stream indices must be non-negative")
    return np.random.default_rng(np.random.SeedSequence([seed, *stream]))


def draw_key(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**64, dtype=np.uint64))


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_CHUNK_CELLS = 1 << 21
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 array arithmetic wraps modulo 2**64
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _unit_uniform(z: np.ndarray) -> np.ndarray:
    """Map uint64 words to floats strictly inside (0, 1)."""
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * (2.0**-53)


# ---------------------------------------------------------------------------
# item sets


def check_probability(p: float) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise InvalidInput(f"probability must lie in [0, 1], got {p}")
    return p


def as_items(members: Iterable[int], n: int) -> np.ndarray:
    """Validate ``members`` against ``1..n``; return a sorted unique int64 array."""
    if isinstance(members, np.ndarray):
        arr = np.unique(members.astype(np.int64, copy=False))
    else:
        arr = np.unique(np.fromiter((int(x) for x in members), dtype=np.int64))
    if arr.size and (arr[0] < 1 or arr[-1] > n):
        raise InvalidInput(f"pool member outside 1..{n}: {arr[0] if arr[0] < 1 else arr[-1]}")
    return arr


@dataclass(frozen=True)
class ItemUniverse:
    n: int

    def __post_init__(self) -> None:
        if self.n < 1:
            raise InvalidInput(f"universe size must be >= 1, got {self.n}")

    def items(self) -> np.ndarray:
        return np.arange(1, self.n + 1, dtype=np.int64)


def bernoulli_pool(n: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Pool containing each item of ``1..n`` independently with probability ``p``.

    Consumes exactly one ``rng.random(n)`` call, so the membership can be
    replayed from the same stream.
    """
    p = check_probability(p)
    ItemUniverse(n)
    return np.flatnonzero(rng.random(n) < p) + 1


# ---------------------------------------------------------------------------
# batches


class PoolingMatrix:
    """Explicit batch of ``t`` pools over ``n`` items, one row per pool.

    Stored in CSR form: row ``i`` holds the 0-based column indices
    ``indices[indptr[i]:indptr[i + 1]]`` (item ``j`` is column ``j - 1``).
    """

    def __init__(self, n: int, indptr: np.ndarray, indices: np.ndarray):
        ItemUniverse(n)
        self.n = int(n)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        if self.indptr.ndim != 1 or self.indptr.size < 1 or self.indptr[0] != 0:
            raise InvalidInput("malformed indptr")
        if self.indptr[-1] != self.indices.size:
            raise InvalidInput("indptr does not match indices")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= n):
            raise InvalidInput(f"pool member outside 1..{n}")
        self._row_ids: np.ndarray | None = None

    # construction -------------------------------------------------------
    @classmethod
    def from_pools(cls, pools: Iterable[Iterable[int]], n: int) -> "PoolingMatrix":
        rows = [as_items(pool, n) - 1 for pool in pools]
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        if rows:
            np.cumsum([r.size for r in rows], out=indptr[1:])
            indices = np.concatenate(rows)
        else:
            indices = np.zeros(0, dtype=np.int64)
        return cls(n, indptr, indices)

    @classmethod
    def from_dense(cls, bits) -> "PoolingMatrix":
        bits = np.asarray(bits, dtype=bool)
        if bits.ndim != 2 or bits.shape[1] < 1:
            raise InvalidInput("dense matrix must be 2-D with at least one column")
        rows, cols = np.nonzero(bits)
        indptr = np.zeros(bits.shape[0] + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=bits.shape[0]), out=indptr[1:])
        return cls(bits.shape[1], indptr, cols)

    @classmethod
    def from_coo(cls, n: int, t: int, rows: np.ndarray, cols: np.ndarray) -> "PoolingMatrix":
        """Build from (row, 0-based column) pairs; duplicates are merged."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        if rows.size:
            keep = np.ones(rows.size, dtype=bool)
            keep[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            rows, cols = rows[keep], cols[keep]
        indptr = np.zeros(t + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=t), out=indptr[1:])
        return cls(n, indptr, cols)

    @classmethod
    def vstack(cls, parts: Sequence["PoolingMatrix"], n: int) -> "PoolingMatrix":
        indptr = [np.zeros(1, dtype=np.int64)]
        indices = []
        offset = 0
        for part in parts:
            if part.n != n:
                raise InvalidInput("cannot stack matrices over different universes")
            indptr.append(part.indptr[1:] + offset)
            indices.append(part.indices)
            offset += part.indices.size
        cat = np.concatenate(indices) if indices else np.zeros(0, dtype=np.int64)
        return cls(n, np.concatenate(indptr), cat)

    # views ----------------------------------------------------------------
    @property
    def t(self) -> int:
        return self.indptr.size - 1

    def __len__(self) -> int:
        return self.t

    @property
    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry (aligned with ``indices``)."""
        if self._row_ids is None:
            self._row_ids = np.repeat(np.arange(self.t, dtype=np.int64), np.diff(self.indptr))
        return self._row_ids

    def row_sizes(self) -> np.ndarray:
        return np.diff(self.indptr)

    def pool(self, i: int) -> np.ndarray:
        """Items (1-based) of pool ``i``."""
        return self.indices[self.indptr[i] : self.indptr[i + 1]] + 1

    def pools(self) -> list[np.ndarray]:
        return [self.pool(i) for i in range(self.t)]

    def to_dense(self) -> np.ndarray:
        bits = np.zeros((self.t, self.n), dtype=bool)
        bits[self.row_ids, self.indices] = True
        return bits

    def hits(self, indicator: np.ndarray) -> np.ndarray:
        """Per-pool count of members flagged in a 0-based column ``indicator``."""
        flagged = indicator[self.indices]
        return np.bincount(self.row_ids[flagged], minlength=self.t)

    def answer(self, hidden: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        if mask is None:
            mask = np.zeros(self.n, dtype=bool)
            mask[hidden - 1] = True
        return self.hits(mask) > 0

    def digest(self) -> str:
        h = hashlib.sha1(b"matrix")
        h.update(np.int64(self.n).tobytes())
        h.update(self.indptr.tobytes())
        h.update(self.indices.tobytes())
        return h.hexdigest()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PoolingMatrix):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    def __repr__(self) -> str:
        return f"PoolingMatrix(t={self.t}, n={self.n}, nnz={self.indices.size})"


def bernoulli_matrix(t: int, n: int, p: float, rng: np.random.Generator) -> PoolingMatrix:
    """``t`` pools, each item in each pool independently with probability ``p``.

    Runs in time proportional to the expected number of memberships
    (``t * n * p``) by drawing geometric gaps over the row-major cell order.
    """
    p = check_probability(p)
    ItemUniverse(n)
    total = t * n
    if t == 0 or p == 0.0:
        return PoolingMatrix(n, np.zeros(t + 1, dtype=np.int64), np.zeros(0, dtype=np.int64))
    if p == 1.0:
        cells = np.arange(total, dtype=np.int64)
    else:
        chunks = []
        last = -1
        mean = total * p
        while last < total:
            size = int(mean + 6.0 * np.sqrt(mean) + 64)
            pos = last + np.cumsum(rng.geometric(p, size=size))
            chunks.append(pos)
            last = int(pos[-1])
        cells = np.concatenate(chunks)
        cells = cells[cells < total]
    rows, cols = np.divmod(cells, n)
    indptr = np.zeros(t + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=t), out=indptr[1:])
    return PoolingMatrix(n, indptr, cols)


@dataclass(frozen=True)
class RandomPools:
    """``count`` i.i.d. Bernoulli(``p``) pools over ``1..n`` defined by ``key``.

    Membership is generated column by column: item ``j``'s pool memberships
    are geometric gaps drawn from a splitmix64 stream seeded by
    ``(key, j)``.  Any subset of columns can therefore be produced without
    touching the rest, and :meth:`materialize` yields the identical matrix.
    """

    n: int
    count: int
    p: float
    key: int

    def __post_init__(self) -> None:
        ItemUniverse(self.n)
        check_probability(self.p)
        if self.count < 0:
            raise InvalidInput("pool count must be non-negative")

    def __len__(self) -> int:
        return self.count

    @classmethod
    def draw(cls, n: int, count: int, p: float, rng: np.random.Generator) -> "RandomPools":
        return cls(n, count, float(p), draw_key(rng))

    def memberships(self, items: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(which, pool)`` pairs: ``items[which]`` belongs to ``pool``."""
        items = np.asarray(items, dtype=np.int64)
        m, T, p = items.size, self.count, self.p
        empty = np.zeros(0, dtype=np.int64)
        if m == 0 or T == 0 or p == 0.0:
            return empty, empty
        if p == 1.0:
            return np.repeat(np.arange(m), T), np.tile(np.arange(T), m)
        mean = T * p
        width = int(min(T, mean + 6.0 * np.sqrt(mean) + 8))
        step = max(1, _CHUNK_CELLS // width)
        which_parts, pool_parts = [], []
        for lo in range(0, m, step):
            w, q = self._column_chunk(items[lo : lo + step], width)
            which_parts.append(w + lo)
            pool_parts.append(q)
        return np.concatenate(which_parts), np.concatenate(pool_parts)

    def _column_chunk(self, items: np.ndarray, width: int) -> tuple[np.ndarray, np.ndarray]:
        T = self.count
        log_q = np.log1p(-self.p)
        base = _mix64(np.uint64(self.key) + items.astype(np.uint64) * _GOLDEN)
        which_parts, pool_parts = [], []
        active = np.arange(items.size)
        last = np.full(items.size, -1, dtype=np.int64)
        k0 = 0
        while active.size:
            ks = np.arange(k0 + 1, k0 + width + 1, dtype=np.uint64) * _GOLDEN
            u = _unit_uniform(_mix64(base[active, None] + ks[None, :]))
            with np.errstate(over="ignore"):  # tiny p: gap beyond T is clamped
                gaps = np.minimum(np.floor(np.log(u) / log_q), T) + 1
            pos = last[active, None] + np.cumsum(gaps.astype(np.int64), axis=1)
            inside = pos < T
            r, c = np.nonzero(inside)
            which_parts.append(active[r])
            pool_parts.append(pos[r, c])
            more = inside[:, -1]
            last[active[more]] = pos[more, -1]
            active = active[more]
            k0 += width
        return np.concatenate(which_parts), np.concatenate(pool_parts)

    def answer(self, hidden: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        out = np.zeros(self.count, dtype=bool)
        _, pools = self.memberships(hidden)
        out[pools] = True
        return out

    def materialize(self) -> PoolingMatrix:
        which, pools = self.memberships(np.arange(1, self.n + 1, dtype=np.int64))
        return PoolingMatrix.from_coo(self.n, self.count, pools, which)

    def digest(self) -> str:
        return hashlib.sha1(f"random:{self.n}:{self.count}:{self.p!r}:{self.key}".encode()).hexdigest()


Batch = Union[PoolingMatrix, RandomPools]


# ---------------------------------------------------------------------------
# oracle


class TestOracle:
    """Answers pool batches against a hidden defective set and meters usage.

    ``tests_used`` counts every submitted pool, ``rounds_used`` counts
    batches.  With ``record=True`` a transcript of ``(batch digest, answers)``
    pairs is kept for reproducibility checks.
    """

    __test__ = False  # not a pytest class

    def __init__(self, n: int, hidden: Iterable[int], *, record: bool = False):
        self.universe = ItemUniverse(n)
        self.hidden = as_items(hidden, n)
        self._mask = np.zeros(n, dtype=bool)
        self._mask[self.hidden - 1] = True
        self.tests_used = 0
        self.rounds_used = 0
        self.record = record
        self.transcript: list[tuple[str, bytes]] = []

    @property
    def n(self) -> int:
        return self.universe.n

    @property
    def d(self) -> int:
        return int(self.hidden.size)

    def _coerce(self, batch) -> Batch:
        if isinstance(batch, (PoolingMatrix, RandomPools)):
            if batch.n != self.n:
                raise InvalidInput(f"batch is over {batch.n} items, oracle over {self.n}")
            return batch
        return PoolingMatrix.from_pools(batch, self.n)

    def answer_batch(self, batch) -> np.ndarray:
        """Answer one batch (one round); ``result[i]`` is pool ``i``'s bit."""
        return self.answer_blocks([batch])[0]

    def answer_blocks(self, blocks: Sequence) -> list[np.ndarray]:
        """Answer several blocks submitted together as a single round."""
        coerced = [self._coerce(b) for b in blocks]
        answers = [b.answer(self.hidden, self._mask) for b in coerced]
        self.tests_used += sum(len(b) for b in coerced)
        self.rounds_used += 1
        if self.record:
            for b, a in zip(coerced, answers):
                self.transcript.append((b.digest(), np.packbits(a).tobytes()))
        return answers

    def test(self, pool: Iterable[int]) -> int:
        """Single pool, charged as a batch of one round."""
        items = as_items(pool, self.n)
        bit = bool(self._mask[items - 1].any())
        self.tests_used += 1
        self.rounds_used += 1
        if self.record:
            digest = hashlib.sha1(b"pool" + items.tobytes()).hexdigest()
            self.transcript.append((digest, bytes([bit])))
        return int(bit)

    def is_defective(self, item: int) -> bool:
        """Unmetered ground-truth lookup for harness checks."""
        i = int(item)
        return 1 <= i <= self.n and bool(self._mask[i - 1])


def random_hidden_set(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    if not 0 <= d <= n:
        raise InvalidInput(f"need 0 <= d <= n, got d={d}, n={n}")
    return np.sort(rng.choice(n, size=d, replace=False)) + 1


# ---------------------------------------------------------------------------
# outcomes


class Status(enum.Enum):
    FOUND = "found"
    FAILED = "failed"


@dataclass(frozen=True)
class DetectionOutcome:
    """Result of a detect-ℓ run.

    ``found`` holds the reported items when ``status`` is FOUND; for FAILED
    runs ``partial`` carries whatever was identified before giving up.
    """

    status: Status
    found: tuple[int, ...] = ()
    partial: tuple[int, ...] = ()
    reason: str = ""
    extra: dict = field(default_factory=dict, compare=False)

    @classmethod
    def success(cls, items: Iterable[int], **extra) -> "DetectionOutcome":
        return cls(Status.FOUND, tuple(int(x) for x in items), extra=extra)

    @classmethod
    def failure(cls, reason: str, partial: Iterable[int] = (), **extra) -> "DetectionOutcome":
        return cls(Status.FAILED, (), tuple(int(x) for x in partial), reason, extra=extra)

    @property
    def ok(self) -> bool:
        return self.status is Status.FOUND

    def correct(self, oracle: TestOracle, ell: int) -> bool:
        """FOUND with exactly ``ell`` distinct true defectives."""
        return (
            self.ok
            and len(set(self.found)) == len(self.found) == ell
            and all(oracle.is_defective(x) for x in self.found)
        )
