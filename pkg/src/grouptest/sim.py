"""Monte Carlo harness: trial runners, summaries and output writers.

Trial ``k`` of an experiment draws everything (hidden set and algorithm
randomness) from ``make_rng(seed, k)``, so results do not depend on how
trials are scheduled across worker processes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from statistics import NormalDist
from typing import Callable, Optional, Sequence

import numpy as np

from . import adaptive, estimation, nonadaptive
from .core import DetectionOutcome, InvalidInput, TestOracle, ZeroDefectives, make_rng, random_hidden_set
from .verify import BoundContext, bound_formulas


@dataclass(frozen=True)
class Algorithm:
    name: str
    setting: str
    known: bool
    run: Callable[[TestOracle, "ExperimentConfig", np.random.Generator], DetectionOutcome]


def _D(cfg: "ExperimentConfig") -> int:
    return cfg.D if cfg.D is not None else cfg.d


ALGORITHMS = {
    a.name: a
    for a in [
        Algorithm("adaptive-det", "AD", True, lambda o, c, g: adaptive.detect_adaptive_det(o, c.ell)),
        Algorithm(
            "adaptive-rand", "AR", True,
            lambda o, c, g: adaptive.detect_adaptive_rand(o, adaptive.SubsampleParams(c.n, _D(c), c.ell, c.delta), g),
        ),
        Algorithm(
            "adaptive-rand-unknown", "AR", False,
            lambda o, c, g: adaptive.detect_adaptive_rand_unknown_d(o, c.ell, c.delta, g),
        ),
        Algorithm(
            "nonadaptive-det", "ND", True,
            lambda o, c, g: nonadaptive.detect_nonadaptive_det(o, _D(c), c.ell, g, delta=c.delta),
        ),
        Algorithm(
            "nonadaptive-rand", "NR", True,
            lambda o, c, g: nonadaptive.detect_nonadaptive_rand(o, _D(c), c.ell, c.delta, g),
        ),
        Algorithm(
            "nonadaptive-rand-unknown", "NR", False,
            lambda o, c, g: nonadaptive.detect_nonadaptive_rand_unknown_d(o, c.ell, c.delta, g),
        ),
    ]
}

ESTIMATORS = ("coarse", "refine", "factor2", "factor4")


def _check_common(n: int, d: int, delta: float, trials: int) -> None:
    if n < 1:
        raise InvalidInput(f"n must be positive, got {n}")
    if not 0 <= d <= n:
        raise InvalidInput(f"need 0 <= d <= n, got d={d}")
    if not 0.0 < delta < 1.0:
        raise InvalidInput(f"delta must lie in (0, 1), got {delta}")
    if trials < 1:
        raise InvalidInput(f"trials must be at least 1, got {trials}")


@dataclass(frozen=True)
class ExperimentConfig:
    n: int
    d: int
    ell: int
    delta: float
    alg: str
    trials: int
    seed: int
    D: Optional[int] = None

    def __post_init__(self) -> None:
        _check_common(self.n, self.d, self.delta, self.trials)
        if self.alg not in ALGORITHMS:
            raise InvalidInput(f"unknown algorithm {self.alg!r}; choose from {sorted(ALGORITHMS)}")
        if self.ell < 1:
            raise InvalidInput(f"ell must be positive, got {self.ell}")
        if self.D is not None and self.D < 1:
            raise InvalidInput(f"D must be positive, got {self.D}")


@dataclass(frozen=True)
class ExperimentRecord:
    trial: int
    tests_used: int
    rounds_used: int
    status: str
    hits: int
    wall_time: float = field(default=0.0, compare=False)


RECORD_FIELDS = ["trial", "tests_used", "rounds_used", "status", "hits"]


def run_trial(cfg: ExperimentConfig, k: int) -> ExperimentRecord:
    rng = make_rng(cfg.seed, k)
    hidden = random_hidden_set(cfg.n, cfg.d, rng)
    oracle = TestOracle(cfg.n, hidden)
    start = time.perf_counter()
    try:
        out = ALGORITHMS[cfg.alg].run(oracle, cfg, rng)
        status = out.status.value
        hits = sum(oracle.is_defective(x) for x in out.found)
    except ZeroDefectives:
        status, hits = "zero-defectives", 0
    return ExperimentRecord(k, oracle.tests_used, oracle.rounds_used, status, hits, time.perf_counter() - start)


def _parallel_map(fn, args: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*args), chunksize=max(1, len(args) // (4 * jobs))))


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> list[ExperimentRecord]:
    """All trials, in trial order regardless of ``jobs``."""
    return _parallel_map(run_trial, [(cfg, k) for k in range(cfg.trials)], jobs)


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    if trials < 1:
        raise InvalidInput("need at least one trial")
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    p = successes / trials
    denom = 1 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    # the exact interval always contains p; clamp away rounding at p = 0 or 1
    return max(0.0, min(p, center - half)), min(1.0, max(p, center + half))


SUMMARY_FIELDS = [
    "alg", "n", "d", "ell", "D", "delta", "trials", "successes", "success_rate",
    "wilson_low", "wilson_high", "mean_tests", "max_tests", "max_rounds",
    "bound_lower", "bound_upper", "lower_asymptotic", "upper_asymptotic",
]


def summarize(cfg: ExperimentConfig, records: Sequence[ExperimentRecord]) -> dict:
    ok = sum(r.status == "found" and r.hits == cfg.ell for r in records)
    lo, hi = wilson_interval(ok, len(records))
    tests = [r.tests_used for r in records]
    alg = ALGORITHMS[cfg.alg]
    row = {
        "alg": cfg.alg, "n": cfg.n, "d": cfg.d, "ell": cfg.ell,
        "D": _D(cfg) if alg.known and alg.setting != "AD" else "",
        "delta": cfg.delta, "trials": len(records), "successes": ok,
        "success_rate": ok / len(records), "wilson_low": lo, "wilson_high": hi,
        "mean_tests": float(np.mean(tests)), "max_tests": max(tests),
        "max_rounds": max(r.rounds_used for r in records),
        "bound_lower": "", "bound_upper": "", "lower_asymptotic": "", "upper_asymptotic": "",
    }
    if 1 <= cfg.ell <= cfg.d and cfg.n >= 2:
        b = bound_formulas(BoundContext(cfg.n, cfg.d, cfg.ell, cfg.delta, alg.setting, alg.known))
        row.update(
            bound_lower=b.lower, bound_upper=b.upper,
            lower_asymptotic=int(b.lower_asymptotic), upper_asymptotic=int(b.upper_asymptotic),
        )
    return row


# ---------------------------------------------------------------------------
# estimators


@dataclass(frozen=True)
class EstimateConfig:
    n: int
    d: int
    delta: float
    estimator: str
    trials: int
    seed: int

    def __post_init__(self) -> None:
        _check_common(self.n, self.d, self.delta, self.trials)
        if self.estimator not in ESTIMATORS:
            raise InvalidInput(f"unknown estimator {self.estimator!r}; choose from {list(ESTIMATORS)}")


@dataclass(frozen=True)
class EstimateRecord:
    trial: int
    D: Optional[float]
    guarantee: Optional[bool]
    tests_used: int
    rounds_used: int
    status: str
    wall_time: float = field(default=0.0, compare=False)


ESTIMATE_FIELDS = ["trial", "D", "guarantee", "tests_used", "rounds_used", "status"]


def _run_estimator(name: str, oracle: TestOracle, delta: float, rng: np.random.Generator) -> float:
    if name == "coarse":
        return estimation.estimate_coarse(oracle, delta, rng).D
    if name == "refine":
        coarse = estimation.estimate_coarse(oracle, delta, rng)
        return estimation.refine_binary_search(oracle, coarse, delta, rng).D
    if name == "factor2":
        return estimation.estimate_factor2(oracle, delta, rng)
    return estimation.estimate_factor4_nonadaptive(oracle, delta, rng)


def run_estimate_trial(cfg: EstimateConfig, k: int) -> EstimateRecord:
    rng = make_rng(cfg.seed, k)
    oracle = TestOracle(cfg.n, random_hidden_set(cfg.n, cfg.d, rng))
    start = time.perf_counter()
    try:
        D = float(_run_estimator(cfg.estimator, oracle, cfg.delta, rng))
    except ZeroDefectives:
        return EstimateRecord(k, None, None, oracle.tests_used, oracle.rounds_used, "zero-defectives",
                              time.perf_counter() - start)
    lo, hi = estimation.guarantee_interval(cfg.estimator, cfg.n, cfg.d, cfg.delta)
    return EstimateRecord(k, D, estimation.within(D, lo, hi), oracle.tests_used, oracle.rounds_used, "ok",
                          time.perf_counter() - start)


def run_estimates(cfg: EstimateConfig, jobs: int = 1) -> list[EstimateRecord]:
    return _parallel_map(run_estimate_trial, [(cfg, k) for k in range(cfg.trials)], jobs)


ESTIMATE_SUMMARY_FIELDS = ["estimator", "n", "d", "delta", "trials", "guarantee_rate", "zero_defectives", "mean_tests", "max_tests"]


def summarize_estimates(cfg: EstimateConfig, records: Sequence[EstimateRecord]) -> dict:
    tests = [r.tests_used for r in records]
    return {
        "estimator": cfg.estimator, "n": cfg.n, "d": cfg.d, "delta": cfg.delta, "trials": len(records),
        "guarantee_rate": sum(bool(r.guarantee) for r in records) / len(records),
        "zero_defectives": sum(r.status == "zero-defectives" for r in records),
        "mean_tests": float(np.mean(tests)), "max_tests": max(tests),
    }


# ---------------------------------------------------------------------------
# writers


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_csv(rows: Sequence[dict], fields: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(fields)
    for row in rows:
        writer.writerow([_cell(row[f]) for f in fields])
    return buf.getvalue()


def record_rows(records: Sequence, fields: Sequence[str], timing: bool) -> tuple[list[dict], list[str]]:
    rows = [asdict(r) for r in records]
    return rows, list(fields) + (["wall_time"] if timing else [])


def to_json(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
