"""Detecting a few defective items with group tests.

Adaptive and non-adaptive detect-ℓ algorithms, defective-count estimators,
brute-force verifiers and a simulation CLI.
"""

from .core import (
    DetectionOutcome,
    InfeasibleCheck,
    InvalidInput,
    ItemUniverse,
    PoolingMatrix,
    RandomPools,
    Status,
    TestOracle,
    ZeroDefectives,
    bernoulli_matrix,
    bernoulli_pool,
    make_rng,
    random_hidden_set,
)
from .adaptive import detect_adaptive_det, detect_adaptive_rand, detect_adaptive_rand_unknown_d
from .nonadaptive import (
    decode_detectone,
    decode_restricted,
    detect_nonadaptive_det,
    detect_nonadaptive_rand,
    detect_nonadaptive_rand_unknown_d,
    find_all_comp,
    gen_detectone_design,
    gen_restricted_matrix,
)
from .estimation import estimate_coarse, estimate_factor2, estimate_factor4_nonadaptive, threshold_test
from .verify import bound_formulas, check_restricted, check_restricted_sampled, exhaustive_decoder_check

__version__ = "0.1.0"
