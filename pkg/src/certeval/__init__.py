"""Certified, sample-efficient evaluation of mean loss on a test pool."""

from .confseq import (
    adaptive_bernstein_radius,
    adaptive_hoeffding_radius,
    group_ci_radius,
    group_eta,
    seq_sample_bound,
    static_hoeffding_radius,
)
from .dataset import TestPool, load_pool, save_pool
from .evaluators import (
    CertifiedEvaluator,
    EvalGoal,
    EvalReport,
    SequentialEvaluator,
    StaticEvaluator,
    run_base,
    run_cereval,
    run_seq,
)
from .partition import one_nn_partition, oracle_partition
from .synthetic import ScenarioSpec, generate, scenario

__version__ = "0.1.0"
