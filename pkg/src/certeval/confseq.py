"""Closed-form confidence intervals and confidence sequences for bounded losses.

All radii are for the sample mean of losses in ``[0, 1]``. Functions taking a
sample size accept either an int or an integer array and broadcast; scalar
inputs return plain floats.

The iterated logarithm inside ``ln(log(n) + 1)`` is base 2, so that the
doubling-epoch boundary ``n = 2**l`` contributes exactly ``(l + 1)**-2 * delta/4``
of failure probability. Every other logarithm is natural.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._validation import (
    DomainError,
    as_scalar_or_array,
    check_delta,
    check_nonnegative,
    check_positive,
    check_sample_size,
)

__all__ = [
    "ConfidenceParams",
    "DomainError",
    "static_hoeffding_radius",
    "adaptive_hoeffding_radius",
    "iterated_log_budget",
    "bernstein_threshold",
    "maximal_bernstein_threshold",
    "adaptive_bernstein_radius",
    "group_eta",
    "group_ci_radius",
    "seq_sample_bound",
]


@dataclass(frozen=True)
class ConfidenceParams:
    """Failure budget and almost-sure bound for one confidence sequence."""

    delta: float = 0.05
    bound_b: float = 1.0

    def __post_init__(self):
        check_delta(self.delta)
        check_positive(self.bound_b, "bound_b")


def static_hoeffding_radius(n, delta):
    """One-sided Hoeffding radius ``sqrt(ln(1/delta) / (2n))`` at a fixed ``n``."""
    n = check_sample_size(n)
    delta = check_delta(delta)
    return as_scalar_or_array(np.sqrt(math.log(1.0 / delta) / (2.0 * n)))


def iterated_log_budget(n, delta_term):
    """``2 ln(log2(n) + 1) + ln(delta_term)``, the numerator shared by the anytime bounds.

    ``delta_term`` is the already-divided confidence argument, e.g. ``4/delta``.
    """
    n = check_sample_size(n)
    return 2.0 * np.log(np.log2(n) + 1.0) + math.log(delta_term)


def adaptive_hoeffding_radius(n, delta):
    """Anytime-valid Hoeffding radius for ``[0, 1]`` summands.

    ``P(exists n: mean_n - mu >= radius(n)) <= delta / 2`` holds uniformly over
    all ``n``, so a two-sided interval at every ``n`` fails with probability at
    most ``delta``.
    """
    delta = check_delta(delta)
    n = check_sample_size(n)
    u = iterated_log_budget(n, 4.0 / delta)
    return as_scalar_or_array(np.sqrt(u / n))


def bernstein_threshold(delta, variance_sum, bound_b=1.0):
    """Deviation ``t`` with ``P(S_n >= t) <= delta`` for a sum with total variance ``variance_sum``.

    ``t = (b ln(1/delta) + sqrt(b^2 ln^2(1/delta) + 18 v ln(1/delta))) / 3``.
    """
    delta = check_delta(delta)
    v = check_nonnegative(variance_sum, "variance_sum")
    b = check_positive(bound_b, "bound_b")
    lg = math.log(1.0 / delta)
    return as_scalar_or_array((b * lg + np.sqrt(b * b * lg * lg + 18.0 * v * lg)) / 3.0)


def maximal_bernstein_threshold(delta, variance_sum, bound_b=1.0):
    """Same threshold as :func:`bernstein_threshold`, but bounding ``max_{i<=n} S_i``.

    The maximal inequality has the same closed form; it is kept as a separate
    name because the anytime Bernstein bound is assembled from it epoch by
    epoch.
    """
    return bernstein_threshold(delta, variance_sum, bound_b)


def adaptive_bernstein_radius(n, delta, variance_proxy, bound_b=1.0):
    """Anytime Bernstein radius ``(b u + sqrt(b^2 u^2 + 18 v u)) / (3n)``.

    ``u = 2 ln(log2(n) + 1) + ln(4/delta)`` and ``variance_proxy`` is the caller's
    bound on the summed variance up to index ``2n``.
    """
    delta = check_delta(delta)
    n = check_sample_size(n)
    v = check_nonnegative(variance_proxy, "variance_proxy")
    b = check_positive(bound_b, "bound_b")
    u = iterated_log_budget(n, 4.0 / delta)
    return as_scalar_or_array((b * u + np.sqrt(b * b * u * u + 18.0 * v * u)) / (3.0 * n))


def _eta(n_k, K, delta):
    # unchecked kernel; K may be an array broadcasting against n_k
    n_k = np.asarray(n_k, dtype=np.float64)
    return np.sqrt((2.0 * np.log(np.log2(n_k) + 1.0) + np.log(16.0 * np.asarray(K) / delta)) / n_k)


def _group_radius(v, eta):
    eta2 = eta * eta
    return 2.0 * eta2 / 3.0 + 2.0 * np.sqrt((v + eta + eta2) * eta2)


def group_eta(n_k, K, delta):
    """Per-group deviation scale ``sqrt((2 ln(log2(n_k) + 1) + ln(16K/delta)) / n_k)``."""
    delta = check_delta(delta)
    n_k = check_sample_size(n_k, "n_k")
    if not isinstance(K, (int, np.integer)) or K < 1:
        raise DomainError(f"K must be a positive integer, got {K!r}")
    return as_scalar_or_array(_eta(n_k, K, delta))


def group_ci_radius(v_k, eta_k):
    """Empirical-Bernstein group radius ``2 eta^2/3 + 2 sqrt((v + eta + eta^2) eta^2)``.

    ``v_k`` is the biased empirical variance of the revealed losses in the group;
    the ``eta + eta^2`` term inflates it to an upper bound on the true variance.
    """
    v = check_nonnegative(v_k, "v_k")
    eta = check_nonnegative(eta_k, "eta_k")
    return as_scalar_or_array(_group_radius(v, eta))


def seq_sample_bound(epsilon, delta):
    """Sufficient sample size ``ceil((12 ln(4/delta) + 12 ln ln(1/epsilon)) / epsilon^2)`` for Seq."""
    delta = check_delta(delta)
    epsilon = check_positive(epsilon, "epsilon")
    if math.log(1.0 / epsilon) <= 1.0:
        raise DomainError(f"epsilon must be below 1/e, got {epsilon!r}")
    value = (12.0 * math.log(4.0 / delta) + 12.0 * math.log(math.log(1.0 / epsilon))) / epsilon**2
    return math.ceil(value)
