"""Synthetic pools: Gaussian feature clusters with truncated-Gaussian losses.

Group ``k`` (1-based) has features ``N(c_k, sigma2 I_d)`` with
``c_k = (lam * k, 0, ..., 0)`` and losses ``N((k - 1/2)/K, 1/K^2)`` truncated to
``[0, 1]`` by rejection. Groups are assigned uniformly at random.
"""

from dataclasses import dataclass, replace

import numpy as np

from .dataset import TestPool, save_pool

__all__ = ["ScenarioSpec", "PRESETS", "scenario", "generate", "export", "truncated_normal"]


@dataclass(frozen=True)
class ScenarioSpec:
    K: int = 1
    lam: float = 5.0
    sigma2: float = 1.0
    d: int = 10
    n: int = 5000
    seed: int = 0

    def __post_init__(self):
        if self.K < 1 or self.d < 1 or self.n < 1:
            raise ValueError("K, d and n must be positive")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")

    @property
    def loss_means(self):
        return tuple((k - 0.5) / self.K for k in range(1, self.K + 1))

    @property
    def loss_var(self):
        return 1.0 / self.K**2


PRESETS = {
    "s1": ScenarioSpec(K=1),
    "s2": ScenarioSpec(K=3, lam=5.0),
    "s3": ScenarioSpec(K=3, lam=1.0),
}


def scenario(name, **overrides):
    """Preset by name (``s1``, ``s2``, ``s3``) with field overrides."""
    try:
        base = PRESETS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(PRESETS)}") from None
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(base, **overrides)


def truncated_normal(rng, mean, sd, low=0.0, high=1.0):
    """Elementwise draws from ``N(mean, sd^2)`` conditioned on ``[low, high]``, by rejection."""
    mean = np.asarray(mean, dtype=np.float64)
    out = np.empty(mean.shape)
    todo = np.arange(mean.size)
    flat_mean = mean.reshape(-1)
    flat_out = out.reshape(-1)
    while todo.size:
        draw = rng.normal(flat_mean[todo], sd)
        ok = (draw >= low) & (draw <= high)
        flat_out[todo[ok]] = draw[ok]
        todo = todo[~ok]
    return out


def generate(spec):
    rng = np.random.default_rng(spec.seed)
    groups = rng.integers(1, spec.K + 1, size=spec.n)
    features = rng.normal(0.0, np.sqrt(spec.sigma2), size=(spec.n, spec.d))
    features[:, 0] += spec.lam * groups
    means = (groups - 0.5) / spec.K
    losses = truncated_normal(rng, means, 1.0 / spec.K)
    width = len(str(spec.n - 1))
    ids = [f"r{i:0{width}d}" for i in range(spec.n)]
    return TestPool(ids, features, losses, groups)


def export(pool, path, format=None):
    if len(pool) == 0:
        raise ValueError("refusing to export an empty pool")
    return save_pool(pool, path, format)
