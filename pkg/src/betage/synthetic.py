"""Four-cluster synthetic graph with noisy cross-cluster links.

Cluster centres in a low-dimensional latent space are mapped to the data
space by a random Gaussian matrix; data vectors are Gaussian around the mapped
centres.  All vectors are then scaled by one common factor so their mean norm
hits a target.  Within-cluster pairs are linked with probability
``within_prob`` and cross-cluster pairs with the noise probability ``xi``.

RNG draw order (fixed, so runs are reproducible): centres ``(clusters,
latent_dim)``, map ``(p, latent_dim)``, noise ``(n, p)``, then one uniform
per node pair in code order.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from math import comb

import numpy as np

from .errors import ValidationError
from .graph_data import Dataset, pair_count

__all__ = ["SyntheticConfig", "generate", "expected_link_counts"]


@dataclass(frozen=True)
class SyntheticConfig:
    n: int = 200
    p: int = 20
    latent_dim: int = 5
    clusters: int = 4
    within_prob: float = 0.05
    xi: float = 0.0
    target_mean_norm: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.p < 1 or self.latent_dim < 1 or self.clusters < 1:
            raise ValidationError("sizes must be positive")
        if self.n % self.clusters:
            raise ValidationError(f"clusters={self.clusters} does not divide n={self.n}")
        for name in ("within_prob", "xi"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1]")
        if not self.target_mean_norm > 0:
            raise ValidationError("target_mean_norm must be positive")

    @property
    def per_cluster(self):
        return self.n // self.clusters

    def to_dict(self):
        return asdict(self)


def generate(cfg):
    """Return ``(dataset, labels)`` with 0-based cluster labels."""
    rng = np.random.default_rng(cfg.seed)
    centres = rng.standard_normal((cfg.clusters, cfg.latent_dim))
    A = rng.standard_normal((cfg.p, cfg.latent_dim))
    labels = np.arange(cfg.n) // cfg.per_cluster
    X = centres[labels] @ A.T + rng.standard_normal((cfg.n, cfg.p))
    X *= cfg.target_mean_norm / np.linalg.norm(X, axis=1).mean()

    i, j = np.triu_indices(cfg.n, k=1)
    same = labels[i] == labels[j]
    u = rng.random(i.size)
    linked = u < np.where(same, cfg.within_prob, cfg.xi)
    pairs = np.stack([i[linked], j[linked]], axis=1)
    return Dataset.build(X, pairs), labels


def expected_link_counts(cfg):
    """Expected numbers of within-cluster and cross-cluster links."""
    within_pairs = cfg.clusters * comb(cfg.per_cluster, 2)
    cross_pairs = pair_count(cfg.n) - within_pairs
    return cfg.within_prob * within_pairs, cfg.xi * cross_pairs
