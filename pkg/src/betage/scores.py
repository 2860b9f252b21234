"""Loss functions built on the beta-score, and diagnostics for noisy weights.

For a pair with observed weight ``w`` and model mean ``mu`` the moment
beta-score term is

    -w * (mu**beta - 1) / beta + mu**(1 + beta) / (1 + beta)

and its derivative with respect to ``log mu`` is ``-w mu**beta + mu**(1+beta)``.
``(mu**beta - 1) / beta`` is evaluated as ``expm1(beta * log mu) / beta`` so
that small ``beta`` keeps full precision.  As ``beta -> 0`` the score tends to
the Poisson negative log-likelihood ``-w log mu + mu``, which is provided as
the separate :func:`nll_loss`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln, pdtrc

from .errors import NumericError, ValidationError
from .graph_data import pair_count
from .similarity import ModelParams, mu as _mu, pair_log_mu

__all__ = [
    "LossReport",
    "NoiseScenario",
    "Theorem1Result",
    "ProbBetaScore",
    "resolve_pairs",
    "embs_loss",
    "nll_loss",
    "beta_score",
    "prob_beta_score",
    "theorem1_decomposition",
]


@dataclass(frozen=True)
class LossReport:
    value: float
    grad: np.ndarray
    pair_count: int
    clamp_events: int = 0

    def to_dict(self):
        return {"value": self.value, "grad_norm": float(np.linalg.norm(self.grad)),
                "pair_count": self.pair_count, "clamp_events": self.clamp_events}


def resolve_pairs(d, pairs=None):
    """Index arrays and weights for ``pairs`` (default: every node pair)."""
    if pairs is None:
        i, j = d.all_pairs()
        return i, j, d.dense_weights()
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= d.n):
        raise ValidationError(f"pair index out of range [0, {d.n})")
    i, j = pairs[:, 0], pairs[:, 1]
    if np.any(i == j):
        raise ValidationError("pairs must join distinct nodes")
    return i, j, d.weight_of(i, j).astype(float)


def _check_finite(terms, what):
    bad = np.flatnonzero(~np.isfinite(terms))
    if bad.size:
        raise NumericError(f"non-finite {what} at pair position {bad[0]}", pair=int(bad[0]))


def _check_beta(beta):
    if not beta > 0:
        raise ValidationError(f"beta must be positive, got {beta} (use nll_loss for beta=0)")


def embs_loss(params, d, beta, pairs=None):
    """Empirical moment beta-score summed over ``pairs``, with its gradient."""
    _check_beta(beta)
    i, j, w = resolve_pairs(d, pairs)
    s, events, vjp = pair_log_mu(params, d, i, j)
    with np.errstate(over="ignore", invalid="ignore"):
        mb = np.exp(beta * s)
        m1b = np.exp((1.0 + beta) * s)
        terms = -w * (np.expm1(beta * s) / beta) + m1b / (1.0 + beta)
    _check_finite(terms, "EMBS term")
    coef = -w * mb + m1b
    return LossReport(float(np.sum(terms)), vjp(coef), int(i.size), events)


def nll_loss(params, d, pairs=None):
    """Poisson negative log-likelihood (up to the log w! constant)."""
    i, j, w = resolve_pairs(d, pairs)
    s, events, vjp = pair_log_mu(params, d, i, j)
    with np.errstate(over="ignore", invalid="ignore"):
        m = np.exp(s)
        terms = -w * s + m
    _check_finite(terms, "likelihood term")
    return LossReport(float(np.sum(terms)), vjp(m - w), int(i.size), events)


def beta_score(g, f, nu, beta):
    """Discrete beta-score ``-sum g nu (f^b - 1)/b + sum nu f^(1+b)/(1+b)``."""
    _check_beta(beta)
    g, f, nu = (np.asarray(a, dtype=float).ravel() for a in (g, f, nu))
    if not (g.shape == f.shape == nu.shape):
        raise ValidationError(f"length mismatch: g={g.size}, f={f.size}, nu={nu.size}")
    if np.any(g < 0) or np.any(f < 0) or np.any(nu < 0):
        raise ValidationError("g, f and nu must be non-negative")
    with np.errstate(divide="ignore"):
        logf = np.log(f)
    first = np.where(f > 0, np.expm1(beta * logf), -1.0) / beta
    return float(-np.sum(g * nu * first) + np.sum(nu * f ** (1.0 + beta)) / (1.0 + beta))


class ProbBetaScore(NamedTuple):
    value: float
    tail_bound: float


def prob_beta_score(params, d, beta, w_max, chunk=1 << 16):
    """Truncated empirical probability beta-score under the Poisson model.

    The infinite sum over weights is cut at ``w_max``.  ``tail_bound`` bounds
    the omitted part of the (pair-averaged) value, using
    ``sum_{w > w_max} p^(1+beta) <= P(W > w_max)``.
    """
    _check_beta(beta)
    w_max = int(w_max)
    if d.num_positive and w_max < int(d.weights.max()):
        raise ValidationError(f"w_max={w_max} is below the largest weight {int(d.weights.max())}")
    i, j, w = resolve_pairs(d)
    s, _, _ = pair_log_mu(params, d, i, j)
    grid = np.arange(w_max + 1, dtype=float)
    log_fact = gammaln(grid + 1.0)
    total = 0.0
    tail = 0.0
    for lo in range(0, s.size, chunk):
        sc, wc = s[lo:lo + chunk], w[lo:lo + chunk]
        mu = np.exp(sc)
        logp_obs = wc * sc - mu - gammaln(wc + 1.0)
        first = -np.expm1(beta * logp_obs) / beta
        logp = grid[None, :] * sc[:, None] - mu[:, None] - log_fact[None, :]
        second = np.exp((1.0 + beta) * logp).sum(axis=1) / (1.0 + beta)
        total += float(np.sum(first + second))
        tail += float(np.sum(pdtrc(w_max, mu))) / (1.0 + beta)
    N = s.size
    return ProbBetaScore(total / N, tail / N)


# -- robustness diagnostics -------------------------------------------------------

@dataclass(frozen=True)
class NoiseScenario:
    """Finite contamination scenario.

    ``nu`` are probability weights over atoms (data-vector pairs); each atom
    has a correct expected weight ``mu_star`` and an expected noise
    ``eta_star``.  ``sample_pairs`` optionally holds the ``(x_i, x_j)`` of each
    atom so a model can be evaluated on them.
    """

    nu: np.ndarray
    mu_star: np.ndarray
    eta_star: np.ndarray
    beta: float
    beta0: float
    epsilon: float
    sample_pairs: tuple | None = None

    def __post_init__(self):
        for name in ("nu", "mu_star", "eta_star"):
            arr = np.asarray(getattr(self, name), dtype=float).ravel()
            object.__setattr__(self, name, arr)
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} must be finite and non-negative")
        if not (self.nu.shape == self.mu_star.shape == self.eta_star.shape):
            raise ValidationError("nu, mu_star and eta_star must have equal length")
        if abs(self.nu.sum() - 1.0) > 1e-12:
            raise ValidationError(f"nu must sum to 1, sums to {self.nu.sum()!r}")
        if not 0 < self.beta <= self.beta0:
            raise ValidationError("need 0 < beta <= beta0")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")
        if self.sample_pairs is not None and len(self.sample_pairs) != self.nu.size:
            raise ValidationError("sample_pairs must have one entry per atom")


@dataclass(frozen=True)
class Theorem1Result:
    u_g: float
    u_star: float
    alpha: float
    alpha_over_beta: float
    M: float
    bound: float
    eps_term: float
    in_theta_eps: bool
    identity_error: float
    bound_holds: bool | None

    def to_dict(self):
        return dict(self.__dict__)


def _scenario_mu(s, model):
    if isinstance(model, ModelParams):
        if s.sample_pairs is None:
            raise ValidationError("scenario has no sample_pairs to evaluate the model on")
        vals = []
        for pair in s.sample_pairs:
            xi, xj = pair[0], pair[1]
            di, dj = (pair[2], pair[3]) if len(pair) == 4 else (0, 0)
            vals.append(_mu(model, xi, xj, di, dj))
        return np.array(vals)
    arr = np.asarray(model, dtype=float).ravel()
    if arr.shape != s.nu.shape:
        raise ValidationError("model mean must have one value per atom")
    if np.any(arr < 0):
        raise ValidationError("model mean must be non-negative")
    return arr


def theorem1_decomposition(s, model, rtol=1e-10):
    """Split the contaminated score into clean score, constant and bias.

    With ``g = mu_star + eta_star`` and all expectations taken as ``nu``
    weighted sums, the identity

        u(g, mu) = u(mu_star, mu) + alpha / beta - M * eps**(beta / beta0)

    holds exactly, where ``alpha = sum nu eta`` and
    ``M = sum nu eta mu**beta / beta * eps**(-beta / beta0)``.  When
    ``sum nu eta mu**beta0 < eps`` the bias factor satisfies
    ``M <= alpha**(1 - beta/beta0) / beta``.

    ``model`` is either a :class:`ModelParams` (evaluated on
    ``s.sample_pairs``) or the model means per atom.  Raises
    :class:`NumericError` if the identity or, where applicable, the bound
    fails.
    """
    m = _scenario_mu(s, model)
    b, b0, eps = s.beta, s.beta0, s.epsilon
    u_g = beta_score(s.mu_star + s.eta_star, m, s.nu, b)
    u_star = beta_score(s.mu_star, m, s.nu, b)
    alpha = float(np.sum(s.nu * s.eta_star))
    ratio = b / b0
    M = float(np.sum(s.nu * s.eta_star * m ** b)) / b * eps ** (-ratio)
    bound = alpha ** (1.0 - ratio) / b
    eps_term = float(np.sum(s.nu * s.eta_star * m ** b0))
    rhs = u_star + alpha / b - M * eps ** ratio
    scale = max(abs(u_g), abs(u_star), alpha / b, M * eps ** ratio, np.finfo(float).tiny)
    err = abs(u_g - rhs) / scale
    if err > rtol:
        raise NumericError(f"decomposition identity off by {err:.3e} (relative)", error=err)
    inside = eps_term < eps
    holds = None
    if inside:
        holds = bool(M <= bound * (1.0 + 1e-12))
        if not holds:
            raise NumericError(f"bias factor {M!r} exceeds bound {bound!r}", M=M, bound=bound)
    return Theorem1Result(u_g, u_star, alpha, alpha / b, M, bound, eps_term, inside, err, holds)
