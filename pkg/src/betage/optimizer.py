"""Training: minibatch projected SGD, full-batch descent, estimating equation.

The minibatch objective at step ``t`` is

    h_t(theta) = -sum_{W_t} w (mu^beta - 1)/beta + lam * sum_{I_t} mu^(1+beta)/(1+beta)

with ``W_t`` drawn from the positive-weight pairs and ``I_t`` from all pairs.
Its expectation over batches has gradient

    (1/|I|) sum_{all pairs} (-v m1 w + lam m2 mu) mu^beta dlog(mu)/dtheta,

``v = |I| / |W|``, so ``lam = v m1 / m2`` makes SGD target the EMBS optimum.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, OptimizationError, ValidationError
from .graph_data import PairBatch, sample_batch
from .scores import LossReport, embs_loss, nll_loss, resolve_pairs
from .similarity import EncoderSpec, ModelParams, init_params, pair_log_mu

log = logging.getLogger(__name__)

__all__ = [
    "SGDConfig",
    "Trajectory",
    "TrajectoryRecord",
    "FitResult",
    "project",
    "default_lambda",
    "stoch_loss",
    "train_sgd",
    "train_fullbatch",
    "objective",
    "estimating_equation",
    "estimating_residual",
    "expected_stoch_grad",
]


def project(theta, center, radius):
    """Euclidean projection onto the ball ``||theta - center|| <= radius``."""
    theta = np.asarray(theta, dtype=float)
    diff = theta - center
    r = float(np.linalg.norm(diff))
    if r <= radius:
        return theta
    return center + diff * (radius / r)


def default_lambda(d, m1, m2):
    """``v m1 / m2``: the weight that makes SGD solve the EMBS equation."""
    if d.num_positive == 0:
        raise ValidationError("dataset has no positive pairs")
    return d.num_pairs / d.num_positive * m1 / m2


@dataclass(frozen=True)
class SGDConfig:
    beta: float
    m1: int
    m2: int
    T: int
    lam: float | None = None
    delta0: float = 0.05
    alpha_exp: float = 0.6
    theta_center: np.ndarray | None = None
    radius: float = 100.0
    seed: int = 0
    eval_every: int = 100
    full_eval: bool = False
    ridge: float = 0.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValidationError("beta must be non-negative")
        if self.m1 < 1 or self.m2 < 1:
            raise ValidationError("batch sizes must be positive")
        if self.T < 0:
            raise ValidationError("T must be non-negative")
        if self.lam is not None and not self.lam > 0:
            raise ValidationError("lambda must be positive")
        if self.delta0 < 0:
            raise ValidationError("delta0 must be non-negative")
        if not 0 < self.alpha_exp <= 1:
            raise ValidationError("alpha_exp must lie in (0, 1]")
        if not self.radius > 0:
            raise ValidationError("radius must be positive")
        if self.eval_every < 1:
            raise ValidationError("eval_every must be positive")

    def step_size(self, t):
        return self.delta0 / (1.0 + t) ** self.alpha_exp


@dataclass(frozen=True)
class TrajectoryRecord:
    t: int
    theta: np.ndarray
    loss: float
    full_embs: float | None
    proj_hits: int

    def to_dict(self, center):
        return {"t": self.t, "loss": self.loss, "full_embs": self.full_embs,
                "theta_norm": float(np.linalg.norm(self.theta)),
                "dist_center": float(np.linalg.norm(self.theta - center)),
                "proj_hits": self.proj_hits}


@dataclass
class Trajectory:
    records: list
    params: ModelParams
    center: np.ndarray
    proj_hits: int = 0

    @property
    def theta(self):
        return self.params.theta

    def to_jsonl(self):
        return "".join(json.dumps(r.to_dict(self.center)) + "\n" for r in self.records)


def _as_specs(specs):
    return (specs,) if isinstance(specs, EncoderSpec) else tuple(specs)


def stoch_loss(params, d, batch, beta, lam):
    """Minibatch objective and its gradient.

    ``beta = 0`` gives the likelihood analogue
    ``-sum_W w log mu + lam sum_I mu``.
    """
    if beta < 0:
        raise ValidationError("beta must be non-negative")
    pos, con = batch.positive_pairs, batch.contrast_pairs
    m1 = pos.shape[0]
    i = np.concatenate([pos[:, 0], con[:, 0]])
    j = np.concatenate([pos[:, 1], con[:, 1]])
    w = d.weight_of(pos[:, 0], pos[:, 1]).astype(float)
    s, events, vjp = pair_log_mu(params, d, i, j)
    sp, sc = s[:m1], s[m1:]
    with np.errstate(over="ignore", invalid="ignore"):
        if beta > 0:
            attract = -w * (np.expm1(beta * sp) / beta)
            c_att = -w * np.exp(beta * sp)
        else:
            attract = -w * sp
            c_att = -w
        m1b = np.exp((1.0 + beta) * sc)
        repel = lam * m1b / (1.0 + beta)
        c_rep = lam * m1b
    terms = np.concatenate([attract, repel])
    bad = np.flatnonzero(~np.isfinite(terms))
    if bad.size:
        raise NumericError(f"non-finite minibatch term at position {bad[0]}", pair=int(bad[0]))
    value = float(np.sum(attract) + np.sum(repel))
    grad = vjp(np.concatenate([c_att, c_rep]))
    return LossReport(value, grad, int(i.size), events)


def _trainable(params, trainable):
    if trainable is None:
        return np.ones(params.size, dtype=bool)
    mask = np.asarray(trainable, dtype=bool)
    if mask.shape != (params.size,):
        raise ValidationError("trainable mask must match the parameter vector")
    return mask


def train_sgd(d, specs, cfg, init=None, trainable=None):
    """Projected minibatch SGD with step size ``delta0 / (1 + t)**alpha_exp``.

    Batches are resampled every iteration.  ``init`` defaults to a random
    initialisation drawn from the config seed, ``theta_center`` to the initial
    parameters.  Deterministic given ``cfg.seed``.
    """
    init_ss, batch_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    if init is None:
        init = init_params(_as_specs(specs), np.random.default_rng(init_ss))
    rng = np.random.default_rng(batch_ss)
    if cfg.m1 > d.num_positive:
        raise ValidationError(f"m1={cfg.m1} exceeds the {d.num_positive} positive pairs")
    lam = cfg.lam if cfg.lam is not None else default_lambda(d, cfg.m1, cfg.m2)
    mask = _trainable(init, trainable)
    psi = init.layout.psi_mask()
    center = init.theta.copy() if cfg.theta_center is None else np.asarray(cfg.theta_center, float)
    if center.shape != init.theta.shape:
        raise ValidationError("theta_center must match the parameter vector")
    theta = project(init.theta.copy(), center, cfg.radius)
    params = init.with_theta(theta)
    records = []
    hits = 0
    loss = float("nan")
    for t in range(cfg.T):
        batch = sample_batch(d, cfg.m1, cfg.m2, rng)
        try:
            rep = stoch_loss(params, d, batch, cfg.beta, lam)
        except NumericError as exc:
            raise NumericError(f"SGD failed at iteration {t}: {exc}", iteration=t,
                               theta=params.theta.copy()) from exc
        loss = rep.value
        g = rep.grad
        if cfg.ridge:
            loss += cfg.ridge * float(theta[psi] @ theta[psi])
            g = g + 2.0 * cfg.ridge * np.where(psi, theta, 0.0)
        if t % cfg.eval_every == 0:
            records.append(_record(t, params, d, cfg, loss, hits))
        step = theta - cfg.step_size(t) * np.where(mask, g, 0.0)
        theta = project(step, center, cfg.radius)
        if theta is not step:
            hits += 1
        if not np.all(np.isfinite(theta)):
            raise NumericError(f"SGD produced non-finite parameters at iteration {t}", iteration=t)
        params = init.with_theta(theta)
    if cfg.T == 0 or records[-1].t != cfg.T:
        records.append(_record(cfg.T, params, d, cfg, None, hits))
    return Trajectory(records, params, center, hits)


def _record(t, params, d, cfg, loss, hits):
    full = None
    if cfg.full_eval:
        full = (embs_loss(params, d, cfg.beta) if cfg.beta > 0 else nll_loss(params, d)).value
    return TrajectoryRecord(t, params.theta.copy(), loss, full, hits)


# -- full-batch descent -------------------------------------------------------------

def objective(params, d, beta, ridge=0.0, pairs=None):
    """EMBS (or NLL when ``beta == 0``) plus ``ridge * ||psi||^2``."""
    rep = embs_loss(params, d, beta, pairs) if beta > 0 else nll_loss(params, d, pairs)
    if not ridge:
        return rep
    psi = params.layout.psi_mask()
    th = np.where(psi, params.theta, 0.0)
    return LossReport(rep.value + ridge * float(th @ th), rep.grad + 2.0 * ridge * th,
                      rep.pair_count, rep.clamp_events)


@dataclass
class FitResult:
    params: ModelParams
    losses: list = field(default_factory=list)
    grad_norm: float = float("nan")
    iterations: int = 0
    converged: bool = False


def train_fullbatch(d, specs, beta, ridge=1e-4, max_iters=1000, tol=1e-6, seed=0,
                    init=None, trainable=None, pairs=None, c_armijo=1e-4):
    """Gradient descent with Armijo backtracking on the full objective.

    The trial step is the Barzilai-Borwein step from the previous iteration;
    backtracking halves it until the Armijo condition holds, so accepted
    losses never increase.  Stops when ``||grad|| <= tol`` or after
    ``max_iters`` iterations.  Raises :class:`OptimizationError` if 60
    halvings find no decrease.
    """
    if beta < 0:
        raise ValidationError("beta must be non-negative")
    if init is None:
        init = init_params(_as_specs(specs), np.random.default_rng(seed))
    mask = _trainable(init, trainable)
    params = init
    rep = objective(params, d, beta, ridge, pairs)
    g = np.where(mask, rep.grad, 0.0)
    gn = float(np.linalg.norm(g))
    result = FitResult(params, [rep.value], gn, 0, gn <= tol)
    step = 1.0 / max(gn, 1.0)
    prev = None
    for it in range(max_iters):
        if gn <= tol:
            result.converged = True
            break
        if prev is not None:
            dtheta, dg = params.theta - prev[0], g - prev[1]
            curv = float(dtheta @ dg)
            if curv > 0:
                step = float(dtheta @ dtheta) / curv
            else:
                step *= 2.0
        f0 = rep.value
        gg = gn * gn
        for _ in range(61):
            trial = params.with_theta(params.theta - step * g)
            try:
                trep = objective(trial, d, beta, ridge, pairs)
            except NumericError:
                trep = None
            if trep is not None and trep.value <= f0 - c_armijo * step * gg:
                break
            step *= 0.5
        else:
            raise OptimizationError(
                f"line search found no decrease at iteration {it} "
                f"(loss={f0!r}, grad_norm={gn!r})", iteration=it, loss=f0, grad_norm=gn)
        prev = (params.theta, g)
        params, rep = trial, trep
        g = np.where(mask, rep.grad, 0.0)
        gn = float(np.linalg.norm(g))
        result.losses.append(rep.value)
        result.iterations = it + 1
    result.params = params
    result.grad_norm = gn
    result.converged = gn <= tol
    return result


# -- estimating equation and unbiasedness ---------------------------------------------

def estimating_equation(params, d, beta, lam, m1, m2):
    """``sum_{all pairs} (-v m1 w + lam m2 mu) mu^beta dlog(mu)/dtheta``."""
    if d.num_positive == 0:
        raise ValidationError("dataset has no positive pairs")
    v = d.num_pairs / d.num_positive
    i, j, w = resolve_pairs(d)
    s, _, vjp = pair_log_mu(params, d, i, j)
    m = np.exp(s)
    return vjp((-v * m1 * w + lam * m2 * m) * np.exp(beta * s))


def estimating_residual(params, d, beta, lam, m1, m2):
    """Euclidean norm of :func:`estimating_equation`."""
    return float(np.linalg.norm(estimating_equation(params, d, beta, lam, m1, m2)))


def expected_stoch_grad(params, d, beta, lam, m1, m2, max_batches=10**6):
    """Exact mean of the minibatch gradient over every possible batch."""
    n_pos, n_all = d.num_positive, d.num_pairs
    if m1 > n_pos or m2 > n_all:
        raise ValidationError("batch sizes exceed the available pairs")
    count = math.comb(n_pos, m1) * math.comb(n_all, m2)
    if count > max_batches:
        raise ValidationError(f"{count} batches exceed the enumeration limit {max_batches}")
    ai, aj = d.all_pairs()
    everything = np.stack([ai, aj], axis=1)
    total = np.zeros(params.size)
    for wsel in itertools.combinations(range(n_pos), m1):
        pos = d.pairs[list(wsel)].reshape(-1, 2)
        for isel in itertools.combinations(range(n_all), m2):
            batch = PairBatch(pos, everything[list(isel)].reshape(-1, 2))
            total += stoch_loss(params, d, batch, beta, lam).grad
    return total / count
