"""Embedding extraction, k-means, purity, NMI and beta selection by CV."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .graph_data import code_to_pair, pair_count
from .optimizer import train_fullbatch
from .scores import embs_loss
from .similarity import EncoderSpec, embed_nodes, encode

log = logging.getLogger(__name__)

__all__ = [
    "EvalResult",
    "KMeansResult",
    "embed_all",
    "kmeans",
    "kmeans_fit",
    "purity",
    "nmi",
    "evaluate",
    "CVTrainConfig",
    "select_beta_cv",
]


def embed_all(params, d):
    """Feature vector of every node, as an ``(n, K)`` matrix.

    Rows are computed one at a time with :func:`encode`, so each row is
    bit-identical to a direct ``encode`` call (a batched matrix product can
    differ in the last ulp).
    """
    embed_nodes(params, d, np.arange(0))  # dimension and view checks
    if d.n == 0:
        return np.zeros((0, params.specs[0].output_dim))
    return np.stack([encode(params, d.x(i), int(d.views[i])) for i in range(d.n)])


@dataclass
class KMeansResult:
    assignments: np.ndarray
    inertia: float
    centers: np.ndarray
    n_iter: int
    restart: int
    history: list = field(default_factory=list)


def _sq_dists(Y, C):
    return np.maximum(
        (Y * Y).sum(1)[:, None] - 2.0 * Y @ C.T + (C * C).sum(1)[None, :], 0.0)


def _plusplus(Y, k, rng):
    n = Y.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((Y - Y[chosen[0]]) ** 2).sum(1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            # all remaining points coincide with a centre
            free = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(free))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((Y - Y[nxt]) ** 2).sum(1))
    return Y[chosen].copy()


def _lloyd(Y, C, max_iters):
    k = C.shape[0]
    labels = None
    history = []
    for it in range(max_iters):
        D = _sq_dists(Y, C)
        new = D.argmin(1)
        history.append(float(D[np.arange(Y.shape[0]), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            members = labels == c
            if members.any():
                C[c] = Y[members].mean(0)
            else:
                far = int(D[np.arange(Y.shape[0]), labels].argmax())
                C[c] = Y[far]
                labels[far] = c
    D = _sq_dists(Y, C)
    labels = D.argmin(1)
    inertia = float(((Y - C[labels]) ** 2).sum())
    return labels, C, inertia, it + 1, history


def kmeans_fit(Y, k, seed=0, restarts=10, max_iters=300):
    """Lloyd's algorithm from k-means++ starts; keeps the lowest inertia."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n = Y.shape[0]
    if not 1 <= k <= n:
        raise ValidationError(f"need 1 <= k <= n, got k={k}, n={n}")
    best = None
    for r, ss in enumerate(np.random.SeedSequence(seed).spawn(restarts)):
        rng = np.random.default_rng(ss)
        labels, C, inertia, n_iter, hist = _lloyd(Y, _plusplus(Y, k, rng), max_iters)
        if best is None or inertia < best.inertia:
            best = KMeansResult(labels, inertia, C, n_iter, r, hist)
    return best


def kmeans(Y, k, seed=0, restarts=10, max_iters=300):
    return kmeans_fit(Y, k, seed, restarts, max_iters).assignments


def _contingency(pred, truth):
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if pred.shape != truth.shape:
        raise ValidationError(f"length mismatch: {pred.size} predictions, {truth.size} labels")
    if pred.size == 0:
        raise ValidationError("empty assignment")
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(truth, return_inverse=True)
    table = np.zeros((pi.max() + 1, ti.max() + 1), dtype=np.int64)
    np.add.at(table, (pi, ti), 1)
    return table


def purity(pred, truth):
    """Fraction of nodes in the majority true class of their cluster."""
    table = _contingency(pred, truth)
    return float(table.max(axis=1).sum() / table.sum())


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth):
    """Mutual information over the arithmetic mean of the two entropies."""
    table = _contingency(pred, truth)
    n = table.sum()
    h_pred = _entropy(table.sum(1), n)
    h_true = _entropy(table.sum(0), n)
    if h_pred == 0.0 or h_true == 0.0:
        return 0.0
    joint = table / n
    outer = np.outer(table.sum(1), table.sum(0)) / (n * n)
    nz = joint > 0
    mi = float((joint[nz] * np.log(joint[nz] / outer[nz])).sum())
    return float(min(max(mi / ((h_pred + h_true) / 2.0), 0.0), 1.0))


@dataclass
class EvalResult:
    assignments: np.ndarray
    purity: float
    nmi: float
    kmeans_inertia: float
    restarts_used: int

    def to_dict(self, **extra):
        out = {"purity": self.purity, "nmi": self.nmi, "inertia": self.kmeans_inertia,
               "restarts": self.restarts_used}
        out.update(extra)
        return out


def evaluate(params, d, labels, k, seed=0, restarts=10, max_iters=300):
    Y = embed_all(params, d)
    if len(labels) != d.n:
        raise ValidationError(f"{len(labels)} labels for {d.n} nodes")
    km = kmeans_fit(Y, k, seed, restarts, max_iters)
    return EvalResult(km.assignments, purity(km.assignments, labels),
                      nmi(km.assignments, labels), km.inertia, restarts)


# -- cross-validation over beta -------------------------------------------------

@dataclass(frozen=True)
class CVTrainConfig:
    specs: tuple
    ridge: float = 1e-4
    max_iters: int = 500
    tol: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.specs, EncoderSpec):
            object.__setattr__(self, "specs", (self.specs,))


def _zero_codes(d, count, rng):
    total = pair_count(d.n)
    if count > total - d.num_positive:
        raise ValidationError("not enough zero-weight pairs to match the positives")
    positives = d.positive_codes()
    chosen = np.zeros(0, dtype=np.int64)
    while chosen.size < count:
        draw = rng.integers(0, total, size=count - chosen.size, dtype=np.int64)
        _, first = np.unique(draw, return_index=True)
        draw = draw[np.sort(first)]
        draw = draw[~np.isin(draw, chosen) & ~np.isin(draw, positives)]
        chosen = np.concatenate([chosen, draw])
    return chosen


def _codes_to_pairs(codes, n):
    i, j = code_to_pair(np.sort(codes), n)
    return np.stack([i, j], axis=1)


def select_beta_cv(d, candidates, beta0, folds, train_cfg, seed=0, details=False):
    """Pick beta by held-out EMBS at a fixed ``beta0``.

    Positive pairs, plus an equal number of random zero-weight pairs, are
    split into ``folds``.  Each candidate is trained on the remaining pairs
    and scored on the held-out ones; the lowest mean score wins, ties going
    to the smaller beta and then to the earlier candidate.
    """
    candidates = [float(b) for b in candidates]
    if not candidates:
        raise ValidationError("no candidate betas")
    if folds < 2:
        raise ValidationError("need at least two folds")
    if not beta0 > 0:
        raise ValidationError("beta0 must be positive")
    if len(candidates) == 1:
        return (candidates[0], {}) if details else candidates[0]
    if d.num_positive < folds:
        raise ValidationError(f"{d.num_positive} positive pairs cannot fill {folds} folds")
    rng = np.random.default_rng(seed)
    pos = rng.permutation(d.positive_codes())
    zer = rng.permutation(_zero_codes(d, pos.size, rng))
    pos_folds = np.array_split(pos, folds)
    zer_folds = np.array_split(zer, folds)
    total = pair_count(d.n)
    scores = {}
    for idx, beta in enumerate(candidates):
        fold_scores = []
        for f in range(folds):
            held = np.concatenate([pos_folds[f], zer_folds[f]])
            keep = np.ones(total, dtype=bool)
            keep[held] = False
            fit = train_fullbatch(
                d, train_cfg.specs, beta, ridge=train_cfg.ridge, max_iters=train_cfg.max_iters,
                tol=train_cfg.tol, seed=train_cfg.seed, pairs=_codes_to_pairs(np.flatnonzero(keep), d.n))
            fold_scores.append(embs_loss(fit.params, d, beta0, _codes_to_pairs(held, d.n)).value)
        scores[idx] = float(np.mean(fold_scores))
        log.info("beta=%g held-out EMBS(beta0=%g)=%.6g", beta, beta0, scores[idx])
    best = min(scores, key=lambda k: (scores[k], candidates[k], k))
    chosen = candidates[best]
    return (chosen, {candidates[k]: v for k, v in scores.items()}) if details else chosen
