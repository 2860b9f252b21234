"""Independent reference computations used as test oracles.

Nothing here calls into the vectorised code paths under test; everything is
written out term by term.
"""
import itertools
import math

import numpy as np


def forward(kind, blocks, x):
    """Plain re-implementation of one encoder on one vector."""
    x = list(map(float, x))
    if kind == "linear":
        W = blocks["W"]
        return np.array([sum(W[r][c] * x[c] for c in range(len(x))) for r in range(len(W))])
    W1, b1, W2, b2 = blocks["W1"], blocks["b1"], blocks["W2"], blocks["b2"]
    h = [math.tanh(sum(W1[r][c] * x[c] for c in range(len(x))) + b1[r]) for r in range(len(W1))]
    return np.array([math.tanh(sum(W2[r][c] * h[c] for c in range(len(h))) + b2[r])
                     for r in range(len(W2))])


def log_mu(params, d, i, j):
    blocks = params.blocks()
    yi = forward(params.specs[d.views[i]].kind, _view(params, blocks, d.views[i]), d.x(i))
    yj = forward(params.specs[d.views[j]].kind, _view(params, blocks, d.views[j]), d.x(j))
    return float(sum(a * b for a, b in zip(yi, yj))) - params.gamma(d.views[i], d.views[j])


def _view(params, blocks, v):
    return {name: blocks[f"enc{v}.{name}"] for name, _ in params.specs[v].block_shapes()}


def embs_sum(params, d, beta, pairs=None):
    if pairs is None:
        pairs = [(i, j) for i in range(d.n) for j in range(i + 1, d.n)]
    w = {(int(a), int(b)): int(c) for (a, b), c in zip(d.pairs, d.weights)}
    terms = []
    for i, j in pairs:
        m = math.exp(log_mu(params, d, i, j))
        wij = w.get((min(i, j), max(i, j)), 0)
        terms.append(-wij * (m ** beta - 1) / beta + m ** (1 + beta) / (1 + beta))
    return math.fsum(terms)


def nll_sum(params, d, pairs=None):
    if pairs is None:
        pairs = [(i, j) for i in range(d.n) for j in range(i + 1, d.n)]
    w = {(int(a), int(b)): int(c) for (a, b), c in zip(d.pairs, d.weights)}
    terms = []
    for i, j in pairs:
        s = log_mu(params, d, i, j)
        terms.append(-w.get((min(i, j), max(i, j)), 0) * s + math.exp(s))
    return math.fsum(terms)


def stoch_sum(params, d, positive, contrast, beta, lam):
    w = {(int(a), int(b)): int(c) for (a, b), c in zip(d.pairs, d.weights)}
    att = []
    for i, j in positive:
        m = math.exp(log_mu(params, d, i, j))
        att.append(-w[(min(i, j), max(i, j))] * (m ** beta - 1) / beta)
    rep = [lam * math.exp(log_mu(params, d, i, j)) ** (1 + beta) / (1 + beta) for i, j in contrast]
    return math.fsum(att) + math.fsum(rep)


def central_diff(f, theta, h=1e-5):
    theta = np.array(theta, dtype=float)
    g = np.zeros_like(theta)
    for k in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[k] += h
        tm[k] -= h
        g[k] = (f(tp) - f(tm)) / (2 * h)
    return g


def bisect(f, lo, hi, tol=1e-13, max_iter=500):
    flo = f(lo)
    assert flo * f(hi) < 0, "root not bracketed"
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def gamma_equation(inner, w, beta, lam, m1, m2, v):
    """Scalar estimating equation in the offset with the encoder frozen.

    With d log mu / d gamma = -1 the equation reads
    sum_pairs (v m1 w - lam m2 mu) mu^beta = 0, mu = exp(inner - gamma).
    """
    inner = np.asarray(inner, dtype=float)
    w = np.asarray(w, dtype=float)

    def f(gamma):
        terms = []
        for s, wij in zip(inner, w):
            m = math.exp(s - gamma)
            terms.append((v * m1 * wij - lam * m2 * m) * m ** beta)
        return math.fsum(terms)

    return f


def best_two_partition_inertia(Y):
    """Exhaustive minimum within-cluster sum of squares over all 2-partitions."""
    Y = np.asarray(Y, dtype=float)
    n = Y.shape[0]
    best = math.inf
    for mask in range(1, 2 ** (n - 1)):
        a = np.array([(mask >> b) & 1 for b in range(n)], dtype=bool)
        if a.all():
            continue
        tot = 0.0
        for part in (Y[a], Y[~a]):
            tot += float(((part - part.mean(0)) ** 2).sum())
        best = min(best, tot)
    return best


def nmi_from_table(table):
    table = np.asarray(table, dtype=float)
    n = table.sum()
    rows, cols = table.sum(1), table.sum(0)
    mi = 0.0
    for a in range(table.shape[0]):
        for b in range(table.shape[1]):
            if table[a, b] > 0:
                pab = table[a, b] / n
                mi += pab * math.log(pab / (rows[a] / n * cols[b] / n))
    h = lambda c: -sum(x / n * math.log(x / n) for x in c if x > 0)
    return mi / ((h(rows) + h(cols)) / 2)


def rel_err(analytic, numeric):
    """Largest per-coordinate relative error with a small absolute floor.

    Coordinates whose true value is essentially zero would otherwise turn
    finite-difference round-off (about 1e-11 at h=1e-5) into a large ratio.
    """
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    floor = 1e-3 * max(1.0, float(np.max(np.abs(n), initial=0.0)))
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor),
                        initial=0.0))
