"""Self-check suites: finite-difference gradients and theorem diagnostics.

Both suites return plain dicts (JSON-ready) with an overall ``passed`` flag.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import NumericError
from .graph_data import Dataset, sample_batch
from .optimizer import estimating_equation, expected_stoch_grad, stoch_loss
from .scores import NoiseScenario, embs_loss, nll_loss, theorem1_decomposition
from .similarity import EncoderSpec, init_params

GRAD_TOL = 1e-5
LIMIT_TOL = 1e-4
FD_STEP = 1e-5

ENCODERS = {
    "linear": EncoderSpec("linear", 3, 2),
    "mlp1": EncoderSpec("mlp1", 3, 2, hidden_dim=4),
}


def relative_error(analytic, numeric):
    """Max over coordinates of ``|a - n| / max(|a|, |n|, floor)``.

    ``floor = 1e-3 * max(1, max|n|)`` keeps coordinates whose true value is
    zero from turning finite-difference round-off into a large ratio.
    """
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    floor = 1e-3 * max(1.0, float(np.max(np.abs(n), initial=0.0)))
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / den, initial=0.0))


def central_difference(f, theta, h=FD_STEP):
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for k in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[k] += h
        down[k] -= h
        g[k] = (f(up) - f(down)) / (2.0 * h)
    return g


def random_instance(rng, spec, n=5):
    """Small random graph plus random parameters (offset included)."""
    X = rng.normal(size=(n, spec.input_dim))
    pairs, weights = [], []
    for i in range(n):
        for j in range(i + 1, n):
            w = int(rng.integers(0, 3))
            if w:
                pairs.append((i, j))
                weights.append(w)
    if not pairs:
        pairs, weights = [(0, 1)], [1]
    d = Dataset.build(X, pairs, weights)
    params = init_params(spec, rng)
    theta = params.theta.copy()
    theta[params.layout.gamma_positions] = rng.normal(size=params.layout.gamma_positions.size)
    return d, params.with_theta(theta)


def gradcheck(seed=0, draws=20, betas=(1e-6,), inject_sign_bug=False):
    """Compare analytic gradients of every loss with central differences.

    ``inject_sign_bug`` negates the analytic gradient; it exists so callers
    can confirm the check actually fails on a wrong gradient.
    """
    rng = np.random.default_rng(seed)
    results = []
    for kind, spec in ENCODERS.items():
        worst = {"embs_loss": 0.0, "nll_loss": 0.0, "stoch_loss": 0.0}
        for _ in range(draws):
            d, p = random_instance(rng, spec)
            beta = float(rng.uniform(0.1, 2.0))
            lam = float(rng.uniform(0.2, 3.0))
            m1 = int(rng.integers(1, d.num_positive + 1))
            batch = sample_batch(d, m1, int(rng.integers(1, d.num_pairs + 1)), rng)
            losses = {
                "embs_loss": lambda q: embs_loss(q, d, beta),
                "nll_loss": lambda q: nll_loss(q, d),
                "stoch_loss": lambda q: stoch_loss(q, d, batch, beta, lam),
            }
            for name, fn in losses.items():
                g = fn(p).grad
                if inject_sign_bug:
                    g = -g
                num = central_difference(lambda t: fn(p.with_theta(t)).value, p.theta)
                worst[name] = max(worst[name], relative_error(g, num))
        for name, err in worst.items():
            results.append({"loss": name, "encoder": kind, "draws": draws,
                            "max_rel_error": err, "passed": err < GRAD_TOL})
    limits = []
    for beta in betas:
        gap = 0.0
        for _ in range(10):
            d, p = random_instance(rng, ENCODERS["mlp1"], n=4)
            nll = nll_loss(p, d).value
            gap = max(gap, abs(embs_loss(p, d, beta).value - nll) / (1.0 + abs(nll)))
        limits.append({"beta": beta, "max_scaled_gap": gap, "threshold": LIMIT_TOL,
                       "passed": gap <= LIMIT_TOL})
    passed = all(r["passed"] for r in results) and all(r["passed"] for r in limits)
    return {"seed": seed, "tolerance": GRAD_TOL, "fd_step": FD_STEP, "gradients": results,
            "beta_limit": limits, "passed": passed}


def random_scenario(rng, inside):
    """Random finite noise scenario with per-atom model means.

    With ``inside`` the contamination level ``epsilon`` is set above
    ``sum nu eta mu^beta0`` so the bias bound applies.
    """
    m = int(rng.integers(1, 12))
    beta0 = float(rng.uniform(0.1, 3.0))
    beta = float(rng.uniform(0.01, 1.0)) * beta0
    nu = rng.dirichlet(np.ones(m))
    mu_star = rng.exponential(size=m)
    eta = rng.exponential(size=m) * (rng.random(m) < 0.7)
    model = 2.0 * rng.exponential(size=m)
    level = float(np.sum(nu * eta * model ** beta0))
    if inside:
        eps = level * (1.0 + float(rng.uniform(0.01, 3.0))) + 1e-300
    else:
        eps = float(rng.uniform(1e-3, 2.0))
    return NoiseScenario(nu, mu_star, eta, beta, beta0, eps), model


def theorems(seed=0, scenarios=100):
    """Decomposition identity, bias bound and minibatch unbiasedness."""
    rng = np.random.default_rng(seed)
    identity_pass = 0
    identity_worst = 0.0
    for _ in range(scenarios):
        s, model = random_scenario(rng, inside=bool(rng.random() < 0.5))
        try:
            r = theorem1_decomposition(s, model)
            identity_pass += 1
            identity_worst = max(identity_worst, r.identity_error)
        except NumericError as exc:
            identity_worst = max(identity_worst, exc.diagnostics.get("error", np.inf))
    bound_pass = 0
    for _ in range(scenarios):
        s, model = random_scenario(rng, inside=True)
        try:
            r = theorem1_decomposition(s, model)
            bound_pass += bool(r.bound_holds)
        except NumericError:
            pass
    clean = NoiseScenario([0.25] * 4, [1.0, 0.5, 2.0, 0.1], [0.0] * 4, 0.5, 1.0, 0.1)
    r0 = theorem1_decomposition(clean, np.array([0.9, 0.4, 2.2, 0.3]))

    # exhaustive batch enumeration on a four-node graph
    spec = EncoderSpec("mlp1", 3, 2, hidden_dim=3)
    d = Dataset.build(rng.normal(size=(4, 3)), [(0, 1), (1, 2), (0, 3)], [1, 2, 1])
    p = init_params(spec, rng)
    beta, lam, m1, m2 = 0.5, 0.8, 1, 2
    mean = expected_stoch_grad(p, d, beta, lam, m1, m2)
    closed = estimating_equation(p, d, beta, lam, m1, m2) / d.num_pairs
    scale = max(1.0, float(np.max(np.abs(closed))))
    unbiased = float(np.max(np.abs(mean - closed))) / scale
    v = d.num_pairs / d.num_positive
    ee = estimating_equation(p, d, beta, v * m1 / m2, m1, m2)
    full = v * m1 * embs_loss(p, d, beta).grad
    factor = float(np.max(np.abs(ee - full))) / max(1.0, float(np.max(np.abs(full))))
    report = {
        "seed": seed,
        "identity": {"scenarios": scenarios, "passed": identity_pass,
                     "max_relative_error": identity_worst},
        "bound": {"scenarios": scenarios, "passed": bound_pass},
        "no_noise": {"alpha": r0.alpha, "M": r0.M, "u_g_minus_u_star": r0.u_g - r0.u_star},
        "unbiasedness": {
            "batches_enumerated": math.comb(d.num_positive, m1) * math.comb(d.num_pairs, m2),
            "max_scaled_error": unbiased,
            "factorization_error": factor,
        },
    }
    report["passed"] = (identity_pass == scenarios and bound_pass == scenarios
                        and unbiased < 1e-10 and factor < 1e-10
                        and r0.alpha == 0 and r0.M == 0)
    return report
