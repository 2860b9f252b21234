"""End-to-end acceptance criteria, each reporting one PASS/FAIL line."""
import itertools
import json
import math

import numpy as np
import pytest

import oracles
from betage.checks import random_instance, theorems
from betage.cli import main
from betage.evaluation import kmeans_fit, nmi, purity
from betage.graph_data import Dataset
from betage.optimizer import (
    SGDConfig,
    default_lambda,
    estimating_equation,
    expected_stoch_grad,
    train_sgd,
)
from betage.scores import embs_loss, nll_loss
from betage.similarity import EncoderSpec, init_params
from betage.synthetic import SyntheticConfig, generate

from conftest import gamma_only_setup, gamma_root


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


@pytest.mark.parametrize("dim", [2, 5])
def test_1_robustness_trend(tmp_path, acceptance, dim):
    out = tmp_path / "exp"
    code = main(["experiment", "--xi-list", "0.01,0.02,0.03", "--beta-list", "0,0.1,0.5,1",
                 "--repeats", "10", "--dim", str(dim), "--seed", "0", "--out", str(out)])
    summary = read_json(out / "results.json")["summary"]
    mean = {(c["xi"], c["beta"]): c["purity_mean"] for c in summary}
    gain05 = mean[(0.03, 0.5)] - mean[(0.03, 0.0)]
    gain1 = mean[(0.03, 1.0)] - mean[(0.03, 0.0)]
    best = max(v for v in mean.values())
    shortfall = best - mean[(0.01, 0.0)]
    ok = code == 0 and gain05 >= 0.02 and gain1 >= 0.02 and shortfall <= 0.06
    acceptance(f"1 robustness trend (K={dim})", ok,
               f"xi=0.03 gains beta=0.5 {gain05:+.3f}, beta=1 {gain1:+.3f} (need >= 0.02); "
               f"xi=0.01 likelihood {mean[(0.01, 0.0)]:.3f} vs best {best:.3f} (need within 0.06)")
    assert ok


def test_2_decomposition_identity_and_bound(acceptance):
    r = theorems(seed=0, scenarios=100)
    idn, bnd = r["identity"], r["bound"]
    ok = (idn["passed"] == 100 and idn["max_relative_error"] <= 1e-10
          and bnd["passed"] == 100)
    acceptance("2 decomposition identity and bias bound", ok,
               f"identity {idn['passed']}/100 (max rel err {idn['max_relative_error']:.2e}), "
               f"bound {bnd['passed']}/100")
    assert ok


def test_3_unbiasedness(acceptance):
    rng = np.random.default_rng(0)
    worst_mean = worst_factor = 0.0
    cases = [(4, "linear", 1, 2), (5, "mlp1", 2, 2), (6, "linear", 1, 2)]
    for n, kind, m1, m2 in cases:
        X = rng.normal(size=(n, 3))
        pairs = [(i, j) for i, j in itertools.combinations(range(n), 2) if rng.random() < 0.4]
        pairs = pairs or [(0, 1)]
        weights = rng.integers(1, 4, size=len(pairs))
        d = Dataset.build(X, pairs, weights)
        assert math.comb(d.num_positive, m1) * math.comb(d.num_pairs, m2) <= 10 ** 6
        spec = EncoderSpec(kind, 3, 2, hidden_dim=3 if kind == "mlp1" else None)
        p = init_params(spec, rng)
        beta, lam = float(rng.uniform(0.2, 1.5)), float(rng.uniform(0.3, 2.0))
        mean = expected_stoch_grad(p, d, beta, lam, m1, m2)
        closed = estimating_equation(p, d, beta, lam, m1, m2) / d.num_pairs
        worst_mean = max(worst_mean, np.max(np.abs(mean - closed))
                         / max(1.0, np.max(np.abs(closed))))
        v = d.num_pairs / d.num_positive
        ee = estimating_equation(p, d, beta, default_lambda(d, m1, m2), m1, m2)
        full = v * m1 * embs_loss(p, d, beta).grad
        worst_factor = max(worst_factor, np.max(np.abs(ee - full))
                           / max(1.0, np.max(np.abs(full))))
    ok = worst_mean <= 1e-10 and worst_factor <= 1e-10
    acceptance("3 minibatch unbiasedness", ok,
               f"enumerated mean vs closed form {worst_mean:.2e}, "
               f"factorisation {worst_factor:.2e} (need <= 1e-10)")
    assert ok


def test_4_sgd_convergence(acceptance):
    beta, m1, m2, T = 0.5, 2, 4, 5000
    d, spec, p, mask = gamma_only_setup(beta)
    root = gamma_root(p, d, beta, default_lambda(d, m1, m2), m1, m2, oracles)
    quarter, final = [], []
    for seed in range(20):
        cfg = SGDConfig(beta=beta, m1=m1, m2=m2, T=T, delta0=0.02, alpha_exp=0.6, seed=seed,
                        eval_every=T // 4)
        tr = train_sgd(d, spec, cfg, init=p, trainable=mask)
        at = {r.t: r.theta[-1] for r in tr.records}
        quarter.append(at[T // 4] - root)
        final.append(at[T] - root)
    ms_q, ms_t = np.mean(np.square(quarter)), np.mean(np.square(final))
    close = int(np.sum(np.abs(final) < 1e-2))
    ok = ms_t < ms_q and close >= 18
    acceptance("4 SGD convergence (gamma only)", ok,
               f"mean sq err T/4 {ms_q:.2e} -> T {ms_t:.2e}; {close}/20 seeds within 1e-2")
    assert ok


def test_5_gradients(tmp_path, acceptance):
    code = main(["gradcheck", "--seed", "0", "--draws", "20", "--out", str(tmp_path / "g.json")])
    r = read_json(tmp_path / "g.json")
    worst = max(g["max_rel_error"] for g in r["gradients"])
    covered = {(g["loss"], g["encoder"]) for g in r["gradients"]}
    ok = (code == 0 and worst < 1e-5 and len(covered) == 6
          and all(g["draws"] == 20 for g in r["gradients"]))
    acceptance("5 gradient correctness", ok,
               f"max relative error {worst:.2e} over {len(covered)} loss/encoder pairs "
               f"(need < 1e-5)")
    assert ok


def test_6_beta_limit(acceptance):
    rng = np.random.default_rng(6)
    worst = 0.0
    for k in range(10):
        spec = EncoderSpec("linear", 3, 2) if k % 2 else EncoderSpec("mlp1", 3, 2, hidden_dim=4)
        d, p = random_instance(rng, spec, n=int(rng.integers(4, 7)))
        nll = nll_loss(p, d).value
        worst = max(worst, abs(embs_loss(p, d, 1e-6).value - nll) / (1 + abs(nll)))
    ok = worst <= 1e-4
    acceptance("6 beta -> 0 limit", ok, f"max scaled gap {worst:.2e} (need <= 1e-4)")
    assert ok


def test_7_law_of_large_numbers(acceptance):
    spec = EncoderSpec("linear", 20, 2)
    p = init_params(spec, np.random.default_rng(7))
    theta = 0.25 * p.theta
    theta[p.layout.gamma_positions] = 3.0
    p = p.with_theta(theta)
    sds = []
    for n in (50, 100, 200, 400):
        vals = []
        for rep in range(30):
            d, _ = generate(SyntheticConfig(n=n, clusters=2, xi=0.02, seed=1000 * n + rep))
            vals.append(embs_loss(p, d, 0.5).value / d.num_pairs)
        sds.append(float(np.std(vals, ddof=1)))
    drops = sum(b < a for a, b in zip(sds, sds[1:]))
    ok = drops >= 2
    acceptance("7 LLN trend", ok,
               "sd " + ", ".join(f"{s:.2e}" for s in sds) + f"; {drops}/3 decreases (need >= 2)")
    assert ok


def test_8_metrics(acceptance):
    errs = [abs(purity(list("AAABBB"), [1, 1, 2, 2, 2, 3]) - 2 / 3),
            abs(purity(np.zeros(200), np.repeat(np.arange(4), 50)) - 0.25),
            abs(nmi([0, 0, 0, 1, 1, 1], [0, 0, 1, 0, 1, 1]) - oracles.nmi_from_table([[2, 1], [1, 2]]))]
    rng = np.random.default_rng(8)
    for _ in range(5):
        table = rng.integers(0, 6, size=(3, 4))
        table[0, 0] += 1
        pred = np.repeat(np.arange(3), table.sum(1))
        truth = np.concatenate([np.repeat(np.arange(4), row) for row in table])
        errs.append(abs(nmi(pred, truth) - oracles.nmi_from_table(table)))
    excess = 0.0
    for seed in range(5):
        n = int(rng.integers(8, 21))
        Y = rng.normal(size=(n, 2)) + np.outer(rng.random(n) < 0.5, [2.0, 0.0])
        best = oracles.best_two_partition_inertia(Y)
        excess = max(excess, kmeans_fit(Y, 2, seed=seed).inertia / best - 1)
    ok = max(errs) <= 1e-12 and excess <= 1e-12
    acceptance("8 evaluation metrics", ok,
               f"max metric error {max(errs):.1e}; k-means excess over exhaustive optimum "
               f"{excess:.1e}")
    assert ok


def test_9_determinism(tmp_path, acceptance):
    runs = {
        "generate": (["generate", "--seed", "9", "--xi", "0.02"],
                     ["features.tsv", "edges.tsv", "labels.tsv", "manifest.json"]),
        "train sgd": (["train", "--optimizer", "sgd", "--beta", "0.5", "--iters", "300",
                       "--seed", "9"], ["checkpoint.json", "trajectory.jsonl", "metrics.json"]),
        "train fullbatch": (["train", "--optimizer", "fullbatch", "--beta", "0.5",
                             "--iters", "100", "--seed", "9"],
                            ["checkpoint.json", "trajectory.jsonl", "metrics.json"]),
        "experiment": (["experiment", "--xi-list", "0.01,0.03", "--beta-list", "0,0.5",
                        "--repeats", "2", "--iters", "100", "--seed", "9"],
                       ["runs.csv", "summary.csv", "table.txt", "results.json"]),
    }
    main(["generate", "--seed", "3", "--xi", "0.02", "--out", str(tmp_path / "data")])
    data = ["--features", str(tmp_path / "data" / "features.tsv"),
            "--edges", str(tmp_path / "data" / "edges.tsv")]
    same = {}
    for name, (args, files) in runs.items():
        extra = data if name.startswith("train") else []
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / f"{name.replace(' ', '_')}_{rep}"
            assert main(args + extra + ["--out", str(out)]) == 0
            outs.append(out)
        same[name] = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
                         for f in files)
    ok = all(same.values())
    acceptance("9 determinism", ok,
               ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in same.items()))
    assert ok
