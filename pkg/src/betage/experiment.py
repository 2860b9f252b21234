"""Synthetic purity experiment: generate, fit, cluster, aggregate.

Seeds are split from one base seed with :class:`numpy.random.SeedSequence`:
run ``r`` of noise level index ``x`` uses ``SeedSequence(base_seed,
spawn_key=(x, r))``, whose first three generated words seed the data
generator, the parameter initialisation and k-means.  Every beta in the same
``(x, r)`` therefore sees the same graph and the same starting point, so the
comparison across beta is paired.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BetaGEError, ValidationError
from .optimizer import default_lambda, estimating_residual, train_fullbatch
from .evaluation import evaluate
from .similarity import EncoderSpec
from .synthetic import SyntheticConfig, generate

log = logging.getLogger(__name__)

RUN_FIELDS = ["xi", "beta", "run", "seed", "purity", "nmi", "loss_final", "residual"]
SUMMARY_FIELDS = ["xi", "beta", "runs", "failures", "purity_mean", "purity_se", "purity_sd",
                  "nmi_mean", "nmi_se"]


@dataclass(frozen=True)
class ExperimentConfig:
    xi_list: tuple = (0.01, 0.02, 0.03)
    beta_list: tuple = (0.0, 0.1, 0.5, 1.0)
    repeats: int = 10
    base_seed: int = 0
    dim: int = 2
    encoder: str = "linear"
    hidden: int | None = None
    ridge: float = 1.0
    max_iters: int = 2000
    tol: float = 1e-5
    restarts: int = 10
    synthetic: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.repeats < 2:
            raise ValidationError("repeats must be at least 2")


def run_seeds(base_seed, xi_index, run):
    words = np.random.SeedSequence(base_seed, spawn_key=(xi_index, run)).generate_state(3)
    return tuple(int(w) for w in words)


def run_one(cfg, xi_index, beta, run):
    """One generate -> fit -> evaluate run; returns a CSV row dict."""
    xi = cfg.xi_list[xi_index]
    data_seed, init_seed, km_seed = run_seeds(cfg.base_seed, xi_index, run)
    row = {"xi": xi, "beta": beta, "run": run, "seed": data_seed}
    try:
        syn = SyntheticConfig(**{**cfg.synthetic, "xi": xi, "seed": data_seed})
        d, labels = generate(syn)
        spec = EncoderSpec(cfg.encoder, syn.p, cfg.dim, cfg.hidden)
        fit = train_fullbatch(d, spec, beta, ridge=cfg.ridge, max_iters=cfg.max_iters,
                              tol=cfg.tol, seed=init_seed)
        ev = evaluate(fit.params, d, labels, syn.clusters, seed=km_seed, restarts=cfg.restarts)
        lam = default_lambda(d, 1, 1)
        row.update(purity=ev.purity, nmi=ev.nmi, loss_final=fit.losses[-1],
                   residual=estimating_residual(fit.params, d, beta, lam, 1, 1))
    except BetaGEError as exc:
        log.error("run xi=%g beta=%g run=%d failed: %s", xi, beta, run, exc)
        row.update(purity=None, nmi=None, loss_final=None, residual=None, error=str(exc))
    return row


def _task(args):
    return run_one(*args)


def run_experiment(cfg, workers=1):
    """All runs, sorted by (xi, beta, run), plus the per-cell summary."""
    tasks = [(cfg, x, b, r) for x in range(len(cfg.xi_list)) for b in cfg.beta_list
             for r in range(cfg.repeats)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_task, tasks))
    else:
        rows = [_task(t) for t in tasks]
    rows.sort(key=lambda r: (r["xi"], r["beta"], r["run"]))
    return rows, summarize(rows, cfg)


def _mean_se_sd(vals):
    if not vals:
        return None, None, None
    a = np.asarray(vals, dtype=float)
    sd = float(a.std(ddof=1)) if a.size > 1 else float("nan")
    return float(a.mean()), sd / math.sqrt(a.size), sd


def summarize(rows, cfg):
    cells = []
    for xi in cfg.xi_list:
        for beta in cfg.beta_list:
            sel = [r for r in rows if r["xi"] == xi and r["beta"] == beta]
            ok = [r for r in sel if r.get("purity") is not None]
            pm, pse, psd = _mean_se_sd([r["purity"] for r in ok])
            nm, nse, _ = _mean_se_sd([r["nmi"] for r in ok])
            cells.append({"xi": xi, "beta": beta, "runs": len(ok), "failures": len(sel) - len(ok),
                          "purity_mean": pm, "purity_se": pse, "purity_sd": psd,
                          "nmi_mean": nm, "nmi_se": nse})
    return cells


def cell(summary, xi, beta):
    for c in summary:
        if c["xi"] == xi and c["beta"] == beta:
            return c
    raise KeyError((xi, beta))


def rows_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=RUN_FIELDS, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("FAILED" if r.get(k) is None and k not in ("xi", "beta", "run", "seed")
                        else r[k]) for k in RUN_FIELDS})
    return buf.getvalue()


def summary_csv(summary):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
    w.writeheader()
    w.writerows(summary)
    return buf.getvalue()


def table_text(summary, cfg):
    """Mean +- standard error of purity, one row per beta, one column per xi."""
    head = "beta".ljust(12) + "".join(f"xi={xi:<12g}" for xi in cfg.xi_list)
    lines = [head]
    for beta in cfg.beta_list:
        label = "likelihood" if beta == 0 else f"{beta:g}"
        parts = []
        for xi in cfg.xi_list:
            c = cell(summary, xi, beta)
            parts.append("failed".ljust(15) if c["purity_mean"] is None
                         else f"{c['purity_mean']:.3f}+-{c['purity_se']:.3f}".ljust(15))
        lines.append(label.ljust(12) + "".join(parts))
    return "\n".join(lines) + "\n"


def config_dict(cfg):
    out = asdict(cfg)
    out["xi_list"] = list(cfg.xi_list)
    out["beta_list"] = list(cfg.beta_list)
    return out


def results_json(rows, summary, cfg):
    return json.dumps({"config": config_dict(cfg), "summary": summary, "runs": rows},
                      indent=1, sort_keys=True) + "\n"
