"""Command-line interface.

Subcommands: ``generate``, ``train``, ``eval``, ``experiment``,
``gradcheck`` and ``theorems``.  Every option can also come from a JSON
config file (``--config``) whose keys are the option names with dashes or
underscores; explicit flags override the file and unknown keys are rejected.

Exit codes: 0 success, 1 unexpected error, 2 invalid input or usage,
3 numerical failure, 4 file I/O failure, 5 experiment with failed runs,
6 self-check failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checks import gradcheck, theorems
from .errors import BetaGEError, NumericError, ValidationError
from .evaluation import embed_all, evaluate
from .experiment import (
    ExperimentConfig,
    results_json,
    rows_csv,
    run_experiment,
    summary_csv,
    table_text,
)
from .graph_data import load_dataset, save_dataset
from .optimizer import (
    SGDConfig,
    default_lambda,
    estimating_residual,
    objective,
    train_fullbatch,
    train_sgd,
)
from .similarity import EncoderSpec, load_checkpoint, save_checkpoint
from .synthetic import SyntheticConfig, generate

log = logging.getLogger("betage")

EXIT_OK, EXIT_ERROR, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4
EXIT_EXPERIMENT, EXIT_CHECK = 5, 6

# Defaults per subcommand; also the set of keys a config file may use.
DEFAULTS = {
    "generate": dict(n=200, p=20, latent_dim=5, clusters=4, within_prob=0.05, xi=0.0,
                     target_mean_norm=4.0, seed=0, out="data"),
    "train": dict(features=None, edges=None, views=None, beta=0.5, lam=None, m1=None, m2=None,
                  delta0=0.05, alpha=0.6, iters=None, radius=100.0, ridge=1e-4,
                  encoder="linear", hidden=None, dim=2, optimizer="fullbatch", tol=1e-6,
                  eval_every=100, seed=0, out="model"),
    "eval": dict(checkpoint=None, features=None, edges=None, views=None, labels=None, k=None,
                 seed=0, restarts=10, max_iters=300, embeddings=None, out=None),
    "experiment": dict(xi_list=[0.01, 0.02, 0.03], beta_list=[0.0, 0.1, 0.5, 1.0], repeats=10,
                       base_seed=0, dim=2, encoder="linear", hidden=None, ridge=1.0,
                       iters=2000, tol=1e-5, restarts=10, workers=1, out="experiment"),
    "gradcheck": dict(seed=0, draws=20, betas=[1e-6], inject_sign_bug=False, out=None),
    "theorems": dict(seed=0, scenarios=100, out=None),
}

REQUIRED = {
    "train": ("features", "edges"),
    "eval": ("checkpoint", "features", "labels"),
}


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser():
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(
        prog="betage", description=__doc__.split("\n")[0],
        epilog=__doc__[__doc__.index("Exit codes"):].replace("\n", " ").strip())
    parser.add_argument("--version", action="version", version=f"betage {__version__}")
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, argument_default=S)
        p.add_argument("--config", help="JSON file with option values")
        return p

    g = command("generate", "write a synthetic four-cluster dataset")
    g.add_argument("--n", type=int)
    g.add_argument("--p", type=int)
    g.add_argument("--latent-dim", type=int)
    g.add_argument("--clusters", type=int)
    g.add_argument("--within-prob", type=float)
    g.add_argument("--xi", type=float, help="cross-cluster link probability")
    g.add_argument("--target-mean-norm", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output directory")

    t = command("train", "fit an embedding model")
    t.add_argument("--features")
    t.add_argument("--edges")
    t.add_argument("--views")
    t.add_argument("--beta", type=float, help="0 selects the likelihood loss")
    t.add_argument("--lambda", dest="lam", type=float,
                   help="contrast weight for SGD (default v*m1/m2)")
    t.add_argument("--m1", type=int, help="positive pairs per SGD batch (default 10)")
    t.add_argument("--m2", type=int, help="contrast pairs per SGD batch (default 100)")
    t.add_argument("--delta0", type=float)
    t.add_argument("--alpha", type=float, help="step-size decay exponent")
    t.add_argument("--iters", type=int, help="SGD steps or max descent iterations")
    t.add_argument("--radius", type=float)
    t.add_argument("--ridge", type=float)
    t.add_argument("--encoder", choices=["linear", "mlp1"])
    t.add_argument("--hidden", type=int)
    t.add_argument("--dim", type=int)
    t.add_argument("--optimizer", choices=["sgd", "fullbatch"])
    t.add_argument("--tol", type=float, help="gradient-norm tolerance (fullbatch)")
    t.add_argument("--eval-every", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output directory")

    e = command("eval", "cluster embeddings and score them against labels")
    e.add_argument("--checkpoint")
    e.add_argument("--features")
    e.add_argument("--edges")
    e.add_argument("--views")
    e.add_argument("--labels")
    e.add_argument("--k", type=int, help="number of clusters (default: distinct labels)")
    e.add_argument("--seed", type=int)
    e.add_argument("--restarts", type=int)
    e.add_argument("--max-iters", type=int)
    e.add_argument("--embeddings", help="also write embeddings and labels as TSV")
    e.add_argument("--out", help="metrics JSON path (default: stdout)")

    x = command("experiment", "purity table over noise levels and beta")
    x.add_argument("--xi-list", type=_floats)
    x.add_argument("--beta-list", type=_floats)
    x.add_argument("--repeats", type=int)
    x.add_argument("--base-seed", "--seed", dest="base_seed", type=int)
    x.add_argument("--dim", type=int)
    x.add_argument("--encoder", choices=["linear", "mlp1"])
    x.add_argument("--hidden", type=int)
    x.add_argument("--ridge", type=float)
    x.add_argument("--iters", type=int)
    x.add_argument("--tol", type=float)
    x.add_argument("--restarts", type=int)
    x.add_argument("--workers", type=int)
    x.add_argument("--out", help="output directory")

    c = command("gradcheck", "finite-difference check of all loss gradients")
    c.add_argument("--seed", type=int)
    c.add_argument("--draws", type=int)
    c.add_argument("--betas", type=_floats, help="betas for the likelihood-limit check")
    c.add_argument("--inject-sign-bug", action="store_true", help=S)
    c.add_argument("--out")

    h = command("theorems", "decomposition identity, bias bound, unbiasedness")
    h.add_argument("--seed", type=int)
    h.add_argument("--scenarios", type=int)
    h.add_argument("--out")
    return parser


def _option_actions(parser, command):
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return {a.dest: a for a in sub.choices[command]._actions}


def _coerce(key, value, action):
    """Type-check one config-file value the way the matching flag would."""
    if value is None or action is None:
        return value
    if isinstance(action, argparse._StoreTrueAction):
        if not isinstance(value, bool):
            raise ValidationError(f"config key {key!r} must be true or false")
        return value
    if action.type is _floats:
        items = value if isinstance(value, list) else [value]
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in items):
            raise ValidationError(f"config key {key!r} must be a list of numbers")
        return [float(v) for v in items]
    if action.type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(f"config key {key!r} must be an integer")
    elif action.type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"config key {key!r} must be a number")
        value = float(value)
    elif not isinstance(value, str):
        raise ValidationError(f"config key {key!r} must be a string")
    if action.choices is not None and value not in action.choices:
        raise ValidationError(f"config key {key!r} must be one of {sorted(action.choices)}")
    return value


def resolve_options(command, ns, parser=None):
    """Merge defaults, config file and explicit flags (in that order)."""
    actions = _option_actions(parser or build_parser(), command)
    opts = dict(DEFAULTS[command])
    given = {k: v for k, v in vars(ns).items() if k not in ("command", "log_level", "config")}
    config_path = getattr(ns, "config", None)
    if config_path is not None:
        try:
            doc = json.loads(Path(config_path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{config_path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ValidationError(f"{config_path}: expected a JSON object")
        for key, value in doc.items():
            name = key.replace("-", "_")
            if name == "lambda":
                name = "lam"
            if name not in opts:
                raise ValidationError(f"{config_path}: unknown key {key!r} for {command}")
            opts[name] = _coerce(key, value, actions.get(name))
    opts.update(given)
    for key in REQUIRED.get(command, ()):
        if opts.get(key) is None:
            raise ValidationError(f"--{key} is required")
    return opts


def _write_json(path, obj):
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _outdir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(o):
    cfg = SyntheticConfig(n=o["n"], p=o["p"], latent_dim=o["latent_dim"], clusters=o["clusters"],
                          within_prob=o["within_prob"], xi=o["xi"],
                          target_mean_norm=o["target_mean_norm"], seed=o["seed"])
    d, labels = generate(cfg)
    out = _outdir(o["out"])
    save_dataset(d, out / "features.tsv", out / "edges.tsv")
    (out / "labels.tsv").write_text("".join(f"{k + 1}\n" for k in labels))
    manifest = {"command": "generate", "version": __version__, "config": cfg.to_dict(),
                "files": ["features.tsv", "edges.tsv", "labels.tsv"],
                "positive_pairs": d.num_positive}
    _write_json(out / "manifest.json", manifest)
    return EXIT_OK


def _spec(o, input_dim):
    return EncoderSpec(o["encoder"], input_dim, o["dim"],
                       o["hidden"] if o["encoder"] == "mlp1" else None)


def cmd_train(o):
    d = load_dataset(o["features"], o["edges"], o["views"])
    specs = tuple(_spec(o, p) for p in d.dims)
    beta = o["beta"]
    out = _outdir(o["out"])
    metrics = {"optimizer": o["optimizer"], "beta": beta, "ridge": o["ridge"], "seed": o["seed"],
               "n": d.n, "positive_pairs": d.num_positive, "load_stats": d.load_stats}
    if o["optimizer"] == "sgd":
        m1 = o["m1"] if o["m1"] is not None else min(10, d.num_positive)
        m2 = o["m2"] if o["m2"] is not None else min(100, d.num_pairs)
        cfg = SGDConfig(beta=beta, m1=m1, m2=m2, T=o["iters"] if o["iters"] is not None else 5000,
                        lam=o["lam"], delta0=o["delta0"], alpha_exp=o["alpha"],
                        radius=o["radius"], seed=o["seed"], eval_every=o["eval_every"],
                        full_eval=True, ridge=o["ridge"])
        traj = train_sgd(d, specs, cfg)
        params = traj.params
        (out / "trajectory.jsonl").write_text(traj.to_jsonl())
        metrics.update(m1=m1, m2=m2, iterations=cfg.T, proj_hits=traj.proj_hits,
                       lam=cfg.lam if cfg.lam is not None else default_lambda(d, m1, m2))
    else:
        fit = train_fullbatch(d, specs, beta, ridge=o["ridge"],
                              max_iters=o["iters"] if o["iters"] is not None else 1000,
                              tol=o["tol"], seed=o["seed"])
        params = fit.params
        (out / "trajectory.jsonl").write_text(
            "".join(json.dumps({"t": t, "loss": v}) + "\n" for t, v in enumerate(fit.losses)))
        metrics.update(iterations=fit.iterations, converged=fit.converged,
                       objective_grad_norm=fit.grad_norm, tol=o["tol"])
    rep = objective(params, d, beta)
    final = objective(params, d, beta, o["ridge"])
    v = d.num_pairs / d.num_positive if d.num_positive else None
    residual = estimating_residual(params, d, beta, v, 1, 1) if v else None
    metrics.update(
        loss=rep.value, loss_per_pair=rep.value / max(d.num_pairs, 1),
        loss_name="embs" if beta > 0 else "nll", objective=final.value,
        grad_norm=float(np.linalg.norm(rep.grad)), clamp_events=rep.clamp_events,
        estimating_residual=residual, residual_m1=1, residual_m2=1, residual_lambda=v,
        v=v, residual_over_v_m1=residual / v if v else None)
    save_checkpoint(params, out / "checkpoint.json",
                    extra={"beta": beta, "optimizer": o["optimizer"], "seed": o["seed"]})
    _write_json(out / "metrics.json", metrics)
    return EXIT_OK


def _read_labels(path):
    labels = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if line:
                try:
                    labels.append(int(line))
                except ValueError:
                    raise ValidationError(f"{path}:{lineno}: label must be an integer") from None
    return np.array(labels, dtype=np.int64)


def cmd_eval(o):
    params = load_checkpoint(o["checkpoint"])
    d = load_dataset(o["features"], o["edges"], o["views"])
    labels = _read_labels(o["labels"])
    if labels.size != d.n:
        raise ValidationError(f"{o['labels']}: {labels.size} labels for {d.n} nodes")
    k = o["k"] if o["k"] is not None else int(np.unique(labels).size)
    ev = evaluate(params, d, labels, k, seed=o["seed"], restarts=o["restarts"],
                  max_iters=o["max_iters"])
    if o["embeddings"] is not None:
        Y = embed_all(params, d)
        with open(o["embeddings"], "w") as fh:
            fh.write("\t".join([f"y{c + 1}" for c in range(Y.shape[1])] + ["label", "cluster"]) + "\n")
            for row, lab, a in zip(Y, labels, ev.assignments):
                fh.write("\t".join(f"{v:.17g}" for v in row) + f"\t{lab}\t{a + 1}\n")
    _write_json(o["out"], ev.to_dict(k=k, seed=o["seed"]))
    return EXIT_OK


def cmd_experiment(o):
    cfg = ExperimentConfig(xi_list=tuple(o["xi_list"]), beta_list=tuple(o["beta_list"]),
                           repeats=o["repeats"], base_seed=o["base_seed"], dim=o["dim"],
                           encoder=o["encoder"], hidden=o["hidden"], ridge=o["ridge"],
                           max_iters=o["iters"], tol=o["tol"], restarts=o["restarts"])
    rows, summary = run_experiment(cfg, workers=o["workers"])
    out = _outdir(o["out"])
    (out / "runs.csv").write_text(rows_csv(rows))
    (out / "summary.csv").write_text(summary_csv(summary))
    (out / "table.txt").write_text(table_text(summary, cfg))
    (out / "results.json").write_text(results_json(rows, summary, cfg))
    sys.stdout.write(table_text(summary, cfg))
    failed = sum(c["failures"] for c in summary)
    if failed:
        log.error("%d run(s) failed; see runs.csv", failed)
        return EXIT_EXPERIMENT
    return EXIT_OK


def _report(o, report):
    _write_json(o["out"], report)
    return EXIT_OK if report["passed"] else EXIT_CHECK


def cmd_gradcheck(o):
    return _report(o, gradcheck(seed=o["seed"], draws=o["draws"], betas=tuple(o["betas"]),
                                inject_sign_bug=bool(o["inject_sign_bug"])))


def cmd_theorems(o):
    return _report(o, theorems(seed=o["seed"], scenarios=o["scenarios"]))


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "experiment": cmd_experiment,
    "gradcheck": cmd_gradcheck,
    "theorems": cmd_theorems,
}


def main(argv=None):
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=ns.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve_options(ns.command, ns, parser)
        return COMMANDS[ns.command](opts)
    except ValidationError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except NumericError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        return EXIT_IO
    except BetaGEError as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
