"""Command-line entry point: audit, sweep, ceiling, snr, convert.

Exit codes: 0 success, 2 configuration error, 3 runtime error (including an
exceeded trial-failure budget).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adversaries import AdversarySpec, RemoteJudgeConfig, TrialError
from .core import AuditConfig, Corpus, EmbeddingTable
from .engine import AuditError, default_workers, run_audit, run_sweep
from .estimation import DEFAULT_ALPHA, ceiling
from .io import load_corpus, load_embeddings, synthetic_embeddings, write_result, write_sweep
from .mechanisms import (
    GrrParams,
    MechanismSpec,
    TokenEmParams,
    VectorNoiseParams,
    expected_noise_norm,
    sentence_budget,
    snr,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

ALPHA_HELP = (
    "one-sided Clopper-Pearson confidence level (default: %(default)s). The value 0.005 "
    "is the only one for which the all-success bound alpha^(1/T) at T=10000, k=2, delta=0 "
    "gives the published finite-sample ceiling of about 7.54; it is configurable.")

ATTACKS = {
    "embedding": "embedding_nn",
    "surface": "surface_overlap",
    "judge": "remote_judge",
    "internal": "internal_embedding",
    "value_map": "value_map",
}
NEEDS_EPSILON = ("grr", "token_em", "vector_noise")

# Flags that may also come from --config; the file uses the same names with
# dashes turned into underscores.
AUDIT_KEYS = ("mechanism", "epsilon", "dataset", "format", "embeddings", "dim", "k", "trials",
              "lam", "alpha", "delta", "attack", "seed", "estimator", "g", "clip", "noise",
              "delta_mech", "sensitivity", "pool", "workers", "out", "failure_budget",
              "log_cap", "judge_url", "judge_model", "judge_key_env", "judge_timeout",
              "judge_retries", "judge_concurrency", "epsilons", "convert_sentence",
              "mean_tokens")

DEFAULTS = {
    "format": None, "dim": 16, "k": 2, "trials": 10_000, "lam": -10_000.0,
    "alpha": DEFAULT_ALPHA, "delta": 0.0, "attack": "embedding", "seed": 42,
    "estimator": "efficient", "clip": 1.0, "noise": "laplace_vector", "delta_mech": 0.0,
    "workers": None, "log_cap": 100_000, "judge_key_env": "JUDGE_API_KEY",
    "judge_timeout": 60.0, "judge_retries": 3, "judge_concurrency": 8,
    "convert_sentence": False,
}


class ConfigError(ValueError):
    pass


def _positive_floats(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not vals or any(not (v > 0 and math.isfinite(v)) for v in vals):
        raise argparse.ArgumentTypeError("values must be finite and > 0")
    return vals


def _add_audit_flags(p: argparse.ArgumentParser, sweep: bool) -> None:
    S = argparse.SUPPRESS  # unset flags stay absent so --config can fill them
    g = p.add_argument_group("mechanism")
    g.add_argument("--mechanism", choices=["grr", "token_em", "vector_noise", "identity",
                                           "constant"], default=S)
    if not sweep:
        g.add_argument("--epsilon", type=float, default=S,
                       help="nominal budget; required for grr, token_em, vector_noise")
    g.add_argument("--g", type=int, default=S, help="GRR domain size (default: 2)")
    g.add_argument("--clip", type=float, default=S, help="vector clip norm (default: 1.0)")
    g.add_argument("--noise", choices=["laplace_vector", "gaussian"], default=S,
                   help="vector noise family (default: laplace_vector)")
    g.add_argument("--delta-mech", type=float, default=S, dest="delta_mech",
                   help="gaussian mechanism delta (default: 0)")
    g.add_argument("--sensitivity", type=float, default=S,
                   help="token_em distance sensitivity (default: largest pool distance)")
    g.add_argument("--pool", type=int, default=S,
                   help="token_em candidate pool size (default: full vocabulary)")

    d = p.add_argument_group("data")
    d.add_argument("--dataset", default=S, help="corpus file")
    d.add_argument("--format", choices=["jsonl", "plain_text"], default=S,
                   help="corpus format (default: from suffix, .jsonl else plain_text)")
    d.add_argument("--embeddings", default=S,
                   help="embedding table (.csv or binary); default: synthetic unit vectors")
    d.add_argument("--dim", type=int, default=S,
                   help="dimension of the synthetic embedding (default: 16)")

    a = p.add_argument_group("audit")
    a.add_argument("--k", type=int, default=S, help="candidate set size (default: 2)")
    a.add_argument("--trials", type=int, default=S, help="trials T (default: 10000)")
    a.add_argument("--lambda", type=float, dest="lam", default=S,
                   help="sampling temperature; <0 diverse, 0 uniform, >0 similar "
                        "(default: -10000, the diverse primary configuration)")
    a.add_argument("--alpha", type=float, default=S,
                   help=ALPHA_HELP.replace("%(default)s", str(DEFAULT_ALPHA)))
    a.add_argument("--delta", type=float, default=S, help="estimator delta (default: 0)")
    a.add_argument("--attack", choices=sorted(ATTACKS), default=S,
                   help="distinguishability attack (default: embedding)")
    a.add_argument("--seed", type=int, default=S, help="base seed (default: 42)")
    a.add_argument("--estimator", choices=["efficient", "symmetric"], default=S,
                   help="efficient (T queries) or symmetric baseline (2T) (default: efficient)")
    a.add_argument("--workers", type=int, default=S,
                   help="worker threads (default: available parallelism)")
    a.add_argument("--failure-budget", type=int, dest="failure_budget", default=S,
                   help="failed trials tolerated (default: 0, or 0.5%% of T for the judge)")
    a.add_argument("--log-cap", type=int, dest="log_cap", default=S,
                   help="trial outcomes kept in memory (default: 100000)")
    a.add_argument("--out", default=S, help="output path")
    a.add_argument("--config", default=S,
                   help="JSON file with the same keys as the flags; flags win")

    j = p.add_argument_group("remote judge")
    j.add_argument("--judge-url", dest="judge_url", default=S,
                   help="base URL of a chat-completion API")
    j.add_argument("--judge-model", dest="judge_model", default=S)
    j.add_argument("--judge-key-env", dest="judge_key_env", default=S,
                   help="environment variable holding the API key (default: JUDGE_API_KEY)")
    j.add_argument("--judge-timeout", dest="judge_timeout", type=float, default=S,
                   help="seconds (default: 60)")
    j.add_argument("--judge-retries", dest="judge_retries", type=int, default=S,
                   help="(default: 3)")
    j.add_argument("--judge-concurrency", dest="judge_concurrency", type=int, default=S,
                   help="max requests in flight (default: 8)")

    if sweep:
        p.add_argument("--epsilons", type=_positive_floats, default=S,
                       help="comma-separated nominal budgets")
        p.add_argument("--convert-sentence", dest="convert_sentence", action="store_true",
                       default=S, help="add an eps_sentence = mean_tokens * eps column")
        p.add_argument("--mean-tokens", dest="mean_tokens", type=float, default=S,
                       help="tokens per sentence for --convert-sentence "
                            "(default: corpus mean)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textdp-audit",
        description="Audit the empirical privacy loss of LDP text mechanisms.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    audit = sub.add_parser("audit", help="run one audit",
                           description="Run one audit and print eps_emp.")
    _add_audit_flags(audit, sweep=False)

    sweep = sub.add_parser("sweep", help="audit a grid of budgets",
                           description="One audit per nominal epsilon; cell i uses seed+i.")
    _add_audit_flags(sweep, sweep=True)

    ceil = sub.add_parser("ceiling", help="largest attainable eps_emp",
                          description="eps_emp when every trial succeeds.")
    ceil.add_argument("--k", type=int, default=2, help="candidate set size (default: 2)")
    ceil.add_argument("--trials", type=int, default=10_000, help="(default: 10000)")
    ceil.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help=ALPHA_HELP)
    ceil.add_argument("--delta", type=float, default=0.0, help="(default: 0)")

    s = sub.add_parser("snr", help="signal-to-noise table of the vector mechanism",
                       description="SNR = clip norm / expected noise norm.")
    s.add_argument("--clip", type=float, default=1.0, help="clip norm (default: 1.0)")
    s.add_argument("--epsilons", type=_positive_floats, required=True)
    s.add_argument("--noise", choices=["laplace_vector", "gaussian"], default="laplace_vector")
    s.add_argument("--dim", type=int, default=768, help="embedding dimension (default: 768)")
    s.add_argument("--delta-mech", dest="delta_mech", type=float, default=1e-5,
                   help="gaussian delta (default: 1e-5)")
    s.add_argument("--out", help="CSV path (default: stdout)")

    c = sub.add_parser("convert", help="token budget to sentence budget",
                       description="Basic composition: eps_sentence = mean_tokens * eps_token.")
    c.add_argument("--epsilon-token", dest="epsilon_token", type=float, required=True)
    c.add_argument("--mean-tokens", dest="mean_tokens", type=float, required=True)
    return parser


# ---------------------------------------------------------------------------
# Resolution of flags into objects
# ---------------------------------------------------------------------------


def resolve_options(ns: argparse.Namespace) -> dict:
    """Defaults, overlaid by the config file, overlaid by explicit flags."""
    opts = dict(DEFAULTS)
    cfg_path = getattr(ns, "config", None)
    if cfg_path:
        try:
            loaded = json.loads(Path(cfg_path).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config file: {err}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in loaded.items():
            key = key.replace("-", "_")
            key = "lam" if key == "lambda" else key
            if key not in AUDIT_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            opts[key] = value
    for key in AUDIT_KEYS:
        if hasattr(ns, key):
            opts[key] = getattr(ns, key)
    return opts


def _load_data(opts: dict) -> tuple[Corpus, EmbeddingTable]:
    if not opts.get("dataset"):
        raise ConfigError("--dataset is required")
    fmt = opts["format"] or ("jsonl" if str(opts["dataset"]).endswith(".jsonl") else "plain_text")
    table = load_embeddings(opts["embeddings"]) if opts.get("embeddings") else None
    corpus = load_corpus(opts["dataset"], fmt, table)
    if table is None:
        size = len(corpus.vocab) if corpus.vocab else corpus.max_token + 1
        table = synthetic_embeddings(max(size, corpus.max_token + 1), int(opts["dim"]),
                                     int(opts["seed"]), corpus.vocab)
    return corpus, table


def build_config(opts: dict, corpus: Corpus, table: EmbeddingTable,
                 epsilon: float | None) -> AuditConfig:
    kind = opts.get("mechanism")
    if kind is None:
        raise ConfigError("--mechanism is required")
    if epsilon is None:
        if kind in NEEDS_EPSILON:
            raise ConfigError(f"--epsilon is required for the {kind} mechanism")
        epsilon = math.inf if kind == "identity" else 0.0
    g = int(opts.get("g") or 2)
    if kind == "grr":
        params = GrrParams(g)
    elif kind == "token_em":
        params = TokenEmParams(table, opts.get("sensitivity"), opts.get("pool"))
    elif kind == "vector_noise":
        params = VectorNoiseParams(table, float(opts["clip"]), opts["noise"],
                                   float(opts["delta_mech"]))
    else:
        params = None
    mech = MechanismSpec(kind, float(epsilon), params)

    attack = ATTACKS.get(opts["attack"])
    if attack is None:
        raise ConfigError(f"unknown attack {opts['attack']!r}")
    if attack == "remote_judge":
        if not (opts.get("judge_url") and opts.get("judge_model")):
            raise ConfigError("the judge attack needs --judge-url and --judge-model")
        endpoint = RemoteJudgeConfig(opts["judge_url"], opts["judge_model"],
                                     opts["judge_key_env"], float(opts["judge_timeout"]),
                                     int(opts["judge_retries"]),
                                     int(opts["judge_concurrency"]))
        adv = AdversarySpec(attack, endpoint=endpoint)
    elif attack == "value_map":
        adv = AdversarySpec(attack, domain_size=g)
    elif attack == "embedding_nn":
        adv = AdversarySpec(attack, embedding=table)
    else:
        adv = AdversarySpec(attack)

    mode = "symmetric-baseline" if opts["estimator"] in ("symmetric", "symmetric-baseline") \
        else "efficient"
    cfg = AuditConfig(
        mechanism=mech, adversary=adv, k=int(opts["k"]), trials=int(opts["trials"]),
        alpha_conf=float(opts["alpha"]), delta=float(opts["delta"]), lam=float(opts["lam"]),
        base_seed=int(opts["seed"]), estimator_mode=mode,
        failure_budget=opts.get("failure_budget"), log_cap=int(opts["log_cap"]))
    cfg.validate_for(corpus)
    return cfg


def _print_config(cfg: AuditConfig, opts: dict) -> None:
    shown = cfg.to_dict()
    shown["workers"] = opts["workers"] if opts["workers"] is not None else default_workers()
    shown["dataset"] = opts.get("dataset")
    print("resolved config: " + json.dumps(shown, sort_keys=True, default=str), file=sys.stderr)


def _fmt(x: float) -> str:
    return f"{x:.4f}" if math.isfinite(x) else str(x)


def summary_line(epsilon: float, result) -> str:
    s = result.summary
    return (f"eps_nominal={_fmt(epsilon)} eps_emp={s.epsilon_emp:.4f} "
            f"p_lower={s.p_lower:.6f} ceiling={s.ceiling:.4f}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_audit(ns: argparse.Namespace) -> int:
    opts = resolve_options(ns)
    eps = getattr(ns, "epsilon", None)
    if eps is None and "epsilon" in opts:
        eps = opts["epsilon"]
    corpus, table = _load_data(opts)
    cfg = build_config(opts, corpus, table, eps)
    _print_config(cfg, opts)
    result = run_audit(cfg, corpus, workers=opts["workers"])
    if opts.get("out"):
        write_result(result, opts["out"])
    print(summary_line(cfg.mechanism.epsilon, result))
    return EXIT_OK


def cmd_sweep(ns: argparse.Namespace) -> int:
    opts = resolve_options(ns)
    grid = opts.get("epsilons")
    if isinstance(grid, str):
        grid = _positive_floats(grid)
    if not grid:
        raise ConfigError("--epsilons is required")
    corpus, table = _load_data(opts)
    cfg = build_config(opts, corpus, table, grid[0])
    _print_config(cfg, opts)
    cells = run_sweep(cfg, grid, corpus, workers=opts["workers"])
    tokens = None
    if opts.get("convert_sentence"):
        tokens = float(opts["mean_tokens"]) if opts.get("mean_tokens") is not None \
            else corpus.mean_tokens
    out = opts.get("out")
    if out:
        out = Path(out)
        csv_path = out if out.suffix == ".csv" else out.with_suffix(".csv")
        write_sweep(cells, csv_path, tokens)
        doc_path = csv_path.with_suffix(".jsonl")
        doc_path.write_text("")
        for cell in cells:
            if cell.ok:
                write_result(cell.result, doc_path, append=True)
    header = ["epsilon_nominal", "epsilon_emp", "p_lower", "tp", "trials", "ceiling"]
    if tokens is not None:
        header.append("eps_sentence")
    print("\t".join(header))
    for cell in cells:
        if cell.ok:
            s = cell.result.summary
            row = [_fmt(cell.epsilon), f"{s.epsilon_emp:.4f}", f"{s.p_lower:.6f}",
                   str(s.tp_count), str(s.trials), f"{s.ceiling:.4f}"]
        else:
            row = [_fmt(cell.epsilon), "FAILED", cell.error or "", "", "", ""]
        if tokens is not None:
            row.append(_fmt(tokens * cell.epsilon))
        print("\t".join(row))
    return EXIT_OK if any(c.ok for c in cells) else EXIT_RUNTIME


def cmd_ceiling(ns: argparse.Namespace) -> int:
    print(f"{ceiling(ns.k, ns.trials, ns.alpha, ns.delta):.6f}")
    return EXIT_OK


def cmd_snr(ns: argparse.Namespace) -> int:
    if not (ns.clip > 0 and ns.dim >= 2):
        raise ConfigError("--clip must be > 0 and --dim >= 2")
    # only the dimension of the table matters for the noise norm
    table = EmbeddingTable(np.eye(2, ns.dim))
    params = VectorNoiseParams(table, ns.clip, ns.noise,
                               ns.delta_mech if ns.noise == "gaussian" else 0.0)
    fh = open(ns.out, "w", newline="") if ns.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["epsilon", "clip_norm", "expected_noise_norm", "snr"])
        for eps in ns.epsilons:
            w.writerow([repr(eps), repr(ns.clip), repr(expected_noise_norm(params, eps)),
                        repr(snr(params, eps))])
    finally:
        if ns.out:
            fh.close()
    return EXIT_OK


def cmd_convert(ns: argparse.Namespace) -> int:
    if ns.epsilon_token < 0 or ns.mean_tokens < 0:
        raise ConfigError("inputs must be non-negative")
    if ns.mean_tokens == 0:
        print("warning: zero tokens per sentence; sentence budget is 0", file=sys.stderr)
    print(repr(sentence_budget(ns.epsilon_token, ns.mean_tokens)))
    return EXIT_OK


COMMANDS = {"audit": cmd_audit, "sweep": cmd_sweep, "ceiling": cmd_ceiling,
            "snr": cmd_snr, "convert": cmd_convert}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[ns.command](ns)
    except (AuditError, TrialError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
