"""Experiment harness: synth, train, score, eval, and sweep-n subcommands.

Every command is a pure function of its config file, dataset files, and
seed, so reruns produce byte-identical outputs. Outputs are plain text files
(training logs, score tables, reports, histogram data); no plots are drawn.

Exit codes: 0 on success, 1 with a diagnostic on stderr for any package
error, 2 for argument parsing problems.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from . import metrics as metrics_mod
from .errors import ConfigError, DataError, FghvError
from .models import load_checkpoint, save_checkpoint
from .synthdata import SynthSpec, generate, read_dataset, spec_from_kv, write_dataset
from .training import RunConfig, config_from_kv, run_training
from .verification import (
    CROSS_DATASET,
    CROSS_TYPE,
    ClassifyThresholds,
    GhvmConfig,
    ScoreTriple,
    classify,
    score_sample,
)

_METHOD = "method default"
_DESK = "desk-scale default"


def _read_kv_file(path) -> dict[str, str]:
    pairs: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for number, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {number}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            pairs[key.strip()] = value.strip()
    return pairs


def _collect_overrides(args: argparse.Namespace, names: list[str]) -> dict[str, str]:
    pairs = {}
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            pairs[name] = str(value)
    return pairs


def _load_run_config(args: argparse.Namespace) -> RunConfig:
    pairs = _read_kv_file(args.config) if args.config else {}
    config = config_from_kv(pairs)
    override_names = [
        "lambda1", "lambda2", "use_var", "use_rcc", "use_ddc", "use_real_gen",
        "use_attack_gen", "n_hypotheses", "ghvm_iterations", "ghvm_step", "lr",
        "lr_after_drop", "lr_drop_epoch", "momentum", "weight_decay", "epochs",
        "batch_size", "seed", "dev_fraction", "latent_dim", "hidden_dim",
        "feature_dim", "extractor_hidden", "leaky_slope",
    ]
    overrides = _collect_overrides(args, override_names)
    return config_from_kv(overrides, base=config)


def _bool_flag(value: str) -> str:
    lowered = value.strip().lower()
    if lowered not in ("true", "false", "1", "0"):
        raise argparse.ArgumentTypeError(f"expected true/false, got {value!r}")
    return lowered


def _add_run_config_flags(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("config overrides (applied after --config)")
    g.add_argument("--lambda1", type=float, help=f"rcc weight, 1 ({_METHOD})")
    g.add_argument("--lambda2", type=float, help=f"ddc weight, 1 ({_METHOD})")
    g.add_argument("--use-var", dest="use_var", type=_bool_flag, help="enable variance constraint")
    g.add_argument("--use-rcc", dest="use_rcc", type=_bool_flag,
                   help="enable relative correlation constraint")
    g.add_argument("--use-ddc", dest="use_ddc", type=_bool_flag,
                   help="enable distribution discrimination constraint")
    g.add_argument("--use-real-gen", dest="use_real_gen", type=_bool_flag,
                   help="train with the real-face generator")
    g.add_argument("--use-attack-gen", dest="use_attack_gen", type=_bool_flag,
                   help="train with the known-attack generator")
    g.add_argument("--n-hypotheses", dest="n_hypotheses", type=int,
                   help=f"hypotheses per sample, 14 ({_METHOD})")
    g.add_argument("--ghvm-iterations", dest="ghvm_iterations", type=int,
                   help=f"latent descent iterations, 15 ({_METHOD})")
    g.add_argument("--ghvm-step", dest="ghvm_step", type=float,
                   help=f"latent descent step, 1 ({_METHOD})")
    g.add_argument("--lr", type=float, help=f"initial learning rate, 1e-3 ({_METHOD})")
    g.add_argument("--lr-after-drop", dest="lr_after_drop", type=float,
                   help=f"learning rate after the drop, 1e-4 ({_METHOD})")
    g.add_argument("--lr-drop-epoch", dest="lr_drop_epoch", type=int,
                   help=f"epoch after which the rate drops, 50 ({_METHOD})")
    g.add_argument("--momentum", type=float, help=f"sgd momentum, 0.9 ({_METHOD})")
    g.add_argument("--weight-decay", dest="weight_decay", type=float,
                   help=f"sgd weight decay, 5e-4 ({_METHOD})")
    g.add_argument("--epochs", type=int, help=f"training epochs, 60 ({_DESK})")
    g.add_argument("--batch-size", dest="batch_size", type=int,
                   help=f"samples per batch, 32 ({_DESK})")
    g.add_argument("--seed", type=int, help=f"run seed, 0 ({_DESK})")
    g.add_argument("--dev-fraction", dest="dev_fraction", type=float,
                   help=f"development split fraction, 0.1 ({_DESK})")
    g.add_argument("--latent-dim", dest="latent_dim", type=int,
                   help=f"latent dimension, 64 ({_DESK})")
    g.add_argument("--hidden-dim", dest="hidden_dim", type=int,
                   help=f"generator hidden width, 128 ({_DESK})")
    g.add_argument("--feature-dim", dest="feature_dim", type=int,
                   help=f"feature dimension, 128 ({_DESK})")
    g.add_argument("--extractor-hidden", dest="extractor_hidden", type=int,
                   help=f"extractor hidden width, 128 ({_DESK})")
    g.add_argument("--leaky-slope", dest="leaky_slope", type=float,
                   help=f"leaky relu slope, 0.01 ({_DESK})")


# -- synth --------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    pairs = _read_kv_file(args.config) if args.config else {}
    spec = spec_from_kv(pairs)
    names = ["d_in", "n_domains", "samples_per_class_per_domain", "real_coherence",
             "attack_spread", "noise_sigma", "seed"]
    overrides = _collect_overrides(args, names)
    if overrides:
        spec = replace(spec, **{
            k: (float(v) if k in ("real_coherence", "attack_spread", "noise_sigma") else int(v))
            for k, v in overrides.items()
        })
    train, test = generate(spec)
    write_dataset(train, args.out_train)
    write_dataset(test, args.out_test)
    print(f"wrote {len(train)} training samples to {args.out_train}")
    print(f"wrote {len(test)} samples of held-out domain {spec.n_domains - 1} to {args.out_test}")
    return 0


# -- train --------------------------------------------------------------------


def cmd_train(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    config.validate()
    train_samples = read_dataset(args.dataset)
    if not train_samples:
        raise DataError(f"{args.dataset}: dataset is empty")
    result = run_training(config, train_samples)
    save_checkpoint(result.checkpoint, args.out_checkpoint)
    log_path = args.out_log or (str(args.out_checkpoint) + ".log")
    with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
        for key in sorted(result.checkpoint.config):
            fh.write(f"# {key}={result.checkpoint.config[key]}\n")
        for stat in result.epoch_stats:
            fh.write(stat.as_line() + "\n")
    dev_path = args.dev_out or (str(args.out_checkpoint) + ".dev.csv")
    write_dataset(result.dev_samples, dev_path)
    final = result.epoch_stats[-1]
    print(f"trained {config.epochs} epochs on {len(train_samples)} samples")
    print(f"final epoch: var={final.var:.6f} rcc={final.rcc:.6f} ddc={final.ddc:.6f}")
    print(f"checkpoint: {args.out_checkpoint}")
    print(f"log: {log_path}")
    print(f"dev split ({len(result.dev_samples)} samples): {dev_path}")
    return 0


# -- score --------------------------------------------------------------------


def _score_dataset(checkpoint, samples, mode, seed, skip_ghvm=False):
    config = checkpoint.config
    n_hyp = int(config.get("n_hypotheses", 14))
    ghvm = GhvmConfig(
        iterations=0 if skip_ghvm else int(config.get("ghvm_iterations", 15)),
        step=float(config.get("ghvm_step", 1.0)),
    )
    rows = []
    for index, sample in enumerate(samples):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
        triple = score_sample(
            sample.x, checkpoint.extractor, checkpoint.real_gen, checkpoint.attack_gen,
            n_hyp, rng, ghvm,
        )
        rows.append((triple, sample.label, sample.domain))
    return rows


def write_scores(rows, mode: str, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# mode={mode}\n")
        if mode == CROSS_DATASET:
            fh.write("# delta_kl and var are emitted but unused for classification in this mode\n")
        fh.write("softmax_mean,var,delta_kl,label,domain\n")
        for triple, label, domain in rows:
            fh.write(f"{triple.softmax_mean!r},{triple.var!r},{triple.delta_kl!r},{label},{domain}\n")


def read_scores(path) -> tuple[list[tuple[ScoreTriple, int, int]], str]:
    mode = CROSS_TYPE
    rows: list[tuple[ScoreTriple, int, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    body_started = False
    for number, line in enumerate(lines, start=1):
        if line.startswith("# mode="):
            mode = line.partition("=")[2]
            continue
        if line.startswith("#") or not line:
            continue
        if not body_started:
            if line != "softmax_mean,var,delta_kl,label,domain":
                raise DataError(f"{path}: line {number}: unexpected score header {line!r}")
            body_started = True
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise DataError(f"{path}: line {number}: expected 5 fields, got {len(parts)}")
        try:
            triple = ScoreTriple(float(parts[0]), float(parts[1]), float(parts[2]))
            label, domain = int(parts[3]), int(parts[4])
        except ValueError:
            raise DataError(f"{path}: line {number}: malformed numeric field") from None
        rows.append((triple, label, domain))
    if mode not in (CROSS_DATASET, CROSS_TYPE):
        raise DataError(f"{path}: unknown mode {mode!r}")
    return rows, mode


def cmd_score(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    samples = read_dataset(args.dataset)
    if not samples:
        raise DataError(f"{args.dataset}: dataset is empty")
    d_in = samples[0].x.shape[0]
    if d_in != checkpoint.extractor.input_dim:
        raise ConfigError(
            f"dataset dimension {d_in} does not match checkpoint "
            f"({checkpoint.extractor.input_dim})"
        )
    seed = args.seed if args.seed is not None else int(checkpoint.config.get("seed", 0))
    rows = _score_dataset(checkpoint, samples, args.mode, seed)
    write_scores(rows, args.mode, args.out)
    print(f"scored {len(rows)} samples in {args.mode} mode -> {args.out}")
    return 0


# -- eval ---------------------------------------------------------------------


def _fit_thresholds(dev_rows, mode: str) -> ClassifyThresholds:
    scores = np.array([t.softmax_mean for t, _, _ in dev_rows])
    labels = np.array([label for _, label, _ in dev_rows])
    _, tau_score = metrics_mod.eer(scores, labels)
    real = [t for t, label, _ in dev_rows if label == 1]
    if mode == CROSS_TYPE and real:
        tau_var = float(np.percentile([t.var for t in real], 95))
        tau_kl = float(np.percentile([t.delta_kl for t in real], 95))
    else:
        tau_var = float("inf") if mode == CROSS_DATASET else 0.0
        tau_kl = float("inf") if mode == CROSS_DATASET else 0.0
    return ClassifyThresholds(score=tau_score, var=tau_var, delta_kl=tau_kl)


def evaluate_scores(rows, mode: str, dev_rows=None, bins: int = 20):
    scores = np.array([t.softmax_mean for t, _, _ in rows])
    labels = np.array([label for _, label, _ in rows])
    auc = metrics_mod.roc_auc(scores, labels)
    eer_rate, eer_thr = metrics_mod.eer(scores, labels)
    source = "dev"
    if dev_rows:
        thresholds = _fit_thresholds(dev_rows, mode)
    else:
        thresholds = _fit_thresholds(rows, mode)
        source = "self-fit"
    hter_value = metrics_mod.hter(scores, labels, thresholds.score)
    predictions = np.array([classify(t, thresholds, mode) for t, _, _ in rows])
    acer_value = metrics_mod.acer(labels, predictions)
    report = metrics_mod.MetricsReport(
        auc=auc,
        eer=eer_rate,
        eer_threshold=eer_thr,
        hter=hter_value,
        hter_threshold=thresholds.score,
        acer=acer_value,
        acer_thresholds=(thresholds.score, thresholds.var, thresholds.delta_kl),
        score_hist=metrics_mod.class_histogram(scores, labels, bins),
        threshold_source=source,
    )
    var_hist = metrics_mod.class_histogram(np.array([t.var for t, _, _ in rows]), labels, bins)
    kl_hist = metrics_mod.class_histogram(np.array([t.delta_kl for t, _, _ in rows]), labels, bins)
    return report, var_hist, kl_hist


def _write_histogram(hist, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("bin_lo,bin_hi,real_count,attack_count\n")
        for i in range(hist.real_counts.size):
            fh.write(
                f"{hist.edges[i]!r},{hist.edges[i + 1]!r},"
                f"{int(hist.real_counts[i])},{int(hist.attack_counts[i])}\n"
            )


def cmd_eval(args: argparse.Namespace) -> int:
    rows, mode = read_scores(args.scores)
    dev_rows = None
    if args.dev_scores:
        dev_rows, _ = read_scores(args.dev_scores)
    report, var_hist, kl_hist = evaluate_scores(rows, mode, dev_rows, bins=args.bins)
    lines = report.as_kv_lines() + [f"mode={mode}", f"n_samples={len(rows)}"]
    if args.out_report:
        with open(args.out_report, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    if args.out_hist_var:
        _write_histogram(var_hist, args.out_hist_var)
    if args.out_hist_kl:
        _write_histogram(kl_hist, args.out_hist_kl)
    print(f"{'metric':<12}{'value':>12}")
    for name, value in (
        ("auc", report.auc), ("eer", report.eer), ("hter", report.hter), ("acer", report.acer),
    ):
        print(f"{name:<12}{value:>12.4f}")
    print(f"thresholds fitted on: {report.threshold_source}")
    return 0


# -- sweep-n ------------------------------------------------------------------


def fhvm_auc(checkpoint, samples, seed: int) -> float:
    """AUC of the softmax-mean score alone (no latent descent), for sweeps."""
    rows = _score_dataset(checkpoint, samples, CROSS_DATASET, seed, skip_ghvm=True)
    scores = np.array([t.softmax_mean for t, _, _ in rows])
    labels = np.array([label for _, label, _ in rows])
    return metrics_mod.roc_auc(scores, labels)


def cmd_sweep_n(args: argparse.Namespace) -> int:
    if args.repeats < 2:
        raise ConfigError(f"sweep needs at least 2 repeats, got {args.repeats}")
    config = _load_run_config(args)
    train_samples = read_dataset(args.train_dataset)
    test_samples = read_dataset(args.test_dataset)
    if not train_samples or not test_samples:
        raise DataError("sweep needs nonempty train and test datasets")
    n_values = [int(v) for v in args.n_values.split(",") if v]
    table = []
    for n_hyp in n_values:
        aucs = []
        for repeat in range(args.repeats):
            cell_seed = config.seed + 1009 * n_hyp + repeat
            cell = replace(config, n_hypotheses=n_hyp, seed=cell_seed)
            result = run_training(cell, train_samples)
            aucs.append(fhvm_auc(result.checkpoint, test_samples, cell_seed))
        table.append((n_hyp, float(np.mean(aucs)), float(np.min(aucs)), float(np.max(aucs))))
    header = f"{'N':>4} {'mean_auc':>10} {'min_auc':>10} {'max_auc':>10}"
    print(header)
    for n_hyp, mean_auc, min_auc, max_auc in table:
        print(f"{n_hyp:>4} {mean_auc:>10.4f} {min_auc:>10.4f} {max_auc:>10.4f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("n,mean_auc,min_auc,max_auc\n")
            for n_hyp, mean_auc, min_auc, max_auc in table:
                fh.write(f"{n_hyp},{mean_auc!r},{min_auc!r},{max_auc!r}\n")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fghv",
        description="Train and evaluate the feature-generation / hypothesis-verification "
        "anti-spoofing model on synthetic multi-domain data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multi-domain dataset")
    p.add_argument("--config", help="key=value spec file")
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-test", required=True)
    g = p.add_argument_group("spec overrides")
    g.add_argument("--d-in", dest="d_in", type=int, help=f"input dimension, 32 ({_DESK})")
    g.add_argument("--n-domains", dest="n_domains", type=int, help=f"domains, 4 ({_DESK})")
    g.add_argument("--samples-per-class-per-domain", dest="samples_per_class_per_domain",
                   type=int, help=f"250 ({_DESK})")
    g.add_argument("--real-coherence", dest="real_coherence", type=float,
                   help=f"shared-direction strength in [0,1], 0.7 ({_DESK})")
    g.add_argument("--attack-spread", dest="attack_spread", type=float,
                   help=f"attack cluster spread, 1.0 ({_DESK})")
    g.add_argument("--noise-sigma", dest="noise_sigma", type=float,
                   help=f"additive noise, 0.3 ({_DESK})")
    g.add_argument("--seed", type=int, help=f"generation seed, 0 ({_DESK})")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", help="key=value run config file")
    p.add_argument("--dataset", required=True, help="training dataset csv")
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--out-log", help="per-epoch log path (default: checkpoint + .log)")
    p.add_argument("--dev-out", help="dev split csv path (default: checkpoint + .dev.csv)")
    _add_run_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="emit per-sample score triples for a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", choices=[CROSS_DATASET, CROSS_TYPE], default=CROSS_DATASET)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="latent seed (default: checkpoint's seed)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="compute metrics and histograms from a score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--dev-scores", help="score file of the dev split, for threshold fitting")
    p.add_argument("--out-report", help="machine-readable key=value report path")
    p.add_argument("--out-hist-var", help="per-class histogram over var")
    p.add_argument("--out-hist-kl", help="per-class histogram over delta_kl")
    p.add_argument("--bins", type=int, default=20)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-n", help="train/evaluate over a grid of hypothesis counts")
    p.add_argument("--config", help="key=value run config file")
    p.add_argument("--train-dataset", required=True)
    p.add_argument("--test-dataset", required=True)
    p.add_argument("--n-values", default="2,6,10,14")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", help="csv output path")
    _add_run_config_flags(p)
    p.set_defaults(func=cmd_sweep_n)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FghvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
