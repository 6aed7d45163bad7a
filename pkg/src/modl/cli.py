"""Command-line entry point: ``modl <subcommand> [options]``."""

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .combiner import MERGE_MODES

# CLI flag -> config field; only flags the user actually passed override the file
_CONFIG_FLAGS = {
    "dataset": "dataset",
    "data_format": "data_format",
    "label_column": "label_column",
    "n_features": "n_features",
    "max_features": "max_features",
    "model": "model",
    "merge_mode": "merge_mode",
    "p_f": "p_f",
    "always_available": "always_available",
    "seeds": "seeds",
    "lr": "learning_rate",
    "hidden_widths": "hidden_widths",
    "set_width": "set_width",
    "embedding_dim": "embedding_dim",
    "n_blocks": "n_blocks",
    "layers_per_block": "layers_per_block",
    "odl_width": "odl_width",
    "odl_layers": "odl_layers",
    "subsample": "subsample",
    "standardize": "standardize",
    "out": "output_dir",
    "workers": "workers",
    "exclusive": "exclusive",
}


def _label_column(text):
    try:
        return int(text)
    except ValueError:
        return text


def _int_list(text):
    return [int(tok) for tok in text.replace(",", " ").split()]


def _float_list(text):
    return [float(tok) for tok in text.replace(",", " ").split()]


def _add_experiment_args(p):
    d = argparse.SUPPRESS
    p.add_argument("--config", help="YAML file; flags override its values")
    p.add_argument("--dataset", default=d, help="file path or known name looked up under $MODL_DATA_DIR")
    p.add_argument("--data-format", choices=("auto", "csv", "libsvm"), default=d)
    p.add_argument("--label-column", type=_label_column, default=d)
    p.add_argument("--n-features", type=int, default=d)
    p.add_argument("--max-features", type=int, default=d)
    p.add_argument("--model", choices=harness.MODELS, default=d)
    p.add_argument("--merge-mode", choices=MERGE_MODES, default=d)
    p.add_argument("--p-f", type=float, default=d)
    p.add_argument("--always-available", type=int, default=d)
    p.add_argument("--seeds", type=_int_list, default=d, help="e.g. '0,1,2'")
    p.add_argument("--lr", type=float, default=d)
    p.add_argument("--hidden-widths", type=_int_list, default=d)
    p.add_argument("--set-width", type=int, default=d)
    p.add_argument("--embedding-dim", type=int, default=d)
    p.add_argument("--n-blocks", type=int, default=d)
    p.add_argument("--layers-per-block", type=int, default=d)
    p.add_argument("--odl-width", type=int, default=d)
    p.add_argument("--odl-layers", type=int, default=d)
    p.add_argument("--subsample", type=int, default=d)
    p.add_argument("--standardize", action="store_true", default=d)
    p.add_argument("--out", default=d, help="output directory (default under $MODL_OUTPUT_ROOT)")
    p.add_argument("--workers", type=int, default=d)
    p.add_argument("--exclusive", action="store_true", default=d)


def build_parser():
    parser = argparse.ArgumentParser(prog="modl", description="Online stacked learners on streams with missing features")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_experiment_args(sub.add_parser("run", help="run seeded trials of one model"))
    ab = sub.add_parser("ablate-merge", help="compare merge modes of the stacked model")
    _add_experiment_args(ab)
    ab.add_argument("--modes", nargs="+", choices=MERGE_MODES, default=list(MERGE_MODES))
    ms = sub.add_parser("mask-sweep", help="loop over feature availability probabilities")
    _add_experiment_args(ms)
    ms.add_argument("--p-grid", type=_float_list, default=list(harness.PF_GRID))

    toy = sub.add_parser("toy-olr", help="online logistic filter vs. batch MLE on synthetic data")
    toy.add_argument("--n", type=int, default=1000)
    toy.add_argument("--seed", type=int, default=0)
    toy.add_argument("--out")

    bench = sub.add_parser("bench-complexity", help="per-step time of naive vs. fast hedge backprop")
    bench.add_argument("--L", type=_int_list, default=list(harness.COMPLEXITY_L_VALUES), dest="L_values")
    bench.add_argument("--steps", type=int, default=2000)
    bench.add_argument("--width", type=int, default=50)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out")
    return parser


def config_from_args(args):
    base = harness.load_config_file(args.config) if getattr(args, "config", None) else {}
    cfg = harness.ExperimentConfig.from_mapping(base)
    overrides = {field: getattr(args, flag) for flag, field in _CONFIG_FLAGS.items() if hasattr(args, flag)}
    for key in ("seeds", "hidden_widths"):
        if key in overrides:
            overrides[key] = tuple(overrides[key])
    return replace(cfg, **overrides)


def _default_dir(command, cfg, tag=""):
    if cfg.output_dir:
        return Path(cfg.output_dir)
    name = f"{cfg.dataset_key}_{cfg.model}{tag}_{cfg.digest()[:8]}"
    return harness.output_root() / command / name


def _report(cfg, summary, label=""):
    flag = " (single seed)" if summary.single_seed else ""
    print(f"{label}{cfg.dataset_key} {cfg.model}/{cfg.merge_mode} p_f={cfg.p_f}: "
          f"cumulative error {summary.mean:.1f} +- {summary.std:.1f}{flag}")
    for seed, msg in summary.failures.items():
        print(f"  seed {seed} failed: {msg}", file=sys.stderr)


def cmd_run(args):
    cfg = config_from_args(args)
    summary, results = harness.run_experiment(cfg)
    out = harness.emit_outputs(summary, results, cfg, _default_dir("run", cfg))
    _report(cfg, summary)
    print(f"outputs written to {out}")
    return 1 if summary.failures else 0


def cmd_ablate_merge(args):
    cfg = replace(config_from_args(args), model="modl")
    table = {}
    failed = False
    for mode in args.modes:
        mcfg = replace(cfg, merge_mode=mode)
        summary, results = harness.run_experiment(mcfg)
        sub = _default_dir("ablate-merge", cfg) / mode
        harness.emit_outputs(summary, results, mcfg, sub)
        _report(mcfg, summary)
        table[mode] = {"mean": summary.mean, "std": summary.std}
        failed |= bool(summary.failures)
    out = _default_dir("ablate-merge", cfg)
    (out / "table.json").write_text(json.dumps(table, indent=2) + "\n")
    print(f"outputs written to {out}")
    return 1 if failed else 0


def cmd_mask_sweep(args):
    cfg = config_from_args(args)
    table = {}
    failed = False
    for p in args.p_grid:
        pcfg = replace(cfg, p_f=p)
        summary, results = harness.run_experiment(pcfg)
        harness.emit_outputs(summary, results, pcfg, _default_dir("mask-sweep", cfg) / f"p_{p:g}")
        _report(pcfg, summary)
        table[f"{p:g}"] = {"mean": summary.mean, "std": summary.std}
        failed |= bool(summary.failures)
    out = _default_dir("mask-sweep", cfg)
    (out / "table.json").write_text(json.dumps(table, indent=2) + "\n")
    print(f"outputs written to {out}")
    return 1 if failed else 0


def cmd_toy_olr(args):
    report = harness.run_toy_olr(args.n, args.seed)
    result = {
        "n": report.n,
        "filter_mean": report.mean.tolist(),
        "theta_mle": report.theta_mle.tolist(),
        "distance": report.distance,
        "mean_log_likelihood": float(report.log_likelihood.mean()) if report.n else None,
    }
    print(json.dumps(result, indent=2))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "toy_olr.json").write_text(json.dumps(result, indent=2) + "\n")
        lines = ["step,log_likelihood"] + [f"{t + 1},{v:.9g}" for t, v in enumerate(report.log_likelihood)]
        (out / "log_likelihood.csv").write_text("\n".join(lines) + "\n")
    return 0


def cmd_bench_complexity(args):
    out = Path(args.out) if args.out else harness.output_root() / "bench-complexity" / "complexity.csv"
    rows = harness.run_complexity_bench(args.L_values, args.steps, out, width=args.width, seed=args.seed)
    from .hedge_odl import probe_csv, probe_ratios

    print(probe_csv(rows), end="")
    for L, ratio in probe_ratios(rows).items():
        print(f"L={L}: naive/fast = {ratio:.2f}")
    print(f"table written to {out}")
    return 0


COMMANDS = {
    "run": cmd_run,
    "ablate-merge": cmd_ablate_merge,
    "mask-sweep": cmd_mask_sweep,
    "toy-olr": cmd_toy_olr,
    "bench-complexity": cmd_bench_complexity,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (harness.ConfigError, FileNotFoundError, PermissionError, ValueError, RuntimeError) as exc:
        print(f"modl {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
