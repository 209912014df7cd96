"""Command-line entry point: ``lesionaug <subcommand> [options]``.

Exit codes: 0 success, 1 a verification check failed, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .augment import NO_AUGMENTATION, TRAIN_TABLE_I, augment_dataset, load_policy
from .core.image import ImageFormatError
from .core.manifest import ManifestError, load_manifest
from .harness import PROBE_MAX, ExperimentConfig, run_experiment
from .metrics import size_report
from .model.layers import MODEL_PRESETS, TABLE_III_ROWS, ModelConfig, ShapeMismatch, load_model_config, validate_config
from .model.network import grad_check, init_model, load_model, save_model
from .model.training import TrainConfig, evaluate, train
from .synthgen import SynthConfig, generate_dataset, generate_samples

EXIT_OK, EXIT_VERIFY, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("lesionaug")


class UsageError(Exception):
    pass


def _read_config(args) -> dict:
    if not args.config:
        return {}
    try:
        doc = json.loads(Path(args.config).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.config}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise UsageError(f"{args.config}: top level must be a JSON object")
    return doc


def _need_out(args) -> Path:
    if not args.out:
        raise UsageError(f"{args.command} requires --out <dir>")
    return Path(args.out)


def _manifest_or_synth(args):
    if args.manifest:
        return load_manifest(args.manifest)
    return generate_samples(SynthConfig.from_dict(_read_config(args).get("synth", {})), args.seed)


def _model_config(args) -> ModelConfig:
    doc = _read_config(args)
    if "model" in doc:
        m = doc["model"]
        return load_model_config(m) if isinstance(m, str) else ModelConfig.from_dict(m)
    return MODEL_PRESETS[args.preset]


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# -- subcommands -----------------------------------------------------------------

def cmd_synth(args) -> int:
    doc = _read_config(args)
    cfg = SynthConfig.from_dict(doc.get("synth", doc))
    if args.preset:
        cfg = SynthConfig.from_dict({**cfg.to_dict(), "preset": args.preset})
    manifest = generate_dataset(cfg, args.seed, _need_out(args))
    print(f"wrote {len(manifest.records)} images to {args.out}")
    return EXIT_OK


def cmd_augment(args) -> int:
    manifest = load_manifest(args.manifest)
    out = augment_dataset(manifest, load_policy(args.policy), args.seed, args.epoch, _need_out(args),
                          workers=args.workers)
    print(f"wrote {len(out.records)} augmented images to {args.out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    manifest = _manifest_or_synth(args)
    report = size_report(manifest, load_policy(args.policy), args.seed)
    body = {"policy": args.policy, **report.to_dict()}
    if not args.check:
        _print(body)
        return EXIT_OK
    # neutralization check: the clean data must carry a size signal that table1 zoom removes
    clean = size_report(manifest, NO_AUGMENTATION, args.seed) if args.policy != "none" else report
    zoomed = size_report(manifest, TRAIN_TABLE_I, args.seed)
    checks = {
        "clean_ks_p_below_0.01": clean.stats.ks_pvalue < 0.01,
        "clean_probe_at_least_0.75": clean.probe_test_acc >= 0.75,
        "zoom_ks_d_halved": zoomed.stats.ks_statistic <= 0.5 * clean.stats.ks_statistic,
        "zoom_probe_at_most_0.60": zoomed.probe_test_acc <= PROBE_MAX,
    }
    _print({"clean": clean.to_dict(), "table1": zoomed.to_dict(), "checks": checks, "pass": all(checks.values())})
    return EXIT_OK if all(checks.values()) else EXIT_VERIFY


def cmd_param_table(args) -> int:
    cfg = _model_config(args)
    rows = validate_config(cfg)
    total = 0
    for i, (layer, (shape, count)) in enumerate(zip(cfg.layers, rows)):
        total += count
        print(f"{i:3d}  {layer.kind:<10s} {str(shape):<18s} {count:>10d}")
    print(f"total parameters: {total}")
    if not args.check_table3:
        return EXIT_OK
    expected = [(shape, count) for _, shape, count in TABLE_III_ROWS]
    bad = [i for i, (got, want) in enumerate(zip(rows, expected)) if tuple(got) != want]
    if len(rows) != len(expected):
        print(f"row count {len(rows)} != {len(expected)}")
        bad.append(-1)
    column_sum = sum(c for _, c in expected)
    if total != column_sum:
        print(f"total {total} != summed column {column_sum}")
        bad.append(-1)
    for i in bad:
        if i >= 0:
            print(f"row {i}: got {rows[i]}, expected {expected[i]}")
    print("reference table check: " + ("pass" if not bad else "FAIL"))
    return EXIT_OK if not bad else EXIT_VERIFY


def cmd_gradcheck(args) -> int:
    cfg = _model_config(args)
    model = init_model(cfg, args.seed)
    h, w, c = cfg.input_shape
    rng = np.random.default_rng(args.seed)
    x = rng.random((args.batch, h, w, c))
    labels = np.arange(args.batch) % 2
    err = grad_check(model, x, labels, n_params=args.params, eps=args.eps, seed=args.seed)
    ok = err < args.tol
    print(f"max relative error {err:.3e} over {args.params} parameters: {'pass' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_train(args) -> int:
    doc = _read_config(args)
    out = _need_out(args)
    manifest = _manifest_or_synth(args)
    tc = TrainConfig.from_dict({**doc.get("train", {}), "seed": args.seed})
    if args.epochs is not None:
        tc = TrainConfig.from_dict({**tc.to_dict(), "epochs": args.epochs})
    model, history = train(_model_config(args), manifest, tc, load_policy(args.policy))
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.bin")
    history.write_csv(out / "history.csv")
    print(f"final train acc {history.train_acc[-1]:.4f}, val acc {history.val_acc[-1]:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = _manifest_or_synth(args)
    model = load_model(args.model, _model_config(args))
    acc = evaluate(model, manifest, args.split, load_policy(args.policy), args.seed)
    _print({"split": args.split, "policy": args.policy, "accuracy": acc})
    return EXIT_OK


def cmd_experiment(args) -> int:
    out = _need_out(args)
    cfg = ExperimentConfig.from_dict(_read_config(args), master_seed=args.seed,
                                     replicates=args.replicates, workers=args.workers)
    reports, verdict, neutral = run_experiment(cfg, out)
    for name, gap in verdict.gaps.items():
        print(f"{name:13s} gap {gap:+.4f}")
    for pair, ok in verdict.pairs.items():
        print(f"{pair:24s} {'ok' if ok else 'VIOLATED'}")
    neutral_ok = all(n["pass"] for n in neutral)
    print(f"gap(full) < 0.05: {verdict.full_small}; gap(none) >= gap(full) + 0.05: {verdict.none_margin}")
    print(f"size neutralization: {'pass' if neutral_ok else 'FAIL'}")
    return EXIT_OK if verdict.passed and neutral_ok else EXIT_VERIFY


# -- parser -------------------------------------------------------------------------

def _globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=d if suppress else 0, help="master seed")
    parser.add_argument("--config", default=d, help="JSON config file")
    parser.add_argument("--out", default=d, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lesionaug", description="Lesion-size augmentation experiments.")
    _globals(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        _globals(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate a synthetic dataset")
    p.add_argument("--preset", choices=["default", "paper"], default=None, help="split-size preset")

    p = add("augment", cmd_augment, "apply a policy to a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--policy", default="table1", help="preset name or policy JSON")
    p.add_argument("--epoch", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)

    p = add("stats", cmd_stats, "size / KS / probe report")
    p.add_argument("--manifest", help="defaults to an in-memory synthetic dataset")
    p.add_argument("--policy", default="none")
    p.add_argument("--check", action="store_true", help="verify size neutralization under the table1 policy")

    p = add("param-table", cmd_param_table, "print layer shapes and parameter counts")
    p.add_argument("--preset", choices=sorted(MODEL_PRESETS), default="vgg19")
    p.add_argument("--check-table3", action="store_true")

    p = add("gradcheck", cmd_gradcheck, "finite-difference gradient check")
    p.add_argument("--preset", choices=sorted(MODEL_PRESETS), default="micro")
    p.add_argument("--params", type=int, default=200)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--tol", type=float, default=1e-4)

    p = add("train", cmd_train, "train a model")
    p.add_argument("--manifest", help="defaults to an in-memory synthetic dataset")
    p.add_argument("--preset", choices=sorted(MODEL_PRESETS), default="micro")
    p.add_argument("--policy", default="none")
    p.add_argument("--epochs", type=int, default=None)

    p = add("eval", cmd_eval, "evaluate a saved model")
    p.add_argument("--manifest", help="defaults to an in-memory synthetic dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--preset", choices=sorted(MODEL_PRESETS), default="micro")
    p.add_argument("--split", default="test")
    p.add_argument("--policy", default="table2")

    p = add("experiment", cmd_experiment, "run the five-regime experiment")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    return parser


def cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (OSError, ManifestError, ImageFormatError, ShapeMismatch, json.JSONDecodeError,
            KeyError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
