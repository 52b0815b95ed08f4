"""Command-line entry point: ``autos {gen,run,eval,gradcheck}``.

Exit codes: 0 success, 1 failed gradient check, 2 config error, 3 data error,
4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import generate_pretraining_split, generate_synthetic, read_labels, write_feature_table, write_labels
from .errors import ConfigError, DataError, NumericError, ShapeError
from .gradcheck import gradient_suite
from .pipeline import RunConfig, emit_report, evaluate, load_config, run_pipeline

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4
GRAD_TOLERANCE = 1e-4


def _config(args) -> RunConfig:
    overrides = {} if args.seed is None else {"seed": args.seed}
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = str(args.out)
    if args.config is None:
        return RunConfig.from_flat(overrides).validate()
    return load_config(args.config, overrides).validate()


def cmd_gen(args) -> int:
    """Write the synthetic suite as CSV tables plus a config that runs on them."""
    cfg = _config(args)
    if cfg.data.synthetic is None:
        raise ConfigError("gen needs a synthetic data section")
    spec, out = cfg.data.synthetic, Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sources, target = generate_synthetic(spec, cfg.seed)
    paths = [write_feature_table(s, out / f"{s.name}.csv") for s in sources]
    write_feature_table(target.unlabeled(), out / "target.csv")
    write_labels(target.ids, target.hidden_labels, out / "target_labels.csv")
    pretrain = generate_pretraining_split(spec, cfg.seed, cfg.data.teacher_per_class)
    write_feature_table(pretrain, out / "pretrain.csv")

    flat = cfg.to_flat()
    flat = {k: v for k, v in flat.items() if not k.startswith("data.synthetic")}
    flat.update({"data.synthetic": None, "data.source_paths": [str(p) for p in paths],
                 "data.target_path": str(out / "target.csv"),
                 "data.target_labels_path": str(out / "target_labels.csv"),
                 "data.teacher_path": str(out / "pretrain.csv"), "data.class_count": spec.C})
    (out / "config.json").write_text(json.dumps(flat, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {len(paths)} sources, target and config to {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    report = run_pipeline(cfg)
    written = emit_report(report, cfg.out_dir)
    summary = {k: report.final[k] for k in ("kept", "kept_count", "accuracy")}
    summary["report"] = str(written["report"])
    print(json.dumps(summary))
    return EXIT_OK


def cmd_eval(args) -> int:
    ids, preds = read_labels(args.predictions, column="pred_label")
    gold_ids, gold = read_labels(args.labels)
    order = {i: j for j, i in enumerate(gold_ids)}
    missing = [i for i in ids if i not in order]
    if missing:
        raise DataError(f"{args.labels}: no label for id {missing[0]}")
    acc = evaluate(preds, gold[[order[i] for i in ids]])
    print(json.dumps({"accuracy": acc, "n": len(ids)}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradient_suite(args.seed or 0, args.instances)
    worst = {k: max(v) for k, v in results.items()}
    for name, err in worst.items():
        print(f"{name}: max relative error {err:.3e} over {len(results[name])} instances")
    return EXIT_OK if max(worst.values()) <= GRAD_TOLERANCE else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="autos", description="Multi-source domain adaptation with source selection.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", type=Path, help="flat JSON config with dotted keys")
        p.add_argument("--seed", type=int, help="override the config seed")
        if out:
            p.add_argument("--out", type=Path, help="output directory")

    p = sub.add_parser("gen", help="write the synthetic suite as CSV files")
    common(p)
    p.set_defaults(func=cmd_gen)
    p = sub.add_parser("run", help="run the pipeline and write the report")
    common(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("eval", help="accuracy of a predictions CSV against a labels CSV")
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True)
    p.set_defaults(func=cmd_eval)
    p = sub.add_parser("gradcheck", help="finite-difference check of the loss gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
