"""Command-line entry point: data generation, training, evaluation, ablation
grids and diagnostics.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="idol",
        description="Multi-task tropical-cyclone attribute estimation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--config", help="generator config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override config seed")

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--config", help="train config JSON")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--seed", type=int, help="override config seed")

    p = sub.add_parser("eval", help="evaluate a finished run")
    p.add_argument("--run", required=True, help="run directory from train")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", default="test", help="split to evaluate")

    p = sub.add_parser("ablate", help="run an ablation grid")
    p.add_argument("--grid", required=True, help="preset name or JSON file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--config", help="base train config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override config seed")

    p = sub.add_parser("diagnose", help="distribution-shift diagnostics")
    p.add_argument("--run", help="run directory from train")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--out", help="report output directory")
    p.add_argument(
        "--dump-graph",
        action="store_true",
        help="print the factor-attribute adjacency as JSON and exit",
    )
    p.add_argument(
        "--random-dk-graph",
        action="store_true",
        help="dump the seed-permuted adjacency instead of the real one",
    )
    p.add_argument("--seed", type=int, default=0)
    return parser


def _load_json(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _cmd_gen_data(args) -> int:
    from idol.data import GeneratorConfig, generate_dataset

    cfg_dict = _load_json(args.config)
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    config = GeneratorConfig.from_dict(cfg_dict)
    generate_dataset(config, args.out)
    print(f"wrote dataset to {args.out}")
    return 0


def _cmd_train(args) -> int:
    from idol.train import TrainConfig, train

    cfg_dict = _load_json(args.config)
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    config = TrainConfig.from_dict(cfg_dict)
    record = train(config, args.data, args.out)
    metrics = record["test_metrics"]
    for task, m in metrics.items():
        print(f"{task}: MAE={m['MAE']:.3f} RMSE={m['RMSE']:.3f} STD={m['STD']:.3f}")
    return 0


def _cmd_eval(args) -> int:
    from idol.data import load_split
    from idol.train import evaluate_model, load_checkpoint

    model, std, _, _ = load_checkpoint(os.path.join(args.run, "checkpoint"))
    split_data = load_split(args.data, args.split)
    metrics = evaluate_model(model, split_data, std)
    print(json.dumps(metrics, indent=2, sort_keys=True))
    with open(os.path.join(args.run, f"metrics_{args.split}.json"), "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
    return 0


def _cmd_ablate(args) -> int:
    from idol.train import GRID_PRESETS, TrainConfig, ablate

    if args.grid in GRID_PRESETS:
        cells = GRID_PRESETS[args.grid]
    elif os.path.exists(args.grid):
        cells = _load_json(args.grid)
    else:
        raise ValueError(
            f"unknown grid {args.grid!r}; presets: {sorted(GRID_PRESETS)}"
        )
    cfg_dict = _load_json(args.config)
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    config = TrainConfig.from_dict(cfg_dict)
    ablate(cells, config, args.data, args.out)
    print(f"wrote {os.path.join(args.out, 'ablation.csv')}")
    return 0


def _cmd_diagnose(args) -> int:
    from idol.bridge import FACTOR_ATTRIBUTE_ADJACENCY, randomized_adjacency

    if args.dump_graph:
        adj = (
            randomized_adjacency(args.seed)
            if args.random_dk_graph
            else FACTOR_ATTRIBUTE_ADJACENCY
        )
        print(json.dumps({"adjacency": adj.tolist()}))
        return 0

    if not (args.run and args.data and args.out):
        raise ValueError("diagnose needs --run, --data and --out (or --dump-graph)")

    from idol.data import load_split
    from idol.diagnostics import shift_report, write_report
    from idol.train import _forward_split, load_checkpoint

    model, std, _, _ = load_checkpoint(os.path.join(args.run, "checkpoint"))
    train_data = load_split(args.data, "train")
    test_data = load_split(args.data, "test")
    preds_std, ids_test, feats_test = _forward_split(model, test_data, std)
    _, ids_train, feats_train = _forward_split(model, train_data, std)
    preds = std.inverse_labels(preds_std)
    tokens_by_domain = {
        name: {"train": ids_train[name], "test": ids_test[name]}
        for name in ids_test
    }
    report = shift_report(
        train_data["labels"].astype(np.float64),
        test_data["labels"].astype(np.float64),
        preds,
        tokens_by_domain,
        {"train": feats_train, "test": feats_test},
    )
    write_report(report, args.out)
    print(f"wrote {os.path.join(args.out, 'report.json')}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "diagnose": _cmd_diagnose,
}


def main(argv=None) -> int:
    threads = os.environ.get("IDOL_THREADS")
    if threads:
        try:
            import torch

            torch.set_num_threads(int(threads))
        except ValueError:
            print("IDOL_THREADS must be an integer", file=sys.stderr)
            return 1
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help, 2 for usage errors; map the latter to 1.
        return 0 if exc.code == 0 else 1
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures exit 2
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
