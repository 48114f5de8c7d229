"""Command-line interface.

Subcommands cover the whole workflow: generate or inspect interaction
logs, carve subsets, train, evaluate checkpoints, run multi-seed sweeps,
and turn a baseline sweep into an encoding recommendation.

Exit codes: 0 success, 1 expected failure (bad flags, bad files, diverged
training), 2 internal error.  The default output root is $POSREC_OUT, or
./runs when unset; --out and the config's `out` key override it.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import shutil
import sys
import traceback

from . import stability, synth
from .data import (format_stats_table, load_attributes, load_interactions,
                   leave_one_out, save_cache, save_interactions, stats,
                   subset, write_stats_tsv)
from .errors import PosrecError, UserError
from .metrics import evaluate
from .model import load_checkpoint, save_checkpoint, train, write_history_tsv
from .numeric.rng import Rng
from .runconfig import (RunConfig, build_model_config, load_run_config,
                        resolve_dataset)
from .stability import read_summary_tsv, recommend_encoding

TEST_EVAL_STREAM = 5  # train() evaluates the test split on root.child(5)


def _progress(message: str) -> None:
    print(message, file=sys.stderr)


def _parse_nmax(text: str | None):
    if text is None:
        return None
    if text.strip().lower() in ("none", "nan"):
        return math.nan  # normalised to "unbounded" by the model config
    try:
        return float(text)
    except ValueError:
        raise UserError(f"--nmax expects a float or 'none', got '{text}'") from None


def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(part) for part in text.replace(",", " ").split()]
    except ValueError:
        raise UserError(f"--seeds expects comma-separated integers, got '{text}'") from None
    if not seeds:
        raise UserError("--seeds is empty")
    return seeds


def _resolve_out(flag_value: str | None, config_value: str | None, name: str) -> str:
    base = flag_value or config_value
    if base:
        return base
    return os.path.join(os.environ.get("POSREC_OUT", "runs"), name)


def _echo_config(config_path: str | None, run_dir: str) -> None:
    # byte-for-byte copy, so the run records exactly what was asked for
    if config_path:
        shutil.copyfile(config_path, os.path.join(run_dir, "config.yaml"))


def _write_resolved(run_dir: str, payload: dict) -> None:
    with open(os.path.join(run_dir, "resolved.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _dataset_info(ds) -> dict:
    return {"source": ds.source or "-", "users": ds.num_users,
            "items": ds.num_items, "interactions": ds.num_interactions}


def _load_run_config(args) -> RunConfig:
    rc = load_run_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "preset", None):
        rc.preset = args.preset
    return rc


def _model_overrides(args) -> dict:
    return {
        "encoding": getattr(args, "encoding", None),
        "nmax": _parse_nmax(getattr(args, "nmax", None)),
        "activation": getattr(args, "activation", None),
        "lr": getattr(args, "lr", None),
        "epochs": getattr(args, "epochs", None),
        "extra_epochs": getattr(args, "extra_epochs", None),
        "eval_negatives": getattr(args, "negatives", None),
        "seed": getattr(args, "seed", None),
    }


def _load_dataset_direct(args):
    ds = load_interactions(args.data) if args.min_interactions is None else \
        load_interactions(args.data, min_interactions=args.min_interactions)
    if getattr(args, "attributes", None):
        load_attributes(args.attributes, ds)
    return ds


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    out_dir = os.path.dirname(args.out)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    synth.write_dataset(args.profile, args.users, args.items, args.seq_len,
                        seed=args.seed, shift=args.shift, path=args.out)
    print(f"wrote {args.users * args.seq_len} interactions to {args.out}")
    return 0


def cmd_stats(args) -> int:
    ds = _load_dataset_direct(args)
    values = stats(ds)
    print(format_stats_table(values))
    if args.out:
        out_dir = os.path.dirname(args.out)
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
        write_stats_tsv(values, args.out)
    return 0


def cmd_subset(args) -> int:
    ds = _load_dataset_direct(args)
    small = subset(ds, args.users, args.items, Rng(args.seed))
    out_dir = os.path.dirname(args.out)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    if args.out.endswith(".npz"):
        save_cache(small, args.out)
    else:
        save_interactions(small, args.out)
    print(format_stats_table(stats(small)))
    print(f"wrote {args.out}")
    return 0


def cmd_train(args) -> int:
    rc = _load_run_config(args)
    config = build_model_config(rc, _model_overrides(args))
    ds = resolve_dataset(rc.data, path_override=args.data)

    run_dir = _resolve_out(args.out, rc.out, "train")
    os.makedirs(run_dir, exist_ok=True)
    _echo_config(args.config, run_dir)
    _write_resolved(run_dir, {"command": "train", "config": config.as_dict(),
                              "dataset": _dataset_info(ds), "run_dir": run_dir})

    result = train(config, ds, progress=_progress if not args.quiet else None)

    write_history_tsv(result.history, os.path.join(run_dir, "history.tsv"))
    save_checkpoint(result.model, os.path.join(run_dir, "checkpoint.npz"))
    print(f"best epoch {result.best_epoch}  "
          f"valid Hit@10 {result.valid_hit:.2f}  NDCG {result.valid_ndcg:.2f}")
    print(f"test Hit@10 {result.test_hit:.2f}  NDCG {result.test_ndcg:.2f}")
    if result.skipped_users:
        print(f"skipped {result.skipped_users} user(s) with too little history")
    print(f"artifacts: {run_dir}")
    return 0


def cmd_evaluate(args) -> int:
    rc = _load_run_config(args)
    ds = resolve_dataset(rc.data, path_override=args.data)
    model = load_checkpoint(args.checkpoint)
    if model.num_items != ds.num_items:
        raise UserError(f"checkpoint was trained over {model.num_items} items, "
                        f"dataset has {ds.num_items}")
    split = leave_one_out(ds)
    rows = split.test if args.split == "test" else split.valid
    rng = Rng(args.seed).child(TEST_EVAL_STREAM)
    result = evaluate(model, rows, args.negatives, rng)
    print(result.tsv(), end="")
    if args.out:
        out_dir = os.path.dirname(args.out)
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(result.tsv())
    return 0


def cmd_sweep(args) -> int:
    rc = _load_run_config(args)
    config = build_model_config(rc, _model_overrides(args))
    ds = resolve_dataset(rc.data, path_override=args.data)

    if args.seeds:
        seeds = _parse_seeds(args.seeds)
    elif rc.sweep.get("seeds"):
        seeds = [int(s) for s in rc.sweep["seeds"]]
    else:
        raise UserError("no seeds: pass --seeds or set sweep.seeds in the config")
    jobs = args.jobs if args.jobs is not None else int(rc.sweep.get("jobs", 1))

    run_dir = _resolve_out(args.out, rc.out, "sweep")
    os.makedirs(run_dir, exist_ok=True)
    _echo_config(args.config, run_dir)
    _write_resolved(run_dir, {"command": "sweep", "config": config.as_dict(),
                              "dataset": _dataset_info(ds), "seeds": seeds,
                              "jobs": jobs, "run_dir": run_dir})

    stability.sweep(config, ds, seeds, jobs=jobs, out_dir=run_dir,
                    progress=_progress if not args.quiet else None)
    with open(os.path.join(run_dir, stability.RESULTS_NAME), encoding="utf-8") as fh:
        print(fh.read(), end="")
    print(f"artifacts: {run_dir}")
    return 0


def cmd_recommend(args) -> int:
    path = args.results
    if os.path.isdir(path):
        path = os.path.join(path, stability.RESULTS_NAME)
    parsed = read_summary_tsv(path)
    rec = recommend_encoding(parsed["summary"], threshold=args.threshold)
    print(f"recommended encoding: {rec.choice}")
    print(rec.reason)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run config")
    p.add_argument("--data", help="interactions file (overrides the config)")
    p.add_argument("--preset", help="named hyperparameter preset")
    p.add_argument("--encoding", help="positional encoding variant")
    p.add_argument("--nmax", help="embedding max-norm bound; 'none' lifts it")
    p.add_argument("--activation", help="feed-forward activation")
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--epochs", type=int, help="training epochs")
    p.add_argument("--extra-epochs", type=int, dest="extra_epochs",
                   help="epochs appended after the scheduled run")
    p.add_argument("--negatives", type=int,
                   help="sampled negatives per evaluation user; 0 ranks the full catalogue")
    p.add_argument("--out", help="run directory")
    p.add_argument("--quiet", action="store_true", help="suppress progress lines")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posrec",
        description="Positional-encoding workbench for sequential recommenders.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic interaction log")
    p.add_argument("--profile", required=True, choices=synth.PROFILES)
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--items", type=int, required=True)
    p.add_argument("--seq-len", type=int, required=True, dest="seq_len")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shift", type=int, default=7,
                   help="offset of the two-back rule in the positional profile")
    p.add_argument("--out", required=True, help="TSV path to write")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="summarize an interaction log")
    p.add_argument("data")
    p.add_argument("--min-interactions", type=int, default=None, dest="min_interactions")
    p.add_argument("--attributes", help="item attribute sidecar CSV")
    p.add_argument("--out", help="also write the stats as TSV")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("subset", help="carve a dense subset by item popularity")
    p.add_argument("data")
    p.add_argument("--users", type=int, required=True, help="user budget")
    p.add_argument("--items", type=int, required=True, help="item budget")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-interactions", type=int, default=None, dest="min_interactions")
    p.add_argument("--attributes", help="item attribute sidecar CSV")
    p.add_argument("--out", required=True, help=".tsv or .npz path to write")
    p.set_defaults(func=cmd_subset)

    p = sub.add_parser("train", help="train one model")
    _add_model_flags(p)
    p.add_argument("--seed", type=int, help="training seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a saved checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--config", help="YAML run config (for its data section)")
    p.add_argument("--data", help="interactions file")
    p.add_argument("--split", choices=("test", "valid"), default="test")
    p.add_argument("--negatives", type=int, default=100,
                   help="sampled negatives per user; 0 ranks the full catalogue")
    p.add_argument("--seed", type=int, default=0,
                   help="sampling seed; the training seed reproduces that run's test metrics")
    p.add_argument("--out", help="also write the result row as TSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="train one config under several seeds")
    _add_model_flags(p)
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--jobs", type=int, help="parallel workers")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("recommend-encoding",
                       help="pick an encoding from a baseline sweep's deviation")
    p.add_argument("results", help="sweep results.tsv, or the sweep directory")
    p.add_argument("--threshold", type=float, default=stability.DEVIATION_THRESHOLD)
    p.set_defaults(func=cmd_recommend)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        code = err.code if isinstance(err.code, int) else 1
        return 0 if code == 0 else 1
    try:
        return args.func(args)
    except PosrecError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


def entry() -> None:
    sys.exit(main())
