"""Command-line entry points: ingest, train, eval, verify, synth.

Every command exits 0 on success and nonzero with a single-line
machine-parseable diagnostic (``poirank: error code=<slug> msg=...``) on
failure. Exit code 2 marks input/configuration problems, 1 runtime
failures. Report-producing commands render a PNG figure next to each
delimited output file.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys

import numpy as np

from . import data as data_mod
from . import evaluation, plots, training, verify
from .config import RunConfig, RunConfigError, echo_config, load_run_config
from .model import ConfigError, load_checkpoint
from .synth import SynthSpec, generate_checkins, write_checkin_file


class CliError(RuntimeError):
    def __init__(self, code: str, message: str, exit_code: int = 1) -> None:
        super().__init__(message)
        self.code = code
        self.exit_code = exit_code


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require_file(path: str, what: str) -> None:
    if not os.path.exists(path):
        raise CliError("missing_file", f"{what} not found: {path}", exit_code=2)


def _load_config(args: argparse.Namespace, overrides: dict[str, object]) -> RunConfig:
    try:
        return load_run_config(getattr(args, "config", None), overrides)
    except RunConfigError as exc:
        raise CliError("config", str(exc), exit_code=2) from exc


def _common_overrides(args: argparse.Namespace) -> dict[str, object]:
    out: dict[str, object] = {}
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    return out


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = _load_config(args, {**_common_overrides(args),
                              "data": args.data, "cache": args.out})
    _require_file(cfg.data, "data file")
    digest = _sha256_file(cfg.data)
    if os.path.exists(cfg.cache):
        try:
            _, cached_digest = data_mod.read_cache(cfg.cache)
        except Exception:
            cached_digest = ""
        if cached_digest == digest:
            print(f"cache {cfg.cache} is up to date")
            return 0
    with open(cfg.data, encoding="utf-8") as f:
        checkins, users, pois = data_mod.parse_checkins(f)
    split = data_mod.filter_and_split(checkins)
    data_mod.write_cache(split, cfg.cache, source_digest=digest)
    echo_config(cfg, cfg.cache + ".config.txt")
    n_train = sum(len(v) for v in split.train.values())
    n_eval = sum(len(v) for v in split.eval.values())
    print(f"parsed {len(checkins)} check-ins ({len(users)} users, {len(pois)} POIs)")
    print(f"after filtering: {split.stats.num_users} users, {split.stats.num_pois} POIs, "
          f"{n_train + n_eval} check-ins ({n_train} train / {n_eval} eval)")
    print(f"wrote {cfg.cache}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    overrides: dict[str, object] = _common_overrides(args)
    if args.cache:
        overrides["cache"] = args.cache
    if args.out:
        overrides["out_dir"] = args.out
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.k_negatives is not None:
        overrides["k_negatives"] = args.k_negatives
    if args.no_temporal_bias:
        overrides["temporal_bias"] = False
    if args.no_spatial_bias:
        overrides["spatial_bias"] = False
    if args.no_history_attn:
        overrides["history_attn"] = False
    cfg = _load_config(args, overrides)
    _require_file(cfg.cache, "cache file")
    try:
        model_config = cfg.model_config()
        train_config = cfg.train_config()
    except (ConfigError, ValueError) as exc:
        raise CliError("config", str(exc), exit_code=2) from exc
    split, _ = data_mod.read_cache(cfg.cache)
    os.makedirs(cfg.out_dir, exist_ok=True)
    echo_config(cfg, os.path.join(cfg.out_dir, "effective_config.txt"))
    result = training.train(split, model_config, train_config, out_dir=cfg.out_dir)
    plots.render_training_curves(result.log, os.path.join(cfg.out_dir, "training_curve.png"))
    last = result.log[-1]
    print(f"trained {last['epoch']} epochs; best val MRR {result.best_val_mrr:.4f} "
          f"at epoch {result.best_epoch}")
    if result.diverged:
        raise CliError("diverged", "training loss became non-finite; kept last finite checkpoint")
    print(f"checkpoint: {os.path.join(cfg.out_dir, 'checkpoint.ckpt')}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    overrides: dict[str, object] = _common_overrides(args)
    if args.cache:
        overrides["cache"] = args.cache
    if args.out:
        overrides["out_dir"] = args.out
    if args.pool:
        overrides["pool"] = args.pool
    if args.pool_size is not None:
        overrides["pool_size"] = args.pool_size
    cfg = _load_config(args, overrides)
    _require_file(args.checkpoint, "checkpoint")
    _require_file(cfg.cache, "cache file")
    params, model_config, num_pois = load_checkpoint(args.checkpoint)
    split, _ = data_mod.read_cache(cfg.cache)
    scorer = evaluation.model_scorer(params, model_config, split.stats)
    os.makedirs(cfg.out_dir, exist_ok=True)
    echo_config(cfg, os.path.join(cfg.out_dir, "effective_config.txt"))

    if args.sweep:
        try:
            sizes = [int(s) for s in args.sweep.split(",") if s]
        except ValueError:
            raise CliError("config", f"bad --sweep list: {args.sweep!r}", exit_code=2) from None
        try:
            curve = evaluation.pool_size_sweep(scorer, split, sizes, seed=cfg.seed,
                                               max_poi_id=num_pois)
        except evaluation.PoolError as exc:
            raise CliError("pool", str(exc), exit_code=2) from exc
        sweep_path = os.path.join(cfg.out_dir, "sweep.tsv")
        evaluation.write_sweep(curve, sweep_path)
        plots.render_sweep_figure(curve, os.path.join(cfg.out_dir, "sweep.png"))
        for size, hr10 in curve:
            print(f"pool {size}: HR@10 {hr10:.4f}")
        print(f"wrote {sweep_path}")
        return 0

    try:
        report = evaluation.evaluate(scorer, split, pool_size=cfg.pool_size,
                                     pool_mode=cfg.pool, seed=cfg.seed,
                                     max_poi_id=num_pois)
    except evaluation.PoolError as exc:
        raise CliError("pool", str(exc), exit_code=2) from exc
    report_path = os.path.join(cfg.out_dir, "report.txt")
    evaluation.write_report(report, report_path)
    evaluation.write_ranks(report, os.path.join(cfg.out_dir, "ranks.tsv"))
    plots.render_report_figure(report, os.path.join(cfg.out_dir, "report.png"))
    print(f"instances={report.num_instances} skipped={report.num_skipped} "
          f"pool={report.pool_size}")
    print(f"HR@5={report.hr5:.4f} HR@10={report.hr10:.4f} NDCG@5={report.ndcg5:.4f} "
          f"NDCG@10={report.ndcg10:.4f} MRR={report.mrr:.4f}")
    print(f"wrote {report_path}")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else 0
    results = verify.run_verification(seed=seed, corrupt_param=args.corrupt_grad)
    failed = [r for r in results if not r.passed]
    for r in results:
        marker = "PASS" if r.passed else "FAIL"
        print(f"[{marker}] {r.name}: {r.detail}")
    print(f"{len(results)} checks, {len(failed)} failed")
    if failed:
        raise CliError("verify", f"{len(failed)} verification checks failed: "
                       + ", ".join(r.name for r in failed))
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    overrides: dict[str, object] = _common_overrides(args)
    for key, flag in (("synth_users", args.users), ("synth_pois", args.pois),
                      ("synth_length", args.length), ("synth_zones", args.zones)):
        if flag is not None:
            overrides[key] = flag
    cfg = _load_config(args, overrides)
    spec = SynthSpec(users=cfg.synth_users, pois=cfg.synth_pois,
                     events_per_user=cfg.synth_length, zones=cfg.synth_zones,
                     seed=cfg.seed)
    rows = generate_checkins(spec)
    write_checkin_file(rows, args.out)
    echo_config(cfg, args.out + ".config.txt")
    print(f"wrote {len(rows)} check-ins for {spec.users} users / {spec.pois} POIs to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poirank",
        description="Candidate-conditioned spatiotemporal next-POI ranking")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int, help="random seed override")

    p = sub.add_parser("ingest", parents=[common],
                       help="parse, filter, and split a check-in file into a cache")
    p.add_argument("--data", required=True, help="raw check-in file")
    p.add_argument("--out", required=True, help="cache file to write")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", parents=[common], help="train a ranker from a cache")
    p.add_argument("--cache", help="dataset cache from ingest")
    p.add_argument("--out", help="output directory (checkpoint, run log, figures)")
    p.add_argument("--epochs", type=int, help="max training epochs")
    p.add_argument("--k-negatives", type=int, help="negatives per training instance")
    p.add_argument("--no-temporal-bias", action="store_true",
                   help="ablation: drop the time-gap attention bias")
    p.add_argument("--no-spatial-bias", action="store_true",
                   help="ablation: drop the candidate-distance attention bias")
    p.add_argument("--no-history-attn", action="store_true",
                   help="ablation: skip history self-attention")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cache", help="dataset cache from ingest")
    p.add_argument("--out", help="output directory (report, ranks, figures)")
    p.add_argument("--pool", choices=["sampled", "full"], help="candidate pool mode")
    p.add_argument("--pool-size", type=int, help="sampled pool size (positive + negatives)")
    p.add_argument("--sweep", help="comma-separated pool sizes for a sweep, e.g. 100,500,1000")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", parents=[common],
                       help="run gradient, bucketizer, and masking self-checks")
    p.add_argument("--corrupt-grad", help=argparse.SUPPRESS)  # test hook
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic check-in file")
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int)
    p.add_argument("--pois", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--zones", type=int)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"poirank: error code={exc.code} msg={exc}", file=sys.stderr)
        return exc.exit_code
    except (data_mod.ParseError, data_mod.ValidationError) as exc:
        print(f"poirank: error code=parse msg={exc}", file=sys.stderr)
        return 2
    except (data_mod.EmptyDatasetError, data_mod.DegenerateDatasetError) as exc:
        print(f"poirank: error code=dataset msg={exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # keep failures one-line and machine-parseable
        print(f"poirank: error code=internal msg={type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
