"""Command-line interface.

Subcommands cover the whole pipeline: ``preprocess``, ``pretrain``,
``train``, ``evaluate``, ``recommend``, ``interpret``.  Configuration is a
flat key=value file (``--config``) overridden by ``--set key=value`` pairs
and by explicit flags.  Exit codes: 0 success, 1 usage or configuration
error, 2 data error, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .config import ConfigError, RunConfig, load_config, parse_config_text
from .data import DataError
from .pipeline import (
    run_evaluate,
    run_interpret,
    run_preprocess,
    run_pretrain,
    run_recommend,
    run_train,
)
from .train import DivergenceError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key (repeatable)")
    p.add_argument("--checkins", dest="checkins", help="raw check-in file")
    p.add_argument("--pois", dest="pois", help="POI file")
    p.add_argument("--user-meta", dest="user_meta", help="user meta file")
    p.add_argument("--outdir", dest="outdir", help="output directory")
    p.add_argument("--seed", dest="seed", type=int, help="global seed")
    p.add_argument("--threads", dest="threads", type=int,
                   help="worker-thread cap (present implementation is single-threaded)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nextrec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="filter, split and bundle the corpus")
    _add_common(p)
    p.add_argument("--min-user-checkins", dest="min_user_checkins", type=int)
    p.add_argument("--min-poi-users", dest="min_poi_users", type=int)

    p = sub.add_parser("pretrain", help="random walks + skip-gram POI embeddings")
    _add_common(p)
    p.add_argument("--rho", dest="rho", type=float, help="geo/transition mixture weight")

    p = sub.add_parser("train", help="train the intent model")
    _add_common(p)
    p.add_argument("--dim", dest="dim", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", dest="patience", type=int)
    p.add_argument("--no-meta", dest="use_meta", action="store_false", default=None)
    p.add_argument("--no-interval", dest="use_interval", action="store_false", default=None)
    p.add_argument("--no-timeslot", dest="use_timeslot", action="store_false", default=None)
    p.add_argument("--no-pretrain", action="store_true",
                   help="random embedding initialization instead of pretrained tables")

    p = sub.add_parser("evaluate", help="rank the held-out segments")
    _add_common(p)
    p.add_argument("--model", required=True, help="model archive path")
    p.add_argument("--segment", required=True, choices=["validation", "test", "coldstart"])
    p.add_argument("--heldout-users", dest="heldout_users",
                   help="held-out-user id file (default: <outdir>/data/heldout_users.txt)")

    p = sub.add_parser("recommend", help="print top-K next POIs for one query")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--user", help="user id (omit for a cold-start user)")
    p.add_argument("--prev-poi", required=True, dest="prev_poi")
    p.add_argument("--prev-time", required=True, dest="prev_time", type=int,
                   help="previous check-in time, epoch seconds")
    p.add_argument("--time", required=True, dest="query_time", type=int,
                   help="query time, epoch seconds")
    p.add_argument("-K", dest="topk", type=int, default=10)
    p.add_argument("--cold-user-meta", dest="cold_user_meta",
                   help="comma-separated meta items of a cold-start user")

    p = sub.add_parser("interpret", help="per-dimension top meta words")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--top-n", dest="top_n", type=int, default=10)

    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = load_config(args.config)
    if args.overrides:
        cfg = parse_config_text("\n".join(args.overrides), base=cfg)
    for f in dataclasses.fields(RunConfig):
        if hasattr(args, f.name):
            value = getattr(args, f.name)
            if value is not None:
                setattr(cfg, f.name, value)
    cfg.validate()
    return cfg


def _dispatch(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if args.command == "preprocess":
        run_preprocess(cfg)
    elif args.command == "pretrain":
        run_pretrain(cfg)
    elif args.command == "train":
        result, model_path = run_train(cfg, no_pretrain=args.no_pretrain)
        best = result.history[result.best_epoch - 1]
        print(f"best epoch {result.best_epoch}: validation MAP {best.valid_map:.4f}")
        print(f"model written to {model_path}")
    elif args.command == "evaluate":
        result, _records = run_evaluate(cfg, args.model, args.segment, args.heldout_users)
        for name, value in result.metric_rows():
            print(f"{name}\t{value!r}")
        if result.skipped:
            print(f"skipped_users\t{result.skipped}")
    elif args.command == "recommend":
        cold_items = None
        if args.cold_user_meta is not None:
            cold_items = [w for w in args.cold_user_meta.split(",") if w]
        if args.user is None and cold_items is None:
            raise ConfigError("recommend needs --user or --cold-user-meta")
        rows = run_recommend(
            cfg,
            args.model,
            args.user,
            args.prev_poi,
            args.prev_time,
            args.query_time,
            args.topk,
            cold_items,
        )
        for rank, poi_id, value in rows:
            print(f"{rank}\t{poi_id}\t{value!r}")
    elif args.command == "interpret":
        path = run_interpret(cfg, args.model, args.top_n)
        print(f"dimension keywords written to {path}")
    else:  # pragma: no cover - argparse enforces the choices
        raise ConfigError(f"unknown command {args.command!r}")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _dispatch(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
