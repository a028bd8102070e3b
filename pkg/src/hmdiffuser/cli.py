"""Command-line entry point: ``python -m hmdiffuser.cli <command> [flags]``.

Exit codes: 0 success, 2 configuration or usage error, 3 runtime abort.
"""

from __future__ import annotations

import argparse
import sys

from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from .dataset import DatasetError
from .harness import (MODELS, PipelineError, metrics_csv, run_collect, run_eval, run_pte,
                      run_report, run_train)
from .maze import LayoutError, load_layout
from .pte import PTEAbort

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--layout", help="mini, large, giant, xxlarge or custom:<path>")
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key, e.g. --set stitch.n=200")

    p = _Parser(prog="hmdiffuser", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("collect", parents=[common], help="collect the base dataset")
    pte = sub.add_parser("pte", parents=[common], help="run PTE rounds")
    pte.add_argument("--strategy", choices=("linear", "exponential"))
    pte.add_argument("--rounds", type=int)
    pte.add_argument("--aggregate", action="store_true", help="also write the union dataset")
    tr = sub.add_parser("train", parents=[common], help="train one model")
    tr.add_argument("which", metavar="MODEL", help=f"one of {', '.join(MODELS)}")
    tr.add_argument("--resume", action="store_true", help="continue from an existing checkpoint")
    ev = sub.add_parser("eval", parents=[common], help="evaluate a planner")
    ev.add_argument("--planner", choices=("flat", "hd", "hmd"))
    ev.add_argument("--task", choices=("single", "multi"))
    ev.add_argument("--seeds", type=int)
    me = sub.add_parser("metrics", parents=[common], help="dataset metrics as CSV")
    me.add_argument("files", nargs="+")
    sub.add_parser("report", parents=[common], help="summarize manifests and eval reports")
    return p


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for flag, key in (("seed", "seed"), ("layout", "layout"), ("out", "out"),
                      ("rounds", "stitch.rounds"), ("strategy", "stitch.strategy"),
                      ("planner", "eval.planner"), ("task", "eval.task"), ("seeds", "eval.seeds")):
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = str(value)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "collect":
            run_collect(cfg)
        elif args.command == "pte":
            run_pte(cfg, cfg.stitch.strategy, cfg.stitch.rounds, args.aggregate)
        elif args.command == "train":
            if args.which not in MODELS:
                raise ConfigError(f"unknown model {args.which!r}; choose from {', '.join(MODELS)}")
            run_train(cfg, args.which, args.resume)
        elif args.command == "eval":
            run_eval(cfg, cfg.eval.planner, cfg.eval.task, cfg.eval.seeds)
        elif args.command == "metrics":
            sys.stdout.write(metrics_csv(args.files, load_layout(cfg.layout)))
        elif args.command == "report":
            run_report(cfg)
    except (ConfigError, LayoutError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PTEAbort as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        for k, v in sorted(exc.manifest.items()):
            print(f"  {k}: {v}", file=sys.stderr)
        return EXIT_ABORT
    except (PipelineError, CheckpointError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
