from __future__ import annotations

import argparse
import json
import sys
from typing import List, Optional

from errors import UsageError, WorkbenchError
from experiments.recipes import (
    cmd_align,
    cmd_diagnose,
    cmd_ingest,
    cmd_probe,
    cmd_synth,
    cmd_train_cf,
    cmd_train_fusion,
    cmd_train_sem,
)
from experiments.report import cmd_report
from logging_utils import log_event


class WorkbenchParser(argparse.ArgumentParser):
    """argparse reports usage errors by raising instead of exiting."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="key = value file with [command] sections")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting")


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", default=None, help="dataset bundle directory")
    p.add_argument("--ckpt", default=None, help="checkpoint directory (default <out>/<kind>.ckpt)")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--n-neg", type=int, default=None)
    p.add_argument("--embedding-dim", type=int, default=None)
    p.add_argument("--n-layers", type=int, default=None)
    p.add_argument("--eval-k", type=int, default=None)
    p.add_argument("--init-std", type=float, default=None)


def _probe_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", default=None)
    p.add_argument("--cf", default=None, help="collaborative checkpoint")
    p.add_argument("--sem", default=None, help="semantic checkpoint")
    p.add_argument("--item-split", dest="item_fraction", type=float, default=None)
    p.add_argument("--recall-mode", choices=("restricted", "mixed"), default=None)
    p.add_argument("--geo-k", type=int, default=None)
    p.add_argument("--rank-sample", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--max-epochs", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = WorkbenchParser(
        prog="app.py",
        description="Complementarity workbench for collaborative and semantic recommenders.",
    )
    sub = parser.add_subparsers(dest="command", parser_class=WorkbenchParser)

    p = sub.add_parser("ingest", help="load interactions, filter, split and bundle them")
    _common(p)
    p.add_argument("--interactions", default=None, help="user<TAB>item[<TAB>timestamp] file")
    p.add_argument("--item-vectors", default=None, help="item content vectors (.emb)")
    p.add_argument("--item-ids", default=None, help="raw item id per vector row")
    p.add_argument("--kcore", type=int, default=None)
    p.add_argument("--ratios", default=None, help="train,val,test (default 0.8,0.1,0.1)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate synthetic shared/private latent worlds")
    _common(p)
    p.add_argument("--alpha", dest="alphas", default=None, help="comma list of shared fractions")
    p.add_argument("--n-users", type=int, default=None)
    p.add_argument("--n-items", type=int, default=None)
    p.add_argument("--k-shared", type=int, default=None)
    p.add_argument("--k-cf", type=int, default=None)
    p.add_argument("--k-sem", type=int, default=None)
    p.add_argument("--d-sem", type=int, default=None)
    p.add_argument("--interactions-per-user", type=int, default=None)
    p.add_argument("--noise-sigma", type=float, default=None)
    p.add_argument("--ratios", default=None)
    p.set_defaults(func=cmd_synth)

    for name, func in (("train-cf", cmd_train_cf), ("train-sem", cmd_train_sem), ("train-fusion", cmd_train_fusion)):
        p = sub.add_parser(name, help=f"train and checkpoint the {name[len('train-'):]} model")
        _common(p)
        _train_flags(p)
        if name == "train-fusion":
            p.add_argument("--hard-pool", type=int, default=None)
            p.add_argument("--hard-m", type=int, default=None)
            p.add_argument("--freeze-semantic", action="store_const", const=True, default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("probe", help="fit mappings from the semantic to the collaborative space")
    _common(p)
    _probe_flags(p)
    p.add_argument("--arch", dest="archs", default=None, help="comma list, e.g. Linear,MLP-1,MLP-2")
    p.add_argument("--solver", choices=("adam", "lstsq"), default=None)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("align", help="contrastive alignment baseline")
    _common(p)
    _probe_flags(p)
    p.add_argument("--temperature", dest="align_temperature", type=float, default=None)
    p.add_argument("--align-epochs", type=int, default=None)
    p.add_argument("--align-dim", type=int, default=None)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("diagnose", help="complementarity and fusion diagnostics")
    _common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--a", default=None, help="first checkpoint")
    p.add_argument("--b", default=None, help="second checkpoint")
    p.add_argument("--fused", default=None, help="fusion checkpoint")
    p.add_argument("--k", default=None, help="comma list of cutoffs (default 5,10,20)")
    p.add_argument("--sweep-k", default=None, help="cutoffs of the plot sweep")
    p.add_argument("--export-lists", action="store_const", const=True, default=None)
    p.add_argument("--export-embeddings", action="store_const", const=True, default=None)
    p.add_argument("--neighbors", type=int, default=None, help="neighbours per anchor")
    p.add_argument("--anchors", default=None, help="comma list of raw item ids")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("report", help="consolidate a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            raise UsageError("a command is required; see app.py --help")
        summary = args.func(args)
    except WorkbenchError as exc:
        log_event("CLI_ERROR", error_type=type(exc).__name__, exit_code=exc.exit_code, error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
