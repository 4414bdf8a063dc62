"""dmt command line: pretrain, finetune, generate, evaluate, sweep, analyze.

Exit codes: 0 success, 2 usage/config/missing input, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import experiments as ex
from .checkpoint import CheckpointError
from .data import DataError
from .gates import GateConfigError
from .variational import DivergenceError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dmt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("pretrain", "finetune", "generate", "evaluate", "sweep", "analyze"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="key=value config file")
        sp.add_argument("--l2", help="comma-separated l^2 values (sweep) or a single value")
        sp.add_argument("--selection", help="preset (decoder13, decoder, encdec) or comma list; "
                                            "for sweep a ';'-separated list")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ex.ConfigError(f"--l2: {exc}") from exc


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    ex.set_deterministic()
    try:
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out:
            overrides["out"] = args.out
        sweep_l2 = _floats(args.l2) if args.l2 else None
        sweep_sel = args.selection.split(";") if args.selection else None
        if args.command != "sweep":
            if sweep_l2:
                overrides["l2"] = sweep_l2[0]
            if args.selection:
                overrides["selection"] = args.selection
        cfg = ex.load_config(args.config, overrides)
        logging.getLogger("dmt").info("resolved config: %s", cfg.echo())

        if args.command == "pretrain":
            result = ex.cmd_pretrain(cfg)
        elif args.command == "finetune":
            result = ex.cmd_finetune(cfg)
        elif args.command == "generate":
            result = ex.cmd_generate(cfg)
        elif args.command == "evaluate":
            result = ex.cmd_finetune_generate_eval(cfg)
            result.pop("config", None)
        elif args.command == "sweep":
            rows = ex.cmd_sweep(cfg, sweep_l2 or [10.0, 1e3, 1e5],
                                [s for s in (sweep_sel or [cfg.selection])])
            result = {"csv": str(cfg.path(".sweep.csv")), "points": len(rows)}
        else:
            report = ex.cmd_analyze(cfg)
            sys.stdout.write(report.to_table())
            result = {"csv": str(cfg.path(".analysis.csv"))}
        print(json.dumps(result, sort_keys=True, default=str))
        return EXIT_OK
    except (ex.ConfigError, DataError, GateConfigError, FileNotFoundError, CheckpointError,
            KeyError) as exc:
        print(f"dmt {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, FloatingPointError) as exc:
        print(f"dmt {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
