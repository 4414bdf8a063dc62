#!/usr/bin/env python3
"""Per-module drop probability vs pruned BLEU on the copy task."""
import argparse
from pathlib import Path

from dmt import experiments as ex

HERE = Path(__file__).parent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=HERE / "configs" / "copy.cfg")
    ap.add_argument("--out", default="runs/copy")
    ap.add_argument("--l2", type=float, default=1000.0)
    args = ap.parse_args()

    Path(args.out).mkdir(parents=True, exist_ok=True)
    cfg = ex.load_config(args.config, {"out": args.out, "l2": args.l2})
    ex.set_deterministic()
    if not cfg.path(".dmt1").exists():
        ex.cmd_pretrain(cfg)
    ex.cmd_finetune(cfg)
    print(ex.cmd_analyze(cfg).to_table(), end="")


if __name__ == "__main__":
    main()
