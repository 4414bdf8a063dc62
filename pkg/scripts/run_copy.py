#!/usr/bin/env python3
"""Pre-train the copy-task model and report held-out BLEU and wall time."""
import argparse
import time
from pathlib import Path

from dmt import experiments as ex

HERE = Path(__file__).parent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=HERE / "configs" / "copy.cfg")
    ap.add_argument("--out", default="runs/copy")
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    Path(args.out).mkdir(parents=True, exist_ok=True)
    cfg = ex.load_config(args.config, {"out": args.out, "seed": args.seed})
    ex.set_deterministic()
    t0 = time.perf_counter()
    res = ex.cmd_pretrain(cfg)
    print(f"held-out BLEU {res['held_out_bleu']:.2f} after {cfg.steps} steps "
          f"({time.perf_counter() - t0:.0f}s); checkpoint {res['checkpoint']}")


if __name__ == "__main__":
    main()
