#!/usr/bin/env python3
"""BLEU vs Pairwise-BLEU over l2 and gate selections on the ambiguous-lexicon task.

Writes <out>/ambiguous.sweep.csv, which plots directly as a quality/diversity curve.
"""
import argparse
import time
from pathlib import Path

from dmt import experiments as ex

HERE = Path(__file__).parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=HERE / "configs" / "ambiguous.cfg")
    ap.add_argument("--out", default="runs/ambiguous")
    ap.add_argument("--l2", default="10,1000,100000")
    ap.add_argument("--selections", default="decoder13;decoder;encdec")
    args = ap.parse_args()

    Path(args.out).mkdir(parents=True, exist_ok=True)
    cfg = ex.load_config(args.config, {"out": args.out})
    ex.set_deterministic()
    t0 = time.perf_counter()
    if not cfg.path(".dmt1").exists():
        print(f"pretrain: held-out BLEU {ex.cmd_pretrain(cfg)['held_out_bleu']:.2f}")
    l2s = [float(v) for v in args.l2.split(",")]
    rows = ex.cmd_sweep(cfg, l2s, args.selections.split(";"))

    print(f"{'selection':<12}{'l2':>10}{'BLEU':>9}{'P-BLEU':>9}")
    for r in rows:
        if "error" in r:
            print(f"{r['selection']:<12}{r['l2']:>10g}   failed: {r['error']}")
        else:
            print(f"{r['selection']:<12}{r['l2']:>10g}{r['bleu']:>9.2f}{r['pairwise_bleu']:>9.2f}")
    print(f"baseline BLEU {rows[0].get('baseline_bleu', float('nan')):.2f}; "
          f"{time.perf_counter() - t0:.0f}s; csv {cfg.path('.sweep.csv')}")


if __name__ == "__main__":
    main()
