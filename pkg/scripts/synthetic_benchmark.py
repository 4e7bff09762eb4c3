"""Synthetic distribution-shift benchmark: LEE vs fine-tuning, scratch LSTM and the two ablations.

    python3 scripts/synthetic_benchmark.py --repeats 2 --json bench.json
"""

import argparse
import json
import logging
import time

from lee_fscl.experiment import BenchmarkConfig, SynthSpec, run_benchmark, synthetic_checkpoint


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=2, help="seeds per named order")
    ap.add_argument("--shots", type=int, default=5)
    ap.add_argument("--pretrain-epochs", type=int, default=15)
    ap.add_argument("--source-subjects", type=int, default=8)
    ap.add_argument("--frozen-dropout", action="store_true")
    ap.add_argument("--modes", default="lee,vanilla_ft,scratch_lstm,lee_no_preserved,lee_no_temporary")
    ap.add_argument("--json", help="write the per-mode results here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = BenchmarkConfig(synth=SynthSpec(source_classes=16, source_subjects=args.source_subjects),
                          pretrain_epochs=args.pretrain_epochs, shots=args.shots, repeats=args.repeats,
                          modes=tuple(args.modes.split(",")), frozen_dropout=args.frozen_dropout)
    t0 = time.perf_counter()
    ckpt, report, samples = synthetic_checkpoint(cfg)
    print(f"pretrained in {time.perf_counter() - t0:.0f} s; held-out accuracy {report.heldout_accuracy[-1]:.3f}")
    res = run_benchmark(cfg, ckpt, samples)
    print(f"{'mode':<18} final accuracy (6 classes, k={args.shots})")
    for mode, r in res.items():
        print(f"{mode:<18} {100 * r['mean']:5.1f} +- {100 * r['std']:4.1f}  ({len(r['runs'])} runs)")
    print(f"total {time.perf_counter() - t0:.0f} s")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(res, fh, indent=1)


if __name__ == "__main__":
    main()
