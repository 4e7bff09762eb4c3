"""Preserved-embedding subset ablation: z_c from 1/3/5/7 source participants and 4/8/12/16 gestures.

The extractor is pretrained once; only the selection behind z_c changes per cell.
"""

import argparse

from lee_fscl.experiment import (
    BenchmarkConfig,
    SynthSpec,
    default_excluded,
    prepare_target,
    pretrain_pipeline,
    run_benchmark,
    synth_trials,
)
from lee_fscl.pretrain import PretrainConfig, compute_preserved_embedding

PARTICIPANTS = (1, 3, 5, 7)
GESTURES = (4, 8, 12, 16)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=2)
    ap.add_argument("--shots", type=int, default=5)
    ap.add_argument("--pretrain-epochs", type=int, default=15)
    args = ap.parse_args()

    cfg = BenchmarkConfig(synth=SynthSpec(source_classes=16), pretrain_epochs=args.pretrain_epochs,
                          shots=args.shots, repeats=args.repeats, modes=("lee",))
    trials = synth_trials(cfg.synth)
    source = [t for t in trials if t.domain == "source"]
    target = [t for t in trials if t.domain == "target"]
    pcfg = PretrainConfig(excluded_subject=default_excluded(source), epochs=cfg.pretrain_epochs,
                          target_gestures=sorted({t.gesture for t in target}))
    ckpt, report, src_samples = pretrain_pipeline(source, pcfg)
    samples = prepare_target(ckpt, target)

    print("participants  gestures  final accuracy")
    for n_p in PARTICIPANTS:
        for n_g in GESTURES:
            ckpt.preserved = compute_preserved_embedding(ckpt, src_samples, subjects=report.train_subjects[:n_p],
                                                         gestures=report.gestures[:n_g])
            r = run_benchmark(cfg, ckpt, samples)["lee"]
            print(f"{n_p:<13} {n_g:<9} {100 * r['mean']:5.1f} +- {100 * r['std']:4.1f}")


if __name__ == "__main__":
    main()
