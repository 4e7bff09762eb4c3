"""LEE final accuracy on the synthetic benchmark for each alpha in the sweep grid."""

import argparse

from lee_fscl.experiment import ALPHA_SWEEP, BenchmarkConfig, SynthSpec, run_benchmark, synthetic_checkpoint


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=2)
    ap.add_argument("--shots", type=int, default=5)
    ap.add_argument("--pretrain-epochs", type=int, default=15)
    args = ap.parse_args()

    base = BenchmarkConfig(synth=SynthSpec(source_classes=16), pretrain_epochs=args.pretrain_epochs,
                           shots=args.shots, repeats=args.repeats, modes=("lee",))
    ckpt, _, samples = synthetic_checkpoint(base)
    print("alpha  final accuracy")
    for alpha in ALPHA_SWEEP:
        cfg = BenchmarkConfig(**{**base.__dict__, "alpha": alpha})
        r = run_benchmark(cfg, ckpt, samples)["lee"]
        print(f"{alpha:<6} {100 * r['mean']:5.1f} +- {100 * r['std']:4.1f}")


if __name__ == "__main__":
    main()
