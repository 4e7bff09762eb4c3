"""LEE on the public smartwatch (source) and motion-gesture (target) datasets.

Both datasets must be unpacked as <root>/<subject>/<gesture>/<rep>.txt trees:

    python3 scripts/public_datasets.py --smartwatch data/smartwatch --motion data/motion \
        --participants P01,P02,P03
"""

import argparse

from lee_fscl.experiment import public_dataset_accuracy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--smartwatch", required=True)
    ap.add_argument("--motion", required=True)
    ap.add_argument("--participants", required=True, help="comma-separated target subject ids")
    ap.add_argument("--repeats", type=int, default=2)
    ap.add_argument("--pretrain-epochs", type=int, default=50)
    args = ap.parse_args()

    participants = args.participants.split(",")
    res = public_dataset_accuracy(args.smartwatch, args.motion, participants, repeats=args.repeats,
                             pretrain_epochs=args.pretrain_epochs)
    print("participant  k=1    k=3    k=5")
    for p in participants:
        print(f"{p:<12} " + "  ".join(f"{100 * res[p][k]:5.1f}" for k in (1, 3, 5)))


if __name__ == "__main__":
    main()
