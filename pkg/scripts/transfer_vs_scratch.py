#!/usr/bin/env python3
"""Compare fine-tuning a surrogate-pretrained model against training from scratch.

Pretrains the feature MLP on a large surrogate-labelled cohort, then adapts it
to a small "manually labelled" cohort (a simulated labeller with shifted class
thresholds) and reports held-out accuracy for both routes across seeds.
"""

import argparse

import numpy as np

from contourqa.boc_net import (
    NetworkConfig,
    TrainConfig,
    _predict_deterministic,
    fine_tune,
    new_model,
    train,
)
from contourqa.features import extract_features
from contourqa.geometry import SurrogateThresholds, surrogate_label
from contourqa.synthgen import generate_dataset


def feats(samples):
    return np.stack([extract_features(s.ref_mask, s.auto_mask, s.metrics) for s in samples])


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pretrain-n", type=int, default=1200)
    parser.add_argument("--tune-subjects", type=int, default=30)
    parser.add_argument("--slices-per-subject", type=int, default=8)
    parser.add_argument("--holdout-n", type=int, default=400)
    parser.add_argument("--seeds", default="0,1,2")
    parser.add_argument("--epochs", type=int, default=20)
    args = parser.parse_args()

    mlp = NetworkConfig(backbone="mlp_features")
    manual = SurrogateThresholds(
        dsc_hi=0.87, dsc_lo=0.68, sdsc_hi=0.87, sdsc_lo=0.68, hd95_good_mm=3.2, hd95_major_mm=7.0
    )

    pretrain = generate_dataset(args.pretrain_n, seed=31)
    xp, yp = feats(pretrain), np.array([s.label for s in pretrain])
    pre_params, _ = train(
        TrainConfig(epochs=40, learning_rate=3e-3, seed=1, lr_milestones=(24, 34)), mlp, (xp, yp)
    )
    print(f"pretrained on {args.pretrain_n} surrogate-labelled samples")

    n_tune = args.tune_subjects * args.slices_per_subject
    tune = generate_dataset(n_tune, seed=32, slices_per_subject=args.slices_per_subject)
    held = generate_dataset(args.holdout_n, seed=33)
    xf = feats(tune)
    yf = np.array([surrogate_label(s.metrics, manual) for s in tune])
    xh = feats(held)
    yh = np.array([surrogate_label(s.metrics, manual) for s in held])
    print(f"adapting to {args.tune_subjects} subjects ({n_tune} slices) with shifted labels\n")

    wins = 0
    seeds = [int(s) for s in args.seeds.split(",")]
    for seed in seeds:
        cfg = TrainConfig(epochs=args.epochs, learning_rate=1e-3, seed=seed, lr_milestones=(12, 17))
        groups = [("features", 1e-4), ("trunk", 3e-4), ("head", 1e-3)]
        tuned, _ = fine_tune(pre_params, groups, cfg, mlp, (xf, yf))
        acc_ft = float((_predict_deterministic(new_model(mlp, tuned), xh) == yh).mean())
        scratch, _ = train(cfg, mlp, (xf, yf))
        acc_sc = float((_predict_deterministic(new_model(mlp, scratch), xh) == yh).mean())
        wins += acc_ft >= acc_sc
        print(f"seed {seed}:  fine-tune {acc_ft:.4f}   scratch {acc_sc:.4f}")
    print(f"\nfine-tune >= scratch in {wins}/{len(seeds)} seeds")


if __name__ == "__main__":
    main()
