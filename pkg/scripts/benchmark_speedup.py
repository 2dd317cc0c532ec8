"""Keypoint vs per-voxel classification timing on the default phantom."""

import argparse

from pathlung.config import RunConfig
from pathlung.evaluation import DEFAULT_PHANTOM_SEED, compare_modes, default_phantom_spec, generate_phantom
from pathlung.forest import load_model
from pathlung.training import train_default_model


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", help="forest JSON; trained on the fly when omitted")
    ap.add_argument("--seed", type=int, default=DEFAULT_PHANTOM_SEED)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    config = RunConfig()
    model = load_model(args.model) if args.model else train_default_model(config)
    vol, truth = generate_phantom(default_phantom_spec(args.seed))
    compare_modes(vol, truth, config, model, repeats=1)  # compile and warm caches
    res = compare_modes(vol, truth, config, model, repeats=args.repeats)
    print(f"keypoint  (slic + classify): {res.keypoint_ms:8.1f} ms   DSC {res.dsc_keypoint:.4f}")
    print(f"per-voxel (classify):        {res.per_voxel_ms:8.1f} ms   DSC {res.dsc_per_voxel:.4f}")
    print(f"speedup {res.speedup:.2f}x   |dDSC| {abs(res.dsc_keypoint - res.dsc_per_voxel):.4f}")


if __name__ == "__main__":
    main()
