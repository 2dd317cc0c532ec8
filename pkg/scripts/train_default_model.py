"""Train the default forest on seeded phantoms and save it as JSON.

    python scripts/train_default_model.py --output forest.json
"""

import argparse
import time

from pathlung.config import RunConfig
from pathlung.forest import oob_accuracy, save_model, train
from pathlung.training import TRAIN_BLOBS, TRAIN_SEEDS, phantom_cases, sample_rois
from pathlung.texture import FEATURE_NAMES


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--output", default="forest.json")
    ap.add_argument("--seed", type=int, default=0, help="forest and ROI sampling seed")
    args = ap.parse_args()

    config = RunConfig(rf_seed=args.seed)
    t0 = time.perf_counter()
    data = sample_rois(phantom_cases(TRAIN_SEEDS, TRAIN_BLOBS), config=config, rng_seed=config.rf_seed)
    model = train(data.X, data.y, n_trees=config.rf_trees, bag_fraction=config.rf_bag_fraction,
                  rng_seed=config.rf_seed, feature_names=FEATURE_NAMES)
    oob = oob_accuracy(model, data.X, data.y)
    save_model(model, args.output)
    print(f"{len(data.y)} ROIs ({int(data.y.sum())} pathological) from {len(TRAIN_SEEDS)} phantoms")
    print(f"OOB accuracy {oob.accuracy:.4f}; {model.n_trees} trees; {time.perf_counter() - t0:.1f} s")
    print(f"saved {args.output}")


if __name__ == "__main__":
    main()
