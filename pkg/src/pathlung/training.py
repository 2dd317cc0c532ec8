"""Labelled ROI sampling from phantoms and default-model training."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy import ndimage as ndi

from pathlung.config import RunConfig
from pathlung.errors import TrainingError
from pathlung.evaluation import default_phantom_spec, generate_phantom
from pathlung.forest import T_N, T_P, ForestModel, train
from pathlung.pipeline import build_search_space, run_stage_one
from pathlung.texture import FEATURE_NAMES, extract_descriptors

TRAIN_SEEDS = tuple(range(10))
N_POSITIVE = 507
N_NEGATIVE = 490
TRAIN_BLOBS = 3
# share of negatives drawn from tissue hugging the initial lung mask
NEAR_FRACTION = 0.5
NEAR_DISTANCE = 4.0
# minimum share of a positive ROI's window that lies inside the ground truth
POSITIVE_PURITY = 1.0


@dataclass(eq=False)
class TrainingSet:
    X: np.ndarray
    y: np.ndarray
    keypoints: np.ndarray
    case_ids: np.ndarray


class _SliceOccupancy:
    """Tracks claimed axial windows so sampled ROIs never overlap."""

    def __init__(self, dims, side):
        self.taken = np.zeros(dims, dtype=bool)
        self.half = side // 2

    def try_claim(self, p) -> bool:
        h = self.half
        x, y, z = p
        box = self.taken[max(x - h, 0): x + h + 1, max(y - h, 0): y + h + 1, z]
        if box.any():
            return False
        box[...] = True
        return True


def sample_rois(cases, n_pos: int = N_POSITIVE, n_neg: int = N_NEGATIVE,
                config: RunConfig = RunConfig(), rng_seed: int = 0,
                near_fraction: float = NEAR_FRACTION, near_distance: float = NEAR_DISTANCE,
                purity: float = POSITIVE_PURITY) -> TrainingSet:
    """Draw non-overlapping window centres from each case's search space.

    Centres inside the ground truth are pathological, the rest are not.
    ``near_fraction`` of the negatives come from voxels within
    ``near_distance`` of the initial mask, where windows straddle the lung
    wall and are hardest to tell apart. A positive window must have at
    least ``purity`` of its voxels inside the ground truth. Cases are visited round-robin so
    every case contributes while it has candidates left.
    """
    rng = np.random.default_rng(rng_seed)
    pools = []
    for vol, truth in cases:
        _, fc = run_stage_one(vol, config)
        region = build_search_space(vol, fc, config.bone_hu).mask.bool()
        near = ndi.distance_transform_edt(~fc.bool(), sampling=vol.spacing) <= near_distance
        t = truth.bool()
        w = config.roi_window
        share = ndi.uniform_filter(t.astype(np.float64), size=(w, w, 1), mode="nearest")
        strata = {
            "pos": rng.permutation(np.argwhere(region & t & (share >= purity - 1e-9))),
            "near": rng.permutation(np.argwhere(region & ~t & near)),
            "far": rng.permutation(np.argwhere(region & ~t & ~near)),
        }
        pools.append((vol, strata, _SliceOccupancy(vol.dims, config.roi_window)))

    n_near = int(round(n_neg * near_fraction))
    quotas = (("pos", T_P, n_pos), ("near", T_N, n_near), ("far", T_N, n_neg - n_near))
    picked = [[[] for _ in pools], [[] for _ in pools]]
    for stratum, cls, quota in quotas:
        cursors = [0] * len(pools)
        got = 0
        while got < quota:
            progress = False
            for i, (_, strata, occ) in enumerate(pools):
                cand = strata[stratum]
                while cursors[i] < len(cand):
                    p = tuple(int(c) for c in cand[cursors[i]])
                    cursors[i] += 1
                    if occ.try_claim(p):
                        picked[cls][i].append(p)
                        got += 1
                        progress = True
                        break
                if got == quota:
                    break
            if not progress:
                raise TrainingError(f"only {got} of {quota} '{stratum}' ROIs available")

    params = config.texture()
    X, y, kp, ids = [], [], [], []
    for i, (vol, *_rest) in enumerate(pools):
        for cls in (T_P, T_N):
            pts = np.array(picked[cls][i], dtype=np.int64).reshape(-1, 3)
            if len(pts) == 0:
                continue
            X.append(extract_descriptors(vol, pts, params))
            y.append(np.full(len(pts), cls, dtype=np.int64))
            kp.append(pts)
            ids.append(np.full(len(pts), i, dtype=np.int64))
    return TrainingSet(np.vstack(X), np.concatenate(y), np.vstack(kp), np.concatenate(ids))


def phantom_cases(seeds: Sequence[int], n_blobs=None) -> List:
    return [generate_phantom(default_phantom_spec(s, n_blobs)) for s in seeds]


def train_default_model(config: RunConfig = RunConfig(), seeds: Sequence[int] = TRAIN_SEEDS,
                        n_pos: int = N_POSITIVE, n_neg: int = N_NEGATIVE) -> ForestModel:
    data = sample_rois(phantom_cases(seeds, TRAIN_BLOBS), n_pos, n_neg, config, rng_seed=config.rf_seed)
    return train(
        data.X, data.y,
        n_trees=config.rf_trees,
        bag_fraction=config.rf_bag_fraction,
        rng_seed=config.rf_seed,
        bootstrap=config.rf_bootstrap,
        max_features=config.rf_max_features,
        feature_names=FEATURE_NAMES,
    )
