"""End-to-end segmentation: fuzzy-connected parenchyma plus texture-classified
supervoxels from the rib-cage search space.

Stages, in order: threshold, seeds, connectivity, binarize, search_space,
slic, classify, fusion.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from skimage.morphology import convex_hull_image

from pathlung.config import RunConfig
from pathlung.errors import InputError, SearchSpaceError, StageError
from pathlung.forest import T_P, ForestModel, load_model
from pathlung.fuzzy import SeedPair, binarize, compute_connectivity, select_seeds
from pathlung.slic import SupervoxelMap, centroids, run_slic
from pathlung.texture import TextureParams, extract_descriptors
from pathlung.volume import LabelMask, Volume, threshold

STAGES = ("threshold", "seeds", "connectivity", "binarize", "search_space", "slic", "classify", "fusion")


@dataclass(eq=False)
class SearchSpace:
    mask: LabelMask
    bone: np.ndarray
    hull: np.ndarray
    provenance: dict


def _slice_hull(bone_slice: np.ndarray) -> Optional[np.ndarray]:
    if np.count_nonzero(bone_slice) < 3:
        return None
    # collinear points give an empty hull in skimage; treat as unpopulated
    hull = convex_hull_image(bone_slice)
    if np.count_nonzero(hull) == 0:
        return None
    return hull


def build_search_space(vol: Volume, fc_mask: LabelMask, bone_hu: float = 200.0) -> SearchSpace:
    """Per-axial-slice convex hull of bone, minus bone and the initial mask.

    Slices with fewer than three bone voxels borrow the hull of the nearest
    populated slice (the lower slice on ties).
    """
    if fc_mask.dims != vol.dims:
        raise InputError(f"fc mask dims {fc_mask.dims} do not match volume {vol.dims}")
    bone = vol.data > bone_hu
    if not bone.any():
        raise SearchSpaceError(f"no voxels above {bone_hu} HU; input does not look thoracic")
    nz = vol.dims[2]
    hulls = [_slice_hull(bone[:, :, z]) for z in range(nz)]
    populated = np.array([h is not None for h in hulls])
    if not populated.any():
        raise SearchSpaceError("bone voxels too sparse to fit a convex hull on any slice")
    pz = np.flatnonzero(populated)
    hull = np.zeros(vol.dims, dtype=bool)
    for z in range(nz):
        src = pz[np.argmin(np.abs(pz - z))]
        hull[:, :, z] = hulls[src]
    region = hull & ~bone & ~fc_mask.bool()
    provenance = {
        "bone_hu": float(bone_hu),
        "bone_voxels": int(bone.sum()),
        "hull_slices": [int(pz[0]), int(pz[-1])],
        "borrowed_slices": int(nz - len(pz)),
        "hull_voxels": int(hull.sum()),
        "search_voxels": int(region.sum()),
    }
    return SearchSpace(LabelMask(region, vol.spacing), bone, hull, provenance)


@dataclass
class SupervoxelRecord:
    id: int
    centroid: Tuple[int, int, int]
    size: int
    score: float
    label: int

    def as_dict(self) -> dict:
        return {"id": self.id, "centroid": list(self.centroid), "size": self.size,
                "score": self.score, "label": self.label}


def classify_supervoxels(vol: Volume, svmap: SupervoxelMap, model: ForestModel,
                         params: TextureParams = TextureParams(), rf_threshold: float = 0.5):
    """One descriptor per supervoxel at its keypoint; the verdict labels every member."""
    keypoints = centroids(svmap)
    if len(keypoints) == 0:
        return LabelMask.empty(vol.dims, vol.spacing), []
    X = extract_descriptors(vol, keypoints, params)
    scores = model.predict_proba(X)
    labels = (scores >= rf_threshold).astype(np.int64)
    positive = np.flatnonzero(labels == T_P)
    assign = svmap.assignment
    hit = np.zeros(svmap.k_actual + 1, dtype=bool)
    hit[positive + 1] = True
    mask = hit[assign + 1]
    sizes = svmap.sizes()
    records = [
        SupervoxelRecord(i, tuple(int(c) for c in keypoints[i]), int(sizes[i]), float(scores[i]), int(labels[i]))
        for i in range(svmap.k_actual)
    ]
    return LabelMask(mask, vol.spacing), records


def classify_voxels(vol: Volume, region: LabelMask, model: ForestModel,
                    params: TextureParams = TextureParams(), rf_threshold: float = 0.5) -> LabelMask:
    """Dense reference mode: a descriptor and a verdict for every region voxel."""
    pts = np.argwhere(region.bool())
    if len(pts) == 0:
        return LabelMask.empty(vol.dims, vol.spacing)
    scores = model.predict_proba(extract_descriptors(vol, pts, params))
    mask = np.zeros(vol.dims, dtype=bool)
    keep = pts[scores >= rf_threshold]
    mask[keep[:, 0], keep[:, 1], keep[:, 2]] = True
    return LabelMask(mask, vol.spacing)


def supervoxel_count(n_region: int, config: RunConfig) -> int:
    if config.slic_k is not None:
        k = config.slic_k
    else:
        k = int(round(n_region / config.sv_volume))
    return max(1, min(k, n_region))


@dataclass(eq=False)
class PipelineResult:
    initial_mask: LabelMask
    pathology_mask: LabelMask
    final_mask: LabelMask
    seeds: SeedPair
    search_space: SearchSpace
    supervoxels: Optional[SupervoxelMap]
    records: List[SupervoxelRecord]
    timings_ms: dict
    skipped: List[str]
    config: RunConfig
    notes: List[str] = field(default_factory=list)

    def report(self, include_timings: bool = True) -> dict:
        sv = self.supervoxels
        doc = {
            "parameters": self.config.as_dict(),
            "seeds": self.seeds.as_list(),
            "search_space": self.search_space.provenance,
            "counts": {
                "initial": self.initial_mask.count(),
                "pathology": self.pathology_mask.count(),
                "final": self.final_mask.count(),
            },
            "supervoxels": None if sv is None else {
                "k_requested": sv.k_requested,
                "k_actual": sv.k_actual,
                "grid_interval": sv.grid_interval,
                "iterations": sv.n_iterations,
                "residuals": [float(r) for r in sv.residuals],
                "objectives": [float(o) for o in sv.objectives],
                "diagnostics": {k: int(v) for k, v in sv.diagnostics.items()},
            },
            "records": [r.as_dict() for r in self.records],
            "skipped_stages": list(self.skipped),
            "notes": list(self.notes),
        }
        if include_timings:
            doc["timings_ms"] = dict(self.timings_ms)
        return doc


class _Clock:
    def __init__(self):
        self.timings = {}
        self.skipped = []

    def run(self, stage, fn, *args, **kwargs):
        start = time.perf_counter()
        try:
            out = fn(*args, **kwargs)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(stage, exc) from exc
        self.timings[stage] = (time.perf_counter() - start) * 1000.0
        return out

    def skip(self, stage):
        self.timings[stage] = 0.0
        self.skipped.append(stage)


def run_stage_one(vol: Volume, config: RunConfig, clock: Optional[_Clock] = None):
    """Threshold, seeds, connectivity and binarize; returns (seeds, fc mask)."""
    clock = clock or _Clock()
    band = clock.run("threshold", threshold, vol, config.threshold_center, config.threshold_halfwidth)
    seeds = clock.run("seeds", select_seeds, vol, band, config.seed_rng, config.seed_candidates)
    cmap = clock.run("connectivity", compute_connectivity, vol, seeds, config.affinity())
    fc = clock.run("binarize", lambda: LabelMask(binarize(cmap, config.fc_theta).labels, vol.spacing))
    return seeds, fc


def run_pipeline(vol: Volume, config: RunConfig = RunConfig(), model=None) -> PipelineResult:
    """Segment ``vol``. ``model`` is a :class:`ForestModel` or a path to one."""
    if model is None:
        raise InputError("a trained forest model is required")
    if not isinstance(model, ForestModel):
        model = load_model(model)
    texture = config.texture()
    clock = _Clock()
    seeds, fc = run_stage_one(vol, config, clock)
    space = clock.run("search_space", build_search_space, vol, fc, config.bone_hu)

    svmap, records, notes = None, [], []
    n_region = space.mask.count()
    if n_region == 0:
        clock.skip("slic")
        clock.skip("classify")
        pathology = LabelMask.empty(vol.dims, vol.spacing)
        notes.append("empty search space; pathology detection skipped")
    elif config.per_voxel:
        clock.skip("slic")
        pathology = clock.run("classify", classify_voxels, vol, space.mask, model, texture, config.rf_threshold)
    else:
        k = supervoxel_count(n_region, config)
        svmap = clock.run("slic", run_slic, vol, space.mask, k, config.slic_compactness,
                          config.slic_max_iters, config.slic_tol)
        pathology, records = clock.run("classify", classify_supervoxels, vol, svmap, model, texture,
                                       config.rf_threshold)
    final = clock.run("fusion", lambda: LabelMask(fc.bool() | pathology.bool(), vol.spacing))
    return PipelineResult(fc, pathology, final, seeds, space, svmap, records,
                          clock.timings, clock.skipped, config, notes)
