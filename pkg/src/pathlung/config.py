"""Resolved run parameters and the flat ``key = value`` config file format.

Precedence: command-line flags > config file > the defaults below.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Optional

from pathlung.errors import ParameterError
from pathlung.fuzzy import AffinityParams
from pathlung.texture import TextureParams


@dataclass(frozen=True)
class RunConfig:
    # thresholding and seeds
    threshold_center: float = -550.0
    threshold_halfwidth: float = 150.0
    seed_rng: int = 0
    seed_candidates: int = 10
    # fuzzy connectedness
    fc_mean: float = -550.0
    fc_sigma: float = 150.0
    fc_theta: float = 0.5
    # search space
    bone_hu: float = 200.0
    # supervoxels
    slic_k: Optional[int] = None
    sv_volume: float = 350.0
    slic_compactness: float = 10.0
    slic_max_iters: int = 10
    slic_tol: float = 1.0
    # texture
    glcm_bins: int = 16
    glcm_directions: int = 4
    glcm_offset: int = 2
    glrlm_directions: int = 4
    glrlm_levels: int = 8
    roi_window: int = 7
    # forest
    rf_trees: int = 70
    rf_bag_fraction: float = 0.6
    rf_bootstrap: bool = False
    rf_max_features: Optional[int] = None
    rf_seed: int = 0
    rf_threshold: float = 0.5
    # modes
    per_voxel: bool = False
    threads: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.threshold_halfwidth < 0:
            raise ParameterError("threshold_halfwidth must be non-negative")
        if self.seed_candidates < 1:
            raise ParameterError("seed_candidates must be at least 1")
        if self.slic_k is not None and self.slic_k < 1:
            raise ParameterError("slic_k must be at least 1")
        if not self.sv_volume > 0:
            raise ParameterError("sv_volume must be positive")
        if self.slic_compactness < 0:
            raise ParameterError("slic_compactness must be non-negative")
        if self.slic_max_iters < 1:
            raise ParameterError("slic_max_iters must be at least 1")
        if not self.slic_tol > 0:
            raise ParameterError("slic_tol must be positive")
        if self.rf_trees < 1:
            raise ParameterError("rf_trees must be at least 1")
        if not 0 < self.rf_bag_fraction <= 1:
            raise ParameterError("rf_bag_fraction must lie in (0, 1]")
        if self.rf_max_features is not None and self.rf_max_features < 1:
            raise ParameterError("rf_max_features must be at least 1")
        if not 0 <= self.rf_threshold <= 1:
            raise ParameterError("rf_threshold must lie in [0, 1]")
        if self.threads < 1:
            raise ParameterError("threads must be at least 1")
        # the module dataclasses carry their own checks
        self.affinity()
        self.texture()

    def affinity(self) -> AffinityParams:
        return AffinityParams(self.fc_mean, self.fc_sigma, self.fc_theta)

    def texture(self) -> TextureParams:
        return TextureParams(
            glcm_bins=self.glcm_bins,
            glcm_directions=self.glcm_directions,
            glcm_offset=self.glcm_offset,
            glrlm_directions=self.glrlm_directions,
            glrlm_levels=self.glrlm_levels,
            window=self.roi_window,
        )

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _field_types():
    hints = {"float": float, "int": int, "bool": bool}
    out = {}
    for f in fields(RunConfig):
        text = str(f.type)
        base = text.replace("Optional[", "").rstrip("]")
        out[f.name] = (hints[base], text.startswith("Optional"))
    return out


FIELD_TYPES = _field_types()

FIELD_HELP = {
    "threshold_center": "centre of the parenchyma HU band used for seed candidates",
    "threshold_halfwidth": "half-width of the parenchyma HU band",
    "seed_rng": "seed of the generator that draws seed candidate windows",
    "seed_candidates": "number of random 3x3x3 candidate windows per lateral half",
    "fc_mean": "affinity mean m (HU) of lung parenchyma",
    "fc_sigma": "affinity spread sigma (HU)",
    "fc_theta": "connectivity cutoff for the initial lung mask",
    "bone_hu": "voxels above this HU count as rib-cage bone",
    "slic_k": "supervoxel count; 'auto' derives it from sv_volume",
    "sv_volume": "target mean supervoxel volume in voxels when slic_k is auto",
    "slic_compactness": "intensity-vs-space weight m_c (HU)",
    "slic_max_iters": "maximum SLIC iterations",
    "slic_tol": "stop when the centre displacement norm falls below this",
    "glcm_bins": "GLCM gray levels per axis",
    "glcm_directions": "GLCM in-plane directions (1-4: 0, 45, 90, 135 degrees)",
    "glcm_offset": "GLCM pixel offset",
    "glrlm_directions": "GLRLM in-plane directions (1-4)",
    "glrlm_levels": "GLRLM gray levels",
    "roi_window": "side of the square axial descriptor window",
    "rf_trees": "trees in the random forest",
    "rf_bag_fraction": "fraction of training rows drawn for each tree",
    "rf_bootstrap": "draw bags with replacement instead of subsetting",
    "rf_max_features": "candidate features per split; 'auto' is round(sqrt(n_features))",
    "rf_seed": "forest training seed",
    "rf_threshold": "vote share at or above which a keypoint is pathological",
    "per_voxel": "classify every search-space voxel instead of supervoxel keypoints",
    "threads": "worker thread cap (kernels currently run serially)",
}


def parse_value(key: str, text: str):
    if key not in FIELD_TYPES:
        raise ParameterError(f"unknown config key {key!r}")
    kind, optional = FIELD_TYPES[key]
    text = text.strip()
    if optional and text.lower() in ("", "none", "auto"):
        return None
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        return float(text)
    except ValueError:
        raise ParameterError(f"config key {key}: cannot parse {text!r} as {kind.__name__}") from None


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, dashes in keys are allowed."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            values[key] = parse_value(key, value)
    return values


def write_config_file(config: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in config.as_dict().items():
            fh.write(f"{key} = {'none' if value is None else value}\n")
