"""Pathological lung segmentation from CT volumes.

Stage one grows the normal parenchyma with fuzzy connectedness; stage two
supervoxelizes the remaining rib-cage interior and classifies one texture
descriptor per supervoxel with a random forest.
"""

from pathlung.volume import HU_MAX, HU_MIN, LabelMask, Volume, threshold

__all__ = ["HU_MAX", "HU_MIN", "LabelMask", "Volume", "threshold"]
__version__ = "0.1.0"
