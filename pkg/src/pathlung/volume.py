"""Volume and label-mask containers plus HU band thresholding.

Arrays are indexed ``[x, y, z]`` with shape ``(nx, ny, nz)``. Whenever a
volume is flattened (raw files, NIfTI payloads, linear voxel indices used
for tie-breaking) the order is x-fastest, i.e. ``x + nx * (y + ny * z)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from pathlung.errors import InputError

HU_MIN = -1024.0
HU_MAX = 3071.0

Dims = Tuple[int, int, int]
Spacing = Tuple[float, float, float]


def _check_spacing(spacing) -> Spacing:
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
        raise InputError(f"spacing must be three positive values, got {spacing}")
    return spacing


@dataclass(frozen=True, eq=False)
class Volume:
    """CT image in Hounsfield units.

    The data array is copied, clamped to ``[HU_MIN, HU_MAX]`` and made
    read-only on construction, so a Volume can be shared freely.
    """

    data: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise InputError(f"volume data must be a non-empty 3D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InputError("volume contains non-finite values")
        np.clip(data, HU_MIN, HU_MAX, out=data)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> Dims:
        return tuple(int(n) for n in self.data.shape)

    @property
    def n_voxels(self) -> int:
        return int(self.data.size)

    def flat(self) -> np.ndarray:
        """Values in x-fastest order."""
        return self.data.ravel(order="F")


@dataclass(frozen=True, eq=False)
class LabelMask:
    """Small non-negative integer label per voxel; binary masks use {0, 1}."""

    labels: np.ndarray
    spacing: Spacing = field(default=(1.0, 1.0, 1.0))

    def __post_init__(self):
        raw = np.asarray(self.labels)
        if raw.ndim != 3:
            raise InputError(f"label mask must be 3D, got shape {raw.shape}")
        if raw.dtype == np.bool_:
            labels = raw.astype(np.uint8)
        else:
            if raw.size and (raw.min() < 0 or raw.max() > 255):
                raise InputError("labels must lie in [0, 255]")
            if raw.dtype.kind == "f" and not np.array_equal(raw, np.round(raw)):
                raise InputError("labels must be integers")
            labels = raw.astype(np.uint8)
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @classmethod
    def like(cls, vol: Volume, labels) -> "LabelMask":
        labels = np.asarray(labels)
        if labels.shape != vol.dims:
            raise InputError(f"mask shape {labels.shape} does not match volume {vol.dims}")
        return cls(labels, vol.spacing)

    @classmethod
    def empty(cls, dims: Dims, spacing: Spacing = (1.0, 1.0, 1.0)) -> "LabelMask":
        return cls(np.zeros(dims, dtype=np.uint8), spacing)

    @property
    def dims(self) -> Dims:
        return tuple(int(n) for n in self.labels.shape)

    @property
    def is_binary(self) -> bool:
        return bool(self.labels.max(initial=0) <= 1)

    def bool(self) -> np.ndarray:
        return self.labels > 0

    def count(self) -> int:
        return int(np.count_nonzero(self.labels))

    def __eq__(self, other):
        if not isinstance(other, LabelMask):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.labels, other.labels)

    __hash__ = None


def threshold(vol: Volume, center: float = -550.0, halfwidth: float = 150.0) -> LabelMask:
    """Label voxels whose HU lies in the closed band ``[center - halfwidth, center + halfwidth]``.

    The defaults select normal lung parenchyma (-700 to -400 HU).
    """
    if halfwidth < 0:
        raise InputError("halfwidth must be non-negative")
    lo, hi = center - halfwidth, center + halfwidth
    return LabelMask.like(vol, (vol.data >= lo) & (vol.data <= hi))
