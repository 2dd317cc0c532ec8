"""Stage one: automatic seed selection and fuzzy-connectedness growing.

The connectivity of a voxel is the strength of its best path to a seed,
where a path is as strong as its weakest link and a link between two face
neighbours ``a, b`` has affinity

    exp(-(((v(a) + v(b)) / 2 - mean) ** 2) / (2 * sigma ** 2))

Strengths are propagated best-first with a max-heap, a Dijkstra variant
for the max-min semiring.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numba import njit

from pathlung.errors import ParameterError, SeedSelectionError
from pathlung.volume import LabelMask, Volume

Voxel = Tuple[int, int, int]


@dataclass(frozen=True)
class AffinityParams:
    mean: float = -550.0
    sigma: float = 150.0
    theta: float = 0.5

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError(f"fc sigma must be positive, got {self.sigma}")
        if not 0 < self.theta <= 1:
            raise ParameterError(f"fc theta must lie in (0, 1], got {self.theta}")


@dataclass(frozen=True)
class SeedPair:
    left: Voxel
    right: Voxel

    def swapped(self) -> "SeedPair":
        return SeedPair(self.right, self.left)

    def as_list(self):
        return [list(self.left), list(self.right)]


@dataclass(frozen=True, eq=False)
class ConnectivityMap:
    strength: np.ndarray

    def __post_init__(self):
        self.strength.flags.writeable = False


def affinity(va: float, vb: float, params: AffinityParams) -> float:
    dev = (va + vb) / 2.0 - params.mean
    return float(np.exp(-(dev * dev) / (2.0 * params.sigma * params.sigma)))


def _linear_index(x, y, z, dims):
    return x + dims[0] * (y + dims[1] * z)


def select_seeds(
    vol: Volume, band_mask: LabelMask, rng_seed: int = 0, n_candidates: int = 10
) -> SeedPair:
    """Pick one seed per lateral half from randomly placed 3x3x3 windows.

    Candidate window centres are drawn from band voxels whose whole window
    is in bounds. Within the drawn windows the lowest-HU band voxel of the
    same half wins; ties go to the lowest x-fastest linear index.
    """
    if band_mask.dims != vol.dims:
        raise ParameterError(f"band mask dims {band_mask.dims} do not match volume {vol.dims}")
    if n_candidates < 1:
        raise ParameterError("n_candidates must be at least 1")
    nx, ny, nz = vol.dims
    band = band_mask.bool()
    split = nx / 2.0
    rng = np.random.default_rng(rng_seed)

    # x-fastest ordering of candidates keeps the draw layout-independent
    xs, ys, zs = np.nonzero(band.transpose(2, 1, 0))[::-1]
    interior = (xs >= 1) & (xs <= nx - 2) & (ys >= 1) & (ys <= ny - 2) & (zs >= 1) & (zs <= nz - 2)

    seeds = []
    for side, in_half in (("left", xs < split), ("right", xs >= split)):
        pick = np.flatnonzero(interior & in_half)
        if pick.size == 0:
            raise SeedSelectionError(side)
        chosen = rng.choice(pick, size=min(n_candidates, pick.size), replace=False)
        best = None
        for c in np.sort(chosen):
            cx, cy, cz = int(xs[c]), int(ys[c]), int(zs[c])
            for z in range(cz - 1, cz + 2):
                for y in range(cy - 1, cy + 2):
                    for x in range(cx - 1, cx + 2):
                        if not band[x, y, z] or (x < split) != (side == "left"):
                            continue
                        key = (vol.data[x, y, z], _linear_index(x, y, z, vol.dims))
                        if best is None or key < best[0]:
                            best = (key, (x, y, z))
        seeds.append(best[1])
    return SeedPair(*seeds)


@njit(cache=True)
def _propagate(flat, nx, ny, nz, seed_idx, mean, sigma):
    n = flat.size
    strength = np.zeros(n)
    done = np.zeros(n, dtype=np.bool_)
    two_var = 2.0 * sigma * sigma
    heap = [(-1.0, np.int64(seed_idx[0]))]
    for s in seed_idx[1:]:
        heapq.heappush(heap, (-1.0, np.int64(s)))
    for s in seed_idx:
        strength[s] = 1.0
    nxy = nx * ny
    while len(heap) > 0:
        neg, idx = heapq.heappop(heap)
        if done[idx]:
            continue
        done[idx] = True
        cur = -neg
        x = idx % nx
        y = (idx // nx) % ny
        z = idx // nxy
        for k in range(6):
            if k == 0:
                if x == 0:
                    continue
                nb = idx - 1
            elif k == 1:
                if x == nx - 1:
                    continue
                nb = idx + 1
            elif k == 2:
                if y == 0:
                    continue
                nb = idx - nx
            elif k == 3:
                if y == ny - 1:
                    continue
                nb = idx + nx
            elif k == 4:
                if z == 0:
                    continue
                nb = idx - nxy
            else:
                if z == nz - 1:
                    continue
                nb = idx + nxy
            if done[nb]:
                continue
            dev = 0.5 * (flat[idx] + flat[nb]) - mean
            aff = np.exp(-(dev * dev) / two_var)
            s = cur if cur < aff else aff
            if s > strength[nb]:
                strength[nb] = s
                heapq.heappush(heap, (-s, nb))
    return strength


def compute_connectivity(vol: Volume, seeds, params: AffinityParams = AffinityParams()) -> ConnectivityMap:
    """Max-min path strength from the seeds over 6-connected neighbours.

    ``seeds`` is a :class:`SeedPair` or any iterable of voxel triples.
    """
    points = [seeds.left, seeds.right] if isinstance(seeds, SeedPair) else list(seeds)
    if not points:
        raise ParameterError("at least one seed is required")
    dims = vol.dims
    idx = []
    for p in points:
        x, y, z = (int(c) for c in p)
        if not (0 <= x < dims[0] and 0 <= y < dims[1] and 0 <= z < dims[2]):
            raise ParameterError(f"seed {tuple(p)} outside volume {dims}")
        idx.append(_linear_index(x, y, z, dims))
    strength = _propagate(
        vol.flat(), dims[0], dims[1], dims[2], np.array(idx, dtype=np.int64),
        float(params.mean), float(params.sigma),
    )
    return ConnectivityMap(strength.reshape(dims, order="F"))


def binarize(cmap: ConnectivityMap, theta: float = 0.5) -> LabelMask:
    if not 0 < theta <= 1:
        raise ParameterError(f"theta must lie in (0, 1], got {theta}")
    return LabelMask(cmap.strength >= theta)
