"""Grayscale 3D SLIC supervoxels restricted to a region mask.

Each cluster centre is a 4-vector ``[v, x, y, z]`` (HU, voxel coordinates).
The assignment distance between a voxel and a centre is

    D = sqrt(dv**2 + (compactness / S)**2 * ds**2)

with ``dv`` the intensity difference, ``ds`` the Euclidean voxel distance
and ``S`` the grid interval. Voxels only consider centres whose
``2S x 2S x 2S`` window covers them, plus the centre they already belong
to, which keeps the k-means objective non-increasing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List

import numpy as np
from numba import njit

from pathlung.errors import ParameterError
from pathlung.volume import LabelMask, Volume

NONE = -1


@dataclass(eq=False)
class SupervoxelMap:
    """Supervoxel partition of a region.

    ``assignment`` holds the cluster id per voxel (``NONE`` outside the
    region); ``centers`` is ``(k_actual, 4)`` with columns ``v, x, y, z``.
    """

    assignment: np.ndarray
    centers: np.ndarray
    k_requested: int
    grid_interval: int
    residuals: List[float] = field(default_factory=list)
    objectives: List[float] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def k_actual(self) -> int:
        return int(len(self.centers))

    @property
    def n_iterations(self) -> int:
        return len(self.residuals)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment[self.assignment >= 0], minlength=self.k_actual)

    def label_volume(self) -> np.ndarray:
        """Labels for export: 0 outside the region, cluster id + 1 inside."""
        return (self.assignment + 1).astype(np.int32)


def grid_interval(n_region: int, k: int) -> int:
    return max(1, int(math.floor((n_region / k) ** (1.0 / 3.0) + 0.5)))


def _axis_grid(lo, hi, step):
    length = hi - lo + 1
    # enough points to cover the extent; surplus centres are thinned to k later
    n = max(1, int(math.ceil(length / step - 1e-9)))
    start = lo + (length - n * step) / 2.0 + step / 2.0 - 0.5
    return start + step * np.arange(n)


def init_centers(vol: Volume, region: LabelMask, k: int) -> np.ndarray:
    """Regular-grid centres inside ``region``, at most ``k`` of them."""
    mask = region.bool()
    if mask.shape != vol.dims:
        raise ParameterError(f"region dims {mask.shape} do not match volume {vol.dims}")
    n_region = int(mask.sum())
    if n_region == 0:
        raise ParameterError("SLIC region is empty")
    if k < 1:
        raise ParameterError(f"k must be at least 1, got {k}")
    if k > n_region:
        raise ParameterError(f"k = {k} exceeds the {n_region} voxels in the region")

    step = grid_interval(n_region, k)
    coords = np.argwhere(mask)
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    gx, gy, gz = (_axis_grid(lo[a], hi[a], step) for a in range(3))
    # x-fastest order over grid points
    pz, py, px = np.meshgrid(gz, gy, gx, indexing="ij")
    points = np.stack([px.ravel(), py.ravel(), pz.ravel()], axis=1)

    pos, ok = _place(mask, points, step / 2.0)
    pos = pos[ok]
    _, first = np.unique(np.round(pos, 6), axis=0, return_index=True)
    pos = pos[np.sort(first)]
    vox = np.clip(np.floor(pos + 0.5).astype(np.int64), 0, np.array(vol.dims) - 1)
    centers = np.column_stack([vol.data[tuple(vox.T)], pos]).astype(np.float64).reshape(-1, 4)
    if len(centers) > k:
        keep = np.round(np.linspace(0, len(centers) - 1, k)).astype(int)
        centers = centers[keep]
    return centers


@njit(cache=True)
def _place(mask, points, radius):
    """Keep grid points on region voxels; snap the others to the nearest
    region voxel within ``radius`` (ties to lowest x-fastest index) or drop them."""
    nx, ny, nz = mask.shape
    m = points.shape[0]
    out = points.copy()
    ok = np.zeros(m, dtype=np.bool_)
    r2 = radius * radius
    for i in range(m):
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        rx = min(max(int(math.floor(px + 0.5)), 0), nx - 1)
        ry = min(max(int(math.floor(py + 0.5)), 0), ny - 1)
        rz = min(max(int(math.floor(pz + 0.5)), 0), nz - 1)
        if mask[rx, ry, rz]:
            ok[i] = True
            continue
        best = np.inf
        for z in range(max(0, int(math.ceil(pz - radius))), min(nz - 1, int(math.floor(pz + radius))) + 1):
            for y in range(max(0, int(math.ceil(py - radius))), min(ny - 1, int(math.floor(py + radius))) + 1):
                for x in range(max(0, int(math.ceil(px - radius))), min(nx - 1, int(math.floor(px + radius))) + 1):
                    if not mask[x, y, z]:
                        continue
                    d2 = (x - px) ** 2 + (y - py) ** 2 + (z - pz) ** 2
                    if d2 <= r2 and d2 < best:
                        best = d2
                        out[i, 0] = x
                        out[i, 1] = y
                        out[i, 2] = z
                        ok[i] = True
    return out, ok


@njit(cache=True)
def _assign(values, coords, shape, row_ptr, run_x0, run_len, run_idx, centers, step, wspace, previous):
    """Label each region voxel (given as ``coords`` rows) with its nearest centre.

    The region is walked as runs of consecutive in-region voxels along x,
    grouped per ``(y, z)`` row, so window scans touch region voxels only.
    """
    nx, ny, nz = shape[0], shape[1], shape[2]
    n = values.size
    labels = np.full(n, -1, dtype=np.int32)
    best = np.full(n, np.inf)
    k = centers.shape[0]
    for c in range(k):
        cv, cx, cy, cz = centers[c, 0], centers[c, 1], centers[c, 2], centers[c, 3]
        label = np.int32(c)
        x0 = max(0, int(math.ceil(cx - step)))
        x1 = min(nx - 1, int(math.floor(cx + step)))
        y0 = max(0, int(math.ceil(cy - step)))
        y1 = min(ny - 1, int(math.floor(cy + step)))
        z0 = max(0, int(math.ceil(cz - step)))
        z1 = min(nz - 1, int(math.floor(cz + step)))
        for z in range(z0, z1 + 1):
            dz2 = (z - cz) ** 2
            for y in range(y0, y1 + 1):
                dyz2 = (y - cy) ** 2 + dz2
                row = z * ny + y
                for r in range(row_ptr[row], row_ptr[row + 1]):
                    a = max(x0, run_x0[r])
                    b = min(x1, run_x0[r] + run_len[r] - 1)
                    if b < a:
                        continue
                    i0 = np.uint64(run_idx[r] + (a - run_x0[r]))
                    # unsigned indices skip the negative-index fixup, and the
                    # branch-free body lets the run loop vectorize
                    for j in range(np.uint64(b - a + 1)):
                        i = i0 + j
                        dv = values[i] - cv
                        dx = (a + np.int64(j)) - cx
                        d2 = dv * dv + wspace * (dx * dx + dyz2)
                        closer = d2 < best[i]
                        best[i] = d2 if closer else best[i]
                        labels[i] = label if closer else labels[i]

    orphans = 0
    total = 0.0
    for i in range(n):
        x = coords[i, 0]
        y = coords[i, 1]
        z = coords[i, 2]
        p = previous[i]
        if p >= 0:
            dv = values[i] - centers[p, 0]
            d2 = dv * dv + wspace * ((x - centers[p, 1]) ** 2 + (y - centers[p, 2]) ** 2 + (z - centers[p, 3]) ** 2)
            if d2 < best[i] or (d2 == best[i] and p < labels[i]):
                best[i] = d2
                labels[i] = p
        if labels[i] < 0:
            orphans += 1
            for c in range(k):
                dv = values[i] - centers[c, 0]
                d2 = dv * dv + wspace * (
                    (x - centers[c, 1]) ** 2 + (y - centers[c, 2]) ** 2 + (z - centers[c, 3]) ** 2
                )
                if d2 < best[i]:
                    best[i] = d2
                    labels[i] = c
        total += best[i]
    return labels, total / max(n, 1), orphans


@njit(cache=True)
def _member_means(values, coords, labels, k):
    sums = np.zeros((k, 4))
    counts = np.zeros(k, dtype=np.int64)
    for i in range(values.size):
        c = labels[i]
        if c < 0:
            continue
        sums[c, 0] += values[i]
        sums[c, 1] += coords[i, 0]
        sums[c, 2] += coords[i, 1]
        sums[c, 3] += coords[i, 2]
        counts[c] += 1
    return sums, counts


@njit(cache=True)
def _runs(coords, ny, nz):
    """Runs of x-consecutive voxels in x-fastest ``coords``, indexed by row ``z * ny + y``."""
    n = coords.shape[0]
    row_ptr = np.zeros(ny * nz + 1, dtype=np.int64)
    run_x0 = np.empty(n, dtype=np.int64)
    run_len = np.empty(n, dtype=np.int64)
    run_idx = np.empty(n, dtype=np.int64)
    m = 0
    for i in range(n):
        x, y, z = coords[i, 0], coords[i, 1], coords[i, 2]
        if m > 0 and i > 0 and coords[i - 1, 1] == y and coords[i - 1, 2] == z and coords[i - 1, 0] == x - 1:
            run_len[m - 1] += 1
            continue
        run_x0[m] = x
        run_len[m] = 1
        run_idx[m] = i
        row_ptr[z * ny + y + 1] += 1
        m += 1
    for r in range(ny * nz):
        row_ptr[r + 1] += row_ptr[r]
    return row_ptr, run_x0[:m].copy(), run_len[:m].copy(), run_idx[:m].copy()


@njit(cache=True)
def _region_lists(mask, data):
    nx, ny, nz = mask.shape
    n = 0
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if mask[x, y, z]:
                    n += 1
    coords = np.empty((n, 3), dtype=np.int64)
    values = np.empty(n)
    i = 0
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if mask[x, y, z]:
                    coords[i, 0] = x
                    coords[i, 1] = y
                    coords[i, 2] = z
                    values[i] = data[x, y, z]
                    i += 1
    return coords, values


class _Region:
    """Region voxels in x-fastest order, plus their x-runs per row."""

    def __init__(self, vol: Volume, mask: np.ndarray):
        self.coords, self.values = _region_lists(mask, vol.data)
        self.row_ptr, self.run_x0, self.run_len, self.run_idx = _runs(self.coords, mask.shape[1], mask.shape[2])
        self.shape = mask.shape

    def scatter(self, labels):
        out = np.full(self.shape, NONE, dtype=np.int32, order="F")
        out[tuple(self.coords.T)] = labels
        return out

    def gather(self, volume_labels):
        return np.ascontiguousarray(volume_labels[tuple(self.coords.T)]).astype(np.int32)


def _updated_centers(region, labels, centers):
    sums, counts = _member_means(region.values, region.coords, labels, len(centers))
    new = centers.copy()
    alive = counts > 0
    new[alive] = sums[alive] / counts[alive, None]
    return new, counts


def _iterate(region, centers, compactness, step, previous):
    wspace = (compactness / step) ** 2
    labels, objective, orphans = _assign(region.values, region.coords, np.array(region.shape, dtype=np.int64),
                                         region.row_ptr, region.run_x0, region.run_len, region.run_idx,
                                         np.ascontiguousarray(centers, dtype=np.float64),
                                         float(step), wspace, previous)
    new, _ = _updated_centers(region, labels, centers)
    residual = float(np.sqrt(np.sum((new - centers) ** 2)))
    return labels, new, residual, objective, orphans


def assign_and_update(vol: Volume, region: LabelMask, centers: np.ndarray, compactness: float = 10.0,
                      step: int | None = None, previous: np.ndarray | None = None):
    """One SLIC iteration.

    Returns ``(SupervoxelMap, residual)`` where the map carries the fresh
    assignment and the updated centres, and ``residual`` is the L2 norm of
    the stacked centre displacement. ``previous`` is an earlier volume
    assignment whose centres stay candidates for their members.
    """
    mask = region.bool()
    reg = _Region(vol, mask)
    if step is None:
        step = grid_interval(len(reg.values), len(centers))
    prev = reg.gather(previous) if previous is not None else np.full(len(reg.values), NONE, dtype=np.int32)
    labels, new, residual, objective, orphans = _iterate(reg, centers, compactness, step, prev)
    svmap = SupervoxelMap(reg.scatter(labels), new, len(centers), step, [residual], [objective],
                          {"orphans": int(orphans)})
    return svmap, residual


@njit(cache=True)
def _components(labels):
    """6-connected components of equal-label voxels, numbered in x-fastest order."""
    nx, ny, nz = labels.shape
    comp = np.full((nz, ny, nx), -1, dtype=np.int32).T
    stack = np.empty((labels.size, 3), dtype=np.int32)
    sizes = []
    comp_label = []
    n = 0
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                lab = labels[x, y, z]
                if lab < 0 or comp[x, y, z] >= 0:
                    continue
                comp[x, y, z] = n
                top = 0
                stack[0, 0] = x
                stack[0, 1] = y
                stack[0, 2] = z
                top = 1
                size = 0
                while top > 0:
                    top -= 1
                    cx = stack[top, 0]
                    cy = stack[top, 1]
                    cz = stack[top, 2]
                    size += 1
                    for k in range(6):
                        qx, qy, qz = cx, cy, cz
                        if k == 0:
                            qx -= 1
                        elif k == 1:
                            qx += 1
                        elif k == 2:
                            qy -= 1
                        elif k == 3:
                            qy += 1
                        elif k == 4:
                            qz -= 1
                        else:
                            qz += 1
                        if qx < 0 or qy < 0 or qz < 0 or qx >= nx or qy >= ny or qz >= nz:
                            continue
                        if labels[qx, qy, qz] != lab or comp[qx, qy, qz] >= 0:
                            continue
                        comp[qx, qy, qz] = n
                        stack[top, 0] = qx
                        stack[top, 1] = qy
                        stack[top, 2] = qz
                        top += 1
                sizes.append(size)
                comp_label.append(lab)
                n += 1
    return comp, np.array(sizes, dtype=np.int64), np.array(comp_label, dtype=np.int64)


@njit(cache=True)
def _component_graph(comp, n, is_keeper):
    """Adjacency of components in CSR form; one entry per face contact, both directions.

    Contacts between two keepers never matter for fragment resolution and are skipped.
    """
    nx, ny, nz = comp.shape
    degree = np.zeros(n + 1, dtype=np.int64)
    for sweep in range(2):
        if sweep == 1:
            indptr = np.zeros(n + 1, dtype=np.int64)
            for c in range(n):
                indptr[c + 1] = indptr[c] + degree[c]
            nbr = np.empty(indptr[n], dtype=np.int64)
            fill = indptr[:n].copy()
        for z in range(nz):
            for y in range(ny):
                for x in range(nx):
                    a = comp[x, y, z]
                    if a < 0:
                        continue
                    for k in range(3):
                        qx, qy, qz = x, y, z
                        if k == 0:
                            qx += 1
                        elif k == 1:
                            qy += 1
                        else:
                            qz += 1
                        if qx >= nx or qy >= ny or qz >= nz:
                            continue
                        b = comp[qx, qy, qz]
                        if b < 0 or b == a or (is_keeper[a] and is_keeper[b]):
                            continue
                        if sweep == 0:
                            degree[a] += 1
                            degree[b] += 1
                        else:
                            nbr[fill[a]] = b
                            fill[a] += 1
                            nbr[fill[b]] = a
                            fill[b] += 1
    return indptr, nbr


@njit(cache=True)
def _keepers(sizes, comp_label, n_labels):
    """Per label, mark its largest component (lowest index on ties) as resolved to that label."""
    best = np.full(n_labels, -1, dtype=np.int64)
    for c in range(sizes.size):
        lab = comp_label[c]
        if best[lab] < 0 or sizes[c] > sizes[best[lab]]:
            best[lab] = c
    resolved = np.full(sizes.size, -1, dtype=np.int64)
    for lab in range(n_labels):
        if best[lab] >= 0:
            resolved[best[lab]] = lab
    return resolved


@njit(cache=True)
def _resolve(resolved, sizes, next_label, indptr, nbr):
    """Layered absorption of fragments into resolved neighbours.

    A fragment joins the label with the most face contacts among neighbours
    resolved in earlier layers (lowest label on ties). When nothing more can
    be absorbed, the largest unresolved fragment becomes a new cluster.
    """
    n = resolved.size
    layer = np.full(n, -1, dtype=np.int64)
    for c in range(n):
        if resolved[c] >= 0:
            layer[c] = 0
    frontier = np.flatnonzero(resolved >= 0)
    queued = np.zeros(n, dtype=np.bool_)
    cand = np.empty(n, dtype=np.int64)
    picks = np.empty(n, dtype=np.int64)
    # contact tally per label; labels never exceed next_label + n
    tally = np.zeros(next_label + n, dtype=np.int64)
    seen = np.empty(n + 1, dtype=np.int64)
    merged = 0
    promoted = 0
    remaining = int(np.sum(resolved < 0))
    current = 0
    cursor = 0
    by_size = np.empty(0, dtype=np.int64)
    while remaining > 0:
        current += 1
        n_cand = 0
        for f in frontier:
            for e in range(indptr[f], indptr[f + 1]):
                c = nbr[e]
                if resolved[c] < 0 and not queued[c]:
                    queued[c] = True
                    cand[n_cand] = c
                    n_cand += 1
        if n_cand == 0:
            if by_size.size == 0:
                # only islands are left; rank them once, largest first, stable on index
                rest = np.flatnonzero(resolved < 0)
                by_size = rest[np.argsort(-sizes[rest], kind="mergesort")]
            while resolved[by_size[cursor]] >= 0:
                cursor += 1
            best = by_size[cursor]
            resolved[best] = next_label
            next_label += 1
            layer[best] = current
            promoted += 1
            remaining -= 1
            frontier = np.array([best], dtype=np.int64)
            continue
        for i in range(n_cand):
            c = cand[i]
            m = 0
            for e in range(indptr[c], indptr[c + 1]):
                o = nbr[e]
                if layer[o] < 0 or layer[o] >= current:
                    continue
                lab = resolved[o]
                if tally[lab] == 0:
                    seen[m] = lab
                    m += 1
                tally[lab] += 1
            best = seen[0]
            for j in range(1, m):
                lab = seen[j]
                if tally[lab] > tally[best] or (tally[lab] == tally[best] and lab < best):
                    best = lab
            for j in range(m):
                tally[seen[j]] = 0
            picks[i] = best
        frontier = cand[:n_cand].copy()
        for i in range(n_cand):
            c = cand[i]
            resolved[c] = picks[i]
            layer[c] = current
            queued[c] = False
        merged += n_cand
        remaining -= n_cand
    return resolved, merged, promoted


@njit(cache=True)
def _relabel(labels, comp, resolved):
    nx, ny, nz = labels.shape
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                c = comp[x, y, z]
                if c >= 0:
                    labels[x, y, z] = resolved[c]
    return labels


def enforce_connectivity(labels: np.ndarray):
    """Relabel every non-largest fragment of a cluster to its dominant neighbour.

    Returns ``(labels, n_merged, n_promoted)``. Fragments are absorbed layer
    by layer outward from each cluster's main body; an island of fragments
    touching no main body promotes its largest piece to a new cluster.
    """
    labels = np.array(labels, dtype=np.int32, order="F")
    comp, sizes, comp_label = _components(labels)
    n = len(sizes)
    if n == 0:
        return labels, 0, 0
    resolved = _keepers(sizes, comp_label, int(labels.max()) + 1)
    if (resolved >= 0).all():
        return labels, 0, 0
    indptr, nbr = _component_graph(comp, n, resolved >= 0)
    resolved, merged, promoted = _resolve(resolved, sizes, int(labels.max()) + 1, indptr, nbr)
    labels = _relabel(labels, comp, resolved)
    return labels, int(merged), int(promoted)


def _compact(region, labels):
    """Renumber surviving clusters 0..k-1 (by old id) and recompute their centres."""
    flat = region.gather(labels)
    used = np.flatnonzero(np.bincount(flat))
    remap = np.full(int(flat.max()) + 1, NONE, dtype=np.int32)
    remap[used] = np.arange(len(used), dtype=np.int32)
    flat = remap[flat]
    sums, counts = _member_means(region.values, region.coords, flat, len(used))
    return region.scatter(flat), sums / counts[:, None]


def run_slic(vol: Volume, region: LabelMask, k: int, compactness: float = 10.0,
             max_iters: int = 10, tol: float = 1.0) -> SupervoxelMap:
    if max_iters < 1:
        raise ParameterError("max_iters must be at least 1")
    if compactness < 0:
        raise ParameterError("compactness must be non-negative")
    centers = init_centers(vol, region, k)
    reg = _Region(vol, region.bool())
    step = grid_interval(len(reg.values), k)
    labels = np.full(len(reg.values), NONE, dtype=np.int32)
    residuals, objectives = [], []
    orphans = 0
    for _ in range(max_iters):
        labels, centers, residual, objective, n_orphans = _iterate(reg, centers, compactness, step, labels)
        orphans += n_orphans
        residuals.append(residual)
        objectives.append(objective)
        if residual < tol:
            break

    volume_labels, merged, promoted = enforce_connectivity(reg.scatter(labels))
    volume_labels, centers = _compact(reg, volume_labels)
    return SupervoxelMap(
        assignment=volume_labels,
        centers=centers,
        k_requested=k,
        grid_interval=step,
        residuals=residuals,
        objectives=objectives,
        diagnostics={"orphans": orphans, "fragments_merged": merged, "clusters_promoted": promoted},
    )


@njit(cache=True)
def _nearest_members(labels, centers):
    nx, ny, nz = labels.shape
    k = centers.shape[0]
    best = np.full(k, np.inf)
    out = np.full((k, 3), -1, dtype=np.int64)
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                c = labels[x, y, z]
                if c < 0:
                    continue
                d2 = (x - centers[c, 1]) ** 2 + (y - centers[c, 2]) ** 2 + (z - centers[c, 3]) ** 2
                if d2 < best[c]:
                    best[c] = d2
                    out[c, 0] = x
                    out[c, 1] = y
                    out[c, 2] = z
    return out


def centroids(svmap: SupervoxelMap) -> np.ndarray:
    """Keypoint per supervoxel: the member voxel closest to its centre.

    Row ``i`` belongs to cluster ``i``; ties go to the lowest x-fastest index.
    """
    if svmap.k_actual == 0:
        return np.zeros((0, 3), dtype=np.int64)
    return _nearest_members(svmap.assignment, np.ascontiguousarray(svmap.centers))
