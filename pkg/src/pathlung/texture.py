"""24-feature local texture descriptor on a 7x7 axial window.

Feature order: 7 GLCM (Haralick), 11 GLRLM (Galloway/Chu), 6 first-order
histogram statistics. Quantization uses the fixed HU range
``[HU_MIN, HU_MAX]`` so that intensity differences between windows survive.

GLCM: directions 0, 45, 90 and 135 degrees at the given offset, each pair
counted in both orders, all directions summed into one matrix, normalized
to unit sum. Gray indices are 0-based.

GLRLM: maximal runs along the same four directions with unit step, summed
into one ``levels x window`` matrix. Gray indices ``g`` and run lengths
``l`` are 1-based in the emphasis features; ``N_p`` is the total number of
run voxels, i.e. ``sum(R * l)``.

When a variance is zero the correlation, skewness and kurtosis are 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numba import njit

from pathlung.errors import InputError, ParameterError
from pathlung.volume import HU_MAX, HU_MIN, Volume

GLCM_NAMES = ("Energy", "Entropy", "Correlation", "IDM", "Inertia", "CS", "CP")
GLRLM_NAMES = ("SRE", "LRE", "GLN", "RLN", "RP", "LGRE", "HGRE", "SRLGE", "SRHGE", "LRLGE", "LRHGE")
HIST_NAMES = ("Mean", "Variance", "Skewness", "Kurtosis", "Min", "Max")
FEATURE_NAMES = GLCM_NAMES + GLRLM_NAMES + HIST_NAMES
N_FEATURES = len(FEATURE_NAMES)

# (dx, dy) unit steps for 0, 45, 90, 135 degrees
DIRECTIONS = np.array([[1, 0], [1, 1], [0, 1], [-1, 1]], dtype=np.int64)


@dataclass(frozen=True)
class TextureParams:
    glcm_bins: int = 16
    glcm_directions: int = 4
    glcm_offset: int = 2
    glrlm_directions: int = 4
    glrlm_levels: int = 8
    window: int = 7
    hu_min: float = HU_MIN
    hu_max: float = HU_MAX

    def __post_init__(self):
        if self.glcm_bins < 2 or self.glrlm_levels < 2:
            raise ParameterError("glcm_bins and glrlm_levels must be at least 2")
        if self.glcm_offset < 1:
            raise ParameterError("glcm_offset must be at least 1")
        if self.window < 1 or self.window % 2 == 0:
            raise ParameterError(f"window side must be odd, got {self.window}")
        for name in ("glcm_directions", "glrlm_directions"):
            if not 1 <= getattr(self, name) <= 4:
                raise ParameterError(f"{name} must lie in [1, 4]")
        if not self.hu_max > self.hu_min:
            raise ParameterError("hu_max must exceed hu_min")


# -- kernels -------------------------------------------------------------------


@njit(cache=True)
def _quantize(values, n_levels, lo, hi):
    flat_v = values.ravel()
    flat_o = np.empty(flat_v.size, dtype=np.int64)
    scale = n_levels / (hi - lo)
    for i in range(flat_v.size):
        q = int(np.floor((flat_v[i] - lo) * scale))
        if q < 0:
            q = 0
        elif q > n_levels - 1:
            q = n_levels - 1
        flat_o[i] = q
    return flat_o.reshape(values.shape)


@njit(cache=True)
def _glcm(q, n_bins, offset, n_dirs):
    w, h = q.shape
    m = np.zeros((n_bins, n_bins))
    total = 0.0
    for d in range(n_dirs):
        dx = DIRECTIONS[d, 0] * offset
        dy = DIRECTIONS[d, 1] * offset
        for x in range(w):
            for y in range(h):
                x2 = x + dx
                y2 = y + dy
                if x2 < 0 or x2 >= w or y2 < 0 or y2 >= h:
                    continue
                a = q[x, y]
                b = q[x2, y2]
                m[a, b] += 1.0
                m[b, a] += 1.0
                total += 2.0
    if total > 0:
        m /= total
    return m, total


@njit(cache=True)
def _glcm_features(m, out):
    n = m.shape[0]
    energy = 0.0
    entropy = 0.0
    mu_i = 0.0
    mu_j = 0.0
    for i in range(n):
        for j in range(n):
            p = m[i, j]
            energy += p * p
            if p > 0:
                entropy -= p * np.log2(p)
            mu_i += i * p
            mu_j += j * p
    var_i = 0.0
    var_j = 0.0
    cov = 0.0
    idm = 0.0
    inertia = 0.0
    shade = 0.0
    prom = 0.0
    for i in range(n):
        for j in range(n):
            p = m[i, j]
            if p == 0:
                continue
            var_i += (i - mu_i) ** 2 * p
            var_j += (j - mu_j) ** 2 * p
            cov += (i - mu_i) * (j - mu_j) * p
            idm += p / (1.0 + (i - j) ** 2)
            inertia += (i - j) ** 2 * p
            s = i + j - mu_i - mu_j
            shade += s ** 3 * p
            prom += s ** 4 * p
    denom = np.sqrt(var_i) * np.sqrt(var_j)
    out[0] = energy
    out[1] = entropy
    out[2] = cov / denom if denom > 0 else 0.0
    out[3] = idm
    out[4] = inertia
    out[5] = shade
    out[6] = prom


@njit(cache=True)
def _glrlm(q, n_levels, max_run, n_dirs):
    w, h = q.shape
    r = np.zeros((n_levels, max_run))
    for d in range(n_dirs):
        dx = DIRECTIONS[d, 0]
        dy = DIRECTIONS[d, 1]
        for x in range(w):
            for y in range(h):
                px = x - dx
                py = y - dy
                g = q[x, y]
                # only start counting at the first voxel of a run
                if 0 <= px < w and 0 <= py < h and q[px, py] == g:
                    continue
                length = 1
                nx_ = x + dx
                ny_ = y + dy
                while 0 <= nx_ < w and 0 <= ny_ < h and q[nx_, ny_] == g:
                    length += 1
                    nx_ += dx
                    ny_ += dy
                if length > max_run:
                    length = max_run
                r[g, length - 1] += 1.0
    return r


@njit(cache=True)
def _glrlm_features(r, out):
    n_levels, max_run = r.shape
    n_runs = 0.0
    n_vox = 0.0
    sre = lre = lgre = hgre = srlge = srhge = lrlge = lrhge = 0.0
    for gi in range(n_levels):
        g2 = (gi + 1.0) ** 2
        for li in range(max_run):
            c = r[gi, li]
            if c == 0:
                continue
            l2 = (li + 1.0) ** 2
            n_runs += c
            n_vox += c * (li + 1.0)
            sre += c / l2
            lre += c * l2
            lgre += c / g2
            hgre += c * g2
            srlge += c / (g2 * l2)
            srhge += c * g2 / l2
            lrlge += c * l2 / g2
            lrhge += c * g2 * l2
    gln = 0.0
    for gi in range(n_levels):
        s = 0.0
        for li in range(max_run):
            s += r[gi, li]
        gln += s * s
    rln = 0.0
    for li in range(max_run):
        s = 0.0
        for gi in range(n_levels):
            s += r[gi, li]
        rln += s * s
    out[0] = sre / n_runs
    out[1] = lre / n_runs
    out[2] = gln / n_runs
    out[3] = rln / n_runs
    out[4] = n_runs / n_vox
    out[5] = lgre / n_runs
    out[6] = hgre / n_runs
    out[7] = srlge / n_runs
    out[8] = srhge / n_runs
    out[9] = lrlge / n_runs
    out[10] = lrhge / n_runs


@njit(cache=True)
def _histogram_features(values, out):
    flat = values.ravel()
    n = flat.size
    vmin = flat[0]
    vmax = flat[0]
    total = 0.0
    for i in range(n):
        v = flat[i]
        total += v
        if v < vmin:
            vmin = v
        if v > vmax:
            vmax = v
    if vmin == vmax:
        out[0] = vmin
        out[1] = 0.0
        out[2] = 0.0
        out[3] = 0.0
    else:
        mean = total / n
        m2 = 0.0
        m3 = 0.0
        m4 = 0.0
        for i in range(n):
            d = flat[i] - mean
            d2 = d * d
            m2 += d2
            m3 += d2 * d
            m4 += d2 * d2
        m2 /= n
        m3 /= n
        m4 /= n
        out[0] = mean
        out[1] = m2
        # normalise stepwise; m2 * m2 underflows for spreads near 1e-80
        sd = np.sqrt(m2)
        if sd > 0:
            out[2] = m3 / m2 / sd
            out[3] = m4 / m2 / m2
        else:
            out[2] = 0.0
            out[3] = 0.0
    out[4] = vmin
    out[5] = vmax


@njit(cache=True)
def _window_descriptor(win, bins, offset, glcm_dirs, levels, glrlm_dirs, lo, hi, out):
    q16 = _quantize(win, bins, lo, hi)
    m, _ = _glcm(q16, bins, offset, glcm_dirs)
    _glcm_features(m, out[0:7])
    q8 = _quantize(win, levels, lo, hi)
    r = _glrlm(q8, levels, max(win.shape[0], win.shape[1]), glrlm_dirs)
    _glrlm_features(r, out[7:18])
    _histogram_features(win, out[18:24])


@njit(cache=True)
def _extract_batch(data, keypoints, half, bins, offset, glcm_dirs, levels, glrlm_dirs, lo, hi):
    nx, ny, nz = data.shape
    side = 2 * half + 1
    n = keypoints.shape[0]
    out = np.empty((n, 24))
    win = np.empty((side, side))
    for k in range(n):
        cx = keypoints[k, 0]
        cy = keypoints[k, 1]
        cz = keypoints[k, 2]
        for i in range(side):
            x = min(max(cx - half + i, 0), nx - 1)
            for j in range(side):
                y = min(max(cy - half + j, 0), ny - 1)
                win[i, j] = data[x, y, cz]
        _window_descriptor(win, bins, offset, glcm_dirs, levels, glrlm_dirs, lo, hi, out[k])
    return out


# -- public API ------------------------------------------------------------------


def quantize(values, n_levels: int, hu_min: float = HU_MIN, hu_max: float = HU_MAX) -> np.ndarray:
    """Uniform bins over the fixed range; values outside fall in the end bins."""
    if n_levels < 2:
        raise ParameterError("n_levels must be at least 2")
    return _quantize(np.ascontiguousarray(values, dtype=np.float64), int(n_levels), float(hu_min), float(hu_max))


def glcm(qwindow, n_bins: int = 16, offset: int = 2, n_directions: int = 4) -> np.ndarray:
    """Symmetric, direction-summed, unit-sum co-occurrence matrix of a quantized window."""
    q = np.ascontiguousarray(qwindow, dtype=np.int64)
    if q.ndim != 2:
        raise InputError("GLCM window must be 2D")
    if q.size and (q.min() < 0 or q.max() >= n_bins):
        raise InputError(f"quantized values must lie in [0, {n_bins})")
    m, total = _glcm(q, int(n_bins), int(offset), int(n_directions))
    if total == 0:
        raise InputError(f"window {q.shape} is too small for offset {offset} in every direction")
    return m


def glcm_features(m) -> np.ndarray:
    out = np.empty(7)
    _glcm_features(np.ascontiguousarray(m, dtype=np.float64), out)
    return out


def glrlm(qwindow, n_levels: int = 8, n_directions: int = 4, max_run: int | None = None) -> np.ndarray:
    """Run-length counts ``R[g, l - 1]`` summed over the scan directions."""
    q = np.ascontiguousarray(qwindow, dtype=np.int64)
    if q.ndim != 2:
        raise InputError("GLRLM window must be 2D")
    if q.size and (q.min() < 0 or q.max() >= n_levels):
        raise InputError(f"quantized values must lie in [0, {n_levels})")
    if max_run is None:
        max_run = max(q.shape)
    return _glrlm(q, int(n_levels), int(max_run), int(n_directions))


def glrlm_features(r) -> np.ndarray:
    r = np.ascontiguousarray(r, dtype=np.float64)
    if not r.sum() > 0:
        raise InputError("run-length matrix holds no runs")
    out = np.empty(11)
    _glrlm_features(r, out)
    return out


def histogram_features(values) -> np.ndarray:
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.size == 0:
        raise InputError("histogram window is empty")
    out = np.empty(6)
    _histogram_features(values, out)
    return out


def window_descriptor(window, params: TextureParams = TextureParams()) -> np.ndarray:
    """Descriptor of an already extracted HU window."""
    win = np.ascontiguousarray(window, dtype=np.float64)
    out = np.empty(N_FEATURES)
    _window_descriptor(win, params.glcm_bins, params.glcm_offset, params.glcm_directions,
                       params.glrlm_levels, params.glrlm_directions, params.hu_min, params.hu_max, out)
    return out


def extract_window(vol: Volume, keypoint, side: int = 7) -> np.ndarray:
    """Axial ``side x side`` window around ``keypoint`` with replicate padding."""
    half = side // 2
    x, y, z = (int(c) for c in keypoint)
    xs = np.clip(np.arange(x - half, x + half + 1), 0, vol.dims[0] - 1)
    ys = np.clip(np.arange(y - half, y + half + 1), 0, vol.dims[1] - 1)
    return vol.data[np.ix_(xs, ys, [z])][:, :, 0]


def extract_descriptors(vol: Volume, keypoints, params: TextureParams = TextureParams()) -> np.ndarray:
    """One 24-feature row per keypoint, in :data:`FEATURE_NAMES` order."""
    kp = np.ascontiguousarray(np.asarray(keypoints, dtype=np.int64).reshape(-1, 3))
    dims = np.array(vol.dims)
    if kp.size and (np.any(kp < 0) or np.any(kp >= dims)):
        raise InputError("keypoint outside the volume")
    return _extract_batch(vol.data, kp, params.window // 2, params.glcm_bins, params.glcm_offset,
                          params.glcm_directions, params.glrlm_levels, params.glrlm_directions,
                          float(params.hu_min), float(params.hu_max))


def extract_descriptor(vol: Volume, keypoint, params: TextureParams = TextureParams()) -> np.ndarray:
    return extract_descriptors(vol, [keypoint], params)[0]


def as_dict(fv) -> dict:
    return dict(zip(FEATURE_NAMES, (float(v) for v in fv)))


# -- CSV interchange ---------------------------------------------------------------

COORD_COLUMNS = ("x", "y", "z")


def write_feature_csv(path, keypoints, features, labels=None) -> None:
    """Header ``x,y,z,<24 feature names>[,label]``; labels are 1 (T_p) / 0 (T_n)."""
    keypoints = np.asarray(keypoints).reshape(-1, 3)
    features = np.asarray(features).reshape(-1, N_FEATURES)
    header = list(COORD_COLUMNS) + list(FEATURE_NAMES) + (["label"] if labels is not None else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(features)):
            row = [int(c) for c in keypoints[i]] + [repr(float(v)) for v in features[i]]
            if labels is not None:
                row.append(int(labels[i]))
            writer.writerow(row)


def read_feature_csv(path):
    """Return ``(keypoints, features, labels or None)``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputError(f"{path}: empty feature file")
    header = rows[0]
    expected = list(COORD_COLUMNS) + list(FEATURE_NAMES)
    if header[: len(expected)] != expected or len(header) not in (len(expected), len(expected) + 1):
        raise InputError(f"{path}: header must be {','.join(expected)}[,label]")
    has_labels = len(header) == len(expected) + 1
    if has_labels and header[-1] != "label":
        raise InputError(f"{path}: last column must be 'label'")
    body = [r for r in rows[1:] if r]
    try:
        kp = np.array([[int(v) for v in r[:3]] for r in body], dtype=np.int64).reshape(-1, 3)
        feats = np.array([[float(v) for v in r[3:3 + N_FEATURES]] for r in body]).reshape(-1, N_FEATURES)
        labels = np.array([int(r[-1]) for r in body], dtype=np.int64) if has_labels else None
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
    return kp, feats, labels
