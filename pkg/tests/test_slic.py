import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage as ndi

from pathlung.errors import ParameterError
from pathlung.evaluation import Ellipsoid
from pathlung.slic import (
    NONE,
    assign_and_update,
    centroids,
    enforce_connectivity,
    grid_interval,
    init_centers,
    run_slic,
)
from pathlung.volume import LabelMask, Volume

FACE = ndi.generate_binary_structure(3, 1)


def full(shape):
    return LabelMask(np.ones(shape, dtype=bool))


def block_labels(n=4, b=2):
    idx = np.indices((n, n, n)) // b
    m = n // b
    return idx[0] + m * (idx[1] + m * idx[2])


def same_partition(a, b):
    """Equal up to renaming of cluster ids."""
    pairs = set(zip(a.ravel().tolist(), b.ravel().tolist()))
    return len(pairs) == len(np.unique(a)) == len(np.unique(b))


def boundary(labels):
    out = np.zeros(labels.shape, dtype=bool)
    for ax in range(3):
        diff = np.diff(labels, axis=ax) != 0
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[ax], hi[ax] = slice(0, -1), slice(1, None)
        out[tuple(lo)] |= diff
        out[tuple(hi)] |= diff
    return out


def assert_connected(assignment):
    for c in np.unique(assignment[assignment >= 0]):
        _, n = ndi.label(assignment == c, structure=FACE)
        assert n == 1, f"cluster {c} has {n} pieces"


@pytest.fixture(scope="module")
def sphere_case():
    rng = np.random.default_rng(0)
    n = 40
    g = np.indices((n, n, n)).astype(float)
    truth = ((g - np.array([19.5, 18.2, 21.0])[:, None, None, None]) ** 2).sum(0) <= 13 ** 2
    data = np.where(truth, -100.0, -900.0) + rng.normal(0, 20, truth.shape)
    return Volume(data), truth


def test_grid_interval():
    assert grid_interval(64, 8) == 2
    assert grid_interval(125, 1) == 5
    assert grid_interval(10, 100) == 1


def test_init_block_centres():
    c = init_centers(Volume(np.zeros((4, 4, 4))), full((4, 4, 4)), 8)
    assert c.shape == (8, 4)
    assert sorted(map(tuple, c[:, 1:])) == sorted(
        (x, y, z) for x in (0.5, 2.5) for y in (0.5, 2.5) for z in (0.5, 2.5)
    )


def test_init_single_centre():
    vol = Volume(np.arange(125.0).reshape(5, 5, 5))
    c = init_centers(vol, full((5, 5, 5)), 1)
    assert c.tolist() == [[vol.data[2, 2, 2], 2.0, 2.0, 2.0]]


def test_init_centres_inside_ellipsoid():
    dims = (30, 26, 22)
    region = Ellipsoid((14.3, 12.0, 10.6), (11.0, 9.0, 8.0)).mask(dims)
    vol = Volume(np.zeros(dims))
    c = init_centers(vol, LabelMask(region), 50)
    assert 0 < len(c) <= 50
    vox = np.floor(c[:, 1:] + 0.5).astype(int)
    assert region[tuple(vox.T)].all()


def test_init_errors():
    vol = Volume(np.zeros((2, 2, 2)))
    with pytest.raises(ParameterError):
        init_centers(vol, full((2, 2, 2)), 9)
    with pytest.raises(ParameterError):
        init_centers(vol, LabelMask.empty((2, 2, 2)), 1)
    with pytest.raises(ParameterError):
        init_centers(vol, full((2, 2, 2)), 0)
    with pytest.raises(ParameterError):
        run_slic(vol, full((2, 2, 2)), 1, max_iters=0)


def test_constant_cube_first_iteration_is_fixed_point():
    vol = Volume(np.full((4, 4, 4), -550.0))
    region = full((4, 4, 4))
    c = init_centers(vol, region, 8)
    sv, residual = assign_and_update(vol, region, c)
    assert residual == 0.0
    assert same_partition(sv.assignment, block_labels())


def test_constant_cube_run_slic():
    sv = run_slic(Volume(np.full((4, 4, 4), -550.0)), full((4, 4, 4)), 8, tol=1e-6)
    assert sv.n_iterations <= 2 and sv.k_actual == 8
    assert same_partition(sv.assignment, block_labels())


def test_single_cluster_moves_to_mean(rng):
    data = rng.uniform(-1000, 0, (5, 4, 3))
    vol = Volume(data)
    region = full(data.shape)
    sv, _ = assign_and_update(vol, region, init_centers(vol, region, 1))
    g = np.indices(data.shape).reshape(3, -1)
    expected = [data.mean(), *g.mean(axis=1)]
    np.testing.assert_allclose(sv.centers[0], expected, rtol=1e-12)


@pytest.mark.parametrize("k", [2, 8, 27])
def test_two_intensity_halves_not_mixed(rng, k):
    data = np.full((12, 12, 12), -900.0)
    data[6:] = -100.0
    vol = Volume(data + rng.normal(0, 5, data.shape))
    region = full(data.shape)
    centers = init_centers(vol, region, k)
    assert len(centers) >= 2
    sv, previous = None, None
    for _ in range(10):
        sv, residual = assign_and_update(vol, region, centers, compactness=1.0, previous=previous)
        centers, previous = sv.centers, sv.assignment
        if residual < 1.0:
            break
    for c in np.unique(sv.assignment):
        members = np.argwhere(sv.assignment == c)[:, 0]
        assert members.max() < 6 or members.min() >= 6


def test_partition_and_outside_none(sphere_case):
    vol, truth = sphere_case
    region = LabelMask(truth)
    sv = run_slic(vol, region, 40)
    assert np.all(sv.assignment[~truth] == NONE)
    assert np.all(sv.assignment[truth] >= 0)
    assert np.array_equal(np.flatnonzero(sv.sizes() > 0), np.arange(sv.k_actual))
    assert sv.sizes().sum() == truth.sum()
    assert sv.k_actual <= 40
    label_vol = sv.label_volume()
    assert label_vol.min() == 0 and label_vol.max() == sv.k_actual


def test_connectivity_descent_and_termination(sphere_case):
    vol, _ = sphere_case
    sv = run_slic(vol, full(vol.dims), 183)
    assert_connected(sv.assignment)
    assert 1 <= sv.n_iterations <= 10 and np.all(np.isfinite(sv.residuals))
    obj = np.array(sv.objectives)
    assert np.all(np.diff(obj) <= 1e-9)


def test_boundary_recall(sphere_case):
    vol, truth = sphere_case
    sv = run_slic(vol, full(vol.dims), int(round(truth.size / 350)))
    dist = ndi.distance_transform_edt(~boundary(sv.assignment))
    recall = np.mean(dist[boundary(truth.astype(int))] <= 2)
    assert recall >= 0.95


def test_deterministic(sphere_case):
    vol, truth = sphere_case
    a = run_slic(vol, LabelMask(truth), 30)
    b = run_slic(vol, LabelMask(truth), 30)
    assert np.array_equal(a.assignment, b.assignment) and np.array_equal(a.centers, b.centers)
    assert a.residuals == b.residuals


def test_centroids(sphere_case):
    vol, truth = sphere_case
    sv = run_slic(vol, LabelMask(truth), 25)
    kp = centroids(sv)
    assert len(kp) == sv.k_actual
    assert np.array_equal(sv.assignment[tuple(kp.T)], np.arange(sv.k_actual))
    cube = run_slic(Volume(np.zeros((5, 5, 5))), full((5, 5, 5)), 1)
    assert centroids(cube).tolist() == [[2, 2, 2]]


def test_enforce_connectivity_examples():
    labels = np.zeros((5, 1, 1), dtype=np.int32)
    labels[:, 0, 0] = [0, 0, 1, 0, 0]
    out, merged, promoted = enforce_connectivity(labels)
    # cluster 0 splits into two equal pieces; the first one keeps the id
    assert out[:, 0, 0].tolist() == [0, 0, 1, 1, 1] and merged == 1 and promoted == 0
    outside = np.full((3, 1, 1), NONE, dtype=np.int32)
    outside[0] = outside[2] = 4
    out, merged, promoted = enforce_connectivity(outside)
    assert out[:, 0, 0].tolist() == [4, NONE, 5] and promoted == 1


@given(arrays(np.int32, st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 4)),
              elements=st.integers(-1, 3)))
def test_enforce_connectivity_properties(labels):
    out, _, _ = enforce_connectivity(labels)
    assert np.array_equal(out < 0, labels < 0)
    assert_connected(out)
    for c in np.unique(labels[labels >= 0]):
        comp, _ = ndi.label(labels == c, structure=FACE)
        sizes = np.bincount(comp.ravel())[1:]
        largest = np.flatnonzero(sizes == sizes.max()) + 1
        # one of the largest pieces keeps the id (ties go to the lowest x-fastest voxel)
        assert any(np.all(out[comp == i] == c) for i in largest)
