import dataclasses

import numpy as np
import pytest

from pathlung.config import RunConfig
from pathlung.errors import InputError, SearchSpaceError, SeedSelectionError, StageError
from pathlung.evaluation import Blob, default_phantom_spec, dice, generate_phantom, phantom_regions
from pathlung.forest import ForestModel, Tree, save_model
from pathlung.pipeline import (
    STAGES,
    build_search_space,
    classify_supervoxels,
    run_pipeline,
    run_stage_one,
    supervoxel_count,
)
from pathlung.slic import run_slic
from pathlung.texture import FEATURE_NAMES
from pathlung.volume import LabelMask, Volume


def constant_model(vote_tp):
    votes = np.array([[0, 1]] if vote_tp else [[1, 0]])
    leaf = Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), votes)
    return ForestModel([leaf], list(FEATURE_NAMES), n_trees=1)


@pytest.fixture(scope="module")
def phantom_run(model):
    vol, truth = generate_phantom(default_phantom_spec(1003))
    return vol, truth, run_pipeline(vol, RunConfig(), model)


@pytest.fixture(scope="module")
def clean_stage_one():
    spec = default_phantom_spec(5, n_blobs=0)
    vol, truth = generate_phantom(spec)
    _, fc = run_stage_one(vol, RunConfig())
    return spec, vol, truth, fc


def test_search_space_matches_analytic_ring_interior(clean_stage_one):
    spec, vol, _, fc = clean_stage_one
    space = build_search_space(vol, fc)
    regions = phantom_regions(spec)
    ring_disk = regions["ribs"]
    x, y = np.ogrid[: vol.dims[0], : vol.dims[1]]
    cx, cy = spec.center_xy
    a, b = spec.rib_radii[0] + spec.rib_thickness, spec.rib_radii[1] + spec.rib_thickness
    outer = (((x - cx) / a) ** 2 + ((y - cy) / b) ** 2 <= 1.0)[:, :, None] & np.ones(vol.dims, bool)
    expected = outer & ~ring_disk & ~fc.bool()
    assert dice(space.mask, LabelMask(expected)) > 0.97
    assert not np.any(space.mask.bool() & fc.bool())
    assert not np.any(space.mask.bool() & space.bone)
    assert not np.any(space.mask.bool() & ~space.hull)
    p = space.provenance
    assert p["bone_hu"] == 200.0 and p["hull_slices"] == [0, vol.dims[2] - 1]
    assert p["search_voxels"] == space.mask.count()


def test_unpopulated_slices_borrow_nearest_hull():
    data = np.full((20, 20, 6), -1000.0)
    data[5, 5, 1] = data[15, 5, 1] = data[10, 15, 1] = 800.0
    data[3, 3, 4] = data[17, 3, 4] = data[17, 17, 4] = data[3, 17, 4] = 800.0
    vol = Volume(data)
    space = build_search_space(vol, LabelMask.empty(vol.dims))
    hull = space.hull
    assert np.array_equal(hull[:, :, 0], hull[:, :, 1])
    assert np.array_equal(hull[:, :, 2], hull[:, :, 1])  # tie between slices 1 and 4 goes low
    assert np.array_equal(hull[:, :, 3], hull[:, :, 4]) and np.array_equal(hull[:, :, 5], hull[:, :, 4])
    assert space.provenance["borrowed_slices"] == 4


def test_pure_air_has_no_search_space():
    vol = Volume(np.full((8, 8, 4), -1000.0))
    with pytest.raises(SearchSpaceError):
        build_search_space(vol, LabelMask.empty(vol.dims))
    with pytest.raises(InputError):
        build_search_space(vol, LabelMask.empty((8, 8, 3)))


def test_full_fc_mask_short_circuits(model):
    n = 40
    x, y = np.ogrid[:n, :n]
    r = np.sqrt((x - 19.5) ** 2 + (y - 19.5) ** 2)
    # bone everywhere outside a disc of parenchyma: the hull holds nothing but bone and FC
    data = np.where(r <= 15, -550.0, 700.0)
    vol = Volume(np.repeat(data[:, :, None], 8, axis=2))
    res = run_pipeline(vol, RunConfig(), model)
    assert res.search_space.mask.count() == 0
    assert res.pathology_mask.count() == 0 and res.supervoxels is None
    assert res.skipped == ["slic", "classify"] and res.notes
    assert res.final_mask == res.initial_mask


def test_classification_extremes(clean_stage_one):
    _, vol, _, fc = clean_stage_one
    region = build_search_space(vol, fc).mask
    sv = run_slic(vol, region, supervoxel_count(region.count(), RunConfig()))
    none, recs = classify_supervoxels(vol, sv, constant_model(False))
    assert none.count() == 0 and len(recs) == sv.k_actual and all(r.label == 0 for r in recs)
    every, recs = classify_supervoxels(vol, sv, constant_model(True))
    assert every == region
    assert sum(r.size for r in recs) == region.count()


def test_pathology_free_phantom_keeps_fc_mask(model, clean_stage_one):
    _, vol, _, _ = clean_stage_one
    res = run_pipeline(vol, RunConfig(), model)
    assert dice(res.final_mask, res.initial_mask) >= 0.99


def test_consolidation_blob_detected(model):
    base = default_phantom_spec(11, n_blobs=0)
    lung = base.lungs[0]
    blob = Blob(lung.center, 7.0, "consolidation")
    spec = dataclasses.replace(base, blobs=(blob,))
    vol, truth = generate_phantom(spec)
    blob_mask = phantom_regions(spec)["blobs"][0]
    res = run_pipeline(vol, RunConfig(), model)
    hit = np.count_nonzero(res.pathology_mask.bool() & blob_mask) / blob_mask.sum()
    assert hit >= 0.9


def test_consolidation_touching_chest_wall(model):
    base = default_phantom_spec(12, n_blobs=0)
    lung = base.lungs[0]
    # centred 3 voxels inside the lateral lung wall, so the lesion meets the body tissue
    center = (lung.center[0] - lung.radii[0] + 3.0, lung.center[1], lung.center[2])
    spec = dataclasses.replace(base, blobs=(Blob(center, 7.0, "consolidation"),))
    vol, truth = generate_phantom(spec)
    blob_mask = phantom_regions(spec)["blobs"][0]
    edge = np.zeros(vol.dims, bool)
    edge[:-1] |= blob_mask[:-1] & ~phantom_regions(spec)["lungs"][1:]
    edge[1:] |= blob_mask[1:] & ~phantom_regions(spec)["lungs"][:-1]
    assert edge.any()  # the lesion really borders non-lung tissue
    res = run_pipeline(vol, RunConfig(), model)
    final, initial = dice(res.final_mask, truth), dice(res.initial_mask, truth)
    assert final >= 0.90 and final > initial


def test_result_invariants(phantom_run):
    vol, truth, res = phantom_run
    init, path, final = res.initial_mask.bool(), res.pathology_mask.bool(), res.final_mask.bool()
    assert np.array_equal(final, init | path)
    assert not np.any(path & ~res.search_space.mask.bool())
    assert not np.any(path & res.search_space.bone)
    assert not np.any(path & ~res.search_space.hull)
    assert dice(res.final_mask, truth) >= dice(res.initial_mask, truth)


def test_timings_complete(phantom_run):
    _, _, res = phantom_run
    assert list(res.timings_ms) == list(STAGES)
    for stage, ms in res.timings_ms.items():
        assert ms > 0 or stage in res.skipped


def test_report_contents(phantom_run):
    _, _, res = phantom_run
    doc = res.report()
    assert doc["parameters"]["rf_trees"] == 70 and doc["parameters"]["rf_bag_fraction"] == 0.6
    assert doc["parameters"]["fc_mean"] == -550 and doc["parameters"]["fc_sigma"] == 150
    assert len(doc["records"]) == res.supervoxels.k_actual == doc["supervoxels"]["k_actual"]
    rec = doc["records"][0]
    assert set(rec) == {"id", "centroid", "size", "score", "label"}
    assert doc["counts"]["final"] == res.final_mask.count()
    assert "timings_ms" in doc and "timings_ms" not in res.report(include_timings=False)


def test_deterministic_rerun(model, phantom_run):
    vol, _, res = phantom_run
    again = run_pipeline(vol, RunConfig(), model)
    assert again.final_mask == res.final_mask
    assert again.report(include_timings=False) == res.report(include_timings=False)


def test_model_from_path(tmp_path, model, clean_stage_one):
    _, vol, _, _ = clean_stage_one
    save_model(model, tmp_path / "m.json")
    a = run_pipeline(vol, RunConfig(), tmp_path / "m.json")
    b = run_pipeline(vol, RunConfig(), model)
    assert a.final_mask == b.final_mask
    with pytest.raises(InputError):
        run_pipeline(vol, RunConfig(), None)


def test_per_voxel_mode(model, clean_stage_one):
    _, vol, truth, _ = clean_stage_one
    res = run_pipeline(vol, RunConfig(per_voxel=True), model)
    assert res.skipped == ["slic"] and res.supervoxels is None and res.records == []
    assert dice(res.final_mask, truth) > 0.95


def test_stage_error_names_stage(model):
    vol = Volume(np.zeros((10, 10, 10)))
    with pytest.raises(StageError) as err:
        run_pipeline(vol, RunConfig(), model)
    assert err.value.stage == "seeds" and isinstance(err.value.cause, SeedSelectionError)


def test_supervoxel_count():
    assert supervoxel_count(35000, RunConfig()) == 100
    assert supervoxel_count(10, RunConfig()) == 1
    assert supervoxel_count(10, RunConfig(slic_k=50)) == 10
    assert supervoxel_count(1000, RunConfig(slic_k=7)) == 7
