import pytest
from hypothesis import given
from hypothesis import strategies as st

from pathlung.config import FIELD_HELP, FIELD_TYPES, RunConfig, parse_value, read_config_file, write_config_file
from pathlung.errors import ParameterError


def test_defaults():
    c = RunConfig()
    assert (c.fc_mean, c.fc_sigma, c.fc_theta) == (-550, 150, 0.5)
    assert (c.rf_trees, c.rf_bag_fraction, c.rf_bootstrap) == (70, 0.6, False)
    assert (c.glcm_bins, c.glcm_offset, c.glrlm_levels, c.roi_window) == (16, 2, 8, 7)
    assert (c.slic_compactness, c.slic_max_iters, c.slic_tol, c.sv_volume) == (10, 10, 1.0, 350)


def test_every_field_documented():
    assert set(FIELD_HELP) == set(RunConfig().as_dict()) == set(FIELD_TYPES)


@pytest.mark.parametrize("bad", [
    dict(fc_sigma=0), dict(fc_theta=0), dict(slic_k=0), dict(sv_volume=0), dict(slic_max_iters=0),
    dict(slic_tol=0), dict(rf_trees=0), dict(rf_bag_fraction=1.5), dict(rf_threshold=2),
    dict(roi_window=4), dict(glcm_bins=1), dict(threads=0), dict(seed_candidates=0),
    dict(threshold_halfwidth=-1), dict(rf_max_features=0), dict(slic_compactness=-1),
])
def test_validation(bad):
    with pytest.raises(ParameterError):
        RunConfig(**bad)


def test_parse_value():
    assert parse_value("slic_k", "auto") is None and parse_value("slic_k", "12") == 12
    assert parse_value("per_voxel", "Yes") is True and parse_value("rf_bootstrap", "off") is False
    assert parse_value("fc_mean", "-600") == -600.0
    with pytest.raises(ParameterError):
        parse_value("rf_trees", "many")
    with pytest.raises(ParameterError):
        parse_value("nope", "1")
    with pytest.raises(ParameterError):
        parse_value("rf_trees", "none")


def test_config_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\nfc-theta = 0.7\n\nslic_k = auto  # derive\nper_voxel = true\n")
    assert read_config_file(p) == {"fc_theta": 0.7, "slic_k": None, "per_voxel": True}
    p.write_text("fc_theta 0.7\n")
    with pytest.raises(ParameterError):
        read_config_file(p)


@given(st.floats(0.01, 1), st.integers(1, 500), st.booleans(), st.one_of(st.none(), st.integers(1, 24)))
def test_write_read_round_trip(tmp_path_factory, theta, trees, per_voxel, mtry):
    c = RunConfig(fc_theta=theta, rf_trees=trees, per_voxel=per_voxel, rf_max_features=mtry)
    p = tmp_path_factory.mktemp("c") / "c.cfg"
    write_config_file(c, p)
    assert RunConfig(**read_config_file(p)) == c


def test_module_params():
    c = RunConfig(fc_mean=-500, roi_window=9)
    assert c.affinity().mean == -500 and c.texture().window == 9
    assert c.replace(rf_trees=3).rf_trees == 3
