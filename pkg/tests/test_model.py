import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ensctl.model import (
    ModelError,
    ParameterDomain,
    ParamGrid,
    SampledEnsemble,
    TargetProfile,
    load_model,
    load_model_file,
    make_grid,
    refine_grid,
    sample_ensemble,
)

ROTATION = {
    "system": {"n": 2, "m": 2, "mode": "discrete"},
    "domain": {"intervals": [[1, 2]]},
    "A": [["0", "-theta"], ["theta", "0"]],
    "B": [["1", "0"], ["0", "1"]],
}


def test_load_rotation_model():
    sys_ = load_model(ROTATION)
    assert (sys_.n, sys_.m, sys_.d) == (2, 2, 1)
    assert sys_.time_mode == "discrete"


def test_load_from_text_and_file(tmp_path):
    text = json.dumps(ROTATION)
    assert load_model(text).n == 2
    p = tmp_path / "rot.model"
    p.write_text(text)
    assert load_model_file(p).m == 2


def test_dimension_mismatch():
    doc = dict(ROTATION, B=[["1"], ["0"], ["0"]])
    with pytest.raises(ModelError, match="dimension mismatch"):
        load_model(doc)


def test_system_section_checked():
    with pytest.raises(ModelError, match="system.n"):
        load_model(dict(ROTATION, system={"n": 3, "m": 2}))


def test_reversed_interval_rejected():
    with pytest.raises(ModelError, match="invalid interval"):
        load_model(dict(ROTATION, domain={"intervals": [[2, 1]]}))


def test_empty_domain_rejected():
    with pytest.raises(ModelError, match="empty domain"):
        load_model(dict(ROTATION, domain={"intervals": []}))


def test_overlapping_intervals_rejected():
    with pytest.raises(ModelError, match="not disjoint"):
        ParameterDomain.intervals((0, 1), (0.5, 2))


def test_parse_error_names_entry():
    with pytest.raises(ModelError, match=r"A\[2,1\]"):
        load_model(dict(ROTATION, A=[["0", "-theta"], ["theta +", "0"]]))


def test_parameter_index_checked_against_domain():
    with pytest.raises(ModelError):
        load_model(dict(ROTATION, A=[["0", "-theta2"], ["theta", "0"]]))


def test_malformed_json():
    with pytest.raises(ModelError, match="JSON"):
        load_model("{not json")


def test_grid_examples():
    g = make_grid(ParameterDomain.intervals((0, 1)), count=3)
    assert g.points[:, 0].tolist() == [0.0, 0.5, 1.0]
    g = make_grid(ParameterDomain.intervals((0, 1), (2, 3)), count=2)
    assert g.points[:, 0].tolist() == [0.0, 1.0, 2.0, 3.0]
    g = make_grid(ParameterDomain.box((0, 1), (0, 1)), count=2)
    assert sorted(map(tuple, g.points)) == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_grid_defaults_and_limits():
    assert len(make_grid(ParameterDomain.intervals((0, 1)))) == 101
    assert len(make_grid(ParameterDomain.box((0, 1), (0, 1)))) == 33 * 33
    with pytest.raises(ModelError, match="maximum"):
        make_grid(ParameterDomain.box((0, 1), (0, 1), (0, 1)), count=100)
    with pytest.raises(ModelError, match=">= 2"):
        make_grid(ParameterDomain.intervals((0, 1)), count=1)
    assert len(make_grid(ParameterDomain.intervals((3, 3)))) == 1


def test_density_is_segments_per_unit():
    g = make_grid(ParameterDomain.intervals((0, 2)), density=5)
    assert len(g) == 11


@settings(max_examples=60, deadline=None)
@given(
    st.floats(-5, 5, allow_nan=False),
    st.floats(0.01, 5, allow_nan=False),
    st.integers(1, 20),
)
def test_refinement_contains_coarse_points(lo, width, k):
    dom = ParameterDomain.intervals((lo, lo + width))
    coarse = make_grid(dom, density=k / width)
    fine = make_grid(dom, density=2 * k / width)
    assert np.all(np.isin(coarse.points[:, 0], fine.points[:, 0]))
    assert np.array_equal(refine_grid(dom, coarse, 2).points, fine.points)


def test_refine_grid_is_superset_2d():
    dom = ParameterDomain.box((0, 1), (-1, 1))
    coarse = make_grid(dom, count=5)
    fine = refine_grid(dom, coarse, 4)
    assert len(fine) == 17 * 17
    fine_set = set(map(tuple, fine.points))
    assert all(tuple(p) in fine_set for p in coarse.points)


def test_grid_points_inside_domain_and_distinct():
    dom = ParameterDomain([((0.0, 1.0), (0.0, 1.0)), ((0.5, 2.0), (0.5, 2.0))])
    g = make_grid(dom, count=7)
    assert len(np.unique(g.points, axis=0)) == len(g)
    assert all(dom.contains(p) for p in g.points)


def test_sampling_examples():
    sys_ = load_model(ROTATION)
    g = ParamGrid(np.array([[1.0], [2.0]]))
    ens = sample_ensemble(sys_, g)
    assert ens.A[1].tolist() == [[0.0, -2.0], [2.0, 0.0]]
    assert np.array_equal(ens.B[0], ens.B[1])


def test_sampling_singular_point_names_theta():
    sys_ = load_model({"domain": {"intervals": [[0, 1]]}, "A": [["1/theta"]], "B": [["1"]]})
    with pytest.raises(ModelError, match=r"theta=\(0\.0,\)"):
        sample_ensemble(sys_, make_grid(sys_.domain, count=3))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 20), min_size=1, max_size=21, unique=True))
def test_sampling_commutes_with_restriction(idx):
    sys_ = load_model(ROTATION)
    g = make_grid(sys_.domain, count=21)
    full = sample_ensemble(sys_, g).subset(idx)
    direct = sample_ensemble(sys_, g.subset(idx))
    assert np.array_equal(full.A, direct.A)
    assert np.array_equal(full.B, direct.B)


def test_sampled_ensemble_is_read_only_and_finite():
    g = ParamGrid(np.array([[0.0]]))
    ens = SampledEnsemble(g, np.ones((1, 1, 1)), np.ones((1, 1, 1)))
    with pytest.raises(ValueError):
        ens.A[0, 0, 0] = 2.0
    with pytest.raises(ModelError, match="finite"):
        SampledEnsemble(g, np.full((1, 1, 1), np.inf), np.ones((1, 1, 1)))


def test_target_profiles():
    g = make_grid(ParameterDomain.intervals((1, 2)), count=3)
    t = TargetProfile.from_strings(["1/theta", "2"])
    assert np.allclose(t.values(g), [[1, 2], [1 / 1.5, 2], [0.5, 2]])
    tab = TargetProfile(table=np.zeros((3, 1)), table_grid=g)
    assert tab.can_evaluate(g)
    assert not tab.can_evaluate(make_grid(ParameterDomain.intervals((1, 2)), count=5))
    assert TargetProfile.constant([1.0, 1.0]).values(g).shape == (3, 2)


def test_model_target_section():
    sys_ = load_model(dict(ROTATION, target=["1", "theta"]))
    assert len(sys_.target) == 2
    with pytest.raises(ModelError, match="target"):
        load_model(dict(ROTATION, target=["1"]))
