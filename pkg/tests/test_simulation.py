import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from ensctl.model import ParameterDomain, SampledEnsemble, TargetProfile, load_model, make_grid, sample_ensemble
from ensctl.simulation import rollout, sup_error, write_trajectory_csv
from ensctl.synthesis import SynthesisConfig, control_to_inputs, synthesize
from ensctl.zoh import AliasingError, discretize_zoh, zoh_pair

GRID = make_grid(ParameterDomain.intervals((0, 1)), count=11)


def random_ensemble(rng, n, m, mode="discrete"):
    A = rng.standard_normal((len(GRID), n, n)) / np.sqrt(n)
    B = rng.standard_normal((len(GRID), n, m))
    return SampledEnsemble(GRID, A, B, mode)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(1, 2), st.integers(0, 8), st.integers(0, 2**32 - 1))
def test_rollout_is_linear(n, m, T, seed):
    rng = np.random.default_rng(seed)
    ens = random_ensemble(rng, n, m)
    u1, u2 = rng.standard_normal((2, T, m))
    x0 = rng.standard_normal(n)
    a, b = rng.standard_normal(2)
    lhs = rollout(ens, a * u1 + b * u2, a * x0).states
    rhs = a * rollout(ens, u1, x0).states + b * rollout(ens, u2).states
    assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(0, 6), st.integers(0, 6), st.integers(0, 2**32 - 1))
def test_rollouts_chain(n, T1, T2, seed):
    rng = np.random.default_rng(seed)
    ens = random_ensemble(rng, n, 1)
    u = rng.standard_normal((T1 + T2, 1))
    x0 = rng.standard_normal(n)
    whole = rollout(ens, u, x0)
    first = rollout(ens, u[:T1], x0)
    second = rollout(ens, u[T1:], first.final)
    assert np.allclose(second.final, whole.final, rtol=1e-12, atol=1e-12)


def test_rollout_shapes_and_errors():
    ens = random_ensemble(np.random.default_rng(0), 2, 1)
    traj = rollout(ens, np.zeros((3, 1)))
    assert traj.states.shape == (11, 4, 2)
    assert traj.horizon == 3
    with pytest.raises(ValueError, match="inputs"):
        rollout(ens, np.zeros((3, 2)))
    with pytest.raises(ValueError, match="x0"):
        rollout(ens, np.zeros((3, 1)), np.zeros(3))
    with pytest.raises(ValueError, match="discrete"):
        rollout(SampledEnsemble(GRID, ens.A, ens.B, "continuous"), np.zeros((1, 1)))


def test_zoh_free_response_matches_matrix_exponential():
    rng = np.random.default_rng(3)
    ens = random_ensemble(rng, 3, 1, "continuous")
    h, T = 0.05, 20
    x0 = rng.standard_normal(3)
    traj = rollout(discretize_zoh(ens, h), np.zeros((T, 1)), x0)
    for p, A in enumerate(ens.A):
        for k in (1, 7, T):
            assert np.allclose(traj.states[p, k], expm(k * h * A) @ x0, rtol=1e-10, atol=1e-12)
    assert traj.times[-1] == pytest.approx(T * h)


def test_zoh_examples():
    B = np.array([[1.0], [2.0]])
    Ad, Bd = zoh_pair(np.zeros((2, 2)), B, 0.3)
    assert np.allclose(Ad, np.eye(2), atol=1e-15)
    assert np.allclose(Bd, 0.3 * B, atol=1e-15)
    h = 0.4
    Ad, _ = zoh_pair(np.array([[0.0, -1.0], [1.0, 0.0]]), B, h)
    rot = np.array([[math.cos(h), -math.sin(h)], [math.sin(h), math.cos(h)]])
    assert np.allclose(Ad, rot, atol=1e-14)


def test_aliasing_guard_boundary():
    grid = make_grid(ParameterDomain.intervals((1, 2)), count=3)
    A = np.array([t * np.array([[0.0, -1.0], [1.0, 0.0]]) for t in grid.points[:, 0]])
    ens = SampledEnsemble(grid, A, np.ones((3, 2, 1)), "continuous")
    discretize_zoh(ens, math.pi / 2 * (1 - 1e-9))
    with pytest.raises(AliasingError) as info:
        discretize_zoh(ens, math.pi / 2)
    assert info.value.theta == (2.0,)
    assert info.value.suggested_h < math.pi / 2


def test_sup_error_example():
    grid = make_grid(ParameterDomain.intervals((0, 1)), count=2)
    ens = SampledEnsemble(grid, np.zeros((2, 2, 2)), np.stack([np.eye(2)] * 2))
    traj = rollout(ens, np.array([[0.3, 0.4]]))
    rep = sup_error(traj, TargetProfile.constant([0.0, 0.0]))
    assert rep.sup_error == pytest.approx(0.5, abs=1e-15)
    assert rep.per_point.tolist() == pytest.approx([0.5, 0.5])
    assert rep.revalidation_sup_error is None


def test_revalidation_on_finer_grid():
    sys_ = load_model({"domain": {"intervals": [[0.5, 1.5]]}, "A": [["theta"]], "B": [["1"]]})
    ens = sample_ensemble(sys_, make_grid(sys_.domain, count=101))
    target = TargetProfile.from_strings(["1/theta"])
    for eps in (1e-2, 1e-3, 1e-4):
        ctrl = synthesize(ens, target, SynthesisConfig(eps=eps))
        rep = sup_error(rollout(ens, control_to_inputs(ctrl)), target, sys_, 4)
        assert rep.sup_error == ctrl.achieved_error
        assert rep.revalidation_grid_size == 401
        assert rep.revalidation_sup_error <= 1.25 * rep.sup_error


def test_revalidation_skipped_for_tabulated_target():
    sys_ = load_model({"domain": {"intervals": [[0.5, 1.5]]}, "A": [["theta"]], "B": [["1"]]})
    grid = make_grid(sys_.domain, count=5)
    ens = sample_ensemble(sys_, grid)
    target = TargetProfile(table=np.ones((5, 1)), table_grid=grid)
    rep = sup_error(rollout(ens, np.ones((1, 1))), target, sys_, 4)
    assert rep.revalidation_sup_error is None
    assert "tabulated" in rep.notes[0]


def test_trajectory_csv(tmp_path):
    ens = random_ensemble(np.random.default_rng(1), 2, 1)
    traj = rollout(ens, np.ones((4, 1)), np.array([1.0, -1.0]))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(traj, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["t", "theta1", "x_1", "x_2"]
    assert len(rows) == 1 + 11 * 5
    assert [float(v) for v in rows[1]] == [0.0, 0.0, 1.0, -1.0]
    last = [float(v) for v in rows[-1]]
    assert last[0] == 4.0 and last[1] == 1.0
    assert last[2:] == traj.states[-1, -1].tolist()
