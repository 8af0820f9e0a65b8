import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ensctl.model import ParameterDomain, SampledEnsemble, TargetProfile, load_model, make_grid, sample_ensemble
from ensctl.simulation import rollout
from ensctl.synthesis import (
    PolynomialControl,
    SynthesisConfig,
    cascade_synthesize,
    control_to_inputs,
    discretize_zoh,
    fit_polynomials,
    inputs_to_coeffs,
    synthesize,
)


def scalar_ensemble(count=101):
    sys_ = load_model({"domain": {"intervals": [[0.5, 1.5]]}, "A": [["theta"]], "B": [["1"]]})
    return sys_, sample_ensemble(sys_, make_grid(sys_.domain, count=count))


INV = TargetProfile.from_strings(["1/theta"])


def test_control_to_inputs_examples():
    coeffs = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    u = control_to_inputs(coeffs)
    assert u.tolist() == [[3.0, 6.0], [2.0, 5.0], [1.0, 4.0]]
    assert np.array_equal(inputs_to_coeffs(u), coeffs)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 3), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_inputs_round_trip(m, T, seed):
    c = np.random.default_rng(seed).standard_normal((m, T))
    assert np.array_equal(inputs_to_coeffs(control_to_inputs(c)), c)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 2), st.integers(0, 10), st.integers(0, 2**32 - 1))
def test_rollout_matches_polynomial_sum(n, m, D, seed):
    rng = np.random.default_rng(seed)
    grid = make_grid(ParameterDomain.intervals((0, 1)), count=21)
    A = rng.standard_normal((21, n, n)) / np.sqrt(n)
    B = rng.standard_normal((21, n, m))
    ens = SampledEnsemble(grid, A, B)
    coeffs = rng.standard_normal((m, D + 1))
    final = rollout(ens, control_to_inputs(coeffs)).final
    want = np.zeros((21, n))
    for p in range(21):
        for j in range(m):
            v = B[p, :, j].copy()
            for k in range(D + 1):
                want[p] += coeffs[j, k] * v
                v = A[p] @ v
    scale = np.maximum(np.linalg.norm(want, axis=1), 1.0)
    assert np.max(np.linalg.norm(final - want, axis=1) / scale) <= 1e-10


def test_input_vector_target_needs_degree_zero():
    sys_ = load_model({"domain": {"intervals": [[1, 2]]}, "A": [["theta", "1"], ["0", "2"]],
                       "B": [["1"], ["theta"]]})
    ens = sample_ensemble(sys_, make_grid(sys_.domain, count=11))
    ctrl = synthesize(ens, TargetProfile.from_strings(["1", "theta"]))
    assert ctrl.degree == 0
    assert ctrl.coeffs == pytest.approx(np.array([[1.0]]))
    assert ctrl.achieved_error < 1e-12


def test_scalar_inverse_target_converges():
    _, ens = scalar_ensemble()
    ctrl = synthesize(ens, INV, SynthesisConfig(eps=1e-3))
    assert ctrl.converged
    assert ctrl.horizon == 6
    assert ctrl.achieved_error == pytest.approx(9.943476108560e-4, rel=1e-6)
    # reported error equals an independent rollout
    final = rollout(ens, control_to_inputs(ctrl)).final
    assert ctrl.achieved_error == np.max(np.abs(final[:, 0] - 1 / ens.grid.points[:, 0]))


def test_history_is_monotone():
    _, ens = scalar_ensemble()
    ctrl = synthesize(ens, INV, SynthesisConfig(eps=1e-9, max_degree=12))
    errs = [e for _, e in ctrl.history]
    assert [D for D, _ in ctrl.history] == list(range(13))
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))


def test_unconverged_returns_best_effort():
    _, ens = scalar_ensemble()
    ctrl = synthesize(ens, INV, SynthesisConfig(eps=1e-6, max_degree=3))
    assert not ctrl.converged
    assert ctrl.horizon <= 4
    assert ctrl.achieved_error == ctrl.history[-1][1]


@pytest.mark.parametrize("D", [1, 2, 4, 6, 8])
def test_fit_is_basis_independent_at_low_degree(D):
    _, ens = scalar_ensemble()
    y = INV.values(ens.grid)
    _, err, info = fit_polynomials(ens, y, D)
    assert abs(info["orth_error"] - err) <= 1e-6 * err


def test_control_json_round_trip():
    _, ens = scalar_ensemble(21)
    ctrl = synthesize(ens, INV, SynthesisConfig(eps=1e-2))
    back = PolynomialControl.from_json(ctrl.to_json())
    assert np.array_equal(back.coeffs, ctrl.coeffs)
    assert back.achieved_error == ctrl.achieved_error
    assert back.history == [tuple(h) for h in ctrl.history]


def test_synthesize_rejects_continuous():
    sys_ = load_model({"system": {"mode": "continuous"}, "domain": {"intervals": [[0, 1]]},
                       "A": [["theta"]], "B": [["1"]]})
    ens = sample_ensemble(sys_, make_grid(sys_.domain, count=5))
    with pytest.raises(ValueError, match="discrete"):
        synthesize(ens, TargetProfile.constant([1.0]))


def test_zoh_synthesis_reaches_target():
    sys_ = load_model({"system": {"mode": "continuous"}, "domain": {"intervals": [[-1, 1]]},
                       "A": [["theta"]], "B": [["1"]]})
    ens = discretize_zoh(sample_ensemble(sys_, make_grid(sys_.domain, count=41)), 0.1)
    ctrl = synthesize(ens, TargetProfile.constant([1.0]), SynthesisConfig(eps=1e-3))
    assert ctrl.converged and ctrl.zoh_step == 0.1
    assert ctrl.to_json()["mode"] == "continuous-zoh"


# --------------------------------------------------------------------------
# Cascades


def _block_diag():
    doc = {
        "domain": {"intervals": [[0.5, 1.5]]},
        "A": [["theta", "0"], ["0", "-theta/2"]],
        "B": [["1", "0"], ["0", "1"]],
    }
    sys_ = load_model(doc)
    return sample_ensemble(sys_, make_grid(sys_.domain, count=41))


def test_cascade_block_diagonal_matches_independent_blocks():
    ens = _block_diag()
    target = TargetProfile.from_strings(["1/theta", "theta"])
    cfg = SynthesisConfig(eps=1e-3)
    casc = cascade_synthesize(ens, [(1, 1), (1, 1)], target, cfg)
    block_cfg = SynthesisConfig(**{**cfg.as_dict(), "eps": cfg.eps / np.sqrt(2)})
    y = target.values(ens.grid)
    for i in range(2):
        sub = SampledEnsemble(ens.grid, ens.A[:, i:i + 1, i:i + 1], ens.B[:, i:i + 1, i:i + 1])
        alone = synthesize(sub, TargetProfile(table=y[:, i:i + 1], table_grid=ens.grid), block_cfg)
        assert np.array_equal(casc.blocks[i].coeffs, alone.coeffs)
        T = casc.horizon
        padded = np.hstack([alone.coeffs, np.zeros((1, T - alone.horizon))])
        assert np.array_equal(casc.block_coeffs([(1, 1), (1, 1)])[i], padded)
    assert casc.converged


def test_cascade_coupled_cross_validates_with_direct():
    doc = {
        "domain": {"intervals": [[0.5, 1.5]]},
        "A": [["theta", "1"], ["0", "-theta/2"]],
        "B": [["1", "0"], ["0", "1"]],
    }
    sys_ = load_model(doc)
    ens = sample_ensemble(sys_, make_grid(sys_.domain, count=41))
    target = TargetProfile.from_strings(["1/theta", "theta"])
    casc = cascade_synthesize(ens, [(1, 1), (1, 1)], target, SynthesisConfig(eps=1e-2))
    assert casc.converged and casc.achieved_error < 1e-2
    final = rollout(ens, casc.inputs).final
    assert np.max(np.linalg.norm(final - target.values(ens.grid), axis=1)) == casc.achieved_error
    direct = synthesize(ens, target, SynthesisConfig(eps=1e-2))
    assert direct.converged
    final_direct = rollout(ens, control_to_inputs(direct)).final
    assert np.max(np.linalg.norm(final_direct - final, axis=1)) < 2e-2


def test_cascade_rejects_lower_coupling():
    doc = {
        "domain": {"intervals": [[0.5, 1.5]]},
        "A": [["theta", "0"], ["1", "-theta/2"]],
        "B": [["1", "0"], ["0", "1"]],
    }
    sys_ = load_model(doc)
    ens = sample_ensemble(sys_, make_grid(sys_.domain, count=5))
    with pytest.raises(ValueError, match=r"block \(2,1\)"):
        cascade_synthesize(ens, [(1, 1), (1, 1)], TargetProfile.constant([1.0, 1.0]))


def test_cascade_example_with_identity_input():
    doc = {"domain": {"intervals": [[1, 2]]}, "A": [["theta", "1"], ["0", "2*theta"]],
           "B": [["1", "0"], ["0", "1"]]}
    sys_ = load_model(doc)
    ens = sample_ensemble(sys_, make_grid(sys_.domain, count=21))
    target = TargetProfile.constant([1.0, 1.0])
    casc = cascade_synthesize(ens, [(1, 1), (1, 1)], target, SynthesisConfig(eps=1e-3))
    assert casc.converged and casc.horizon == 1
