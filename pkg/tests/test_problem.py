"""Problem container, Hamiltonian helpers, reference-process config."""

import itertools

import numpy as np
import pytest

import driftmlp as dm
from driftmlp import (
    InvalidArgumentError,
    ProblemSpec,
    ReferenceProcess,
    UnsupportedCombinationError,
    WeightFn,
    hamiltonian_bar,
    hamiltonian_general,
    policy_readout,
    weight,
    zero_terminal,
)


def _spec(**over):
    base = dict(
        dim=2,
        control_dim=1,
        horizon=0.2,
        discount=0.0,
        sigma=np.eye(2),
        reflection=np.eye(2),
        drift_base=-np.ones(2),
        control_matrix=np.array([[1.0], [-1.0]]),
        action_bound=1.0,
        holding_cost=np.ones(2),
        pushing_penalty=np.zeros(2),
    )
    base.update(over)
    return ProblemSpec(**base)


def test_valid_spec_builds():
    s = _spec()
    assert s.dim == 2 and s.control_dim == 1
    assert s.reflection_is_identity
    assert s.sigma_is_diagonal
    assert not s.has_pushing_penalty
    assert not s.has_terminal_cost


def test_arrays_are_readonly():
    s = _spec()
    with pytest.raises(ValueError):
        s.holding_cost[0] = 5.0


@pytest.mark.parametrize(
    "bad",
    [
        dict(horizon=0.0),
        dict(horizon=-1.0),
        dict(discount=-0.5),
        dict(action_bound=-1.0),
        dict(sigma=np.eye(3)),
        dict(holding_cost=np.array([1.0, -1.0])),
        dict(holding_cost=np.ones(3)),
        dict(pushing_penalty=np.array([-0.1, 0.0])),
        dict(drift_base=np.array([np.inf, 0.0])),
        dict(control_matrix=np.ones((3, 1))),
        dict(terminal_cost=None),
    ],
)
def test_invalid_fields_rejected(bad):
    with pytest.raises(InvalidArgumentError):
        _spec(**bad)


def test_reflection_diagonal_must_be_identity():
    with pytest.raises(InvalidArgumentError):
        _spec(reflection=np.array([[2.0, 0.0], [0.0, 1.0]]))


def test_reflection_offdiagonal_sign_constraint():
    # I - R^T must be entrywise nonnegative off the diagonal
    with pytest.raises(InvalidArgumentError):
        _spec(reflection=np.array([[1.0, 0.3], [0.0, 1.0]]))
    # the transposed entry is fine
    s = _spec(reflection=np.array([[1.0, 0.0], [-0.3, 1.0]]))
    np.testing.assert_allclose(s.pushing_matrix, [[0.0, 0.3], [0.0, 0.0]])


def test_reflection_spectral_row_sum_limit():
    with pytest.raises(InvalidArgumentError):
        _spec(reflection=np.array([[1.0, 0.0], [-1.2, 1.0]]))
    # row sum exactly one is allowed
    _spec(reflection=np.array([[1.0, -1.0], [-1.0, 1.0]]))


def test_sigma_diag_requires_diagonal():
    s = _spec(sigma=np.array([[1.0, 0.5], [0.0, 1.0]]))
    assert not s.sigma_is_diagonal
    with pytest.raises(UnsupportedCombinationError):
        s.sigma_diag


def test_dict_round_trip():
    s = _spec(discount=0.7, pushing_penalty=np.array([0.2, 0.0]))
    again = ProblemSpec.from_dict(s.to_dict())
    assert again.to_dict() == s.to_dict()


def test_json_round_trip():
    s = dm.build_open_chain(3, action_bound=2.0, holding_cost=[1.0, 2.0, 3.0])
    again = ProblemSpec.from_json(s.to_json())
    assert again.to_dict() == s.to_dict()


def test_unregistered_terminal_cost_not_serializable():
    s = _spec(terminal_cost=lambda z: np.zeros(len(z)))
    with pytest.raises(InvalidArgumentError):
        s.to_dict()


def test_registered_terminal_cost_round_trips():
    def linear_total(z):
        return np.asarray(z).sum(axis=-1)

    dm.TERMINAL_COSTS["linear-total"] = linear_total
    try:
        s = _spec(terminal_cost=linear_total)
        again = ProblemSpec.from_dict(s.to_dict())
        assert again.terminal_cost is linear_total
    finally:
        del dm.TERMINAL_COSTS["linear-total"]


def test_unknown_terminal_name_rejected():
    d = _spec().to_dict()
    d["terminal_cost"] = "no-such-cost"
    with pytest.raises(InvalidArgumentError):
        ProblemSpec.from_dict(d)


def test_zero_terminal_flag():
    assert zero_terminal(np.ones((4, 2))) == 0.0
    assert not _spec(terminal_cost=zero_terminal).has_terminal_cost


def test_bar_hamiltonian_matches_vertex_enumeration():
    # the minimized control term is affine in the action, so the minimum
    # over the box sits at a vertex; enumerate them
    rng = np.random.default_rng(0)
    spec = dm.build_open_chain(3, action_bound=1.7, holding_cost=[1.0, 2.0, 3.0])
    for _ in range(60):
        p = rng.normal(size=3)
        gp = spec.control_matrix.T @ p
        best = min(
            float(np.dot(a, gp))
            for a in itertools.product([0.0, 1.7], repeat=spec.control_dim)
        )
        assert np.isclose(hamiltonian_bar(spec, p), best)


def test_bar_hamiltonian_batch_shape():
    spec = dm.build_open_chain(4, action_bound=1.0, holding_cost=np.ones(4))
    p = np.random.default_rng(1).normal(size=(5, 6, 4))
    out = hamiltonian_bar(spec, p)
    assert out.shape == (5, 6)
    assert np.isclose(out[2, 3], hamiltonian_bar(spec, p[2, 3]))


def test_general_hamiltonian_reduces_to_bar_plus_costs(chain2):
    p = np.array([0.4, -0.9])
    x = np.array([0.3, 1.1])
    got = hamiltonian_general(chain2, x, p, chain2.drift_base)
    want = hamiltonian_bar(chain2, p) + chain2.holding_cost @ x
    assert np.isclose(got, want)


def test_general_hamiltonian_drift_offset(chain2):
    # evaluating under a reference drift different from the base drift adds
    # the inner product with the mismatch
    p = np.array([1.0, 2.0])
    x = np.zeros(2)
    btilde = np.array([0.5, -0.25])
    got = hamiltonian_general(chain2, x, p, btilde)
    base = hamiltonian_general(chain2, x, p, chain2.drift_base)
    assert np.isclose(got - base, (chain2.drift_base - btilde) @ p)


def test_general_hamiltonian_rejects_nonfinite(chain2):
    with pytest.raises(InvalidArgumentError):
        hamiltonian_general(chain2, np.zeros(2), np.array([np.nan, 0.0]), chain2.drift_base)


def test_policy_readout_thresholds(chain2):
    # serve whenever the gradient difference across the chain is nonpositive
    assert policy_readout(np.array([0.2, 0.9]), chain2).tolist() == [1.0]
    assert policy_readout(np.array([0.9, 0.2]), chain2).tolist() == [0.0]
    # ties go to the bound
    assert policy_readout(np.zeros(2), chain2).tolist() == [1.0]


def test_weight_function():
    w = WeightFn.for_dim(4, alpha0=2.0)
    assert weight(w, np.zeros(4)) >= 1.0
    x = np.array([0.5, -1.5, 0.0, 1.0])
    want = 1.0 + w.log_dim_term + 1.5**2.0
    assert np.isclose(weight(w, x), want)


def test_weight_fn_validation():
    with pytest.raises(InvalidArgumentError):
        WeightFn(alpha0=0.5, log_dim_term=1.0)
    with pytest.raises(InvalidArgumentError):
        WeightFn(alpha0=1.0, log_dim_term=-0.1)


def test_reference_exact_refuses_drift():
    with pytest.raises(UnsupportedCombinationError):
        ReferenceProcess("exact", drift=lambda x: -np.ones_like(x))


def test_reference_euler_steps_validated():
    with pytest.raises(InvalidArgumentError):
        ReferenceProcess.euler(steps_per_interval=0)


def test_reference_drift_defaults_to_base(chain2):
    ref = ReferenceProcess.euler()
    x = np.array([[0.0, 1.0], [2.0, 3.0]])
    np.testing.assert_allclose(ref.drift_at(chain2, x), -np.ones((2, 2)))
    # constant drift advertises no jacobian so the path simulator can skip
    # the accumulation entirely
    assert ref.jacobian_at(chain2, x[0]) is None


def test_reference_custom_drift_needs_jacobian(chain2):
    ref = ReferenceProcess.euler(drift=lambda x: -np.ones_like(x))
    ref.drift_at(chain2, np.zeros(2))
    with pytest.raises(InvalidArgumentError):
        ref.jacobian_at(chain2, np.zeros(2))
