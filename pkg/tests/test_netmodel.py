import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netmpc.geometry import Polytope
from netmpc.netmodel import (
    CHAIN_A,
    CHAIN_C,
    CHAIN_E,
    Network,
    ParameterBounds,
    SubsystemModel,
    adjacency,
    assemble_global,
    coupling_rowsums,
    double_integrator_chain,
    validate_network,
)


@pytest.fixture(scope="module")
def chain():
    return double_integrator_chain()


def test_chain_is_valid(chain):
    net, bounds, _ = chain
    rep = validate_network(net, bounds)
    assert rep.ok, rep.violations
    assert len(net.edges()) == 8


def test_bound_ordering_violation(chain):
    net, bounds, _ = chain
    bad = ParameterBounds(bounds.edges, np.where(np.arange(8) == 0, 1.0, bounds.a_min),
                          np.where(np.arange(8) == 0, 0.5, bounds.a_max))
    rep = validate_network(net, bad)
    assert any("bound ordering" in v for v in rep.violations)


def test_graph_symmetry_violation(chain):
    net, bounds, _ = chain
    s1, s2 = net.subsystems[:2]
    broken = SubsystemModel(**{**s2.__dict__, "out_neighbors": (3,)})
    rep = validate_network(Network((s1, broken) + net.subsystems[2:]), bounds)
    assert any("graph symmetry" in v for v in rep.violations)


def test_heterogeneous_outputs_rejected(chain):
    net, _, _ = chain
    s = net.subsystems[0]
    wide = SubsystemModel(**{**s.__dict__, "C": np.eye(2), "E": np.eye(2)})
    rep = validate_network(Network((wide,) + net.subsystems[1:]))
    assert any("m0" in v for v in rep.violations)


def test_origin_must_be_interior(chain):
    net, _, _ = chain
    s = net.subsystems[0]
    shifted = SubsystemModel(**{**s.__dict__, "state_set": Polytope(np.eye(2), np.array([1.0, -0.1]))})
    assert not validate_network(Network((shifted,))).ok


def test_zero_params_is_block_diagonal(chain):
    net, _, _ = chain
    A, B, C, E = assemble_global(net, {})
    np.testing.assert_array_equal(A, np.kron(np.eye(5), CHAIN_A))
    assert B.shape == (10, 5) and C.shape == (5, 10) and E.shape == (10, 5)


def test_single_subsystem():
    net, _, _ = double_integrator_chain(size=1)
    A, *_ = assemble_global(net, {})
    np.testing.assert_array_equal(A, CHAIN_A)


def test_coupling_block(chain):
    net, _, true = chain
    A, *_ = assemble_global(net, true)
    np.testing.assert_allclose(A[0:2, 2:4], [[0, 0.05], [0, 0.1]], atol=1e-15)
    np.testing.assert_allclose(A[2:4, 0:2], 0.5 * CHAIN_E @ CHAIN_C, atol=1e-15)
    assert not A[0:2, 4:].any()


def test_global_matches_blockwise_formula(chain):
    net, bounds, _ = chain
    upper = dict(zip(bounds.edges, bounds.a_max))
    A, B, C, E = assemble_global(net, upper)
    Ag = adjacency(net, upper)
    ref = np.kron(np.eye(5), CHAIN_A) + E @ np.kron(Ag, np.eye(1)) @ C
    np.testing.assert_allclose(A, ref, atol=1e-12)


def test_chain_rowsums(chain):
    net, bounds, _ = chain
    gc = coupling_rowsums(net, bounds)
    np.testing.assert_allclose(gc.U[1], [0, 4])
    np.testing.assert_allclose(gc.V[1], [0, 2])
    np.testing.assert_allclose(gc.W[1], [4])
    # middle subsystem: in-edges 2,2 and out-edges into 1 (4) and 3 (2)
    np.testing.assert_allclose(gc.U[2], [0, 4])
    np.testing.assert_allclose(gc.V[2], [0, 6])
    np.testing.assert_allclose(gc.L_g, gc.D_g - gc.A_g)


def test_isolated_rowsums_zero():
    net, bounds, _ = double_integrator_chain(size=1)
    gc = coupling_rowsums(net, bounds)
    assert not gc.U[1].any() and not gc.V[1].any() and not gc.W[1].any()


def test_doubling_bounds_doubles_rowsums(chain):
    net, bounds, _ = chain
    a, b = coupling_rowsums(net, bounds), coupling_rowsums(net, bounds.scaled(2.0))
    for i in net.ids:
        for name in "UVW":
            np.testing.assert_allclose(getattr(b, name)[i], 2 * getattr(a, name)[i])


@settings(max_examples=50, deadline=None)
@given(k=st.integers(0, 7), extra=st.floats(0.0, 10.0))
def test_rowsums_monotone(chain, k, extra):
    net, bounds, _ = chain
    hi = bounds.a_max.copy()
    hi[k] += extra
    a = coupling_rowsums(net, bounds)
    b = coupling_rowsums(net, ParameterBounds(bounds.edges, bounds.a_min, hi))
    for i in net.ids:
        for name in "UVW":
            assert np.all(getattr(b, name)[i] >= getattr(a, name)[i] - 1e-15)


def test_incoming_roundtrip(chain):
    net, bounds, _ = chain
    s2 = net.by_id(2)
    lo, hi = bounds.incoming(s2)
    np.testing.assert_array_equal(hi, [2.0, 2.0])
    nb = bounds.with_incoming(s2, [0.1, 0.2], [1.0, 1.5])
    assert nb.interval((2, 1)) == (0.1, 1.0)
    assert nb.interval((2, 3)) == (0.2, 1.5)
    assert bounds.interval((2, 1)) == (0.0, 2.0)
