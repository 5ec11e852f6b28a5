import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netmpc.design import (
    P_CAP,
    DesignInfeasible,
    design_base,
    ingredient_feasibility,
    load_designs,
    lqr_gain,
    passivity_margin,
    save_designs,
    spectral_radius,
    stabilizable,
)
from netmpc.geometry import Polytope
from netmpc.netmodel import CostWeights, Network, ParameterBounds, SubsystemModel
from netmpc.ocp import local_uncertainty
from netmpc.verify import check_passivity_samples, check_rpi_sampled, check_schur


def riccati_fixed_point(A, B, Q, R, iters=5000):
    X = Q.copy()
    for _ in range(iters):
        X = Q + A.T @ X @ A - A.T @ X @ B @ np.linalg.solve(R + B.T @ X @ B, B.T @ X @ A)
    return -np.linalg.solve(R + B.T @ X @ B, B.T @ X @ A)


def test_lqr_against_iteration():
    A, B = np.array([[1.0, 1.0], [0.0, 1.0]]), np.array([[0.5], [1.0]])
    Q, R = np.eye(2), 0.1 * np.eye(1)
    np.testing.assert_allclose(lqr_gain(A, B, Q, R), riccati_fixed_point(A, B, Q, R), atol=1e-8)


@pytest.mark.parametrize("A,B,ok", [
    (np.eye(2), np.array([[1.0], [0.0]]), False),   # second mode on the unit circle, unreachable
    (np.diag([0.5, 2.0]), np.array([[0.0], [1.0]]), True),
    (np.diag([2.0, 0.5]), np.array([[0.0], [1.0]]), False),
])
def test_stabilizable(A, B, ok):
    assert stabilizable(A, B) is ok


def single(A, B, noise=None, E=None):
    n = A.shape[0]
    return SubsystemModel(id=1, A=A, B=B, C=np.eye(1, n), E=np.zeros((n, 1)) if E is None else E,
                          state_set=Polytope.symmetric_box([2.0] * n), input_set=Polytope.symmetric_box([2.0]),
                          noise_set=noise, cost=CostWeights(np.eye(n), np.eye(1), np.eye(n)))


def test_zero_input_matrix_raises():
    m = single(np.array([[1.0, 1.0], [0.0, 1.0]]), np.zeros((2, 1)))
    with pytest.raises(DesignInfeasible):
        design_base(m, ParameterBounds((), [], []), network=Network((m,)))


def test_isolated_schur_system():
    m = single(np.diag([0.5, 0.2]), np.array([[1.0], [1.0]]))
    d = design_base(m, ParameterBounds((), [], []), network=Network((m,)))
    assert spectral_radius(m.A + m.B @ d.K_o) < 1
    # nothing disturbs the error, so the storage function doubles as the tube shape
    np.testing.assert_allclose(d.Z, d.P)
    assert d.report["passivity_margin"] > 0


def test_chain_designs(chain):
    d = chain.designs
    assert d[1] is d[5] and d[2] is d[4]
    for s in chain.net:
        base = d[s.id]
        assert spectral_radius(s.A + s.B @ base.K_o) < 1 - 1e-6
        ev = np.linalg.eigvalsh(base.P)
        assert ev[0] > 0 and ev[-1] <= P_CAP * (1 + 1e-6)
        assert np.linalg.eigvalsh(base.Z)[0] > 0
        delta, *_ = passivity_margin(s, base.K_o, chain.unc[s.id])
        assert delta > 0
        assert check_schur(s.A + s.B @ base.K_o, 1e-6)
        # storage decrease with the certificates of the returned P
        _, P, Gamma, D = passivity_margin(s, base.K_o, chain.unc[s.id])
        assert check_passivity_samples(s, np.eye(2), Gamma, D, P, base.K_o, chain.outer.Z[s.id],
                                       chain.unc[s.id], n_samples=1000, seed=s.id)
        # the unit tube is robustly invariant at the worst-case bounds
        assert check_rpi_sampled(base.Z, 1.0, base.K_o, s, chain.unc[s.id], 400, seed=s.id)


def test_save_load_roundtrip(chain, tmp_path):
    path = tmp_path / "d.json"
    save_designs(path, chain.designs)
    back = load_designs(path)
    for i, b in chain.designs.items():
        np.testing.assert_array_equal(back[i].K_o, b.K_o)
        np.testing.assert_array_equal(back[i].P, b.P)
        np.testing.assert_array_equal(back[i].Z, b.Z)


def test_load_rejects_other_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_designs(p)


def _unc(chain, i, factor):
    b = chain.bounds
    scaled = ParameterBounds(b.edges, b.a_min, b.a_max * factor)
    return local_uncertainty(chain.net, i, scaled, chain.outer)


@pytest.mark.parametrize("objective", ["alpha", "margin"])
def test_probe_monotone_in_bounds(chain, objective):
    m, base = chain.net.by_id(3), chain.designs[3]
    vals = []
    for f in (0.5, 1.0, 1.5):
        rep = ingredient_feasibility(m, base, _unc(chain, 3, f), objective=objective)
        if not rep.feasible:
            vals.append(-np.inf)  # an empty feasible set sits below everything
        else:
            vals.append(rep.alpha if objective == "alpha" else min(rep.g, rep.h))
    assert vals[0] >= vals[1] - 1e-6 >= vals[2] - 2e-6


def test_probe_inflated_bounds(chain):
    rep = ingredient_feasibility(chain.net.by_id(1), chain.designs[1], _unc(chain, 1, 1e6))
    assert not rep.feasible or rep.alpha <= 1e-6


def test_probe_default_bounds(chain):
    rep = ingredient_feasibility(chain.net.by_id(2), chain.designs[2], chain.unc[2], objective="margin")
    assert rep.feasible
    assert min(rep.g, rep.h) > 0.01
    assert 0 < rep.ingredients.alpha


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 0.9), st.floats(0.1, 0.9))
def test_lqr_closed_loop_schur(a, b):
    A = np.array([[1.0 + a, 1.0], [0.0, b]])
    B = np.array([[0.0], [1.0]])
    K = lqr_gain(A, B, np.eye(2), np.eye(1))
    assert spectral_radius(A + B @ K) < 1
