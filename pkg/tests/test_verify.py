from dataclasses import replace

import numpy as np
import pytest
from scipy.linalg import block_diag

from netmpc.ocp import solve_step
from netmpc.verify import (
    check_containment,
    check_global_lyapunov,
    check_lmis,
    check_passivity_samples,
    check_rowsums,
    check_rpi_sampled,
    check_schur,
    check_tightened_plan,
    input_image,
    lmi_blocks,
)


@pytest.fixture(scope="module")
def solved(chain):
    out = {}
    for i, ref in ((1, 1.5), (3, -0.7)):
        m = chain.net.by_id(i)
        sol = solve_step(m, chain.designs[i], np.array([0.1, -0.1]), chain.unc[i], (np.array([ref, 0.0]), np.zeros(1)))
        assert sol.optimal
        out[i] = sol
    return out


def test_schur():
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    assert not check_schur(A, 1e-6)               # K = 0: double eigenvalue at 1
    assert check_schur(np.zeros((2, 2)), 1e-6)
    from netmpc.design import lqr_gain

    B = np.array([[0.5], [1.0]])
    assert check_schur(A + B @ lqr_gain(A, B, np.eye(2), 0.1 * np.eye(1)), 1e-6)
    assert check_schur(0.5 * np.eye(2), 0.4)
    assert not check_schur(0.5 * np.eye(2), 0.6)
    with pytest.raises(ValueError):
        check_schur(np.ones((2, 3)))


def test_rpi_passes_on_solution(chain, solved):
    for i, sol in solved.items():
        ing = sol.ingredients
        rep = check_rpi_sampled(chain.designs[i].Z, ing.alpha, ing.K, chain.net.by_id(i), chain.unc[i], 500, seed=1)
        assert rep, rep
        assert rep.seed == 1 and rep.witness is None


def test_rpi_zero_radius_with_disturbance(chain):
    m = chain.net.by_id(1)
    rep = check_rpi_sampled(chain.designs[1].Z, 0.0, chain.designs[1].K_o, m, chain.unc[1], 50, seed=0)
    assert not rep
    assert set(rep.witness) == {"e", "w", "d"}


def test_rpi_shrunk_tube_fails(chain, solved):
    ing = solved[1].ingredients
    rep = check_rpi_sampled(chain.designs[1].Z, 0.05 * ing.alpha, ing.K, chain.net.by_id(1), chain.unc[1], 200)
    assert not rep


def test_passivity_samples(chain, solved):
    for i, sol in solved.items():
        ing, base = sol.ingredients, chain.designs[i]
        m = chain.net.by_id(i)
        args = (m, ing.T, ing.Gamma, ing.D, base.P, base.K_o, chain.outer.Z[i], chain.unc[i])
        assert check_passivity_samples(*args, n_samples=500, seed=2)
        assert check_passivity_samples(*args, n_samples=100, seed=3, w_zero=True)
        bad = (m, ing.T, 100 * ing.Gamma) + args[3:]
        assert not check_passivity_samples(*bad, n_samples=500, seed=2)


def test_containment(chain, solved):
    ing = solved[1].ingredients
    m, Z = chain.net.by_id(1), chain.designs[1].Z
    sx, su = check_containment(m, Z, ing.alpha, ing.K, ing.g, ing.h)
    assert sx and su
    sx, su = check_containment(m, Z, ing.alpha, ing.K, 1.0, 1.0)
    assert not sx and not su
    # zero gain: the input image degenerates, the tightened set alone must fit
    sx, su = check_containment(m, Z, ing.alpha, np.zeros((1, 2)), ing.g, 1.0)
    assert su
    assert input_image(np.zeros((1, 2)), Z, 1.0) is None


def test_rowsums(chain, solved):
    ing = solved[3].ingredients
    assert check_rowsums(ing.Gamma, ing.D, chain.unc[3])
    assert not check_rowsums(0.01 * ing.Gamma, ing.D, chain.unc[3])
    assert not check_rowsums(ing.Gamma, 100 * ing.D, chain.unc[3])


def test_tightened_plan(chain, solved):
    raw = solved[1].raw
    assert check_tightened_plan(chain.net.by_id(1), raw, 0.95)
    assert not check_tightened_plan(chain.net.by_id(1), replace(raw, g=0.5 * raw.g), 0.95)


def test_lmis(chain, solved):
    for i, sol in solved.items():
        m, base = chain.net.by_id(i), chain.designs[i]
        rep = check_lmis(m, base, chain.unc[i], sol.raw)
        assert rep, rep.witness
        blocks = lmi_blocks(m, base, chain.unc[i], sol.raw)
        assert blocks["rpi"].shape == ((9, 9) if i == 3 else (8, 8))
        for M in blocks.values():
            np.testing.assert_allclose(M, M.T, atol=1e-12)
        bad = replace(sol.raw, GammaS=10 * sol.raw.GammaS)
        assert not check_lmis(m, base, chain.unc[i], bad)


def test_global_lyapunov(chain):
    gains = {i: d.K_o for i, d in chain.designs.items()}
    P = block_diag(*[chain.designs[s.id].P for s in chain.net])
    assert check_global_lyapunov(chain.net, gains, chain.true, P, 1e-6)
    # upper bounds are also certified by the local conditions
    hi = dict(zip(chain.bounds.edges, chain.bounds.a_max))
    assert check_global_lyapunov(chain.net, gains, hi, P, 1e-6)
    huge = {e: 60.0 for e in chain.true}
    assert not check_global_lyapunov(chain.net, gains, huge, P, 1e-6)
