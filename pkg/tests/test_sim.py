import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netmpc.design import design_network
from netmpc.geometry import Polytope
from netmpc.netmodel import CostWeights, SubsystemModel, double_integrator_chain
from netmpc.sim import (
    DATA_DIR,
    ConfigError,
    NoEquilibrium,
    Scheme,
    SimConfig,
    SimLog,
    closed_loop_cost,
    equilibrium,
    generate_reference,
    load_config,
    load_network,
    parse_config,
    run_closed_loop,
    sample_noise,
    stream,
    write_outputs,
)

NET, BOUNDS, TRUE = double_integrator_chain()
DI = NET.by_id(1)


def test_equilibrium_double_integrator():
    x, u = equilibrium(DI, 1.5)
    np.testing.assert_allclose(x, [1.5, 0.0], atol=1e-12)
    np.testing.assert_allclose(u, [0.0], atol=1e-12)


def test_no_equilibrium():
    # x+ = 2 x has only the zero equilibrium
    m = SubsystemModel(id=9, A=[[2.0]], B=[[0.0]], C=[[1.0]], E=[[0.0]], state_set=Polytope.symmetric_box([2.0]),
                       input_set=Polytope.symmetric_box([1.0]), noise_set=None)
    with pytest.raises(NoEquilibrium):
        equilibrium(m, 1.0)
    x, _ = equilibrium(m, 0.0)
    assert x[0] == 0.0


def test_reference_schedule():
    xr, ur = generate_reference(4, 1000, 100, (-2, 2), DI)
    assert xr.shape == (1000, 2) and ur.shape == (1000, 1)
    changes = np.flatnonzero(np.any(np.diff(xr, axis=0) != 0, axis=1))
    assert len(changes) == 9                        # ten segments
    assert np.all(changes % 100 == 99)
    assert np.all(np.abs(xr[:, 0]) <= 2) and not xr[:, 1].any() and not ur.any()
    xr2, _ = generate_reference(4, 1000, 100, (-2, 2), DI)
    np.testing.assert_array_equal(xr, xr2)
    # shorter runs see a prefix of the same schedule
    xr3, _ = generate_reference(4, 250, 100, (-2, 2), DI)
    np.testing.assert_array_equal(xr3, xr[:250])
    with pytest.raises(ValueError):
        generate_reference(4, 10, 5, (-3, 2), DI)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 10**6), st.integers(0, 20))
def test_noise_draws_in_box(seed, t, i):
    box = Polytope.symmetric_box([0.025, 0.05])
    d = sample_noise(stream(seed, 1, t, i), box, 2)
    assert box.contains(d)
    np.testing.assert_array_equal(d, sample_noise(stream(seed, 1, t, i), box, 2))


def test_noise_general_polytope():
    tri = Polytope([[-1, 0], [0, -1], [1, 1]], [0.1, 0.1, 0.1])
    rng = stream(0, 1, 0, 0)
    pts = np.array([sample_noise(rng, tri, 2) for _ in range(200)])
    assert all(tri.contains(p) for p in pts)
    assert not sample_noise(rng, None, 3).any()


def test_cost_single_step():
    m = SubsystemModel(id=1, A=DI.A, B=DI.B, C=DI.C, E=DI.E, state_set=DI.state_set, input_set=DI.input_set,
                       noise_set=None, cost=CostWeights(np.eye(2), 0.1 * np.eye(1), np.eye(2)))
    from netmpc.netmodel import Network

    one = lambda a: {1: np.atleast_2d(np.asarray(a, dtype=float))}  # noqa: E731
    log = SimLog(Scheme.ROB, 0, [1], [], z=one([[1.3, 0.0], [0.0, 0.0]]), x0=one([[0, 0]]), v=one([[0.2]]),
                 xr=one([[0.3, 0.0]]), ur=one([[0.2]]), alpha={}, g={}, h={}, rho={}, stage={}, status={},
                 fallback={1: np.zeros(1, bool)}, a_min=np.zeros((1, 0)), a_max=np.zeros((1, 0)))
    assert closed_loop_cost(log, Network((m,))) == pytest.approx(1.0)


def test_network_file_matches_builder():
    net, bounds, true = load_network(DATA_DIR / "chain5.yaml")
    assert bounds.edges == BOUNDS.edges and true == TRUE
    np.testing.assert_array_equal(bounds.a_max, BOUNDS.a_max)
    for a, b in zip(net, NET):
        assert a.in_neighbors == b.in_neighbors
        np.testing.assert_array_equal(a.E, b.E)


@pytest.mark.parametrize("data", [
    {"network": "chain5.yaml", "bogus": 1},
    {"network": "chain5.yaml", "scheme": "nope"},
    {"network": "chain5.yaml", "steps": 0},
    {"network": "chain5.yaml", "reference": {"period": 0}},
    {"network": "chain5.yaml", "ocp": {"N": 0}},
    {"network": "chain5.yaml", "baseline_probe": "other"},
    {"scheme": "rob"},
])
def test_config_errors(data):
    with pytest.raises(ConfigError):
        parse_config(data)


def test_default_config_loads():
    cfg = load_config(DATA_DIR / "chain5_sim.yaml")
    assert cfg.scheme is Scheme.ADP_LRN and cfg.steps == 1000 and cfg.reference_period == 100
    assert cfg.ocp.N == 5 and cfg.ocp.xi == 0.95
    assert Scheme.parse("ADP_LRN") is Scheme.ADP_LRN


def test_origin_invariant_without_noise():
    net, bounds, _ = double_integrator_chain(size=3, noise=None)
    true = {e: 0.0 for e in bounds.edges}
    designs = design_network(net, bounds)
    cfg = SimConfig(network="-", steps=8, reference_range=(0.0, 0.0), verify_every=4)
    log = run_closed_loop(cfg, designs, network=(net, bounds, true))
    for i in log.ids:
        assert not log.z[i].any() and not log.v[i].any()
    assert closed_loop_cost(log, net) == 0.0
    assert log.fallback_count == 0
    assert all(r.passed for r in log.verify)


@pytest.fixture(scope="module")
def short_runs(chain):
    cfg = load_config(DATA_DIR / "chain5_sim.yaml").with_(steps=40, seed=11, reference_period=10, verify_every=5)
    net = (chain.net, chain.bounds, chain.true)
    return {s: run_closed_loop(cfg.with_(scheme=s), chain.designs, network=net) for s in Scheme}, cfg


def test_run_properties(chain, short_runs):
    runs, _ = short_runs
    tv = np.array([chain.true[e] for e in chain.bounds.edges])
    for scheme, log in runs.items():
        assert log.fallback_count == 0
        assert all(r.passed for r in log.verify), [r for r in log.verify if not r.passed]
        for i in log.ids:
            m = chain.net.by_id(i)
            assert all(m.state_set.contains(z) for z in log.z[i])
            assert all(m.input_set.contains(v) for v in log.v[i])
            # true state inside the tube around the nominal start
            e = log.z[i][:-1] - log.x0[i]
            lvl = np.sqrt(np.einsum("ti,ij,tj->t", e, chain.designs[i].Z, e))
            assert np.all(lvl <= log.alpha[i] + 1e-7)
        assert np.all(np.diff(log.a_min, axis=0) >= 0) and np.all(np.diff(log.a_max, axis=0) <= 0)
        assert np.all(log.a_min <= tv + 1e-6) and np.all(tv <= log.a_max + 1e-6)
    rob, lrn = runs[Scheme.ROB], runs[Scheme.LRN]
    np.testing.assert_array_equal(rob.a_max, np.broadcast_to(chain.bounds.a_max, rob.a_max.shape))
    assert np.all(lrn.a_max[-1] <= chain.bounds.a_max) and np.any(lrn.a_max[-1] < chain.bounds.a_max)
    # frozen schemes keep their ingredients
    assert np.ptp(rob.alpha[1]) == 0 and np.ptp(lrn.g[2]) == 0


def test_replay_identical(chain, short_runs, tmp_path):
    runs, cfg = short_runs
    again = run_closed_loop(cfg.with_(scheme=Scheme.ADP_LRN), chain.designs, network=(chain.net, chain.bounds, chain.true))
    a = write_outputs(runs[Scheme.ADP_LRN], chain.net, tmp_path / "a")
    b = write_outputs(again, chain.net, tmp_path / "b")
    for f in ("trajectory", "bounds", "ingredients", "verify", "summary"):
        assert (a / f"{f}.csv").read_bytes() == (b / f"{f}.csv").read_bytes()


def test_csv_layout(chain, short_runs, tmp_path):
    runs, _ = short_runs
    out = write_outputs(runs[Scheme.LRN], chain.net, tmp_path)
    head = lambda f: (out / f).read_text().splitlines()[0]  # noqa: E731
    assert head("trajectory.csv") == "step,subsystem,z1,z2,x1,x2,v1,stage_cost,status"
    assert head("bounds.csv") == "step,edge,a_min,a_max"
    assert head("ingredients.csv") == "step,subsystem,alpha,g,h,spectral_radius"
    assert head("verify.csv") == "step,check,pass,margin"
    assert head("summary.csv") == "scheme,seed,total_cost,fallback_count"
    rows = (out / "trajectory.csv").read_text().splitlines()[1:]
    assert len(rows) == 40 * 5
    # full round-trip precision
    t0 = rows[5].split(",")
    assert float(t0[2]) == runs[Scheme.LRN].z[1][1][0]
