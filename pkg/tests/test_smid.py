import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netmpc.netmodel import SubsystemModel, double_integrator_chain
from netmpc.smid import EmptyIntersection, FeasibleParamSet, build_nonfalsified, update_bounds

net, _, _ = double_integrator_chain()
end = net.by_id(1)      # one in-neighbor
middle = net.by_id(3)   # two in-neighbors


def unit_example():
    return build_nonfalsified(end, [0, 0], [0], [[1.0]], end.E[:, 0])


def test_derived_interval():
    nf = unit_example()
    # the four facet rows reduce to 0.5 <= a <= 1.5
    ratios = nf.omega / nf.Omega[:, 0]
    assert max(ratios[nf.Omega[:, 0] < 0]) == pytest.approx(0.5)
    assert min(ratios[nf.Omega[:, 0] > 0]) == pytest.approx(1.5)
    assert nf.Omega.shape == (4, 1)


def test_zero_regressor():
    nf = build_nonfalsified(middle, [0.3, -0.2], [0.1], [[0.0], [0.0]],
                            middle.A @ [0.3, -0.2] + middle.B @ [0.1] + [0.01, -0.02])
    assert not nf.Omega.any()
    assert np.all(nf.omega >= 0)
    lo, hi = update_bounds([0, 0], [2, 2], nf)
    np.testing.assert_array_equal(lo, [0, 0])
    np.testing.assert_array_equal(hi, [2, 2])


def test_update_from_prior():
    lo, hi = update_bounds([0.0], [2.0], unit_example())
    assert lo[0] == pytest.approx(0.5, abs=1e-8)
    assert hi[0] == pytest.approx(1.5, abs=1e-8)


def test_prior_inside_data_set():
    lo, hi = update_bounds([0.6], [1.4], unit_example())
    assert (lo[0], hi[0]) == (0.6, 1.4)


def test_violating_measurement_is_empty():
    nf = build_nonfalsified(end, [0, 0], [0], [[1.0]], [10.0, 10.0])
    with pytest.raises(EmptyIntersection):
        update_bounds([0.0], [4.0], nf)


def test_zero_noise_model_gives_equality():
    exact = SubsystemModel(**{**end.__dict__, "noise_set": None})
    nf = build_nonfalsified(exact, [0, 0], [0], [[2.0]], exact.E[:, 0] * 2 * 0.7)
    lo, hi = update_bounds([0.0], [4.0], nf)
    assert lo[0] == pytest.approx(0.7, abs=1e-7) and hi[0] == pytest.approx(0.7, abs=1e-7)


def test_dimension_checks():
    with pytest.raises(ValueError):
        build_nonfalsified(end, [0, 0], [0], [[1.0], [1.0]], [0, 0])
    with pytest.raises(ValueError):
        FeasibleParamSet([1.0], [0.0])


def test_box_representation():
    box = FeasibleParamSet([0.1, 0.2], [1.0, 2.0])
    theta = np.array([0.5, 0.2])
    assert np.all(box.F @ theta <= box.f)
    assert not np.all(box.F @ np.array([1.1, 1.0]) <= box.f)


def _step(rng, theta_true, prior_lo, prior_hi, model=middle):
    z = rng.uniform(-2, 2, 2)
    v = rng.uniform(-2, 2, 1)
    ys = [rng.uniform(-2, 2, 1) for _ in model.in_neighbors]
    d = rng.uniform(-1, 1, 2) * [0.025, 0.05]
    w = sum(a * y for a, y in zip(theta_true, ys))
    z_next = model.A @ z + model.B @ v + model.E @ w + d
    return build_nonfalsified(model, z, v, ys, z_next)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), a1=st.floats(0, 2), a2=st.floats(0, 2))
def test_truth_contained_and_monotone(seed, a1, a2):
    rng = np.random.default_rng(seed)
    lo, hi = np.zeros(2), np.full(2, 2.0)
    for _ in range(5):
        nf = _step(rng, [a1, a2], lo, hi)
        assert nf.contains([a1, a2], tol=1e-12)
        new_lo, new_hi = update_bounds(lo, hi, nf)
        assert np.all(new_lo >= lo - 1e-12) and np.all(new_hi <= hi + 1e-12)
        assert np.all(new_lo - 1e-9 <= [a1, a2]) and np.all([a1, a2] <= new_hi + 1e-9)
        lo, hi = new_lo, new_hi


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_edge_order_does_not_matter(seed):
    rng = np.random.default_rng(seed)
    nf = _step(rng, [0.5, 1.2], None, None)
    lo, hi = update_bounds([0.1, 0.0], [1.9, 2.0], nf)
    swapped = type(nf)(nf.Omega[:, ::-1], nf.omega)
    lo2, hi2 = update_bounds([0.0, 0.1], [2.0, 1.9], swapped)
    np.testing.assert_allclose(lo, lo2[::-1], atol=1e-9)
    np.testing.assert_allclose(hi, hi2[::-1], atol=1e-9)
