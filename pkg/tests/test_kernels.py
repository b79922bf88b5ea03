import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opsched import kernels
from opsched.kernels import dp_chain, enumerate_min, plan_costs


def _chain(rng, n):
    lc = rng.uniform(1e-6, 1e-3, n)
    lg = rng.uniform(1e-6, 1e-3, n)
    x = rng.uniform(0, 5e-4, n)
    x[0] = 0.0
    return lc, lg, x, float(rng.uniform(0, 2e-4))


@pytest.mark.parametrize("n", [1, 2, 5, 9, 12])
def test_dp_matches_enumeration(rng, n):
    for _ in range(10):
        lc, lg, x, sw = _chain(rng, n)
        best_dp, a_dp = dp_chain(lc, lg, x, sw)
        best_en, _ = enumerate_min(lc, lg, x, sw)
        assert best_dp == best_en
        assert plan_costs(lc, lg, x, sw, a_dp)[0] == best_dp


def test_numba_and_numpy_twins_agree(rng):
    lc, lg, x, sw = _chain(rng, 10)
    assign = (np.arange(1 << 10)[:, None] >> np.arange(10)) & 1
    a = kernels._plan_costs_np(lc, lg, x, sw, assign)
    b = kernels._plan_costs_nb(lc, lg, x, sw, assign)
    np.testing.assert_array_equal(a, b)
    assert kernels._dp_chain_np(lc, lg, x, sw)[0] == kernels._dp_chain_nb(lc, lg, x, sw)[0]
    assert kernels._enum_min_np(lc, lg, x, sw)[0] == kernels._enum_min_nb(lc, lg, x, sw)[0]


def test_single_op_picks_faster():
    best, a = dp_chain([2.0], [1.0], [0.0], 5.0)
    assert best == 1.0 and a.tolist() == [1]


def test_switch_cost_charged_once_per_change():
    # CPU, GPU alternate is forced by huge opposite latencies
    lc = np.array([1.0, 100.0, 1.0])
    lg = np.array([100.0, 1.0, 100.0])
    x = np.array([0.0, 0.5, 0.5])
    best, a = dp_chain(lc, lg, x, 0.25)
    assert a.tolist() == [0, 1, 0]
    assert best == pytest.approx(3.0 + 1.0 + 0.5)


def test_shape_errors():
    with pytest.raises(ValueError):
        dp_chain([1.0, 2.0], [1.0], [0.0, 0.0], 0.0)
    with pytest.raises(ValueError):
        dp_chain([], [], [], 0.0)
    with pytest.raises(ValueError):
        plan_costs([1.0, 2.0], [1.0, 2.0], [0.0, 0.0], 0.0, [[0, 1, 1]])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2 ** 31))
def test_dp_optimal_property(n, seed):
    lc, lg, x, sw = _chain(np.random.default_rng(seed), n)
    assert dp_chain(lc, lg, x, sw)[0] == enumerate_min(lc, lg, x, sw)[0]
