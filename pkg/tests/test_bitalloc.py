import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hmwv import oracles
from hmwv.bitalloc import distortion_bound, expected_distortion, rd_gaussian, waterfill


def test_rd_gaussian_examples():
    assert rd_gaussian(2.0, 0.0) == 4.0
    assert rd_gaussian(2.0, 1.0) == 1.0
    with pytest.raises(ValueError):
        rd_gaussian(-1.0, 1.0)


def test_waterfill_equal_groups():
    rates = waterfill([1, 1, 1], [1, 1, 1], 6)
    assert np.allclose(rates, 2.0)


def test_waterfill_clamps_weak_group():
    rates = waterfill([1, 1], [1.0, 1e-6], 1.0)
    assert rates[1] == 0.0
    assert rates[0] == pytest.approx(1.0)


def test_waterfill_zero_budget_and_zero_variance():
    assert not np.any(waterfill([1, 2], [1, 1], 0))
    rates = waterfill([1, 1], [1.0, 0.0], 2.0)
    assert rates.tolist() == [2.0, 0.0]
    with pytest.raises(ValueError):
        waterfill([1, 1], [0.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        waterfill([1], [1, 2], 1.0)


def test_bound_matches_unclamped_solution():
    w, v = np.array([1.0, 2.0]), np.array([4.0, 1.0])
    rates = waterfill(w, v, 10.0)
    assert np.all(rates > 0)
    assert expected_distortion(w, v, rates) == pytest.approx(distortion_bound(w, v, 10.0))


@given(st.lists(st.floats(0.05, 5.0), min_size=2, max_size=6), st.floats(0.0, 20.0),
       st.integers(0, 2**31 - 1))
def test_waterfill_properties(ws, budget, seed):
    w = np.array(ws)
    v = np.random.default_rng(seed).uniform(0.01, 10.0, w.size)
    rates = waterfill(w, v, budget)
    assert np.all(rates >= 0)
    assert float(w @ rates) == pytest.approx(budget, abs=1e-9)
    d = expected_distortion(w, v, rates)
    assert d >= distortion_bound(w, v, budget) - 1e-12 * d
    # KKT: active groups share one distortion level, clamped ones sit below it
    level = v * 2.0 ** (-2 * rates)
    active = rates > 0
    if active.any():
        assert np.allclose(level[active], level[active][0], rtol=1e-9)
        assert np.all(v[~active] <= level[active][0] * (1 + 1e-9))


@pytest.mark.parametrize("seed", range(3))
def test_waterfill_beats_grid_search(seed):
    r = np.random.default_rng(seed)
    w = r.uniform(0.2, 2.0, 3)
    v = r.uniform(0.1, 5.0, 3)
    rates = waterfill(w, v, 3.0)
    _, best = oracles.grid_search_allocation(w, v, 3.0)
    assert expected_distortion(w, v, rates) <= best * (1 + 1e-9)
