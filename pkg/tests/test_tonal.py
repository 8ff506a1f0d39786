import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hmwv import oracles
from hmwv.simgen import sample_chains
from hmwv.tonal import (DecayForm, TonalMap, TonalParams, allocate_bits_tonal, binary_entropy,
                        em_estimate, entropy_rate, equilibrium_frequency, expected_t_fraction,
                        expected_tonal_energy, forward_backward, initial_params, posteriors,
                        run_length_entropy, state_probability, threshold_select, viterbi_map)

prob = st.floats(0.02, 0.98)


def single(nu, pi_t, pi_r, sigma_t, sigma_r):
    return TonalParams([pi_t], [pi_r], [nu], [sigma_t], [sigma_r])


# -- closed forms -------------------------------------------------------------


def test_equilibrium_example():
    assert equilibrium_frequency(0.8, 0.95) == pytest.approx(0.2, abs=1e-12)


def test_equilibrium_rejects_absorbing_pair():
    with pytest.raises(ValueError):
        equilibrium_frequency(1.0, 1.0)


def test_state_probability_matches_matrix_power():
    # frozen from the two-by-two transition matrix raised to the fifth power
    assert state_probability(5, 0.1, 0.9, 0.8) == pytest.approx(0.571427, abs=1e-6)
    P = np.array([[0.9, 0.1], [0.2, 0.8]])
    start = np.array([0.1, 0.9])
    assert state_probability(5, 0.1, 0.9, 0.8) == pytest.approx((start @ np.linalg.matrix_power(P, 5))[0])


def test_t_fraction_at_equilibrium_is_constant():
    ne = equilibrium_frequency(0.7, 0.9)
    for K in (1, 5, 100):
        assert expected_t_fraction(K, ne, 0.7, 0.9) == pytest.approx(ne, abs=1e-12)


@given(st.integers(1, 40), prob, prob, prob)
def test_t_fraction_is_mean_of_state_probabilities(K, nu, pt, pr):
    direct = np.mean([state_probability(k, nu, pt, pr) for k in range(K)])
    assert expected_t_fraction(K, nu, pt, pr) == pytest.approx(direct, abs=1e-12)


def test_tonal_energy_sums_bins():
    p = TonalParams.stationary(0.9, 0.95, [2.0, 1.0], [0.1, 0.1])
    tau = expected_t_fraction(10, p.nu, p.pi_t, p.pi_r)
    assert expected_tonal_energy(10, p) == pytest.approx(float(np.sum(tau * [4.0, 1.0])))


def test_binary_entropy_edges():
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(1.0) == 0.0
    assert binary_entropy(0.5) == pytest.approx(1.0)


def test_run_length_entropy_fair_chain():
    # pi = 1/2: runs are geometric with p = 1/2, entropy exactly 2 bits
    assert run_length_entropy(0.5, 0.5) == pytest.approx(2.0, abs=1e-12)
    assert entropy_rate(0.5, 0.5) == pytest.approx(1.0, abs=1e-12)


@given(prob, prob)
def test_run_length_entropy_matches_series(pt, pr):
    assert run_length_entropy(pt, pr) == pytest.approx(oracles.run_length_entropy_series(pt, pr), abs=1e-9)


@given(prob, prob)
def test_entropy_rate_weights_window_entropies(pt, pr):
    ne = equilibrium_frequency(pt, pr)
    weighted = ne * binary_entropy(pt) + (1 - ne) * binary_entropy(pr)
    assert entropy_rate(pt, pr) == pytest.approx(weighted, rel=1e-12)
    assert entropy_rate(pt, pr) <= run_length_entropy(pt, pr) + 1e-12


def test_decay_profile():
    prof = DecayForm(1.0, 0.1, 4.0, 2.0).profile(9)
    assert prof[0] == 1.0
    assert prof[4] == pytest.approx(0.5)
    assert prof[8] == pytest.approx(0.2)


def test_decay_params_must_agree_with_form():
    p = TonalParams.from_decay(8, 0.9, 0.9, 2.0, 0.5)
    with pytest.raises(ValueError):
        TonalParams(p.pi_t, p.pi_r, p.nu, p.sigma_t * 1.1, p.sigma_r, p.decay)


def test_params_reject_out_of_range():
    with pytest.raises(ValueError):
        TonalParams.stationary(1.2, 0.5, 1.0, 0.1)
    with pytest.raises(ValueError):
        TonalParams.stationary(0.5, 0.5, -1.0, 0.1)
    with pytest.raises(ValueError):
        TonalParams.stationary(0.5, 0.5, 0.1, 1.0).validate()


# -- inference ----------------------------------------------------------------


def test_single_window_is_bayes_rule():
    p = single(0.3, 0.9, 0.9, 2.0, 0.5)
    post, ll = forward_backward([1.0], p)
    lt = 0.3 * math.exp(-0.5 / 4) / 2.0
    lr = 0.7 * math.exp(-0.5 / 0.25) / 0.5
    assert post[0] == pytest.approx(lt / (lt + lr), abs=1e-12)
    assert ll == pytest.approx(math.log((lt + lr) / math.sqrt(2 * math.pi)), abs=1e-12)


def test_equal_deviations_leave_prior():
    p = single(0.25, 0.7, 0.9, 1.0, 1.0)
    post, _ = forward_backward(np.linspace(-3, 3, 7), p)
    expected = [state_probability(k, 0.25, 0.7, 0.9) for k in range(7)]
    assert np.allclose(post, expected, atol=1e-12)


def test_frozen_four_window_chain():
    row = [0.3, -2.1, 1.7, 0.05]
    p = single(0.4, 0.85, 0.7, 1.5, 0.4)
    post, ll = forward_backward(row, p)
    frozen = [0.3954344721531549, 0.9999945768525602, 0.9996896502441261, 0.6033524357403314]
    assert np.allclose(post, frozen, atol=1e-12)
    assert ll == pytest.approx(-6.911162163476778, abs=1e-10)
    assert viterbi_map(row, p).tolist() == [False, True, True, True]


@given(st.integers(1, 10), prob, prob, prob, st.integers(0, 2**31 - 1))
def test_chain_posteriors_match_enumeration(K, nu, pt, pr, seed):
    r = np.random.default_rng(seed)
    st_, sr = 0.5 + 3 * r.random(), 0.05 + 0.4 * r.random()
    row = r.standard_normal(K) * r.choice([st_, sr], K)
    p = single(nu, pt, pr, st_, sr)
    post, ll = forward_backward(row, p)
    ref_post, ref_ll, _, best = oracles.chain_enumeration(row, nu, pt, pr, st_, sr)
    assert np.allclose(post, ref_post, atol=1e-10)
    assert ll == pytest.approx(ref_ll, abs=1e-9)
    path = viterbi_map(row, p)
    score = math.log(nu if path[0] else 1 - nu)
    for a, b in zip(path, path[1:]):
        score += math.log((pt if b else 1 - pt) if a else (1 - pr if b else pr))
    for y, s in zip(row, path):
        sd = st_ if s else sr
        score += -0.5 * math.log(2 * math.pi * sd * sd) - 0.5 * (y / sd) ** 2
    assert score >= best - 1e-9


def test_posteriors_grid_matches_rowwise(rng):
    p = TonalParams.from_decay(6, 0.8, 0.9, 3.0, 0.3)
    y = rng.standard_normal((9, 6))
    post = posteriors(y, p)
    for n in range(6):
        col, ll = forward_backward(y[:, n], p.bin(n))
        assert np.allclose(post.prob_t[:, n], col, atol=1e-12)
        assert post.loglik[n] == pytest.approx(ll)
    assert np.allclose(post.prob_r, 1 - post.prob_t)


def test_posteriors_survive_extreme_values():
    p = single(0.5, 0.9, 0.9, 1.0, 1e-3)
    post, ll = forward_backward([1e3, 0.0, -1e3] * 50, p)
    assert np.all(np.isfinite(post)) and np.isfinite(ll)


def test_viterbi_sticky_chain_ignores_single_outlier():
    p = single(0.01, 0.5, 0.999, 1.2, 1.0)
    row = np.zeros(20)
    row[10] = 1.3
    assert not viterbi_map(row, p).any()


def test_viterbi_obvious_path():
    p = single(0.5, 0.9, 0.9, 10.0, 0.1)
    row = [0.01, 0.02, 15.0, -12.0, 0.01]
    assert viterbi_map(row, p).tolist() == [False, False, True, True, False]


def test_single_bin_checks():
    p = TonalParams.stationary(0.9, 0.9, [1.0, 1.0], [0.1, 0.1])
    with pytest.raises(ValueError):
        forward_backward([1.0], p)
    with pytest.raises(ValueError):
        viterbi_map([1.0], p)
    with pytest.raises(ValueError):
        forward_backward([np.nan], p.bin(0))


# -- selection ----------------------------------------------------------------


def test_threshold_select_counts_and_ties(rng):
    prob_t = np.array([[0.9, 0.5], [0.5, 0.1]])
    y = np.array([[0.0, 2.0], [3.0, 1.0]])
    assert threshold_select(prob_t, y, 2).indices() == [(0, 0), (1, 0)]
    assert len(threshold_select(prob_t, y, 0)) == 0
    assert len(threshold_select(prob_t, y, 4)) == 4
    with pytest.raises(ValueError):
        threshold_select(prob_t, y, 5)


@given(st.integers(0, 2**31 - 1), st.integers(0, 30))
def test_threshold_select_matches_full_sort(seed, n):
    r = np.random.default_rng(seed)
    prob_t = np.round(r.random((5, 6)), 1)
    y = np.round(r.standard_normal((5, 6)), 1)
    mask = threshold_select(prob_t, y, n).mask.ravel()
    assert np.flatnonzero(mask).tolist() == oracles.top_k_full_sort(prob_t, y, n)


def test_tonal_map_helpers():
    m = TonalMap.from_indices([(1, 2), (0, 0)], (2, 3))
    assert len(m) == 2 and m.indices() == [(0, 0), (1, 2)]
    assert len(TonalMap.empty((2, 3))) == 0
    with pytest.raises(ValueError):
        TonalMap.from_indices([(2, 0)], (2, 3))


# -- EM -----------------------------------------------------------------------


def test_em_all_zero_is_degenerate():
    fit = em_estimate(np.zeros((8, 4)))
    assert fit.degenerate and fit.log_likelihoods == []


def test_initial_params_reject_zero_grid():
    from hmwv.errors import DegenerateInputError
    with pytest.raises(DegenerateInputError):
        initial_params(np.zeros((4, 4)))


def test_em_recovers_simulated_parameters():
    truth = TonalParams.from_decay(64, 0.9, 0.97, 4.0, 0.2)
    rng = np.random.default_rng(11)
    states = sample_chains(truth, 200, rng)
    y = rng.standard_normal(states.shape) * np.where(states, truth.sigma_t, truth.sigma_r)
    init = TonalParams.from_decay(64, 0.8, 0.9, 2.0, 0.4)
    fit = em_estimate(y, init, max_iter=200, tol=1e-9)
    assert fit.converged
    p = fit.params
    assert p.pi_t[0] == pytest.approx(0.9, abs=0.03)
    assert p.pi_r[0] == pytest.approx(0.97, abs=0.01)
    assert p.decay.sigma_t == pytest.approx(4.0, rel=0.08)
    assert p.decay.sigma_r == pytest.approx(0.2, rel=0.05)


def test_em_likelihood_monotone(rng):
    y = rng.standard_normal((40, 16)) * np.where(rng.random((40, 16)) < 0.2, 3.0, 0.3)
    fit = em_estimate(y, max_iter=30, tol=0.0)
    ll = np.array(fit.log_likelihoods)
    assert ll.size >= 2
    assert np.all(np.diff(ll) >= -1e-9 * np.abs(ll[1:]))


def test_em_untied_and_stationary(rng):
    y = rng.standard_normal((30, 5)) * np.where(rng.random((30, 5)) < 0.3, 2.0, 0.2)
    init = TonalParams.stationary(0.8, 0.8, np.full(5, 1.5), np.full(5, 0.3))
    fit = em_estimate(y, init, tied=False, max_iter=20)
    assert fit.params.decay is None
    fit.params.validate()


def test_em_rejects_bad_grid():
    with pytest.raises(ValueError):
        em_estimate(np.ones((1, 4)))


# -- allocation ---------------------------------------------------------------


def test_allocation_spends_budget_and_bounds():
    p = TonalParams.from_decay(32, 0.9, 0.95, 2.0, 0.1)
    rates, bound = allocate_bits_tonal(p, 0.5)
    w = p.equilibrium
    assert np.all(rates >= 0)
    assert np.sum(w * rates) == pytest.approx(32 * 0.5)
    achieved = float(np.sum(w * p.sigma_t**2 * 2.0 ** (-2 * rates)))
    assert achieved >= bound - 1e-12


def test_allocation_equal_bins_share_equally():
    p = TonalParams.stationary(0.9, 0.9, np.ones(4), np.full(4, 0.1))
    rates, bound = allocate_bits_tonal(p, 1.0)
    assert np.allclose(rates, 2.0)
    assert bound == pytest.approx(4 * 0.5 * 2.0**-4)


def test_allocation_rejects_nonpositive_rate():
    p = TonalParams.stationary(0.9, 0.9, np.ones(4), np.full(4, 0.1))
    with pytest.raises(ValueError):
        allocate_bits_tonal(p, 0.0)
