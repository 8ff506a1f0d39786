import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hmwv import oracles
from hmwv.errors import BitstreamError
from hmwv.simgen import sample_tree_maps
from hmwv.transforms import WaveletTree
from hmwv.transient import (TransientMap, TreeParams, allocate_bits_transient, decode_tree_map,
                            em_estimate_tree, encode_tree_map, expected_counts,
                            expected_transient_energy, map_rate_bound, map_states_tree,
                            threshold_select_forest, threshold_select_tree, tree_map_bits,
                            tree_posteriors, upward_downward)


def tree_of(details):
    return WaveletTree(0.0, tuple(np.asarray(d, dtype=float) for d in details))


def sampled_maps(params, count, rng):
    masks = sample_tree_maps(params, count, rng)
    return [TransientMap(tuple(m[b] for m in masks)) for b in range(count)]


FROZEN_DETAILS = ([0.2, -1.4, 0.9, 0.1], [2.2, -0.3], [1.1])
FROZEN_PARAMS = TreeParams(0.7, 0.6, [2.0, 1.5, 1.0], [0.3, 0.2, 0.1])


# -- Galton-Watson statistics -------------------------------------------------


def test_expected_counts_constant_persistence():
    counts, total = expected_counts(TreeParams(0.5, 0.75, np.ones(4), np.full(4, 0.1)))
    assert np.allclose(counts, [0.5 * 1.5**3, 0.5 * 1.5**2, 0.75, 0.5])
    assert total == pytest.approx(counts.sum())


def test_expected_counts_full_tree():
    counts, total = expected_counts(TreeParams(1.0, 1.0, np.ones(5), np.full(5, 0.1)))
    assert np.allclose(counts, [16, 8, 4, 2, 1])
    assert total == 31


def test_geometric_persistence():
    p = TreeParams(0.9, 0.8, np.ones(4), np.full(4, 0.1), geometric=True)
    assert np.allclose(p.persistence(), [0.8**3, 0.8**2, 0.8])


def test_expected_energy_and_rate_bound():
    p = TreeParams(0.9, 0.6, [1.0, 2.0, 3.0], [0.1, 0.1, 0.1])
    counts, total = expected_counts(p)
    assert expected_transient_energy(p) == pytest.approx(float(counts @ np.array([1.0, 4.0, 9.0])))
    assert map_rate_bound(p) == pytest.approx(2 * total)
    J, nu, pi = 3, 0.9, 0.6
    assert map_rate_bound(p) == pytest.approx(2 * nu * (1 - (2 * pi) ** J) / (1 - 2 * pi))


def test_params_validation():
    with pytest.raises(ValueError):
        TreeParams(1.5, 0.5, [1.0], [0.1])
    with pytest.raises(ValueError):
        TreeParams(0.5, 0.5, [1.0, 2.0], [0.1, 0.1, 0.1])
    with pytest.raises(ValueError):
        TreeParams(0.5, 0.5, [0.1], [1.0]).validate()
    assert TreeParams(0.5, 0.5, [1.0, 2.0], 0.1).sigma_r.tolist() == [0.1, 0.1]


# -- inference ----------------------------------------------------------------


def test_frozen_depth_three_tree():
    post = upward_downward(tree_of(FROZEN_DETAILS), FROZEN_PARAMS)
    assert np.allclose(post.prob_t[0], [0.21849939906486568, 0.9998940284598724, 0.6615642678988299,
                                        0.1339294050996417], atol=1e-12)
    assert np.allclose(post.prob_t[1], [0.9999999999999997, 0.697708305874837], atol=1e-12)
    assert np.allclose(post.prob_t[2], [0.9999999999999997], atol=1e-12)
    assert post.loglik == pytest.approx(-11.906058493738414, abs=1e-10)
    tmap = map_states_tree(tree_of(FROZEN_DETAILS), FROZEN_PARAMS)
    assert [m.astype(int).tolist() for m in tmap.nodes] == [[0, 1, 1, 0], [1, 1], [1]]


def test_single_node_tree_is_bayes_rule():
    p = TreeParams(0.4, 0.5, [2.0], [0.5])
    post = upward_downward(tree_of([[1.0]]), p)
    lt = 0.4 * np.exp(-0.5 / 4) / 2.0
    lr = 0.6 * np.exp(-0.5 / 0.25) / 0.5
    assert post.prob_t[0][0] == pytest.approx(lt / (lt + lr), abs=1e-12)


def test_posteriors_are_monotone_down_the_tree(rng):
    # the taboo transition makes a child T only under a T parent
    p = TreeParams(0.8, 0.7, [3.0, 2.0, 1.5, 1.0], [0.2, 0.2, 0.1, 0.1])
    details = [rng.standard_normal(2 ** (4 - j)) * 2.0 for j in range(1, 5)]
    post = upward_downward(tree_of(details), p)
    for j in range(1, 4):
        assert np.all(post.prob_t[j - 1] <= np.repeat(post.prob_t[j], 2) + 1e-12)


@given(st.integers(1, 3), st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.integers(0, 2**31 - 1))
def test_tree_posteriors_match_enumeration(J, nu, pi, seed):
    r = np.random.default_rng(seed)
    sr = 0.05 + 0.4 * r.random(J)
    st_ = sr + 0.5 + 2 * r.random(J)
    details = [r.standard_normal(2 ** (J - j)) * r.choice([st_[j - 1], sr[j - 1]]) for j in range(1, J + 1)]
    p = TreeParams(nu, pi, st_, sr)
    post = upward_downward(tree_of(details), p)
    ref, ref_ll, ref_conf, best = oracles.tree_enumeration(details, nu, p.persistence(), st_, sr)
    for a, b in zip(post.prob_t, ref):
        assert np.allclose(a, b, atol=1e-10)
    assert post.loglik == pytest.approx(ref_ll, abs=1e-9)
    tmap = map_states_tree(tree_of(details), p)
    assert tmap.is_upward_closed()
    assert [tuple(m.astype(int)) for m in tmap.nodes] == [tuple(c) for c in ref_conf]


def test_batched_posteriors_match_single(rng):
    p = TreeParams(0.9, 0.5, [2.0, 1.5, 1.0], [0.3, 0.2, 0.1])
    trees = [tree_of([rng.standard_normal(4), rng.standard_normal(2), rng.standard_normal(1)])
             for _ in range(5)]
    batch = tree_posteriors(trees, p)
    for t, b in zip(trees, batch):
        one = upward_downward(t, p)
        assert one.loglik == pytest.approx(b.loglik)
        assert all(np.allclose(x, y) for x, y in zip(one.prob_t, b.prob_t))


def test_depth_mismatch_rejected():
    with pytest.raises(ValueError):
        upward_downward(tree_of(FROZEN_DETAILS), TreeParams(0.5, 0.5, [1.0, 1.0], [0.1, 0.1]))


def test_upward_downward_survives_extreme_values():
    p = TreeParams(0.5, 0.5, [1.0] * 3, [1e-4] * 3)
    post = upward_downward(tree_of([[1e4, -1e4, 0, 0], [0, 1e3], [1e5]]), p)
    assert np.isfinite(post.loglik)
    assert all(np.all(np.isfinite(x)) for x in post.prob_t)


# -- selection ----------------------------------------------------------------


def test_threshold_select_upward_closed_and_exact(rng):
    p = TreeParams(0.9, 0.6, np.linspace(3, 1, 5), np.full(5, 0.2))
    posts = [upward_downward(tree_of([rng.standard_normal(2 ** (5 - j)) for j in range(1, 6)]), p)
             for _ in range(4)]
    for n in (0, 1, 7, 30, 4 * 31):
        maps = threshold_select_forest(posts, n)
        assert sum(len(m) for m in maps) == n
        assert all(m.is_upward_closed() for m in maps)
    with pytest.raises(ValueError):
        threshold_select_forest(posts, 4 * 31 + 1)


def test_threshold_select_prefers_high_posterior():
    probs = ([0.1, 0.9, 0.2, 0.3], [0.8, 0.4], [0.95])
    tmap = threshold_select_tree(probs, 3)
    assert tmap.indices() == [(3, 0), (2, 0), (1, 1)]


def test_threshold_select_empty_forest():
    assert threshold_select_forest([], 0) == []


# -- EM -----------------------------------------------------------------------


def test_em_all_zero_is_degenerate():
    fit = em_estimate_tree([tree_of([np.zeros(4), np.zeros(2), np.zeros(1)])])
    assert fit.degenerate


def test_em_monotone_and_recovers(rng):
    truth = TreeParams(0.9, 0.6, 2.0 ** (np.arange(1, 7) / 2), np.full(6, 0.05))
    maps = sampled_maps(truth, 300, rng)
    trees = []
    for m in maps:
        det = [rng.standard_normal(2 ** (6 - j)) * np.where(m.nodes[j - 1], truth.sigma_t[j - 1],
                                                           truth.sigma_r[j - 1]) for j in range(1, 7)]
        trees.append(tree_of(det))
    fit = em_estimate_tree(trees, max_iter=100, tol=1e-9)
    ll = np.array(fit.log_likelihoods)
    assert np.all(np.diff(ll) >= -1e-9 * np.abs(ll[1:]))
    assert fit.params.nu == pytest.approx(0.9, abs=0.05)
    assert fit.params.pi == pytest.approx(0.6, abs=0.05)


# -- allocation ---------------------------------------------------------------


def test_allocation_budget_and_bound():
    p = TreeParams(0.9, 0.6, 2.0 ** np.arange(1, 6), np.full(5, 0.1))
    rates, bound = allocate_bits_transient(p, 0.2)
    counts, _ = expected_counts(p)
    assert np.all(rates >= 0)
    assert float(counts @ rates) == pytest.approx(31 * 0.2)
    assert float(np.sum(counts * p.sigma_t**2 * 2.0 ** (-2 * rates))) >= bound - 1e-12
    with pytest.raises(ValueError):
        allocate_bits_transient(p, -1.0)


# -- tree-map code ------------------------------------------------------------


def test_full_depth_two_tree_code():
    full = TransientMap.full(2)
    assert encode_tree_map(full).tolist() == [1, 1, 1]
    assert encode_tree_map(full, leaf_pairs=True).tolist() == [1, 1, 1, 0, 0, 0, 0]


def test_empty_tree_code_is_one_bit():
    assert encode_tree_map(TransientMap.empty(6)).tolist() == [0]
    assert decode_tree_map([0], 6) == TransientMap.empty(6)


@given(st.integers(1, 9), st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(0, 2**31 - 1),
       st.booleans())
def test_tree_code_roundtrip(J, nu, pi, seed, leaf_pairs):
    p = TreeParams(nu, pi, np.ones(J), np.full(J, 0.1))
    (tmap,) = sampled_maps(p, 1, np.random.default_rng(seed))
    bits = encode_tree_map(tmap, leaf_pairs)
    assert bits.size == tree_map_bits(tmap, leaf_pairs)
    assert decode_tree_map(bits, J, leaf_pairs) == tmap


def test_tree_code_rejects_bad_input():
    bad = TransientMap.from_indices([(1, 0)], 3)
    assert not bad.is_upward_closed()
    with pytest.raises(ValueError):
        encode_tree_map(bad)
    with pytest.raises(BitstreamError):
        decode_tree_map([1, 1], 3)
    with pytest.raises(BitstreamError):
        decode_tree_map([0, 1], 3)
    with pytest.raises(BitstreamError):
        decode_tree_map([1, 0, 1, 0, 1], 2, leaf_pairs=True)


def test_transient_map_helpers():
    m = TransientMap.from_indices([(3, 0), (2, 1), (1, 3)], 3)
    assert len(m) == 3 and m.contains(2, 1) and not m.contains(2, 0)
    assert m.indices() == [(3, 0), (2, 1), (1, 3)]
    assert m.counts().tolist() == [1, 1, 1]
    assert m.is_upward_closed()
    assert hash(m) == hash(TransientMap.from_indices(m.indices(), 3))
    with pytest.raises(ValueError):
        TransientMap((np.zeros(3, bool), np.zeros(1, bool)))
