import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from pohmmkit.data import AlphabetSpec, SequenceDataset
from pohmmkit.errors import InvalidInputError
from pohmmkit.hmm import (
    Hmm,
    HmmGradient,
    ancestral_sample,
    ancestral_sample_batch,
    base_rate_hmm,
    em_fit,
    em_fit_restarts,
    log_forward,
    log_forward_batch,
    log_likelihood_gradient,
    posterior_stats,
    random_init,
    sample_paths_batch,
    sample_posterior_path,
    uniform_hmm,
)
from pohmmkit.oracle import (
    exact_log_forward,
    exact_path_posterior,
    exact_state_posterior,
    finite_diff_gradient,
)

from conftest import random_dataset, random_hmm, random_seqs


@st.composite
def instances(draw, max_paths=10 ** 4):
    seed = draw(st.integers(0, 2 ** 32 - 1))
    S = draw(st.integers(1, 4))
    T = draw(st.integers(1, 8))
    if S ** T > max_paths:
        T = max(1, int(math.log(max_paths) / math.log(S))) if S > 1 else T
    D = draw(st.integers(1, 3))
    cards = tuple(draw(st.lists(st.integers(2, 3), min_size=D, max_size=D)))
    rng = np.random.default_rng(seed)
    a = AlphabetSpec(cards)
    h = random_hmm(rng, a, S, scale=1.5)
    seq = random_seqs(rng, a, 1, T)[0]
    beta = draw(st.sampled_from([1.0, 0.0, 0.3]))
    return h, seq, beta


# construction ---------------------------------------------------------------

def test_construction_validates_shapes(binary2):
    with pytest.raises(InvalidInputError):
        Hmm(binary2, np.zeros(2), np.zeros((3, 3)), [np.zeros((2, 2))] * 2)
    with pytest.raises(InvalidInputError):
        Hmm(binary2, np.zeros(2), np.zeros((2, 2)), [np.zeros((2, 2))])
    with pytest.raises(InvalidInputError):
        Hmm(binary2, np.array([0.0, np.nan]), np.zeros((2, 2)), [np.zeros((2, 2))] * 2)


def test_flat_round_trip(rng, binary2):
    h = random_hmm(rng, binary2, 3)
    assert h.with_flat(h.flat()) == h
    assert h.flat().size == 3 + 9 + 12
    assert h.num_params == 2 + 6 + 6


def test_from_probs_round_trip(binary2):
    h = Hmm.from_probs(binary2, [0.25, 0.75], [[0.9, 0.1], [0.2, 0.8]], [[[0.3, 0.7], [0.6, 0.4]]] * 2)
    np.testing.assert_allclose(h.trans_probs, [[0.9, 0.1], [0.2, 0.8]])
    np.testing.assert_allclose(h.init_probs, [0.25, 0.75])


# log_forward ----------------------------------------------------------------

def test_log_forward_fair_coin():
    a = AlphabetSpec((2,))
    h = Hmm.from_probs(a, [1.0], [[1.0]], [[[0.5, 0.5]]])
    assert log_forward(h, [0, 1, 1], 1.0) == pytest.approx(3 * math.log(0.5), abs=1e-12)
    assert log_forward(h, [0, 1, 1], 1.0) == pytest.approx(-2.0794415416798357, abs=1e-12)


def test_log_forward_beta_zero_is_zero(rng, binary2):
    h = random_hmm(rng, binary2, 3)
    assert log_forward(h, random_seqs(rng, binary2, 1, 9)[0], 0.0) == pytest.approx(0.0, abs=1e-12)


def test_log_forward_two_state_t4_matches_enumeration(binary2):
    # frozen from path enumeration over the 16 paths
    h = Hmm.from_probs(binary2, [0.6, 0.4], [[0.7, 0.3], [0.2, 0.8]],
                       [[[0.9, 0.1], [0.3, 0.7]], [[0.5, 0.5], [0.15, 0.85]]])
    seq = [[0, 0], [1, 1], [1, 0], [0, 1]]
    assert log_forward(h, seq) == pytest.approx(exact_log_forward(h, seq), abs=1e-12)
    assert log_forward(h, seq) == pytest.approx(-6.295175899182977, abs=1e-12)


def test_log_forward_rejects_bad_inputs(rng, binary2):
    h = random_hmm(rng, binary2, 2)
    with pytest.raises(InvalidInputError):
        log_forward(h, [[0, 2]])
    with pytest.raises(InvalidInputError):
        log_forward(h, [[0, 1]], beta=1.5)
    with pytest.raises(InvalidInputError):
        log_forward(h, np.zeros((0, 2), dtype=int))


@settings(max_examples=60, deadline=None)
@given(instances())
def test_log_forward_equals_path_enumeration(inst):
    h, seq, beta = inst
    assert log_forward(h, seq, beta) == pytest.approx(exact_log_forward(h, seq, beta), abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(instances(), st.integers(0, 2), st.integers(0, 3))
def test_softmax_shift_invariance(inst, which, row):
    h, seq, beta = inst
    init, trans = h.init_logits.copy(), h.trans_logits.copy()
    emit = [e.copy() for e in h.emit_logits]
    r = row % h.num_states
    if which == 0:
        init += 17.0
    elif which == 1:
        trans[r] += 17.0
    else:
        emit[0][r] += 17.0
    shifted = Hmm(h.alphabet, init, trans, emit)
    assert abs(log_forward(shifted, seq, beta) - log_forward(h, seq, beta)) < 1e-9


def test_batch_matches_single(rng, binary2):
    h = random_hmm(rng, binary2, 3)
    seqs = random_seqs(rng, binary2, 5, 7)
    np.testing.assert_allclose(log_forward_batch(h, seqs), [log_forward(h, s) for s in seqs], atol=1e-12)


# posterior_stats ------------------------------------------------------------

def test_posterior_single_state(rng):
    a = AlphabetSpec((3,))
    h = random_hmm(rng, a, 1)
    seq = [0, 2, 2, 1, 2]
    st_ = posterior_stats(h, seq)
    np.testing.assert_allclose(st_.gamma, 1.0)
    np.testing.assert_allclose(st_.xi_sums, [[4.0]])
    np.testing.assert_allclose(st_.emit_counts[0], [[1.0, 1.0, 3.0]])


def test_posterior_beta_zero_is_prior(rng, binary2):
    h = random_hmm(rng, binary2, 3)
    st_ = posterior_stats(h, random_seqs(rng, binary2, 1, 5)[0], 0.0)
    prior = [h.init_probs]
    for _ in range(4):
        prior.append(prior[-1] @ h.trans_probs)
    np.testing.assert_allclose(st_.gamma, prior, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(instances())
def test_posterior_matches_enumeration(inst):
    h, seq, beta = inst
    st_ = posterior_stats(h, seq, beta)
    np.testing.assert_allclose(st_.gamma.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(st_.gamma, exact_state_posterior(h, seq, beta), atol=1e-8)
    assert st_.log_likelihood == pytest.approx(log_forward(h, seq, beta), abs=1e-10)
    paths, post = exact_path_posterior(h, seq, beta)
    xi = np.zeros((h.num_states, h.num_states))
    for t in range(1, paths.shape[1]):
        np.add.at(xi, (paths[:, t - 1], paths[:, t]), post)
    np.testing.assert_allclose(st_.xi_sums, xi, atol=1e-8)


# FFBS -------------------------------------------------------------------------

def test_ffbs_single_state(rng):
    h = random_hmm(rng, AlphabetSpec((2,)), 1)
    np.testing.assert_array_equal(sample_posterior_path(h, [0, 1, 1, 0], 1.0, rng), [0, 0, 0, 0])


def test_ffbs_disjoint_emissions_determine_path():
    a = AlphabetSpec((2,))
    h = Hmm.from_probs(a, [0.5, 0.5], [[0.5, 0.5], [0.5, 0.5]], [[[1.0, 0.0], [0.0, 1.0]]])
    rng = np.random.default_rng(0)
    for _ in range(20):
        np.testing.assert_array_equal(sample_posterior_path(h, [1, 0, 0, 1, 1], 1.0, rng), [1, 0, 0, 1, 1])


def test_ffbs_seeded_determinism(rng, binary2):
    h = random_hmm(rng, binary2, 3)
    seq = random_seqs(rng, binary2, 1, 10)[0]
    a = sample_posterior_path(h, seq, 1.0, np.random.default_rng(7))
    b = sample_posterior_path(h, seq, 1.0, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("beta", [1.0, 0.4])
def test_ffbs_matches_path_posterior(beta):
    rng = np.random.default_rng(3)
    a = AlphabetSpec((2,))
    h = random_hmm(rng, a, 2)
    seq = [1, 0, 1]
    paths, post = exact_path_posterior(h, seq, beta)
    n = 50_000
    seqs = np.repeat(a.validate(seq)[None], n, axis=0)
    drawn, _ = sample_paths_batch(h, seqs, beta, rng.random((n, 3)))
    codes = drawn @ np.array([4, 2, 1])
    obs = np.bincount(codes, minlength=8)
    order = paths @ np.array([4, 2, 1])
    assert chisquare(obs[order], post * n).pvalue > 0.01


# ancestral sampling ---------------------------------------------------------

def test_ancestral_deterministic_model():
    a = AlphabetSpec((2, 3))
    h = Hmm.from_probs(a, [0, 1], [[0, 1], [1, 0]], [[[1, 0], [0, 1]], [[0, 0, 1], [1, 0, 0]]])
    seq = ancestral_sample(h, 4, np.random.default_rng(0))
    np.testing.assert_array_equal(seq, [[1, 0], [0, 2], [1, 0], [0, 2]])


def test_ancestral_frequency():
    a = AlphabetSpec((2,))
    h = Hmm.from_probs(a, [1.0], [[1.0]], [[[0.7, 0.3]]])
    arr = ancestral_sample_batch(h, 1000, 100, np.random.default_rng(1))
    assert abs(arr.mean() - 0.3) < 0.01


def test_ancestral_shape_and_errors(rng):
    a = AlphabetSpec((2, 4))
    h = random_hmm(rng, a, 3)
    s = ancestral_sample(h, 11, rng)
    assert s.shape == (11, 2) and s[:, 0].max() < 2 and s[:, 1].max() < 4
    with pytest.raises(InvalidInputError):
        ancestral_sample(h, 0, rng)


def test_ancestral_seeded(rng, binary2):
    h = random_hmm(rng, binary2, 3)
    np.testing.assert_array_equal(ancestral_sample(h, 20, np.random.default_rng(5)),
                                  ancestral_sample(h, 20, np.random.default_rng(5)))


# EM ---------------------------------------------------------------------------

def test_em_single_state_closed_form():
    a = AlphabetSpec((3,))
    data = SequenceDataset(a, [[0, 1, 1, 2, 1], [1, 1, 0]])
    fit, trace = em_fit(uniform_hmm(a), data, max_iters=50)
    np.testing.assert_allclose(fit.emit_probs[0][0], [2 / 8, 5 / 8, 1 / 8], atol=1e-12)
    assert len(trace) <= 3


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4))
def test_em_monotone(seed, S):
    rng = np.random.default_rng(seed)
    a = AlphabetSpec((2, 3))
    data = random_dataset(rng, a, 6, 8)
    _, trace = em_fit(random_hmm(rng, a, S), data, max_iters=25, tol=0.0)
    assert np.all(np.diff(trace) >= -1e-9)


def test_em_trace_last_is_returned_model(rng, binary2):
    data = random_dataset(rng, binary2, 5, 10)
    fit, trace = em_fit(random_hmm(rng, binary2, 2), data, max_iters=7, tol=0.0)
    assert trace[-1] == pytest.approx(sum(log_forward(fit, s) for s in data), abs=1e-9)


def test_em_recovers_generator():
    rng = np.random.default_rng(0)
    a = AlphabetSpec((2, 2))
    gen = Hmm.from_probs(a, [0.5, 0.5], [[0.9, 0.1], [0.1, 0.9]],
                         [[[0.9, 0.1], [0.1, 0.9]], [[0.8, 0.2], [0.2, 0.8]]])
    train = SequenceDataset(a, list(ancestral_sample_batch(gen, 50, 100, rng)))
    test = ancestral_sample_batch(gen, 50, 100, rng)
    fit, _ = em_fit_restarts(train, 2, rng, restarts=3, max_iters=200)
    ll_fit = log_forward_batch(fit, test).sum()
    ll_gen = log_forward_batch(gen, test).sum()
    assert abs(ll_fit - ll_gen) / abs(ll_gen) < 0.02


def test_em_errors(rng, binary2):
    h = random_hmm(rng, binary2, 2)
    with pytest.raises(InvalidInputError):
        em_fit(h, SequenceDataset(binary2, []))
    with pytest.raises(InvalidInputError):
        em_fit(h, random_dataset(rng, AlphabetSpec((3,)), 2, 3))
    with pytest.raises(InvalidInputError):
        em_fit(h, random_dataset(rng, binary2, 2, 3), max_iters=0)


def test_em_unvisited_state_row_is_uniform():
    a = AlphabetSpec((2,))
    # state 1 is unreachable, so its rows get no expected counts
    h = Hmm.from_probs(a, [1.0, 0.0], [[1.0, 0.0], [0.5, 0.5]], [[[0.5, 0.5], [0.5, 0.5]]])
    fit, _ = em_fit(h, SequenceDataset(a, [[0, 1, 1]]), max_iters=2)
    np.testing.assert_allclose(fit.trans_probs[1], [0.5, 0.5])
    assert np.all(np.isfinite(fit.flat()))


def test_random_init_is_seeded(binary2):
    data = random_dataset(np.random.default_rng(0), binary2, 4, 5)
    assert random_init(data, 3, np.random.default_rng(1)) == random_init(data, 3, np.random.default_rng(1))


# gradient -----------------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(instances(max_paths=10 ** 6))
def test_gradient_matches_finite_differences(inst):
    h, seq, _ = inst
    g = log_likelihood_gradient(h, seq).flat()
    fd = finite_diff_gradient(lambda m: log_forward(m, seq), h, 1e-5).flat()
    rel = np.abs(g - fd) / np.maximum(1.0, np.abs(fd))
    assert rel.max() < 1e-4


def test_gradient_zero_at_single_state_mle():
    a = AlphabetSpec((3,))
    seq = [0, 1, 1, 2, 1, 1]
    h = Hmm.from_probs(a, [1.0], [[1.0]], [[[1 / 6, 4 / 6, 1 / 6]]])
    np.testing.assert_allclose(log_likelihood_gradient(h, seq).emit[0], 0.0, atol=1e-8)


def test_gradient_unobserved_symbol_negative(rng):
    a = AlphabetSpec((3,))
    h = random_hmm(rng, a, 2)
    g = log_likelihood_gradient(h, [0, 1, 0, 1])
    assert np.all(g.emit[0][:, 2] < 0)


def test_gradient_from_flat_round_trip(rng, binary2):
    h = random_hmm(rng, binary2, 3)
    g = log_likelihood_gradient(h, random_seqs(rng, binary2, 1, 4)[0])
    np.testing.assert_array_equal(HmmGradient.from_flat(h, g.flat()).flat(), g.flat())


# base rates -------------------------------------------------------------------

def test_base_rate_smoothing():
    a = AlphabetSpec((2,))
    data = SequenceDataset(a, [[1, 1, 1, 1, 1, 1, 1, 0, 0, 0]])
    h = base_rate_hmm(data, 1.0)
    assert h.emit_probs[0][0, 1] == pytest.approx(8 / 12, abs=1e-12)


def test_base_rate_uniform_counts():
    a = AlphabetSpec((3,))
    h = base_rate_hmm(SequenceDataset(a, [[0, 1, 2, 2, 1, 0]]))
    np.testing.assert_allclose(h.emit_probs[0][0], 1 / 3)


def test_base_rate_factorizes(rng, binary2):
    data = random_dataset(rng, binary2, 5, 6)
    h = base_rate_hmm(data, 0.5)
    seq = random_seqs(rng, binary2, 1, 7)[0]
    expected = sum(h.log_emit[d][0, seq[t, d]] for t in range(7) for d in range(2))
    assert log_forward(h, seq) == pytest.approx(expected, abs=1e-12)


def test_base_rate_errors(binary2):
    with pytest.raises(InvalidInputError):
        base_rate_hmm(SequenceDataset(binary2, []))
    with pytest.raises(InvalidInputError):
        base_rate_hmm(SequenceDataset(binary2, [[[0, 1]]]), smoothing=0.0)
