"""Discrete HMMs with factorized categorical emissions.

Parameters are unconstrained logits; probabilities come from row-wise
softmax. All inference runs in log space, optionally with every
log-emission term multiplied by an inverse temperature ``beta``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from . import kernels
from .data import AlphabetSpec, SequenceDataset
from .errors import InvalidInputError

# floor applied before taking logs of EM estimates, keeps logits finite
_PROB_FLOOR = 1e-300


def _readonly(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


class Hmm:
    """A single HMM expert.

    Parameters
    ----------
    alphabet : AlphabetSpec
    init_logits : array, shape (S,)
    trans_logits : array, shape (S, S)
        Row ``i`` holds the logits of ``p(s_t | s_{t-1} = i)``.
    emit_logits : list of D arrays, shape (S, V_d)
        Row ``i`` of entry ``d`` holds the logits of ``p(y_d | s = i)``.
    """

    def __init__(self, alphabet, init_logits, trans_logits, emit_logits):
        if not isinstance(alphabet, AlphabetSpec):
            alphabet = AlphabetSpec(tuple(alphabet))
        init = _readonly(init_logits)
        trans = _readonly(trans_logits)
        if init.ndim != 1 or init.size < 1:
            raise InvalidInputError("init_logits must be a nonempty vector")
        S = init.size
        if trans.shape != (S, S):
            raise InvalidInputError(f"trans_logits must have shape ({S}, {S}), got {trans.shape}")
        if len(emit_logits) != alphabet.num_dims:
            raise InvalidInputError("need one emission logit matrix per dimension")
        emit = []
        for d, (e, v) in enumerate(zip(emit_logits, alphabet.cardinalities)):
            e = _readonly(e)
            if e.shape != (S, v):
                raise InvalidInputError(f"emit_logits[{d}] must have shape ({S}, {v}), got {e.shape}")
            emit.append(e)
        for a in [init, trans, *emit]:
            if not np.all(np.isfinite(a)):
                raise InvalidInputError("all logits must be finite")
        self.alphabet = alphabet
        self.init_logits = init
        self.trans_logits = trans
        self.emit_logits = tuple(emit)
        self.log_init = _readonly(log_softmax(init))
        self.log_trans = _readonly(log_softmax(trans, axis=1))
        self.log_emit = tuple(_readonly(log_softmax(e, axis=1)) for e in emit)

    @classmethod
    def from_probs(cls, alphabet, init, trans, emit):
        """Build from probability tables; zeros are floored, not rejected."""
        lg = lambda p: np.log(np.maximum(np.asarray(p, dtype=np.float64), _PROB_FLOOR))
        return cls(alphabet, lg(init), lg(trans), [lg(e) for e in emit])

    @property
    def num_states(self):
        return self.init_logits.size

    @property
    def init_probs(self):
        return softmax(self.init_logits)

    @property
    def trans_probs(self):
        return softmax(self.trans_logits, axis=1)

    @property
    def emit_probs(self):
        return [softmax(e, axis=1) for e in self.emit_logits]

    @property
    def num_params(self):
        """Number of free parameters (one per softmax row is redundant)."""
        S = self.num_states
        return (S - 1) + S * (S - 1) + S * sum(v - 1 for v in self.alphabet.cardinalities)

    def flat(self):
        """All logits concatenated: init, trans (row-major), then emissions by dimension."""
        return np.concatenate([self.init_logits, self.trans_logits.ravel()]
                              + [e.ravel() for e in self.emit_logits])

    def with_flat(self, vec):
        """Return a new Hmm whose logits are read from ``vec`` (layout of :meth:`flat`)."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.flat().size:
            raise InvalidInputError("parameter vector has the wrong length")
        S = self.num_states
        init = vec[:S]
        pos = S
        trans = vec[pos:pos + S * S].reshape(S, S)
        pos += S * S
        emit = []
        for v in self.alphabet.cardinalities:
            emit.append(vec[pos:pos + S * v].reshape(S, v))
            pos += S * v
        return Hmm(self.alphabet, init, trans, emit)

    def __eq__(self, other):
        if not isinstance(other, Hmm):
            return NotImplemented
        return (self.alphabet == other.alphabet and self.num_states == other.num_states
                and np.array_equal(self.flat(), other.flat()))

    def __repr__(self):
        return f"Hmm(states={self.num_states}, alphabet={self.alphabet.cardinalities})"


@dataclass(frozen=True)
class HmmGradient:
    """Gradient with respect to every logit of an :class:`Hmm`."""

    init: np.ndarray
    trans: np.ndarray
    emit: tuple

    def flat(self):
        return np.concatenate([self.init, self.trans.ravel()] + [e.ravel() for e in self.emit])

    @classmethod
    def from_flat(cls, h, vec):
        """Unpack a flat gradient laid out like ``h.flat()``."""
        vec = np.asarray(vec, dtype=np.float64)
        S = h.num_states
        pos = S + S * S
        emit = []
        for v in h.alphabet.cardinalities:
            emit.append(vec[pos:pos + S * v].reshape(S, v))
            pos += S * v
        return cls(vec[:S].copy(), vec[S:S + S * S].reshape(S, S).copy(), tuple(e.copy() for e in emit))


@dataclass(frozen=True)
class PosteriorStats:
    gamma: np.ndarray
    xi_sums: np.ndarray
    emit_counts: tuple
    log_likelihood: float


def emission_scores(h, seqs):
    """Per-state log emission of every frame: shape ``(B, T, S)`` for a ``(B, T, D)`` batch."""
    out = np.zeros(seqs.shape[:2] + (h.num_states,))
    for d, le in enumerate(h.log_emit):
        out += le.T[seqs[:, :, d]]
    return out


def _single(h, seq):
    return h.alphabet.validate(seq)[None]


def _check_beta(beta):
    beta = float(beta)
    if not 0.0 <= beta <= 1.0:
        raise InvalidInputError(f"beta must lie in [0, 1], got {beta}")
    return beta


def forward_batch(h, seqs, beta=1.0, scores=None):
    """Forward pass over a validated ``(B, T, D)`` batch.

    Returns ``(log_alpha, loglik, log_b)``; ``scores`` may carry precomputed
    :func:`emission_scores` to avoid recomputing them at several ``beta``.
    """
    if scores is None:
        scores = emission_scores(h, seqs)
    log_b = scores * beta if beta != 1.0 else scores
    log_alpha, ll = kernels.forward(h.log_init, h.log_trans, log_b)
    return log_alpha, ll, log_b


def log_forward_batch(h, seqs, beta=1.0):
    seqs = h.alphabet.validate_batch(seqs)
    return forward_batch(h, seqs, _check_beta(beta))[1]


def log_forward(h, seq, beta=1.0):
    """Log of the (emission-tempered) marginal likelihood of one sequence, in nats."""
    return float(forward_batch(h, _single(h, seq), _check_beta(beta))[1][0])


def _batch_stats(h, seqs, beta=1.0):
    """Posterior quantities for a validated batch.

    Returns ``gamma (B,T,S)``, ``xi (B,S,S)``, emission counts (list of
    ``(B,S,V_d)``) and ``loglik (B,)``.
    """
    log_alpha, ll, log_b = forward_batch(h, seqs, beta)
    log_beta = kernels.backward(h.log_trans, log_b)
    gamma = np.exp(log_alpha + log_beta - ll[:, None, None])
    xi = kernels.xi_sums(log_alpha, log_beta, h.log_trans, log_b, ll)
    counts = []
    for d, v in enumerate(h.alphabet.cardinalities):
        onehot = np.eye(v)[seqs[:, :, d]]  # (B, T, V)
        counts.append(np.einsum("bts,btv->bsv", gamma, onehot))
    return gamma, xi, counts, ll


def posterior_stats(h, seq, beta=1.0):
    """Exact posterior expectations for one sequence by forward-backward."""
    seqs = _single(h, seq)
    gamma, xi, counts, ll = _batch_stats(h, seqs, _check_beta(beta))
    return PosteriorStats(gamma[0], xi[0], tuple(c[0] for c in counts), float(ll[0]))


def sample_paths_batch(h, seqs, beta, u, scores=None):
    """FFBS for a validated batch given uniforms ``u`` of shape ``(B, T)``.

    Returns ``(paths, loglik)``; the loglik is the by-product of the forward pass.
    """
    log_alpha, ll, _ = forward_batch(h, seqs, beta, scores)
    return kernels.backward_sample(log_alpha, h.log_trans, u), ll


def sample_posterior_path(h, seq, beta, rng):
    """Draw one state path from ``p(s_{1:T} | y_{1:T})`` by forward filtering, backward sampling."""
    seqs = _single(h, seq)
    u = rng.random((1, seqs.shape[1]))
    return sample_paths_batch(h, seqs, _check_beta(beta), u)[0][0]


def _draw_states(logp, u):
    return kernels.sample_categorical(np.broadcast_to(logp, (u.size, logp.size)), u)


def ancestral_sample_batch(h, n, T, rng):
    """Draw ``n`` independent sequences of length ``T``; returns ``(n, T, D)``."""
    if T < 1 or n < 1:
        raise InvalidInputError("need n >= 1 and T >= 1")
    D = h.alphabet.num_dims
    states = np.empty((n, T), dtype=np.int64)
    u = rng.random((n, T))
    states[:, 0] = _draw_states(h.log_init, u[:, 0])
    for t in range(1, T):
        states[:, t] = kernels.sample_categorical(h.log_trans[states[:, t - 1]], u[:, t])
    out = np.empty((n, T, D), dtype=np.int64)
    u = rng.random((n, T, D))
    for d, le in enumerate(h.log_emit):
        out[:, :, d] = kernels.sample_categorical(le[states.ravel()], u[:, :, d].ravel()).reshape(n, T)
    return out


def ancestral_sample(h, T, rng):
    """Draw one sequence of length ``T`` from the generative model."""
    return ancestral_sample_batch(h, 1, T, rng)[0]


def _pooled(h, data, beta=1.0):
    S = h.num_states
    init = np.zeros(S)
    xi = np.zeros((S, S))
    counts = [np.zeros((S, v)) for v in h.alphabet.cardinalities]
    total_ll = 0.0
    for _, seqs in data.by_length():
        gamma, x, c, ll = _batch_stats(h, seqs, beta)
        init += gamma[:, 0].sum(axis=0)
        xi += x.sum(axis=0)
        for d in range(len(counts)):
            counts[d] += c[d].sum(axis=0)
        total_ll += ll.sum()
    return init, xi, counts, total_ll


_VISIT_EPS = 1e-100


def _normalize_rows(counts, pseudocount):
    c = counts + pseudocount
    tot = c.sum(axis=-1, keepdims=True)
    uniform = np.full_like(c, 1.0 / c.shape[-1])
    # rows with no expected visits (only floor-level mass) become uniform
    seen = tot > _VISIT_EPS
    return np.where(seen, c / np.where(seen, tot, 1.0), uniform)


def em_step(h, data, pseudocount=0.0):
    """One Baum-Welch update. Returns ``(new_hmm, loglik_of_h)``."""
    init, xi, counts, ll = _pooled(h, data)
    new = Hmm.from_probs(h.alphabet,
                         _normalize_rows(init, pseudocount),
                         _normalize_rows(xi, pseudocount),
                         [_normalize_rows(c, pseudocount) for c in counts])
    return new, ll


def em_fit(h, data, max_iters=100, tol=1e-6, pseudocount=0.0):
    """Fit by Baum-Welch from the initial model ``h``.

    Iterates until the gain in total log likelihood per sequence drops below
    ``tol`` or ``max_iters`` updates were made. ``trace[i]`` is the training
    log likelihood of the i-th iterate; the returned model is the last
    iterate, whose log likelihood is ``trace[-1]``. ``pseudocount`` > 0
    turns the updates into MAP estimates under a symmetric Dirichlet prior,
    for which the trace need not be monotone.
    """
    if not isinstance(data, SequenceDataset):
        raise InvalidInputError("data must be a SequenceDataset")
    data.require_nonempty()
    if data.alphabet != h.alphabet:
        raise InvalidInputError("dataset alphabet does not match the model")
    if max_iters < 1:
        raise InvalidInputError("max_iters must be at least 1")
    n = len(data)
    trace = []
    cur = h
    for _ in range(max_iters):
        nxt, ll = em_step(cur, data, pseudocount)
        trace.append(float(ll))
        if len(trace) > 1 and (trace[-1] - trace[-2]) / n < tol:
            return cur, trace
        cur = nxt
    trace.append(float(_pooled(cur, data)[3]))
    return cur, trace


def random_init(data, num_states, rng, spread=0.1, smoothing=1.0):
    """Random starting point for EM.

    Emission logits are the base-rate logits plus i.i.d. uniform noise in
    ``[-spread, spread]``; initial and transition distributions start uniform.
    """
    base = base_rate_hmm(data, smoothing)
    S = num_states
    emit = [np.repeat(e, S, axis=0) + rng.uniform(-spread, spread, size=(S, e.shape[1]))
            for e in base.log_emit]
    return Hmm(data.alphabet, np.zeros(S), np.zeros((S, S)), emit)


def em_fit_restarts(data, num_states, rng, restarts=1, max_iters=100, tol=1e-6, pseudocount=0.0):
    """Run :func:`em_fit` from ``restarts`` random inits and keep the best fit."""
    if restarts < 1:
        raise InvalidInputError("restarts must be at least 1")
    best = None
    for _ in range(restarts):
        fit, trace = em_fit(random_init(data, num_states, rng), data, max_iters, tol, pseudocount)
        if best is None or trace[-1] > best[1][-1]:
            best = (fit, trace)
    return best


def _softmax_grad(counts, logits):
    n = counts.sum(axis=-1, keepdims=True)
    return counts - n * softmax(logits, axis=-1)


def gradient_from_stats(h, init_counts, xi, emit_counts):
    return HmmGradient(
        _softmax_grad(init_counts, h.init_logits),
        _softmax_grad(xi, h.trans_logits),
        tuple(_softmax_grad(c, e) for c, e in zip(emit_counts, h.emit_logits)),
    )


def gradient_batch(h, seqs):
    """Summed log-likelihood gradient over a validated batch, as a flat vector.

    Also returns the per-sequence log likelihoods.
    """
    gamma, xi, counts, ll = _batch_stats(h, seqs)
    g = gradient_from_stats(h, gamma[:, 0].sum(axis=0), xi.sum(axis=0), [c.sum(axis=0) for c in counts])
    return g.flat(), ll


def log_likelihood_gradient(h, seq):
    """Analytic gradient of ``log_forward(h, seq, 1)`` with respect to all logits."""
    st = posterior_stats(h, seq)
    return gradient_from_stats(h, st.gamma[0], st.xi_sums, st.emit_counts)


def base_rate_hmm(data, smoothing=1.0):
    """Single-state HMM whose emissions are the additively smoothed symbol frequencies."""
    if not isinstance(data, SequenceDataset):
        raise InvalidInputError("data must be a SequenceDataset")
    data.require_nonempty()
    if not smoothing > 0:
        raise InvalidInputError("smoothing must be positive")
    counts = data.symbol_counts()
    emit = [np.log((c + smoothing) / (c.sum() + c.size * smoothing))[None, :] for c in counts]
    return Hmm(data.alphabet, np.zeros(1), np.zeros((1, 1)), emit)


def uniform_hmm(alphabet):
    """Single-state HMM with uniform emissions."""
    return Hmm(alphabet, np.zeros(1), np.zeros((1, 1)), [np.zeros((1, v)) for v in alphabet.cardinalities])
