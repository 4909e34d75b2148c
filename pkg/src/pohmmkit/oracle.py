"""Exact brute-force computations for small instances.

These enumerate observation sequences or hidden paths outright and are the
reference against which the forward-backward, sampling and AIS code is
tested. Every enumeration checks its size before allocating anything.
"""

import itertools
import os

import numpy as np
from scipy.special import logsumexp

from .errors import CapacityError, InvalidInputError
from .hmm import Hmm, HmmGradient
from .product import as_product, unnorm_log_likelihood, unnorm_log_likelihood_batch

DEFAULT_ENUM_LIMIT = 2 ** 20
ENUM_LIMIT_ENV = "POHMMKIT_ENUM_LIMIT"
PATH_LIMIT = 10 ** 5
CHUNK = 1 << 14


def enum_limit(limit=None):
    if limit is not None:
        return int(limit)
    env = os.environ.get(ENUM_LIMIT_ENV)
    return int(env) if env else DEFAULT_ENUM_LIMIT


def _check_capacity(alphabet, T, limit):
    if T < 1:
        raise InvalidInputError("T must be at least 1")
    n = alphabet.num_sequences(T)
    if n > enum_limit(limit):
        raise CapacityError(
            f"{n} sequences of length {T} exceed the enumeration limit {enum_limit(limit)}; use AIS")
    return n


def sequences_chunk(alphabet, T, start, stop):
    """Sequences ``start..stop-1`` in lexicographic order over ``(t, d)`` positions."""
    D = alphabet.num_dims
    radices = np.tile(np.asarray(alphabet.cardinalities, dtype=np.int64), T)
    idx = np.arange(start, stop, dtype=np.int64)
    out = np.empty((idx.size, T * D), dtype=np.int64)
    for pos in range(T * D - 1, -1, -1):
        idx, out[:, pos] = np.divmod(idx, radices[pos])
    return out.reshape(-1, T, D)


def enumerate_sequences(alphabet, T, limit=None):
    """All sequences of length ``T`` as an ``(N, T, D)`` array."""
    n = _check_capacity(alphabet, T, limit)
    return sequences_chunk(alphabet, T, 0, n)


def _chunked_scores(p, T, limit):
    n = _check_capacity(p.alphabet, T, limit)
    for start in range(0, n, CHUNK):
        yield unnorm_log_likelihood_batch(p, sequences_chunk(p.alphabet, T, start, min(n, start + CHUNK)))


def exact_log_partition(p, T, limit=None):
    """Log of the sum of ``exp(unnorm_log_likelihood)`` over every length-``T`` sequence."""
    p = as_product(p)
    if len(p) == 1:
        # single normalized HMM; still honour the capacity contract
        _check_capacity(p.alphabet, T, limit)
        return 0.0
    parts = [logsumexp(s) for s in _chunked_scores(p, T, limit)]
    return float(logsumexp(parts))


def exact_log_likelihood(p, seq, limit=None):
    p = as_product(p)
    seq = p.alphabet.validate(seq)
    return unnorm_log_likelihood(p, seq) - exact_log_partition(p, seq.shape[0], limit)


def exact_distribution(p, T, limit=None):
    """Every sequence of length ``T`` with its exact log probability under the product."""
    p = as_product(p)
    seqs = enumerate_sequences(p.alphabet, T, limit)
    scores = unnorm_log_likelihood_batch(p, seqs)
    return seqs, scores - logsumexp(scores)


def _paths(h, T):
    if h.num_states ** T > PATH_LIMIT:
        raise CapacityError(f"{h.num_states}^{T} paths exceed the limit {PATH_LIMIT}")
    return np.array(list(itertools.product(range(h.num_states), repeat=T)), dtype=np.int64)


def path_log_joint(h, seq, beta=1.0):
    """Log joint ``p(s, y)`` (emissions tempered by ``beta``) of every state path.

    Returns ``(paths, log_joint)`` with ``paths`` of shape ``(S**T, T)``.
    """
    seq = h.alphabet.validate(seq)
    T = seq.shape[0]
    paths = _paths(h, T)
    lj = h.log_init[paths[:, 0]].copy()
    for t in range(1, T):
        lj += h.log_trans[paths[:, t - 1], paths[:, t]]
    for t in range(T):
        for d, le in enumerate(h.log_emit):
            lj += beta * le[paths[:, t], seq[t, d]]
    return paths, lj


def exact_log_forward(h, seq, beta=1.0):
    return float(logsumexp(path_log_joint(h, seq, beta)[1]))


def exact_path_posterior(h, seq, beta=1.0):
    paths, lj = path_log_joint(h, seq, beta)
    return paths, np.exp(lj - logsumexp(lj))


def exact_state_posterior(h, seq, beta=1.0):
    """State marginals ``(T, S)`` by summing the path posterior."""
    paths, post = exact_path_posterior(h, seq, beta)
    T = paths.shape[1]
    gamma = np.zeros((T, h.num_states))
    for t in range(T):
        np.add.at(gamma[t], paths[:, t], post)
    return gamma


def finite_diff_gradient(f, h, step=1e-5):
    """Central finite differences of ``f(hmm)`` with respect to every logit of ``h``."""
    if not step > 0:
        raise InvalidInputError("step must be positive")
    x = h.flat()
    g = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        g[i] = (f(h.with_flat(xp)) - f(h.with_flat(xm))) / (2 * step)
    return HmmGradient.from_flat(h, g)
