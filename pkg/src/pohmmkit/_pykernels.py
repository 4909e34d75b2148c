"""Pure numpy implementations of the inner-loop kernels.

Every routine is batched over a leading axis ``B`` of equal-length sequences
and mirrors the compiled versions in ``_ckernels.pyx`` exactly: same
arguments, same outputs, same consumption of the pre-drawn uniforms. Random
draws are always passed in, so both backends produce the same samples.
"""

import numpy as np

BACKEND = "python"


def _logsumexp(x, axis):
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(x - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out


def forward(log_pi, log_A, log_b):
    """Log-space forward recursion.

    Returns ``(log_alpha, loglik)`` with shapes ``(B, T, S)`` and ``(B,)``.
    """
    B, T, S = log_b.shape
    log_alpha = np.empty((B, T, S))
    log_alpha[:, 0] = log_pi[None, :] + log_b[:, 0]
    for t in range(1, T):
        # (B, S_prev, 1) + (S_prev, S_next)
        log_alpha[:, t] = _logsumexp(log_alpha[:, t - 1, :, None] + log_A[None], axis=1) + log_b[:, t]
    return log_alpha, _logsumexp(log_alpha[:, T - 1], axis=1)


def backward(log_A, log_b):
    B, T, S = log_b.shape
    log_beta = np.empty((B, T, S))
    log_beta[:, T - 1] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = log_b[:, t + 1] + log_beta[:, t + 1]
        log_beta[:, t] = _logsumexp(log_A[None] + nxt[:, None, :], axis=2)
    return log_beta


def xi_sums(log_alpha, log_beta, log_A, log_b, loglik):
    """Expected transition counts per sequence, shape ``(B, S, S)``."""
    B, T, S = log_b.shape
    out = np.zeros((B, S, S))
    for t in range(T - 1):
        x = (log_alpha[:, t, :, None] + log_A[None]
             + (log_b[:, t + 1] + log_beta[:, t + 1])[:, None, :]
             - loglik[:, None, None])
        out += np.exp(x)
    return out


def _inverse_cdf(logw, u):
    # logw: (N, K), u: (N,). First index whose cumulative mass exceeds u * total.
    m = np.max(logw, axis=1, keepdims=True)
    w = np.exp(logw - m)
    c = np.cumsum(w, axis=1)
    thresh = u * c[:, -1]
    idx = np.sum(c <= thresh[:, None], axis=1)
    # rounding can push the threshold past the last cumulative value
    over = idx >= w.shape[1]
    if np.any(over):
        last_pos = w.shape[1] - 1 - np.argmax(w[over][:, ::-1] > 0, axis=1)
        idx[over] = last_pos
    return idx.astype(np.int64)


def backward_sample(log_alpha, log_A, u):
    """Backward sampling step of FFBS given filtered ``log_alpha``.

    ``u`` has shape ``(B, T)``; ``u[:, t]`` drives the draw of ``s_t``.
    """
    B, T, S = log_alpha.shape
    path = np.empty((B, T), dtype=np.int64)
    path[:, T - 1] = _inverse_cdf(log_alpha[:, T - 1], u[:, T - 1])
    for t in range(T - 2, -1, -1):
        logw = log_alpha[:, t] + log_A[:, path[:, t + 1]].T
        path[:, t] = _inverse_cdf(logw, u[:, t])
    return path


def sample_categorical(logits, u):
    """One draw per row of an ``(N, V)`` logit matrix."""
    return _inverse_cdf(logits, u)
