"""Products of HMM experts: scoring, alternating Gibbs sampling and CD training."""

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import SequenceDataset, group_by_length
from .errors import InvalidInputError
from .hmm import Hmm, ancestral_sample_batch, base_rate_hmm, forward_batch, gradient_batch, sample_paths_batch

log = logging.getLogger(__name__)


class ProductHmm:
    """Ordered list of :class:`Hmm` experts over one shared alphabet.

    The unnormalized log probability of a sequence is the sum of the
    experts' log likelihoods.
    """

    def __init__(self, experts):
        experts = tuple(experts)
        if not experts:
            raise InvalidInputError("a product needs at least one expert")
        alphabet = experts[0].alphabet
        for e in experts:
            if not isinstance(e, Hmm):
                raise InvalidInputError("experts must be Hmm instances")
            if e.alphabet != alphabet:
                raise InvalidInputError("all experts must share one alphabet")
        self.experts = experts
        self.alphabet = alphabet

    @property
    def num_experts(self):
        return len(self.experts)

    @property
    def num_params(self):
        return sum(e.num_params for e in self.experts)

    def __len__(self):
        return len(self.experts)

    def __eq__(self, other):
        if not isinstance(other, ProductHmm):
            return NotImplemented
        return len(self) == len(other) and all(a == b for a, b in zip(self.experts, other.experts))

    def __repr__(self):
        return f"ProductHmm(states={[e.num_states for e in self.experts]}, alphabet={self.alphabet.cardinalities})"

    def with_flat(self, vecs):
        return ProductHmm([e.with_flat(v) for e, v in zip(self.experts, vecs)])

    def flat(self):
        return [e.flat() for e in self.experts]


def as_product(model):
    """Wrap a bare :class:`Hmm` as a one-expert product."""
    if isinstance(model, ProductHmm):
        return model
    if isinstance(model, Hmm):
        return ProductHmm([model])
    raise InvalidInputError(f"expected Hmm or ProductHmm, got {type(model).__name__}")


def unnorm_log_likelihood_batch(p, seqs):
    """``log p*`` for each sequence of a ``(B, T, D)`` batch."""
    seqs = p.alphabet.validate_batch(seqs)
    return sum(forward_batch(e, seqs)[1] for e in p.experts)


def unnorm_log_likelihood(p, seq):
    """Sum of the experts' log likelihoods; equals ``log p(seq) + log Z``."""
    seq = p.alphabet.validate(seq)
    return float(unnorm_log_likelihood_batch(p, seq[None])[0])


def uniforms_per_sweep(num_chains, T, D):
    """Number of uniforms one tempered sweep consumes per sequence."""
    return num_chains * T + T * D


def tempered_sweep(chains, seqs, u, scores=None):
    """One alternating Gibbs step for a product of emission-tempered chains.

    ``chains`` is a list of ``(hmm, scale)``: each chain's emissions enter
    raised to the power ``scale``. ``u`` holds ``uniforms_per_sweep`` uniforms
    per sequence; the first ``T`` per chain drive the path draws, the rest
    the symbol draws in ``(t, d)`` order.

    Returns the new batch and the per-chain log likelihoods of the *input*
    batch at the given scales (a by-product of the forward passes).
    ``scores`` optionally supplies each chain's unscaled emission scores.
    """
    B, T, D = seqs.shape
    lls = []
    paths = []
    for c, (h, scale) in enumerate(chains):
        if scale == 0.0:
            # the data do not inform the chain; its likelihood is exactly 1
            sc = np.zeros((B, T, h.num_states))
        else:
            sc = None if scores is None else scores[c]
        path, ll = sample_paths_batch(h, seqs, scale, u[:, c * T:(c + 1) * T], sc)
        paths.append(path)
        lls.append(ll if scale != 0.0 else np.zeros(B))
    us = u[:, len(chains) * T:].reshape(B, T, D)
    out = np.empty_like(seqs)
    for d, v in enumerate(chains[0][0].alphabet.cardinalities):
        logits = np.zeros((B, T, v))
        for (h, scale), path in zip(chains, paths):
            if scale != 0.0:
                logits += scale * h.log_emit[d][path]
        out[:, :, d] = kernels.sample_categorical(logits.reshape(B * T, v), us[:, :, d].ravel()).reshape(B, T)
    return out, lls


def gibbs_sweep_batch(p, seqs, rng):
    """Apply one Gibbs sweep independently to every sequence of a batch."""
    seqs = p.alphabet.validate_batch(seqs)
    B, T, D = seqs.shape
    u = rng.random((B, uniforms_per_sweep(len(p), T, D)))
    return tempered_sweep([(e, 1.0) for e in p.experts], seqs, u)[0]


def gibbs_sweep(p, seq, rng):
    """Sample every expert's state path given ``seq``, then resample ``seq`` from the renormalized
    product of the selected emission distributions."""
    seq = p.alphabet.validate(seq)
    return gibbs_sweep_batch(p, seq[None], rng)[0]


@dataclass
class TrainConfig:
    """CD hyperparameters.

    ``cd_k`` is either a constant or a list of ``(first_epoch, k)`` steps,
    e.g. ``[(0, 1), (200, 3), (500, 10)]``.
    """

    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 1000
    cd_k: object = 1
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise InvalidInputError("learning_rate must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidInputError("momentum must lie in [0, 1)")
        if self.epochs < 1:
            raise InvalidInputError("epochs must be positive")
        if isinstance(self.cd_k, (list, tuple)):
            steps = sorted((int(e), int(k)) for e, k in self.cd_k)
            if not steps or steps[0][0] != 0:
                raise InvalidInputError("cd_k schedule must start at epoch 0")
            if any(k < 1 for _, k in steps):
                raise InvalidInputError("cd_k must be at least 1")
            self.cd_k = steps
        elif int(self.cd_k) < 1:
            raise InvalidInputError("cd_k must be at least 1")

    def k_at(self, epoch):
        if isinstance(self.cd_k, list):
            k = self.cd_k[0][1]
            for start, kk in self.cd_k:
                if epoch >= start:
                    k = kk
            return k
        return int(self.cd_k)


def zero_velocity(p):
    return [np.zeros_like(v) for v in p.flat()]


def _as_batches(p, batch):
    if isinstance(batch, SequenceDataset):
        if batch.alphabet != p.alphabet:
            raise InvalidInputError("dataset alphabet does not match the model")
        return batch.by_length(), len(batch)
    seqs = [p.alphabet.validate(s) for s in batch]
    if not seqs:
        raise InvalidInputError("empty batch")
    return group_by_length(seqs), len(seqs)


def cd_direction(p, batch, k, rng):
    """Mean over the batch of (data gradient - reconstruction gradient) for each expert.

    Returns ``(directions, diagnostics)`` where diagnostics hold the mean
    fraction of symbols changed by the reconstruction and the mean
    unnormalized log likelihood of the data.
    """
    groups, n = _as_batches(p, batch)
    if n == 0:
        raise InvalidInputError("empty batch")
    if k < 1:
        raise InvalidInputError("k must be at least 1")
    dirs = [np.zeros_like(v) for v in p.flat()]
    changed = 0.0
    events = 0
    total_ll = 0.0
    for _, seqs in groups:
        recon = seqs
        for _ in range(k):
            recon = gibbs_sweep_batch(p, recon, rng)
        for m, e in enumerate(p.experts):
            g_data, ll = gradient_batch(e, seqs)
            g_model, _ = gradient_batch(e, recon)
            dirs[m] += g_data - g_model
            total_ll += ll.sum()
        changed += np.count_nonzero(recon != seqs)
        events += seqs.size
    dirs = [d / n for d in dirs]
    return dirs, {"recon_error": changed / events, "mean_unnorm_ll": total_ll / n}


def apply_update(p, dirs, cfg, velocity):
    """Momentum update; ``velocity`` is modified in place."""
    for v, d in zip(velocity, dirs):
        v *= cfg.momentum
        v += d
    if cfg.learning_rate == 0.0:
        return p
    return ProductHmm([e.with_flat(e.flat() + cfg.learning_rate * v)
                       for e, v in zip(p.experts, velocity)])


def cd_step(p, batch, k, cfg, rng, velocity):
    """One CD(k) parameter update of every expert simultaneously."""
    dirs, _ = cd_direction(p, batch, k, rng)
    return apply_update(p, dirs, cfg, velocity)


def train_cd(p, data, cfg):
    """Full-batch CD training with momentum.

    Returns ``(model, trace)``; ``trace`` has one dict per epoch with the
    reconstruction error and mean unnormalized log likelihood measured
    before that epoch's update.
    """
    if not isinstance(data, SequenceDataset):
        data = SequenceDataset(p.alphabet, data)
    data.require_nonempty()
    rng = np.random.default_rng(cfg.seed)
    velocity = zero_velocity(p)
    trace = []
    for epoch in range(cfg.epochs):
        dirs, diag = cd_direction(p, data, cfg.k_at(epoch), rng)
        p = apply_update(p, dirs, cfg, velocity)
        diag["epoch"] = epoch
        trace.append(diag)
        if epoch % 100 == 0:
            log.debug("epoch %d recon_error %.4f unnorm_ll %.4f", epoch, diag["recon_error"], diag["mean_unnorm_ll"])
    return p, trace


def random_product(data, num_experts, num_states, rng, spread=0.5, smoothing=1.0, base_rates=True):
    """Random initial product for CD training.

    Every logit gets uniform noise in ``[-spread, spread]``. With
    ``base_rates`` each expert's emission logits are additionally centred on
    the base-rate logits divided by the number of experts, so that the
    initial product roughly matches the data's marginals.
    """
    base = base_rate_hmm(data, smoothing)
    S = num_states
    experts = []
    for _ in range(num_experts):
        emit = [np.repeat(e / num_experts if base_rates else np.zeros_like(e), S, axis=0)
                + rng.uniform(-spread, spread, size=(S, e.shape[1]))
                for e in base.log_emit]
        experts.append(Hmm(data.alphabet, rng.uniform(-spread, spread, S),
                           rng.uniform(-spread, spread, (S, S)), emit))
    return ProductHmm(experts)


def initial_batch(alphabet, n, T, rng, base=None):
    """``n`` sequences of i.i.d. symbols from the single-state ``base`` model (uniform if None)."""
    D = alphabet.num_dims
    out = np.empty((n, T, D), dtype=np.int64)
    u = rng.random((n, T, D))
    for d, v in enumerate(alphabet.cardinalities):
        logp = base.log_emit[d][0] if base is not None else np.zeros(v)
        out[:, :, d] = kernels.sample_categorical(np.broadcast_to(logp, (n * T, v)), u[:, :, d].ravel()).reshape(n, T)
    return out


def model_sample_batch(p, n, T, burn_in=100, rng=None, base=None):
    """Approximate samples by ``burn_in`` Gibbs sweeps from i.i.d. base-rate starts.

    A single expert is a normalized HMM and is sampled ancestrally, which is
    exact; for larger products the output is only asymptotically exact in
    ``burn_in``.
    """
    if T < 1 or n < 1:
        raise InvalidInputError("need n >= 1 and T >= 1")
    if burn_in < 1:
        raise InvalidInputError("burn_in must be positive")
    if base is not None and (base.num_states != 1 or base.alphabet != p.alphabet):
        raise InvalidInputError("base must be a single-state Hmm over the model alphabet")
    rng = rng if rng is not None else np.random.default_rng()
    if len(p) == 1:
        return ancestral_sample_batch(p.experts[0], n, T, rng)
    seqs = initial_batch(p.alphabet, n, T, rng, base)
    for _ in range(burn_in):
        seqs = gibbs_sweep_batch(p, seqs, rng)
    return seqs


def model_sample(p, T, burn_in=100, rng=None, base=None):
    return model_sample_batch(p, 1, T, burn_in, rng, base)[0]
