"""Annealed importance sampling between two products of HMMs.

The intermediate distribution at inverse temperature ``beta`` is itself a
product with the experts of ``A`` having emissions raised to ``1 - beta`` and
those of ``B`` raised to ``beta``; dynamics are never tempered. Its
transition operator is one alternating Gibbs sweep over all chains.

All ``P`` runs advance together as one batch, but each run draws its
randomness from its own generator, so run ``r`` depends only on the master
seed and ``r``. Run streams come from ``numpy.random.SeedSequence(seed).spawn(P)``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .data import SequenceDataset
from .errors import InvalidInputError
from .hmm import ancestral_sample_batch, base_rate_hmm, emission_scores, forward_batch
from .product import as_product, initial_batch, tempered_sweep, uniforms_per_sweep, gibbs_sweep_batch

# uniforms buffered per refill, summed over runs
_BLOCK_BUDGET = 1 << 22


@dataclass(frozen=True)
class AnnealingSchedule:
    """Strictly increasing inverse temperatures from exactly 0 to exactly 1."""

    betas: tuple

    def __post_init__(self):
        b = tuple(float(x) for x in self.betas)
        if len(b) < 2 or b[0] != 0.0 or b[-1] != 1.0:
            raise InvalidInputError("schedule must start at 0 and end at 1")
        if any(y <= x for x, y in zip(b, b[1:])):
            raise InvalidInputError("schedule must be strictly increasing")
        object.__setattr__(self, "betas", b)

    @classmethod
    def uniform(cls, num_steps):
        if num_steps < 1:
            raise InvalidInputError("need at least one annealing step")
        b = np.linspace(0.0, 1.0, num_steps + 1)
        b[0], b[-1] = 0.0, 1.0
        return cls(tuple(b))

    @classmethod
    def geometric(cls, num_steps, start=1e-4):
        """``0`` followed by ``num_steps`` log-spaced values from ``start`` to 1."""
        if num_steps < 2:
            return cls.uniform(num_steps)
        b = np.concatenate([[0.0], np.geomspace(start, 1.0, num_steps)])
        b[-1] = 1.0
        return cls(tuple(b))

    @property
    def num_steps(self):
        return len(self.betas) - 1


@dataclass(frozen=True)
class AisEstimate:
    log_weights: tuple
    log_z: float
    std_err: float
    num_runs: int
    schedule_len: int

    @classmethod
    def from_log_weights(cls, log_weights, schedule_len, log_z_base=0.0):
        """Combine run weights; ``log_z_base`` is ``log Z_A`` of the starting model.

        ``log_z`` is the log of the mean weight, an unbiased estimate of
        ``Z_B / Z_A`` on the linear scale (its log is biased low).
        ``std_err`` is the delta-method standard error of ``log_z``,
        ``std(w) / (sqrt(P) * mean(w))``.
        """
        lw = np.asarray(log_weights, dtype=np.float64)
        P = lw.size
        log_z = float(logsumexp(lw) - np.log(P)) + log_z_base
        finite = np.isfinite(lw)
        if P > 1 and finite.any():
            w = np.exp(lw - lw[finite].max())
            se = float(np.std(w, ddof=1) / (np.sqrt(P) * np.mean(w)))
        else:
            se = float("nan")
        return cls(tuple(lw.tolist()), log_z, se, P, int(schedule_len))


def _chains(pA, pB, beta):
    return [(h, 1.0 - beta) for h in pA.experts] + [(h, beta) for h in pB.experts]


def _check_pair(pA, pB):
    pA, pB = as_product(pA), as_product(pB)
    if pA.alphabet != pB.alphabet:
        raise InvalidInputError("both products must share one alphabet")
    return pA, pB


def _intermediate_batch(pA, pB, beta, seqs, scores=None):
    total = np.zeros(seqs.shape[0])
    for c, (h, scale) in enumerate(_chains(pA, pB, beta)):
        if scale != 0.0:
            total += forward_batch(h, seqs, scale, None if scores is None else scores[c])[1]
    return total


def intermediate_unnorm_logp(pA, pB, beta, seq):
    """Unnormalized log probability of ``seq`` under the ``beta`` intermediate product."""
    pA, pB = _check_pair(pA, pB)
    if not 0.0 <= beta <= 1.0:
        raise InvalidInputError("beta must lie in [0, 1]")
    seq = pA.alphabet.validate(seq)
    return float(_intermediate_batch(pA, pB, float(beta), seq[None])[0])


def intermediate_unnorm_logp_batch(pA, pB, beta, seqs):
    pA, pB = _check_pair(pA, pB)
    return _intermediate_batch(pA, pB, float(beta), pA.alphabet.validate_batch(seqs))


def intermediate_gibbs_transition_batch(pA, pB, beta, seqs, rng):
    pA, pB = _check_pair(pA, pB)
    seqs = pA.alphabet.validate_batch(seqs)
    chains = _chains(pA, pB, float(beta))
    B, T, D = seqs.shape
    u = rng.random((B, uniforms_per_sweep(len(chains), T, D)))
    return tempered_sweep(chains, seqs, u)[0]


def intermediate_gibbs_transition(pA, pB, beta, seq, rng):
    """One sweep of the transition operator that leaves the ``beta`` intermediate invariant."""
    pA, pB = _check_pair(pA, pB)
    if not 0.0 <= beta <= 1.0:
        raise InvalidInputError("beta must lie in [0, 1]")
    seq = pA.alphabet.validate(seq)
    return intermediate_gibbs_transition_batch(pA, pB, beta, seq[None], rng)[0]


def run_generators(seed, num_runs):
    """Independent per-run generators split off a master seed.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``; a
    generator contributes one 63-bit draw as the master entropy.
    """
    if isinstance(seed, np.random.Generator):
        seed = int(seed.integers(2 ** 63))
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(num_runs)]


def _initial_samples(pA, T, gens, burn_in, base):
    out = []
    for g in gens:
        if len(pA) == 1:
            out.append(ancestral_sample_batch(pA.experts[0], 1, T, g)[0])
        else:
            y = initial_batch(pA.alphabet, 1, T, g, base)
            for _ in range(burn_in):
                y = gibbs_sweep_batch(pA, y, g)
            out.append(y[0])
    return np.stack(out)


def _anneal(pA, pB, schedule, gens, y):
    P, T, D = y.shape
    experts = list(pA.experts) + list(pB.experts)
    k = uniforms_per_sweep(len(experts), T, D)
    N = schedule.num_steps
    block = max(1, min(N, _BLOCK_BUDGET // max(1, P * k)))
    buf, pos = None, block
    log_w = np.zeros(P)
    betas = schedule.betas
    for n in range(1, N + 1):
        scores = [emission_scores(h, y) for h in experts]
        f_prev = _intermediate_batch(pA, pB, betas[n - 1], y, scores)
        if n < N:
            if pos == block:
                steps = min(block, N - n)
                buf = np.stack([g.random(steps * k).reshape(steps, k) for g in gens], axis=1)
                pos = 0
            y, lls = tempered_sweep(_chains(pA, pB, betas[n]), y, buf[pos], scores)
            pos += 1
            f_cur = np.sum(lls, axis=0)
        else:
            f_cur = _intermediate_batch(pA, pB, betas[n], y, scores)
        log_w += f_cur - f_prev
    return log_w


def _check_schedule(schedule):
    if not isinstance(schedule, AnnealingSchedule):
        try:
            schedule = AnnealingSchedule(tuple(schedule))
        except TypeError:
            raise InvalidInputError("schedule must be an AnnealingSchedule or a sequence of betas")
    return schedule


def ais_log_weights(pA, pB, T, schedule, gens, burn_in=100, base=None):
    """Log importance weights of ``len(gens)`` runs, one generator per run.

    Start points are exact ancestral samples when ``pA`` has a single
    expert, otherwise ``burn_in`` Gibbs sweeps on ``pA`` from i.i.d.
    ``base`` (or uniform) symbols; the latter are dependent-chain starts.
    """
    pA, pB = _check_pair(pA, pB)
    schedule = _check_schedule(schedule)
    if T < 1:
        raise InvalidInputError("T must be at least 1")
    y0 = _initial_samples(pA, T, gens, burn_in, base)
    return _anneal(pA, pB, schedule, gens, y0)


def ais_single_run(pA, pB, schedule, rng, T, burn_in=100):
    """One AIS run over length-``T`` sequences; returns its log importance weight."""
    return float(ais_log_weights(pA, pB, T, schedule, [rng], burn_in)[0])


def _check_runs(runs):
    if runs < 2:
        raise InvalidInputError("need at least 2 runs to estimate a standard error")


def estimate_log_partition(pB, T, runs, schedule, data_for_base, smoothing=1.0, rng=0):
    """Estimate ``log Z`` of ``pB`` for length-``T`` sequences.

    Anneals from the smoothed base-rate single-state HMM of
    ``data_for_base``, whose partition function is exactly 1.
    """
    _check_runs(runs)
    schedule = _check_schedule(schedule)
    if not isinstance(data_for_base, SequenceDataset):
        raise InvalidInputError("data_for_base must be a SequenceDataset")
    pB = as_product(pB)
    if data_for_base.alphabet != pB.alphabet:
        raise InvalidInputError("base data alphabet does not match the model")
    pA = as_product(base_rate_hmm(data_for_base, smoothing))
    lw = ais_log_weights(pA, pB, T, schedule, run_generators(rng, runs))
    return AisEstimate.from_log_weights(lw, schedule.num_steps)


def estimate_log_ratio(pA, pB, T, runs, schedule, rng=0, burn_in=100, base=None):
    """Estimate ``log(Z_B / Z_A)`` for length-``T`` sequences."""
    _check_runs(runs)
    schedule = _check_schedule(schedule)
    lw = ais_log_weights(pA, pB, T, schedule, run_generators(rng, runs), burn_in, base)
    return AisEstimate.from_log_weights(lw, schedule.num_steps)
