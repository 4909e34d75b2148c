"""Held-out evaluation: scaled log likelihood, imputation accuracy, persistence and
spatial-correlation gaps, and leave-k-out fold plans."""

import math
from dataclasses import dataclass

import numpy as np

from .data import SequenceDataset
from .errors import InvalidInputError
from .hmm import Hmm, ancestral_sample_batch
from .product import ProductHmm, model_sample_batch, unnorm_log_likelihood_batch

CSV_HEADER = "model_id,fold,scaled_ll,imputation_acc,persistence_gap,correlation_gap,log_z,log_z_stderr"


def _scorer(model):
    if isinstance(model, Hmm):
        model = ProductHmm([model])
    if isinstance(model, ProductHmm):
        return lambda seqs: unnorm_log_likelihood_batch(model, seqs)
    if callable(model):
        return model
    raise InvalidInputError("model must be an Hmm, a ProductHmm or a batch scoring callable")


def _is_normalized(model):
    return isinstance(model, Hmm) or (isinstance(model, ProductHmm) and len(model) == 1)


def scaled_log_likelihood(model, heldout, log_z=None):
    """Held-out log likelihood per scalar observation.

    ``log_z`` maps sequence length to the log partition function; it may be
    omitted for normalized models (a single HMM), whose ``log Z`` is 0.
    """
    heldout.require_nonempty()
    if log_z is None:
        if not _is_normalized(model):
            raise InvalidInputError("log_z is required for products of more than one expert")
        log_z = {}
    score = _scorer(model)
    total = 0.0
    for _, seqs in heldout.by_length():
        T = seqs.shape[1]
        if T in log_z:
            lz = float(log_z[T])
        elif _is_normalized(model):
            lz = 0.0
        else:
            raise InvalidInputError(f"no log partition estimate for length {T}")
        total += float(np.sum(score(seqs))) - lz * seqs.shape[0]
    return total / heldout.num_events


def _check_binary(alphabet, dims):
    for d in dims:
        if alphabet.cardinalities[d] != 2:
            raise InvalidInputError(f"dimension {d} is not binary")


def imputation_accuracy(model, heldout, rng=None, max_positions=None, dims=None):
    """Fraction of held-out binary observations whose true value scores higher than its flip.

    Each position ``(sequence, t, d)`` is scored by comparing the unnormalized
    log likelihood with the true symbol against the flipped one; exact ties
    count one half. All positions are scored unless ``max_positions`` asks
    for a random subset drawn with ``rng``.
    """
    heldout.require_nonempty()
    dims = list(range(heldout.alphabet.num_dims)) if dims is None else list(dims)
    _check_binary(heldout.alphabet, dims)
    score = _scorer(model)
    positions = [(i, t, d) for i, s in enumerate(heldout) for t in range(s.shape[0]) for d in dims]
    if max_positions is not None and max_positions < len(positions):
        rng = rng if rng is not None else np.random.default_rng()
        pick = np.sort(rng.choice(len(positions), size=max_positions, replace=False))
        positions = [positions[j] for j in pick]
    by_seq = {}
    for i, t, d in positions:
        by_seq.setdefault(i, []).append((t, d))
    hits = 0.0
    for i, pos in by_seq.items():
        seq = heldout[i]
        batch = np.repeat(seq[None], len(pos) + 1, axis=0)
        for j, (t, d) in enumerate(pos, start=1):
            batch[j, t, d] = 1 - batch[j, t, d]
        s = score(batch)
        hits += np.sum(s[0] > s[1:]) + 0.5 * np.sum(s[0] == s[1:])
    return float(hits / len(positions))


def persistence(data, pooled=True):
    """Per-dimension probability of a 1 given a 1 at the previous step of the same sequence.

    Pooled mode counts transitions across all sequences; otherwise each
    sequence gets its own ratio and those are averaged. Dimensions with no
    qualifying antecedent are NaN.
    """
    _check_binary(data.alphabet, range(data.alphabet.num_dims))
    D = data.alphabet.num_dims
    if pooled:
        wet = np.zeros(D)
        both = np.zeros(D)
        for s in data:
            prev, cur = s[:-1] == 1, s[1:] == 1
            wet += prev.sum(axis=0)
            both += (prev & cur).sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(wet > 0, both / np.where(wet > 0, wet, 1), np.nan)
    per = []
    for s in data:
        prev, cur = s[:-1] == 1, s[1:] == 1
        w = prev.sum(axis=0)
        per.append(np.where(w > 0, (prev & cur).sum(axis=0) / np.where(w > 0, w, 1), np.nan))
    per = np.array(per)
    out = np.full(D, np.nan)
    for d in range(D):
        col = per[:, d][~np.isnan(per[:, d])]
        if col.size:
            out[d] = col.mean()
    return out


def correlation(data, pooled=True):
    """Pearson correlation matrix between dimensions over frames; NaN where a dimension is constant."""
    D = data.alphabet.num_dims
    if pooled:
        frames = np.concatenate(list(data.sequences)).astype(np.float64)
        return _pearson(frames)
    mats = np.array([_pearson(s.astype(np.float64)) for s in data])
    out = np.full((D, D), np.nan)
    for i in range(D):
        for j in range(D):
            v = mats[:, i, j][~np.isnan(mats[:, i, j])]
            if v.size:
                out[i, j] = v.mean()
    return out


def _pearson(x):
    xc = x - x.mean(axis=0)
    sd = np.sqrt((xc ** 2).sum(axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (xc.T @ xc) / np.outer(sd, sd)
    r[:, sd == 0] = np.nan
    r[sd == 0, :] = np.nan
    return r


def mean_pair_correlation(data, pooled=True):
    if data.alphabet.num_dims < 2:
        raise InvalidInputError("correlation needs at least two dimensions")
    r = correlation(data, pooled)
    iu = np.triu_indices(r.shape[0], k=1)
    vals = r[iu]
    vals = vals[~np.isnan(vals)]
    return float(vals.mean()) if vals.size else math.nan


def _nanmean(x):
    x = np.asarray(x)
    x = x[~np.isnan(x)]
    return float(x.mean()) if x.size else math.nan


def simulate(model, num_sims, sim_T, rng, burn_in=100, base=None):
    """Draw ``num_sims`` sequences of length ``sim_T`` from a model.

    HMMs (and one-expert products) are sampled ancestrally; larger products
    by Gibbs sampling with ``burn_in`` sweeps. A callable is invoked as
    ``model(num_sims, sim_T, rng)`` and must return an ``(n, T, D)`` array.
    """
    if isinstance(model, ProductHmm) and len(model) == 1:
        model = model.experts[0]
    if isinstance(model, Hmm):
        arr = ancestral_sample_batch(model, num_sims, sim_T, rng)
        alphabet = model.alphabet
    elif isinstance(model, ProductHmm):
        arr = model_sample_batch(model, num_sims, sim_T, burn_in, rng, base)
        alphabet = model.alphabet
    elif callable(model):
        arr = np.asarray(model(num_sims, sim_T, rng))
        alphabet = None
    else:
        raise InvalidInputError("cannot simulate from this model")
    return arr, alphabet


def _sim_dataset(heldout, model, num_sims, sim_T, rng, burn_in, base):
    arr, alphabet = simulate(model, num_sims, sim_T, rng, burn_in, base)
    return SequenceDataset(alphabet or heldout.alphabet, list(arr))


def persistence_gap_from(heldout, simulated, pooled=True):
    return abs(_nanmean(persistence(simulated, pooled)) - _nanmean(persistence(heldout, pooled)))


def correlation_gap_from(heldout, simulated, pooled=True):
    return abs(mean_pair_correlation(simulated, pooled) - mean_pair_correlation(heldout, pooled))


def persistence_gap(heldout, model, num_sims=500, sim_T=90, rng=None, burn_in=100, base=None, pooled=True):
    """Absolute difference of mean persistence between simulated and held-out data."""
    rng = rng if rng is not None else np.random.default_rng()
    sim = _sim_dataset(heldout, model, num_sims, sim_T, rng, burn_in, base)
    return persistence_gap_from(heldout, sim, pooled)


def correlation_gap(heldout, model, num_sims=500, sim_T=90, rng=None, burn_in=100, base=None, pooled=True):
    """Absolute difference of the mean pairwise correlation between simulated and held-out data."""
    rng = rng if rng is not None else np.random.default_rng()
    sim = _sim_dataset(heldout, model, num_sims, sim_T, rng, burn_in, base)
    return correlation_gap_from(heldout, sim, pooled)


@dataclass(frozen=True)
class CvPlan:
    folds: tuple
    k: int

    def __len__(self):
        return len(self.folds)


def leave_k_out_folds(num_sequences, k):
    """Folds that hold out consecutive blocks ``[0, k), [k, 2k), ...``.

    Sequences past the last full block are always in training.
    """
    if k < 1:
        raise InvalidInputError("k must be at least 1")
    if k > num_sequences:
        raise InvalidInputError("k exceeds the number of sequences")
    folds = []
    for f in range(num_sequences // k):
        test = list(range(f * k, (f + 1) * k))
        train = [i for i in range(num_sequences) if not f * k <= i < (f + 1) * k]
        if not train:
            raise InvalidInputError("a fold would leave no training sequences")
        folds.append((tuple(train), tuple(test)))
    return CvPlan(tuple(folds), k)


@dataclass(frozen=True)
class MetricReport:
    scaled_log_likelihood: float
    imputation_accuracy: float
    persistence_gap: float
    correlation_gap: float
    log_z_estimate: object = None

    def csv_row(self, model_id, fold):
        if self.log_z_estimate is None:
            lz, se = 0.0, 0.0
        else:
            lz, se = self.log_z_estimate.log_z, self.log_z_estimate.std_err
        vals = [self.scaled_log_likelihood, self.imputation_accuracy, self.persistence_gap,
                self.correlation_gap, lz, se]
        return ",".join([str(model_id), str(fold)] + [repr(float(v)) for v in vals])


def evaluate(model, heldout, log_z=None, log_z_estimate=None, num_sims=500, sim_T=90, rng=None,
             burn_in=100, base=None, imputation_positions=None, pooled=True):
    """All four held-out metrics for one model; simulations are shared by both gap metrics."""
    rng = rng if rng is not None else np.random.default_rng()
    sll = scaled_log_likelihood(model, heldout, log_z)
    acc = imputation_accuracy(model, heldout, rng, imputation_positions)
    sim = _sim_dataset(heldout, model, num_sims, sim_T, rng, burn_in, base)
    pg = persistence_gap_from(heldout, sim, pooled)
    cg = correlation_gap_from(heldout, sim, pooled) if heldout.alphabet.num_dims >= 2 else math.nan
    return MetricReport(sll, acc, pg, cg, log_z_estimate)
