"""Cross-validated train / estimate log Z / evaluate pipeline."""

import logging
import os

import numpy as np

from . import __version__
from .ais import AnnealingSchedule, estimate_log_partition
from .errors import InvalidInputError
from .hmm import base_rate_hmm, em_fit_restarts
from .io import format_config, load_dataset, parse_cd_k, save_model, atomic_write, write_manifest
from .metrics import CSV_HEADER, evaluate, leave_k_out_folds
from .product import TrainConfig, random_product, train_cd

log = logging.getLogger(__name__)


def fold_seed(seed, rep, fold, stream):
    """Integer seed for one (repetition, fold, stream) cell; independent of execution order."""
    return int(np.random.SeedSequence([seed, rep, fold, stream]).generate_state(1, np.uint64)[0] >> 1)


STREAM_INIT, STREAM_TRAIN, STREAM_AIS, STREAM_EVAL = range(4)


def model_id(cfg, rep):
    if cfg.model == "hmm":
        return f"hmm_S{cfg.states}_r{rep}"
    return f"pohmm_M{cfg.experts}_S{cfg.states}_r{rep}"


def train_model(cfg, train, rep, fold):
    if cfg.model == "hmm":
        rng = np.random.default_rng(fold_seed(cfg.seed, rep, fold, STREAM_INIT))
        model, _ = em_fit_restarts(train, cfg.states, rng, cfg.em_restarts, cfg.em_max_iters, cfg.em_tol)
        return model
    rng = np.random.default_rng(fold_seed(cfg.seed, rep, fold, STREAM_INIT))
    init = random_product(train, cfg.experts, cfg.states, rng, cfg.init_spread, cfg.smoothing)
    tcfg = TrainConfig(cfg.learning_rate, cfg.momentum, cfg.epochs, parse_cd_k(cfg.cd_k),
                       fold_seed(cfg.seed, rep, fold, STREAM_TRAIN))
    model, _ = train_cd(init, train, tcfg)
    return model


def log_partitions(cfg, model, train, heldout, rep, fold):
    """``{T: log Z}`` for every held-out length, plus the combined estimate for reporting."""
    if cfg.model == "hmm":
        return {T: 0.0 for T in set(heldout.lengths)}, None
    schedule = AnnealingSchedule.uniform(cfg.ais_steps)
    out, ests = {}, {}
    for T in sorted(set(heldout.lengths)):
        ss = np.random.SeedSequence([cfg.seed, rep, fold, STREAM_AIS, T])
        est = estimate_log_partition(model, T, cfg.ais_runs, schedule, train, cfg.smoothing, ss)
        out[T] = est.log_z
        ests[T] = est
    return out, combine_estimates(ests, heldout)


class CombinedEstimate:
    """Held-out-count weighted log Z over several lengths (identical to the single estimate
    when all held-out sequences share one length)."""

    def __init__(self, log_z, std_err):
        self.log_z = log_z
        self.std_err = std_err


def combine_estimates(ests, heldout):
    if len(ests) == 1:
        return next(iter(ests.values()))
    counts = {T: heldout.lengths.count(T) for T in ests}
    n = sum(counts.values())
    lz = sum(counts[T] * e.log_z for T, e in ests.items()) / n
    se = float(np.sqrt(sum((counts[T] * e.std_err) ** 2 for T, e in ests.items()))) / n
    return CombinedEstimate(lz, se)


def run_fold(cfg, data, rep, fold, train_idx, test_idx, model_dir):
    train, heldout = data.subset(train_idx), data.subset(test_idx)
    model = train_model(cfg, train, rep, fold)
    mid = model_id(cfg, rep)
    save_model(os.path.join(model_dir, f"{mid}_fold{fold}.model"), model)
    log_z, est = log_partitions(cfg, model, train, heldout, rep, fold)
    rng = np.random.default_rng(fold_seed(cfg.seed, rep, fold, STREAM_EVAL))
    report = evaluate(model, heldout, log_z, est, cfg.num_sims, cfg.sim_T, rng, cfg.burn_in,
                      base_rate_hmm(train, cfg.smoothing),
                      cfg.imputation_positions or None)
    return mid, report


def run_experiment(cfg, data=None):
    """Run every repetition and fold; write ``metrics.csv``, models and a manifest.

    Returns ``(rows, aborted)`` where ``rows`` are ``(model_id, fold, MetricReport)``
    and ``aborted`` lists ``(rep, fold, reason)`` for folds that failed.
    """
    cfg.validate()
    if data is None:
        if not cfg.data:
            raise InvalidInputError("config has no data path")
        data = load_dataset(cfg.data)
    os.makedirs(cfg.output, exist_ok=True)
    model_dir = os.path.join(cfg.output, "models")
    plan = leave_k_out_folds(len(data), cfg.cv_k)
    rows, aborted = [], []
    for rep in range(cfg.repetitions):
        for fold, (train_idx, test_idx) in enumerate(plan.folds):
            try:
                mid, report = run_fold(cfg, data, rep, fold, train_idx, test_idx, model_dir)
            except Exception as e:  # a failing fold must not stop the others
                log.error("rep %d fold %d aborted: %s", rep, fold, e)
                aborted.append((rep, fold, f"{type(e).__name__}: {e}"))
                continue
            rows.append((mid, fold, report))
    csv = CSV_HEADER + "\n" + "".join(r.csv_row(mid, f) + "\n" for mid, f, r in rows)
    atomic_write(os.path.join(cfg.output, "metrics.csv"), csv)
    atomic_write(os.path.join(cfg.output, "config.txt"), format_config(cfg))
    write_manifest(os.path.join(cfg.output, "manifest.json"), {
        "command": "cross-validate",
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "folds": len(plan),
        "aborted": [list(a) for a in aborted],
    })
    return rows, aborted


def summarize(rows):
    """Mean of fold means per repetition, then mean over repetitions, for each model family."""
    by_model = {}
    for mid, _, r in rows:
        family = mid.rsplit("_r", 1)[0]
        by_model.setdefault(family, {}).setdefault(mid, []).append(r)
    out = {}
    for family, reps in by_model.items():
        rep_means = []
        for reports in reps.values():
            rep_means.append([np.mean([getattr(r, k) for r in reports])
                              for k in ("scaled_log_likelihood", "imputation_accuracy",
                                        "persistence_gap", "correlation_gap")])
        out[family] = np.mean(rep_means, axis=0)
    return out
