"""Command-line driver: ``pohmm <subcommand> ...``.

Every subcommand that writes an output file also writes
``<output>.manifest.json`` echoing its arguments, seed and package version.
"""

import argparse
import logging
import sys

import numpy as np

from . import __version__, kernels
from .ais import AnnealingSchedule, estimate_log_partition
from .errors import CapacityError, InvalidInputError, ParseError
from .experiment import combine_estimates, run_experiment, summarize
from .hmm import ancestral_sample_batch, base_rate_hmm, em_fit_restarts
from .io import (
    atomic_write,
    convert_rainfall,
    load_codebook,
    load_config,
    load_dataset,
    load_frames,
    load_model,
    parse_cd_k,
    save_codebook,
    save_dataset,
    save_model,
    write_manifest,
)
from .metrics import CSV_HEADER, evaluate
from .oracle import exact_log_likelihood, exact_log_partition
from .product import TrainConfig, model_sample_batch, random_product, train_cd
from .data import AlphabetSpec, SequenceDataset
from .quantize import GroupSpec, encode, fit_codebook

log = logging.getLogger("pohmmkit")


def _manifest(args, out):
    payload = {k: v for k, v in vars(args).items() if k != "func"}
    payload["version"] = __version__
    payload["kernel_backend"] = kernels.BACKEND
    write_manifest(f"{out}.manifest.json", payload)


def cmd_train_hmm(args):
    data = load_dataset(args.data)
    rng = np.random.default_rng(args.seed)
    model, trace = em_fit_restarts(data, args.states, rng, args.restarts, args.max_iters, args.tol)
    save_model(args.out, model)
    _manifest(args, args.out)
    print(f"train log likelihood {trace[-1]!r} after {len(trace)} iterations")


def cmd_train_pohmm(args):
    data = load_dataset(args.data)
    rng = np.random.default_rng(args.seed)
    init = random_product(data, args.experts, args.states, rng, args.init_spread, args.smoothing)
    cfg = TrainConfig(args.learning_rate, args.momentum, args.epochs, parse_cd_k(args.cd_k), args.seed)
    model, trace = train_cd(init, data, cfg)
    save_model(args.out, model)
    if args.trace:
        atomic_write(args.trace, "epoch,recon_error,mean_unnorm_ll\n" + "".join(
            f"{t['epoch']},{t['recon_error']!r},{t['mean_unnorm_ll']!r}\n" for t in trace))
    _manifest(args, args.out)


def _logz_rows(model, base_data, lengths, args):
    schedule = AnnealingSchedule.uniform(args.steps)
    rows = {}
    for T in lengths:
        ss = np.random.SeedSequence([args.seed, T])
        rows[T] = estimate_log_partition(model, T, args.runs, schedule, base_data, args.smoothing, ss)
    return rows


def cmd_logz(args):
    model = load_model(args.model)
    base = load_dataset(args.data)
    rows = _logz_rows(model, base, args.length, args)
    text = "length,log_z,log_z_stderr,runs,steps\n" + "".join(
        f"{T},{e.log_z!r},{e.std_err!r},{e.num_runs},{e.schedule_len}\n" for T, e in rows.items())
    _emit(text, args.out)
    if args.out:
        _manifest(args, args.out)


def _emit(text, out):
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)


def cmd_evaluate(args):
    model = load_model(args.model)
    heldout = load_dataset(args.data)
    base_data = load_dataset(args.base_data) if args.base_data else heldout
    if len(model) == 1:
        log_z, est = None, None
    else:
        ests = _logz_rows(model, base_data, sorted(set(heldout.lengths)), args)
        log_z = {T: e.log_z for T, e in ests.items()}
        est = combine_estimates(ests, heldout)
    rng = np.random.default_rng(args.seed)
    report = evaluate(model, heldout, log_z, est, args.num_sims, args.sim_T, rng, args.burn_in,
                      base_rate_hmm(base_data, args.smoothing), args.imputation_positions or None)
    _emit(CSV_HEADER + "\n" + report.csv_row(args.model_id, args.fold) + "\n", args.out)
    if args.out:
        _manifest(args, args.out)


def cmd_simulate(args):
    model = load_model(args.model)
    rng = np.random.default_rng(args.seed)
    base = base_rate_hmm(load_dataset(args.base_data), args.smoothing) if args.base_data else None
    if len(model) == 1:
        arr = ancestral_sample_batch(model.experts[0], args.n, args.length, rng)
    else:
        arr = model_sample_batch(model, args.n, args.length, args.burn_in, rng, base)
    save_dataset(args.out, SequenceDataset(model.alphabet, list(arr)))
    _manifest(args, args.out)


def cmd_quantize(args):
    frames = load_frames(args.frames)
    spec = GroupSpec.parse(args.groups)
    if args.codebook_in:
        cb = load_codebook(args.codebook_in)
    else:
        cb = fit_codebook(frames, spec, args.k, args.max_iters, args.restarts, args.seed, args.standardize)
    symbols = encode(frames, spec, cb)
    L = args.sequence_length or symbols.shape[0]
    seqs = [symbols[i:i + L] for i in range(0, symbols.shape[0] - L + 1, L)]
    save_dataset(args.out, SequenceDataset(AlphabetSpec(tuple(cb.sizes)), seqs))
    if args.codebook_out:
        save_codebook(args.codebook_out, cb)
    _manifest(args, args.out)


def cmd_cross_validate(args):
    overrides = {"data": args.data, "output": args.output, "seed": args.seed}
    cfg = load_config(args.config, **overrides)
    rows, aborted = run_experiment(cfg)
    for family, means in summarize(rows).items():
        print(f"{family}: scaled_ll={means[0]:.5f} imputation_acc={means[1]:.4f} "
              f"persistence_gap={means[2]:.4f} correlation_gap={means[3]:.4f}")
    for rep, fold, reason in aborted:
        print(f"rep {rep} fold {fold} aborted: {reason}", file=sys.stderr)
    return 1 if aborted else 0


def cmd_convert_rainfall(args):
    data = convert_rainfall(args.seasons, args.days_by_station)
    save_dataset(args.out, data)
    _manifest(args, args.out)


def cmd_oracle(args):
    model = load_model(args.model)
    lines = [f"log_z,{T},{exact_log_partition(model, T, args.limit)!r}" for T in args.length]
    if args.data:
        for i, s in enumerate(load_dataset(args.data)):
            lines.append(f"log_likelihood,{i},{exact_log_likelihood(model, s, args.limit)!r}")
    _emit("kind,key,value\n" + "\n".join(lines) + "\n", args.out)
    if args.out:
        _manifest(args, args.out)


def _common(p):
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    ap = argparse.ArgumentParser(prog="pohmm", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({kernels.BACKEND} kernels)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-hmm", help="fit an HMM by EM")
    p.add_argument("--data", required=True)
    p.add_argument("--states", type=int, required=True)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_train_hmm)

    p = sub.add_parser("train-pohmm", help="train a product of HMMs by contrastive divergence")
    p.add_argument("--data", required=True)
    p.add_argument("--experts", type=int, required=True)
    p.add_argument("--states", type=int, required=True)
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--cd-k", default="1", help="K, or a schedule like 0:1,200:5")
    p.add_argument("--init-spread", type=float, default=0.5)
    p.add_argument("--smoothing", type=float, default=1.0)
    p.add_argument("--trace", help="optional per-epoch diagnostics CSV")
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_train_pohmm)

    p = sub.add_parser("logz", help="estimate log partition functions by AIS")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="data for the base-rate starting HMM")
    p.add_argument("--length", type=int, nargs="+", required=True)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--smoothing", type=float, default=1.0)
    p.add_argument("--out")
    _common(p)
    p.set_defaults(func=cmd_logz)

    p = sub.add_parser("evaluate", help="held-out metrics for a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="held-out dataset")
    p.add_argument("--base-data", help="training data for base rates (defaults to --data)")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--smoothing", type=float, default=1.0)
    p.add_argument("--num-sims", type=int, default=500)
    p.add_argument("--sim-T", type=int, default=90)
    p.add_argument("--burn-in", type=int, default=100)
    p.add_argument("--imputation-positions", type=int, default=0)
    p.add_argument("--model-id", default="model")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--out")
    _common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="sample sequences from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--length", type=int, default=90)
    p.add_argument("--burn-in", type=int, default=100)
    p.add_argument("--base-data", help="initialize Gibbs chains from these base rates")
    p.add_argument("--smoothing", type=float, default=1.0)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("quantize", help="k-means quantize continuous frames into a dataset")
    p.add_argument("--frames", required=True, help=".npy or whitespace text, one frame per row")
    p.add_argument("--groups", required=True, help='e.g. "legs:0,1,2;arms:3,4"')
    p.add_argument("--k", type=int, default=25)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--sequence-length", type=int, default=0, help="split frames into sequences of this length")
    p.add_argument("--codebook-in", help="encode with an existing codebook instead of fitting")
    p.add_argument("--codebook-out")
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("cross-validate", help="run a leave-k-out experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--data")
    p.add_argument("--output")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_cross_validate)

    p = sub.add_parser("convert-rainfall", help="build a binary dataset from per-season 0/1 matrices")
    p.add_argument("seasons", nargs="+")
    p.add_argument("--days-by-station", action="store_true", help="rows are days instead of stations")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert_rainfall)

    p = sub.add_parser("oracle", help="exact log Z and log likelihoods by enumeration (small models)")
    p.add_argument("--model", required=True)
    p.add_argument("--length", type=int, nargs="+", required=True)
    p.add_argument("--data")
    p.add_argument("--limit", type=int, help="enumeration limit (default from POHMMKIT_ENUM_LIMIT or 2^20)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = args.func(args)
    except (InvalidInputError, ParseError, CapacityError, OSError) as e:
        print(f"pohmm {args.command}: error: {e}", file=sys.stderr)
        return 2
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
