"""Command-line entry point: ``bcgram <subcommand> ...``.

Exit status is 0 on success, 1 on a domain or I/O error and 2 on a usage
error. Every subcommand is a pure function of its inputs, flags and seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import kmeans
from .dimred import AUTO, pc_space_distances, pca_from_gram
from .dropout import EnsembleConfig, infer_dropouts
from .errors import BcgramError, DomainError
from .evaluation import (
    ExperimentConfig,
    VerificationConfig,
    ari,
    jsonable,
    run_estimator_verification,
    run_missingness_experiment,
    simulate_experiment_data,
)
from .gram import (
    bc_gram_heterogeneous,
    bc_gram_homogeneous,
    count_negative,
    gram_to_sq_dist,
    naive_gram,
    variance_report,
)
from .matrix_io import (
    format_float,
    read_array,
    read_mask,
    read_matrix,
    write_array,
    write_mask,
    write_matrix,
)
from .missingness import MechanismSpec, ProbabilityModel, apply_missingness, estimate_probabilities

log = logging.getLogger("bcgram")

DEFAULT_SEED = 0
SCHEMA_PREFIX = "bcgram"

COMMANDS = (
    "simulate-missing",
    "estimate-probs",
    "gram",
    "variance-report",
    "pca",
    "pc-dist",
    "dropouts",
    "verify",
    "experiment",
    "simulate",
    "kmeans",
)


def build_hash() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


def _write_json(obj: dict, path, schema: str) -> None:
    payload = {"schema": f"{SCHEMA_PREFIX}.{schema}/1", **jsonable(obj)}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise OSError(exc.errno, f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise DomainError(f"{path}: invalid JSON ({exc})") from exc


def _read_probs(path) -> ProbabilityModel:
    return ProbabilityModel.from_matrix(read_array(path))


# -- subcommands -------------------------------------------------------------


def cmd_simulate_missing(args) -> None:
    complete = read_array(args.input, header=args.header)
    spec = MechanismSpec.parse(args.mechanism, seed=args.seed)
    observed, probs = apply_missingness(complete, spec)
    write_matrix(observed, args.out, missing_token=args.missing_token)
    if args.probs_out:
        write_array(probs.matrix(), args.probs_out)
    if args.emit_mask:
        write_mask(observed, args.emit_mask)
    log.info("missing fraction %.4f", observed.missing_fraction)


def cmd_estimate_probs(args) -> None:
    if args.mask:
        mask = read_mask(args.mask)
    else:
        mask = read_matrix(args.input, args.missing_token, header=args.header).mask
    write_array(estimate_probabilities(mask).matrix(), args.out)


def _estimate(m, estimator: str, probs_path):
    name, _, arg = estimator.partition(":")
    if name == "naive":
        return naive_gram(m)
    if name == "bc-homogeneous":
        try:
            p = float(arg)
        except ValueError:
            raise DomainError(f"bc-homogeneous needs a probability, e.g. bc-homogeneous:0.6 (got {estimator!r})") from None
        if not 0 < p <= 1:
            raise DomainError(f"--estimator bc-homogeneous:{arg}: probability must satisfy 0 < p <= 1")
        return bc_gram_homogeneous(m, p)
    if name == "bc-heterogeneous":
        probs = _read_probs(probs_path) if probs_path else estimate_probabilities(m.mask)
        return bc_gram_heterogeneous(m, probs)
    raise DomainError(f"unknown estimator {estimator!r}; use naive, bc-homogeneous:p or bc-heterogeneous")


def cmd_gram(args) -> None:
    m = read_matrix(args.input, args.missing_token, header=args.header)
    G = _estimate(m, args.estimator, args.probs)
    write_array(G.entries, args.out)
    if args.emit_mask:
        write_mask(m, args.emit_mask)
    if args.sq_dist_out:
        e2 = gram_to_sq_dist(G)
        write_array(e2, args.sq_dist_out)
        neg = count_negative(e2)
        if neg:
            log.warning(
                "%d negative squared distances; use 'pc-dist' for a nonnegative alternative", neg
            )


def cmd_variance_report(args) -> None:
    K = read_array(args.k)
    report = variance_report(K, _read_probs(args.probs))
    _write_json(report.to_dict(), args.out, "variance-report")


def _dims(text: str):
    if text == AUTO:
        return AUTO
    try:
        return int(text)
    except ValueError:
        raise DomainError(f"--dims must be an integer or 'auto', got {text!r}") from None


def cmd_pca(args) -> None:
    G = read_array(args.gram)
    emb = pca_from_gram(G, d=_dims(args.dims), center=not args.no_center)
    write_array(emb.coords, args.out)
    if args.eigenvalues:
        write_array(emb.eigenvalues, args.eigenvalues)
    if emb.dropped_negative:
        log.info("dropped %d negative eigenvalues", emb.dropped_negative)


def cmd_pc_dist(args) -> None:
    G = read_array(args.gram)
    write_array(pc_space_distances(G, center=not args.no_center), args.out)


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x)
    except ValueError:
        raise DomainError(f"expected comma-separated integers, got {text!r}") from None


def cmd_dropouts(args) -> None:
    data = read_array(args.input, header=args.header)
    if args.log2p1:
        if np.any(data < 0):
            raise DomainError("--log2p1 needs nonnegative input")
        data = np.log2(data + 1)
    config = EnsembleConfig(
        clusterers=tuple(c for c in args.clusterers.split(",") if c),
        ks=_int_list(args.ks),
        threshold=args.threshold,
        kmeans_restarts=args.restarts,
        seed=args.seed,
    )
    call = infer_dropouts(data, config)
    write_mask(call.mask, args.out)
    if args.votes:
        write_array(call.votes, args.votes, fmt=lambda v: str(int(v)))
    log.info("%d dropout calls among %d zeros", int(np.sum(call.mask == 0)), int(np.sum(data == 0)))


def _config(cls, path, seed):
    data = _read_json(path) if path else {}
    data.pop("schema", None)
    data.setdefault("seed", seed)
    return cls.from_dict(data)


def cmd_verify(args) -> None:
    config = _config(VerificationConfig, args.config, args.seed)
    report = run_estimator_verification(config, threads=args.threads)
    _write_json({"config": config, **report}, args.out, "verification")


def cmd_experiment(args) -> None:
    config = _config(ExperimentConfig, args.config, args.seed)
    report = run_missingness_experiment(config, threads=args.threads)
    lines = ["pipeline,subset_size,replicate,ari"]
    lines += [f"{p},{s},{r},{format_float(a)}" for p, s, r, a in report.rows]
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if args.summary:
        _write_json(
            {"config": config, "missing_fraction": report.missing_fraction, "summary": report.summary()},
            args.summary,
            "experiment-summary",
        )


def cmd_simulate(args) -> None:
    config = _config(ExperimentConfig, args.config, args.seed)
    ds = simulate_experiment_data(config)
    write_array(ds.complete, args.out)
    if args.labels:
        write_array(ds.truth, args.labels, fmt=lambda v: str(int(v)))


def cmd_kmeans(args) -> None:
    coords = read_array(args.coords)
    labels = kmeans(coords, args.k, restarts=args.restarts, seed=args.seed)
    write_array(labels, args.out, fmt=lambda v: str(int(v)))
    if args.truth:
        truth = read_array(args.truth).ravel()
        print(format_float(ari(truth, labels)))


# -- parser ------------------------------------------------------------------


def _threads(text: str):
    if text == "auto":
        return "auto"
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("must be a positive integer or 'auto'") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer or 'auto'")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"RNG seed (default {DEFAULT_SEED})")
    common.add_argument("--threads", type=_threads, default="auto", help="worker threads or 'auto'")
    common.add_argument("--missing-token", default="NA", help="cell text marking a missing value")
    common.add_argument("--header", action="store_true", help="input CSV files have a header row")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="bcgram", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"bcgram {__version__} ({build_hash()})")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    p = add("simulate-missing", cmd_simulate_missing, "hide cells of a complete matrix")
    p.add_argument("--input", required=True)
    p.add_argument("--mechanism", required=True, help="mcar:p or rank1:b_low,b_high,q_low,q_high")
    p.add_argument("--out", required=True)
    p.add_argument("--probs-out", help="write the true N x D probability matrix here")
    p.add_argument("--emit-mask", help="write the 0/1 mask here")

    p = add("estimate-probs", cmd_estimate_probs, "estimate observation probabilities from a mask")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--mask")
    src.add_argument("--input", help="data CSV whose missing cells define the mask")
    p.add_argument("--out", required=True)

    p = add("gram", cmd_gram, "naive or bias-corrected Gram matrix")
    p.add_argument("--input", required=True)
    p.add_argument("--estimator", required=True, help="naive | bc-homogeneous:p | bc-heterogeneous")
    p.add_argument("--probs", help="probability matrix CSV (bc-heterogeneous; estimated if omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--sq-dist-out", help="also write squared distances derived from the Gram matrix")
    p.add_argument("--emit-mask")

    p = add("variance-report", cmd_variance_report, "exact variances and bounds as JSON")
    p.add_argument("--k", required=True)
    p.add_argument("--probs", required=True)
    p.add_argument("--out", required=True)

    p = add("pca", cmd_pca, "principal coordinates from a Gram matrix")
    p.add_argument("--gram", required=True)
    p.add_argument("--dims", default="2", help="target dimension or 'auto' (scree test)")
    p.add_argument("--no-center", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--eigenvalues")

    p = add("pc-dist", cmd_pc_dist, "distances in the space of all positive principal components")
    p.add_argument("--gram", required=True)
    p.add_argument("--no-center", action="store_true")
    p.add_argument("--out", required=True)

    p = add("dropouts", cmd_dropouts, "ensemble inference of dropout positions")
    p.add_argument("--input", required=True)
    p.add_argument("--threshold", type=float, default=0.85)
    p.add_argument("--ks", default="4,6,8,10,12")
    p.add_argument("--clusterers", default="kmeans,spectral")
    p.add_argument("--restarts", type=int, default=10, help="k-means restarts per clustering")
    p.add_argument("--log2p1", action="store_true", help="apply log2(x + 1) first")
    p.add_argument("--out", required=True)
    p.add_argument("--votes")

    p = add("verify", cmd_verify, "Monte Carlo verification of the estimator")
    p.add_argument("--config")
    p.add_argument("--out", required=True)

    p = add("experiment", cmd_experiment, "simulated dimension-reduction experiment")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--summary", help="JSON with per-cell means and standard deviations")

    p = add("simulate", cmd_simulate, "write the complete data an experiment config simulates")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--labels")

    p = add("kmeans", cmd_kmeans, "k-means labels for a coordinate matrix")
    p.add_argument("--coords", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--restarts", type=int, default=30)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="ground-truth labels; prints the ARI")
    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except (BcgramError, OSError) as exc:
        print(f"bcgram {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
