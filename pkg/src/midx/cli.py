"""Command line entry point: ``midx <subcommand> ...``.

Exit codes: 0 success, 1 internal error, 2 usage or config error.
``MIDX_NUM_THREADS`` sets the default worker count for ``sample`` and ``verify``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import samplers as smp
from .config import ConfigError, load_pipeline_config, load_train_config
from .dataset import DatasetError, load_dataset, load_interactions, popularity_vector, save_dataset, split_holdout
from .diagnostics import cumulative_curve, popularity_order, verify_bound_pop, verify_bound_uni
from .quantizer import build_index, load_index, save_index
from .synthetic import clustered_embeddings
from .trainer import TrainingDiverged, train

log = logging.getLogger("midx")

EXACT_WARN_ITEMS = 10**6


class UsageError(Exception):
    """Bad arguments or inputs; maps to exit code 2."""


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("MIDX_NUM_THREADS", "1")))
    except ValueError:
        return 1


def _load_matrix(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"file not found: {path}")
    if path.suffix == ".npy":
        return np.load(path)
    text = path.read_text()
    delim = "," if "," in text.splitlines()[0] else None
    return np.atleast_2d(np.loadtxt(path, delimiter=delim, ndmin=2))


def _require(path, what):
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


# -- subcommands -----------------------------------------------------------

def cmd_ingest(args):
    _require(args.input, "--input")
    ds = load_interactions(args.input, args.min_interactions, args.threshold)
    if args.split_ratio:
        ds = split_holdout(ds, args.split_ratio, args.seed)
    save_dataset(ds, args.out)
    print(json.dumps({"users": ds.num_users, "items": ds.num_items, "interactions": ds.num_interactions}))


def cmd_build_index(args):
    emb = _load_matrix(args.embeddings)
    index = build_index(emb, args.codebook_size, seed=args.seed, iters=args.iters)
    save_index(index, args.out)
    print(json.dumps({"items": index.num_items, "dim": index.dim, "codebook_size": index.codebook_size,
                      "max_residual_norm": index.max_residual_norm,
                      "empty_cells": int(np.sum(index.bucket_sizes == 0))}))


def _popularity_for(args, num_items):
    if args.pop_weights:
        w = _load_matrix(args.pop_weights).ravel()
    elif args.dataset:
        w = popularity_vector(load_dataset(_require(args.dataset, "--dataset")), args.pop_function).weights
    else:
        raise UsageError("pop and popularity samplers need --pop-weights or --dataset")
    if len(w) != num_items:
        raise UsageError(f"popularity has {len(w)} entries, index has {num_items} items")
    return w


def cmd_sample(args):
    index = load_index(_require(args.index, "--index"))
    queries = _load_matrix(args.queries)
    if queries.shape[1] != index.dim:
        raise UsageError(f"queries have dimension {queries.shape[1]}, index has {index.dim}")
    pop = _popularity_for(args, index.num_items) if args.kind in ("pop", "popularity") else None
    if args.kind == "exact" and index.num_items >= EXACT_WARN_ITEMS:
        log.warning("exact sampler costs O(MD) per query with M=%d", index.num_items)
    shared = None
    if args.kind == "uni":
        shared = smp.uniform_cell_tables(index)
    elif args.kind == "pop":
        shared = smp.popularity_cell_tables(index, pop)
    elif args.kind in smp.STATIC_KINDS:
        shared = smp.static_sampler(args.kind, index.num_items, pop)
    seeds = np.random.SeedSequence(args.seed).spawn(len(queries))

    def one(qid):
        ctx = smp.prepare(args.kind, queries[qid], index, shared, pop, index.num_items, shared)
        return smp.sample_batch(ctx, args.count, np.random.default_rng(seeds[qid]))

    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        results = list(pool.map(one, range(len(queries))))
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["query_id", "item", "log_q"])
        for qid, draws in enumerate(results):
            for item, lq in zip(draws.items.tolist(), draws.log_q.tolist()):
                w.writerow([qid, item, repr(lq)])
    finally:
        if out is not sys.stdout:
            out.close()


def verify_trial(kind, m, dim, k, seed, z_scale=1.0):
    """One random instance: clustered embeddings, a Gaussian query, exact KL against the bound."""
    rng = np.random.default_rng(seed)
    emb = clustered_embeddings(m, dim, clusters=8, seed=int(rng.integers(2**31)))
    z = rng.standard_normal(dim) * z_scale / np.sqrt(dim)
    index = build_index(emb, k, seed=seed)
    if kind == "uni":
        rep = verify_bound_uni(z, index, emb)
        return rep, index, emb, z, None
    counts = rng.zipf(1.8, size=m)
    pop = np.log1p(counts)
    rep = verify_bound_pop(z, index, emb, pop)
    return rep, index, emb, z, counts


def cmd_verify(args):
    jobs = [(kind, k, args.seed + t) for kind in args.kinds for k in args.codebook_sizes for t in range(args.trials)]

    def run(job):
        kind, k, seed = job
        rep, index, emb, z, counts = verify_trial(kind, args.items, args.dim, k, seed, args.z_scale)
        return job, rep, index, emb, z, counts

    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        results = list(pool.map(run, jobs))
    out = open(args.out, "w") if args.out else sys.stdout
    failures = 0
    try:
        for (kind, k, seed), rep, *_ in results:
            failures += not rep.bound_satisfied
            out.write(json.dumps({"kind": kind, "K": k, "seed": seed, **rep.as_dict()}) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    if args.curves_dir:
        _write_curves(args, results)
    if failures:
        log.error("%d trial(s) violated their bound", failures)
        return 1
    return 0


def _write_curves(args, results):
    cdir = Path(args.curves_dir)
    cdir.mkdir(parents=True, exist_ok=True)
    for (kind, k, seed), rep, index, emb, z, counts in results:
        if seed != args.seed:
            continue
        if counts is None:
            counts = np.random.default_rng(seed).zipf(1.8, size=args.items)
        order = popularity_order(counts)
        dists = {
            "softmax": smp.softmax_oracle(z, emb),
            "midx": smp.prepare_exact(z, index).distribution(),
            "midx_uni": smp.uni_distribution(z, index),
            "midx_pop": smp.pop_distribution(z, index, np.log1p(counts)),
            "uniform": np.full(args.items, 1.0 / args.items),
            "popularity": np.log1p(counts) / np.log1p(counts).sum(),
        }
        curves = {name: cumulative_curve(d, order) for name, d in dists.items()}
        with open(cdir / f"curve_{kind}_K{k}_seed{seed}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", *curves])
            for r in range(args.items):
                w.writerow([r + 1, *(repr(curves[n][r][1]) for n in curves)])


def _write_trace(report, path):
    rows = report.trace_rows()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", f"ndcg@{report.k}", f"recall@{report.k}", "sample_time_ms", "train_time_ms"])
        for r in rows:
            w.writerow([r["epoch"], r["loss"], r["ndcg"], r["recall"], r["sample_time_ms"], r["train_time_ms"]])


def _train_and_write(ds, cfg, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.sampler_kind == "exact" and ds.num_items >= EXACT_WARN_ITEMS:
        log.warning("sampler_kind=exact costs O(MD) per user and step with M=%d", ds.num_items)
    try:
        params, report = train(ds, cfg)
    except TrainingDiverged as exc:
        from .trainer import EvalReport
        _write_trace(EvalReport(cfg.eval_k, float("nan"), float("nan"), exc.trace), out_dir / "epochs.csv")
        raise
    _write_trace(report, out_dir / "epochs.csv")
    params.save(out_dir / "model.npz")
    summary = {"ndcg": report.ndcg, "recall": report.recall, "k": report.k, "config": asdict(cfg)}
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    return report


def cmd_train(args):
    cfg = load_train_config(args.config)
    ds = load_dataset(_require(args.dataset, "--dataset"))
    report = _train_and_write(ds, cfg, args.out_dir)
    print(json.dumps({"ndcg": report.ndcg, "recall": report.recall, "k": report.k}))


def cmd_bench(args):
    reports = bench_mod.bench_scaling(args.kinds, args.items, args.codebook_size, args.dim, args.count,
                                      args.trials, args.seed, args.queries)
    if args.out:
        bench_mod.write_csv(reports, args.out)
    else:
        w = csv.DictWriter(sys.stdout, fieldnames=list(asdict(reports[0])))
        w.writeheader()
        w.writerows(asdict(r) for r in reports)
    if args.alias_sizes:
        lat = bench_mod.bench_alias(args.alias_sizes, seed=args.seed)
        print(json.dumps({"alias_draw_ns": {str(n): v for n, v in lat.items()}}), file=sys.stderr)


def run_pipeline(config_path) -> int:
    """ingest -> train -> evaluate from one config file; returns the exit status."""
    stage = "config"
    try:
        pipe, cfg = load_pipeline_config(config_path)
        if not pipe.dataset:
            raise ConfigError("missing required key: dataset")
        if not Path(pipe.dataset).is_file():
            raise ConfigError(f"dataset: file not found: {pipe.dataset}")
        stage = "ingest"
        ds = load_interactions(pipe.dataset, pipe.min_interactions, pipe.threshold)
        ds = split_holdout(ds, pipe.split_ratio, pipe.split_seed)
        out = Path(pipe.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_dataset(ds, out / "dataset.bin")
        stage = "train"
        report = _train_and_write(ds, cfg, out)
        print(json.dumps({"stage": "done", "ndcg": report.ndcg, "recall": report.recall, "k": report.k}))
        return 0
    except (ConfigError, UsageError, DatasetError) as exc:
        print(f"[{stage}] error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # stage-tagged internal failure
        print(f"[{stage}] internal error: {exc}", file=sys.stderr)
        return 1


def cmd_run(args):
    return run_pipeline(args.config)


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="midx", description="Inverted multi-index softmax samplers and sampled-softmax VAE training.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="parse an interaction file into a binary dataset cache")
    s.add_argument("--input", required=True, help="text file of 'user item [value]' lines")
    s.add_argument("--out", required=True, help="output dataset cache")
    s.add_argument("--min-interactions", type=int, default=10)
    s.add_argument("--threshold", type=float, default=None, help="drop records whose value is below this")
    s.add_argument("--split-ratio", type=float, default=0.8, help="train fraction per user; 0 disables the split")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("build-index", help="quantize item embeddings into a multi-index")
    s.add_argument("--embeddings", required=True, help=".npy or text matrix, one item per row")
    s.add_argument("--codebook-size", type=int, default=16)
    s.add_argument("--iters", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_index)

    s = sub.add_parser("sample", help="draw items for query vectors; CSV query_id,item,log_q")
    s.add_argument("--index", required=True)
    s.add_argument("--queries", required=True, help=".npy or text matrix, one query per row")
    s.add_argument("--kind", choices=smp.MIDX_KINDS + smp.STATIC_KINDS, default="uni")
    s.add_argument("--count", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pop-weights", help="per-item popularity weights (.npy or text)")
    s.add_argument("--dataset", help="dataset cache to derive popularity from")
    s.add_argument("--pop-function", choices=("raw", "log1p", "pow075"), default="log1p")
    s.add_argument("--threads", type=int, default=_default_threads())
    s.add_argument("--out", help="output CSV (default stdout)")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("verify", help="exact KL of MIDX_Uni/Pop against their bounds on random instances")
    s.add_argument("--kinds", nargs="+", choices=("uni", "pop"), default=["uni", "pop"])
    s.add_argument("--items", type=int, default=100)
    s.add_argument("--dim", type=int, default=8)
    s.add_argument("--codebook-sizes", type=int, nargs="+", default=[4, 16, 64])
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--z-scale", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, default=_default_threads())
    s.add_argument("--out", help="JSON-lines report (default stdout)")
    s.add_argument("--curves-dir", help="write cumulative-mass CSVs for the first trial of each setting")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("train", help="train the VAE from a key = value config")
    s.add_argument("--config", required=True)
    s.add_argument("--dataset", required=True, help="dataset cache written by 'ingest'")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("bench", help="sampler wall time against the item count")
    s.add_argument("--kinds", nargs="+", choices=smp.MIDX_KINDS + smp.STATIC_KINDS,
                   default=["uni", "pop", "exact", "uniform", "popularity"])
    s.add_argument("--items", type=int, nargs="+", default=[10**4, 10**5, 10**6])
    s.add_argument("--codebook-size", type=int, default=16)
    s.add_argument("--dim", type=int, default=32)
    s.add_argument("--count", type=int, default=200)
    s.add_argument("--trials", type=int, default=5)
    s.add_argument("--queries", type=int, default=None, help="timing rounds (default: --trials)")
    s.add_argument("--alias-sizes", type=int, nargs="*", default=[])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("run", help="ingest, train and evaluate from one config file")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        rc = args.func(args)
    except (UsageError, ValueError) as exc:  # bad inputs: config, dataset and shape errors
        print(f"[{args.command}] error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"[{args.command}] internal error: {exc}", file=sys.stderr)
        return 1
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
