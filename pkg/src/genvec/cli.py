"""Command-line front end: ``genvec <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import OrderedDict
from contextlib import nullcontext
from dataclasses import asdict

import numpy as np

from . import __version__
from .augment import interpolate_queries, read_pairs
from .capacity import CapacityBenchConfig, capacity_bench
from .coral import coral_apply, coral_fit
from .embeddings import EmbeddingMatrix, load_embeddings, save_embeddings
from .errors import GenvecError
from .flow import Architecture, TrainConfig, load_checkpoint, save_checkpoint, train
from .metrics import mean_ndcg, read_qrels, read_run, write_run
from .numeric import l2_normalize, pca_fit, pca_project
from .retrieval import build_store, knn, multi_sample_retrieve
from .sampler import SampleConfig, euler_generate, local_sample, regress
from .vmf import vmf_classify, vmf_fit, vmf_log_posterior

log = logging.getLogger("genvec")

EXIT_CODES = """exit codes:
  0  success
  1  unexpected error
  2  invalid command-line usage
  3  dimension / shape mismatch
  4  invalid parameter value
  5  degenerate input (zero vector, empty class mean)
  6  malformed input file (embedding, checkpoint, TSV)
  7  training diverged (non-finite loss)
  8  sampling diverged (non-finite state)
  9  input file not found

environment:
  STHLM_THREADS  cap on BLAS threads (default: all cores)
"""


# ---------------------------------------------------------------------------
# helpers


def _thread_limit():
    value = os.environ.get("STHLM_THREADS")
    if not value:
        return nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    return threadpool_limits(limits=max(1, int(value)))


def _emit_table(args, header, rows, extra=None):
    if args.json:
        payload = {"columns": list(header), "rows": [list(r) for r in rows]}
        if extra:
            payload.update(extra)
        print(json.dumps(payload, indent=1))
        return
    print("\t".join(header))
    for r in rows:
        print("\t".join(f"{v:.6f}" if isinstance(v, float) else str(v) for v in r))


def _fmt(x: float) -> str:
    return f"{x:.8g}"


# ---------------------------------------------------------------------------
# commands


def cmd_train(args):
    targets = load_embeddings(args.targets)
    conditions = load_embeddings(args.conditions) if args.conditions else None
    pairs = read_pairs(args.pairs) if args.pairs else None
    C = None if conditions is None else conditions.data.astype(np.float64)
    if args.interpolate_per_target and C is not None:
        C, pairs = _augment_pairs(C, pairs, len(targets), args.interpolate_per_target, args.seed)
    arch = Architecture(
        input_dim=targets.dim,
        hidden_dim=args.hidden,
        time_dim=args.time_dim,
        cond_dim=0 if C is None else C.shape[1],
        layers=args.layers,
        rank=args.rank,
    )
    cfg = TrainConfig(
        lr=args.lr,
        weight_decay=args.wd,
        warmup_steps=args.warmup,
        batch_size=args.batch_size,
        epochs=args.epochs,
        cond_dropout=args.dropout,
        objective=args.objective,
        seed=args.seed,
        total_steps=args.steps,
    )
    model, history = train(targets, C, pairs, cfg, arch)
    save_checkpoint(model, args.out)
    if args.loss_tsv:
        with open(args.loss_tsv, "w", encoding="utf-8") as fh:
            fh.write("epoch\tloss\n")
            for i, value in enumerate(history, 1):
                fh.write(f"{i}\t{_fmt(value)}\n")
    if args.figure:
        from .plotting import plot_loss

        plot_loss(history, args.figure)
    rows = [(i, v) for i, v in enumerate(history, 1)]
    _emit_table(args, ("epoch", "loss"), rows, {"parameters": model.n_params()})
    return 0


def _augment_pairs(C, pairs, n_targets, per_target, seed):
    """Add interpolated queries between random pairs of queries that share a target."""
    if pairs is None:
        pairs = np.stack([np.arange(len(C)), np.arange(len(C))], axis=1)
    new_rows, new_pairs = [], []
    for target in range(n_targets):
        cond_rows = pairs[pairs[:, 1] == target, 0]
        if len(np.unique(cond_rows)) < 2:
            continue
        extra = interpolate_queries(C[cond_rows], per_target, seed=seed * 1_000_003 + target)
        for row in extra:
            new_pairs.append((len(C) + len(new_rows), target))
            new_rows.append(row)
    if not new_rows:
        return C, pairs
    return np.vstack([C, np.array(new_rows)]), np.vstack([pairs, np.array(new_pairs)])


def cmd_sample(args):
    model = load_checkpoint(args.model)
    cfg = SampleConfig(
        n_samples=args.n,
        euler_steps=args.steps,
        guidance_scale=args.guidance,
        local_start_time=args.local_t,
        seed=args.seed,
    )
    if args.condition_file:
        cond = load_embeddings(args.condition_file)
        rows = _select_rows(cond, args.condition_row)
        cond_ids = [cond.row_ids()[r] for r in rows]
        conds = [cond.data[r] for r in rows]
    else:
        cond_ids, conds = ["q0"], [None]
    query = None
    if args.local_t is not None:
        if not args.query_file:
            raise GenvecError("--local-t requires --query-file")
        qm = load_embeddings(args.query_file)
        query = qm.data[_select_rows(qm, args.query_row)[0]]

    blocks, ids = [], []
    for qi, (qid, c) in enumerate(zip(cond_ids, conds)):
        offset = qi * cfg.n_samples
        if model.objective == "regression":
            if c is None:
                raise GenvecError("a regression model needs --condition-file")
            out = regress(model, c)
        elif query is not None:
            out = local_sample(model, query, c, cfg, first_index=offset)
        else:
            out = euler_generate(model, c, cfg, first_index=offset)
        blocks.append(out)
        ids.extend(f"{qid}#{j}" for j in range(len(out)))
    samples = np.vstack(blocks)
    save_embeddings(EmbeddingMatrix(samples.astype(np.float32), ids), args.out)
    _emit_table(args, ("queries", "samples", "dim"), [(len(cond_ids), len(samples), samples.shape[1])])
    return 0


def _select_rows(matrix, row):
    if row is None:
        return list(range(matrix.n))
    if not 0 <= row < matrix.n:
        raise GenvecError(f"row {row} out of range for {matrix.n} rows")
    return [row]


def _group_queries(queries: EmbeddingMatrix):
    """Rows with ids ``<qid>#<j>`` form one multi-sample query ``qid``."""
    groups: OrderedDict = OrderedDict()
    for i, rid in enumerate(queries.row_ids()):
        groups.setdefault(rid.split("#", 1)[0], []).append(i)
    return groups


def cmd_search(args):
    store = build_store(load_embeddings(args.store), args.metric)
    queries = load_embeddings(args.query_file)
    results = OrderedDict()
    for qid, rows in _group_queries(queries).items():
        samples = queries.data[rows]
        if args.mode == "mean":
            res = knn(store, samples.mean(axis=0), args.k)
        elif len(rows) == 1:
            res = knn(store, samples[0], args.k)
        else:
            res = multi_sample_retrieve(store, samples, args.k, args.mode)
        results[qid] = list(res)
    if args.out:
        write_run(args.out, results)
    rows = [(q, r, d, s) for q, hits in results.items() for r, (d, s) in enumerate(hits, 1)]
    _emit_table(args, ("query_id", "rank", "doc_id", "score"), rows)
    return 0


def cmd_evaluate(args):
    metric = args.metric.lower()
    if not metric.startswith("ndcg@"):
        raise GenvecError(f"unsupported metric {args.metric!r}")
    k = int(metric.split("@", 1)[1])
    per_query, mean, skipped = mean_ndcg(read_run(args.run), read_qrels(args.qrels), k)
    rows = [(q, v) for q, v in per_query.items()]
    if args.json:
        print(json.dumps({"metric": metric, "per_query": per_query, "mean": mean, "skipped": skipped}, indent=1))
    else:
        print(f"query_id\t{metric}")
        for q, v in rows:
            print(f"{q}\t{v:.6f}")
        print(f"mean\t{mean:.6f}")
        if skipped:
            print(f"# skipped (no relevant documents): {', '.join(skipped)}")
    return 0


def cmd_coral(args):
    src = load_embeddings(args.source)
    tgt = load_embeddings(args.target)
    model = coral_fit(src.data, tgt.data)
    aligned = coral_apply(model, src.data)
    save_embeddings(EmbeddingMatrix(aligned.astype(np.float32), src.ids), args.out)
    _emit_table(args, ("rows", "dim"), [(len(aligned), aligned.shape[1])])
    return 0


def _parse_classes(specs):
    out = OrderedDict()
    for spec in specs:
        label, sep, path = spec.partition("=")
        if not sep or not label or not path:
            raise GenvecError(f"--class expects LABEL=PATH, got {spec!r}")
        out[label] = load_embeddings(path).data.astype(np.float64)
    return out


def cmd_vmf_classify(args):
    classes = _parse_classes(args.cls)
    test = load_embeddings(args.test)
    X_test = l2_normalize(test.data)
    by_class = OrderedDict((label, l2_normalize(X)) for label, X in classes.items())
    if args.coral:
        labels = list(by_class)
        stacked = np.vstack(list(by_class.values()))
        aligned = coral_apply(coral_fit(stacked, X_test), stacked)
        sizes = np.cumsum([0] + [len(X) for X in by_class.values()])
        by_class = OrderedDict((l, aligned[sizes[i] : sizes[i + 1]]) for i, l in enumerate(labels))
    model = vmf_fit(by_class)
    scores = vmf_log_posterior(model, X_test)
    scores = np.atleast_2d(scores)
    predicted = vmf_classify(model, X_test)
    header = ["id", "predicted"] + [f"log_score_{c}" for c in model.classes]
    rows = [(rid, p, *map(float, s)) for rid, p, s in zip(test.row_ids(), predicted, scores)]
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("\t".join(header) + "\n")
            for rid, p, *s in rows:
                fh.write("\t".join([rid, str(p)] + [_fmt(v) for v in s]) + "\n")
    _emit_table(args, header, rows)
    return 0


def cmd_pca(args):
    X = load_embeddings(args.input)
    model = pca_fit(X.data, args.k)
    Z = pca_project(X.data, model)
    save_embeddings(EmbeddingMatrix(Z.astype(np.float32), X.ids), args.out)
    total = float(np.var(X.data.astype(np.float64), axis=0, ddof=1).sum())
    rows = [(i + 1, float(v), float(v) / total if total else 0.0) for i, v in enumerate(model.explained_variance)]
    _emit_table(args, ("component", "explained_variance", "fraction"), rows)
    return 0


def cmd_capacity_bench(args):
    cfg = CapacityBenchConfig(
        n_classes=args.n_classes,
        points_per_class=args.points_per_class,
        ambient_dim=args.ambient_dim,
        reduced_dims=tuple(args.dims),
        separation=args.separation,
        noise_scale=args.noise,
        seed=args.seed,
        samples_per_class=args.samples_per_class,
        subclusters=args.subclusters,
        hidden_dim=args.hidden,
        train_steps=args.train_steps,
    )
    report = capacity_bench(cfg)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("# " + json.dumps(asdict(cfg), sort_keys=True) + "\n")
            fh.write("dim\tmethod\taccuracy\tseed\n")
            for d, m, a in report.rows:
                fh.write(f"{d}\t{m}\t{a:.6f}\t{cfg.seed}\n")
    if args.figure:
        from .plotting import plot_capacity

        plot_capacity(report, args.figure)
    print(f"runtime {report.runtime_s:.1f}s", file=sys.stderr)
    rows = [(d, m, a, cfg.seed) for d, m, a in report.rows]
    _emit_table(args, ("dim", "method", "accuracy", "seed"), rows, {"config": asdict(cfg)})
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="print tables as JSON")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(
        prog="genvec",
        description="Generative vector search: flow-matching query models, multi-sample retrieval, CORAL + vMF classification.",
        epilog=EXIT_CODES,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train a flow or regression model")
    t.add_argument("--targets", required=True, help="target embedding file")
    t.add_argument("--conditions", help="condition embedding file (omit for unconditional)")
    t.add_argument("--pairs", help="TSV of condition_row<TAB>target_row")
    t.add_argument("--out", required=True, help="checkpoint path prefix")
    t.add_argument("--objective", choices=("cfm", "regression"), default="cfm")
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--wd", type=float, default=1e-5)
    t.add_argument("--warmup", type=int, default=500)
    t.add_argument("--batch-size", type=int, default=256)
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--steps", type=int, default=None, help="total optimizer steps (overrides --epochs)")
    t.add_argument("--dropout", type=float, default=0.10, help="condition dropout probability")
    t.add_argument("--hidden", type=int, default=64)
    t.add_argument("--time-dim", type=int, default=32)
    t.add_argument("--layers", type=int, default=1)
    t.add_argument("--rank", type=int, default=8)
    t.add_argument("--interpolate-per-target", type=int, default=0,
                   help="extra interpolated queries per target with >= 2 queries")
    t.add_argument("--loss-tsv", help="write per-epoch loss here")
    t.add_argument("--figure", help="write a loss-curve PNG here")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", parents=[common], help="generate embeddings from a checkpoint")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--steps", type=int, default=10)
    s.add_argument("--guidance", type=float, default=1.0)
    s.add_argument("--local-t", type=float, default=None)
    s.add_argument("--condition-file")
    s.add_argument("--condition-row", type=int, default=None)
    s.add_argument("--query-file", help="embedding to perturb for local sampling")
    s.add_argument("--query-row", type=int, default=0)
    s.set_defaults(func=cmd_sample)

    q = sub.add_parser("search", parents=[common], help="exact k-NN search")
    q.add_argument("--store", required=True)
    q.add_argument("--query-file", required=True, help="rows with ids <qid>#<j> are grouped per query")
    q.add_argument("--k", type=int, default=3)
    q.add_argument("--mode", choices=("min-distance", "vote", "mean"), default="min-distance")
    q.add_argument("--metric", choices=("cosine", "euclidean"), default="cosine")
    q.add_argument("--out", help="run TSV: query_id rank doc_id score")
    q.set_defaults(func=cmd_search)

    e = sub.add_parser("evaluate", parents=[common], help="score a run against qrels")
    e.add_argument("--qrels", required=True)
    e.add_argument("--run", required=True)
    e.add_argument("--metric", default="ndcg@10")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("coral", parents=[common], help="align source embeddings to a target set")
    c.add_argument("--source", required=True)
    c.add_argument("--target", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_coral)

    v = sub.add_parser("vmf-classify", parents=[common], help="per-class vMF classification")
    v.add_argument("--class", dest="cls", action="append", required=True, metavar="LABEL=PATH")
    v.add_argument("--test", required=True)
    v.add_argument("--coral", action="store_true", help="CORAL-align training rows to the test set first")
    v.add_argument("--out", help="TSV of predictions and per-class log scores")
    v.set_defaults(func=cmd_vmf_classify)

    k = sub.add_parser("pca", parents=[common], help="PCA-reduce an embedding file")
    k.add_argument("--input", required=True)
    k.add_argument("--k", type=int, required=True)
    k.add_argument("--out", required=True)
    k.set_defaults(func=cmd_pca)

    b = sub.add_parser("capacity-bench", parents=[common], help="synthetic capacity benchmark")
    defaults = CapacityBenchConfig()
    b.add_argument("--n-classes", type=int, default=defaults.n_classes)
    b.add_argument("--points-per-class", type=int, default=defaults.points_per_class)
    b.add_argument("--ambient-dim", type=int, default=defaults.ambient_dim)
    b.add_argument("--dims", type=int, nargs="+", default=list(defaults.reduced_dims))
    b.add_argument("--separation", type=float, default=defaults.separation)
    b.add_argument("--noise", type=float, default=defaults.noise_scale)
    b.add_argument("--samples-per-class", type=int, default=defaults.samples_per_class)
    b.add_argument("--subclusters", type=int, default=defaults.subclusters)
    b.add_argument("--hidden", type=int, default=defaults.hidden_dim)
    b.add_argument("--train-steps", type=int, default=defaults.train_steps)
    b.add_argument("--out", help="report TSV")
    b.add_argument("--figure", help="accuracy-vs-dimension PNG")
    b.set_defaults(func=cmd_capacity_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 9
    except GenvecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
