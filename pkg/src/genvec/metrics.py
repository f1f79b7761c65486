"""Evaluation measures: NDCG@10, accuracy / F1, mIoU, plus the TREC-style
qrels and run file readers they are fed from."""

from __future__ import annotations

import csv
import math
from collections import defaultdict

import numpy as np

from .errors import DimensionError, FormatError


def dcg(rels, cutoff: int = 10) -> float:
    return sum((2.0 ** r - 1.0) / math.log2(i + 2) for i, r in enumerate(list(rels)[:cutoff]))


def ndcg_at_k(ranked, rels: dict, k: int = 10) -> float | None:
    """NDCG of ``ranked`` doc ids against graded relevance ``rels``.

    Returns ``None`` when no document is relevant (zero ideal DCG); callers
    skip those queries rather than scoring them 0.
    """
    ideal = dcg(sorted((r for r in rels.values() if r > 0), reverse=True), k)
    if ideal == 0:
        return None
    return dcg((rels.get(d, 0) for d in ranked), k) / ideal


def ndcg_at_10(ranked, rels: dict) -> float | None:
    return ndcg_at_k(ranked, rels, 10)


def mean_ndcg(run: dict, qrels: dict, k: int = 10):
    """Per-query NDCG and the mean over scored queries.

    Returns ``(per_query, mean, skipped)``; ``skipped`` lists queries with
    no relevant documents.
    """
    per_query, skipped = {}, []
    for qid in sorted(qrels):
        value = ndcg_at_k(run.get(qid, []), qrels[qid], k)
        if value is None:
            skipped.append(qid)
        else:
            per_query[qid] = value
    mean = float(np.mean(list(per_query.values()))) if per_query else float("nan")
    return per_query, mean, skipped


def classification_metrics(y_true, y_pred, classes=None) -> dict:
    """Accuracy, macro F1, per-class F1 and mean per-class recall.

    A class that is neither predicted nor present scores F1 = 0 and is
    listed under ``empty_classes``.
    """
    y_true = list(y_true)
    y_pred = list(y_pred)
    if len(y_true) != len(y_pred):
        raise DimensionError(f"{len(y_true)} labels vs {len(y_pred)} predictions")
    if classes is None:
        classes = sorted(set(y_true) | set(y_pred), key=str)
    t = np.asarray(y_true, dtype=object)
    p = np.asarray(y_pred, dtype=object)
    per_class, recalls, empty = {}, {}, []
    for c in classes:
        tp = int(np.sum((p == c) & (t == c)))
        fp = int(np.sum((p == c) & (t != c)))
        fn = int(np.sum((p != c) & (t == c)))
        if tp + fp + fn == 0:
            per_class[c] = 0.0
            empty.append(c)
            continue
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        per_class[c] = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        if tp + fn:
            recalls[c] = recall
    n = len(y_true)
    return {
        "accuracy": float(np.mean(t == p)) if n else float("nan"),
        "macro_f1": float(np.mean(list(per_class.values()))) if per_class else float("nan"),
        "per_class_f1": per_class,
        "mean_class_recall": float(np.mean(list(recalls.values()))) if recalls else float("nan"),
        "empty_classes": empty,
    }


def iou_per_class(pred, truth, classes) -> dict:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DimensionError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    if isinstance(classes, int):
        classes = range(classes)
    out = {}
    for c in classes:
        p, g = pred == c, truth == c
        union = int(np.sum(p | g))
        if union:
            out[c] = int(np.sum(p & g)) / union
    return out


def miou(pred, truth, classes) -> float:
    """Mean IoU over classes present in the prediction or the truth."""
    ious = iou_per_class(pred, truth, classes)
    return float(np.mean(list(ious.values()))) if ious else float("nan")


# ---------------------------------------------------------------------------
# files


def read_qrels(path) -> dict:
    """TSV ``query_id<TAB>doc_id<TAB>relevance``."""
    qrels: dict = defaultdict(dict)
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), 1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                rel = int(row[2])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: relevance {row[2]!r} is not an integer") from exc
            if rel < 0:
                raise FormatError(f"{path}:{lineno}: negative relevance")
            qrels[row[0]][row[1]] = rel
    return dict(qrels)


def read_run(path) -> dict:
    """TSV ``query_id<TAB>rank<TAB>doc_id<TAB>score``; returns doc ids in rank order."""
    rows: dict = defaultdict(list)
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), 1):
            if not row or row[0].startswith("#") or row[0] == "query_id":
                continue
            if len(row) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            try:
                rank = int(row[1])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: rank {row[1]!r} is not an integer") from exc
            rows[row[0]].append((rank, row[2]))
    run = {}
    for qid, entries in rows.items():
        seen, ordered = set(), []
        for _, doc in sorted(entries, key=lambda e: e[0]):
            if doc not in seen:
                seen.add(doc)
                ordered.append(doc)
        run[qid] = ordered
    return run


def write_run(path, results: dict) -> None:
    """``results`` maps query id to an iterable of ``(doc_id, score)``."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for qid, hits in results.items():
            for rank, (doc, score) in enumerate(hits, 1):
                fh.write(f"{qid}\t{rank}\t{doc}\t{score:.8g}\n")
