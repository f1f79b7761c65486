"""Exact nearest-neighbour store and multi-sample retrieval."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingMatrix
from .errors import DegenerateInputError, DimensionError, ParameterError

METRICS = ("cosine", "euclidean")
MODES = ("min-distance", "vote")


def _id_sort_key(doc_id: str):
    # integer-looking ids compare numerically and sort before other ids
    try:
        return (0, int(doc_id), "")
    except ValueError:
        return (1, 0, doc_id)


@dataclass(frozen=True)
class RetrievalResult:
    ids: tuple[str, ...]
    scores: tuple[float, ...]
    rows: tuple[int, ...] = ()

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        return iter(zip(self.ids, self.scores))


class VectorStore:
    """Immutable exact-search index over the rows of an embedding matrix.

    Cosine stores keep unit-normalized rows so a distance is ``1 - x.q``.
    """

    def __init__(self, X: EmbeddingMatrix, metric: str = "cosine"):
        if metric not in METRICS:
            raise ParameterError(f"unknown metric {metric!r}")
        if not isinstance(X, EmbeddingMatrix):
            X = EmbeddingMatrix(np.asarray(X))
        if X.n < 1:
            raise DimensionError("a store needs at least one row")
        data = np.asarray(X.data, dtype=np.float64)
        if metric == "cosine":
            norms = np.linalg.norm(data, axis=1, keepdims=True)
            zero = np.flatnonzero(norms[:, 0] == 0)
            if len(zero):
                raise DegenerateInputError(f"zero row {zero[0]} cannot be used with cosine distance")
            data = data / norms
        data.setflags(write=False)
        self._data = data
        self.metric = metric
        self.normalized = metric == "cosine"
        self.ids = tuple(X.row_ids())
        order = sorted(range(len(self.ids)), key=lambda i: _id_sort_key(self.ids[i]))
        tie = np.empty(len(order), dtype=np.int64)
        tie[order] = np.arange(len(order))
        tie.setflags(write=False)
        self._tie = tie

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def dim(self) -> int:
        return self._data.shape[1]

    def __len__(self):
        return self._data.shape[0]

    def distances(self, Q) -> np.ndarray:
        """Distance of each query row to every stored row, shape (n_q, N)."""
        Q = np.asarray(Q, dtype=np.float64)
        if Q.ndim == 1:
            Q = Q[None, :]
        if Q.shape[1] != self.dim:
            raise DimensionError(f"query dim {Q.shape[1]} != store dim {self.dim}")
        if self.metric == "cosine":
            norms = np.linalg.norm(Q, axis=1, keepdims=True)
            if np.any(norms == 0):
                raise DegenerateInputError("zero query vector under cosine distance")
            return 1.0 - (Q / norms) @ self._data.T
        # direct differences: no cancellation for near-duplicate points
        return np.stack([np.sqrt(np.sum((self._data - q) ** 2, axis=1)) for q in Q])

    def rank(self, scores: np.ndarray, k: int) -> np.ndarray:
        """Row indices of the ``k`` smallest scores, ties by ascending id."""
        k = min(k, len(scores))
        if k < len(scores):
            kth = np.partition(scores, k - 1)[k - 1]
            cand = np.flatnonzero(scores <= kth)
        else:
            cand = np.arange(len(scores))
        order = np.lexsort((self._tie[cand], scores[cand]))
        return cand[order[:k]]

    def _result(self, rows, scores) -> RetrievalResult:
        return RetrievalResult(
            tuple(self.ids[r] for r in rows), tuple(float(s) for s in scores), tuple(int(r) for r in rows)
        )


def build_store(X, metric: str = "cosine") -> VectorStore:
    return VectorStore(X, metric)


def knn(store: VectorStore, q, k: int = 3) -> RetrievalResult:
    if k < 1:
        raise ParameterError("k must be >= 1")
    d = store.distances(q)[0]
    rows = store.rank(d, k)
    return store._result(rows, d[rows])


def multi_sample_retrieve(store: VectorStore, samples, k: int = 3, mode: str = "min-distance") -> RetrievalResult:
    """Fuse the neighbours of several generated query embeddings.

    ``min-distance`` scores each document by its smallest distance to any
    sample. ``vote`` lets every sample vote for its ``k`` nearest documents;
    documents are ranked by votes, then by min distance. Vote-mode scores
    are vote counts (higher is better).
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[None, :]
    if len(samples) == 0:
        raise DimensionError("no samples")
    if k < 1:
        raise ParameterError("k must be >= 1")
    if mode not in MODES:
        raise ParameterError(f"unknown mode {mode!r}")
    D = store.distances(samples)
    best = D.min(axis=0)
    if mode == "min-distance":
        rows = store.rank(best, k)
        return store._result(rows, best[rows])
    votes = np.zeros(len(store), dtype=np.int64)
    for row in D:
        votes[store.rank(row, k)] += 1
    voted = np.flatnonzero(votes)
    order = np.lexsort((store._tie[voted], best[voted], -votes[voted]))
    rows = voted[order[:k]]
    return store._result(rows, votes[rows].astype(float))


def multilabel_assign(class_store: VectorStore, samples, threshold: float):
    """Labels whose share of nearest-class hits among ``samples`` reaches
    ``threshold``; returns ``(labels, frequencies)`` with frequencies keyed
    by class id in store order."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[None, :]
    if len(samples) == 0:
        raise DimensionError("no samples")
    D = class_store.distances(samples)
    nearest = [class_store.rank(row, 1)[0] for row in D]
    counts = np.bincount(nearest, minlength=len(class_store))
    freq = counts / len(samples)
    frequencies = {cid: float(f) for cid, f in zip(class_store.ids, freq)}
    labels = {cid for cid, f in frequencies.items() if f >= threshold}
    return labels, frequencies
