"""Synthetic vector-database capacity benchmark.

Labeled clusters in an ambient space are PCA-reduced to several target
dimensions. At each dimension two classifiers are compared:

* ``prototype``: one learnable prototype per class, trained with
  class-weighted softmax cross-entropy over cosine similarities (learnable
  temperature, early stopping on a validation split), then nearest
  prototype by cosine.
* ``generative``: a class-conditional flow model generates samples for
  every class; test points take the majority label of their 3 nearest
  generated samples.

Each class is a mixture of several Gaussian sub-clusters, so squeezing the
data into few dimensions interleaves the classes the way a crowded
embedding space does.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ParameterError
from .flow import Architecture, TrainConfig, train
from .numeric import pca_fit, pca_project, rng_stream
from .retrieval import build_store, multi_sample_retrieve
from .sampler import SampleConfig, euler_generate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CapacityBenchConfig:
    n_classes: int = 4
    points_per_class: int = 300
    ambient_dim: int = 32
    reduced_dims: tuple = (2, 4, 8, 32)
    separation: float = 3.0
    noise_scale: float = 1.0
    seed: int = 0
    samples_per_class: int = 300
    subclusters: int = 3
    hidden_dim: int = 256
    train_steps: int = 1500
    lr: float = 2e-3
    batch_size: int = 128
    euler_steps: int = 10
    knn_k: int = 3
    test_fraction: float = 0.25
    val_fraction: float = 0.15

    def __post_init__(self):
        object.__setattr__(self, "reduced_dims", tuple(int(d) for d in self.reduced_dims))
        counts = (self.n_classes, self.points_per_class, self.ambient_dim, self.samples_per_class,
                  self.subclusters, self.hidden_dim, self.train_steps)
        if min(counts) < 1:
            raise ParameterError("all counts must be >= 1")
        if not self.reduced_dims or min(self.reduced_dims) < 1:
            raise ParameterError("reduced_dims must be non-empty and positive")
        if max(self.reduced_dims) > self.ambient_dim:
            raise ParameterError("reduced dims must not exceed the ambient dim")


@dataclass
class CapacityReport:
    config: CapacityBenchConfig
    rows: list = field(default_factory=list)  # (dim, method, accuracy)
    runtime_s: float = 0.0

    def accuracy(self, dim: int, method: str) -> float:
        for d, m, acc in self.rows:
            if d == dim and m == method:
                return acc
        raise KeyError((dim, method))

    def gap(self, dim: int) -> float:
        return self.accuracy(dim, "generative") - self.accuracy(dim, "prototype")

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "rows": [{"dim": d, "method": m, "accuracy": a} for d, m, a in self.rows],
        }


def make_clusters(cfg: CapacityBenchConfig):
    """Points and labels: each class is ``subclusters`` isotropic blobs with
    centres drawn from N(0, separation^2 I)."""
    rng = rng_stream(cfg.seed, "capacity-data")
    centres = rng.standard_normal((cfg.n_classes, cfg.subclusters, cfg.ambient_dim)) * cfg.separation
    X, y = [], []
    for c in range(cfg.n_classes):
        which = rng.integers(0, cfg.subclusters, size=cfg.points_per_class)
        pts = centres[c, which] + cfg.noise_scale * rng.standard_normal((cfg.points_per_class, cfg.ambient_dim))
        X.append(pts)
        y.append(np.full(cfg.points_per_class, c))
    return np.concatenate(X), np.concatenate(y)


def split(n: int, cfg: CapacityBenchConfig):
    perm = rng_stream(cfg.seed, "capacity-split").permutation(n)
    n_test = int(round(cfg.test_fraction * n))
    n_val = int(round(cfg.val_fraction * n))
    return perm[n_test + n_val :], perm[n_test : n_test + n_val], perm[:n_test]


def _unit(X):
    n = np.linalg.norm(X, axis=1, keepdims=True)
    return X / np.maximum(n, 1e-12)


def fit_prototypes(X, y, n_classes, X_val, y_val, seed=0, max_epochs=2000, patience=100, lr=0.05):
    """Class prototypes trained on cosine-similarity logits.

    Full-batch Adam on the prototypes and a log temperature; the prototypes
    with the best validation accuracy (then lowest validation loss) win.
    """
    rng = rng_stream(seed, "prototypes")
    Xn, Vn = _unit(X), _unit(X_val)
    onehot = np.eye(n_classes)[y]
    counts = np.bincount(y, minlength=n_classes).astype(float)
    w = (len(y) / (n_classes * np.maximum(counts, 1)))[y]
    w = w / w.sum()
    # start from the class mean directions plus a little noise
    P = np.stack([Xn[y == c].mean(axis=0) if np.any(y == c) else rng.standard_normal(X.shape[1])
                  for c in range(n_classes)])
    P = P + 0.01 * rng.standard_normal(P.shape)
    log_s = np.log(10.0)
    theta = [P, np.array([log_s])]
    m = [np.zeros_like(t) for t in theta]
    v = [np.zeros_like(t) for t in theta]

    def val_score(P, log_s):
        logits = np.exp(log_s) * Vn @ _unit(P).T
        logits -= logits.max(axis=1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        acc = float(np.mean(np.argmax(logits, axis=1) == y_val))
        return acc, float(-np.mean(logp[np.arange(len(y_val)), y_val]))

    best = (-1.0, np.inf)
    best_P = P.copy()
    since = 0
    for step in range(1, max_epochs + 1):
        P, log_s_arr = theta
        norms = np.linalg.norm(P, axis=1, keepdims=True)
        Pn = P / norms
        s = np.exp(log_s_arr[0])
        cos = Xn @ Pn.T
        logits = s * cos
        logits -= logits.max(axis=1, keepdims=True)
        prob = np.exp(logits)
        prob /= prob.sum(axis=1, keepdims=True)
        g = (prob - onehot) * w[:, None]
        gPn = s * g.T @ Xn
        gP = (gPn - Pn * np.sum(gPn * Pn, axis=1, keepdims=True)) / norms
        glog_s = np.array([s * np.sum(g * cos)])
        for i, grad in enumerate((gP, glog_s)):
            m[i] = 0.9 * m[i] + 0.1 * grad
            v[i] = 0.999 * v[i] + 0.001 * grad * grad
            theta[i] = theta[i] - lr * (m[i] / (1 - 0.9**step)) / (np.sqrt(v[i] / (1 - 0.999**step)) + 1e-8)
        acc, loss = val_score(theta[0], theta[1][0])
        if (acc, -loss) > (best[0], -best[1]):
            best, best_P, since = (acc, loss), theta[0].copy(), 0
        else:
            since += 1
            if since >= patience:
                break
    return _unit(best_P)


def classify_prototypes(P, X) -> np.ndarray:
    return np.argmax(_unit(X) @ P.T, axis=1)


def generative_classifier(Xtr, ytr, n_classes, cfg: CapacityBenchConfig, seed: int):
    """Train a class-conditional flow model and return (samples, labels)."""
    d = Xtr.shape[1]
    arch = Architecture(
        input_dim=d, hidden_dim=cfg.hidden_dim, time_dim=32, cond_dim=n_classes, layers=1, rank=4
    )
    tcfg = TrainConfig(
        lr=cfg.lr, weight_decay=1e-5, warmup_steps=min(500, cfg.train_steps // 10),
        batch_size=cfg.batch_size, cond_dropout=0.1, seed=seed, total_steps=cfg.train_steps,
    )
    model, _ = train(Xtr, np.eye(n_classes)[ytr], None, tcfg, arch)
    samples, labels = [], []
    for c in range(n_classes):
        scfg = SampleConfig(n_samples=cfg.samples_per_class, euler_steps=cfg.euler_steps, seed=seed)
        samples.append(euler_generate(model, np.eye(n_classes)[c], scfg, first_index=c * cfg.samples_per_class))
        labels.append(np.full(cfg.samples_per_class, c))
    return np.concatenate(samples), np.concatenate(labels)


def classify_by_samples(samples, labels, X, n_classes, k=3) -> np.ndarray:
    """Majority vote of the ``k`` nearest generated samples (Euclidean);
    vote ties go to the class of the nearest sample among the tied ones."""
    store = build_store(samples, metric="euclidean")
    out = np.empty(len(X), dtype=np.int64)
    for i, x in enumerate(X):
        hit = multi_sample_retrieve(store, x[None, :], k=k)
        lab = labels[list(hit.rows)]
        votes = np.bincount(lab, minlength=n_classes)
        tied = np.flatnonzero(votes == votes.max())
        out[i] = next(l for l in lab if l in tied)
    return out


def capacity_bench(cfg: CapacityBenchConfig) -> CapacityReport:
    start = time.perf_counter()
    X, y = make_clusters(cfg)
    tr, va, te = split(len(X), cfg)
    report = CapacityReport(cfg)
    for dim in cfg.reduced_dims:
        if dim < cfg.ambient_dim:
            pca = pca_fit(X[tr], dim)
            Z = pca_project(X, pca)
        else:
            Z = X - X[tr].mean(axis=0)
        P = fit_prototypes(Z[tr], y[tr], cfg.n_classes, Z[va], y[va], seed=cfg.seed)
        acc_p = float(np.mean(classify_prototypes(P, Z[te]) == y[te]))
        # the generative model sees train + validation data; it has no early stopping
        fit_rows = np.concatenate([tr, va])
        samples, labels = generative_classifier(Z[fit_rows], y[fit_rows], cfg.n_classes, cfg, cfg.seed)
        pred = classify_by_samples(samples, labels, Z[te], cfg.n_classes, cfg.knn_k)
        acc_g = float(np.mean(pred == y[te]))
        report.rows.append((dim, "prototype", acc_p))
        report.rows.append((dim, "generative", acc_g))
        log.info("dim %d: prototype %.3f generative %.3f", dim, acc_p, acc_g)
    report.runtime_s = time.perf_counter() - start
    return report
