"""Acceptance suite: one test per criterion, each reporting a pass/fail line.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary lines
are printed at the end of the session.
"""

import itertools
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import (
    CLASS_MEANS,
    finite_difference_grads,
    max_relative_error,
    single_cluster_data,
    tiny_model,
    train_single_cluster,
    train_two_class,
)
from genvec.capacity import CapacityBenchConfig, capacity_bench
from genvec.coral import coral_fit, coral_transform
from genvec.embeddings import EmbeddingMatrix, save_embeddings
from genvec.flow import Architecture, TrainConfig, cfm_loss_grad_explicit, forward, init_model, regression_loss_grad, train
from genvec.metrics import classification_metrics, iou_per_class, ndcg_at_10
from genvec.numeric import StandardizeStats, l2_normalize
from genvec.retrieval import build_store, knn, multi_sample_retrieve
from genvec.sampler import SampleConfig, euler_generate, guided_velocity, local_sample, sample_noise
from genvec.vmf import VmfModel, kappa_estimate, log_normalizer, vmf_classify, vmf_fit, vmf_log_posterior

RESULTS = []


class Check:
    """Collects sub-checks for one criterion and records a summary line."""

    def __init__(self, number, title, budget_s):
        self.number, self.title, self.budget = number, title, budget_s
        self.failures, self.notes = [], []

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def expect(self, ok, message):
        if not ok:
            self.failures.append(message)

    def note(self, message):
        self.notes.append(message)

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        if exc is not None:
            self.failures.append(f"raised {exc_type.__name__}: {exc}")
        if elapsed > self.budget:
            self.failures.append(f"runtime {elapsed:.1f}s over {self.budget}s")
        status = "PASS" if not self.failures else "FAIL"
        detail = "; ".join(self.failures or self.notes)
        RESULTS.append(f"[{status}] {self.number:>2}. {self.title} ({elapsed:.1f}s) {detail}")
        if exc is None:
            assert not self.failures, "; ".join(self.failures)
        return False


# ---------------------------------------------------------------------------


def test_01_gradient_exactness():
    with Check(1, "gradient exactness", 30) as chk:
        worst = 0.0
        for cond_dim, layers in ((2, 1), (0, 1), (0, 2)):
            model = tiny_model(seed=cond_dim + layers, cond_dim=cond_dim, layers=layers)
            chk.expect(model.n_params() <= 1000, f"{model.n_params()} params")
            rng = np.random.default_rng(layers)
            x1, x0 = rng.standard_normal((2, 6, 3))
            t = rng.random(6)
            c = rng.standard_normal((6, cond_dim)) if cond_dim else None
            keep = np.array([1, 1, 0, 1, 0, 1]) if cond_dim else None
            _, g, _ = cfm_loss_grad_explicit(model, x1, c, x0, t, keep)
            num = finite_difference_grads(lambda: cfm_loss_grad_explicit(model, x1, c, x0, t, keep)[0], model.params)
            worst = max(worst, max_relative_error(g, num))
            if cond_dim:
                _, g = regression_loss_grad(model, x1, c)
                num = finite_difference_grads(lambda: regression_loss_grad(model, x1, c)[0], model.params)
                worst = max(worst, max_relative_error(g, num))
        chk.expect(worst < 1e-4, f"max relative error {worst:.2e}")
        chk.note(f"max relative error {worst:.2e}")


def test_02_initialization_identity():
    with Check(2, "initialization identity", 5) as chk:
        arch = Architecture(8, hidden_dim=32, time_dim=16, cond_dim=5, layers=2, rank=4)
        model = init_model(arch, 0)
        rng = np.random.default_rng(0)
        x = rng.standard_normal((100, 8))
        t = rng.random(100)
        c1, c2 = rng.standard_normal((2, 100, 5)) * 3
        dev = float(np.max(np.abs(forward(model, x, t, c1) - forward(model, x, t, c2))))
        chk.expect(dev < 1e-6, f"max deviation {dev:.2e}")
        chk.note(f"max deviation {dev:.2e}")


def test_03_conditional_moment_recovery():
    with Check(3, "conditional moment recovery", 300) as chk:
        for seed in range(3):
            model, _ = train_two_class(seed)
            for k in range(2):
                S = euler_generate(model, np.eye(2)[k], SampleConfig(n_samples=1000, seed=100 + seed))
                err = float(np.linalg.norm(S.mean(axis=0) - CLASS_MEANS[k]))
                d = np.linalg.norm(S[:, None, :] - CLASS_MEANS[None], axis=2)
                frac = float(np.mean(d.argmin(axis=1) == k))
                chk.expect(err < 0.3, f"seed {seed} class {k} mean error {err:.3f}")
                chk.expect(frac >= 0.95, f"seed {seed} class {k} nearest fraction {frac:.3f}")
                chk.note(f"s{seed}c{k} err={err:.3f} frac={frac:.3f}")


class _LinearStub:
    def __init__(self, dim):
        self.stats = StandardizeStats(np.zeros(dim), np.ones(dim))

    def velocity(self, x, t, c=None):
        return -x


def test_04_euler_first_order():
    with Check(4, "Euler order-1 convergence", 10) as chk:
        stub = _LinearStub(3)
        errors = []
        for steps in (2, 4, 8, 16):
            out = euler_generate(stub, None, SampleConfig(n_samples=4, euler_steps=steps, seed=1))
            exact = sample_noise(4, 3, 1) * math.exp(-1.0)
            errors.append(float(np.max(np.abs(out - exact))))
        ratios = [a / b for a, b in zip(errors, errors[1:])]
        chk.expect(all(1.7 <= r <= 2.3 for r in ratios), f"ratios {ratios}")
        chk.note("ratios " + ", ".join(f"{r:.3f}" for r in ratios))


def test_05_guidance_collapse():
    with Check(5, "CFG collapse", 5) as chk:
        arch = Architecture(4, hidden_dim=16, time_dim=8, cond_dim=2, rank=2)
        model = init_model(arch, 3, np.float64)
        rng = np.random.default_rng(3)
        for k, p in model.params.items():  # a random network, not the init identity
            model.params[k] = rng.normal(0, 0.3, p.shape)
        model.cond_dropout = 0.1
        x = rng.standard_normal((6, 4))
        t = rng.random(6)
        c = rng.standard_normal((6, 2))
        vc, vu = model.velocity(x, t, c), model.velocity(x, t, None)
        chk.expect(guided_velocity(model, x, t, c, 1.0).tobytes() == vc.tobytes(), "lambda=1 differs")
        chk.expect(guided_velocity(model, x, t, c, 0.0).tobytes() == vu.tobytes(), "lambda=0 differs")
        v = {lam: guided_velocity(model, x, t, c, lam) for lam in (0.0, 0.5, 1.0, 2.0)}
        for lam in (0.5, 2.0):
            dev = float(np.max(np.abs(v[lam] - (v[0.0] + lam * (v[1.0] - v[0.0])))))
            chk.expect(dev < 1e-12, f"lambda={lam} off the line by {dev:.2e}")


def test_06_local_sampling_limits():
    with Check(6, "local sampling limits", 120) as chk:
        for seed in range(5):
            model, _ = train_single_cluster(seed)
            q = single_cluster_data(seed)[seed]
            same = local_sample(model, q, None, SampleConfig(n_samples=5, local_start_time=0.0, seed=seed))
            chk.expect(np.array_equal(same, np.tile(q, (5, 1))), f"seed {seed}: t0=0 moved the query")
            near = local_sample(model, q, None, SampleConfig(n_samples=500, local_start_time=0.6, seed=seed))
            far = local_sample(model, q, None, SampleConfig(n_samples=500, local_start_time=1.0, seed=seed))
            dn = float(np.mean(np.linalg.norm(near - q, axis=1)))
            df = float(np.mean(np.linalg.norm(far - q, axis=1)))
            chk.expect(dn < df, f"seed {seed}: t0=0.6 {dn:.3f} >= t0=1 {df:.3f}")
            chk.note(f"s{seed} {dn:.3f}<{df:.3f}")


def _oracle_order(X, ids, q, metric):
    if metric == "euclidean":
        d = np.linalg.norm(X - q, axis=1)
    else:
        d = 1.0 - (X @ q) / (np.linalg.norm(X, axis=1) * np.linalg.norm(q))
    keys = [(float(di), int(i)) for di, i in zip(d, ids)]
    return [str(i) for _, i in sorted(keys)]


def test_07_retrieval_oracle():
    with Check(7, "retrieval oracle equivalence", 60) as chk:
        rng = np.random.default_rng(7)
        mismatches = 0
        for inst in range(100):
            n = int(rng.integers(1, 10_001))
            d = int(rng.integers(1, 65))
            metric = ("euclidean", "cosine")[inst % 2]
            X = rng.standard_normal((n, d))
            if inst % 4 == 0 and n > 1:  # exact duplicates exercise the id tie-break
                dup = rng.integers(0, n, size=max(1, n // 10))
                X[dup] = X[rng.integers(0, n, size=len(dup))]
            ids = rng.permutation(n)
            k = int(rng.integers(1, min(n, 50) + 1))
            q = rng.standard_normal(d)
            store = build_store(EmbeddingMatrix(X, [str(i) for i in ids]), metric)
            if list(knn(store, q, k).ids) != _oracle_order(X, ids, q, metric)[:k]:
                mismatches += 1
        chk.expect(mismatches == 0, f"{mismatches} of 100 instances differ")
        chk.note("100/100 instances match")


def test_08_multi_sample_advantage():
    with Check(8, "multi-sample advantage", 120) as chk:
        e1 = np.eye(8)[0]
        for seed in range(5):
            rng = np.random.default_rng(seed)
            # a query whose relevant documents sit in two modes at +-4 e1;
            # distractors crowd the midpoint where a mean embedding lands
            answers = np.where(rng.random(1000)[:, None] < 0.5, 4 * e1, -4 * e1) + 0.4 * rng.standard_normal((1000, 8))
            arch = Architecture(8, hidden_dim=64, time_dim=16, rank=4)
            cfg = TrainConfig(lr=2e-3, warmup_steps=50, batch_size=128, epochs=40, seed=seed)
            model, _ = train(answers, None, None, cfg, arch)
            relevant = np.vstack([4 * e1 + 0.4 * rng.standard_normal((5, 8)), -4 * e1 + 0.4 * rng.standard_normal((5, 8))])
            distractors = 1.0 * rng.standard_normal((200, 8))
            store = build_store(np.vstack([relevant, distractors]), "euclidean")
            rels = {str(i): 1 for i in range(10)}
            samples = euler_generate(model, None, SampleConfig(n_samples=20, seed=seed))
            multi = ndcg_at_10(multi_sample_retrieve(store, samples, 10).ids, rels)
            single = ndcg_at_10(knn(store, samples.mean(axis=0), 10).ids, rels)
            vote = ndcg_at_10(multi_sample_retrieve(store, samples, 10, "vote").ids, rels)
            chk.expect(multi > single, f"seed {seed}: multi {multi:.3f} <= single {single:.3f}")
            chk.note(f"s{seed} min-distance {multi:.3f} vote {vote:.3f} mean {single:.3f}")


def test_09_coral_moment_matching():
    with Check(9, "CORAL moment matching", 10) as chk:
        rng = np.random.default_rng(9)
        D, n = 8, 5000
        var_s = np.tile([1.0, 4.0], D // 2)
        var_r = np.tile([4.0, 1.0], D // 2)
        Xs = rng.standard_normal((n, D)) * np.sqrt(var_s)
        Xr = 1.0 + rng.standard_normal((n, D)) * np.sqrt(var_r)
        out = coral_transform(coral_fit(Xs, Xr, normalize=False), Xs)
        mean_err = float(np.linalg.norm(out.mean(axis=0) - Xr.mean(axis=0)))
        Cr = np.cov(Xr, rowvar=False)
        cov_err = float(np.linalg.norm(np.cov(out, rowvar=False) - Cr) / np.linalg.norm(Cr))
        chk.expect(mean_err < 0.1, f"mean error {mean_err:.3f}")
        chk.expect(cov_err < 0.1, f"covariance error {cov_err:.3f}")
        chk.note(f"mean {mean_err:.2e} cov {cov_err:.2e}")


def test_10_vmf_correctness():
    with Check(10, "vMF correctness", 30) as chk:
        kappa = kappa_estimate(0.5, 3)
        chk.expect(abs(kappa - 1.8333) <= 1e-4, f"kappa {kappa}")
        for dim in (2, 3, 64, 512):
            rng = np.random.default_rng(dim)
            for k in (1e-3, 1.0, 1e2, 1e4, 1e5):
                chk.expect(math.isfinite(log_normalizer(k, dim)), f"log C({k}, {dim}) not finite")
            mus = l2_normalize(rng.standard_normal((2, dim)))
            model = VmfModel(("a", "b"), mus, np.array([1e5, 1.0]), np.log([0.5, 0.5]))
            scores = vmf_log_posterior(model, l2_normalize(rng.standard_normal((10, dim))))
            chk.expect(np.all(np.isfinite(scores)), f"non-finite scores at D={dim}")
        rng = np.random.default_rng(10)
        e1 = np.eye(16)[0]
        model = vmf_fit({
            "pos": l2_normalize(3 * e1 + rng.standard_normal((500, 16))),
            "neg": l2_normalize(-3 * e1 + rng.standard_normal((500, 16))),
        })
        y = rng.integers(0, 2, 2000)
        X = l2_normalize(np.where(y[:, None] == 0, 3 * e1, -3 * e1) + rng.standard_normal((2000, 16)))
        acc = float(np.mean(np.array(vmf_classify(model, X)) == np.where(y == 0, "pos", "neg")))
        chk.expect(acc > 0.99, f"accuracy {acc:.4f}")
        chk.note(f"kappa {kappa:.5f} accuracy {acc:.4f}")


def test_11_metric_oracles():
    with Check(11, "metric oracles", 10) as chk:
        v = ndcg_at_10(["x", "a"], {"a": 1})
        chk.expect(abs(v - 0.63093) < 1e-5, f"second-position NDCG {v}")
        rng = np.random.default_rng(11)
        for _ in range(40):
            n = int(rng.integers(1, 7))
            docs = [f"d{i}" for i in range(n)]
            rels = {d: int(r) for d, r in zip(docs, rng.integers(0, 4, n))}
            if not any(rels.values()):
                continue
            gain = lambda order: sum((2 ** rels[d] - 1) / math.log2(i + 2) for i, d in enumerate(order))
            best = max(gain(p) for p in itertools.permutations(docs))
            for p in itertools.permutations(docs):
                got = ndcg_at_10(list(p), rels)
                chk.expect(abs(got - gain(p) / best) < 1e-12, f"permutation {p}: {got}")
        y_true = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0]
        y_pred = [1, 1, 0, 1, 0, 0, 0, 0, 0, 0]
        f1 = classification_metrics(y_true, y_pred, classes=[0, 1])["per_class_f1"][1]
        chk.expect(abs(f1 - 2 * 2 / (2 * 2 + 1 + 1)) < 1e-12, f"F1 {f1}")
        truth = np.zeros((4, 4), int)
        truth[:, :2] = 1
        pred = np.zeros((4, 4), int)
        pred[:2, :2] = 1
        iou = iou_per_class(pred, truth, [1])[1]
        chk.expect(iou == 4 / 8, f"IoU {iou}")


def test_12_capacity_bench_direction():
    with Check(12, "capacity-bench direction", 900) as chk:
        for seed in range(3):
            report = capacity_bench(CapacityBenchConfig(seed=seed))
            dims = report.config.reduced_dims
            low = dims[0]
            proto = [report.accuracy(d, "prototype") for d in dims]
            gaps = [report.gap(d) for d in dims]
            chk.expect(proto[0] < 0.8, f"seed {seed}: not an overlapping regime ({proto[0]:.3f})")
            chk.expect(gaps[0] >= 0, f"seed {seed}: generative below prototype at dim {low}")
            chk.expect(gaps[-1] < gaps[0], f"seed {seed}: gap does not shrink {gaps}")
            chk.expect(all(b >= a - 0.03 for a, b in zip(proto, proto[1:])), f"seed {seed}: prototype not monotone {proto}")
            chk.note(f"s{seed} gaps " + "/".join(f"{g:+.2f}" for g in gaps))


def _run_cli(args, cwd):
    env = dict(os.environ, STHLM_THREADS="1")
    res = subprocess.run([sys.executable, "-m", "genvec.cli", *args], cwd=cwd, env=env, capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    return res.stdout


def _snapshot(directory):
    return {name: open(os.path.join(directory, name), "rb").read() for name in sorted(os.listdir(directory))}


def test_13_cli_determinism(tmp_path):
    with Check(13, "CLI determinism", 600) as chk:
        rng = np.random.default_rng(13)
        data = tmp_path / "data"
        data.mkdir()
        y = rng.integers(0, 2, 400)
        X = CLASS_MEANS[y] + 0.5 * rng.standard_normal((400, 4))
        save_embeddings(X.astype(np.float32), data / "targets")
        save_embeddings(np.eye(2)[y].astype(np.float32), data / "conds")
        save_embeddings(np.eye(2).astype(np.float32), data / "queries")
        save_embeddings(EmbeddingMatrix(X[:60].astype(np.float32), [f"d{i}" for i in range(60)]), data / "store")
        save_embeddings(rng.standard_normal((60, 8)).astype(np.float32), data / "wide")
        (data / "qrels.tsv").write_text("".join(f"{q}\td{i}\t{int(y[i] == int(q))}\n" for q in "01" for i in range(60)))
        for label in (0, 1):
            save_embeddings(X[y == label][:50].astype(np.float32), data / f"class{label}")
        snapshots = []
        for run in ("a", "b"):
            out = tmp_path / run
            out.mkdir()
            d, o = str(data), str(out)
            _run_cli(["train", "--targets", f"{d}/targets", "--conditions", f"{d}/conds", "--out", f"{o}/model",
                      "--epochs", "5", "--hidden", "16", "--time-dim", "8", "--rank", "2", "--warmup", "10",
                      "--batch-size", "64", "--seed", "3", "--loss-tsv", f"{o}/loss.tsv", "--figure", f"{o}/loss.png"], o)
            _run_cli(["sample", "--model", f"{o}/model", "--condition-file", f"{d}/queries", "--n", "8",
                      "--out", f"{o}/samples", "--seed", "4"], o)
            _run_cli(["sample", "--model", f"{o}/model", "--condition-file", f"{d}/queries", "--condition-row", "1",
                      "--query-file", f"{d}/targets", "--local-t", "0.5", "--n", "8", "--out", f"{o}/local", "--seed", "4"], o)
            _run_cli(["search", "--store", f"{d}/store", "--query-file", f"{o}/samples", "--k", "5",
                      "--out", f"{o}/run.tsv", "--seed", "4"], o)
            _run_cli(["evaluate", "--qrels", f"{d}/qrels.tsv", "--run", f"{o}/run.tsv"], o)
            _run_cli(["coral", "--source", f"{d}/class0", "--target", f"{d}/class1", "--out", f"{o}/aligned"], o)
            _run_cli(["vmf-classify", "--class", f"a={d}/class0", "--class", f"b={d}/class1", "--test", f"{d}/targets",
                      "--coral", "--out", f"{o}/pred.tsv"], o)
            _run_cli(["pca", "--input", f"{d}/wide", "--k", "3", "--out", f"{o}/pca"], o)
            _run_cli(["capacity-bench", "--n-classes", "2", "--points-per-class", "40", "--ambient-dim", "4",
                      "--dims", "2", "4", "--hidden", "16", "--train-steps", "30", "--samples-per-class", "20",
                      "--seed", "5", "--out", f"{o}/bench.tsv", "--figure", f"{o}/bench.png"], o)
            snapshots.append(_snapshot(out))
        a, b = snapshots
        chk.expect(a.keys() == b.keys(), "different file sets")
        differ = [name for name in a if a[name] != b.get(name)]
        chk.expect(not differ, f"files differ: {differ}")
        chk.note(f"{len(a)} files identical")
