import numpy as np
import pytest

from genvec.flow import Architecture, TrainConfig, init_model, train

CLASS_MEANS = np.array([[3.0, 0, 0, 0], [-3.0, 0, 0, 0]])


def two_class_data(seed=0, n=2000, sigma=0.5):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n)
    X = CLASS_MEANS[labels] + sigma * rng.standard_normal((n, 4))
    return X, np.eye(2)[labels], labels


def train_two_class(seed=0, objective="cfm", epochs=60):
    X, C, _ = two_class_data(seed)
    arch = Architecture(4, hidden_dim=64, time_dim=16, cond_dim=2, layers=1, rank=4)
    cfg = TrainConfig(lr=2e-3, warmup_steps=100, batch_size=128, epochs=epochs, seed=seed, objective=objective)
    return train(X, C, None, cfg, arch)


def single_cluster_data(seed=0, n=1000):
    rng = np.random.default_rng(seed)
    centre = np.array([1.0, -2.0, 0.5])
    return centre + 0.7 * rng.standard_normal((n, 3))


def train_single_cluster(seed=0):
    X = single_cluster_data(seed)
    arch = Architecture(3, hidden_dim=64, time_dim=16, cond_dim=0, layers=1, rank=4)
    cfg = TrainConfig(lr=2e-3, warmup_steps=100, batch_size=128, epochs=60, seed=seed)
    return train(X, None, None, cfg, arch)


def tiny_model(seed=0, cond_dim=2, randomize=True, layers=1):
    """<= 1k-parameter float64 model; ``randomize`` replaces every parameter
    with N(0, 0.5^2) so no gradient is trivially zero."""
    arch = Architecture(input_dim=3, hidden_dim=4, time_dim=4, cond_dim=cond_dim, layers=layers, rank=2)
    model = init_model(arch, seed, np.float64)
    if randomize:
        rng = np.random.default_rng(seed + 100)
        for k, p in model.params.items():
            model.params[k] = rng.normal(0.0, 0.5, p.shape)
    return model


def finite_difference_grads(loss_fn, params, h=1e-4):
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss_fn()
            p[idx] = old - h
            down = loss_fn()
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads[name] = g
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for name in analytic:
        a, n = analytic[name], numeric[name]
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(rel.max()))
    return worst


@pytest.fixture(scope="session")
def two_class_model():
    return train_two_class(0)


@pytest.fixture(scope="session")
def single_cluster_model():
    return train_single_cluster(0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
