import math

import numpy as np
import pytest

from conftest import CLASS_MEANS, single_cluster_data
from genvec.errors import ParameterError, SamplingError
from genvec.numeric import StandardizeStats
from genvec.sampler import SampleConfig, euler_generate, guided_velocity, local_sample, sample_noise


class Stub:
    """Velocity field with identity standardization."""

    def __init__(self, fn, dim=2):
        self.fn = fn
        self.stats = StandardizeStats(np.zeros(dim), np.ones(dim))
        self.calls = 0

    def velocity(self, x, t, c=None):
        self.calls += 1
        return self.fn(x, t, c)


class CondStub(Stub):
    class arch:
        conditional = True
        cond_dim = 2

    cond_dropout = 0.1


def test_constant_field_telescopes():
    v = np.array([0.25, -1.5])
    for steps in (1, 3, 10):
        stub = Stub(lambda x, t, c: np.broadcast_to(v, x.shape))
        cfg = SampleConfig(n_samples=5, euler_steps=steps, seed=2)
        out = euler_generate(stub, None, cfg)
        np.testing.assert_allclose(out, sample_noise(5, 2, 2) + v, atol=1e-12)


def _euler_error(steps):
    x0 = np.array([[1.0, -2.0]])
    stub = Stub(lambda x, t, c: -x)
    stub_noise = sample_noise(1, 2, 0)
    out = euler_generate(stub, None, SampleConfig(n_samples=1, euler_steps=steps, seed=0))
    # analytic endpoint of dx/ds = -x over unit time
    return np.linalg.norm(out - stub_noise * math.exp(-1.0))


def test_euler_first_order():
    errors = [_euler_error(s) for s in (2, 4, 8, 16)]
    ratios = [a / b for a, b in zip(errors, errors[1:])]
    assert all(1.7 <= r <= 2.3 for r in ratios), ratios


def test_time_passed_decreases_from_one():
    seen = []
    stub = Stub(lambda x, t, c: (seen.append(float(t[0])), np.zeros_like(x))[1])
    euler_generate(stub, None, SampleConfig(n_samples=1, euler_steps=4))
    assert seen == [1.0, 0.75, 0.5, 0.25]


def test_guidance_formula():
    vu, vc = np.zeros(2), np.array([1.0, 0.0])
    stub = CondStub(lambda x, t, c: np.broadcast_to(vu if c is None else vc, x.shape))
    x = np.zeros((1, 2))
    np.testing.assert_array_equal(guided_velocity(stub, x, [0.5], np.ones(2), 2.0), [[2.0, 0.0]])


def test_guidance_forward_pass_count():
    stub = CondStub(lambda x, t, c: np.zeros_like(x))
    x = np.zeros((1, 2))
    for lam, expected in ((1.0, 1), (0.0, 1), (0.5, 2), (3.0, 2)):
        stub.calls = 0
        guided_velocity(stub, x, [0.5], np.ones(2), lam)
        assert stub.calls == expected


def test_guidance_exact_limits(two_class_model):
    model, _ = two_class_model
    x = np.random.default_rng(0).standard_normal((5, 4))
    t = np.full(5, 0.4)
    c = np.eye(2)[[0, 1, 0, 1, 1]]
    assert guided_velocity(model, x, t, c, 1.0).tobytes() == model.velocity(x, t, c).tobytes()
    assert guided_velocity(model, x, t, c, 0.0).tobytes() == model.velocity(x, t, None).tobytes()


def test_guidance_affine_in_lambda(two_class_model):
    model, _ = two_class_model
    x = np.random.default_rng(1).standard_normal((3, 4)).astype(np.float32)
    t = np.full(3, 0.7)
    c = np.eye(2)[[0, 1, 1]]
    v0 = guided_velocity(model, x, t, c, 0.0).astype(np.float64)
    diffs = {lam: guided_velocity(model, x, t, c, lam) - v0 for lam in (0.5, 1.0, 2.0)}
    np.testing.assert_allclose(diffs[0.5] * 2, diffs[1.0], atol=1e-5)
    np.testing.assert_allclose(diffs[2.0], 2 * diffs[1.0], atol=1e-5)


def test_guidance_warns_without_dropout(two_class_model):
    model, _ = two_class_model
    m = model.copy()
    m.cond_dropout = 0.0
    with pytest.warns(UserWarning, match="condition dropout"):
        euler_generate(m, np.eye(2)[0], SampleConfig(n_samples=2, guidance_scale=2.0))


def test_conditional_samples_follow_condition(two_class_model):
    model, _ = two_class_model
    S = euler_generate(model, np.eye(2)[0], SampleConfig(n_samples=500, seed=11))
    d = np.linalg.norm(S[:, None, :] - CLASS_MEANS[None], axis=2)
    assert np.mean(d.argmin(axis=1) == 0) >= 0.95


def test_deterministic_and_row_independent(two_class_model):
    model, _ = two_class_model
    cfg = SampleConfig(n_samples=2, seed=5)
    a = euler_generate(model, np.eye(2)[1], cfg)
    assert a.tobytes() == euler_generate(model, np.eye(2)[1], cfg).tobytes()
    one = SampleConfig(n_samples=1, seed=5)
    r0 = euler_generate(model, np.eye(2)[1], one, first_index=0)
    r1 = euler_generate(model, np.eye(2)[1], one, first_index=1)
    np.testing.assert_allclose(np.vstack([r0, r1]), a, rtol=1e-5, atol=1e-5)


def test_local_sample_zero_time_is_identity(single_cluster_model):
    model, _ = single_cluster_model
    q = np.array([0.3, -1.7, 0.9])
    out = local_sample(model, q, None, SampleConfig(n_samples=4, local_start_time=0.0))
    assert np.array_equal(out, np.tile(q, (4, 1)))


def test_local_sample_full_time_matches_generation(single_cluster_model):
    model, _ = single_cluster_model
    q = np.array([0.3, -1.7, 0.9])
    cfg = SampleConfig(n_samples=50, local_start_time=1.0, seed=4)
    a = local_sample(model, q, None, cfg)
    b = euler_generate(model, None, cfg)
    assert a.tobytes() == b.tobytes()


def test_local_sample_is_local(single_cluster_model):
    model, _ = single_cluster_model
    q = single_cluster_data(0)[17]
    local = local_sample(model, q, None, SampleConfig(n_samples=300, local_start_time=0.6, seed=2))
    free = euler_generate(model, None, SampleConfig(n_samples=300, seed=2))
    assert np.mean(np.linalg.norm(local - q, axis=1)) < np.mean(np.linalg.norm(free - q, axis=1))


def test_local_sample_validation(single_cluster_model):
    model, _ = single_cluster_model
    with pytest.raises(ParameterError):
        SampleConfig(local_start_time=1.5)
    with pytest.raises(ParameterError):
        local_sample(model, np.zeros(3), None, SampleConfig())


def test_non_finite_state_names_step():
    stub = Stub(lambda x, t, c: np.full_like(x, np.inf) if t[0] < 0.6 else np.zeros_like(x))
    with pytest.raises(SamplingError, match="step 3 of 4"):
        euler_generate(stub, None, SampleConfig(n_samples=1, euler_steps=4))
