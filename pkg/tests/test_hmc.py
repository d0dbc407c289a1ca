import math

import numpy as np
import pytest

from adiabatic_mc.diagnostics import ks_statistic
from adiabatic_mc.hmc import (
    DivergenceError,
    HmcConfig,
    estimate_expectation,
    hmc_transition,
    leapfrog,
)
from adiabatic_mc.phase import EuclideanKinetic


def test_config_validation():
    with pytest.raises(ValueError):
        HmcConfig(step_size=0.0)
    with pytest.raises(ValueError):
        HmcConfig(tau_max=-1.0)
    assert HmcConfig().tau_max == pytest.approx(2 * math.pi)


def test_free_particle(kin):
    q, p = np.array([0.3]), np.array([1.5])
    q1, p1 = leapfrog(q, p, 0.1, lambda x: np.zeros_like(x), kin)
    assert q1 == pytest.approx(q + 0.1 * p)
    assert np.array_equal(p1, p)


def test_leapfrog_reversible(model, kin, rng):
    q, p = rng.normal(size=(10, 1)), rng.normal(size=(10, 1))
    grad = lambda x: model.grad_potential(x, 0.7)
    q1, p1 = leapfrog(q, p, 0.01, grad, kin)
    q2, p2 = leapfrog(q1, p1, -0.01, grad, kin)
    assert np.max(np.abs(q2 - q)) <= 1e-12 and np.max(np.abs(p2 - p)) <= 1e-12


def test_leapfrog_volume_preserving(model, kin):
    grad = lambda x: model.grad_potential(x, 0.5)
    z = np.array([-1.2, 0.4])
    h = 1e-6
    jac = np.empty((2, 2))
    for j in range(2):
        e = np.eye(2)[j] * h
        plus = leapfrog(z[:1] + e[:1], z[1:] + e[1:], 0.05, grad, kin)
        minus = leapfrog(z[:1] - e[:1], z[1:] - e[1:], 0.05, grad, kin)
        jac[:, j] = (np.concatenate(plus) - np.concatenate(minus)) / (2 * h)
    assert np.linalg.det(jac) == pytest.approx(1.0, abs=1e-8)


def test_harmonic_energy_error():
    kin = EuclideanKinetic()
    q, p = np.array([1.0]), np.array([0.0])
    e0 = 0.5 * q @ q + 0.5 * p @ p
    worst = 0.0
    for _ in range(1000):
        q, p = leapfrog(q, p, 0.01, lambda x: x, kin)
        worst = max(worst, abs(0.5 * q @ q + 0.5 * p @ p - e0))
    assert worst <= 1e-4


def test_leapfrog_errors(kin):
    with pytest.raises(ValueError):
        leapfrog(np.zeros(1), np.zeros(1), 0.0, lambda x: x, kin)
    with pytest.raises(DivergenceError):
        leapfrog(np.zeros(1), np.ones(1), 0.1, lambda x: np.full_like(x, np.inf), kin)


def test_zero_length_trajectory(model, kin, rng):
    q = np.array([[0.4]])
    q1, acc, dh, div = hmc_transition(q, 0.5, model, kin, HmcConfig(), rng, n_steps=0)
    assert np.array_equal(q1, q) and acc[0] and dh[0] == 0.0 and not div[0]


def test_tiny_step_acceptance(model, kin, rng):
    cfg = HmcConfig(step_size=1e-4, tau_max=0.01)
    q = model.sample_intermediate(0.5, rng, 1000)
    _, acc, _, _ = hmc_transition(q, 0.5, model, kin, cfg, rng)
    assert acc.mean() >= 0.99


def test_base_distribution_ks(model, kin, rng):
    # many chains for a few transitions each, started from exact draws
    q = model.sample_base(rng, 10 ** 4)
    for _ in range(3):
        q, _, _, _ = hmc_transition(q, 0.0, model, kin, HmcConfig(step_size=0.05), rng)
    assert ks_statistic(q[:, 0], lambda x: model.intermediate_cdf(0.0, x)).pass_1


def test_detailed_balance_smoke(model, kin, rng):
    q = model.sample_intermediate(0.3, rng, 200)
    samples = []
    for _ in range(100):
        q, _, _, _ = hmc_transition(q, 0.3, model, kin, HmcConfig(step_size=0.05), rng)
        samples.append(q[:, 0].copy())
    x = np.concatenate(samples[::10])
    assert ks_statistic(x, lambda z: model.intermediate_cdf(0.3, z)).pass_1


def test_single_draw_mean(model, kin):
    cfg = HmcConfig(step_size=0.05)
    q0 = np.array([[-1.0]])
    mean, se, q_last = estimate_expectation(q0, [0.5], model, kin, cfg, 0, 1,
                                            np.random.default_rng(5))
    assert mean[0] == model.delta_v(q_last)[0]
    assert np.isnan(se[0])
    q1, _, _, _ = hmc_transition(q0, [0.5], model, kin, cfg, np.random.default_rng(5))
    assert np.array_equal(q1, q_last)


def test_expectation_at_half(model, kin, rng):
    q0 = model.sample_intermediate(0.5, rng, 1)
    # pi_0.5 has width ~0.14 in x, so tau <= 1 still spans a full oscillation
    cfg = HmcConfig(step_size=0.05, tau_max=1.0)
    mean, se, _ = estimate_expectation(q0, [0.5], model, kin, cfg, 50, 5000, rng)
    assert abs(mean[0] - model.expected_delta_v(0.5)) < 4 * se[0]


def test_stderr_scaling(model, kin, rng):
    cfg = HmcConfig(step_size=0.05, tau_max=1.0)
    q0 = model.sample_intermediate(0.5, rng, 20)
    _, se500, _ = estimate_expectation(q0, np.full(20, 0.5), model, kin, cfg, 20, 500, rng)
    _, se2000, _ = estimate_expectation(q0, np.full(20, 0.5), model, kin, cfg, 20, 2000, rng)
    ratio = np.mean(se500) / np.mean(se2000)
    assert ratio == pytest.approx(2.0, rel=0.3)


def test_determinism(model, kin):
    out = [estimate_expectation(np.array([[0.1]]), [0.2], model, kin, HmcConfig(step_size=0.05),
                                5, 20, np.random.default_rng(9))[0] for _ in range(2)]
    assert np.array_equal(out[0], out[1])
