import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from adiabatic_mc.contact import set_h0
from adiabatic_mc.phase import (
    ContactState,
    EuclideanKinetic,
    RngStream,
    contact_hamiltonian,
    grad_kinetic,
    kinetic,
    sample_momentum,
)


def test_mass_must_be_positive():
    with pytest.raises(ValueError):
        EuclideanKinetic([1.0, 0.0])
    with pytest.raises(ValueError):
        EuclideanKinetic([-2.0])


def test_kinetic_direct_formula():
    kin = EuclideanKinetic([1.0])
    assert kinetic(kin, np.zeros(1)) == 0.0
    assert kinetic(kin, np.array([2.0])) == 2.0
    assert np.array_equal(grad_kinetic(kin, np.array([2.0])), [2.0])
    heavy = EuclideanKinetic([4.0, 1.0])
    assert kinetic(heavy, np.array([2.0, 1.0])) == pytest.approx(0.5 + 0.5 + 0.5 * np.log(4.0))


def test_kinetic_gradient_finite_differences(rng):
    kin = EuclideanKinetic([0.5, 2.0, 3.0])
    p = rng.normal(size=3)
    h = 1e-6
    fd = [(kin.energy(p + h * e) - kin.energy(p - h * e)) / (2 * h) for e in np.eye(3)]
    assert np.allclose(kin.grad(p), fd, rtol=1e-8, atol=1e-9)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        EuclideanKinetic([1.0]).energy(np.zeros(2))


def test_momentum_moments():
    kin = EuclideanKinetic([4.0])
    p = sample_momentum(kin, RngStream(1).generator(), (10 ** 5,))[:, 0]
    assert p.var() == pytest.approx(4.0, abs=0.12)
    assert abs(p.mean()) < 3 * np.sqrt(4.0 / 10 ** 5)


def test_momentum_chi_squared_fit():
    kin = EuclideanKinetic([4.0])
    p = kin.sample(RngStream(2).generator(), (10 ** 5,))[:, 0]
    edges = stats.norm.ppf(np.linspace(0, 1, 21), scale=2.0)
    counts, _ = np.histogram(p, edges)
    assert stats.chisquare(counts).pvalue > 0.01


def test_rng_stream_determinism():
    a = RngStream(42, 3).generator().standard_normal(10)
    b = RngStream(42, 3).generator().standard_normal(10)
    c = RngStream(42, 4).generator().standard_normal(10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert RngStream(42).child(3) == RngStream(42, 3)
    with pytest.raises(ValueError):
        RngStream(-1)


def test_state_broadcasts_and_copies():
    s = ContactState(np.zeros((4, 1)), np.ones((4, 1)), beta=0.5)
    assert s.beta.shape == (4,) and s.h0.shape == (4,)
    c = s.copy()
    c.q[0, 0] = 7.0
    assert s.q[0, 0] == 0.0
    with pytest.raises(ValueError):
        ContactState(np.zeros(2), np.zeros(3))


def test_hamiltonian_zero_after_set_h0(model, kin, rng):
    s = set_h0(ContactState(model.sample_base(rng), kin.sample(rng), 0.0), kin, model)
    assert contact_hamiltonian(s, model, model.log_partition, kin) == 0.0


def test_hamiltonian_shift_and_parity(model, kin, rng):
    s = ContactState(model.sample_intermediate(0.4, rng), kin.sample(rng), 0.4, h0=1.25)
    h = contact_hamiltonian(s, model, model.log_partition, kin)
    shifted = s.copy()
    shifted.h0 = s.h0 + 3.0
    assert contact_hamiltonian(shifted, model, model.log_partition, kin) - h == pytest.approx(3.0, abs=1e-12)
    flipped = s.copy()
    flipped.p = -s.p
    assert abs(contact_hamiltonian(flipped, model, model.log_partition, kin) - h) <= 1e-14


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=4),
       st.lists(st.floats(0.1, 10), min_size=4, max_size=4))
def test_kinetic_nonnegative_quadratic(p, m):
    kin = EuclideanKinetic(m[:len(p)])
    p = np.array(p)
    assert kin.energy(p) - kin.half_log_det >= 0.0
    assert kin.quadratic(p) == pytest.approx(2 * (kin.energy(p) - kin.half_log_det), rel=1e-12, abs=1e-12)
