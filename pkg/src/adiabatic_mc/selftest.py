"""Fast invariant checks run by ``adiabatic-mc selftest``."""
import math

import numpy as np

from .contact import ContactConfig, contact_step, cooling_transition, set_h0
from .diagnostics import kl_quadrature
from .expectations import AnalyticProvider
from .hmc import leapfrog
from .model import BetaBinomialModel
from .phase import ContactState, EuclideanKinetic, RngStream
from .specialfn import digamma, lgamma, reg_inc_beta


def _check_gradients(model, rng):
    q = rng.normal(0.0, 3.0, size=(20, 1))
    h = 1e-5
    worst = 0.0
    for f, g in ((model.v_base, model.grad_v_base), (model.delta_v, model.grad_delta_v)):
        fd = (f(q + h) - f(q - h)) / (2 * h)
        worst = max(worst, np.max(np.abs(fd - g(q)[:, 0]) / np.maximum(1.0, np.abs(fd))))
    return worst <= 1e-6, f"max relative gradient error {worst:.2e}"


def _check_special():
    errs = [
        abs(lgamma(0.5) - 0.5 * math.log(math.pi)),
        abs(lgamma(10.0) - math.log(362880.0)) / math.log(362880.0),
        abs(digamma(1.0) + 0.5772156649015329),
        abs(reg_inc_beta(0.3, 1.0, 1.0) - 0.3),
        abs(reg_inc_beta(0.2, 2.0, 3.0) - 0.1808),
    ]
    worst = max(errs)
    return worst <= 1e-12, f"max special-function error {worst:.2e}"


def _check_leapfrog(model, kin, rng):
    q, p = rng.normal(size=(5, 1)), rng.normal(size=(5, 1))
    grad = lambda x: model.grad_potential(x, 0.5)
    q1, p1 = leapfrog(q, p, 0.01, grad, kin)
    q2, p2 = leapfrog(q1, p1, -0.01, grad, kin)
    err = max(np.max(np.abs(q2 - q)), np.max(np.abs(p2 - p)))
    return err <= 1e-12, f"leapfrog round trip {err:.2e}"


def _check_contact_reversal(model, kin, provider, rng):
    state = ContactState(model.sample_intermediate(0.3, rng, 5), kin.sample(rng, (5,)), 0.3)
    fwd = contact_step(state, 0.01, "cooling", kin, model, provider, coordinate="logistic")
    back = contact_step(fwd, 0.01, "heating", kin, model, provider, coordinate="logistic")
    err = np.max(np.abs(back.as_vector() - state.as_vector()) / (1.0 + np.abs(state.as_vector())))
    return err <= 1e-10, f"contact step round trip {err:.2e}"


def _check_order(model, kin, provider, rng):
    q, p = model.sample_base(rng), kin.sample(rng)
    state = set_h0(ContactState(q, p, 0.0), kin, model)
    errs = []
    for eps in (0.04, 0.02):
        _, trace = cooling_transition(state, ContactConfig(step_size=eps), kin, model, provider)
        errs.append(np.max(np.abs(trace.hc_residual)))
    ratio = errs[0] / errs[1]
    return 3.0 <= ratio <= 5.0, f"residual ratio for halved step {ratio:.3f}"


def _check_kl(model):
    worst = 0.0
    for b, b2 in ((0.0, 0.1), (0.2, 0.3), (0.9, 0.5)):
        worst = max(worst, abs(kl_quadrature(b, b2, model) - model.kl_neighbor(b, b2)))
    return worst <= 1e-6, f"KL analytic vs quadrature {worst:.2e}"


def run_selftest(seed=0, out=print):
    model = BetaBinomialModel()
    kin = EuclideanKinetic()
    provider = AnalyticProvider(model)
    rng = RngStream(seed).generator()
    checks = [
        ("gradients", lambda: _check_gradients(model, rng)),
        ("special functions", _check_special),
        ("leapfrog reversibility", lambda: _check_leapfrog(model, kin, rng)),
        ("contact step reversibility", lambda: _check_contact_reversal(model, kin, provider, rng)),
        ("second order", lambda: _check_order(model, kin, provider, rng)),
        ("KL oracle", lambda: _check_kl(model)),
    ]
    ok = True
    for name, check in checks:
        passed, detail = check()
        ok &= bool(passed)
        out(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    return ok
