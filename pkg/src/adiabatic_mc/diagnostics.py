"""Oracle-backed diagnostics: KS tests, KL quadrature, log Z error curves, equilibrium profiles."""
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .csvfmt import fmt

__all__ = [
    "KS_CRITICAL",
    "KsReport",
    "ks_statistic",
    "kl_quadrature",
    "logz_error_curve",
    "equilibrium_profile",
    "annealing_profile",
    "tempering_profile",
    "write_logz_csv",
]

# asymptotic Kolmogorov critical values c(alpha); the threshold is c / sqrt(N)
KS_CRITICAL = {0.05: 1.358, 0.01: 1.628}


@dataclass(frozen=True)
class KsReport:
    statistic: float
    n: int
    critical_5: float
    critical_1: float

    @property
    def pass_5(self):
        return self.statistic <= self.critical_5

    @property
    def pass_1(self):
        return self.statistic <= self.critical_1

    def passes(self, level=0.01):
        return self.statistic <= KS_CRITICAL[level] / math.sqrt(self.n)


def ks_statistic(samples, cdf):
    """One-sample Kolmogorov-Smirnov distance between ``samples`` and ``cdf``."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise ValueError("ks_statistic needs at least one sample")
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    d = max(np.max(i / n - f), np.max(f - (i - 1) / n))
    root = math.sqrt(n)
    return KsReport(float(min(max(d, 0.0), 1.0)), n, KS_CRITICAL[0.05] / root,
                    KS_CRITICAL[0.01] / root)


def kl_quadrature(beta, beta2, model, tol=1e-10):
    """KL(pi_beta || pi_beta2) by adaptive quadrature over the unconstrained coordinate.

    The line is cut at the mode of pi_beta and at multiples of its approximate
    width, so every piece is smooth and well resolved; the pieces carry
    absolute error estimates of at most 1e-10 each.
    """
    log_z, log_z2 = float(model.log_partition(beta)), float(model.log_partition(beta2))

    def integrand(x):
        q = np.array([x])
        vb, dv = model.v_base(q), model.delta_v(q)
        lp = -(vb + beta * dv) - log_z
        lp2 = -(vb + beta2 * dv) - log_z2
        return math.exp(lp) * (lp - lp2)

    alpha, beta_ = model.intermediate_params(beta)
    mode = math.log(alpha / beta_)
    scale = math.sqrt(1.0 / alpha + 1.0 / beta_)
    cuts = [mode + k * scale for k in (-40, -12, -4, -1, 0, 1, 4, 12, 40)]
    pieces = []
    for lo, hi in zip([-np.inf] + cuts, cuts + [np.inf]):
        val, err = integrate.quad(integrand, lo, hi, epsabs=tol, epsrel=tol, limit=400)
        if not np.isfinite(val) or err > 1e-10:
            raise ArithmeticError(f"KL quadrature did not converge for beta={beta}, "
                                  f"beta'={beta2}: error estimate {err:.3g}")
        pieces.append(val)
    return float(sum(pieces))


def logz_error_curve(trace, model):
    """Signed error of the level-set log Z estimate along a trace.

    Returns an array of rows (beta, estimate - analytic).
    """
    if len(trace) == 0:
        raise ValueError("empty trace")
    beta = np.clip(trace.beta, 0.0, 1.0)
    err = trace.logz_est - np.asarray(model.log_partition(beta))
    return np.column_stack([trace.beta, err])


def equilibrium_profile(states_by_knot, betas, model, min_replicas=30):
    """Cross-replica KS report at every knot against the exact intermediate CDF.

    ``states_by_knot`` is a sequence of 1-d sample arrays aligned with ``betas``.
    """
    reports = []
    for x, b in zip(states_by_knot, betas):
        x = np.asarray(x, dtype=float)
        if x.size < min_replicas:
            raise ValueError(f"knot beta={b} has {x.size} replicas; need at least {min_replicas}")
        reports.append(ks_statistic(x, lambda z, b=b: model.intermediate_cdf(b, z)))
    return reports


def annealing_profile(trace, model, min_replicas=30):
    """Per-knot KS reports for the replicas of an :class:`AnnealingTrace`."""
    states = [trace.states_at(i) for i in range(trace.knots.size)]
    return equilibrium_profile(states, trace.knots, model, min_replicas)


def tempering_profile(trace, model, burn_in=0.5, thin=20, min_replicas=30):
    """Per-knot KS reports for pooled tempering samples.

    The first ``burn_in`` fraction of iterations is discarded and every
    ``thin``-th iteration kept, which removes the start-up transient and most
    of the within-chain correlation. Knots with fewer than ``min_replicas``
    retained samples report ``None``.
    """
    start = int(burn_in * trace.knot.shape[1])
    k = trace.knot[:, start::thin, 0]
    q = trace.q[:, start::thin, 0]
    out = []
    for i, b in enumerate(trace.knots):
        x = q[k == i]
        out.append(None if x.size < min_replicas else
                   ks_statistic(x, lambda z, b=b: model.intermediate_cdf(b, z)))
    return out


def write_logz_csv(path, betas, analytic, estimate):
    """Write ``beta,logZ_analytic,logZ_estimate,error``."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("beta,logZ_analytic,logZ_estimate,error\n")
        for b, a, e in zip(betas, analytic, estimate):
            fh.write(f"{fmt(b)},{fmt(a)},{fmt(e)},{fmt(e - a)}\n")
