"""Target models: a base potential V_B and a bridging potential dV.

The intermediate family is pi_beta ∝ exp(-V_B - beta * dV). Positions are
arrays whose last axis has length ``dim``; leading axes index independent
chains and are carried through every method.
"""
from abc import ABC, abstractmethod

import numpy as np

from .specialfn import (
    DomainError,
    digamma,
    lgamma,
    log_beta,
    logistic,
    reg_inc_beta,
    softplus,
)

__all__ = ["TargetModel", "BetaBinomialModel", "check_beta"]


def check_beta(beta):
    b = np.asarray(beta, dtype=float)
    if np.any(~((b >= 0.0) & (b <= 1.0))):
        raise DomainError(f"inverse temperature must lie in [0, 1], got {beta!r}")
    return b


class TargetModel(ABC):
    """A statistical problem split into a base potential and a bridging potential.

    ``delta_v`` must be the *normalized* negative log density ratio, so that
    ``exp(-delta_v)`` integrated against the base distribution is Z(1).
    Subclasses document which constant they absorb to achieve this.
    """

    dim: int

    @abstractmethod
    def v_base(self, q):
        ...

    @abstractmethod
    def grad_v_base(self, q):
        ...

    @abstractmethod
    def delta_v(self, q):
        ...

    @abstractmethod
    def grad_delta_v(self, q):
        ...

    def potential(self, q, beta):
        """V_beta(q) = V_B(q) + beta * dV(q)."""
        return self.v_base(q) + np.asarray(beta) * self.delta_v(q)

    def grad_potential(self, q, beta):
        return self.grad_v_base(q) + np.asarray(beta)[..., None] * self.grad_delta_v(q)


class BetaBinomialModel(TargetModel):
    """Beta(a, b) base measure bridged to its Binomial(k | n) posterior.

    The sampler works in the unconstrained coordinate x = logit(q), so the
    Jacobian q(1 - q) is folded into ``v_base``. ``delta_v`` is the complete
    negative log binomial pmf, binomial coefficient included, which makes
    log Z(0) = 0 and gives the log-partition readout its absolute level.
    """

    def __init__(self, a=9.0, b=0.75, k=115, n=550):
        if not (a > 0 and b > 0):
            raise ValueError(f"Beta shapes must be positive, got a={a}, b={b}")
        if int(n) != n or int(k) != k or n < 1 or not 0 <= k <= n:
            raise ValueError(f"need integers 0 <= k <= n with n >= 1, got k={k}, n={n}")
        self.a = float(a)
        self.b = float(b)
        self.k = int(k)
        self.n = int(n)
        self.dim = 1
        self._log_choose = lgamma(n + 1.0) - lgamma(k + 1.0) - lgamma(n - k + 1.0)
        self._log_beta_ab = log_beta(self.a, self.b)

    def __repr__(self):
        return f"BetaBinomialModel(a={self.a}, b={self.b}, k={self.k}, n={self.n})"

    # -- potentials ------------------------------------------------------
    @staticmethod
    def _logs(q):
        x = np.asarray(q, dtype=float)[..., 0]
        # log q_raw and log(1 - q_raw) for q_raw = logistic(x)
        return -softplus(-x), -softplus(x)

    @staticmethod
    def _u(q):
        return np.asarray(logistic(np.asarray(q, dtype=float)[..., 0]))

    def v_base(self, q):
        log_q, log_1mq = self._logs(q)
        return -(self.a * log_q + self.b * log_1mq) + self._log_beta_ab

    def grad_v_base(self, q):
        u = self._u(q)
        return (-(self.a * (1.0 - u) - self.b * u))[..., None]

    def delta_v(self, q):
        log_q, log_1mq = self._logs(q)
        return -(self._log_choose + self.k * log_q + (self.n - self.k) * log_1mq)

    def grad_delta_v(self, q):
        u = self._u(q)
        return (-(self.k * (1.0 - u) - (self.n - self.k) * u))[..., None]

    def grad_potential(self, q, beta):
        u = self._u(q)
        beta = np.asarray(beta)
        ka = self.a + beta * self.k
        kb = self.b + beta * (self.n - self.k)
        return (-(ka * (1.0 - u) - kb * u))[..., None]

    # -- analytic thermodynamics ------------------------------------------
    def intermediate_params(self, beta):
        """Beta shape parameters of pi_beta in the original q_raw coordinate."""
        b = check_beta(beta)
        return b * self.k + self.a, b * (self.n - self.k) + self.b

    def log_partition(self, beta):
        """log Z(beta) with the base normalized, so log Z(0) = 0."""
        b = check_beta(beta)
        alpha, beta_ = self.intermediate_params(b)
        out = b * self._log_choose + np.asarray(log_beta(alpha, beta_)) - self._log_beta_ab
        return out if np.ndim(out) else float(out)

    def dlogZ_dbeta(self, beta):
        b = check_beta(beta)
        alpha, beta_ = self.intermediate_params(b)
        psi = np.asarray(digamma(np.stack(np.broadcast_arrays(alpha, beta_, alpha + beta_))))
        out = (self._log_choose + self.k * psi[0] + (self.n - self.k) * psi[1]
               - self.n * psi[2])
        return out if np.ndim(out) else float(out)

    def expected_delta_v(self, beta):
        """E_{pi_beta}[dV] = -d log Z / d beta."""
        out = -np.asarray(self.dlogZ_dbeta(beta))
        return out if np.ndim(out) else float(out)

    def kl_neighbor(self, beta, beta2):
        """KL(pi_beta || pi_beta2) from the closed-form partition function."""
        out = ((np.asarray(beta2) - np.asarray(beta)) * np.asarray(self.expected_delta_v(beta))
               + np.asarray(self.log_partition(beta2)) - np.asarray(self.log_partition(beta)))
        return out if np.ndim(out) else float(out)

    def log_density(self, beta, q):
        """Normalized log density of pi_beta in the x coordinate."""
        return -self.potential(q, beta) - np.asarray(self.log_partition(beta))

    def intermediate_cdf(self, beta, x):
        """CDF of pi_beta at the unconstrained coordinate ``x``."""
        alpha, beta_ = self.intermediate_params(beta)
        return reg_inc_beta(logistic(x), alpha, beta_)

    def sample_intermediate(self, beta, rng, size=None):
        """Exact draws from pi_beta, returned with a trailing ``dim`` axis.

        Uses x = log G1 - log G2 with independent gamma variates, which never
        touches the endpoints of the unit interval.
        """
        alpha, beta_ = self.intermediate_params(beta)
        g1 = rng.standard_gamma(alpha, size=size)
        g2 = rng.standard_gamma(beta_, size=size)
        return (np.log(g1) - np.log(g2))[..., None]

    def sample_base(self, rng, size=None):
        return self.sample_intermediate(0.0, rng, size)
