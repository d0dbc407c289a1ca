"""Fixed-temperature Hamiltonian Monte Carlo on pi_beta.

Everything here is vectorized over a leading chain axis: positions have
shape (chains, dim) and each chain carries its own inverse temperature,
integration time and accept/reject decision.
"""
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "HmcConfig",
    "DivergenceError",
    "leapfrog",
    "hmc_transition",
    "estimate_expectation",
]


class DivergenceError(ArithmeticError):
    """Raised when a trajectory diverges; ``chains`` lists the offending chain indices."""

    def __init__(self, message, chains=()):
        super().__init__(message)
        self.chains = list(chains)


@dataclass(frozen=True)
class HmcConfig:
    step_size: float = 0.01
    tau_max: float = 2 * math.pi
    divergence_threshold: float = 1000.0

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if not self.tau_max > 0:
            raise ValueError(f"tau_max must be positive, got {self.tau_max}")


def _leapfrog(q, p, eps, grad_potential, kin):
    p = p - 0.5 * eps * grad_potential(q)
    q = q + eps * kin.grad(p)
    p = p - 0.5 * eps * grad_potential(q)
    return q, p


def leapfrog(q, p, eps, grad_potential, kin):
    """One half-kick / drift / half-kick step for the potential with gradient ``grad_potential``."""
    if eps == 0:
        raise ValueError("leapfrog step size must be nonzero")
    with np.errstate(all="ignore"):
        q, p = _leapfrog(q, p, eps, grad_potential, kin)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
        raise DivergenceError("non-finite state in leapfrog step")
    return q, p


def hmc_transition(q, beta, model, kin, config, rng, n_steps=None):
    """One HMC transition per chain.

    Returns ``(q_new, accepted, delta_h, diverged)``. ``delta_h`` is
    H_final - H_initial; a chain with |delta_h| above the divergence
    threshold, or with a non-finite trajectory, is rejected and flagged.
    ``n_steps`` overrides the random step count (per chain or scalar).
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    nchains = q.shape[0]
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (nchains,))
    eps = config.step_size

    p0 = kin.sample(rng, (nchains,))
    if n_steps is None:
        tau = rng.uniform(0.0, config.tau_max, size=nchains)
        n_steps = np.ceil(tau / eps).astype(int)
    else:
        n_steps = np.broadcast_to(np.asarray(n_steps, dtype=int), (nchains,))
    h_init = kin.energy(p0) + model.potential(q, beta)

    # All chains step together; finished or diverged chains are frozen by masking.
    qn, pn = q.copy(), p0.copy()
    finite = np.ones(nchains, dtype=bool)
    half = 0.5 * eps
    with np.errstate(all="ignore"):
        g = model.grad_potential(qn, beta)
        for step in range(int(n_steps.max(initial=0))):
            act = (n_steps > step) & finite
            if not act.any():
                break
            p_half = pn - half * g
            q_new = qn + eps * kin.grad(p_half)
            g_new = model.grad_potential(q_new, beta)
            p_new = p_half - half * g_new
            ok = np.all(np.isfinite(q_new), axis=-1) & np.all(np.isfinite(p_new), axis=-1)
            finite &= ok | ~act
            take = (act & ok)[:, None]
            qn = np.where(take, q_new, qn)
            pn = np.where(take, p_new, pn)
            g = np.where(take, g_new, g)

    with np.errstate(invalid="ignore", over="ignore"):
        h_final = kin.energy(pn) + model.potential(qn, beta)
    delta_h = np.where(finite, h_final - h_init, np.inf)
    diverged = ~finite | ~(np.abs(delta_h) <= config.divergence_threshold)
    log_u = np.log(rng.uniform(size=nchains))
    accepted = ~diverged & (log_u < -delta_h)
    q_new = np.where(accepted[:, None], qn, q)
    return q_new, accepted, delta_h, diverged


def estimate_expectation(q_seed, beta, model, kin, config, warmup, draws, rng,
                         on_divergence="raise"):
    """Mean and naive standard error of dV under pi_beta, one HMC chain per seed.

    Returns ``(mean, stderr, q_last)``. The standard error ignores
    autocorrelation. ``on_divergence`` is ``"raise"`` or ``"ignore"``.
    """
    if draws < 1:
        raise ValueError("draws must be at least 1")
    q = np.atleast_2d(np.asarray(q_seed, dtype=float)).copy()
    total = np.zeros(q.shape[0])
    total_sq = np.zeros(q.shape[0])
    for i in range(warmup + draws):
        q, _, _, diverged = hmc_transition(q, beta, model, kin, config, rng)
        if on_divergence == "raise" and diverged.any():
            bad = np.flatnonzero(diverged).tolist()
            raise DivergenceError(f"HMC divergence in chains {bad} at transition {i}", bad)
        if i >= warmup:
            dv = model.delta_v(q)
            total += dv
            total_sq += dv * dv
    mean = total / draws
    if draws > 1:
        var = np.maximum(total_sq / draws - mean * mean, 0.0) * draws / (draws - 1)
        stderr = np.sqrt(var / draws)
    else:
        stderr = np.full_like(mean, np.nan)
    return mean, stderr, q
