"""Simulated annealing and simulated tempering over fixed temperature schedules.

Both samplers use one-dimensional random walk Metropolis (RWM) kernels whose
proposal scales are tuned once per knot and then held fixed. All samplers
are vectorized over a leading replica/chain axis.
"""
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .csvfmt import fmt
from .model import check_beta

__all__ = [
    "Schedule",
    "RwmKernel",
    "TuningError",
    "PartitionError",
    "AnnealingTrace",
    "TemperingTrace",
    "even_partition",
    "constant_kl_partition",
    "neighbor_kl",
    "rwm_transition",
    "tune_rwm_scale",
    "tune_schedule",
    "simulated_annealing",
    "simulated_tempering",
    "exchange_log_accept",
    "exchange_transition",
]


class TuningError(RuntimeError):
    pass


class PartitionError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Schedule:
    """Strictly increasing temperatures from exactly 0 to exactly 1."""

    knots: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        if k.ndim != 1 or k.size < 2:
            raise ValueError("a schedule needs at least the two knots 0 and 1")
        if k[0] != 0.0 or k[-1] != 1.0:
            raise ValueError(f"schedule must start at 0 and end at 1, got {k[0]} and {k[-1]}")
        if not np.all(np.diff(k) > 0):
            raise ValueError("schedule knots must be strictly increasing")
        k.setflags(write=False)
        object.__setattr__(self, "knots", k)

    @property
    def intervals(self):
        return self.knots.size - 1

    def __len__(self):
        return self.knots.size

    def to_csv(self, path, model=None):
        """Write ``index,beta,kl_to_next``; the last row has an empty KL field."""
        kl = neighbor_kl(self, model) if model is not None else np.full(self.intervals, np.nan)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("index,beta,kl_to_next\n")
            for i, b in enumerate(self.knots):
                tail = fmt(kl[i]) if i < self.intervals else ""
                fh.write(f"{i},{fmt(b)},{tail}\n")


def even_partition(m):
    m = int(m)
    if m < 1:
        raise ValueError(f"a partition needs at least one interval, got {m}")
    knots = np.arange(m + 1) / m
    return Schedule(knots)


def neighbor_kl(schedule, model):
    """KL(pi_i || pi_{i+1}) for each consecutive pair of knots."""
    k = schedule.knots
    return np.asarray(model.kl_neighbor(k[:-1], k[1:]), dtype=float)


def _advance(model, beta, c):
    """Smallest beta' in (beta, 1] with KL(beta || beta') = c, or 1 if unreachable.

    KL(beta || .) increases monotonically to the right of beta, so the root
    is bracketed by (beta, 1].
    """
    if model.kl_neighbor(beta, 1.0) <= c:
        return 1.0
    return brentq(lambda b2: model.kl_neighbor(beta, b2) - c, beta, 1.0,
                  xtol=1e-15, rtol=4 * np.finfo(float).eps)


def _walk(model, m, c):
    knots = [0.0]
    for _ in range(m - 1):
        knots.append(_advance(model, knots[-1], c))
        if knots[-1] == 1.0:
            break
    return knots


def constant_kl_partition(m, model, rtol=0.01):
    """Knots with equal KL divergence between neighbours.

    The common value c is found by an outer root search on log c; for each
    trial c the knots are advanced one at a time by an inner root search.
    The result is a pure function of (m, model).
    """
    m = int(m)
    if m < 1:
        raise ValueError(f"a partition needs at least one interval, got {m}")
    if m == 1:
        return Schedule(np.array([0.0, 1.0]))
    total = float(model.kl_neighbor(0.0, 1.0))

    def excess(log_c):
        # positive when c is too small: the last interval is wider than c
        c = np.exp(log_c)
        knots = _walk(model, m, c)
        if knots[-1] == 1.0:
            return -c
        return float(model.kl_neighbor(knots[-1], 1.0)) - c

    lo, hi = np.log(total) - 60.0, np.log(total)
    if not (excess(lo) > 0 > excess(hi)):
        raise PartitionError(f"could not bracket the common KL value for m={m} "
                             f"in [{np.exp(lo):.3g}, {np.exp(hi):.3g}]")
    log_c = brentq(excess, lo, hi, xtol=1e-13)
    knots = _walk(model, m, np.exp(log_c))
    schedule = Schedule(np.array(knots[:m] + [1.0]))
    kl = neighbor_kl(schedule, model)
    spread = np.max(np.abs(kl / kl.mean() - 1.0))
    if schedule.intervals != m or spread > rtol:
        raise PartitionError(f"constant-KL partition did not converge: {schedule.intervals} "
                             f"intervals, relative KL spread {spread:.3g}")
    return schedule


# -- random walk Metropolis -------------------------------------------------------

@dataclass(frozen=True)
class RwmKernel:
    """Gaussian random-walk proposal of scale ``scale`` targeting pi_beta.

    ``beta`` and ``scale`` may be arrays matching a leading chain axis.
    """

    model: object
    beta: object
    scale: object

    def __post_init__(self):
        if not np.all(np.asarray(self.scale) > 0):
            raise ValueError(f"proposal scale must be positive, got {self.scale!r}")
        check_beta(self.beta)


def rwm_transition(q, kernel, rng):
    """One RWM step in the unconstrained coordinate; returns ``(q_new, accepted)``."""
    q = np.asarray(q, dtype=float)
    scale = np.asarray(kernel.scale, dtype=float)[..., None]
    beta = np.asarray(kernel.beta, dtype=float)
    prop = q + scale * rng.standard_normal(q.shape)
    model = kernel.model
    log_a = model.potential(q, beta) - model.potential(prop, beta)
    log_u = np.log(rng.uniform(size=q.shape[:-1]))
    accepted = log_u < log_a
    return np.where(accepted[..., None], prop, q), accepted


def _initial_draw(model, beta, rng):
    beta = np.asarray(beta, dtype=float)
    if hasattr(model, "sample_intermediate"):
        return model.sample_intermediate(beta, rng, beta.shape)
    return np.zeros(beta.shape + (model.dim,))


def tune_rwm_scale(beta, model, rng, target_accept=0.44, n_adapt=2000, window=500,
                   tol=0.05, max_restarts=10, initial_scale=1.0):
    """Tune the RWM scale at one or more temperatures by Robbins-Monro on log scale.

    Each attempt runs ``n_adapt`` adapting transitions; it succeeds when the
    acceptance rate over the last ``window`` of them is within ``tol`` of
    the target. Failing temperatures are restarted from their current scale.
    """
    if not 0 < target_accept < 1:
        raise ValueError(f"target_accept must lie in (0, 1), got {target_accept}")
    beta = np.asarray(check_beta(beta), dtype=float)
    scalar = beta.ndim == 0
    beta = np.atleast_1d(beta)
    log_s = np.full(beta.shape, np.log(initial_scale))
    q = _initial_draw(model, beta, rng)
    todo = np.ones(beta.shape, dtype=bool)
    for _ in range(max_restarts):
        idx = np.flatnonzero(todo)
        b, ls, qq = beta[idx], log_s[idx], q[idx]
        hits = np.zeros(idx.size)
        for t in range(n_adapt):
            qq, acc = rwm_transition(qq, RwmKernel(model, b, np.exp(ls)), rng)
            ls = ls + (acc - target_accept) / (t + 1.0) ** 0.6
            if t >= n_adapt - window:
                hits += acc
        log_s[idx], q[idx] = ls, qq
        ok = np.abs(hits / window - target_accept) <= tol
        todo[idx[ok]] = False
        if not todo.any():
            break
    if todo.any():
        raise TuningError(f"RWM tuning did not reach acceptance {target_accept}+/-{tol} "
                          f"at beta={beta[todo].tolist()} after {max_restarts} attempts")
    scales = np.exp(log_s)
    return float(scales[0]) if scalar else scales


def tune_schedule(schedule, model, rng, target_accept=0.44):
    """Per-knot RWM scales for a schedule, tuned once and reused by all replicas."""
    return tune_rwm_scale(schedule.knots, model, rng, target_accept=target_accept)


# -- simulated annealing -------------------------------------------------------------

@dataclass
class AnnealingTrace:
    """States of every replica after the RWM transitions at each knot.

    ``q`` has shape (replicas, knots, dim) and ``accepted`` shape
    (replicas, knots, rwm_per_knot).
    """

    knots: np.ndarray
    q: np.ndarray
    accepted: np.ndarray

    @property
    def replicas(self):
        return self.q.shape[0]

    def states_at(self, knot):
        return self.q[:, knot, 0] if self.q.shape[-1] == 1 else self.q[:, knot]

    def to_csv(self, path, replica=0):
        r = self.accepted.shape[2]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("knot,beta,q," + ",".join(f"accept{j + 1}" for j in range(r)) + "\n")
            for i, b in enumerate(self.knots):
                flags = ",".join(str(int(a)) for a in self.accepted[replica, i])
                fh.write(f"{i},{fmt(b)},{fmt(self.q[replica, i, 0])},{flags}\n")


def simulated_annealing(schedule, model, rng, rwm_per_knot=2, replicas=1, scales=None):
    """Push replicas through the schedule with ``rwm_per_knot`` RWM steps per knot.

    Replicas start from exact base draws. ``scales`` are per-knot proposal
    scales; they are tuned with ``rng`` when not supplied.
    """
    if rwm_per_knot < 1:
        raise ValueError(f"rwm_per_knot must be at least 1, got {rwm_per_knot}")
    if replicas < 1:
        raise ValueError(f"replicas must be at least 1, got {replicas}")
    knots = schedule.knots
    if scales is None:
        scales = tune_schedule(schedule, model, rng)
    scales = np.broadcast_to(np.asarray(scales, dtype=float), knots.shape)
    q = _initial_draw(model, np.zeros(replicas), rng)
    qs = np.empty((replicas, knots.size, q.shape[-1]))
    acc = np.empty((replicas, knots.size, rwm_per_knot), dtype=bool)
    for i, b in enumerate(knots):
        kernel = RwmKernel(model, b, scales[i])
        for j in range(rwm_per_knot):
            q, acc[:, i, j] = rwm_transition(q, kernel, rng)
        qs[:, i] = q
    return AnnealingTrace(knots.copy(), qs, acc)


# -- simulated tempering ---------------------------------------------------------

RWM_MOVE, TEMP_MOVE = 0, 1


@dataclass
class TemperingTrace:
    """Chain histories: for each iteration an RWM move then a temperature move.

    ``knot``, ``q`` (scalar coordinate for 1-d models) and ``accepted`` have
    shape (chains, iterations, 2); the last axis is the move type.
    """

    knots: np.ndarray
    knot: np.ndarray
    q: np.ndarray
    accepted: np.ndarray

    @property
    def chains(self):
        return self.knot.shape[0]

    def reach_fraction(self, target=None):
        """Fraction of chains that visited ``target`` (default: the beta = 1 knot)."""
        target = self.knots.size - 1 if target is None else target
        return float(np.mean(np.any(self.knot == target, axis=(1, 2))))

    def samples_at(self, knot):
        """Pooled states recorded at ``knot`` after RWM moves."""
        sel = self.knot[:, :, RWM_MOVE] == knot
        return self.q[:, :, RWM_MOVE][sel]

    def to_csv(self, path, chain=0):
        names = ("rwm", "temp")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("iter,knot,beta,q,move,accepted\n")
            for it in range(self.knot.shape[1]):
                for mv in (RWM_MOVE, TEMP_MOVE):
                    k = self.knot[chain, it, mv]
                    fh.write(f"{it},{k},{fmt(self.knots[k])},{fmt(self.q[chain, it, mv])},"
                             f"{names[mv]},{int(self.accepted[chain, it, mv])}\n")


def _temperature_proposal(i, m, rng):
    """Neighbour proposal on knot indices 0..m and its log Hastings correction."""
    step = np.where(rng.uniform(size=i.shape) < 0.5, -1, 1)
    j = np.where(i == 0, 1, np.where(i == m, m - 1, i + step))
    if m == 1:
        return j, np.zeros(i.shape)
    fwd = np.where((i == 0) | (i == m), 0.0, np.log(0.5))
    rev = np.where((j == 0) | (j == m), 0.0, np.log(0.5))
    return j, rev - fwd


def simulated_tempering(schedule, model, rng, n_warmup=25, n_iter=2000, chains=1,
                        scales=None):
    """Single-chain simulated tempering with normalized intermediate densities.

    After ``n_warmup`` RWM steps at beta = 0 each iteration applies one RWM
    step at the current knot and one proposal to a neighbouring knot,
    accepted using the analytic log partition function of ``model``.
    """
    if n_warmup < 0 or n_iter < 1 or chains < 1:
        raise ValueError("need n_warmup >= 0, n_iter >= 1 and chains >= 1")
    knots = schedule.knots
    m = knots.size - 1
    if scales is None:
        scales = tune_schedule(schedule, model, rng)
    scales = np.broadcast_to(np.asarray(scales, dtype=float), knots.shape)
    log_z = np.asarray(model.log_partition(knots), dtype=float)

    q = _initial_draw(model, np.zeros(chains), rng)
    for _ in range(n_warmup):
        q, _ = rwm_transition(q, RwmKernel(model, 0.0, scales[0]), rng)
    i = np.zeros(chains, dtype=int)
    knot_rec = np.empty((chains, n_iter, 2), dtype=int)
    q_rec = np.empty((chains, n_iter, 2))
    acc_rec = np.empty((chains, n_iter, 2), dtype=bool)
    for it in range(n_iter):
        q, acc = rwm_transition(q, RwmKernel(model, knots[i], scales[i]), rng)
        knot_rec[:, it, RWM_MOVE], q_rec[:, it, RWM_MOVE], acc_rec[:, it, RWM_MOVE] = i, q[:, 0], acc

        j, log_corr = _temperature_proposal(i, m, rng)
        dv = model.delta_v(q)
        log_a = -(knots[j] - knots[i]) * dv - (log_z[j] - log_z[i]) + log_corr
        acc = np.log(rng.uniform(size=chains)) < log_a
        i = np.where(acc, j, i)
        knot_rec[:, it, TEMP_MOVE], q_rec[:, it, TEMP_MOVE], acc_rec[:, it, TEMP_MOVE] = i, q[:, 0], acc
    return TemperingTrace(knots.copy(), knot_rec, q_rec, acc_rec)


# -- two-state exchange -------------------------------------------------------------

def exchange_log_accept(q1, q2, beta1, beta2, model):
    """Log acceptance for swapping states between temperatures beta1 and beta2.

    Normalizing constants cancel, so no partition function is needed.
    """
    return (np.asarray(beta1) - np.asarray(beta2)) * (model.delta_v(q1) - model.delta_v(q2))


def exchange_transition(q1, q2, beta1, beta2, model, rng):
    """Paired-chain mode: propose exchanging the states of two replicas.

    Returns ``(q1_new, q2_new, accepted)``.
    """
    q1, q2 = np.asarray(q1, dtype=float), np.asarray(q2, dtype=float)
    log_a = exchange_log_accept(q1, q2, beta1, beta2, model)
    accepted = np.log(rng.uniform(size=np.shape(log_a))) < log_a
    swap = accepted[..., None]
    return np.where(swap, q2, q1), np.where(swap, q1, q2), accepted
