"""Adiabatic transitions: splitting integrator for the contact Hamiltonian flow.

The contact Hamiltonian

    H_C = T(p) + V_B(q) + beta * dV(q) + log Z(beta) + h0

is split into H1 = T, H2 = V_B and H3 = beta * dV + log Z, each of whose
flows is solved exactly, and composed symmetrically:

    H1(t/2) . H2(t/2) . H3(t) . H2(t/2) . H1(t/2)

Cooling (beta: 0 -> 1) runs with negative time, heating with positive time.

Two parametrizations of the temperature are available:

``"logistic"`` (default)
    The contact coordinate is gamma with beta = logistic(gamma). The Reeb
    update moves gamma and the Liouville rate carries the chain factor
    beta * (1 - beta). Endpoints beta = 0 and 1 sit at gamma = -/+ gamma_bound.
``"beta"``
    beta itself is the contact coordinate, as in the printed pseudocode. For
    strongly informative bridging potentials this flow is very stiff near
    beta = 0 and needs much smaller steps.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np

from .csvfmt import fmt
from .phase import ContactState
from .specialfn import logistic, logit

__all__ = [
    "ContactConfig",
    "AdiabaticTrace",
    "StallError",
    "MetastabilityWarning",
    "MetropolisOutcome",
    "flow_h1",
    "flow_h2",
    "flow_h3",
    "contact_step",
    "integrate",
    "set_h0",
    "resample_momentum_adiabatic",
    "log_partition_estimate",
    "cooling_transition",
    "heating_transition",
    "adiabatic_metropolis_transition",
]

COOLING = "cooling"
HEATING = "heating"


class StallError(RuntimeError):
    """A transition failed to reach its terminal temperature.

    Carries the partial ``state``, the ``traces`` recorded so far and the
    boolean ``stalled`` mask over chains.
    """

    def __init__(self, message, state=None, traces=None, stalled=None):
        super().__init__(message)
        self.state = state
        self.traces = traces
        self.stalled = stalled


class MetastabilityWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class ContactConfig:
    step_size: float = 0.01
    h3_mode: str = "exact"
    coordinate: str = "logistic"
    resample_interval: int = None
    max_steps: int = 10 ** 6
    stall_window: int = 1000
    stall_tol: float = 1e-8
    endpoint_tol: float = 1e-12

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.h3_mode not in ("exact", "euler"):
            raise ValueError(f"h3_mode must be 'exact' or 'euler', got {self.h3_mode!r}")
        if self.coordinate not in ("logistic", "beta"):
            raise ValueError(f"coordinate must be 'logistic' or 'beta', got {self.coordinate!r}")
        if self.resample_interval is not None and self.resample_interval < 1:
            raise ValueError("resample_interval must be a positive integer or None")
        if self.max_steps < 1 or self.stall_window < 1:
            raise ValueError("max_steps and stall_window must be positive")
        if not 0 < self.endpoint_tol < 0.5:
            raise ValueError("endpoint_tol must lie in (0, 0.5)")

    @property
    def gamma_bound(self):
        return logit(1.0 - self.endpoint_tol)


# -- sub-flows --------------------------------------------------------------

_DEFAULT_BOUND = logit(1.0 - 1e-12)
_FINISH_TOL = 1e-9


def _gamma_of(state, bound=_DEFAULT_BOUND):
    """The logistic coordinate of a state; beta = 0 and 1 map to -/+ ``bound``."""
    if state.gamma is not None:
        return state.gamma
    b = np.clip(state.beta, 1e-300, 1.0 - 1e-16)
    return np.clip(np.asarray(logit(b)), -bound, bound)


def flow_h1(state, t, kin, coordinate="beta"):
    """Exact flow of H1 = T: drift q and move the contact coordinate by -t p^T M^-1 p."""
    rate = kin.quadratic(state.p)
    out = state.copy()
    out.q = state.q + t * kin.grad(state.p)
    if coordinate == "beta":
        out.beta = state.beta - t * rate
    else:
        out.gamma = _gamma_of(state) - t * rate
        out.beta = np.asarray(logistic(out.gamma), dtype=float)
    return out


def flow_h2(state, t, model):
    """Exact flow of H2 = V_B: a constant kick p -> p - t grad V_B(q)."""
    out = state.copy()
    out.p = state.p - t * model.grad_v_base(state.q)
    return out


def _h3_momentum(state, t, model, provider, mode, coordinate):
    e = np.asarray(provider(state.beta, state.q), dtype=float)
    c = model.delta_v(state.q) - e
    if coordinate == "logistic":
        g = _gamma_of(state)
        c = c * np.asarray(logistic(g)) * np.asarray(logistic(-g))
    force = -state.beta[..., None] * model.grad_delta_v(state.q)
    c = c[..., None]
    if mode == "euler":
        return state.p + t * force + t * c * state.p, e
    ct = c * t
    small = np.abs(ct) < 1e-6
    safe_c = np.where(small, 1.0, c)
    with np.errstate(over="ignore", invalid="ignore"):
        phi = np.where(small, t * (1.0 + 0.5 * ct), np.expm1(ct) / safe_c)
        p = np.exp(ct) * state.p + phi * force
    return p, e


def flow_h3(state, t, model, provider, mode="exact", coordinate="beta"):
    """Flow of H3 = beta dV + log Z at frozen (q, beta).

    With c = dV(q) - E[dV] and F = -beta grad dV(q) the momentum obeys
    dp/dt = F + c p. ``"exact"`` integrates this linear ODE in closed form,
    ``"euler"`` takes the single explicit step of the printed pseudocode.
    """
    out = state.copy()
    out.p, _ = _h3_momentum(state, t, model, provider, mode, coordinate)
    return out


def _step_arrays(q, p, beta, gamma, t, kin, model, provider, mode):
    """One splitting step on raw arrays; ``gamma`` is None in beta mode."""
    h = 0.5 * t
    rate = kin.quadratic(p)
    q = q + h * kin.grad(p)
    if gamma is None:
        beta = beta - h * rate
    else:
        gamma = gamma - h * rate
        beta = logistic(gamma)
    p = p - h * model.grad_v_base(q)

    e = np.asarray(provider(beta, q), dtype=float)
    c = model.delta_v(q) - e
    if gamma is not None:
        c = c * beta * logistic(-gamma)
    force = -beta[..., None] * model.grad_delta_v(q)
    c = c[..., None]
    if mode == "euler":
        p = p + t * force + t * c * p
    else:
        ct = c * t
        small = np.abs(ct) < 1e-6
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            phi = np.where(small, t * (1.0 + 0.5 * ct), np.expm1(ct) / c)
            p = np.exp(ct) * p + phi * force

    p = p - h * model.grad_v_base(q)
    rate = kin.quadratic(p)
    q = q + h * kin.grad(p)
    if gamma is None:
        beta = beta - h * rate
    else:
        gamma = gamma - h * rate
        beta = logistic(gamma)
    return q, p, np.asarray(beta, dtype=float), gamma, e


def _step(state, t, kin, model, provider, mode, coordinate):
    gamma = _gamma_of(state) if coordinate == "logistic" else None
    q, p, beta, gamma, e = _step_arrays(state.q, state.p, state.beta, gamma, t, kin, model,
                                        provider, mode)
    out = ContactState(q, p, beta, state.h0, gamma)
    return out, e


def _signed_time(eps, direction):
    if not eps > 0:
        raise ValueError(f"step size must be positive, got {eps}")
    if direction == COOLING:
        return -eps
    if direction == HEATING:
        return eps
    raise ValueError(f"direction must be 'cooling' or 'heating', got {direction!r}")


def contact_step(state, eps, direction, kin, model, provider, mode="exact",
                 coordinate="beta"):
    """One symmetric splitting step; cooling integrates backwards in time."""
    t = _signed_time(eps, direction)
    return _step(state, t, kin, model, provider, mode, coordinate)[0]


# -- level-set bookkeeping ------------------------------------------------------

def set_h0(state, kin, model, log_z=None):
    """Choose h0 so that the state lies on the zero level set of H_C.

    At beta = 0 the base is normalized and h0 = -(T + V_B). Elsewhere the
    caller must supply ``log_z`` = log Z(beta).
    """
    out = state.copy()
    if log_z is None:
        if np.any(np.abs(state.beta) > 1e-12):
            raise ValueError("set_h0 without log_z requires beta = 0")
        out.h0 = -(kin.energy(state.p) + model.v_base(state.q))
    else:
        out.h0 = -(kin.energy(state.p) + model.v_base(state.q)
                   + state.beta * model.delta_v(state.q) + np.asarray(log_z))
    return out


def resample_momentum_adiabatic(state, kin, rng, mask=None):
    """Refresh p from N(0, M) and add T_before - T_after to h0.

    ``mask`` restricts the refresh to selected chains of a batched state.
    """
    out = state.copy()
    p_new = kin.sample(rng, state.batch_shape)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        p_new = np.where(mask[..., None], p_new, state.p)
    out.h0 = state.h0 + kin.energy(state.p) - kin.energy(p_new)
    out.p = p_new
    return out


def log_partition_estimate(state, kin, model):
    """log Z(beta) read off the level set: -(T + V_B + beta dV + h0)."""
    return -(kin.energy(state.p) + model.v_base(state.q)
             + state.beta * model.delta_v(state.q) + state.h0)


# -- traces ---------------------------------------------------------------------

@dataclass
class AdiabaticTrace:
    """Per-step record of one trajectory."""

    step: np.ndarray
    beta: np.ndarray
    q: np.ndarray
    p: np.ndarray
    delta_v: np.ndarray
    e_beta: np.ndarray
    logz_est: np.ndarray
    hc_residual: np.ndarray
    direction: str = COOLING
    stalled: bool = False
    resample_steps: list = field(default_factory=list)

    def __len__(self):
        return len(self.step)

    def columns(self):
        dim = self.q.shape[1]
        qn = ["q"] if dim == 1 else [f"q{i}" for i in range(dim)]
        pn = ["p"] if dim == 1 else [f"p{i}" for i in range(dim)]
        return ["step", "beta", *qn, *pn, "delta_v", "e_beta", "logZ_est", "hc_residual"]

    def to_csv(self, path):
        table = np.column_stack([self.step, self.beta, self.q, self.p, self.delta_v,
                                 self.e_beta, self.logz_est, self.hc_residual])
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(f"# adiabatic {self.direction} trace; stalled={self.stalled}; "
                     f"resamples={len(self.resample_steps)}\n")
            fh.write(",".join(self.columns()) + "\n")
            for row in table:
                fh.write("%d," % row[0] + ",".join(fmt(v) for v in row[1:]) + "\n")


class _Recorder:
    """Collects batched per-step snapshots and splits them into per-chain traces."""

    def __init__(self, nchains, model, kin, log_partition):
        self.n = nchains
        self.model, self.kin, self.log_partition = model, kin, log_partition
        self.blocks = []

    def add(self, step, idx, q, p, beta, h0, e):
        e = np.broadcast_to(e, beta.shape)
        self.blocks.append((step, idx, beta, q, p, h0, e))

    def traces(self, direction, stalled, resamples):
        steps = np.concatenate([np.full(len(blk[1]), blk[0]) for blk in self.blocks])
        chain = np.concatenate([blk[1] for blk in self.blocks])
        beta, q, p, h0, e = (np.concatenate([blk[i] for blk in self.blocks]) for i in range(2, 7))
        dv = self.model.delta_v(q)
        est = -(self.kin.energy(p) + self.model.v_base(q) + beta * dv + h0)
        if self.log_partition is not None:
            res = np.asarray(self.log_partition(np.clip(beta, 0.0, 1.0))) - est
        else:
            res = np.full(dv.shape, np.nan)
        order = np.argsort(chain, kind="stable")
        bounds = np.searchsorted(chain[order], np.arange(self.n + 1))
        out = []
        for c in range(self.n):
            sel = order[bounds[c]:bounds[c + 1]]
            out.append(AdiabaticTrace(steps[sel].astype(int), beta[sel], q[sel], p[sel], dv[sel],
                                      e[sel], est[sel], res[sel], direction=direction,
                                      stalled=bool(stalled[c]), resample_steps=resamples[c]))
        return out


def _take(state, idx):
    return ContactState(state.q[idx], state.p[idx], state.beta[idx], state.h0[idx],
                        None if state.gamma is None else state.gamma[idx])


def _resample_arrays(p, h0, refresh, kin, rng):
    p_new = kin.sample(rng, (int(refresh.sum()),))
    p = p.copy()
    h0 = h0.copy()
    h0[refresh] += kin.energy(p[refresh]) - kin.energy(p_new)
    p[refresh] = p_new
    return p, h0


def _run(state, direction, config, kin, model, provider, rng, log_partition, record,
         n_steps=None):
    """Integrate every chain of a batched state.

    Without ``n_steps`` each chain runs until it reaches the terminal
    temperature, where beta is clamped to 0 or 1. With ``n_steps`` exactly
    that many steps are taken and nothing is clamped. Returns
    ``(state, traces, stalled)``; stalled chains are frozen where they stopped.
    """
    t = _signed_time(config.step_size, direction)
    start, target = (0.0, 1.0) if direction == COOLING else (1.0, 0.0)
    if config.resample_interval is not None and rng is None:
        raise ValueError("momentum resampling requires an rng")

    q = state.q.copy()
    p = state.p.copy()
    h0 = state.h0.copy()
    logistic_mode = config.coordinate == "logistic"
    bound = config.gamma_bound
    if n_steps is None:
        if np.any(np.abs(state.beta - start) > 1e-12):
            raise ValueError(f"{direction} transition must start at beta = {start}")
        beta = np.full(state.batch_shape, start)
        gamma = np.full(state.batch_shape, -bound if start == 0.0 else bound)
        if logistic_mode and state.gamma is not None:
            # keep the overshoot of a previous transition so that reversing it is exact
            beyond = state.gamma <= -bound if start == 0.0 else state.gamma >= bound
            gamma = np.where(beyond, state.gamma, gamma)
    else:
        beta = state.beta.copy()
        gamma = _gamma_of(state, bound).copy() if logistic_mode else None
    if not logistic_mode:
        gamma = None
    max_steps = config.max_steps if n_steps is None else n_steps

    def finished(b, g):
        if n_steps is not None:
            return np.zeros(b.shape, dtype=bool)
        if logistic_mode:
            lim = bound - _FINISH_TOL
            return g >= lim if direction == COOLING else g <= -lim
        return b >= 1.0 if direction == COOLING else b <= 0.0

    n = state.batch_shape[0]
    active = np.ones(n, dtype=bool)
    stalled = np.zeros(n, dtype=bool)
    resamples = [[] for _ in range(n)]
    recorder = _Recorder(n, model, kin, log_partition) if record else None
    if record:
        recorder.add(0, np.arange(n), q, p, beta, h0, provider(beta, q))

    coord = gamma if logistic_mode else beta
    checkpoint = coord.copy()
    steps = 0
    n_metastable = 0
    while active.any():
        if steps >= max_steps:
            if n_steps is None:
                stalled |= active
            break
        idx = np.flatnonzero(active)
        whole = idx.size == n
        sq, sp, sb, sh = (q, p, beta, h0) if whole else (q[idx], p[idx], beta[idx], h0[idx])
        sg = None if gamma is None else (gamma if whole else gamma[idx])
        sq, sp, sb, sg, e = _step_arrays(sq, sp, sb, sg, t, kin, model, provider,
                                         config.h3_mode)
        steps += 1
        done = finished(sb, sg)
        if done.any():
            sb = np.where(done, target, sb)

        refresh = np.zeros(idx.size, dtype=bool)
        if config.resample_interval is not None and steps % config.resample_interval == 0:
            refresh |= ~done
        if n_steps is None and steps % config.stall_window == 0:
            cur = sg if logistic_mode else sb
            stuck = ~done & (np.abs(cur - checkpoint[idx]) < config.stall_tol)
            if stuck.any():
                n_metastable += int(stuck.sum())
                if config.resample_interval is not None:
                    refresh |= stuck
                else:
                    stalled[idx[stuck]] = True
                    active[idx[stuck]] = False
            checkpoint[idx] = cur
        if refresh.any():
            sp, sh = _resample_arrays(sp, sh, refresh, kin, rng)
            for c in idx[refresh]:
                resamples[c].append(steps)

        if whole:
            q, p, beta, h0 = sq, sp, sb, sh
            if gamma is not None:
                gamma = sg
        else:
            if record:
                # earlier snapshots may alias these arrays
                q, p, beta, h0 = q.copy(), p.copy(), beta.copy(), h0.copy()
                gamma = None if gamma is None else gamma.copy()
            q[idx], p[idx], beta[idx], h0[idx] = sq, sp, sb, sh
            if gamma is not None:
                gamma[idx] = sg
        if record:
            recorder.add(steps, idx, sq, sp, sb, sh, e)
        active[idx[done]] = False

    if n_metastable:
        action = "resampled" if config.resample_interval is not None else "stopped"
        warnings.warn(f"{direction}: {n_metastable} metastable stall(s) detected and {action}",
                      MetastabilityWarning, stacklevel=3)
    out = ContactState(q, p, beta, h0, gamma)
    traces = recorder.traces(direction, stalled, resamples) if record else None
    return out, traces, stalled


def integrate(state, n_steps, direction, config, kin, model, provider, rng=None):
    """Take exactly ``n_steps`` splitting steps without clamping or stall checks.

    Used for reversibility and convergence studies; the temperature may run
    past the unit interval. Momentum is refreshed only if
    ``config.resample_interval`` is set.
    """
    single = state.q.ndim == 1
    batch = _batched(state) if single else state
    out, _, _ = _run(batch, direction, config, kin, model, provider, rng, None, False,
                     n_steps=int(n_steps))
    return _take(out, 0) if single else out


def _batched(state):
    return ContactState(state.q[None], state.p[None], state.beta[None], state.h0[None],
                        None if state.gamma is None else state.gamma[None])


def _transition(state, direction, config, kin, model, provider, rng, log_partition, record):
    if log_partition is None:
        log_partition = getattr(model, "log_partition", None)
    single = state.q.ndim == 1
    batch = _batched(state) if single else state
    out, traces, stalled = _run(batch, direction, config, kin, model, provider, rng,
                                log_partition, record)
    if single:
        out = _take(out, 0)
        traces = traces[0] if traces is not None else None
    if stalled.any():
        raise StallError(
            f"{direction} transition stalled in {int(stalled.sum())} chain(s)",
            state=out, traces=traces, stalled=stalled)
    return out, traces


def cooling_transition(state, config, kin, model, provider, rng=None, log_partition=None,
                       record=True):
    """Flow from beta = 0 to beta = 1 backwards in time.

    ``state`` must sit at beta = 0 with h0 already set. ``log_partition``
    (default: the model's analytic one, if any) is used only for the
    residual column of the trace. Returns ``(state, trace)``, or a list of
    traces for a batched state; raises :class:`StallError` on failure.
    """
    return _transition(state, COOLING, config, kin, model, provider, rng, log_partition,
                       record)


def heating_transition(state, config, kin, model, provider, rng=None, log_partition=None,
                       record=True):
    """Flow from beta = 1 to beta = 0 forwards in time; the mirror of cooling."""
    return _transition(state, HEATING, config, kin, model, provider, rng, log_partition,
                       record)


# -- Metropolis-corrected transition ------------------------------------------------

@dataclass
class MetropolisOutcome:
    q: np.ndarray
    accepted: np.ndarray
    delta_h: np.ndarray
    stalled: np.ndarray
    approximate: bool

    def __iter__(self):
        return iter((self.q, self.accepted, self.delta_h))


def adiabatic_metropolis_transition(q, config, kin, model, provider, rng, log_partition=None):
    """Heat to beta = 0, refresh the momentum, cool back to beta = 1, then accept or reject.

    The proposal is accepted with probability min(1, exp(H(i) - H(f))) where
    H = T + V_B + dV is the beta = 1 Hamiltonian. ``q`` may carry a leading
    chain axis. Chains that stall in either leg are rejected and flagged.
    With a non-deterministic provider no correction is applied: every
    completed proposal is accepted and the outcome is marked approximate.
    """
    if log_partition is None:
        log_partition = getattr(model, "log_partition", None)
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    n = q.shape[0]
    log_z1 = float(log_partition(1.0)) if log_partition is not None else 0.0

    p = kin.sample(rng, (n,))
    start = ContactState(q, p, beta=1.0)
    h_init = kin.energy(p) + model.v_base(q) + model.delta_v(q)
    start = set_h0(start, kin, model, log_z=log_z1)

    mid, _, stalled_h = _run(start, HEATING, config, kin, model, provider, rng,
                             log_partition, record=False)
    mid = resample_momentum_adiabatic(mid, kin, rng)
    mid.beta = np.zeros(n)
    mid.gamma = None
    end, _, stalled_c = _run(mid, COOLING, config, kin, model, provider, rng,
                             log_partition, record=False)
    stalled = stalled_h | stalled_c

    with np.errstate(invalid="ignore", over="ignore"):
        h_final = kin.energy(end.p) + model.v_base(end.q) + model.delta_v(end.q)
    delta_h = h_final - h_init
    approximate = not getattr(provider, "deterministic", False)
    if approximate:
        accepted = ~stalled & np.isfinite(delta_h)
    else:
        log_u = np.log(rng.uniform(size=n))
        accepted = ~stalled & np.isfinite(delta_h) & (log_u < -delta_h)
    q_new = np.where(accepted[:, None], end.q, q)
    if single:
        return MetropolisOutcome(q_new[0], accepted[0], delta_h[0], stalled[0], approximate)
    return MetropolisOutcome(q_new, accepted, delta_h, stalled, approximate)
