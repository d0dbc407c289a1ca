"""Sources of the intermediate expectation E_{pi_beta}[dV].

Providers are called as ``provider(beta, q)`` where ``q`` is the current
position of the querying trajectory (ignored by deterministic providers).
Both arguments may carry a leading chain axis.
"""
import csv
from dataclasses import dataclass

import numpy as np

from .csvfmt import fmt
from .hmc import DivergenceError, HmcConfig, estimate_expectation
from .model import check_beta
from .specialfn import DomainError

__all__ = [
    "ExpectationProvider",
    "AnalyticProvider",
    "HmcOnlineProvider",
    "GridProvider",
    "ExpectationGrid",
    "EstimationError",
    "analytic_provider",
    "hmc_online_provider",
    "grid_provider",
    "build_expectation_grid",
    "grid_knots",
]


class EstimationError(RuntimeError):
    """An expectation estimate could not be produced."""


class ExpectationProvider:
    deterministic = True

    def __call__(self, beta, q=None):
        raise NotImplementedError


class AnalyticProvider(ExpectationProvider):
    """Closed-form expectations from a model exposing ``expected_delta_v``."""

    deterministic = True

    def __init__(self, model):
        if not hasattr(model, "expected_delta_v"):
            raise TypeError(f"{model!r} has no closed-form expected_delta_v")
        self.model = model

    def __call__(self, beta, q=None):
        return self.model.expected_delta_v(np.clip(beta, 0.0, 1.0))


class HmcOnlineProvider(ExpectationProvider):
    """Estimate E[dV] afresh at every query with a short HMC run from the current position.

    Each query runs ``warmup`` discarded and ``draws`` kept transitions.
    Repeated queries consume random numbers, so the provider is not
    deterministic and trajectories using it are not exactly reversible.
    """

    deterministic = False

    def __init__(self, model, kin, config=None, rng=None, current_state_source=None,
                 warmup=10, draws=50):
        if draws < 1 or warmup < 0:
            raise ValueError("need draws >= 1 and warmup >= 0")
        self.model = model
        self.kin = kin
        self.config = config or HmcConfig()
        self.rng = rng if rng is not None else np.random.default_rng()
        self.current_state_source = current_state_source
        self.warmup = warmup
        self.draws = draws
        self.last_stderr = None

    def __call__(self, beta, q=None):
        if q is None:
            if self.current_state_source is None:
                raise EstimationError("online provider needs the current position")
            q = self.current_state_source()
        q = np.asarray(q, dtype=float)
        beta = np.clip(np.asarray(beta, dtype=float), 0.0, 1.0)
        single = q.ndim == 1
        try:
            mean, stderr, _ = estimate_expectation(
                np.atleast_2d(q), np.atleast_1d(beta), self.model, self.kin, self.config,
                self.warmup, self.draws, self.rng)
        except DivergenceError as err:
            raise EstimationError(f"HMC estimate failed at beta={beta}: {err}") from err
        self.last_stderr = stderr
        return float(mean[0]) if single else mean


@dataclass
class ExpectationGrid:
    """Per-knot estimates of E[dV] with their standard errors."""

    knots: np.ndarray
    values: np.ndarray
    stderr: np.ndarray

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if not (self.knots.shape == self.values.shape == self.stderr.shape):
            raise ValueError("knots, values and stderr must have equal length")
        if self.knots.size < 2 or np.any(np.diff(self.knots) <= 0):
            raise ValueError("knots must be strictly increasing with at least two entries")
        if self.knots[0] != 0.0 or self.knots[-1] != 1.0:
            raise ValueError("knots must start at 0 and end at 1")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["beta", "e_hat", "stderr"])
            for row in zip(self.knots, self.values, self.stderr):
                w.writerow([fmt(v) for v in row])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        if rows[0] != ["beta", "e_hat", "stderr"]:
            raise ValueError(f"{path}: expected header beta,e_hat,stderr, got {rows[0]}")
        data = np.array(rows[1:], dtype=float)
        return cls(data[:, 0], data[:, 1], data[:, 2])


class GridProvider(ExpectationProvider):
    """Piecewise-linear interpolation of an :class:`ExpectationGrid`."""

    deterministic = True

    def __init__(self, grid):
        self.grid = grid

    def __call__(self, beta, q=None):
        b = np.asarray(beta, dtype=float)
        if np.any(~((b >= 0.0) & (b <= 1.0))):
            raise DomainError(f"grid provider queried outside [0, 1]: {beta!r}")
        out = np.interp(b, self.grid.knots, self.grid.values)
        return out if np.ndim(out) else float(out)


def analytic_provider(model):
    return AnalyticProvider(model)


def hmc_online_provider(model, kin, hmc_config=None, rng=None, current_state_source=None,
                        warmup=10, draws=50):
    return HmcOnlineProvider(model, kin, hmc_config, rng, current_state_source, warmup, draws)


def grid_provider(grid):
    return GridProvider(grid)


def grid_knots(count, spacing="quadratic"):
    """Knot locations on [0, 1].

    ``"quadratic"`` places knot i at (i / (count - 1))**2, concentrating
    knots near beta = 0 where the expectation changes fastest.
    """
    if count < 2:
        raise ValueError("need at least two knots")
    u = np.linspace(0.0, 1.0, count)
    if spacing == "uniform":
        return u
    if spacing == "quadratic":
        return u * u
    raise ValueError(f"unknown knot spacing {spacing!r}")


def build_expectation_grid(model, kin, knots, draws_per_knot, rng, hmc_config=None,
                           warmup=200, spacing="quadratic", initial=None):
    """Estimate E[dV] at each knot with an independent HMC chain.

    All knots are advanced together as one batch of chains. ``initial``
    supplies starting positions (knots, dim); by default exact draws from
    each pi_beta are used when the model offers them, otherwise the origin.
    """
    if draws_per_knot < 10:
        raise ValueError("draws_per_knot must be at least 10")
    betas = grid_knots(knots, spacing)
    check_beta(betas)
    config = hmc_config or HmcConfig()
    if initial is None:
        if hasattr(model, "sample_intermediate"):
            initial = model.sample_intermediate(betas, rng)
        else:
            initial = np.zeros((knots, model.dim))
    try:
        mean, stderr, _ = estimate_expectation(
            initial, betas, model, kin, config, warmup, draws_per_knot, rng,
            on_divergence="raise")
    except DivergenceError as err:
        raise EstimationError(
            f"grid construction failed at knot(s) beta={betas[err.chains].tolist()}: {err}"
        ) from err
    bad = ~np.isfinite(mean)
    if bad.any():
        raise EstimationError(f"non-finite estimate at knot(s) {betas[bad].tolist()}")
    return ExpectationGrid(betas, mean, stderr)
