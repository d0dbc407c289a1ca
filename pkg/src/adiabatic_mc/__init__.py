"""Adiabatic Monte Carlo: contact Hamiltonian flows that estimate partition functions.

Includes annealing and tempering baselines and oracle diagnostics on a Beta-Binomial benchmark.
"""
from .baselines import (
    Schedule,
    constant_kl_partition,
    even_partition,
    simulated_annealing,
    simulated_tempering,
)
from .contact import (
    ContactConfig,
    StallError,
    adiabatic_metropolis_transition,
    cooling_transition,
    heating_transition,
    log_partition_estimate,
    set_h0,
)
from .expectations import AnalyticProvider, GridProvider, HmcOnlineProvider, build_expectation_grid
from .model import BetaBinomialModel, TargetModel
from .phase import ContactState, EuclideanKinetic, RngStream

__all__ = [
    "AnalyticProvider",
    "BetaBinomialModel",
    "ContactConfig",
    "ContactState",
    "EuclideanKinetic",
    "GridProvider",
    "HmcOnlineProvider",
    "RngStream",
    "Schedule",
    "StallError",
    "TargetModel",
    "adiabatic_metropolis_transition",
    "build_expectation_grid",
    "constant_kl_partition",
    "cooling_transition",
    "even_partition",
    "heating_transition",
    "log_partition_estimate",
    "set_h0",
    "simulated_annealing",
    "simulated_tempering",
]

__version__ = "0.1.0"
