"""Command-line experiment runner.

Every command writes CSV files into ``--out`` and prints a short summary.
Options come from defaults, then an optional ``key=value`` config file,
then command-line flags, later sources winning.
"""
import argparse
import dataclasses
import math
import os
import sys
import warnings
from dataclasses import dataclass, fields

import numpy as np

from . import baselines, diagnostics
from .contact import (
    ContactConfig,
    MetastabilityWarning,
    StallError,
    adiabatic_metropolis_transition,
    cooling_transition,
    heating_transition,
    set_h0,
)
from .csvfmt import fmt
from .expectations import (
    EstimationError,
    ExpectationGrid,
    analytic_provider,
    build_expectation_grid,
    grid_provider,
    hmc_online_provider,
)
from .hmc import HmcConfig
from .model import BetaBinomialModel
from .phase import ContactState, EuclideanKinetic, RngStream

EXIT_USAGE = 2
EXIT_FAILURE = 1
EXIT_STALL = 3

COMMANDS = ("adiabatic", "anneal", "temper", "partition", "logz", "selftest", "grid", "density")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    a: float = 9.0
    b: float = 0.75
    k: int = 115
    n: int = 550
    mass: float = 1.0
    epsilon: float = 0.01
    h3_mode: str = "exact"
    coordinate: str = "logistic"
    direction: str = "cooling"
    resample_interval: int = 0
    provider: str = "analytic"
    schedule: str = "tuned:25"
    replicas: int = 1
    iterations: int = 2000
    metropolis: int = 0
    warmup: int = 25
    rwm_per_knot: int = 2
    grid_knots: int = 101
    grid_draws: int = 2000
    seed: int = 0
    out: str = "."

    def validate(self):
        if not (self.a > 0 and self.b > 0):
            raise ConfigError("a and b must be positive")
        if not 0 <= self.k <= self.n:
            raise ConfigError("need 0 <= k <= n")
        if not self.mass > 0:
            raise ConfigError("mass must be positive")
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ConfigError(f"epsilon must be a positive real, got {self.epsilon}")
        if self.h3_mode not in ("exact", "euler"):
            raise ConfigError("h3_mode must be exact or euler")
        if self.coordinate not in ("logistic", "beta"):
            raise ConfigError("coordinate must be logistic or beta")
        if self.direction not in ("cooling", "heating"):
            raise ConfigError("direction must be cooling or heating")
        for name in ("replicas", "iterations", "rwm_per_knot"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}")
        for name in ("resample_interval", "metropolis", "warmup"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.grid_knots < 2 or self.grid_draws < 10:
            raise ConfigError("grid_knots must be >= 2 and grid_draws >= 10")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        parse_schedule_spec(self.schedule)
        if not (self.provider in ("analytic", "hmc_online") or self.provider.startswith("grid:")):
            raise ConfigError(f"unknown provider {self.provider!r}")
        if self.provider.startswith("grid:") and not os.path.isfile(self.provider[5:]):
            raise ConfigError(f"grid file not found: {self.provider[5:]}")
        return self

    def model(self):
        return BetaBinomialModel(self.a, self.b, self.k, self.n)

    def kinetic(self):
        return EuclideanKinetic([self.mass])

    def contact_config(self):
        return ContactConfig(step_size=self.epsilon, h3_mode=self.h3_mode,
                             coordinate=self.coordinate,
                             resample_interval=self.resample_interval or None)

    def stream(self, sid):
        return RngStream(self.seed, sid).generator()


def parse_schedule_spec(spec):
    kind, _, count = spec.partition(":")
    if kind not in ("even", "tuned") or not count.isdigit() or int(count) < 1:
        raise ConfigError(f"schedule must look like even:<m> or tuned:<m>, got {spec!r}")
    return kind, int(count)


def build_schedule(spec, model):
    kind, m = parse_schedule_spec(spec)
    if kind == "even":
        return baselines.even_partition(m)
    return baselines.constant_kl_partition(m, model)


def _coerce(name, text):
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    try:
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
    except ValueError as err:
        raise ConfigError(f"bad value for {name}: {text!r}") from err
    return text


def read_config_file(path):
    """Parse ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    known = {f.name for f in fields(RunConfig)}
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            key = key.strip().replace("-", "_")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _coerce(key, val.strip())
    return values


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config")
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    common.add_argument("--epsilon", type=float)
    common.add_argument("--schedule")
    common.add_argument("--replicas", type=int)
    common.add_argument("--provider")
    common.add_argument("--h3-mode", dest="h3_mode", choices=("exact", "euler"))
    common.add_argument("--coordinate", choices=("logistic", "beta"))
    common.add_argument("--direction", choices=("cooling", "heating"))
    common.add_argument("--resample-interval", dest="resample_interval", type=int)
    common.add_argument("--iterations", type=int)
    common.add_argument("--metropolis", type=int,
                        help="number of Metropolis-corrected transitions at beta=1")
    common.add_argument("--grid-knots", dest="grid_knots", type=int)
    common.add_argument("--grid-draws", dest="grid_draws", type=int)
    parser = argparse.ArgumentParser(prog="adiabatic-mc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "adiabatic": "cooling transitions with log Z readout",
        "anneal": "simulated annealing over a schedule",
        "temper": "simulated tempering over a schedule",
        "partition": "write a temperature schedule with neighbour KLs",
        "logz": "log Z estimate against the analytic value",
        "selftest": "run the invariant checks",
        "grid": "build an expectation grid by HMC for the grid provider",
        "density": "intermediate densities at the schedule's knots",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def resolve_config(args):
    values = {}
    if args.config:
        values.update(read_config_file(args.config))
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return dataclasses.replace(RunConfig(), **values).validate()


def _provider(cfg, model, kin):
    if cfg.provider == "analytic":
        return analytic_provider(model)
    if cfg.provider == "hmc_online":
        return hmc_online_provider(model, kin, HmcConfig(), rng=cfg.stream(10 ** 6))
    return grid_provider(ExpectationGrid.from_csv(cfg.provider[5:]))


def _path(cfg, name):
    return os.path.join(cfg.out, name)


def _cool_replicas(cfg, model, kin, provider):
    """Run one transition per replica in ``cfg.direction``; returns (traces, stalled replicas).

    Cooling starts from a base draw at beta = 0, heating from an exact
    posterior draw at beta = 1.
    """
    traces, stalled = [], []
    ccfg = cfg.contact_config()
    for r in range(cfg.replicas):
        rng = cfg.stream(r)
        if cfg.direction == "cooling":
            state = ContactState(model.sample_base(rng), kin.sample(rng), 0.0)
            state, run = set_h0(state, kin, model), cooling_transition
        else:
            state = ContactState(model.sample_intermediate(1.0, rng), kin.sample(rng), 1.0)
            state = set_h0(state, kin, model, log_z=model.log_partition(1.0))
            run = heating_transition
        try:
            _, trace = run(state, ccfg, kin, model, provider, rng=rng)
        except StallError as err:
            trace = err.traces
            stalled.append(r)
        traces.append(trace)
    return traces, stalled


def cmd_adiabatic(cfg):
    model, kin = cfg.model(), cfg.kinetic()
    provider = _provider(cfg, model, kin)
    traces, stalled = _cool_replicas(cfg, model, kin, provider)
    worst_res = worst_err = 0.0
    for r, trace in enumerate(traces):
        trace.to_csv(_path(cfg, f"trace_r{r:03d}.csv"))
        curve = diagnostics.logz_error_curve(trace, model)
        diagnostics.write_logz_csv(_path(cfg, f"logz_r{r:03d}.csv"), trace.beta,
                                   trace.logz_est - curve[:, 1], trace.logz_est)
        worst_res = max(worst_res, float(np.nanmax(np.abs(trace.hc_residual))))
        worst_err = max(worst_err, float(np.max(np.abs(curve[:, 1]))))
        print(f"replica {r}: final beta={trace.beta[-1]:.17g} steps={len(trace) - 1} "
              f"stalled={trace.stalled}")
    print(f"max |H_C residual| = {worst_res:.6g}")
    print(f"max |log Z error|  = {worst_err:.6g}")
    if stalled:
        print(f"stalled replicas: {stalled}", file=sys.stderr)
        return EXIT_STALL

    if cfg.metropolis:
        rng = cfg.stream(cfg.replicas)
        q = model.sample_intermediate(1.0, rng, cfg.replicas)
        # heating without momentum refreshes stalls in most chains
        mcfg = dataclasses.replace(cfg.contact_config(),
                                   resample_interval=cfg.resample_interval or 100)
        with open(_path(cfg, "metropolis.csv"), "w", encoding="utf-8", newline="") as fh:
            fh.write("iter,chain,q,accepted,delta_h,stalled\n")
            n_acc = 0
            for it in range(cfg.metropolis):
                out = adiabatic_metropolis_transition(q, mcfg, kin, model, provider, rng)
                q = out.q
                n_acc += int(out.accepted.sum())
                for c in range(cfg.replicas):
                    fh.write(f"{it},{c},{fmt(q[c, 0])},{int(out.accepted[c])},"
                             f"{fmt(out.delta_h[c])},{int(out.stalled[c])}\n")
        total = cfg.metropolis * cfg.replicas
        ks = diagnostics.ks_statistic(q[:, 0], lambda x: model.intermediate_cdf(1.0, x))
        print(f"metropolis acceptance = {n_acc / total:.4f} over {total} transitions"
              f"{' (approximate: stochastic provider)' if out.approximate else ''}")
        print(f"final-state KS vs beta=1: D={ks.statistic:.4f} (1% critical {ks.critical_1:.4f})")
    return 0


def _write_profile(path, betas, reports):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("knot,beta,n,ks_statistic,critical_1,pass_1\n")
        for i, (b, rep) in enumerate(zip(betas, reports)):
            if rep is None:
                fh.write(f"{i},{fmt(b)},0,,,\n")
            else:
                fh.write(f"{i},{fmt(b)},{rep.n},{fmt(rep.statistic)},{fmt(rep.critical_1)},"
                         f"{int(rep.pass_1)}\n")


def _tuned_scales(cfg, model, schedule):
    try:
        return baselines.tune_schedule(schedule, model, cfg.stream(0))
    except baselines.TuningError as err:
        print(f"tuning failed: {err}", file=sys.stderr)
        return None


def cmd_anneal(cfg):
    model = cfg.model()
    schedule = build_schedule(cfg.schedule, model)
    scales = _tuned_scales(cfg, model, schedule)
    if scales is None:
        return EXIT_FAILURE
    trace = baselines.simulated_annealing(schedule, model, cfg.stream(1), cfg.rwm_per_knot,
                                          cfg.replicas, scales=scales)
    for r in range(cfg.replicas):
        trace.to_csv(_path(cfg, f"anneal_r{r:03d}.csv"), r)
    if cfg.replicas >= 30:
        reports = diagnostics.annealing_profile(trace, model)
        _write_profile(_path(cfg, "profile.csv"), schedule.knots, reports)
        failing = [i for i, rep in enumerate(reports) if not rep.pass_1]
        print(f"knots failing KS at 1%: {len(failing)} of {len(reports)} {failing}")
    else:
        print("fewer than 30 replicas: equilibrium profile skipped")
    return 0


def cmd_temper(cfg):
    model = cfg.model()
    schedule = build_schedule(cfg.schedule, model)
    scales = _tuned_scales(cfg, model, schedule)
    if scales is None:
        return EXIT_FAILURE
    trace = baselines.simulated_tempering(schedule, model, cfg.stream(1), cfg.warmup,
                                          cfg.iterations, cfg.replicas, scales=scales)
    for c in range(cfg.replicas):
        trace.to_csv(_path(cfg, f"temper_c{c:03d}.csv"), c)
    reports = diagnostics.tempering_profile(trace, model)
    _write_profile(_path(cfg, "profile.csv"), schedule.knots, reports)
    tested = [rep for rep in reports if rep is not None]
    failing = [i for i, rep in enumerate(reports) if rep is not None and not rep.pass_1]
    print(f"fraction of chains reaching beta=1: {trace.reach_fraction():.4f}")
    print(f"knots failing KS at 1%: {len(failing)} of {len(tested)} tested {failing}")
    return 0


def cmd_partition(cfg):
    model = cfg.model()
    try:
        schedule = build_schedule(cfg.schedule, model)
    except baselines.PartitionError as err:
        print(f"partition failed: {err}", file=sys.stderr)
        return EXIT_FAILURE
    schedule.to_csv(_path(cfg, "partition.csv"), model)
    kl = baselines.neighbor_kl(schedule, model)
    spread = float(np.max(np.abs(kl / kl.mean() - 1.0)))
    print(f"{len(schedule)} knots; neighbour KL mean {kl.mean():.6g}, "
          f"max relative deviation {spread:.3g}, max/min ratio {kl.max() / kl.min():.6g}")
    return 0


def cmd_logz(cfg):
    model, kin = cfg.model(), cfg.kinetic()
    provider = _provider(cfg, model, kin)
    rng = cfg.stream(0)
    state = set_h0(ContactState(model.sample_base(rng), kin.sample(rng), 0.0), kin, model)
    code = 0
    try:
        _, trace = cooling_transition(state, cfg.contact_config(), kin, model, provider, rng=rng)
    except StallError as err:
        trace, code = err.traces, EXIT_STALL
    analytic = np.asarray(model.log_partition(np.clip(trace.beta, 0.0, 1.0)))
    diagnostics.write_logz_csv(_path(cfg, "logz.csv"), trace.beta, analytic, trace.logz_est)
    err = np.abs(trace.logz_est - analytic)
    decades = (analytic.max() - analytic.min()) / math.log(10.0)
    print(f"max |log Z error| = {err.max():.6g}; log10 Z spans {decades:.3g} decades")
    return code


def cmd_grid(cfg):
    model, kin = cfg.model(), cfg.kinetic()
    try:
        grid = build_expectation_grid(model, kin, cfg.grid_knots, cfg.grid_draws, cfg.stream(0))
    except EstimationError as err:
        print(f"grid construction failed: {err}", file=sys.stderr)
        return EXIT_FAILURE
    grid.to_csv(_path(cfg, "grid.csv"))
    exact = np.asarray(model.expected_delta_v(grid.knots))
    print(f"{grid.knots.size} knots; max |e_hat - E| = {np.max(np.abs(grid.values - exact)):.4g}; "
          f"max stderr {np.max(grid.stderr):.4g}")
    return 0


def cmd_density(cfg):
    """Write pi_beta as a density on the unit interval at every schedule knot."""
    model = cfg.model()
    schedule = build_schedule(cfg.schedule, model)
    u = np.linspace(0.0, 1.0, 2001)[1:-1]
    x = np.log(u) - np.log1p(-u)
    with open(_path(cfg, "density.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write("beta,theta,density\n")
        for b in schedule.knots:
            # change of variables from x = logit(theta) back to theta
            dens = np.exp(model.log_density(b, x[:, None])) / (u * (1.0 - u))
            for t, d in zip(u, dens):
                fh.write(f"{fmt(b)},{fmt(t)},{fmt(d)}\n")
    print(f"densities at {len(schedule)} knots written")
    return 0


def cmd_selftest(cfg):
    from .selftest import run_selftest
    return 0 if run_selftest(cfg.seed) else EXIT_FAILURE


HANDLERS = {
    "adiabatic": cmd_adiabatic,
    "anneal": cmd_anneal,
    "temper": cmd_temper,
    "partition": cmd_partition,
    "logz": cmd_logz,
    "selftest": cmd_selftest,
    "grid": cmd_grid,
    "density": cmd_density,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (ConfigError, OSError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_USAGE
    os.makedirs(cfg.out, exist_ok=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MetastabilityWarning)
        return HANDLERS[args.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
