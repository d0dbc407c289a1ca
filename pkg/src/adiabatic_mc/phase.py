"""Phase-space state, Gaussian kinetic energy and the contact Hamiltonian."""
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "EuclideanKinetic",
    "ContactState",
    "RngStream",
    "kinetic",
    "grad_kinetic",
    "sample_momentum",
    "contact_hamiltonian",
]


class EuclideanKinetic:
    """T(p) = 1/2 p^T M^{-1} p + 1/2 log|M| with a diagonal mass matrix M."""

    def __init__(self, mass_diag=(1.0,)):
        m = np.atleast_1d(np.asarray(mass_diag, dtype=float))
        if m.ndim != 1 or not np.all(m > 0) or not np.all(np.isfinite(m)):
            raise ValueError(f"mass_diag must be a vector of positive reals, got {mass_diag!r}")
        self.mass_diag = m
        self.inv_mass = 1.0 / m
        self.half_log_det = 0.5 * float(np.sum(np.log(m)))

    @property
    def dim(self):
        return self.mass_diag.shape[0]

    def _check(self, p):
        p = np.asarray(p, dtype=float)
        if p.shape[-1:] != self.mass_diag.shape:
            raise ValueError(f"momentum has trailing dimension {p.shape[-1:]}, "
                             f"metric has {self.mass_diag.shape}")
        return p

    def energy(self, p):
        p = self._check(p)
        return 0.5 * np.sum(p * p * self.inv_mass, axis=-1) + self.half_log_det

    def grad(self, p):
        return self._check(p) * self.inv_mass

    def quadratic(self, p):
        """p^T M^{-1} p, the Reeb rate of the contact coordinate."""
        p = self._check(p)
        return np.sum(p * p * self.inv_mass, axis=-1)

    def sample(self, rng, shape=()):
        z = rng.standard_normal(tuple(shape) + (self.dim,))
        return z * np.sqrt(self.mass_diag)

    def __repr__(self):
        return f"EuclideanKinetic(mass_diag={self.mass_diag.tolist()})"


def kinetic(kin, p):
    return kin.energy(p)


def grad_kinetic(kin, p):
    return kin.grad(p)


def sample_momentum(kin, rng, shape=()):
    """Draw p ~ N(0, M), with ``shape`` leading chain axes."""
    return kin.sample(rng, shape)


@dataclass
class ContactState:
    """A point (q, p, beta) of the contactized phase space plus its level offset h0.

    ``q`` and ``p`` have a trailing ``dim`` axis; any leading axes index
    independent chains, matched by the shapes of ``beta`` and ``h0``.
    ``gamma`` is the logistic contact coordinate, used only by the logistic
    integrator; ``None`` means "derive it from beta when needed".
    """

    q: np.ndarray
    p: np.ndarray
    beta: np.ndarray = 0.0
    h0: np.ndarray = 0.0
    gamma: np.ndarray = field(default=None)

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if self.q.shape != self.p.shape:
            raise ValueError(f"q{self.q.shape} and p{self.p.shape} differ in shape")
        batch = self.q.shape[:-1]
        self.beta = np.broadcast_to(np.asarray(self.beta, dtype=float), batch).copy()
        self.h0 = np.broadcast_to(np.asarray(self.h0, dtype=float), batch).copy()
        if self.gamma is not None:
            self.gamma = np.broadcast_to(np.asarray(self.gamma, dtype=float), batch).copy()

    @property
    def batch_shape(self):
        return self.q.shape[:-1]

    def copy(self):
        return replace(
            self,
            q=self.q.copy(),
            p=self.p.copy(),
            beta=self.beta.copy(),
            h0=self.h0.copy(),
            gamma=None if self.gamma is None else self.gamma.copy(),
        )

    def as_vector(self):
        """Flat (q, p, beta) view used for reversibility checks."""
        return np.concatenate(
            [self.q.reshape(-1), self.p.reshape(-1), np.atleast_1d(self.beta).reshape(-1)]
        )


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream keyed by a root seed and a stream id."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = getattr(self, name)
            if int(v) != v or not 0 <= v < 2 ** 64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {v!r}")

    def generator(self):
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, stream):
        return RngStream(self.seed, stream)


def contact_hamiltonian(state, model, log_partition, kin):
    """H_C = T + V_B + beta * dV + log Z(beta) + h0.

    ``log_partition`` is a callable beta -> log Z(beta).
    """
    beta = state.beta
    return (kin.energy(state.p) + model.v_base(state.q) + beta * model.delta_v(state.q)
            + np.asarray(log_partition(beta)) + state.h0)
