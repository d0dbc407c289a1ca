"""Special functions: log-gamma, digamma, regularized incomplete beta, logistic.

All functions accept scalars or numpy arrays and return the same shape.
Scalars in, Python floats out.
"""
import math

import numpy as np

__all__ = [
    "DomainError",
    "lgamma",
    "digamma",
    "log_beta",
    "reg_inc_beta",
    "logistic",
    "logit",
    "softplus",
]

EULER_GAMMA = 0.57721566490153286061

# B_2, B_4, ..., B_16
_BERNOULLI = (1.0 / 6, -1.0 / 30, 1.0 / 42, -1.0 / 30, 5.0 / 66,
              -691.0 / 2730, 7.0 / 6, -3617.0 / 510)

_SHIFT = 12.0
_TAYLOR_RADIUS = 0.25
_TAYLOR_TERMS = 32


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


def _zeta(s, n_direct=10, n_corr=6):
    # Euler-Maclaurin summation, good to ~1e-18 for s >= 2
    total = math.fsum(j ** -s for j in range(1, n_direct))
    N = float(n_direct)
    total += N ** (1 - s) / (s - 1) + 0.5 * N ** -s
    rising = s
    fact = 2.0
    for j in range(1, n_corr + 1):
        total += _BERNOULLI[j - 1] / fact * rising * N ** (-s - 2 * j + 1)
        rising *= (s + 2 * j - 1) * (s + 2 * j)
        fact *= (2 * j + 1) * (2 * j + 2)
    return total


# coefficients of log Gamma(1 + z) = -gamma z + sum_k (-1)^k zeta(k) z^k / k
_LG1P_COEFFS = np.array(
    [0.0, -EULER_GAMMA]
    + [(-1) ** k * _zeta(k) / k for k in range(2, _TAYLOR_TERMS)]
)


def _wrap(x, out):
    if np.ndim(out) == 0 and np.ndim(x) == 0:
        return float(out)
    return out


def _as_array(x):
    return np.asarray(x, dtype=float)


def _require_positive(x, name="x"):
    if np.any(~(x > 0)):
        raise DomainError(f"{name} must be positive and finite-valued, got {x!r}")


def _lgamma1p_series(z):
    # Horner evaluation around 1; valid for |z| <= _TAYLOR_RADIUS
    acc = np.zeros_like(z)
    for c in _LG1P_COEFFS[:0:-1]:
        acc = (acc + c) * z
    return acc


def _stirling(y):
    lg = (y - 0.5) * np.log(y) - y + 0.5 * math.log(2 * math.pi)
    inv = 1.0 / y
    inv2 = inv * inv
    term = inv
    for k, b in enumerate(_BERNOULLI, start=1):
        lg = lg + b / (2 * k * (2 * k - 1)) * term
        term = term * inv2
    return lg


def lgamma(x):
    """log Gamma(x) for x > 0."""
    xa = _as_array(x)
    _require_positive(xa)
    y = np.array(xa, dtype=float, copy=True)
    acc = np.zeros_like(y)

    small = y < 0.5
    acc = np.where(small, -np.log(np.where(small, y, 1.0)), acc)
    y = np.where(small, y + 1.0, y)

    near1 = np.abs(y - 1.0) <= _TAYLOR_RADIUS
    near2 = np.abs(y - 2.0) <= _TAYLOR_RADIUS
    rest = ~(near1 | near2)

    out = np.empty_like(y)
    if np.any(near1):
        out[near1] = _lgamma1p_series(y[near1] - 1.0)
    if np.any(near2):
        z = y[near2] - 2.0
        out[near2] = _lgamma1p_series(z) + np.log1p(z)
    if np.any(rest):
        yr = y[rest]
        shift = np.zeros_like(yr)
        for _ in range(int(_SHIFT)):
            low = yr < _SHIFT
            if not np.any(low):
                break
            shift = shift - np.where(low, np.log(yr), 0.0)
            yr = np.where(low, yr + 1.0, yr)
        out[rest] = _stirling(yr) + shift
    return _wrap(x, out + acc)


def digamma(x):
    """psi(x) = d/dx log Gamma(x) for x > 0."""
    xa = _as_array(x)
    _require_positive(xa)
    # psi(y) = psi(y + m) - sum_{j<m} 1/(y + j), with m chosen so y + m >= _SHIFT
    m = np.clip(np.ceil(_SHIFT - xa), 0.0, _SHIFT)
    j = np.arange(int(_SHIFT), dtype=float)
    terms = np.where(j < m[..., None], 1.0 / (xa[..., None] + j), 0.0)
    acc = -terms.sum(axis=-1)
    y = xa + m
    inv2 = 1.0 / (y * y)
    series = np.zeros_like(y)
    term = inv2
    for k, b in enumerate(_BERNOULLI, start=1):
        series = series + b / (2 * k) * term
        term = term * inv2
    out = np.log(y) - 0.5 / y - series + acc
    return _wrap(x, out)


def log_beta(a, b):
    """log B(a, b) = lgamma(a) + lgamma(b) - lgamma(a + b)."""
    aa, ba = _as_array(a), _as_array(b)
    _require_positive(aa, "a")
    _require_positive(ba, "b")
    out = _as_array(lgamma(aa)) + _as_array(lgamma(ba)) - _as_array(lgamma(aa + ba))
    return _wrap(np.broadcast_arrays(a, b)[0], out)


def _betacf(x, a, b, max_iter=1000, tol=1e-16):
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < tiny, tiny, d)
    d = 1.0 / d
    h = d.copy()
    done = np.zeros(x.shape, dtype=bool)
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        h = np.where(done, h, h * d * c)
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        delta = d * c
        h = np.where(done, h, h * delta)
        done |= np.abs(delta - 1.0) < tol
        if done.all():
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def reg_inc_beta(x, a, b):
    """Regularized incomplete beta I_x(a, b) for 0 <= x <= 1."""
    xa, aa, ba = np.broadcast_arrays(_as_array(x), _as_array(a), _as_array(b))
    if np.any(~((xa >= 0) & (xa <= 1))):
        raise DomainError(f"x must lie in [0, 1], got {x!r}")
    _require_positive(aa, "a")
    _require_positive(ba, "b")
    xa = np.array(xa, dtype=float)
    out = np.where(xa >= 1.0, 1.0, 0.0)
    inner = (xa > 0) & (xa < 1)
    if np.any(inner):
        xi, ai, bi = xa[inner], aa[inner], ba[inner]
        flip = xi > (ai + 1.0) / (ai + bi + 2.0)
        xs = np.where(flip, 1.0 - xi, xi)
        as_ = np.where(flip, bi, ai)
        bs = np.where(flip, ai, bi)
        log_front = (as_ * np.log(xs) + bs * np.log1p(-xs)
                     - _as_array(log_beta(as_, bs)))
        val = np.exp(log_front) * _betacf(xs, as_, bs) / as_
        out[inner] = np.clip(np.where(flip, 1.0 - val, val), 0.0, 1.0)
    return _wrap(np.broadcast_arrays(x, a, b)[0], out)


def logistic(g):
    """1 / (1 + exp(-g)), evaluated without overflow."""
    ga = _as_array(g)
    e = np.exp(-np.abs(ga))
    out = np.where(ga >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _wrap(g, out)


def logit(beta):
    """Inverse of :func:`logistic` on the open unit interval."""
    ba = _as_array(beta)
    if np.any(~((ba > 0) & (ba < 1))):
        raise DomainError(f"logit requires 0 < beta < 1, got {beta!r}")
    return _wrap(beta, np.log(ba) - np.log1p(-ba))


def softplus(z):
    """log(1 + exp(z)) without overflow."""
    za = _as_array(z)
    return _wrap(z, np.maximum(za, 0.0) + np.log1p(np.exp(-np.abs(za))))
