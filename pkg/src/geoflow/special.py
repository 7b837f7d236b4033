"""Log-gamma, digamma and trigamma on the positive reals.

Self-contained so the Dirichlet closed forms do not depend on an external
special-function library. All three accept scalars or numpy arrays and
return the same kind.
"""

import math

import numpy as np

from geoflow.errors import DomainError

# Lanczos approximation, g = 7, n = 9
_LANCZOS_G = 7.0
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# B_2 .. B_14
_BERNOULLI = (1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0, 5.0 / 66.0, -691.0 / 2730.0, 7.0 / 6.0)

RECURRENCE_THRESHOLD = 10.0


def _as_positive(x, name):
    arr = np.asarray(x, dtype=float)
    if not np.all(arr > 0) or np.any(np.isnan(arr)):
        raise DomainError(f"{name} requires x > 0")
    return arr


def _ret(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


def ln_gamma(x):
    """ln Gamma(x) for x > 0."""
    x0 = _as_positive(x, "ln_gamma")
    x = x0.copy()
    # shift small arguments up by one: lnG(x) = lnG(x + 1) - ln x
    small = x < 0.5
    shift = np.where(small, np.log(np.where(small, x, 1.0)), 0.0)
    x = np.where(small, x + 1.0, x)

    z = x - 1.0
    acc = np.full_like(z, _LANCZOS_COEF[0])
    for i, c in enumerate(_LANCZOS_COEF[1:], start=1):
        acc = acc + c / (z + i)
    t = z + _LANCZOS_G + 0.5
    out = _HALF_LOG_2PI + (z + 0.5) * np.log(t) - t + np.log(acc) - shift
    return _ret(out, x0)


def digamma(x):
    """psi(x) = d/dx ln Gamma(x) for x > 0.

    Upward recurrence psi(x) = psi(x + 1) - 1/x until x >= 10, then the
    asymptotic series through B_14.
    """
    x0 = _as_positive(x, "digamma")
    x = x0.copy()
    acc = np.zeros_like(x)
    while True:
        low = x < RECURRENCE_THRESHOLD
        if not np.any(low):
            break
        acc = acc - np.where(low, 1.0 / x, 0.0)
        x = np.where(low, x + 1.0, x)

    inv2 = 1.0 / (x * x)
    series = np.zeros_like(x)
    power = inv2.copy()
    for k, b in enumerate(_BERNOULLI, start=1):
        series = series + b / (2 * k) * power
        power = power * inv2
    out = acc + np.log(x) - 0.5 / x - series
    return _ret(out, x0)


def _split(a):
    c = 134217729.0 * a
    hi = c - (c - a)
    return hi, a - hi


def _two_prod(a, b):
    # exact a*b = p + e (Dekker)
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


def _inv_square(x):
    """1/x^2 as an unevaluated sum hi + lo."""
    sq, sq_err = _two_prod(x, x)
    r = 1.0 / sq
    p, p_err = _two_prod(r, sq)
    rem = (1.0 - p) - p_err
    return r, r * rem - r * r * sq_err


def trigamma(x):
    """psi'(x) for x > 0, same recurrence/asymptotic scheme as digamma."""
    x0 = _as_positive(x, "trigamma")
    x = x0.astype(float, copy=True)
    shifts = np.maximum(np.ceil(RECURRENCE_THRESHOLD - x), 0.0)
    low = shifts > 0
    xs = x + shifts
    inv = 1.0 / xs
    series = np.zeros_like(x)
    for k in range(len(_BERNOULLI), 0, -1):
        series = series + _BERNOULLI[k - 1] * inv ** (2 * k + 1)
    # accumulate from the smallest terms up
    rest = series + 0.5 * inv * inv + inv
    for j in range(int(shifts.max(initial=0.0)) - 1, 0, -1):
        xj = x + j
        rest = rest + np.where(j < shifts, 1.0 / (xj * xj), 0.0)
    # the first recurrence term dominates for small x; keep it in double-double
    hi, lo = _inv_square(np.where(low, x, 1.0))
    lead = np.where(low, hi, 0.0)
    rest = rest + np.where(low, lo, 0.0)
    out = lead + rest
    return _ret(out, x0)


def ln_beta(alpha, axis=-1):
    """Log of the multivariate Beta function along `axis`."""
    a = np.asarray(alpha, dtype=float)
    return ln_gamma(a).sum(axis=axis) - ln_gamma(a.sum(axis=axis))
