"""Static and evolving e-geodesic paths between a fixed prior and a data target.

Gaussian block: prior N(0, s0^2 I), endpoint N(x*, s1(t)^2 I). Precision and
precision-weighted mean interpolate linearly in t:

    1/s_t^2 = (1 - t)/s0^2 + t/s1(t)^2,    mu_t = s_t^2 * t x* / s1(t)^2

Dirichlet block: prior alpha0 = 1, endpoint alpha1(t), alpha_t = (1 - t) + t alpha1(t).

Modes
-----
evo_egf     s1(t) = lam (1 - t) + eps, alpha1(t) = (1 - lam(1-t)) e_k + lam(1-t)/K
static_egf  fixed s1 and alpha1 = 1 + (kappa - 1) e_k
sldm        s0 = s1 = eps (the Gaussian path is a straight line); types as evo_egf
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from geoflow.errors import DomainError

MODES = ("evo_egf", "static_egf", "sldm")


@dataclass(frozen=True)
class EvoSchedule:
    mode: str = "evo_egf"
    lam: float = 0.2
    eps: float = 1e-6
    sigma1_static: float = 0.01
    # static Dirichlet target concentration; None means 1/sigma1_static^2
    alpha1_static: Optional[float] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise DomainError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not 0 < self.lam <= 1:
            raise DomainError("smoothing lam must lie in (0, 1]")
        if not self.eps > 0:
            raise DomainError("eps must be positive")
        if self.mode == "static_egf" and not self.sigma1_static > 0:
            raise DomainError("static sigma1 must be positive")

    @classmethod
    def evo(cls, lam=0.2, eps=1e-6):
        return cls("evo_egf", lam=lam, eps=eps)

    @classmethod
    def static(cls, sigma1, alpha1=None, lam=0.2):
        return cls("static_egf", lam=lam, sigma1_static=sigma1, alpha1_static=alpha1)

    @classmethod
    def sldm(cls, eps=0.05, lam=0.2):
        return cls("sldm", lam=lam, eps=eps)

    @property
    def sigma0(self) -> float:
        return self.eps if self.mode == "sldm" else 1.0

    @property
    def static_concentration(self) -> float:
        if self.alpha1_static is not None:
            return float(self.alpha1_static)
        return 1.0 / self.sigma1_static**2

    def sigma1(self, t):
        if self.mode == "evo_egf":
            return self.lam * (1.0 - t) + self.eps
        if self.mode == "static_egf":
            return self.sigma1_static + 0.0 * t
        return self.eps + 0.0 * t

    def dsigma1(self, t):
        return -self.lam + 0.0 * t if self.mode == "evo_egf" else 0.0 * t

    def alpha1(self, probs, t):
        """Endpoint concentration for (possibly soft) class probabilities."""
        probs = np.asarray(probs, dtype=float)
        k = probs.shape[-1]
        if self.mode == "static_egf":
            return 1.0 + (self.static_concentration - 1.0) * probs
        s = self.lam * (1.0 - t)
        return (1.0 - s) * probs + s / k

    def alpha1_slope(self, t):
        """d alpha1 / d probs (the endpoint map is affine in the probabilities)."""
        if self.mode == "static_egf":
            return self.static_concentration - 1.0
        return 1.0 - self.lam * (1.0 - t)

    def dalpha1(self, probs, t):
        probs = np.asarray(probs, dtype=float)
        if self.mode == "static_egf":
            return np.zeros_like(probs)
        return self.lam * probs - self.lam / probs.shape[-1]


@dataclass
class PathPoint:
    t: float
    mean: Optional[np.ndarray] = None
    variance: Optional[float] = None
    alpha: Optional[np.ndarray] = None

    @property
    def sigma(self) -> float:
        return math.sqrt(self.variance)

    @property
    def eta1(self) -> float:
        return -0.5 / self.variance

    @property
    def eta2(self) -> np.ndarray:
        return self.mean / self.variance


@dataclass
class GeodesicState:
    """Parameters of every block at one time."""

    t: float
    mean: Optional[np.ndarray] = None
    variance: Optional[float] = None
    alpha_v: Optional[np.ndarray] = None
    alpha_b: Optional[np.ndarray] = None


def _check_t(t):
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must lie in [0, 1], got {t}")


def precision(schedule: EvoSchedule, t):
    s0, s1 = schedule.sigma0, schedule.sigma1(t)
    return (1.0 - t) / s0**2 + t / s1**2


def variance(schedule: EvoSchedule, t):
    """s_t^2 on the Gaussian path (independent of the target)."""
    return 1.0 / precision(schedule, t)


def gaussian_path(schedule: EvoSchedule, target_mean, t: float) -> PathPoint:
    _check_t(t)
    x = np.asarray(target_mean, dtype=float)
    s1 = schedule.sigma1(t)
    var = variance(schedule, t)
    # prior mean is zero
    mean = var * (t * x / s1**2)
    return PathPoint(t=t, mean=mean, variance=float(var))


def _alpha_t(schedule: EvoSchedule, probs, t):
    return (1.0 - t) + t * schedule.alpha1(probs, t)


def _check_onehot(target):
    target = np.asarray(target, dtype=float)
    ok = np.all((target == 0) | (target == 1)) and np.all(target.sum(axis=-1) == 1)
    if target.ndim == 0 or target.shape[-1] < 1 or not ok:
        raise DomainError("target must be one-hot along the last axis")
    return target


def check_simplex(probs, tol=1e-9):
    probs = np.asarray(probs, dtype=float)
    if np.any(probs < -tol) or np.any(np.abs(probs.sum(axis=-1) - 1.0) > tol):
        raise DomainError("rows must lie on the probability simplex")
    return probs


def dirichlet_path(schedule: EvoSchedule, target_onehot, t: float) -> PathPoint:
    """Concentrations at t for one-hot targets (one row per site)."""
    _check_t(t)
    target = _check_onehot(target_onehot)
    return PathPoint(t=t, alpha=_alpha_t(schedule, target, t))


def dirichlet_path_soft(schedule: EvoSchedule, probs, t: float) -> PathPoint:
    """Same affine map applied to simplex-valued (predicted) targets."""
    _check_t(t)
    probs = check_simplex(probs)
    return PathPoint(t=t, alpha=_alpha_t(schedule, probs, t))


def geodesic_step(predicted, t: float, dt: float, schedule: EvoSchedule) -> GeodesicState:
    """Advance to t + dt with the predicted targets in place of the data.

    `predicted` is (x_hat, v_hat, b_hat); any entry may be None.
    """
    _check_t(t)
    t_next = t + dt
    if dt < 0 or t_next > 1.0 + 1e-12:
        raise DomainError(f"t + dt = {t_next} leaves [0, 1]")
    t_next = min(t_next, 1.0)
    x_hat, v_hat, b_hat = predicted
    state = GeodesicState(t=t_next)
    if x_hat is not None:
        p = gaussian_path(schedule, x_hat, t_next)
        state.mean, state.variance = p.mean, p.variance
    if v_hat is not None:
        state.alpha_v = _alpha_t(schedule, v_hat, t_next)
    if b_hat is not None:
        state.alpha_b = _alpha_t(schedule, b_hat, t_next)
    return state


def gaussian_natural(schedule: EvoSchedule, target_mean, t: float) -> np.ndarray:
    """[eta1, eta2...] of the Gaussian path point."""
    p = gaussian_path(schedule, target_mean, t)
    return np.concatenate([[p.eta1], np.atleast_1d(p.eta2)])


def gaussian_tangent(schedule: EvoSchedule, target_mean, t: float) -> np.ndarray:
    """d/dt of [eta1, eta2] = (eta1(t) - eta0) + t * d eta1(t)/dt."""
    _check_t(t)
    x = np.atleast_1d(np.asarray(target_mean, dtype=float))
    s0 = schedule.sigma0
    s1, ds1 = schedule.sigma1(t), schedule.dsigma1(t)
    # endpoint natural parameters and their time derivative
    end1 = -0.5 / s1**2
    end2 = x / s1**2
    dend1 = ds1 / s1**3
    dend2 = -2.0 * x * ds1 / s1**3
    start1 = -0.5 / s0**2
    d1 = (end1 - start1) + t * dend1
    d2 = end2 + t * dend2
    return np.concatenate([[d1], d2])


def dirichlet_tangent(schedule: EvoSchedule, probs, t: float) -> np.ndarray:
    _check_t(t)
    probs = np.asarray(probs, dtype=float)
    return (schedule.alpha1(probs, t) - 1.0) + t * schedule.dalpha1(probs, t)


def tangent(schedule: EvoSchedule, target, t: float, family: str = "gaussian") -> np.ndarray:
    if family == "gaussian":
        return gaussian_tangent(schedule, target, t)
    if family == "dirichlet":
        return dirichlet_tangent(schedule, target, t)
    raise DomainError(f"unknown family {family!r}")


def gaussian_path_rates(schedule: EvoSchedule, target_mean, t: float):
    """(mu_t, sigma_t, d mu_t/dt, d sigma_t/dt) from the analytic schedule."""
    x = np.atleast_1d(np.asarray(target_mean, dtype=float))
    s0 = schedule.sigma0
    s1, ds1 = schedule.sigma1(t), schedule.dsigma1(t)
    prec = (1.0 - t) / s0**2 + t / s1**2
    dprec = -1.0 / s0**2 + 1.0 / s1**2 - 2.0 * t * ds1 / s1**3
    q = t * x / s1**2
    dq = x / s1**2 - 2.0 * t * x * ds1 / s1**3
    mu = q / prec
    dmu = (dq * prec - q * dprec) / prec**2
    sigma = prec**-0.5
    dsigma = -0.5 * prec**-1.5 * dprec
    return mu, sigma, dmu, dsigma


@dataclass
class SingularityProbe:
    gaussian_t: float
    dirichlet_t: Optional[float] = None


def singularity_probe(
    sigma1_static: float,
    threshold: float,
    alpha1_static: Optional[float] = None,
    alpha_level: Optional[float] = None,
) -> SingularityProbe:
    """First t at which the static path has s_t <= threshold (prior s0 = 1).

    Solves (1 - t) + t/s1^2 = 1/threshold^2. Optionally also the first t at
    which the target-class concentration (1 - t) + t*alpha1 reaches
    `alpha_level` under a static endpoint with the other classes at 1.
    Returns inf when the level is never reached on [0, 1].
    """
    if not 0 < sigma1_static < 1:
        raise DomainError("static sigma1 must lie in (0, 1)")
    if not threshold > 0:
        raise DomainError("threshold must be positive")
    if threshold >= 1.0:
        t_g = 0.0
    elif threshold < sigma1_static:
        t_g = math.inf
    else:
        t_g = (threshold**-2 - 1.0) / (sigma1_static**-2 - 1.0)
    t_d = None
    if alpha1_static is not None and alpha_level is not None:
        if alpha_level <= 1.0:
            t_d = 0.0
        elif alpha_level > alpha1_static:
            t_d = math.inf
        else:
            t_d = (alpha_level - 1.0) / (alpha1_static - 1.0)
    return SingularityProbe(t_g, t_d)


def crossing_time(schedule: EvoSchedule, threshold: float, tol: float = 1e-12) -> float:
    """First t with s_t <= threshold for any mode, by bisection (s_t is monotone)."""
    if math.sqrt(variance(schedule, 0.0)) <= threshold:
        return 0.0
    if math.sqrt(variance(schedule, 1.0)) > threshold:
        return math.inf
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if math.sqrt(variance(schedule, mid)) <= threshold:
            hi = mid
        else:
            lo = mid
    return hi


SCHEMES = ("egf", "evo_egf", "sldm", "linear_fm")


def schedule_comparison(
    scheme: str,
    target: float,
    grid: Sequence[float],
    sigma1: float = 0.01,
    lam: float = 0.2,
    eps: float = 1e-6,
    sldm_sigma: float = 0.05,
) -> list:
    """Rows of (t, eta1, eta2, mu, sigma) for a 1D target under one scheme.

    linear_fm is a straight mean path with sigma going linearly from 1 to eps,
    included only as a visual reference.
    """
    rows = []
    if scheme == "linear_fm":
        for t in grid:
            mu = t * target
            sigma = (1.0 - t) * 1.0 + t * eps
            rows.append(dict(t=t, eta1=-0.5 / sigma**2, eta2=mu / sigma**2, mu=mu, sigma=sigma))
        return rows
    if scheme == "egf":
        schedule = EvoSchedule.static(sigma1)
    elif scheme == "evo_egf":
        schedule = EvoSchedule.evo(lam, eps)
    elif scheme == "sldm":
        schedule = EvoSchedule.sldm(sldm_sigma)
    else:
        raise DomainError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    for t in grid:
        p = gaussian_path(schedule, [target], t)
        rows.append(dict(t=t, eta1=p.eta1, eta2=float(p.eta2[0]), mu=float(p.mean[0]), sigma=p.sigma))
    return rows
