"""Sample-space velocity of the Gaussian path, continuity-equation residuals,
and the local KL vs Fisher quadratic-form check."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from geoflow import geodesic as geo
from geoflow import manifold as mf
from geoflow.errors import DomainError

COARSE_POINTS_PER_SIGMA = 50


def gaussian_velocity(schedule: geo.EvoSchedule, target, t: float, x):
    """u_t(x) = mu'_t + (sigma'_t / sigma_t) (x - mu_t).

    `target` and `x` broadcast against each other; for a 1D path pass a scalar
    target and any array of points.
    """
    if t >= 1.0 and schedule.sigma1(1.0) <= 0:
        raise DomainError("velocity is singular at t = 1 without an eps floor")
    mu, sigma, dmu, dsigma = geo.gaussian_path_rates(schedule, target, t)
    x = np.asarray(x, dtype=float)
    if np.ndim(target) == 0:
        mu, dmu = mu[0], dmu[0]
    return dmu + (dsigma / sigma) * (x - mu)


def zero_velocity(schedule, target, t, x):
    return np.zeros_like(np.asarray(x, dtype=float))


@dataclass
class GridDensity:
    lo: float
    step: float
    values: np.ndarray
    t: float

    @property
    def nodes(self) -> np.ndarray:
        return self.lo + self.step * np.arange(self.values.size)

    def integral(self) -> float:
        v = self.values
        return float(self.step * (v.sum() - 0.5 * (v[0] + v[-1])))


def path_density(schedule: geo.EvoSchedule, target: float, t: float, x) -> np.ndarray:
    p = geo.gaussian_path(schedule, [target], t)
    z = (np.asarray(x, dtype=float) - p.mean[0]) / p.sigma
    return np.exp(-0.5 * z * z) / (p.sigma * math.sqrt(2 * math.pi))


def density_grid(
    schedule: geo.EvoSchedule,
    target: float,
    t: float,
    span: float = 10.0,
    points_per_sigma: int = 200,
) -> GridDensity:
    p = geo.gaussian_path(schedule, [target], t)
    step = p.sigma / points_per_sigma
    n = int(round(2 * span * points_per_sigma)) + 1
    lo = p.mean[0] - span * p.sigma
    nodes = lo + step * np.arange(n)
    return GridDensity(lo, step, path_density(schedule, target, t, nodes), t)


@dataclass
class ContinuityResult:
    residual: float
    grid_step: float
    sigma: float
    coarse: bool

    @property
    def status(self) -> str:
        return "warning: grid coarse relative to sigma_t" if self.coarse else "ok"


def continuity_residual(
    schedule: geo.EvoSchedule,
    target: float,
    t: float,
    velocity: Optional[Callable] = None,
    grid: Optional[GridDensity] = None,
    dt: float = 1e-5,
) -> ContinuityResult:
    """max |d_t p + d_x(p u)| over the grid interior.

    d_t p uses a central difference of the exact path density with step `dt`;
    d_x(p u) a fourth-order central stencil on the grid.
    """
    if not dt <= t <= 1.0 - dt:
        raise DomainError("t must be at least dt away from the ends of [0, 1]")
    velocity = velocity or gaussian_velocity
    grid = grid or density_grid(schedule, target, t)
    x = grid.nodes
    h = grid.step
    p = grid.values
    dpdt = (path_density(schedule, target, t + dt, x) - path_density(schedule, target, t - dt, x)) / (2 * dt)
    flux = p * velocity(schedule, target, t, x)
    dflux = (-flux[4:] + 8 * flux[3:-1] - 8 * flux[1:-3] + flux[:-4]) / (12 * h)
    res = dpdt[2:-2] + dflux
    sigma = math.sqrt(geo.variance(schedule, t))
    return ContinuityResult(
        residual=float(np.max(np.abs(res))),
        grid_step=h,
        sigma=sigma,
        coarse=h > sigma / COARSE_POINTS_PER_SIGMA,
    )


def _block(family, eta):
    if family == "gaussian":
        return mf.GaussianParams.from_natural(eta)
    return mf.DirichletParams.from_natural(eta)


def _kl(family, p, q):
    return mf.kl_gaussian(p, q) if family == "gaussian" else mf.kl_dirichlet(p, q)


def fisher_fm_check(
    schedule: geo.EvoSchedule,
    target,
    t: float,
    s: float,
    dt: float = 1e-3,
    family: str = "gaussian",
    rng=0,
) -> float:
    """KL(p(eta_t + v dt) || p(eta_t + v_hat dt)) / (1/2 dt^2 |v - v_hat|^2_G).

    v is the path tangent, v_hat = v + s * (random unit direction). Returns 1
    when the mismatch vanishes.
    """
    if s == 0 or dt == 0:
        return 1.0
    rng = np.random.default_rng(rng)
    if family == "gaussian":
        eta = geo.gaussian_natural(schedule, target, t)
    elif family == "dirichlet":
        eta = geo.dirichlet_path_soft(schedule, target, t).alpha - 1.0
    else:
        raise DomainError(f"unknown family {family!r}")
    v = geo.tangent(schedule, target, t, family)
    direction = rng.standard_normal(v.shape)
    direction /= np.linalg.norm(direction)
    v_hat = v + s * direction

    kl = _kl(family, _block(family, eta + v * dt), _block(family, eta + v_hat * dt))
    g = mf.fisher_metric(_block(family, eta))
    diff = (v - v_hat) * dt
    return kl / (0.5 * diff @ g @ diff)
