"""Isotropic Gaussian and Dirichlet exponential families.

Both families are held in standard coordinates (mean/variance, concentration)
with natural-coordinate views:

* Gaussian N(mu, s2 I) in d dims: T(x) = (|x|^2, x), eta = (-1/(2 s2), mu/s2),
  base measure h(x) = 1, so A(eta) = -|eta2|^2/(4 eta1) - d/2 ln(-eta1) + d/2 ln(pi).
* Dirichlet(alpha) on the open simplex: T(x) = ln x, eta = alpha - 1,
  h(x) = 1, A(eta) = sum lnG(alpha_k) - lnG(sum alpha).

A composite is a product over blocks; natural parameters concatenate and
log-partitions add.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from geoflow import special as sf
from geoflow.errors import DomainError


@dataclass(frozen=True)
class GaussianParams:
    mean: np.ndarray
    variance: float

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        if mean.ndim != 1:
            raise DomainError("Gaussian mean must be a vector")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", float(self.variance))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def check_interior(self):
        if not self.variance > 0 or not np.isfinite(self.variance):
            raise DomainError(f"variance must be positive and finite, got {self.variance}")

    def to_natural(self) -> np.ndarray:
        """[eta1, eta2_1, ..., eta2_d]."""
        self.check_interior()
        return np.concatenate([[-0.5 / self.variance], self.mean / self.variance])

    @classmethod
    def from_natural(cls, eta) -> "GaussianParams":
        eta = np.asarray(eta, dtype=float)
        if not eta[0] < 0:
            raise DomainError("Gaussian eta1 must be negative")
        variance = -0.5 / eta[0]
        return cls(eta[1:] * variance, variance)

    def to_json(self) -> dict:
        return {"family": "gaussian", "mean": self.mean.tolist(), "variance": self.variance}


@dataclass(frozen=True)
class DirichletParams:
    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        if alpha.ndim != 1 or alpha.size < 1:
            raise DomainError("concentration must be a non-empty vector")
        if np.any(alpha < 0) or not np.any(alpha > 0) or not np.all(np.isfinite(alpha)):
            raise DomainError("concentrations must be >= 0, finite, and not all zero")
        object.__setattr__(self, "alpha", alpha)

    @property
    def dim(self) -> int:
        return self.alpha.shape[0]

    @property
    def is_interior(self) -> bool:
        return bool(np.all(self.alpha > 0))

    def check_interior(self):
        if not self.is_interior:
            raise DomainError("boundary Dirichlet (some alpha_k = 0) is not an interior point")

    def to_natural(self) -> np.ndarray:
        self.check_interior()
        return self.alpha - 1.0

    @classmethod
    def from_natural(cls, eta) -> "DirichletParams":
        return cls(np.asarray(eta, dtype=float) + 1.0)

    def to_json(self) -> dict:
        return {"family": "dirichlet", "alpha": self.alpha.tolist()}


Params = Union[GaussianParams, DirichletParams]


@dataclass(frozen=True)
class CompositeParams:
    blocks: tuple

    def __post_init__(self):
        blocks = tuple((str(label), p) for label, p in self.blocks)
        for _, p in blocks:
            if not isinstance(p, (GaussianParams, DirichletParams)):
                raise DomainError(f"unsupported block type {type(p).__name__}")
        object.__setattr__(self, "blocks", blocks)

    def to_natural(self) -> np.ndarray:
        return np.concatenate([p.to_natural() for _, p in self.blocks])

    def to_json(self) -> dict:
        return {
            "family": "composite",
            "blocks": [{"label": label, **p.to_json()} for label, p in self.blocks],
        }


def params_from_json(obj: dict):
    family = obj.get("family")
    if family == "gaussian":
        return GaussianParams(obj["mean"], obj["variance"])
    if family == "dirichlet":
        return DirichletParams(obj["alpha"])
    if family == "composite":
        return CompositeParams(tuple((b["label"], params_from_json(b)) for b in obj["blocks"]))
    raise DomainError(f"unknown family {family!r}")


def log_partition(params) -> float:
    if isinstance(params, CompositeParams):
        return float(sum(log_partition(p) for _, p in params.blocks))
    params.check_interior()
    if isinstance(params, GaussianParams):
        d = params.dim
        s2 = params.variance
        return float(params.mean @ params.mean / (2 * s2) + 0.5 * d * math.log(2 * math.pi * s2))
    return float(sf.ln_beta(params.alpha))


def log_partition_natural(family: str, eta) -> float:
    """A(eta) evaluated directly in natural coordinates."""
    eta = np.asarray(eta, dtype=float)
    if family == "gaussian":
        e1, e2 = eta[0], eta[1:]
        if not e1 < 0:
            raise DomainError("Gaussian eta1 must be negative")
        d = e2.shape[0]
        return float(-(e2 @ e2) / (4 * e1) - 0.5 * d * math.log(-e1) + 0.5 * d * math.log(math.pi))
    if family == "dirichlet":
        return float(sf.ln_beta(eta + 1.0))
    raise DomainError(f"unknown family {family!r}")


def grad_log_partition(params) -> np.ndarray:
    """Mean of the sufficient statistic, E[T(x)] = grad A(eta)."""
    if isinstance(params, CompositeParams):
        return np.concatenate([grad_log_partition(p) for _, p in params.blocks])
    params.check_interior()
    if isinstance(params, GaussianParams):
        mu, s2 = params.mean, params.variance
        return np.concatenate([[params.dim * s2 + mu @ mu], mu])
    a = params.alpha
    return sf.digamma(a) - sf.digamma(a.sum())


def log_density(params, x) -> np.ndarray:
    """Log-density at points x (rows). Composite takes a tuple of per-block arrays."""
    if isinstance(params, CompositeParams):
        return sum(log_density(p, xb) for (_, p), xb in zip(params.blocks, x))
    params.check_interior()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if isinstance(params, GaussianParams):
        r = x - params.mean
        return -0.5 * (r * r).sum(axis=1) / params.variance - 0.5 * params.dim * math.log(
            2 * math.pi * params.variance
        )
    with np.errstate(divide="ignore"):
        logx = np.log(x)
    return dirichlet_log_density_from_log(params.alpha, logx)


def dirichlet_log_density_from_log(alpha, log_x) -> np.ndarray:
    """Dirichlet log-density given ln x, avoiding underflow of tiny coordinates."""
    alpha = np.asarray(alpha, dtype=float)
    return log_x @ (alpha - 1.0) - sf.ln_beta(alpha)


def _generator(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def sample_dirichlet_log(alpha, rng, size=None) -> np.ndarray:
    """Log of Dirichlet draws, shape (*size, K) or alpha.shape if size is None.

    Gamma(a) for a < 1 is drawn as Gamma(a + 1) * U**(1/a) in log space so very
    small concentrations do not underflow. Components with alpha = 0 get -inf
    (exact zero mass).
    """
    alpha = np.asarray(alpha, dtype=float)
    shape = alpha.shape if size is None else tuple(np.atleast_1d(size)) + alpha.shape
    a = np.broadcast_to(alpha, shape)
    zero = a == 0
    boost = a < 1
    a_safe = np.where(zero, 1.0, a)
    g = rng.standard_gamma(np.where(boost, a_safe + 1.0, a_safe))
    with np.errstate(divide="ignore"):
        log_g = np.log(g)
        u = rng.random(shape)
        log_g = np.where(boost, log_g + np.log(u) / a_safe, log_g)
    log_g = np.where(zero, -np.inf, log_g)
    top = log_g.max(axis=-1, keepdims=True)
    shifted = log_g - top
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def sample_dirichlet(alpha, rng, size=None) -> np.ndarray:
    return np.exp(sample_dirichlet_log(alpha, rng, size))


def sample(params, count: int, rng_seed=None) -> np.ndarray:
    """Draw `count` points as rows; deterministic given the seed or generator."""
    if count < 0:
        raise DomainError("count must be non-negative")
    rng = _generator(rng_seed)
    if isinstance(params, CompositeParams):
        return tuple(sample(p, count, rng) for _, p in params.blocks)
    if isinstance(params, GaussianParams):
        params.check_interior()
        if count == 0:
            return np.empty((0, params.dim))
        z = rng.standard_normal((count, params.dim))
        return params.mean + math.sqrt(params.variance) * z
    if count == 0:
        return np.empty((0, params.dim))
    return sample_dirichlet(params.alpha, rng, count)


def kl_gaussian(p: GaussianParams, q: GaussianParams) -> float:
    """KL(p || q) for isotropic Gaussians of equal dimension."""
    p.check_interior()
    q.check_interior()
    if p.dim != q.dim:
        raise DomainError("dimension mismatch")
    d = p.dim
    # r - 1 - ln r with r = s2_p/s2_q, written in terms of r - 1 to avoid cancellation
    x = (p.variance - q.variance) / q.variance
    diff = p.mean - q.mean
    return float(0.5 * (d * (x - math.log1p(x)) + diff @ diff / q.variance))


_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_GL_TAU = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


def ln_gamma_bregman(a, b):
    """lnG(b) - lnG(a) - (b - a) psi(a), elementwise.

    Close arguments use h^2 * int_0^1 (1 - s) psi'(a + s h) ds by Gauss-Legendre,
    which avoids the cancellation of the direct difference.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    h = b - a
    near = np.abs(h) <= 0.25 * np.minimum(a, b)
    out = sf.ln_gamma(b) - sf.ln_gamma(a) - h * sf.digamma(a)
    if np.any(near):
        an, hn = a[near], h[near]
        pts = an[:, None] + _GL_TAU[None, :] * hn[:, None]
        integral = (sf.trigamma(pts) * ((1.0 - _GL_TAU) * _GL_W)).sum(axis=1)
        out = np.array(out, dtype=float, copy=True)
        out[near] = hn * hn * integral
    return out


def kl_dirichlet(p: DirichletParams, q: DirichletParams) -> float:
    """KL(p || q) in the standard direction.

    Equal to ln B(a_q)/B(a_p) + sum (a_p - a_q)(psi(a_p) - psi(sum a_p)),
    evaluated as a sum of lnG Bregman terms.
    """
    p.check_interior()
    q.check_interior()
    if p.dim != q.dim:
        raise DomainError("dimension mismatch")
    a, b = p.alpha, q.alpha
    per_class = ln_gamma_bregman(a, b).sum()
    total = ln_gamma_bregman(np.array([a.sum()]), np.array([b.sum()]))[0]
    return float(per_class - total)


def kl_dirichlet_as_written(p: DirichletParams, q: DirichletParams) -> float:
    """ln B(a_p)/B(a_q) + sum (a_q - a_p)(psi(a_q) - psi(sum a_q)).

    This is the type-loss expression with p the true and q the predicted
    parameters; it equals KL(q || p), not KL(p || q).
    """
    return kl_dirichlet(q, p)


def fisher_metric(params) -> np.ndarray:
    """Hessian of A in natural coordinates."""
    if isinstance(params, CompositeParams):
        mats = [fisher_metric(p) for _, p in params.blocks]
        n = sum(m.shape[0] for m in mats)
        out = np.zeros((n, n))
        i = 0
        for m in mats:
            k = m.shape[0]
            out[i : i + k, i : i + k] = m
            i += k
        return out
    params.check_interior()
    if isinstance(params, GaussianParams):
        e1 = -0.5 / params.variance
        e2 = params.mean / params.variance
        d = params.dim
        g = np.empty((d + 1, d + 1))
        g[0, 0] = -(e2 @ e2) / (2 * e1**3) + d / (2 * e1**2)
        g[0, 1:] = g[1:, 0] = e2 / (2 * e1**2)
        g[1:, 1:] = -np.eye(d) / (2 * e1)
        return g
    a = params.alpha
    return np.diag(sf.trigamma(a)) - sf.trigamma(a.sum())
