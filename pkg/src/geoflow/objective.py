"""Coordinate and type losses with analytic gradients.

The coordinate loss is KL(N(mu_t, s_t^2) || N(mu_hat_t, s_t^2)), which collapses
to t^2 s_t^2 / (2 s1(t)^4) |x - x_hat|^2. The type loss is

    ln B(a)/B(a_hat) + sum_k (a_hat_k - a_k)(psi(a_hat_k) - psi(sum a_hat))

with a, a_hat the true and predicted concentrations at time t.

Batched entry points take a leading batch axis and one time per sample;
losses are summed over sites and averaged over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from geoflow import geodesic as geo
from geoflow import manifold as mf
from geoflow import special as sf
from geoflow.errors import DomainError


@dataclass
class LossBreakdown:
    l_x: float
    l_v: float
    l_b: float
    total: float
    t: float
    weight_x: float


def coord_weight(schedule: geo.EvoSchedule, t):
    t = np.asarray(t, dtype=float)
    s1 = schedule.sigma1(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = t**2 * geo.variance(schedule, t) / (2.0 * s1**4)
    if not np.all(np.isfinite(w)):
        raise DomainError("coordinate loss weight is singular at this t")
    return w


def coord_loss(x_true, x_pred, t, schedule: geo.EvoSchedule):
    """Weighted squared error and its gradient w.r.t. x_pred.

    Scalar t: one sample, loss is a float. Array t of shape (B,): x arrays
    carry a leading batch axis and the loss has shape (B,).
    """
    x_true = np.asarray(x_true, dtype=float)
    x_pred = np.asarray(x_pred, dtype=float)
    w = coord_weight(schedule, t)
    diff = x_true - x_pred
    if np.ndim(t) == 0:
        return float(w * (diff * diff).sum()), -2.0 * w * diff
    wb = w.reshape(w.shape + (1,) * (diff.ndim - 1))
    loss = (diff * diff).reshape(diff.shape[0], -1).sum(axis=1) * w
    return loss, -2.0 * wb * diff


def type_loss(alpha_true, alpha_pred):
    """Per-row type loss along the last axis, and its gradient w.r.t. alpha_pred.

    Evaluated as the equivalent sum of lnG Bregman terms (KL(Dir(a_hat) || Dir(a))),
    which keeps precision when the two vectors are close.
    """
    a = np.asarray(alpha_true, dtype=float)
    b = np.asarray(alpha_pred, dtype=float)
    if a.shape != b.shape:
        raise DomainError("shape mismatch")
    if not (np.all(a > 0) and np.all(b > 0)):
        raise DomainError("concentrations must be positive")
    sa, sb = a.sum(axis=-1), b.sum(axis=-1)
    per_class = mf.ln_gamma_bregman(b, a).sum(axis=-1)
    total = mf.ln_gamma_bregman(np.atleast_1d(sb), np.atleast_1d(sa)).reshape(np.shape(sb))
    loss = per_class - total
    d = b - a
    grad = d * sf.trigamma(b) - (sf.trigamma(sb) * d.sum(axis=-1))[..., None]
    if np.ndim(loss) == 0:
        loss = float(loss)
    return loss, grad


def type_loss_direct(alpha_true, alpha_pred) -> float:
    """The same expression evaluated term by term (reference form)."""
    a = np.asarray(alpha_true, dtype=float)
    b = np.asarray(alpha_pred, dtype=float)
    return float(
        sf.ln_beta(a) - sf.ln_beta(b) + ((b - a) * (sf.digamma(b) - sf.digamma(b.sum()))).sum()
    )


def build_predicted_path_params(schedule: geo.EvoSchedule, t: float, x_hat=None, v_hat=None, b_hat=None):
    """Path parameters at t with predicted targets in place of the data."""
    if v_hat is not None:
        geo.check_simplex(v_hat)
    if b_hat is not None:
        geo.check_simplex(b_hat)
    return geo.geodesic_step((x_hat, v_hat, b_hat), t, 0.0, schedule)


def _alpha_batch(schedule, probs, t):
    tb = t.reshape(t.shape + (1,) * (probs.ndim - 1))
    return (1.0 - tb) + tb * schedule.alpha1(probs, tb)


def evaluate_losses(
    schedule: geo.EvoSchedule,
    t,
    truth: tuple,
    pred: tuple,
    offset: float = 0.0,
):
    """Batched L_x + L_v + L_b and gradients w.r.t. the predicted targets.

    truth/pred are (x, v, b) with leading batch axis; entries may be None to
    skip a block. `offset` > 0 evaluates the KL at t + offset instead of t
    (one-step-ahead variant), capped at 1.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    te = np.minimum(t + offset, 1.0) if offset else t
    batch = t.shape[0]
    x, v, b = truth
    x_hat, v_hat, b_hat = pred
    grads = [None, None, None]
    parts = [0.0, 0.0, 0.0]

    if x is not None:
        loss, g = coord_loss(x, x_hat, te, schedule)
        parts[0] = float(loss.sum() / batch)
        grads[0] = g / batch
    for i, (true_p, pred_p) in enumerate(((v, v_hat), (b, b_hat)), start=1):
        if true_p is None:
            continue
        if true_p.shape[-1] == 0 or true_p.shape[-2] == 0:
            grads[i] = np.zeros_like(pred_p)
            continue
        a_true = _alpha_batch(schedule, true_p, te)
        a_pred = _alpha_batch(schedule, pred_p, te)
        loss, g = type_loss(a_true, a_pred)
        parts[i] = float(loss.sum() / batch)
        # chain through a_hat_t = (1 - t) + t * alpha1(p_hat, t)
        slope = te * schedule.alpha1_slope(te)
        grads[i] = g * slope.reshape(slope.shape + (1,) * (g.ndim - 1)) / batch

    weight = coord_weight(schedule, te)
    breakdown = LossBreakdown(
        l_x=parts[0],
        l_v=parts[1],
        l_b=parts[2],
        total=parts[0] + parts[1] + parts[2],
        t=float(t.mean()),
        weight_x=float(weight.mean()),
    )
    return breakdown, tuple(grads)
