"""Self-check suites run by `geoflow verify`.

Each check yields a record {check, params, value, bound, pass}. Checks look
functions up through their modules at call time so a patched implementation
is what gets exercised.
"""

from __future__ import annotations

import math

import numpy as np

from geoflow import flowfield as ff
from geoflow import geodesic as geo
from geoflow import manifold as mf
from geoflow import net
from geoflow import objective as obj
from geoflow import special as sf
from geoflow.errors import ConfigError

SUITES = ("kl", "gradients", "continuity", "fisher", "sldm", "singularity")


def _record(check, params, value, bound, ok):
    return dict(check=check, params=params, value=float(value), bound=bound, **{"pass": bool(ok)})


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def suite_kl(seed=0):
    rng = np.random.default_rng(seed)
    out = []
    # digamma against a central difference of lnG
    worst = 0.0
    for x in np.geomspace(0.05, 50, 25):
        h = 1e-5 * x
        fd = (sf.ln_gamma(x + h) - sf.ln_gamma(x - h)) / (2 * h)
        worst = max(worst, abs(sf.digamma(x) - fd))
    out.append(_record("digamma_vs_lngamma_derivative", {"points": 25}, worst, 1e-6, worst < 1e-6))

    # Dirichlet KL: lnG Bregman form vs the direct digamma form
    worst = 0.0
    for _ in range(20):
        k = int(rng.integers(2, 8))
        a = rng.uniform(0.3, 8.0, k)
        b = rng.uniform(0.3, 8.0, k)
        direct = sf.ln_beta(b) - sf.ln_beta(a) + ((a - b) * (sf.digamma(a) - sf.digamma(a.sum()))).sum()
        value = mf.kl_dirichlet(mf.DirichletParams(a), mf.DirichletParams(b))
        worst = max(worst, abs(value - direct) / max(abs(direct), 1e-3))
        loss, _ = obj.type_loss(a, b)
        worst = max(worst, abs(loss - obj.type_loss_direct(a, b)) / max(abs(loss), 1e-3))
    out.append(_record("dirichlet_kl_forms_agree", {"pairs": 20}, worst, 1e-9, worst < 1e-9))

    # Dirichlet KL against a Monte-Carlo estimate
    worst_z = 0.0
    for _ in range(3):
        a = rng.uniform(0.5, 5.0, 3)
        b = rng.uniform(0.5, 5.0, 3)
        p, q = mf.DirichletParams(a), mf.DirichletParams(b)
        logx = mf.sample_dirichlet_log(a, rng, 100_000)
        diff = mf.dirichlet_log_density_from_log(a, logx) - mf.dirichlet_log_density_from_log(b, logx)
        se = diff.std() / math.sqrt(diff.size)
        worst_z = max(worst_z, abs(diff.mean() - mf.kl_dirichlet(p, q)) / se)
    out.append(_record("dirichlet_kl_monte_carlo_z", {"pairs": 3, "draws": 100_000}, worst_z, 4.0, worst_z < 4.0))

    # Gaussian KL against quadrature
    worst = 0.0
    for _ in range(5):
        mp, mq = rng.normal(size=2)
        vp, vq = rng.uniform(0.2, 3.0, 2)
        x = np.linspace(min(mp, mq) - 12, max(mp, mq) + 12, 200_001)
        lp = -0.5 * (x - mp) ** 2 / vp - 0.5 * np.log(2 * np.pi * vp)
        lq = -0.5 * (x - mq) ** 2 / vq - 0.5 * np.log(2 * np.pi * vq)
        quad = np.trapezoid(np.exp(lp) * (lp - lq), x)
        val = mf.kl_gaussian(mf.GaussianParams([mp], vp), mf.GaussianParams([mq], vq))
        worst = max(worst, _rel(val, quad))
    out.append(_record("gaussian_kl_quadrature", {"pairs": 5}, worst, 1e-7, worst < 1e-7))
    return out


def _fd_check(f, x, grad, h=1e-6):
    x = np.array(x, dtype=float)
    num = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        num[i] = (f(xp) - f(xm)) / (2 * h)
    scale = max(np.abs(num).max(), np.abs(grad).max(), 1e-8)
    return float(np.abs(num - grad).max() / scale)


def suite_gradients(seed=0, cases=50):
    rng = np.random.default_rng(seed)
    schedule = geo.EvoSchedule.evo()
    worst_x = worst_v = 0.0
    for _ in range(cases):
        t = float(rng.uniform(0.05, 0.95))
        x = rng.normal(size=3)
        xp = rng.normal(size=3)
        _, g = obj.coord_loss(x, xp, t, schedule)
        worst_x = max(worst_x, _fd_check(lambda z: obj.coord_loss(x, z, t, schedule)[0], xp, g))
        k = int(rng.integers(2, 6))
        a = rng.uniform(0.5, 5.0, k)
        b = rng.uniform(0.5, 5.0, k)
        _, g = obj.type_loss(a, b)
        worst_v = max(worst_v, _fd_check(lambda z: obj.type_loss(a, z)[0], b, g, h=1e-5))
    out = [
        _record("coord_loss_grad", {"cases": cases}, worst_x, 1e-5, worst_x < 1e-5),
        _record("type_loss_grad", {"cases": cases}, worst_v, 1e-5, worst_v < 1e-5),
    ]
    worst = 0.0
    for case in range(max(cases // 10, 1)):
        cfg = net.NetConfig(coord_dim=3, n_atom_types=3, n_bond_types=3, hidden=6, depth=3, n_freq=2)
        worst = max(worst, network_gradient_error(cfg, seed + case))
    out.append(_record("network_backward_grad", {"cases": max(cases // 10, 1)}, worst, 1e-5, worst < 1e-5))
    return out


def network_gradient_error(cfg: net.NetConfig, seed: int, batch=2, n_sites=3, h=1e-6, return_kinks=False):
    """Worst tensor-wise relative error of backward() against central differences.

    Every parameter entry is differenced; the error of a tensor is its largest
    absolute deviation over its largest gradient magnitude. Entries whose two
    one-sided differences disagree (a relu kink inside the step) are skipped
    and counted.
    """
    rng = np.random.default_rng(seed)
    weights = net.init_weights(cfg, seed)
    pairs = n_sites * (n_sites - 1) // 2
    m_x = rng.normal(size=(batch, n_sites, cfg.coord_dim))
    m_v = rng.dirichlet(np.ones(cfg.n_atom_types), size=(batch, n_sites)) if cfg.n_atom_types else None
    m_b = rng.dirichlet(np.ones(cfg.n_bond_types), size=(batch, pairs)) if cfg.has_bonds else None
    t = rng.uniform(0, 1, batch)
    ctx = rng.normal(size=cfg.context_dim) if cfg.context_dim else None
    (x_hat, v_hat, b_hat), cache = net.forward(weights, m_x, m_v, m_b, t, ctx)
    cx = rng.normal(size=x_hat.shape)
    cv = rng.normal(size=v_hat.shape)
    cb = rng.normal(size=b_hat.shape) if b_hat is not None else None

    def loss(w):
        (xh, vh, bh), _ = net.forward(w, m_x, m_v, m_b, t, ctx)
        val = (cx * xh).sum() + (cv * vh).sum()
        return val + ((cb * bh).sum() if bh is not None else 0.0)

    base = loss(weights)
    grads = net.backward(weights, cache, (cx, cv, cb))
    worst, kinks = 0.0, 0
    for name, w in weights.params.items():
        num = np.zeros_like(w)
        keep = np.ones(w.shape, dtype=bool)
        for idx in np.ndindex(w.shape):
            plus, minus = weights.copy(), weights.copy()
            plus.params[name][idx] += h
            minus.params[name][idx] -= h
            lp, lm = loss(plus), loss(minus)
            num[idx] = (lp - lm) / (2 * h)
            if abs((lp - base) - (base - lm)) / h > 1e-3 * max(abs(num[idx]), 1.0):
                keep[idx] = False
        kinks += int((~keep).sum())
        scale = max(np.abs(num).max(initial=0.0), np.abs(grads[name]).max(initial=0.0), 1e-12)
        if keep.any():
            worst = max(worst, float(np.abs(num - grads[name])[keep].max() / scale))
    return (worst, kinks) if return_kinks else worst


def suite_continuity(target=2.0):
    schedule = geo.EvoSchedule.evo()
    out = []
    worst = 0.0
    for t in np.round(np.arange(0.1, 1.0, 0.1), 10):
        worst = max(worst, ff.continuity_residual(schedule, target, float(t)).residual)
    out.append(_record("continuity_evo_gaussian", {"target": target}, worst, 1e-4, worst < 1e-4))
    ctrl = ff.continuity_residual(schedule, target, 0.5, velocity=ff.zero_velocity).residual
    out.append(_record("continuity_zero_velocity_control", {"t": 0.5}, ctrl, 1e-2, ctrl > 1e-2))
    return out


def suite_fisher(seed=0):
    schedule = geo.EvoSchedule.evo()
    out = []
    vals = [ff.fisher_fm_check(schedule, np.array([2.0, -1.0, 0.5]), t, 1e-3, 1e-3, "gaussian", seed)
            for t in (0.1, 0.3, 0.5, 0.7)]
    dev = max(abs(v - 1) for v in vals)
    out.append(_record("fisher_gaussian_ratio", {"t": [0.1, 0.3, 0.5, 0.7]}, dev, 0.01, dev <= 0.01))
    for k in (3, 7):
        onehot = np.eye(k)[0]
        vals = [ff.fisher_fm_check(schedule, onehot, t, 1e-3, 1e-3, "dirichlet", seed) for t in (0.1, 0.3, 0.5, 0.7)]
        dev = max(abs(v - 1) for v in vals)
        out.append(_record("fisher_dirichlet_ratio", {"K": k}, dev, 0.02, dev <= 0.02))
    return out


def suite_sldm(eps=0.05, target=1.5):
    schedule = geo.EvoSchedule.sldm(eps)
    grid = np.linspace(0, 1, 101)
    pts = [geo.gaussian_path(schedule, [target], float(t)) for t in grid]
    sig_dev = max(abs(p.sigma - eps) for p in pts)
    mu = np.array([p.mean[0] for p in pts])
    second = float(np.abs(np.diff(mu, 2)).max())
    line = float(np.abs(mu - grid * target).max())
    return [
        _record("sldm_sigma_constant", {"eps": eps}, sig_dev, 1e-12, sig_dev < 1e-12),
        _record("sldm_mean_second_difference", {"eps": eps}, second, 1e-12, second < 1e-12),
        _record("sldm_mean_is_t_times_target", {"eps": eps}, line, 1e-12, line < 1e-12),
    ]


def suite_singularity():
    expected = (1e4 - 1) / (1e6 - 1)
    probe = geo.singularity_probe(1e-3, 0.01).gaussian_t
    bis = geo.crossing_time(geo.EvoSchedule.static(1e-3), 0.01)
    evo = geo.EvoSchedule.evo()
    min_sigma = min(math.sqrt(geo.variance(evo, float(t))) for t in np.linspace(0, 0.5, 501))
    return [
        _record("static_collapse_time", {"sigma1": 1e-3, "threshold": 0.01}, abs(probe - expected), 1e-6,
                abs(probe - expected) < 1e-6),
        _record("static_collapse_bisection", {"sigma1": 1e-3}, abs(bis - expected), 1e-6, abs(bis - expected) < 1e-6),
        _record("evo_sigma_floor_first_half", {"lam": 0.2}, min_sigma, 0.1, min_sigma > 0.1),
    ]


_RUNNERS = {
    "kl": suite_kl,
    "gradients": suite_gradients,
    "continuity": suite_continuity,
    "fisher": suite_fisher,
    "sldm": suite_sldm,
    "singularity": suite_singularity,
}


def run(suite: str = "all") -> list:
    if suite == "all":
        names = SUITES
    elif suite in _RUNNERS:
        names = (suite,)
    else:
        raise ConfigError(f"unknown suite {suite!r}; expected one of {SUITES + ('all',)}")
    records = []
    for name in names:
        for rec in _RUNNERS[name]():
            rec["suite"] = name
            records.append(rec)
    return records
