"""Small numpy parameter estimator with handwritten reverse mode.

Per-site shared MLP over [coords, type simplex point, time embedding, context],
with the mean of the first hidden layer over sites concatenated into the
second layer. Heads per site regress coordinates and type logits; a pair head
reads (a_i + a_j, a_i * a_j, bond simplex point, squared distance, time
embedding) for every unordered pair i < j.

Arrays carry a leading batch axis: coords (B, N, D), types (B, N, Ka),
bonds (B, N(N-1)/2, Kb) in np.triu_indices order.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional

import numpy as np

from geoflow.errors import ConfigError

FORMAT_VERSION = "geoflow-net/1"
ACTIVATIONS = ("tanh", "relu", "silu")


@dataclass(frozen=True)
class NetConfig:
    coord_dim: int = 3
    n_atom_types: int = 0
    n_bond_types: int = 0
    hidden: int = 64
    depth: int = 2
    activation: str = "tanh"
    n_freq: int = 8
    context_dim: int = 0
    coord_scale: float = 0.0  # > 0 enables coordinate preconditioning in the pipeline

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        if self.depth < 2:
            raise ConfigError("depth must be at least 2 (site layer + context layer)")
        if self.hidden < 1:
            raise ConfigError("hidden width must be >= 1")
        if min(self.coord_dim, self.n_atom_types, self.n_bond_types, self.context_dim, self.n_freq,
               self.coord_scale) < 0:
            raise ConfigError("sizes must be non-negative")

    @property
    def has_bonds(self) -> bool:
        return self.n_bond_types > 0

    @property
    def site_input(self) -> int:
        return self.coord_dim + self.n_atom_types + 2 * self.n_freq + self.context_dim

    @property
    def pair_input(self) -> int:
        return 2 * self.hidden + self.n_bond_types + 1 + 2 * self.n_freq

    def output_units(self, n_sites: int) -> int:
        pairs = n_sites * (n_sites - 1) // 2
        return n_sites * (self.coord_dim + self.n_atom_types) + pairs * self.n_bond_types


@dataclass
class ModelWeights:
    config: NetConfig
    params: Dict[str, np.ndarray]
    seed: Optional[int] = None
    version: str = FORMAT_VERSION

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.config, {k: v.copy() for k, v in self.params.items()}, self.seed, self.version)

    def shapes(self) -> dict:
        return {k: v.shape for k, v in self.params.items()}


def param_shapes(config: NetConfig) -> dict:
    h = config.hidden
    shapes = {"W0": (config.site_input, h), "b0": (h,), "W1": (2 * h, h), "b1": (h,)}
    for layer in range(2, config.depth):
        shapes[f"W{layer}"] = (h, h)
        shapes[f"b{layer}"] = (h,)
    shapes.update(Wx=(h, config.coord_dim), bx=(config.coord_dim,))
    shapes.update(Wv=(h, config.n_atom_types), bv=(config.n_atom_types,))
    if config.has_bonds:
        shapes.update(Wq=(config.pair_input, h), bq=(h,), Wb=(h, config.n_bond_types), bb=(config.n_bond_types,))
    return shapes


def init_weights(config: NetConfig, seed: int = 0) -> ModelWeights:
    """Weights uniform in +-1/sqrt(fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.startswith("W"):
            bound = 1.0 / np.sqrt(max(shape[0], 1))
            params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            params[name] = np.zeros(shape)
    return ModelWeights(config, params, seed)


def zero_weights(config: NetConfig) -> ModelWeights:
    return ModelWeights(config, {k: np.zeros(s) for k, s in param_shapes(config).items()})


def time_embedding(t, n_freq: int) -> np.ndarray:
    """(B, 2F) sinusoidal features, frequencies geometric from 1 to 1000."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    freqs = np.geomspace(1.0, 1000.0, n_freq) if n_freq > 1 else np.ones(n_freq)
    arg = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z / (1.0 + np.exp(-z))


def _dact(name, z, a):
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0).astype(float)
    s = 1.0 / (1.0 + np.exp(-z))
    return s * (1.0 + z * (1.0 - s))


def softmax(logits):
    if logits.shape[-1] == 0:
        return logits.copy()
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _flat_dot(a, g):
    """sum over all leading axes of a^T g."""
    lead = tuple(range(a.ndim - 1))
    return np.tensordot(a, g, axes=(lead, lead))


def _lead_sum(g):
    return g.sum(axis=tuple(range(g.ndim - 1)))


def forward(weights: ModelWeights, m_x, m_v, m_b, t, context=None):
    """Returns ((x_hat, v_hat, b_hat), cache). b_hat is None without a bond head."""
    cfg = weights.config
    p = weights.params
    m_x = np.asarray(m_x, dtype=float)
    if m_x.ndim != 3 or m_x.shape[2] != cfg.coord_dim:
        raise ConfigError(f"coords must have shape (B, N, {cfg.coord_dim}), got {m_x.shape}")
    batch, n = m_x.shape[:2]
    m_v = np.asarray(m_v, dtype=float) if m_v is not None else np.zeros((batch, n, 0))
    if m_v.shape != (batch, n, cfg.n_atom_types):
        raise ConfigError(f"types must have shape {(batch, n, cfg.n_atom_types)}, got {m_v.shape}")
    t = np.broadcast_to(np.asarray(t, dtype=float), (batch,))
    temb = time_embedding(t, cfg.n_freq)
    if cfg.context_dim:
        if context is None:
            raise ConfigError("network expects a context vector")
        ctx = np.broadcast_to(np.asarray(context, dtype=float), (batch, cfg.context_dim))
    else:
        ctx = np.zeros((batch, 0))

    h0 = np.concatenate(
        [m_x, m_v, np.broadcast_to(temb[:, None, :], (batch, n, temb.shape[1])),
         np.broadcast_to(ctx[:, None, :], (batch, n, ctx.shape[1]))],
        axis=2,
    )
    layers = []
    z = h0 @ p["W0"] + p["b0"]
    a = _act(cfg.activation, z)
    layers.append((h0, z, a))
    pooled = a.mean(axis=1, keepdims=True)
    h = np.concatenate([a, np.broadcast_to(pooled, a.shape)], axis=2)
    for layer in range(1, cfg.depth):
        z = h @ p[f"W{layer}"] + p[f"b{layer}"]
        a = _act(cfg.activation, z)
        layers.append((h, z, a))
        h = a

    x_hat = a @ p["Wx"] + p["bx"]
    v_hat = softmax(a @ p["Wv"] + p["bv"])
    cache = dict(layers=layers, v_hat=v_hat, n=n, batch=batch)

    b_hat = None
    if cfg.has_bonds:
        iu, ju = np.triu_indices(n, 1)
        pairs = iu.size
        if m_b is None:
            raise ConfigError("network has a bond head; bond inputs required")
        m_b = np.asarray(m_b, dtype=float)
        if m_b.shape != (batch, pairs, cfg.n_bond_types):
            raise ConfigError(f"bonds must have shape {(batch, pairs, cfg.n_bond_types)}, got {m_b.shape}")
        ai, aj = a[:, iu], a[:, ju]
        delta = m_x[:, iu] - m_x[:, ju]
        d2 = (delta * delta).sum(axis=2, keepdims=True)
        q_in = np.concatenate(
            [ai + aj, ai * aj, m_b, d2, np.broadcast_to(temb[:, None, :], (batch, pairs, temb.shape[1]))],
            axis=2,
        )
        zq = q_in @ p["Wq"] + p["bq"]
        aq = _act(cfg.activation, zq)
        b_hat = softmax(aq @ p["Wb"] + p["bb"])
        cache.update(iu=iu, ju=ju, ai=ai, aj=aj, q_in=q_in, zq=zq, aq=aq, b_hat=b_hat)
    return (x_hat, v_hat, b_hat), cache


def _softmax_backward(probs, grad):
    return probs * (grad - (probs * grad).sum(axis=-1, keepdims=True))


def backward(weights: ModelWeights, cache: dict, upstream, frozen=()) -> Dict[str, np.ndarray]:
    """Weight gradients given dL/d(x_hat, v_hat, b_hat); None entries count as zero.

    Names in `frozen` get exactly zero gradient.
    """
    cfg = weights.config
    p = weights.params
    gx, gv, gb = upstream
    layers = cache["layers"]
    a_last = layers[-1][2]
    grads = {}

    gx = np.zeros(a_last.shape[:2] + (cfg.coord_dim,)) if gx is None else gx
    gv = np.zeros_like(cache["v_hat"]) if gv is None else gv
    dlv = _softmax_backward(cache["v_hat"], gv)
    grads["Wx"] = _flat_dot(a_last, gx)
    grads["bx"] = _lead_sum(gx)
    grads["Wv"] = _flat_dot(a_last, dlv)
    grads["bv"] = _lead_sum(dlv)
    da = gx @ p["Wx"].T + dlv @ p["Wv"].T

    if cfg.has_bonds:
        gb = np.zeros_like(cache["b_hat"]) if gb is None else gb
        dlb = _softmax_backward(cache["b_hat"], gb)
        grads["Wb"] = _flat_dot(cache["aq"], dlb)
        grads["bb"] = _lead_sum(dlb)
        dzq = (dlb @ p["Wb"].T) * _dact(cfg.activation, cache["zq"], cache["aq"])
        grads["Wq"] = _flat_dot(cache["q_in"], dzq)
        grads["bq"] = _lead_sum(dzq)
        dq = dzq @ p["Wq"].T
        h = cfg.hidden
        d_sum, d_prod = dq[:, :, :h], dq[:, :, h : 2 * h]
        np.add.at(da, (slice(None), cache["iu"]), d_sum + d_prod * cache["aj"])
        np.add.at(da, (slice(None), cache["ju"]), d_sum + d_prod * cache["ai"])

    for layer in range(cfg.depth - 1, 0, -1):
        h_in, z, a = layers[layer]
        dz = da * _dact(cfg.activation, z, a)
        grads[f"W{layer}"] = _flat_dot(h_in, dz)
        grads[f"b{layer}"] = _lead_sum(dz)
        dh = dz @ p[f"W{layer}"].T
        if layer == 1:
            hid = cfg.hidden
            # second half of the input is the site mean of the first layer
            da = dh[:, :, :hid] + dh[:, :, hid:].sum(axis=1, keepdims=True) / cache["n"]
        else:
            da = dh

    h0, z0, a0 = layers[0]
    dz0 = da * _dact(cfg.activation, z0, a0)
    grads["W0"] = _flat_dot(h0, dz0)
    grads["b0"] = _lead_sum(dz0)

    for name in frozen:
        grads[name] = np.zeros_like(p[name])
    return grads


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, weights: ModelWeights) -> "AdamState":
        return cls({k: np.zeros_like(w) for k, w in weights.params.items()},
                   {k: np.zeros_like(w) for k, w in weights.params.items()})


def optimizer_step(weights: ModelWeights, grads, state: AdamState, lr=5e-4, betas=(0.9, 0.999), eps=1e-8):
    """One Adam update; returns new weights and state (inputs are not modified)."""
    b1, b2 = betas
    step = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, w in weights.params.items():
        if state.m[name].shape != w.shape:
            raise ConfigError(f"optimizer state shape mismatch for {name}")
        g = grads[name]
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m / (1 - b1**step)
        v_hat = v / (1 - b2**step)
        new_params[name] = w - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return ModelWeights(weights.config, new_params, weights.seed, weights.version), AdamState(new_m, new_v, step)


def save_checkpoint(path, weights: ModelWeights, state: Optional[AdamState] = None, meta: Optional[dict] = None):
    header = dict(version=weights.version, config=asdict(weights.config), seed=weights.seed,
                  adam_step=state.step if state else None, meta=meta or {})
    arrays = {f"p/{k}": v for k, v in weights.params.items()}
    if state is not None:
        arrays.update({f"m/{k}": v for k, v in state.m.items()})
        arrays.update({f"v/{k}": v for k, v in state.v.items()})
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header)), **arrays)


def load_checkpoint(path):
    """Returns (weights, adam_state or None, meta). Rejects other format versions."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["__header__"]))
        if header.get("version") != FORMAT_VERSION:
            raise ConfigError(f"checkpoint version {header.get('version')!r} != {FORMAT_VERSION!r}")
        config = NetConfig(**header["config"])
        params = {k[2:]: data[k] for k in data.files if k.startswith("p/")}
        m = {k[2:]: data[k] for k in data.files if k.startswith("m/")}
        v = {k[2:]: data[k] for k in data.files if k.startswith("v/")}
    expected = param_shapes(config)
    if {k: tuple(a.shape) for k, a in params.items()} != {k: tuple(s) for k, s in expected.items()}:
        raise ConfigError("checkpoint parameter shapes do not match its config")
    weights = ModelWeights(config, params, header.get("seed"))
    state = AdamState(m, v, header["adam_step"]) if header.get("adam_step") is not None else None
    return weights, state, header.get("meta", {})
