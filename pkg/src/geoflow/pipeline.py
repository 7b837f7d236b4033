"""Training (discrete-time KL matching) and sampling (progressive parameter
refinement) over composite coordinate / atom-type / bond-type states."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from geoflow import geodesic as geo
from geoflow import manifold as mf
from geoflow import net
from geoflow import objective as obj
from geoflow.errors import ConfigError, DomainError


def _rows(a, rows):
    a = np.asarray(a, dtype=float)
    return a.reshape(rows, a.shape[-1] if a.ndim == 2 else -1)


@dataclass
class ToyMolecule:
    """coords (N, D); atom_types (N, Ka); bond_types (N(N-1)/2, Kb) over pairs i < j, or None."""

    coords: np.ndarray
    atom_types: np.ndarray
    bond_types: Optional[np.ndarray] = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        if self.coords.ndim != 2:
            raise DomainError("coords must be (N, D)")
        n = self.coords.shape[0]
        self.atom_types = _rows(self.atom_types, n)
        if self.bond_types is not None:
            self.bond_types = _rows(self.bond_types, n * (n - 1) // 2)

    @property
    def n_atoms(self) -> int:
        return self.coords.shape[0]

    @property
    def n_atom_types(self) -> int:
        return self.atom_types.shape[1]

    @property
    def n_bond_types(self) -> int:
        return 0 if self.bond_types is None else self.bond_types.shape[1]

    def type_indices(self) -> np.ndarray:
        return self.atom_types.argmax(axis=1)

    def bond_indices(self) -> Optional[np.ndarray]:
        return None if self.bond_types is None else self.bond_types.argmax(axis=1)

    def bond_matrix(self) -> Optional[np.ndarray]:
        """Symmetric (N, N) matrix of bond class indices, diagonal 0."""
        if self.bond_types is None:
            return None
        n = self.n_atoms
        mat = np.zeros((n, n), dtype=int)
        iu, ju = np.triu_indices(n, 1)
        mat[iu, ju] = mat[ju, iu] = self.bond_indices()
        return mat

    def to_json(self) -> dict:
        out = {"coords": self.coords.tolist(), "atom_types": self.type_indices().tolist(),
               "n_atom_types": self.n_atom_types}
        if self.bond_types is not None:
            out.update(bond_types=self.bond_indices().tolist(), n_bond_types=self.n_bond_types)
        return out

    @classmethod
    def from_json(cls, obj_: dict) -> "ToyMolecule":
        coords = np.asarray(obj_["coords"], dtype=float)
        n = coords.shape[0]
        types = np.eye(obj_["n_atom_types"])[np.asarray(obj_["atom_types"], dtype=int)].reshape(n, -1)
        bonds = None
        if "bond_types" in obj_:
            bonds = np.eye(obj_["n_bond_types"])[np.asarray(obj_["bond_types"], dtype=int)]
        return cls(coords, types, bonds)


@dataclass
class TrainConfig:
    n_steps: int = 100  # time discretisation n (training grid and sampling steps)
    iterations: int = 20000
    batch_size: int = 64
    lr: float = 5e-4
    lam: float = 0.2
    eps: float = 1e-6
    seed: int = 0
    mode: str = "evo_egf"
    sigma1_static: float = 0.01
    alpha1_static: Optional[float] = None
    sldm_eps: float = 0.05
    bond_generation: bool = True
    continuous_time: bool = False
    one_step_ahead: bool = False
    alpha_floor: float = 1e-8
    hidden: int = 64
    depth: int = 2
    activation: str = "relu"
    n_freq: int = 8
    precondition: bool = True

    def __post_init__(self):
        if self.n_steps < 1 or self.iterations < 0 or self.batch_size < 1:
            raise ConfigError("n_steps and batch_size must be >= 1, iterations >= 0")
        if not 0 < self.lam <= 1:
            raise ConfigError("lam must lie in (0, 1]")
        if self.mode not in geo.MODES:
            raise ConfigError(f"mode must be one of {geo.MODES}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def schedule(self) -> geo.EvoSchedule:
        if self.mode == "evo_egf":
            return geo.EvoSchedule.evo(self.lam, self.eps)
        if self.mode == "static_egf":
            return geo.EvoSchedule.static(self.sigma1_static, self.alpha1_static, self.lam)
        return geo.EvoSchedule.sldm(self.sldm_eps, self.lam)

    def net_config(self, coord_dim: int, n_atom_types: int, n_bond_types: int,
                   coord_scale: float = 0.0) -> net.NetConfig:
        return net.NetConfig(
            coord_scale=coord_scale if self.precondition else 0.0,
            coord_dim=coord_dim,
            n_atom_types=n_atom_types,
            n_bond_types=n_bond_types if self.bond_generation else 0,
            hidden=self.hidden,
            depth=self.depth,
            activation=self.activation,
            n_freq=self.n_freq,
        )


@dataclass
class RngStreams:
    """Independent generators so ablation arms share the draws of common blocks."""

    time: np.random.Generator
    coords: np.random.Generator
    types: np.random.Generator
    bonds: np.random.Generator
    data: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "RngStreams":
        ss = np.random.SeedSequence(seed).spawn(5)
        return cls(*(np.random.default_rng(s) for s in ss))


def time_grid(n: int) -> np.ndarray:
    """{0, 1/n, ..., (n-1)/n}; t = 1 is only the terminal emission point."""
    if n < 1:
        raise DomainError("n must be >= 1")
    return np.arange(n) / n


def draw_times(config: TrainConfig, count: int, rng: np.random.Generator) -> np.ndarray:
    if config.continuous_time:
        return rng.random(count)
    i = rng.integers(1, config.n_steps + 1, size=count)
    return (i - 1) / config.n_steps


def stack_molecules(molecules: Sequence[ToyMolecule], bond_generation=True) -> Dict[int, tuple]:
    """Group by atom count: N -> (indices, coords, types, bonds or None)."""
    groups: Dict[int, list] = {}
    for idx, m in enumerate(molecules):
        groups.setdefault(m.n_atoms, []).append(idx)
    out = {}
    for n, idx in groups.items():
        ms = [molecules[i] for i in idx]
        x = np.stack([m.coords for m in ms])
        v = np.stack([m.atom_types for m in ms])
        b = None
        if bond_generation and ms[0].bond_types is not None:
            b = np.stack([m.bond_types for m in ms])
        out[n] = (np.asarray(idx), x, v, b)
    return out


def coord_coefficients(schedule, t, scale):
    """(c_in, c_skip, c_out) for x_hat = c_skip*m + c_out*F(c_in*m), shaped (B, 1, 1).

    With m = a*x + s_t*noise, c_skip is the linear least-squares coefficient for
    data of RMS `scale` and c_out the matching residual scale. The coordinate KL
    weight equals 1 / (2 (s_t/a)^2), so after this rescaling every t
    contributes with comparable magnitude.
    """
    t = np.asarray(t, dtype=float).reshape(-1, 1, 1)
    var = geo.variance(schedule, t)
    a = var * t / schedule.sigma1(t) ** 2
    tot = a**2 * scale**2 + var
    return 1.0 / np.sqrt(tot), a * scale**2 / tot, scale * np.sqrt(var / tot)


def predict(weights: net.ModelWeights, schedule, m_x, m_v, m_b, t):
    """Network prediction with coordinate preconditioning when configured.

    Returns (prediction, cache, c_out); c_out is None without preconditioning.
    """
    scale = weights.config.coord_scale
    if scale <= 0:
        pred, cache = net.forward(weights, m_x, m_v, m_b, t)
        return pred, cache, None
    c_in, c_skip, c_out = coord_coefficients(schedule, t, scale)
    (f_x, v_hat, b_hat), cache = net.forward(weights, c_in * m_x, m_v, m_b, t)
    return (c_skip * m_x + c_out * f_x, v_hat, b_hat), cache, c_out


def data_scale(molecules: Sequence[ToyMolecule]) -> float:
    """RMS coordinate magnitude about the origin (the prior mean)."""
    sq = [np.mean(m.coords**2) for m in molecules if m.coords.size]
    return float(np.sqrt(np.mean(sq))) if sq else 1.0


def _sample_dirichlet(alpha, rng, floor):
    return mf.sample_dirichlet(np.maximum(alpha, floor), rng)


def _noisy_state(schedule, t, x, v, b, streams: RngStreams, floor):
    """Draw m_t for a group with per-sample times t (shape (B,))."""
    tb = t[:, None, None]
    s1 = schedule.sigma1(tb)
    var = geo.variance(schedule, tb)
    mu = var * (tb * x / s1**2)
    m_x = mu + np.sqrt(var) * streams.coords.standard_normal(x.shape)
    m_v = _sample_dirichlet(obj._alpha_batch(schedule, v, t), streams.types, floor) if v.shape[-1] else v
    m_b = None
    if b is not None:
        m_b = _sample_dirichlet(obj._alpha_batch(schedule, b, t), streams.bonds, floor)
    return m_x, m_v, m_b


def _step_groups(config, schedule, groups, total, weights, streams, t_all, predictor=None):
    """Losses and accumulated weight gradients for pre-grouped data."""
    agg = dict(l_x=0.0, l_v=0.0, l_b=0.0, weight_x=0.0)
    grads = None
    offset = 1.0 / config.n_steps if config.one_step_ahead else 0.0
    for n in sorted(groups):
        idx, x, v, b = groups[n]
        t = t_all[idx]
        m_x, m_v, m_b = _noisy_state(schedule, t, x, v, b, streams, config.alpha_floor)
        if predictor is not None:
            pred = predictor(m_x, m_v, m_b, t)
            cache = None
        else:
            pred, cache, c_out = predict(weights, schedule, m_x, m_v, m_b, t)
        share = len(idx) / total
        breakdown, g = obj.evaluate_losses(schedule, t, (x, v, b), pred, offset)
        for k in ("l_x", "l_v", "l_b", "weight_x"):
            agg[k] += share * getattr(breakdown, k)
        if cache is not None:
            g = tuple(None if gi is None else gi * share for gi in g)
            if c_out is not None and g[0] is not None:
                g = (g[0] * c_out,) + g[1:]
            gw = net.backward(weights, cache, g)
            grads = gw if grads is None else {k: grads[k] + gw[k] for k in grads}
    loss = obj.LossBreakdown(
        l_x=agg["l_x"], l_v=agg["l_v"], l_b=agg["l_b"],
        total=agg["l_x"] + agg["l_v"] + agg["l_b"], t=float(t_all.mean()), weight_x=agg["weight_x"],
    )
    return loss, grads


def train_step(config: TrainConfig, batch: Sequence[ToyMolecule], weights: net.ModelWeights,
               adam: net.AdamState, streams: RngStreams, predictor=None):
    """One update: draw t per molecule, noisy states, predict, KL losses, Adam.

    With `predictor` (a callable standing in for the network) only the losses
    are computed and weights are returned unchanged.
    """
    if len(batch) == 0 or any(m.n_atoms == 0 for m in batch):
        raise DomainError("batch must be non-empty and every molecule needs at least one atom")
    schedule = config.schedule()
    groups = stack_molecules(batch, config.bond_generation)
    t_all = draw_times(config, len(batch), streams.time)
    loss, grads = _step_groups(config, schedule, groups, len(batch), weights, streams, t_all, predictor)
    if grads is not None:
        weights, adam = net.optimizer_step(weights, grads, adam, config.lr)
    return loss, weights, adam


@dataclass
class TrainResult:
    weights: net.ModelWeights
    adam: net.AdamState
    metrics: List[dict] = field(default_factory=list)


def train(config: TrainConfig, molecules: Sequence[ToyMolecule], weights: Optional[net.ModelWeights] = None,
          log_every: int = 1, callback: Optional[Callable] = None) -> TrainResult:
    """Training loop with batches drawn uniformly with replacement."""
    if not molecules:
        raise DomainError("empty training set")
    first = molecules[0]
    if weights is None:
        cfg = config.net_config(first.coords.shape[1], first.n_atom_types, first.n_bond_types,
                                data_scale(molecules))
        weights = net.init_weights(cfg, config.seed)
    adam = net.AdamState.zeros_like(weights)
    streams = RngStreams.from_seed(config.seed)
    schedule = config.schedule()
    groups_all = stack_molecules(molecules, config.bond_generation)
    # position of every molecule inside its group
    where = np.empty((len(molecules), 2), dtype=int)
    for n, (idx, *_rest) in groups_all.items():
        where[idx, 0] = n
        where[idx, 1] = np.arange(len(idx))
    metrics = []
    for step in range(config.iterations):
        pick = streams.data.integers(0, len(molecules), size=config.batch_size)
        t_all = draw_times(config, config.batch_size, streams.time)
        groups = {}
        for n in np.unique(where[pick, 0]):
            sel = np.nonzero(where[pick, 0] == n)[0]
            rows = where[pick[sel], 1]
            _, x, v, b = groups_all[n]
            groups[int(n)] = (sel, x[rows], v[rows], None if b is None else b[rows])
        loss, grads = _step_groups(config, schedule, groups, config.batch_size, weights, streams, t_all)
        weights, adam = net.optimizer_step(weights, grads, adam, config.lr)
        if step % log_every == 0 or step == config.iterations - 1:
            row = dict(step=step, l_x=loss.l_x, l_v=loss.l_v, l_b=loss.l_b, total=loss.total)
            metrics.append(row)
            if callback is not None:
                callback(row)
    return TrainResult(weights, adam, metrics)


def network_predictor(weights: net.ModelWeights, schedule: geo.EvoSchedule):
    def predictor(m_x, m_v, m_b, t):
        return predict(weights, schedule, m_x, m_v, m_b, t)[0]

    return predictor


def sample_batch(config: TrainConfig, model, n_atoms: int, count: int, seed=0,
                 coord_dim: Optional[int] = None, n_atom_types: Optional[int] = None,
                 n_bond_types: Optional[int] = None, return_trajectory: bool = False):
    """Generate `count` molecules with `n_atoms` atoms each by geodesic refinement.

    `model` is ModelWeights or a callable (m_x, m_v, m_b, t) -> (x_hat, v_hat, b_hat).
    Block sizes default to the network config when `model` is ModelWeights.
    """
    if config.n_steps < 1:
        raise DomainError("n_steps must be >= 1")
    if n_atoms < 1 or count < 1:
        raise DomainError("n_atoms and count must be >= 1")
    if isinstance(model, net.ModelWeights):
        cfg = model.config
        coord_dim = cfg.coord_dim if coord_dim is None else coord_dim
        n_atom_types = cfg.n_atom_types if n_atom_types is None else n_atom_types
        n_bond_types = cfg.n_bond_types if n_bond_types is None else n_bond_types
        predictor = network_predictor(model, config.schedule())
    else:
        predictor = model
        if coord_dim is None or n_atom_types is None or n_bond_types is None:
            raise ConfigError("block sizes are required with a callable predictor")
    if not config.bond_generation:
        n_bond_types = 0
    streams = seed if isinstance(seed, RngStreams) else RngStreams.from_seed(seed)
    schedule = config.schedule()
    n = config.n_steps
    pairs = n_atoms * (n_atoms - 1) // 2
    has_bonds = n_bond_types > 0

    state = geo.GeodesicState(
        t=0.0,
        mean=np.zeros((count, n_atoms, coord_dim)),
        variance=schedule.sigma0**2,
        alpha_v=np.ones((count, n_atoms, n_atom_types)),
        alpha_b=np.ones((count, pairs, n_bond_types)) if has_bonds else None,
    )
    trajectory = [state]
    for i in range(n):
        t = i / n
        _check_state(state)
        m_x = state.mean + math.sqrt(state.variance) * streams.coords.standard_normal(state.mean.shape)
        m_v = _sample_dirichlet(state.alpha_v, streams.types, config.alpha_floor) if n_atom_types else state.alpha_v
        m_b = _sample_dirichlet(state.alpha_b, streams.bonds, config.alpha_floor) if has_bonds else None
        x_hat, v_hat, b_hat = predictor(m_x, m_v, m_b, np.full(count, t))
        state = geo.geodesic_step(
            (x_hat, v_hat if n_atom_types else None, b_hat if has_bonds else None),
            t, (i + 1) / n - t, schedule,
        )
        if not n_atom_types:
            state.alpha_v = np.ones((count, n_atoms, 0))
        trajectory.append(state)
    _check_state(state)

    coords = state.mean + math.sqrt(state.variance) * streams.coords.standard_normal(state.mean.shape)
    types = np.eye(n_atom_types)[_argmax(state.alpha_v, streams.types)] if n_atom_types else state.alpha_v
    bonds = np.eye(n_bond_types)[_argmax(state.alpha_b, streams.bonds)] if has_bonds else None
    mols = [ToyMolecule(coords[k], types[k], None if bonds is None else bonds[k]) for k in range(count)]
    return (mols, trajectory) if return_trajectory else mols


def sample(config: TrainConfig, model, n_atoms: int, seed=0, **kwargs) -> ToyMolecule:
    return sample_batch(config, model, n_atoms, 1, seed, **kwargs)[0]


def _argmax(alpha, rng):
    """Last-axis argmax with exact ties broken uniformly at random."""
    ties = alpha == alpha.max(axis=-1, keepdims=True)
    return (rng.random(alpha.shape) * ties).argmax(axis=-1)


def _check_state(state: geo.GeodesicState):
    if not state.variance > 0:
        raise DomainError(f"sampler reached non-positive variance at t={state.t}")
    for alpha in (state.alpha_v, state.alpha_b):
        if alpha is not None and np.any(alpha < 0):
            raise DomainError(f"sampler reached negative concentration at t={state.t}")
