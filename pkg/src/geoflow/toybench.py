"""Synthetic datasets and evaluation metrics for the toy benchmarks."""

from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from geoflow.errors import ConfigError, DomainError
from geoflow.pipeline import ToyMolecule

KINDS = ("gauss_mixture_2d", "categorical", "template_molecules")

# bond classes: 0 none, 1 single, 2 double
N_BOND_TYPES = 3
N_ATOM_TYPES = 4


@dataclass(frozen=True)
class Template:
    name: str
    coords: np.ndarray
    types: tuple
    bonds: tuple  # class index per pair i < j

    def molecule(self, n_atom_types=N_ATOM_TYPES, n_bond_types=N_BOND_TYPES) -> ToyMolecule:
        return ToyMolecule(
            self.coords - self.coords.mean(axis=0),
            np.eye(n_atom_types)[list(self.types)],
            np.eye(n_bond_types)[list(self.bonds)],
        )


def _polygon(n, side):
    r = side / (2 * np.sin(np.pi / n))
    ang = 2 * np.pi * np.arange(n) / n
    return np.stack([r * np.cos(ang), r * np.sin(ang), np.zeros(n)], axis=1)


def default_templates() -> List[Template]:
    # pair order for N=4: (0,1) (0,2) (0,3) (1,2) (1,3) (2,3)
    return [
        Template("triangle", _polygon(3, 1.5), (0, 0, 1), (1, 1, 1)),
        Template("square", _polygon(4, 1.4), (0, 2, 0, 3), (2, 0, 1, 1, 0, 2)),
    ]


@dataclass
class Dataset:
    kind: str
    molecules: List[ToyMolecule]
    meta: dict = field(default_factory=dict)
    labels: Optional[np.ndarray] = None

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "meta": self.meta,
            "labels": None if self.labels is None else self.labels.tolist(),
            "molecules": [m.to_json() for m in self.molecules],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Dataset":
        labels = obj.get("labels")
        return cls(
            obj["kind"],
            [ToyMolecule.from_json(m) for m in obj["molecules"]],
            obj.get("meta", {}),
            None if labels is None else np.asarray(labels),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def mixture_modes(n_modes=8, radius=5.0) -> np.ndarray:
    ang = 2 * np.pi * np.arange(n_modes) / n_modes
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def generate_dataset(kind: str, size: int, seed: int = 0, **params) -> Dataset:
    """Build one of the toy datasets.

    gauss_mixture_2d: n_modes, radius, spread.
    categorical: probs.
    template_molecules: jitter, templates.
    """
    if size < 1:
        raise DomainError("size must be >= 1")
    rng = np.random.default_rng(seed)
    if kind == "gauss_mixture_2d":
        n_modes = params.get("n_modes", 8)
        radius = params.get("radius", 5.0)
        spread = params.get("spread", 0.2)
        if n_modes < 1:
            raise DomainError("need at least one mode")
        centers = mixture_modes(n_modes, radius)
        labels = rng.integers(0, n_modes, size=size)
        pts = centers[labels] + spread * rng.standard_normal((size, 2))
        mols = [ToyMolecule(p[None, :], np.zeros((1, 0))) for p in pts]
        meta = dict(n_modes=n_modes, radius=radius, spread=spread, centers=centers.tolist())
        return Dataset(kind, mols, meta, labels)
    if kind == "categorical":
        probs = np.asarray(params.get("probs", (0.7, 0.2, 0.1)), dtype=float)
        if probs.ndim != 1 or probs.size < 2:
            raise DomainError("categorical data needs K >= 2 classes")
        if np.any(probs < 0) or abs(probs.sum() - 1) > 1e-9:
            raise DomainError("probs must lie on the simplex")
        labels = rng.choice(probs.size, size=size, p=probs)
        eye = np.eye(probs.size)
        mols = [ToyMolecule(np.zeros((1, 0)), eye[k][None, :]) for k in labels]
        return Dataset(kind, mols, dict(probs=probs.tolist()), labels)
    if kind == "template_molecules":
        jitter = params.get("jitter", 0.05)
        templates = params.get("templates") or default_templates()
        labels = rng.integers(0, len(templates), size=size)
        mols = []
        for k in labels:
            base = templates[k].molecule()
            coords = base.coords + jitter * rng.standard_normal(base.coords.shape)
            mols.append(ToyMolecule(coords, base.atom_types, base.bond_types))
        meta = dict(jitter=jitter, templates=[t.name for t in templates])
        return Dataset(kind, mols, meta, labels)
    raise ConfigError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")


def _histogram(labels, k):
    labels = np.asarray(labels, dtype=int)
    return np.bincount(labels, minlength=k).astype(float) / max(labels.size, 1)


def _kl_bits(p, m):
    nz = p > 0  # 0 log 0 = 0
    return float((p[nz] * np.log2(p[nz] / m[nz])).sum())


def freq_metrics(generated, reference, n_categories: Optional[int] = None, smoothing: float = 1e-9):
    """(MAE, JSD in bits) between empirical category frequencies.

    Raw frequencies give the MAE; the JSD uses additively smoothed, renormalised
    frequencies so empty categories stay finite.
    """
    generated = np.asarray(generated, dtype=int)
    reference = np.asarray(reference, dtype=int)
    if generated.size == 0 or reference.size == 0:
        raise DomainError("empty label set")
    k = n_categories or int(max(generated.max(), reference.max())) + 1
    p, q = _histogram(generated, k), _histogram(reference, k)
    mae = float(np.abs(p - q).mean())
    ps = (p + smoothing) / (1 + k * smoothing)
    qs = (q + smoothing) / (1 + k * smoothing)
    m = 0.5 * (ps + qs)
    jsd = 0.5 * _kl_bits(ps, m) + 0.5 * _kl_bits(qs, m)
    return mae, float(max(jsd, 0.0))


@dataclass
class CoverageReport:
    covered: int
    n_modes: int
    counts: np.ndarray
    mean_distance: float


def coverage_radius(n_modes=8, radius=5.0) -> float:
    """A quarter of the spacing between neighbouring modes on the circle."""
    return 0.25 * 2.0 * radius * np.sin(np.pi / n_modes)


def mode_coverage(points, centers, radius: float, min_fraction: float = 0.01) -> CoverageReport:
    """A mode counts as covered when >= min_fraction of samples lie within `radius` of it."""
    if radius <= 0:
        raise DomainError("radius must be positive")
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    centers = np.asarray(centers, dtype=float)
    d = np.linalg.norm(points[:, None, :] - centers[None], axis=2)
    counts = (d <= radius).sum(axis=0)
    covered = int((counts >= min_fraction * len(points)).sum())
    return CoverageReport(covered, len(centers), counts, float(d.min(axis=1).mean()))


def is_connected(bond_matrix) -> bool:
    """Graph connectivity over non-zero bond classes (BFS from atom 0)."""
    bm = np.asarray(bond_matrix)
    n = bm.shape[0]
    if n <= 1:
        return True
    seen = {0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in np.nonzero(bm[i])[0]:
            if j not in seen:
                seen.add(int(j))
                queue.append(int(j))
    return len(seen) == n


@dataclass
class MoleculeReport:
    template: Optional[str]
    rmsd: float
    type_accuracy: float
    bond_accuracy: float
    connected: Optional[bool]


def _centered(x):
    return x - x.mean(axis=0)


def molecule_checks(mol: ToyMolecule, templates: Sequence[Template] = None,
                    max_exhaustive: int = 5) -> MoleculeReport:
    """Match against the template with the same atom count.

    Coordinates are mean-centred; for N <= max_exhaustive every atom
    permutation is tried and the one with the lowest RMSD is kept.
    """
    templates = templates or default_templates()
    n = mol.n_atoms
    connected = None if mol.bond_types is None else is_connected(mol.bond_matrix())
    cands = [t for t in templates if len(t.types) == n]
    if not cands:
        return MoleculeReport(None, float("inf"), 0.0, 0.0, connected)
    x = _centered(mol.coords)
    perms = itertools.permutations(range(n)) if n <= max_exhaustive else [tuple(range(n))]
    perms = [np.asarray(p) for p in perms]
    best = None
    for tpl in cands:
        ref = tpl.molecule()
        y = ref.coords
        for p in perms:
            rmsd = float(np.sqrt(((x[p] - y) ** 2).sum(axis=1).mean()))
            if best is None or rmsd < best[0]:
                best = (rmsd, tpl, ref, p)
    rmsd, tpl, ref, p = best
    type_acc = float((mol.type_indices()[p] == ref.type_indices()).mean())
    bond_acc = 0.0
    if mol.bond_types is not None:
        bm = mol.bond_matrix()[np.ix_(p, p)]
        iu, ju = np.triu_indices(n, 1)
        bond_acc = float((bm[iu, ju] == ref.bond_indices()).mean()) if iu.size else 1.0
    return MoleculeReport(tpl.name, rmsd, type_acc, bond_acc, connected)


def summarize_molecules(mols: Sequence[ToyMolecule], templates=None) -> dict:
    reports = [molecule_checks(m, templates) for m in mols]
    conn = [r.connected for r in reports if r.connected is not None]
    return dict(
        count=len(reports),
        connected=float(np.mean(conn)) if conn else float("nan"),
        type_accuracy=float(np.mean([r.type_accuracy for r in reports])),
        bond_accuracy=float(np.mean([r.bond_accuracy for r in reports])),
        mean_rmsd=float(np.mean([r.rmsd for r in reports])),
    )
