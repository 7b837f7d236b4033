"""Train-sample-evaluate drivers for the toy tasks and the schedule ablation bench."""

from __future__ import annotations

import time
from dataclasses import replace
from typing import Optional

import numpy as np

from geoflow import pipeline as pl
from geoflow import toybench as tb
from geoflow.errors import ConfigError

TASKS = ("mixture", "categorical", "templates")

BENCH_ARMS = (
    ("evo", dict(mode="evo_egf")),
    ("static_0.001", dict(mode="static_egf", sigma1_static=0.001)),
    ("static_0.01", dict(mode="static_egf", sigma1_static=0.01)),
    ("static_0.05", dict(mode="static_egf", sigma1_static=0.05)),
)


def make_dataset(task: str, seed: int = 0, size: int = 4000) -> tb.Dataset:
    if task == "mixture":
        return tb.generate_dataset("gauss_mixture_2d", size, seed)
    if task == "categorical":
        return tb.generate_dataset("categorical", size, seed)
    if task == "templates":
        return tb.generate_dataset("template_molecules", size, seed)
    raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")


def draw(task: str, config: pl.TrainConfig, weights, dataset: tb.Dataset, count: int, seed: int = 0):
    """Generate `count` samples; molecule sizes follow the dataset's size mix."""
    if task != "templates":
        return pl.sample_batch(config, weights, 1, count, seed)
    sizes = np.array([m.n_atoms for m in dataset.molecules])
    values, freq = np.unique(sizes, return_counts=True)
    rng = np.random.default_rng(seed)
    picks = rng.choice(values, size=count, p=freq / freq.sum())
    out = []
    for j, n in enumerate(values):
        k = int((picks == n).sum())
        if k:
            out.extend(pl.sample_batch(config, weights, int(n), k, seed=seed + 1000 * (j + 1)))
    return out


def evaluate(task: str, dataset: tb.Dataset, samples) -> dict:
    if task == "mixture":
        centers = np.asarray(dataset.meta["centers"])
        pts = np.array([m.coords[0] for m in samples])
        radius = tb.coverage_radius(dataset.meta["n_modes"], dataset.meta["radius"])
        rep = tb.mode_coverage(pts, centers, radius)
        return dict(covered=rep.covered, n_modes=rep.n_modes, mean_distance=rep.mean_distance,
                    spread=dataset.meta["spread"])
    if task == "categorical":
        k = len(dataset.meta["probs"])
        gen = [int(m.type_indices()[0]) for m in samples]
        mae, jsd = tb.freq_metrics(gen, dataset.labels, k)
        return dict(mae=mae, jsd=jsd)
    return tb.summarize_molecules(samples)


def run_task(task: str, config: pl.TrainConfig, data_seed: int = 0, count: int = 2000,
             sample_seed: Optional[int] = None, log_every: int = 100) -> dict:
    """Train on the task's dataset, sample, evaluate; returns metrics and artefacts."""
    dataset = make_dataset(task, data_seed)
    start = time.perf_counter()
    result = pl.train(config, dataset.molecules, log_every=log_every)
    train_s = time.perf_counter() - start
    seed = config.seed + 7919 if sample_seed is None else sample_seed
    samples = draw(task, config, result.weights, dataset, count, seed)
    metrics = evaluate(task, dataset, samples)
    metrics.update(train_seconds=train_s, final_loss=result.metrics[-1]["total"] if result.metrics else None)
    return dict(metrics=metrics, result=result, samples=samples, dataset=dataset)


def bench(task: str, base: pl.TrainConfig, seeds=(0, 1, 2), count: int = 2000, arms=BENCH_ARMS) -> list:
    """One row per (arm, seed) with the task's quality metrics."""
    rows = []
    for name, overrides in arms:
        for seed in seeds:
            cfg = replace(base, seed=seed, **overrides)
            out = run_task(task, cfg, data_seed=seed, count=count)
            rows.append(dict(arm=name, seed=seed, **out["metrics"]))
    return rows


def summarize_bench(rows: list) -> list:
    """Seed-averaged metrics per arm."""
    arms = []
    for row in rows:
        if row["arm"] not in arms:
            arms.append(row["arm"])
    out = []
    for arm in arms:
        sel = [r for r in rows if r["arm"] == arm]
        keys = [k for k, v in sel[0].items() if k not in ("arm", "seed") and isinstance(v, (int, float))]
        out.append(dict(arm=arm, runs=len(sel), **{k: float(np.mean([r[k] for r in sel])) for k in keys}))
    return out
