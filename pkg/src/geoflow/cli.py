"""geoflow command line: trajectories, verification, training, sampling, studies.

Exit codes: 0 success, 1 verification failure or unwritable output,
2 usage error or missing checkpoint.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

TRAJECTORY_HEADER = ["t", "eta1", "eta2", "mu", "sigma"]
METRICS_HEADER = ["step", "l_x", "l_v", "l_b", "total"]


class UsageError(Exception):
    pass


class OutputError(Exception):
    pass


def _default_seed() -> int:
    raw = os.environ.get("GEOFLOW_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"GEOFLOW_SEED must be an integer, got {raw!r}")


def _write_csv(path, header, rows):
    if path == "-":
        writer = csv.writer(sys.stdout)
        writer.writerow(header)
        writer.writerows(rows)
        return
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}")


def _write_json(path, obj):
    text = json.dumps(obj, indent=2)
    if path in (None, "-"):
        print(text)
        return
    try:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}")


def _schedule(args):
    from geoflow import geodesic as geo

    if args.mode == "evo_egf":
        return geo.EvoSchedule.evo(args.lam, args.eps)
    if args.mode == "static_egf":
        return geo.EvoSchedule.static(args.sigma1, args.alpha1, args.lam)
    return geo.EvoSchedule.sldm(args.sldm_eps, args.lam)


def cmd_trajectory(args):
    import numpy as np

    from geoflow import geodesic as geo

    if args.grid_points < 2:
        raise UsageError("--grid-points must be at least 2")
    schedule = _schedule(args)
    grid = np.linspace(0.0, 1.0, args.grid_points)
    if args.family == "gaussian":
        rows = []
        for t in grid:
            p = geo.gaussian_path(schedule, [args.target], float(t))
            rows.append([f"{t:.10g}", repr(p.eta1), repr(float(p.eta2[0])), repr(float(p.mean[0])), repr(p.sigma)])
        _write_csv(args.out, TRAJECTORY_HEADER, rows)
    else:
        k = args.classes
        if not 0 <= args.target_class < k:
            raise UsageError("--target-class must lie in [0, classes)")
        onehot = np.eye(k)[args.target_class]
        rows = [[f"{t:.10g}"] + [repr(float(a)) for a in geo.dirichlet_path(schedule, onehot, float(t)).alpha]
                for t in grid]
        _write_csv(args.out, ["t"] + [f"alpha_{i}" for i in range(k)], rows)
    return EXIT_OK


def cmd_verify(args):
    from geoflow import verify

    records = verify.run(args.suite)
    ok = all(r["pass"] for r in records)
    _write_json(args.out, dict(suite=args.suite, passed=ok, checks=records))
    return EXIT_OK if ok else EXIT_FAIL


def _load_config(args):
    from geoflow.pipeline import TrainConfig

    values = {}
    if args.config:
        try:
            with open(args.config) as fh:
                values = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}")
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}")
    for key in ("iterations", "batch_size", "n_steps", "lr"):
        val = getattr(args, key, None)
        if val is not None:
            values[key] = val
    values.setdefault("seed", args.seed)
    if args.seed_given:
        values["seed"] = args.seed
    return TrainConfig.from_dict(values)


def cmd_train(args):
    from geoflow import experiments as ex
    from geoflow import net

    config = _load_config(args)
    dataset = ex.make_dataset(args.task, args.data_seed, args.size)
    rows = []

    def log(row):
        rows.append([row[k] for k in METRICS_HEADER])
        if args.verbose:
            print(json.dumps(row), file=sys.stderr)

    from geoflow import pipeline as pl

    result = pl.train(config, dataset.molecules, log_every=args.log_every, callback=log)
    _write_csv(args.metrics, METRICS_HEADER, rows)
    meta = dict(task=args.task, data_seed=args.data_seed, size=args.size, train_config=config.to_dict())
    try:
        net.save_checkpoint(args.checkpoint, result.weights, result.adam, meta)
    except OSError as exc:
        raise OutputError(f"cannot write {args.checkpoint}: {exc}")
    return EXIT_OK


def _open_checkpoint(path):
    from geoflow import net
    from geoflow.pipeline import TrainConfig

    if not os.path.isfile(path):
        raise UsageError(f"checkpoint not found: {path}")
    weights, _state, meta = net.load_checkpoint(path)
    return weights, TrainConfig.from_dict(meta["train_config"]), meta


def cmd_sample(args):
    from geoflow import experiments as ex

    weights, config, meta = _open_checkpoint(args.checkpoint)
    if args.n_steps is not None:
        from dataclasses import replace

        config = replace(config, n_steps=args.n_steps)
    task = meta.get("task")
    dataset = ex.make_dataset(task, meta.get("data_seed", 0), meta.get("size", 4000))
    samples = ex.draw(task, config, weights, dataset, args.count, args.seed)
    out = dict(task=task, count=len(samples), molecules=[m.to_json() for m in samples])
    if args.evaluate:
        out["metrics"] = ex.evaluate(task, dataset, samples)
    _write_json(args.out, out)
    return EXIT_OK


def cmd_compare(args):
    import numpy as np

    from geoflow import geodesic as geo

    grid = np.linspace(0.0, 1.0, args.grid_points)
    rows = []
    for scheme in geo.SCHEMES:
        for r in geo.schedule_comparison(scheme, args.target, grid, args.sigma1, args.lam, args.eps, args.sldm_eps):
            rows.append([scheme] + [repr(float(r[k])) for k in TRAJECTORY_HEADER])
    _write_csv(args.out, ["scheme"] + TRAJECTORY_HEADER, rows)
    return EXIT_OK


def cmd_singularity(args):
    import math

    from geoflow import geodesic as geo

    probe = geo.singularity_probe(args.sigma1, args.threshold, args.alpha1, args.alpha_level)
    evo = geo.EvoSchedule.evo(args.lam, args.eps)
    report = dict(
        sigma1_static=args.sigma1,
        threshold=args.threshold,
        static_gaussian_t=probe.gaussian_t,
        static_bisection_t=geo.crossing_time(geo.EvoSchedule.static(args.sigma1), args.threshold),
        evo_gaussian_t=geo.crossing_time(evo, args.threshold),
        static_dirichlet_t=probe.dirichlet_t,
    )
    report = {k: (None if isinstance(v, float) and math.isinf(v) else v) for k, v in report.items()}
    _write_json(args.out, report)
    return EXIT_OK


def cmd_bench(args):
    from geoflow import experiments as ex

    config = _load_config(args)
    seeds = list(range(args.seed, args.seed + args.seeds))
    rows = ex.bench(args.task, config, seeds, args.count)
    summary = ex.summarize_bench(rows)
    if args.out:
        keys = list(summary[0].keys())
        _write_csv(args.out, keys, [[r[k] for k in keys] for r in summary])
    _write_json(args.json, dict(task=args.task, runs=rows, summary=summary))
    return EXIT_OK


def _add_schedule_flags(p):
    p.add_argument("--mode", choices=("evo_egf", "static_egf", "sldm"), default="evo_egf")
    p.add_argument("--lambda", dest="lam", type=float, default=0.2)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--sigma1", type=float, default=0.01, help="static endpoint standard deviation")
    p.add_argument("--alpha1", type=float, default=None, help="static endpoint concentration")
    p.add_argument("--sldm-eps", type=float, default=0.05)


def _add_train_flags(p):
    from geoflow.experiments import TASKS

    p.add_argument("--task", choices=TASKS, default="mixture")
    p.add_argument("--config", help="JSON file with TrainConfig keys")
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--n-steps", dest="n_steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--size", type=int, default=4000)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geoflow", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None, help="default: $GEOFLOW_SEED or 0")
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trajectory", help="path parameters on a time grid as CSV")
    _add_schedule_flags(p)
    p.add_argument("--family", choices=("gaussian", "dirichlet"), default="gaussian")
    p.add_argument("--target", type=float, default=2.0)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--target-class", type=int, default=0)
    p.add_argument("--grid-points", type=int, default=1001)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trajectory)

    from geoflow.verify import SUITES

    p = sub.add_parser("verify", help="run numerical self-checks, JSON report")
    p.add_argument("--suite", choices=SUITES + ("all",), default="all")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("train", help="train on a toy task; writes checkpoint and metrics CSV")
    _add_train_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--metrics", required=True)
    p.add_argument("--log-every", type=int, default=100)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate from a checkpoint; JSON output")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--n-steps", type=int, default=None)
    p.add_argument("--evaluate", action="store_true", help="attach task metrics")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("compare-schedules", help="natural-parameter curves of several schemes as CSV")
    p.add_argument("--target", type=float, default=2.0)
    p.add_argument("--grid-points", type=int, default=1001)
    p.add_argument("--lambda", dest="lam", type=float, default=0.2)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--sigma1", type=float, default=0.01)
    p.add_argument("--sldm-eps", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("singularity", help="collapse times of static and evolving paths")
    p.add_argument("--sigma1", type=float, default=0.001)
    p.add_argument("--threshold", type=float, default=0.01)
    p.add_argument("--alpha1", type=float, default=None)
    p.add_argument("--alpha-level", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=0.2)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_singularity)

    p = sub.add_parser("bench", help="evolving vs static endpoint comparison")
    _add_train_flags(p)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--out", help="summary CSV")
    p.add_argument("--json", default="-")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    # thread caps must be in the environment before numpy loads BLAS
    if "--threads" in argv:
        i = argv.index("--threads")
        if i + 1 < len(argv) and argv[i + 1].isdigit():
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
                os.environ[var] = argv[i + 1]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    args.seed_given = args.seed is not None
    from geoflow.errors import ConfigError, DomainError

    try:
        if args.seed is None:
            args.seed = _default_seed()
        return args.func(args)
    except UsageError as exc:
        print(f"geoflow: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OutputError as exc:
        print(f"geoflow: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ConfigError, DomainError) as exc:
        print(f"geoflow: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
