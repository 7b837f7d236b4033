import csv
import json

import numpy as np
import pytest

from geoflow import cli


def _csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


class TestTrajectory:
    def test_evo(self, tmp_path):
        out = tmp_path / "t.csv"
        assert cli.main(["trajectory", "--target", "2", "--out", str(out)]) == 0
        header, rows = _csv(out)
        assert header == cli.TRAJECTORY_HEADER and len(rows) == 1001
        sigma = np.array([float(r[4]) for r in rows])
        assert np.all(np.diff(sigma) <= 0)

    def test_static_crossing(self, tmp_path):
        out = tmp_path / "t.csv"
        cli.main(["trajectory", "--mode", "static_egf", "--sigma1", "0.001", "--grid-points", "100001",
                  "--out", str(out)])
        _, rows = _csv(out)
        t, sigma = np.array([[float(r[0]), float(r[4])] for r in rows]).T
        assert t[np.argmax(sigma < 0.01)] == pytest.approx(0.01, abs=2e-4)

    def test_sldm_constant(self, tmp_path):
        out = tmp_path / "t.csv"
        cli.main(["trajectory", "--mode", "sldm", "--out", str(out)])
        _, rows = _csv(out)
        np.testing.assert_allclose([float(r[4]) for r in rows], 0.05, rtol=1e-12)

    def test_dirichlet(self, tmp_path):
        out = tmp_path / "d.csv"
        assert cli.main(["trajectory", "--family", "dirichlet", "--classes", "4", "--grid-points", "11",
                         "--out", str(out)]) == 0
        header, rows = _csv(out)
        assert header == ["t", "alpha_0", "alpha_1", "alpha_2", "alpha_3"] and len(rows) == 11
        assert cli.main(["trajectory", "--family", "dirichlet", "--target-class", "5", "--out", str(out)]) == 2

    def test_unwritable(self, tmp_path):
        assert cli.main(["trajectory", "--out", str(tmp_path / "missing" / "t.csv")]) == 1

    def test_usage(self):
        assert cli.main(["trajectory"]) == 2
        assert cli.main(["frobnicate"]) == 2


class TestCommands:
    def test_verify(self, tmp_path, capsys):
        out = tmp_path / "v.json"
        assert cli.main(["verify", "--suite", "sldm", "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert report["passed"] and report["suite"] == "sldm"
        assert cli.main(["verify", "--suite", "nope"]) == 2

    def test_verify_failure_exit(self, monkeypatch, capsys):
        from geoflow import special as sf

        real = sf.digamma
        monkeypatch.setattr(sf, "digamma", lambda x: real(x) + 1e-3)
        assert cli.main(["verify", "--suite", "kl"]) == 1

    def test_compare(self, tmp_path):
        out = tmp_path / "c.csv"
        assert cli.main(["compare-schedules", "--grid-points", "5", "--out", str(out)]) == 0
        header, rows = _csv(out)
        assert header == ["scheme"] + cli.TRAJECTORY_HEADER
        assert len(rows) == 5 * 4

    def test_singularity(self, capsys):
        assert cli.main(["singularity"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["static_bisection_t"] == pytest.approx(0.00999901, abs=1e-7)
        # the evolving path only reaches the threshold as its endpoint closes in
        assert report["evo_gaussian_t"] > 0.9

    def test_missing_checkpoint(self, tmp_path):
        assert cli.main(["sample", "--checkpoint", str(tmp_path / "none.npz")]) == 2

    def test_bad_seed_env(self, monkeypatch, tmp_path):
        monkeypatch.setenv("GEOFLOW_SEED", "abc")
        assert cli.main(["trajectory", "--out", str(tmp_path / "t.csv")]) == 2


def _train(tmp_path, *extra, pre=()):
    tmp_path.mkdir(exist_ok=True)
    ckpt, metrics = tmp_path / "m.npz", tmp_path / "m.csv"
    code = cli.main([*pre, "train", "--task", "categorical", "--iterations", "20", "--batch-size", "8", "--size", "100",
                     "--n-steps", "5", "--log-every", "5", "--checkpoint", str(ckpt), "--metrics", str(metrics),
                     *extra])
    return code, ckpt, metrics


class TestTrainSample:
    def test_round_trip(self, tmp_path, capsys):
        code, ckpt, metrics = _train(tmp_path)
        assert code == 0
        header, rows = _csv(metrics)
        assert header == cli.METRICS_HEADER and [r[0] for r in rows] == ["0", "5", "10", "15", "19"]
        out = tmp_path / "s.json"
        assert cli.main(["sample", "--checkpoint", str(ckpt), "--count", "30", "--evaluate", "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert report["count"] == 30 and set(report["metrics"]) == {"mae", "jsd"}

    def test_seed_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("GEOFLOW_SEED", "5")
        a = _train(tmp_path / "a")[2].read_text()
        b = _train(tmp_path / "b", pre=("--threads", "1"))[2].read_text()
        monkeypatch.setenv("GEOFLOW_SEED", "6")
        c = _train(tmp_path / "c")[2].read_text()
        assert a == b != c
        monkeypatch.setenv("GEOFLOW_SEED", "5")
        assert _train(tmp_path / "d", pre=("--seed", "6"))[2].read_text() == c

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"learning_rate": 1}))
        assert _train(tmp_path, "--config", str(cfg))[0] == 2

    def test_bench(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"iterations": 10, "batch_size": 8, "n_steps": 5}))
        out = tmp_path / "b.csv"
        assert cli.main(["bench", "--task", "categorical", "--config", str(cfg), "--seeds", "1", "--count", "20",
                         "--out", str(out)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["task"] == "categorical" and report["summary"]
        header, rows = _csv(out)
        assert len(rows) == len(report["summary"])
