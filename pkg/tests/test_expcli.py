"""Tests for the experiment driver: rows, seeding, determinism, CLI."""

import json
import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sharpkit import expcli, haarverify
from sharpkit.expcli import (
    DEFAULT_SEED,
    CSV_HEADER,
    ExperimentConfig,
    ResultRow,
    UsageError,
    derive_seed,
    parse_row,
    read_rows,
    render_rows,
    run_experiment,
    write_rows,
)


def row(**overrides) -> ResultRow:
    base = dict(experiment="collision", d=16, n_queries=80, trials=10,
                successes=7, success_rate=0.7, mean=12.5, stderr=0.3,
                seed=1, backend="fast", elapsed_ms=0)
    base.update(overrides)
    return ResultRow(**base)


class TestResultRow:
    def test_roundtrip(self):
        r = row()
        assert parse_row(r.to_csv()) == r

    def test_rate_invariant(self):
        with pytest.raises(ValueError, match="success_rate"):
            row(success_rate=0.9)

    def test_finite_fields(self):
        with pytest.raises(ValueError, match="finite"):
            row(mean=float("nan"), success_rate=0.7)

    def test_malformed_line_rejected(self):
        with pytest.raises(ValueError, match="malformed"):
            parse_row("a,b,c")

    @given(st.integers(min_value=1, max_value=1000),
           st.integers(min_value=0, max_value=1000),
           st.floats(min_value=-1e6, max_value=1e6),
           st.floats(min_value=0, max_value=1e3))
    @settings(max_examples=50, deadline=None)
    def test_roundtrip_property(self, trials, successes, mean, stderr):
        successes = min(successes, trials)
        r = row(trials=trials, successes=successes,
                success_rate=successes / trials, mean=mean, stderr=stderr)
        assert parse_row(r.to_csv()) == r


class TestDeriveSeed:
    def test_stable(self):
        a = derive_seed(5, "collision", 3)
        b = derive_seed(5, "collision", 3)
        assert (a.seed, a.index) == (b.seed, b.index)
        assert a.generator.random() == b.generator.random()

    def test_trials_do_not_collide(self):
        n = 10_000
        outputs = {
            derive_seed(5, "collision", t).generator.integers(0, 1 << 62)
            for t in range(n)
        }
        assert len(outputs) == n

    def test_experiments_are_distinct(self):
        a = derive_seed(5, "collision", 0)
        b = derive_seed(5, "measure-twice", 0)
        assert a.index != b.index
        assert a.generator.random() != b.generator.random()


class TestRunExperiment:
    def test_unknown_experiment(self):
        with pytest.raises(UsageError):
            run_experiment(ExperimentConfig(experiment="nope", dims=[4]))

    def test_degenerate_dimension(self):
        with pytest.raises(UsageError):
            ExperimentConfig(experiment="collision", dims=[1])

    def test_collision_rows(self):
        cfg = ExperimentConfig(experiment="collision", dims=[64], n=160,
                               trials=25, seed=9)
        rows = run_experiment(cfg)
        assert len(rows) == 1
        assert rows[0].experiment == "collision"
        assert rows[0].trials == 25
        assert rows[0].elapsed_ms == 0

    def test_deterministic_rerun(self):
        mk = lambda: ExperimentConfig(experiment="collision", dims=[256],
                                      n=320, trials=40, seed=7)
        assert render_rows(run_experiment(mk())) == render_rows(run_experiment(mk()))

    def test_parallel_matches_serial(self):
        serial = ExperimentConfig(experiment="measure-twice", dims=[64],
                                  reps=20, trials=30, seed=3)
        parallel = ExperimentConfig(experiment="measure-twice", dims=[64],
                                    reps=20, trials=30, seed=3, jobs=2)
        assert render_rows(run_experiment(serial)) == render_rows(run_experiment(parallel))

    def test_per_trial_rows(self):
        cfg = ExperimentConfig(experiment="collision", dims=[16], n=40,
                               trials=5, seed=1, per_trial=True)
        rows = run_experiment(cfg)
        assert len(rows) == 6
        trial_rows = [r for r in rows if r.experiment.endswith("/trial")]
        assert len(trial_rows) == 5
        assert all(r.trials == 1 for r in trial_rows)
        assert sum(r.successes for r in trial_rows) == rows[0].successes

    def test_hypothesis_label(self):
        cfg = ExperimentConfig(experiment="collision", dims=[16], n=40,
                               trials=5, seed=1, hypothesis="classical")
        rows = run_experiment(cfg)
        assert rows[0].experiment == "collision:classical"

    def test_robust_summary(self):
        cfg = ExperimentConfig(experiment="measure-twice", dims=[8], reps=50,
                               trials=40, seed=2, robust=True)
        rows = run_experiment(cfg)
        assert rows[0].experiment == "measure-twice-robust"
        assert cfg.summary["honest_fraction"]["8"] >= 0.95

    def test_sweep_rows_and_summary(self):
        cfg = ExperimentConfig(experiment="sweep", dims=[4, 16, 64],
                               trials=100, target=2 / 3, seed=5)
        rows = run_experiment(cfg)
        assert {r.experiment for r in rows} == {"sweep-collision", "sweep-measure-twice"}
        assert len(rows) == 6
        fitted = cfg.summary["fitted"]
        assert "collision_exponent" in fitted
        assert "measure_twice_exponent" in fitted

    def test_sweep_needs_three_dims(self):
        with pytest.raises(UsageError):
            run_experiment(ExperimentConfig(experiment="sweep", dims=[4, 16],
                                            trials=10))

    def test_verify_rows_pass(self):
        cfg = ExperimentConfig(experiment="verify-weingarten", dims=[16], t_max=3)
        rows = run_experiment(cfg)
        assert all(r.successes == 1 for r in rows)
        cfg = ExperimentConfig(experiment="verify-tv", dims=[8], t=2)
        rows = run_experiment(cfg)
        assert rows[0].mean == pytest.approx(7 / 72, abs=1e-15)
        cfg = ExperimentConfig(experiment="verify-cswap", dims=[2], shots=20_000)
        rows = run_experiment(cfg)
        assert rows[0].successes == 1


class TestCsvFiles:
    def test_append_and_reparse(self, tmp_path):
        path = tmp_path / "out.csv"
        cfg = ExperimentConfig(experiment="collision", dims=[16], n=40,
                               trials=10, seed=1, out=str(path))
        rows1 = run_experiment(cfg)
        cfg2 = ExperimentConfig(experiment="collision", dims=[16], n=40,
                                trials=10, seed=2, out=str(path))
        rows2 = run_experiment(cfg2)
        text = path.read_text().splitlines()
        assert text[0] == CSV_HEADER
        assert len(text) == 3
        assert read_rows(str(path)) == rows1 + rows2

    def test_summary_sidecar(self, tmp_path):
        path = tmp_path / "sweep.csv"
        cfg = ExperimentConfig(experiment="sweep", dims=[4, 16, 64], trials=60,
                               target=2 / 3, seed=5, out=str(path))
        run_experiment(cfg)
        sidecar = json.loads((tmp_path / "sweep.summary.json").read_text())
        assert sidecar["config"]["experiment"] == "sweep"
        assert "collision_exponent" in sidecar["fitted"]
        assert "sharpkit" in sidecar["versions"]

    def test_bitwise_identical_files(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for path in (a, b):
            run_experiment(ExperimentConfig(
                experiment="collision", dims=[256], n=320, trials=40, seed=7,
                out=str(path)))
        assert a.read_bytes() == b.read_bytes()

    def test_write_rows_roundtrip(self, tmp_path):
        path = tmp_path / "x.csv"
        rows = [row(), row(seed=2, mean=1.25)]
        write_rows(str(path), rows)
        assert read_rows(str(path)) == rows


def run_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "sharpkit.expcli", *args],
        capture_output=True, text=True)


class TestCli:
    def test_collision_end_to_end(self, tmp_path):
        out = tmp_path / "c.csv"
        res = run_cli("collision", "--d", "64", "--n", "160", "--trials", "20",
                      "--seed", "7", "--out", str(out))
        assert res.returncode == 0
        assert out.exists()
        assert "collision,64,160,20" in res.stdout

    def test_usage_error_exit_2(self):
        assert run_cli("collision", "--trials", "10").returncode == 2
        assert run_cli("bogus").returncode == 2

    def test_verify_pass_exit_0(self):
        res = run_cli("verify", "tv", "--d", "8", "--t", "2")
        assert res.returncode == 0
        assert "verification passed" in res.stderr

    def test_io_error_exit_1(self, tmp_path):
        res = run_cli("collision", "--d", "16", "--trials", "5",
                      "--out", str(tmp_path / "no" / "dir" / "x.csv"))
        assert res.returncode == 1
        assert "I/O error" in res.stderr

    def test_sharpness_prints_12_digits(self, tmp_path):
        import sharpkit as sk
        k0 = np.diag([math.sqrt(0.75), math.sqrt(0.25)]).astype(complex)
        k1 = np.diag([math.sqrt(0.25), math.sqrt(0.75)]).astype(complex)
        povm = sk.povm_of(sk.Instrument((k0, k1)))
        path = tmp_path / "povm.json"
        path.write_text(sk.operators_to_json(povm))
        res = run_cli("sharpness", "--povm", str(path))
        assert res.returncode == 0
        assert res.stdout.strip() == "0.625"

    def test_default_seed_documented(self):
        assert DEFAULT_SEED == 24301

    def test_verify_failure_exit_3(self, monkeypatch):
        def broken(d, t):
            raise haarverify.BoundViolationError("forced")
        monkeypatch.setattr(expcli.haarverify, "tv_iid_protocol", broken)
        code = expcli.main(["verify", "tv", "--d", "8", "--t", "2"])
        assert code == 3
