"""Acceptance suite: one test per headline criterion, at pinned tolerances.

Each test prints `ACCEPTANCE <name>: PASS|FAIL` (visible with `pytest -s`,
or in captured output on failure), so the suite doubles as a checklist.
"""

import math
import time
from contextlib import contextmanager

import numpy as np

import sharpkit as sk
from sharpkit import protocols, stats
from sharpkit.expcli import ExperimentConfig, render_rows, run_experiment
from sharpkit.measure import (
    Access,
    Backend,
    Instrument,
    MeasurementOutcome,
    Povm,
    classical_device,
    custom_device,
    povm_of,
    projective_haar_device,
    projective_instrument,
    sharpness,
)
from sharpkit.qcore import RngStream, sample_haar_unitary

SEED = 24301


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {name}: FAIL")
        raise
    print(f"ACCEPTANCE {name}: PASS")


class AlwaysRepeatDouble:
    """Dishonest device: repeats its previous output regardless of input."""

    def __init__(self, d):
        self.dim = d
        self.access = Access.WITH_POST_STATE
        self._last = None

    def query(self, state, rng):
        if self._last is None:
            self._last = int(rng.generator.integers(0, self.dim))
        return MeasurementOutcome(index=self._last, post_state=state)


def test_sharpness_extremes():
    with criterion("sharpness-extremes"):
        for d in range(2, 65):
            povm = Povm(tuple(np.eye(d) / d for _ in range(d)))
            assert abs(sharpness(povm) - 1 / d) <= 1e-12
        rng = RngStream(SEED)
        for d in (2, 8, 32):
            for i in range(100):
                u = sample_haar_unitary(d, rng.substream((d, i)))
                s = sharpness(povm_of(projective_instrument(u)))
                assert abs(s - 1.0) <= 1e-12


def test_measure_twice_constant_cost():
    with criterion("measure-twice-constant-cost"):
        start = time.perf_counter()
        for d in (4, 16, 64, 256, 1024):
            est = stats.empirical_success(
                d, 20, 200, RngStream(SEED).substream(("mt", d)),
                protocol="measure-twice")
            assert est.rate >= 0.95, f"d={d}: success {est.rate} < 0.95"
        elapsed = time.perf_counter() - start
        assert elapsed < 30.0, f"took {elapsed:.1f}s, budget 30s"


def test_estimator_unbiasedness():
    with criterion("estimator-unbiasedness"):
        k0 = np.diag([math.sqrt(0.75), math.sqrt(0.25)]).astype(complex)
        k1 = np.diag([math.sqrt(0.25), math.sqrt(0.75)]).astype(complex)
        inst = Instrument((k0, k1))
        assert inst.is_normal
        truth = sharpness(povm_of(inst))
        assert abs(truth - 0.625) <= 1e-12
        reps = 100_000
        est = protocols.measure_twice(custom_device(inst), reps, RngStream(SEED))
        tol = 4 * math.sqrt(0.625 * 0.375 / reps)
        assert abs(est.mean - 0.625) <= tol, f"|{est.mean} - 0.625| > {tol}"


def test_collision_theorem_at_scale():
    with criterion("collision-theorem-at-scale"):
        d, n, trials = 256, 320, 400
        rng = RngStream(SEED)

        classical_stats = np.empty(trials)
        classical_ok = 0
        dev = classical_device(d)
        for i in range(trials):
            decision = protocols.collision_test(dev, n, rng.substream(("c", i)))
            classical_stats[i] = decision.statistic
            classical_ok += decision.verdict is protocols.Verdict.CLASSICAL

        projective_stats = np.empty(trials)
        projective_ok = 0
        for i in range(trials):
            pdev = projective_haar_device(d, rng.substream(("pd", i)))
            decision = protocols.collision_test(pdev, n, rng.substream(("pq", i)))
            projective_stats[i] = decision.statistic
            projective_ok += decision.verdict is protocols.Verdict.QUANTUM

        assert classical_ok / trials >= 2 / 3
        assert projective_ok / trials >= 2 / 3

        se_c = classical_stats.std(ddof=1) / math.sqrt(trials)
        assert abs(classical_stats.mean() - 199.375) <= 5 * se_c
        se_p = projective_stats.std(ddof=1) / math.sqrt(trials)
        haar_mean = math.comb(n, 2) * 2 / (d + 1)  # ~397.2
        assert abs(projective_stats.mean() - haar_mean) <= 5 * se_p


def test_scaling_separation():
    with criterion("scaling-separation"):
        start = time.perf_counter()
        cfg = ExperimentConfig(experiment="sweep", dims=[16, 64, 256, 1024],
                               trials=1600, target=2 / 3, seed=SEED)
        rows = run_experiment(cfg)
        elapsed = time.perf_counter() - start
        fitted = cfg.summary["fitted"]
        assert 0.35 <= fitted["collision_exponent"] <= 0.65, fitted
        mt_rows = [r for r in rows if r.experiment == "sweep-measure-twice"]
        assert all(r.n_queries <= 20 for r in mt_rows)
        assert abs(fitted["measure_twice_exponent"]) <= 0.1
        assert elapsed < 300.0, f"took {elapsed:.1f}s, budget 300s"


def test_weingarten_suite():
    with criterion("weingarten-suite"):
        for t in (1, 2, 3, 4):
            for d in sorted({t * t, t * t + 1, 2 * t * t, 32, 64}):
                if not t * t <= d <= 64:
                    continue
                table = sk.weingarten_table(t, d)
                identity = np.eye(len(table.perms))
                assert np.max(np.abs(table.gram @ table.wg - identity)) <= 1e-8
                assert sk.wg_identity_gap(t, d) <= t * t / d
        for t in range(1, 9):
            for d in (2, 3, 10, 100):
                lhs, rhs = sk.cycle_sum_identity(t, d)
                assert abs(lhs - rhs) <= 1e-10 * rhs
        a = np.zeros((4, 4), dtype=complex)
        a[0, 0] = 1.0
        cmp = sk.twirl_compare(a, 2, 2, 100_000, RngStream(SEED))
        assert cmp.deviation <= 0.02


def test_tv_bound():
    with criterion("tv-bound"):
        for t in (1, 2, 3, 4):
            for d in range(2, 65):
                tv, bound = sk.tv_iid_protocol(d, t)
                assert tv <= bound
        tv, _ = sk.tv_iid_protocol(8, 2)
        assert abs(tv - 7 / 72) <= 1e-12


def test_robust_variant_soundness():
    with criterion("robust-variant-soundness"):
        reports = 1000
        reps = 200
        rng = RngStream(SEED)
        honest_flags = 0
        for i in range(reports):
            if i % 2 == 0:
                dev = projective_haar_device(8, rng.substream(("hp", i)),
                                             access=Access.WITH_POST_STATE)
            else:
                dev = classical_device(8, access=Access.WITH_POST_STATE)
            report = protocols.robust_measure_twice(dev, reps, rng.substream(("hr", i)))
            honest_flags += report.honest
        assert honest_flags / reports >= 0.99

        flagged = 0
        for i in range(reports):
            report = protocols.robust_measure_twice(
                AlwaysRepeatDouble(8), reps, rng.substream(("ar", i)))
            flagged += not report.honest
        assert flagged / reports >= 0.99

        dev = projective_haar_device(
            2, rng.substream("cs"), access=Access.WITH_POST_STATE,
            backend=Backend.DENSE)
        circuit = protocols.cswap_circuit_table(dev)
        routed = protocols.coin_routed_table(dev)
        assert np.max(np.abs(circuit - routed)) <= 1e-10
        cdev = classical_device(2, access=Access.WITH_POST_STATE,
                                backend=Backend.DENSE)
        assert np.max(np.abs(protocols.cswap_circuit_table(cdev)
                             - protocols.coin_routed_table(cdev))) <= 1e-10


def test_determinism():
    with criterion("determinism"):
        def body(jobs):
            cfg = ExperimentConfig(experiment="collision", dims=[256], n=320,
                                   trials=100, seed=SEED, jobs=jobs)
            return render_rows(run_experiment(cfg))

        first, second, parallel = body(1), body(1), body(2)
        assert first == second
        assert first == parallel

        def mt_body(jobs):
            cfg = ExperimentConfig(experiment="measure-twice", dims=[64],
                                   reps=20, trials=50, seed=SEED, jobs=jobs)
            return render_rows(run_experiment(cfg))

        assert mt_body(1) == mt_body(2)


def test_large_dimension_demo():
    # Fast-backend collision run at d = 2**20 stays well under a minute.
    with criterion("large-dimension-demo"):
        start = time.perf_counter()
        cfg = ExperimentConfig(experiment="collision", dims=[2**20], trials=3,
                               seed=SEED)
        rows = run_experiment(cfg)
        elapsed = time.perf_counter() - start
        assert rows[0].n_queries == protocols.default_collision_queries(2**20)
        assert elapsed < 60.0, f"took {elapsed:.1f}s, budget 60s"
