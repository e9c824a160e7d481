"""Experiment driver: configuration, seeding, trial execution, persistence.

Every experiment is a deterministic function of its configuration: the
per-trial stream is derived from ``(master seed, experiment label, trial
index)`` by stable hashing, so serial and parallel execution produce the
same rows, and rerunning a config reproduces its CSV body byte for byte.
To keep that contract, the CSV ``elapsed_ms`` column is written as 0 by
default; measured wall-clock timings go to the ``.summary.json`` sidecar,
and ``--timing`` opts in to writing them into the CSV instead.

CSV schema (one row per experiment cell, or per trial with ``--per-trial``):

    experiment,d,n_queries,trials,successes,success_rate,mean,stderr,seed,backend,elapsed_ms

``mean``/``stderr`` hold the cell's statistic: the average collision count
for collision cells, the average sharpness estimate for measure-twice
cells, the achieved success rate for sweep cells, and the checked quantity
for verify cells.  Exit codes: 0 success, 2 usage error, 3 a verify bound
or acceptance check failed.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, haarverify, protocols, stats
from .measure import Access, Backend, DeviceKind, load_operator_file, povm_of, sharpness
from .qcore import RngStream, _hash64

DEFAULT_SEED = 24301  # 0x5EED; used whenever --seed is omitted

CSV_FIELDS = (
    "experiment", "d", "n_queries", "trials", "successes", "success_rate",
    "mean", "stderr", "seed", "backend", "elapsed_ms",
)
CSV_HEADER = ",".join(CSV_FIELDS)

_INT_FIELDS = {"d", "n_queries", "trials", "successes", "seed", "elapsed_ms"}
_FLOAT_FIELDS = {"success_rate", "mean", "stderr"}


class UsageError(ValueError):
    """Unknown experiment or inconsistent configuration."""


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    d: int
    n_queries: int
    trials: int
    successes: int
    success_rate: float
    mean: float
    stderr: float
    seed: int
    backend: str
    elapsed_ms: int

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if abs(self.success_rate - self.successes / self.trials) > 1e-12:
            raise ValueError("success_rate must equal successes/trials")
        for name in ("success_rate", "mean", "stderr"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def to_csv(self) -> str:
        return ",".join(str(getattr(self, f)) for f in CSV_FIELDS)


def parse_row(line: str) -> ResultRow:
    parts = line.rstrip("\n").split(",")
    if len(parts) != len(CSV_FIELDS):
        raise ValueError(f"malformed CSV row ({len(parts)} fields): {line!r}")
    kwargs = {}
    for name, raw in zip(CSV_FIELDS, parts):
        if name in _INT_FIELDS:
            kwargs[name] = int(raw)
        elif name in _FLOAT_FIELDS:
            kwargs[name] = float(raw)
        else:
            kwargs[name] = raw
    return ResultRow(**kwargs)


def render_rows(rows) -> str:
    return "".join(row.to_csv() + "\n" for row in rows)


def write_rows(path: str, rows) -> None:
    """Append rows, writing the header only when the file is new or empty."""
    need_header = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", encoding="utf-8") as fh:
        if need_header:
            fh.write(CSV_HEADER + "\n")
        fh.write(render_rows(rows))


def read_rows(path: str) -> list[ResultRow]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    if not lines:
        return []
    if lines[0] != CSV_HEADER:
        raise ValueError(f"unexpected CSV header: {lines[0]!r}")
    return [parse_row(ln) for ln in lines[1:]]


@dataclass
class ExperimentConfig:
    experiment: str
    dims: list[int]
    n: int | None = None
    reps: int | None = None
    trials: int = 100
    target: float = 2.0 / 3.0
    seed: int = DEFAULT_SEED
    backend: Backend = Backend.FAST
    out: str | None = None
    robust: bool = False
    hypothesis: str = "fair"
    per_trial: bool = False
    jobs: int = 1
    timing: bool = False
    t: int | None = None
    t_max: int | None = None
    shots: int = 100_000
    summary: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.trials < 1:
            raise UsageError("trials must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise UsageError("seed must fit in an unsigned 64-bit integer")
        for d in self.dims:
            if d < 2:
                raise UsageError(f"dimension {d} is degenerate; need d >= 2")


def derive_seed(master: int, experiment: str, trial: int) -> RngStream:
    """Stable per-(experiment, trial) stream; collision-free across a run."""
    return RngStream(master, _hash64("trial", experiment, trial))


# ---------------------------------------------------------------------------
# Trial workers (module level so process pools can pickle them)
# ---------------------------------------------------------------------------

def _truth(device) -> protocols.Verdict:
    return (protocols.Verdict.QUANTUM
            if device.kind is DeviceKind.PROJECTIVE_HAAR
            else protocols.Verdict.CLASSICAL)


def _collision_trial(task) -> tuple[int, int, float, int]:
    seed, label, trial, d, n, backend_value, hypothesis = task
    rng = derive_seed(seed, label, trial)
    device = stats.trial_device(d, hypothesis, Access.CLASSICAL_ONLY,
                                Backend(backend_value), rng.substream("device"))
    decision = protocols.collision_test(device, n, rng.substream("queries"))
    success = decision.verdict is _truth(device)
    return trial, int(success), decision.statistic, 1


def _measure_twice_trial(task) -> tuple[int, int, float, int]:
    seed, label, trial, d, reps, backend_value, hypothesis, robust = task
    rng = derive_seed(seed, label, trial)
    device = stats.trial_device(d, hypothesis, Access.WITH_POST_STATE,
                                Backend(backend_value), rng.substream("device"))
    if robust:
        report = protocols.robust_measure_twice(device, reps, rng.substream("queries"))
        estimate, honest = report.estimate, report.honest
    else:
        estimate, honest = protocols.measure_twice(device, reps, rng.substream("queries")), True
    decision = protocols.decide_sharpness(estimate, d)
    success = decision.verdict is _truth(device)
    return trial, int(success), estimate.mean, int(honest)


def _sweep_cell(task) -> tuple[int, int, int, int, int]:
    seed, trial_budget, target, d = task
    rng_coll = derive_seed(seed, "sweep-collision", d)
    n_coll = stats.minimal_query_search(d, target, trial_budget, rng_coll,
                                        protocol="collision")
    conf_coll = stats.empirical_success(
        d, n_coll, trial_budget, rng_coll.substream(("n", n_coll)),
        protocol="collision")
    rng_mt = derive_seed(seed, "sweep-measure-twice", d)
    n_mt = stats.minimal_query_search(d, target, trial_budget, rng_mt,
                                      protocol="measure-twice")
    conf_mt = stats.empirical_success(
        d, n_mt, trial_budget, rng_mt.substream(("n", n_mt)),
        protocol="measure-twice")
    return d, n_coll, conf_coll.successes, n_mt, conf_mt.successes


def _map_tasks(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def _cell_rows(cfg: ExperimentConfig, label: str, d: int, n_queries: int,
               records, elapsed_ms: int) -> list[ResultRow]:
    stats_arr = np.array([r[2] for r in records], dtype=float)
    successes = int(sum(r[1] for r in records))
    trials = len(records)
    mean = float(stats_arr.mean())
    stderr = float(stats_arr.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    shown = elapsed_ms if cfg.timing else 0
    rows = [ResultRow(
        experiment=label, d=d, n_queries=n_queries, trials=trials,
        successes=successes, success_rate=successes / trials, mean=mean,
        stderr=stderr, seed=cfg.seed, backend=cfg.backend.value,
        elapsed_ms=shown,
    )]
    if cfg.per_trial:
        for trial, success, stat, _extra in records:
            rows.append(ResultRow(
                experiment=f"{label}/trial", d=d, n_queries=n_queries,
                trials=1, successes=success, success_rate=float(success),
                mean=float(stat), stderr=0.0, seed=cfg.seed,
                backend=cfg.backend.value, elapsed_ms=0,
            ))
    return rows


def _label(base: str, hypothesis: str) -> str:
    return base if hypothesis == "fair" else f"{base}:{hypothesis}"


def _run_collision(cfg: ExperimentConfig) -> list[ResultRow]:
    rows = []
    for d in cfg.dims:
        n = cfg.n if cfg.n is not None else protocols.default_collision_queries(d)
        label = _label("collision", cfg.hypothesis)
        tasks = [(cfg.seed, label, t, d, n, cfg.backend.value, cfg.hypothesis)
                 for t in range(cfg.trials)]
        start = time.perf_counter()
        records = _map_tasks(_collision_trial, tasks, cfg.jobs)
        elapsed = int(round((time.perf_counter() - start) * 1000))
        rows.extend(_cell_rows(cfg, label, d, n, records, elapsed))
        cfg.summary.setdefault("timings_ms", {})[f"{label}:d={d}"] = elapsed
    return rows


def _run_measure_twice(cfg: ExperimentConfig) -> list[ResultRow]:
    if cfg.reps is None:
        raise UsageError("measure-twice requires --reps")
    rows = []
    base = "measure-twice-robust" if cfg.robust else "measure-twice"
    # The robust variant splits reps across two coin branches, so it gets
    # twice the budget: each branch then sees roughly the plain protocol's.
    reps = 2 * cfg.reps if cfg.robust else cfg.reps
    for d in cfg.dims:
        label = _label(base, cfg.hypothesis)
        tasks = [(cfg.seed, label, t, d, reps, cfg.backend.value,
                  cfg.hypothesis, cfg.robust) for t in range(cfg.trials)]
        start = time.perf_counter()
        records = _map_tasks(_measure_twice_trial, tasks, cfg.jobs)
        elapsed = int(round((time.perf_counter() - start) * 1000))
        rows.extend(_cell_rows(cfg, label, d, cfg.reps, records, elapsed))
        cfg.summary.setdefault("timings_ms", {})[f"{label}:d={d}"] = elapsed
        if cfg.robust:
            honest_fraction = sum(r[3] for r in records) / len(records)
            cfg.summary.setdefault("honest_fraction", {})[str(d)] = honest_fraction
    return rows


def _run_sweep(cfg: ExperimentConfig) -> list[ResultRow]:
    if len(cfg.dims) < 3:
        raise UsageError("sweep needs at least 3 dimensions for the scaling fit")
    tasks = [(cfg.seed, cfg.trials, cfg.target, d) for d in cfg.dims]
    start = time.perf_counter()
    cells = _map_tasks(_sweep_cell, tasks, cfg.jobs)
    elapsed = int(round((time.perf_counter() - start) * 1000))
    rows = []
    coll_points, mt_points = [], []
    for d, n_coll, succ_coll, n_mt, succ_mt in cells:
        shown = elapsed if cfg.timing else 0
        rows.append(ResultRow(
            experiment="sweep-collision", d=d, n_queries=n_coll,
            trials=cfg.trials, successes=succ_coll,
            success_rate=succ_coll / cfg.trials, mean=succ_coll / cfg.trials,
            stderr=math.sqrt(max(succ_coll / cfg.trials * (1 - succ_coll / cfg.trials), 0.0) / cfg.trials),
            seed=cfg.seed, backend=cfg.backend.value, elapsed_ms=shown,
        ))
        rows.append(ResultRow(
            experiment="sweep-measure-twice", d=d, n_queries=n_mt,
            trials=cfg.trials, successes=succ_mt,
            success_rate=succ_mt / cfg.trials, mean=succ_mt / cfg.trials,
            stderr=math.sqrt(max(succ_mt / cfg.trials * (1 - succ_mt / cfg.trials), 0.0) / cfg.trials),
            seed=cfg.seed, backend=cfg.backend.value, elapsed_ms=shown,
        ))
        coll_points.append(stats.ScalingPoint(d=d, n_min=n_coll))
        mt_points.append(stats.ScalingPoint(d=d, n_min=n_mt))
    coll_fit = stats.scaling_exponent(coll_points)
    mt_fit = stats.scaling_exponent(mt_points)
    cfg.summary["fitted"] = {
        "collision_exponent": coll_fit.slope,
        "collision_intercept": coll_fit.intercept,
        "collision_residual": coll_fit.residual,
        "measure_twice_exponent": mt_fit.slope,
        "measure_twice_intercept": mt_fit.intercept,
        "measure_twice_residual": mt_fit.residual,
    }
    cfg.summary.setdefault("timings_ms", {})["sweep"] = elapsed
    return rows


def _verify_row(cfg, label, d, n_queries, ok, value) -> ResultRow:
    return ResultRow(
        experiment=label, d=d, n_queries=n_queries, trials=1,
        successes=int(ok), success_rate=float(ok), mean=float(value),
        stderr=0.0, seed=cfg.seed, backend="exact", elapsed_ms=0,
    )


def _run_verify_weingarten(cfg: ExperimentConfig) -> list[ResultRow]:
    if cfg.t_max is None:
        raise UsageError("verify weingarten requires --t-max")
    d = cfg.dims[0]
    rows = []
    for t in range(1, cfg.t_max + 1):
        if t <= min(d, haarverify.WEINGARTEN_T_CAP):
            table = haarverify.weingarten_table(t, d)
            residual = float(np.max(np.abs(
                table.gram @ table.wg - np.eye(len(table.perms)))))
            rows.append(_verify_row(cfg, "verify-weingarten:inverse", d, t,
                                    residual <= haarverify.INVERSION_TOL, residual))
        if t * t <= d and t <= haarverify.WEINGARTEN_T_CAP:
            try:
                gap = haarverify.wg_identity_gap(t, d)
                ok = True
            except haarverify.BoundViolationError:
                gap, ok = float("inf"), False
            if math.isfinite(gap):
                rows.append(_verify_row(cfg, "verify-weingarten:gap", d, t, ok, gap))
            else:
                rows.append(_verify_row(cfg, "verify-weingarten:gap", d, t, False, -1.0))
        if t <= haarverify.CYCLE_SUM_T_CAP:
            lhs, rhs = haarverify.cycle_sum_identity(t, d)
            rel = abs(lhs - rhs) / rhs
            rows.append(_verify_row(cfg, "verify-weingarten:cyclesum", d, t,
                                    rel <= 1e-10, rel))
    return rows


def _run_verify_tv(cfg: ExperimentConfig) -> list[ResultRow]:
    if cfg.t is None:
        raise UsageError("verify tv requires --t")
    d = cfg.dims[0]
    try:
        tv, bound = haarverify.tv_iid_protocol(d, cfg.t)
        ok = tv <= bound
    except haarverify.BoundViolationError:
        tv, ok = -1.0, False
    return [_verify_row(cfg, "verify-tv", d, cfg.t, ok, tv)]


def _run_verify_cswap(cfg: ExperimentConfig) -> list[ResultRow]:
    d = cfg.dims[0]
    rng = derive_seed(cfg.seed, "verify-cswap", d)
    ok = protocols.controlled_swap_equivalence_check(d, cfg.shots, rng)
    return [_verify_row(cfg, "verify-cswap", d, cfg.shots, ok, float(ok))]


def _run_robust(cfg: ExperimentConfig) -> list[ResultRow]:
    cfg.robust = True
    return _run_measure_twice(cfg)


_EXPERIMENTS = {
    "collision": _run_collision,
    "measure-twice": _run_measure_twice,
    "robust": _run_robust,
    "sweep": _run_sweep,
    "verify-weingarten": _run_verify_weingarten,
    "verify-tv": _run_verify_tv,
    "verify-cswap": _run_verify_cswap,
}


def run_experiment(cfg: ExperimentConfig) -> list[ResultRow]:
    """Execute the named experiment; rows are deterministic given the seed."""
    if cfg.experiment not in _EXPERIMENTS:
        raise UsageError(f"unknown experiment {cfg.experiment!r}; "
                         f"choose from {sorted(_EXPERIMENTS)}")
    start = time.perf_counter()
    rows = _EXPERIMENTS[cfg.experiment](cfg)
    cfg.summary.setdefault("timings_ms", {})["total"] = int(
        round((time.perf_counter() - start) * 1000))
    if cfg.out:
        write_rows(cfg.out, rows)
        _write_summary(cfg, rows)
    return rows


def _write_summary(cfg: ExperimentConfig, rows) -> None:
    stem, _ = os.path.splitext(cfg.out)
    payload = {
        "config": {k: (v.value if isinstance(v, Backend) else v)
                   for k, v in asdict(cfg).items() if k != "summary"},
        "versions": {
            "sharpkit": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "rows": len(rows),
        **cfg.summary,
    }
    with open(stem + ".summary.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Command line interface
# ---------------------------------------------------------------------------

def _add_common(p, *, backend: bool = True):
    p.add_argument("--seed", type=int, default=DEFAULT_SEED,
                   help=f"master seed (default {DEFAULT_SEED})")
    if backend:
        p.add_argument("--backend", choices=["fast", "dense"], default="fast")
    p.add_argument("--jobs", type=int, default=1,
                   help="worker processes (results are identical serial or parallel)")
    p.add_argument("--per-trial", action="store_true",
                   help="additionally emit one raw row per trial")
    p.add_argument("--timing", action="store_true",
                   help="write measured elapsed_ms into the CSV "
                        "(breaks bitwise rerun determinism)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sharpkit",
        description="Experiments separating classical-outcome access from "
                    "post-measurement-state access in measurement learning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collision", help="birthday-style collision test trials")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--n", type=int, default=None,
                   help="queries per trial (default ceil(20*sqrt(d)))")
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--hypothesis", choices=["fair", "classical", "projective"],
                   default="fair")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("measure-twice", help="post-state sharpness estimation trials")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--reps", type=int, required=True)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--robust", action="store_true",
                   help="coin-routed robust variant (doubles reps internally)")
    p.add_argument("--hypothesis", choices=["fair", "classical", "projective"],
                   default="fair")
    p.add_argument("--out", required=True)
    _add_common(p, backend=False)

    p = sub.add_parser("sweep", help="minimal query budgets across dimensions")
    p.add_argument("--dims", required=True, help="comma-separated dimensions")
    p.add_argument("--target", type=float, required=True)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--out", required=True)
    _add_common(p, backend=False)

    p = sub.add_parser("sharpness", help="print the sharpness of a POVM file")
    p.add_argument("--povm", required=True)

    v = sub.add_parser("verify", help="bound-verification suites (exit 3 on violation)")
    vsub = v.add_subparsers(dest="verify_command", required=True)
    p = vsub.add_parser("weingarten")
    p.add_argument("--t-max", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p = vsub.add_parser("tv")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p = vsub.add_parser("cswap")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--shots", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)

    return parser


def _config_from_args(args) -> ExperimentConfig:
    if args.command == "collision":
        return ExperimentConfig(
            experiment="collision", dims=[args.d], n=args.n, trials=args.trials,
            seed=args.seed, backend=Backend(args.backend), out=args.out,
            hypothesis=args.hypothesis, per_trial=args.per_trial,
            jobs=args.jobs, timing=args.timing,
        )
    if args.command == "measure-twice":
        return ExperimentConfig(
            experiment="measure-twice", dims=[args.d], reps=args.reps,
            trials=args.trials, seed=args.seed, out=args.out,
            robust=args.robust, hypothesis=args.hypothesis,
            per_trial=args.per_trial, jobs=args.jobs, timing=args.timing,
        )
    if args.command == "sweep":
        dims = [int(x) for x in args.dims.split(",") if x]
        return ExperimentConfig(
            experiment="sweep", dims=dims, trials=args.trials,
            target=args.target, seed=args.seed, out=args.out,
            jobs=args.jobs, per_trial=args.per_trial, timing=args.timing,
        )
    if args.command == "verify":
        if args.verify_command == "weingarten":
            return ExperimentConfig(experiment="verify-weingarten",
                                    dims=[args.d], t_max=args.t_max, seed=args.seed)
        if args.verify_command == "tv":
            return ExperimentConfig(experiment="verify-tv", dims=[args.d],
                                    t=args.t, seed=args.seed)
        return ExperimentConfig(experiment="verify-cswap", dims=[args.d],
                                shots=args.shots, seed=args.seed)
    raise UsageError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "sharpness":
        obj = load_operator_file(args.povm)
        povm = obj if not hasattr(obj, "kraus") else povm_of(obj)
        print(f"{sharpness(povm):.12g}")
        return 0

    try:
        cfg = _config_from_args(args)
        rows = run_experiment(cfg)
    except UsageError as exc:
        parser.error(str(exc))  # exits 2
        raise AssertionError("unreachable")
    except OSError as exc:
        print(f"sharpkit: I/O error: {exc}", file=sys.stderr)
        return 1

    for row in rows:
        print(row.to_csv())
    if cfg.experiment.startswith("verify"):
        if any(row.successes == 0 for row in rows):
            print("sharpkit: verification FAILED", file=sys.stderr)
            return 3
        print("sharpkit: verification passed", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
