"""Seeded multi-trial sweeps over (ranker, F, C) with regret/compute rows.

Each trial draws a pool of candidates from the universe; every arm at the
same trial index competes on the same pool, and gp arms additionally draw C
fully observed training curves from the universe *outside* the pool.  Regret
is measured against the best candidate of the competing pool, relative
compute against pool_size * T, so at equal F a gp arm's relative compute
exceeds the current arm's by exactly C*T / (pool_size*T).

Results are keyed streams of the root seed, so the output is byte-identical
regardless of trial execution order or worker count.
"""

from __future__ import annotations

import csv
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from multiprocessing import get_context
from typing import Optional, Sequence

import numpy as np

from .curves import CurveSet, PerfSpec, best_candidate, final_perf
from .errors import ConfigError
from .halving import ShConfig, ShTrace, compute_units, run_halving
from .rng import spawn_seed, substream

RESULT_COLUMNS = (
    "ranker", "final_candidates", "training_curves", "trial", "seed",
    "picked_id", "picked_perf", "best_perf", "absolute_regret",
    "relative_regret", "absolute_compute", "relative_compute",
)
AGGREGATE_COLUMNS = (
    "ranker", "final_candidates", "training_curves", "mean_relative_regret",
    "stderr_relative_regret", "mean_relative_compute", "trials",
)


@dataclass(frozen=True)
class SweepSpec:
    """Grid and trial plan for one sweep."""

    pool_size: int = 256
    f_grid: tuple[int, ...] = (1, 2, 4, 8, 16, 32, 64)
    c_grid: tuple[int, ...] = (8, 16, 32, 64)
    rankers: tuple[str, ...] = ("current", "gp")
    trials: int = 100
    root_seed: int = 0
    eta: int = 2
    grace_fraction: float = 0.10
    window_fraction: float = 0.2
    reference_perf: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "f_grid", tuple(int(f) for f in self.f_grid))
        object.__setattr__(self, "c_grid", tuple(int(c) for c in self.c_grid))
        object.__setattr__(self, "rankers", tuple(self.rankers))
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if any(f < 1 or f >= self.pool_size for f in self.f_grid):
            raise ConfigError("every F must satisfy 1 <= F < pool_size")
        for ranker in self.rankers:
            if ranker not in ("current", "gp", "oracle"):
                raise ConfigError(f"unknown ranker {ranker!r}")
        if "gp" in self.rankers and not self.c_grid:
            raise ConfigError("gp ranker requires a non-empty c_grid")
        if any(c < 1 for c in self.c_grid):
            raise ConfigError("every C must be >= 1")

    @property
    def perf_spec(self) -> PerfSpec:
        return PerfSpec(self.window_fraction)

    def arms(self) -> list[tuple[str, int, int]]:
        """Canonical (ranker, F, C) grid; C = 0 for non-gp arms."""
        out = []
        for ranker in self.rankers:
            for n_final in self.f_grid:
                for n_training in self.c_grid if ranker == "gp" else (0,):
                    out.append((ranker, n_final, n_training))
        return out

    def to_json_dict(self) -> dict:
        return {
            "pool_size": self.pool_size,
            "f_grid": list(self.f_grid),
            "c_grid": list(self.c_grid),
            "rankers": list(self.rankers),
            "trials": self.trials,
            "root_seed": self.root_seed,
            "eta": self.eta,
            "grace_fraction": self.grace_fraction,
            "window_fraction": self.window_fraction,
            "reference_perf": self.reference_perf,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "SweepSpec":
        known = {f for f in cls.__dataclass_fields__}
        kwargs = {k: v for k, v in data.items() if k in known}
        for key in ("f_grid", "c_grid", "rankers"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass(frozen=True)
class TrialResult:
    ranker: str
    final_candidates: int
    training_curves: int
    trial: int
    seed: int
    picked_id: int
    picked_perf: float
    best_perf: float
    absolute_regret: float
    relative_regret: float
    absolute_compute: int
    relative_compute: float


@dataclass(frozen=True)
class AggregateRow:
    ranker: str
    final_candidates: int
    training_curves: int
    mean_relative_regret: float
    stderr_relative_regret: float
    mean_relative_compute: float
    trials: int


def relative_regret(picked_perf: float, best_perf: float, reference_perf: float) -> float:
    """(picked - best) / |reference|; non-negative whenever picked >= best."""
    if reference_perf == 0.0:
        raise ConfigError("reference performance must be non-zero")
    return (picked_perf - best_perf) / abs(reference_perf)


def default_reference_perf(universe: CurveSet, perf_spec: PerfSpec) -> float:
    """Fallback regret denominator: the universe's mean final perf."""
    return float(np.mean([final_perf(c, perf_spec) for c in universe.curves]))


def _draw_trial_sets(
    universe: CurveSet, spec: SweepSpec, trial: int, n_training: int
) -> tuple[list[int], list[int]]:
    """(pool ids, training ids) for one trial; the pool is shared across arms."""
    ids = np.array(sorted(universe.candidate_ids))
    pool_rng = substream(spec.root_seed, "pool", trial)
    pool = sorted(pool_rng.choice(ids, size=spec.pool_size, replace=False).tolist())
    training: list[int] = []
    if n_training:
        outside = np.array(sorted(set(ids.tolist()) - set(pool)))
        if outside.size < n_training:
            raise ConfigError(
                f"universe too small: need {n_training} training curves outside "
                f"a pool of {spec.pool_size}, only {outside.size} available"
            )
        train_rng = substream(spec.root_seed, "train", trial, n_training)
        training = sorted(
            train_rng.choice(outside, size=n_training, replace=False).tolist()
        )
    return pool, training


def run_trial(
    universe: CurveSet,
    spec: SweepSpec,
    ranker: str,
    n_final: int,
    n_training: int,
    trial: int,
    reference: float,
) -> tuple[TrialResult, ShTrace]:
    pool, training = _draw_trial_sets(universe, spec, trial, n_training)
    trial_set = universe.subset(pool + training)
    seed = spawn_seed(spec.root_seed, "run", ranker, n_final, n_training, trial)
    config = ShConfig(
        n_initial=spec.pool_size,
        n_final=n_final,
        eta=spec.eta,
        grace_fraction=spec.grace_fraction,
        ranker=ranker,
        training_ids=tuple(training),
    )
    trace = run_halving(trial_set, config, spec.perf_spec, seed)
    _, best_perf = best_candidate(universe.subset(pool), spec.perf_spec)
    absolute_regret = trace.picked_perf - best_perf
    absolute, relative = compute_units(trace, spec.pool_size, universe.n_steps)
    result = TrialResult(
        ranker=ranker,
        final_candidates=n_final,
        training_curves=n_training,
        trial=trial,
        seed=seed,
        picked_id=trace.picked_id,
        picked_perf=trace.picked_perf,
        best_perf=best_perf,
        absolute_regret=absolute_regret,
        relative_regret=relative_regret(trace.picked_perf, best_perf, reference),
        absolute_compute=absolute,
        relative_compute=relative,
    )
    return result, trace


# Worker-side state for process pools: the universe and spec are installed
# once per worker instead of being pickled into every task.
_WORKER: dict = {}


def _init_worker(universe: CurveSet, spec: SweepSpec, reference: float) -> None:
    _WORKER["universe"] = universe
    _WORKER["spec"] = spec
    _WORKER["reference"] = reference


def _run_task(task: tuple[str, int, int, int]) -> tuple[TrialResult, ShTrace]:
    ranker, n_final, n_training, trial = task
    return run_trial(
        _WORKER["universe"], _WORKER["spec"], ranker, n_final, n_training,
        trial, _WORKER["reference"],
    )


def run_sweep(
    universe: CurveSet,
    spec: SweepSpec,
    jobs: int = 1,
    keep_traces: bool = False,
):
    """Run the full (ranker, F, C) x trials grid.

    Returns the list of TrialResult in canonical order, or a
    ``(results, traces)`` pair when ``keep_traces`` is set.  ``jobs`` bounds
    concurrent trials; results are identical for every jobs value.
    """
    if spec.pool_size > universe.n_curves:
        raise ConfigError(
            f"pool_size {spec.pool_size} exceeds universe size {universe.n_curves}"
        )
    if "gp" in spec.rankers:
        needed = spec.pool_size + max(spec.c_grid)
        if needed > universe.n_curves:
            raise ConfigError(
                f"universe of {universe.n_curves} cannot supply a pool of "
                f"{spec.pool_size} plus {max(spec.c_grid)} training curves"
            )
    reference = (
        spec.reference_perf
        if spec.reference_perf is not None
        else default_reference_perf(universe, spec.perf_spec)
    )
    if reference == 0.0:
        raise ConfigError(
            "reference performance is zero; set reference_perf explicitly"
        )

    tasks = [
        (ranker, n_final, n_training, trial)
        for (ranker, n_final, n_training) in spec.arms()
        for trial in range(spec.trials)
    ]
    if jobs > 1 and len(tasks) > 1:
        # single-threaded BLAS inside workers; parallelism comes from the
        # pool (inherited env takes effect when the child imports numpy)
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, "1")
        context = get_context("spawn")
        with ProcessPoolExecutor(
            max_workers=jobs,
            mp_context=context,
            initializer=_init_worker,
            initargs=(universe, spec, reference),
        ) as pool:
            outcomes = list(pool.map(_run_task, tasks, chunksize=8))
    else:
        outcomes = [
            run_trial(universe, spec, *task, reference) for task in tasks
        ]

    results = [result for result, _ in outcomes]
    if keep_traces:
        traces = {
            (r.ranker, r.final_candidates, r.training_curves, r.trial): trace
            for (r, trace) in outcomes
        }
        return results, traces
    return results


def aggregate(results: Sequence[TrialResult]) -> list[AggregateRow]:
    """Group results by (ranker, F, C): mean regret, its standard error,
    and mean relative compute.  Grouping is order-invariant."""
    groups: dict[tuple, list[TrialResult]] = {}
    for result in results:
        key = (result.ranker, result.final_candidates, result.training_curves)
        groups.setdefault(key, []).append(result)
    rows = []
    for key in sorted(groups):
        # canonical reduction order, so grouping is exactly order-invariant
        bucket = sorted(groups[key], key=lambda r: r.trial)
        regrets = np.array([r.relative_regret for r in bucket])
        computes = np.array([r.relative_compute for r in bucket])
        if regrets.size < 2:
            warnings.warn(
                f"group {key} has {regrets.size} trial(s); standard error set to 0"
            )
            stderr = 0.0
        else:
            stderr = float(np.std(regrets, ddof=1) / np.sqrt(regrets.size))
        rows.append(
            AggregateRow(
                ranker=key[0],
                final_candidates=key[1],
                training_curves=key[2],
                mean_relative_regret=float(np.mean(regrets)),
                stderr_relative_regret=stderr,
                mean_relative_compute=float(np.mean(computes)),
                trials=int(regrets.size),
            )
        )
    return rows


# ---------------------------------------------------------------------------
# CSV round-trip for results and aggregates
# ---------------------------------------------------------------------------

def _format(value) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


def write_results_csv(results: Sequence[TrialResult], path) -> None:
    ordered = sorted(
        results,
        key=lambda r: (r.ranker, r.final_candidates, r.training_curves, r.trial),
    )
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(RESULT_COLUMNS)
        for r in ordered:
            writer.writerow([_format(getattr(r, column)) for column in RESULT_COLUMNS])


def read_results_csv(path) -> list[TrialResult]:
    with open(path, "r", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != list(RESULT_COLUMNS):
            raise ConfigError(
                f"unexpected results columns: {reader.fieldnames}"
            )
        results = []
        for row in reader:
            results.append(
                TrialResult(
                    ranker=row["ranker"],
                    final_candidates=int(row["final_candidates"]),
                    training_curves=int(row["training_curves"]),
                    trial=int(row["trial"]),
                    seed=int(row["seed"]),
                    picked_id=int(row["picked_id"]),
                    picked_perf=float(row["picked_perf"]),
                    best_perf=float(row["best_perf"]),
                    absolute_regret=float(row["absolute_regret"]),
                    relative_regret=float(row["relative_regret"]),
                    absolute_compute=int(row["absolute_compute"]),
                    relative_compute=float(row["relative_compute"]),
                )
            )
    return results


def write_aggregate_csv(rows: Sequence[AggregateRow], path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(AGGREGATE_COLUMNS)
        for row in rows:
            writer.writerow(
                [_format(getattr(row, column)) for column in AGGREGATE_COLUMNS]
            )


def read_aggregate_csv(path) -> list[AggregateRow]:
    with open(path, "r", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != list(AGGREGATE_COLUMNS):
            raise ConfigError(f"unexpected aggregate columns: {reader.fieldnames}")
        return [
            AggregateRow(
                ranker=row["ranker"],
                final_candidates=int(row["final_candidates"]),
                training_curves=int(row["training_curves"]),
                mean_relative_regret=float(row["mean_relative_regret"]),
                stderr_relative_regret=float(row["stderr_relative_regret"]),
                mean_relative_compute=float(row["mean_relative_compute"]),
                trials=int(row["trials"]),
            )
            for row in reader
        ]
