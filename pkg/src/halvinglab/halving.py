"""The Successive Halving scheduler.

One run proceeds in S = ceil(log_eta(N / F)) rungs.  At rung s the surviving
candidates are observed up to the budget t_s = max(grace, round(R_s * T))
with R_s = (eta^s - 1)/(eta^S - 1), ranked by the configured ranker, and the
top max(ceil(N / eta^s), F) are promoted.  An initial grace period reveals
the first ceil(grace_fraction * T) steps of every candidate before any
discard happens.  The trace records every reveal, so compute is charged in
exact observed-performance-value units: each cell counts once, plus C * T
for the fully observed curves a GP ranker trains on.

All budget arithmetic is exact (integer / rational), never floating logs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .curves import CurveSet, PerfSpec, best_candidate, grace_steps
from .errors import ConfigError
from .gp import FitConfig, build_observations, fit_gp
from .ranking import Ranking, rank_by_current, rank_by_gp, rank_by_oracle
from .rng import spawn_seed

RANKERS = ("current", "gp", "oracle")


@dataclass(frozen=True)
class ShConfig:
    """Parameters of one halving run.

    ``n_initial`` counts the competing candidates only; ``training_ids``
    names the fully observed curves a GP ranker trains on, which must be
    disjoint from the competing pool.
    """

    n_initial: int
    n_final: int
    eta: int = 2
    grace_fraction: float = 0.10
    ranker: str = "current"
    training_ids: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "training_ids", tuple(self.training_ids))
        if not 1 <= self.n_final < self.n_initial:
            raise ConfigError(
                f"need 1 <= n_final < n_initial, got F={self.n_final}, N={self.n_initial}"
            )
        if int(self.eta) != self.eta or self.eta < 2:
            raise ConfigError(f"eta must be an integer >= 2, got {self.eta}")
        if not 0.0 <= self.grace_fraction < 1.0:
            raise ConfigError(
                f"grace_fraction must be in [0, 1), got {self.grace_fraction}"
            )
        if self.ranker not in RANKERS:
            raise ConfigError(f"ranker must be one of {RANKERS}, got {self.ranker!r}")
        if self.ranker == "gp" and not self.training_ids:
            raise ConfigError("gp ranker requires at least one training curve")
        if self.ranker != "gp" and self.training_ids:
            raise ConfigError("training curves are only used by the gp ranker")

    def to_json_dict(self) -> dict:
        return {
            "n_initial": self.n_initial,
            "n_final": self.n_final,
            "eta": self.eta,
            "grace_fraction": self.grace_fraction,
            "ranker": self.ranker,
            "training_ids": list(self.training_ids),
        }


def rung_count(n_initial: int, n_final: int, eta: int) -> int:
    """ceil(log_eta(N / F)) by repeated multiplication; exact integers only."""
    if not 1 <= n_final < n_initial:
        raise ConfigError(f"need 1 <= F < N, got F={n_final}, N={n_initial}")
    if eta < 2:
        raise ConfigError(f"eta must be >= 2, got {eta}")
    count, reach = 0, n_final
    while reach < n_initial:
        reach *= eta
        count += 1
    return count


def rung_budget(
    rung: int, total_rungs: int, eta: int, n_steps: int, grace_fraction: float
) -> int:
    """Time budget t_s for rung s: max(grace, round(R_s * T)), exact rationals.

    R_s = (eta^s - 1) / (eta^S - 1), so the final rung always reaches T.
    """
    if not 1 <= rung <= total_rungs:
        raise ConfigError(f"rung {rung} outside 1..{total_rungs}")
    share = Fraction(eta**rung - 1, eta**total_rungs - 1)
    return max(grace_steps(grace_fraction, n_steps), round(share * n_steps))


@dataclass(frozen=True)
class RungRecord:
    """One rung's decision: who was ranked at what budget, and who survived."""

    index: int
    budget: int
    active_ids: tuple[int, ...]
    ranking: Ranking
    promoted_ids: tuple[int, ...]


@dataclass(frozen=True)
class ShTrace:
    """Full audit of one halving run."""

    config: ShConfig
    n_steps: int
    grace: int
    rungs: tuple[RungRecord, ...]
    horizons: dict[int, int] = field(repr=False)
    final_ids: tuple[int, ...]
    picked_id: int
    picked_perf: float

    @property
    def n_observed(self) -> int:
        """Distinct observed cells of competing candidates."""
        return sum(self.horizons.values())

    @property
    def observed_cells(self) -> frozenset[tuple[int, int]]:
        return frozenset(
            (cid, t)
            for cid, horizon in self.horizons.items()
            for t in range(1, horizon + 1)
        )

    @property
    def compute_units(self) -> int:
        """Observed cells, plus C * T for the gp ranker's training curves."""
        charged = self.n_observed
        if self.config.ranker == "gp":
            charged += len(self.config.training_ids) * self.n_steps
        return charged

    def to_json_dict(self) -> dict:
        return {
            "config": self.config.to_json_dict(),
            "n_steps": self.n_steps,
            "grace": self.grace,
            "rungs": [
                {
                    "index": r.index,
                    "budget": r.budget,
                    "active_ids": list(r.active_ids),
                    "ranking": list(r.ranking.ordered_ids),
                    "scores": list(r.ranking.scores),
                    "promoted_ids": list(r.promoted_ids),
                }
                for r in self.rungs
            ],
            "observed_cells": sorted([c, t] for c, t in self.observed_cells),
            "compute_units": self.compute_units,
            "final_ids": list(self.final_ids),
            "picked_id": self.picked_id,
            "picked_perf": self.picked_perf,
        }

    def save_json(self, path) -> None:
        with open(path, "w") as handle:
            json.dump(self.to_json_dict(), handle, indent=2)

    def save_csv(self, path) -> None:
        """Flat export: one row per rung per ranked candidate."""
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(
                ["rung", "budget", "candidate_id", "score", "rank", "promoted"]
            )
            for record in self.rungs:
                promoted = set(record.promoted_ids)
                for rank, (cid, score) in enumerate(
                    zip(record.ranking.ordered_ids, record.ranking.scores), start=1
                ):
                    writer.writerow(
                        [record.index, record.budget, cid, repr(score),
                         rank, int(cid in promoted)]
                    )


def run_halving(
    curve_set: CurveSet, config: ShConfig, perf_spec: PerfSpec, seed: int = 0
) -> ShTrace:
    """Execute one run on ``curve_set`` and return its full trace.

    ``curve_set`` holds the competing pool plus (for the gp ranker) the
    training curves; competing candidates are everything not listed in
    ``config.training_ids``.  Survivors of the last rung are observed to T
    (the final window is needed to pick a winner) and those reveals are
    charged like any others.
    """
    training = set(config.training_ids)
    all_ids = set(curve_set.candidate_ids)
    missing = training - all_ids
    if missing:
        raise ConfigError(f"training ids not present in the curve set: {sorted(missing)}")
    competing = sorted(all_ids - training)
    if len(competing) != config.n_initial:
        raise ConfigError(
            f"competing pool has {len(competing)} candidates, "
            f"config expects N={config.n_initial}"
        )
    n_steps = curve_set.n_steps
    total_rungs = rung_count(config.n_initial, config.n_final, config.eta)
    grace = grace_steps(config.grace_fraction, n_steps)

    horizons = {cid: 0 for cid in competing}

    def observe(ids: Sequence[int], until: int) -> None:
        for cid in ids:
            horizons[cid] = max(horizons[cid], until)

    observe(competing, grace)
    active = list(competing)
    rungs = []
    for rung in range(1, total_rungs + 1):
        budget = rung_budget(
            rung, total_rungs, config.eta, n_steps, config.grace_fraction
        )
        observe(active, budget)
        if config.ranker == "current":
            ranking = rank_by_current(
                curve_set, active, budget, perf_spec.window_fraction
            )
        elif config.ranker == "oracle":
            ranking = rank_by_oracle(curve_set, active, perf_spec)
        else:
            observation_horizons = {tid: n_steps for tid in training}
            observation_horizons.update({cid: horizons[cid] for cid in active})
            observations, standardization = build_observations(
                curve_set, observation_horizons
            )
            model = fit_gp(observations, standardization, FitConfig())
            ranking = rank_by_gp(
                model, active, perf_spec, seed=spawn_seed(seed, "rung", rung)
            )
        keep = max(-(-config.n_initial // config.eta**rung), config.n_final)
        promoted = tuple(sorted(ranking.top(keep)))
        rungs.append(
            RungRecord(
                index=rung,
                budget=budget,
                active_ids=tuple(sorted(active)),
                ranking=ranking,
                promoted_ids=promoted,
            )
        )
        active = list(promoted)

    observe(active, n_steps)
    survivors = curve_set.subset(active)
    picked_id, picked_perf = best_candidate(survivors, perf_spec)
    return ShTrace(
        config=config,
        n_steps=n_steps,
        grace=grace,
        rungs=tuple(rungs),
        horizons=horizons,
        final_ids=tuple(active),
        picked_id=picked_id,
        picked_perf=picked_perf,
    )


def compute_units(trace: ShTrace, pool_size: int, n_steps: int) -> tuple[int, float]:
    """(absolute, relative) compute of a finished run.

    Absolute is the trace's exact observed-value count (training curves
    included for the gp ranker); relative divides by pool_size * n_steps.
    """
    absolute = trace.compute_units
    return absolute, absolute / (pool_size * n_steps)
