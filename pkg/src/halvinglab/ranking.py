"""Candidate rankers consumed by the halving scheduler.

Three interchangeable rankers: the observed trailing mean ("current"), the
GP predictor scored by expected pairwise wins ("gp"), and the true final
performance ("oracle", evaluation baselines only).  Every ranker orders
candidates best-first with ascending candidate_id as the tie-break, so
rankings are deterministic and permutation-invariant in their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .curves import CurveSet, PerfSpec, final_perf, window_size
from .errors import ConfigError
from .gp import CandidateSummary, GpModel, predict_final_window


@dataclass(frozen=True)
class Ranking:
    """Candidates ordered best-first, with the score that sorted each one."""

    ordered_ids: tuple[int, ...]
    scores: tuple[float, ...]

    def __post_init__(self):
        if len(self.ordered_ids) != len(self.scores):
            raise ConfigError("ordered_ids and scores must align")

    def top(self, count: int) -> tuple[int, ...]:
        return self.ordered_ids[:count]


def _sorted_ranking(ids: Sequence[int], scores: Sequence[float]) -> Ranking:
    order = sorted(range(len(ids)), key=lambda i: (scores[i], ids[i]))
    return Ranking(
        ordered_ids=tuple(int(ids[i]) for i in order),
        scores=tuple(float(scores[i]) for i in order),
    )


def expected_wins(summaries: Sequence[CandidateSummary]) -> np.ndarray:
    """Average probability of each candidate's perf exceeding another's.

        wins(i) = 1/(n-1) * sum_{j != i} Phi((mu_i - mu_j) / sqrt(s2_i + s2_j))

    Because perf is minimized, a *low* expected-wins value marks a good
    candidate.  Values lie in [0, 1] and sum to n/2 exactly (complementary
    pairwise probabilities).
    """
    n = len(summaries)
    if n < 2:
        raise ConfigError("expected_wins needs at least two candidates")
    mu = np.array([s.mu for s in summaries])
    var = np.array([s.sigma2 for s in summaries])
    if np.any(var <= 0.0):
        raise ConfigError("candidate variances must be positive")
    z = (mu[:, None] - mu[None, :]) / np.sqrt(var[:, None] + var[None, :])
    wins = ndtr(z)
    np.fill_diagonal(wins, 0.0)
    return wins.sum(axis=1) / (n - 1)


def rank_by_gp(
    model: GpModel,
    active_ids: Sequence[int],
    perf_spec: PerfSpec,
    n_samples: int = 64,
    seed: int = 0,
) -> Ranking:
    """Rank by ascending expected wins of the GP-predicted final perf."""
    ids = sorted(int(i) for i in active_ids)
    if len(ids) == 1:
        return Ranking(ordered_ids=(ids[0],), scores=(0.0,))
    summaries = predict_final_window(model, ids, perf_spec, n_samples, seed)
    return _sorted_ranking(ids, expected_wins(summaries))


def rank_by_current(
    curve_set: CurveSet,
    active_ids: Sequence[int],
    observed_until: int,
    window_fraction: float = 0.2,
) -> Ranking:
    """Rank by the mean of the most recent observed values.

    The window covers ``window_fraction`` of the full run; at early horizons
    with fewer observed values than that, all observed values are used.
    """
    if observed_until < 1:
        raise ConfigError(f"observed_until must be >= 1, got {observed_until}")
    if observed_until > curve_set.n_steps:
        raise ConfigError("observed_until exceeds the curve length")
    width = min(window_size(window_fraction, curve_set.n_steps), observed_until)
    ids = sorted(int(i) for i in active_ids)
    scores = [
        float(np.mean(curve_set.curve(i).values[observed_until - width:observed_until]))
        for i in ids
    ]
    return _sorted_ranking(ids, scores)


def rank_by_oracle(
    curve_set: CurveSet, active_ids: Sequence[int], perf_spec: PerfSpec
) -> Ranking:
    """Rank by the true final-window performance (evaluation baseline)."""
    ids = sorted(int(i) for i in active_ids)
    scores = [final_perf(curve_set.curve(i), perf_spec) for i in ids]
    return _sorted_ranking(ids, scores)
