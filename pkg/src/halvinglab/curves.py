"""Learning-curve data model: curve sets, the final-window performance
metric, reference differencing, synthetic generation, and CSV ingestion.

Curves are sequences of performance values (lower is better) observed at the
integer time steps 1..T, one value per step, with one hyperparameter vector
per candidate.  All types are immutable after construction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataFormatError
from .rng import substream

SYNTHETIC_FAMILIES = ("power_law", "exponential_decay", "crossing_pair_mix")

# Default (low, high) parameter ranges per family for the curve model
# y(t) = a * t^(-b) + c  (power_law)  or  y(t) = a * exp(-b t / T) + c.
_DEFAULT_RANGES = {
    "power_law": {"a": (0.5, 2.0), "b": (0.4, 1.2), "c": (0.1, 0.8)},
    "exponential_decay": {"a": (0.5, 2.0), "b": (2.0, 6.0), "c": (0.1, 0.8)},
    "crossing_pair_mix": {"a": (0.2, 0.4), "b": (1.0, 2.0), "c": (0.5, 0.8)},
}

# Slow starters begin far above the pack and improve steeply late; these
# ranges place their crossings past 10% of the run but well before the end.
_SLOW_STARTER_RANGES = {"a": (1.4, 2.0), "b": (3.0, 4.5), "c": (0.05, 0.30)}


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array, dtype=float)
    array.flags.writeable = False
    return array


def window_size(fraction: float, n_steps: int) -> int:
    """Number of trailing steps covered by ``fraction`` of an ``n_steps`` run.

    Computed as max(1, round(fraction * n_steps)) with exact decimal
    arithmetic (round-half-even), so e.g. 0.1 * 30 never lands on 3.0000...04.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"window fraction must be in (0, 1], got {fraction}")
    steps = max(1, round(Fraction(str(fraction)) * n_steps))
    if steps > n_steps:
        raise ConfigError(
            f"window of {steps} steps exceeds curve length {n_steps}"
        )
    return steps


def grace_steps(fraction: float, n_steps: int) -> int:
    """Initial no-discard horizon: ceil(fraction * n_steps), exact arithmetic."""
    if not 0.0 <= fraction < 1.0:
        raise ConfigError(f"grace fraction must be in [0, 1), got {fraction}")
    return int(math.ceil(Fraction(str(fraction)) * n_steps))


@dataclass(frozen=True)
class LearningCurve:
    """One candidate: an id, a hyperparameter vector, and T performance values."""

    candidate_id: int
    hyperparams: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "hyperparams", _frozen(self.hyperparams))
        object.__setattr__(self, "values", _frozen(self.values))
        if self.hyperparams.ndim != 1 or self.hyperparams.size < 1:
            raise ConfigError("hyperparams must be a non-empty 1-d vector")
        if self.values.ndim != 1 or self.values.size < 1:
            raise ConfigError("values must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(self.hyperparams)):
            raise ConfigError(
                f"candidate {self.candidate_id}: non-finite hyperparameter"
            )
        if not np.all(np.isfinite(self.values)):
            raise ConfigError(f"candidate {self.candidate_id}: non-finite value")


@dataclass(frozen=True)
class CurveSet:
    """A set of curves sharing one time grid, plus an optional reference curve."""

    curves: tuple[LearningCurve, ...]
    reference: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "curves", tuple(self.curves))
        if not self.curves:
            raise ConfigError("curve set must contain at least one curve")
        n_steps = self.curves[0].values.size
        dim = self.curves[0].hyperparams.size
        ids = set()
        for curve in self.curves:
            if curve.values.size != n_steps:
                raise ConfigError(
                    f"candidate {curve.candidate_id} has {curve.values.size} "
                    f"steps, expected {n_steps}"
                )
            if curve.hyperparams.size != dim:
                raise ConfigError(
                    f"candidate {curve.candidate_id} has hyperparameter "
                    f"dimension {curve.hyperparams.size}, expected {dim}"
                )
            if curve.candidate_id in ids:
                raise ConfigError(f"duplicate candidate_id {curve.candidate_id}")
            ids.add(curve.candidate_id)
        if self.reference is not None:
            ref = _frozen(self.reference)
            if ref.size != n_steps or not np.all(np.isfinite(ref)):
                raise ConfigError(
                    f"reference curve must hold {n_steps} finite values"
                )
            object.__setattr__(self, "reference", ref)

    @property
    def n_curves(self) -> int:
        return len(self.curves)

    @property
    def n_steps(self) -> int:
        return self.curves[0].values.size

    @property
    def dim(self) -> int:
        return self.curves[0].hyperparams.size

    @property
    def candidate_ids(self) -> tuple[int, ...]:
        return tuple(c.candidate_id for c in self.curves)

    def curve(self, candidate_id: int) -> LearningCurve:
        for c in self.curves:
            if c.candidate_id == candidate_id:
                return c
        raise ConfigError(f"no candidate with id {candidate_id}")

    def subset(self, candidate_ids: Sequence[int]) -> "CurveSet":
        """New set restricted to ``candidate_ids`` (original ids kept)."""
        by_id = {c.candidate_id: c for c in self.curves}
        missing = [i for i in candidate_ids if i not in by_id]
        if missing:
            raise ConfigError(f"unknown candidate ids {missing}")
        return CurveSet(
            curves=tuple(by_id[i] for i in candidate_ids),
            reference=self.reference,
        )


@dataclass(frozen=True)
class PerfSpec:
    """Defines a candidate's performance as the mean over a trailing window.

    ``window_fraction`` is the fraction of the run covered by the window;
    the default 0.2 averages the last 20% of the values.
    """

    window_fraction: float = 0.2

    def window(self, n_steps: int) -> int:
        return window_size(self.window_fraction, n_steps)


def final_perf(curve: LearningCurve, spec: PerfSpec) -> float:
    """Mean of the last window of a fully observed curve (lower is better)."""
    width = spec.window(curve.values.size)
    return float(np.mean(curve.values[-width:]))


def best_candidate(curve_set: CurveSet, spec: PerfSpec) -> tuple[int, float]:
    """(candidate_id, perf) of the minimizer; ties go to the lowest id."""
    best_id, best_value = None, math.inf
    for curve in curve_set.curves:
        value = final_perf(curve, spec)
        if value < best_value or (value == best_value and curve.candidate_id < best_id):
            best_id, best_value = curve.candidate_id, value
    return best_id, best_value


def subtract_reference(curve_set: CurveSet) -> CurveSet:
    """Replace every value by its difference to the reference curve.

    The returned set carries an all-zero reference, so the transform is
    idempotent and invertible by adding the original reference back.
    """
    if curve_set.reference is None:
        raise ConfigError("curve set has no reference curve to subtract")
    ref = curve_set.reference
    curves = tuple(
        LearningCurve(c.candidate_id, c.hyperparams, c.values - ref)
        for c in curve_set.curves
    )
    return CurveSet(curves=curves, reference=np.zeros_like(ref))


@dataclass(frozen=True)
class SyntheticFamilySpec:
    """Configuration for the synthetic curve generator."""

    family: str
    param_ranges: dict[str, tuple[float, float]] = field(default_factory=dict)
    noise_std: float = 0.0
    slow_starter_fraction: float = 0.0

    def __post_init__(self):
        if self.family not in SYNTHETIC_FAMILIES:
            raise ConfigError(
                f"family must be one of {SYNTHETIC_FAMILIES}, got {self.family!r}"
            )
        ranges = dict(_DEFAULT_RANGES[self.family])
        for name, bounds in self.param_ranges.items():
            if name not in ranges:
                raise ConfigError(f"param_ranges: unknown parameter {name!r}")
            low, high = float(bounds[0]), float(bounds[1])
            if not (math.isfinite(low) and math.isfinite(high)) or low > high:
                raise ConfigError(
                    f"param_ranges: invalid bounds for {name!r}: ({low}, {high})"
                )
            ranges[name] = (low, high)
        object.__setattr__(self, "param_ranges", ranges)
        if not (math.isfinite(self.noise_std) and self.noise_std >= 0.0):
            raise ConfigError(f"noise_std must be finite and >= 0, got {self.noise_std}")
        if not 0.0 <= self.slow_starter_fraction <= 1.0:
            raise ConfigError(
                "slow_starter_fraction must be in [0, 1], "
                f"got {self.slow_starter_fraction}"
            )


def _family_values(family: str, a: float, b: float, c: float, n_steps: int) -> np.ndarray:
    t = np.arange(1, n_steps + 1, dtype=float)
    if family == "power_law":
        return a * t ** (-b) + c
    # exponential_decay, and the crossing mix built on top of it
    return a * np.exp(-b * t / n_steps) + c


def _draw_params(rng, ranges) -> tuple[float, float, float]:
    return tuple(rng.uniform(*ranges[name]) for name in ("a", "b", "c"))


def _rank_by(values: np.ndarray) -> np.ndarray:
    # rank[i] = position of curve i when sorting ascending, ids as tie-break
    order = np.lexsort((np.arange(values.size), values))
    ranks = np.empty(values.size, dtype=int)
    ranks[order] = np.arange(values.size)
    return ranks


def _count_rank_changes(curve_set: CurveSet) -> int:
    n_steps = curve_set.n_steps
    early_width = grace_steps(0.1, n_steps) or 1
    early = np.array([np.mean(c.values[:early_width]) for c in curve_set.curves])
    final = np.array([final_perf(c, PerfSpec()) for c in curve_set.curves])
    return int(np.sum(_rank_by(early) != _rank_by(final)))


def generate_synthetic(
    spec: SyntheticFamilySpec, n_curves: int, n_steps: int, seed: int
) -> CurveSet:
    """Deterministically sample ``n_curves`` curves of length ``n_steps``.

    Each curve's hyperparameter vector is its sampled (a, b, c) family
    parameters, so hyperparameter-space correlations carry real signal.
    For ``crossing_pair_mix``, at least ceil(slow_starter_fraction * N)
    curves change rank between the first 10% of the run and the final
    window; generation retries with derived streams until that holds.
    """
    if n_curves < 2 or n_steps < 2:
        raise ConfigError("need n_curves >= 2 and n_steps >= 2")
    mix = spec.family == "crossing_pair_mix"
    n_slow = math.ceil(spec.slow_starter_fraction * n_curves) if mix else 0
    family = "exponential_decay" if mix else spec.family

    for attempt in range(32):
        rng = substream(seed, "synthetic", attempt)
        slow_ids = set(rng.permutation(n_curves)[:n_slow].tolist())
        curves = []
        for index in range(n_curves):
            ranges = _SLOW_STARTER_RANGES if index in slow_ids else spec.param_ranges
            a, b, c = _draw_params(rng, ranges)
            values = _family_values(family, a, b, c, n_steps)
            if spec.noise_std > 0.0:
                values = values + rng.normal(0.0, spec.noise_std, size=n_steps)
            curves.append(
                LearningCurve(index + 1, np.array([a, b, c]), values)
            )
        curve_set = CurveSet(curves=tuple(curves))
        if not mix or _count_rank_changes(curve_set) >= n_slow:
            return curve_set
    raise ConfigError(
        "crossing_pair_mix could not realize the requested slow-starter "
        "fraction; widen the parameter ranges or lower noise_std"
    )


# ---------------------------------------------------------------------------
# CSV ingestion: long format `candidate_id,t,value,h1,...,hD`, one row per
# observed value, hyperparameters repeated per row.  An optional reference
# curve uses candidate_id = -1 (its h-columns are ignored).
# ---------------------------------------------------------------------------

def save_curves_csv(curve_set: CurveSet, path) -> None:
    """Write a curve set in long format; floats keep full round-trip precision."""
    dim = curve_set.dim
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["candidate_id", "t", "value"] + [f"h{d + 1}" for d in range(dim)]
        )
        if curve_set.reference is not None:
            for t, value in enumerate(curve_set.reference, start=1):
                writer.writerow([-1, t, repr(float(value))] + ["0"] * dim)
        for curve in sorted(curve_set.curves, key=lambda c: c.candidate_id):
            hyper = [repr(float(h)) for h in curve.hyperparams]
            for t, value in enumerate(curve.values, start=1):
                writer.writerow([curve.candidate_id, t, repr(float(value))] + hyper)


def _parse_float(text: str, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataFormatError(f"line {line}: {column} is not a number: {text!r}")
    if not math.isfinite(value):
        raise DataFormatError(f"line {line}: non-finite {column}: {text!r}")
    return value


def load_curves_csv(path) -> CurveSet:
    """Parse a long-format curves CSV into a CurveSet.

    Candidate ids are reindexed to 1..N in ascending order of their original
    ids; every candidate must cover exactly the steps 1..T (non-uniform or
    ragged grids are rejected, not resampled).
    """
    with open(path, "r", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("empty file: missing header")
        header = [h.strip() for h in header]
        if header[:3] != ["candidate_id", "t", "value"]:
            raise DataFormatError(
                "line 1: header must start with candidate_id,t,value"
            )
        h_names = header[3:]
        dim = len(h_names)
        if dim < 1:
            raise DataFormatError(
                "line 1: missing hyperparameter columns h1,...,hD"
            )
        if h_names != [f"h{d + 1}" for d in range(dim)]:
            raise DataFormatError(
                f"line 1: hyperparameter columns must be h1..h{dim}, got {h_names}"
            )

        rows: dict[int, dict[int, float]] = {}
        hypers: dict[int, tuple] = {}
        reference: dict[int, float] = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3 + dim:
                raise DataFormatError(
                    f"line {line_no}: expected {3 + dim} columns, got {len(row)}"
                )
            try:
                candidate = int(row[0])
                t = int(row[1])
            except ValueError:
                raise DataFormatError(
                    f"line {line_no}: candidate_id and t must be integers"
                )
            value = _parse_float(row[2], line_no, "value")
            if candidate == -1:
                if t in reference:
                    raise DataFormatError(
                        f"line {line_no}: duplicate reference step t={t}"
                    )
                reference[t] = value
                continue
            hyper = tuple(
                _parse_float(row[3 + d], line_no, h_names[d]) for d in range(dim)
            )
            if candidate in hypers:
                if hypers[candidate] != hyper:
                    raise DataFormatError(
                        f"line {line_no}: candidate {candidate} repeats with "
                        "different hyperparameters"
                    )
            else:
                hypers[candidate] = hyper
                rows[candidate] = {}
            if t in rows[candidate]:
                raise DataFormatError(
                    f"line {line_no}: duplicate step t={t} for candidate {candidate}"
                )
            rows[candidate][t] = value

    if not rows:
        raise DataFormatError("file contains no curve rows")
    lengths = {candidate: len(steps) for candidate, steps in rows.items()}
    n_steps = max(lengths.values())
    for candidate in sorted(rows):
        steps = rows[candidate]
        if len(steps) != n_steps or set(steps) != set(range(1, n_steps + 1)):
            raise DataFormatError(
                f"candidate {candidate} does not cover steps 1..{n_steps} "
                f"(got {len(steps)} rows)"
            )
    ref_array = None
    if reference:
        if set(reference) != set(range(1, n_steps + 1)):
            raise DataFormatError(
                f"reference curve does not cover steps 1..{n_steps}"
            )
        ref_array = np.array([reference[t] for t in range(1, n_steps + 1)])

    curves = []
    for new_id, candidate in enumerate(sorted(rows), start=1):
        values = np.array([rows[candidate][t] for t in range(1, n_steps + 1)])
        curves.append(LearningCurve(new_id, np.array(hypers[candidate]), values))
    return CurveSet(curves=tuple(curves), reference=ref_array)
