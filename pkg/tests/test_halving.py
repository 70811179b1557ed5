import json
import math
from fractions import Fraction

import numpy as np
import pytest

from halvinglab.curves import (
    CurveSet,
    LearningCurve,
    PerfSpec,
    SyntheticFamilySpec,
    best_candidate,
    generate_synthetic,
)
from halvinglab.errors import ConfigError
from halvinglab.halving import (
    ShConfig,
    compute_units,
    rung_budget,
    rung_count,
    run_halving,
)


def curve(cid, values, hyper=(1.0,)):
    return LearningCurve(cid, np.array(hyper), np.array(values, dtype=float))


def constant_set(levels, n_steps=20):
    return CurveSet(
        curves=tuple(curve(i + 1, [lvl] * n_steps) for i, lvl in enumerate(levels))
    )


class TestRungCount:
    @pytest.mark.parametrize(
        "n, f, eta, expected",
        [
            (256, 1, 2, 8),
            (256, 64, 2, 2),
            (100, 30, 2, 2),
            (256, 2, 2, 7),
            (100, 1, 3, 5),
            (64, 32, 2, 1),
        ],
    )
    def test_hand_computed(self, n, f, eta, expected):
        assert rung_count(n, f, eta) == expected

    def test_bounds(self):
        with pytest.raises(ConfigError):
            rung_count(8, 8, 2)
        with pytest.raises(ConfigError):
            rung_count(8, 0, 2)
        with pytest.raises(ConfigError):
            rung_count(8, 2, 1)


class TestRungBudget:
    def test_one_seventh_schedule(self):
        # eta=2, S=3: shares 1/7, 3/7, 1
        assert rung_budget(1, 3, 2, 70, 0.0) == 10
        assert rung_budget(2, 3, 2, 70, 0.0) == 30
        assert rung_budget(3, 3, 2, 70, 0.0) == 70

    def test_final_rung_reaches_full_budget(self):
        for total in (1, 2, 5, 8):
            for steps in (10, 16, 100):
                assert rung_budget(total, total, 2, steps, 0.1) == steps

    def test_grace_floor(self):
        # share 1/255 of 100 steps is below the 10% grace
        assert rung_budget(1, 8, 2, 100, 0.10) == 10

    def test_non_decreasing(self):
        budgets = [rung_budget(s, 6, 2, 48, 0.1) for s in range(1, 7)]
        assert budgets == sorted(budgets)

    def test_fractional_share_matches_rational_oracle(self):
        for total in (2, 3, 5):
            for s in range(1, total + 1):
                share = Fraction(2**s - 1, 2**total - 1)
                expected = max(
                    math.ceil(Fraction("0.1") * 33), round(share * 33)
                )
                assert rung_budget(s, total, 2, 33, 0.1) == expected


class TestRunHalving:
    def test_constant_curves_every_ranker_finds_best(self):
        curves = constant_set([0.5, 0.3, 0.9, 0.7, 0.2, 0.8, 0.4, 0.6])
        spec = PerfSpec()
        best_id, best_perf = best_candidate(curves, spec)
        for ranker in ("current", "oracle"):
            config = ShConfig(n_initial=8, n_final=1, ranker=ranker)
            trace = run_halving(curves, config, spec, seed=0)
            assert trace.picked_id == best_id
            assert trace.picked_perf - best_perf == 0.0

    def test_oracle_matches_best_candidate_on_random_sets(self):
        spec = PerfSpec()
        for seed in range(10):
            curves = generate_synthetic(
                SyntheticFamilySpec(family="power_law", noise_std=0.05),
                12, 15, seed=seed,
            )
            config = ShConfig(n_initial=12, n_final=1, ranker="oracle")
            trace = run_halving(curves, config, spec, seed=seed)
            assert trace.picked_id == best_candidate(curves, spec)[0]

    def test_crossing_fixture_current_fails_oracle_succeeds(self):
        # slow starter crosses at 60% of the run, far past every decision
        # point the current ranker survives it to
        n_steps = 20
        t = np.arange(1, n_steps + 1)
        slow = 1.2 - t * (1.2 / 12.0)  # hits 0 at t=12, negative after
        curves = CurveSet(
            curves=(
                curve(1, slow),
                curve(2, [0.50] * n_steps),
                curve(3, [0.55] * n_steps),
                curve(4, [0.60] * n_steps),
            )
        )
        spec = PerfSpec()
        assert best_candidate(curves, spec)[0] == 1
        current = run_halving(
            curves, ShConfig(n_initial=4, n_final=1, ranker="current"), spec, 0
        )
        oracle = run_halving(
            curves, ShConfig(n_initial=4, n_final=1, ranker="oracle"), spec, 0
        )
        assert current.picked_id != 1 and current.picked_perf > best_candidate(curves, spec)[1]
        assert oracle.picked_id == 1

    def test_promotion_sizes_and_final_count(self):
        curves = constant_set(np.linspace(0.1, 1.0, 10).tolist())
        config = ShConfig(n_initial=10, n_final=3, ranker="current")
        trace = run_halving(curves, config, PerfSpec(), 0)
        sizes = [len(r.active_ids) for r in trace.rungs]
        promoted = [len(r.promoted_ids) for r in trace.rungs]
        assert sizes == [10, 5]
        assert promoted == [max(math.ceil(10 / 2), 3), max(math.ceil(10 / 4), 3)]
        assert len(trace.final_ids) == 3

    def test_monotone_reveal_and_exact_cell_count(self):
        curves = constant_set(np.linspace(0.1, 0.8, 8).tolist(), n_steps=100)
        config = ShConfig(n_initial=8, n_final=1, ranker="current", grace_fraction=0.10)
        trace = run_halving(curves, config, PerfSpec(), 0)
        # independent recount from the rung records
        horizons = {cid: trace.grace for cid in range(1, 9)}
        for record in trace.rungs:
            for cid in record.active_ids:
                horizons[cid] = max(horizons[cid], record.budget)
        for cid in trace.final_ids:
            horizons[cid] = 100
        assert sum(horizons.values()) == trace.n_observed
        assert len(trace.observed_cells) == trace.n_observed
        assert compute_units(trace, 8, 100) == (trace.n_observed, trace.n_observed / 800)

    def test_active_sets_nested_and_budgets_grow(self):
        curves = constant_set(np.linspace(0.1, 1.0, 16).tolist())
        trace = run_halving(
            curves, ShConfig(n_initial=16, n_final=1, ranker="current"), PerfSpec(), 0
        )
        for earlier, later in zip(trace.rungs, trace.rungs[1:]):
            assert set(later.active_ids) <= set(earlier.active_ids)
            assert later.budget >= earlier.budget
        assert trace.rungs[-1].budget == curves.n_steps

    def test_dominant_curve_never_discarded_by_current(self):
        rng = np.random.default_rng(17)
        for _ in range(5):
            values = rng.uniform(0.4, 1.0, size=(7, 16))
            dominant = rng.uniform(0.0, 0.3, size=16)
            curves = CurveSet(
                curves=(curve(1, dominant),)
                + tuple(curve(i + 2, values[i]) for i in range(7))
            )
            trace = run_halving(
                curves, ShConfig(n_initial=8, n_final=1, ranker="current"), PerfSpec(), 0
            )
            for record in trace.rungs:
                assert 1 in record.promoted_ids
            assert trace.picked_id == 1

    def test_gp_run_deterministic(self):
        curves = generate_synthetic(
            SyntheticFamilySpec(family="exponential_decay", noise_std=0.02),
            10, 8, seed=2,
        )
        config = ShConfig(
            n_initial=6, n_final=1, ranker="gp", training_ids=(7, 8, 9, 10)
        )
        first = run_halving(curves, config, PerfSpec(), seed=5)
        second = run_halving(curves, config, PerfSpec(), seed=5)
        assert first.to_json_dict() == second.to_json_dict()

    def test_gp_compute_includes_training_curves(self):
        curves = generate_synthetic(
            SyntheticFamilySpec(family="exponential_decay", noise_std=0.02),
            10, 8, seed=3,
        )
        config = ShConfig(
            n_initial=6, n_final=2, ranker="gp", training_ids=(7, 8, 9, 10)
        )
        trace = run_halving(curves, config, PerfSpec(), seed=1)
        assert trace.compute_units == trace.n_observed + 4 * 8
        absolute, relative = compute_units(trace, 6, 8)
        assert absolute == trace.compute_units
        assert relative == absolute / 48

    def test_degenerate_single_rung_keeps_the_best(self):
        # F = N - 1: one rung at full budget discards only the worst-ranked
        rng = np.random.default_rng(23)
        for seed in range(5):
            curves = CurveSet(curves=tuple(
                curve(i + 1, rng.uniform(0.1, 1.0, 10)) for i in range(6)
            ))
            spec = PerfSpec()
            trace = run_halving(
                curves, ShConfig(n_initial=6, n_final=5, ranker="current"), spec, 0
            )
            assert len(trace.rungs) == 1
            assert trace.rungs[0].budget == 10
            best_id, best_perf = best_candidate(curves, spec)
            assert best_id in trace.final_ids
            assert trace.picked_perf - best_perf == 0.0

    def test_config_errors(self):
        curves = constant_set([0.1, 0.2, 0.3, 0.4])
        with pytest.raises(ConfigError):  # pool size mismatch
            run_halving(
                curves, ShConfig(n_initial=5, n_final=1, ranker="current"), PerfSpec(), 0
            )
        with pytest.raises(ConfigError):  # training ids not in the set
            run_halving(
                curves,
                ShConfig(n_initial=3, n_final=1, ranker="gp", training_ids=(9,)),
                PerfSpec(), 0,
            )
        with pytest.raises(ConfigError):  # gp without training curves
            ShConfig(n_initial=4, n_final=1, ranker="gp")
        with pytest.raises(ConfigError):  # training curves on a non-gp ranker
            ShConfig(n_initial=4, n_final=1, ranker="current", training_ids=(1,))
        with pytest.raises(ConfigError):
            ShConfig(n_initial=4, n_final=4, ranker="current")
        with pytest.raises(ConfigError):
            ShConfig(n_initial=4, n_final=1, eta=1)
        with pytest.raises(ConfigError):
            ShConfig(n_initial=4, n_final=1, grace_fraction=1.0)


class TestTraceSerialization:
    def test_json_and_csv_dumps(self, tmp_path):
        curves = constant_set([0.4, 0.2, 0.6, 0.8, 0.1, 0.3])
        trace = run_halving(
            curves, ShConfig(n_initial=6, n_final=2, ranker="current"), PerfSpec(), 0
        )
        json_path = tmp_path / "trace.json"
        trace.save_json(json_path)
        payload = json.loads(json_path.read_text())
        assert payload["picked_id"] == trace.picked_id
        assert payload["compute_units"] == trace.compute_units
        assert len(payload["observed_cells"]) == trace.n_observed

        csv_path = tmp_path / "trace.csv"
        trace.save_csv(csv_path)
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "rung,budget,candidate_id,score,rank,promoted"
        assert len(lines) - 1 == sum(len(r.active_ids) for r in trace.rungs)
