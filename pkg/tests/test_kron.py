import numpy as np
import pytest

from halvinglab import gp
from halvinglab.errors import ConfigError, NumericalError
from halvinglab.kron import grid_factors, masked_grid_matvec, masked_grid_solve
from halvinglab.curves import PerfSpec

from helpers import make_observation_set


def random_problem(rng, n_x, n_t, dim=2, density=0.6):
    hp = gp.GpHyperparams.from_vector(rng.uniform(-0.6, 0.6, dim + 3))
    x = rng.uniform(size=(n_x, dim))
    t = np.linspace(0.0, 1.0, n_t)
    mask = rng.uniform(size=(n_x, n_t)) < density
    if not mask.any():
        mask[0, 0] = True
    return hp, x, t, mask


def dense_kernel(hp, x, t, mask):
    cells = np.argwhere(mask)
    coords = np.hstack([x[cells[:, 0]], t[cells[:, 1]][:, None]])
    return gp.kernel_matrix(hp, coords, coords)


class TestMaskedMatvec:
    def test_full_grid_unit_vector_gives_kron_column(self):
        rng = np.random.default_rng(0)
        hp, x, t, _ = random_problem(rng, 4, 5)
        mask = np.ones((4, 5), dtype=bool)
        k_x, k_t = grid_factors(hp, x, t)
        full = np.kron(k_x, k_t)
        for j in (0, 7, 19):
            unit = np.zeros(20)
            unit[j] = 1.0
            out = masked_grid_matvec(hp, x, t, mask, unit)
            assert np.allclose(out, full[:, j], rtol=1e-12, atol=0)

    def test_matches_dense_oracle_on_random_masks(self):
        rng = np.random.default_rng(1)
        for trial in range(20):
            hp, x, t, mask = random_problem(
                rng, int(rng.integers(2, 10)), int(rng.integers(2, 12))
            )
            n = int(mask.sum())
            v = rng.standard_normal(n)
            dense = dense_kernel(hp, x, t, mask) @ v
            fast = masked_grid_matvec(hp, x, t, mask, v)
            denom = max(float(np.max(np.abs(dense))), 1e-300)
            assert float(np.max(np.abs(dense - fast))) / denom < 1e-10

    def test_single_cell(self):
        rng = np.random.default_rng(2)
        hp, x, t, _ = random_problem(rng, 3, 4)
        mask = np.zeros((3, 4), dtype=bool)
        mask[1, 2] = True
        out = masked_grid_matvec(hp, x, t, mask, np.array([2.0]))
        expected = gp.kernel_value(hp, x[1], t[2], x[1], t[2]) * 2.0
        assert out[0] == pytest.approx(expected, rel=1e-12)

    def test_dimension_mismatch_errors(self):
        rng = np.random.default_rng(3)
        hp, x, t, mask = random_problem(rng, 3, 4)
        with pytest.raises(ConfigError):
            masked_grid_matvec(hp, x, t, mask, np.zeros(int(mask.sum()) + 1))
        with pytest.raises(ConfigError):
            masked_grid_matvec(hp, x, t, mask[:2], np.zeros(int(mask[:2].sum())))


class TestMaskedSolve:
    def test_matches_dense_solve(self):
        rng = np.random.default_rng(4)
        hp, x, t, mask = random_problem(rng, 5, 7)
        n = int(mask.sum())
        rhs = rng.standard_normal(n)
        noise = 0.09
        dense = np.linalg.solve(dense_kernel(hp, x, t, mask) + noise * np.eye(n), rhs)
        fast = masked_grid_solve(hp, x, t, mask, rhs, noise)
        assert np.max(np.abs(dense - fast)) / np.max(np.abs(dense)) < 1e-6

    def test_matrix_rhs(self):
        rng = np.random.default_rng(5)
        hp, x, t, mask = random_problem(rng, 4, 5)
        n = int(mask.sum())
        rhs = rng.standard_normal((n, 3))
        noise = 0.2
        dense = np.linalg.solve(dense_kernel(hp, x, t, mask) + noise * np.eye(n), rhs)
        fast = masked_grid_solve(hp, x, t, mask, rhs, noise)
        assert np.allclose(dense, fast, rtol=1e-6, atol=1e-9)

    def test_non_convergence_raises(self):
        rng = np.random.default_rng(6)
        hp, x, t, mask = random_problem(rng, 6, 8)
        rhs = rng.standard_normal(int(mask.sum()))
        with pytest.raises(NumericalError):
            masked_grid_solve(hp, x, t, mask, rhs, 1e-9, maxiter=1)


class TestPredictionSolverEquivalence:
    def test_dense_and_cg_paths_agree(self):
        rng = np.random.default_rng(7)
        obs = make_observation_set(
            rng, n_candidates=5, n_steps=6, dim=2,
            horizons={0: 6, 1: 6, 2: 3, 3: 2, 4: 6},
        )
        std = gp.Standardization(np.zeros(2), np.ones(2), 0.1, 1.5)
        model = gp.fit_gp(obs, std)
        spec = PerfSpec(0.34)
        dense = gp.predict_final_window(model, [2, 3], spec, 64, seed=1)
        cg = gp.predict_final_window(model, [2, 3], spec, 64, seed=1, solver="cg")
        for a, b in zip(dense, cg):
            assert a.mu == pytest.approx(b.mu, abs=1e-8)
            assert a.sigma2 == pytest.approx(b.sigma2, rel=1e-6, abs=1e-10)
        with pytest.raises(ConfigError):
            gp.predict_final_window(model, [2], spec, 64, seed=1, solver="qr")
