"""Shared test utilities: fixture builders and independent oracles.

Oracles here deliberately avoid the code paths they check: the marginal
likelihood oracle goes through an explicit determinant, posterior oracles
through full dense linear algebra, and rankings through brute-force loops.
"""

import math
from pathlib import Path

import numpy as np

from halvinglab import gp

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


def make_observation_set(rng, n_candidates=6, n_steps=8, dim=2, horizons=None):
    """Random observation set on a (n_candidates x n_steps) grid."""
    if horizons is None:
        horizons = {c: n_steps for c in range(n_candidates)}
    rows, times = [], []
    for cand, horizon in sorted(horizons.items()):
        rows.extend([cand] * horizon)
        times.extend(range(horizon))
    targets = rng.standard_normal(len(rows))
    return gp.ObservationSet(
        candidate_rows=np.array(rows),
        time_indices=np.array(times),
        targets=targets,
        x_matrix=rng.uniform(size=(n_candidates, dim)),
        t_grid=np.linspace(0.0, 1.0, n_steps),
        candidate_ids=tuple(range(1, n_candidates + 1)),
    )


def dense_lml_oracle(observations, hyperparams):
    """Gaussian log-density via explicit determinant (no Cholesky)."""
    coords = observations.coordinates()
    y = observations.targets
    n = y.size
    cov = gp.kernel_matrix(hyperparams, coords, coords)
    cov = cov + hyperparams.noise_var * np.eye(n)
    sign, log_det = np.linalg.slogdet(cov)
    assert sign > 0
    return (
        -0.5 * float(y @ np.linalg.solve(cov, y))
        - 0.5 * log_det
        - 0.5 * n * math.log(2.0 * math.pi)
    )


def fd_gradient(observations, hyperparams, step=1e-5):
    """Central finite differences of the marginal likelihood."""
    theta = hyperparams.as_vector()
    out = np.zeros_like(theta)
    for j in range(theta.size):
        plus, minus = theta.copy(), theta.copy()
        plus[j] += step
        minus[j] -= step
        lml_plus, _ = gp.evaluate_lml(
            observations, gp.GpHyperparams.from_vector(plus)
        )
        lml_minus, _ = gp.evaluate_lml(
            observations, gp.GpHyperparams.from_vector(minus)
        )
        out[j] = (lml_plus - lml_minus) / (2.0 * step)
    return out


def window_posterior_oracle(model, candidate_id, window):
    """Closed-form posterior of the window-mean functional, raw scale.

    Fully dense: builds the joint covariance over (observations + window
    cells) and conditions with numpy.linalg.inv, independent of the model's
    cached factorization and of the sampling path.
    """
    obs = model.observations
    hp = model.hyperparams
    n_steps = obs.t_grid.size
    row = model.row_of(candidate_id)
    coords_obs = obs.coordinates()
    coords_win = np.hstack(
        [
            np.tile(obs.x_matrix[row], (window, 1)),
            obs.t_grid[np.arange(n_steps - window, n_steps)][:, None],
        ]
    )
    k_oo = gp.kernel_matrix(hp, coords_obs, coords_obs)
    k_oo = k_oo + (hp.noise_var + model.jitter * hp.amplitude_sq) * np.eye(
        obs.n_observations
    )
    k_ow = gp.kernel_matrix(hp, coords_obs, coords_win)
    k_ww = gp.kernel_matrix(hp, coords_win, coords_win)
    inv = np.linalg.inv(k_oo)
    mean = k_ow.T @ inv @ obs.targets
    cov = k_ww - k_ow.T @ inv @ k_ow
    weights = np.full(window, 1.0 / window)
    mu = model.standardization.destandardize_mean(float(weights @ mean))
    var = model.standardization.destandardize_var(float(weights @ cov @ weights))
    return mu, var


def brute_force_expected_wins(summaries):
    """Pairwise double loop with the stdlib normal CDF."""
    from statistics import NormalDist

    cdf = NormalDist().cdf
    n = len(summaries)
    out = []
    for i in range(n):
        total = 0.0
        for j in range(n):
            if i == j:
                continue
            z = (summaries[i].mu - summaries[j].mu) / math.sqrt(
                summaries[i].sigma2 + summaries[j].sigma2
            )
            total += cdf(z)
        out.append(total / (n - 1))
    return np.array(out)
