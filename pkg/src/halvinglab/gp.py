"""Product-kernel Gaussian Process over (hyperparameters x time).

The covariance factorizes over the two coordinate groups,

    k((x, t), (x', t')) = amp^2 * exp(-1/2 sum_d ((x_d - x'_d) / l_d)^2)
                                * exp(-1/2 ((t - t') / l_T)^2),

with one squared-exponential length scale per input dimension, one for the
time axis, a shared amplitude, and homoscedastic observation noise.  All
positive quantities are log-parameterized, and hyperparameters are chosen
by maximizing the exact marginal likelihood with Adam.

Inputs are normalized to [0, 1] and targets are standardized (shift by the
mean over the final time step, scale by the standard deviation over all
observed values) before fitting; predictions are reported back on the raw
output scale.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from . import kron
from .curves import CurveSet, PerfSpec
from .errors import ConfigError, NumericalError
from .rng import substream

# Diagonal jitter ladder, in units of amp^2, tried in order when a
# factorization fails.
JITTER_LADDER = (0.0, 1e-8, 1e-6, 1e-4)

VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class GpHyperparams:
    """Log-parameterized kernel hyperparameters.

    ``log_lengthscales`` holds D input-dimension length scales followed by
    the time length scale (D+1 entries in total).
    """

    log_lengthscales: np.ndarray
    log_amplitude: float
    log_noise: float

    def __post_init__(self):
        ls = np.ascontiguousarray(self.log_lengthscales, dtype=float)
        ls.flags.writeable = False
        object.__setattr__(self, "log_lengthscales", ls)
        if not (
            np.all(np.isfinite(ls))
            and math.isfinite(self.log_amplitude)
            and math.isfinite(self.log_noise)
        ):
            raise ConfigError("hyperparameters must be finite")

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.log_lengthscales)

    @property
    def amplitude_sq(self) -> float:
        return math.exp(2.0 * self.log_amplitude)

    @property
    def noise_var(self) -> float:
        return math.exp(2.0 * self.log_noise)

    def as_vector(self) -> np.ndarray:
        """[log lengthscales..., log amplitude, log noise]."""
        return np.concatenate(
            [self.log_lengthscales, [self.log_amplitude, self.log_noise]]
        )

    @classmethod
    def from_vector(cls, theta: np.ndarray) -> "GpHyperparams":
        theta = np.asarray(theta, dtype=float)
        return cls(
            log_lengthscales=theta[:-2],
            log_amplitude=float(theta[-2]),
            log_noise=float(theta[-1]),
        )

    @classmethod
    def initial(cls, input_dim: int) -> "GpHyperparams":
        """Neutral start: unit length scales, unit amplitude, noise std 0.1."""
        return cls(
            log_lengthscales=np.zeros(input_dim + 1),
            log_amplitude=0.0,
            log_noise=math.log(0.1),
        )


@dataclass(frozen=True)
class Standardization:
    """Input normalization bounds and output standardization constants."""

    input_mins: np.ndarray
    input_maxes: np.ndarray
    output_shift: float
    output_scale: float

    def __post_init__(self):
        object.__setattr__(
            self, "input_mins", np.ascontiguousarray(self.input_mins, dtype=float)
        )
        object.__setattr__(
            self, "input_maxes", np.ascontiguousarray(self.input_maxes, dtype=float)
        )
        if self.output_scale <= 0.0:
            raise ConfigError("output_scale must be positive")

    def normalize_inputs(self, x_raw: np.ndarray) -> np.ndarray:
        """Map raw hyperparameters into [0, 1]; degenerate dims go to 0.5."""
        x_raw = np.atleast_2d(np.asarray(x_raw, dtype=float))
        span = self.input_maxes - self.input_mins
        out = np.full_like(x_raw, 0.5)
        live = span > 0.0
        out[:, live] = (x_raw[:, live] - self.input_mins[live]) / span[live]
        return out

    def standardize(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.output_shift) / self.output_scale

    def destandardize_mean(self, mu: float) -> float:
        return self.output_shift + self.output_scale * mu

    def destandardize_var(self, var: float) -> float:
        return self.output_scale**2 * var


def time_grid(n_steps: int) -> np.ndarray:
    """Normalized time coordinates: step 1 maps to 0, step T maps to 1."""
    if n_steps < 2:
        raise ConfigError("need at least two time steps")
    return (np.arange(n_steps, dtype=float)) / (n_steps - 1)


@dataclass(frozen=True)
class ObservationSet:
    """Observed (candidate, time) cells with standardized targets.

    ``candidate_rows`` and ``time_indices`` index into ``x_matrix`` rows and
    ``t_grid`` entries; cells are kept in row-major (candidate, time) order.
    ``candidate_ids`` names the pool candidate behind each x_matrix row.
    """

    candidate_rows: np.ndarray
    time_indices: np.ndarray
    targets: np.ndarray
    x_matrix: np.ndarray
    t_grid: np.ndarray
    candidate_ids: tuple[int, ...]

    def __post_init__(self):
        rows = np.ascontiguousarray(self.candidate_rows, dtype=int)
        times = np.ascontiguousarray(self.time_indices, dtype=int)
        targets = np.ascontiguousarray(self.targets, dtype=float)
        if not (rows.size == times.size == targets.size) or rows.size < 1:
            raise ConfigError("observations must hold n >= 1 aligned cells")
        order = np.lexsort((times, rows))
        rows, times, targets = rows[order], times[order], targets[order]
        cells = rows * (self.t_grid.size + 1) + times
        if np.unique(cells).size != cells.size:
            raise ConfigError("duplicate observation cells")
        x = np.ascontiguousarray(self.x_matrix, dtype=float)
        t = np.ascontiguousarray(self.t_grid, dtype=float)
        if np.min(x) < -1e-12 or np.max(x) > 1 + 1e-12:
            raise ConfigError("x_matrix must be normalized to [0, 1]")
        for name, arr in (("candidate_rows", rows), ("time_indices", times),
                          ("targets", targets), ("x_matrix", x), ("t_grid", t)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "candidate_ids", tuple(self.candidate_ids))
        if len(self.candidate_ids) != x.shape[0]:
            raise ConfigError("candidate_ids must label every x_matrix row")

    @property
    def n_observations(self) -> int:
        return self.targets.size

    @property
    def input_dim(self) -> int:
        return self.x_matrix.shape[1]

    def coordinates(self) -> np.ndarray:
        """(n, D+1) array of normalized coordinates, time last."""
        return np.hstack(
            [
                self.x_matrix[self.candidate_rows],
                self.t_grid[self.time_indices][:, None],
            ]
        )

    def digest(self) -> str:
        hasher = hashlib.sha256()
        for arr in (self.candidate_rows, self.time_indices, self.targets,
                    self.x_matrix, self.t_grid):
            hasher.update(np.ascontiguousarray(arr).tobytes())
        return hasher.hexdigest()

    def mask(self) -> np.ndarray:
        """Boolean (n_candidates, n_steps) grid of observed cells."""
        grid = np.zeros((self.x_matrix.shape[0], self.t_grid.size), dtype=bool)
        grid[self.candidate_rows, self.time_indices] = True
        return grid


def build_observations(
    curve_set: CurveSet, horizons: dict[int, int]
) -> tuple[ObservationSet, Standardization]:
    """Assemble the GP training set from per-candidate observation horizons.

    ``horizons`` maps candidate_id -> number of observed leading steps; only
    listed candidates contribute cells, but every curve in ``curve_set``
    contributes a row to the input matrix (the pool is known up front, so
    normalization bounds cover it entirely).
    """
    n_steps = curve_set.n_steps
    pool = sorted(curve_set.curves, key=lambda c: c.candidate_id)
    ids = tuple(c.candidate_id for c in pool)
    row_of = {cid: row for row, cid in enumerate(ids)}
    x_raw = np.array([c.hyperparams for c in pool])

    rows, times, raw_values = [], [], []
    full_final = []
    for curve in pool:
        horizon = horizons.get(curve.candidate_id, 0)
        if horizon == 0:
            continue
        if not 1 <= horizon <= n_steps:
            raise ConfigError(
                f"candidate {curve.candidate_id}: horizon {horizon} outside 1..{n_steps}"
            )
        rows.extend([row_of[curve.candidate_id]] * horizon)
        times.extend(range(horizon))
        raw_values.extend(curve.values[:horizon])
        if horizon == n_steps:
            full_final.append(curve.values[-1])
    if not raw_values:
        raise ConfigError("no observations: every horizon is zero")

    raw_values = np.array(raw_values)
    shift = float(np.mean(full_final)) if full_final else float(np.mean(raw_values))
    scale = float(np.std(raw_values))
    if scale <= 0.0:
        scale = 1.0  # constant targets: standardize to zeros
    standardization = Standardization(
        input_mins=x_raw.min(axis=0),
        input_maxes=x_raw.max(axis=0),
        output_shift=shift,
        output_scale=scale,
    )
    observations = ObservationSet(
        candidate_rows=np.array(rows),
        time_indices=np.array(times),
        targets=standardization.standardize(raw_values),
        x_matrix=standardization.normalize_inputs(x_raw),
        t_grid=time_grid(n_steps),
        candidate_ids=ids,
    )
    return observations, standardization


# ---------------------------------------------------------------------------
# Kernel evaluation
# ---------------------------------------------------------------------------

def kernel_value(
    hp: GpHyperparams, x_a, t_a: float, x_b, t_b: float
) -> float:
    """Covariance between two (x, t) points in normalized coordinates."""
    ls = hp.lengthscales
    dx = (np.asarray(x_a, dtype=float) - np.asarray(x_b, dtype=float)) / ls[:-1]
    dt = (t_a - t_b) / ls[-1]
    return hp.amplitude_sq * math.exp(-0.5 * (float(np.dot(dx, dx)) + dt * dt))


def kernel_matrix(hp: GpHyperparams, coords_a: np.ndarray, coords_b: np.ndarray) -> np.ndarray:
    """Dense covariance matrix between two (m, D+1) coordinate arrays."""
    ls = hp.lengthscales
    scaled_a = coords_a / ls
    scaled_b = coords_b / ls
    sq = (
        np.sum(scaled_a**2, axis=1)[:, None]
        + np.sum(scaled_b**2, axis=1)[None, :]
        - 2.0 * scaled_a @ scaled_b.T
    )
    np.maximum(sq, 0.0, out=sq)
    return hp.amplitude_sq * np.exp(-0.5 * sq)


def _factor_with_jitter(k_noisy: np.ndarray, amp_sq: float):
    """Cholesky with an escalating diagonal jitter; returns (L, jitter used)."""
    n = k_noisy.shape[0]
    attempted = []
    diag = np.arange(n)
    for jitter in JITTER_LADDER:
        attempted.append(jitter)
        matrix = k_noisy.copy()
        matrix[diag, diag] += jitter * amp_sq
        try:
            factor = sla.cholesky(matrix, lower=True, check_finite=False)
            return factor, jitter
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(
        "covariance factorization failed at every jitter level",
        detail={"jitter_ladder": attempted, "amp_sq": amp_sq},
    )


class _LmlProblem:
    """Marginal-likelihood evaluations on one fixed observation set.

    Per-dimension squared distances and all n x n scratch buffers are
    allocated once, so the Adam loop's ~100 evaluations stay cheap.
    Scratch matrices are Fortran-ordered to let LAPACK factor in place.
    """

    def __init__(self, coords: np.ndarray, y: np.ndarray):
        n, n_ls = coords.shape[0], coords.shape[1]
        diff = coords[:, None, :] - coords[None, :, :]
        self.sqdist_flat = np.ascontiguousarray(
            np.moveaxis(diff**2, 2, 0).reshape(n_ls, n * n)
        )
        self.y = np.ascontiguousarray(y, dtype=float)
        self.n = n
        self.n_ls = n_ls
        self.k_clean = np.empty((n, n))
        self.k_work = np.empty((n, n), order="F")
        self.m = np.empty((n, n))
        self.diag = np.arange(n)
        self.upper = np.triu_indices(n, 1)

    def evaluate(self, theta: np.ndarray, need_gradient: bool):
        """(lml, gradient|None, factor|None, alpha, jitter).

        Gradient identity: d lml / d theta_j
            = 1/2 tr((a a^T - Ky^-1) dKy/dtheta_j),  a = Ky^-1 y,
        chain-ruled through the log parameterization.  The returned factor
        is only materialized when no gradient is requested (the gradient
        path reuses its buffer for the inverse).
        """
        n, n_ls = self.n, self.n_ls
        inv_ls_sq = np.exp(-2.0 * theta[:n_ls])
        amp_sq = math.exp(2.0 * theta[n_ls])
        noise_var = math.exp(2.0 * theta[n_ls + 1])

        k_flat = self.k_clean.reshape(-1)
        np.dot(inv_ls_sq, self.sqdist_flat, out=k_flat)
        k_flat *= -0.5
        np.exp(k_flat, out=k_flat)
        k_flat *= amp_sq

        attempted = []
        info = -1
        for jitter in JITTER_LADDER:
            attempted.append(jitter)
            np.copyto(self.k_work, self.k_clean)
            self.k_work[self.diag, self.diag] += noise_var + jitter * amp_sq
            factor, info = sla.lapack.dpotrf(
                self.k_work, lower=1, clean=0, overwrite_a=1
            )
            if info == 0:
                break
        if info != 0:
            raise NumericalError(
                "covariance factorization failed at every jitter level",
                detail={"jitter_ladder": attempted, "amp_sq": amp_sq},
            )
        alpha, info = sla.lapack.dpotrs(factor, self.y, lower=1)
        if info != 0:
            raise NumericalError(f"triangular solve failed (info={info})")
        log_det = 2.0 * float(np.sum(np.log(factor[self.diag, self.diag])))
        fit_term = float(self.y @ alpha)
        lml = -0.5 * fit_term - 0.5 * log_det - 0.5 * n * math.log(2.0 * math.pi)
        if not need_gradient:
            clean_factor = np.tril(np.ascontiguousarray(factor))
            return lml, None, clean_factor, alpha, jitter

        inv_k, info = sla.lapack.dpotri(factor, lower=1, overwrite_c=1)
        if info != 0:
            raise NumericalError(f"dpotri failed with info={info}")
        inv_k[self.upper] = 0.0
        np.add(inv_k, inv_k.T, out=self.m)
        self.m[self.diag, self.diag] -= inv_k[self.diag, self.diag]
        trace_m = float(alpha @ alpha) - float(np.trace(self.m))

        w = self.m  # reused in place: W = (alpha alpha^T - Ky^-1) o K
        np.subtract(
            np.multiply(alpha[:, None], alpha[None, :], out=self.k_work), w, out=w
        )
        w *= self.k_clean
        gradient = np.empty(n_ls + 2)
        gradient[:n_ls] = 0.5 * inv_ls_sq * (self.sqdist_flat @ w.reshape(-1))
        gradient[n_ls] = float(np.sum(w))
        gradient[n_ls + 1] = noise_var * trace_m
        return lml, gradient, None, alpha, jitter


def evaluate_lml(
    observations: ObservationSet,
    hyperparams: GpHyperparams,
    need_gradient: bool = False,
):
    """(lml, gradient-or-None) for arbitrary hyperparameters."""
    problem = _LmlProblem(observations.coordinates(), observations.targets)
    lml, gradient, _, _, _ = problem.evaluate(hyperparams.as_vector(), need_gradient)
    return lml, gradient


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitConfig:
    """Adam settings for marginal-likelihood maximization."""

    learning_rate: float = 0.1
    iterations: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass(frozen=True)
class GpModel:
    """A fitted GP: hyperparameters plus cached solve state for prediction."""

    hyperparams: GpHyperparams
    observations: ObservationSet
    standardization: Standardization
    factor: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    jitter: float
    fit_info: dict

    def row_of(self, candidate_id: int) -> int:
        try:
            return self.observations.candidate_ids.index(candidate_id)
        except ValueError:
            raise ConfigError(f"candidate {candidate_id} is not in the model pool")

    def to_json_dict(self) -> dict:
        """Reproducibility audit record (schema documented in the README)."""
        return {
            "log_lengthscales": self.hyperparams.log_lengthscales.tolist(),
            "log_amplitude": self.hyperparams.log_amplitude,
            "log_noise": self.hyperparams.log_noise,
            "standardization": {
                "input_mins": self.standardization.input_mins.tolist(),
                "input_maxes": self.standardization.input_maxes.tolist(),
                "output_shift": self.standardization.output_shift,
                "output_scale": self.standardization.output_scale,
            },
            "observation_digest": self.observations.digest(),
            "n_observations": int(self.observations.n_observations),
            "jitter": self.jitter,
            "fit_info": self.fit_info,
        }

    def save_json(self, path) -> None:
        with open(path, "w") as handle:
            json.dump(self.to_json_dict(), handle, indent=2)


def log_marginal_likelihood(model: GpModel) -> float:
    lml, _ = evaluate_lml(model.observations, model.hyperparams)
    return lml


def marginal_likelihood_gradient(model: GpModel) -> np.ndarray:
    """Gradient over [log lengthscales..., log amplitude, log noise]."""
    _, gradient = evaluate_lml(model.observations, model.hyperparams, True)
    return gradient


def fit_gp(
    observations: ObservationSet,
    standardization: Standardization,
    config: FitConfig = FitConfig(),
) -> GpModel:
    """Maximize the marginal likelihood with Adam from the neutral start.

    Returns the iterate with the highest marginal likelihood seen anywhere
    along the trajectory (initialization included), which in particular
    guarantees the fitted value never falls below the initial one.
    """
    if observations.n_observations < 2:
        raise ConfigError("fitting requires at least two observations")
    problem = _LmlProblem(observations.coordinates(), observations.targets)
    theta = GpHyperparams.initial(observations.input_dim).as_vector()

    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    best_theta, best_lml, best_iteration = theta.copy(), -math.inf, 0
    for iteration in range(config.iterations):
        lml, gradient, _, _, _ = problem.evaluate(theta, True)
        if not (math.isfinite(lml) and np.all(np.isfinite(gradient))):
            raise NumericalError(
                "non-finite marginal likelihood during optimization",
                detail={"iteration": iteration, "theta": theta.tolist(), "lml": lml},
            )
        if lml > best_lml:
            best_theta, best_lml, best_iteration = theta.copy(), lml, iteration
        m = config.beta1 * m + (1.0 - config.beta1) * gradient
        v = config.beta2 * v + (1.0 - config.beta2) * gradient**2
        m_hat = m / (1.0 - config.beta1 ** (iteration + 1))
        v_hat = v / (1.0 - config.beta2 ** (iteration + 1))
        # ascent: the objective is maximized
        theta = theta + config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)

    final_lml, _, _, _, _ = problem.evaluate(theta, False)
    if math.isfinite(final_lml) and final_lml > best_lml:
        best_theta, best_lml, best_iteration = theta.copy(), final_lml, config.iterations

    lml, _, factor, alpha, jitter = problem.evaluate(best_theta, False)
    return GpModel(
        hyperparams=GpHyperparams.from_vector(best_theta),
        observations=observations,
        standardization=standardization,
        factor=factor,
        alpha=alpha,
        jitter=jitter,
        fit_info={
            "lml": lml,
            "best_iteration": best_iteration,
            "iterations": config.iterations,
            "learning_rate": config.learning_rate,
        },
    )


# ---------------------------------------------------------------------------
# Posterior prediction of the final-window performance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CandidateSummary:
    """Predictive mean and variance of a candidate's final-window perf."""

    candidate_id: int
    mu: float
    sigma2: float


def _window_posterior(model: GpModel, candidate_id: int, window: int, solver: str):
    """Standardized posterior (mean, covariance) over the final window cells."""
    obs = model.observations
    n_steps = obs.t_grid.size
    row = model.row_of(candidate_id)
    x = obs.x_matrix[row]
    window_times = np.arange(n_steps - window, n_steps)
    window_coords = np.hstack(
        [np.tile(x, (window, 1)), obs.t_grid[window_times][:, None]]
    )
    cross = kernel_matrix(model.hyperparams, obs.coordinates(), window_coords)
    prior = kernel_matrix(model.hyperparams, window_coords, window_coords)
    if solver == "dense":
        mean = cross.T @ model.alpha
        solved = sla.cho_solve((model.factor, True), cross, check_finite=False)
    elif solver == "cg":
        noise = model.hyperparams.noise_var + model.jitter * model.hyperparams.amplitude_sq
        alpha = kron.masked_grid_solve(
            model.hyperparams, obs.x_matrix, obs.t_grid, obs.mask(), obs.targets, noise
        )
        mean = cross.T @ alpha
        solved = kron.masked_grid_solve(
            model.hyperparams, obs.x_matrix, obs.t_grid, obs.mask(), cross, noise
        )
    else:
        raise ConfigError(f"solver must be 'dense' or 'cg', got {solver!r}")
    cov = prior - cross.T @ solved
    cov = 0.5 * (cov + cov.T)
    return mean, cov


def predict_final_window(
    model: GpModel,
    candidate_ids: Sequence[int],
    perf_spec: PerfSpec,
    n_samples: int = 64,
    seed: int = 0,
    solver: str = "dense",
) -> list[CandidateSummary]:
    """Sample-based predictive (mu, sigma^2) of each candidate's final perf.

    For every candidate, ``n_samples`` joint posterior draws are taken over
    its final-window cells (conditioned on all observations including its own
    partial curve); each draw is averaged over the window, and the sample
    mean and unbiased sample variance are de-standardized back to the raw
    output scale.  Sampling streams are keyed per candidate id, so results
    do not depend on the order candidates are listed in.
    """
    if n_samples < 2:
        raise ConfigError("need n_samples >= 2 for a sample variance")
    window = perf_spec.window(model.observations.t_grid.size)
    summaries = []
    for candidate_id in candidate_ids:
        mean, cov = _window_posterior(model, candidate_id, window, solver)
        scale = max(float(np.max(np.diag(cov))), VARIANCE_FLOOR)
        factor, _ = _factor_with_jitter(cov, scale)
        rng = substream(seed, "posterior", int(candidate_id))
        draws = mean + rng.standard_normal((n_samples, window)) @ factor.T
        perf_draws = draws.mean(axis=1)
        mu = model.standardization.destandardize_mean(float(np.mean(perf_draws)))
        sigma2 = model.standardization.destandardize_var(
            float(np.var(perf_draws, ddof=1))
        )
        summaries.append(
            CandidateSummary(int(candidate_id), mu, max(sigma2, VARIANCE_FLOOR))
        )
    return summaries
