"""Grid-structured covariance operations for partially observed curves.

Observations live on a (candidate x time) grid with the product kernel
K = K_X (x) K_T, of which only a masked subset of cells is observed.  The
restricted matvec is computed as scatter -> two dense grid multiplications
-> gather, costing O(C*T*(C+T)) instead of O(n^2) for n observed cells:

    u = [M (K_X (x) K_T) M^T] v = gather(K_X @ scatter(v) @ K_T)

Cells are ordered row-major (candidate-major, then time), matching the
canonical observation ordering used by the GP module.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .errors import ConfigError, NumericalError


def grid_factors(hp, x_matrix: np.ndarray, t_grid: np.ndarray):
    """(K_X, K_T) dense factors; the shared amplitude lives in K_X."""
    ls = hp.lengthscales
    scaled_x = np.atleast_2d(x_matrix) / ls[:-1]
    sq_x = (
        np.sum(scaled_x**2, axis=1)[:, None]
        + np.sum(scaled_x**2, axis=1)[None, :]
        - 2.0 * scaled_x @ scaled_x.T
    )
    np.maximum(sq_x, 0.0, out=sq_x)
    k_x = hp.amplitude_sq * np.exp(-0.5 * sq_x)
    dt = (np.asarray(t_grid)[:, None] - np.asarray(t_grid)[None, :]) / ls[-1]
    k_t = np.exp(-0.5 * dt**2)
    return k_x, k_t


def masked_grid_matvec(
    hp, x_matrix: np.ndarray, t_grid: np.ndarray, mask: np.ndarray, v: np.ndarray
) -> np.ndarray:
    """Product-kernel matvec restricted to the cells selected by ``mask``.

    ``mask`` is a boolean (n_candidates, n_steps) grid; ``v`` has one entry
    per selected cell in row-major order.
    """
    mask = np.asarray(mask, dtype=bool)
    v = np.asarray(v, dtype=float)
    if mask.shape != (np.atleast_2d(x_matrix).shape[0], np.asarray(t_grid).size):
        raise ConfigError("mask shape must be (n_candidates, n_steps)")
    if v.size != int(mask.sum()):
        raise ConfigError(
            f"vector length {v.size} does not match {int(mask.sum())} selected cells"
        )
    k_x, k_t = grid_factors(hp, x_matrix, t_grid)
    grid = np.zeros(mask.shape)
    grid[mask] = v
    return (k_x @ grid @ k_t)[mask]


def masked_grid_solve(
    hp,
    x_matrix: np.ndarray,
    t_grid: np.ndarray,
    mask: np.ndarray,
    rhs: np.ndarray,
    noise_var: float,
    rtol: float = 1e-8,
    maxiter: int = 1000,
) -> np.ndarray:
    """Solve (K + noise_var I) z = rhs on the observed cells, by CG.

    Accepts a vector or a matrix of right-hand-side columns.  Raises
    NumericalError if the relative residual does not reach ``rtol`` within
    ``maxiter`` iterations.
    """
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    k_x, k_t = grid_factors(hp, x_matrix, t_grid)
    grid = np.zeros(mask.shape)

    def apply(v):
        grid[:] = 0.0
        grid[mask] = v
        return (k_x @ grid @ k_t)[mask] + noise_var * v

    operator = LinearOperator((n, n), matvec=apply, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    columns = rhs.reshape(n, -1)
    out = np.empty_like(columns)
    for j in range(columns.shape[1]):
        solution, info = cg(
            operator, columns[:, j], rtol=rtol, atol=0.0, maxiter=maxiter
        )
        if info != 0:
            raise NumericalError(
                f"conjugate gradients did not converge (info={info})",
                detail={"rtol": rtol, "maxiter": maxiter, "column": j},
            )
        out[:, j] = solution
    return out.reshape(rhs.shape)
