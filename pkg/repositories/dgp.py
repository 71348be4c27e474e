"""
Синтетический генератор данных с гетероскедастичностью и эндогенностью.

z_i ~ N(0, Sigma), Sigma_jk = rho^|j-k|; x_i1 = 0.1 sum_{j=2..p_low} x_ij + 0.5 sum_{j=p_low..q_low} z_ij + nu_i;
x_ij = z_i,j-1; sigma_i = sigma_scale * exp(z_i,q_low); eps_i = sigma_i (nu_i + eta_i); y_i = x_i' beta + eps_i.
"""

import logging
from typing import Iterator

import numpy as np
from scipy.linalg import toeplitz

from engines.moments import Matrix, Observation, Vector
from schemas.estimation import DgpConfig

logger = logging.getLogger(__name__)

CHUNK_SIZE = 10_000


def instrument_covariance(q: int, rho: float) -> Matrix:
    return toeplitz(rho ** np.arange(q))


def _chunks(cfg: DgpConfig, size: int) -> Iterator[tuple[Vector, Matrix, Matrix]]:
    rng = np.random.default_rng(cfg.seed)
    L = np.linalg.cholesky(instrument_covariance(cfg.q, cfg.rho))
    beta = cfg.beta
    remaining = size
    while remaining > 0:
        c = min(CHUNK_SIZE, remaining)
        Z = rng.standard_normal((c, cfg.q)) @ L.T
        nu = rng.standard_normal(c)
        eta = rng.standard_normal(c)

        X = np.empty((c, cfg.p))
        X[:, 1:] = Z[:, : cfg.p - 1]
        X[:, 0] = 0.1 * X[:, 1 : cfg.p_low].sum(axis=1) + 0.5 * Z[:, cfg.p_low - 1 : cfg.q_low].sum(axis=1) + nu

        sigma = cfg.sigma_scale * np.exp(Z[:, cfg.q_low - 1])
        eps = sigma * (nu * float(cfg.endogenous) + eta)
        if cfg.invalid_instrument_shift:
            eps = eps + cfg.invalid_instrument_shift * Z[:, cfg.q - 1]

        yield X @ beta + eps, X, Z
        remaining -= c


def generate(cfg: DgpConfig, size: int | None = None) -> Iterator[Observation]:
    """Потоковая генерация: память не зависит от размера выборки."""
    size = cfg.n if size is None else size
    logger.debug(f"Generating {size} observations: p={cfg.p}, q={cfg.q}, rho={cfg.rho}, seed={cfg.seed}")
    for y, X, Z in _chunks(cfg, size):
        for i in range(len(y)):
            yield Observation(y=y[i], x=X[i], z=Z[i])


def generate_arrays(cfg: DgpConfig, size: int | None = None) -> tuple[Vector, Matrix, Matrix]:
    """Те же данные, что и generate, собранные в массивы (y, X, Z)."""
    size = cfg.n if size is None else size
    parts = list(_chunks(cfg, size))
    y = np.concatenate([part[0] for part in parts])
    X = np.concatenate([part[1] for part in parts])
    Z = np.concatenate([part[2] for part in parts])
    return y, X, Z
