"""
Офлайн-оценки 2SLS и двухшаговый эффективный GMM: эталоны для онлайн-алгоритмов.
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from engines.errors import SingularDesign
from engines.linalg import is_well_conditioned, symmetrize
from engines.moments import Matrix, Record, Vector, stack_observations

logger = logging.getLogger(__name__)

LARGE_SAMPLE_WARNING = 10**7


@dataclass(frozen=True, eq=False)
class OfflineFit:
    beta: Vector
    avar: Matrix
    n: int

    @property
    def standard_errors(self) -> Vector:
        return np.sqrt(np.diag(self.avar) / self.n)

    def interval(self, index: int, level: float = 0.95) -> tuple[float, float]:
        crit = float(stats.norm.ppf(0.5 + level / 2))
        half = crit * self.standard_errors[index]
        return float(self.beta[index] - half), float(self.beta[index] + half)


def _moments(y: Vector, X: Matrix, Z: Matrix) -> tuple[Matrix, Matrix, Vector]:
    n = len(y)
    return Z.T @ Z / n, Z.T @ X / n, Z.T @ y / n


def _robust_omega(Z: Matrix, residuals: Vector) -> Matrix:
    return symmetrize((Z * (residuals**2)[:, None]).T @ Z / len(residuals))


def _solve_weighted(Qzx: Matrix, Qzy: Vector, W: Matrix) -> tuple[Matrix, Vector]:
    A = symmetrize(Qzx.T @ W @ Qzx)
    if not is_well_conditioned(A):
        raise SingularDesign("Матрица G'WG вырождена: инструменты не идентифицируют параметры")
    return A, np.linalg.solve(A, Qzx.T @ W @ Qzy)


def fit_2sls(y: Vector, X: Matrix, Z: Matrix) -> OfflineFit:
    if len(y) >= LARGE_SAMPLE_WARNING:
        logger.warning(f"Offline 2SLS on n={len(y)} observations: memory use grows with n")
    Qzz, Qzx, Qzy = _moments(y, X, Z)
    if not is_well_conditioned(Qzz):
        raise SingularDesign("Матрица Грама инструментов Z'Z вырождена")
    W = np.linalg.inv(Qzz)
    A, beta = _solve_weighted(Qzx, Qzy, W)
    omega = _robust_omega(Z, y - X @ beta)
    bread = np.linalg.inv(A)
    meat = Qzx.T @ W @ omega @ W @ Qzx
    return OfflineFit(beta=beta, avar=symmetrize(bread @ meat @ bread), n=len(y))


def fit_gmm_two_step(y: Vector, X: Matrix, Z: Matrix) -> OfflineFit:
    first = fit_2sls(y, X, Z)
    _, Qzx, Qzy = _moments(y, X, Z)
    omega = _robust_omega(Z, y - X @ first.beta)
    if not is_well_conditioned(omega):
        raise SingularDesign("Оценка дисперсии моментов Omega вырождена")
    A, beta = _solve_weighted(Qzx, Qzy, np.linalg.inv(omega))
    return OfflineFit(beta=beta, avar=symmetrize(np.linalg.inv(A)), n=len(y))


def offline_2sls(data: Sequence[Record]) -> OfflineFit:
    return fit_2sls(*stack_observations(data))


def offline_gmm_two_step(data: Sequence[Record]) -> OfflineFit:
    return fit_gmm_two_step(*stack_observations(data))
