"""
Обновления обратных матриц по формуле Шермана-Моррисона-Вудбери и обобщённая обратная.
"""

import logging
from typing import NamedTuple

import numpy as np

from engines.errors import NumericalBreakdown
from engines.moments import Matrix, Vector

logger = logging.getLogger(__name__)

PINV_RELATIVE_TOLERANCE = 1e-10
MAX_CORE_CONDITION = 1e12
SMW_ERROR_BUDGET = 1e-9
MACHINE_EPS = float(np.finfo(np.float64).eps)


def symmetrize(A: Matrix) -> Matrix:
    return 0.5 * (A + A.T)


def sym_pinv(A: Matrix, rel_tol: float = PINV_RELATIVE_TOLERANCE) -> Matrix:
    """Обобщённая обратная симметричной матрицы: обращаются собственные значения выше rel_tol * lambda_max."""
    eigvals, eigvecs = np.linalg.eigh(symmetrize(A))
    lam_max = eigvals.max(initial=0.0)
    if lam_max <= 0.0:
        return np.zeros_like(A)
    keep = eigvals > rel_tol * lam_max
    inv_vals = np.zeros_like(eigvals)
    inv_vals[keep] = 1.0 / eigvals[keep]
    return (eigvecs * inv_vals) @ eigvecs.T


def is_well_conditioned(A: Matrix, limit: float = MAX_CORE_CONDITION) -> bool:
    if not np.isfinite(A).all():
        return False
    cond = np.linalg.cond(A)
    return bool(np.isfinite(cond) and cond < limit)


def smw_weight_update(W: Matrix, v: Vector, k: int) -> tuple[float, Matrix]:
    """
    W' = ((k+1)/k) W (I - m^{-1} v v' W), m = k + v'Wv.
    W' - обратная к (k W^{-1} + v v') / (k + 1).
    """
    if k < 1:
        raise NumericalBreakdown(f"Некорректный счётчик k={k} для обновления весов")
    Wv = W @ v
    m = float(k + v @ Wv)
    if not np.isfinite(m) or m <= 0.0:
        raise NumericalBreakdown(f"m = {m} <= 0: матрица весов перестала быть положительно определённой")
    W_next = ((k + 1) / k) * (W - np.outer(Wv, Wv) / m)
    return m, symmetrize(W_next)


def smw_weight_block_update(W: Matrix, V: Matrix, k: int) -> Matrix:
    """Вариант ранга r: обратная к (k W^{-1} + V V') / (k + 1)."""
    if V.shape[1] == 1:
        return smw_weight_update(W, V[:, 0], k)[1]
    WV = W @ V
    core = k * np.eye(V.shape[1]) + V.T @ WV
    if not is_well_conditioned(core):
        raise NumericalBreakdown("Вырожденное ядро блочного обновления весов")
    W_next = ((k + 1) / k) * (W - WV @ np.linalg.solve(core, WV.T))
    return symmetrize(W_next)


class InnerUpdate(NamedTuple):
    """
    Новый кэш (Phi' W Phi)^{-1} и накопленная относительная обратная ошибка SMW-обновлений.
    Обратная ошибка шага затухает как k/(k+1): старые вклады усредняются.
    """

    inverse: Matrix
    drift: float

    def forward_error(self) -> float:
        eigvals = np.linalg.eigvalsh(self.inverse)
        if not np.isfinite(eigvals).all() or eigvals[0] <= 0.0:
            return float("inf")
        return float(eigvals[-1] / eigvals[0]) * self.drift

    def is_accurate(self, budget: float | None = None) -> bool:
        return self.forward_error() <= (SMW_ERROR_BUDGET if budget is None else budget)


def _woodbury_downdate(cache: Matrix, U: Matrix, D: Matrix, k: int, drift: float, width: int) -> InnerUpdate | None:
    core = D + U.T @ cache @ U
    if not np.isfinite(core).all():
        return None
    core_condition = float(np.linalg.cond(core))
    if not np.isfinite(core_condition) or core_condition >= MAX_CORE_CONDITION:
        return None
    CU = cache @ U
    downdated = cache - CU @ np.linalg.solve(core, CU.T)
    cancellation = max(1.0, float(np.linalg.norm(cache) / np.linalg.norm(downdated)))
    step_error = MACHINE_EPS * width * core_condition * cancellation
    return InnerUpdate(symmetrize(((k + 1) / k) * downdated), drift * k / (k + 1) + step_error)


def smw_inner_inverse_update_2sls(
    cache: Matrix, Phi: Matrix, W: Matrix, x: Vector, z: Vector, m: float, k: int, drift: float = 0.0
) -> InnerUpdate | None:
    """
    (Phi_i' W_i Phi_i)^{-1} из кэша шага i-1 через ядро 2x2.
    None, если ядро плохо обусловлено: вызывающий пересчитывает напрямую.
    """
    b = Phi.T @ (W @ z)
    U = np.column_stack([x - b, x])
    D = np.diag([-m, float(k)])
    return _woodbury_downdate(cache, U, D, k, drift, sum(Phi.shape))


def smw_inner_inverse_update_eff(
    cache: Matrix,
    Phi: Matrix,
    W: Matrix,
    x: Vector,
    z: Vector,
    g_anchor: Vector,
    m: float,
    k: int,
    drift: float = 0.0,
) -> InnerUpdate | None:
    """То же для эффективной фазы: ядро 3x3 (1x1, если z = 0)."""
    Wz = W @ z
    Wg = W @ g_anchor
    c = float(z @ Wz)
    s = float(z @ Wg)
    e = Phi.T @ Wg
    third = e + (s / k) * x
    width = sum(Phi.shape)
    if c <= np.finfo(np.float64).tiny:
        return _woodbury_downdate(cache, third[:, None], np.array([[-m]]), k, drift, width)
    b = Phi.T @ Wz
    U = np.column_stack([b, b + (c / k) * x, third])
    D = np.diag([-c, c, -m])
    return _woodbury_downdate(cache, U, D, k, drift, width)


def direct_inner_inverse(Phi: Matrix, W: Matrix) -> Matrix | None:
    A = symmetrize(Phi.T @ W @ Phi)
    if not is_well_conditioned(A):
        return None
    return symmetrize(np.linalg.inv(A))
