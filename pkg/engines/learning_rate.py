import logging
from typing import Sequence

import numpy as np

from engines.errors import DegenerateInitialization
from engines.linalg import direct_inner_inverse
from engines.moments import Record, to_moment_data
from engines.s2sls import LearningRateSchedule, initial_moments

logger = logging.getLogger(__name__)

DEFAULT_EXPONENT = 0.501
DEFAULT_ALPHA = 0.5


def schedule(gamma0: float, a: float = DEFAULT_EXPONENT) -> LearningRateSchedule:
    return LearningRateSchedule(gamma0=gamma0, a=a)


def rule_of_thumb_gamma0(init_sample: Sequence[Record], alpha: float = DEFAULT_ALPHA, eta0: float = 0.0) -> float:
    """
    gamma0 = 1 / Psi_0(alpha), где Psi_0(alpha) - эмпирический (1 - alpha)-квантиль
    спектральных норм d_beta^{-1} (Phi_0' W_0 Phi_0)^{-1} Phi_0' W_0 G_0i по инициализационной выборке.
    """
    Phi0, W0 = initial_moments(init_sample, eta0)
    inner_inv = direct_inner_inverse(Phi0, W0)
    if inner_inv is None:
        raise DegenerateInitialization("Phi_0' W_0 Phi_0 вырождена: выбрать gamma0 невозможно")
    d_beta = Phi0.shape[1]
    A = inner_inv @ Phi0.T @ W0
    products = np.stack([A @ to_moment_data(record).G for record in init_sample])
    norms = np.linalg.norm(products, ord=2, axis=(1, 2)) / d_beta
    psi = float(np.quantile(norms, 1.0 - alpha, method="higher"))
    if not psi > 0.0:
        raise DegenerateInitialization("Все нормы равны нулю: Psi_0(alpha) = 0")
    gamma0 = 1.0 / psi
    logger.info(f"Rule-of-thumb gamma0={gamma0:.6g} (alpha={alpha}, n0={len(norms)})")
    return gamma0
