"""
Стохастический 2SLS: рекурсия для (beta_i, Phi_i, W_i) с усреднением Поляка-Рупперта.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from engines import baselines
from engines.errors import (
    ConfigError,
    DivergenceDetected,
    EstimationError,
    InvalidInputError,
    InvalidPhase,
    SingularInitialization,
)
from engines.linalg import (
    InnerUpdate,
    direct_inner_inverse,
    smw_inner_inverse_update_2sls,
    smw_inner_inverse_update_eff,
    smw_weight_block_update,
    smw_weight_update,
    sym_pinv,
    symmetrize,
)
from engines.moments import Matrix, MomentData, Record, Vector, flatten

if TYPE_CHECKING:
    from engines.inference import LrvAccumulator

logger = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e8
GRAM_EIGEN_TOLERANCE = 1e-12


def smw_weight_update_2sls(W: Matrix, z: Vector, k: int) -> tuple[float, Matrix]:
    return smw_weight_update(W, z, k)


@dataclass(frozen=True)
class LearningRateSchedule:
    gamma0: float
    a: float = 0.501

    def __post_init__(self) -> None:
        if not self.gamma0 > 0:
            raise ConfigError(f"gamma0 должен быть положительным, получено {self.gamma0}")
        if not 0.5 < self.a < 1.0:
            raise ConfigError(f"Показатель a должен лежать в (1/2, 1), получено {self.a}")

    def gamma(self, i: int) -> float:
        return self.gamma0 * i ** (-self.a)


class Phase(str, Enum):
    WARMUP = "warmup"
    EFFICIENT = "efficient"


class Beta0Method(str, Enum):
    OFFLINE_2SLS = "2sls"
    ZERO = "zero"
    GIVEN = "given"


@dataclass(frozen=True, eq=False)
class OnlineState:
    i: int
    n0: int
    beta: Vector
    beta_bar: Vector
    Phi: Matrix
    W: Matrix
    inner_inv: Matrix | None
    phase: Phase
    schedule: LearningRateSchedule
    anchor_beta: Vector | None = None
    fallback_count: int = 0
    resync_count: int = 0
    smw_drift: float = 0.0

    @property
    def d_beta(self) -> int:
        return int(self.beta.size)

    @property
    def d_g(self) -> int:
        return int(self.W.shape[0])

    def scaling_matrix(self) -> Matrix:
        """(Phi' W Phi)^dagger: из кэша, если он есть, иначе через собственное разложение."""
        if self.inner_inv is not None:
            return self.inner_inv
        return sym_pinv(self.Phi.T @ self.W @ self.Phi)


def initial_moments(init_sample: Sequence[Record], eta0: float) -> tuple[Matrix, Matrix]:
    """Phi_0 = среднее z x', W_0 = (среднее z z' + eta0 I)^{-1}."""
    observations = flatten(init_sample)
    if not observations:
        raise InvalidInputError("Пустая инициализационная выборка")
    if eta0 < 0:
        raise ConfigError(f"eta0 должен быть неотрицательным, получено {eta0}")
    Z = np.stack([obs.z for obs in observations])
    X = np.stack([obs.x for obs in observations])
    n0, d_g = Z.shape
    Phi0 = Z.T @ X / n0
    gram = symmetrize(Z.T @ Z / n0) + eta0 * np.eye(d_g)
    eigvals = np.linalg.eigvalsh(gram)
    if eigvals[0] <= GRAM_EIGEN_TOLERANCE * max(1.0, eigvals[-1]):
        reason = f"n0={n0} < d_g={d_g}" if n0 < d_g else "матрица Грама инструментов вырождена"
        raise SingularInitialization(f"Невозможно построить W_0: {reason}; задайте eta0 > 0", float(eigvals[0]))
    return Phi0, symmetrize(np.linalg.inv(gram))


def init_state(
    init_sample: Sequence[Record],
    eta0: float,
    schedule: LearningRateSchedule,
    beta0_method: Beta0Method = Beta0Method.OFFLINE_2SLS,
    beta0: Vector | None = None,
) -> OnlineState:
    Phi0, W0 = initial_moments(init_sample, eta0)
    d_beta = Phi0.shape[1]
    if beta0_method is Beta0Method.OFFLINE_2SLS:
        start = baselines.offline_2sls(init_sample).beta
    elif beta0_method is Beta0Method.ZERO:
        start = np.zeros(d_beta)
    else:
        if beta0 is None:
            raise ConfigError("Для beta0_method=given нужно передать beta0")
        start = np.asarray(beta0, dtype=np.float64).reshape(-1)
        if start.size != d_beta:
            raise ConfigError(f"beta0 имеет длину {start.size}, ожидалось {d_beta}")
    state = OnlineState(
        i=0,
        n0=len(flatten(init_sample)),
        beta=start.copy(),
        beta_bar=start.copy(),
        Phi=Phi0,
        W=W0,
        inner_inv=direct_inner_inverse(Phi0, W0),
        phase=Phase.WARMUP,
        schedule=schedule,
    )
    logger.info(
        f"Online state initialized: n0={state.n0}, d_beta={d_beta}, d_g={state.d_g}, beta0={beta0_method.value}"
    )
    return state


def advance(state: OnlineState, md: MomentData) -> OnlineState:
    """
    Один шаг рекурсии. beta обновляется по Phi_{i-1}, W_{i-1} до их обновления.
    Вес W обновляется по z_i на разогреве и по g_i(anchor) в эффективной фазе.
    """
    i = state.i + 1
    k = state.n0 + i - 1
    gamma = state.schedule.gamma(i)

    residual = md.residual(state.beta)
    beta = state.beta - gamma * (state.scaling_matrix() @ (state.Phi.T @ (state.W @ residual)))
    norm = float(np.linalg.norm(beta))
    if not np.isfinite(norm) or norm > DIVERGENCE_NORM:
        raise DivergenceDetected(step=i, norm=norm)

    Phi = (k * state.Phi + md.G) / (k + 1)

    update: InnerUpdate | None = None
    fast_path = state.inner_inv is not None and md.rank == 1
    if state.phase is Phase.EFFICIENT:
        assert state.anchor_beta is not None
        g_anchor = md.residual(state.anchor_beta)
        m, W = smw_weight_update(state.W, g_anchor, k)
        if fast_path:
            assert state.inner_inv is not None
            update = smw_inner_inverse_update_eff(
                state.inner_inv, state.Phi, state.W, md.x, md.z, g_anchor, m, k, drift=state.smw_drift
            )
    elif md.rank == 1:
        m, W = smw_weight_update_2sls(state.W, md.z, k)
        if fast_path:
            assert state.inner_inv is not None
            update = smw_inner_inverse_update_2sls(
                state.inner_inv, state.Phi, state.W, md.x, md.z, m, k, drift=state.smw_drift
            )
    else:
        W = smw_weight_block_update(state.W, md.z_factor, k)

    fallback_count = state.fallback_count
    resync_count = state.resync_count
    if update is not None and update.is_accurate():
        inner_inv, drift = update.inverse, update.drift
    else:
        if update is not None:
            resync_count += 1
            logger.debug(f"SMW error estimate {update.forward_error():.3g} at step {i}; resyncing inner inverse")
        elif fast_path:
            fallback_count += 1
            logger.debug(f"SMW core ill-conditioned at step {i}; recomputing inner inverse directly")
        inner_inv, drift = direct_inner_inverse(Phi, W), 0.0

    beta_bar = ((i - 1) / i) * state.beta_bar + beta / i
    return replace(
        state,
        i=i,
        beta=beta,
        beta_bar=beta_bar,
        Phi=Phi,
        W=W,
        inner_inv=inner_inv,
        fallback_count=fallback_count,
        resync_count=resync_count,
        smw_drift=drift,
    )


def step_s2sls(state: OnlineState, md: MomentData) -> OnlineState:
    if state.phase is not Phase.WARMUP:
        raise InvalidPhase("step_s2sls применим только на фазе разогрева")
    if md.G.shape != state.Phi.shape:
        raise InvalidInputError(f"Размерность G {md.G.shape} не совпадает с Phi {state.Phi.shape}")
    return advance(state, md)


def run_s2sls(
    stream: Iterable[MomentData],
    state: OnlineState,
    lrv: "LrvAccumulator | None" = None,
) -> OnlineState:
    for md in stream:
        try:
            state = step_s2sls(state, md)
        except EstimationError as e:
            e.add_note(f"step {state.i + 1}")
            raise
        if lrv is not None:
            lrv.update(state.beta)
    return state
