"""
Онлайн-вывод: доверительные области plug-in и random scaling, тест DWH на эндогенность
и тест Саргана-Хансена на сверхидентифицирующие ограничения.
"""

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy import stats

from engines.critical_values import CriticalValueTable, StatisticForm, default_table
from engines.errors import (
    ConfigError,
    DivergenceDetected,
    InvalidInputError,
    InvalidPhase,
    NotOveridentified,
    SingularInitialization,
    SingularLrv,
)
from engines.linalg import is_well_conditioned, smw_weight_block_update, symmetrize
from engines.moments import Cluster, Matrix, MomentData, Record, Vector, flatten, to_moment_data
from engines.s2sls import (
    DIVERGENCE_NORM,
    GRAM_EIGEN_TOLERANCE,
    Beta0Method,
    LearningRateSchedule,
    OnlineState,
    Phase,
    init_state,
    step_s2sls,
)
from schemas.estimation import CoefficientInterval, TestResult

logger = logging.getLogger(__name__)

LEVEL = 0.95


class LrvAccumulator:
    """
    Частичные суммы траектории beta_i, достаточные для точного восстановления V_rs,n:
    V = (1/n^2) sum_s (S_s - s beta_bar)(S_s - s beta_bar)'.
    """

    def __init__(self, d: int) -> None:
        self.n = 0
        self.S = np.zeros(d)
        self.sum_SS = np.zeros((d, d))
        self.sum_sS = np.zeros(d)
        self.sum_s2 = 0.0

    @property
    def d(self) -> int:
        return int(self.S.size)

    def update(self, beta: Vector) -> None:
        self.S = self.S + beta
        self.n += 1
        self.sum_SS += np.outer(self.S, self.S)
        self.sum_sS += self.n * self.S
        self.sum_s2 += float(self.n) ** 2

    def mean(self) -> Vector:
        if self.n == 0:
            raise InvalidInputError("Аккумулятор пуст")
        return self.S / self.n

    def variance(self) -> Matrix:
        bar = self.mean()
        cross = np.outer(self.sum_sS, bar)
        V = (self.sum_SS - cross - cross.T + self.sum_s2 * np.outer(bar, bar)) / self.n**2
        return symmetrize(V)


def lrv_update(acc: LrvAccumulator, beta_i: Vector) -> LrvAccumulator:
    acc.update(beta_i)
    return acc


def self_normalized_statistic(diff: Vector, V: Matrix, n: int, q: int) -> float:
    """(n/q) diff' V^{-1} diff; V должна быть невырожденной."""
    if not is_well_conditioned(V):
        raise SingularLrv("Оценка долгосрочной дисперсии вырождена")
    return float(n / q * diff @ np.linalg.solve(V, diff))


def _hypothesis(beta_bar: Vector, beta_hypothesis: Sequence[float] | Vector) -> Vector:
    h = np.asarray(beta_hypothesis, dtype=np.float64).reshape(-1)
    if h.size != beta_bar.size:
        raise InvalidInputError(f"Гипотеза имеет длину {h.size}, ожидалось {beta_bar.size}")
    return beta_bar - h


def _require_efficient(state: OnlineState) -> None:
    if state.phase is not Phase.EFFICIENT:
        raise InvalidPhase("Plug-in вывод требует эффективной фазы: W_n должна оценивать Omega^{-1}")


def wald_plug_in(state: OnlineState, beta_hypothesis: Sequence[float] | Vector, n: int | None = None) -> TestResult:
    _require_efficient(state)
    n = state.i if n is None else n
    diff = _hypothesis(state.beta_bar, beta_hypothesis)
    precision = state.Phi.T @ state.W @ state.Phi
    statistic = float(n * diff @ precision @ diff)
    d = state.d_beta
    return TestResult.decide(
        statistic=statistic,
        q=d,
        critical_value=float(stats.chi2.ppf(LEVEL, d)),
        p_value=float(stats.chi2.sf(statistic, d)),
    )


def plug_in_intervals(state: OnlineState, n: int | None = None) -> list[CoefficientInterval]:
    _require_efficient(state)
    n = state.i if n is None else n
    crit = float(stats.norm.ppf(0.5 + LEVEL / 2))
    se = np.sqrt(np.diag(state.scaling_matrix()) / n)
    return [
        CoefficientInterval(
            index=k,
            estimate=float(b),
            low=float(b - crit * s),
            high=float(b + crit * s),
            method="plug_in",
            critical_value=crit,
        )
        for k, (b, s) in enumerate(zip(state.beta_bar, se))
    ]


def wald_random_scaling(
    beta_bar: Vector,
    acc: LrvAccumulator,
    beta_hypothesis: Sequence[float] | Vector,
    table: CriticalValueTable | None = None,
) -> TestResult:
    table = table or default_table()
    diff = _hypothesis(beta_bar, beta_hypothesis)
    d = diff.size
    statistic = self_normalized_statistic(diff, acc.variance(), acc.n, d)
    return TestResult.decide(statistic=statistic, q=d, critical_value=table.lookup(d, StatisticForm.F_TYPE))


def random_scaling_intervals(
    beta_bar: Vector, acc: LrvAccumulator, table: CriticalValueTable | None = None
) -> list[CoefficientInterval]:
    table = table or default_table()
    crit = table.lookup(1, StatisticForm.T_TYPE)
    se = np.sqrt(np.clip(np.diag(acc.variance()), 0.0, None) / acc.n)
    return [
        CoefficientInterval(
            index=k,
            estimate=float(b),
            low=float(b - crit * s),
            high=float(b + crit * s),
            method="random_scaling",
            critical_value=crit,
        )
        for k, (b, s) in enumerate(zip(beta_bar, se))
    ]


class JTestAccumulator:
    """
    Скользящее среднее g_i(beta_bar_i) для теста Саргана-Хансена.
    На разогреве копит суммы G_i, H_i, чтобы вычислить g_hat_{n1} в точке beta_bar_{n1}.
    """

    def __init__(self, d_g: int, d_beta: int) -> None:
        self.sum_G = np.zeros((d_g, d_beta))
        self.sum_H = np.zeros(d_g)
        self.warmup_count = 0
        self.i = 0
        self.ghat: Vector | None = None

    def absorb_warmup(self, md: MomentData) -> None:
        self.sum_G += md.G
        self.sum_H += md.H
        self.warmup_count += 1

    def anchor(self, beta_bar_n1: Vector) -> None:
        if self.warmup_count == 0:
            raise InvalidPhase("J-тест требует непустой фазы разогрева")
        self.ghat = (self.sum_G @ beta_bar_n1 + self.sum_H) / self.warmup_count
        self.i = self.warmup_count
        logger.debug(f"J-test anchored at n1={self.i}")

    def update(self, md: MomentData, beta_bar_i: Vector) -> None:
        if self.ghat is None:
            raise InvalidPhase("J-тест обновляется только после разогрева")
        self.i += 1
        self.ghat = ((self.i - 1) / self.i) * self.ghat + md.residual(beta_bar_i) / self.i


def jtest_update(acc: JTestAccumulator, md: MomentData, beta_bar_i: Vector) -> JTestAccumulator:
    acc.update(md, beta_bar_i)
    return acc


def sargan_hansen(ghat: Vector, W_n: Matrix, n: int, d_g: int, d_beta: int) -> TestResult:
    if d_g <= d_beta:
        raise NotOveridentified(f"Модель не сверхидентифицирована: d_g={d_g}, d_beta={d_beta}")
    df = d_g - d_beta
    statistic = float(n * ghat @ W_n @ ghat)
    return TestResult.decide(
        statistic=statistic,
        q=df,
        critical_value=float(stats.chi2.ppf(LEVEL, df)),
        p_value=float(stats.chi2.sf(statistic, df)),
    )


@dataclass(frozen=True, eq=False)
class DwhState:
    """Совместная рекурсия IV-пути (S2SLS) и OLS-пути alpha_i."""

    iv: OnlineState
    alpha: Vector
    alpha_bar: Vector
    P: Matrix | None
    sub_indices: tuple[int, ...]
    lrv: LrvAccumulator

    @property
    def q(self) -> int:
        return len(self.sub_indices)


def _ols_gradient(record: Record, alpha: Vector) -> tuple[Vector, Matrix]:
    members = record.members if isinstance(record, Cluster) else (record,)
    X = np.stack([obs.x for obs in members])
    y = np.array([obs.y for obs in members])
    T = len(members)
    return X.T @ (X @ alpha - y) / T, X.T / np.sqrt(T)


def init_dwh(
    init_sample: Sequence[Record],
    eta0: float,
    schedule: LearningRateSchedule,
    sub_indices: Sequence[int] | None = None,
    preconditioned: bool = True,
    beta0_method: Beta0Method = Beta0Method.OFFLINE_2SLS,
) -> DwhState:
    iv = init_state(init_sample, eta0, schedule, beta0_method)
    observations = flatten(init_sample)
    X = np.stack([obs.x for obs in observations])
    y = np.array([obs.y for obs in observations])
    gram = symmetrize(X.T @ X / len(y)) + eta0 * np.eye(iv.d_beta)
    eigvals = np.linalg.eigvalsh(gram)
    if eigvals[0] <= GRAM_EIGEN_TOLERANCE * max(1.0, eigvals[-1]):
        raise SingularInitialization("Матрица Грама регрессоров вырождена", float(eigvals[0]))
    P0 = symmetrize(np.linalg.inv(gram))
    alpha0 = P0 @ (X.T @ y / len(y)) if beta0_method is Beta0Method.OFFLINE_2SLS else np.zeros(iv.d_beta)
    sub = tuple(range(iv.d_beta)) if sub_indices is None else tuple(sub_indices)
    if not sub or any(k < 0 or k >= iv.d_beta for k in sub):
        raise ConfigError(f"Некорректные индексы подвектора DWH: {sub}")
    logger.info(f"DWH state initialized: q={len(sub)}, preconditioned={preconditioned}")
    return DwhState(
        iv=iv,
        alpha=alpha0,
        alpha_bar=alpha0.copy(),
        P=P0 if preconditioned else None,
        sub_indices=sub,
        lrv=LrvAccumulator(2 * len(sub)),
    )


def dwh_step(state: DwhState, obs: Record) -> DwhState:
    iv = step_s2sls(state.iv, to_moment_data(obs))
    i = iv.i
    k = iv.n0 + i - 1
    gamma = iv.schedule.gamma(i)
    gradient, x_factor = _ols_gradient(obs, state.alpha)
    P = state.P
    if P is not None:
        alpha = state.alpha - gamma * (P @ gradient)
        P = smw_weight_block_update(P, x_factor, k)
    else:
        alpha = state.alpha - gamma * gradient
    norm = float(np.linalg.norm(alpha))
    if not np.isfinite(norm) or norm > DIVERGENCE_NORM:
        raise DivergenceDetected(step=i, norm=norm)
    alpha_bar = ((i - 1) / i) * state.alpha_bar + alpha / i
    sub = list(state.sub_indices)
    state.lrv.update(np.concatenate([iv.beta[sub], alpha[sub]]))
    return replace(state, iv=iv, alpha=alpha, alpha_bar=alpha_bar, P=P)


def dwh_statistic(diff: Vector, xi_v_xi: Matrix, n: int, q: int) -> float:
    return self_normalized_statistic(diff, xi_v_xi, n, q)


def dwh_test(
    state: DwhState, sub_indices: Sequence[int] | None = None, table: CriticalValueTable | None = None
) -> TestResult:
    table = table or default_table()
    chosen = state.sub_indices if sub_indices is None else tuple(sub_indices)
    if not set(chosen) <= set(state.sub_indices) or not chosen:
        raise ConfigError(f"Подвектор {chosen} не отслеживался (доступно {state.sub_indices})")
    q_all = state.q
    positions = [state.sub_indices.index(k) for k in chosen]
    q = len(positions)
    Xi = np.zeros((q, 2 * q_all))
    for row, pos in enumerate(positions):
        Xi[row, pos] = 1.0
        Xi[row, q_all + pos] = -1.0
    diff = state.iv.beta_bar[list(chosen)] - state.alpha_bar[list(chosen)]
    statistic = dwh_statistic(diff, Xi @ state.lrv.variance() @ Xi.T, state.lrv.n, q)
    return TestResult.decide(statistic=statistic, q=q, critical_value=table.lookup(q, StatisticForm.F_TYPE))
