"""
Эффективный двухфазный алгоритм: разогрев S2SLS на первых n1 наблюдениях,
затем рекурсия с весом, сходящимся к Omega^{-1}, по остаткам в точке beta_bar_{n1}.
"""

import logging
import math
from dataclasses import replace
from typing import TYPE_CHECKING, Iterable

from engines.errors import ConfigError, EstimationError, InvalidInputError, InvalidPhase
from engines.linalg import smw_inner_inverse_update_eff, smw_weight_update
from engines.moments import Matrix, MomentData, Vector
from engines.s2sls import OnlineState, Phase, advance, step_s2sls

if TYPE_CHECKING:
    from engines.inference import JTestAccumulator, LrvAccumulator

logger = logging.getLogger(__name__)

__all__ = [
    "auto_n1",
    "run_sgmm",
    "sgmm_step",
    "smw_inner_inverse_update_eff",
    "smw_weight_update_eff",
    "step_sgmm",
    "transition_to_efficient",
]


def auto_n1(n: int) -> int:
    return int(math.floor(10 * math.sqrt(n)))


def transition_to_efficient(state: OnlineState) -> OnlineState:
    if state.phase is Phase.EFFICIENT:
        raise InvalidPhase("Переход в эффективную фазу уже выполнен")
    if state.i < 1:
        raise InvalidPhase("Переход возможен только после хотя бы одного шага разогрева")
    logger.info(f"Switching to efficient phase at i={state.i}")
    return replace(state, phase=Phase.EFFICIENT, anchor_beta=state.beta_bar.copy())


def smw_weight_update_eff(W: Matrix, g_anchor: Vector, k: int) -> tuple[float, Matrix]:
    return smw_weight_update(W, g_anchor, k)


def step_sgmm(state: OnlineState, md: MomentData) -> OnlineState:
    if state.phase is not Phase.EFFICIENT:
        raise InvalidPhase("step_sgmm применим только в эффективной фазе")
    if md.G.shape != state.Phi.shape:
        raise InvalidInputError(f"Размерность G {md.G.shape} не совпадает с Phi {state.Phi.shape}")
    return advance(state, md)


def sgmm_step(
    state: OnlineState,
    md: MomentData,
    n1: int,
    jtest: "JTestAccumulator | None" = None,
) -> OnlineState:
    """Шаг с учётом фазы: разогрев до i = n1 включительно, затем эффективная рекурсия."""
    if state.phase is Phase.WARMUP:
        if jtest is not None:
            jtest.absorb_warmup(md)
        state = step_s2sls(state, md)
        if state.i >= n1:
            state = transition_to_efficient(state)
            if jtest is not None:
                jtest.anchor(state.beta_bar)
        return state
    state = step_sgmm(state, md)
    if jtest is not None:
        jtest.update(md, state.beta_bar)
    return state


def run_sgmm(
    stream: Iterable[MomentData],
    n: int | None,
    state: OnlineState,
    n1: int | None = None,
    jtest: "JTestAccumulator | None" = None,
    lrv: "LrvAccumulator | None" = None,
) -> OnlineState:
    if n1 is None:
        if n is None:
            raise ConfigError("Длина потока неизвестна: задайте n1 явно")
        n1 = auto_n1(n)
    if n1 < 1 or (n is not None and n1 >= n):
        raise ConfigError(f"Нужно 1 <= n1 < n, получено n1={n1}, n={n}")
    for md in stream:
        try:
            state = sgmm_step(state, md, n1, jtest)
        except EstimationError as e:
            e.add_note(f"step {state.i + 1}")
            raise
        if lrv is not None:
            lrv.update(state.beta)
    if state.phase is Phase.WARMUP:
        logger.warning(f"Stream ended at i={state.i} before the warm-up length n1={n1}")
    return state
