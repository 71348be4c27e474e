import logging
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass
from itertools import islice

import numpy as np

from engines.critical_values import CriticalValueTable
from engines.errors import ConfigError, InvalidPhase
from engines.inference import (
    DwhState,
    JTestAccumulator,
    LrvAccumulator,
    dwh_step,
    dwh_test,
    init_dwh,
    plug_in_intervals,
    random_scaling_intervals,
    sargan_hansen,
    wald_plug_in,
    wald_random_scaling,
)
from engines.learning_rate import rule_of_thumb_gamma0, schedule
from engines.moments import Dimensions, MomentData, Record, to_moment_data
from engines.s2sls import Beta0Method, OnlineState, Phase, init_state, run_s2sls
from engines.sgmm import auto_n1, run_sgmm
from middlewares.timing import PhaseTimer
from schemas.estimation import EstimateReport, Estimator, InferenceKind, RunConfig, TestResult

logger = logging.getLogger(__name__)


@dataclass
class _Run:
    """Изменяемое состояние одного прогона: рекурсия и аккумуляторы вывода."""

    cfg: RunConfig
    dims: Dimensions
    state: OnlineState
    gamma0: float
    n1: int | None
    stream_length: int | None
    lrv: LrvAccumulator | None
    jtest: JTestAccumulator | None
    dwh: DwhState | None
    timer: PhaseTimer


class EstimatorService:
    def __init__(self, table: CriticalValueTable, record_timings: bool = True) -> None:
        self.table = table
        self.record_timings = record_timings
        logger.info("EstimatorService initialized.")

    def estimate(
        self, records: Iterable[Record], cfg: RunConfig, stream_length: int | None = None
    ) -> list[EstimateReport]:
        """
        Один проход по потоку: первые n0 записей идут на инициализацию, остальные в рекурсию.
        stream_length - число записей после инициализации, нужно для n1 по умолчанию.
        С перемешиванием или несколькими эпохами делегирует в multi_epoch.
        """
        if cfg.epochs > 1 or cfg.shuffle_seed is not None:
            if not isinstance(records, Sequence):
                raise ConfigError("Несколько эпох и перемешивание требуют повторно читаемого набора данных")
            return self.multi_epoch(records, cfg)

        iterator = iter(records)
        init_sample = list(islice(iterator, cfg.n0))
        run = self._prepare(init_sample, cfg, stream_length)
        self._consume(run, iterator)
        return [self._report(run, epoch=1, n_effective=run.state.i)]

    def multi_epoch(self, dataset: Sequence[Record], cfg: RunConfig) -> list[EstimateReport]:
        """
        Каждая эпоха проходит записи после инициализационной выборки в новом случайном порядке
        и продолжает то же состояние: шаг gamma_i продолжает убывать.
        """
        if not isinstance(dataset, Sequence):
            raise ConfigError("multi_epoch требует повторно читаемого набора данных")
        init_sample = list(dataset[: cfg.n0])
        rest = dataset[cfg.n0 :]
        run = self._prepare(init_sample, cfg, len(rest))
        rng = np.random.default_rng(cfg.shuffle_seed)
        reports = []
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(rest))
            logger.info(f"Epoch {epoch}/{cfg.epochs}: {len(rest)} records")
            self._consume(run, (rest[j] for j in order))
            reports.append(self._report(run, epoch=epoch, n_effective=min(run.state.i, len(rest))))
        return reports

    def _prepare(self, init_sample: list[Record], cfg: RunConfig, stream_length: int | None) -> _Run:
        if len(init_sample) < cfg.n0:
            raise ConfigError(f"Поток короче инициализационной выборки: {len(init_sample)} < n0={cfg.n0}")
        if stream_length is not None and stream_length < 1:
            raise ConfigError("После инициализационной выборки не осталось наблюдений")
        if cfg.estimator is Estimator.S2SLS and cfg.wants(InferenceKind.JTEST):
            raise ConfigError("J-тест требует эффективной фазы: используйте estimator=sgmm")

        timer = PhaseTimer(enabled=self.record_timings)
        with timer.phase("initialization"):
            dims = Dimensions.of(init_sample[0])
            for record in init_sample:
                dims.validate(record)
            if cfg.gamma0 is None:
                gamma0 = rule_of_thumb_gamma0(init_sample, cfg.alpha_quantile, cfg.eta0)
            else:
                gamma0 = cfg.gamma0
            sched = schedule(gamma0, cfg.a)
            method = Beta0Method(cfg.beta0_method)
            state = init_state(init_sample, cfg.eta0, sched, method)

            n1 = None
            if cfg.estimator is Estimator.SGMM:
                if cfg.n1 is not None:
                    n1 = cfg.n1
                elif stream_length is not None:
                    n1 = auto_n1(stream_length)
                else:
                    raise ConfigError("Длина потока неизвестна: задайте n1 явно")
                if stream_length is not None and n1 >= stream_length:
                    raise ConfigError(f"Нужно n1 < n, получено n1={n1}, n={stream_length}")

            dwh = None
            if cfg.wants(InferenceKind.DWH):
                dwh = init_dwh(init_sample, cfg.eta0, sched, cfg.dwh_sub_indices, cfg.dwh_preconditioned, method)

        lrv = LrvAccumulator(dims.d_beta) if cfg.wants(InferenceKind.RANDOM_SCALING) else None
        jtest = JTestAccumulator(dims.d_g, dims.d_beta) if cfg.wants(InferenceKind.JTEST) else None
        logger.info(f"Run prepared: estimator={cfg.estimator.value}, gamma0={gamma0:.6g}, n1={n1}")
        return _Run(
            cfg=cfg,
            dims=dims,
            state=state,
            gamma0=gamma0,
            n1=n1,
            stream_length=stream_length,
            lrv=lrv,
            jtest=jtest,
            dwh=dwh,
            timer=timer,
        )

    def _moments(self, run: _Run, records: Iterable[Record]) -> Iterator[MomentData]:
        for record in records:
            run.dims.validate(record)
            if run.dwh is not None:
                run.dwh = dwh_step(run.dwh, record)
            yield to_moment_data(record)

    def _consume(self, run: _Run, records: Iterable[Record]) -> None:
        with run.timer.phase("estimation"):
            stream = self._moments(run, records)
            if run.cfg.estimator is Estimator.SGMM:
                run.state = run_sgmm(stream, run.stream_length, run.state, run.n1, run.jtest, run.lrv)
            else:
                run.state = run_s2sls(stream, run.state, run.lrv)

    def _report(self, run: _Run, epoch: int, n_effective: int) -> EstimateReport:
        cfg = run.cfg
        state = run.state
        intervals = []
        tests: dict[str, TestResult] = {}
        plug_in_variance = None
        rs_variance = None

        with run.timer.phase("inference"):
            if cfg.wants(InferenceKind.PLUG_IN):
                if state.phase is Phase.EFFICIENT:
                    plug_in_variance = state.scaling_matrix().tolist()
                    intervals.extend(plug_in_intervals(state, n_effective))
                    if cfg.hypothesis is not None:
                        tests["wald_plug_in"] = wald_plug_in(state, cfg.hypothesis, n_effective)
                else:
                    logger.warning("Plug-in inference skipped: it requires the efficient phase")

            if run.lrv is not None and run.lrv.n > 0:
                rs_variance = run.lrv.variance().tolist()
                intervals.extend(random_scaling_intervals(state.beta_bar, run.lrv, self.table))
                if cfg.hypothesis is not None:
                    tests["wald_random_scaling"] = wald_random_scaling(
                        state.beta_bar, run.lrv, cfg.hypothesis, self.table
                    )

            if run.jtest is not None:
                if run.jtest.ghat is None:
                    raise InvalidPhase("J-тест недоступен: поток закончился до конца разогрева")
                n = min(run.jtest.i, n_effective) if epoch > 1 else run.jtest.i
                tests["jtest"] = sargan_hansen(run.jtest.ghat, state.W, n, state.d_g, state.d_beta)

            if run.dwh is not None:
                tests["dwh"] = dwh_test(run.dwh, table=self.table)

        name = cfg.estimator.name
        label = f"{name} ME" if cfg.epochs > 1 else name
        logger.info(f"{label} epoch {epoch}: i={state.i}, beta_bar[0]={state.beta_bar[0]:.6g}")
        return EstimateReport(
            label=label,
            estimator=cfg.estimator,
            epoch=epoch,
            n_steps=state.i,
            n_effective=n_effective,
            n_init=state.n0,
            n1=run.n1,
            gamma0=run.gamma0,
            beta_bar=state.beta_bar.tolist(),
            plug_in_variance=plug_in_variance,
            random_scaling_variance=rs_variance,
            intervals=intervals,
            tests=tests,
            timings=dict(run.timer.timings),
            fallback_count=state.fallback_count,
            config=cfg,
        )


estimator_service: EstimatorService | None = None
