from enum import Enum
from pathlib import Path
from typing import Literal

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, model_validator


class Estimator(str, Enum):
    S2SLS = "s2sls"
    SGMM = "sgmm"


class InferenceKind(str, Enum):
    PLUG_IN = "plug_in"
    RANDOM_SCALING = "random_scaling"
    DWH = "dwh"
    JTEST = "jtest"


class TestResult(BaseModel):
    __test__ = False

    statistic: float = Field(..., title="Статистика", description="Значение тестовой статистики")
    q: int = Field(..., title="Число ограничений", description="Число ограничений или степеней свободы")
    critical_value_95: float = Field(..., title="Критическое значение", description="Порог на уровне 5%")
    reject_at_5pct: bool = Field(..., title="Отвержение", description="statistic > critical_value_95")
    p_value: float | None = Field(None, title="p-значение", description="Только для хи-квадрат тестов")

    @model_validator(mode="after")
    def _decision_matches(self) -> "TestResult":
        if self.reject_at_5pct != (self.statistic > self.critical_value_95):
            raise ValueError("reject_at_5pct должно совпадать с statistic > critical_value_95")
        return self

    @classmethod
    def decide(cls, statistic: float, q: int, critical_value: float, p_value: float | None = None) -> "TestResult":
        return cls(
            statistic=statistic,
            q=q,
            critical_value_95=critical_value,
            reject_at_5pct=statistic > critical_value,
            p_value=p_value,
        )


class CoefficientInterval(BaseModel):
    index: int = Field(..., title="Индекс", description="Номер коэффициента (с нуля)")
    estimate: float = Field(..., title="Оценка")
    low: float = Field(..., title="Нижняя граница")
    high: float = Field(..., title="Верхняя граница")
    method: Literal["plug_in", "random_scaling"] = Field(..., title="Метод")
    critical_value: float = Field(
        ..., gt=0.0, title="Критическое значение", description="Полуширина равна critical_value * se"
    )

    @property
    def length(self) -> float:
        return self.high - self.low

    def covers(self, value: float) -> bool:
        return self.low <= value <= self.high


class DgpConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int = Field(10_000, ge=1, title="Размер выборки")
    p: int = Field(5, ge=1, title="d_beta")
    q: int = Field(20, ge=1, title="d_g")
    p_low: int = Field(5, ge=1, title="Нижний индекс p")
    q_low: int = Field(20, ge=1, title="Нижний индекс q")
    rho: float = Field(0.5, gt=-1.0, lt=1.0, title="Корреляция инструментов")
    beta_star: list[float] | None = Field(None, title="Истинные коэффициенты", description="По умолчанию единицы")
    sigma_scale: float = Field(5.0, gt=0.0, title="Масштаб гетероскедастичности")
    seed: int = Field(0, ge=0, title="Зерно генератора")
    endogenous: bool = Field(True, title="Эндогенность", description="nu_i входит в ошибку")
    invalid_instrument_shift: float = Field(
        0.0, title="Невалидный инструмент", description="Коэффициент при z_q, добавляемом к ошибке"
    )

    @model_validator(mode="after")
    def _check_dimensions(self) -> "DgpConfig":
        if self.p_low > self.p or self.q_low > self.q:
            raise ValueError(f"Нужны p_low <= p и q_low <= q: ({self.p_low}, {self.q_low}) vs ({self.p}, {self.q})")
        if self.q < self.p:
            raise ValueError(f"Нужно q >= p (d_g >= d_beta), получено p={self.p}, q={self.q}")
        if self.q_low < self.p_low:
            raise ValueError(f"Нужно q_low >= p_low, получено ({self.p_low}, {self.q_low})")
        if self.beta_star is not None and len(self.beta_star) != self.p:
            raise ValueError(f"beta_star должен иметь длину {self.p}")
        return self

    @property
    def beta(self) -> npt.NDArray[np.float64]:
        if self.beta_star is None:
            return np.ones(self.p)
        return np.asarray(self.beta_star, dtype=np.float64)


class CsvSchema(BaseModel):
    path: Path = Field(..., title="Путь к CSV")
    y_col: str = Field("y", title="Столбец отклика")
    x_cols: list[str] = Field(..., min_length=1, title="Столбцы регрессоров")
    z_cols: list[str] = Field(..., min_length=1, title="Столбцы инструментов")
    cluster_col: str | None = Field(None, title="Столбец кластера")


class RunConfig(BaseModel):
    estimator: Estimator = Field(Estimator.SGMM, title="Алгоритм")
    n0: int = Field(1000, ge=1, title="Размер инициализационной выборки")
    n1: int | None = Field(None, ge=1, title="Длина разогрева", description="None: 10 sqrt(n)")
    eta0: float = Field(0.0, ge=0.0, title="Гребневая поправка W_0")
    alpha_quantile: float = Field(0.5, gt=0.0, lt=1.0, title="Уровень alpha для выбора gamma0")
    a: float = Field(0.501, title="Показатель убывания шага")
    gamma0: float | None = Field(None, gt=0.0, title="Начальный шаг", description="None: эмпирическое правило")
    beta0_method: Literal["2sls", "zero"] = Field("2sls", title="Начальная оценка beta_0")
    epochs: int = Field(1, ge=1, title="Число эпох")
    shuffle_seed: int | None = Field(None, ge=0, title="Зерно перемешивания")
    inference: list[InferenceKind] = Field(
        default_factory=lambda: [InferenceKind.PLUG_IN, InferenceKind.RANDOM_SCALING], title="Процедуры вывода"
    )
    dwh_sub_indices: list[int] = Field(default_factory=lambda: [0], min_length=1, title="Подвектор для DWH")
    dwh_preconditioned: bool = Field(True, title="Предобусловленный OLS-путь")
    hypothesis: list[float] | None = Field(None, title="Гипотеза для тестов Вальда")
    record_timings: bool = Field(True, title="Записывать время")
    csv: CsvSchema | None = Field(None, title="Входной CSV")
    dgp: DgpConfig | None = Field(None, title="Синтетический вход")

    @model_validator(mode="after")
    def _check_epochs(self) -> "RunConfig":
        if self.epochs > 1 and self.shuffle_seed is None:
            raise ValueError("Для нескольких эпох нужно задать shuffle_seed")
        return self

    def wants(self, kind: InferenceKind) -> bool:
        return kind in self.inference


class EstimateReport(BaseModel):
    label: str = Field(..., title="Метка", description="Например SGMM или SGMM ME")
    estimator: Estimator
    epoch: int = Field(..., ge=1)
    n_steps: int = Field(..., title="Число шагов после инициализации")
    n_effective: int = Field(..., title="min(i, n) для plug-in")
    n_init: int
    n1: int | None = None
    gamma0: float
    beta_bar: list[float]
    plug_in_variance: list[list[float]] | None = None
    random_scaling_variance: list[list[float]] | None = None
    intervals: list[CoefficientInterval] = Field(default_factory=list)
    tests: dict[str, TestResult] = Field(default_factory=dict)
    timings: dict[str, float] = Field(default_factory=dict)
    fallback_count: int = 0
    config: RunConfig

    def interval(self, index: int, method: str) -> CoefficientInterval | None:
        for item in self.intervals:
            if item.index == index and item.method == method:
                return item
        return None
