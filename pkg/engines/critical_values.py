"""
Критические значения самонормированных статистик random scaling.

Предельный закон: W_q(1)' (int_0^1 B(r) B(r)' dr)^{-1} W_q(1) / q, где B(r) = W_q(r) - r W_q(1),
и t-вариант |W(1)| / sqrt(int_0^1 B(r)^2 dr). Распределение моделируется методом Монте-Карло
на дискретной сетке.
"""

import logging
from collections.abc import Iterable, Mapping
from enum import Enum
from functools import lru_cache
from pathlib import Path

import numpy as np
import numpy.typing as npt
import pandas as pd

from engines.errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_TABLE_PATH = Path(__file__).resolve().parent.parent / "assets" / "critical_values.tsv"
TABLE_SEED = 20240501
TABLE_GRID = 10_000
TABLE_REPS = 200_000
FALLBACK_GRID = 2_000
FALLBACK_REPS = 20_000
MAX_CHUNK_ELEMENTS = 2_000_000


class StatisticForm(str, Enum):
    F_TYPE = "F_type"
    T_TYPE = "t_type"


def _functional_draws(
    rng: np.random.Generator, reps: int, grid: int, q: int, form: StatisticForm, scale: float
) -> npt.NDArray[np.float64]:
    r = np.arange(1, grid + 1) / grid
    W = np.cumsum(rng.standard_normal((reps, grid, q)), axis=1) * (scale / np.sqrt(grid))
    W1 = W[:, -1, :]
    B = W - r[None, :, None] * W1[:, None, :]
    if form is StatisticForm.T_TYPE:
        # координаты независимы и одинаково распределены: берём все q
        integral = np.einsum("cgi,cgi->ci", B, B) / grid
        return (np.abs(W1) / np.sqrt(integral)).ravel()
    M = np.einsum("cgi,cgj->cij", B, B) / grid
    solved = np.linalg.solve(M, W1[..., None])[..., 0]
    return np.einsum("ci,ci->c", W1, solved) / q


def simulate_critical_values(
    q: int,
    statistic_form: StatisticForm,
    grid: int = TABLE_GRID,
    reps: int = TABLE_REPS,
    seed: int = TABLE_SEED,
    level: float = 0.95,
    scale: float = 1.0,
) -> float:
    """Квантиль уровня level предельного закона; детерминирован при заданном seed."""
    if q < 1:
        raise ConfigError(f"q должно быть >= 1, получено {q}")
    if grid < 1000 or reps < 10_000:
        raise ConfigError(f"Нужны grid >= 1000 и reps >= 10000, получено grid={grid}, reps={reps}")
    rng = np.random.default_rng(seed)
    chunk = max(1, MAX_CHUNK_ELEMENTS // (grid * q))
    draws = []
    remaining = reps
    while remaining > 0:
        size = min(chunk, remaining)
        draws.append(_functional_draws(rng, size, grid, q, statistic_form, scale))
        remaining -= size
    value = float(np.quantile(np.concatenate(draws), level))
    logger.info(f"Simulated critical value: q={q}, form={statistic_form.value}, grid={grid}, reps={reps}: {value:.4f}")
    return value


CriticalValueKey = tuple[int, str, float]


class CriticalValueTable:
    """
    Таблица критических значений из текстового файла (q, form, percentile, value).
    Отсутствующие значения моделируются по требованию и кэшируются.
    """

    def __init__(
        self,
        path: Path | None = DEFAULT_TABLE_PATH,
        fallback_grid: int = FALLBACK_GRID,
        fallback_reps: int = FALLBACK_REPS,
        fallback_seed: int = TABLE_SEED,
        values: Mapping[CriticalValueKey, float] | None = None,
    ) -> None:
        self.fallback_grid = fallback_grid
        self.fallback_reps = fallback_reps
        self.fallback_seed = fallback_seed
        self._values: dict[CriticalValueKey, float] = {}
        if path is not None and path.exists():
            table = pd.read_csv(path, sep="\t", comment="#")
            for row in table.itertuples(index=False):
                self._values[(int(row.q), str(row.form), float(row.percentile))] = float(row.value)
        if values is not None:
            self._values.update(values)
        logger.info(f"CriticalValueTable initialized with {len(self._values)} entries from {path}")

    def lookup(self, q: int, form: StatisticForm, level: float = 0.95) -> float:
        key = (q, form.value, level)
        if key not in self._values:
            logger.warning(f"Critical value q={q}, form={form.value} missing from table; simulating")
            self._values[key] = simulate_critical_values(
                q, form, grid=self.fallback_grid, reps=self.fallback_reps, seed=self.fallback_seed, level=level
            )
        return self._values[key]

    def resolve(
        self, requests: Iterable[tuple[int, StatisticForm]], level: float = 0.95
    ) -> dict[CriticalValueKey, float]:
        """Значения для набора (q, form); недостающие моделируются один раз и остаются в кэше."""
        return {(q, form.value, level): self.lookup(q, form, level) for q, form in requests}


def write_table(
    path: Path,
    qs: range = range(1, 11),
    grid: int = TABLE_GRID,
    reps: int = TABLE_REPS,
    seed: int = TABLE_SEED,
    level: float = 0.95,
) -> pd.DataFrame:
    rows = [
        {
            "q": q,
            "form": form.value,
            "percentile": level,
            "value": simulate_critical_values(q, form, grid, reps, seed, level),
        }
        for q in qs
        for form in StatisticForm
    ]
    table = pd.DataFrame(rows)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"# random-scaling critical values; seed={seed} grid={grid} reps={reps}\n")
        table.to_csv(fh, sep="\t", index=False, float_format="%.4f")
    logger.info(f"Critical value table written to {path}")
    return table


@lru_cache(maxsize=1)
def default_table() -> CriticalValueTable:
    return CriticalValueTable()
