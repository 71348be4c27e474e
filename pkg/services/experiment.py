"""
Монте-Карло харнесс: повторения по сетке (DgpConfig, RunConfig), сводные таблицы RMSE, Bias, SD,
покрытия, длины интервала и времени по методам для коэффициента при эндогенном регрессоре.
"""

import logging
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import pandas as pd

from engines.baselines import OfflineFit, fit_2sls, fit_gmm_two_step
from engines.critical_values import CriticalValueKey, CriticalValueTable, StatisticForm, default_table
from engines.errors import ConfigError, EstimationError
from engines.moments import observations_from_arrays
from repositories.dgp import generate_arrays
from schemas.estimation import DgpConfig, EstimateReport, Estimator, InferenceKind, RunConfig
from services.estimator import EstimatorService

logger = logging.getLogger(__name__)

METHODS = ("2SLS", "GMM", "S2SLS", "SGMM RS", "SGMM PI", "J-test", "DWH")
TARGET_INDEX = 0
GROUP_COLUMNS = ["cell", "n", "p", "q"]


@dataclass(frozen=True)
class ReplicationTask:
    cell: int
    replication: int
    dgp: DgpConfig
    run: RunConfig
    record_timings: bool
    critical_values: dict[CriticalValueKey, float]


def replication_seeds(base_seed: int, replications: int) -> list[int]:
    children = np.random.SeedSequence(base_seed).spawn(replications)
    return [int(child.generate_state(1)[0]) for child in children]


def _timed(fn: Callable[[], Any], record_timings: bool) -> tuple[Any, float]:
    start = time.perf_counter()
    result = fn()
    elapsed = time.perf_counter() - start
    return result, elapsed if record_timings else float("nan")


def _offline_row(fit: OfflineFit) -> dict[str, Any]:
    low, high = fit.interval(TARGET_INDEX)
    return {"estimate": float(fit.beta[TARGET_INDEX]), "low": low, "high": high}


def _estimation_time(report: EstimateReport, record_timings: bool) -> float:
    return report.timings.get("estimation", float("nan")) if record_timings else float("nan")


def _online_row(report: EstimateReport, method: str) -> dict[str, Any]:
    interval = report.interval(TARGET_INDEX, method)
    if interval is None:
        raise EstimationError(f"Интервал {method} не построен")
    return {"estimate": interval.estimate, "low": interval.low, "high": interval.high}


def run_replication(task: ReplicationTask) -> list[dict[str, Any]]:
    """Одно повторение: все методы на одной выборке. Ошибки метода записываются, а не пропускаются."""
    dgp, run = task.dgp, task.run
    y, X, Z = generate_arrays(dgp, run.n0 + dgp.n)
    records = observations_from_arrays(y, X, Z)
    table = CriticalValueTable(path=None, values=task.critical_values)
    svc = EstimatorService(table, record_timings=task.record_timings)
    base = {
        "cell": task.cell,
        "n": dgp.n,
        "p": dgp.p,
        "q": dgp.q,
        "replication": task.replication,
        "truth": float(dgp.beta[TARGET_INDEX]),
    }
    rows: list[dict[str, Any]] = []

    def add(method: str, values: dict[str, Any], elapsed: float) -> None:
        rows.append({**base, "method": method, **values, "time": elapsed, "failed": False})

    def fail(methods: Sequence[str], e: EstimationError) -> None:
        logger.warning(f"Replication {task.replication} of cell {task.cell}: {list(methods)} failed: {e}")
        for method in methods:
            rows.append({**base, "method": method, "failed": True})

    for method, fitter in (("2SLS", fit_2sls), ("GMM", fit_gmm_two_step)):
        try:
            fit, elapsed = _timed(lambda: fitter(y, X, Z), task.record_timings)
            add(method, _offline_row(fit), elapsed)
        except EstimationError as e:
            fail([method], e)

    with_dwh = run.wants(InferenceKind.DWH)
    s2sls_cfg = run.model_copy(
        update={
            "estimator": Estimator.S2SLS,
            "inference": [InferenceKind.RANDOM_SCALING] + ([InferenceKind.DWH] if with_dwh else []),
            "epochs": 1,
            "shuffle_seed": None,
        }
    )
    s2sls_methods = ["S2SLS"] + (["DWH"] if with_dwh else [])
    try:
        report = svc.estimate(records, s2sls_cfg, stream_length=dgp.n)[-1]
        elapsed = _estimation_time(report, task.record_timings)
        add("S2SLS", _online_row(report, "random_scaling"), elapsed)
        if with_dwh:
            add("DWH", {"reject": report.tests["dwh"].reject_at_5pct}, elapsed)
    except EstimationError as e:
        fail(s2sls_methods, e)

    with_j = run.wants(InferenceKind.JTEST)
    sgmm_cfg = run.model_copy(
        update={
            "estimator": Estimator.SGMM,
            "inference": [InferenceKind.PLUG_IN, InferenceKind.RANDOM_SCALING]
            + ([InferenceKind.JTEST] if with_j else []),
            "epochs": 1,
            "shuffle_seed": None,
        }
    )
    sgmm_methods = ["SGMM RS", "SGMM PI"] + (["J-test"] if with_j else [])
    try:
        report = svc.estimate(records, sgmm_cfg, stream_length=dgp.n)[-1]
        elapsed = _estimation_time(report, task.record_timings)
        add("SGMM RS", _online_row(report, "random_scaling"), elapsed)
        add("SGMM PI", _online_row(report, "plug_in"), elapsed)
        if with_j:
            jtest = report.tests["jtest"]
            add("J-test", {"reject": jtest.reject_at_5pct, "statistic": jtest.statistic}, elapsed)
    except EstimationError as e:
        fail(sgmm_methods, e)

    return rows


def summarize(results: pd.DataFrame) -> pd.DataFrame:
    """Сводка по (ячейка, метод). SD при одном повторении равна 0 и помечается флагом sd_degenerate."""
    records = []
    for keys, group in results.groupby([*GROUP_COLUMNS, "method"], sort=False):
        ok = group[~group["failed"].astype(bool)]
        row: dict[str, Any] = dict(zip([*GROUP_COLUMNS, "method"], keys))
        row["replications"] = len(ok)
        row["failures"] = int(group["failed"].astype(bool).sum())
        fitted = ok[ok["estimate"].notna()] if "estimate" in ok else ok.iloc[0:0]
        if len(fitted):
            estimates = fitted["estimate"].to_numpy(dtype=np.float64)
            truth = fitted["truth"].to_numpy(dtype=np.float64)
            low = fitted["low"].to_numpy(dtype=np.float64)
            high = fitted["high"].to_numpy(dtype=np.float64)
            errors = estimates - truth
            row["RMSE"] = float(np.sqrt(np.mean(errors**2)))
            row["Bias"] = float(np.mean(errors))
            row["SD"] = float(np.std(estimates, ddof=1)) if len(fitted) > 1 else 0.0
            row["sd_degenerate"] = len(fitted) < 2
            row["Coverage"] = float(np.mean((low <= truth) & (truth <= high)))
            row["CI Length"] = float(np.mean(high - low))
        if "reject" in ok and ok["reject"].notna().any():
            row["Reject"] = float(ok["reject"].dropna().astype(bool).mean())
        if "statistic" in ok and ok["statistic"].notna().any():
            row["Mean statistic"] = float(ok["statistic"].dropna().mean())
        times = ok["time"].to_numpy(dtype=np.float64) if "time" in ok else np.array([])
        times = times[np.isfinite(times)]
        row["Time"] = float(times.mean()) if times.size else float("nan")
        records.append(row)
    return pd.DataFrame(records)


def required_critical_values(dgp: DgpConfig, run: RunConfig) -> set[tuple[int, StatisticForm]]:
    """Критические значения, которые понадобятся одному повторению ячейки."""
    requests = {(1, StatisticForm.T_TYPE)}
    if run.hypothesis is not None:
        requests.add((dgp.p, StatisticForm.F_TYPE))
    if run.wants(InferenceKind.DWH):
        requests.add((len(run.dwh_sub_indices), StatisticForm.F_TYPE))
    return requests


class ExperimentService:
    def __init__(self, workers: int = 1, record_timings: bool = True, table: CriticalValueTable | None = None) -> None:
        self.workers = workers
        self.record_timings = record_timings
        self.table = table or default_table()
        logger.info("ExperimentService initialized.")

    def tasks(self, grid: Sequence[tuple[DgpConfig, RunConfig]], replications: int) -> list[ReplicationTask]:
        if replications < 1:
            raise ConfigError(f"Нужно replications >= 1, получено {replications}")
        tasks = []
        for cell, (dgp, run) in enumerate(grid):
            # разрешаются один раз в родительском процессе; воркеры получают готовые значения
            critical_values = self.table.resolve(sorted(required_critical_values(dgp, run)))
            for replication, seed in enumerate(replication_seeds(dgp.seed, replications)):
                tasks.append(
                    ReplicationTask(
                        cell=cell,
                        replication=replication,
                        dgp=dgp.model_copy(update={"seed": seed}),
                        run=run,
                        record_timings=self.record_timings,
                        critical_values=critical_values,
                    )
                )
        return tasks

    def run_experiment(
        self, grid: Sequence[tuple[DgpConfig, RunConfig]], replications: int
    ) -> tuple[pd.DataFrame, pd.DataFrame]:
        tasks = self.tasks(grid, replications)
        logger.info(f"Running {len(tasks)} replications over {len(grid)} cells with {self.workers} workers")
        rows: list[dict[str, Any]] = []
        if self.workers == 1:
            for task in tasks:
                rows.extend(run_replication(task))
        else:
            with ProcessPoolExecutor(max_workers=self.workers) as executor:
                future_to_task = {executor.submit(run_replication, task): task for task in tasks}
                for future in as_completed(future_to_task):
                    task = future_to_task[future]
                    try:
                        rows.extend(future.result())
                    except Exception as e:
                        logger.error(f"Replication {task.replication} of cell {task.cell} crashed: {e}")
                        raise

        order = {method: k for k, method in enumerate(METHODS)}
        results = pd.DataFrame(rows)
        results["method_order"] = results["method"].map(order)
        results = results.sort_values(["cell", "method_order", "replication"], kind="stable")
        results = results.drop(columns="method_order").reset_index(drop=True)
        summary = summarize(results)
        failures = int(summary["failures"].sum())
        if failures:
            logger.warning(f"{failures} method runs failed and were excluded from the summary")
        return results, summary

    @staticmethod
    def write_report(results: pd.DataFrame, summary: pd.DataFrame, output_dir: Path) -> tuple[Path, Path]:
        output_dir.mkdir(parents=True, exist_ok=True)
        summary_path = output_dir / "summary.csv"
        results_path = output_dir / "replications.csv"
        summary.to_csv(summary_path, index=False, float_format="%.6g")
        results.to_csv(results_path, index=False, float_format="%.10g")
        logger.info(f"Experiment report written to {output_dir}")
        return summary_path, results_path


experiment_service: ExperimentService | None = None
