import argparse
import logging
from itertools import product
from pathlib import Path
from typing import Any, Callable, Iterable

import pandas as pd
from pydantic import TypeAdapter

from engines.critical_values import CriticalValueTable, StatisticForm, write_table
from engines.errors import ConfigError
from engines.moments import Record
from repositories.csv_stream import stream_csv, write_csv
from repositories.dgp import generate, generate_arrays
from schemas.estimation import CsvSchema, DgpConfig, EstimateReport, RunConfig
from services.estimator import EstimatorService
from services.experiment import ExperimentService

logger = logging.getLogger(__name__)

REPORTS = TypeAdapter(list[EstimateReport])


def _names(value: str) -> list[str]:
    return [part.strip() for part in value.split(",") if part.strip()]


def _ints(value: str) -> list[int]:
    return [int(part) for part in _names(value)]


def _floats(value: str) -> list[float]:
    return [float(part) for part in _names(value)]


def _designs(value: str) -> list[tuple[int, int]]:
    designs = []
    for item in value.split(";"):
        p, q = _ints(item)
        designs.append((p, q))
    return designs


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("оценивание")
    group.add_argument("--estimator", choices=["s2sls", "sgmm"], default=None)
    group.add_argument("--n0", type=int, default=None)
    group.add_argument("--n1", type=int, default=None)
    group.add_argument("--eta0", type=float, default=None)
    group.add_argument("--alpha", type=float, default=None, help="Уровень alpha для выбора gamma0")
    group.add_argument("--a", type=float, default=None, help="Показатель убывания шага")
    group.add_argument("--gamma0", type=float, default=None)
    group.add_argument("--beta0", choices=["2sls", "zero"], default=None)
    group.add_argument("--epochs", type=int, default=None)
    group.add_argument("--shuffle-seed", type=int, default=None)
    group.add_argument("--inference", type=_names, default=None, help="plug_in,random_scaling,dwh,jtest")
    group.add_argument("--dwh-sub", type=_ints, default=None, help="Индексы подвектора для DWH")
    group.add_argument("--no-precondition", action="store_true", help="Непредобусловленный OLS-путь DWH")
    group.add_argument("--hypothesis", type=_floats, default=None)
    group.add_argument("--no-timings", action="store_true")


def _add_dgp_flags(parser: argparse.ArgumentParser, multi: bool = False) -> None:
    group = parser.add_argument_group("синтетические данные")
    if multi:
        group.add_argument("--n", type=_ints, default=[10_000], help="Список размеров выборки")
        group.add_argument("--design", type=_designs, default=[(5, 20)], help='Пары "p,q;p,q"')
    else:
        group.add_argument("--n", type=int, default=10_000)
        group.add_argument("--p", type=int, default=5)
        group.add_argument("--q", type=int, default=20)
        group.add_argument("--p-low", type=int, default=None)
        group.add_argument("--q-low", type=int, default=None)
    group.add_argument("--rho", type=float, default=0.5)
    group.add_argument("--sigma-scale", type=float, default=5.0)
    group.add_argument("--seed", type=int, default=0)
    group.add_argument("--exogenous", action="store_true", help="Убрать nu_i из ошибки")
    group.add_argument("--invalid-shift", type=float, default=0.0, help="Коэффициент при z_q в ошибке")


def create_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Онлайн-оценивание линейных IV-моделей: S2SLS и SGMM")
    parser.add_argument("--env-file", type=str, default=None)
    subparsers = parser.add_subparsers(dest="command", required=True)

    estimate = subparsers.add_parser("estimate", help="Оценить модель по CSV или синтетическим данным")
    source = estimate.add_argument_group("вход CSV")
    source.add_argument("--csv", type=Path, default=None)
    source.add_argument("--y", type=str, default="y")
    source.add_argument("--x", type=_names, default=None)
    source.add_argument("--z", type=_names, default=None)
    source.add_argument("--cluster", type=str, default=None)
    _add_dgp_flags(estimate)
    _add_run_flags(estimate)
    estimate.add_argument("--output", type=Path, default=None, help="Каталог для report.json и coefficients.csv")

    simulate = subparsers.add_parser("simulate", help="Сгенерировать синтетические данные в CSV")
    _add_dgp_flags(simulate)
    simulate.add_argument("--output", type=Path, required=True)

    experiment = subparsers.add_parser("experiment", help="Монте-Карло эксперимент")
    _add_dgp_flags(experiment, multi=True)
    _add_run_flags(experiment)
    experiment.add_argument("--replications", type=int, default=100)
    experiment.add_argument("--workers", type=int, default=None)
    experiment.add_argument("--output", type=Path, default=None)

    critvals = subparsers.add_parser("critvals", help="Критические значения random scaling")
    critvals.add_argument("--write", action="store_true", help="Пересчитать и записать таблицу")
    critvals.add_argument("--path", type=Path, default=None)
    critvals.add_argument("--max-q", type=int, default=10)
    critvals.add_argument("--q", type=int, default=1)
    critvals.add_argument("--form", choices=[form.value for form in StatisticForm], default="t_type")
    critvals.add_argument("--grid", type=int, default=10_000)
    critvals.add_argument("--reps", type=int, default=200_000)
    critvals.add_argument("--seed", type=int, default=20240501)
    return parser


def dgp_config(
    args: argparse.Namespace, n: int | None = None, p: int | None = None, q: int | None = None
) -> DgpConfig:
    p = args.p if p is None else p
    q = args.q if q is None else q
    return DgpConfig(
        n=args.n if n is None else n,
        p=p,
        q=q,
        p_low=getattr(args, "p_low", None) or p,
        q_low=getattr(args, "q_low", None) or q,
        rho=args.rho,
        sigma_scale=args.sigma_scale,
        seed=args.seed,
        endogenous=not args.exogenous,
        invalid_instrument_shift=args.invalid_shift,
    )


def coefficients_frame(reports: Iterable[EstimateReport]) -> pd.DataFrame:
    rows = [
        {
            "label": report.label,
            "epoch": report.epoch,
            "index": item.index,
            "method": item.method,
            "estimate": item.estimate,
            "low": item.low,
            "high": item.high,
            "length": item.length,
            "critical_value": item.critical_value,
        }
        for report in reports
        for item in report.intervals
    ]
    return pd.DataFrame(rows)


def tests_frame(reports: Iterable[EstimateReport]) -> pd.DataFrame:
    rows = [
        {"label": report.label, "epoch": report.epoch, "test": name, **result.model_dump()}
        for report in reports
        for name, result in report.tests.items()
    ]
    return pd.DataFrame(rows)


class CliRouter:
    """Связывает подкоманды CLI с сервисами; значения флагов имеют приоритет над конфигурацией."""

    def __init__(
        self,
        estimator: EstimatorService,
        experiment: ExperimentService,
        table: CriticalValueTable,
        table_path: Path,
        defaults: dict[str, Any],
        output_dir: Path | None = None,
    ) -> None:
        self.estimator = estimator
        self.experiment = experiment
        self.table = table
        self.table_path = table_path
        self.defaults = defaults
        self.output_dir = output_dir
        self.handlers: dict[str, Callable[[argparse.Namespace], int]] = {
            "estimate": self.estimate,
            "simulate": self.simulate,
            "experiment": self.run_experiment,
            "critvals": self.critvals,
        }
        logger.info("CliRouter initialized.")

    def dispatch(self, args: argparse.Namespace) -> int:
        logger.info(f"CLI command: {args.command}")
        return self.handlers[args.command](args)

    def run_config(self, args: argparse.Namespace, **extra: Any) -> RunConfig:
        flags = {
            "estimator": args.estimator,
            "n0": args.n0,
            "n1": args.n1,
            "eta0": args.eta0,
            "alpha_quantile": args.alpha,
            "a": args.a,
            "gamma0": args.gamma0,
            "beta0_method": args.beta0,
            "epochs": args.epochs,
            "shuffle_seed": args.shuffle_seed,
            "inference": args.inference,
            "dwh_sub_indices": args.dwh_sub,
            "hypothesis": args.hypothesis,
        }
        values = {**self.defaults, **{key: value for key, value in flags.items() if value is not None}}
        if args.no_precondition:
            values["dwh_preconditioned"] = False
        if args.no_timings:
            values["record_timings"] = False
        return RunConfig(**values, **extra)

    def _output(self, args: argparse.Namespace) -> Path | None:
        return args.output if args.output is not None else self.output_dir

    def estimate(self, args: argparse.Namespace) -> int:
        records: Iterable[Record]
        stream_length = None
        if args.csv is not None:
            if not args.x or not args.z:
                raise ConfigError("Для --csv нужны --x и --z")
            schema = CsvSchema(path=args.csv, y_col=args.y, x_cols=args.x, z_cols=args.z, cluster_col=args.cluster)
            cfg = self.run_config(args, csv=schema)
            records = stream_csv(schema)
        else:
            dgp = dgp_config(args)
            cfg = self.run_config(args, dgp=dgp)
            records = generate(dgp, cfg.n0 + dgp.n)
            stream_length = dgp.n
        if cfg.epochs > 1 or cfg.shuffle_seed is not None:
            records = list(records)

        self.estimator.record_timings = cfg.record_timings
        reports = self.estimator.estimate(records, cfg, stream_length=stream_length)

        coefficients = coefficients_frame(reports)
        tests = tests_frame(reports)
        print(coefficients.to_string(index=False))
        if not tests.empty:
            print(tests.to_string(index=False))

        output = self._output(args)
        if output is not None:
            output.mkdir(parents=True, exist_ok=True)
            (output / "report.json").write_bytes(REPORTS.dump_json(reports, indent=2))
            coefficients.to_csv(output / "coefficients.csv", index=False, float_format="%.10g")
            if not tests.empty:
                tests.to_csv(output / "tests.csv", index=False, float_format="%.10g")
            logger.info(f"Report written to {output}")
        return 0

    def simulate(self, args: argparse.Namespace) -> int:
        dgp = dgp_config(args)
        schema = write_csv(args.output, *generate_arrays(dgp))
        print(f"{dgp.n} rows -> {schema.path}")
        return 0

    def run_experiment(self, args: argparse.Namespace) -> int:
        run = self.run_config(args)
        grid = [(dgp_config(args, n=n, p=p, q=q), run) for (p, q), n in product(args.design, args.n)]
        if args.workers is not None:
            self.experiment.workers = args.workers
        self.experiment.record_timings = run.record_timings
        results, summary = self.experiment.run_experiment(grid, args.replications)
        print(summary.to_string(index=False))
        output = self._output(args)
        if output is not None:
            self.experiment.write_report(results, summary, output)
        return 0

    def critvals(self, args: argparse.Namespace) -> int:
        if args.write:
            path = args.path or self.table_path
            table = write_table(path, range(1, args.max_q + 1), args.grid, args.reps, args.seed)
            print(table.to_string(index=False))
            return 0
        value = self.table.lookup(args.q, StatisticForm(args.form))
        print(f"q={args.q} form={args.form} 95%: {value:.4f}")
        return 0
