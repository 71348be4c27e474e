import argparse
import logging
from pathlib import Path
from typing import Any, Literal, Sequence

from pydantic import Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from engines.critical_values import DEFAULT_TABLE_PATH, CriticalValueTable
from engines.errors import EstimationError
from routers.cli import CliRouter, create_parser
from services import estimator as estimator_svc
from services import experiment as experiment_svc

logger = logging.getLogger(__name__)


class Config(BaseSettings):
    LOG_LEVEL: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = Field(default="INFO")
    ESTIMATOR: Literal["s2sls", "sgmm"] = Field(default="sgmm")
    N0: int = Field(default=1000, ge=1)
    N1: int | None = Field(default=None, ge=1)
    ETA0: float = Field(default=0.0, ge=0.0)
    ALPHA_QUANTILE: float = Field(default=0.5, gt=0.0, lt=1.0)
    LEARNING_RATE_EXPONENT: float = Field(default=0.501)
    GAMMA0: float | None = Field(default=None, gt=0.0)
    EPOCHS: int = Field(default=1, ge=1)
    SHUFFLE_SEED: int | None = Field(default=None, ge=0)
    WORKERS: int = Field(default=1, ge=1)
    CRITICAL_VALUES_PATH: Path = Field(default=DEFAULT_TABLE_PATH)
    OUTPUT_DIR: Path | None = Field(default=None)
    RECORD_TIMINGS: bool = Field(default=True)

    model_config = SettingsConfigDict(
        env_file=None,
        env_file_encoding="utf-8",
    )

    def run_defaults(self) -> dict[str, Any]:
        """Значения RunConfig по умолчанию; флаги CLI их переопределяют."""
        return {
            "estimator": self.ESTIMATOR,
            "n0": self.N0,
            "n1": self.N1,
            "eta0": self.ETA0,
            "alpha_quantile": self.ALPHA_QUANTILE,
            "a": self.LEARNING_RATE_EXPONENT,
            "gamma0": self.GAMMA0,
            "epochs": self.EPOCHS,
            "shuffle_seed": self.SHUFFLE_SEED,
            "record_timings": self.RECORD_TIMINGS,
        }


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    """Разбирает аргументы командной строки: путь к env-файлу и подкоманду."""
    args = create_parser().parse_args(argv)
    logger.debug(f"Parsed arguments: command={args.command}, env_file={args.env_file}")
    return args


def load_config_from_env_file(env_file: str | None) -> Config:
    """Загружает конфигурацию из указанного файла окружения (без файла - из переменных окружения)."""
    if env_file is None:
        return Config()
    if not Path(env_file).exists():
        logger.error(f"Env file not found: {env_file}")
        raise FileNotFoundError(f"Файл '{env_file}' не найден")

    class TempConfig(Config):
        model_config = SettingsConfigDict(
            env_file=env_file,
            env_file_encoding="utf-8",
        )

    cfg = TempConfig()
    logger.info(f"Loaded config from {env_file}")
    return cfg


def configure_logging(cfg: Config) -> None:
    """Настраивает систему логирования."""
    numeric_level = getattr(logging, cfg.LOG_LEVEL.upper(), None)
    if not isinstance(numeric_level, int):
        raise ValueError(f"Неверный уровень логирования: {cfg.LOG_LEVEL}")
    logging.basicConfig(
        level=numeric_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    logger.info(f"Logging configured. Level: {cfg.LOG_LEVEL}")


def create_app(cfg: Config) -> CliRouter:
    """Фабрика приложения: таблица критических значений, сервисы и роутер CLI."""
    logger.info("Creating CLI app...")

    table = CriticalValueTable(cfg.CRITICAL_VALUES_PATH)
    estimator_svc.estimator_service = estimator_svc.EstimatorService(
        table=table,
        record_timings=cfg.RECORD_TIMINGS,
    )
    experiment_svc.experiment_service = experiment_svc.ExperimentService(
        workers=cfg.WORKERS,
        record_timings=cfg.RECORD_TIMINGS,
        table=table,
    )

    router = CliRouter(
        estimator=estimator_svc.estimator_service,
        experiment=experiment_svc.experiment_service,
        table=table,
        table_path=cfg.CRITICAL_VALUES_PATH,
        defaults=cfg.run_defaults(),
        output_dir=cfg.OUTPUT_DIR,
    )
    logger.info("App created")
    return router


def run(router: CliRouter, args: argparse.Namespace) -> int:
    """Выполняет подкоманду и превращает ошибки в код возврата."""
    try:
        return router.dispatch(args)
    except EstimationError as e:
        notes = "; ".join(getattr(e, "__notes__", []))
        logger.error(f"{type(e).__name__}: {e}" + (f" ({notes})" if notes else ""))
        return e.exit_code
    except ValidationError as e:
        logger.error(f"Invalid configuration: {e}")
        return 2
