import logging
import re
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import pandas as pd

from engines.errors import IngestError, SchemaError
from engines.moments import Cluster, Matrix, Observation, Record, Vector
from schemas.estimation import CsvSchema

logger = logging.getLogger(__name__)

CHUNK_SIZE = 10_000
FLOAT_FORMAT = "%.17g"
_PARSER_LINE = re.compile(r"line (\d+)")


def default_columns(d_beta: int, d_g: int) -> tuple[str, list[str], list[str]]:
    return "y", [f"x{j}" for j in range(1, d_beta + 1)], [f"z{j}" for j in range(1, d_g + 1)]


def _numeric(frame: pd.DataFrame, columns: Sequence[str], offset: int) -> Matrix:
    values = frame[list(columns)].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    bad = ~np.isfinite(values).all(axis=1)
    if bad.any():
        row = int(np.argmax(bad))
        col = columns[int(np.argmax(~np.isfinite(values[row])))]
        raw = frame[col].iloc[row]
        raise IngestError(f"нечисловое значение {raw!r} в столбце {col}", line=offset + row + 2)
    return values


def _chunks(schema: CsvSchema, chunksize: int) -> Iterator[tuple[int, pd.DataFrame]]:
    try:
        header = pd.read_csv(schema.path, nrows=0)
    except FileNotFoundError as e:
        raise IngestError(f"файл {schema.path} не найден") from e
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise IngestError(f"не удалось прочитать заголовок {schema.path}: {e}", line=1) from e
    wanted = [schema.y_col, *schema.x_cols, *schema.z_cols]
    if schema.cluster_col is not None:
        wanted.append(schema.cluster_col)
    missing = [col for col in wanted if col not in header.columns]
    if missing:
        raise IngestError(f"отсутствуют столбцы {missing}", line=1)

    offset = 0
    reader = pd.read_csv(
        schema.path,
        dtype=str,
        keep_default_na=False,
        skip_blank_lines=False,
        chunksize=chunksize,
    )
    try:
        for frame in reader:
            yield offset, frame
            offset += len(frame)
    except pd.errors.ParserError as e:
        match = _PARSER_LINE.search(str(e))
        raise IngestError(f"некорректная строка: {e}", line=int(match.group(1)) if match else None) from e


def stream_csv(schema: CsvSchema, chunksize: int = CHUNK_SIZE) -> Iterator[Record]:
    """
    Лениво читает CSV и выдаёт наблюдения в порядке файла.
    С cluster_col подряд идущие строки с одинаковым идентификатором объединяются в кластер.
    """
    if len(schema.z_cols) < len(schema.x_cols):
        raise SchemaError(f"Инструментов меньше, чем регрессоров: {len(schema.z_cols)} < {len(schema.x_cols)}")
    logger.info(f"Streaming {schema.path}: d_beta={len(schema.x_cols)}, d_g={len(schema.z_cols)}")

    current_id: str | None = None
    members: list[Observation] = []
    finished: set[str] = set()

    for offset, frame in _chunks(schema, chunksize):
        y = _numeric(frame, [schema.y_col], offset)[:, 0]
        X = _numeric(frame, schema.x_cols, offset)
        Z = _numeric(frame, schema.z_cols, offset)
        if schema.cluster_col is None:
            for i in range(len(y)):
                yield Observation(y=y[i], x=X[i], z=Z[i])
            continue

        ids = frame[schema.cluster_col].to_numpy()
        for i in range(len(y)):
            cid = str(ids[i])
            if cid != current_id:
                if cid in finished:
                    raise IngestError(f"кластер {cid} встречается не подряд", line=offset + i + 2)
                if current_id is not None:
                    finished.add(current_id)
                    yield Cluster(members=tuple(members), cluster_id=current_id)
                current_id, members = cid, []
            members.append(Observation(y=y[i], x=X[i], z=Z[i]))

    if current_id is not None:
        yield Cluster(members=tuple(members), cluster_id=current_id)


def write_csv(
    path: Path,
    y: Vector,
    X: Matrix,
    Z: Matrix,
    cluster_ids: Sequence[str] | None = None,
) -> CsvSchema:
    y_col, x_cols, z_cols = default_columns(X.shape[1], Z.shape[1])
    frame = pd.DataFrame(np.column_stack([y, X, Z]), columns=[y_col, *x_cols, *z_cols])
    cluster_col = None
    if cluster_ids is not None:
        cluster_col = "cluster"
        frame[cluster_col] = list(cluster_ids)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return CsvSchema(path=path, y_col=y_col, x_cols=x_cols, z_cols=z_cols, cluster_col=cluster_col)
