"""
Доменные типы наблюдений и построение линейных моментов g_i(beta) = G_i beta + H_i.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import numpy.typing as npt

from engines.errors import InvalidInputError, SchemaError

logger = logging.getLogger(__name__)

Vector = npt.NDArray[np.float64]
Matrix = npt.NDArray[np.float64]


@dataclass(frozen=True, slots=True, eq=False)
class Observation:
    y: float
    x: Vector
    z: Vector

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=np.float64).reshape(-1)
        z = np.asarray(self.z, dtype=np.float64).reshape(-1)
        y = float(self.y)
        if z.size < x.size:
            raise SchemaError(f"Инструментов меньше, чем регрессоров: d_g={z.size} < d_beta={x.size}")
        if not (np.isfinite(y) and np.isfinite(x).all() and np.isfinite(z).all()):
            raise InvalidInputError("Наблюдение содержит NaN или Inf")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)

    @property
    def d_beta(self) -> int:
        return int(self.x.size)

    @property
    def d_g(self) -> int:
        return int(self.z.size)


@dataclass(frozen=True, slots=True, eq=False)
class Cluster:
    members: tuple[Observation, ...]
    cluster_id: str | None = None

    def __post_init__(self) -> None:
        members = tuple(self.members)
        if members:
            d_beta, d_g = members[0].d_beta, members[0].d_g
            for obs in members[1:]:
                if obs.d_beta != d_beta or obs.d_g != d_g:
                    raise SchemaError(f"Наблюдения кластера {self.cluster_id} имеют разные размерности")
        object.__setattr__(self, "members", members)

    def __len__(self) -> int:
        return len(self.members)


Record = Observation | Cluster


@dataclass(frozen=True, slots=True, eq=False)
class MomentData:
    """
    Пара (G, H) и факторы ранга r: G = z_factor @ x_factor.T,
    средняя матрица инструментов равна z_factor @ z_factor.T.
    """

    G: Matrix
    H: Vector
    z_factor: Matrix = field(repr=False)
    x_factor: Matrix = field(repr=False)

    @property
    def rank(self) -> int:
        return int(self.z_factor.shape[1])

    @property
    def z(self) -> Vector:
        return self.z_factor[:, 0]

    @property
    def x(self) -> Vector:
        return self.x_factor[:, 0]

    def residual(self, beta: Vector) -> Vector:
        return self.G @ beta + self.H


@dataclass(frozen=True, slots=True)
class Dimensions:
    d_beta: int
    d_g: int

    def __post_init__(self) -> None:
        if self.d_beta < 1 or self.d_g < self.d_beta:
            raise SchemaError(f"Недопустимые размерности: d_beta={self.d_beta}, d_g={self.d_g}")

    def validate(self, record: Record) -> None:
        members = record.members if isinstance(record, Cluster) else (record,)
        for obs in members:
            if obs.d_beta != self.d_beta or obs.d_g != self.d_g:
                raise SchemaError(
                    f"Ожидались размерности (d_beta={self.d_beta}, d_g={self.d_g}), "
                    f"получены ({obs.d_beta}, {obs.d_g})"
                )

    @classmethod
    def of(cls, record: Record) -> "Dimensions":
        obs = record.members[0] if isinstance(record, Cluster) else record
        return cls(d_beta=obs.d_beta, d_g=obs.d_g)


def moment_data(obs: Observation, dims: Dimensions | None = None) -> MomentData:
    if dims is not None:
        dims.validate(obs)
    return MomentData(
        G=np.outer(obs.z, obs.x),
        H=-obs.z * obs.y,
        z_factor=obs.z[:, None],
        x_factor=obs.x[:, None],
    )


def cluster_moment_data(c: Cluster, dims: Dimensions | None = None) -> MomentData:
    if len(c) == 0:
        raise InvalidInputError(f"Пустой кластер {c.cluster_id}")
    if dims is not None:
        dims.validate(c)
    Z = np.stack([obs.z for obs in c.members], axis=1)
    X = np.stack([obs.x for obs in c.members], axis=1)
    y = np.array([obs.y for obs in c.members])
    T = len(c)
    return MomentData(
        G=(Z @ X.T) / T,
        H=-(Z @ y) / T,
        z_factor=Z / np.sqrt(T),
        x_factor=X / np.sqrt(T),
    )


def to_moment_data(record: Record, dims: Dimensions | None = None) -> MomentData:
    if isinstance(record, Cluster):
        return cluster_moment_data(record, dims)
    return moment_data(record, dims)


def flatten(records: Iterable[Record]) -> list[Observation]:
    out: list[Observation] = []
    for record in records:
        if isinstance(record, Cluster):
            out.extend(record.members)
        else:
            out.append(record)
    return out


def stack_observations(records: Sequence[Record]) -> tuple[Vector, Matrix, Matrix]:
    """Собирает (y, X, Z) из последовательности наблюдений (кластеры разворачиваются)."""
    observations = flatten(records)
    if not observations:
        raise InvalidInputError("Пустая выборка")
    y = np.array([obs.y for obs in observations])
    X = np.stack([obs.x for obs in observations])
    Z = np.stack([obs.z for obs in observations])
    return y, X, Z


def observations_from_arrays(y: Vector, X: Matrix, Z: Matrix) -> list[Observation]:
    return [Observation(y=float(y[i]), x=X[i], z=Z[i]) for i in range(len(y))]
