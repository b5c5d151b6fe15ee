"""Mean structures, the log link and variance functions.

Parameters use corner constraints: the first accident year and first
development year carry no parameter of their own, so the chain-ladder
vector is ``[gamma, alpha_2..alpha_n, beta_2..beta_n]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import IndexOutOfRange

__all__ = [
    "MeanStructure",
    "DesignBuilder",
    "LogLink",
    "VarianceKind",
    "VarianceFunction",
    "CorrelationKind",
    "ModelSpec",
    "design_row",
    "mean",
    "mean_jacobian",
]


class MeanStructure(str, Enum):
    CHAIN_LADDER = "chain_ladder"
    # per-development-year j*beta_j + lambda_j*log(j); beta_j and lambda_j are
    # not separately identifiable, so fits with this design raise SingularB
    HOERL = "hoerl"
    # parametric Hoerl curve: gamma + alpha_i + beta*j + lambda*log(j)
    HOERL_CURVE = "hoerl_curve"

    @classmethod
    def coerce(cls, value) -> "MeanStructure":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower().replace("-", "_"))


@dataclass(frozen=True)
class DesignBuilder:
    """Covariate rows ``z_ij`` for one mean structure on an ``n``-year triangle."""

    structure: MeanStructure
    n: int

    def __post_init__(self):
        object.__setattr__(self, "structure", MeanStructure.coerce(self.structure))
        if self.n < 1:
            raise ValueError("n must be positive")

    @property
    def p(self) -> int:
        n = self.n
        if self.structure is MeanStructure.CHAIN_LADDER:
            return 2 * n - 1
        if self.structure is MeanStructure.HOERL:
            return 3 * n - 2
        return n + 2

    @property
    def parameter_names(self) -> list[str]:
        n = self.n
        names = ["gamma"] + [f"alpha_{i}" for i in range(2, n + 1)]
        if self.structure is MeanStructure.HOERL_CURVE:
            return names + ["beta", "lambda"]
        names += [f"beta_{j}" for j in range(2, n + 1)]
        if self.structure is MeanStructure.HOERL:
            names += [f"lambda_{j}" for j in range(2, n + 1)]
        return names

    def row(self, i: int, j: int) -> np.ndarray:
        n = self.n
        if not (1 <= i <= n and 1 <= j <= n):
            raise IndexOutOfRange(f"cell ({i},{j}) outside 1..{n}")
        z = np.zeros(self.p)
        z[0] = 1.0
        if i > 1:
            z[i - 1] = 1.0
        if self.structure is MeanStructure.HOERL_CURVE:
            z[n] = j
            z[n + 1] = np.log(j)
        elif j > 1:
            if self.structure is MeanStructure.CHAIN_LADDER:
                z[n + j - 2] = 1.0
            else:
                z[n + j - 2] = j
                z[2 * n + j - 3] = np.log(j)
        return z

    def matrix(self, cells: Iterable[tuple[int, int]]) -> np.ndarray:
        rows = [self.row(i, j) for i, j in cells]
        if not rows:
            return np.zeros((0, self.p))
        return np.vstack(rows)

    def observed_cells(self) -> list[tuple[int, int]]:
        return [(i, j) for i in range(1, self.n + 1) for j in range(1, self.n + 2 - i)]

    def future_cells(self, i: int) -> list[tuple[int, int]]:
        return [(i, j) for j in range(self.n + 2 - i, self.n + 1)]


def design_row(builder: DesignBuilder, i: int, j: int) -> np.ndarray:
    return builder.row(i, j)


class LogLink:
    """The logarithmic link ``g(mu) = log(mu)``."""

    kind = "log"

    @staticmethod
    def link(mu):
        return np.log(mu)

    @staticmethod
    def inverse(eta):
        with np.errstate(over="ignore"):
            return np.exp(eta)

    @staticmethod
    def inverse_derivative(eta):
        with np.errstate(over="ignore"):
            return np.exp(eta)

    def __repr__(self):
        return "LogLink()"

    def __eq__(self, other):
        return isinstance(other, LogLink)

    def __hash__(self):
        return hash("log")


class VarianceKind(str, Enum):
    LINEAR = "linear"
    QUADRATIC = "quadratic"
    POWER = "power"


@dataclass(frozen=True)
class VarianceFunction:
    """``h(mu)`` in ``Var X = phi * h(mu)``.

    ``power_exponent`` is only used by the power kind and must lie in (1, 2).
    """

    kind: VarianceKind = VarianceKind.LINEAR
    power_exponent: float = 1.5

    def __post_init__(self):
        object.__setattr__(self, "kind", VarianceKind(self.kind))
        if self.kind is VarianceKind.POWER and not 1.0 < self.power_exponent < 2.0:
            raise ValueError(f"power exponent must lie in (1, 2), got {self.power_exponent}")

    @property
    def exponent(self) -> float:
        return {VarianceKind.LINEAR: 1.0, VarianceKind.QUADRATIC: 2.0}.get(self.kind, self.power_exponent)

    def __call__(self, mu):
        mu = np.asarray(mu, dtype=np.float64)
        if self.kind is VarianceKind.LINEAR:
            return mu.copy()
        if self.kind is VarianceKind.QUADRATIC:
            return mu * mu
        return mu ** self.power_exponent

    @property
    def label(self) -> str:
        if self.kind is VarianceKind.POWER:
            return f"power({self.power_exponent:g})"
        return self.kind.value


class CorrelationKind(str, Enum):
    INDEPENDENCE = "independence"
    EXCHANGEABLE = "exchangeable"
    AR1 = "ar1"
    M_DEPENDENT = "m_dependent"
    UNSTRUCTURED = "unstructured"

    @classmethod
    def coerce(cls, value) -> "CorrelationKind":
        if isinstance(value, cls):
            return value
        aliases = {"ind": cls.INDEPENDENCE, "exch": cls.EXCHANGEABLE, "mdep": cls.M_DEPENDENT, "unstr": cls.UNSTRUCTURED}
        key = str(value).lower().replace("-", "_")
        return aliases.get(key) or cls(key)

    @property
    def short(self) -> str:
        return {"independence": "ind", "exchangeable": "exch", "ar1": "ar1", "m_dependent": "mdep", "unstructured": "unstr"}[self.value]


@dataclass(frozen=True)
class ModelSpec:
    """Mean structure, link, variance function and working correlation choice.

    ``m`` is the order of the m-dependent structure and ignored otherwise.
    ``df_correction`` subtracts the parameter count from the moment
    denominators of the dispersion and correlation estimates; it is off by
    default because the uncorrected moments reproduce the reference tables.
    ``strict_pd`` rejects indefinite working correlation matrices; when off,
    an indefinite but invertible matrix is used and flagged in the fit's
    warnings.
    """

    mean_structure: MeanStructure = MeanStructure.CHAIN_LADDER
    variance: VarianceFunction = field(default_factory=VarianceFunction)
    correlation: CorrelationKind = CorrelationKind.INDEPENDENCE
    m: int = 1
    link: LogLink = field(default_factory=LogLink)
    df_correction: bool = False
    strict_pd: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mean_structure", MeanStructure.coerce(self.mean_structure))
        object.__setattr__(self, "correlation", CorrelationKind.coerce(self.correlation))
        if isinstance(self.variance, (str, VarianceKind)):
            object.__setattr__(self, "variance", VarianceFunction(VarianceKind(self.variance)))
        if self.correlation is CorrelationKind.M_DEPENDENT and self.m < 1:
            raise ValueError("m-dependent structure needs m >= 1")

    def with_correlation(self, kind, m: int | None = None) -> "ModelSpec":
        return ModelSpec(self.mean_structure, self.variance, CorrelationKind.coerce(kind),
                         self.m if m is None else m, self.link, self.df_correction, self.strict_pd)

    @property
    def label(self) -> str:
        corr = self.correlation.short
        if self.correlation is CorrelationKind.M_DEPENDENT:
            corr = f"mdep:{self.m}"
        return f"{self.mean_structure.value}/{corr}/{self.variance.label}"


def _cells_matrix(builder: DesignBuilder, cells) -> np.ndarray:
    if cells is None:
        cells = builder.observed_cells()
    return builder.matrix(cells)


def mean(builder: DesignBuilder, link: LogLink, theta: Sequence[float],
         cells: Union[Iterable[tuple[int, int]], None] = None) -> np.ndarray:
    """Fitted means ``g^-1(z_ij' theta)`` for ``cells`` (default: every observed cell)."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (builder.p,):
        raise ValueError(f"theta must have length {builder.p}")
    return link.inverse(_cells_matrix(builder, cells) @ theta)


def mean_jacobian(builder: DesignBuilder, link: LogLink, theta: Sequence[float],
                  cells: Union[Iterable[tuple[int, int]], None] = None) -> np.ndarray:
    """Rows ``d mu_ij / d theta``; under the log link each row is ``mu_ij * z_ij``."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (builder.p,):
        raise ValueError(f"theta must have length {builder.p}")
    z = _cells_matrix(builder, cells)
    return link.inverse_derivative(z @ theta)[:, None] * z
