"""Closed-form constants entering the capacitary two-sided eigenvalue bounds.

Every function here is a pure evaluation of a printed formula in double
precision.  Supported dimensions are ``3 <= n <= 20`` for the capacity
constants; :func:`sphere_area` also accepts ``n = 2``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

MAX_DIM = 20


class InvalidDimensionError(ValueError):
    """Dimension outside the range where a formula is defined."""


class CapacityUndefinedError(InvalidDimensionError):
    """Newtonian capacity requested for ``n < 3``."""


class InvalidParameterError(ValueError):
    """A real parameter (gamma, alpha, radius, ...) is out of range."""


def _check_dim(n: int, lowest: int = 3) -> None:
    if not isinstance(n, (int,)) or isinstance(n, bool):
        raise InvalidDimensionError(f"dimension must be an integer, got {n!r}")
    if n < lowest or n > MAX_DIM:
        raise InvalidDimensionError(f"dimension {n} outside [{lowest}, {MAX_DIM}]")


def check_gamma(gamma: float, name: str = "gamma") -> float:
    gamma = float(gamma)
    if not (0.0 < gamma < 1.0):
        raise InvalidParameterError(f"{name} must lie in (0, 1), got {gamma}")
    return gamma


def sphere_area(n: int) -> float:
    """Area of the unit sphere S^{n-1} in R^n, ``2 pi^{n/2} / Gamma(n/2)``."""
    _check_dim(n, lowest=2)
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


def ball_volume(n: int, r: float = 1.0) -> float:
    return sphere_area(n) * r**n / n


def ball_capacity(n: int, r: float) -> float:
    """Wiener capacity of the closed ball of radius ``r``: (n-2) w_n r^(n-2)."""
    if n < 3:
        raise CapacityUndefinedError(f"capacity is only defined here for n >= 3, got n={n}")
    _check_dim(n)
    if not r > 0:
        raise InvalidParameterError(f"radius must be positive, got {r}")
    return (n - 2) * sphere_area(n) * r ** (n - 2)


def fundamental_solution(n: int, dist):
    """Newtonian kernel of -Laplace, ``|x|^(2-n) / ((n-2) w_n)``.  Works on arrays."""
    if n < 3:
        raise CapacityUndefinedError("fundamental solution with power decay needs n >= 3")
    with np.errstate(divide="ignore"):
        return np.power(dist, 2.0 - n) / ((n - 2) * sphere_area(n))


def lemma_constant(n: int) -> float:
    """C_n = 4 w_n (1 - 2/n^2) in the capacity/Poincare-type ball inequality."""
    _check_dim(n)
    return 4.0 * sphere_area(n) * (1.0 - 2.0 / n**2)


def covering_multiplicity(n: int) -> int:
    """Ball-covering multiplicity bound ``floor(n ln n + n ln ln n + 5n)``."""
    _check_dim(n)
    return int(math.floor(n * math.log(n) + n * math.log(math.log(n)) + 5 * n))


def lower_constant(gamma: float, n: int, N: int | None = None) -> float:
    """c(gamma, n) = gamma n^2 (n-2) / (4 (n^2-2) N).

    ``N`` overrides the covering multiplicity (a better covering gives a
    larger constant).
    """
    gamma = check_gamma(gamma)
    _check_dim(n)
    if N is None:
        N = covering_multiplicity(n)
    if int(N) < 1:
        raise InvalidParameterError(f"covering multiplicity must be >= 1, got {N}")
    return gamma * n**2 * (n - 2) / (4.0 * (n**2 - 2) * int(N))


def kappa(gamma: float, n: int) -> float:
    """Cutoff margin min{1/(4(n-1)), (1-gamma)/(2(4n-5)gamma)}."""
    gamma = check_gamma(gamma)
    _check_dim(n)
    return min(1.0 / (4 * (n - 1)), (1.0 - gamma) / (2.0 * (4 * n - 5) * gamma))


def upper_constant(gamma: float, n: int) -> float:
    """C(gamma, n) = 32 (1-gamma)^-2 kappa^-3."""
    k = kappa(gamma, n)
    return 32.0 / ((1.0 - gamma) ** 2 * k**3)


def isoperimetric_constant(n: int) -> float:
    """A_n with mes(F) <= A_n cap(F)^(n/(n-2)), equality for balls."""
    _check_dim(n)
    w = sphere_area(n)
    return (n - 2) ** (-n / (n - 2)) * w ** (-2.0 / (n - 2)) / n


@dataclass(frozen=True)
class ExplicitConstants:
    n: int
    gamma: float
    omega_n: float
    cap_unit_ball: float
    C_lemma: float
    N_cov: int
    kappa: float
    c_lower: float
    C_upper: float
    A_iso: float

    @classmethod
    def evaluate(cls, gamma: float, n: int, N: int | None = None) -> "ExplicitConstants":
        gamma = check_gamma(gamma)
        N_cov = covering_multiplicity(n) if N is None else int(N)
        return cls(
            n=n,
            gamma=gamma,
            omega_n=sphere_area(n),
            cap_unit_ball=ball_capacity(n, 1.0),
            C_lemma=lemma_constant(n),
            N_cov=N_cov,
            kappa=kappa(gamma, n),
            c_lower=lower_constant(gamma, n, N_cov),
            C_upper=upper_constant(gamma, n),
            A_iso=isoperimetric_constant(n),
        )

    def to_dict(self) -> dict:
        return asdict(self)
