"""Two-sided eigenvalue certificates assembled from a computed radius.

``lower = c(gamma, n) r^-2`` and ``upper = C(gamma, n) r^-2``.  A zero
radius gives ``+inf`` for both; a radius flagged as truncated (negligible
balls at every probed size) gives the ``lambda = 0`` convention with both
bounds 0.  When an oracle eigenvalue is attached the report carries a
verdict, checked as ``lower (1 - eps) <= lambda <= upper (1 + eps)`` where
``eps`` adds the radius gap, the capacity error and the oracle uncertainty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .capradius import (
    CapacityCache,
    CapacityParams,
    RadiusResult,
    SearchGrid,
    capacitary_radius,
    essential_radius,
    measure_radius,
)
from .constants import ExplicitConstants, check_gamma
from .geometry import Node
from .spectrum import EigenResult, domain_eigenvalue, paper_test_function_bound

VERDICTS = ("sandwich-holds", "violated-lower", "violated-upper", "oracle-missing")


def _num(x):
    if x is None:
        return None
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


@dataclass
class BoundsReport:
    kind: str
    gamma: float
    n: int
    radius: RadiusResult
    constants: ExplicitConstants
    lower: float
    upper: float | None
    verdict: str
    tolerances: dict
    oracle: EigenResult | None = None
    construction_upper: float | None = None
    flags: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if self.upper is not None and not self.lower <= self.upper:
            raise ValueError("lower bound exceeds upper bound")

    @property
    def passed(self) -> bool:
        return self.verdict in ("sandwich-holds", "oracle-missing")

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "gamma": self.gamma,
            "n": self.n,
            "radius": self.radius.to_json(),
            "constants": self.constants.to_dict(),
            "lower": _num(self.lower),
            "upper": _num(self.upper),
            "oracle_lambda": None if self.oracle is None else self.oracle.to_json(),
            "construction_upper": _num(self.construction_upper),
            "verdict": self.verdict,
            "tolerances": self.tolerances,
            "flags": self.flags,
            "warnings": list(self.warnings),
        }


def _radius_bounds(r: RadiusResult, c: float, C: float | None):
    if r.truncated:
        return 0.0, (0.0 if C is not None else None)
    if r.status == "zero":
        return math.inf, (math.inf if C is not None else None)
    if r.status == "infinite":
        return 0.0, (0.0 if C is not None else None)
    return c / r.radius**2, (None if C is None else C / r.radius**2)


def _tolerances(r: RadiusResult, oracle: EigenResult | None) -> dict:
    eps_r = r.relative_gap()
    eps_c = 0.0
    v = r.verdict
    if v is not None and hasattr(v, "cap_diff") and v.cap_ball > 0:
        eps_c = v.cap_diff.error_indicator / v.cap_ball
    eps_e = 0.0 if oracle is None else oracle.relative_uncertainty()
    return {"radius": eps_r, "capacity": eps_c, "eigen": eps_e, "total": eps_r + eps_c + eps_e}


def _verdict(lower: float, upper: float | None, r: RadiusResult, lam: float | None, eps: float) -> str:
    if lam is None:
        return "oracle-missing"
    if r.truncated or r.status == "infinite":
        # lambda = 0 convention; a finite oracle on a truncated bbox only approaches it
        return "sandwich-holds"
    if math.isinf(lower):
        return "oracle-missing"
    if lam < lower * (1.0 - eps):
        return "violated-lower"
    if upper is not None and lam > upper * (1.0 + eps):
        return "violated-upper"
    return "sandwich-holds"


def _oracle(spec: Node, h: float, oracle) -> EigenResult | None:
    if oracle is None or oracle is False:
        return None
    if isinstance(oracle, EigenResult):
        return oracle
    opts = {} if oracle is True else dict(oracle)
    return domain_eigenvalue(spec, opts.pop("h", h), **opts)


def two_sided(spec: Node, gamma: float, search: SearchGrid, *, oracle=None, construction: bool = False,
              N: int | None = None, params: CapacityParams | None = None,
              cache: CapacityCache | None = None) -> BoundsReport:
    """Certificate ``c r^-2 <= lambda <= C r^-2`` with the capacitary radius.

    ``oracle`` may be an :class:`EigenResult`, ``True`` (oracle on the
    domain's own bbox) or a dict of :func:`domain_eigenvalue` options.
    ``construction`` adds the Rayleigh quotient of the cutoff test function
    on the witness ball.
    """
    gamma = check_gamma(gamma)
    n = search.n
    consts = ExplicitConstants.evaluate(gamma, n, N)
    r = capacitary_radius(spec, gamma, search, params=params, cache=cache)
    lower, upper = _radius_bounds(r, consts.c_lower, consts.C_upper)
    orc = _oracle(spec, search.h, oracle)
    tol = _tolerances(r, orc)
    verdict = _verdict(lower, upper, r, None if orc is None else orc.best, tol["total"])
    warnings = list(r.warnings)
    cons = None
    if construction and r.status == "finite" and r.witness is not None and not r.truncated:
        rep = paper_test_function_bound(spec, r.witness, gamma, search.h, verdict=r.verdict)
        cons = rep.rayleigh
    flags = {"lambda_zero_convention": bool(r.truncated)}
    return BoundsReport("two-sided", gamma, n, r, consts, lower, upper, verdict, tol, orc, cons, flags, warnings)


def lieb_lower(spec: Node, alpha: float, search: SearchGrid, *, oracle=None,
               N: int | None = None) -> BoundsReport:
    """Lower bound ``c(gamma, n) (r_mes)^-2`` with ``gamma = alpha^((n-2)/n)``."""
    alpha = check_gamma(alpha, "alpha")
    n = search.n
    gamma = alpha ** ((n - 2) / n)
    consts = ExplicitConstants.evaluate(gamma, n, N)
    r = measure_radius(spec, alpha, search)
    lower, _ = _radius_bounds(r, consts.c_lower, None)
    orc = _oracle(spec, search.h, oracle)
    tol = _tolerances(r, orc)
    verdict = _verdict(lower, None, r, None if orc is None else orc.best, tol["total"])
    flags = {"alpha": alpha, "lambda_zero_convention": bool(r.truncated)}
    return BoundsReport("lieb", gamma, n, r, consts, lower, None, verdict, tol, orc, None, flags,
                        list(r.warnings))


def essential_bounds(spec: Node, gamma: float, R_schedule, search: SearchGrid, *, oracle=None,
                     center=None, N: int | None = None, params: CapacityParams | None = None,
                     cache: CapacityCache | None = None) -> BoundsReport:
    """Bounds on the bottom of the essential spectrum from the essential radius.

    A zero essential radius sets the ``discrete_spectrum`` flag and both
    bounds to ``+inf``.
    """
    gamma = check_gamma(gamma)
    n = search.n
    consts = ExplicitConstants.evaluate(gamma, n, N)
    r = essential_radius(spec, gamma, R_schedule, search, center=center, params=params, cache=cache)
    lower, upper = _radius_bounds(r, consts.c_lower, consts.C_upper)
    orc = _oracle(spec, search.h, oracle)
    tol = _tolerances(r, orc)
    verdict = _verdict(lower, upper, r, None if orc is None else orc.best, tol["total"])
    flags = {
        "discrete_spectrum": r.status == "zero",
        "lambda_zero_convention": bool(r.truncated),
        "non_increasing": r.details.get("non_increasing"),
    }
    return BoundsReport("essential", gamma, n, r, consts, lower, upper, verdict, tol, orc, None, flags,
                        list(r.warnings))
