"""Capacitary inradius and two-sided bounds for the Dirichlet fundamental frequency."""

from .constants import ExplicitConstants
from .geometry import Ball, parse_domain, load_domain
from .capacity import capacity_grid, capacity_wos
from .spectrum import domain_eigenvalue, lowest_eigenvalue
from .capradius import SearchGrid, capacitary_radius, measure_radius, essential_radius
from .bounds import two_sided, lieb_lower, essential_bounds

__version__ = "0.1.0"

__all__ = [
    "Ball",
    "ExplicitConstants",
    "SearchGrid",
    "capacitary_radius",
    "capacity_grid",
    "capacity_wos",
    "domain_eigenvalue",
    "essential_bounds",
    "essential_radius",
    "lieb_lower",
    "load_domain",
    "lowest_eigenvalue",
    "measure_radius",
    "parse_domain",
    "two_sided",
]
