"""Finite-difference oracle for the bottom of the Dirichlet spectrum.

The (2n+1)-point Laplacian acts on the inside cells of a voxel grid with
zero values outside (optionally periodic along chosen axes).  The smallest
eigenvalue comes from inverse subspace iteration: each step solves
``A Y = X`` column by column with AMG-preconditioned CG, then a
Rayleigh-Ritz step on ``span(Y)``.  A block of one is plain inverse power
iteration; a few extra vectors make convergence independent of the gap
between the first two eigenvalues.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .capacity import capacity_grid
from .constants import InvalidParameterError, kappa as kappa_of
from .geometry import Ball, Node, VoxelGrid, clip_ball_complement, node_aligned_bbox, voxelize_aligned
from .linalg import SolverFailure, amg_preconditioner, pcg


class EmptyDomainError(ValueError):
    """No inside cell: the infimum over an empty set, lambda = +inf by convention."""


class DegenerateTestFunctionError(ValueError):
    """The constructed test function vanishes on the grid."""


@dataclass
class EigenResult:
    lam: float
    h: float
    iterations: int
    residual: float
    extrapolated: float | None = None
    details: dict = field(default_factory=dict)
    vector: np.ndarray | None = field(default=None, repr=False)

    @property
    def best(self) -> float:
        return self.lam if self.extrapolated is None else self.extrapolated

    def relative_uncertainty(self) -> float:
        """Residual plus the extrapolation gap, relative to the reported value."""
        gap = 0.0 if self.extrapolated is None else abs(self.extrapolated - self.lam)
        return (self.residual + gap) / self.best

    def to_json(self) -> dict:
        return {
            "lambda": self.lam,
            "h": self.h,
            "iterations": self.iterations,
            "residual": self.residual,
            "extrapolated": self.extrapolated,
            "details": self.details,
        }


def _periodic_axes(periodic, n: int) -> tuple[bool, ...]:
    if periodic is None:
        return (False,) * n
    if len(periodic) and isinstance(periodic[0], (bool, np.bool_)):
        if len(periodic) != n:
            raise InvalidParameterError("periodic flags must have one entry per axis")
        return tuple(bool(p) for p in periodic)
    flags = [False] * n
    for a in periodic:
        flags[int(a)] = True
    return tuple(flags)


def dirichlet_laplacian(grid: VoxelGrid, periodic=None) -> tuple[sp.csr_matrix, np.ndarray]:
    """Difference Laplacian on the inside cells and the flat indices of those cells."""
    occ = grid.occupancy
    n = grid.n
    flags = _periodic_axes(periodic, n)
    m = grid.count
    idx = np.full(occ.shape, -1, dtype=np.int64)
    idx[occ] = np.arange(m)
    rows, cols = [], []
    for a in range(n):
        nxt = np.roll(idx, -1, axis=a)
        pair = occ & np.roll(occ, -1, axis=a)
        if not flags[a]:
            sl = [slice(None)] * n
            sl[a] = -1
            pair[tuple(sl)] = False
        i, j = idx[pair], nxt[pair]
        rows += [i, j]
        cols += [j, i]
    r = np.concatenate(rows) if rows else np.zeros(0, np.int64)
    c = np.concatenate(cols) if cols else np.zeros(0, np.int64)
    inv_h2 = 1.0 / grid.h**2
    off = sp.coo_matrix((np.full(r.size, -inv_h2), (r, c)), shape=(m, m))
    A = (sp.identity(m, format="csr") * (2 * n * inv_h2) + off).tocsr()
    A.sum_duplicates()
    return A, np.flatnonzero(occ.ravel())


def _rayleigh_ritz(A, Y):
    Q, _ = np.linalg.qr(Y)
    T = Q.T @ (A @ Q)
    w, V = np.linalg.eigh(0.5 * (T + T.T))
    return w, Q @ V


def lowest_eigenvalue(grid: VoxelGrid, tol: float = 1e-6, *, periodic=None, block: int = 4,
                      maxiter: int = 300, inner_tol: float = 1e-10, seed: int = 0) -> EigenResult:
    """Smallest eigenvalue of the discrete Dirichlet Laplacian on ``grid``.

    Stops when ``||A v - lam v|| / ||v|| <= tol``.  The eigenvector (on the
    full grid, normalised positive with max 1) is attached as ``vector``.
    """
    if grid.count == 0:
        raise EmptyDomainError("grid has no inside cell")
    A, cells = dirichlet_laplacian(grid, periodic)
    m = A.shape[0]
    k = max(1, min(block, m))
    rng = np.random.default_rng(seed)
    X = np.empty((m, k))
    X[:, 0] = 1.0
    if k > 1:
        X[:, 1:] = rng.random((m, k - 1))
    M = amg_preconditioner(A) if m > 500 else None
    lam, res, it = math.inf, math.inf, 0
    v = X[:, 0]
    if m <= k:
        w, V = np.linalg.eigh(A.toarray())
        lam, v = float(w[0]), V[:, 0]
        res = float(np.linalg.norm(A @ v - lam * v))
    else:
        w, X = _rayleigh_ritz(A, X)
        for it in range(1, maxiter + 1):
            Y = np.empty_like(X)
            for j in range(k):
                Y[:, j], _ = pcg(A, X[:, j], x0=X[:, j] / max(w[j], 1e-300), M=M,
                                 tol=inner_tol, maxiter=4000)
            w, X = _rayleigh_ritz(A, Y)
            lam, v = float(w[0]), X[:, 0]
            res = float(np.linalg.norm(A @ v - lam * v) / np.linalg.norm(v))
            if res <= tol:
                break
        else:
            raise SolverFailure(f"inverse iteration did not reach tol={tol} in {maxiter} steps", res)
    v = v / v[np.argmax(np.abs(v))]
    full = np.zeros(grid.occupancy.size)
    full[cells] = v
    details = {"cells": m, "block": k, "periodic": list(_periodic_axes(periodic, grid.n))}
    return EigenResult(lam, grid.h, it, res, None, details, full.reshape(grid.dims))


def rayleigh_quotient(grid: VoxelGrid, u, periodic=None) -> float:
    """Discrete ``int |grad u|^2 / int u^2`` for ``u`` supported on the inside cells."""
    u = np.asarray(u, dtype=float)
    if u.shape != grid.dims:
        raise InvalidParameterError(f"field shape {u.shape} does not match grid {grid.dims}")
    if np.any(u[~grid.occupancy] != 0.0):
        raise InvalidParameterError("field must vanish outside the inside cells")
    A, cells = dirichlet_laplacian(grid, periodic)
    x = u.ravel()[cells]
    den = float(x @ x)
    if den == 0.0:
        raise InvalidParameterError("field is identically zero")
    return float(x @ (A @ x)) / den


def _domain_bbox(spec: Node, bbox):
    if bbox is None:
        b = spec.bounds()
        if b is None:
            raise InvalidParameterError("unbounded domain needs an explicit bbox")
        return b
    lo, hi = bbox
    return np.asarray(lo, float), np.asarray(hi, float)


def domain_eigenvalue(spec: Node, h: float, bbox=None, *, tol: float = 1e-6, periodic=None,
                      extrapolate: bool = True, order: int = 2) -> EigenResult:
    """Oracle for ``lambda(Omega)`` on the node-aligned voxelization of ``spec``.

    With ``extrapolate`` the coarse value at ``2h`` is combined as
    ``lam_h + (lam_h - lam_2h) / (2^order - 1)``.
    """
    lo, hi = _domain_bbox(spec, bbox)
    fine = lowest_eigenvalue(voxelize_aligned(spec, (lo, hi), h), tol, periodic=periodic)
    fine.details["bbox"] = [node_aligned_bbox(lo, hi, h)[0].tolist(), node_aligned_bbox(lo, hi, h)[1].tolist()]
    if extrapolate:
        try:
            coarse = lowest_eigenvalue(voxelize_aligned(spec, (lo, hi), 2 * h), tol, periodic=periodic)
        except EmptyDomainError:
            fine.details["extrapolation"] = "coarse grid empty"
            return fine
        fine.extrapolated = fine.lam + (fine.lam - coarse.lam) / (2**order - 1)
        fine.details["coarse_lambda"] = coarse.lam
        fine.details["order"] = order
    return fine


def bbox_sequence(spec: Node, h: float, bboxes, *, tol: float = 1e-6, periodic=None,
                  extrapolate: bool = False, rel_change: float = 0.01) -> tuple[list[EigenResult], int | None]:
    """Oracle values over growing bboxes of an unbounded domain.

    Returns the results and the index of the first bbox whose value changed
    by less than ``rel_change`` from the previous one (``None`` if never).
    """
    results, stable = [], None
    for b in bboxes:
        r = domain_eigenvalue(spec, h, b, tol=tol, periodic=periodic, extrapolate=extrapolate)
        if results and stable is None:
            prev = results[-1].best
            if abs(r.best - prev) <= rel_change * prev:
                stable = len(results)
        results.append(r)
    return results, stable


# ---------------------------------------------------------------------------
# the cutoff-times-potential test function


@dataclass
class TestFunctionReport:
    __test__ = False

    ball: Ball
    kappa: float
    rayleigh: float
    cutoff_bound: float
    potential_sup_check: float
    cutoff_slope: float = 0.0
    negligible: bool | None = None
    flagged: bool = False
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "ball": self.ball.to_json(),
            "kappa": self.kappa,
            "rayleigh": self.rayleigh,
            "cutoff_bound": self.cutoff_bound,
            "cutoff_slope": self.cutoff_slope,
            "potential_sup_check": self.potential_sup_check,
            "negligible": self.negligible,
            "flagged": self.flagged,
            "details": self.details,
        }


def cutoff(dist, r: float, kappa: float):
    """Radial cutoff: 1 on B_{(1-kappa) r}, linear down to 0 at radius r."""
    return np.clip((r - np.asarray(dist, float)) / (kappa * r), 0.0, 1.0)


def paper_test_function_bound(spec: Node, ball_: Ball, gamma: float, h: float, *,
                              outer_factor: float = 4.0, verdict=None, cap_tol: float = 1e-8) -> TestFunctionReport:
    """Rayleigh quotient of ``eta * (1 - P_F)`` on ``Omega`` intersected with ``B_r``.

    ``F`` is the voxel set of the closed ball minus ``Omega``, dilated by one
    cell; ``P_F`` is its discrete equilibrium potential and ``eta`` the
    radial cutoff with margin ``kappa(gamma, n)``.  When ``verdict`` is not
    given the negligibility of the ball is evaluated first; a
    non-negligible input is still processed and flagged.
    """
    n = ball_.dim
    k = kappa_of(gamma, n)
    r = ball_.radius
    c = np.asarray(ball_.center)
    if verdict is None:
        from .capradius import is_negligible

        verdict = is_negligible(spec, ball_, gamma, h=h)
    negligible = bool(verdict.negligible)

    lo, hi = node_aligned_bbox(c - r, c + r, h)
    grid = voxelize_aligned(spec, (c - r, c + r), h)
    dist = np.sqrt(sum((g - ci) ** 2 for g, ci in
                       zip(np.meshgrid(*[grid.axis_centers(a) for a in range(n)], indexing="ij"), c)))
    eta = cutoff(dist, r, k)

    mask = clip_ball_complement(spec, ball_, h)
    if mask.count:
        F = mask.dilate(1)
        _, pot = capacity_grid(F, outer_factor, cap_tol, cover=(lo, hi), error_estimate=False)
        P = np.clip(pot.on_grid(grid), 0.0, 1.0)
    else:
        P = np.zeros(grid.dims)
    one_minus = 1.0 - P
    inside = grid.occupancy & (dist < r)
    u = np.where(inside, eta * one_minus, 0.0)
    if not np.any(u):
        raise DegenerateTestFunctionError("eta (1 - P_F) vanishes on every inside cell")
    sub = VoxelGrid(grid.origin, h, inside)
    rq = rayleigh_quotient(sub, u)

    slope = 0.0
    for a in range(n):
        d = np.abs(np.diff(eta, axis=a))
        if d.size:
            slope = max(slope, float(d.max()) / h)
    bound = 2.0 / (k * r)
    if slope > bound * (1 + 1e-12):
        raise AssertionError("cutoff differences exceed the Lipschitz bound")
    used = one_minus[inside & (eta > 0)]
    return TestFunctionReport(
        ball=ball_, kappa=k, rayleigh=rq, cutoff_bound=bound,
        potential_sup_check=float(used.max()) if used.size else 0.0,
        cutoff_slope=slope, negligible=negligible, flagged=not negligible,
        details={"h": h, "cells": int(inside.sum()), "F_cells": int(mask.count),
                 "ratio": float(verdict.ratio)},
    )
