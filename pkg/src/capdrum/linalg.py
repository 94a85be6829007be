"""Preconditioned conjugate gradients for the SPD stencil systems used throughout."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pyamg
import scipy.sparse as sp


class SolverFailure(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last relative residual {residual:.3e})")
        self.residual = residual


@dataclass
class CGInfo:
    iterations: int
    residual: float


def amg_preconditioner(A: sp.spmatrix):
    """Classical (Ruge-Stuben) AMG V-cycle used as an SPD preconditioner."""
    ml = pyamg.ruge_stuben_solver(sp.csr_matrix(A), max_coarse=500)
    return ml.aspreconditioner(cycle="V")


def pcg(A, b: np.ndarray, x0: np.ndarray | None = None, M=None, tol: float = 1e-8,
        maxiter: int = 2000) -> tuple[np.ndarray, CGInfo]:
    """Solve ``A x = b`` to relative residual ``tol``.

    ``A`` and ``M`` only need ``@``.  Raises :class:`SolverFailure` when the
    iteration cap is hit first.
    """
    bnorm = float(np.linalg.norm(b))
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float, copy=True)
    if bnorm == 0.0:
        return np.zeros_like(b), CGInfo(0, 0.0)
    r = b - A @ x
    rel = float(np.linalg.norm(r)) / bnorm
    if rel <= tol:
        return x, CGInfo(0, rel)
    z = r if M is None else M @ r
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, maxiter + 1):
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0 or not math.isfinite(pAp):
            raise SolverFailure("matrix not positive definite along search direction", rel)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rel = float(np.linalg.norm(r)) / bnorm
        if rel <= tol:
            return x, CGInfo(it, rel)
        z = r if M is None else M @ r
        rz_new = float(r @ z)
        p *= rz_new / rz
        p += z
        rz = rz_new
    raise SolverFailure(f"CG did not converge in {maxiter} iterations", rel)


def tensor_laplacian(axes: list[np.ndarray]) -> sp.csr_matrix:
    """Finite-volume graph Laplacian on a tensor-product node grid.

    Edge weight along axis ``a`` is (product of dual widths on the other
    axes) / (edge length), so ``u @ L @ u`` is the discrete Dirichlet energy.
    """
    n = len(axes)
    K, W = [], []
    for x in axes:
        m = len(x)
        dx = np.diff(x)
        D = sp.diags([-np.ones(m - 1), np.ones(m - 1)], [0, 1], shape=(m - 1, m))
        K.append((D.T @ sp.diags(1.0 / dx) @ D).tocsr())
        w = np.empty(m)
        w[1:-1] = 0.5 * (x[2:] - x[:-2])
        w[0] = 0.5 * dx[0]
        w[-1] = 0.5 * dx[-1]
        W.append(sp.diags(w))
    L = None
    for a in range(n):
        term = None
        for b in range(n):
            f = K[b] if a == b else W[b]
            term = f if term is None else sp.kron(term, f, format="csr")
        L = term if L is None else L + term
    return L.tocsr()
