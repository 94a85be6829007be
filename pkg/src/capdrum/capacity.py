"""Wiener capacity of voxel masks.

Two independent routes are provided:

* :func:`capacity_grid` minimises the discrete Dirichlet energy with ``u = 1``
  on the mask, on a tensor grid that is uniform (spacing ``h``) around the
  mask and geometrically graded out to the outer box.  The outer Dirichlet
  data are matched to the far field ``cap * E(x - x_c)`` (the matching is a
  scalar fixed point, solved exactly from two linear solves), and the energy
  of the exterior harmonic extension is added back.
* :func:`capacity_wos` estimates the mean hitting probability of the mask
  from spheres around it with walk-on-spheres.  By Newton's theorem the
  spherical mean of the equilibrium potential on a sphere of radius ``R``
  enclosing the mask is ``cap(F) E(R)``, which turns hitting frequencies into
  capacities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .constants import ball_capacity, fundamental_solution, sphere_area, InvalidParameterError
from .geometry import CompactMask, VoxelGrid
from .linalg import CGInfo, amg_preconditioner, pcg, tensor_laplacian


@dataclass
class CapacityEstimate:
    value: float
    method: str
    resolution: float
    error_indicator: float
    details: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def relative_error(self) -> float:
        return self.error_indicator / self.value if self.value > 0 else 0.0

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "method": self.method,
            "resolution": self.resolution,
            "error_indicator": self.error_indicator,
            "details": self.details,
            "warnings": list(self.warnings),
        }


@dataclass(eq=False)
class PotentialField:
    """Discrete equilibrium potential on the tensor grid of a grid solve.

    The block ``uniform_start : uniform_start + uniform_count`` of each axis
    is the uniform part; its first node is the cell ``uniform_cell`` of the
    lattice anchored at ``lattice_origin`` with spacing ``h``.
    """

    axes: list
    values: np.ndarray
    h: float
    lattice_origin: np.ndarray
    uniform_start: tuple
    uniform_cell: tuple
    uniform_count: tuple

    def on_grid(self, grid: VoxelGrid) -> np.ndarray:
        """Potential at the cells of ``grid``, which must lie on the uniform block."""
        if not math.isclose(grid.h, self.h, rel_tol=1e-12):
            raise ValueError("grid spacing differs from the potential's lattice")
        shift = (grid.origin - self.lattice_origin) / self.h
        ishift = np.rint(shift).astype(int)
        if np.max(np.abs(shift - ishift)) > 1e-6:
            raise ValueError("grid is not aligned with the potential's lattice")
        first = ishift - np.asarray(self.uniform_cell)
        last = first + np.asarray(grid.dims)
        if np.any(first < 0) or np.any(last > np.asarray(self.uniform_count)):
            raise ValueError("grid extends beyond the uniform block of the potential")
        sl = tuple(slice(s + f, s + l) for s, f, l in zip(self.uniform_start, first, last))
        return self.values[sl]


# ---------------------------------------------------------------------------
# closed forms


def ball_potential(r: float, x_dist, n: int):
    """Equilibrium potential of the closed ball of radius ``r`` at distance ``x_dist`` from its centre."""
    if not r > 0:
        raise InvalidParameterError("radius must be positive")
    d = np.asarray(x_dist, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(d <= r, 1.0, (r / np.maximum(d, r)) ** (n - 2))
    return float(out) if out.ndim == 0 else out


def layer_potential(r1: float, r2: float, y_dist, n: int):
    """Newtonian potential of the uniformly charged layer r1 < |x| < r2 (unit density).

    Dividing by the layer volume gives the mean of E(x - y) over the layer.
    """
    if not (0 < r1 < r2):
        raise InvalidParameterError(f"need 0 < r1 < r2, got r1={r1}, r2={r2}")
    y = np.asarray(y_dist, dtype=float)
    ys = np.maximum(y, 1e-300)
    inner = np.full_like(y, (r2**2 - r1**2) / (2 * (n - 2)))
    middle = -(ys**2) / (2 * n) + r2**2 / (2 * (n - 2)) - r1**n / (n * (n - 2) * ys ** (n - 2))
    outer = (r2**n - r1**n) / (n * (n - 2) * ys ** (n - 2))
    out = np.where(y <= r1, inner, np.where(y <= r2, middle, outer))
    return float(out) if out.ndim == 0 else out


def layer_potential_derivative(r1: float, r2: float, y_dist, n: int):
    """Radial derivative of :func:`layer_potential` in ``|y|``."""
    if not (0 < r1 < r2):
        raise InvalidParameterError(f"need 0 < r1 < r2, got r1={r1}, r2={r2}")
    y = np.asarray(y_dist, dtype=float)
    ys = np.maximum(y, 1e-300)
    middle = -ys / n + r1**n / (n * ys ** (n - 1))
    outer = -(r2**n - r1**n) / (n * ys ** (n - 1))
    out = np.where(y <= r1, 0.0, np.where(y <= r2, middle, outer))
    return float(out) if out.ndim == 0 else out


def layer_volume(r1: float, r2: float, n: int) -> float:
    return sphere_area(n) * (r2**n - r1**n) / n


def capacity_ball(n: int, r: float) -> CapacityEstimate:
    return CapacityEstimate(ball_capacity(n, r), "analytic", 0.0, 0.0)


# ---------------------------------------------------------------------------
# grid solver


def _graded_axis(lo_lattice: int, hi_lattice: int, origin: float, h: float,
                 lo_target: float, hi_target: float, ratio: float, min_steps: int = 3):
    """Node coordinates: uniform lattice cells lo..hi, then graded steps out to the targets."""
    uniform = origin + (np.arange(lo_lattice, hi_lattice + 1) + 0.5) * h

    def grow(start, target, sign):
        pts, pos, s = [], start, h
        while len(pts) < min_steps or (target - pos) * sign > 0:
            s *= ratio
            pos = pos + sign * s
            pts.append(pos)
        return pts

    left = grow(uniform[0], lo_target, -1.0)[::-1]
    right = grow(uniform[-1], hi_target, 1.0)
    return np.concatenate([left, uniform, right]), len(left)


def _solve_grid(mask: CompactMask, outer_factor: float, tol: float, margin: int,
                ratio: float, cover, maxiter: int):
    m = mask.crop()
    n, h = m.n, m.h
    centroid, r_hull = m.hull()
    half = outer_factor * r_hull

    lo_cell = np.full(n, -margin)
    hi_cell = np.asarray(m.dims) - 1 + margin
    if cover is not None:
        clo = np.floor((np.asarray(cover[0], float) - m.origin) / h - 0.5 + 1e-9).astype(int)
        chi = np.ceil((np.asarray(cover[1], float) - m.origin) / h - 0.5 - 1e-9).astype(int)
        lo_cell = np.minimum(lo_cell, clo)
        hi_cell = np.maximum(hi_cell, chi)

    axes, starts = [], []
    for a in range(n):
        x, s = _graded_axis(int(lo_cell[a]), int(hi_cell[a]), m.origin[a], h,
                            centroid[a] - half, centroid[a] + half, ratio)
        axes.append(x)
        starts.append(s)
    shape = tuple(len(x) for x in axes)

    fixed_mask = np.zeros(shape, dtype=bool)
    sl = tuple(slice(s - l, s - l + d) for s, l, d in zip(starts, lo_cell, m.dims))
    fixed_mask[sl] = m.occupancy
    outer = np.zeros(shape, dtype=bool)
    for a in range(n):
        idx = [slice(None)] * n
        idx[a] = 0
        outer[tuple(idx)] = True
        idx[a] = -1
        outer[tuple(idx)] = True
    fixed = (fixed_mask | outer).ravel()
    free = ~fixed

    L = tensor_laplacian(axes)
    Lf = L[free]
    A = Lf[:, free]
    B = Lf[:, fixed]
    M = amg_preconditioner(A)

    outer_flat = outer.ravel()
    mask_flat = fixed_mask.ravel()
    grids = np.meshgrid(*axes, indexing="ij", sparse=True)
    dist = np.sqrt(sum((g - c) ** 2 for g, c in zip(grids, centroid)))
    kernel = np.broadcast_to(fundamental_solution(n, dist), shape).ravel()[outer_flat]

    # The solution is affine in the scale a of the outer data a*E(x - x_c):
    # u(a) = u0 + a*w.  Matching a to the resulting flux is a scalar
    # fixed point solved in closed form.
    u0 = np.zeros(L.shape[0])
    u0[mask_flat] = 1.0
    x0, info0 = pcg(A, -(B @ u0[fixed]), M=M, tol=tol, maxiter=maxiter)
    u0[free] = x0
    w = np.zeros(L.shape[0])
    w[outer_flat] = kernel
    x1, info1 = pcg(A, -(B @ w[fixed]), M=M, tol=tol, maxiter=maxiter)
    w[free] = x1
    flux0 = float((L @ u0)[mask_flat].sum())
    flux_w = float((L @ w)[mask_flat].sum())
    a = flux0 / (1.0 - flux_w)
    u = u0 + a * w
    Lu = L @ u
    e_box = float(u @ Lu)
    e_ext = -float(u[outer_flat] @ Lu[outer_flat])
    cap = e_box + e_ext
    info = CGInfo(info0.iterations + info1.iterations, max(info0.residual, info1.residual))
    passes = {"energy_box": e_box, "energy_exterior": e_ext, "flux": float(Lu[mask_flat].sum()),
              "condenser_capacity": flux0, "matched_scale": a, "cg_iterations": info.iterations}

    lo_viol = float(max(0.0, -u.min()))
    hi_viol = float(max(0.0, u.max() - 1.0))
    values = np.clip(u, 0.0, 1.0).reshape(shape)
    field_ = PotentialField(axes, values, h, m.origin.copy(), tuple(starts),
                            tuple(int(v) for v in lo_cell), tuple(int(v) for v in (hi_cell - lo_cell + 1)))
    details = {
        "solve": passes,
        "grid_shape": list(shape),
        "outer_half_width": half,
        "hull_radius": r_hull,
        "centroid": centroid.tolist(),
        "max_principle_violation": max(lo_viol, hi_viol),
        "residual": info.residual,
    }
    return cap, field_, details


def capacity_grid(mask: CompactMask, outer_factor: float = 8.0, tol: float = 1e-8, *,
                  margin: int = 3, ratio: float = 1.5, cover=None,
                  error_estimate: bool = True, maxiter: int = 2000):
    """Capacity of ``mask`` by discrete energy minimisation.

    Returns ``(CapacityEstimate, PotentialField | None)``.  ``cover`` is an
    optional bbox that the uniform part of the grid must contain (used when
    the potential is needed on a region larger than the mask).  The error
    indicator is ``|cap(h) - cap(2h)|`` with the mask coarsened by majority.
    """
    if outer_factor < 4:
        raise InvalidParameterError("outer_factor must be >= 4")
    if mask.n < 3:
        raise InvalidParameterError("capacity needs n >= 3")
    if mask.count == 0:
        return CapacityEstimate(0.0, "grid", mask.h, 0.0), None

    cap, field_, details = _solve_grid(mask, outer_factor, tol, margin, ratio, cover, maxiter)
    warnings = []
    if mask.count < 2**mask.n:
        warnings.append("degenerate-mask")
    if details["max_principle_violation"] > 1e-6:
        warnings.append("maximum-principle-violation")
    err = 0.0
    if error_estimate:
        coarse = mask.coarsen()
        if coarse.count == 0:
            details["coarse_value"] = 0.0
            err = cap
        else:
            cap2, _, _ = _solve_grid(coarse, outer_factor, tol, margin, ratio, None, maxiter)
            details["coarse_value"] = cap2
            err = abs(cap - cap2)
    est = CapacityEstimate(cap, "grid", mask.h, err, details, warnings)
    return est, field_


# ---------------------------------------------------------------------------
# walk on spheres


def _unit_vectors(rng: np.random.Generator, m: int, n: int) -> np.ndarray:
    v = rng.standard_normal((m, n))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _wos_batch(tree, centroid, r_hull, hit_radius, eps, start_radius, kill_radius, n, size,
               rng, max_steps):
    x = centroid + start_radius * _unit_vectors(rng, size, n)
    active = np.arange(size)
    hit = np.zeros(size, dtype=bool)
    escaped_return = np.zeros(size)
    near = 1.5 * r_hull
    for _ in range(max_steps):
        if active.size == 0:
            break
        xa = x[active]
        rc = np.linalg.norm(xa - centroid, axis=1)
        # distance to the absorbing set: balls of radius hit_radius around cell centres
        d = rc - r_hull - hit_radius
        close = rc < near
        if close.any():
            dq, _ = tree.query(xa[close])
            d[close] = dq - hit_radius
        got = close & (d <= eps)
        hit[active[got]] = True
        gone = rc >= kill_radius
        # chance that an escaped walker ever comes back to the start sphere
        escaped_return[active[gone]] = (start_radius / rc[gone]) ** (n - 2)
        keep = ~(got | gone)
        active = active[keep]
        x[active] = xa[keep] + d[keep, None] * _unit_vectors(rng, active.size, n)
    if active.size:
        raise RuntimeError(f"{active.size} walks did not terminate in {max_steps} steps")
    return hit, escaped_return


def capacity_wos(mask: CompactMask, walks: int, probe_radii=None, seed: int = 0, *,
                 kill_factor: float = 50.0, hit_radius: float | None = None,
                 shell: float | None = None, batch: int = 8192,
                 combine: str = "pooled", max_steps: int = 100000) -> CapacityEstimate:
    """Walk-on-spheres capacity estimate with standard error.

    Walks start uniformly on spheres of radius R1 < R2 around the mask
    centroid.  The absorbing set is the union of balls of radius
    ``hit_radius`` (default h/2) around the mask cell centres; a walk is a hit
    once it is within ``shell`` (default h/100) of that set, and is killed at
    ``kill_factor * R_hull``.  Killed walks are corrected exactly for their
    probability of returning to the start sphere.  Batch ``k`` of each
    radius uses a generator seeded by ``(seed, radius index, k)``, so output
    depends only on the arguments.

    ``combine="pooled"`` returns the inverse-variance mean of the two
    radii; ``"richardson"`` extrapolates linearly in ``R^(2-n)``.
    """
    if walks <= 0:
        raise InvalidParameterError("walks must be positive")
    n = mask.n
    if n < 3:
        raise InvalidParameterError("capacity needs n >= 3")
    if mask.count == 0:
        return CapacityEstimate(0.0, "wos", float(walks), 0.0)
    centroid, r_hull = mask.hull()
    if probe_radii is None:
        probe_radii = (2.0 * r_hull, 3.0 * r_hull)
    R1, R2 = (float(r) for r in probe_radii)
    if not (R1 < R2) or R1 < 2.0 * r_hull * (1 - 1e-12):
        raise InvalidParameterError("probe radii must satisfy 2*R_hull <= R1 < R2")
    kill = kill_factor * r_hull
    if kill <= R2:
        raise InvalidParameterError("kill radius must exceed the probe radii")
    tree = cKDTree(mask.inside_centers())
    rho = 0.5 * mask.h if hit_radius is None else float(hit_radius)
    eps = mask.h / 100.0 if shell is None else float(shell)
    if not (rho > 0 and eps > 0):
        raise InvalidParameterError("hit_radius and shell must be positive")
    ss = np.random.SeedSequence(seed)

    per_radius = []
    for ri, R in enumerate((R1, R2)):
        hits = 0
        ret_sum = 0.0
        done = 0
        k = 0
        while done < walks:
            size = min(batch, walks - done)
            rng = np.random.default_rng(np.random.SeedSequence(ss.entropy, spawn_key=(ri, k)))
            hit, ret = _wos_batch(tree, centroid, r_hull, rho, eps, R, kill, n, size,
                                  rng, max_steps)
            hits += int(hit.sum())
            ret_sum += float(ret.sum())
            done += size
            k += 1
        p_obs = hits / walks
        q = ret_sum / walks
        p = p_obs / (1.0 - q)
        se_p = math.sqrt(max(p_obs * (1 - p_obs), 1.0 / walks) / walks) / (1.0 - q)
        scale = ball_capacity(n, R)
        per_radius.append({"radius": R, "p_hit_observed": p_obs, "return_correction": q,
                           "p_hit": p, "capacity": p * scale, "stderr": se_p * scale})

    c1, c2 = per_radius[0]["capacity"], per_radius[1]["capacity"]
    s1, s2 = per_radius[0]["stderr"], per_radius[1]["stderr"]
    a1, a2 = R1 ** (n - 2), R2 ** (n - 2)
    rich = (a2 * c2 - a1 * c1) / (a2 - a1)
    rich_se = math.hypot(a2 * s2, a1 * s1) / (a2 - a1)
    w1, w2 = 1.0 / s1**2, 1.0 / s2**2
    pooled = (w1 * c1 + w2 * c2) / (w1 + w2)
    pooled_se = 1.0 / math.sqrt(w1 + w2)
    if combine == "pooled":
        value, se = pooled, pooled_se
    elif combine == "richardson":
        value, se = rich, rich_se
    else:
        raise InvalidParameterError(f"unknown combine mode {combine!r}")
    details = {"per_radius": per_radius, "richardson": rich, "richardson_stderr": rich_se,
               "pooled": pooled, "pooled_stderr": pooled_se, "hull_radius": r_hull,
               "kill_radius": kill, "hit_radius": rho, "shell": eps, "seed": seed, "combine": combine}
    return CapacityEstimate(value, "wos", float(walks), se, details)
