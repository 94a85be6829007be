"""Negligibility tests and the radius searches built on them.

A ball is gamma-negligible for ``Omega`` when ``cap(closed ball minus Omega)
<= gamma * cap(closed ball)``.  The interior capacitary radius is the
supremum of radii of such balls.  The search here scans a declared radius
grid from the top down; at each radius it ranks lattice centres by the
measure of ``B_r(c) minus Omega`` (all centres at once, by FFT correlation),
discards centres that the isoperimetric inequality already rules out, and
runs capacity solves on the few best remaining ones.  Every capacity value
is cached by mask content, so translated copies and repeated calls with
other gammas reuse earlier solves.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, optimize, signal, special

from .capacity import CapacityEstimate, capacity_grid
from .constants import InvalidParameterError, ball_capacity, check_gamma
from .geometry import (
    Ball,
    CompactMask,
    Node,
    ball,
    ball_mask,
    clip_ball_complement,
    mask_measure,
    node_aligned_bbox,
    voxelize,
)

STATUSES = ("finite", "infinite", "zero")
KINDS = ("capacitary", "measure", "essential")


@dataclass
class SearchGrid:
    """Declared search: ascending radii, centre region ``bbox`` and voxel size ``h``.

    Centres form a lattice with spacing ``spacing`` (default: the smallest
    radius step) anchored at the bbox centre and snapped to the cell-centre
    lattice ``k h``.
    """

    radii: tuple
    bbox: tuple
    h: float
    spacing: float | None = None

    def __post_init__(self):
        self.radii = tuple(float(r) for r in self.radii)
        if not self.radii:
            raise InvalidParameterError("radius grid is empty")
        if any(r <= 0 for r in self.radii) or list(self.radii) != sorted(set(self.radii)):
            raise InvalidParameterError("radius grid must be positive and strictly ascending")
        lo, hi = (np.asarray(b, dtype=float) for b in self.bbox)
        if lo.shape != hi.shape or np.any(hi < lo):
            raise InvalidParameterError("search bbox corners out of order")
        self.bbox = (lo, hi)
        if not self.h > 0:
            raise InvalidParameterError("h must be positive")

    @classmethod
    def uniform(cls, r_min: float, r_max: float, steps: int, bbox, h: float, spacing=None) -> "SearchGrid":
        if steps < 1:
            raise InvalidParameterError("need at least one radius")
        radii = np.linspace(r_min, r_max, steps) if steps > 1 else np.array([r_max])
        return cls(tuple(radii), bbox, h, spacing)

    @property
    def n(self) -> int:
        return len(self.bbox[0])

    @property
    def step(self) -> float:
        if len(self.radii) == 1:
            return 2.0 * self.h
        return float(np.min(np.diff(self.radii)))

    @property
    def center_spacing(self) -> float:
        s = self.step if self.spacing is None else float(self.spacing)
        return max(1, int(round(s / self.h))) * self.h

    def scaled(self, s: float) -> "SearchGrid":
        return SearchGrid(tuple(s * r for r in self.radii), (s * self.bbox[0], s * self.bbox[1]),
                          s * self.h, None if self.spacing is None else s * self.spacing)

    def to_json(self) -> dict:
        return {
            "radii": list(self.radii),
            "bbox": [self.bbox[0].tolist(), self.bbox[1].tolist()],
            "h": self.h,
            "center_spacing": self.center_spacing,
            "radius_step": self.step,
        }


@dataclass
class CapacityParams:
    """Capacity-solve settings shared by the searches.

    ``top_k`` caps the capacity-tested centres per radius; ``slack``
    loosens the isoperimetric measure prefilter; ``screen`` enables the
    coarse subset solves that reject clearly non-negligible balls early.
    """

    outer_factor: float = 8.0
    tol: float = 1e-8
    top_k: int = 4
    slack: float = 1.5
    screen: bool = True

    def to_json(self) -> dict:
        return dict(self.__dict__)


class CapacityCache:
    """Grid capacities keyed by cropped mask content (up to lattice symmetries).

    Also holds the measure maps of the centre lattices, keyed by domain,
    radius and lattice.
    """

    def __init__(self):
        self._store: dict = {}
        self.measure: dict = {}
        self.hits = 0
        self.solves = 0

    @staticmethod
    def canonical(occ: np.ndarray) -> tuple:
        """Key invariant under axis permutations and reflections of the cell lattice.

        The discrete capacity is invariant under these symmetries, so
        mirrored or rotated copies of a mask share one solve.
        """
        best = None
        n = occ.ndim
        for perm in itertools.permutations(range(n)):
            t = occ.transpose(perm)
            for flips in itertools.product((False, True), repeat=n):
                v = t[tuple(slice(None, None, -1) if f else slice(None) for f in flips)]
                k = (v.shape, hashlib.sha1(np.ascontiguousarray(v).tobytes()).hexdigest())
                if best is None or k < best:
                    best = k
        return best

    def value(self, mask: CompactMask, params: CapacityParams) -> CapacityEstimate:
        """Grid capacity of ``mask`` without an error estimate (cached)."""
        m = mask.crop()
        if m.count == 0:
            return CapacityEstimate(0.0, "grid", m.h, 0.0)
        key = (round(m.h, 15), self.canonical(m.occupancy), params.outer_factor, params.tol)
        if key in self._store:
            self.hits += 1
            return self._store[key]
        self.solves += 1
        est, _ = capacity_grid(m, params.outer_factor, params.tol, error_estimate=False)
        self._store[key] = est
        return est

    def get(self, mask: CompactMask, params: CapacityParams, coarse: CompactMask | None = None) -> CapacityEstimate:
        """Capacity with error indicator ``|cap(h) - cap(2h)|``.

        ``coarse`` is the same set voxelized at ``2h``; without it the mask
        is coarsened by majority.
        """
        fine = self.value(mask, params)
        if coarse is None:
            coarse, rule = mask.coarsen(), "majority"
        else:
            rule = "revoxelized"
        c2 = self.value(coarse, params).value
        details = dict(fine.details, coarse_value=c2, coarse_rule=rule)
        return CapacityEstimate(fine.value, "grid", fine.resolution, abs(fine.value - c2), details,
                                list(fine.warnings))


@dataclass
class NegligibilityVerdict:
    ball: Ball
    cap_diff: CapacityEstimate
    cap_ball: float
    ratio: float
    negligible: bool
    gamma: float
    borderline: bool = False
    screened: bool = False

    def to_json(self) -> dict:
        return {
            "ball": self.ball.to_json(),
            "cap_diff": self.cap_diff.to_json(),
            "cap_ball": self.cap_ball,
            "ratio": self.ratio,
            "negligible": self.negligible,
            "borderline": self.borderline,
            "screened": self.screened,
            "gamma": self.gamma,
        }


@dataclass
class RadiusResult:
    radius: float
    witness: Ball | None
    status: str
    search_resolution: dict
    kind: str
    warnings: list = field(default_factory=list)
    parameter: float | None = None
    truncated: bool = False
    sequence: list | None = None
    verdict: NegligibilityVerdict | None = None
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.status not in STATUSES or self.kind not in KINDS:
            raise ValueError(f"bad status/kind {self.status!r}/{self.kind!r}")
        if (self.status == "infinite") != math.isinf(self.radius):
            raise ValueError("status 'infinite' must go with the infinite radius sentinel")

    @property
    def gap(self) -> float:
        """Distance from the reported radius to the nearest tested larger radius."""
        return float(self.details.get("gap", self.search_resolution.get("radius_step", 0.0)))

    def relative_gap(self) -> float:
        return self.gap / self.radius if self.status == "finite" and self.radius > 0 else 0.0

    def to_json(self) -> dict:
        return {
            "radius": "inf" if math.isinf(self.radius) else self.radius,
            "witness": None if self.witness is None else self.witness.to_json(),
            "status": self.status,
            "kind": self.kind,
            "parameter": self.parameter,
            "truncated": self.truncated,
            "warnings": list(self.warnings),
            "search_resolution": self.search_resolution,
            "sequence": None if self.sequence is None else [
                {"R": R, "radius": r.to_json()["radius"], "status": r.status, "truncated": r.truncated}
                for R, r in self.sequence],
            "verdict": None if self.verdict is None else self.verdict.to_json(),
            "details": self.details,
        }


# ---------------------------------------------------------------------------
# single-ball verdicts


def _verdict_from(ball_: Ball, est: CapacityEstimate, gamma: float, screened=False) -> NegligibilityVerdict:
    cap_b = ball_capacity(ball_.dim, ball_.radius)
    ratio = est.value / cap_b
    margin = est.error_indicator / cap_b
    borderline = (not screened) and abs(ratio - gamma) <= margin
    negligible = ratio <= gamma and not borderline and not screened
    return NegligibilityVerdict(ball_, est, cap_b, ratio, negligible, gamma, borderline, screened)


# capacitance of the unit cube in units of 4 pi (known to about 7 digits)
CUBE_CAPACITANCE = 0.6606785


def _component_bound(mask: CompactMask) -> float:
    """Subadditive upper bound on the capacity of the mask cells taken as closed cubes.

    A single-cell component is a cube of side h; larger components are
    bounded by their circumscribed ball.
    """
    m = mask.crop()
    if m.count > 4096:
        return math.inf
    labels, k = ndimage.label(m.occupancy, structure=np.ones((3,) * m.n, dtype=bool))
    total = 0.0
    for sl_idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        idx = np.nonzero(labels[sl] == sl_idx)
        pts = np.stack([i + s.start for i, s in zip(idx, sl)], axis=1) * m.h
        c = pts.mean(axis=0)
        if len(pts) == 1 and m.n == 3:
            total += 4.0 * math.pi * CUBE_CAPACITANCE * m.h
            continue
        r = float(np.sqrt(((pts - c) ** 2).sum(axis=1).max())) + 0.5 * m.h * math.sqrt(m.n)
        total += ball_capacity(m.n, r)
    return total


def _evaluate(mask: CompactMask, ball_: Ball, gamma: float, params: CapacityParams,
              cache: CapacityCache, coarse=None) -> NegligibilityVerdict:
    """Verdict for one ball: analytic bound, then coarse screens, then the fine solve.

    ``coarse()`` returns the set voxelized at ``2h`` for the error indicator.
    """
    if mask.count == 0:
        return _verdict_from(ball_, CapacityEstimate(0.0, "grid", mask.h, 0.0), gamma)
    cap_b = ball_capacity(ball_.dim, ball_.radius)
    bound = _component_bound(mask)
    if bound <= gamma * cap_b:
        est = CapacityEstimate(bound, "analytic", mask.h, 0.0, {"upper_bound": "components"})
        return _verdict_from(ball_, est, gamma)
    if params.screen:
        # coarse solves on subsets of the mask: capacity is monotone and the
        # discrete value sits below the continuum one, so exceeding gamma
        # here already decides the ball is not negligible
        sub2 = mask.coarsen("all")
        for m in (sub2.coarsen("all"), sub2):
            if m.count == 0:
                continue
            est = cache.value(m, params)
            if est.value / cap_b > gamma:
                return _verdict_from(ball_, est, gamma, screened=True)
    return _verdict_from(ball_, cache.get(mask, params, None if coarse is None else coarse()), gamma)


def is_negligible(spec: Node, ball_: Ball, gamma: float, *, h: float,
                  params: CapacityParams | None = None,
                  cache: CapacityCache | None = None) -> NegligibilityVerdict:
    """Capacity of the closed ball minus ``spec`` against ``gamma`` times the ball capacity.

    A ratio within the capacity error indicator below ``gamma`` is marked
    borderline and not counted as negligible.
    """
    gamma = check_gamma(gamma)
    params = params or CapacityParams()
    cache = cache or CapacityCache()
    mask = clip_ball_complement(spec, ball_, h)
    if mask.count == 0:
        return _verdict_from(ball_, CapacityEstimate(0.0, "grid", h, 0.0), gamma)
    return _verdict_from(ball_, cache.get(mask, params, clip_ball_complement(spec, ball_, 2 * h)), gamma)


# ---------------------------------------------------------------------------
# centre lattice and measure map


def _lattice(search: SearchGrid, r: float, h: float, spacing: float, clip=None) -> list:
    """Centres ``c0 + k * spacing`` within the bbox dilated by ``r`` (and within ``clip``).

    Every centre lies on the cell-centre lattice ``k h``.
    """
    lo, hi = search.bbox
    lo, hi = lo - r, hi + r
    if clip is not None:
        lo, hi = np.maximum(lo, clip[0]), np.minimum(hi, clip[1])
    c0 = np.round(0.5 * (search.bbox[0] + search.bbox[1]) / h) * h
    axes = []
    for a in range(len(lo)):
        kmin = math.ceil((lo[a] - c0[a]) / spacing - 1e-9)
        kmax = math.floor((hi[a] - c0[a]) / spacing + 1e-9)
        axes.append(c0[a] + np.arange(kmin, kmax + 1) * spacing)
    return axes


def _cap_fraction(t: float, n: int) -> float:
    """Fraction of a unit n-ball beyond a hyperplane at distance ``t`` from its centre."""
    if t >= 1.0:
        return 0.0
    return 0.5 * float(special.betainc((n + 1) / 2, 0.5, 1.0 - t * t))


def _useful_region(spec: Node, r: float, h: float, limit: float, n: int):
    """Box (possibly infinite) outside which every centre has measure fraction above ``limit``.

    A centre beyond a face of the axis extent of ``Omega`` by ``t`` sees
    ``Omega`` only inside a cap, so the fraction of ``B_r`` outside
    ``Omega`` is at least ``1 - cap(t / r)``.
    """
    b = spec.extent()
    if b is None or limit >= 1.0 or not np.isfinite(np.concatenate(b)).any():
        return None
    if limit <= 0.5:
        t = 0.0
    else:
        t = r * optimize.brentq(lambda s: _cap_fraction(s, n) - (1.0 - limit), 0.0, 1.0)
    pad = t + h * math.sqrt(n)
    return np.asarray(b[0], float) - pad, np.asarray(b[1], float) + pad


def _measure_map(spec: Node, axes, r: float, h: float) -> tuple[np.ndarray, int]:
    """Approximate cell counts of ``B_r(c) minus spec`` for every centre of the lattice ``axes``.

    Single-precision FFT correlation; counts may be off by one and are
    recomputed exactly for any centre that is actually used.  Also returns
    the cell count of the voxel ball itself.
    """
    kernel = ball_mask(Ball((0.0,) * len(axes), r), h).occupancy
    ball_cells = int(kernel.sum())
    shape = tuple(len(ax) for ax in axes)
    if min(shape) == 0:
        return np.zeros(shape, dtype=np.int64), ball_cells
    m = (np.asarray(kernel.shape) - 1) // 2
    lo = np.array([ax[0] for ax in axes]) - m * h
    hi = np.array([ax[-1] for ax in axes]) + m * h
    blo, bhi = node_aligned_bbox(lo, hi, h)
    region = voxelize(spec, (blo, bhi), h)
    comp = ~region.occupancy
    if not comp.any():
        return np.zeros(shape, dtype=np.int64), ball_cells
    if comp.all():
        return np.full(shape, ball_cells, dtype=np.int64), ball_cells
    counts = signal.fftconvolve(comp.astype(np.float32), kernel.astype(np.float32), mode="valid")
    # valid index j sits at region cell j + m, i.e. at coordinate blo + (j + m + 1/2) h
    idx = [np.rint((ax - blo[a]) / h - 0.5).astype(int) - m[a] for a, ax in enumerate(axes)]
    return np.rint(counts[np.ix_(*idx)]).astype(np.int64), ball_cells


def _candidates(spec: Node, search: SearchGrid, r: float, h: float, limit: float,
                cache: "CapacityCache | None" = None):
    """Lattice centres with measure fraction at most ``limit`` (up to FFT rounding), best first.

    Order: measure, then distance to the bbox centre, then coordinates.
    """
    n = search.n
    spacing = search.center_spacing
    clip = _useful_region(spec, r, h, limit, n)
    axes = _lattice(search, r, h, spacing, clip)
    key = (spec, round(r, 12), round(h, 15), tuple((round(float(ax[0]), 12), len(ax)) if len(ax) else (0.0, 0) for ax in axes))
    if cache is not None and key in cache.measure:
        counts, ball_cells = cache.measure[key]
    else:
        counts, ball_cells = _measure_map(spec, axes, r, h)
        if cache is not None:
            cache.measure[key] = (counts, ball_cells)
    frac = counts / ball_cells
    ok = np.nonzero(frac <= limit + 2.0 / ball_cells)
    if len(ok[0]) == 0:
        return []
    pts = np.stack([axes[a][ok[a]] for a in range(n)], axis=1)
    f = frac[ok]
    d = np.linalg.norm(pts - 0.5 * (search.bbox[0] + search.bbox[1]), axis=1)
    order = np.lexsort(tuple(pts[:, a] for a in reversed(range(n))) + (d, f))
    return [(tuple(float(v) for v in pts[i]), float(f[i])) for i in order]


# ---------------------------------------------------------------------------
# searches


def _search(spec: Node, search: SearchGrid, kind: str, parameter: float, test_at):
    """Top-down scan of the radius grid, one bisection step, doubling probes at the top.

    ``test_at(r, h)`` returns ``(witness_ball, verdict)`` or ``(None, verdict_or_None)``.
    """
    radii = search.radii
    res = search.to_json()
    warnings: list = []
    found = None
    for i in range(len(radii) - 1, -1, -1):
        w, v = test_at(radii[i], search.h)
        if w is not None:
            found = (i, w, v)
            break
    if found is None:
        return RadiusResult(0.0, None, "zero", res, kind, warnings, parameter,
                            details={"gap": radii[0]})
    i, w, v = found
    radius, gap = radii[i], None
    if i + 1 < len(radii):
        mid = 0.5 * (radii[i] + radii[i + 1])
        w2, v2 = test_at(mid, search.h)
        if w2 is not None:
            radius, w, v = mid, w2, v2
            gap = radii[i + 1] - mid
        else:
            gap = mid - radii[i]
        return RadiusResult(radius, w, "finite", res, kind, warnings, parameter, verdict=v,
                            details={"gap": gap})
    # top of the grid: probe 2r and 4r at the same centre and relative resolution
    probes = []
    truncated = True
    for f in (2.0, 4.0):
        pb = Ball(w.center, f * radius)
        pw, pv = test_at(f * radius, f * search.h, fixed_center=w.center)
        probes.append({"radius": pb.radius, "negligible": pw is not None})
        if pw is None:
            truncated = False
            break
        w, v = pw, pv
    if truncated:
        warnings.append(f"negligible up to the probe radius {w.radius:g}; radius presumed infinite "
                        "(search truncated, not certified)")
        return RadiusResult(w.radius, w, "finite", res, kind, warnings, parameter, truncated=True,
                            verdict=v, details={"probes": probes, "gap": w.radius})
    warnings.append("largest grid radius is negligible; extend the radius grid for a sharper value")
    return RadiusResult(radius, w, "finite", res, kind, warnings, parameter, verdict=v,
                        details={"probes": probes, "gap": radius})


def capacitary_radius(spec: Node, gamma: float, search: SearchGrid, *,
                      params: CapacityParams | None = None,
                      cache: CapacityCache | None = None) -> RadiusResult:
    """Largest grid radius with a gamma-negligible ball, refined by one bisection step.

    Pass the same ``cache`` to several calls (other gammas, nested domains)
    to reuse capacity solves.
    """
    gamma = check_gamma(gamma)
    params = params or CapacityParams()
    cache = cache if cache is not None else CapacityCache()
    n = search.n
    alpha = gamma ** (n / (n - 2))
    limit = min(1.0, params.slack * alpha)
    tested = {"verdicts": 0, "screened": 0}
    log: list = []

    def test_at(r, h, fixed_center=None):
        if fixed_center is not None:
            cands = [(fixed_center, None)]
        else:
            cands = _candidates(spec, search, r, h, limit, cache)
        last = None
        for c, _ in cands[: params.top_k]:
            b = Ball(c, r)
            v = _evaluate(clip_ball_complement(spec, b, h), b, gamma, params, cache,
                          lambda: clip_ball_complement(spec, b, 2 * h))
            tested["verdicts"] += 1
            tested["screened"] += int(v.screened)
            log.append({"radius": r, "center": list(c), "ratio": v.ratio, "level": v.cap_diff.method
                        if not v.screened else "screen", "negligible": v.negligible})
            if v.negligible:
                return b, v
            last = v
        return None, last

    solves0 = cache.solves
    out = _search(spec, search, "capacitary", gamma, test_at)
    out.details.update(tested)
    out.details["log"] = log
    out.details["capacity_solves"] = cache.solves - solves0
    out.details["params"] = params.to_json()
    return out


def measure_radius(spec: Node, alpha: float, search: SearchGrid, *,
                   cache: CapacityCache | None = None) -> RadiusResult:
    """Largest grid radius with ``mes(B_r minus Omega) <= alpha mes(B_r)`` (voxel measures)."""
    alpha = check_gamma(alpha, "alpha")

    def exact(b, h):
        frac = mask_measure(clip_ball_complement(spec, b, h)) / mask_measure(ball_mask(b, h))
        return frac <= alpha, frac

    def test_at(r, h, fixed_center=None):
        cands = [(fixed_center, None)] if fixed_center is not None else _candidates(spec, search, r, h, alpha, cache)
        # the FFT counts may be off by one: confirm the best few exactly
        for c, _ in cands[:8]:
            b = Ball(c, r)
            ok, frac = exact(b, h)
            if ok:
                return b, frac
        return None, None

    out = _search(spec, search, "measure", alpha, test_at)
    if out.verdict is not None:
        out.details["measure_fraction"] = out.verdict
        out.verdict = None
    return out


def essential_radius(spec: Node, gamma: float, R_schedule, search: SearchGrid, *,
                     center=None, params: CapacityParams | None = None,
                     cache: CapacityCache | None = None) -> RadiusResult:
    """Capacitary radius of ``spec`` minus the closed ball ``B_R(center)`` along ``R_schedule``.

    Returns the value for the last ``R`` with the whole sequence attached.
    ``R = 0`` means no ball is removed.
    """
    R_schedule = [float(R) for R in R_schedule]
    if not R_schedule or any(b <= a for a, b in zip(R_schedule, R_schedule[1:])) or R_schedule[0] < 0:
        raise InvalidParameterError("R schedule must be nonempty, nonnegative and ascending")
    cache = cache if cache is not None else CapacityCache()
    center = (0.0,) * search.n if center is None else tuple(center)
    seq = []
    for R in R_schedule:
        dom = spec if R == 0 else spec - ball(center, R)
        seq.append((R, capacitary_radius(dom, gamma, search, params=params, cache=cache)))
    last = seq[-1][1]
    out = RadiusResult(last.radius, last.witness, last.status, last.search_resolution, "essential",
                       list(last.warnings), gamma, last.truncated, seq, last.verdict,
                       dict(last.details))
    vals = [r.radius for _, r in seq]
    tol = search.step
    out.details["non_increasing"] = all(b <= a + tol for a, b in zip(vals, vals[1:]))
    out.details["R_schedule"] = R_schedule
    return out


__all__ = [
    "CapacityCache",
    "CapacityParams",
    "NegligibilityVerdict",
    "RadiusResult",
    "SearchGrid",
    "capacitary_radius",
    "essential_radius",
    "is_negligible",
    "measure_radius",
]
