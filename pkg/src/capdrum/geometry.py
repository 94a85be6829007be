"""Constructive open sets, voxel grids and compact masks.

A domain is a small CSG tree whose leaves are primitives (ball, box,
half-space, cylinder, full space, empty set).  Membership is evaluated
pointwise: ``contains(points)`` answers for the open set itself and
``contains(points, closed=True)`` for its closure, which is what a
complement needs to stay open.

All voxel grids share one layout: ``origin`` is the lower corner of cell
``(0, ..., 0)``, cells are cubes of side ``h`` and a cell is "in" a set when
its centre is.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy import ndimage

DEFAULT_MAX_CELLS = 2**27
_CHUNK_POINTS = 1 << 20


class DomainParseError(ValueError):
    """Malformed domain JSON.  ``path`` names the offending node."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class ResourceLimitError(RuntimeError):
    pass


def max_cells() -> int:
    raw = os.environ.get("CAPDRUM_MAX_CELLS")
    return int(raw) if raw else DEFAULT_MAX_CELLS


# ---------------------------------------------------------------------------
# CSG tree


class Node:
    """Base class of domain specification nodes."""

    op: str = ""

    @property
    def dim(self) -> int | None:
        return None

    def contains(self, x: np.ndarray, closed: bool = False) -> np.ndarray:
        raise NotImplementedError

    def bounds(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Axis-aligned box containing the set, or None if unbounded/unknown."""
        return None

    def extent(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Per-axis bounds, possibly infinite; None when the dimension is unknown."""
        b = self.bounds()
        if b is not None:
            return np.asarray(b[0], float), np.asarray(b[1], float)
        if self.dim is None:
            return None
        return np.full(self.dim, -np.inf), np.full(self.dim, np.inf)

    def to_json(self) -> dict:
        raise NotImplementedError

    # convenience combinators
    def __or__(self, other: "Node") -> "Node":
        return Union((self, other))

    def __and__(self, other: "Node") -> "Node":
        return Intersection((self, other))

    def __invert__(self) -> "Node":
        return Complement(self)

    def __sub__(self, other: "Node") -> "Node":
        return Intersection((self, Complement(other)))


def _vec(v) -> tuple[float, ...]:
    return tuple(float(t) for t in v)


@dataclass(frozen=True)
class BallNode(Node):
    center: tuple[float, ...]
    radius: float
    op: str = field(default="ball", init=False, repr=False)

    @property
    def dim(self):
        return len(self.center)

    def contains(self, x, closed=False):
        d2 = np.sum((x - np.asarray(self.center)) ** 2, axis=1)
        r2 = self.radius**2
        return d2 <= r2 if closed else d2 < r2

    def bounds(self):
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius

    def to_json(self):
        return {"op": "ball", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class BoxNode(Node):
    min: tuple[float, ...]
    max: tuple[float, ...]
    op: str = field(default="box", init=False, repr=False)

    @property
    def dim(self):
        return len(self.min)

    def contains(self, x, closed=False):
        lo, hi = np.asarray(self.min), np.asarray(self.max)
        if closed:
            return np.all((x >= lo) & (x <= hi), axis=1)
        return np.all((x > lo) & (x < hi), axis=1)

    def bounds(self):
        return np.asarray(self.min, float), np.asarray(self.max, float)

    def to_json(self):
        return {"op": "box", "min": list(self.min), "max": list(self.max)}


@dataclass(frozen=True)
class HalfSpaceNode(Node):
    """``{x : normal . x < offset}``."""

    normal: tuple[float, ...]
    offset: float
    op: str = field(default="halfspace", init=False, repr=False)

    @property
    def dim(self):
        return len(self.normal)

    def contains(self, x, closed=False):
        s = x @ np.asarray(self.normal)
        return s <= self.offset if closed else s < self.offset

    def extent(self):
        lo, hi = np.full(self.dim, -np.inf), np.full(self.dim, np.inf)
        nz = [i for i, v in enumerate(self.normal) if v != 0.0]
        if len(nz) == 1:
            i = nz[0]
            t = self.offset / self.normal[i]
            if self.normal[i] > 0:
                hi[i] = t
            else:
                lo[i] = t
        return lo, hi

    def to_json(self):
        return {"op": "halfspace", "normal": list(self.normal), "offset": self.offset}


@dataclass(frozen=True)
class CylinderNode(Node):
    """Infinite round cylinder of given radius; ``normal`` is the axis direction."""

    center: tuple[float, ...]
    radius: float
    normal: tuple[float, ...]
    op: str = field(default="cylinder", init=False, repr=False)

    @property
    def dim(self):
        return len(self.center)

    def contains(self, x, closed=False):
        a = np.asarray(self.normal, float)
        a = a / np.linalg.norm(a)
        d = x - np.asarray(self.center)
        d = d - np.outer(d @ a, a)
        d2 = np.sum(d**2, axis=1)
        r2 = self.radius**2
        return d2 <= r2 if closed else d2 < r2

    def extent(self):
        lo, hi = np.full(self.dim, -np.inf), np.full(self.dim, np.inf)
        nz = [i for i, v in enumerate(self.normal) if v != 0.0]
        if len(nz) == 1:
            for i in range(self.dim):
                if i != nz[0]:
                    lo[i] = self.center[i] - self.radius
                    hi[i] = self.center[i] + self.radius
        return lo, hi

    def to_json(self):
        return {
            "op": "cylinder",
            "center": list(self.center),
            "radius": self.radius,
            "normal": list(self.normal),
        }


@dataclass(frozen=True)
class FullNode(Node):
    op: str = field(default="full", init=False, repr=False)

    def contains(self, x, closed=False):
        return np.ones(len(x), dtype=bool)

    def to_json(self):
        return {"op": "full"}


@dataclass(frozen=True)
class EmptyNode(Node):
    op: str = field(default="empty", init=False, repr=False)

    def contains(self, x, closed=False):
        return np.zeros(len(x), dtype=bool)

    def bounds(self):
        return None

    def to_json(self):
        return {"op": "empty"}


def _common_dim(children: Sequence[Node]) -> int | None:
    dims = {c.dim for c in children if c.dim is not None}
    if len(dims) > 1:
        raise ValueError(f"children disagree on dimension: {sorted(dims)}")
    return dims.pop() if dims else None


@dataclass(frozen=True)
class Union(Node):
    args: tuple[Node, ...]
    op: str = field(default="union", init=False, repr=False)

    @property
    def dim(self):
        return _common_dim(self.args)

    def contains(self, x, closed=False):
        out = np.zeros(len(x), dtype=bool)
        for a in self.args:
            out |= a.contains(x, closed)
        return out

    def bounds(self):
        bs = [a.bounds() for a in self.args if not isinstance(a, EmptyNode)]
        if not bs or any(b is None for b in bs):
            return None
        return np.min([b[0] for b in bs], axis=0), np.max([b[1] for b in bs], axis=0)

    def extent(self):
        es = [a.extent() for a in self.args if not isinstance(a, EmptyNode)]
        if not es or any(e is None for e in es):
            return super().extent()
        return np.min([e[0] for e in es], axis=0), np.max([e[1] for e in es], axis=0)

    def to_json(self):
        return {"op": "union", "args": [a.to_json() for a in self.args]}


@dataclass(frozen=True)
class Intersection(Node):
    args: tuple[Node, ...]
    op: str = field(default="intersection", init=False, repr=False)

    @property
    def dim(self):
        return _common_dim(self.args)

    def contains(self, x, closed=False):
        out = np.ones(len(x), dtype=bool)
        for a in self.args:
            out &= a.contains(x, closed)
        return out

    def bounds(self):
        bs = [a.bounds() for a in self.args]
        bs = [b for b in bs if b is not None]
        if not bs:
            return None
        return np.max([b[0] for b in bs], axis=0), np.min([b[1] for b in bs], axis=0)

    def extent(self):
        es = [e for e in (a.extent() for a in self.args) if e is not None]
        if not es:
            return super().extent()
        return np.max([e[0] for e in es], axis=0), np.min([e[1] for e in es], axis=0)

    def to_json(self):
        return {"op": "intersection", "args": [a.to_json() for a in self.args]}


@dataclass(frozen=True)
class Complement(Node):
    """Interior of the complement: open mode tests ``not closure(child)``."""

    child: Node
    op: str = field(default="complement", init=False, repr=False)

    @property
    def dim(self):
        return self.child.dim

    def contains(self, x, closed=False):
        return ~self.child.contains(x, not closed)

    def to_json(self):
        return {"op": "complement", "args": [self.child.to_json()]}


@dataclass(frozen=True)
class Translate(Node):
    child: Node
    shift: tuple[float, ...]
    op: str = field(default="translate", init=False, repr=False)

    @property
    def dim(self):
        return len(self.shift)

    def contains(self, x, closed=False):
        return self.child.contains(x - np.asarray(self.shift), closed)

    def bounds(self):
        b = self.child.bounds()
        if b is None:
            return None
        s = np.asarray(self.shift)
        return b[0] + s, b[1] + s

    def extent(self):
        e = self.child.extent()
        if e is None:
            return None
        s = np.asarray(self.shift)
        return e[0] + s, e[1] + s

    def to_json(self):
        return {"op": "translate", "shift": list(self.shift), "args": [self.child.to_json()]}


@dataclass(frozen=True)
class Scale(Node):
    child: Node
    factor: float
    op: str = field(default="scale", init=False, repr=False)

    @property
    def dim(self):
        return self.child.dim

    def contains(self, x, closed=False):
        return self.child.contains(x / self.factor, closed)

    def bounds(self):
        b = self.child.bounds()
        if b is None:
            return None
        return b[0] * self.factor, b[1] * self.factor

    def extent(self):
        e = self.child.extent()
        if e is None:
            return None
        return e[0] * self.factor, e[1] * self.factor

    def to_json(self):
        return {"op": "scale", "factor": self.factor, "args": [self.child.to_json()]}


@dataclass(frozen=True)
class PeriodicArray(Node):
    """Union of copies ``child + sum_j i_j lattice[j]`` with ``0 <= i_j < counts[j]``."""

    child: Node
    lattice: tuple[tuple[float, ...], ...]
    counts: tuple[int, ...]
    op: str = field(default="periodic", init=False, repr=False)

    @property
    def dim(self):
        return len(self.lattice[0])

    def contains(self, x, closed=False):
        L = np.asarray(self.lattice, float)
        counts = np.asarray(self.counts)
        b = self.child.bounds()
        out = np.zeros(len(x), dtype=bool)
        if b is None or L.shape[0] != L.shape[1]:
            for idx in itertools.product(*(range(c) for c in self.counts)):
                out |= self.child.contains(x - np.asarray(idx) @ L, closed)
            return out
        # only copies whose bounding box can reach the point are tested
        Linv = np.linalg.inv(L)
        corners = np.array(list(itertools.product(*zip(b[0], b[1]))))
        tc = corners @ Linv
        tlo, thi = tc.min(axis=0), tc.max(axis=0)
        t = x @ Linv
        first = np.ceil(t - thi - 1e-9).astype(np.int64)
        span = [int(math.floor(w + 1e-9)) + 1 for w in (thi - tlo)]
        for d in itertools.product(*(range(s) for s in span)):
            idx = first + np.asarray(d)
            ok = np.all((idx >= 0) & (idx < counts), axis=1)
            if not ok.any():
                continue
            pts = x[ok] - idx[ok] @ L
            hit = self.child.contains(pts, closed)
            sel = np.flatnonzero(ok)[hit]
            out[sel] = True
        return out

    def bounds(self):
        b = self.child.bounds()
        if b is None:
            return None
        L = np.asarray(self.lattice, float)
        far = (np.asarray(self.counts) - 1)[:, None] * L
        lo = b[0] + np.minimum(far, 0).sum(axis=0)
        hi = b[1] + np.maximum(far, 0).sum(axis=0)
        return lo, hi

    def to_json(self):
        return {
            "op": "periodic",
            "lattice": [list(v) for v in self.lattice],
            "counts": list(self.counts),
            "args": [self.child.to_json()],
        }


DomainSpec = Node

# public constructors -------------------------------------------------------


def ball(center, radius) -> BallNode:
    if not radius > 0:
        raise ValueError(f"ball radius must be positive, got {radius}")
    return BallNode(_vec(center), float(radius))


def box(lo, hi) -> BoxNode:
    lo, hi = _vec(lo), _vec(hi)
    if len(lo) != len(hi) or any(a >= b for a, b in zip(lo, hi)):
        raise ValueError(f"box corners must be ordered, got {lo} and {hi}")
    return BoxNode(lo, hi)


def halfspace(normal, offset) -> HalfSpaceNode:
    return HalfSpaceNode(_vec(normal), float(offset))


def cylinder(center, radius, axis) -> CylinderNode:
    if not radius > 0:
        raise ValueError(f"cylinder radius must be positive, got {radius}")
    if not np.any(np.asarray(axis, float)):
        raise ValueError("cylinder axis must be nonzero")
    return CylinderNode(_vec(center), float(radius), _vec(axis))


def full() -> FullNode:
    return FullNode()


def empty() -> EmptyNode:
    return EmptyNode()


def union(*args: Node) -> Union:
    return Union(tuple(args))


def intersection(*args: Node) -> Intersection:
    return Intersection(tuple(args))


def complement(child: Node) -> Complement:
    return Complement(child)


def translate(child: Node, shift) -> Translate:
    return Translate(child, _vec(shift))


def scale(child: Node, factor: float) -> Scale:
    if not factor > 0:
        raise ValueError(f"scale factor must be positive, got {factor}")
    return Scale(child, float(factor))


def periodic(child: Node, lattice, counts) -> PeriodicArray:
    lattice = tuple(_vec(v) for v in lattice)
    counts = tuple(int(c) for c in counts)
    if len(lattice) != len(counts) or any(c < 1 for c in counts):
        raise ValueError("periodic array needs one positive count per lattice vector")
    return PeriodicArray(child, lattice, counts)


def slab(half_width: float, axis: int = 2, n: int = 3) -> Node:
    e = np.zeros(n)
    e[axis] = 1.0
    return intersection(halfspace(e, half_width), halfspace(-e, half_width))


# JSON ----------------------------------------------------------------------

_ALIASES = {
    "half-space": "halfspace",
    "full-space": "full",
    "translation": "translate",
    "scaling": "scale",
    "periodic-array": "periodic",
}


def parse_domain(obj: Any, path: str = "$") -> Node:
    """Build a domain tree from its JSON form; errors name the node path."""
    if not isinstance(obj, dict):
        raise DomainParseError(path, f"expected an object, got {type(obj).__name__}")
    if "op" not in obj:
        raise DomainParseError(path, "missing 'op'")
    op = _ALIASES.get(obj["op"], obj["op"])

    def need(key):
        if key not in obj:
            raise DomainParseError(path, f"'{op}' node needs field '{key}'")
        return obj[key]

    def kids(exactly=None):
        args = need("args")
        if not isinstance(args, list) or not args:
            raise DomainParseError(path, "'args' must be a nonempty list")
        if exactly is not None and len(args) != exactly:
            raise DomainParseError(path, f"'{op}' takes exactly {exactly} argument(s)")
        return [parse_domain(a, f"{path}.args[{i}]") for i, a in enumerate(args)]

    try:
        if op == "ball":
            node = ball(need("center"), need("radius"))
        elif op == "box":
            node = box(need("min"), need("max"))
        elif op == "halfspace":
            node = halfspace(need("normal"), need("offset"))
        elif op == "cylinder":
            node = cylinder(need("center"), need("radius"), need("normal"))
        elif op == "full":
            node = full()
        elif op == "empty":
            node = empty()
        elif op == "union":
            node = union(*kids())
        elif op == "intersection":
            node = intersection(*kids())
        elif op == "complement":
            node = complement(kids(1)[0])
        elif op == "translate":
            node = translate(kids(1)[0], need("shift"))
        elif op == "scale":
            node = scale(kids(1)[0], need("factor"))
        elif op == "periodic":
            node = periodic(kids(1)[0], need("lattice"), need("counts"))
        else:
            raise DomainParseError(path, f"unknown op {obj['op']!r}")
        node.dim  # dimension consistency of children
    except DomainParseError:
        raise
    except (TypeError, ValueError) as exc:
        raise DomainParseError(path, str(exc)) from exc
    return node


def load_domain(path: str | Path) -> Node:
    p = Path(path)
    try:
        obj = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DomainParseError("$", f"invalid JSON in {p}: {exc}") from exc
    return parse_domain(obj)


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"ball radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", _vec(self.center))

    @property
    def dim(self) -> int:
        return len(self.center)

    def to_json(self) -> dict:
        return {"center": list(self.center), "radius": self.radius}


@dataclass(eq=False)
class VoxelGrid:
    origin: np.ndarray
    h: float
    occupancy: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        if self.h <= 0:
            raise ValueError("grid spacing must be positive")
        if self.occupancy.ndim != len(self.origin) or min(self.occupancy.shape) < 1:
            raise ValueError("occupancy shape does not match origin")

    @property
    def dims(self) -> tuple[int, ...]:
        return self.occupancy.shape

    @property
    def n(self) -> int:
        return len(self.origin)

    @property
    def count(self) -> int:
        return int(self.occupancy.sum())

    def axis_centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.dims[axis]) + 0.5) * self.h

    def centers(self, index=None) -> np.ndarray:
        """Centres of all cells (or of ``index``, a tuple of index arrays) as (m, n)."""
        if index is None:
            index = np.indices(self.dims).reshape(self.n, -1)
        idx = np.asarray(index)
        return self.origin + (idx.T + 0.5) * self.h

    def inside_centers(self) -> np.ndarray:
        return self.centers(np.nonzero(self.occupancy))

    def upper(self) -> np.ndarray:
        return self.origin + np.asarray(self.dims) * self.h


class CompactMask(VoxelGrid):
    """Voxel set standing for a compact set F (cells whose centre lies in F)."""

    def nonzero_bbox(self) -> tuple[np.ndarray, np.ndarray] | None:
        idx = np.nonzero(self.occupancy)
        if len(idx[0]) == 0:
            return None
        lo = np.array([i.min() for i in idx])
        hi = np.array([i.max() for i in idx])
        return lo, hi

    def crop(self, pad: int = 0) -> "CompactMask":
        b = self.nonzero_bbox()
        if b is None:
            return self
        lo, hi = b[0] - pad, b[1] + pad
        shape = hi - lo + 1
        occ = np.zeros(tuple(shape), dtype=bool)
        src_lo = np.maximum(lo, 0)
        src_hi = np.minimum(hi + 1, self.dims)
        dst = tuple(slice(a - l, b - l) for a, b, l in zip(src_lo, src_hi, lo))
        src = tuple(slice(a, b) for a, b in zip(src_lo, src_hi))
        occ[dst] = self.occupancy[src]
        return CompactMask(self.origin + lo * self.h, self.h, occ)

    def dilate(self, cells: int = 1) -> "CompactMask":
        """Grow by ``cells`` in the max-norm (3^n structuring element)."""
        m = self.crop(pad=cells)
        st = np.ones((3,) * self.n, dtype=bool)
        occ = ndimage.binary_dilation(m.occupancy, structure=st, iterations=cells)
        return CompactMask(m.origin, m.h, occ)

    def coarsen(self, rule: str = "majority") -> "CompactMask":
        """Mask on the 2h lattice.

        A coarse cell is set when at least half (``"majority"``), all
        (``"all"``, a subset of the fine set) or any (``"any"``) of its
        children are.
        """
        m = self.crop()
        shape = tuple(int(math.ceil(s / 2)) * 2 for s in m.dims)
        occ = np.zeros(shape, dtype=np.int32)
        occ[tuple(slice(0, s) for s in m.dims)] = m.occupancy
        for ax in range(self.n):
            sl = [slice(None)] * self.n
            sl0, sl1 = list(sl), list(sl)
            sl0[ax] = slice(0, None, 2)
            sl1[ax] = slice(1, None, 2)
            occ = occ[tuple(sl0)] + occ[tuple(sl1)]
        need = {"majority": 2 ** (self.n - 1), "all": 2**self.n, "any": 1}
        if rule not in need:
            raise ValueError(f"unknown coarsening rule {rule!r}")
        return CompactMask(m.origin, 2 * m.h, occ >= need[rule])

    def hull(self) -> tuple[np.ndarray, float]:
        """Centroid of the mask cells and circumscribed radius (cells as cubes)."""
        pts = self.inside_centers()
        c = pts.mean(axis=0)
        r = float(np.sqrt(np.max(np.sum((pts - c) ** 2, axis=1)))) + 0.5 * self.h * math.sqrt(self.n)
        return c, r


def _grid_dims(lo, hi, h) -> tuple[int, ...]:
    return tuple(max(1, int(math.ceil((b - a) / h - 1e-9))) for a, b in zip(lo, hi))


def _evaluate(spec: Node, grid: VoxelGrid, closed: bool = False) -> np.ndarray:
    n = grid.n
    axes = [grid.axis_centers(a) for a in range(n)]
    rows = int(np.prod(grid.dims[1:]))
    rest = np.stack(np.meshgrid(*axes[1:], indexing="ij"), axis=-1).reshape(rows, n - 1) if n > 1 else None
    per = max(1, _CHUNK_POINTS // max(rows, 1))
    out = np.empty(grid.dims, dtype=bool)
    for s in range(0, grid.dims[0], per):
        xs = axes[0][s : s + per]
        pts = np.empty((len(xs), rows, n))
        pts[:, :, 0] = xs[:, None]
        if n > 1:
            pts[:, :, 1:] = rest[None]
        res = spec.contains(pts.reshape(-1, n), closed)
        out[s : s + len(xs)] = res.reshape((len(xs),) + grid.dims[1:])
    return out


def _empty_grid(lo, hi, h, cls=VoxelGrid) -> VoxelGrid:
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    if lo.shape != hi.shape or np.any(hi <= lo):
        raise ValueError(f"bounding box must be nonempty, got {lo} .. {hi}")
    dims = _grid_dims(lo, hi, h)
    cells = int(np.prod(dims, dtype=np.int64))
    if cells > max_cells():
        raise ResourceLimitError(f"grid of {cells} cells exceeds limit {max_cells()} (CAPDRUM_MAX_CELLS)")
    return cls(lo, h, np.zeros(dims, dtype=bool))


def voxelize(spec: Node, bbox, h: float) -> VoxelGrid:
    """Occupancy of ``spec`` on the cells tiling ``bbox = (lo, hi)`` from its lower corner."""
    lo, hi = bbox
    if h <= 0:
        raise ValueError("h must be positive")
    if h > float(np.min(np.asarray(hi, float) - np.asarray(lo, float))) + 1e-12:
        raise ValueError("h exceeds the shortest side of the bounding box")
    grid = _empty_grid(lo, hi, h)
    grid.occupancy = _evaluate(spec, grid)
    return grid


def node_aligned_bbox(lo, hi, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Smallest bbox covering [lo, hi] whose cell centres are integer multiples of h."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    kmin = np.floor(lo / h + 1e-9)
    kmax = np.ceil(hi / h - 1e-9)
    return (kmin - 0.5) * h, (kmax + 0.5) * h


def voxelize_aligned(spec: Node, bbox, h: float) -> VoxelGrid:
    """Like :func:`voxelize` but snapped to the lattice of cell centres ``k h``."""
    return voxelize(spec, node_aligned_bbox(*bbox, h), h)


def ball_mask(ball_: Ball, h: float) -> CompactMask:
    c = np.asarray(ball_.center)
    lo, hi = node_aligned_bbox(c - ball_.radius, c + ball_.radius, h)
    grid = _empty_grid(lo, hi, h, CompactMask)
    grid.occupancy = _evaluate(BallNode(ball_.center, ball_.radius), grid, closed=True)
    return grid


def compact_mask(spec: Node, h: float, bbox=None) -> CompactMask:
    """Voxel mask of the closure of a bounded ``spec`` on the node-aligned lattice."""
    if bbox is None:
        bbox = spec.bounds()
        if bbox is None:
            raise ValueError("compact set must be bounded (or give a bbox)")
    lo, hi = node_aligned_bbox(*bbox, h)
    grid = _empty_grid(lo, hi, h, CompactMask)
    grid.occupancy = _evaluate(spec, grid, closed=True)
    return grid


def clip_ball_complement(spec: Node, ball_: Ball, h: float) -> CompactMask:
    """Voxel mask of the compact set  closed(ball) minus spec."""
    mask = ball_mask(ball_, h)
    if mask.occupancy.any():
        inside = _evaluate(spec, mask)
        mask.occupancy &= ~inside
    return mask


def mask_measure(mask: VoxelGrid) -> float:
    return mask.count * mask.h**mask.n


def inradius(grid: VoxelGrid) -> float:
    """Radius of the largest ball inside the occupied cells (cells outside the grid count as exterior)."""
    if not grid.occupancy.any():
        return 0.0
    padded = np.pad(grid.occupancy, 1, constant_values=False)
    dist = ndimage.distance_transform_edt(padded)
    return max(0.0, float(dist.max()) * grid.h - 0.5 * grid.h)
