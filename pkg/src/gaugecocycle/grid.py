"""Discretised base manifolds, box charts, covers and partitions of unity.

Bases are flat unit-volume tori (``TORUS2``, ``TORUS4``) and the unit round
sphere ``SPHERE2`` in (theta, phi) parameters with cell-centred theta rows so
that the poles are never sampled.  Charts are index boxes of the base grid.
A chart that spans a whole periodic axis is periodic along it; every other
chart axis ends in a boundary handled by one-sided stencils.

Charts carry *lifted* coordinates: a torus chart that wraps past the seam
keeps increasing coordinates, so overlapping charts see the same point with
coordinates that differ by a lattice vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations

import numpy as np

from .errors import CoverGap, CoverMismatch, MarginExhausted

MANIFOLDS = ("TORUS2", "TORUS4", "SPHERE2")
MIN_MARGIN = 4


@dataclass(frozen=True, eq=False)
class BaseGrid:
    manifold: str
    dims: tuple[int, ...]

    def __post_init__(self):
        if self.manifold not in MANIFOLDS:
            raise ValueError(f"unknown manifold {self.manifold!r}")
        n = {"TORUS2": 2, "TORUS4": 4, "SPHERE2": 2}[self.manifold]
        if len(self.dims) != n:
            raise ValueError(f"{self.manifold} needs {n} dims, got {self.dims}")
        if min(self.dims) < 8:
            raise ValueError("every axis needs at least 8 points")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def periodic(self) -> tuple[bool, ...]:
        if self.manifold == "SPHERE2":
            return (False, True)
        return (True,) * self.ndim

    @property
    def lengths(self) -> tuple[float, ...]:
        if self.manifold == "SPHERE2":
            return (np.pi, 2 * np.pi)
        return (1.0,) * self.ndim

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / d for L, d in zip(self.lengths, self.dims))

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    def axis_coords(self, axis: int, index: np.ndarray) -> np.ndarray:
        """Coordinates of (possibly unwrapped) integer indices along one axis."""
        h = self.spacing[axis]
        if self.manifold == "SPHERE2" and axis == 0:
            return (np.asarray(index) + 0.5) * h
        return np.asarray(index) * h

    def _theta_weights(self, rows: np.ndarray) -> np.ndarray:
        h = self.spacing[0]
        return np.cos(rows * h) - np.cos((rows + 1) * h)

    def volume_weights(self, index_axes: tuple[np.ndarray, ...]) -> np.ndarray:
        """Exact cell volumes for the grid points with the given per-axis indices."""
        shape = tuple(len(a) for a in index_axes)
        if self.manifold == "SPHERE2":
            wt = self._theta_weights(index_axes[0]) * self.spacing[1]
            return np.broadcast_to(wt[:, None], shape).copy()
        return np.full(shape, float(np.prod(self.spacing)))

    def inverse_metric(self, index_axes: tuple[np.ndarray, ...]) -> np.ndarray:
        shape = tuple(len(a) for a in index_axes)
        out = np.ones((self.ndim,) + shape)
        if self.manifold == "SPHERE2":
            theta = self.axis_coords(0, index_axes[0])
            out[1] = (1.0 / np.sin(theta) ** 2)[:, None]
        return out

    @property
    def weights(self) -> np.ndarray:
        return self.volume_weights(tuple(np.arange(d) for d in self.dims))

    @property
    def total_volume(self) -> float:
        return 4 * np.pi if self.manifold == "SPHERE2" else 1.0


def torus(n: int, d: int) -> BaseGrid:
    return BaseGrid(f"TORUS{n}", (d,) * n)


def sphere(n_theta: int, n_phi: int | None = None) -> BaseGrid:
    return BaseGrid("SPHERE2", (n_theta, n_phi or n_theta))


@dataclass(frozen=True, eq=False)
class Chart:
    """Index box of a base grid (or a free-standing box when ``base`` is None).

    ``natural_edges`` lists (axis, side) edges that are coordinate
    singularities rather than boundaries (the sphere poles); ``taper`` lists
    the edges across which the chart's partition-of-unity bump decays.
    """

    chart_id: int
    start: tuple[int, ...]
    shape: tuple[int, ...]
    spacing: tuple[float, ...]
    periodic: tuple[bool, ...]
    margin: int
    base: BaseGrid | None = None
    natural_edges: frozenset = frozenset()
    taper: frozenset = frozenset()
    origin: tuple[float, ...] | None = None  # only for free-standing boxes

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def index_axes(self) -> tuple[np.ndarray, ...]:
        return tuple(s + np.arange(n) for s, n in zip(self.start, self.shape))

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        if self.base is None:
            org = self.origin or (0.0,) * self.ndim
            return tuple(o + h * np.arange(n) for o, h, n in zip(org, self.spacing, self.shape))
        return tuple(self.base.axis_coords(a, ix) for a, ix in enumerate(self.index_axes))

    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.coords, indexing="ij"))

    @cached_property
    def weights(self) -> np.ndarray:
        if self.base is None:
            return np.full(self.shape, float(np.prod(self.spacing)))
        return self.base.volume_weights(self.index_axes)

    @cached_property
    def inv_metric(self) -> np.ndarray:
        if self.base is None:
            return np.ones((self.ndim,) + self.shape)
        return self.base.inverse_metric(self.index_axes)

    @property
    def param_cell(self) -> float:
        """Coordinate volume of one cell, used to integrate top-degree forms."""
        return float(np.prod(self.spacing))

    @cached_property
    def global_index(self) -> np.ndarray:
        """Flat base-grid index of every chart point (shape ``self.shape``)."""
        if self.base is None:
            raise CoverMismatch("free-standing chart has no base grid")
        parts = []
        for a, ix in enumerate(self.index_axes):
            d = self.base.dims[a]
            if self.base.periodic[a]:
                ix = np.mod(ix, d)
            elif ix.min() < 0 or ix.max() >= d:
                raise ValueError(f"chart {self.chart_id} leaves the base along axis {a}")
            parts.append(ix)
        grids = np.meshgrid(*parts, indexing="ij")
        return np.ravel_multi_index(grids, self.base.dims)

    def boundary_mask(self, include_natural: bool = False) -> np.ndarray:
        """Points on a non-periodic chart edge."""
        mask = np.zeros(self.shape, dtype=bool)
        for a in range(self.ndim):
            if self.periodic[a]:
                continue
            for side, idx in ((0, 0), (1, self.shape[a] - 1)):
                if (a, side) in self.natural_edges and not include_natural:
                    continue
                sl = [slice(None)] * self.ndim
                sl[a] = idx
                mask[tuple(sl)] = True
        return mask

    def bump(self, profile: str = "smooth") -> np.ndarray:
        """Product of per-axis ramps: zero on the two outermost layers of every
        tapered edge, one beyond ``2*margin - 1`` layers from it."""
        out = np.ones(self.shape)
        width = max(2 * self.margin - 2, 1)
        for a in range(self.ndim):
            t = np.arange(self.shape[a], dtype=float)
            ramp = np.ones(self.shape[a])
            if (a, 0) in self.taper:
                ramp *= smoothstep((t - 1) / width, profile)
            if (a, 1) in self.taper:
                ramp *= smoothstep((self.shape[a] - 2 - t) / width, profile)
            sh = [1] * self.ndim
            sh[a] = -1
            out = out * ramp.reshape(sh)
        return out


def smoothstep(u: np.ndarray, profile: str = "smooth") -> np.ndarray:
    """Monotone step from 0 (u <= 0) to 1 (u >= 1) with S(u) + S(1-u) = 1."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    if profile == "cubic":
        return u * u * (3 - 2 * u)
    with np.errstate(divide="ignore", over="ignore"):
        f = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
        g = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1 - u, 1.0)), 0.0)
    return f / (f + g)


def box_chart(shape, lengths=None, origin=None, chart_id: int = 0, margin: int = MIN_MARGIN) -> Chart:
    """Free-standing, non-periodic box chart with uniform flat metric.

    ``lengths`` is the physical extent per axis between the first and last
    grid point (default: unit box).
    """
    shape = tuple(int(s) for s in shape)
    lengths = tuple(lengths or (1.0,) * len(shape))
    spacing = tuple(L / (n - 1) for L, n in zip(lengths, shape))
    return Chart(
        chart_id=chart_id,
        start=(0,) * len(shape),
        shape=shape,
        spacing=spacing,
        periodic=(False,) * len(shape),
        margin=margin,
        origin=tuple(origin) if origin is not None else None,
    )


@dataclass(frozen=True, eq=False)
class Overlap:
    mask: np.ndarray  # bool on chart i
    index: np.ndarray  # flat local index into chart j, -1 outside the overlap

    @property
    def empty(self) -> bool:
        return not self.mask.any()


@dataclass(frozen=True, eq=False)
class Cover:
    base: BaseGrid
    charts: tuple[Chart, ...]
    parent: "Cover | None" = None
    refinement_map: tuple[int, ...] | None = None
    name: str = ""
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for k, c in enumerate(self.charts):
            if c.chart_id != k:
                raise ValueError("chart ids must equal their position")
            if c.base is not self.base:
                raise CoverMismatch("chart belongs to a different base grid")
        counts = np.zeros(self.base.size, dtype=int)
        for c in self.charts:
            np.add.at(counts, c.global_index.ravel(), 1)
            if len(np.unique(c.global_index)) != c.size:
                raise ValueError(f"chart {c.chart_id} wraps onto itself")
        if counts.min() == 0:
            raise CoverGap("charts leave grid points uncovered")

    def __len__(self) -> int:
        return len(self.charts)

    @property
    def group_free_id(self) -> str:
        return self.name or f"{self.base.manifold}{self.base.dims}x{len(self.charts)}"

    def _local_lookup(self, j: int) -> np.ndarray:
        key = ("lookup", j)
        if key not in self._cache:
            table = np.full(self.base.size, -1, dtype=np.int64)
            c = self.charts[j]
            table[c.global_index.ravel()] = np.arange(c.size)
            self._cache[key] = table
        return self._cache[key]

    def overlap(self, i: int, j: int) -> Overlap:
        key = ("overlap", i, j)
        if key not in self._cache:
            idx = self._local_lookup(j)[self.charts[i].global_index]
            self._cache[key] = Overlap(idx >= 0, idx)
        return self._cache[key]

    @cached_property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        """Ordered pairs (i, j), i != j, with nonempty overlap."""
        out = []
        for i in range(len(self.charts)):
            for j in range(len(self.charts)):
                if i != j and not self.overlap(i, j).empty:
                    out.append((i, j))
        return tuple(out)

    @cached_property
    def triples(self) -> tuple[tuple[int, int, int], ...]:
        out = []
        for i, j, k in combinations(range(len(self.charts)), 3):
            m = self.triple_mask(i, j, k)
            if m.any():
                out.append((i, j, k))
        return tuple(out)

    def triple_mask(self, i: int, j: int, k: int) -> np.ndarray:
        """Points of chart i lying in charts j and k."""
        return self.overlap(i, j).mask & self.overlap(i, k).mask

    def gather(self, i: int, j: int, values: np.ndarray, fill=None) -> np.ndarray:
        """Values of a chart-j field at the points of chart i (``fill`` outside)."""
        ov = self.overlap(i, j)
        cj = self.charts[j]
        flat = values.reshape((cj.size,) + values.shape[cj.ndim:])
        out = flat[np.where(ov.mask, ov.index, 0)]
        if fill is not None:
            out = np.where(ov.mask.reshape(ov.mask.shape + (1,) * (out.ndim - ov.mask.ndim)), out, fill)
        return out

    def restrict(self, values: np.ndarray, source: Chart, target: Chart) -> np.ndarray:
        """Copy samples of a field on ``source`` to the points of ``target``."""
        table = np.full(self.base.size, -1, dtype=np.int64)
        table[source.global_index.ravel()] = np.arange(source.size)
        idx = table[target.global_index]
        if np.any(idx < 0):
            raise CoverMismatch("target chart is not contained in the source chart")
        flat = values.reshape((source.size,) + values.shape[source.ndim:])
        return flat[idx]


def restrict_array(values: np.ndarray, source: Chart, target: Chart) -> np.ndarray:
    if source.base is None or source.base is not target.base:
        raise CoverMismatch("restriction needs charts on one base grid")
    table = np.full(source.base.size, -1, dtype=np.int64)
    table[source.global_index.ravel()] = np.arange(source.size)
    idx = table[target.global_index]
    if np.any(idx < 0):
        raise CoverMismatch("target chart is not contained in the source chart")
    flat = values.reshape((source.size,) + values.shape[source.ndim:])
    return flat[idx]


def _make_chart(base, cid, start, shape, margin, natural=frozenset(), taper=None):
    periodic = tuple(base.periodic[a] and shape[a] == base.dims[a] for a in range(base.ndim))
    if taper is None:
        taper = frozenset(
            (a, s) for a in range(base.ndim) for s in (0, 1) if not periodic[a] and (a, s) not in natural
        )
    for a in range(base.ndim):
        if base.periodic[a] and shape[a] > base.dims[a]:
            raise ValueError("chart longer than the period")
        if shape[a] < 8:
            raise MarginExhausted(f"chart would have only {shape[a]} points along axis {a}")
    return Chart(
        chart_id=cid,
        start=tuple(int(s) for s in start),
        shape=tuple(int(s) for s in shape),
        spacing=base.spacing,
        periodic=periodic,
        margin=margin,
        base=base,
        natural_edges=frozenset(natural),
        taper=frozenset(taper),
    )


def torus_cover(base: BaseGrid, splits=None, margin: int = 6) -> Cover:
    """Product cover of a torus by ``splits[a]`` boxes per axis.

    A box covers one core interval of length ``d / splits[a]`` enlarged by
    ``margin`` cells on both sides; ``splits[a] == 1`` keeps the axis whole
    and periodic inside the chart.
    """
    if not base.manifold.startswith("TORUS"):
        raise CoverMismatch("torus_cover needs a torus base")
    splits = tuple(splits or (4,) * base.ndim)
    if margin < MIN_MARGIN:
        raise MarginExhausted(f"margin {margin} < {MIN_MARGIN}")
    axes = []
    for a, k in enumerate(splits):
        d = base.dims[a]
        if k == 1:
            axes.append([(0, d)])
            continue
        if d % k:
            raise ValueError(f"{d} points do not split into {k} equal cores")
        c = d // k
        if c + 2 * margin + 1 >= d:
            raise MarginExhausted("chart boxes would wrap onto themselves")
        axes.append([(q * c - margin, c + 2 * margin + 1) for q in range(k)])
    charts = []
    for cid, combo in enumerate(np.ndindex(*splits)):
        start = tuple(axes[a][q][0] for a, q in enumerate(combo))
        shape = tuple(axes[a][q][1] for a, q in enumerate(combo))
        charts.append(_make_chart(base, cid, start, shape, margin))
    return Cover(base, tuple(charts), name=f"torus{splits}m{margin}")


def single_chart_cover(base: BaseGrid) -> Cover:
    if base.manifold == "SPHERE2":
        raise CoverMismatch("the sphere has no single-chart cover")
    return torus_cover(base, (1,) * base.ndim, margin=MIN_MARGIN)


def sphere_cover(base: BaseGrid, margin: int | None = None) -> Cover:
    """Two polar-cap charts overlapping in an annulus of 2*margin rows about the equator.

    The default margin grows with resolution (6 up to n_theta = 64, n_theta/16
    beyond) so finer grids afford more refinement levels.
    """
    if base.manifold != "SPHERE2":
        raise CoverMismatch("sphere_cover needs a SPHERE2 base")
    nt, nphi = base.dims
    if margin is None:
        margin = max(6, nt // 16)
    if nt % 2:
        raise ValueError("n_theta must be even")
    half = nt // 2
    if margin < MIN_MARGIN:
        raise MarginExhausted(f"margin {margin} < {MIN_MARGIN}")
    if half - margin < 8:
        raise MarginExhausted("sphere grid too coarse for this margin")
    north = _make_chart(base, 0, (0, 0), (half + margin, nphi), margin, natural={(0, 0)})
    south = _make_chart(base, 1, (half - margin, 0), (nt - half + margin, nphi), margin, natural={(0, 1)})
    return Cover(base, (north, south), name=f"sphere2cap_m{margin}")


def default_cover(base: BaseGrid) -> Cover:
    if base.manifold == "SPHERE2":
        return sphere_cover(base)
    return torus_cover(base, (4,) * base.ndim if base.ndim == 2 else (2,) * base.ndim,
                       margin=6 if base.ndim == 2 else MIN_MARGIN)


def check_refinement(cover: Cover, min_clearance: int = 2) -> bool:
    """Every child box sits inside its parent with ``min_clearance`` cells to spare
    (except along periodic or natural parent edges)."""
    if cover.parent is None:
        return True
    for child, p in zip(cover.charts, cover.refinement_map):
        parent = cover.parent.charts[p]
        for a in range(child.ndim):
            if parent.periodic[a]:
                continue
            d = cover.base.dims[a]
            lo = child.start[a] - parent.start[a]
            if cover.base.periodic[a]:
                lo = lo % d
            hi = parent.shape[a] - (lo + child.shape[a])
            if lo < min_clearance and (a, 0) not in parent.natural_edges:
                return False
            if hi < min_clearance and (a, 1) not in parent.natural_edges:
                return False
    return True


def shrink_cover(cover: Cover, cells: int) -> Cover:
    """Shrink every chart by ``cells`` layers on each boundary edge.

    The result refines ``cover`` with the identity refinement map.
    """
    if cells == 0:
        return cover
    charts = []
    for c in cover.charts:
        if c.margin - cells < 2:
            raise MarginExhausted(f"chart {c.chart_id}: margin {c.margin} cannot lose {cells} cells")
        start, shape = list(c.start), list(c.shape)
        for a in range(c.ndim):
            if c.periodic[a]:
                continue
            if (a, 0) not in c.natural_edges:
                start[a] += cells
                shape[a] -= cells
            if (a, 1) not in c.natural_edges:
                shape[a] -= cells
        charts.append(_make_chart(cover.base, c.chart_id, start, shape, c.margin - cells,
                                  c.natural_edges, c.taper))
    try:
        return Cover(cover.base, tuple(charts), parent=cover,
                     refinement_map=tuple(range(len(charts))), name=cover.name + f"-s{cells}")
    except CoverGap as exc:
        raise MarginExhausted(str(exc)) from exc


def refine_cover(cover: Cover) -> Cover:
    """Halve every chart core along each axis; children lose 2 cells of margin.

    Raises MarginExhausted once the margin or the box size runs out, which is
    how the topology pipeline reports curvature concentrating below the
    resolvable scale.
    """
    new_margin = min(c.margin for c in cover.charts) - 2
    if new_margin < MIN_MARGIN:
        raise MarginExhausted(f"refined margin {new_margin} < {MIN_MARGIN}")
    base = cover.base
    charts, rmap = [], []
    for c in cover.charts:
        pieces = []
        for a in range(c.ndim):
            d = base.dims[a]
            if c.periodic[a]:
                if d < 2 * (2 * new_margin + 8):
                    raise MarginExhausted("periodic axis too short to split")
                h = d // 2
                pieces.append([(s, h, False, False) for s in (0, h)])
                continue
            lo_nat, hi_nat = (a, 0) in c.natural_edges, (a, 1) in c.natural_edges
            core_lo = c.start[a] + (0 if lo_nat else c.margin)
            core_hi = c.start[a] + c.shape[a] - 1 - (0 if hi_nat else c.margin)
            mid = (core_lo + core_hi) // 2
            pieces.append([(core_lo, mid - core_lo, lo_nat, False), (mid, core_hi - mid, False, hi_nat)])
        for combo in np.ndindex(*(len(p) for p in pieces)):
            # a piece touching a pole stays a whole cap: it is not cut into phi sectors
            polar = any(pieces[a][q][2] or pieces[a][q][3] for a, q in enumerate(combo))
            if polar and any(c.periodic[a] and q > 0 for a, q in enumerate(combo)):
                continue
            start, shape, natural = [], [], set()
            for a, q in enumerate(combo):
                s, length, lo_nat, hi_nat = pieces[a][q]
                if polar and c.periodic[a]:
                    start.append(0)
                    shape.append(base.dims[a])
                    continue
                lo = 0 if lo_nat else new_margin
                hi = 0 if hi_nat else new_margin
                start.append(s - lo)
                shape.append(length + lo + hi + 1)
                if lo_nat:
                    natural.add((a, 0))
                if hi_nat:
                    natural.add((a, 1))
            charts.append(_make_chart(base, len(charts), start, shape, new_margin, natural))
            rmap.append(c.chart_id)
    return Cover(base, tuple(charts), parent=cover, refinement_map=tuple(rmap), name=cover.name + "-r")


@dataclass(frozen=True, eq=False)
class PartitionOfUnity:
    cover: Cover
    weights: tuple[np.ndarray, ...]
    c_part: float

    def __getitem__(self, i: int) -> np.ndarray:
        return self.weights[i]


def build_partition_of_unity(cover: Cover, profile: str = "smooth") -> PartitionOfUnity:
    """Normalised chart bumps; records the achieved constant
    ``max_l ||d psi_l||_inf * meas(overlap)^(1/n)`` over overlapping pairs."""
    bumps = [c.bump(profile) for c in cover.charts]
    total = np.zeros(cover.base.size)
    for c, b in zip(cover.charts, bumps):
        np.add.at(total, c.global_index.ravel(), b.ravel())
    if total.min() < 1e-8:
        raise CoverGap(f"partition denominator {total.min():.3g} < 1e-8")
    weights = tuple(b / total[c.global_index] for c, b in zip(cover.charts, bumps))
    return PartitionOfUnity(cover, weights, _partition_constant(cover, weights))


def _partition_constant(cover: Cover, weights) -> float:
    from .forms import gradient_sup  # local import: forms depends on grid

    n = cover.base.ndim
    worst = 0.0
    for i, c in enumerate(cover.charts):
        grad = gradient_sup(weights[i], c)
        if grad == 0.0:
            continue
        meas = [np.sum(c.weights[cover.overlap(i, j).mask]) for j in range(len(cover)) if j != i
                and not cover.overlap(i, j).empty]
        if meas:
            worst = max(worst, grad * max(meas) ** (1.0 / n))
    return float(worst)
