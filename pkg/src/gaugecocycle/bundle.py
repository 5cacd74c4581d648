"""Principal bundles as cocycles over a cover, with connections, gauges and curvature.

A transition field ``g_ij`` is stored on the grid of chart i and equals the
identity away from the overlap with chart j.  Both ``g_ij`` and ``g_ji``
are kept; construction derives one from the other so they are exact inverses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CoverMismatch, GroupMismatch
from .forms import FormField, exterior_derivative, maurer_cartan, wedge_bracket
from .grid import Cover, PartitionOfUnity, build_partition_of_unity
from .lie import Group, dagger, geodesic_distance, is_group_element


def _eye_where(mask: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    return np.where(mask[..., None, None], values, np.eye(n))


def gather_form(cover: Cover, i: int, j: int, comps: np.ndarray) -> np.ndarray:
    """Components of a chart-j form at the points of chart i (zero outside)."""
    moved = np.moveaxis(comps, 0, cover.charts[j].ndim)
    out = cover.gather(i, j, moved, fill=0.0)
    return np.moveaxis(out, cover.charts[i].ndim, 0)


@dataclass(frozen=True, eq=False)
class Cocycle:
    cover: Cover
    group: Group
    transitions: dict  # (i, j) -> (*chart_i.shape, N, N)

    def g(self, i: int, j: int) -> np.ndarray:
        if i == j:
            return self.group.identity(self.cover.charts[i].shape)
        try:
            return self.transitions[(i, j)]
        except KeyError:
            return self.group.identity(self.cover.charts[i].shape)

    @classmethod
    def from_function(cls, cover: Cover, group: Group, fn) -> "Cocycle":
        """Build from ``fn(i, j) -> g_ij`` sampled on chart i, called for i < j only."""
        trans = {}
        for i, j in cover.pairs:
            if i > j:
                continue
            mask = cover.overlap(i, j).mask
            gij = _eye_where(mask, np.asarray(fn(i, j), dtype=complex), group.n)
            trans[(i, j)] = gij
            trans[(j, i)] = _eye_where(cover.overlap(j, i).mask, dagger(cover.gather(j, i, gij)), group.n)
        return cls(cover, group, trans)

    @classmethod
    def trivial(cls, cover: Cover, group: Group) -> "Cocycle":
        return cls(cover, group, {})

    def inverse_residual(self) -> float:
        """max |g_ji - g_ij^{-1}| over overlap points."""
        worst = 0.0
        for i, j in self.cover.pairs:
            mask = self.cover.overlap(i, j).mask
            back = self.cover.gather(i, j, self.g(j, i))
            d = geodesic_distance(self.group, dagger(back), self.g(i, j))
            worst = max(worst, float(np.max(d[mask], initial=0.0)))
        return worst


@dataclass(frozen=True, eq=False)
class GaugeField:
    cover: Cover
    group: Group
    locals: tuple  # per chart (*shape, N, N)

    @classmethod
    def identity(cls, cover: Cover, group: Group) -> "GaugeField":
        return cls(cover, group, tuple(group.identity(c.shape) for c in cover.charts))

    def __matmul__(self, other: "GaugeField") -> "GaugeField":
        if other.cover is not self.cover:
            raise CoverMismatch("gauge fields on different covers")
        return GaugeField(self.cover, self.group, tuple(a @ b for a, b in zip(self.locals, other.locals)))

    def is_valid(self, tol: float = 1e-12) -> bool:
        return all(is_group_element(self.group, r, tol) for r in self.locals)


@dataclass(frozen=True, eq=False)
class ConnectionForm:
    cocycle: Cocycle
    locals: tuple  # FormField per chart

    @property
    def cover(self) -> Cover:
        return self.cocycle.cover

    @property
    def group(self) -> Group:
        return self.cocycle.group

    @classmethod
    def zero(cls, cocycle: Cocycle) -> "ConnectionForm":
        g = cocycle.group
        locs = []
        for c in cocycle.cover.charts:
            locs.append(FormField(c, 1, g, np.zeros((c.ndim,) + c.shape + (g.n, g.n), dtype=complex)))
        return cls(cocycle, tuple(locs))

    @classmethod
    def from_arrays(cls, cocycle: Cocycle, arrays) -> "ConnectionForm":
        g = cocycle.group
        return cls(cocycle, tuple(FormField(c, 1, g, np.asarray(a, dtype=complex))
                                  for c, a in zip(cocycle.cover.charts, arrays)))


@dataclass(frozen=True, eq=False)
class CurvatureForm:
    cover: Cover
    group: Group
    locals: tuple  # degree-2 FormField per chart


def cocycle_residual(P: Cocycle) -> float:
    """max dist(g_ij g_jk, g_ik) over triple overlaps, together with the
    pairwise consistency dist(g_ij g_ji, 1)."""
    cover, G = P.cover, P.group
    worst = P.inverse_residual()
    for i, j, k in cover.triples:
        mask = cover.triple_mask(i, j, k)
        gjk = cover.gather(i, j, P.g(j, k))
        d = geodesic_distance(G, P.g(i, j) @ gjk, P.g(i, k))
        worst = max(worst, float(np.max(d[mask], initial=0.0)))
    return worst


def transition_forms(P: Cocycle, i: int, j: int) -> np.ndarray:
    """g_ij^{-1} d g_ij on chart i (zero outside the overlap)."""
    mask = P.cover.overlap(i, j).mask
    return maurer_cartan(P.group, P.g(i, j), P.cover.charts[i], mask).comps


def gluing_residual(A: ConnectionForm) -> float:
    """max over overlaps of |A_j - (g_ij^{-1} dg_ij + g_ij^{-1} A_i g_ij)|."""
    P, cover = A.cocycle, A.cover
    worst = 0.0
    for i, j in cover.pairs:
        mask = cover.overlap(i, j).mask
        g = P.g(i, j)
        expected = transition_forms(P, i, j) + dagger(g) @ A.locals[i].comps @ g
        got = gather_form(cover, i, j, A.locals[j].comps)
        diff = A.locals[i].like(got - expected).pointwise_norm()
        worst = max(worst, float(np.max(diff[mask], initial=0.0)))
    return worst


def _check_gauge(cover: Cover, group: Group, rho: GaugeField) -> None:
    if rho.cover is not cover:
        raise CoverMismatch("gauge lives on a different cover")
    if rho.group is not group:
        raise GroupMismatch("gauge takes values in a different group")


def apply_gauge_cocycle(P: Cocycle, rho: GaugeField) -> Cocycle:
    """h_ij = rho_i^{-1} g_ij rho_j."""
    _check_gauge(P.cover, P.group, rho)
    cover = P.cover
    trans = {}
    for i, j in cover.pairs:
        mask = cover.overlap(i, j).mask
        rj = cover.gather(i, j, rho.locals[j])
        trans[(i, j)] = _eye_where(mask, dagger(rho.locals[i]) @ P.g(i, j) @ rj, P.group.n)
    return Cocycle(cover, P.group, trans)


def apply_gauge(A: ConnectionForm, rho: GaugeField) -> ConnectionForm:
    """A^rho = rho^{-1} d rho + rho^{-1} A rho on every chart, over the gauged cocycle."""
    _check_gauge(A.cover, A.group, rho)
    locs = []
    for a, r in zip(A.locals, rho.locals):
        mc = maurer_cartan(A.group, r, a.chart).comps
        locs.append(a.like(mc + dagger(r) @ a.comps @ r))
    return ConnectionForm(apply_gauge_cocycle(A.cocycle, rho), tuple(locs))


def curvature(A: ConnectionForm) -> CurvatureForm:
    """F_i = dA_i + A_i ^ A_i per chart."""
    locs = []
    for a in A.locals:
        F = exterior_derivative(a)
        if not A.group.abelian:
            F = F + wedge_bracket(a, a)
        locs.append(F)
    return CurvatureForm(A.cover, A.group, tuple(locs))


def ym_energy(F: CurvatureForm, q: float = 2.0, pou: PartitionOfUnity | None = None) -> float:
    """Partition-of-unity weighted sum of the integrals of |F_i|^q."""
    if q < 1:
        raise ValueError("q must be >= 1")
    pou = pou or build_partition_of_unity(F.cover)
    total = 0.0
    for c, f, psi in zip(F.cover.charts, F.locals, pou.weights):
        total += float(np.sum(psi * c.weights * f.pointwise_norm() ** q))
    return total


def chart_curvature_mass(F: CurvatureForm, q: float) -> list[float]:
    """Per-chart integral of |F|^q over the whole chart box (no partition weights)."""
    return [float(np.sum(c.weights * f.pointwise_norm() ** q)) for c, f in zip(F.cover.charts, F.locals)]


def pou_connection(P: Cocycle, pou: PartitionOfUnity | None = None) -> ConnectionForm:
    """A_a = sum_b psi_b g_ba^{-1} d g_ba, a connection compatible with P."""
    cover, G = P.cover, P.group
    pou = pou or build_partition_of_unity(cover)
    locs = []
    for a, c in enumerate(cover.charts):
        acc = np.zeros((c.ndim,) + c.shape + (G.n, G.n), dtype=complex)
        for b in range(len(cover)):
            if b == a or cover.overlap(a, b).empty:
                continue
            mask = cover.overlap(a, b).mask
            gba = _eye_where(mask, dagger(P.g(a, b)), G.n)  # g_ba sampled on chart a
            psi_b = cover.gather(a, b, pou.weights[b], fill=0.0)
            mc = maurer_cartan(G, gba, c, mask).comps
            acc += psi_b[None, ..., None, None] * mc
        locs.append(FormField(c, 1, G, acc))
    return ConnectionForm(P, tuple(locs))


def refine_bundle(P: Cocycle, A: ConnectionForm | None, cover: Cover):
    """Pull (P, A) back to a cover refining ``P.cover`` through its refinement map."""
    if cover.parent is not P.cover:
        raise CoverMismatch("cover does not refine the bundle's cover")
    parent, rmap, G = P.cover, cover.refinement_map, P.group
    trans = {}
    for a, b in cover.pairs:
        pa, pb = rmap[a], rmap[b]
        if pa == pb:
            continue
        g = cover.restrict(P.g(pa, pb), parent.charts[pa], cover.charts[a])
        trans[(a, b)] = _eye_where(cover.overlap(a, b).mask, g, G.n)
    Q = Cocycle(cover, G, trans)
    if A is None:
        return Q, None
    locs = []
    for a, c in enumerate(cover.charts):
        src = parent.charts[rmap[a]]
        comps = np.moveaxis(A.locals[rmap[a]].comps, 0, src.ndim)
        comps = np.moveaxis(cover.restrict(comps, src, c), c.ndim, 0)
        locs.append(FormField(c, 1, G, np.ascontiguousarray(comps)))
    return Q, ConnectionForm(Q, tuple(locs))
