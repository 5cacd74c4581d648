"""Topological invariants of U(1) bundles and the Coulomb-bundle pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .bundle import (
    Cocycle,
    ConnectionForm,
    CurvatureForm,
    curvature,
    pou_connection,
    refine_bundle,
    transition_forms,
    ym_energy,
)
from .errors import MarginExhausted, NonIntegral, UnresolvableJump
from .grid import PartitionOfUnity, build_partition_of_unity, refine_cover
from .lie import U1, geodesic_distance

INTEGRALITY_TOL = 1e-6


def chern_integral(F: CurvatureForm, pou: PartitionOfUnity | None = None,
                   plane: tuple[int, int] = (0, 1), slice_at=None) -> float:
    """(i / 2 pi) times the integral of F over the base (or a 2-torus slice).

    For 4-dimensional tori ``plane`` picks the (a, b) coordinate plane and
    ``slice_at`` the fixed global indices of the remaining axes (default 0).
    """
    if F.group is not U1:
        raise ValueError("Chern numbers are computed for U1 only")
    cover = F.cover
    pou = pou or build_partition_of_unity(cover)
    n = cover.base.ndim
    a, b = plane
    comp = [m for m in range(len(F.locals[0].index)) if F.locals[0].index[m] == (a, b)][0]
    others = [ax for ax in range(n) if ax not in plane]
    fixed = dict(zip(others, slice_at or [0] * len(others)))
    total = 0.0
    for c, f, psi in zip(cover.charts, F.locals, pou.weights):
        vals = (psi * f.comps[comp, ..., 0, 0]).imag  # F = i * (real 2-form)
        if others:
            sel = np.ones(c.shape, dtype=bool)
            for ax, g in fixed.items():
                local = np.mod(c.index_axes[ax], cover.base.dims[ax]) == g % cover.base.dims[ax]
                sh = [1] * n
                sh[ax] = -1
                sel &= local.reshape(sh)
            vals = np.where(sel, vals, 0.0)
        total += float(np.sum(vals)) * c.spacing[a] * c.spacing[b]
    # c1 = (i / 2 pi) int F with F = i f  ->  -(1 / 2 pi) int f
    return -total / (2 * np.pi)


def chern_number_u1(F: CurvatureForm, pou: PartitionOfUnity | None = None, plane=(0, 1),
                    slice_at=None, tol: float = INTEGRALITY_TOL) -> int:
    value = chern_integral(F, pou, plane, slice_at)
    k = int(np.rint(value))
    dev = abs(value - k)
    if dev > tol:
        raise NonIntegral(value, dev)
    return k


def winding_number(g: np.ndarray, max_step: float = np.pi / 2) -> int:
    """Degree of a closed loop of U(1) samples (the loop closes from last to first)."""
    z = np.asarray(g).reshape(-1)
    steps = np.angle(np.roll(z, -1) / z)
    if np.any(np.abs(steps) > max_step):
        raise UnresolvableJump(f"phase jump {float(np.max(np.abs(steps))):.3g} exceeds {max_step:.3g}")
    total = np.sum(steps) / (2 * np.pi)
    return int(np.rint(total))


def sphere_equator_winding(P) -> int:
    """Winding of g_NS along the equator row of a two-cap sphere cover."""
    cover = P.cover
    if cover.base.manifold != "SPHERE2" or len(cover) != 2:
        raise ValueError("equator winding needs the two-cap sphere cover")
    from .builtins import _northern

    i = 0 if _northern(cover.charts[0]) else 1
    j = 1 - i
    row = cover.base.dims[0] // 2 - cover.charts[i].start[0]
    if not cover.overlap(i, j).mask[row].all():
        raise ValueError("equator row is not inside the cap overlap")
    return winding_number(P.g(i, j)[row, :, 0, 0])


# --- Coulomb-bundle pipeline ----------------------------------------------------------


@dataclass
class TopologyClass:
    group_id: str
    invariant: object  # int, tuple of ints per 2-plane (T^4), or None for SU2
    flat: bool
    provenance: str = "COULOMB_PIPELINE"
    deviation: float = 0.0
    refinements: int = 0
    charts: int = 0
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        inv = list(self.invariant) if isinstance(self.invariant, tuple) else self.invariant
        return {"group_id": self.group_id, "invariant": inv, "flat": self.flat, "provenance": self.provenance,
                "deviation": self.deviation, "refinements": self.refinements, "charts": self.charts,
                **self.details}


@dataclass
class FlatnessVerdict:
    is_topologically_flat: bool
    ym_value: float
    delta_used: float
    max_transition_gradient: float | None = None

    def as_dict(self) -> dict:
        return {"is_topologically_flat": self.is_topologically_flat, "ym_value": self.ym_value,
                "delta_used": self.delta_used, "max_transition_gradient": self.max_transition_gradient}


def max_transition_gradient(P: Cocycle) -> float:
    """max over overlaps of |g_ij^{-1} d g_ij| (metric norm)."""
    worst = 0.0
    for i, j in P.transitions:
        mask = P.cover.overlap(i, j).mask
        mc = transition_forms(P, i, j)
        c = P.cover.charts[i]
        n2 = sum(c.inv_metric[m] * np.sum(np.abs(mc[m]) ** 2, axis=(-2, -1)) / P.group.n for m in range(c.ndim))
        worst = max(worst, float(np.sqrt(np.max(n2[mask], initial=0.0))))
    return worst


def flatness_threshold(P: Cocycle) -> float:
    """10 h with h the finest grid spacing."""
    return 10 * min(P.cover.base.spacing)


def _nearest_integer(value: float) -> tuple[int, float]:
    k = int(np.rint(value))
    if abs(value - k) > INTEGRALITY_TOL:
        raise NonIntegral(value, abs(value - k))
    return k, abs(value - k)


def class_of_cocycle(P: Cocycle, provenance: str = "COULOMB_PIPELINE") -> TopologyClass:
    """Integer invariants of a U(1) cocycle from a compatible connection; flatness for SU(2)."""
    flat = max_transition_gradient(P) <= flatness_threshold(P)
    if P.group is not U1:
        return TopologyClass(P.group.name, None, flat, provenance, charts=len(P.cover))
    pou = build_partition_of_unity(P.cover)
    F = curvature(pou_connection(P, pou))
    n = P.cover.base.ndim
    if n == 2:
        k, dev = _nearest_integer(chern_integral(F, pou))
        return TopologyClass("U1", k, flat, provenance, dev, charts=len(P.cover))
    pairs = [_nearest_integer(chern_integral(F, pou, plane)) for plane in combinations(range(n), 2)]
    return TopologyClass("U1", tuple(k for k, _ in pairs), flat, provenance,
                         max(d for _, d in pairs), charts=len(P.cover))


def direct_class(P: Cocycle, A: ConnectionForm) -> TopologyClass:
    """Chern number straight from the curvature of A (no gauge fixing)."""
    if P.group is not U1 or P.cover.base.ndim != 2:
        raise ValueError("direct class is defined for U1 over 2-dimensional bases")
    k, dev = _nearest_integer(chern_integral(curvature(A)))
    return TopologyClass("U1", k, False, "DIRECT", dev, charts=len(P.cover))


def _chart_masses(A: ConnectionForm) -> list[float]:
    from .coulomb import chart_curvature_lnhalf

    return [chart_curvature_lnhalf(loc) for loc in A.locals]


def refine_until_small(P: Cocycle, A: ConnectionForm, eps_coulomb: float, max_refinements: int = 6):
    """Refine the cover until every chart carries curvature below ``eps_coulomb``.

    Raises MarginExhausted when the refinement budget of the grid runs out.
    """
    levels = 0
    while True:
        masses = _chart_masses(A)
        if max(masses) <= eps_coulomb:
            return P, A, levels, masses
        if levels >= max_refinements:
            raise MarginExhausted(f"curvature {max(masses):.4g} above {eps_coulomb:.4g} after {levels} refinements")
        try:
            cover = refine_cover(P.cover)
        except MarginExhausted as exc:
            raise MarginExhausted(f"chart curvature {max(masses):.4g} > eps_coulomb {eps_coulomb:.4g}; {exc}") from exc
        P, A = refine_bundle(P, A, cover)
        levels += 1


def coulomb_bundle(P: Cocycle, A: ConnectionForm, profile=None, eps_coulomb: float | None = None):
    """Refine, gauge-fix every chart, glue, and read off the class of the Coulomb cocycle."""
    from .coulomb import fix_all_charts, glue_coulomb
    from .profile import profile_for

    if eps_coulomb is None:
        profile = profile or profile_for(P.group, P.cover.base)
        eps_coulomb = profile.eps_coulomb
    P2, A2, levels, masses = refine_until_small(P, A, eps_coulomb)
    results = fix_all_charts(A2)
    h, C = glue_coulomb(P2, A2, results)
    cls = class_of_cocycle(h)
    cls.refinements = levels
    cls.details = {"max_chart_curvature": max(masses), "eps_coulomb": eps_coulomb,
                   "max_residual_interior": max(r.residual_interior for r in results)}
    return h, C, cls


def flatness_detect(P: Cocycle, A: ConnectionForm, profile=None) -> FlatnessVerdict:
    """Energy-gap test: YM_{n/2} above delta, or a Coulomb cocycle that is locally constant."""
    from .profile import profile_for

    profile = profile or profile_for(P.group, P.cover.base)
    q = max(P.cover.base.ndim / 2, 1.0)
    ym = ym_energy(curvature(A), q)
    if ym > profile.flatness_delta:
        return FlatnessVerdict(False, ym, profile.flatness_delta)
    h, _, _ = coulomb_bundle(P, A, profile)
    grad = max_transition_gradient(h)
    return FlatnessVerdict(grad <= flatness_threshold(h), ym, profile.flatness_delta, grad)


# --- stabilisation experiment ----------------------------------------------------------


def curvature_density(F: CurvatureForm, q: float, pou: PartitionOfUnity | None = None):
    """Global field |F|^q on the base grid (partition-weighted chart values) and base weights."""
    cover = F.cover
    pou = pou or build_partition_of_unity(cover)
    dens = np.zeros(cover.base.size)
    for c, f, psi in zip(cover.charts, F.locals, pou.weights):
        np.add.at(dens, c.global_index.ravel(), (psi * f.pointwise_norm() ** q).ravel())
    return dens, cover.base.weights.reshape(-1)


def cocycle_c0_distance(P: Cocycle, Q: Cocycle) -> float | None:
    """Sup distance between the transitions of two cocycles on the same cover."""
    if P.cover is not Q.cover and (P.cover.base.dims != Q.cover.base.dims
                                   or len(P.cover) != len(Q.cover)):
        return None
    worst = 0.0
    for i, j in P.cover.pairs:
        mask = P.cover.overlap(i, j).mask
        d = geodesic_distance(P.group, P.g(i, j), Q.g(i, j))
        worst = max(worst, float(np.max(d[mask], initial=0.0)))
    return worst


def stabilization_experiment(seq, fractions=(0.001, 0.01, 0.05, 0.1), profile=None, eps_coulomb=None):
    """Run the Coulomb pipeline along a sequence of pairs and report class stabilisation.

    Each entry records the energy, the class (or the pipeline outcome that
    prevented one) and the C^0 distance of successive Coulomb cocycles.  The
    bubbling flag is raised by MarginExhausted, NonIntegral or a change of class.
    """
    seq = list(seq)
    from .norms import equiintegrability_profile

    entries, dens, classes = [], [], []
    prev_h = None
    for nu, (P, A) in enumerate(seq, start=1):
        q = max(P.cover.base.ndim / 2, 1.0)
        F = curvature(A)
        d, w = curvature_density(F, q)
        dens.append(d)
        entry = {"nu": nu, "ym": ym_energy(F, q), "equiintegrability": equiintegrability_profile([d], fractions, w)}
        try:
            h, _, cls = coulomb_bundle(P, A, profile, eps_coulomb)
            entry.update(outcome="class", cls=cls.invariant, deviation=cls.deviation, refinements=cls.refinements)
            entry["c0_distance_to_previous"] = cocycle_c0_distance(prev_h, h) if prev_h is not None else None
            prev_h = h
            classes.append(cls.invariant)
        except (MarginExhausted, NonIntegral) as exc:
            entry.update(outcome=type(exc).__name__, cls=None, message=str(exc))
            entry["c0_distance_to_previous"] = None
            prev_h = None
            classes.append(None)
        entries.append(entry)
    w = seq[0][0].cover.base.weights.reshape(-1)
    uniform = equiintegrability_profile(dens, fractions, w)
    resolved = [c for c in classes if c is not None]
    bubbling = any(c is None for c in classes) or len(set(map(str, resolved))) > 1
    stable_from = None
    for k in range(len(classes)):
        if classes[k] is not None and all(c == classes[k] for c in classes[k:]):
            stable_from = k + 1
            break
    return {
        "entries": entries,
        "classes": classes,
        "uniform_equiintegrability": uniform,
        "bubbling_detected": bool(bubbling),
        "stable_from": stable_from,
    }
