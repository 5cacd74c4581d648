"""Cocycle and connection smoothing: mollify in log space, patch, repair, recombine."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.ndimage import distance_transform_edt

from .bundle import Cocycle, ConnectionForm, _eye_where, cocycle_residual, gather_form
from .errors import OscillationTooLarge, SmallnessViolated
from .forms import FormField, _bcast, _shift, maurer_cartan, partial
from .grid import Chart, PartitionOfUnity, build_partition_of_unity, smoothstep
from .lie import Group, IdentityNeighborhood, dagger, exp_map, geodesic_distance, log_map, patch_interpolate

DELTA_G = 0.4  # sup-oscillation allowed inside one log chart
EXACT_TOL = 1e-12


# --- mollification ----------------------------------------------------------------------


def bump_kernel(chart: Chart, width: float) -> dict:
    """Offsets (in cells) and weights of exp(-1 / (1 - |x / width|^2)), normalised.

    The support is the open ball of radius ``width``; at width <= h only the
    centre survives and mollification is the identity.
    """
    reach = [int(np.ceil(width / h)) for h in chart.spacing]
    out = {}
    for off in product(*[range(-r, r + 1) for r in reach]):
        rr = sum((o * h / width) ** 2 for o, h in zip(off, chart.spacing))
        if rr < 1:
            out[off] = np.exp(-1.0 / (1.0 - rr))
    total = sum(out.values())
    return {k: v / total for k, v in out.items()}


def _shift_nd(a: np.ndarray, chart: Chart, off) -> tuple[np.ndarray, np.ndarray]:
    """a[x + off] and the mask of points where x + off stays on the chart."""
    ok = np.ones(chart.shape, dtype=bool)
    for axis, s in enumerate(off):
        if s:
            a, valid = _shift(a, axis, s, chart.periodic[axis])
            ok = ok & _bcast(valid, axis, chart.ndim)
    return a, ok


def _rel_log(group: Group, g: np.ndarray, nb: np.ndarray) -> np.ndarray:
    if group.n == 1:
        return 1j * np.angle(np.conj(g[..., 0, 0]) * nb[..., 0, 0])[..., None, None]
    return log_map(group, dagger(g) @ nb, radius=np.pi)


def constraint_cutoff(chart: Chart, region: np.ndarray, cells: float) -> np.ndarray:
    """1 on ``region``, decaying smoothly to 0 at ``cells`` grid cells away."""
    if not region.any():
        return np.zeros(chart.shape)
    dist = distance_transform_edt(~region)
    return smoothstep(1.0 - dist / max(cells, 1e-12))


def mollify_group_map(group: Group, g: np.ndarray, chart: Chart, width: float,
                      constraint_region: np.ndarray | None = None, mask: np.ndarray | None = None,
                      delta: float = DELTA_G) -> np.ndarray:
    """Convolve in the algebra around each window's centre value and re-exponentiate.

    At x the output is g(x) exp(sum_o K(o) log(g(x)^{-1} g(x + o))), with the
    kernel renormalised over the valid, mirror-symmetric points of ``mask``.  Each window is a
    log chart, so maps with winding are handled as long as the oscillation
    inside a window stays below ``delta``.  On ``constraint_region`` the
    output equals g bit-for-bit and a smooth cutoff blends back to the
    mollified values.
    """
    g = group.check(np.asarray(g, dtype=complex))
    mask = np.ones(chart.shape, dtype=bool) if mask is None else mask
    kern = bump_kernel(chart, width)
    acc = np.zeros(g.shape, dtype=complex)
    wsum = np.zeros(chart.shape)
    osc = 0.0
    for off, w in kern.items():
        if not any(off):
            wsum += w * mask
            continue
        nb, ok = _shift_nd(g, chart, off)
        mnb, _ = _shift_nd(mask, chart, off)
        # keep the truncated window symmetric so linear logs are reproduced exactly
        mir, okm = _shift_nd(mask, chart, tuple(-o for o in off))
        ok = ok & mask & mnb & okm & mir
        if not ok.any():
            continue
        d = geodesic_distance(group, g[ok], nb[ok])
        osc = max(osc, float(d.max()))
        if osc > delta:
            raise OscillationTooLarge(f"window oscillation {osc:.3g} exceeds {delta}")
        u = np.zeros(g.shape, dtype=complex)
        u[ok] = _rel_log(group, g[ok], nb[ok])
        acc += w * u
        wsum += w * ok
    u = acc / np.where(wsum > 0, wsum, 1.0)[..., None, None]
    if constraint_region is not None:
        chi = constraint_cutoff(chart, constraint_region & mask, width / min(chart.spacing))
        u = (1.0 - chi)[..., None, None] * u
    out = g @ exp_map(group, u)
    out = np.where(mask[..., None, None], out, g)
    if constraint_region is not None:
        out = np.where(constraint_region[..., None, None], g, out)
    return out


# --- patching and extension --------------------------------------------------------------


def patch_extend(group: Group, F: np.ndarray, chart: Chart, plateau: np.ndarray, ramp_cells: float,
                 base: np.ndarray | None = None, nbhd: IdentityNeighborhood | None = None,
                 delta: float = DELTA_G) -> np.ndarray:
    """Keep F on ``plateau`` and fall back to ``base`` (identity if None) ``ramp_cells`` away.

    Without a base this is the patching construction exp(psi log F): F must
    lie in the identity neighbourhood wherever psi > 0.  With a base it is
    the extension construction base exp(psi log(base^{-1} F)), which needs
    base^{-1} F within ``delta`` of the identity on the support of psi.
    """
    psi = constraint_cutoff(chart, plateau, ramp_cells)
    live = (psi > 0)[..., None, None]
    eye = np.eye(group.n)
    if base is None:
        Fl = np.where(live, F, eye)
        return patch_interpolate(group, Fl, psi, nbhd)
    q = np.where(live, dagger(base) @ F, eye)
    far = float(np.max(geodesic_distance(group, q), initial=0.0))
    if far > delta:
        raise SmallnessViolated(f"base^-1 F reaches {far:.3g} > {delta}")
    out = base @ patch_interpolate(group, q, psi, IdentityNeighborhood(group, min(np.pi - 1e-6, 2 * delta)))
    return np.where((psi == 1.0)[..., None, None], F, out)


# --- cocycle repair ----------------------------------------------------------------------


@dataclass
class SmoothingReport:
    overlap_sup: dict = field(default_factory=dict)  # "i-j" -> sup geodesic distance
    overlap_w1n: dict = field(default_factory=dict)  # "i-j" -> discrete W^{1,n} distance
    residual_before: float = 0.0
    residual_after: float = 0.0
    constraints_preserved: bool = True

    @property
    def max_sup(self) -> float:
        return max(self.overlap_sup.values(), default=0.0)

    @property
    def max_w1n(self) -> float:
        return max(self.overlap_w1n.values(), default=0.0)

    def as_dict(self) -> dict:
        return {"overlap_sup": dict(self.overlap_sup), "overlap_w1n": dict(self.overlap_w1n),
                "max_sup": self.max_sup, "max_w1n": self.max_w1n,
                "residual_before": self.residual_before, "residual_after": self.residual_after,
                "constraints_preserved": self.constraints_preserved}


def w1n_distance(group: Group, g: np.ndarray, h: np.ndarray, chart: Chart, mask: np.ndarray) -> float:
    """Discrete W^{1,n} norm of the matrix difference h - g over ``mask`` (n = chart dimension)."""
    n = chart.ndim
    diff = np.where(mask[..., None, None], h - g, 0.0)
    dens = np.sum(np.abs(diff) ** 2, axis=(-2, -1)) ** (n / 2)
    for a in range(n):
        da = partial(diff, chart, a, mask)
        dens = dens + (chart.inv_metric[a] * np.sum(np.abs(da) ** 2, axis=(-2, -1))) ** (n / 2)
    return float(np.sum(np.where(mask, chart.weights * dens, 0.0)) ** (1.0 / n))


def compare_cocycles(P: Cocycle, Q: Cocycle, constraint: dict | None = None) -> SmoothingReport:
    """Per-overlap distances between two cocycles on the same cover."""
    rep = SmoothingReport()
    for i, j in P.cover.pairs:
        if i > j:
            continue
        mask = P.cover.overlap(i, j).mask
        a, b = P.g(i, j), Q.g(i, j)
        rep.overlap_sup[f"{i}-{j}"] = float(np.max(geodesic_distance(P.group, a, b)[mask], initial=0.0))
        rep.overlap_w1n[f"{i}-{j}"] = w1n_distance(P.group, a, b, P.cover.charts[i], mask)
        if constraint and (i, j) in constraint:
            rep.constraints_preserved &= bool(np.array_equal(a[constraint[(i, j)]], b[constraint[(i, j)]]))
    return rep


def _set_pair(trans: dict, cover, group: Group, i: int, j: int, gij: np.ndarray) -> None:
    trans[(i, j)] = _eye_where(cover.overlap(i, j).mask, gij, group.n)
    trans[(j, i)] = _eye_where(cover.overlap(j, i).mask, dagger(cover.gather(j, i, gij)), group.n)


def repair_cocycle(gt: Cocycle, ramp_cells: float = 3.0, delta: float = DELTA_G) -> Cocycle:
    """Exact cocycle near an approximate one, built chart by chart.

    Outer loop over charts r in index order; inner loop over earlier charts
    l.  On the part of U_l n U_r that meets an earlier U_i the cocycle
    identity forces h_lr = h_li h_ir; there the correction
    u = log(g~_lr^{-1} h_li h_ir) is applied exactly, and off that set it is
    extended by its nearest-point value and faded out with a smooth cutoff
    over ``ramp_cells`` cells.  Raises SmallnessViolated when |u| > delta.
    """
    cover, G = gt.cover, gt.group
    if cocycle_residual(gt) <= EXACT_TOL:
        return gt
    trans: dict = {}
    for r in range(len(cover)):
        for l in range(r):
            ov = cover.overlap(l, r)
            if ov.empty:
                continue
            g_lr = gt.g(l, r)
            forced = np.zeros(cover.charts[l].shape, dtype=bool)
            target = np.array(g_lr)
            for i in range(l):
                tm = cover.triple_mask(l, i, r)
                tm = tm & ~forced
                if not tm.any():
                    continue
                h_li = trans.get((l, i), G.identity(cover.charts[l].shape))
                h_ir = cover.gather(l, i, trans.get((i, r), G.identity(cover.charts[i].shape)))
                target = np.where(tm[..., None, None], h_li @ h_ir, target)
                forced |= tm
            if not forced.any():
                _set_pair(trans, cover, G, l, r, g_lr)
                continue
            u = np.zeros(g_lr.shape, dtype=complex)
            dist = geodesic_distance(G, g_lr[forced], target[forced])
            if dist.max() > delta:
                raise SmallnessViolated(f"repair correction {float(dist.max()):.3g} > {delta} on overlap ({l}, {r})")
            u[forced] = _rel_log(G, g_lr[forced], target[forced])
            d, idx = distance_transform_edt(~forced, return_indices=True)
            ext = u[tuple(idx)]
            chi = smoothstep(1.0 - d / ramp_cells)
            h_lr = g_lr @ exp_map(G, chi[..., None, None] * ext)
            h_lr = np.where(forced[..., None, None], target, h_lr)
            _set_pair(trans, cover, G, l, r, np.where(ov.mask[..., None, None], h_lr, np.eye(G.n)))
    return Cocycle(cover, G, trans)


def perturb_cocycle(P: Cocycle, eps: float, rng: np.random.Generator) -> Cocycle:
    """g_ij exp(eps * noise) for i < j (pointwise i.i.d. noise), inverses kept consistent."""
    cover, G = P.cover, P.group
    trans: dict = {}
    for i, j in cover.pairs:
        if i > j:
            continue
        shape = cover.charts[i].shape
        coeff = rng.uniform(-1.0, 1.0, size=shape + (G.dim,))
        xi = np.tensordot(coeff, G.basis, axes=(-1, 0)) * (eps / np.sqrt(G.dim))
        if G.n == 2:
            xi = xi * 2.0  # |tau_k| = 1/2
        _set_pair(trans, cover, G, i, j, P.g(i, j) @ exp_map(G, xi))
    return Cocycle(cover, G, trans)


def mollify_cocycle(P: Cocycle, width: float, constraint: dict | None = None) -> Cocycle:
    """Mollify every g_ij (i < j) on its overlap; g_ji follows as the inverse."""
    cover, G = P.cover, P.group
    trans: dict = {}
    for i, j in cover.pairs:
        if i > j:
            continue
        mask = cover.overlap(i, j).mask
        region = constraint.get((i, j)) if constraint else None
        gij = mollify_group_map(G, P.g(i, j), cover.charts[i], width, region, mask)
        _set_pair(trans, cover, G, i, j, gij)
    return Cocycle(cover, G, trans)


def smooth_cocycle(P: Cocycle, width: float, constraint: dict | None = None,
                   ramp_cells: float = 3.0) -> tuple[Cocycle, SmoothingReport]:
    """Mollify then repair; the report compares the result with the input."""
    h = repair_cocycle(mollify_cocycle(P, width, constraint), ramp_cells)
    rep = compare_cocycles(P, h, constraint)
    rep.residual_before = cocycle_residual(P)
    rep.residual_after = cocycle_residual(h)
    return h, rep


# --- connections -------------------------------------------------------------------------


def smooth_connection_on_bundle(P: Cocycle, A_tilde, pou: PartitionOfUnity | None = None) -> ConnectionForm:
    """B_j = sum_l psi_l [g_lj^{-1} d g_lj + g_lj^{-1} A~_l g_lj], sampled on chart j."""
    cover, G = P.cover, P.group
    pou = pou or build_partition_of_unity(cover)
    arrays = [a.comps if isinstance(a, FormField) else np.asarray(a) for a in
              (A_tilde.locals if isinstance(A_tilde, ConnectionForm) else A_tilde)]
    locs = []
    for j, c in enumerate(cover.charts):
        acc = pou.weights[j][None, ..., None, None] * arrays[j]
        for l in range(len(cover)):
            if l == j or cover.overlap(j, l).empty:
                continue
            mask = cover.overlap(j, l).mask
            g_lj = _eye_where(mask, dagger(P.g(j, l)), G.n)
            psi_l = cover.gather(j, l, pou.weights[l], fill=0.0)
            a_l = gather_form(cover, j, l, arrays[l])
            term = maurer_cartan(G, g_lj, c, mask).comps + dagger(g_lj) @ a_l @ g_lj
            acc = acc + psi_l[None, ..., None, None] * np.where(mask[None, ..., None, None], term, 0.0)
        locs.append(FormField(c, 1, G, acc))
    return ConnectionForm(P, tuple(locs))
