"""Local Coulomb gauge fixing on charts and gluing into Coulomb cocycles.

The discrete Coulomb condition is the normal equation of

    min_rho  sum_x w(x) |A^rho(x)|^2,

i.e. ``D^T W G A^rho = 0`` with ``D`` the chart derivative stencil, ``W`` the
volume weights and ``G`` the inverse metric.  At interior points this is
``d*A^rho = 0``; at boundary points it is the natural (weak Neumann)
condition on the normal component of ``A^rho``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .bundle import (
    Cocycle,
    ConnectionForm,
    GaugeField,
    apply_gauge_cocycle,
    cocycle_residual,
)
from .errors import CompatibilityViolation, GroupMismatch, NonConvergence, SmallnessViolated, StallWithoutCoulomb
from .forms import FormField, _diff_matrix, exterior_derivative, maurer_cartan, partial, wedge_bracket
from .grid import Chart
from .lie import U1, alg_norm, dagger, exp_map, from_coords, geodesic_distance, to_coords
from .norms import lp_norm


@dataclass
class CoulombResult:
    rho: np.ndarray  # (*shape, N, N)
    A_coulomb: FormField
    residual_interior: float
    residual_boundary: float
    estimate_ratio: float
    iterations: int = 0
    energy: float = 0.0

    def summary(self) -> dict:
        return {
            "residual_interior": self.residual_interior,
            "residual_boundary": self.residual_boundary,
            "estimate_ratio": self.estimate_ratio,
            "iterations": self.iterations,
            "energy": self.energy,
        }


# --- operators --------------------------------------------------------------------------


def _axis_operator(chart: Chart, mu: int) -> sp.csr_matrix:
    ops = [sp.identity(n, format="csr") for n in chart.shape]
    ops[mu] = sp.csr_matrix(_diff_matrix(chart.shape[mu], chart.spacing[mu], chart.periodic[mu]))
    out = ops[0]
    for o in ops[1:]:
        out = sp.kron(out, o, format="csr")
    return out


@lru_cache(maxsize=64)
def _neumann_system(chart: Chart):
    """(K, [D_mu], [w g^mumu]) with K = sum D_mu^T diag(w g^mumu) D_mu."""
    Ds = [_axis_operator(chart, mu) for mu in range(chart.ndim)]
    wg = [(chart.weights * chart.inv_metric[mu]).reshape(-1) for mu in range(chart.ndim)]
    K = sum(D.T @ sp.diags(c) @ D for D, c in zip(Ds, wg)).tocsr()
    return K, Ds, wg


def _coords_of_form(A: FormField) -> np.ndarray:
    """Real algebra coordinates, shape (n, size, dim)."""
    c = to_coords(A.group, A.comps)
    return c.reshape(A.chart.ndim, -1, A.group.dim)


def _weighted_divergence(A: FormField) -> np.ndarray:
    """sum_mu D_mu^T (w g^mumu a_mu) in algebra coordinates, shape (size, dim)."""
    _, Ds, wg = _neumann_system(A.chart)
    a = _coords_of_form(A)
    return sum(D.T @ (c[:, None] * a[mu]) for mu, (D, c) in enumerate(zip(Ds, wg)))


def _data_scale(A: FormField) -> float:
    """L1 size of the weighted components feeding the divergence (times 1/h)."""
    _, _, wg = _neumann_system(A.chart)
    a = _coords_of_form(A)
    return float(sum(np.sum(np.abs(c[:, None] * a[mu])) / A.chart.spacing[mu] for mu, c in enumerate(wg)))


def _neumann_solve(chart: Chart, rhs: np.ndarray, rtol: float = 1e-12, ref: float | None = None) -> np.ndarray:
    """Solve K psi = rhs on the zero-mean subspace, column by column.

    ``ref`` is the size of the data the right-hand side was built from;
    right-hand sides at its roundoff level count as zero.
    """
    K, _, _ = _neumann_system(chart)
    w = chart.weights.reshape(-1)
    out = np.zeros_like(rhs)
    M = sp.diags(1.0 / K.diagonal())
    for k in range(rhs.shape[1]):
        b = rhs[:, k]
        scale = float(np.sum(np.abs(b)))
        floor = 1e-13 * (ref if ref is not None else scale)
        if scale <= floor or scale == 0:
            continue
        if abs(np.sum(b)) > 1e-8 * max(scale, floor):
            raise CompatibilityViolation(f"Neumann data violate the compatibility condition by {abs(np.sum(b)):.3g}")
        b = b - np.sum(b) / b.size
        x, info = cg(K, b, rtol=rtol, atol=0.0, M=M, maxiter=50 * K.shape[0])
        if info != 0:
            raise NonConvergence(f"Neumann CG did not converge (info={info})")
        out[:, k] = x - np.sum(w * x) / np.sum(w)
    return out


def gauged_form(A: FormField, rho: np.ndarray) -> FormField:
    """A^rho = rho^{-1} d rho + rho^{-1} A rho on one chart."""
    return A.like(maurer_cartan(A.group, rho, A.chart).comps + dagger(rho) @ A.comps @ rho)


def form_curvature(A: FormField) -> FormField:
    F = exterior_derivative(A)
    return F if A.group.abelian else F + wedge_bracket(A, A)


# --- diagnostics ------------------------------------------------------------------------


def _interior(chart: Chart) -> np.ndarray:
    return ~chart.boundary_mask(include_natural=False)


def coulomb_residuals(A: FormField) -> tuple[float, float]:
    """(||d*A||_{L2(interior)} / max(||A||_{L2}, 1e-14), max normal trace on the boundary)."""
    c = A.chart
    div = _weighted_divergence(A).reshape(c.shape + (A.group.dim,))
    inner = _interior(c)
    # d*A = -(1/w) D^T W G A in coordinates; the algebra norm of the coordinates
    # uses the uniform basis Gram factor
    gram = float(np.real(np.sum(np.abs(A.group.basis[0]) ** 2)) / A.group.n)
    dstar = np.sqrt(gram * np.sum(div**2, axis=-1)) / c.weights
    num = float(np.sqrt(np.sum(np.where(inner, c.weights * dstar**2, 0.0))))
    den = max(lp_norm(A.pointwise_norm(), 2, c.weights), 1e-14)
    trace = 0.0
    for mu in range(c.ndim):
        if c.periodic[mu]:
            continue
        comp = alg_norm(A.comps[mu]) * np.sqrt(c.inv_metric[mu])
        for side, idx in ((0, 0), (1, c.shape[mu] - 1)):
            if (mu, side) in c.natural_edges:
                continue
            trace = max(trace, float(np.max(np.take(comp, idx, axis=mu))))
    return num / den, trace


def covariant_gradient_norm(A: FormField) -> np.ndarray:
    """Pointwise |grad A| from coordinate derivatives of the components."""
    c = A.chart
    tot = np.zeros(c.shape)
    for mu in range(c.ndim):
        for nu in range(c.ndim):
            d = partial(A.comps[mu], c, nu)
            tot += c.inv_metric[mu] * c.inv_metric[nu] * np.sum(np.abs(d) ** 2, axis=(-2, -1)) / A.group.n
    return np.sqrt(tot)


def estimate_ratio(A: FormField, A_coulomb: FormField) -> float:
    """(||grad A^rho||_{L^{n/2}} + ||A^rho||_{L^n}) / ||F_A||_{L^{n/2}}."""
    c = A.chart
    n = c.ndim
    num = (lp_norm(covariant_gradient_norm(A_coulomb), max(n / 2, 1.0), c.weights)
           + lp_norm(A_coulomb.pointwise_norm(), n, c.weights))
    den = lp_norm(form_curvature(A).pointwise_norm(), max(n / 2, 1.0), c.weights)
    if den < 1e-300:
        return 0.0 if num < 1e-12 else float("inf")
    return num / den


def energy(A: FormField) -> float:
    return float(np.sum(A.chart.weights * A.pointwise_norm() ** 2))


def _result(A: FormField, rho: np.ndarray, Ar: FormField, iterations: int) -> CoulombResult:
    ri, rb = coulomb_residuals(Ar)
    return CoulombResult(rho, Ar, ri, rb, estimate_ratio(A, Ar), iterations, energy(Ar))


# --- gauge fixing -----------------------------------------------------------------------


def abelian_coulomb(A: FormField, tol: float = 1e-8) -> CoulombResult:
    """Neumann-problem gauge: rho = exp(i psi) with psi minimising ||A + i d psi||.

    The CG tolerance is set four orders below ``tol``, the target for the
    reported interior residual.
    """
    if A.group is not U1:
        raise GroupMismatch("abelian_coulomb needs U1")
    c = A.chart
    rhs = -_weighted_divergence(A)
    psi = _neumann_solve(c, rhs, rtol=min(1e-12, 1e-4 * tol), ref=_data_scale(A))[:, 0].reshape(c.shape)
    rho = np.exp(1j * psi)[..., None, None]
    Ar = A.like(A.comps + 1j * np.stack([partial(psi, c, mu) for mu in range(c.ndim)])[..., None, None])
    return _result(A, rho, Ar, 1)


def nonabelian_coulomb(A: FormField, step: float = 1.0, tol: float = 1e-8, max_iter: int = 200,
                       rho0: np.ndarray | None = None) -> CoulombResult:
    """Preconditioned descent rho <- rho exp(alpha xi), xi = -K^+ D^T W G A^rho.

    ``K`` is the Neumann Laplacian, so for abelian data one full step solves
    the problem exactly.  Steps are halved until the weighted Coulomb
    residual drops; iterates stay exactly in the group.
    """
    G, c = A.group, A.chart
    rho = G.identity(c.shape) if rho0 is None else rho0.copy()
    Ar = gauged_form(A, rho)
    res = coulomb_residuals(Ar)[0]
    merit = float(np.linalg.norm(_weighted_divergence(Ar)))
    floor = 1e-13 * max(merit, 1e-300)  # roundoff level of the Coulomb condition
    it = 0
    while res > tol and merit > floor:
        if it >= max_iter:
            raise NonConvergence(f"Coulomb descent stopped at residual {res:.3g} after {max_iter} steps")
        it += 1
        xi = _neumann_solve(c, -_weighted_divergence(Ar), ref=_data_scale(Ar))
        xi = from_coords(G, xi.reshape(c.shape + (G.dim,)))
        alpha = step
        while True:
            trial = rho @ exp_map(G, alpha * xi)
            Ar_t = gauged_form(A, trial)
            m_t = float(np.linalg.norm(_weighted_divergence(Ar_t)))
            if m_t < merit * (1 - 1e-14) - 1e-300:
                break
            alpha /= 2
            if alpha < 1e-6:
                raise StallWithoutCoulomb(f"no descent at residual {res:.3g} (energy {energy(Ar):.6g})")
        rho, Ar, merit = trial, Ar_t, m_t
        res = coulomb_residuals(Ar)[0]
    return _result(A, rho, Ar, it)


def coulomb_gauge(A: FormField, tol: float | None = None, **kw) -> CoulombResult:
    if A.group.abelian:
        return abelian_coulomb(A, tol if tol is not None else 1e-8)
    return nonabelian_coulomb(A, tol=tol if tol is not None else 1e-8, **kw)


def gauge_derivative_identity_check(A: FormField, result: CoulombResult) -> float:
    """max |d rho - (rho A^rho - A rho)| with the metric norm."""
    c, rho = A.chart, result.rho
    worst = np.zeros(c.shape)
    for mu in range(c.ndim):
        lhs = partial(rho, c, mu)
        rhs = rho @ result.A_coulomb.comps[mu] - A.comps[mu] @ rho
        worst = np.maximum(worst, alg_norm(lhs - rhs) * np.sqrt(c.inv_metric[mu]))
    return float(np.max(worst))


# --- gluing -----------------------------------------------------------------------------


def chart_curvature_lnhalf(A: FormField) -> float:
    n = A.chart.ndim
    return lp_norm(form_curvature(A).pointwise_norm(), max(n / 2, 1.0), A.chart.weights)


def fix_all_charts(A: ConnectionForm, eps_coulomb: float | None = None, **kw) -> list[CoulombResult]:
    out = []
    for loc in A.locals:
        if eps_coulomb is not None:
            m = chart_curvature_lnhalf(loc)
            if m > eps_coulomb:
                raise SmallnessViolated(f"chart {loc.chart_id} curvature {m:.4g} exceeds eps_coulomb {eps_coulomb:.4g}")
        out.append(coulomb_gauge(loc, **kw))
    return out


def glue_coulomb(P: Cocycle, A: ConnectionForm, results: list[CoulombResult] | None = None,
                 eps_coulomb: float | None = None) -> tuple[Cocycle, ConnectionForm]:
    """Coulomb cocycle h_ij = rho_i^{-1} g_ij rho_j with the chart-wise Coulomb connection."""
    if results is None:
        results = fix_all_charts(A, eps_coulomb)
    elif eps_coulomb is not None:
        for loc in A.locals:
            if chart_curvature_lnhalf(loc) > eps_coulomb:
                raise SmallnessViolated(f"chart {loc.chart_id} is outside the smallness regime")
    rho = GaugeField(P.cover, P.group, tuple(r.rho for r in results))
    h = apply_gauge_cocycle(P, rho)
    return h, ConnectionForm(h, tuple(r.A_coulomb for r in results))


def holder_diagnostic(P: Cocycle, levels: int = 3) -> dict:
    """Dyadic difference ratios of the transition functions.

    D_k = max over overlap points and axes of dist(h(x + 2^k e), h(x)); for a
    Lipschitz field D_{k+1} / D_k stays near 2, for a C^alpha field near 2^alpha.
    Returns the ratios and the smallest implied exponent.
    """
    cover = P.cover
    D = np.zeros(levels + 1)
    for (i, j), g in P.transitions.items():
        mask = cover.overlap(i, j).mask
        c = cover.charts[i]
        for k in range(levels + 1):
            s = 2**k
            for ax in range(c.ndim):
                if c.shape[ax] <= s:
                    continue
                sl0 = [slice(None)] * c.ndim
                sl1 = [slice(None)] * c.ndim
                sl0[ax] = slice(0, c.shape[ax] - s)
                sl1[ax] = slice(s, None)
                both = mask[tuple(sl0)] & mask[tuple(sl1)]
                if not both.any():
                    continue
                d = geodesic_distance(P.group, g[tuple(sl0)], g[tuple(sl1)])
                D[k] = max(D[k], float(np.max(d[both])))
    ratios = [float(b / a) if a > 0 else 0.0 for a, b in zip(D[:-1], D[1:])]
    valid = [r for r in ratios if r > 0]
    exponent = float(min(np.log2(r) for r in valid)) if valid else float("inf")
    return {"dyadic_differences": D.tolist(), "ratios": ratios, "holder_exponent": exponent}


def glue_residual_growth(P: Cocycle, h: Cocycle) -> float:
    return cocycle_residual(h) - cocycle_residual(P)
