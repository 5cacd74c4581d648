"""Built-in bundles with connections, and seeded random smooth gauges and perturbations."""

from __future__ import annotations

import numpy as np

from .bundle import Cocycle, ConnectionForm, GaugeField
from .grid import Chart, Cover, default_cover, smoothstep, sphere, torus
from .lie import SU2, U1, Group, exp_map, from_coords, u1

MONOPOLE_RAMP = (0.2, np.pi - 0.2)


def trivial_bundle(cover: Cover, group: Group = U1) -> tuple[Cocycle, ConnectionForm]:
    P = Cocycle.trivial(cover, group)
    return P, ConnectionForm.zero(P)


# --- sphere --------------------------------------------------------------------------


def _theta_phi(chart: Chart):
    return chart.mesh()


def charge_k_sphere(cover: Cover, k: int) -> Cocycle:
    """Two-cap cocycle g_NS = e^{i k phi}."""
    if cover.base.manifold != "SPHERE2":
        raise ValueError("charge_k_sphere needs a sphere cover")
    north = {c.chart_id for c in cover.charts if _northern(c)}

    def fn(i, j):
        _, phi = _theta_phi(cover.charts[i])
        if (i in north) == (j in north):
            return np.ones(phi.shape + (1, 1), dtype=complex)
        sign = 1 if i in north else -1
        return u1(sign * k * phi)

    return Cocycle.from_function(cover, U1, fn)


def _northern(chart: Chart) -> bool:
    """Charts whose trivialisation is the northern one (centre above the equator)."""
    mid_row = chart.start[0] + chart.shape[0] / 2
    return mid_row < chart.base.dims[0] / 2


def ramp_profile(theta: np.ndarray, ramp=MONOPOLE_RAMP) -> np.ndarray:
    """Smooth step s(theta): 0 near the north pole, 1 near the south pole."""
    a, b = ramp
    return smoothstep((theta - a) / (b - a))


def monopole_connection(P: Cocycle, k: int, ramp=MONOPOLE_RAMP) -> ConnectionForm:
    """A_N = -i k s dphi, A_S = i k (1 - s) dphi with the smooth step ``s``.

    Both local forms vanish near their pole, which keeps the discrete
    Chern integral an exact telescoping sum.  The curvature is
    F = -i k s'(theta) dtheta ^ dphi on both caps.
    """
    arrays = []
    for c in P.cover.charts:
        theta, _ = _theta_phi(c)
        s = ramp_profile(theta, ramp)
        aphi = -1j * k * s if _northern(c) else 1j * k * (1 - s)
        comps = np.zeros((2,) + c.shape + (1, 1), dtype=complex)
        comps[1, ..., 0, 0] = aphi
        arrays.append(comps)
    return ConnectionForm.from_arrays(P, arrays)


def charge_k_sphere_pair(n_theta: int = 128, k: int = 1, ramp=MONOPOLE_RAMP, n_phi=None, cover=None):
    cover = cover or default_cover(sphere(n_theta, n_phi))
    P = charge_k_sphere(cover, k)
    return P, monopole_connection(P, k, ramp)


def concentrating_monopole(n_theta: int, nu: float, k: int = 1, n_phi=None, cover=None, radius: float = 2.5):
    """Charge-k pair whose flux sits in the polar cap theta <= radius/nu."""
    r = radius / nu
    return charge_k_sphere_pair(n_theta, k, ramp=(r / 2, r), n_phi=n_phi, cover=cover)


# --- tori ----------------------------------------------------------------------------


def _shift_between(cover: Cover, i: int, j: int, axis: int) -> np.ndarray:
    """Integer lattice shift x~_j - x~_i of the lifted coordinate along ``axis`` on chart i."""
    ci = cover.charts[i]
    xi = ci.mesh()[axis]
    xj = cover.gather(i, j, cover.charts[j].mesh()[axis])
    return np.rint(xj - xi)


def flux_k_torus(cover: Cover, fluxes) -> tuple[Cocycle, ConnectionForm]:
    """U(1) bundle with constant curvature F = -2 pi i sum k_ab dx_a ^ dx_b.

    ``fluxes`` maps axis pairs (a, b) to integers (an int means {(0, 1): k}).
    Local forms A_i = -2 pi i sum k_ab x~_a dx_b glue through
    g_ij = exp(-2 pi i sum k_ab m_a y~_b), m_a the lattice shift between the
    lifted coordinates of charts i and j.
    """
    if isinstance(fluxes, (int, np.integer)):
        fluxes = {(0, 1): int(fluxes)}
    for a, b in fluxes:
        if not a < b:
            raise ValueError("flux planes must be increasing axis pairs")

    def fn(i, j):
        mesh = cover.charts[i].mesh()
        phase = np.zeros(cover.charts[i].shape)
        for (a, b), k in fluxes.items():
            phase += -2 * np.pi * k * _shift_between(cover, i, j, a) * mesh[b]
        return u1(phase)

    P = Cocycle.from_function(cover, U1, fn)
    arrays = []
    for c in cover.charts:
        mesh = c.mesh()
        comps = np.zeros((c.ndim,) + c.shape + (1, 1), dtype=complex)
        for (a, b), k in fluxes.items():
            comps[b, ..., 0, 0] += -2j * np.pi * k * mesh[a]
        arrays.append(comps)
    return P, ConnectionForm.from_arrays(P, arrays)


def flux_k_torus_pair(d: int = 64, k: int = 1, n: int = 2, cover=None):
    cover = cover or default_cover(torus(n, d))
    return flux_k_torus(cover, k)


# --- smooth random data --------------------------------------------------------------


def _ambient(chart: Chart) -> np.ndarray:
    """Coordinates of an embedding in which smooth global functions are polynomials/trig."""
    mesh = chart.mesh()
    if chart.base is not None and chart.base.manifold == "SPHERE2":
        th, ph = mesh
        return np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])
    if chart.base is not None:  # torus: periodic trig features
        feats = []
        for x in mesh:
            feats += [np.cos(2 * np.pi * x), np.sin(2 * np.pi * x)]
        return np.stack(feats)
    return np.stack(mesh)


def smooth_scalar(chart: Chart, rng: np.random.Generator, modes: int = 3) -> np.ndarray:
    """A random smooth global function sampled on a chart (unit-ish amplitude).

    The same generator state produces the same global function on every chart.
    """
    X = _ambient(chart)
    out = np.zeros(chart.shape)
    for _ in range(modes):
        w = rng.standard_normal(X.shape[0])
        phase = rng.uniform(0, 2 * np.pi)
        out += np.cos(np.tensordot(w, X, axes=(0, 0)) + phase) / modes
    return out


def random_smooth_gauge(cover: Cover, group: Group, rng: np.random.Generator,
                        amplitude: float = 0.5, modes: int = 3) -> GaugeField:
    """Independent smooth gauge on every chart, exp of a smooth algebra field."""
    locs = []
    for c in cover.charts:
        coeffs = np.stack([smooth_scalar(c, rng, modes) for _ in range(group.dim)], axis=-1)
        locs.append(exp_map(group, from_coords(group, amplitude * coeffs)))
    return GaugeField(cover, group, tuple(locs))


def pole_cutoff(chart: Chart, width: float = 0.15) -> np.ndarray:
    """1 away from the poles, 0 within ``width`` of them (ones on tori)."""
    if chart.base is None or chart.base.manifold != "SPHERE2":
        return np.ones(chart.shape)
    th = chart.mesh()[0]
    return smoothstep((th - width) / width) * smoothstep((np.pi - width - th) / width)


def global_u1_form(cover: Cover, rng: np.random.Generator, amplitude: float = 0.3, modes: int = 3):
    """A random smooth global u(1)-valued 1-form, as per-chart component arrays.

    On the sphere the form is written in an orthonormal frame and cut off
    near the poles, so its coordinate components are smooth on each cap.
    """
    seeds = rng.integers(0, 2**32, size=cover.base.ndim)
    out = []
    for c in cover.charts:
        cut = pole_cutoff(c)
        comps = np.zeros((c.ndim,) + c.shape + (1, 1), dtype=complex)
        for a in range(c.ndim):
            f = smooth_scalar(c, np.random.default_rng(seeds[a]), modes)
            if c.base is not None and c.base.manifold == "SPHERE2" and a == 1:
                f = f * np.sin(c.mesh()[0])
            comps[a, ..., 0, 0] = 1j * amplitude * cut * f
        out.append(comps)
    return out


def perturb_connection(A: ConnectionForm, arrays, scale: float = 1.0) -> ConnectionForm:
    """A + scale * a for a global adjoint-valued form ``a`` given per chart."""
    return ConnectionForm.from_arrays(A.cocycle, [loc.comps + scale * a for loc, a in zip(A.locals, arrays)])


def coboundary_su2(cover: Cover, rng: np.random.Generator, amplitude: float = 0.6) -> Cocycle:
    """Nontrivially-presented trivial SU(2) bundle: g_ij = s_i s_j^{-1}, s_i smooth per chart."""
    s = random_smooth_gauge(cover, SU2, rng, amplitude)
    from .lie import dagger

    def fn(i, j):
        return s.locals[i] @ dagger(cover.gather(i, j, s.locals[j]))

    return Cocycle.from_function(cover, SU2, fn)


def small_random_connection(P: Cocycle, rng: np.random.Generator, amplitude: float = 0.05) -> ConnectionForm:
    """Small smooth connection on a trivial cocycle (one global algebra-valued form)."""
    if P.transitions:
        raise ValueError("small_random_connection expects the trivial cocycle")
    G, cover = P.group, P.cover
    seeds = rng.integers(0, 2**32, size=(cover.base.ndim, G.dim))
    arrays = []
    for c in cover.charts:
        cut = pole_cutoff(c)
        comps = np.zeros((c.ndim,) + c.shape + (G.n, G.n), dtype=complex)
        for a in range(c.ndim):
            coeff = np.stack([smooth_scalar(c, np.random.default_rng(seeds[a, b])) for b in range(G.dim)], axis=-1)
            comps[a] = from_coords(G, amplitude * cut[..., None] * coeff)
        arrays.append(comps)
    return ConnectionForm.from_arrays(P, arrays)
