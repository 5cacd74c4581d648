"""Measured smallness constants per (group, grid family) and their file format."""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, fields
from functools import lru_cache

import numpy as np

from .errors import NonConvergence, SpecParse, StallWithoutCoulomb
from .forms import FormField
from .grid import BaseGrid, box_chart, default_cover, sphere, torus
from .lie import Group, from_coords, get_group

SCHEMA = 1
# Coulomb ladder top: half the U(1) flux quantum, so a chart carrying a full
# unit of flux is never declared small
EPS_COULOMB_CAP = float(np.pi)
COULOMB_TOL = {"U1": 1e-8, "SU2": 1e-6}


@dataclass(frozen=True)
class SmallnessProfile:
    group: str
    grid: str
    scale: float
    seed: int
    eps_elliptic: float
    eps_coulomb: float
    c_coulomb: float
    flatness_delta: float

    def __post_init__(self):
        for name in ("eps_elliptic", "eps_coulomb", "c_coulomb", "flatness_delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def to_text(self) -> str:
        lines = ["# gaugecocycle smallness profile", f"schema = {SCHEMA}"]
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {v!r}" if isinstance(v, float) else f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SmallnessProfile":
        kv = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise SpecParse(f"profile line without '=': {raw!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            kv[k] = v
        if kv.pop("schema", None) != str(SCHEMA):
            raise SpecParse("unsupported profile schema")
        try:
            args = {}
            for f in fields(cls):
                v = kv.pop(f.name)
                args[f.name] = {"float": float, "int": int}.get(f.type, str)(v)
        except KeyError as exc:
            raise SpecParse(f"profile misses {exc}") from None
        except ValueError as exc:
            raise SpecParse(str(exc)) from None
        if kv:
            raise SpecParse(f"unknown profile keys {sorted(kv)}")
        return cls(**args)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "SmallnessProfile":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def as_dict(self) -> dict:
        return asdict(self)


_PRESET = re.compile(r"^(t2|t4|s2)-(\d+)$")


def preset_grid(name: str) -> BaseGrid:
    """Grid presets ``t2-<d>``, ``t4-<d>`` and ``s2-<n_theta>``."""
    m = _PRESET.match(name)
    if not m:
        raise SpecParse(f"unknown grid preset {name!r}")
    kind, d = m.group(1), int(m.group(2))
    if kind == "s2":
        return sphere(d)
    return torus(2 if kind == "t2" else 4, d)


def preset_name(base: BaseGrid) -> str:
    if base.manifold == "SPHERE2":
        return f"s2-{base.dims[0]}"
    return f"t{base.ndim}-{base.dims[0]}"


def _waves(chart, k: int, seed: int) -> np.ndarray:
    """Smooth plane waves in normalised box coordinates, shape (n, *shape, k), units 1/length."""
    rng = np.random.default_rng(seed)
    L = chart.coords[0][-1] - chart.coords[0][0]
    mesh = np.meshgrid(*[(x - x[0]) / L for x in chart.coords], indexing="ij")
    out = np.zeros((chart.ndim,) + chart.shape + (k,))
    for mu in range(chart.ndim):
        for j in range(k):
            w = rng.standard_normal(chart.ndim)
            ph = rng.uniform(0, 2 * np.pi)
            out[mu, ..., j] = np.cos(np.pi * sum(a * x for a, x in zip(w, mesh)) + ph)
    return out / L


def algebra_form(chart, group: Group, amplitude: float, seed: int) -> FormField:
    """Smooth algebra-valued 1-form on a box chart."""
    return FormField(chart, 1, group, from_coords(group, amplitude * _waves(chart, group.dim, seed)))


def calibration_box(base: BaseGrid, scale: float = 1.0):
    """Flat box with the shape and (scaled) spacing of the first default chart."""
    c0 = default_cover(base).charts[0]
    return box_chart(c0.shape, tuple(scale * h * (n - 1) for h, n in zip(c0.spacing, c0.shape)))


def coulomb_ladder(box, group: Group, seed: int = 0, rungs: int = 8, top: float = EPS_COULOMB_CAP):
    """Run Coulomb gauge fixing over a curvature ladder; returns per-rung records."""
    from .coulomb import chart_curvature_lnhalf, coulomb_gauge

    unit = chart_curvature_lnhalf(algebra_form(box, group, 1.0, seed))
    out = []
    for target in np.geomspace(0.05, top, rungs):
        A = algebra_form(box, group, target / unit, seed)
        curv = chart_curvature_lnhalf(A)
        try:
            r = coulomb_gauge(A, tol=COULOMB_TOL[group.name])
            ok = r.residual_interior <= COULOMB_TOL[group.name] and curv <= top * (1 + 1e-9)
            out.append({"curvature": curv, "ok": bool(ok), "ratio": r.estimate_ratio,
                        "residual": r.residual_interior})
        except (StallWithoutCoulomb, NonConvergence):
            out.append({"curvature": curv, "ok": False, "ratio": float("nan"), "residual": float("nan")})
    return out


def nontrivial_min_energy(base: BaseGrid) -> float:
    """Smallest YM_{n/2} over the nontrivial U(1) built-ins on this grid."""
    from .builtins import charge_k_sphere_pair, flux_k_torus
    from .bundle import curvature, ym_energy

    q = max(base.ndim / 2, 1.0)
    vals = []
    for k in (-1, 1):
        if base.manifold == "SPHERE2":
            _, A = charge_k_sphere_pair(base.dims[0], k, n_phi=base.dims[1])
        else:
            _, A = flux_k_torus(default_cover(base), k)
        vals.append(ym_energy(curvature(A), q))
    return float(min(vals))


def calibrate(group: str | Group, grid: str, scale: float = 1.0, seed: int = 0) -> SmallnessProfile:
    """Measure eps_elliptic, eps_coulomb, c_coulomb and the flatness threshold."""
    from .elliptic import certify_eps_elliptic, drift_norm

    G = get_group(group)
    base = preset_grid(grid)
    box = calibration_box(base, scale)
    drift = algebra_form(box, G, 1.0, seed).comps
    eps_el, _ = certify_eps_elliptic(box, drift / drift_norm(drift, box), seed=seed)
    ladder = coulomb_ladder(box, G, seed)
    good = [r for r in ladder if r["ok"]]
    if not good:
        raise StallWithoutCoulomb("no rung of the curvature ladder reached the Coulomb condition")
    return SmallnessProfile(
        group=G.name, grid=grid, scale=float(scale), seed=int(seed),
        eps_elliptic=float(eps_el),
        eps_coulomb=float(max(r["curvature"] for r in good)),
        c_coulomb=float(max(r["ratio"] for r in good)),
        flatness_delta=0.5 * nontrivial_min_energy(base),
    )


@lru_cache(maxsize=16)
def cached_profile(group: str, grid: str, scale: float = 1.0, seed: int = 0) -> SmallnessProfile:
    return calibrate(group, grid, scale, seed)


def profile_for(group: Group, base: BaseGrid) -> SmallnessProfile:
    return cached_profile(group.name, preset_name(base))
