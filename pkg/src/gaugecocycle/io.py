"""File formats: sectioned key-value specs, field snapshots (CSV) and bundle specs.

The formats are described in ``docs/formats.md``.
"""

from __future__ import annotations

import csv
import os
import re
from dataclasses import dataclass

import numpy as np

from .bundle import Cocycle, ConnectionForm
from .errors import MarginExhausted, SpecParse
from .grid import BaseGrid, Chart, default_cover, sphere, sphere_cover, torus, torus_cover
from .lie import Group, get_group

SNAPSHOT_HEADER = ["manifold_id", "dims", "degree", "group_id"]
MANIFOLDS = {"t2": ("TORUS2", 2), "t4": ("TORUS4", 4), "s2": ("SPHERE2", 2)}
BUILTINS = ("trivial", "charge_k_sphere", "flux_k_torus")


# --- sectioned key-value text ------------------------------------------------------------


_SECTION = re.compile(r"^\[([A-Za-z_][\w-]*)\]$")


def parse_keyvalue(text: str) -> dict[str, dict[str, str]]:
    """``[section]`` headers followed by ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, dict[str, str]] = {}
    current = None
    for num, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            current = m.group(1).lower()
            if current in out:
                raise SpecParse(f"line {num}: duplicate section [{current}]")
            out[current] = {}
            continue
        if "=" not in line:
            raise SpecParse(f"line {num}: expected 'key = value', got {raw.strip()!r}")
        if current is None:
            raise SpecParse(f"line {num}: key outside of any [section]")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise SpecParse(f"line {num}: empty key or value")
        if key in out[current]:
            raise SpecParse(f"line {num}: duplicate key {key!r} in [{current}]")
        out[current][key] = value
    return out


def format_keyvalue(sections: dict[str, dict[str, str]]) -> str:
    parts = []
    for name, kv in sections.items():
        parts.append(f"[{name}]")
        parts.extend(f"{k} = {v}" for k, v in kv.items())
        parts.append("")
    return "\n".join(parts)


def get_int(kv: dict, key: str, default=None) -> int:
    if key not in kv:
        if default is None:
            raise SpecParse(f"missing key {key!r}")
        return default
    try:
        return int(kv[key])
    except ValueError:
        raise SpecParse(f"{key} must be an integer, got {kv[key]!r}") from None


def get_float(kv: dict, key: str, default=None, positive: bool = False) -> float:
    if key not in kv:
        if default is None:
            raise SpecParse(f"missing key {key!r}")
        return default
    try:
        v = float(kv[key])
    except ValueError:
        raise SpecParse(f"{key} must be a number, got {kv[key]!r}") from None
    if positive and not v > 0:
        raise SpecParse(f"{key} must be positive")
    return v


def get_bool(kv: dict, key: str, default=None):
    if key not in kv:
        return default
    v = kv[key].lower()
    if v in ("true", "yes", "1"):
        return True
    if v in ("false", "no", "0"):
        return False
    raise SpecParse(f"{key} must be true or false")


# --- field snapshots ---------------------------------------------------------------------


@dataclass
class Snapshot:
    manifold: str
    dims: tuple[int, ...]
    degree: int
    group: Group
    start: tuple[int, ...]
    shape: tuple[int, ...]
    values: np.ndarray  # (ncomp, *shape, N, N) complex


def _dims_text(d) -> str:
    return "x".join(str(int(v)) for v in d)


def _dims_parse(s: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in s.split("x"))
    except ValueError:
        raise SpecParse(f"bad dimension list {s!r}") from None


def write_snapshot(path, values: np.ndarray, base: BaseGrid, degree: int, group: Group,
                   chart: Chart | None = None) -> None:
    """Write a field with leading component axis ``(ncomp, *shape, N, N)``.

    0-forms and group-valued maps may omit the component axis.
    """
    shape = chart.shape if chart is not None else base.dims
    start = chart.start if chart is not None else (0,) * base.ndim
    v = np.asarray(values, dtype=complex)
    if v.ndim == len(shape) + 2:
        v = v[None]
    ncomp, N = v.shape[0], group.n
    flat = np.moveaxis(v, 0, len(shape)).reshape(int(np.prod(shape)), ncomp * N * N)
    cols = [f"c{m}_{r}{c}_{part}" for m in range(ncomp) for r in range(N) for c in range(N) for part in ("re", "im")]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SNAPSHOT_HEADER)
        w.writerow([base.manifold, _dims_text(base.dims), degree, group.name])
        w.writerow(["chart_start", "chart_shape"])
        w.writerow([_dims_text(start), _dims_text(shape)])
        w.writerow(cols)
        for row in flat:
            w.writerow([repr(float(x)) for z in row for x in (z.real, z.imag)])


def read_snapshot(path) -> Snapshot:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 5 or rows[0] != SNAPSHOT_HEADER or rows[2] != ["chart_start", "chart_shape"]:
        raise SpecParse(f"{path}: not a field snapshot")
    manifold, dims, degree, gid = rows[1]
    G = get_group(gid)
    start, shape = _dims_parse(rows[3][0]), _dims_parse(rows[3][1])
    ncols = len(rows[4])
    N = G.n
    if ncols % (2 * N * N):
        raise SpecParse(f"{path}: {ncols} columns do not match group {gid}")
    ncomp = ncols // (2 * N * N)
    data = np.array(rows[5:], dtype=float)
    if data.shape != (int(np.prod(shape)), ncols):
        raise SpecParse(f"{path}: expected {int(np.prod(shape))} rows of {ncols} values")
    z = (data[:, 0::2] + 1j * data[:, 1::2]).reshape(shape + (ncomp, N, N))
    return Snapshot(manifold, _dims_parse(dims), int(degree), G, start, shape, np.moveaxis(z, len(shape), 0))


# --- bundle specs ------------------------------------------------------------------------


def base_from_spec(kv: dict) -> BaseGrid:
    m = kv.get("manifold", "").lower()
    if m not in MANIFOLDS:
        raise SpecParse(f"manifold must be one of {sorted(MANIFOLDS)}")
    res = get_int(kv, "resolution")
    try:
        return sphere(res) if m == "s2" else torus(MANIFOLDS[m][1], res)
    except ValueError as exc:
        raise SpecParse(f"resolution {res}: {exc}") from None


def cover_from_spec(kv: dict, base: BaseGrid):
    try:
        return _cover_from_spec(kv, base)
    except (ValueError, MarginExhausted) as exc:
        raise SpecParse(f"cover does not fit the grid: {exc}") from None


def _cover_from_spec(kv: dict, base: BaseGrid):
    margin = kv.get("margin")
    if base.manifold == "SPHERE2":
        return sphere_cover(base, int(margin)) if margin else default_cover(base)
    if "margin" not in kv and "splits" not in kv:
        return default_cover(base)
    splits = get_int(kv, "splits", 4 if base.ndim == 2 else 2)
    return torus_cover(base, (splits,) * base.ndim, margin=get_int(kv, "margin", 6 if base.ndim == 2 else 4))


def _fluxes(text: str) -> dict:
    out = {}
    for part in text.split(","):
        try:
            plane, k = part.split(":")
            a, b = plane.split("-")
            out[(int(a), int(b))] = int(k)
        except ValueError:
            raise SpecParse(f"bad flux entry {part.strip()!r} (expected a-b:k)") from None
    return out


def _group(kv: dict) -> Group:
    name = kv.get("group", "U1").upper()
    if name not in ("U1", "SU2"):
        raise SpecParse("group must be U1 or SU2")
    return get_group(name)


def check_bundle_spec(kv: dict):
    """Static checks of a ``[bundle]`` section; nothing is computed."""
    base = base_from_spec(kv)
    G = _group(kv)
    builtin = kv.get("builtin")
    files = {k: v for k, v in kv.items() if k.startswith("transition.")}
    if builtin and files:
        raise SpecParse("give either a builtin or transition files, not both")
    if builtin is not None and builtin not in BUILTINS:
        raise SpecParse(f"builtin must be one of {BUILTINS}")
    if builtin is None and not files:
        raise SpecParse("bundle needs a builtin or transition.<i>-<j> files")
    if builtin == "charge_k_sphere" and (base.manifold != "SPHERE2" or G.name != "U1"):
        raise SpecParse("charge_k_sphere needs manifold = s2 and group = U1")
    if builtin == "flux_k_torus" and (base.manifold == "SPHERE2" or G.name != "U1"):
        raise SpecParse("flux_k_torus needs a torus and group = U1")
    fl = None
    if builtin == "flux_k_torus":
        fl = _fluxes(kv["fluxes"]) if "fluxes" in kv else {(0, 1): get_int(kv, "k")}
        for a, b in fl:
            if not 0 <= a < b < base.ndim:
                raise SpecParse(f"flux plane {a}-{b} does not exist on a {base.ndim}-torus")
    k = get_int(kv, "k") if builtin == "charge_k_sphere" else None
    return base, G, builtin, files, fl, k


def bundle_from_spec(kv: dict, root: str = ".") -> tuple[Cocycle, ConnectionForm]:
    """Build (P, A) from a ``[bundle]`` section."""
    from .builtins import charge_k_sphere_pair, flux_k_torus, trivial_bundle
    from .bundle import pou_connection

    base, G, builtin, files, fl, k = check_bundle_spec(kv)
    cover = cover_from_spec(kv, base)
    if builtin == "trivial":
        return trivial_bundle(cover, G)
    if builtin == "charge_k_sphere":
        return charge_k_sphere_pair(base.dims[0], k, n_phi=base.dims[1], cover=cover)
    if builtin == "flux_k_torus":
        return flux_k_torus(cover, fl)
    given = {}
    for key, rel in files.items():
        try:
            i, j = (int(v) for v in key.split(".", 1)[1].split("-"))
        except ValueError:
            raise SpecParse(f"bad transition key {key!r}") from None
        if not (0 <= i < len(cover) and 0 <= j < len(cover)) or (i, j) not in cover.pairs:
            raise SpecParse(f"charts {i} and {j} do not overlap in this cover")
        path = rel if os.path.isabs(rel) else os.path.join(root, rel)
        if not os.path.exists(path):
            raise SpecParse(f"missing transition file {path}")
        snap = read_snapshot(path)
        c = cover.charts[i]
        if snap.group is not G or snap.shape != c.shape or snap.start != tuple(c.start):
            raise SpecParse(f"{path} does not match chart {i} of the cover")
        given[(min(i, j), max(i, j))] = snap.values[0] if i < j else np.conj(np.swapaxes(
            cover.gather(j, i, snap.values[0]), -1, -2))
    P = Cocycle.from_function(cover, G, lambda i, j: given.get((i, j), G.identity(cover.charts[i].shape)))
    return P, pou_connection(P)


def write_bundle_files(P: Cocycle, directory: str, sections: dict | None = None) -> str:
    """Export the transitions g_ij (i < j) as snapshots plus a bundle-spec text."""
    os.makedirs(directory, exist_ok=True)
    base = P.cover.base
    manifold = next(k for k, v in MANIFOLDS.items() if v[0] == base.manifold)
    kv = {"manifold": manifold, "resolution": str(base.dims[0]), "group": P.group.name}
    if sections:
        kv.update(sections)
    for i, j in P.cover.pairs:
        if i < j:
            name = f"g_{i}_{j}.csv"
            write_snapshot(os.path.join(directory, name), P.g(i, j), base, 0, P.group, P.cover.charts[i])
            kv[f"transition.{i}-{j}"] = name
    text = format_keyvalue({"bundle": kv})
    with open(os.path.join(directory, "bundle.spec"), "w", encoding="utf-8") as fh:
        fh.write(text)
    return text
