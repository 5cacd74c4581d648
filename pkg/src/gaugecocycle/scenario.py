"""Batch scenarios: spec parsing, pipeline orchestration and deterministic reports."""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import io
from .errors import GaugeCocycleError, PipelineError, SpecParse

SCHEMA = 1
KINDS = (
    "VALIDATE_BUNDLE",
    "COULOMB_FIX",
    "SMOOTH_COCYCLE",
    "TOPOLOGY_CLASS",
    "FLATNESS",
    "STABILIZATION",
    "ELLIPTIC_BENCH",
    "CALIBRATE_CONSTANTS",
)
# sections each kind reads; [scenario] is always required
NEEDS_BUNDLE = {"VALIDATE_BUNDLE", "COULOMB_FIX", "SMOOTH_COCYCLE", "TOPOLOGY_CLASS", "FLATNESS", "STABILIZATION"}
KNOWN_SECTIONS = {"scenario", "bundle", "params", "solver", "profile"}


@dataclass
class ScenarioSpec:
    kind: str
    name: str
    seed: int
    sections: dict
    root: str = "."

    @property
    def params(self) -> dict:
        return self.sections.get("params", {})

    @property
    def solver(self) -> dict:
        return self.sections.get("solver", {})

    @classmethod
    def from_text(cls, text: str, root: str = ".") -> "ScenarioSpec":
        sections = io.parse_keyvalue(text)
        unknown = set(sections) - KNOWN_SECTIONS
        if unknown:
            raise SpecParse(f"unknown sections {sorted(unknown)}")
        sc = sections.get("scenario")
        if sc is None:
            raise SpecParse("missing [scenario] section")
        kind = sc.get("kind", "").upper()
        if kind not in KINDS:
            raise SpecParse(f"kind must be one of {', '.join(KINDS)}")
        seed = io.get_int(sc, "seed", 0)
        if seed < 0:
            raise SpecParse("seed must be an unsigned integer")
        spec = cls(kind, sc.get("name", kind.lower()), seed, sections, root)
        spec.check()
        return spec

    @classmethod
    def load(cls, path) -> "ScenarioSpec":
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        return cls.from_text(text, os.path.dirname(os.path.abspath(path)))

    def check(self) -> None:
        """Schema checks that need no computation: sections, files, positive tolerances."""
        if self.kind in NEEDS_BUNDLE:
            b = self.sections.get("bundle")
            if b is None:
                raise SpecParse(f"{self.kind} needs a [bundle] section")
            if self.kind == "STABILIZATION":
                # the sequence supplies its own bundles; only the grid and charge are read
                if io.base_from_spec(b).manifold != "SPHERE2":
                    raise SpecParse("STABILIZATION sequences are built on the sphere")
                io.get_int(b, "k", 1)
                if self.params.get("family", "perturbed") not in ("perturbed", "concentrating"):
                    raise SpecParse("family must be 'perturbed' or 'concentrating'")
            else:
                io.check_bundle_spec(b)
            for key, rel in b.items():
                if key.startswith("transition."):
                    path = rel if os.path.isabs(rel) else os.path.join(self.root, rel)
                    if not os.path.exists(path):
                        raise SpecParse(f"referenced file does not exist: {path}")
        for sec in ("solver", "params"):
            for key, v in self.sections.get(sec, {}).items():
                if key.endswith("tol") or key.startswith("tol"):
                    io.get_float(self.sections[sec], key, positive=True)
        prof = self.sections.get("profile", {})
        if "path" in prof:
            p = prof["path"] if os.path.isabs(prof["path"]) else os.path.join(self.root, prof["path"])
            if not os.path.exists(p):
                raise SpecParse(f"referenced file does not exist: {p}")


class Streams:
    """Counted random streams derived from the spec seed."""

    def __init__(self, seed: int):
        self.seed = seed
        self.count = 0

    def next(self) -> np.random.Generator:
        self.count += 1
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(self.count,)))


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


@dataclass
class Report:
    spec: ScenarioSpec
    stages: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    error: PipelineError | None = None

    def _stage(self, name: str) -> dict:
        for s in self.stages:
            if s["name"] == name:
                return s
        s = {"name": name, "metrics": {}}
        self.stages.append(s)
        return s

    def metric(self, stage: str, name: str, value, tol=None, op: str = "<=") -> bool | None:
        """Record a value; with a tolerance it becomes a pass/fail criterion."""
        ok = None
        if op == "==":
            ok = value == tol
        elif tol is not None:
            ok = {"<=": lambda: value <= tol, ">=": lambda: value >= tol, "<": lambda: value < tol,
                  ">": lambda: value > tol}[op]()
        self._stage(stage)["metrics"][name] = {"value": value, "tolerance": tol, "comparison": op if tol is not None
                                               else None, "pass": None if ok is None else bool(ok)}
        return ok

    @property
    def criteria(self) -> list:
        return [(s["name"], k, m) for s in self.stages for k, m in s["metrics"].items() if m["pass"] is not None]

    @property
    def passed(self) -> bool:
        return self.error is None and all(m["pass"] for _, _, m in self.criteria)

    def as_dict(self) -> dict:
        return _clean({
            "schema": SCHEMA,
            "scenario": {"kind": self.spec.kind, "name": self.spec.name, "seed": self.spec.seed},
            "spec": self.spec.sections,
            "stages": self.stages,
            "tables": self.tables,
            **self.extra,
            "error": None if self.error is None else {"stage": self.error.stage, "type": type(self.error.cause).__name__,
                                                      "message": str(self.error.cause)},
            "criteria_total": len(self.criteria),
            "criteria_failed": [f"{s}.{k}" for s, k, m in self.criteria if not m["pass"]],
            "passed": self.passed,
        })

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stage", "metric", "value", "tolerance", "comparison", "pass"])
        for s in self.stages:
            for k, m in s["metrics"].items():
                v = _clean(m["value"])
                w.writerow([s["name"], k, json.dumps(v) if isinstance(v, (list, dict)) else v,
                            "" if m["tolerance"] is None else _clean(m["tolerance"]),
                            m["comparison"] or "", "" if m["pass"] is None else m["pass"]])
        return buf.getvalue()

    @contextmanager
    def stage(self, name: str):
        """Time a stage and attribute module errors to it."""
        self._stage(name)
        t0 = time.perf_counter()
        try:
            yield
        except PipelineError:
            raise
        except (GaugeCocycleError, ValueError, np.linalg.LinAlgError) as exc:
            raise PipelineError(name, exc) from exc
        finally:
            self.timings[name] = round(time.perf_counter() - t0, 6)


def _table_csv(rows: list[dict]) -> str:
    buf = _io.StringIO()
    if not rows:
        return ""
    cols = list(rows[0])
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([json.dumps(_clean(r[c])) if isinstance(r[c], (list, dict, tuple)) else _clean(r[c]) for c in cols])
    return buf.getvalue()


# --- helpers ----------------------------------------------------------------------------


def _bundle(spec: ScenarioSpec, rep: Report):
    with rep.stage("bundle"):
        P, A = io.bundle_from_spec(spec.sections["bundle"], spec.root)
        rep.metric("bundle", "charts", len(P.cover))
        rep.metric("bundle", "group", P.group.name)
        rep.metric("bundle", "manifold", P.cover.base.manifold)
    return P, A


def _profile(spec: ScenarioSpec, P):
    from .profile import SmallnessProfile, profile_for

    prof = spec.sections.get("profile", {})
    if "path" in prof:
        p = prof["path"] if os.path.isabs(prof["path"]) else os.path.join(spec.root, prof["path"])
        return SmallnessProfile.load(p)
    return profile_for(P.group, P.cover.base)


def _expect_class(text: str):
    vals = [int(v) for v in text.split(",")]
    return vals[0] if len(vals) == 1 else tuple(vals)


def _random_gauged(P, A, rng):
    from .builtins import random_smooth_gauge
    from .bundle import apply_gauge

    rho = random_smooth_gauge(P.cover, P.group, rng)
    B = apply_gauge(A, rho)
    return B.cocycle, B


# --- scenario kinds ----------------------------------------------------------------------


def _validate_bundle(spec, rep, streams, out_dir):
    from .bundle import cocycle_residual, gluing_residual
    from .lie import is_group_element

    P, A = _bundle(spec, rep)
    tol = io.get_float(spec.params, "cocycle_tol", 1e-12, positive=True)
    gtol = io.get_float(spec.params, "gluing_tol", 1e-10, positive=True)
    with rep.stage("validate"):
        rep.metric("validate", "cocycle_residual", cocycle_residual(P), tol)
        rep.metric("validate", "inverse_residual", P.inverse_residual(), tol)
        rep.metric("validate", "transitions_in_group",
                   all(is_group_element(P.group, g, tol) for g in P.transitions.values()), True, "==")
        rep.metric("validate", "gluing_residual", gluing_residual(A), gtol)
    n = io.get_int(spec.params, "random_gauges", 3)
    if n:
        with rep.stage("gauge_covariance"):
            worst = max(cocycle_residual(_random_gauged(P, A, streams.next())[0]) for _ in range(n))
            rep.metric("gauge_covariance", "max_gauged_cocycle_residual", worst, tol)


def _coulomb_fix(spec, rep, streams, out_dir):
    from .bundle import cocycle_residual, curvature, ym_energy
    from .coulomb import coulomb_gauge, glue_coulomb

    P, A = _bundle(spec, rep)
    if io.get_bool(spec.params, "random_gauge", True):
        with rep.stage("gauge"):
            P, A = _random_gauged(P, A, streams.next())
    default_tol = 1e-8 if P.group.name == "U1" else 1e-5
    tol = io.get_float(spec.solver, "coulomb_tol", default_tol, positive=True)
    with rep.stage("coulomb"):
        results = [coulomb_gauge(loc, tol=min(tol, 1e-8)) for loc in A.locals]
        rep.metric("coulomb", "max_residual_interior", max(r.residual_interior for r in results), tol)
        rep.metric("coulomb", "max_residual_boundary", max(r.residual_boundary for r in results))
        rep.metric("coulomb", "max_estimate_ratio", max(r.estimate_ratio for r in results))
        rep.tables["charts"] = [{"chart": i, **r.summary()} for i, r in enumerate(results)]
    with rep.stage("glue"):
        h, C = glue_coulomb(P, A, results)
        rep.metric("glue", "coulomb_cocycle_residual", cocycle_residual(h), 1e-12)
        q = max(P.cover.base.ndim / 2, 1.0)
        dym = abs(ym_energy(curvature(C), q) - ym_energy(curvature(A), q))
        rep.metric("glue", "ym_change", dym, 1e-10 if P.group.name == "U1" else None)


def _smooth_cocycle(spec, rep, streams, out_dir):
    from .smoothing import compare_cocycles, perturb_cocycle, smooth_cocycle
    from .topology import class_of_cocycle

    P, _ = _bundle(spec, rep)
    eps = io.get_float(spec.params, "eps", 1e-3)
    width = io.get_float(spec.params, "width_cells", 2.0, positive=True) * min(P.cover.base.spacing)
    with rep.stage("perturb"):
        Pt = perturb_cocycle(P, eps, streams.next()) if eps > 0 else P
    with rep.stage("smooth"):
        h, srep = smooth_cocycle(Pt, width)
        rep.metric("smooth", "residual_before", srep.residual_before)
        rep.metric("smooth", "residual_after", srep.residual_after, 1e-12)
        rep.metric("smooth", "max_sup_distance_to_input", srep.max_sup,
                   io.get_float(spec.params, "sup_tol", 1e-2, positive=True))
        rep.metric("smooth", "max_w1n_distance_to_input", srep.max_w1n)
        rep.metric("smooth", "max_sup_distance_to_original", compare_cocycles(P, h).max_sup)
        rep.extra["smoothing"] = srep.as_dict()
    if P.group.name == "U1" and P.cover.base.ndim == 2:
        with rep.stage("class"):
            before, after = class_of_cocycle(P).invariant, class_of_cocycle(h).invariant
            rep.metric("class", "class_before", before)
            rep.metric("class", "class_after", after, before, "==")


def _topology_class(spec, rep, streams, out_dir):
    from .topology import coulomb_bundle

    P, A = _bundle(spec, rep)
    eps = io.get_float(spec.params, "eps_coulomb", 0.0) or None
    prof = None if eps else _profile(spec, P)
    with rep.stage("coulomb_bundle"):
        _, _, cls = coulomb_bundle(P, A, prof, eps)
        rep.metric("coulomb_bundle", "class", cls.invariant,
                   _expect_class(spec.params["expect_class"]) if "expect_class" in spec.params else None, "==")
        if P.group.name == "U1":
            rep.metric("coulomb_bundle", "integrality_deviation", cls.deviation, 1e-6)
        rep.metric("coulomb_bundle", "flat", cls.flat)
        rep.metric("coulomb_bundle", "refinements", cls.refinements)
        rep.extra["topology_class"] = cls.as_dict()
    n = io.get_int(spec.params, "random_gauges", 0)
    if n:
        with rep.stage("gauge_invariance"):
            classes = [coulomb_bundle(*_random_gauged(P, A, streams.next()), prof, eps)[2].invariant
                       for _ in range(n)]
            rep.metric("gauge_invariance", "distinct_classes", len({str(c) for c in classes + [cls.invariant]}), 1, "==")


def _flatness(spec, rep, streams, out_dir):
    from .builtins import global_u1_form, perturb_connection
    from .profile import nontrivial_min_energy
    from .topology import flatness_detect

    P, A = _bundle(spec, rep)
    if io.get_bool(spec.params, "random_gauge", False):
        with rep.stage("gauge"):
            P, A = _random_gauged(P, A, streams.next())
    amp = io.get_float(spec.params, "perturb_amplitude", 0.0)
    if amp:
        with rep.stage("perturb"):
            A = perturb_connection(A, global_u1_form(P.cover, streams.next(), amplitude=amp))
    prof = _profile(spec, P)
    with rep.stage("flatness"):
        v = flatness_detect(P, A, prof)
        expect = io.get_bool(spec.params, "expect_flat")
        rep.metric("flatness", "is_topologically_flat", v.is_topologically_flat, expect, "==")
        flat_tol = io.get_float(spec.params, "flat_ym_tol", 1e-10, positive=True)
        rep.metric("flatness", "ym", v.ym_value, flat_tol if expect else None)
        rep.metric("flatness", "delta", v.delta_used)
        rep.extra["flatness"] = v.as_dict()
    if P.group.name == "U1" and P.cover.base.ndim == 2:
        with rep.stage("energy_gap"):
            rep.metric("energy_gap", "margin_factor", nontrivial_min_energy(P.cover.base) / prof.flatness_delta, 2.0,
                       ">=")


def _stabilization(spec, rep, streams, out_dir):
    from .builtins import charge_k_sphere_pair, concentrating_monopole, global_u1_form, perturb_connection
    from .topology import stabilization_experiment

    b = spec.sections["bundle"]
    base = io.base_from_spec(b)
    if base.manifold != "SPHERE2":
        raise SpecParse("STABILIZATION sequences are built on the sphere")
    nt = base.dims[0]
    k = io.get_int(b, "k", 1)
    family = spec.params.get("family", "perturbed")
    terms = io.get_int(spec.params, "terms", 10)
    with rep.stage("sequence"):
        seq = []
        if family == "concentrating":
            for nu in range(1, terms + 1):
                seq.append(concentrating_monopole(nt, 2.0 ** (nu - 1) if spec.params.get("growth") == "geometric"
                                                  else float(nu), k))
        elif family == "perturbed":
            P, A = charge_k_sphere_pair(nt, k)
            amp = io.get_float(spec.params, "amplitude", 0.3)
            for nu in range(1, terms + 1):
                B = perturb_connection(A, global_u1_form(P.cover, streams.next(), amplitude=amp / nu))
                seq.append(_random_gauged(P, B, streams.next()))
        else:
            raise SpecParse("family must be 'perturbed' or 'concentrating'")
        rep.metric("sequence", "terms", len(seq))
    fractions = tuple(float(x) for x in spec.params.get("fractions", "0.001,0.01,0.05,0.1").split(","))
    with rep.stage("experiment"):
        r = stabilization_experiment(seq, fractions)
        expect = io.get_bool(spec.params, "expect_bubbling")
        rep.metric("experiment", "bubbling_detected", r["bubbling_detected"], expect, "==")
        rep.metric("experiment", "stable_from", r["stable_from"])
        rep.metric("experiment", "classes", r["classes"])
        if expect is False:
            rep.metric("experiment", "constant_class", len(set(map(str, r["classes"]))), 1, "==")
            share = dict(r["uniform_equiintegrability"])[0.01] / min(e["ym"] for e in r["entries"])
            rep.metric("experiment", "max_energy_share_on_1pct", share, 0.1)
        rep.extra["uniform_equiintegrability"] = r["uniform_equiintegrability"]
        rows = []
        for e in r["entries"]:
            row = {"nu": e["nu"], "ym": e["ym"], "outcome": e["outcome"], "class": e["cls"],
                   "c0_distance_to_previous": e["c0_distance_to_previous"]}
            row.update({f"energy_on_{f:g}": v for f, v in e["equiintegrability"]})
            rows.append(row)
        rep.tables["stabilization"] = rows


def _elliptic_bench(spec, rep, streams, out_dir):
    from .elliptic import DriftProblem, certify_eps_elliptic, smooth_drift, solve_drift_dirichlet
    from .grid import box_chart

    N = io.get_int(spec.params, "components", 2)
    tol = io.get_float(spec.solver, "tol", 1e-10, positive=True)
    res = [int(v) for v in spec.params.get("resolutions", "17,33,65").split(",")]
    with rep.stage("manufactured"):
        errs = []
        for n in res:
            c = box_chart((n, n))
            x, y = c.mesh()
            exact = np.sin(np.pi * x) * np.sin(np.pi * y)
            p = DriftProblem(c, np.zeros((2, n, n, N, N)), np.repeat((-2 * np.pi**2 * exact)[..., None], N, -1))
            v, _ = solve_drift_dirichlet(p, tol=tol)
            errs.append(float(np.max(np.abs(v - exact[..., None]))))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        rep.metric("manufactured", "errors", errs)
        rep.metric("manufactured", "min_order", float(orders.min()), 1.8, ">=")
    n = res[len(res) // 2]
    c = box_chart((n, n))
    with rep.stage("contraction"):
        A = smooth_drift(c, N, seed=spec.seed)
        eps, f = certify_eps_elliptic(c, A, seed=spec.seed)
        rep.metric("contraction", "eps_elliptic", eps, 0.0, ">")
        rep.metric("contraction", "probe_factor", f, 0.9)
        x, y = c.mesh()
        F = np.stack([np.sin(np.pi * x) * np.cos(y) + j * x * y for j in range(N)], -1).astype(complex)
        p = DriftProblem(c, (eps * A).astype(complex), F)
        u, sr = solve_drift_dirichlet(p, tol=tol, max_iter=400)
        rep.metric("contraction", "solver_contraction_factor", sr.contraction_factor, 0.9)
        rep.extra["solver_report"] = json.loads(sr.to_json())
    with rep.stage("initializations"):
        outs = []
        for _ in range(2):
            w = streams.next().standard_normal(F.shape)
            w[0], w[-1], w[:, 0], w[:, -1] = 0, 0, 0, 0
            outs.append(solve_drift_dirichlet(p, tol=tol, initial=w, max_iter=400)[0])
        rep.metric("initializations", "max_difference", float(np.max(np.abs(outs[0] - outs[1]))), 10 * tol)


def _calibrate(spec, rep, streams, out_dir):
    from .profile import SmallnessProfile, calibrate

    group = spec.params.get("group", "U1").upper()
    grid = spec.params.get("grid", "t2-64")
    scale = io.get_float(spec.params, "scale", 1.0, positive=True)
    with rep.stage("calibrate"):
        prof = calibrate(group, grid, scale, spec.seed)
        for k in ("eps_elliptic", "eps_coulomb", "c_coulomb", "flatness_delta"):
            rep.metric("calibrate", k, getattr(prof, k), 0.0, ">")
        text = prof.to_text()
        rep.metric("calibrate", "round_trip_identical", SmallnessProfile.from_text(text).to_text() == text, True, "==")
        rep.extra["profile"] = prof.as_dict()
        if out_dir:
            prof.save(os.path.join(out_dir, "profile.txt"))
    s2 = io.get_float(spec.params, "check_scale", 0.0)
    if s2:
        with rep.stage("scale_check"):
            other = calibrate(group, grid, s2, spec.seed)
            rel = abs(other.eps_elliptic - prof.eps_elliptic) / prof.eps_elliptic
            rep.metric("scale_check", "eps_elliptic_relative_change", rel, 0.10)


RUNNERS = {
    "VALIDATE_BUNDLE": _validate_bundle,
    "COULOMB_FIX": _coulomb_fix,
    "SMOOTH_COCYCLE": _smooth_cocycle,
    "TOPOLOGY_CLASS": _topology_class,
    "FLATNESS": _flatness,
    "STABILIZATION": _stabilization,
    "ELLIPTIC_BENCH": _elliptic_bench,
    "CALIBRATE_CONSTANTS": _calibrate,
}


def execute(spec: ScenarioSpec, out_dir: str | None = None) -> Report:
    """Run a scenario; module errors are recorded on the report and re-raised as PipelineError."""
    rep = Report(spec)
    try:
        RUNNERS[spec.kind](spec, rep, Streams(spec.seed), out_dir)
    except PipelineError as exc:
        rep.error = exc
    return rep


def write_report(rep: Report, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(rep.to_json())
    with open(os.path.join(out_dir, "report.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(rep.to_csv())
    for name, rows in rep.tables.items():
        with open(os.path.join(out_dir, f"{name}.csv"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(_table_csv(rows))
    with open(os.path.join(out_dir, "timings.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(rep.timings, indent=2) + "\n")


def run(spec_path, out_dir: str) -> Report:
    """Parse, execute and write; raises the stage-attributed PipelineError after writing."""
    spec = ScenarioSpec.load(spec_path)
    os.makedirs(out_dir, exist_ok=True)
    rep = execute(spec, out_dir)
    write_report(rep, out_dir)
    if rep.error is not None:
        raise rep.error
    return rep
