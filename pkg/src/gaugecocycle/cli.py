"""Command line entry point: ``run``, ``calibrate`` and ``validate``.

Exit codes: 0 when every criterion passes, 1 when a criterion fails,
2 for an invalid spec or arguments, 3 for a stage error.
"""

from __future__ import annotations

import argparse
import os
import sys

# the thread count is the only setting read from the environment; it has to be
# in place before numpy loads its BLAS
_THREADS = os.environ.get("GAUGECOCYCLE_THREADS")
if _THREADS:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[_var] = _THREADS

from .errors import PipelineError, SpecParse  # noqa: E402

EXIT_OK, EXIT_FAIL, EXIT_SPEC, EXIT_STAGE = 0, 1, 2, 3


def _run(args) -> int:
    from .scenario import run

    try:
        rep = run(args.spec, args.out)
    except SpecParse as exc:
        print(f"invalid spec: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except PipelineError as exc:
        print(f"stage {exc.stage} failed: {type(exc.cause).__name__}: {exc.cause}", file=sys.stderr)
        return EXIT_STAGE
    for stage, name, m in rep.criteria:
        flag = "PASS" if m["pass"] else "FAIL"
        print(f"{flag} {stage}.{name} value={m['value']} {m['comparison']} {m['tolerance']}")
    print(f"{'passed' if rep.passed else 'failed'}: report written to {os.path.join(args.out, 'report.json')}")
    return EXIT_OK if rep.passed else EXIT_FAIL


def _calibrate(args) -> int:
    from .profile import calibrate

    try:
        prof = calibrate(args.group.upper(), args.grid, args.scale, args.seed)
    except SpecParse as exc:
        print(f"invalid arguments: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except Exception as exc:  # noqa: BLE001 - reported with the stage name
        print(f"stage calibrate failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    prof.save(args.out)
    print(prof.to_text(), end="")
    return EXIT_OK


def _validate(args) -> int:
    from .scenario import ScenarioSpec

    try:
        spec = ScenarioSpec.load(args.spec)
    except (SpecParse, OSError) as exc:
        print(f"invalid spec: {exc}", file=sys.stderr)
        return EXIT_SPEC
    print(f"ok: {spec.kind} '{spec.name}' seed={spec.seed}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gaugecocycle", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute a scenario spec and write its reports")
    r.add_argument("spec")
    r.add_argument("--out", required=True, help="output directory")
    r.set_defaults(func=_run)

    c = sub.add_parser("calibrate", help="calibrate the smallness constants for a grid preset")
    c.add_argument("--group", required=True, choices=["u1", "su2", "U1", "SU2"])
    c.add_argument("--grid", required=True, help="preset such as t2-64, s2-128 or t4-20")
    c.add_argument("--out", required=True, help="profile file to write")
    c.add_argument("--scale", type=float, default=1.0, help="physical rescaling of the calibration box")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=_calibrate)

    v = sub.add_parser("validate", help="check a scenario spec without running it")
    v.add_argument("spec")
    v.set_defaults(func=_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_SPEC if exc.code else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
