"""Command-line entry point: ``obstruct <subcommand> ...``.

Reports are JSON (rational strings for the exact backend, decimal strings
for the float backend) with a ``manifest`` block recording the inputs.
Exit codes: 0 success, 1 input error, 2 an internal invariant failed.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
from gmpy2 import mpq

from . import __version__
from .chern_moser import (
    NormalForm, build_defining_series, linear_trace_k, osculation_order, theorem31_data_check,
    validate_trace_conditions,
)
from .circle_bundle import (
    CauchyData, ck_solve_flat, ck_solve_spherical_first, pde_residuals, theorem41_construct,
)
from .fefferman import DefiningSeries, analyze, default_weight, obstruction_at_point
from .series import (
    EXACT, GaussQ, SeriesError, convert, get_field, series_from_json, series_to_json, truncate,
)
from .torus import TorusGrid, family_grid, grid_density, refine_and_extrapolate


class InputError(Exception):
    pass


class InvariantViolation(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _read_json(path: str):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(raw), hashlib.sha256(raw).hexdigest()
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from None


class RunManifest:
    """Provenance block embedded in every report."""

    def __init__(self, args):
        self.subcommand = args.command
        self.inputs = {}
        self.backend = getattr(args, "backend", "exact")
        self.precision = getattr(args, "precision", None) if self.backend == "float" else None
        self.truncation = {}
        self.record_time = getattr(args, "record_time", False)
        self.start = time.perf_counter()

    def add_input(self, name, digest):
        self.inputs[name] = digest

    def to_json(self) -> dict:
        out = {
            "subcommand": self.subcommand,
            "inputs_sha256": dict(sorted(self.inputs.items())),
            "backend": self.backend,
            "precision": self.precision,
            "truncation": self.truncation,
            "version": __version__,
            "threads": os.environ.get("OBSTRUCT_THREADS"),
        }
        if self.record_time:
            out["wall_time_s"] = round(time.perf_counter() - self.start, 6)
        return out


def _emit(report: dict, manifest: RunManifest, out: str | None):
    report = dict(report)
    report["manifest"] = manifest.to_json()
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _field(args):
    return get_field(args.backend, args.precision)


def _load_defining(path: str, args, manifest: RunManifest) -> DefiningSeries:
    """Defining series from a normal-form table or an explicit series JSON."""
    d, digest = _read_json(path)
    manifest.add_input(path, digest)
    field = _field(args)
    if "entries" in d:
        nf = NormalForm.from_json(d)
        weight = args.weight or default_weight(nf.n)
        rho = build_defining_series(nf, weight).rho
        rho = convert(rho, field)
        rho.real = True
    else:
        rho = series_from_json(d, field)
        if args.weight:
            if args.weight > rho.valid_weight:
                raise InputError(f"--weight {args.weight} exceeds the input's valid_weight {rho.valid_weight}")
            rho = truncate(rho, args.weight)
    manifest.truncation["weight"] = rho.valid_weight
    return DefiningSeries(rho)


def _order_strings(chain):
    return [f">= {o}" if not ex else str(o) for o, ex in zip(chain.residual_orders, chain.order_exact)]


# ---------------------------------------------------------------------------
# subcommands


def cmd_compute(args, manifest):
    psi = _load_defining(args.input, args, manifest)
    f = psi.field
    if args.point:
        point = [f.coerce(_parse_complex(p)) for p in args.point.split(",")]
        value, direction = obstruction_at_point(psi, point, args.weight or None, args.direction)
        return {"obstruction": f.to_str(value), "direction": direction, "point": args.point}
    res = analyze(psi, args.direction or "u")
    if not res.chain.ok():
        raise InvariantViolation("Fefferman recursion failed its residual-order contract")
    return {
        "obstruction": f.to_str(res.obstruction),
        "k_value": f.to_str(res.k_value),
        "direction": res.direction,
        "residual_orders": _order_strings(res.chain),
        "certified_order": res.certified_order,
    }


def _parse_complex(s: str):
    """``"re"`` or ``"re:im"`` with rational parts."""
    re_part, _, im_part = s.strip().partition(":")
    try:
        re_q, im_q = Fraction(re_part), Fraction(im_part or "0")
        return GaussQ(mpq(re_q.numerator, re_q.denominator), mpq(im_q.numerator, im_q.denominator))
    except (ValueError, ZeroDivisionError):
        raise InputError(f"cannot parse coordinate {s!r}; use re or re:im with rationals") from None


def cmd_cm_validate(args, manifest):
    d, digest = _read_json(args.input)
    manifest.add_input(args.input, digest)
    nf = NormalForm.from_json(d)
    rep = validate_trace_conditions(nf)
    out = rep.to_json()
    out["linear_trace_k"] = EXACT.to_str(linear_trace_k(nf))
    if not rep.passed:
        args._exit = 1
    return out


def cmd_osculate(args, manifest):
    a = _load_defining(args.a, args, manifest)
    b = _load_defining(args.b, args, manifest)
    return {"osculation": osculation_order(a, b).to_json()}


def cmd_thm31(args, manifest):
    d, digest = _read_json(args.input)
    manifest.add_input(args.input, digest)
    nf = NormalForm.from_json(d)
    weight = args.weight or default_weight(nf.n)
    manifest.truncation["weight"] = weight
    rep = theorem31_data_check(nf, weight)
    if not rep.consistent:
        raise InvariantViolation("; ".join(rep.problems))
    return rep.to_json()


def cmd_ck_solve(args, manifest):
    d, digest = _read_json(args.data)
    manifest.add_input(args.data, digest)
    data = CauchyData.from_json(d, _field(args), args.degree)
    want = 6 if args.kind == "flat" else 4
    if data.count != want:
        raise InputError(f"--kind {args.kind} needs {want} germs, got {data.count}")
    N = args.degree
    manifest.truncation["degree"] = N
    if args.kind == "flat":
        m = ck_solve_flat(data, N)
        res = pde_residuals(m)["flat_residual"]
        certified = N - 6
    else:
        m = ck_solve_spherical_first(data, N)
        res = pde_residuals(m)["spherical_residual"][0]
        certified = N - 4
    f = m.field
    if any(not f.negligible(c) for c in truncate(res, certified).terms.values()):
        raise InvariantViolation("solver output does not annihilate the residual to its certified order")
    return {"kind": args.kind, "phi": series_to_json(m.phi),
            "residual_vanishes_through_degree": certified}


def cmd_thm41(args, manifest):
    manifest.truncation["degree"] = args.degree
    r = theorem41_construct(args.degree)
    if not (r.flat_residual_zero and r.roundtrip):
        raise InvariantViolation("flat residual or Cauchy data round trip failed")
    return {
        "phi": series_to_json(r.phi.phi),
        "flat_order": r.flat_order,
        "flat_residual_vanishes_through_degree": args.degree - 6,
        "spherical_residual_leading": EXACT.to_json(r.spherical_residual_leading),
        "spherical_leading_monomial": {"z": r.spherical_leading_monomial[0],
                                       "zb": r.spherical_leading_monomial[1]},
        "cauchy_roundtrip": r.roundtrip,
    }


def _read_csv_grid(path: str, manifest):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    manifest.add_input(path, hashlib.sha256(raw).hexdigest())
    try:
        rows = [[float(v) for v in row] for row in csv.reader(raw.decode().splitlines()) if row]
        return np.array(rows, dtype=float)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def cmd_torus(args, manifest):
    try:
        lx, ly = (float(v) for v in args.periods.split(","))
    except ValueError:
        raise InputError("--periods expects lx,ly") from None
    oracle = None
    if args.phi:
        grid = TorusGrid(_read_csv_grid(args.phi, manifest), lx, ly)
    else:
        grid, oracle = family_grid(args.family, args.eps, args.n, lx, ly)
    manifest.truncation.update({"nx": grid.nx, "ny": grid.ny, "levels": args.levels})
    rep = grid_density(grid)
    out = {"density": rep.to_json()}
    if args.levels >= 2:
        out["refinement"] = refine_and_extrapolate(grid, args.levels, oracle)
    if args.dump_density:
        np.savetxt(args.dump_density, rep.density, delimiter=",")
    if not rep.dichotomy_ok:
        raise InvariantViolation("discrete sign dichotomy violated")
    return out


def cmd_selftest(args, manifest):
    from .selftest import run_all
    results = run_all()
    failed = [name for name, ok, _ in results if not ok]
    if failed:
        args._exit = 2
    return {"checks": [{"name": n, "passed": ok, "detail": d} for n, ok, d in results],
            "passed": not failed}


COMMANDS = {
    "compute": cmd_compute, "cm-validate": cmd_cm_validate, "osculate": cmd_osculate,
    "thm31": cmd_thm31, "ck-solve": cmd_ck_solve, "thm41": cmd_thm41, "torus": cmd_torus,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--backend", choices=["exact", "float"], default="exact")
    common.add_argument("--precision", type=int, default=128, help="float mantissa bits")
    common.add_argument("--out", help="write the report here instead of stdout")
    common.add_argument("--record-time", action="store_true", help="add wall time to the manifest")

    p = _Parser(prog="obstruct", description="Obstruction functions of real hypersurfaces and circle bundles.")
    p.add_argument("--version", action="version", version=f"obstruct {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("compute", parents=[common], help="obstruction of a defining series")
    c.add_argument("--input", required=True)
    c.add_argument("--weight", type=int, default=0)
    c.add_argument("--direction", help="transversal line: u, v, x1, y1, ...")
    c.add_argument("--point", help="z1,...,z_{n-1},w as rationals, complex ones as re:im")

    c = sub.add_parser("cm-validate", parents=[common], help="trace conditions of a normal form")
    c.add_argument("--input", required=True)

    c = sub.add_parser("osculate", parents=[common], help="weighted osculation order of two graphs")
    c.add_argument("--a", required=True)
    c.add_argument("--b", required=True)
    c.add_argument("--weight", type=int, default=0)

    c = sub.add_parser("thm31", parents=[common], help="Cauchy data checks for the osculating flat hypersurface")
    c.add_argument("--input", required=True)
    c.add_argument("--weight", type=int, default=0)

    c = sub.add_parser("ck-solve", parents=[common], help="formal Cauchy-Kowalevski solve")
    c.add_argument("--kind", choices=["flat", "spherical"], required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--degree", type=int, required=True)

    c = sub.add_parser("thm41", parents=[common], help="obstruction-flat, non-spherical circle bundle germ")
    c.add_argument("--degree", type=int, default=14)

    c = sub.add_parser("torus", parents=[common], help="obstruction density over a flat torus")
    src = c.add_mutually_exclusive_group()
    src.add_argument("--phi", help="CSV grid of phi samples")
    src.add_argument("--family", choices=["cos", "coscos", "zero"], default="cos")
    c.add_argument("--eps", type=float, default=0.1)
    c.add_argument("--n", type=int, default=256, help="points per axis for a built-in family")
    c.add_argument("--periods", default="1,1")
    c.add_argument("--levels", type=int, default=1)
    c.add_argument("--dump-density")

    sub.add_parser("selftest", parents=[common], help="run the embedded invariant suite")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args._exit = 0
    manifest = RunManifest(args)
    try:
        report = COMMANDS[args.command](args, manifest)
    except InvariantViolation as exc:
        print(f"obstruct: invariant violated: {exc}", file=sys.stderr)
        return 2
    except (InputError, SeriesError, ValueError, KeyError) as exc:
        print(f"obstruct: input error: {exc}", file=sys.stderr)
        return 1
    _emit(report, manifest, args.out)
    return args._exit


if __name__ == "__main__":
    sys.exit(main())
