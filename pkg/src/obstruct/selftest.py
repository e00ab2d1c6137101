"""Quick invariant checks behind ``obstruct selftest``."""
from __future__ import annotations

from fractions import Fraction

import numpy as np

from .chern_moser import NormalForm, build_defining_series, linear_trace_k, theorem31_data_check
from .chern_moser import hyperquadric
from .circle_bundle import (
    MetricGerm, obstruction_density, obstruction_density_covariant, pde_residuals, ricci_defect,
    round_metric, theorem41_construct,
)
from .fefferman import analyze, j_operator
from .series import GaussQ, exp_series, mul, scale
from .torus import family_grid, grid_density


def _hyperquadric():
    ok = all((j_operator(hyperquadric(n, 8)) - 1).is_zero() for n in (2, 3))
    return ok, "J(2u - |z|^2) = 1 for n = 2, 3"


def _a44():
    nf = NormalForm(2, {((4,), (4,), 0): 1})
    res = analyze(build_defining_series(nf, 10))
    return res.obstruction == 4 and res.k_value == 16, f"O = {res.obstruction}, K = {res.k_value}"


def _trace():
    nf = NormalForm(3, {((3, 2), (3, 2), 0): Fraction(2, 3)})
    k = analyze(build_defining_series(nf, 12)).k_value
    return k == linear_trace_k(nf), f"K = {k}"


def _thm31():
    rep = theorem31_data_check(NormalForm(2, {((4,), (4,), 0): Fraction(-1, 2)}))
    return rep.consistent, "; ".join(rep.problems) or "K(psi_0)(0) = 0, slope 35/8"


def _circle():
    phi = MetricGerm.from_terms({(1, 1): Fraction(1, 3), (2, 1): GaussQ.of(1) + GaussQ(0, 1),
                                 (1, 2): GaussQ.of(1) - GaussQ(0, 1), (3, 0): 2, (0, 3): 2,
                                 (2, 2): Fraction(-1, 5)}, 9)
    a, b = obstruction_density(phi), obstruction_density_covariant(phi)
    flat = pde_residuals(phi)["flat_residual"]
    e = scale(mul(exp_series(scale(phi.phi, 2)), a), -8)
    ok = a.equals(b) and ricci_defect(phi).is_zero() and flat.equals(e)
    ok = ok and obstruction_density(round_metric(10)).is_zero()
    return ok, "density identity, Ricci identity, flat residual = -8 e^(2 phi) D"


def _thm41():
    r = theorem41_construct(10)
    ok = r.flat_residual_zero and r.roundtrip and r.spherical_residual_leading != 0
    return ok, f"K_;zbzb leading coefficient {r.spherical_residual_leading}"


def _torus():
    g, _ = family_grid("cos", 0.1, 64)
    rep = grid_density(g)
    ok = abs(rep.integral) < 1e-10 and rep.min < 0 < rep.max and bool(rep.zero_lines["x"])
    ok = ok and float(np.max(np.abs(grid_density(family_grid("zero", 0, 16)[0]).density))) == 0
    return ok, f"integral {rep.integral:.3e}"


CHECKS = [
    ("hyperquadric", _hyperquadric), ("a44_normalization", _a44), ("trace_formula", _trace),
    ("osculation_data", _thm31), ("circle_bundle_identities", _circle),
    ("flat_not_spherical", _thm41), ("torus_integral", _torus),
]


def run_all():
    out = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check, not a crashed selftest
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out
