"""Curvature calculus for circle bundles over Riemann surfaces.

Everything is a truncated series in ``z, zb`` (the ``surface`` space) or in
real coordinates ``x, y`` (the ``plane`` space) with ``z = x + i y``.  The
metric is ``g = 2 e^(2 phi) |dz|^2`` with Gauss curvature
``K = -2 e^(-2 phi) phi_{z zb}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .series import (
    EXACT, PLANE, SURFACE, MultiSeries, SeriesError, UnivariateSeries, compose, derive,
    exp_series, get_field, mul, scale, truncate,
)

__all__ = [
    "MetricGerm", "TensorField", "CauchyData", "gauss_curvature", "covariant_derivative",
    "covariant_chain", "laplace_g", "obstruction_density", "obstruction_density_covariant",
    "ricci_defect", "pde_residuals", "spherical_defect", "ck_solve_flat",
    "ck_solve_spherical_first", "theorem41_construct", "potential_from_phi", "to_plane",
    "to_surface", "cauchy_data", "round_metric",
]


def _real(s: MultiSeries) -> MultiSeries:
    s.real = s.check_real()
    return s


@dataclass(frozen=True)
class MetricGerm:
    """Conformal factor ``phi(z, zb)`` of ``g = 2 e^(2 phi)|dz|^2``."""

    phi: MultiSeries

    def __post_init__(self):
        phi = self.phi
        if phi.space is PLANE:
            phi = to_surface(phi)
            object.__setattr__(self, "phi", phi)
        if phi.space is not SURFACE:
            raise SeriesError("a metric germ is a series in z, zb")
        if not phi.check_real():
            raise SeriesError("phi must be real valued (conjugate-symmetric coefficients)")
        phi.real = True

    @property
    def valid_degree(self) -> int:
        return self.phi.valid_weight

    @property
    def field(self):
        return self.phi.field

    @classmethod
    def from_terms(cls, terms: dict, degree: int, field=EXACT) -> "MetricGerm":
        """``terms`` maps ``(a, b)`` to the coefficient of ``z^a zb^b``."""
        return cls(MultiSeries(SURFACE, dict(terms), degree, field))


def _phi(m) -> MultiSeries:
    return m.phi if isinstance(m, MetricGerm) else m


def _exp(phi: MultiSeries, c) -> MultiSeries:
    """``e^(c phi)``; transcendental constants need the float backend."""
    out = exp_series(scale(phi, c))
    out.real = phi.real
    return out


def _dzzb(a: MultiSeries) -> MultiSeries:
    out = derive(derive(a, "z"), "zb")
    out.real = a.real
    return out


def gauss_curvature(m) -> MultiSeries:
    """``K = -2 e^(-2 phi) d_z d_zb phi``."""
    phi = _phi(m)
    if phi.valid_weight < 2:
        raise SeriesError("Gauss curvature needs valid_degree >= 2")
    k = scale(mul(_exp(phi, -2), _dzzb(phi)), -2)
    k.real = True
    return k


def laplace_g(f: MultiSeries, m) -> MultiSeries:
    """``Delta_g f = 2 e^(-2 phi) d_z d_zb f`` for a scalar ``f``."""
    phi = _phi(m)
    out = scale(mul(_exp(phi, -2), _dzzb(f)), 2)
    out.real = f.real
    return out


# ---------------------------------------------------------------------------
# covariant derivatives


@dataclass(frozen=True)
class TensorField:
    """Component ``T_{i_1 ... i_k}`` with indices in ``{"z", "zb"}``."""

    index_signature: tuple
    component: MultiSeries

    def __post_init__(self):
        bad = [i for i in self.index_signature if i not in ("z", "zb")]
        if bad:
            raise SeriesError(f"indices must be 'z' or 'zb', got {bad}")
        object.__setattr__(self, "index_signature", tuple(self.index_signature))

    @classmethod
    def scalar(cls, f: MultiSeries) -> "TensorField":
        return cls((), f)


def covariant_derivative(t: TensorField, direction: str, m) -> TensorField:
    """Levi-Civita ``nabla_direction`` of ``g = 2 e^(2 phi)|dz|^2``.

    The only Christoffel symbols are ``Gamma^z_zz = 2 phi_z`` and
    ``Gamma^zb_zbzb = 2 phi_zb``, so every lower index equal to ``direction``
    contributes ``-Gamma * T``.
    """
    if direction not in ("z", "zb"):
        raise SeriesError("direction must be 'z' or 'zb'")
    phi = _phi(m)
    out = derive(t.component, direction)
    count = t.index_signature.count(direction)
    if count:
        gamma = scale(derive(phi, direction), 2 * count)
        out = out - mul(gamma, t.component)
    return TensorField(t.index_signature + (direction,), out)


def covariant_chain(f: MultiSeries, directions, m) -> TensorField:
    """``f_{;d1 d2 ...}``: apply ``nabla_d1`` first, then ``nabla_d2``, ..."""
    t = TensorField.scalar(f)
    for d in directions:
        t = covariant_derivative(t, d, m)
    return t


def obstruction_density(m) -> MultiSeries:
    """``D = Delta_g^2 K + Delta_g K^2`` from scalar Laplacians."""
    phi = _phi(m)
    if phi.valid_weight < 6:
        raise SeriesError("the obstruction density needs valid_degree >= 6")
    k = gauss_curvature(phi)
    d = laplace_g(laplace_g(k, phi), phi) + laplace_g(mul(k, k), phi)
    d.real = True
    return d


def obstruction_density_covariant(m) -> MultiSeries:
    """``4 e^(-4 phi) K_{;zb zb z z}`` via the covariant chain.

    Equal to :func:`obstruction_density`; the two share no code beyond ``K``.
    """
    phi = _phi(m)
    if phi.valid_weight < 6:
        raise SeriesError("the obstruction density needs valid_degree >= 6")
    k = gauss_curvature(phi)
    chain = covariant_chain(k, ("zb", "zb", "z", "z"), phi).component
    return _real(scale(mul(_exp(phi, -4), chain), 4))


def ricci_defect(m) -> MultiSeries:
    """``K_{;z z zb} - K_{;z zb z} - (1/2) e^(2 phi) (K^2)_z``; zero by the Ricci identity."""
    phi = _phi(m)
    k = gauss_curvature(phi)
    lhs = covariant_chain(k, ("z", "z", "zb"), phi).component - covariant_chain(k, ("z", "zb", "z"), phi).component
    rhs = scale(mul(_exp(phi, 2), derive(mul(k, k), "z")), Fraction(1, 2))
    return lhs - rhs


def spherical_defect(m) -> MultiSeries:
    """``K_{;zb zb} = K_zbzb - 2 phi_zb K_zb``; vanishes iff the bundle is spherical."""
    phi = _phi(m)
    k = gauss_curvature(phi)
    return covariant_chain(k, ("zb", "zb"), phi).component


# ---------------------------------------------------------------------------
# PDE residuals


class _Calculus:
    """Real derivatives ``d_x, d_y`` and the flat Laplacian on either space."""

    def __init__(self, space, field):
        self.space = space
        self.i = field.from_parts(0, 1)

    def dx(self, a):
        if self.space is PLANE:
            return derive(a, "x")
        out = derive(a, "z") + derive(a, "zb")
        out.real = a.real
        return out

    def dy(self, a):
        if self.space is PLANE:
            return derive(a, "y")
        out = scale(derive(a, "z") - derive(a, "zb"), self.i)
        out.real = a.real
        return out

    def lap(self, a):
        if self.space is PLANE:
            out = derive(derive(a, "x"), "x") + derive(derive(a, "y"), "y")
        else:
            out = scale(derive(derive(a, "z"), "zb"), 4)
        out.real = a.real
        return out


def _flat_residual(phi: MultiSeries) -> MultiSeries:
    """``Delta(e^-2phi Delta(e^-2phi Delta phi)) - Delta(e^-4phi (Delta phi)^2)``."""
    c = _Calculus(phi.space, phi.field)
    e2 = _exp(phi, -2)
    lp = c.lap(phi)
    inner = c.lap(mul(e2, lp))
    first = c.lap(mul(e2, inner))
    second = c.lap(mul(_exp(phi, -4), mul(lp, lp)))
    out = first - second
    out.real = phi.real
    return out


def _curvature_any(phi: MultiSeries, c: _Calculus) -> MultiSeries:
    """``K = -(1/2) e^(-2 phi) Delta phi``."""
    k = scale(mul(_exp(phi, -2), c.lap(phi)), Fraction(-1, 2))
    k.real = phi.real
    return k


def _spherical_residuals(phi: MultiSeries):
    c = _Calculus(phi.space, phi.field)
    k = _curvature_any(phi, c)
    kx, ky = c.dx(k), c.dy(k)
    px, py = c.dx(phi), c.dy(phi)
    eq1 = c.dx(kx) - c.dy(ky) - scale(mul(px, kx), 2) + scale(mul(py, ky), 2)
    eq2 = c.dy(kx) - mul(px, ky) - mul(py, kx)
    eq1.real = eq2.real = phi.real
    return eq1, eq2


def pde_residuals(m) -> dict:
    """Flat residual and the two real equations of ``K_{;zb zb} = 0``.

    ``flat = -8 e^(2 phi) D`` and ``K_{;zb zb} = eq1/4 + (i/2) eq2``.
    """
    phi = _phi(m)
    if phi.valid_weight < 4:
        raise SeriesError("PDE residuals need valid_degree >= 4")
    out = {"spherical_residual": _spherical_residuals(phi)}
    out["flat_residual"] = _flat_residual(phi) if phi.valid_weight >= 6 else None
    return out


# ---------------------------------------------------------------------------
# coordinates and Cauchy data


def to_plane(phi: MultiSeries) -> MultiSeries:
    """Re-express ``phi(z, zb)`` in ``x, y``."""
    if phi.space is PLANE:
        return phi
    f = phi.field
    x = MultiSeries.variable(PLANE, "x", phi.valid_weight, f)
    iy = scale(MultiSeries.variable(PLANE, "y", phi.valid_weight, f), f.from_parts(0, 1))
    return _real(compose(phi, [x + iy, x - iy]))


def to_surface(phi: MultiSeries) -> MultiSeries:
    """Re-express ``phi(x, y)`` in ``z, zb``."""
    if phi.space is SURFACE:
        return phi
    f = phi.field
    z = MultiSeries.variable(SURFACE, "z", phi.valid_weight, f)
    zb = MultiSeries.variable(SURFACE, "zb", phi.valid_weight, f)
    x = scale(z + zb, Fraction(1, 2))
    y = scale(z - zb, f.from_parts(0, Fraction(-1, 2)))
    return _real(compose(phi, [x, y]))


@dataclass(frozen=True)
class CauchyData:
    """Germs ``d^j phi / dy^j (x, 0)`` for ``j < count``; 6 for flat, 4 for spherical."""

    germs: tuple

    def __post_init__(self):
        germs = tuple(self.germs)
        if len(germs) not in (4, 6):
            raise SeriesError(f"Cauchy data has 4 or 6 germs, got {len(germs)}")
        fields = {g.field for g in germs}
        if len(fields) != 1:
            raise SeriesError("all germs must share one coefficient field")
        for j, g in enumerate(germs):
            f = g.field
            if any(not f.negligible(c - c.conjugate(), c) for c in g.coeffs):
                raise SeriesError(f"germ {j} has non-real coefficients")
        object.__setattr__(self, "germs", germs)

    @property
    def count(self) -> int:
        return len(self.germs)

    @property
    def kind(self) -> str:
        return "flat" if self.count == 6 else "spherical"

    @property
    def field(self):
        return self.germs[0].field

    @property
    def order(self) -> int:
        """Largest ``N`` with germ ``j`` known through ``x^(N-j)`` for every ``j``."""
        return min(g.order + j for j, g in enumerate(self.germs))

    @classmethod
    def from_lists(cls, lists, order: int | None = None, field=EXACT) -> "CauchyData":
        """Germs from coefficient lists ``[c_0, c_1, ...]`` in powers of ``x``."""
        germs = []
        for j, cs in enumerate(lists):
            cs = [field.coerce(c) for c in cs]
            o = len(cs) - 1 if order is None else order - j
            cs = cs[:o + 1] + [field.zero] * max(0, o + 1 - len(cs))
            germs.append(UnivariateSeries(tuple(cs), o, field))
        return cls(tuple(germs))

    def equals(self, other: "CauchyData") -> bool:
        return self.count == other.count and all(a.equals(b) for a, b in zip(self.germs, other.germs))

    def shifted(self, index: int, value) -> "CauchyData":
        """Add the constant ``value`` to germ ``index``."""
        g = self.germs[index]
        cs = list(g.coeffs) or [g.field.zero]
        with g.field.context():
            cs[0] = cs[0] + g.field.coerce(value)
        germs = list(self.germs)
        germs[index] = UnivariateSeries(tuple(cs), g.order, g.field)
        return CauchyData(tuple(germs))

    def to_json(self) -> dict:
        f = self.field
        out = {"kind": self.kind, "germs": [
            {"order": g.order, "coeffs": [f.to_json(g.coefficient(k))["re"] for k in range(g.order + 1)]}
            for g in self.germs]}
        if not f.exact:
            out["precision"] = f.precision
        return out

    @classmethod
    def from_json(cls, d: dict, field=None, degree: int | None = None) -> "CauchyData":
        """Germs given without an ``order`` are polynomials, padded to ``degree - j``."""
        if field is None:
            field = get_field("float", int(d["precision"])) if "precision" in d else EXACT
        germs = []
        for j, g in enumerate(d["germs"]):
            if isinstance(g, dict) and "order" in g:
                cs, order = g["coeffs"], int(g["order"])
            else:
                cs = g["coeffs"] if isinstance(g, dict) else g
                order = len(cs) - 1 if degree is None else max(len(cs) - 1, degree - j)
            cs = [field.from_json({"re": str(c)}) for c in cs]
            cs = cs[:order + 1] + [field.zero] * max(0, order + 1 - len(cs))
            germs.append(UnivariateSeries(tuple(cs), order, field))
        return cls(tuple(germs))


def cauchy_data(phi, count: int) -> CauchyData:
    """``(phi, phi_y, ..., d^(count-1) phi/dy^(count-1))`` restricted to ``y = 0``."""
    p = to_plane(_phi(phi))
    f = p.field
    N = p.valid_weight
    germs = []
    for j in range(count):
        fact = f.coerce(math.factorial(j))
        cs = []
        with f.context():
            for k in range(N - j + 1):
                cs.append(p.coeff((k, j)) * fact)
        germs.append(UnivariateSeries(tuple(cs), N - j, f))
    return CauchyData(tuple(germs))


# ---------------------------------------------------------------------------
# Cauchy-Kowalevski solves


def _y_slice(r: MultiSeries, m: int, limit: int) -> MultiSeries:
    """The ``y^m`` coefficient of a plane series, as a series in ``x``."""
    terms = {}
    for key, c in r.terms.items():
        kx, ky = PLANE.decode(key)
        if ky == m and kx <= limit:
            terms[PLANE.encode((kx, 0))] = c
    return MultiSeries(PLANE, terms, limit, r.field, real=True, _trusted=True)


def _ck_solve(data: CauchyData, N: int, count: int, residual, lead: Fraction) -> MultiSeries:
    f = data.field
    if N < count:
        raise SeriesError(f"degree must be >= {count}")
    if data.order < N:
        raise SeriesError(f"Cauchy data known only to degree {data.order}, need {N}")
    terms = {}
    with f.context():
        for j, g in enumerate(data.germs):
            inv = f.one / f.coerce(math.factorial(j))
            for k in range(N - j + 1):
                c = g.coefficient(k) * inv
                if f.nonzero(c):
                    terms[PLANE.encode((k, j))] = c
    phi = MultiSeries(PLANE, terms, N, f, real=True, _trusted=True)
    g0 = _y_slice(phi, 0, N)
    # y^m coefficient of the residual is lead * e^(-c g0) (m+count)!/m! phi_{m+count} + known
    weight = _exp(g0, 4 if count == 6 else 2)
    for m in range(N - count + 1):
        r = residual(phi)
        limit = N - count - m
        rm = _y_slice(r, m, limit)
        factor = Fraction(-math.factorial(m), math.factorial(m + count)) / lead
        upd = scale(mul(rm, truncate(weight, limit)), factor)
        shift = PLANE.encode((0, m + count))
        phi = MultiSeries(PLANE, {**phi.terms, **{k + shift: c for k, c in upd.terms.items()}},
                          N, f, real=True, _trusted=True)
    return phi


def _spherical_first(phi):
    return _spherical_residuals(phi)[0]


def ck_solve_flat(data: CauchyData, degree: int) -> MetricGerm:
    """Formal solution of the obstruction-flat equation with six Cauchy germs.

    The flat residual of the result vanishes through degree ``degree - 6`` and
    re-extracting the Cauchy data returns ``data`` through the truncation.
    """
    if data.count != 6:
        raise SeriesError("flat Cauchy data has 6 germs")
    return MetricGerm(_ck_solve(data, degree, 6, _flat_residual, Fraction(1)))


def ck_solve_spherical_first(data: CauchyData, degree: int) -> MetricGerm:
    """Formal solution of the first real equation of ``K_{;zb zb} = 0`` with four germs."""
    if data.count != 4:
        raise SeriesError("spherical Cauchy data has 4 germs")
    return MetricGerm(_ck_solve(data, degree, 4, _spherical_first, Fraction(1, 2)))


@dataclass
class Theorem41Result:
    phi: MetricGerm
    flat_order: int
    flat_residual_zero: bool
    spherical_residual_leading: object
    spherical_leading_monomial: tuple
    data: CauchyData
    roundtrip: bool
    phi0: MetricGerm


def theorem41_construct(degree: int, v: CauchyData | None = None) -> Theorem41Result:
    """Build an obstruction-flat germ that is not spherical.

    ``phi_0`` solves the first spherical equation with data ``v`` (default
    zero); the flat solve then uses ``Phi_ob(phi_0) + (0, 0, 0, 0, 0, 1)``.
    ``flat_order`` is the degree from which the flat residual may be nonzero.
    """
    N = degree
    if N < 8:
        raise SeriesError("the construction needs degree >= 8")
    f = EXACT if v is None else v.field
    if v is None:
        v = CauchyData.from_lists([[0]] * 4, N, f)
    phi0 = ck_solve_spherical_first(v, N)
    data = cauchy_data(phi0, 6).shifted(5, 1)
    phi = ck_solve_flat(data, N)
    flat = _flat_residual(phi.phi)
    flat_zero = all(f.negligible(c) for c in truncate(flat, N - 6).terms.values())
    sph = truncate(spherical_defect(phi), N - 4)
    lead, mono = f.zero, None
    for exps, c in sph.items():
        if not f.negligible(c):
            lead, mono = c, exps
            break
    if mono is None:
        raise SeriesError("spherical residual vanishes to truncation: implementation inconsistency")
    roundtrip = cauchy_data(phi, 6).equals(data)
    return Theorem41Result(phi, N - 5, flat_zero, lead, mono, data, roundtrip, phi0)


# ---------------------------------------------------------------------------
# potentials


def potential_from_phi(m) -> MultiSeries:
    """``G`` with ``d_z d_zb G = e^(2 phi)``; the pluriharmonic part is set to zero."""
    phi = _phi(m)
    e = _exp(phi, 2)
    f = phi.field
    terms = {}
    with f.context():
        for key, c in e.terms.items():
            a, b = SURFACE.decode(key)
            terms[SURFACE.encode((a + 1, b + 1))] = c / f.coerce((a + 1) * (b + 1))
    return MultiSeries(SURFACE, terms, e.valid_weight + 2, f, real=True, _trusted=True)


def round_metric(degree: int, field=EXACT) -> MetricGerm:
    """``phi = -log(1 + z zb)`` (curvature 2) truncated at ``degree``."""
    terms = {}
    for k in range(1, degree // 2 + 1):
        terms[(k, k)] = Fraction((-1) ** k, k)
    return MetricGerm.from_terms(terms, degree, field)
