"""Monge-Ampere operator, Fefferman's recursion and obstruction extraction.

The obstruction at a point is read off along a real line crossing the
hypersurface transversally: if ``rho`` is a Fefferman defining function then
``J(rho) - 1 = (n+2) O rho^(n+1) + ...`` so along the line ``t -> gamma(t)``
with ``rho(gamma(t)) = c1 t + O(t^2)`` the ``t^(n+1)`` coefficient of
``J(rho) - 1`` equals ``(n+2) O(0) c1^(n+1)``.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field as dc_field
from fractions import Fraction

from .series import (
    MultiSeries, SeriesError, compose, curve_directions,
    derive, mul, restrict_to_curve, scale, truncate, unit_power,
)

__all__ = [
    "DefiningSeries", "FeffermanChain", "ObstructionResult", "InsufficientWeight",
    "NonTransversal", "j_operator", "fefferman_recursion", "obstruction_at_origin",
    "k_operator_at_origin", "obstruction_at_point", "analyze", "default_weight", "recenter",
]


class InsufficientWeight(SeriesError):
    pass


class NonTransversal(SeriesError):
    pass


def default_weight(n: int) -> int:
    return 2 * n + 6


@dataclass(frozen=True)
class DefiningSeries:
    """A real defining function germ vanishing at the origin."""

    rho: MultiSeries

    def __post_init__(self):
        rho = self.rho
        if rho.space.n is None:
            raise SeriesError("a defining series lives in the CR variables z, zb, w, wb")
        f = rho.field
        if not f.negligible(rho.constant_term()):
            raise SeriesError("defining series must vanish at the origin")
        sp = rho.space
        if not any(not f.negligible(rho.terms.get(sp.unit(i), f.zero)) for i in range(sp.nvars)):
            raise NonTransversal("defining series has vanishing differential at the origin")
        if not rho.check_real():
            raise SeriesError("defining series must be real (conjugate-symmetric coefficients)")
        if not rho.real:
            object.__setattr__(self, "rho", MultiSeries(rho.space, rho.terms, rho.valid_weight, rho.field,
                                                        rho.cap, True, _trusted=True))

    @property
    def n(self) -> int:
        return self.rho.space.n

    @property
    def field(self):
        return self.rho.field

    @property
    def valid_weight(self) -> int:
        return self.rho.valid_weight


def _series(u) -> MultiSeries:
    return u.rho if isinstance(u, DefiningSeries) else u


def j_operator(u) -> MultiSeries:
    """``(-1)^n det [[u, u_zb_k], [u_z_j, u_z_j zb_k]]`` over ``z_1..z_{n-1}, w``."""
    u = _series(u)
    n = u.space.n
    if u.valid_weight < 2:
        raise InsufficientWeight("J needs valid_weight >= 2")
    m = n - 1
    hol = [f"z{j}" for j in range(1, m + 1)] + ["w"]
    anti = [f"zb{j}" for j in range(1, m + 1)] + ["wb"]
    firsts = [derive(u, v) for v in hol]
    rows = [[u] + [derive(u, v) for v in anti]]
    for uj in firsts:
        rows.append([uj] + [derive(uj, v) for v in anti])
    det = _determinant(rows)
    if n % 2:
        det = -det
    det.real = u.real
    return det


def _determinant(rows):
    """Laplace expansion along rows with memoised minors."""
    size = len(rows)

    @functools.lru_cache(maxsize=None)
    def minor(r: int, cols: frozenset):
        if r == size:
            return None  # empty product
        total = None
        remaining = sorted(cols)
        for pos, c in enumerate(remaining):
            entry = rows[r][c]
            sub = minor(r + 1, cols - {c})
            term = entry if sub is None else mul(entry, sub)
            if pos % 2:
                term = -term
            total = term if total is None else total + term
        return total

    return minor(0, frozenset(range(size)))


@dataclass
class FeffermanChain:
    """Iterates of Fefferman's recursion, residual orders checked along ``direction``.

    To stay rational the iterates are stored as ``psis[p-1] = psi_p / lam`` with
    ``lam = J(psi)(0)^(-1/(n+1))``; ``j_scale = lam^(n+1)`` so that
    ``J(psi_p) = j_scale * J(psis[p-1])``.  ``j_values`` hold the true ``J(psi_p)``.
    """

    psis: list
    j_values: list
    residual_orders: list
    order_exact: list
    certified: list
    direction: str = "u"
    n: int = 0
    j_scale: object = 1

    def ok(self) -> bool:
        """Every certifiable order satisfies ``J(psi_p) - 1 = O(t^p)``."""
        return all(o >= p for p, (o, c) in enumerate(zip(self.residual_orders, self.certified), 1) if c)


def _normalised_first(psi: MultiSeries, n: int):
    """``psi_1 / lam = (J(psi) / J(psi)(0))^(-1/(n+1)) psi`` and ``lam^(n+1) = 1 / J(psi)(0)``."""
    f = psi.field
    j0 = j_operator(psi)
    c0 = j0.constant_term()
    if f.negligible(c0):
        raise NonTransversal("J(psi) vanishes at the origin; the Levi form is degenerate there")
    if f.negligible(c0 - f.one):
        return mul(unit_power(j0, Fraction(-1, n + 1)), psi), f.one
    with f.context():
        inv = f.one / c0
    return mul(unit_power(scale(j0, inv), Fraction(-1, n + 1)), psi), inv


def fefferman_recursion(psi, direction: str = "u", cap: bool | None = None) -> FeffermanChain:
    """Run both lines of Fefferman's recursion and record residual orders.

    ``psi_1 = J(psi)^(-1/(n+1)) psi`` and, for ``2 <= p <= n+1``,
    ``psi_p = psi_{p-1} (1 + (1 - J(psi_{p-1})) / (p (n+2-p)))``.

    For lines inside ``z = 0`` (the u- and v-axes) only jets of holomorphic and
    antiholomorphic degree ``<= n+2`` can reach the answer, so the input is
    capped there unless ``cap=False``.
    """
    rho = _series(psi)
    n = rho.space.n
    if cap is None:
        cap = direction in ("u", "v")
    if cap:
        rho = truncate(rho, cap=(n + 2, n + 2))
    psis, jvals = [], []
    cur, js = _normalised_first(rho, n)
    psis.append(cur)

    def true_j(x):
        j = j_operator(x)
        if js != 1:
            j = scale(j, js)
            j.real = True
        return j

    for p in range(2, n + 2):
        jp = true_j(cur)
        jvals.append(jp)
        factor = scale(1 - jp, Fraction(1, p * (n + 2 - p))) + 1
        cur = mul(cur, factor)
        cur.real = True
        psis.append(cur)
    jvals.append(true_j(psis[-1]))
    orders, exact, cert = [], [], []
    for p, jp in enumerate(jvals, 1):
        line = restrict_to_curve(jp - 1, direction)
        o, ex = line.vanishing_order()
        orders.append(o)
        exact.append(ex)
        cert.append(line.order >= p - 1)
    return FeffermanChain(psis, jvals, orders, exact, cert, direction, n, js)


@dataclass
class ObstructionResult:
    obstruction: object
    k_value: object
    chain: FeffermanChain
    c1: object
    c_top: object
    direction: str
    certified_order: int
    field: object = dc_field(repr=False, default=None)


def analyze(psi, direction: str = "u", cap: bool | None = None) -> ObstructionResult:
    """Obstruction, ``K(psi)(0)`` and the Fefferman chain at the origin."""
    rho = _series(psi)
    n = rho.space.n
    f = rho.field
    if rho.valid_weight < 2 * n + 4 and direction in ("u", "v"):
        raise InsufficientWeight(
            f"obstruction extraction along {direction} needs valid_weight >= {2 * n + 4}, "
            f"got {rho.valid_weight}")
    chain = fefferman_recursion(rho, direction, cap)
    top = restrict_to_curve(chain.j_values[-1] - 1, direction)
    if top.order < n + 1:
        raise InsufficientWeight(
            f"J(psi_{n + 1}) is only certified to t^{top.order} along {direction}; need t^{n + 1}")
    line = restrict_to_curve(chain.psis[-1], direction)
    if line.order < 1:
        raise InsufficientWeight("defining function not certified to first order along the curve")
    c1 = line.coefficient(1)
    if f.negligible(c1):
        raise NonTransversal(f"the {direction}-line is not transversal to the hypersurface")
    c_top = top.coefficient(n + 1)
    with f.context():
        # psi_{n+1} = lam * psis[-1], so its t-coefficient is lam * c1 and lam^(n+1) = j_scale
        k = c_top / (c1 ** (n + 1) * f.coerce(chain.j_scale))
        o = k / (n + 2)
    return ObstructionResult(o, k, chain, c1, c_top, direction, top.order, f)


def obstruction_at_origin(psi, direction: str = "u"):
    """Value of the obstruction function at the origin."""
    return analyze(psi, direction).obstruction


def k_operator_at_origin(psi, direction: str = "u"):
    """``K(psi)(0) = (n+2) O(0)`` where ``K(psi) = (J(psi_{n+1}) - 1) / psi_{n+1}^(n+1)``."""
    return analyze(psi, direction).k_value


def recenter(psi, point, weight: int | None = None) -> MultiSeries:
    """Translate a polynomial defining function so that ``point`` becomes the origin.

    ``point`` lists ``z_1, ..., z_{n-1}, w`` as field elements (or values the
    field can coerce).
    """
    rho = _series(psi)
    sp = rho.space
    n = sp.n
    f = rho.field
    pt = [f.coerce(c) for c in point]
    if len(pt) != n:
        raise SeriesError(f"a point of C^{n} has {n} coordinates")
    m = n - 1
    with f.context():
        shifts = pt[:m] + [c.conjugate() for c in pt[:m]] + [pt[m], pt[m].conjugate()]
    weight = rho.valid_weight if weight is None else weight
    images = []
    for i, s in enumerate(shifts):
        var = MultiSeries.variable(sp, i, weight, f)
        images.append(var + s if f.nonzero(s) else var)
    out = compose(rho, images, polynomial=True, weight=weight)
    out = MultiSeries(sp, out.terms, weight, f, None, True, _trusted=True)
    return out


def obstruction_at_point(psi, point, weight: int | None = None, direction: str | None = None):
    """Obstruction at a point of a polynomial hypersurface ``{psi = 0}``.

    The polynomial is re-expanded around ``point`` and a transversal real axis
    is chosen (the u-axis first).  Returns ``(value, direction)``.

    After recentering ``psi`` usually has linear ``z``-terms and each step of
    the recursion then costs validity, so unless ``weight`` is given the
    expansion weight is raised until the extraction is certified.
    """
    rho = _series(psi)
    n = rho.space.n
    start = max(rho.valid_weight, 2 * n + 4) if weight is None else weight
    limit = start if weight is not None else 8 * n + 16
    last = None
    for w in range(start, limit + 1, 2):
        try:
            return _obstruction_recentered(rho, point, w, direction)
        except InsufficientWeight as exc:
            last = exc
    raise last


def _obstruction_recentered(rho, point, weight, direction):
    f = rho.field
    moved = recenter(rho, point, weight)
    c0 = moved.constant_term()
    if not f.negligible(c0, 1):
        raise SeriesError(f"point is not on the hypersurface (psi = {f.to_str(c0)})")
    moved = MultiSeries(moved.space, {k: c for k, c in moved.terms.items() if k != 0},
                        moved.valid_weight, f, None, True, _trusted=True)
    choices = [direction] if direction else curve_directions(moved.space)
    for d in choices:
        line = restrict_to_curve(moved, d)
        if line.order >= 1 and not f.negligible(line.coefficient(1)):
            res = analyze(DefiningSeries(moved), d)
            return res.obstruction, d
    raise NonTransversal("no coordinate axis is transversal at this point")
