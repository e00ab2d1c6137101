"""Chern-Moser normal forms, trace conditions and weighted osculation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

from gmpy2 import mpq

from .fefferman import DefiningSeries, analyze, default_weight
from .series import (
    EXACT, GaussQ, MultiSeries, SeriesError, cr_space, derive, scale, sub,
    truncate,
)

__all__ = [
    "NormalForm", "TraceReport", "OsculationReport", "Theorem31Report",
    "validate_trace_conditions", "build_defining_series", "graph_function",
    "osculation_order", "linear_trace_k", "osculating_flat_data", "theorem31_data_check",
]


def _tuple(x):
    return tuple(int(v) for v in x)


@dataclass(frozen=True)
class NormalForm:
    """Sparse table ``(alpha, beta, l) -> A^l_{alpha beta-bar}`` of exact coefficients.

    Missing conjugate partners ``(beta, alpha, l)`` are filled in with the
    conjugate value; a partner present with a different value is an error.
    """

    n: int
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 2:
            raise SeriesError("normal forms need n >= 2")
        m = self.n - 1
        clean = {}
        for (alpha, beta, l), c in self.entries.items():
            alpha, beta, l = _tuple(alpha), _tuple(beta), int(l)
            if len(alpha) != m or len(beta) != m:
                raise SeriesError(f"multi-indices must have length n-1={m}")
            if sum(alpha) < 2 or sum(beta) < 2:
                raise SeriesError(f"normal form needs |alpha|, |beta| >= 2, got {alpha}, {beta}")
            if l < 0 or min(alpha + beta) < 0:
                raise SeriesError("exponents must be non-negative")
            c = EXACT.coerce(c)
            if c:
                clean[(alpha, beta, l)] = c
        for (alpha, beta, l), c in list(clean.items()):
            partner = (beta, alpha, l)
            if partner in clean:
                if clean[partner] != c.conjugate():
                    raise SeriesError(f"reality violated: A^{l}_{alpha},{beta} is not the conjugate "
                                      f"of A^{l}_{beta},{alpha}")
            else:
                clean[partner] = c.conjugate()
        object.__setattr__(self, "entries", dict(sorted(clean.items())))

    @property
    def max_weight(self) -> int:
        return max((sum(a) + sum(b) + 2 * l for a, b, l in self.entries), default=0)

    def truncated(self, weight: int) -> "NormalForm":
        return NormalForm(self.n, {k: c for k, c in self.entries.items()
                                   if sum(k[0]) + sum(k[1]) + 2 * k[2] <= weight})

    def with_entry(self, alpha, beta, l, value) -> "NormalForm":
        """Copy with ``A^l_{alpha beta-bar} = value`` and its conjugate partner."""
        entries = dict(self.entries)
        key = (_tuple(alpha), _tuple(beta), int(l))
        entries.pop((key[1], key[0], key[2]), None)
        entries[key] = EXACT.coerce(value)
        return NormalForm(self.n, entries)

    def polynomial(self, l: int, p: int, q: int) -> dict:
        """``A^l_{p q-bar}(z, zb)`` as ``{(alpha, beta): coeff}``."""
        return {(a, b): c for (a, b, ll), c in self.entries.items()
                if ll == l and sum(a) == p and sum(b) == q}

    def to_json(self) -> dict:
        return {"n": self.n, "entries": [
            {"alpha": list(a), "beta": list(b), "l": l, **EXACT.to_json(c)}
            for (a, b, l), c in self.entries.items()]}

    @classmethod
    def from_json(cls, d: dict) -> "NormalForm":
        n = int(d["n"])
        entries = {}
        for e in d.get("entries", []):
            key = (_tuple(e["alpha"]), _tuple(e["beta"]), int(e.get("l", 0)))
            entries[key] = EXACT.from_json(e)
        return cls(n, entries)


# ---------------------------------------------------------------------------
# trace conditions


@dataclass
class TraceReport:
    passed: bool
    failures: list  # (l, p, q, {offending monomial: coeff})

    def to_json(self) -> dict:
        return {"passed": self.passed, "failures": [
            {"l": l, "p": p, "q": q,
             "terms": [{"alpha": list(a), "beta": list(b), **EXACT.to_json(c)}
                       for (a, b), c in sorted(terms.items())]}
            for l, p, q, terms in self.failures]}


def _laplace(poly: dict, m: int) -> dict:
    """``sum_k d/dz_k d/dzb_k`` on ``{(alpha, beta): coeff}``."""
    out: dict = {}
    for (a, b), c in poly.items():
        for k in range(m):
            if a[k] and b[k]:
                na = a[:k] + (a[k] - 1,) + a[k + 1:]
                nb = b[:k] + (b[k] - 1,) + b[k + 1:]
                v = out.get((na, nb), EXACT.zero) + c * (a[k] * b[k])
                if v:
                    out[(na, nb)] = v
                else:
                    out.pop((na, nb), None)
    return out


_TRACE_POWERS = {(2, 2): 1, (2, 3): 2, (3, 2): 2, (3, 3): 3}


def validate_trace_conditions(nf: NormalForm) -> TraceReport:
    """Check ``Delta A_22 = Delta^2 A_23 = Delta^3 A_33 = 0`` for every ``l``.

    For ``n = 2`` the four low blocks must vanish outright.
    """
    m = nf.n - 1
    failures = []
    for l in sorted({k[2] for k in nf.entries}):
        for (p, q), times in _TRACE_POWERS.items():
            poly = nf.polynomial(l, p, q)
            if not poly:
                continue
            if nf.n == 2:
                failures.append((l, p, q, poly))
                continue
            img = poly
            for _ in range(times):
                img = _laplace(img, m)
            if img:
                failures.append((l, p, q, img))
    return TraceReport(not failures, failures)


# ---------------------------------------------------------------------------
# defining series


def _v_series(space, weight):
    w = MultiSeries.variable(space, "w", weight)
    wb = MultiSeries.variable(space, "wb", weight)
    return scale(w - wb, GaussQ(mpq(0), mpq(-1, 2)))  # (w - wb) / (2i)


def hyperquadric(n: int, weight: int) -> MultiSeries:
    sp = cr_space(n)
    rho = MultiSeries.variable(sp, "w", weight) + MultiSeries.variable(sp, "wb", weight)
    for j in range(1, n):
        rho = rho - MultiSeries.variable(sp, f"z{j}", weight) * MultiSeries.variable(sp, f"zb{j}", weight)
    return rho


def normal_form_terms(nf: NormalForm, weight: int) -> MultiSeries:
    """``sum A^l z^alpha zb^beta v^l`` truncated at ``weight``."""
    sp = cr_space(nf.n)
    v = _v_series(sp, weight)
    vpow = {0: MultiSeries.constant(sp, 1, weight)}
    total = MultiSeries.zero(sp, weight)
    for (a, b, l), c in nf.entries.items():
        if sum(a) + sum(b) + 2 * l > weight:
            continue
        if l not in vpow:
            vpow[l] = v ** l
        mono = MultiSeries(sp, {sp.encode(a + b + (0, 0)): c}, weight)
        total = total + mono * vpow[l]
    total.real = True
    return total


def build_defining_series(nf: NormalForm, weight: int) -> DefiningSeries:
    """``rho = 2u - |z|^2 - sum A^l z^alpha zb^beta v^l`` with ``u, v`` in ``w, wb``."""
    if weight < 2:
        raise SeriesError("weight must be >= 2")
    rho = hyperquadric(nf.n, weight) - normal_form_terms(nf, weight)
    rho.real = True
    return DefiningSeries(rho)


# ---------------------------------------------------------------------------
# osculation


def graph_function(rho) -> MultiSeries:
    """``phi`` with ``rho = 2u - |z|^2 - phi(z, zb, v)``; raises if not of that form."""
    rho = rho.rho if isinstance(rho, DefiningSeries) else rho
    n = rho.space.n
    phi = hyperquadric(n, rho.valid_weight) - rho
    phi = truncate(phi, rho.valid_weight, rho.cap)
    # phi must not depend on u: (d/dw + d/dwb) phi = 0
    du = derive(phi, "w") + derive(phi, "wb")
    if not du.is_zero():
        raise SeriesError("input is not in graph form 2u = |z|^2 + phi(z, zb, v)")
    if phi.valuation() < 3:
        raise SeriesError("graph form needs phi = O_wt(3)")
    return phi


@dataclass
class OsculationReport:
    order: int
    lower_bound: bool
    first_discrepant_weight_terms: list  # (Monomial, coeff)

    def __str__(self):
        return f">= {self.order}" if self.lower_bound else str(self.order)

    def to_json(self) -> dict:
        return {"order": str(self), "lower_bound": self.lower_bound, "terms": [
            {"alpha": list(mo.alpha), "beta": list(mo.beta), "p": mo.p, "q": mo.q, **EXACT.to_json(c)}
            for mo, c in self.first_discrepant_weight_terms]}


def osculation_order(a, b) -> OsculationReport:
    """Smallest weight of a nonzero term of ``phi_a - phi_b``.

    Identical graphs (to the common validity ``N``) give ``order = N+1`` with
    ``lower_bound`` set, i.e. agreement certified only through weight ``N``.
    """
    diff = sub(graph_function(a), graph_function(b))
    if diff.is_zero():
        return OsculationReport(diff.valid_weight + 1, True, [])
    k = diff.valuation()
    terms = [(mo, c) for mo, c in diff.monomials() if mo.weight == k]
    return OsculationReport(k, False, terms)


# ---------------------------------------------------------------------------
# trace formula and Cauchy data of the osculation theorem


def linear_trace_k(nf: NormalForm):
    """Linear part of ``K(rho)(0)`` in the weight ``2n+4`` coefficients.

    ``(n+2)^2 sum_j 2^(-2j) C(n, j) / C(n+2, 2j) tr^p A^{2j}_{p p-bar}`` with
    ``p = n+2-2j`` and ``tr^p A = (1/p!) sum_{|alpha|=p} A_{alpha alpha-bar} alpha!``.
    Exact for inputs without lower-weight coefficients.
    """
    n = nf.n
    total = EXACT.zero
    for j in range((n - 2) // 2 + 1):
        p = n + 2 - 2 * j
        tr = EXACT.zero
        for (a, b, l), c in nf.entries.items():
            if l == 2 * j and a == b and sum(a) == p:
                tr = tr + c * math.prod(math.factorial(x) for x in a)
        tr = tr * Fraction(1, math.factorial(p))
        coef = Fraction((n + 2) ** 2 * math.comb(n, j), 4 ** j * math.comb(n + 2, 2 * j))
        total = total + tr * coef
    return total


def x1_power(n: int, k: int, weight: int) -> MultiSeries:
    """``x_1^k`` with ``x_1 = (z_1 + zb_1)/2``."""
    sp = cr_space(n)
    x1 = scale(MultiSeries.variable(sp, "z1", weight) + MultiSeries.variable(sp, "zb1", weight),
               Fraction(1, 2))
    out = x1 ** k
    out.real = True
    return out


def osculating_flat_data(nf: NormalForm, weight: int | None = None, k_rho=None):
    """Cauchy data ``psi_0`` of the obstruction-flat osculating hypersurface.

    ``psi_0 = 2u - |z|^2 - sum_{wt <= 2n+4} A z^alpha zb^beta v^l
    + K(rho)(0)/(n+2)^2 |z_1|^(2n+4)``.  Returns ``(psi_0, K(rho)(0))``.
    """
    n = nf.n
    top = 2 * n + 4
    weight = default_weight(n) if weight is None else weight
    if k_rho is None:
        k_rho = analyze(build_defining_series(nf, weight)).k_value
    base = build_defining_series(nf.truncated(top), weight).rho
    sp = cr_space(n)
    corr = MultiSeries(sp, {sp.encode((n + 2,) + (0,) * (n - 2) + (n + 2,) + (0,) * (n - 2) + (0, 0)):
                            k_rho * Fraction(1, (n + 2) ** 2)}, weight)
    psi0 = base + corr
    psi0.real = True
    return DefiningSeries(psi0), k_rho


@dataclass
class Theorem31Report:
    n: int
    weight: int
    k_rho: object
    k_psi0: object
    samples: list  # (t, K(psi_0 - t x1^(2n+4))(0))
    slopes: list
    expected_slope: Fraction
    osculation: OsculationReport
    consistent: bool = True
    problems: list = field(default_factory=list)

    def to_json(self) -> dict:
        s = EXACT.to_str
        return {
            "n": self.n, "weight": self.weight,
            "k_rho": s(self.k_rho), "k_psi0": s(self.k_psi0),
            "condition_i": not self.k_psi0,
            "samples": [{"t": str(t), "k": s(k)} for t, k in self.samples],
            "slopes": [s(x) for x in self.slopes],
            "psi_slopes": [s(-x) for x in self.slopes],
            "expected_slope": str(self.expected_slope),
            "condition_ii": all(x == self.expected_slope for x in self.slopes) and self.expected_slope != 0,
            "osculation_order": self.osculation.to_json(),
            "consistent": self.consistent, "problems": self.problems,
        }


def theorem31_data_check(nf: NormalForm, weight: int | None = None,
                         t_values=(Fraction(1), Fraction(-2))) -> Theorem31Report:
    """Check the consistency and non-characteristic conditions for the osculating flat data.

    (i) ``K(psi_0)(0) = 0``; (ii) perturbing the graph part ``phi`` by
    ``t x_1^(2n+4)`` moves ``K(0)`` linearly in ``t`` with slope
    ``(n+2)^2 2^-(2n+4) C(2n+4, n+2)``.  Since ``psi = 2u - |z|^2 - phi`` this is
    ``psi_0 - t x_1^(2n+4)``; the slope for ``psi_0 + t x_1^(2n+4)`` is the
    negative and is kept in ``psi_slopes``.  A failure is an implementation
    inconsistency and is reported in ``problems``.
    """
    n = nf.n
    top = 2 * n + 4
    weight = default_weight(n) if weight is None else weight
    if weight < top:
        raise SeriesError(f"weight must be >= {top}")
    psi0, k_rho = osculating_flat_data(nf, weight)
    k_psi0 = analyze(psi0).k_value
    xp = x1_power(n, top, weight)
    samples, slopes = [], []
    for t in t_values:
        moved = psi0.rho - scale(xp, t)
        moved.real = True
        kt = analyze(DefiningSeries(moved)).k_value
        samples.append((t, kt))
        slopes.append((kt - k_psi0) * Fraction(1) / EXACT.coerce(t))
    expected = Fraction((n + 2) ** 2 * math.comb(top, n + 2), 2 ** top)
    osc = osculation_order(build_defining_series(nf, weight), psi0)
    problems = []
    if k_psi0:
        problems.append(f"K(psi_0)(0) = {k_psi0} != 0")
    for t, sl in zip(t_values, slopes):
        if sl != expected:
            problems.append(f"slope at t={t} is {sl}, expected {expected}")
    if osc.order < top:
        problems.append(f"osculation order {osc} below {top}")
    if (osc.order == top) != bool(k_rho):
        problems.append(f"osculation order {osc} inconsistent with K(rho)(0) = {k_rho}")
    return Theorem31Report(n, weight, k_rho, k_psi0, samples, slopes, expected, osc,
                           not problems, problems)
