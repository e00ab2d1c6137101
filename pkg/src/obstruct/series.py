"""Truncated weighted multivariate power series.

A series stores a sparse map from monomials to coefficients together with the
weight ``valid_weight`` up to which the stored terms are known to be correct.
Monomial exponent vectors are packed into a single integer (8 bits per
variable) so that monomial multiplication is integer addition.

Two coefficient fields are supported:

* :data:`EXACT` -- Gaussian rationals, :class:`GaussQ`, built on ``gmpy2.mpq``;
* :class:`FloatField` -- ``gmpy2.mpc`` numbers at a configurable precision.

Besides the weight truncation a series of a CR space may carry a *cap*
``(ca, cb)``: only terms with holomorphic degree ``|alpha| <= ca`` and
antiholomorphic degree ``|beta| <= cb`` are kept.  The terms above the cap form
an ideal, so arithmetic stays correct on the capped region; derivatives lower
the matching component of the cap by one.
"""
from __future__ import annotations

import contextlib
import functools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import gmpy2
from gmpy2 import mpc, mpq

__all__ = [
    "GaussQ", "ExactField", "FloatField", "EXACT", "get_field",
    "Space", "cr_space", "SURFACE", "PLANE",
    "Monomial", "MultiSeries", "UnivariateSeries",
    "SeriesError", "FieldMismatch", "NotAUnit",
    "add", "sub", "mul", "scale", "derive", "unit_power", "unit_divide",
    "inverse", "exp_series", "restrict_to_curve", "compose", "truncate", "convert",
    "curve_directions", "series_to_json", "series_from_json",
]

_BITS = 8
_MASK = (1 << _BITS) - 1


class SeriesError(ValueError):
    pass


class FieldMismatch(SeriesError):
    pass


class NotAUnit(SeriesError):
    pass


# ---------------------------------------------------------------------------
# coefficient fields


class GaussQ:
    """Exact complex rational ``re + i*im``."""

    __slots__ = ("re", "im")

    def __init__(self, re, im=mpq(0)):
        self.re = re
        self.im = im

    @classmethod
    def of(cls, x) -> "GaussQ":
        if isinstance(x, GaussQ):
            return x
        if isinstance(x, complex):
            return cls(mpq(Fraction(x.real)), mpq(Fraction(x.imag)))
        if isinstance(x, Fraction):
            return cls(mpq(x.numerator, x.denominator))
        if isinstance(x, str):
            return cls(_parse_rational(x))
        return cls(mpq(x))

    def __add__(self, o):
        if type(o) is GaussQ:
            return GaussQ(self.re + o.re, self.im + o.im)
        o = GaussQ.of(o)
        return GaussQ(self.re + o.re, self.im + o.im)

    __radd__ = __add__

    def __sub__(self, o):
        if type(o) is not GaussQ:
            o = GaussQ.of(o)
        return GaussQ(self.re - o.re, self.im - o.im)

    def __rsub__(self, o):
        return GaussQ.of(o) - self

    def __mul__(self, o):
        if type(o) is GaussQ:
            a, b, c, d = self.re, self.im, o.re, o.im
            if not b:
                return GaussQ(a * c, a * d)
            if not d:
                return GaussQ(a * c, b * c)
            return GaussQ(a * c - b * d, a * d + b * c)
        o = GaussQ.of(o)
        return self * o

    __rmul__ = __mul__

    def __neg__(self):
        return GaussQ(-self.re, -self.im)

    def __truediv__(self, o):
        return self * GaussQ.of(o).reciprocal()

    def __rtruediv__(self, o):
        return GaussQ.of(o) * self.reciprocal()

    def __pow__(self, k: int):
        if k < 0:
            return self.reciprocal() ** (-k)
        out = GaussQ(mpq(1))
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def reciprocal(self) -> "GaussQ":
        norm = self.re * self.re + self.im * self.im
        if not norm:
            raise ZeroDivisionError("GaussQ division by zero")
        return GaussQ(self.re / norm, -self.im / norm)

    def conjugate(self) -> "GaussQ":
        return GaussQ(self.re, -self.im)

    @property
    def real(self):
        return self.re

    @property
    def imag(self):
        return self.im

    def __bool__(self):
        return bool(self.re) or bool(self.im)

    def __eq__(self, o):
        if not isinstance(o, GaussQ):
            try:
                o = GaussQ.of(o)
            except (TypeError, ValueError):
                return NotImplemented
        return self.re == o.re and self.im == o.im

    def __hash__(self):
        return hash((self.re, self.im))

    def __complex__(self):
        return complex(float(self.re), float(self.im))

    def __repr__(self):
        return f"GaussQ({self})"

    def __str__(self):
        if not self.im:
            return str(self.re)
        if not self.re:
            return f"{self.im}*I"
        sign = "+" if self.im > 0 else "-"
        return f"{self.re}{sign}{abs(self.im)}*I"


def _parse_rational(s: str):
    s = s.strip()
    try:
        return mpq(s)
    except ValueError:
        return mpq(Fraction(s))


class ExactField:
    """Gaussian rationals; arithmetic is closed and exact."""

    name = "exact"
    precision = None
    exact = True

    def __init__(self):
        self.zero = GaussQ(mpq(0))
        self.one = GaussQ(mpq(1))

    def __eq__(self, other):
        return isinstance(other, ExactField)

    def __hash__(self):
        return hash("exact")

    def __repr__(self):
        return "ExactField()"

    def coerce(self, x) -> GaussQ:
        if isinstance(x, mpc):
            raise FieldMismatch("float coefficient given to the exact field")
        return GaussQ.of(x)

    def from_parts(self, re, im=0) -> GaussQ:
        return GaussQ(_as_mpq(re), _as_mpq(im))

    def context(self):
        return contextlib.nullcontext()

    nonzero = staticmethod(bool)

    def negligible(self, c, scale=1) -> bool:
        return not c

    def root(self, c: GaussQ, k: int) -> GaussQ:
        """Exact positive real ``k``-th root of a positive rational."""
        if c.im or c.re <= 0:
            raise NotAUnit(f"no exact real {k}-th root of {c}")
        num, ok1 = gmpy2.iroot(c.re.numerator, k)
        den, ok2 = gmpy2.iroot(c.re.denominator, k)
        if not (ok1 and ok2):
            raise NotAUnit(
                f"{c} is not a perfect {k}-th power; use the float backend")
        return GaussQ(mpq(num, den))

    def exp(self, c):
        if c:
            raise NotAUnit("exp of a nonzero constant is not exact; use the float backend")
        return self.one

    def to_json(self, c: GaussQ) -> dict:
        return {"re": _q_str(c.re), "im": _q_str(c.im)}

    def from_json(self, d: dict) -> GaussQ:
        return GaussQ(_parse_rational(str(d.get("re", "0"))),
                      _parse_rational(str(d.get("im", "0"))))

    def to_str(self, c: GaussQ) -> str:
        return str(c)


def _as_mpq(x):
    if isinstance(x, Fraction):
        return mpq(x.numerator, x.denominator)
    if isinstance(x, str):
        return _parse_rational(x)
    return mpq(x)


def _q_str(q) -> str:
    q = mpq(q)
    if q.denominator == 1:
        return str(q.numerator)
    return f"{q.numerator}/{q.denominator}"


class FloatField:
    """Complex floats with ``precision`` bits of mantissa (>= 53)."""

    exact = False

    def __init__(self, precision: int = 128):
        if precision < 53:
            raise ValueError("float backend precision must be >= 53 bits")
        self.precision = int(precision)
        self.name = "float"
        self._ctx = gmpy2.context(precision=self.precision)
        with self.context():
            self.zero = mpc(0)
            self.one = mpc(1)
        self.eps = mpq(1, 2 ** (self.precision - 10))

    def __eq__(self, other):
        return isinstance(other, FloatField) and other.precision == self.precision

    def __hash__(self):
        return hash(("float", self.precision))

    def __repr__(self):
        return f"FloatField(precision={self.precision})"

    def context(self):
        return gmpy2.context(self._ctx)

    def coerce(self, x) -> mpc:
        with self.context():
            if isinstance(x, GaussQ):
                return mpc(gmpy2.mpfr(x.re), gmpy2.mpfr(x.im))
            if isinstance(x, Fraction):
                return mpc(gmpy2.mpfr(mpq(x.numerator, x.denominator)))
            if isinstance(x, str):
                return mpc(gmpy2.mpfr(_parse_rational(x)))
            if isinstance(x, type(mpq(0))):
                return mpc(gmpy2.mpfr(x))
            return mpc(x)

    def from_parts(self, re, im=0) -> mpc:
        with self.context():
            return mpc(gmpy2.mpfr(_as_mpq(re)), gmpy2.mpfr(_as_mpq(im)))

    @staticmethod
    def nonzero(c) -> bool:
        # bool(mpc(0)) is True in gmpy2, so compare explicitly
        return c != 0

    def negligible(self, c, scale=1) -> bool:
        return abs(c) <= self.eps * max(abs(scale), 1)

    def root(self, c, k: int):
        with self.context():
            if abs(c.imag) > self.eps * abs(c) or c.real <= 0:
                raise NotAUnit(f"no positive real {k}-th root of {c}")
            return mpc(gmpy2.root(c.real, k))

    def exp(self, c):
        with self.context():
            return gmpy2.exp(mpc(c))

    def to_json(self, c) -> dict:
        digits = int(self.precision * math.log10(2)) + 1
        return {"re": _mpfr_str(c.real, digits), "im": _mpfr_str(c.imag, digits)}

    def from_json(self, d: dict):
        with self.context():
            return mpc(gmpy2.mpfr(str(d.get("re", "0"))), gmpy2.mpfr(str(d.get("im", "0"))))

    def to_str(self, c) -> str:
        digits = int(self.precision * math.log10(2)) + 1
        if c.imag == 0:
            return _mpfr_str(c.real, digits)
        return f"{_mpfr_str(c.real, digits)}{'+' if c.imag >= 0 else '-'}{_mpfr_str(abs(c.imag), digits)}*I"


def _mpfr_str(x, digits: int) -> str:
    if x == 0:
        return "0"
    return format(x, f".{digits}g")


EXACT = ExactField()


@functools.lru_cache(maxsize=None)
def get_field(backend: str = "exact", precision: int = 128):
    if backend == "exact":
        return EXACT
    if backend == "float":
        return FloatField(precision)
    raise ValueError(f"unknown backend {backend!r}")


# ---------------------------------------------------------------------------
# variable spaces


@dataclass(frozen=True)
class Space:
    """Ordered variables with weights and the conjugation permutation.

    ``conj[i]`` is the index of the variable conjugate to variable ``i``
    (itself for real coordinates).  ``hol``/``antihol`` list the variables
    counted by the first/second component of a cap.
    """

    names: tuple
    weights: tuple
    conj: tuple
    hol: tuple = ()
    antihol: tuple = ()
    n: int | None = None
    label: str = ""

    @property
    def nvars(self) -> int:
        return len(self.names)

    def index(self, var) -> int:
        if isinstance(var, int):
            return var
        try:
            return self.names.index(var)
        except ValueError:
            raise SeriesError(f"unknown variable {var!r} in {self.label} space") from None

    def encode(self, exps) -> int:
        key = 0
        for i, e in enumerate(exps):
            if e < 0 or e > _MASK:
                raise SeriesError(f"exponent {e} out of range")
            key |= e << (_BITS * i)
        return key

    def decode(self, key: int) -> tuple:
        return tuple((key >> (_BITS * i)) & _MASK for i in range(len(self.names)))

    def grade(self, key: int):
        """Return ``(weight, holomorphic degree, antiholomorphic degree)``."""
        exps = self.decode(key)
        w = sum(e * wt for e, wt in zip(exps, self.weights))
        a = sum(exps[i] for i in self.hol)
        b = sum(exps[i] for i in self.antihol)
        return w, a, b

    def conj_key(self, key: int) -> int:
        exps = self.decode(key)
        return self.encode([exps[self.conj[i]] for i in range(len(exps))])

    def unit(self, var) -> int:
        return 1 << (_BITS * self.index(var))


@functools.lru_cache(maxsize=None)
def cr_space(n: int) -> Space:
    """Variables ``z1..z_{n-1}, zb1..zb_{n-1}, w, wb`` of C^n."""
    if n < 2:
        raise SeriesError("ambient dimension n must be >= 2")
    m = n - 1
    names = tuple(f"z{j}" for j in range(1, m + 1)) + tuple(f"zb{j}" for j in range(1, m + 1)) + ("w", "wb")
    weights = (1,) * (2 * m) + (2, 2)
    conj = tuple(range(m, 2 * m)) + tuple(range(m)) + (2 * m + 1, 2 * m)
    return Space(names, weights, conj, tuple(range(m)), tuple(range(m, 2 * m)), n, f"C^{n}")


SURFACE = Space(("z", "zb"), (1, 1), (1, 0), (), (), None, "surface")
PLANE = Space(("x", "y"), (1, 1), (0, 1), (), (), None, "plane")


class Monomial(NamedTuple):
    alpha: tuple
    beta: tuple
    p: int
    q: int

    @property
    def weight(self) -> int:
        return sum(self.alpha) + sum(self.beta) + 2 * self.p + 2 * self.q


# ---------------------------------------------------------------------------
# series


def _min_cap(c1, c2):
    if c1 is None:
        return c2
    if c2 is None:
        return c1
    return (min(c1[0], c2[0]), min(c1[1], c2[1]))


class MultiSeries:
    """Immutable truncated power series over a :class:`Space`."""

    __slots__ = ("space", "field", "terms", "valid_weight", "cap", "real", "_graded")

    def __init__(self, space: Space, terms: dict, valid_weight: int, field=EXACT,
                 cap=None, real: bool = False, *, _trusted: bool = False):
        self.space = space
        self.field = field
        self.valid_weight = int(valid_weight)
        self.cap = None if cap is None else (int(cap[0]), int(cap[1]))
        self.real = bool(real)
        self._graded = None
        if _trusted:
            self.terms = terms
            return
        clean = {}
        for key, c in terms.items():
            if not isinstance(key, int):
                key = space.encode(key)
            c = field.coerce(c)
            if not field.nonzero(c):
                continue
            w, a, b = space.grade(key)
            if w > self.valid_weight:
                continue
            if self.cap is not None and (a > self.cap[0] or b > self.cap[1]):
                continue
            clean[key] = c
        self.terms = clean

    # -- constructors -----------------------------------------------------
    @classmethod
    def zero(cls, space, valid_weight, field=EXACT, cap=None):
        return cls(space, {}, valid_weight, field, cap, real=True, _trusted=True)

    @classmethod
    def constant(cls, space, value, valid_weight, field=EXACT, cap=None):
        c = field.coerce(value)
        terms = {0: c} if field.nonzero(c) else {}
        real = not field.coerce(value).imag
        return cls(space, terms, valid_weight, field, cap, real=real, _trusted=True)

    @classmethod
    def variable(cls, space, var, valid_weight, field=EXACT, cap=None):
        return cls(space, {space.unit(var): field.one}, valid_weight, field, cap)

    @classmethod
    def from_monomials(cls, n, items, valid_weight, field=EXACT, cap=None, real=False):
        """Build a CR series from ``(Monomial-like, coeff)`` pairs."""
        space = cr_space(n)
        terms = {}
        with field.context():
            for mono, c in items:
                alpha, beta, p, q = mono
                key = space.encode(tuple(alpha) + tuple(beta) + (p, q))
                terms[key] = field.coerce(terms.get(key, field.zero)) + field.coerce(c)
        return cls(space, terms, valid_weight, field, cap, real)

    # -- inspection --------------------------------------------------------
    @property
    def n(self):
        return self.space.n

    def __len__(self):
        return len(self.terms)

    def items(self):
        """Yield ``(exponent tuple, coefficient)`` in deterministic order."""
        keys = sorted(self.terms, key=lambda k: (self.space.grade(k)[0], self.space.decode(k)))
        for k in keys:
            yield self.space.decode(k), self.terms[k]

    def monomials(self):
        if self.space.n is None:
            raise SeriesError("monomials() is defined for CR spaces only")
        m = self.space.n - 1
        for exps, c in self.items():
            yield Monomial(exps[:m], exps[m:2 * m], exps[2 * m], exps[2 * m + 1]), c

    def coeff(self, exps):
        key = exps if isinstance(exps, int) else self.space.encode(_flat(exps))
        return self.terms.get(key, self.field.zero)

    def constant_term(self):
        return self.terms.get(0, self.field.zero)

    def valuation(self) -> int:
        """Lowest weight carried by the true series (``valid_weight+1`` if none stored)."""
        g = self.graded()
        return g[0][0] if g else self.valid_weight + 1

    def is_zero(self) -> bool:
        return not self.terms

    def graded(self):
        """Terms grouped into buckets ``(weight, a, b, keys, coeffs)`` sorted by weight."""
        if self._graded is None:
            buckets = {}
            grade = self.space.grade
            for k, c in self.terms.items():
                g = grade(k)
                slot = buckets.get(g)
                if slot is None:
                    buckets[g] = slot = ([], [])
                slot[0].append(k)
                slot[1].append(c)
            self._graded = [(g[0], g[1], g[2], ks, cs) for g, (ks, cs) in sorted(buckets.items())]
        return self._graded

    def check_real(self) -> bool:
        """True when the conjugate-symmetry invariant holds on every stored term."""
        f = self.field
        with f.context():
            for k, c in self.terms.items():
                ck = self.space.conj_key(k)
                other = self.terms.get(ck, f.zero)
                diff = c.conjugate() - other
                if not f.negligible(diff, c):
                    return False
        return True

    def conj(self) -> "MultiSeries":
        with self.field.context():
            terms = {self.space.conj_key(k): c.conjugate() for k, c in self.terms.items()}
        return self._like(terms, self.valid_weight, self.cap and (self.cap[1], self.cap[0]), self.real)

    def _like(self, terms, valid, cap, real):
        return MultiSeries(self.space, terms, valid, self.field, cap, real, _trusted=True)

    def __repr__(self):
        return (f"MultiSeries({self.space.label}, {len(self.terms)} terms, "
                f"valid_weight={self.valid_weight}, cap={self.cap}, field={self.field!r})")

    def __str__(self):
        if not self.terms:
            return f"O({self.valid_weight + 1})"
        parts = []
        for exps, c in self.items():
            mono = "*".join(f"{nm}^{e}" if e > 1 else nm
                            for nm, e in zip(self.space.names, exps) if e)
            cs = self.field.to_str(c)
            parts.append(f"({cs})*{mono}" if mono else f"({cs})")
        return " + ".join(parts) + f" + O({self.valid_weight + 1})"

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        if not isinstance(other, MultiSeries):
            other = MultiSeries.constant(self.space, other, self.valid_weight, self.field, self.cap)
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if not isinstance(other, MultiSeries):
            other = MultiSeries.constant(self.space, other, self.valid_weight, self.field, self.cap)
        return sub(self, other)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        with self.field.context():
            terms = {k: -c for k, c in self.terms.items()}
        return self._like(terms, self.valid_weight, self.cap, self.real)

    def __mul__(self, other):
        if isinstance(other, MultiSeries):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, MultiSeries):
            return unit_divide(self, other)
        with self.field.context():
            inv = self.field.one / self.field.coerce(other)
        return scale(self, inv)

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise SeriesError("only non-negative integer powers; use unit_power")
        out = MultiSeries.constant(self.space, 1, self.valid_weight, self.field, self.cap)
        base = self
        while k:
            if k & 1:
                out = mul(out, base)
            k >>= 1
            if k:
                base = mul(base, base)
        return out

    def equals(self, other, weight: int | None = None) -> bool:
        """Coefficientwise equality through ``weight`` (default: common validity)."""
        if weight is None:
            weight = min(self.valid_weight, other.valid_weight)
        d = sub(truncate(self, weight), truncate(other, weight))
        f = self.field
        if f.exact:
            return not d.terms
        zero = f.zero
        # relative to the larger of the two coefficients
        return all(f.negligible(c, max(abs(self.terms.get(k, zero)), abs(other.terms.get(k, zero))))
                   for k, c in d.terms.items())

    def truncate(self, weight=None, cap=None):
        return truncate(self, weight, cap)

    def derive(self, var):
        return derive(self, var)

    def evaluate(self, values) -> complex:
        """Evaluate the stored polynomial at a point given per variable (as Python numbers)."""
        vals = list(values)
        if len(vals) != self.space.nvars:
            raise SeriesError("one value per variable is required")
        total = 0j
        for exps, c in self.items():
            t = complex(c)
            for v, e in zip(vals, exps):
                if e:
                    t *= v ** e
            total += t
        return total

    def evaluate_at(self, **coords) -> complex:
        """Evaluate with conjugate variables filled in from the holomorphic ones.

        CR spaces take ``z=[...]`` and ``w=...``; the surface space takes ``z=``;
        the plane takes ``x=`` and ``y=``.
        """
        sp = self.space
        if sp.n is not None:
            zs = list(coords.get("z", [0] * (sp.n - 1)))
            w = coords.get("w", 0)
            vals = zs + [complex(z).conjugate() for z in zs] + [w, complex(w).conjugate()]
        elif sp is SURFACE:
            z = complex(coords.get("z", 0))
            vals = [z, z.conjugate()]
        else:
            vals = [coords.get(nm, 0) for nm in sp.names]
        return self.evaluate(vals)


def _flat(exps):
    if isinstance(exps, Monomial):
        return tuple(exps.alpha) + tuple(exps.beta) + (exps.p, exps.q)
    return tuple(exps)


def _check_pair(a: MultiSeries, b: MultiSeries):
    if a.space != b.space:
        raise SeriesError(f"space mismatch: {a.space.label} vs {b.space.label}")
    if a.field != b.field:
        raise FieldMismatch(f"field mismatch: {a.field!r} vs {b.field!r}")


# ---------------------------------------------------------------------------
# operations


def truncate(a: MultiSeries, weight: int | None = None, cap=None) -> MultiSeries:
    """Drop terms above ``weight`` and outside ``cap`` (both only ever shrink)."""
    weight = a.valid_weight if weight is None else min(weight, a.valid_weight)
    cap = _min_cap(a.cap, cap)
    grade = a.space.grade
    terms = {}
    for k, c in a.terms.items():
        w, x, y = grade(k)
        if w > weight or (cap is not None and (x > cap[0] or y > cap[1])):
            continue
        terms[k] = c
    return a._like(terms, weight, cap, a.real)


def add(a: MultiSeries, b: MultiSeries) -> MultiSeries:
    """Termwise sum; valid weight and cap are the smaller of the two."""
    _check_pair(a, b)
    valid = min(a.valid_weight, b.valid_weight)
    cap = _min_cap(a.cap, b.cap)
    if valid < a.valid_weight or cap != a.cap:
        a = truncate(a, valid, cap)
    if valid < b.valid_weight or cap != b.cap:
        b = truncate(b, valid, cap)
    terms = dict(a.terms)
    nz = a.field.nonzero
    with a.field.context():
        for k, c in b.terms.items():
            v = terms.get(k)
            if v is None:
                terms[k] = c
            else:
                s = v + c
                if nz(s):
                    terms[k] = s
                else:
                    del terms[k]
    return a._like(terms, valid, cap, a.real and b.real)


def sub(a: MultiSeries, b: MultiSeries) -> MultiSeries:
    return add(a, -b)


def scale(a: MultiSeries, c) -> MultiSeries:
    nz = a.field.nonzero
    c = a.field.coerce(c)
    if not nz(c):
        return a._like({}, a.valid_weight, a.cap, True)
    terms = {}
    with a.field.context():
        for k, v in a.terms.items():
            p = v * c
            if nz(p):
                terms[k] = p
    return a._like(terms, a.valid_weight, a.cap, a.real and not c.imag)


def _product_into(acc: dict, ga, gb, limit: int, cap):
    """Accumulate the products of graded bucket lists with weight <= limit."""
    ca = cb = None
    if cap is not None:
        ca, cb = cap
    for wa, aa, ba, ka, cva in ga:
        if wa > limit:
            break
        room = limit - wa
        for wb, ab, bb, kb, cvb in gb:
            if wb > room:
                break
            if ca is not None and (aa + ab > ca or ba + bb > cb):
                continue
            pairs_b = list(zip(kb, cvb))
            for k1, c1 in zip(ka, cva):
                for k2, c2 in pairs_b:
                    k = k1 + k2
                    v = acc.get(k)
                    if v is None:
                        acc[k] = c1 * c2
                    else:
                        acc[k] = v + c1 * c2


def mul(a: MultiSeries, b: MultiSeries) -> MultiSeries:
    """Truncated product.

    The result is valid through ``min(Na + val(b), Nb + val(a))`` where ``val``
    is the lowest weight present: a truncation error of weight ``Na+1`` in ``a``
    only meets terms of ``b`` of weight at least ``val(b)``.  This is never
    below ``min(Na, Nb)``.
    """
    _check_pair(a, b)
    valid = min(a.valid_weight + b.valuation(), b.valid_weight + a.valuation())
    cap = _min_cap(a.cap, b.cap)
    acc: dict = {}
    with a.field.context():
        if len(a.terms) <= len(b.terms):
            _product_into(acc, a.graded(), b.graded(), valid, cap)
        else:
            _product_into(acc, b.graded(), a.graded(), valid, cap)
    nz = a.field.nonzero
    terms = {k: c for k, c in acc.items() if nz(c)}
    return a._like(terms, valid, cap, a.real and b.real)


def derive(a: MultiSeries, var) -> MultiSeries:
    """Formal partial derivative; validity drops by the variable's weight."""
    sp = a.space
    i = sp.index(var)
    shift = _BITS * i
    unit = 1 << shift
    terms = {}
    with a.field.context():
        for k, c in a.terms.items():
            e = (k >> shift) & _MASK
            if e:
                terms[k - unit] = c * e
    cap = a.cap
    if cap is not None:
        if i in sp.hol:
            cap = (cap[0] - 1, cap[1])
        elif i in sp.antihol:
            cap = (cap[0], cap[1] - 1)
    real = a.real and sp.conj[i] == i
    return a._like(terms, a.valid_weight - sp.weights[i], cap, real)


def _parts(a: MultiSeries):
    """Weight-homogeneous parts as ``{weight: graded bucket list}``."""
    parts: dict = {}
    for bucket in a.graded():
        parts.setdefault(bucket[0], []).append(bucket)
    return parts


def _bucketize(space, terms: dict, weight: int):
    buckets = {}
    for k, c in terms.items():
        _, x, y = space.grade(k)
        slot = buckets.get((x, y))
        if slot is None:
            buckets[(x, y)] = slot = ([], [])
        slot[0].append(k)
        slot[1].append(c)
    return [(weight, x, y, ks, cs) for (x, y), (ks, cs) in sorted(buckets.items())]


def _graded_recurrence(a: MultiSeries, coef, c0):
    """Solve ``k f_k = sum_{j=1..k} coef(j, k) a_j f_{k-j}`` with ``f_0 = c0``.

    ``a_j`` is the weight-``j`` part of ``a``; ``coef`` returns field scalars.
    Covers unit powers and exponentials via the weighted Euler operator.
    """
    f = a.field
    space = a.space
    N = a.valid_weight
    parts = _parts(a)
    nz = f.nonzero
    fparts = {0: [(0, 0, 0, [0], [c0])]} if nz(c0) else {0: []}
    out = {0: c0} if nz(c0) else {}
    with f.context():
        for k in range(1, N + 1):
            acc: dict = {}
            for j in range(1, k + 1):
                aj = parts.get(j)
                fk = fparts.get(k - j)
                if not aj or not fk:
                    continue
                s = coef(j, k)
                if not nz(s):
                    continue
                tmp: dict = {}
                _product_into(tmp, aj, fk, k, a.cap)
                for key, v in tmp.items():
                    v = v * s
                    old = acc.get(key)
                    acc[key] = v if old is None else old + v
            inv_k = f.coerce(Fraction(1, k))
            layer = {}
            for key, v in acc.items():
                v = v * inv_k
                if nz(v):
                    layer[key] = v
            out.update(layer)
            fparts[k] = _bucketize(space, layer, k)
    return out


def unit_power(a: MultiSeries, r) -> MultiSeries:
    """``a**r`` for a series with constant term 1 and rational exponent ``r``."""
    r = Fraction(r)
    f = a.field
    c0 = a.constant_term()
    if not f.negligible(c0 - f.one):
        raise NotAUnit(f"unit_power needs constant term 1, got {f.to_str(c0)}")
    rj = {}

    def coef(j, k):
        key = (j, k)
        if key not in rj:
            rj[key] = f.coerce(r * j - (k - j))
        return rj[key]

    body = truncate(a)
    body = body._like({k: c for k, c in body.terms.items() if k != 0}, body.valid_weight, body.cap, body.real)
    terms = _graded_recurrence(body, coef, f.one)
    return a._like(terms, a.valid_weight, a.cap, a.real)


def exp_series(a: MultiSeries) -> MultiSeries:
    """``exp(a)``; exact only when the constant term vanishes."""
    f = a.field
    c0 = a.constant_term()
    lead = f.exp(c0)
    body = a._like({k: c for k, c in a.terms.items() if k != 0}, a.valid_weight, a.cap, a.real)
    cache = {}

    def coef(j, k):
        if j not in cache:
            cache[j] = f.coerce(j)
        return cache[j]

    terms = _graded_recurrence(body, coef, f.one)
    out = a._like(terms, a.valid_weight, a.cap, a.real)
    if lead != f.one:
        out = scale(out, lead)
        out.real = a.real
    return out


def inverse(b: MultiSeries) -> MultiSeries:
    f = b.field
    c0 = b.constant_term()
    if f.negligible(c0):
        raise NotAUnit("series with zero constant term is not a unit")
    with f.context():
        inv0 = f.one / c0
    normed = scale(b, inv0)
    out = scale(unit_power(normed, -1), inv0)
    out.real = b.real
    return out


def unit_divide(a: MultiSeries, b: MultiSeries) -> MultiSeries:
    """``a / b`` for a unit ``b``."""
    _check_pair(a, b)
    return mul(a, inverse(b))


def compose(a: MultiSeries, images, *, polynomial: bool = False, weight: int | None = None,
            cap=None) -> MultiSeries:
    """Substitute ``images[i]`` for variable ``i`` of ``a``.

    With ``polynomial=False`` the images must not lower weights (each image has
    valuation >= the variable's weight) so that ``a``'s truncation carries over.
    With ``polynomial=True`` the stored terms of ``a`` are treated as an exact
    polynomial and validity comes from the images alone.
    """
    images = list(images)
    sp = a.space
    if len(images) != sp.nvars:
        raise SeriesError("compose needs one image per variable")
    target = images[0]
    f = a.field
    if not polynomial:
        for i, img in enumerate(images):
            if img.valuation() < sp.weights[i]:
                raise SeriesError("weight-lowering substitution of a truncated series; pass polynomial=True")
    if weight is not None:
        images = [truncate(img, weight, cap) for img in images]
    elif cap is not None:
        images = [truncate(img, None, cap) for img in images]
    powers = [{0: MultiSeries.constant(target.space, 1, img.valid_weight, f, img.cap)} for img in images]

    def power(i, e):
        cache = powers[i]
        if e not in cache:
            cache[e] = mul(power(i, e - 1), images[i])
        return cache[e]

    total = None
    for exps, c in a.items():
        term = None
        for i, e in enumerate(exps):
            if e:
                pe = power(i, e)
                term = pe if term is None else mul(term, pe)
        if term is None:
            term = MultiSeries.constant(target.space, 1, min(img.valid_weight for img in images), f,
                                        images[0].cap)
        term = scale(term, c)
        total = term if total is None else add(total, term)
    if total is None:
        total = MultiSeries.zero(target.space, min(img.valid_weight for img in images), f,
                                 images[0].cap)
    if not polynomial:
        total = truncate(total, a.valid_weight)
    if weight is not None:
        total = truncate(total, weight)
    total.real = False
    return total


# ---------------------------------------------------------------------------
# curve restriction


@dataclass(frozen=True)
class UnivariateSeries:
    """``sum coeffs[k] t^k``, known through ``t**order``."""

    coeffs: tuple
    order: int
    field: object = EXACT

    def coefficient(self, k: int):
        if k > self.order:
            raise SeriesError(f"t^{k} is beyond the certified order {self.order}")
        return self.coeffs[k] if k < len(self.coeffs) else self.field.zero

    def valuation(self, scale=1) -> int | None:
        """Index of the first nonzero coefficient, or ``None`` when all vanish."""
        for k in range(self.order + 1):
            c = self.coefficient(k)
            if not self.field.negligible(c, scale):
                return k
        return None

    def vanishing_order(self, scale=1) -> tuple[int, bool]:
        """``(k, exact)``: vanishes to order k; ``exact`` False means only a lower bound."""
        v = self.valuation(scale)
        if v is None:
            return self.order + 1, False
        return v, True

    def __mul__(self, other: "UnivariateSeries") -> "UnivariateSeries":
        order = min(self.order, other.order)
        f = self.field
        out = [f.zero] * (order + 1)
        with f.context():
            for i in range(order + 1):
                for j in range(order + 1 - i):
                    out[i + j] = out[i + j] + self.coefficient(i) * other.coefficient(j)
        return UnivariateSeries(tuple(out), order, f)

    def equals(self, other: "UnivariateSeries") -> bool:
        order = min(self.order, other.order)
        return all(self.field.negligible(self.coefficient(k) - other.coefficient(k))
                   for k in range(order + 1))


def curve_directions(space: Space) -> list[str]:
    if space.n is not None:
        m = space.n - 1
        return ["u", "v"] + [f"x{j}" for j in range(1, m + 1)] + [f"y{j}" for j in range(1, m + 1)]
    if space is SURFACE:
        return ["x", "y"]
    return list(space.names)


def _direction_map(space: Space, direction: str, field):
    """Return ``{var index: multiplier}`` describing the line and its weight per power of t."""
    one = field.coerce(1)
    i_ = field.from_parts(0, 1)
    if space.n is not None:
        m = space.n - 1
        if direction == "u":
            return {2 * m: one, 2 * m + 1: one}, 2
        if direction == "v":
            return {2 * m: i_, 2 * m + 1: -i_}, 2
        if direction[0] in "xy" and direction[1:].isdigit():
            j = int(direction[1:]) - 1
            if not 0 <= j < m:
                raise SeriesError(f"no coordinate {direction} in C^{space.n}")
            mult = one if direction[0] == "x" else i_
            return {j: mult, m + j: mult.conjugate()}, 1
    elif space is SURFACE:
        if direction == "x":
            return {0: one, 1: one}, 1
        if direction == "y":
            return {0: i_, 1: -i_}, 1
    else:
        idx = space.index(direction)
        return {idx: one}, space.weights[idx]
    raise SeriesError(f"unknown curve direction {direction!r}")


def restrict_to_curve(a: MultiSeries, direction: str = "u") -> UnivariateSeries:
    """Substitute a real coordinate line through the origin (default the u-axis)."""
    dmap, wt = _direction_map(a.space, direction, a.field)
    order = a.valid_weight // wt
    if a.cap is not None and wt == 1:
        order = min(order, a.cap[0], a.cap[1])
    if order < 0:
        return UnivariateSeries((), -1, a.field)
    f = a.field
    out = [f.zero] * (order + 1)
    others = [i for i in range(a.space.nvars) if i not in dmap]
    with f.context():
        for k, c in a.terms.items():
            exps = a.space.decode(k)
            if any(exps[i] for i in others):
                continue
            deg = sum(exps[i] for i in dmap)
            if deg > order:
                continue
            t = c
            for i, mult in dmap.items():
                if exps[i]:
                    t = t * mult ** exps[i]
            out[deg] = out[deg] + t
    return UnivariateSeries(tuple(out), order, f)


# ---------------------------------------------------------------------------
# JSON


def series_to_json(a: MultiSeries) -> dict:
    f = a.field
    out: dict = {}
    if a.space.n is not None:
        out["n"] = a.space.n
        out["valid_weight"] = a.valid_weight
        terms = []
        for mono, c in a.monomials():
            t = {"alpha": list(mono.alpha), "beta": list(mono.beta), "p": mono.p, "q": mono.q}
            t.update(f.to_json(c))
            terms.append(t)
    else:
        out["space"] = a.space.label
        out["valid_weight"] = a.valid_weight
        terms = []
        for exps, c in a.items():
            t = {"exps": list(exps)}
            t.update(f.to_json(c))
            terms.append(t)
    out["terms"] = terms
    if a.cap is not None:
        out["cap"] = list(a.cap)
    if not f.exact:
        out["precision"] = f.precision
    return out


def series_from_json(d: dict, field=None) -> MultiSeries:
    if field is None:
        field = get_field("float", int(d["precision"])) if "precision" in d else EXACT
    reader = field if "precision" not in d else get_field("float", int(d["precision"]))
    valid = int(d["valid_weight"])
    cap = tuple(d["cap"]) if d.get("cap") is not None else None
    if "n" in d:
        n = int(d["n"])
        space = cr_space(n)
        terms = {}
        for t in d.get("terms", []):
            alpha, beta = list(t["alpha"]), list(t["beta"])
            if len(alpha) != n - 1 or len(beta) != n - 1:
                raise SeriesError(f"multi-index length must be n-1={n - 1}")
            key = space.encode(alpha + beta + [int(t.get("p", 0)), int(t.get("q", 0))])
            with field.context():
                terms[key] = terms.get(key, field.zero) + field.coerce(_to_gauss_or_float(reader, t, field))
    else:
        label = d.get("space", "surface")
        space = {"surface": SURFACE, "plane": PLANE}.get(label)
        if space is None:
            raise SeriesError(f"unknown space {label!r}")
        terms = {}
        for t in d.get("terms", []):
            key = space.encode(t["exps"])
            with field.context():
                terms[key] = terms.get(key, field.zero) + field.coerce(_to_gauss_or_float(reader, t, field))
    s = MultiSeries(space, terms, valid, field, cap)
    s.real = s.check_real()
    return s


def _to_gauss_or_float(reader, t, field):
    c = reader.from_json(t)
    if field.exact and not reader.exact:
        raise FieldMismatch("float series cannot be read into the exact backend")
    return c


def convert(a: MultiSeries, field) -> MultiSeries:
    """Re-express a series over another coefficient field (exact -> float only)."""
    if a.field == field:
        return a
    if field.exact:
        raise FieldMismatch("cannot convert float coefficients to exact ones")
    terms = {k: field.coerce(c) for k, c in a.terms.items()}
    return MultiSeries(a.space, terms, a.valid_weight, field, a.cap, a.real, _trusted=True)
