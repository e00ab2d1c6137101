import itertools
import random
from fractions import Fraction

import pytest
from gmpy2 import mpq
from hypothesis import given, settings, strategies as st

from obstruct.series import (
    EXACT, PLANE, SURFACE, FieldMismatch, GaussQ, MultiSeries, NotAUnit, SeriesError,
    compose, convert, cr_space, derive, exp_series, get_field, inverse, mul, restrict_to_curve,
    scale, series_from_json, series_to_json, truncate, unit_divide, unit_power,
)

SP2 = cr_space(2)


def ser(terms, weight, field=EXACT, space=SP2):
    return MultiSeries(space, terms, weight, field)


def test_gaussq_arithmetic():
    a = GaussQ(mpq(1, 2), mpq(1, 3))
    b = GaussQ.of(Fraction(-2, 5))
    assert a * a.reciprocal() == 1
    assert (a + b) - b == a
    assert a.conjugate() == GaussQ(mpq(1, 2), mpq(-1, 3))
    assert a ** 3 == a * a * a
    assert a ** -2 * a ** 2 == 1
    assert GaussQ(0, 1) * GaussQ(0, 1) == -1
    with pytest.raises(ZeroDivisionError):
        GaussQ.of(0).reciprocal()


def test_space_encoding():
    key = SP2.encode((1, 2, 3, 4))
    assert SP2.decode(key) == (1, 2, 3, 4)
    assert SP2.grade(key) == (1 + 2 + 6 + 8, 1, 2)
    assert SP2.decode(SP2.conj_key(key)) == (2, 1, 4, 3)
    with pytest.raises(SeriesError):
        SP2.encode((256, 0, 0, 0))
    with pytest.raises(SeriesError):
        cr_space(1)


def test_truncation_drops_high_weight():
    s = ser({(0, 0, 1, 0): 1, (0, 0, 3, 0): 1}, 4)
    assert len(s) == 1
    assert s.coeff((0, 0, 1, 0)) == 1


def test_mul_validity_uses_valuation():
    # a = w + O(6), b = z zb + O(6): product known to weight min(6+2, 6+2)
    a = ser({(0, 0, 1, 0): 1}, 6)
    b = ser({(1, 1, 0, 0): 1}, 6)
    assert mul(a, b).valid_weight == 8
    one = ser({(0, 0, 0, 0): 1}, 6)
    assert mul(one, b).valid_weight == 6


def test_field_mismatch():
    a = ser({(0, 0, 1, 0): 1}, 4)
    b = ser({(0, 0, 1, 0): 1}, 4, get_field("float", 64))
    with pytest.raises(FieldMismatch):
        mul(a, b)
    with pytest.raises(FieldMismatch):
        a + b


def test_derivative_lowers_validity():
    s = ser({(2, 1, 1, 0): 3}, 8)
    d = derive(s, "z1")
    assert d.coeff((1, 1, 1, 0)) == 6
    assert d.valid_weight == 7
    assert derive(s, "w").valid_weight == 6


def test_unit_power_rules():
    u = ser({(0, 0, 0, 0): 1, (1, 1, 0, 0): 2, (0, 0, 1, 1): Fraction(1, 3)}, 8)
    sq = unit_power(u, Fraction(1, 2))
    assert mul(sq, sq).equals(u)
    inv = unit_power(u, -1)
    assert mul(inv, u).equals(ser({(0, 0, 0, 0): 1}, 8))
    assert unit_power(u, 3).equals(mul(u, mul(u, u)))
    with pytest.raises(NotAUnit):
        unit_power(ser({(1, 0, 0, 0): 1}, 4), Fraction(1, 3))
    with pytest.raises(NotAUnit):
        unit_power(ser({(0, 0, 0, 0): 4}, 4), Fraction(1, 3))


def test_inverse_and_divide():
    b = ser({(0, 0, 0, 0): 2, (1, 0, 0, 0): 1, (0, 1, 0, 0): 1}, 6)
    a = ser({(1, 1, 0, 0): 1}, 6)
    q = unit_divide(a, b)
    assert mul(q, b).equals(a)
    assert mul(inverse(b), b).equals(ser({(0, 0, 0, 0): 1}, 6))


def test_exp_series():
    a = ser({(1, 1, 0, 0): 1, (0, 0, 1, 1): Fraction(-1, 2)}, 8)
    assert mul(exp_series(a), exp_series(-a)).equals(ser({(0, 0, 0, 0): 1}, 8))
    with pytest.raises(SeriesError):
        exp_series(ser({(0, 0, 0, 0): 1}, 4))


def test_compose_identity_and_shift():
    sp = SP2
    s = ser({(2, 0, 0, 0): 1, (1, 1, 1, 0): 5, (0, 0, 0, 2): -1}, 8)
    ids = [MultiSeries.variable(sp, i, 8) for i in range(4)]
    assert compose(s, ids).equals(s)
    # polynomial translation z -> z + 1 of z^2
    p = ser({(2, 0, 0, 0): 1}, 8)
    imgs = list(ids)
    imgs[0] = ids[0] + 1
    moved = compose(p, imgs, polynomial=True)
    assert moved.coeff((0, 0, 0, 0)) == 1 and moved.coeff((1, 0, 0, 0)) == 2
    with pytest.raises(SeriesError):
        compose(s, imgs)


def test_restrict_to_curve():
    s = ser({(0, 0, 1, 0): 1, (0, 0, 0, 1): 1, (0, 0, 1, 1): 2, (1, 1, 0, 0): 1}, 6)
    line = restrict_to_curve(s, "u")
    assert line.order == 3
    assert [line.coefficient(k) for k in range(3)] == [0, 2, 2]
    x = restrict_to_curve(s, "x1")
    assert x.coefficient(2) == 1
    v = restrict_to_curve(s, "v")  # w = i t: w + wb = 0, |w|^2 = t^2
    assert v.coefficient(1) == 0 and v.coefficient(2) == 2
    with pytest.raises(SeriesError):
        line.coefficient(4)


def test_reality():
    s = ser({(1, 0, 0, 0): GaussQ(1, 2), (0, 1, 0, 0): GaussQ(1, -2)}, 4)
    assert s.check_real()
    assert not ser({(1, 0, 0, 0): 1}, 4).check_real()
    assert s.conj().equals(s)


def test_json_round_trip_exact_and_float():
    s = ser({(1, 1, 0, 0): Fraction(-7, 3), (0, 0, 1, 1): GaussQ(0, 1), (0, 0, 2, 0): 5}, 6)
    assert series_from_json(series_to_json(s)).equals(s)
    fl = convert(s, get_field("float", 200))
    back = series_from_json(series_to_json(fl))
    assert back.field.precision == 200
    assert back.equals(fl)
    with pytest.raises(FieldMismatch):
        series_from_json(series_to_json(fl), EXACT)
    p = MultiSeries(PLANE, {(1, 2): 3}, 5)
    assert series_from_json(series_to_json(p)).equals(p)


def test_float_keeps_precision():
    f = get_field("float", 256)
    third = ser({(0, 0, 0, 0): Fraction(1, 3), (1, 1, 0, 0): 1}, 6, f)
    inv = inverse(third)
    with f.context():
        err = abs(inv.coeff((0, 0, 0, 0)) - 3)
    assert err < 1e-70
    assert not scale(third, 0).terms


def test_surface_space():
    z = MultiSeries.variable(SURFACE, "z", 6)
    zb = MultiSeries.variable(SURFACE, "zb", 6)
    r = mul(z, zb)
    assert restrict_to_curve(r, "x").coefficient(2) == 1
    assert restrict_to_curve(r, "y").coefficient(2) == 1
    assert truncate(r, 1).is_zero()


coeffs = st.fractions(min_value=-3, max_value=3, max_denominator=4)
monos = st.tuples(*[st.integers(0, 2)] * 4)


def random_series(draw_terms, weight):
    return ser(dict(draw_terms), weight)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(monos, coeffs), max_size=5), st.lists(st.tuples(monos, coeffs), max_size=5),
       st.lists(st.tuples(monos, coeffs), max_size=5))
def test_ring_laws(a, b, c):
    a, b, c = (random_series(t, 7) for t in (a, b, c))
    assert mul(mul(a, b), c).equals(mul(a, mul(b, c)), 7)
    assert mul(a, b + c).equals(mul(a, b) + mul(a, c), 7)
    assert mul(a, b).equals(mul(b, a))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(monos, coeffs), max_size=4), st.lists(st.tuples(monos, coeffs), max_size=4))
def test_leibniz(a, b):
    a, b = random_series(a, 7), random_series(b, 7)
    for v in ("z1", "zb1", "w", "wb"):
        lhs = derive(mul(a, b), v)
        rhs = mul(derive(a, v), b) + mul(a, derive(b, v))
        assert lhs.equals(rhs, min(lhs.valid_weight, rhs.valid_weight))


def _dense_product(a, b, weight):
    out = {}
    for ea, ca in a.items():
        for eb, cb in b.items():
            e = tuple(x + y for x, y in zip(ea, eb))
            if e[0] + e[1] + 2 * (e[2] + e[3]) <= weight:
                out[e] = out.get(e, 0) + ca * cb
    return {e: c for e, c in out.items() if c}


def test_mul_against_dense_convolution():
    rng = random.Random(7)
    for _ in range(5):
        polys = []
        for _ in range(2):
            terms = {}
            for a, b, p, q in itertools.product(range(5), range(5), range(3), range(3)):
                if a + b + 2 * (p + q) <= 4 and rng.random() < 0.5:
                    terms[(a, b, p, q)] = Fraction(rng.randint(-9, 9), rng.randint(1, 9))
            polys.append(ser(terms, 8))
        got = mul(*polys)
        want = _dense_product(*polys, 8)
        assert {e: c for e, c in got.items()} == {e: GaussQ.of(c) for e, c in want.items()}


def test_derivative_matches_finite_difference():
    rng = random.Random(3)
    terms = {(a, b, p, q): Fraction(rng.randint(-5, 5), rng.randint(1, 5))
             for a, b, p, q in itertools.product(range(4), range(4), range(2), range(2))
             if a + b + 2 * (p + q) <= 6}
    s = ser(terms, 6)
    pt = [0.3 + 0.1j, 0.2 - 0.4j, -0.1 + 0.2j, 0.25j]
    for i, var in enumerate(("z1", "zb1", "w", "wb")):
        errs = []
        for h in (1e-2, 5e-3):
            up, dn = list(pt), list(pt)
            up[i] += h
            dn[i] -= h
            fd = (s.evaluate(up) - s.evaluate(dn)) / (2 * h)
            errs.append(abs(fd - derive(s, var).evaluate(pt)) if derive(s, var).terms else abs(fd))
        # the series is an exact polynomial here, so the centred difference error is O(h^2)
        assert errs[0] < 1e-2
        assert errs[1] < errs[0] / 3 or errs[1] < 1e-12


def test_unit_power_round_trip_random():
    rng = random.Random(5)
    for _ in range(5):
        terms = {(0, 0, 0, 0): 1}
        for e in itertools.product(range(3), range(3), range(2), range(2)):
            if 0 < e[0] + e[1] + 2 * (e[2] + e[3]) <= 6 and rng.random() < 0.4:
                terms[e] = Fraction(rng.randint(-4, 4), rng.randint(1, 4))
        a = ser(terms, 7)
        assert unit_power(unit_power(a, Fraction(1, 3)), 3).equals(a)


def test_restriction_commutes_with_multiplication():
    rng = random.Random(9)
    for direction in ("u", "v", "x1", "y1"):
        a, b = (ser({e: Fraction(rng.randint(-4, 4), rng.randint(1, 3))
                     for e in itertools.product(range(3), range(3), range(2), range(2))
                     if rng.random() < 0.5}, 8) for _ in range(2))
        lhs = restrict_to_curve(mul(a, b), direction)
        rhs = restrict_to_curve(a, direction) * restrict_to_curve(b, direction)
        assert lhs.equals(rhs)
