import math

import numpy as np
import pytest

from obstruct.circle_bundle import MetricGerm, obstruction_density
from obstruct.series import PLANE, MultiSeries, get_field
from obstruct.torus import (
    TorusGrid, cos_family_density, family_grid, grid_curvature, grid_density, grid_laplacian,
    refine_and_extrapolate,
)


def test_laplacian_of_fourier_mode():
    n = 64
    g = TorusGrid.from_function(lambda X, Y: np.sin(2 * np.pi * X) * np.cos(4 * np.pi * Y), n, n)
    lap = grid_laplacian(g.values, g.hx, g.hy)
    # symbol of the 5-point stencil
    sx = (2 * np.sin(np.pi / n) / g.hx) ** 2
    sy = (2 * np.sin(2 * np.pi / n) / g.hy) ** 2
    assert np.allclose(lap, -(sx + sy) * g.values, atol=1e-9)


def test_flat_metric_has_zero_density():
    g, _ = family_grid("zero", 0, 16)
    rep = grid_density(g)
    assert np.all(rep.density == 0)
    assert rep.integral == 0 and not rep.zero_set
    assert np.all(grid_curvature(g) == 0)


def test_constant_phi_has_zero_density():
    g = TorusGrid(np.full((16, 16), 0.3))
    assert np.max(np.abs(grid_density(g).density)) < 1e-12


@pytest.mark.parametrize("seed", range(4))
def test_discrete_integral_vanishes_for_random_fields(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(scale=0.2, size=(24, 40))
    g = TorusGrid(v, 1.0, 2.5)
    rep = grid_density(g)
    scale = float(np.sum(np.abs(rep.density) * 2 * np.exp(2 * v) * g.hx * g.hy))
    assert abs(rep.integral) <= 1e-12 * scale
    # the density of a non-flat metric changes sign
    assert rep.min < 0 < rep.max
    assert rep.dichotomy_ok


def test_gauss_bonnet_on_grid():
    g, _ = family_grid("coscos", 0.2, 32, 1.0, 3.0)
    k = grid_curvature(g)
    area = 2 * np.exp(2 * g.values) * g.hx * g.hy
    assert abs(math.fsum((k * area).ravel())) < 1e-12


def test_cos_family_against_oracle():
    g, oracle = family_grid("cos", 0.1, 128)
    X, Y = g.coords()
    err = np.max(np.abs(grid_density(g).density - oracle(X, Y)))
    assert err < 5e-3 * np.max(np.abs(oracle(X, Y)))


def test_cos_family_oracle_matches_series_density():
    # D at x = 0 from the series calculus for phi = eps cos(2 pi x), Taylor expanded to degree 12
    eps = 0.1
    k = 2 * math.pi
    terms = {(2 * j, 0): eps * (-1) ** j * k ** (2 * j) / math.factorial(2 * j) for j in range(1, 7)}
    f = get_field("float", 128)
    with f.context():
        phi = MultiSeries(PLANE, {key: f.coerce(float(c)) for key, c in terms.items()}, 12, f)
        m = MetricGerm(phi)
    d0 = complex(obstruction_density(m).constant_term()).real
    # the dropped constant phi(0) = eps scales K and Delta_g by e^(-2 eps), so D by e^(-6 eps)
    assert cos_family_density(np.array(0.0), eps) == pytest.approx(d0 * math.exp(-6 * eps), rel=1e-9)


def test_polynomial_density_matches_series_at_interior_point():
    # the stencil is local: a non periodic sample is fine away from the seam
    n, half = 200, 0.5
    h = 2 * half / n
    x = -half + h * np.arange(n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    phi = X ** 6 / 90 + X ** 2 * Y / 3 + X * Y / 7 + Y ** 4 / 5
    rep = grid_density(TorusGrid(phi, 2 * half, 2 * half))
    c = n // 2
    assert abs(x[c]) < 1e-12
    m = MetricGerm(MultiSeries(PLANE, {(6, 0): 1 / 90, (2, 1): 1 / 3, (1, 1): 1 / 7, (0, 4): 1 / 5}, 10,
                               get_field("float", 64)))
    exact = complex(obstruction_density(m).constant_term()).real
    assert abs(exact) > 0.1
    assert rep.density[c, c] == pytest.approx(exact, rel=2e-3)


def test_zero_circles_of_cos_family():
    g, _ = family_grid("cos", 0.1, 256)
    rep = grid_density(g)
    xs = sorted(rep.zero_lines["x"])
    assert len(xs) == 4
    assert not rep.zero_lines["y"]
    # symmetric under x -> 1 - x
    assert xs[0] + xs[-1] == pytest.approx(1, abs=1e-2)


def test_refinement_orders():
    g, oracle = family_grid("cos", 0.1, 32)
    out = refine_and_extrapolate(g, 4, oracle)
    assert out["reference"] == "exact"
    assert all(abs(o - 2) < 0.3 for o in out["orders"])
    self_ref = refine_and_extrapolate(g, 3)
    assert self_ref["reference"] == "self"
    assert all(abs(o - 2) < 0.3 for o in self_ref["orders"])


def test_spectral_refinement_without_source():
    g, oracle = family_grid("cos", 0.1, 32)
    bare = TorusGrid(g.values.copy())
    fine = bare.refined()
    X, Y = fine.coords()
    assert np.allclose(fine.values, 0.1 * np.cos(2 * np.pi * X), atol=1e-13)


def test_grid_validation():
    with pytest.raises(ValueError):
        TorusGrid(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        TorusGrid(np.full((8, 8), np.nan))
    with pytest.raises(ValueError):
        TorusGrid(np.zeros((8, 8)), -1.0)
    with pytest.raises(ValueError):
        refine_and_extrapolate(TorusGrid(np.zeros((8, 8))), 1)
    with pytest.raises(ValueError):
        family_grid("nope", 0.1, 16)


def test_curvature_of_cos_family_converges():
    eps, errs = 0.1, []
    for n in (32, 64, 128):
        g, _ = family_grid("cos", eps, n)
        X, _ = g.coords()
        phi = eps * np.cos(2 * np.pi * X)
        exact = -0.5 * np.exp(-2 * phi) * (-(2 * np.pi) ** 2 * phi)
        errs.append(np.max(np.abs(grid_curvature(g) - exact)))
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert all(abs(o - 2) < 0.1 for o in orders)


def test_integral_stays_at_rounding_level_under_refinement():
    out = refine_and_extrapolate(family_grid("cos", 0.1, 32)[0], 4)
    for row in out["levels"]:
        assert abs(row["integral"]) < 1e-10 * max(1.0, row["max_abs_density"])
