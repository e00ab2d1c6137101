"""Obstruction density of circle bundles over flat tori on periodic grids.

With ``g = 2 e^(2 phi)|dz|^2`` and the flat Laplacian ``Delta`` the Gauss
curvature is ``K = -(1/2) e^(-2 phi) Delta phi`` and ``Delta_g = (1/2) e^(-2 phi) Delta``.
The density ``D = Delta_g^2 K + Delta_g K^2`` integrates to zero against
``dV = 2 e^(2 phi) dx dy`` because ``D dV`` is a flat Laplacian.  The periodic
5-point stencil keeps that identity exactly (summation by parts).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TorusGrid", "DensityReport", "grid_laplacian", "grid_curvature", "grid_density",
    "refine_and_extrapolate", "cos_family", "cos_family_density", "family_grid",
]


@dataclass
class TorusGrid:
    """Samples ``values[i, j] = phi(i lx / nx, j ly / ny)`` of a periodic ``phi``.

    ``source`` (optional) evaluates ``phi`` on coordinate arrays and is used
    when refining; otherwise refinement interpolates spectrally.
    """

    values: np.ndarray
    lx: float = 1.0
    ly: float = 1.0
    source: object = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or min(v.shape) < 8:
            raise ValueError("torus grids are 2-D with at least 8 points per axis")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite")
        if self.lx <= 0 or self.ly <= 0:
            raise ValueError("periods must be positive")
        self.values = v

    @property
    def nx(self) -> int:
        return self.values.shape[0]

    @property
    def ny(self) -> int:
        return self.values.shape[1]

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    def coords(self):
        x = np.arange(self.nx) * self.hx
        y = np.arange(self.ny) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    @classmethod
    def from_function(cls, fn, nx: int, ny: int | None = None, lx=1.0, ly=1.0) -> "TorusGrid":
        ny = nx if ny is None else ny
        x = np.arange(nx) * (lx / nx)
        y = np.arange(ny) * (ly / ny)
        X, Y = np.meshgrid(x, y, indexing="ij")
        return cls(np.broadcast_to(fn(X, Y), (nx, ny)).copy(), lx, ly, fn)

    def refined(self) -> "TorusGrid":
        """The same ``phi`` on a grid with twice as many points per axis."""
        if self.source is not None:
            return TorusGrid.from_function(self.source, 2 * self.nx, 2 * self.ny, self.lx, self.ly)
        return TorusGrid(_fourier_upsample(self.values), self.lx, self.ly)


def _fourier_upsample(v: np.ndarray) -> np.ndarray:
    nx, ny = v.shape
    spec = np.fft.fftshift(np.fft.fft2(v))
    big = np.zeros((2 * nx, 2 * ny), dtype=complex)
    ox, oy = nx // 2, ny // 2
    big[ox:ox + nx, oy:oy + ny] = spec
    return np.real(np.fft.ifft2(np.fft.ifftshift(big))) * 4


def grid_laplacian(f: np.ndarray, hx: float, hy: float) -> np.ndarray:
    """Periodic 5-point Laplacian."""
    return ((np.roll(f, 1, 0) - 2 * f + np.roll(f, -1, 0)) / hx ** 2
            + (np.roll(f, 1, 1) - 2 * f + np.roll(f, -1, 1)) / hy ** 2)


def grid_curvature(g: TorusGrid) -> np.ndarray:
    """``K = -(1/2) e^(-2 phi) Delta_h phi``."""
    return -0.5 * np.exp(-2 * g.values) * grid_laplacian(g.values, g.hx, g.hy)


def _density(g: TorusGrid):
    lap = lambda f: grid_laplacian(f, g.hx, g.hy)
    e = 0.5 * np.exp(-2 * g.values)
    k = -e * lap(g.values)
    lk = e * lap(k)
    return e * lap(lk) + e * lap(k * k)


@dataclass
class DensityReport:
    density: np.ndarray
    integral: float
    min: float
    max: float
    zero_set: list  # (i, j, axis): D changes sign between (i, j) and its neighbour along axis
    zero_lines: dict = field(default_factory=dict)  # {"x": [...], "y": [...]} full sign-change circles
    tol: float = 0.0
    dichotomy_ok: bool = True
    h: float = 0.0

    def to_json(self, cells: int = 50) -> dict:
        return {
            "integral": self.integral, "min": self.min, "max": self.max,
            "tol": self.tol, "dichotomy_ok": self.dichotomy_ok,
            "zero_set_size": len(self.zero_set),
            "zero_set_sample": [list(e) for e in self.zero_set[:cells]],
            "zero_lines": self.zero_lines,
        }


def _zero_set(d: np.ndarray, g: TorusGrid):
    edges = []
    lines = {"x": [], "y": []}
    for axis, name in ((0, "x"), (1, "y")):
        nb = np.roll(d, -1, axis)
        change = (d * nb < 0) | ((d == 0) & (nb != 0))
        idx = np.argwhere(change)
        edges.extend((int(i), int(j), name) for i, j in idx)
        # a whole circle {x = const} (or {y = const}) where every cell changes sign
        full = np.all(change, axis=1 - axis)
        h = g.hx if axis == 0 else g.hy
        for k in np.flatnonzero(full):
            a = d.take(k, axis)
            b = nb.take(k, axis)
            frac = np.where(a != b, a / (a - b), 0.0)
            lines[name].append(float((k + np.mean(frac)) * h))
    edges.sort()
    return edges, lines


def grid_density(g: TorusGrid) -> DensityReport:
    """``D = Delta_g^2 K + Delta_g K^2``, its integral against ``2 e^(2 phi) dx dy`` and zero set."""
    d = _density(g)
    w = 2 * np.exp(2 * g.values) * g.hx * g.hy
    integral = math.fsum((d * w).ravel())
    h = max(g.hx, g.hy)
    tol = 10 * h ** 2 * float(np.max(np.abs(g.values)))
    dmax, dmin = float(d.max()), float(d.min())
    # discrete sign dichotomy: sum D w = 0 forces D >= -tol W / w_min when D <= tol
    wsum, wmin = float(w.sum()), float(w.min())
    ok = not (dmax <= tol and dmin < -tol * wsum / wmin - 1e-9 * max(1.0, abs(dmin)))
    edges, lines = _zero_set(d, g)
    return DensityReport(d, integral, dmin, dmax, edges, lines, tol, ok, h)


# ---------------------------------------------------------------------------
# refinement


def refine_and_extrapolate(g: TorusGrid, levels: int, oracle=None) -> dict:
    """Density on ``levels`` grids, doubling ``nx, ny`` each time.

    Pointwise errors are measured on the coarse grid's points: against
    ``oracle(X, Y)`` (exact density) when given, otherwise between successive
    levels.  ``orders`` are the observed convergence orders.
    """
    if levels < 2:
        raise ValueError("refinement needs levels >= 2")
    rows, coarse = [], []
    grid = g
    X, Y = g.coords()
    exact = None if oracle is None else np.broadcast_to(oracle(X, Y), X.shape)
    for lev in range(levels):
        rep = grid_density(grid)
        step = 2 ** lev
        sample = rep.density[::step, ::step]
        coarse.append(sample)
        row = {"nx": grid.nx, "ny": grid.ny, "integral": rep.integral,
               "max_abs_density": float(np.max(np.abs(rep.density)))}
        if exact is not None:
            row["error"] = float(np.max(np.abs(sample - exact)))
        rows.append(row)
        if lev + 1 < levels:
            grid = grid.refined()
    if exact is not None:
        errs = [r["error"] for r in rows]
    else:
        errs = [float(np.max(np.abs(coarse[k + 1] - coarse[k]))) for k in range(levels - 1)]
        for r, e in zip(rows, errs):
            r["difference_to_next"] = e
    orders = [math.log2(a / b) if a > 0 and b > 0 else None for a, b in zip(errs, errs[1:])]
    return {"levels": rows, "orders": orders, "reference": "exact" if exact is not None else "self"}


# ---------------------------------------------------------------------------
# built-in families


def cos_family(eps: float, lx: float = 1.0):
    """``phi = eps cos(2 pi x / lx)``."""
    k = 2 * math.pi / lx
    return lambda X, Y: eps * np.cos(k * X) + 0 * Y


def _jet_mul(a, b):
    n = len(a)
    return [sum(a[j] * b[k - j] for j in range(k + 1)) for k in range(n)]


def _jet_exp(a):
    out = [np.exp(a[0])]
    for k in range(1, len(a)):
        out.append(sum(j * a[j] * out[k - j] for j in range(1, k + 1)) / k)
    return out


def _jet_d2(a):
    """Second derivative of a Taylor jet ``a_k = f^(k)/k!``."""
    return [a[k + 2] * (k + 1) * (k + 2) for k in range(len(a) - 2)]


def cos_family_density(X, eps: float, lx: float = 1.0) -> np.ndarray:
    """Exact ``D`` for ``phi = eps cos(2 pi x / lx)`` by propagating Taylor jets in ``x``."""
    k = 2 * math.pi / lx
    phi = [eps * k ** j * np.cos(k * X + j * math.pi / 2) / math.factorial(j) for j in range(7)]
    e = [0.5 * c for c in _jet_exp([-2 * c for c in phi])]
    curv = [-c for c in _jet_mul(e[:5], _jet_d2(phi))]
    lk = _jet_mul(e[:3], _jet_d2(curv))
    d = _jet_mul(e[:1], _jet_d2(lk))[0] + _jet_mul(e[:1], _jet_d2(_jet_mul(curv, curv))[:1])[0]
    return d


def family_grid(name: str, eps: float, n: int, lx: float = 1.0, ly: float = 1.0):
    """Grid and exact-density oracle (or ``None``) for a built-in family."""
    if name == "cos":
        return (TorusGrid.from_function(cos_family(eps, lx), n, n, lx, ly),
                lambda X, Y: cos_family_density(X, eps, lx))
    if name == "coscos":
        kx, ky = 2 * math.pi / lx, 2 * math.pi / ly
        fn = lambda X, Y: eps * np.cos(kx * X) * np.cos(ky * Y)
        return TorusGrid.from_function(fn, n, n, lx, ly), None
    if name == "zero":
        return TorusGrid.from_function(lambda X, Y: 0 * X, n, n, lx, ly), lambda X, Y: 0 * X
    raise ValueError(f"unknown family {name!r}")
