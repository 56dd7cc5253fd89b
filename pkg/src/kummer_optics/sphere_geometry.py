"""Discrete S^1 and S^2: charts, metric data, spectral transforms and operators.

S^1 uses the chart ``theta`` on equispaced points with a real Fourier basis.
S^2 uses the chart (colatitude, longitude) on a Gauss-Legendre x equispaced
grid with real spherical harmonics evaluated by direct summation.

Both bases are orthonormal on the unit sphere and indexed by an array of
shape ``(2, ...)`` whose first axis selects the cosine / sine part:

* S^1: ``coeffs[c, k]`` with degree ``k`` (``coeffs[1, 0]`` unused);
* S^2: ``coeffs[c, l, m]`` with degree ``l`` and order ``m <= l``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

S1_RESOLUTION = (8, 8192)
S2_RESOLUTION = (4, 128)


class GridError(ValueError):
    """Unsupported dimension or resolution."""


# ---------------------------------------------------------------------------
# Chart geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricData:
    """Metric of the round sphere in chart coordinates at a set of points.

    ``christoffel[p, k, i, j]`` is Gamma^k_ij. ``frame`` is the upper
    triangular factor E with e = E^T E, so ``E @ v`` gives orthonormal-frame
    components of a chart vector ``v``.
    """

    metric: np.ndarray
    metric_inv: np.ndarray
    det: np.ndarray
    christoffel: np.ndarray
    frame: np.ndarray

    @property
    def frame_inv(self) -> np.ndarray:
        return np.linalg.inv(self.frame)


@dataclass(frozen=True)
class ChartPoints:
    """Points of S^n with chart coordinates, embedding and metric data."""

    n: int
    u: np.ndarray  # (P, n)
    x: np.ndarray  # (P, n+1)
    basis: np.ndarray  # (P, n, n+1), the coordinate vectors x_i
    metric: MetricData

    def __len__(self) -> int:
        return self.u.shape[0]

    @classmethod
    def from_chart(cls, n: int, u) -> "ChartPoints":
        u = np.atleast_2d(np.asarray(u, dtype=float))
        if n == 1:
            u = u.reshape(-1, 1)
            th = u[:, 0]
            c, s = np.cos(th), np.sin(th)
            x = np.stack([c, s], axis=-1)
            basis = np.stack([-s, c], axis=-1)[:, None, :]
            ones = np.ones((len(th), 1, 1))
            metric = MetricData(
                metric=ones,
                metric_inv=ones.copy(),
                det=np.ones(len(th)),
                christoffel=np.zeros((len(th), 1, 1, 1)),
                frame=ones.copy(),
            )
            return cls(1, u, x, basis, metric)
        if n == 2:
            u = u.reshape(-1, 2)
            phi, lam = u[:, 0], u[:, 1]
            sp, cp = np.sin(phi), np.cos(phi)
            sl, cl = np.sin(lam), np.cos(lam)
            if np.any(sp <= 0.0):
                raise GridError("colatitude must lie strictly inside (0, pi)")
            x = np.stack([sp * cl, sp * sl, cp], axis=-1)
            x_phi = np.stack([cp * cl, cp * sl, -sp], axis=-1)
            x_lam = np.stack([-sp * sl, sp * cl, np.zeros_like(sp)], axis=-1)
            P = len(phi)
            e = np.zeros((P, 2, 2))
            e[:, 0, 0] = 1.0
            e[:, 1, 1] = sp**2
            einv = np.zeros((P, 2, 2))
            einv[:, 0, 0] = 1.0
            einv[:, 1, 1] = 1.0 / sp**2
            gam = np.zeros((P, 2, 2, 2))
            gam[:, 0, 1, 1] = -sp * cp
            gam[:, 1, 0, 1] = cp / sp
            gam[:, 1, 1, 0] = cp / sp
            E = np.zeros((P, 2, 2))
            E[:, 0, 0] = 1.0
            E[:, 1, 1] = sp
            metric = MetricData(e, einv, sp**2, gam, E)
            return cls(2, u, x, np.stack([x_phi, x_lam], axis=1), metric)
        raise GridError(f"unsupported dimension n={n}; only 1 and 2 are supported")

    @classmethod
    def from_ambient(cls, x) -> "ChartPoints":
        """Chart points for unit vectors ``x`` of shape (P, n+1)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] == 2:
            return cls.from_chart(1, np.arctan2(x[:, 1], x[:, 0])[:, None])
        if x.shape[1] == 3:
            phi = np.arccos(np.clip(x[:, 2], -1.0, 1.0))
            lam = np.arctan2(x[:, 1], x[:, 0])
            return cls.from_chart(2, np.stack([phi, lam], axis=-1))
        raise GridError(f"unsupported ambient dimension {x.shape[1]}")

    def subset(self, mask) -> "ChartPoints":
        return ChartPoints.from_chart(self.n, self.u[mask])

    def to_frame(self, tensor: np.ndarray) -> np.ndarray:
        """Orthonormal-frame components F = E^{-T} T E^{-1} of a 2-tensor."""
        Einv = self.metric.frame_inv
        return np.einsum("pki,pkl,plj->pij", Einv, tensor, Einv)

    def from_frame(self, frame_tensor: np.ndarray) -> np.ndarray:
        E = self.metric.frame
        return np.einsum("pki,pkl,plj->pij", E, frame_tensor, E)

    def ambient_vector(self, chart_vec: np.ndarray) -> np.ndarray:
        """Push chart components v^i forward to v^i x_i in R^{n+1}."""
        return np.einsum("pi,pia->pa", chart_vec, self.basis)

    def raise_index(self, covector: np.ndarray) -> np.ndarray:
        return np.einsum("pij,pj->pi", self.metric.metric_inv, covector)


# ---------------------------------------------------------------------------
# Normalized associated Legendre functions
# ---------------------------------------------------------------------------


def legendre_tables(lmax: int, phi) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalized associated Legendre functions of cos(phi) and phi-derivatives.

    Returns arrays of shape (P, lmax+1, lmax+1) indexed ``[p, l, m]``, zero
    for ``m > l``, normalized so that the integral of the square over
    x = cos(phi) in [-1, 1] is one. No Condon-Shortley phase.
    """
    phi = np.asarray(phi, dtype=float).ravel()
    x, s = np.cos(phi), np.sin(phi)
    P = len(phi)
    L = lmax
    lam = np.zeros((P, L + 1, L + 1))
    lam[:, 0, 0] = np.sqrt(0.5)
    for m in range(1, L + 1):
        lam[:, m, m] = np.sqrt((2 * m + 1) / (2 * m)) * s * lam[:, m - 1, m - 1]
    for m in range(0, L):
        lam[:, m + 1, m] = np.sqrt(2 * m + 3) * x * lam[:, m, m]
    for m in range(0, L + 1):
        for l in range(m + 2, L + 1):
            a = np.sqrt((4 * l * l - 1) / (l * l - m * m))
            b = np.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
            lam[:, l, m] = a * (x * lam[:, l - 1, m] - b * lam[:, l - 2, m])

    l_idx = np.arange(L + 1)[:, None]
    m_idx = np.arange(L + 1)[None, :]
    valid = m_idx <= l_idx
    c = np.zeros((L + 1, L + 1))
    num = (2 * l_idx + 1) * (l_idx**2 - m_idx**2)
    c[1:] = np.sqrt(np.where(valid[1:], num[1:] / (2 * l_idx[1:] - 1), 0.0))
    prev = np.zeros_like(lam)
    prev[:, 1:, :] = lam[:, :-1, :]
    d1 = (l_idx * x[:, None, None] * lam - c * prev) / s[:, None, None]
    d1 = np.where(valid, d1, 0.0)
    cot = (x / s)[:, None, None]
    d2 = -cot * d1 - (l_idx * (l_idx + 1) - m_idx**2 / s[:, None, None] ** 2) * lam
    d2 = np.where(valid, d2, 0.0)
    return lam, d1, d2


def _order_norm(mmax: int) -> np.ndarray:
    c = np.full(mmax + 1, 1.0 / np.sqrt(np.pi))
    c[0] = 1.0 / np.sqrt(2.0 * np.pi)
    return c


# ---------------------------------------------------------------------------
# Harmonic expansions (evaluation at arbitrary points)
# ---------------------------------------------------------------------------


def _lam_derivative(coeffs: np.ndarray, orders: np.ndarray, count: int) -> np.ndarray:
    """Coefficients of the ``count``-th derivative along the periodic angle."""
    a, b = coeffs[0], coeffs[1]
    for _ in range(count):
        a, b = orders * b, -orders * a
    return np.stack([a, b])


@dataclass(frozen=True)
class HarmonicExpansion:
    """A band-limited function on S^n given by its orthonormal coefficients."""

    n: int
    coeffs: np.ndarray

    @property
    def degree(self) -> int:
        return self.coeffs.shape[1] - 1

    def degrees(self) -> np.ndarray:
        return degree_array(self.n, self.degree)

    def resized(self, degree: int) -> "HarmonicExpansion":
        """Zero-padded or truncated copy with the given degree."""
        k = min(degree, self.degree) + 1
        shape = (2, degree + 1) if self.n == 1 else (2, degree + 1, degree + 1)
        c = np.zeros(shape)
        if self.n == 1:
            c[:, :k] = self.coeffs[:, :k]
        else:
            c[:, :k, :k] = self.coeffs[:, :k, :k]
        return HarmonicExpansion(self.n, c)

    def on_grid(self, grid: "SphereGrid") -> "ScalarField":
        return grid.from_coeffs(self.resized(grid.degree).coeffs)

    def evaluate(self, points: ChartPoints, order: int = 2):
        """Values, chart gradient and covariant Hessian at ``points``.

        Returns ``(f, df, hess)`` with shapes (P,), (P, n), (P, n, n); the
        entries beyond ``order`` are ``None``.
        """
        if points.n != self.n:
            raise GridError("dimension mismatch between expansion and points")
        if self.n == 1:
            f, df, ddf = self._eval_s1(points.u[:, 0], order)
        else:
            f, df, ddf = self._eval_s2(points.u[:, 0], points.u[:, 1], order)
        if order < 2:
            return f, df, None
        gam = points.metric.christoffel
        hess = ddf - np.einsum("pkij,pk->pij", gam, df)
        hess = 0.5 * (hess + np.swapaxes(hess, 1, 2))
        return f, df, hess

    def _eval_s1(self, theta, order):
        K = self.degree
        k = np.arange(K + 1)
        ang = np.outer(theta, k)
        cos, sin = np.cos(ang), np.sin(ang)
        norm = _order_norm(K)
        a, b = self.coeffs[0] * norm, self.coeffs[1] * norm
        f = cos @ a + sin @ b
        if order < 1:
            return f, None, None
        df = (cos @ (k * b) - sin @ (k * a))[:, None]
        if order < 2:
            return f, df, None
        ddf = (-(cos @ (k * k * a)) - sin @ (k * k * b))[:, None, None]
        return f, df, ddf

    def _eval_s2(self, phi, lam, order):
        L = self.degree
        P0, P1, P2 = legendre_tables(L, phi)
        m = np.arange(L + 1)
        norm = _order_norm(L)
        ang = np.outer(lam, m)
        cos, sin = np.cos(ang) * norm, np.sin(ang) * norm

        def synth(table, coeffs):
            ga = np.einsum("plm,lm->pm", table, coeffs[0])
            gb = np.einsum("plm,lm->pm", table, coeffs[1])
            return np.sum(ga * cos + gb * sin, axis=1)

        c0 = self.coeffs
        f = synth(P0, c0)
        if order < 1:
            return f, None, None
        c1 = _lam_derivative(c0, m, 1)
        df = np.stack([synth(P1, c0), synth(P0, c1)], axis=-1)
        if order < 2:
            return f, df, None
        c2 = _lam_derivative(c0, m, 2)
        f_pp = synth(P2, c0)
        f_pl = synth(P1, c1)
        f_ll = synth(P0, c2)
        ddf = np.stack([np.stack([f_pp, f_pl], -1), np.stack([f_pl, f_ll], -1)], -2)
        return f, df, ddf


def degree_array(n: int, degree: int) -> np.ndarray:
    """Degree of each coefficient slot, broadcast to the coefficient shape."""
    if n == 1:
        return np.broadcast_to(np.arange(degree + 1), (2, degree + 1)).copy()
    l = np.arange(degree + 1)[:, None] * np.ones((1, degree + 1))
    return np.broadcast_to(l, (2, degree + 1, degree + 1)).copy()


def coefficient_mask(n: int, degree: int) -> np.ndarray:
    """Boolean mask of meaningful coefficient slots."""
    if n == 1:
        mask = np.ones((2, degree + 1), dtype=bool)
        mask[1, 0] = False
        return mask
    l = np.arange(degree + 1)[:, None]
    m = np.arange(degree + 1)[None, :]
    mask = np.stack([m <= l, (m <= l) & (m > 0)])
    return mask


def random_expansion(n: int, degree: int, rng: np.random.Generator, decay: float = 1.0) -> HarmonicExpansion:
    """Random coefficients with variance decaying like (1 + l)^(-2 decay)."""
    deg = degree_array(n, degree)
    mask = coefficient_mask(n, degree)
    c = rng.standard_normal(deg.shape) * (1.0 + deg) ** (-2.0 * decay) * mask
    return HarmonicExpansion(n, c)


def random_positive_radial(n: int, degree: int, seed: int, amplitude: float = 0.2,
                           mean: float = 1.0) -> HarmonicExpansion:
    """Band-limited rho = mean * (1 + amplitude * phi) with sup|phi| <= 1.

    The bound on phi uses the sum of |coefficients| times the sup-norm of the
    orthonormal basis functions, so positivity is guaranteed for amplitude < 1.
    """
    rng = np.random.default_rng(seed)
    pert = random_expansion(n, degree, rng)
    c = pert.coeffs.copy()
    if n == 1:
        c[:, 0] = 0.0
        sup_basis = 1.0 / np.sqrt(np.pi)
    else:
        c[:, 0, 0] = 0.0
        sup_basis = np.sqrt((2 * degree + 1) / (2 * np.pi))
    bound = np.sum(np.abs(c)) * sup_basis
    c *= amplitude * mean / bound
    vol = 2 * np.pi if n == 1 else 4 * np.pi
    if n == 1:
        c[0, 0] = mean * np.sqrt(vol)
    else:
        c[0, 0, 0] = mean * np.sqrt(vol)
    return HarmonicExpansion(n, c)


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------


class SphereGrid:
    """Collocation grid on S^n with quadrature weights and transforms.

    For S^1, ``sizes = (M,)`` and the spectral degree is ``M // 2 - 1``.
    For S^2, ``sizes = (L + 1, 2L + 2)`` for truncation degree ``L``.
    """

    def __init__(self, n: int, resolution: int):
        if n == 1:
            lo, hi = S1_RESOLUTION
            if not (lo <= resolution <= hi) or resolution % 2:
                raise GridError(f"S^1 needs an even M in [{lo}, {hi}], got {resolution}")
            M = int(resolution)
            theta = 2.0 * np.pi * np.arange(M) / M
            self.sizes = (M,)
            self.degree = M // 2 - 1
            self.points = ChartPoints.from_chart(1, theta[:, None])
            self.weights = np.full(M, 2.0 * np.pi / M)
        elif n == 2:
            lo, hi = S2_RESOLUTION
            if not (lo <= resolution <= hi):
                raise GridError(f"S^2 needs L_max in [{lo}, {hi}], got {resolution}")
            L = int(resolution)
            nlat, nlon = L + 1, 2 * L + 2
            xg, wg = np.polynomial.legendre.leggauss(nlat)
            order = np.argsort(-xg)  # north to south
            xg, wg = xg[order], wg[order]
            phi = np.arccos(xg)
            lam = 2.0 * np.pi * np.arange(nlon) / nlon
            pp, ll = np.meshgrid(phi, lam, indexing="ij")
            self.sizes = (nlat, nlon)
            self.degree = L
            self.points = ChartPoints.from_chart(2, np.stack([pp.ravel(), ll.ravel()], -1))
            self.weights = np.repeat(wg, nlon) * (2.0 * np.pi / nlon)
            self._phi = phi
            self._lam = lam
        else:
            raise GridError(f"unsupported dimension n={n}; only 1 and 2 are supported")
        self.n = n

    def __repr__(self) -> str:
        return f"SphereGrid(n={self.n}, sizes={self.sizes}, degree={self.degree})"

    def __eq__(self, other) -> bool:
        return isinstance(other, SphereGrid) and (self.n, self.sizes) == (other.n, other.sizes)

    def __hash__(self) -> int:
        return hash((self.n, self.sizes))

    @property
    def resolution(self) -> int:
        return self.sizes[0] if self.n == 1 else self.degree

    @property
    def metric(self) -> MetricData:
        return self.points.metric

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def volume(self) -> float:
        return 2.0 * np.pi if self.n == 1 else 4.0 * np.pi

    @cached_property
    def _tables(self):
        return legendre_tables(self.degree, self._phi)

    @cached_property
    def _lon_tables(self):
        m = np.arange(self.degree + 1)
        ang = np.outer(m, self._lam)
        norm = _order_norm(self.degree)[:, None]
        return np.cos(ang) * norm, np.sin(ang) * norm

    def degrees(self) -> np.ndarray:
        return degree_array(self.n, self.degree)

    def mask(self) -> np.ndarray:
        return coefficient_mask(self.n, self.degree)

    # -- transforms ---------------------------------------------------------

    def analyze(self, values: np.ndarray) -> np.ndarray:
        """Point values -> orthonormal coefficients (quadrature projection)."""
        values = np.asarray(values, dtype=float)
        if self.n == 1:
            M = self.sizes[0]
            K = self.degree
            F = np.fft.rfft(values)[: K + 1]
            scale = 2.0 * np.pi / M
            norm = _order_norm(K)
            return np.stack([scale * F.real * norm, -scale * F.imag * norm])
        nlat, nlon = self.sizes
        f = values.reshape(nlat, nlon)
        cos, sin = self._lon_tables
        w = self.weights.reshape(nlat, nlon)[:, 0][:, None]
        C = (f @ cos.T) * w
        S = (f @ sin.T) * w
        lam = self._tables[0]
        a = np.einsum("jlm,jm->lm", lam, C)
        b = np.einsum("jlm,jm->lm", lam, S)
        return np.stack([a, b])

    def synthesize(self, coeffs: np.ndarray, table: int = 0) -> np.ndarray:
        """Orthonormal coefficients -> point values.

        ``table`` selects the colatitude factor: 0 values, 1 first and 2
        second colatitude derivative (S^2 only).
        """
        if self.n == 1:
            M = self.sizes[0]
            K = self.degree
            norm = _order_norm(K)
            X = np.zeros(M // 2 + 1, dtype=complex)
            a, b = coeffs[0] * norm, coeffs[1] * norm
            X[0] = M * a[0]
            X[1 : K + 1] = 0.5 * M * (a[1:] - 1j * b[1:])
            return np.fft.irfft(X, n=M)
        lam = self._tables[table]
        cos, sin = self._lon_tables
        ga = np.einsum("jlm,lm->jm", lam, coeffs[0])
        gb = np.einsum("jlm,lm->jm", lam, coeffs[1])
        return (ga @ cos + gb @ sin).ravel()

    def chart_derivatives(self, coeffs: np.ndarray):
        """Chart partial derivatives (first and second) of a band-limited field."""
        if self.n == 1:
            k = np.arange(self.degree + 1)
            d1 = self.synthesize(_lam_derivative(coeffs, k, 1))[:, None]
            d2 = self.synthesize(_lam_derivative(coeffs, k, 2))[:, None, None]
            return d1, d2
        m = np.arange(self.degree + 1)
        c1 = _lam_derivative(coeffs, m, 1)
        c2 = _lam_derivative(coeffs, m, 2)
        f_p = self.synthesize(coeffs, 1)
        f_l = self.synthesize(c1, 0)
        f_pp = self.synthesize(coeffs, 2)
        f_pl = self.synthesize(c1, 1)
        f_ll = self.synthesize(c2, 0)
        d1 = np.stack([f_p, f_l], -1)
        d2 = np.stack([np.stack([f_pp, f_pl], -1), np.stack([f_pl, f_ll], -1)], -2)
        return d1, d2

    # -- construction helpers ----------------------------------------------

    def field(self, values) -> "ScalarField":
        return ScalarField(self, np.asarray(values, dtype=float).copy())

    def from_coeffs(self, coeffs: np.ndarray) -> "ScalarField":
        f = ScalarField(self, self.synthesize(coeffs))
        f.__dict__["coeffs"] = coeffs * self.mask()
        return f

    def sample(self, func) -> "ScalarField":
        """Field of ``func(x)`` evaluated on ambient points (P, n+1)."""
        return self.field(func(self.points.x))

    def linear_coordinate(self, axis) -> "ScalarField":
        axis = np.asarray(axis, dtype=float)
        return self.field(self.points.x @ (axis / np.linalg.norm(axis)))


def build_grid(n: int, resolution: int) -> SphereGrid:
    """Grid on S^n: ``resolution`` is M for S^1 and L_max for S^2."""
    return SphereGrid(n, resolution)


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Point values of a function on a grid; coefficients computed lazily."""

    grid: SphereGrid
    values: np.ndarray

    # let ndarray (op) ScalarField dispatch to the reflected operators
    __array_ufunc__ = None

    @cached_property
    def coeffs(self) -> np.ndarray:
        return self.grid.analyze(self.values)

    def expansion(self) -> HarmonicExpansion:
        return HarmonicExpansion(self.grid.n, self.coeffs)

    def projected(self) -> "ScalarField":
        """Re-projection onto the band-limited space of the grid."""
        return self.grid.from_coeffs(self.coeffs)

    def _binary(self, other, op):
        if isinstance(other, ScalarField):
            if other.grid != self.grid:
                raise GridError("fields live on different grids")
            other = other.values
        return ScalarField(self.grid, op(self.values, other))

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(other, np.divide)

    def __rtruediv__(self, other):
        return self._binary(other, lambda a, b: b / a)

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def map(self, func) -> "ScalarField":
        return ScalarField(self.grid, func(self.values))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    # -- serialization ------------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "dimension": self.grid.n,
            "resolution": self.grid.resolution,
            "grid_sizes": list(self.grid.sizes),
            "values": self.values.tolist(),
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "ScalarField":
        doc = json.loads(text)
        grid = build_grid(int(doc["dimension"]), int(doc["resolution"]))
        if list(grid.sizes) != list(doc["grid_sizes"]):
            raise GridError("grid sizes in document do not match the resolution")
        values = np.asarray(doc["values"], dtype=float)
        if values.shape != (grid.size,):
            raise GridError("value count does not match grid")
        return cls(grid, values)


@dataclass(frozen=True)
class SymTensorField2:
    """Symmetric covariant 2-tensor given by chart components at points."""

    points: ChartPoints
    values: np.ndarray  # (P, n, n)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", 0.5 * (v + np.swapaxes(v, 1, 2)))

    @classmethod
    def from_frame(cls, points: ChartPoints, frame_values) -> "SymTensorField2":
        return cls(points, points.from_frame(np.asarray(frame_values, dtype=float)))

    @property
    def frame(self) -> np.ndarray:
        return self.points.to_frame(self.values)

    def __call__(self, vec) -> np.ndarray:
        """T(v, v) for chart vectors ``vec`` of shape (P, n) or (n,)."""
        vec = np.broadcast_to(np.asarray(vec, dtype=float), (len(self.points), self.points.n))
        return np.einsum("pi,pij,pj->p", vec, self.values, vec)

    def trace(self) -> np.ndarray:
        return np.einsum("pij,pij->p", self.points.metric.metric_inv, self.values)

    def __sub__(self, other: "SymTensorField2") -> "SymTensorField2":
        return SymTensorField2(self.points, self.values - other.values)

    def sup(self) -> float:
        return float(np.max(np.abs(self.frame)))


def metric_tensor(points: ChartPoints) -> SymTensorField2:
    return SymTensorField2(points, points.metric.metric)


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------


def _check(f: ScalarField):
    if not isinstance(f, ScalarField):
        raise TypeError("expected a ScalarField")


def derivatives(f: ScalarField):
    """Chart gradient (P, n) and covariant Hessian (P, n, n) of a grid field."""
    _check(f)
    d1, d2 = f.grid.chart_derivatives(f.coeffs)
    gam = f.grid.metric.christoffel
    hess = d2 - np.einsum("pkij,pk->pij", gam, d1)
    return d1, 0.5 * (hess + np.swapaxes(hess, 1, 2))


def gradient(f: ScalarField, method: str = "spectral") -> np.ndarray:
    """Covariant components f_i of the gradient.

    ``method="fd4"`` uses fourth-order centered differences on the periodic
    S^1 grid and is meant for data that is not band-limited.
    """
    _check(f)
    if method == "spectral":
        d1, _ = f.grid.chart_derivatives(f.coeffs)
        return d1
    if method == "fd4":
        if f.grid.n != 1:
            raise GridError("finite-difference fallback is only available on S^1")
        h = 2.0 * np.pi / f.grid.sizes[0]
        v = f.values
        d = (-np.roll(v, -2) + 8 * np.roll(v, -1) - 8 * np.roll(v, 1) + np.roll(v, 2)) / (12 * h)
        return d[:, None]
    raise ValueError(f"unknown differentiation method {method!r}")


def gradient_norm2(f: ScalarField, grad: np.ndarray | None = None) -> np.ndarray:
    if grad is None:
        grad = gradient(f)
    return np.einsum("pi,pij,pj->p", grad, f.grid.metric.metric_inv, grad)


def covariant_hessian(f: ScalarField) -> SymTensorField2:
    _, hess = derivatives(f)
    return SymTensorField2(f.grid.points, hess)


def laplace_beltrami(f: ScalarField) -> ScalarField:
    _check(f)
    g = f.grid
    deg = g.degrees()
    return g.from_coeffs(-deg * (deg + g.n - 1) * f.coeffs)


def integrate(f: ScalarField) -> float:
    """Quadrature value of the integral of f over S^n (fixed summation order)."""
    _check(f)
    return float(np.dot(f.grid.weights, f.values))


def shifted_laplacian_eigenvalues(n: int, degrees: np.ndarray, shift: float = 0.0) -> np.ndarray:
    """Eigenvalues n/2 - l(l+n-1) - shift of Laplacian + n/2 - shift."""
    return n / 2.0 - degrees * (degrees + n - 1) - shift


def apply_shifted_laplacian(v: ScalarField) -> ScalarField:
    g = v.grid
    lam = shifted_laplacian_eigenvalues(g.n, g.degrees())
    return g.from_coeffs(lam * v.coeffs)


def solve_shifted_laplacian(rhs: ScalarField, shift: float = 0.0) -> ScalarField:
    """Unique v with Laplacian(v) + (n/2 - shift) v = rhs, solved per degree.

    With ``shift = 0`` this inverts the shifted Laplacian whose eigenvalues
    n/2 - l(l+n-1) never vanish. A nonzero ``shift`` must avoid the spectrum.
    """
    _check(rhs)
    g = rhs.grid
    lam = shifted_laplacian_eigenvalues(g.n, g.degrees(), shift)
    if np.any(np.abs(lam[g.mask()]) < 1e-14):
        raise ValueError("shift hits the spectrum of the shifted Laplacian")
    out = np.where(g.mask(), rhs.coeffs / np.where(lam == 0, 1.0, lam), 0.0)
    return g.from_coeffs(out)
