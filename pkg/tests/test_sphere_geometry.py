import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kummer_optics.sphere_geometry import (
    ChartPoints,
    GridError,
    HarmonicExpansion,
    ScalarField,
    SymTensorField2,
    apply_shifted_laplacian,
    build_grid,
    covariant_hessian,
    derivatives,
    gradient,
    integrate,
    laplace_beltrami,
    legendre_tables,
    random_expansion,
    random_positive_radial,
    shifted_laplacian_eigenvalues,
    solve_shifted_laplacian,
)


@pytest.mark.parametrize("n,res", [(1, 64), (1, 512), (2, 8), (2, 32)])
def test_weights_sum_to_volume(n, res):
    g = build_grid(n, res)
    assert abs(g.weights.sum() - g.volume) < 1e-12


@pytest.mark.parametrize("n,res", [(1, 7), (1, 4), (1, 10000), (2, 2), (2, 200), (3, 8)])
def test_bad_resolution_rejected(n, res):
    with pytest.raises(GridError):
        build_grid(n, res)


@pytest.mark.parametrize("n,res", [(1, 64), (2, 12)])
def test_round_trip(n, res, rng):
    g = build_grid(n, res)
    c = random_expansion(n, g.degree, rng).coeffs
    f = g.from_coeffs(c)
    back = g.analyze(f.values)
    assert np.max(np.abs(back - c * g.mask())) < 1e-12


def test_legendre_orthonormal():
    L = 10
    x, w = np.polynomial.legendre.leggauss(L + 2)
    lam, _, _ = legendre_tables(L, np.arccos(x))
    # for fixed m the functions l >= m are orthonormal in x = cos(phi)
    for m in range(L + 1):
        block = lam[:, m:, m]
        gram = block.T @ (w[:, None] * block)
        assert np.allclose(gram, np.eye(L + 1 - m), atol=1e-12)


def test_legendre_derivatives_match_differences():
    L = 8
    phi = np.linspace(0.3, 2.8, 9)
    h = 1e-5
    lam, d1, d2 = legendre_tables(L, phi)
    lp, d1p, _ = legendre_tables(L, phi + h)
    lm, d1m, _ = legendre_tables(L, phi - h)
    assert np.max(np.abs((lp - lm) / (2 * h) - d1)) < 1e-7
    assert np.max(np.abs((d1p - d1m) / (2 * h) - d2)) < 1e-6


def test_s2_linear_function_identities():
    g = build_grid(2, 16)
    u = np.array([0.3, -0.5, 0.8])
    f = g.linear_coordinate(u)
    assert np.max(np.abs(laplace_beltrami(f).values + 2.0 * f.values)) < 1e-11
    assert abs(integrate(f * f) - 4.0 * np.pi / 3.0) < 1e-12
    hess = covariant_hessian(f).values
    assert np.max(np.abs(hess + f.values[:, None, None] * g.metric.metric)) < 1e-11


def test_s1_derivatives_of_trig():
    g = build_grid(1, 64)
    th = g.points.u[:, 0]
    f = g.field(np.sin(3 * th) + 0.5 * np.cos(th))
    d1, d2 = derivatives(f)
    assert np.max(np.abs(d1[:, 0] - (3 * np.cos(3 * th) - 0.5 * np.sin(th)))) < 1e-12
    assert np.max(np.abs(d2[:, 0, 0] - (-9 * np.sin(3 * th) - 0.5 * np.cos(th)))) < 1e-11


def test_fd4_gradient_fallback():
    g = build_grid(1, 512)
    th = g.points.u[:, 0]
    f = g.field(np.exp(np.cos(th)))
    exact = -np.sin(th) * np.exp(np.cos(th))
    assert np.max(np.abs(gradient(f, "fd4")[:, 0] - exact)) < 1e-7
    with pytest.raises(GridError):
        gradient(build_grid(2, 8).field(np.zeros(9 * 18)), "fd4")
    with pytest.raises(ValueError):
        gradient(f, "bogus")


@pytest.mark.parametrize("n,res", [(1, 64), (2, 12)])
def test_derivatives_match_expansion_off_grid(n, res, rng):
    g = build_grid(n, res)
    exp = random_expansion(n, g.degree, rng)
    f = exp.on_grid(g)
    d1, hess = derivatives(f)
    f0, df0, h0 = exp.evaluate(g.points)
    assert np.max(np.abs(f.values - f0)) < 1e-12
    assert np.max(np.abs(d1 - df0)) < 1e-11
    assert np.max(np.abs(hess - h0)) < 1e-10


@pytest.mark.parametrize("n,res", [(1, 64), (2, 12)])
def test_laplacian_trace_and_integral(n, res, rng):
    g = build_grid(n, res)
    f = random_expansion(n, g.degree, rng).on_grid(g)
    lap = laplace_beltrami(f)
    tr = covariant_hessian(f).trace()
    assert np.max(np.abs(lap.values - tr)) < 1e-10
    assert abs(integrate(lap)) < 1e-12


@pytest.mark.parametrize("n,res", [(1, 64), (2, 12)])
def test_shifted_laplacian_inverse(n, res, rng):
    g = build_grid(n, res)
    rhs = random_expansion(n, g.degree, rng).on_grid(g)
    v = solve_shifted_laplacian(rhs)
    assert np.max(np.abs(apply_shifted_laplacian(v).values - rhs.values)) < 1e-12


def test_shifted_laplacian_spectrum_has_no_zero():
    for n in (1, 2):
        lam = shifted_laplacian_eigenvalues(n, np.arange(50))
        assert lam[0] == n / 2 and np.all(np.abs(lam) >= n / 2)


def test_shift_on_spectrum_rejected(s2_grid):
    with pytest.raises(ValueError):
        solve_shifted_laplacian(s2_grid.field(np.ones(s2_grid.size)), shift=1.0)


def test_constant_inverse():
    g = build_grid(2, 8)
    v = solve_shifted_laplacian(g.field(np.full(g.size, 3.0)))
    assert np.allclose(v.values, 3.0, atol=1e-14)


def test_scalar_field_arithmetic(s1_grid):
    a = s1_grid.field(np.ones(s1_grid.size))
    b = 2.0 * a + 1.0
    assert np.allclose(b.values, 3.0)
    assert np.allclose((np.full(s1_grid.size, 2.0) * a).values, 2.0)
    assert np.allclose((1.0 / b).values, 1.0 / 3.0)
    assert np.allclose((a - b).values, -2.0)
    with pytest.raises(GridError):
        a + build_grid(1, 64).field(np.ones(64))


@pytest.mark.parametrize("n,res", [(1, 16), (2, 6)])
def test_json_round_trip(n, res, rng):
    g = build_grid(n, res)
    f = g.field(rng.standard_normal(g.size))
    back = ScalarField.from_json(f.to_json())
    assert back.grid == g and np.array_equal(back.values, f.values)
    doc = json.loads(f.to_json())
    doc["values"] = doc["values"][:-1]
    with pytest.raises(GridError):
        ScalarField.from_json(json.dumps(doc))


def test_chart_points_reject_poles():
    with pytest.raises(GridError):
        ChartPoints.from_chart(2, [[0.0, 1.0]])


def test_from_ambient_round_trip(rng):
    x = rng.standard_normal((20, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    assert np.allclose(ChartPoints.from_ambient(x).x, x, atol=1e-14)


def test_frame_transform_inverse(s2_grid, rng):
    pts = s2_grid.points
    T = rng.standard_normal((len(pts), 2, 2))
    T = T + T.transpose(0, 2, 1)
    assert np.allclose(pts.from_frame(pts.to_frame(T)), T, atol=1e-12)
    assert np.allclose(pts.to_frame(pts.metric.metric), np.eye(2), atol=1e-14)
    t = SymTensorField2(pts, T)
    assert np.allclose(t.trace(), np.trace(t.frame, axis1=1, axis2=2))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), amp=st.floats(0.01, 0.9))
def test_random_positive_radial_is_positive(seed, amp):
    g = build_grid(2, 10)
    rho = random_positive_radial(2, 6, seed, amp).on_grid(g)
    assert rho.values.min() > 0.0
    assert abs(integrate(rho) / g.volume - 1.0) < 1e-12


def test_harmonic_expansion_resize():
    e = HarmonicExpansion(1, np.arange(10.0).reshape(2, 5))
    assert e.resized(2).degree == 2 and e.resized(8).degree == 8
    assert np.array_equal(e.resized(8).coeffs[:, :5], e.coeffs)
