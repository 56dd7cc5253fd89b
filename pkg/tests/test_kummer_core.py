import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kummer_optics.analytic_shapes import ConicOfRevolution, HeightProfile
from kummer_optics.kummer_core import (
    RadialHypersurface,
    ReflectorError,
    conformal_field_intensity,
    conformal_intensity_form,
    directional_intensity,
    ehat_form,
    elementary_symmetric,
    embed,
    fd_defects,
    fundamental_forms,
    intensity_form,
    intensity_form_from_b,
    mean_intensity,
    mean_intensity_operator,
    observed_orders,
    principal_intensities,
    reciprocal_mean_intensity,
    reflection_differential,
    reflection_fd,
    reflection_map,
    schouten_tensor,
    striction_distance,
)
from kummer_optics.sphere_geometry import ChartPoints, build_grid, derivatives, random_positive_radial


def random_surface(n, res, seed, amp=0.3):
    g = build_grid(n, res)
    rho = random_positive_radial(n, min(g.degree, 6), seed, amp).on_grid(g)
    return RadialHypersurface.from_field(rho)


def test_rejects_nonpositive_rho(s1_grid):
    z = np.zeros((s1_grid.size, 1))
    with pytest.raises(ReflectorError):
        RadialHypersurface(s1_grid.points, -np.ones(s1_grid.size), z, z[:, :, None])


@pytest.mark.parametrize("n,res", [(1, 32), (2, 8)])
def test_constant_sphere_forms(n, res):
    g = build_grid(n, res)
    R = RadialHypersurface.from_function(ConicOfRevolution.on(n, 2.5, 0.0), g.points)
    ff = fundamental_forms(R)
    e = g.metric.metric
    assert np.allclose(ff.g.values, 6.25 * e)
    assert np.allclose(ff.b.values, -2.5 * e)
    assert np.allclose(embed(R).normal, g.points.x)
    assert np.allclose(intensity_form(R).values, e)
    assert np.allclose(reflection_map(R), -g.points.x)


@pytest.mark.parametrize("n,res", [(1, 64), (2, 12)])
def test_normal_is_unit_and_orthogonal(n, res):
    R = random_surface(n, res, 3)
    N = embed(R).normal
    assert np.max(np.abs(np.linalg.norm(N, axis=1) - 1.0)) < 1e-12
    assert np.max(np.abs(np.einsum("pia,pa->pi", R.tangents, N))) < 1e-12


@pytest.mark.parametrize("n,res", [(1, 64), (2, 12)])
def test_metric_inverse_and_determinant(n, res):
    R = random_surface(n, res, 5)
    ff = fundamental_forms(R)
    eye = np.einsum("pij,pjk->pik", ff.g.values, ff.g_inv)
    assert np.max(np.abs(eye - np.eye(n))) < 1e-12
    assert np.allclose(ff.g.values, np.einsum("pia,pja->pij", R.tangents, R.tangents), atol=1e-12)
    det = np.linalg.det(ff.g.values)
    assert np.allclose(det, R.rho ** (2 * n - 2) * R.W**2 * R.points.metric.det, rtol=1e-12)


@pytest.mark.parametrize("n,res", [(1, 64), (2, 12)])
def test_three_intensity_formulas_agree(n, res):
    for seed in range(3):
        R = random_surface(n, res, seed)
        k1 = intensity_form(R)
        k2 = intensity_form_from_b(R)
        dw, hw = R.log_derivatives
        k3 = conformal_intensity_form(R.points, dw, hw)
        assert (k1 - k2).sup() < 1e-12
        assert (k1 - k3).sup() < 1e-12


def test_conformal_grid_field_and_schouten():
    R = random_surface(2, 12, 7)
    rho = build_grid(2, 12).field(R.rho)
    w = rho.map(lambda v: -np.log(v)).projected()
    k = conformal_field_intensity(w)
    dw, hw = derivatives(w)
    g2 = np.einsum("pi,pij,pj->p", dw, R.points.metric.metric_inv, dw)
    sch = schouten_tensor(R.points, dw, hw)
    assert np.allclose(sch.values, k.values * (0.5 * (1 + g2))[:, None, None])


@pytest.mark.parametrize("n,res", [(1, 64), (2, 12)])
def test_reflected_directions_are_unit(n, res):
    R = random_surface(n, res, 11)
    gam = reflection_map(R)
    assert np.max(np.abs(np.linalg.norm(gam, axis=1) - 1.0)) < 1e-14


@settings(max_examples=25, deadline=None)
@given(lam=st.floats(0.05, 50.0), seed=st.integers(0, 1000))
def test_homothety_invariance(lam, seed):
    R = random_surface(2, 8, seed)
    assert (intensity_form(R.scaled(lam)) - intensity_form(R)).sup() < 1e-12
    assert np.allclose(reflection_map(R.scaled(lam)), reflection_map(R), atol=1e-14)


def test_elementary_symmetric_polynomials():
    lam = np.array([[2.0, 3.0, 5.0]])
    S = elementary_symmetric(lam)
    assert np.allclose(S, [[10.0, 31.0, 30.0]])


@pytest.mark.parametrize("n,res", [(1, 64), (2, 12)])
def test_principal_intensities(n, res):
    R = random_surface(n, res, 2)
    sp = principal_intensities(R)
    assert np.allclose(sp.S[:, -1], sp.det_ratio, atol=1e-12)
    assert np.allclose(sp.S[:, 0], np.trace(sp.mixed, axis1=1, axis2=2), atol=1e-12)
    # each principal intensity is a root of the characteristic polynomial
    for i in range(n):
        assert np.max(np.abs(sp.characteristic(sp.principal[:, i]))) < 1e-10
    mi = mean_intensity(R)
    assert mi.defect < 1e-11


def test_reciprocal_mean_intensity():
    R = random_surface(2, 12, 4)
    v = 1.0 / R.rho
    dv = -R.drho / R.rho[:, None] ** 2
    lap_v = -R.laplacian / R.rho**2 + 2 * R.grad_norm2 / R.rho**3
    assert np.allclose(reciprocal_mean_intensity(R.points, v, dv, lap_v), mean_intensity_operator(R), atol=1e-11)


def test_closed_form_reflection_differential_matches_fd(s2_grid):
    shape = HeightProfile("exp", 0.3, np.array([0.2, 0.5, 0.8]))
    pts = s2_grid.points
    R = RadialHypersurface.from_function(shape, pts)
    fd = reflection_fd(shape, pts, 1e-4)
    assert np.max(np.abs(reflection_differential(R) - fd)) < 1e-7


def test_fd_defects_converge_at_second_order():
    shape = HeightProfile("exp", 0.4, np.array([0.3, -0.4, 0.85]))
    u = np.random.default_rng(0).uniform([0.4, 0.0], [2.7, 6.2], (40, 2))
    pts = ChartPoints.from_chart(2, u)
    steps = [0.04, 0.02, 0.01]
    defects = np.array([fd_defects(shape, pts, h) for h in steps])
    for col in range(3):
        orders = observed_orders(defects[:, col], steps)
        assert np.all(np.abs(orders - 2.0) < 0.3), orders


def test_gamma_gram_matches_ehat():
    shape = ConicOfRevolution.on(2, 1.0, 0.5, np.array([1.0, 1.0, 1.0]))
    pts = build_grid(2, 8).points
    R = RadialHypersurface.from_function(shape, pts)
    gi = reflection_differential(R)
    gram = np.einsum("pia,pja->pij", gi, gi)
    assert np.allclose(gram, ehat_form(R).values, atol=1e-12)


def test_directional_intensity_on_umbilic_shape():
    shape = ConicOfRevolution.on(2, 1.0, 0.6)
    R = RadialHypersurface.from_function(shape, build_grid(2, 8).points)
    unsigned, signed = directional_intensity(R, np.array([0.3, 0.7]))
    assert np.allclose(unsigned, np.abs(signed), atol=1e-12)
    with pytest.raises(ValueError):
        directional_intensity(R, np.zeros(2))


def test_directional_intensity_principal_directions():
    R = random_surface(2, 10, 9)
    k = intensity_form(R)
    _, vecs = np.linalg.eigh(k.frame)
    chart = np.einsum("pij,pj->pi", R.points.metric.frame_inv, vecs[:, :, 0])
    unsigned, signed = directional_intensity(R, chart)
    assert np.allclose(unsigned, np.abs(signed), atol=1e-10)


def test_striction_of_ellipsoid_hits_second_focus():
    shape = ConicOfRevolution.on(2, 1.0, 0.5, np.array([0.0, 0.6, 0.8]))
    R = RadialHypersurface.from_function(shape, build_grid(2, 8).points)
    a = shape.second_focus()
    for t in ([1.0, 0.0], [0.0, 1.0], [0.4, -0.9]):
        res = striction_distance(R, np.array(t))
        assert not res.infinite.any()
        assert np.allclose(res.distance, np.linalg.norm(R.position - a, axis=1), rtol=1e-12)
        assert np.allclose(res.point, a, atol=1e-12)


def test_striction_of_hyperboloid_is_virtual():
    shape = ConicOfRevolution.on(2, 1.0, 2.0)
    pts = build_grid(2, 8).points
    pts = pts.subset(shape.domain_mask(pts))
    R = RadialHypersurface.from_function(shape, pts)
    res = striction_distance(R, np.array([1.0, 0.0]))
    assert np.all(res.distance < 0.0)
    assert np.allclose(res.point, shape.second_focus(), atol=1e-10)


def test_striction_of_paraboloid_is_infinite():
    shape = ConicOfRevolution.on(2, 1.0, 1.0)
    pts = build_grid(2, 8).points
    pts = pts.subset(shape.domain_mask(pts))
    R = RadialHypersurface.from_function(shape, pts)
    res = striction_distance(R, np.array([1.0, 0.0]))
    assert res.infinite.all() and np.all(np.isinf(res.distance))
    assert np.allclose(reflection_map(R), shape.axis, atol=1e-12)


def test_sphere_rays_pass_through_origin():
    R = RadialHypersurface.from_function(ConicOfRevolution.on(2, 3.0, 0.0), build_grid(2, 8).points)
    res = striction_distance(R, np.array([1.0, 1.0]))
    assert np.allclose(res.distance, 3.0) and np.allclose(res.point, 0.0, atol=1e-14)
