"""Geometry layer: metric/connection/curvature values, frame retraction,
horizontal flows, against independent closed-form oracles."""

import numpy as np
import pytest

from framepaths.geometry import (
    FlatTorus,
    Sphere,
    default_frame,
    fd_christoffels,
    fd_riemann,
    flow_horizontal,
    geodesic_shift,
    orthonormality_defect,
    retract_frame,
    spd_inverse_sqrt,
)

from oracles import great_circle_transport, sphere2_christoffels

RNG = np.random.default_rng(20260816)


def random_sphere_points(n, margin=0.35):
    th = RNG.uniform(margin, np.pi - margin, n)
    ph = RNG.uniform(0.0, 2.0 * np.pi, n)
    return np.stack([th, ph], axis=-1)


# ---------------------------------------------------------------------------
# metric / connection / curvature values

def test_flat_torus_is_flat():
    model = FlatTorus(2)
    x = RNG.uniform(0, 2 * np.pi, (7, 2))
    assert np.array_equal(model.metric(x)[0], np.eye(2))
    assert np.all(model.christoffels(x) == 0.0)
    assert np.all(model.riemann(x) == 0.0)
    assert np.all(model.ricci(x) == 0.0)


def test_sphere_christoffels_match_textbook_table():
    model = Sphere(2, radius=1.0)
    x = random_sphere_points(50)
    got = model.christoffels(x)
    assert np.allclose(got, sphere2_christoffels(x), atol=1e-14)
    # radius does not enter the symbols
    got_r = Sphere(2, radius=2.0).christoffels(x)
    assert np.allclose(got_r, got, atol=1e-14)


@pytest.mark.parametrize("radius", [1.0, 2.0])
def test_fd_christoffels_agree_with_analytic(radius):
    model = Sphere(2, radius=radius)
    x = random_sphere_points(30)
    assert np.max(np.abs(fd_christoffels(model, x) - model.christoffels(x))) < 1e-5


@pytest.mark.parametrize("radius", [1.0, 2.0])
def test_fd_riemann_agrees_with_constant_curvature_form(radius):
    model = Sphere(2, radius=radius)
    x = random_sphere_points(20)
    assert np.max(np.abs(fd_riemann(model, x) - model.riemann(x))) < 1e-5


def test_riemann_symmetries_on_sphere():
    model = Sphere(2, radius=1.3)
    x = random_sphere_points(20)
    r = model.riemann(x)
    g = model.metric(x)
    r_low = np.einsum("pae,pebcd->pabcd", g, r)
    # antisymmetry in both pairs and first Bianchi identity
    assert np.max(np.abs(r_low + np.einsum("pabdc->pabcd", r_low))) < 1e-12
    assert np.max(np.abs(r_low + np.einsum("pbacd->pabcd", r_low))) < 1e-12
    bianchi = r + np.einsum("pacdb->pabcd", r) + np.einsum("padbc->pabcd", r)
    assert np.max(np.abs(bianchi)) < 1e-12


@pytest.mark.parametrize("radius,expect", [(1.0, 1.0), (2.0, 0.25)])
def test_sphere_ricci_is_einstein(radius, expect):
    # Ric = (m-1)/r^2 * g; scalarized against any orthonormal frame: (m-1)/r^2 * I
    model = Sphere(2, radius=radius)
    x = random_sphere_points(20)
    g = model.metric(x)
    assert np.max(np.abs(model.ricci(x) - expect * g)) < 1e-12
    u = default_frame(model, x)
    scal = np.einsum("pka,pkl,plb->pab", u, model.ricci(x), u)
    assert np.max(np.abs(scal - expect * np.eye(2))) < 1e-10
    assert model.ricci_scalar_constant == pytest.approx(expect)
    # trace against the generic contraction path as well
    ric_fd = np.einsum("pabad->pbd", fd_riemann(model, x))
    assert np.max(np.abs(ric_fd - model.ricci(x))) < 1e-5


def test_sphere_domain_and_wrap():
    model = Sphere(2, margin=0.05)
    assert model.in_domain(np.array([[0.06, 1.0], [np.pi / 2, 9.0]])).all()
    assert not model.in_domain(np.array([[0.04, 1.0]]))[0]
    assert not model.in_domain(np.array([[np.pi - 0.01, 1.0]]))[0]
    wrapped = model.wrap(np.array([[1.0, 2 * np.pi + 0.5]]))
    assert wrapped[0, 1] == pytest.approx(0.5)
    assert wrapped[0, 0] == pytest.approx(1.0)


def test_torus_wrap_and_displacement():
    model = FlatTorus(2, periods=(2 * np.pi, 4.0))
    x = np.array([[2 * np.pi + 0.25, -1.0]])
    w = model.wrap(x)
    assert np.allclose(w, [[0.25, 3.0]])
    d = model.displacement(np.array([[0.1, 0.1]]), np.array([[2 * np.pi - 0.1, 3.9]]))
    assert np.allclose(d, [[0.2, 0.2]], atol=1e-12)


# ---------------------------------------------------------------------------
# frames and retraction

def test_spd_inverse_sqrt_2x2_matches_eigh():
    a = RNG.normal(size=(40, 2, 2))
    e = np.einsum("pki,pkj->pij", a, a) + 0.5 * np.eye(2)
    got = spd_inverse_sqrt(e)
    w, v = np.linalg.eigh(e)
    want = np.einsum("pik,pk,pjk->pij", v, 1.0 / np.sqrt(w), v)
    assert np.max(np.abs(got - want)) < 1e-12
    # inverse square root property
    ident = np.einsum("pij,pjk,pkl->pil", got, e, got)
    assert np.max(np.abs(ident - np.eye(2))) < 1e-12


def test_default_frame_is_orthonormal():
    model = Sphere(2, radius=1.7)
    x = random_sphere_points(25)
    u = default_frame(model, x)
    assert np.max(orthonormality_defect(model, x, u)) < 1e-12


def test_retraction_restores_orthonormality_and_is_idempotent():
    model = Sphere(2, radius=1.0)
    x = random_sphere_points(200)
    u = default_frame(model, x)
    u_noisy = u + 1e-3 * RNG.normal(size=u.shape)
    u_fixed = retract_frame(model, x, u_noisy)
    assert np.max(orthonormality_defect(model, x, u_fixed)) < 1e-10
    u_again = retract_frame(model, x, u_fixed)
    assert np.max(np.abs(u_again - u_fixed)) < 1e-12


def test_retraction_preserves_already_orthonormal_frames():
    model = FlatTorus(2)
    x = RNG.uniform(0, 2 * np.pi, (10, 2))
    q, _ = np.linalg.qr(RNG.normal(size=(10, 2, 2)))
    u = retract_frame(model, x, q)
    assert np.max(np.abs(u - q)) < 1e-14


# ---------------------------------------------------------------------------
# horizontal flows / geodesic shifts

def test_flat_torus_geodesics_are_straight_lines():
    model = FlatTorus(2)
    x = RNG.uniform(0, 2 * np.pi, (5, 2))
    u = np.broadcast_to(np.eye(2), (5, 2, 2)).copy()
    x1, u1 = geodesic_shift(model, x, u, 0, 0.3)
    assert np.allclose(x1, x + [0.3, 0.0], atol=1e-14)
    assert np.max(np.abs(u1 - u)) < 1e-14


def test_sphere_geodesic_matches_great_circle():
    # polar band wide enough that a length-0.4 flow cannot cross a pole
    model = Sphere(2, radius=1.0)
    x = random_sphere_points(30, margin=0.95)
    u = default_frame(model, x)
    for j in (0, 1):
        s = 0.4
        x1, u1 = geodesic_shift(model, x, u, j, s)
        v = u[..., :, j]
        x_want, _ = great_circle_transport(x, v, v, s)
        assert np.max(np.abs(model.displacement(x1, x_want))) < 1e-8


def test_sphere_parallel_transport_matches_great_circle():
    model = Sphere(2, radius=1.0)
    x = random_sphere_points(30, margin=1.1)
    u = default_frame(model, x)
    s = 0.5
    x1, u1 = geodesic_shift(model, x, u, 0, s)
    v = u[..., :, 0]
    for k in (0, 1):
        w = u[..., :, k]
        x_want, w_want = great_circle_transport(x, v, w, s)
        assert np.max(np.abs(model.displacement(x1, x_want))) < 1e-8
        assert np.max(np.abs(u1[..., :, k] - w_want)) < 1e-7


def test_transport_preserves_orthonormality_and_radius():
    model = Sphere(2, radius=2.0)
    x = random_sphere_points(40)
    u = default_frame(model, x)
    w = RNG.normal(size=(40, 2))
    x1, u1 = flow_horizontal(model, x, u, w, 0.3)
    assert np.max(orthonormality_defect(model, x1, u1)) < 1e-10
    # flowing back returns to the start (flow reversibility)
    x2, u2 = flow_horizontal(model, x1, u1, -w, 0.3)
    assert np.max(np.abs(model.displacement(x2, x))) < 1e-7
    assert np.max(np.abs(u2 - u)) < 1e-6


def test_geodesic_speed_is_unit():
    model = Sphere(2, radius=1.0)
    x = random_sphere_points(10)
    u = default_frame(model, x)
    eps = 1e-4
    xp, _ = geodesic_shift(model, x, u, 1, eps)
    xm, _ = geodesic_shift(model, x, u, 1, -eps)
    vel = model.displacement(xp, xm) / (2 * eps)
    g = model.metric(x)
    speed = np.einsum("pa,pab,pb->p", vel, g, vel)
    assert np.max(np.abs(speed - 1.0)) < 1e-6
