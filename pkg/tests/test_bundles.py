"""Bundle layer: connections, curvature, scalarized curvature operators,
extended-state horizontal flows."""

import numpy as np
import pytest

from framepaths.bundles import (
    BundleGeometry,
    CallableBundle,
    TangentBundle,
    TrivialBundle,
    constant_curvature_omega,
    fd_bundle_curvature,
    invert_frames,
    scalarized_curvature,
)
from framepaths.geometry import FlatTorus, Sphere, default_frame, orthonormality_defect

RNG = np.random.default_rng(7)

J = np.array([[0.0, -1.0], [1.0, 0.0]])


def abelian_bundle():
    """Rank-2 bundle over the torus with rotation-valued connection
    A_b = alpha_b(x) J; curvature (d_1 a_2 - d_2 a_1) J, commutator-free."""

    def conn(x):
        a = np.zeros(x.shape[:-1] + (2, 2, 2))
        a[..., 0, :, :] = 0.3 * np.sin(x[..., 1])[..., None, None] * J
        a[..., 1, :, :] = 0.2 * np.cos(x[..., 0])[..., None, None] * J
        return a

    def curv(x):
        f = np.zeros(x.shape[:-1] + (2, 2, 2, 2))
        scal = -0.2 * np.sin(x[..., 0]) - 0.3 * np.cos(x[..., 1])
        f[..., 0, 1, :, :] = scal[..., None, None] * J
        f[..., 1, 0, :, :] = -scal[..., None, None] * J
        return f

    return CallableBundle(2, conn, curv)


def sphere_states(n, margin=0.5):
    model = Sphere(2)
    th = RNG.uniform(margin, np.pi - margin, n)
    ph = RNG.uniform(0, 2 * np.pi, n)
    x = np.stack([th, ph], axis=-1)
    return model, x, default_frame(model, x)


def test_trivial_bundle_is_flat():
    b = TrivialBundle(3)
    x = RNG.uniform(0, 2 * np.pi, (5, 2))
    assert np.all(b.connection(x) == 0)
    assert np.all(b.curvature(x) == 0)
    assert np.all(b.transport_velocity(x, RNG.normal(size=(5, 2)), RNG.normal(size=(5, 3, 3))) == 0)


def test_fd_bundle_curvature_matches_analytic_abelian():
    b = abelian_bundle()
    x = RNG.uniform(0, 2 * np.pi, (20, 2))
    assert np.max(np.abs(fd_bundle_curvature(b, x) - b.curvature(x))) < 1e-8


def test_tangent_bundle_curvature_is_riemann():
    model, x, u = sphere_states(10)
    tb = TangentBundle(model)
    f = tb.curvature(x)
    r = model.riemann(x)
    assert np.max(np.abs(f - np.einsum("pstbc->pbcst", r))) < 1e-12


def test_scalarized_curvature_example_value():
    # unit sphere, coordinate-aligned orthonormal frame at the equator:
    # omega[0, 1] (first direction label, second direction argument) is the
    # standard rotation generator [[0,-1],[1,0]]
    model = Sphere(2, radius=1.0)
    x = np.array([[np.pi / 2, 0.3]])
    u = default_frame(model, x)
    tb = TangentBundle(model)
    om = scalarized_curvature(tb, x, u, u, tb.fiber_metric(x))
    assert np.allclose(om[0, 0, 1], [[0.0, -1.0], [1.0, 0.0]], atol=1e-12)
    assert np.allclose(om[0, 1, 0], [[0.0, 1.0], [-1.0, 0.0]], atol=1e-12)
    assert np.allclose(om[0, 0, 0], 0.0, atol=1e-12)


def test_scalarized_curvature_constant_form_any_frame():
    model, x, u = sphere_states(25)
    # random frame: orthonormalize a perturbed one
    from framepaths.geometry import retract_frame

    u = retract_frame(model, x, u + 0.3 * RNG.normal(size=u.shape))
    tb = TangentBundle(model)
    om = scalarized_curvature(tb, x, u, u, tb.fiber_metric(x))
    want = constant_curvature_omega(2, 1.0)
    assert np.max(np.abs(om - want)) < 1e-9


def test_scalarized_curvature_antisymmetries():
    b = abelian_bundle()
    model = FlatTorus(2)
    x = RNG.uniform(0, 2 * np.pi, (15, 2))
    u = default_frame(model, x)
    q, _ = np.linalg.qr(RNG.normal(size=(15, 2, 2)))
    om = scalarized_curvature(b, x, u, q)
    # antisymmetric in the direction pair and fiber-antisymmetric (o(n) valued)
    assert np.max(np.abs(om + np.einsum("pjist->pijst", om))) < 1e-12
    assert np.max(np.abs(om + np.einsum("pjits->pjist", om))) < 1e-10


def test_curvature_trace_is_minus_scalarized_ricci():
    model, x, u = sphere_states(20)
    tb = TangentBundle(model)
    om = scalarized_curvature(tb, x, u, u, tb.fiber_metric(x))
    trace = np.einsum("pjiki->pkj", om)
    ric = np.einsum("pka,pab,pbj->pkj", np.swapaxes(u, -1, -2), model.ricci(x), u)
    assert np.max(np.abs(trace + ric)) < 1e-9


def test_invert_frames():
    model, x, u = sphere_states(10)
    g = model.metric(x)
    inv = invert_frames(u, g)
    assert np.max(np.abs(inv @ u - np.eye(2))) < 1e-12
    q, _ = np.linalg.qr(RNG.normal(size=(10, 3, 3)))
    assert np.max(np.abs(invert_frames(q) @ q - np.eye(3))) < 1e-12


def test_geometry_omega_constant_paths():
    model = Sphere(2, radius=2.0)
    geom = BundleGeometry(model, TangentBundle(model), TrivialBundle(1))
    assert geom.omega_is_constant(0)
    assert geom.omega_is_constant(1)
    assert geom.omega_is_constant(2)
    assert np.allclose(geom.omega_constant(1), constant_curvature_omega(2, 0.25))
    assert np.all(geom.omega_constant(2) == 0)
    torus_geom = BundleGeometry(FlatTorus(2), abelian_bundle(), TrivialBundle(1))
    assert not torus_geom.omega_is_constant(1)


def test_extended_flow_keeps_tm_frame_aligned_and_orthonormal():
    model = Sphere(2)
    geom = BundleGeometry(model, TangentBundle(model), TrivialBundle(1))
    state = geom.initial_state([1.1, 0.7], [0.4, -0.2], n_batch=6)
    w = RNG.normal(size=(6, 2))
    out = geom.flow(state, w, 0.3)
    assert np.max(np.abs(out.u1 - out.u)) < 1e-12
    assert np.max(orthonormality_defect(model, out.x, out.u)) < 1e-10
    assert np.all(out.y == state.y)
    assert np.all(out.u2 == 1.0)


def test_extended_flow_reversibility_with_curved_bundle():
    geom = BundleGeometry(FlatTorus(2), abelian_bundle(), TrivialBundle(2))
    state = geom.initial_state([0.5, 1.2], [0.1, 0.3], n_batch=4)
    w = RNG.normal(size=(4, 2))
    mid = geom.flow(state, w, 0.25)
    # curved connection rotates the bundle frame while the base frame stays
    assert np.max(np.abs(mid.u - state.u)) < 1e-12
    assert np.max(np.abs(mid.u1 - state.u1)) > 1e-3
    back = geom.flow(mid, -w, 0.25)
    assert np.max(np.abs(back.x - state.x)) < 1e-9
    assert np.max(np.abs(back.u1 - state.u1)) < 1e-8
    # bundle frame stays orthogonal
    e = np.einsum("pka,pkb->pab", mid.u1, mid.u1)
    assert np.max(np.abs(e - np.eye(2))) < 1e-10
