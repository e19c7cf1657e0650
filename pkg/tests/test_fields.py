import numpy as np
import pytest

from framepaths import (
    AffineVerticalFields,
    EquivariantVerticalFields,
    FiberPolynomialMap,
    TrigTensor,
    ZeroVerticalFields,
    get_scenario,
)
from framepaths.fields import random_fiber_polynomial, random_trig_tensor
from framepaths.verify import orbit_derivative, sample_states, vertical_h, ygrad


def _fd_grad(fn, x, h=1e-6):
    m = x.shape[-1]
    cols = []
    for c in range(m):
        e = np.zeros_like(x)
        e[..., c] = h
        cols.append((fn(x + e) - fn(x - e)) / (2.0 * h))
    return np.stack(cols, axis=1)


def test_trig_tensor_value_grad_hess_consistent():
    rng = np.random.default_rng(0)
    t = random_trig_tensor((3, 2), rng, n_terms=3, scale=0.5)
    x = rng.uniform(0, 2 * np.pi, size=(7, 2))
    g_fd = _fd_grad(t.value, x)
    assert np.max(np.abs(g_fd - t.grad(x))) < 1e-8
    h_fd = _fd_grad(t.grad, x, h=1e-5)
    # grad output has the derivative axis first; match the nesting order
    assert np.max(np.abs(h_fd - np.swapaxes(t.hess(x), 1, 2))) < 1e-6


def test_trig_tensor_flags():
    zero = TrigTensor((2,), const=np.zeros(2))
    assert zero.is_zero and zero.is_constant
    const = TrigTensor((2,), const=np.array([1.0, 0.0]))
    assert const.is_constant and not const.is_zero
    rng = np.random.default_rng(1)
    wavy = random_trig_tensor((2,), rng)
    assert not wavy.is_constant


def test_zero_vertical_fields():
    sc = get_scenario("flat-classical")
    z = ZeroVerticalFields(n1=1, m=2)
    st = sc.initial_state(4)
    assert z.is_zero
    assert np.all(z.values(sc.geom, st) == 0.0)
    assert np.all(z.dy(sc.geom, st) == 0.0)
    hv, hdy, hh = vertical_h(sc.geom, z, st)
    assert np.all(hv == 0.0) and np.all(hdy == 0.0) and np.all(hh == 0.0)


class _Opaque:
    """Wrapper hiding the analytic horizontal derivatives of a field spec,
    forcing the flow-difference fallback."""

    def __init__(self, inner):
        self._inner = inner
        self.n1 = inner.n1
        self.m = inner.m
        self.is_zero = inner.is_zero
        self.reads_frames = inner.reads_frames

    def values(self, geom, state):
        return self._inner.values(geom, state)

    def dy(self, geom, state):
        return self._inner.dy(geom, state)

    def dy2(self, geom, state):
        return self._inner.dy2(geom, state)

    def h(self, geom, state):
        return None

    def h_dy(self, geom, state):
        return None

    def hh(self, geom, state):
        return None


@pytest.mark.parametrize("name", ["flat-vector", "sphere-tm"])
def test_affine_fields_analytic_h_matches_flow_differencing(name):
    sc = get_scenario(name)
    rng = np.random.default_rng(3)
    st = sample_states(sc.geom, 16, rng)
    hv_a, hdy_a, hh_a = vertical_h(sc.geom, sc.vfields, st)
    hv_f, hdy_f, hh_f = vertical_h(sc.geom, _Opaque(sc.vfields), st)
    assert np.max(np.abs(hv_a - hv_f)) < 1e-6
    assert np.max(np.abs(hdy_a - hdy_f)) < 1e-6
    assert np.max(np.abs(hh_a - hh_f)) < 2e-4


@pytest.mark.parametrize("name", ["flat-vector", "sphere-tm"])
def test_affine_fields_dy_matches_fd(name):
    sc = get_scenario(name)
    rng = np.random.default_rng(4)
    st = sample_states(sc.geom, 16, rng)
    dy_fd = ygrad(lambda s: sc.vfields.values(sc.geom, s), st, 1e-5)
    assert np.max(np.abs(dy_fd - sc.vfields.dy(sc.geom, st))) < 1e-7
    assert np.all(sc.vfields.dy2(sc.geom, st) == 0.0)


def test_affine_fields_orbit_derivative_is_zero():
    sc = get_scenario("torus-curved-fiber")
    rng = np.random.default_rng(5)
    st = sample_states(sc.geom, 8, rng)
    orb = orbit_derivative(sc.geom, sc.vfields, st)
    assert np.max(np.abs(orb)) == 0.0


def _equivariant_pair(geom, seed=11):
    rng = np.random.default_rng(seed)
    a = random_trig_tensor((geom.m + 1, geom.n1, geom.n1), rng, scale=0.25)
    b = random_trig_tensor((geom.m + 1, geom.n1), rng, scale=0.3)
    return EquivariantVerticalFields(a, b, geom.m)


def test_equivariant_fields_values_and_dy():
    sc = get_scenario("torus-curved-fiber")
    eq = _equivariant_pair(sc.geom)
    rng = np.random.default_rng(6)
    st = sample_states(sc.geom, 12, rng)
    u1inv = np.swapaxes(st.u1, -1, -2)
    inner = np.einsum("pab,pb->pa", st.u1, st.y)
    want = np.einsum("pas,pfst,pt->pfa", u1inv, eq.a.value(st.x), inner)
    want = want + np.einsum("pas,pfs->pfa", u1inv, eq.b.value(st.x))
    assert np.max(np.abs(eq.values(sc.geom, st) - want)) < 1e-12
    dy_fd = ygrad(lambda s: eq.values(sc.geom, s), st, 1e-5)
    assert np.max(np.abs(dy_fd - eq.dy(sc.geom, st))) < 1e-7


def test_equivariant_orbit_matches_closed_form():
    # for V = u1^{-1} v(x, u1 Y) the vertical-orbit derivative along the
    # curvature direction is (DV)(omega1 Y) - omega1 V
    sc = get_scenario("torus-curved-fiber")
    eq = _equivariant_pair(sc.geom)
    rng = np.random.default_rng(7)
    st = sample_states(sc.geom, 12, rng)
    orb = orbit_derivative(sc.geom, eq, st)
    om1 = sc.geom.omega(1, st)
    v = eq.values(sc.geom, st)
    dv = eq.dy(sc.geom, st)
    om1y = np.einsum("pjiab,pb->pjia", om1, st.y)
    want = np.einsum("pfab,pjib->pjifa", dv, om1y) - np.einsum(
        "pjiab,pfb->pjifa", om1, v
    )
    assert np.max(np.abs(orb - want)) < 1e-7


def test_fiber_polynomial_equivariance():
    rng = np.random.default_rng(8)
    sc = get_scenario("sphere-two-tangent")
    phi = sc.test_function
    st = sample_states(sc.geom, 10, rng)
    base = phi.value(sc.geom, st)

    # rotate the fiber frame of the argument bundle and counter-rotate Y
    q = np.linalg.qr(rng.normal(size=(10, sc.geom.n1, sc.geom.n1)))[0]
    st_rot = st.copy()
    st_rot.u1 = st.u1 @ q
    st_rot.y = np.einsum("pba,pb->pa", q, st.y)
    assert np.max(np.abs(phi.value(sc.geom, st_rot) - base)) < 1e-10

    # rotate the value-side frame: the scalarized value counter-rotates
    r = np.linalg.qr(rng.normal(size=(10, sc.geom.n2, sc.geom.n2)))[0]
    st_val = st.copy()
    st_val.u2 = st.u2 @ r
    got = phi.value(sc.geom, st_val)
    want = np.einsum("psr,ps->pr", r, base)
    assert np.max(np.abs(got - want)) < 1e-10


def test_fiber_polynomial_y_derivatives():
    rng = np.random.default_rng(9)
    phi = random_fiber_polynomial(3, 2, rng)
    sc = get_scenario("flat-vector")
    # a rank-3 value bundle over the same geometry: reuse states, the map
    # only consumes x, u1, u2, y through shapes that match n1 = 2
    st = sample_states(sc.geom, 9, rng)
    st.u2 = np.broadcast_to(np.eye(3), (9, 3, 3)).copy()
    dy_fd = ygrad(lambda s: phi.value(sc.geom, s), st, 1e-5)
    assert np.max(np.abs(dy_fd - phi.dy(sc.geom, st))) < 1e-7
    d2_fd = ygrad(lambda s: phi.dy(sc.geom, s), st, 1e-5)
    assert np.max(np.abs(d2_fd - phi.dy2(sc.geom, st))) < 1e-7
    assert np.all(phi.dy3(sc.geom, st) == 0.0)
