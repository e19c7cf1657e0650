"""Metric vector bundles with connections over a chart, extended frame states
(base frame + one frame per bundle + fiber coordinates), scalarized curvature
operators, and horizontal flows of extended states.

Scalarized curvature convention, fixed by the frame flow commutator: for a
frame u_l of bundle l and base frame u,

    omega^{(l)}[j, i] = u_l^{-1} F_l(u e_i, u e_j) u_l,

an antisymmetric (rank x rank) matrix for each base direction pair, so that
the vertical part of [H_j, H_i] moves u_l with velocity u_l @ omega^{(l)}[j, i].
For the tangent bundle with constant sectional curvature K this evaluates to
(omega[j, i])_{st} = K (delta_{si} delta_{jt} - delta_{sj} delta_{it})
independently of the frame. Summing the contraction over the second slot,
sum_i (omega[j, i])_{ki} = -Ric(u e_k, u e_j): the trace carries a minus sign
relative to the scalarized Ricci form, which is positive on spheres.
"""

from __future__ import annotations

import numpy as np

from .geometry import retract_frame, spd_inverse_sqrt

__all__ = [
    "BundleModel",
    "TrivialBundle",
    "TangentBundle",
    "CallableBundle",
    "FrameState",
    "BundleGeometry",
    "invert_frames",
    "scalarized_curvature",
]


class BundleModel:
    """A rank-n metric vector bundle with a metric connection, in a gauge
    where the fiber metric is constant (identity for trivial bundles, the
    base metric for the tangent bundle)."""

    rank: int
    is_flat = False        # connection form identically zero
    is_tangent = False

    def connection(self, x):
        """A[p, b, s, t]: connection coefficient matrix for base direction b."""
        raise NotImplementedError

    def curvature(self, x):
        """F[p, b, c, s, t] = (d_b A_c - d_c A_b + [A_b, A_c])_{st}."""
        return fd_bundle_curvature(self, x)

    def fiber_metric(self, x):
        """None means the identity matrix."""
        return None

    def transport_velocity(self, x, dx, ul):
        """d(u_l) along base velocity dx: -A(dx) u_l."""
        a = self.connection(x)
        return -np.einsum("...bst,...b,...tk->...sk", a, dx, ul)


class TrivialBundle(BundleModel):
    """Product bundle with the flat connection; frames stay put."""

    is_flat = True

    def __init__(self, rank):
        self.rank = int(rank)

    def connection(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (x.shape[-1], self.rank, self.rank))

    def curvature(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (x.shape[-1],) * 2 + (self.rank, self.rank))

    def transport_velocity(self, x, dx, ul):
        return np.zeros_like(ul)


class TangentBundle(BundleModel):
    """The tangent bundle with the Levi-Civita connection of the base."""

    is_tangent = True

    def __init__(self, manifold):
        self.manifold = manifold
        self.rank = manifold.m

    def connection(self, x):
        # (A_b)^s_t = Gamma^s_{bt}
        gam = self.manifold.christoffels(x)
        return np.einsum("...sbt->...bst", gam)

    def curvature(self, x):
        # (F_{bc})^s_t = R^s_{tbc}
        r = self.manifold.riemann(x)
        return np.einsum("...stbc->...bcst", r)

    def fiber_metric(self, x):
        return self.manifold.metric(x)

    def transport_velocity(self, x, dx, ul):
        gam = self.manifold.christoffels(x)
        m = dx.shape[-1]
        # contract the middle slot: (Gamma . dx)^s_t, then apply to the frame
        gd = np.matmul(
            np.swapaxes(gam, -1, -2).reshape(gam.shape[:-3] + (m * m, m)),
            dx[..., None],
        ).reshape(gam.shape[:-3] + (m, m))
        return -np.matmul(gd, ul)


class CallableBundle(BundleModel):
    """Bundle defined by a user-supplied connection map x -> A (batched);
    curvature is supplied analytically or obtained by finite differences."""

    def __init__(self, rank, connection_fn, curvature_fn=None):
        self.rank = int(rank)
        self._connection_fn = connection_fn
        self._curvature_fn = curvature_fn

    def connection(self, x):
        return self._connection_fn(np.asarray(x, dtype=float))

    def curvature(self, x):
        if self._curvature_fn is not None:
            return self._curvature_fn(np.asarray(x, dtype=float))
        return fd_bundle_curvature(self, x)


def fd_bundle_curvature(bundle, x, step=1e-5):
    """F_{bc} = d_b A_c - d_c A_b + [A_b, A_c] with central differences."""
    x = np.asarray(x, dtype=float)
    m = x.shape[-1]
    da = []
    for b in range(m):
        e = np.zeros(m)
        e[b] = step
        da.append((bundle.connection(x + e) - bundle.connection(x - e)) / (2 * step))
    da = np.stack(da, axis=x.ndim - 1)           # (..., b, c, s, t)
    a = bundle.connection(x)
    comm = np.einsum("...bsu,...cut->...bcst", a, a)
    return da - np.einsum("...cbst->...bcst", da) + comm - np.einsum("...cbst->...bcst", comm)


def invert_frames(ul, fiber_metric=None):
    """Inverse of frame matrices orthonormal for the fiber metric: the
    transpose (identity metric) or u^T g. Exact only up to the retraction
    tolerance, which is far below the finite-difference noise floor."""
    if fiber_metric is None:
        return np.swapaxes(ul, -1, -2)
    return np.einsum("...ts,...tq->...sq", ul, fiber_metric)


def scalarized_curvature(bundle, x, u, ul, fiber_metric=None):
    """omega[p, j, i, s, t] = (u_l^{-1} F(u e_i, u e_j) u_l)_{st}."""
    f = bundle.curvature(x)
    fji = np.einsum("...bcst,...bi,...cj->...jist", f, u, u)
    ulinv = invert_frames(ul, fiber_metric)
    return np.einsum("...sq,...jiqr,...rt->...jist", ulinv, fji, ul)


def constant_curvature_omega(m, k):
    """Frame-independent scalarized tangent-bundle curvature of a constant
    sectional curvature K space: omega[j,i]_{st} = K(d_si d_jt - d_sj d_it)."""
    eye = np.eye(m)
    return k * (np.einsum("si,jt->jist", eye, eye) - np.einsum("sj,it->jist", eye, eye))


# ---------------------------------------------------------------------------
# extended states

class FrameState:
    """Batched point of the extended frame bundle: base point and frame,
    one frame per vector bundle, and scalarized fiber coordinates."""

    __slots__ = ("x", "u", "u1", "u2", "y")

    def __init__(self, x, u, u1, u2, y):
        self.x = np.asarray(x, dtype=float)
        self.u = np.asarray(u, dtype=float)
        self.u1 = np.asarray(u1, dtype=float)
        self.u2 = np.asarray(u2, dtype=float)
        self.y = np.asarray(y, dtype=float)

    @property
    def n_batch(self):
        return self.x.shape[0]

    def copy(self):
        return FrameState(self.x.copy(), self.u.copy(), self.u1.copy(),
                          self.u2.copy(), self.y.copy())

    def with_y(self, y):
        return FrameState(self.x, self.u, self.u1, self.u2, y)

    def take(self, idx):
        return FrameState(self.x[idx], self.u[idx], self.u1[idx],
                          self.u2[idx], self.y[idx])


class BundleGeometry:
    """A base manifold together with the two bundles the functionals live on:
    fiber arguments come from bundle 1, values land in bundle 2."""

    def __init__(self, model, bundle1, bundle2):
        self.model = model
        self.bundle1 = bundle1
        self.bundle2 = bundle2
        self.tangent = TangentBundle(model)

    @property
    def m(self):
        return self.model.m

    @property
    def n1(self):
        return self.bundle1.rank

    @property
    def n2(self):
        return self.bundle2.rank

    def bundle(self, level):
        return (self.tangent, self.bundle1, self.bundle2)[level]

    def omega_is_constant(self, level):
        """True when the scalarized curvature is constant along horizontal
        transport: its flow derivatives vanish, and on paths whose fiber
        frame starts aligned with the base frame it stays equal to
        `omega_constant`. Holds for flat bundles and for tangent bundles
        over constant-curvature manifolds (the relative rotation between
        the two frames is parallel)."""
        b = self.bundle(level)
        if b.is_flat:
            return True
        if b.is_tangent:
            return self.model.sectional_constant is not None
        return False

    def omega_constant(self, level):
        """The transport-invariant scalarized curvature in the aligned
        gauge (tangent-bundle frame equal to the base frame)."""
        b = self.bundle(level)
        if b.is_flat:
            return np.zeros((self.m, self.m, b.rank, b.rank))
        if b.is_tangent and self.model.sectional_constant is not None:
            return constant_curvature_omega(self.m, self.model.sectional_constant)
        raise ValueError("scalarized curvature is state dependent for this bundle")

    def omega(self, level, state):
        """Scalarized curvature at a batched state, shape (P, m, m, n_l, n_l).
        Always evaluated in the state's own fiber frame; the constant
        shortcut only applies to flat bundles, since a tangent-bundle state
        need not have its fiber frame aligned with the base frame."""
        b = self.bundle(level)
        if b.is_flat:
            base = self.omega_constant(level)
            return np.broadcast_to(base, state.x.shape[:-1] + base.shape)
        ul = (state.u, state.u1, state.u2)[level]
        return scalarized_curvature(b, state.x, state.u, ul, b.fiber_metric(state.x))

    # -- flows ---------------------------------------------------------------

    def _velocity(self, state, w):
        dx = np.matmul(state.u, w[..., None])[..., 0]
        if self.model.is_flat:
            du = np.zeros_like(state.u)
        else:
            gam = self.model.christoffels(state.x)
            m = dx.shape[-1]
            gd = np.matmul(
                np.swapaxes(gam, -1, -2).reshape(gam.shape[:-3] + (m * m, m)),
                dx[..., None],
            ).reshape(gam.shape[:-3] + (m, m))
            du = -np.matmul(gd, state.u)
        du1 = self.bundle1.transport_velocity(state.x, dx, state.u1)
        du2 = self.bundle2.transport_velocity(state.x, dx, state.u2)
        return dx, du, du1, du2

    def _rk4(self, state, w, t):
        def shifted(c, kx, ku, k1, k2):
            return FrameState(state.x + c * kx, state.u + c * ku,
                              state.u1 + c * k1, state.u2 + c * k2, state.y)

        k1 = self._velocity(state, w)
        k2 = self._velocity(shifted(0.5 * t, *k1), w)
        k3 = self._velocity(shifted(0.5 * t, *k2), w)
        k4 = self._velocity(shifted(t, *k3), w)
        parts = [
            (t / 6.0) * (a + 2.0 * b + 2.0 * c + d)
            for a, b, c, d in zip(k1, k2, k3, k4)
        ]
        return FrameState(state.x + parts[0], state.u + parts[1],
                          state.u1 + parts[2], state.u2 + parts[3], state.y)

    @property
    def frames_move(self):
        """False when every frame velocity is identically zero (flat base
        metric and flat bundles), so transported frames stay bitwise equal
        to their start values and retraction is a no-op."""
        return not (self.model.is_flat and self.bundle1.is_flat
                    and self.bundle2.is_flat)

    # -- isometric recentring --------------------------------------------------

    @property
    def can_recenter(self):
        return getattr(self.model, "has_recentring", False)

    def recenter(self, state):
        """Carry the state to the recentred gauge: rotate the manifold so the
        base point sits at the chart center. Tangent-bundle frames rotate
        with the base frame; trivial-bundle frames and fiber coordinates are
        gauge invariant. Returns the local state and the rotation."""
        model = self.model
        rot = model.recentring_rotation(state.x)
        x_loc = model.unembed(np.matmul(rot, model.embed(state.x)[..., None])[..., 0])
        return self._carry(state, rot, x_loc), rot

    def uncenter(self, state_loc, rot):
        """Inverse of `recenter` for any state near the chart center."""
        model = self.model
        rot_t = np.swapaxes(rot, -1, -2)
        x = model.unembed(
            np.matmul(rot_t, model.embed(state_loc.x)[..., None])[..., 0]
        )
        return self._carry(state_loc, rot_t, x)

    def _carry(self, state, rot, x_to):
        model = self.model
        j_from = model.embed_jacobian(state.x)
        j_to = model.embed_jacobian(x_to)
        ginv_to = model.metric_inverse(x_to)

        # carrier = g^{-1}(x_to) J(x_to)^T R J(x_from); one matrix per path,
        # applied to every transported frame
        proj = np.matmul(ginv_to, np.swapaxes(j_to, -1, -2))
        carrier = np.matmul(proj, np.matmul(rot, j_from))

        u = np.matmul(carrier, state.u)
        u1 = np.matmul(carrier, state.u1) if self.bundle1.is_tangent else state.u1
        u2 = np.matmul(carrier, state.u2) if self.bundle2.is_tangent else state.u2
        return FrameState(x_to, u, u1, u2, state.y)

    def retract(self, state):
        if not self.frames_move:
            return state
        u = retract_frame(self.model, state.x, state.u)
        u1 = _retract_bundle_frame(self.bundle1, state.x, state.u1)
        u2 = _retract_bundle_frame(self.bundle2, state.x, state.u2)
        return FrameState(state.x, u, u1, u2, state.y)

    def flow(self, state, w, t, n_sub=None):
        """Flow the extended state along the horizontal field with fixed frame
        components w for time t (RK4), retracting frames at the end.
        The fiber coordinates ride along unchanged."""
        if n_sub is None:
            n_sub = max(1, int(np.ceil(abs(t) / 0.01)))
        dt = t / n_sub
        for _ in range(n_sub):
            state = self._rk4(state, w, dt)
        return self.retract(state)

    def flow_direction(self, state, j, t, n_sub=None):
        w = np.zeros(state.x.shape[:-1] + (self.m,))
        w[..., j] = 1.0
        return self.flow(state, w, t, n_sub=n_sub)

    def initial_state(self, x0, y0, n_batch=1):
        """Canonical start: metric-orthonormal coordinate-aligned frames."""
        x = np.broadcast_to(np.asarray(x0, dtype=float), (n_batch, self.m)).copy()
        g = self.model.metric(x)
        u = spd_inverse_sqrt(g)
        u1 = _initial_bundle_frame(self.bundle1, x, u)
        u2 = _initial_bundle_frame(self.bundle2, x, u)
        y = np.broadcast_to(np.asarray(y0, dtype=float), (n_batch, self.n1)).copy()
        return FrameState(x, u, u1, u2, y)


def _retract_bundle_frame(bundle, x, ul):
    gl = bundle.fiber_metric(x)
    if gl is None:
        e = np.einsum("...ka,...kb->...ab", ul, ul)
        return ul @ spd_inverse_sqrt(e)
    e = np.einsum("...ka,...kl,...lb->...ab", ul, gl, ul)
    return ul @ spd_inverse_sqrt(e)


def _initial_bundle_frame(bundle, x, u):
    if bundle.is_tangent:
        return u.copy()
    n = bundle.rank
    return np.broadcast_to(np.eye(n), x.shape[:-1] + (n, n)).copy()
