"""Chart-based Riemannian geometry with batched metric, connection and
curvature evaluation, plus orthonormal-frame transport along horizontal flows.

All point arrays are batched with shape (P, m); tensors gain trailing axes.
Index order: christoffels[p, a, b, c] = Gamma^a_{bc}, riemann[p, a, b, c, d]
= R^a_{bcd} with R(e_c, e_d) e_b = R^a_{bcd} e_a, ricci[p, b, d] = R^a_{bad}.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ManifoldModel",
    "FlatTorus",
    "Sphere",
    "spd_inverse_sqrt",
    "default_frame",
    "retract_frame",
    "orthonormality_defect",
    "horizontal_velocity",
    "flow_horizontal",
    "geodesic_shift",
    "fd_christoffels",
    "fd_riemann",
]


def _as_points(x, m):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[-1] != m:
        raise ValueError(f"points must have last axis {m}, got {x.shape}")
    return x


class ManifoldModel:
    """A coordinate chart with a Riemannian metric.

    Subclasses provide `metric` and may override the analytic connection and
    curvature methods; otherwise finite-difference fallbacks from the metric
    are used. `ricci_scalar_constant` is set when Ric(ue_i, ue_j) = c * I for
    every orthonormal frame u, which enables exact damping factors downstream.
    """

    m: int
    ricci_scalar_constant = None   # scalar c with scalarized Ric = c * I, if constant
    sectional_constant = None      # constant sectional curvature K, if any
    is_flat = False

    def metric(self, x):
        raise NotImplementedError

    def metric_inverse(self, x):
        g = self.metric(_as_points(x, self.m))
        return np.linalg.inv(g)

    def christoffels(self, x):
        return fd_christoffels(self, x)

    def riemann(self, x):
        return fd_riemann(self, x)

    def ricci(self, x):
        r = self.riemann(x)
        # Ric_{bd} = R^a_{bad}
        return np.einsum("pabad->pbd", r)

    def wrap(self, x):
        """Map coordinates to canonical chart values (periodic wrap)."""
        return np.array(x, dtype=float, copy=True)

    def in_domain(self, x):
        x = _as_points(x, self.m)
        return np.ones(x.shape[:-1], dtype=bool)

    def displacement(self, x_to, x_from):
        """Coordinate difference x_to - x_from, shortest representative for
        periodic coordinates. Used by finite-difference quotients."""
        return np.asarray(x_to, dtype=float) - np.asarray(x_from, dtype=float)


class FlatTorus(ManifoldModel):
    """Euclidean metric on a periodic box; geodesics are straight lines."""

    is_flat = True
    ricci_scalar_constant = 0.0
    sectional_constant = 0.0

    def __init__(self, m=2, periods=None):
        self.m = int(m)
        if periods is None:
            periods = (2.0 * np.pi,) * self.m
        self.periods = np.asarray(periods, dtype=float)
        if self.periods.shape != (self.m,) or not np.all(self.periods > 0):
            raise ValueError("periods must be m positive floats")

    def metric(self, x):
        x = _as_points(x, self.m)
        return np.broadcast_to(np.eye(self.m), x.shape[:-1] + (self.m, self.m)).copy()

    def metric_inverse(self, x):
        return self.metric(x)

    def christoffels(self, x):
        x = _as_points(x, self.m)
        return np.zeros(x.shape[:-1] + (self.m,) * 3)

    def riemann(self, x):
        x = _as_points(x, self.m)
        return np.zeros(x.shape[:-1] + (self.m,) * 4)

    def ricci(self, x):
        x = _as_points(x, self.m)
        return np.zeros(x.shape[:-1] + (self.m, self.m))

    def wrap(self, x):
        return np.mod(x, self.periods)

    def displacement(self, x_to, x_from):
        d = np.asarray(x_to, dtype=float) - np.asarray(x_from, dtype=float)
        return (d + self.periods / 2.0) % self.periods - self.periods / 2.0


class Sphere(ManifoldModel):
    """Round sphere of dimension n in spherical coordinates.

    Coordinates (x_1, ..., x_n): x_1..x_{n-1} are polar angles in (0, pi),
    x_n is the azimuth (periodic). The chart domain keeps polar angles inside
    [margin, pi - margin]; paths leaving it are rejected upstream.
    """

    def __init__(self, n=2, radius=1.0, margin=0.05):
        self.m = int(n)
        if self.m < 2:
            raise ValueError("sphere dimension must be >= 2")
        self.radius = float(radius)
        self.margin = float(margin)
        self.sectional_constant = 1.0 / self.radius**2
        # scalarized Ricci of a constant-curvature space is (m-1)K * identity
        self.ricci_scalar_constant = (self.m - 1) / self.radius**2

    def metric(self, x):
        x = _as_points(x, self.m)
        diag = np.empty(x.shape[:-1] + (self.m,))
        diag[..., 0] = self.radius**2
        for i in range(1, self.m):
            diag[..., i] = diag[..., i - 1] * np.sin(x[..., i - 1]) ** 2
        g = np.zeros(x.shape[:-1] + (self.m, self.m))
        idx = np.arange(self.m)
        g[..., idx, idx] = diag
        return g

    def metric_inverse(self, x):
        g = self.metric(x)
        ginv = np.zeros_like(g)
        idx = np.arange(self.m)
        ginv[..., idx, idx] = 1.0 / g[..., idx, idx]
        return ginv

    def christoffels(self, x):
        if self.m != 2:
            return fd_christoffels(self, x)
        x = _as_points(x, 2)
        th = x[..., 0]
        gam = np.zeros(x.shape[:-1] + (2, 2, 2))
        gam[..., 0, 1, 1] = -np.sin(th) * np.cos(th)
        cot = np.cos(th) / np.sin(th)
        gam[..., 1, 0, 1] = cot
        gam[..., 1, 1, 0] = cot
        return gam

    def riemann(self, x):
        x = _as_points(x, self.m)
        g = self.metric(x)
        k = self.sectional_constant
        eye = np.eye(self.m)
        # constant curvature: R^a_{bcd} = K (delta^a_c g_{db} - delta^a_d g_{cb})
        return k * (
            np.einsum("ac,pdb->pabcd", eye, g) - np.einsum("ad,pcb->pabcd", eye, g)
        )

    def ricci(self, x):
        g = self.metric(x)
        return (self.m - 1) * self.sectional_constant * g

    def wrap(self, x):
        x = np.array(x, dtype=float, copy=True)
        x[..., -1] = np.mod(x[..., -1], 2.0 * np.pi)
        return x

    def in_domain(self, x):
        x = _as_points(x, self.m)
        polar = x[..., :-1]
        lo = self.margin
        hi = np.pi - self.margin
        ok = np.all((polar >= lo) & (polar <= hi), axis=-1)
        return ok & np.all(np.isfinite(x), axis=-1)

    def displacement(self, x_to, x_from):
        d = np.asarray(x_to, dtype=float) - np.asarray(x_from, dtype=float)
        d[..., -1] = (d[..., -1] + np.pi) % (2.0 * np.pi) - np.pi
        return d

    # -- isometric recentring -------------------------------------------------
    #
    # The spherical chart degenerates at the poles (the azimuthal Christoffel
    # terms grow like cot of the polar angle), so integrating steps directly
    # in chart coordinates is ill-conditioned for paths that wander near a
    # pole. The chart itself is only a gauge: rotating the sphere so the
    # current point sits at the chart center, stepping there (where the
    # Christoffel symbols vanish), and rotating back is exact in law and
    # uniformly well conditioned. These helpers provide the embedding, its
    # Jacobian, the inverse chart map and the rotation.

    has_recentring = True

    def chart_center(self):
        """Chart coordinates of the recentring target: all polar angles at
        the equator, azimuth zero."""
        c = np.full(self.m, 0.5 * np.pi)
        c[-1] = 0.0
        return c

    def embed(self, x):
        """Unit-sphere embedding scaled by the radius, shape (..., m+1)."""
        x = _as_points(x, self.m)
        s = np.sin(x)
        c = np.cos(x)
        p = np.empty(x.shape[:-1] + (self.m + 1,))
        run = np.full(x.shape[:-1], self.radius)
        for k in range(self.m):
            p[..., k] = run * c[..., k]
            run = run * s[..., k]
        p[..., self.m] = run
        return p

    def embed_jacobian(self, x):
        """d(embed)/dx, shape (..., m+1, m); satisfies J^T J = g exactly."""
        x = _as_points(x, self.m)
        s = np.sin(x)
        c = np.cos(x)
        jac = np.zeros(x.shape[:-1] + (self.m + 1, self.m))
        for j in range(self.m):
            # derivative turns the j-th factor sin -> cos (or cos -> -sin)
            run = np.full(x.shape[:-1], self.radius)
            for k in range(self.m):
                if k < j:
                    run = run * s[..., k]
                elif k == j:
                    jac[..., k, j] = -run * s[..., k]
                    run = run * c[..., k]
                else:
                    jac[..., k, j] = run * c[..., k]
                    run = run * s[..., k]
            jac[..., self.m, j] = run
        return jac

    def unembed(self, p):
        """Inverse chart map, polar angles in [0, pi], azimuth in [0, 2 pi)."""
        p = np.asarray(p, dtype=float)
        x = np.empty(p.shape[:-1] + (self.m,))
        tail = np.sqrt(np.cumsum(p[..., ::-1] ** 2, axis=-1))[..., ::-1]
        for i in range(self.m - 1):
            x[..., i] = np.arctan2(tail[..., i + 1], p[..., i])
        x[..., self.m - 1] = np.mod(
            np.arctan2(p[..., self.m], p[..., self.m - 1]), 2.0 * np.pi
        )
        return x

    def recentring_rotation(self, x):
        """Rotation R with R @ embed(x) = embed(chart_center())."""
        a = self.embed(x) / self.radius
        b = np.zeros(self.m + 1)
        b[self.m - 1] = 1.0
        b = np.broadcast_to(b, a.shape)
        return minimal_rotation(a, b)


def minimal_rotation(a, b):
    """Batched rotation taking unit vector a to unit vector b, acting as the
    identity on the orthogonal complement of span(a, b). Falls back to a
    composed rotation when a is close to -b, where the minimal rotation is
    ill-defined."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.shape[-1]
    dot = np.einsum("...k,...k->...", a, b)
    bad = dot < -1.0 + 1e-6
    if np.any(bad):
        # pre-rotate the degenerate rows by a quarter turn in the plane of
        # the first axis and b's dominant axis, then take the minimal rotation
        out = np.empty(a.shape[:-1] + (n, n))
        good = ~bad
        if np.any(good):
            out[good] = minimal_rotation(a[good], b[good])
        axis = np.argmax(np.abs(b[bad]), axis=-1)
        partner = np.where(axis == 0, 1, 0)
        q = np.zeros((axis.size, n, n))
        q[:] = np.eye(n)
        rows = np.arange(axis.size)
        q[rows, partner, partner] = 0.0
        q[rows, axis, axis] = 0.0
        q[rows, axis, partner] = 1.0
        q[rows, partner, axis] = -1.0
        a_rot = np.einsum("pij,pj->pi", q, a[bad])
        out[bad] = np.einsum("pij,pjk->pik", minimal_rotation(a_rot, b[bad]), q)
        return out
    apb = a + b
    denom = (1.0 + dot)[..., None, None]
    r = np.broadcast_to(np.eye(n), a.shape[:-1] + (n, n)).copy()
    r -= apb[..., :, None] * apb[..., None, :] / denom
    r += 2.0 * b[..., :, None] * a[..., None, :]
    return r


# ---------------------------------------------------------------------------
# finite-difference fallbacks from the metric

def _central_diff(fun, x, step):
    """d(fun)/dx_c by central differences; returns (..., c, *fun_shape)."""
    x = np.asarray(x, dtype=float)
    m = x.shape[-1]
    cols = []
    for c in range(m):
        e = np.zeros(m)
        e[c] = step
        cols.append((fun(x + e) - fun(x - e)) / (2.0 * step))
    # batch axes first, then the derivative index, then the tensor axes
    return np.stack(cols, axis=x.ndim - 1)


def fd_christoffels(model, x, step=1e-5):
    """Gamma^a_{bc} = (1/2) g^{ad} (d_b g_{dc} + d_c g_{db} - d_d g_{bc})."""
    x = _as_points(x, model.m)
    dg = _central_diff(model.metric, x, step)          # (P, c, m, m) = d_c g_{ab}
    ginv = model.metric_inverse(x)
    term = (
        np.einsum("pbdc->pdbc", dg)
        + np.einsum("pcdb->pdbc", dg)
        - np.einsum("pdbc->pdbc", dg)
    )
    return 0.5 * np.einsum("pad,pdbc->pabc", ginv, term)


def fd_riemann(model, x, step=1e-4):
    """R^a_{bcd} from central differences of the connection coefficients."""
    x = _as_points(x, model.m)
    dgam = _central_diff(model.christoffels, x, step)  # (P, e, a, b, c) = d_e Gamma^a_{bc}
    gam = model.christoffels(x)
    r = (
        np.einsum("pcadb->pabcd", dgam)
        - np.einsum("pdacb->pabcd", dgam)
        + np.einsum("pace,pedb->pabcd", gam, gam)
        - np.einsum("pade,pecb->pabcd", gam, gam)
    )
    return r


# ---------------------------------------------------------------------------
# orthonormal frames

def spd_inverse_sqrt(e):
    """Inverse principal square root of batched SPD matrices.

    Closed form for 1x1 and 2x2 (sqrt(E) = (E + sqrt(det) I)/sqrt(tr + 2 sqrt(det)),
    whose determinant is sqrt(det E)); symmetric eigendecomposition otherwise.
    """
    e = np.asarray(e, dtype=float)
    n = e.shape[-1]
    if n == 1:
        return 1.0 / np.sqrt(e)
    if n == 2:
        a = e[..., 0, 0]
        b = 0.5 * (e[..., 0, 1] + e[..., 1, 0])
        c = e[..., 1, 1]
        s = np.sqrt(a * c - b * b)
        tau = np.sqrt(a + c + 2.0 * s)
        out = np.empty_like(e)
        denom = s * tau
        out[..., 0, 0] = (c + s) / denom
        out[..., 0, 1] = -b / denom
        out[..., 1, 0] = -b / denom
        out[..., 1, 1] = (a + s) / denom
        return out
    w, v = np.linalg.eigh(0.5 * (e + np.swapaxes(e, -1, -2)))
    return np.einsum("...ik,...k,...jk->...ij", v, 1.0 / np.sqrt(w), v)


def default_frame(model, x):
    """Metric-orthonormal frame g(x)^{-1/2} (columns are frame vectors)."""
    x = _as_points(x, model.m)
    return spd_inverse_sqrt(model.metric(x))


def retract_frame(model, x, u):
    """Project frame columns back onto the orthonormal-frame manifold:
    u <- u (u^T g(x) u)^{-1/2}. Idempotent to rounding."""
    g = model.metric(_as_points(x, model.m))
    e = np.einsum("...ka,...kl,...lb->...ab", u, g, u)
    return u @ spd_inverse_sqrt(e)


def orthonormality_defect(model, x, u):
    """max |u^T g u - I| per batch element."""
    g = model.metric(_as_points(x, model.m))
    e = np.einsum("...ka,...kl,...lb->...ab", u, g, u)
    e = e - np.eye(u.shape[-1])
    return np.max(np.abs(e), axis=(-2, -1))


# ---------------------------------------------------------------------------
# horizontal transport on the base frame

def horizontal_velocity(model, x, u, w):
    """Velocity of the horizontal lift in direction sum_j w_j (u e_j).

    Returns (dx, du): dx = u w, du^a_k = -Gamma^a_{bc} dx^b u^c_k.
    `w` holds fixed frame components, shape (..., m).
    """
    dx = np.einsum("...ak,...k->...a", u, w)
    gam = model.christoffels(x)
    du = -np.einsum("...abc,...b,...ck->...ak", gam, dx, u)
    return dx, du


def _rk4_base(model, x, u, w, t):
    k1x, k1u = horizontal_velocity(model, x, u, w)
    k2x, k2u = horizontal_velocity(model, x + 0.5 * t * k1x, u + 0.5 * t * k1u, w)
    k3x, k3u = horizontal_velocity(model, x + 0.5 * t * k2x, u + 0.5 * t * k2u, w)
    k4x, k4u = horizontal_velocity(model, x + t * k3x, u + t * k3u, w)
    x1 = x + (t / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    u1 = u + (t / 6.0) * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
    return x1, u1


def flow_horizontal(model, x, u, w, t, n_sub=None):
    """Flow (x, u) for time t along the horizontal field with fixed frame
    components w, by RK4 substeps. Frames are retracted at the end."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if n_sub is None:
        n_sub = max(1, int(np.ceil(abs(t) / 0.01)))
    dt = t / n_sub
    for _ in range(n_sub):
        x, u = _rk4_base(model, x, u, w, dt)
    u = retract_frame(model, x, u)
    return x, u


def geodesic_shift(model, x, u, j, eps, n_sub=None):
    """Start of the geodesic through x with initial velocity u e_j, evaluated
    at arc parameter eps, with the frame parallel-transported along it."""
    w = np.zeros(u.shape[:-2] + (model.m,))
    w[..., j] = 1.0
    return flow_horizontal(model, x, u, w, eps, n_sub=n_sub)
