"""Vertical (fiber) drift/diffusion fields and fiber-valued test functions.

Vertical field specs provide the drift field (slot 0) and one diffusion field
per base direction (slots 1..m), each mapping an extended state to a fiber
vector of bundle 1, together with the analytic derivatives the generator
expansion and the path drifts consume:

    values  V_f                      (P, m+1, n1)
    dy      D V_f   (fiber deriv.)   (P, m+1, n1, n1)
    dy2     D^2 V_f                  (P, m+1, n1, n1, n1)
    h       H_k V_f (horiz. deriv.)  (P, k, m+1, n1)
    h_dy    H_k (D V_f)              (P, k, m+1, n1, n1)
    hh      H_l H_k V_f              (P, l, k, m+1, n1)

`h*` may return None, in which case callers fall back to flow differencing.
Test functions are equivariant maps F(state) = u2^{-1} f(x, u1 Y) with f
polynomial of degree <= 2 in the fiber argument.
"""

from __future__ import annotations

import numpy as np

from .bundles import invert_frames

__all__ = [
    "TrigTensor",
    "VerticalFieldSpec",
    "ZeroVerticalFields",
    "AffineVerticalFields",
    "EquivariantVerticalFields",
    "FiberPolynomialMap",
    "random_trig_tensor",
    "random_fiber_polynomial",
]


class TrigTensor:
    """Tensor-valued function of chart coordinates of the form
    const + sum_q C_q sin(k_q . x + phi_q), with analytic first and second
    coordinate derivatives. Smooth on periodic charts for integer wave
    vectors and on any chart otherwise."""

    def __init__(self, shape, const=None, terms=()):
        self.shape = tuple(shape)
        self.const = np.zeros(self.shape) if const is None else np.asarray(const, dtype=float)
        if self.const.shape != self.shape:
            raise ValueError("const shape mismatch")
        self.terms = []
        for coef, wave, phase in terms:
            coef = np.asarray(coef, dtype=float)
            wave = np.asarray(wave, dtype=float)
            if coef.shape != self.shape:
                raise ValueError("term coefficient shape mismatch")
            self.terms.append((coef, wave, float(phase)))

    @property
    def is_zero(self):
        return not self.terms and not np.any(self.const)

    @property
    def is_constant(self):
        return not self.terms

    def value(self, x):
        x = np.asarray(x, dtype=float)
        batch = x.shape[:-1]
        out = np.broadcast_to(self.const, batch + self.shape).copy()
        for coef, wave, phase in self.terms:
            s = np.sin(x @ wave + phase)
            out += s.reshape(batch + (1,) * len(self.shape)) * coef
        return out

    def grad(self, x):
        """d/dx_c, returned as (..., c, *shape)."""
        x = np.asarray(x, dtype=float)
        batch = x.shape[:-1]
        m = x.shape[-1]
        out = np.zeros(batch + (m,) + self.shape)
        for coef, wave, phase in self.terms:
            c = np.cos(x @ wave + phase)
            out += (
                c.reshape(batch + (1,) * (1 + len(self.shape)))
                * wave.reshape((m,) + (1,) * len(self.shape))
                * coef
            )
        return out

    def hess(self, x):
        """d^2/dx_c dx_d, returned as (..., c, d, *shape)."""
        x = np.asarray(x, dtype=float)
        batch = x.shape[:-1]
        m = x.shape[-1]
        out = np.zeros(batch + (m, m) + self.shape)
        for coef, wave, phase in self.terms:
            s = np.sin(x @ wave + phase)
            kk = np.einsum("c,d->cd", wave, wave)
            out -= (
                s.reshape(batch + (1,) * (2 + len(self.shape)))
                * kk.reshape((m, m) + (1,) * len(self.shape))
                * coef
            )
        return out


def random_trig_tensor(shape, rng, n_terms=2, scale=0.3, max_wave=2):
    """Seeded smooth tensor field with integer wave vectors (chart-periodic)."""
    m = 2
    const = scale * rng.normal(size=shape)
    terms = []
    for _ in range(n_terms):
        coef = scale * rng.normal(size=shape)
        wave = rng.integers(-max_wave, max_wave + 1, size=m).astype(float)
        if not np.any(wave):
            wave[0] = 1.0
        terms.append((coef, wave, rng.uniform(0, 2 * np.pi)))
    return TrigTensor(shape, const, terms)


# ---------------------------------------------------------------------------
# vertical field specs

class VerticalFieldSpec:
    """Interface; see module docstring for evaluator shapes."""

    n1: int
    m: int
    is_zero = False
    reads_frames = False

    def values(self, geom, state):
        raise NotImplementedError

    def dy(self, geom, state):
        raise NotImplementedError

    def dy2(self, geom, state):
        p, n1 = state.y.shape
        return np.zeros((p, self.m + 1, n1, n1, n1))

    def h(self, geom, state):
        return None

    def h_dy(self, geom, state):
        return None

    def hh(self, geom, state):
        return None

    def hh_diag(self, geom, state):
        """hh with the outer horizontal index tied to the displayed component,
        shape (P, i, k, n1); the drift of the derived process needs only this
        slice."""
        hh = self.hh(geom, state)
        return np.stack([hh[:, i, :, 1 + i, :] for i in range(self.m)], axis=1)


class ZeroVerticalFields(VerticalFieldSpec):
    """No fiber drift or diffusion; the fiber coordinates stay frozen."""

    is_zero = True

    def __init__(self, n1, m):
        self.n1 = int(n1)
        self.m = int(m)

    def _zeros(self, state, tail):
        return np.zeros((state.x.shape[0],) + tail)

    def values(self, geom, state):
        return self._zeros(state, (self.m + 1, self.n1))

    def dy(self, geom, state):
        return self._zeros(state, (self.m + 1, self.n1, self.n1))

    def h(self, geom, state):
        return self._zeros(state, (self.m, self.m + 1, self.n1))

    def h_dy(self, geom, state):
        return self._zeros(state, (self.m, self.m + 1, self.n1, self.n1))

    def hh(self, geom, state):
        return self._zeros(state, (self.m, self.m, self.m + 1, self.n1))

    def hh_diag(self, geom, state):
        return self._zeros(state, (self.m, self.m, self.n1))


class AffineVerticalFields(VerticalFieldSpec):
    """V_f(x, Y) = a_f(x) Y + b_f(x) with smooth coefficient fields; reads the
    base point and fiber coordinates only, never the frames (so its derivative
    along vertical frame orbits vanishes identically).

    a: TrigTensor of shape (m+1, n1, n1); b: TrigTensor of shape (m+1, n1).
    """

    def __init__(self, a, b, m):
        self.a = a
        self.b = b
        self.m = int(m)
        self.n1 = b.shape[-1]
        if a.shape != (m + 1, self.n1, self.n1) or b.shape != (m + 1, self.n1):
            raise ValueError("coefficient tensor shapes do not match (m+1, n1)")
        self.is_zero = a.is_zero and b.is_zero
        self._grad_cache = None

    def values(self, geom, state):
        return np.einsum("pfab,pb->pfa", self.a.value(state.x), state.y) + self.b.value(state.x)

    def dy(self, geom, state):
        return self.a.value(state.x)

    def _grads(self, x):
        # the engine evaluates h, h_dy and hh_diag on the same state; keep
        # the last gradient pair keyed on the coordinate array identity
        c = self._grad_cache
        if c is not None and c[0] is x:
            return c[1], c[2]
        da, db = self.a.grad(x), self.b.grad(x)
        self._grad_cache = (x, da, db)
        return da, db

    def _coeff_h(self, state):
        # (grad a) Y + grad b, shape (P, c, f, n1)
        da, db = self._grads(state.x)
        p = state.x.shape[0]
        return np.matmul(
            da.reshape(p, -1, self.n1), state.y[:, :, None]
        ).reshape(db.shape) + db

    def h(self, geom, state):
        # H_k acts through the base point: (grad coeff) . (u e_k)
        coeff = self._coeff_h(state)            # (P, c, f, n1)
        p, c, f, a = coeff.shape
        flat = coeff.reshape(p, c, f * a).transpose(0, 2, 1)
        out = np.matmul(flat, state.u)          # (P, f*a, k)
        return out.reshape(p, f, a, c).transpose(0, 3, 1, 2)

    def h_dy(self, geom, state):
        da = self._grads(state.x)[0]
        p, c, f, a, b = da.shape
        flat = da.reshape(p, c, f * a * b).transpose(0, 2, 1)
        out = np.matmul(flat, state.u)
        return out.reshape(p, f, a, b, c).transpose(0, 4, 1, 2, 3)

    def _duek(self, geom, state):
        # H_l(u e_k)^c = -Gamma^c_{de} (u e_l)^d (u e_k)^e, shape (P, l, k, c)
        u = state.u
        gam = geom.model.christoffels(state.x)
        p, m = u.shape[0], u.shape[-1]
        ge = np.matmul(gam.reshape(p, -1, m), u).reshape(p, m, m, m)
        gel = np.matmul(
            ge.transpose(0, 1, 3, 2).reshape(p, -1, m), u
        ).reshape(p, m, m, m)                   # (P, c, k, l)
        return -gel.transpose(0, 3, 2, 1)

    def hh(self, geom, state):
        # H_l H_k V = hess(coeff)(ue_l, ue_k) + grad(coeff)(H_l(u e_k))
        u = state.u
        duek = self._duek(geom, state)
        d2a, d2b = self.a.hess(state.x), self.b.hess(state.x)
        da, db = self._grads(state.x)
        out = (
            np.einsum("pcdfab,pcl,pdk,pb->plkfa", d2a, u, u, state.y)
            + np.einsum("pcdfa,pcl,pdk->plkfa", d2b, u, u)
            + np.einsum("pcfab,plkc,pb->plkfa", da, duek, state.y)
            + np.einsum("pcfa,plkc->plkfa", db, duek)
        )
        return out

    def hh_diag(self, geom, state):
        u = state.u
        p, m, n1 = state.x.shape[0], self.m, self.n1
        duek = self._duek(geom, state)
        d2b = self.b.hess(state.x)              # (P, c, d, f, n1)
        a2 = np.matmul(
            self.a.hess(state.x).reshape(p, -1, n1), state.y[:, :, None]
        ).reshape(d2b.shape) + d2b
        a2d = a2[:, :, :, 1:, :]                # f tied to the l that follows
        # sum over c paired with l, then over d against u e_k
        t = np.matmul(
            a2d.transpose(0, 3, 2, 4, 1).reshape(p, m, -1, m),
            u.transpose(0, 2, 1)[:, :, :, None],
        ).reshape(p, m, m, n1)                  # (P, l, d, n1)
        out12 = np.matmul(t.transpose(0, 1, 3, 2), u[:, None])

        bd = self._coeff_h(state)[:, :, 1:, :]  # (P, c, l, n1)
        out34 = np.matmul(
            bd.transpose(0, 2, 3, 1), duek.transpose(0, 1, 3, 2)
        )                                       # (P, l, n1, k)
        return (out12 + out34).transpose(0, 1, 3, 2)


class EquivariantVerticalFields(VerticalFieldSpec):
    """V_f(state) = u1^{-1} v_f(x, u1 Y) with v_f(x, y) = a_f(x) y + b_f(x):
    the equivariant extension of a fiber-bundle map. Reads the bundle frame,
    so its vertical-orbit derivative is nonzero; horizontal derivatives are
    left to flow differencing."""

    reads_frames = True

    def __init__(self, a, b, m):
        self.a = a
        self.b = b
        self.m = int(m)
        self.n1 = b.shape[-1]
        self.is_zero = a.is_zero and b.is_zero

    def _u1inv(self, geom, state):
        return invert_frames(state.u1, geom.bundle1.fiber_metric(state.x))

    def values(self, geom, state):
        inner = np.einsum("pab,pb->pa", state.u1, state.y)
        v = np.einsum("pfab,pb->pfa", self.a.value(state.x), inner) + self.b.value(state.x)
        return np.einsum("pas,pfs->pfa", self._u1inv(geom, state), v)

    def dy(self, geom, state):
        u1inv = self._u1inv(geom, state)
        return np.einsum("pas,pfst,ptb->pfab", u1inv, self.a.value(state.x), state.u1)


# ---------------------------------------------------------------------------
# equivariant test functions

class FiberPolynomialMap:
    """F(state) = u2^{-1} f(x, u1 Y) with
    f_r(x, y) = alpha_r(x) + beta_{ra}(x) y_a + (1/2) gamma_{rab}(x) y_a y_b.

    alpha: TrigTensor (n2,); beta: (n2, n1); gamma: (n2, n1, n1), symmetrized.
    Provides the fiber value and its first/second fiber derivatives in the
    scalarized coordinates Y.
    """

    def __init__(self, alpha, beta, gamma=None):
        self.alpha = alpha
        self.beta = beta
        self.n2 = beta.shape[0]
        self.n1 = beta.shape[1]
        self.gamma = gamma

    def _parts(self, geom, state):
        u2inv = invert_frames(state.u2, geom.bundle2.fiber_metric(state.x))
        inner = np.einsum("pab,pb->pa", state.u1, state.y)
        return u2inv, inner

    def _gamma_sym(self, x):
        g = self.gamma.value(x)
        return 0.5 * (g + np.einsum("prab->prba", g))

    def value(self, geom, state):
        u2inv, y = self._parts(geom, state)
        f = self.alpha.value(state.x) + np.einsum("pra,pa->pr", self.beta.value(state.x), y)
        if self.gamma is not None:
            f += 0.5 * np.einsum("prab,pa,pb->pr", self._gamma_sym(state.x), y, y)
        return np.einsum("prs,ps->pr", u2inv, f)

    def dy(self, geom, state):
        u2inv, y = self._parts(geom, state)
        df = self.beta.value(state.x)
        if self.gamma is not None:
            df = df + np.einsum("prab,pb->pra", self._gamma_sym(state.x), y)
        return np.einsum("prs,psa,pab->prb", u2inv, df, state.u1)

    def dy2(self, geom, state):
        p = state.x.shape[0]
        if self.gamma is None:
            return np.zeros((p, self.n2, self.n1, self.n1))
        u2inv, _ = self._parts(geom, state)
        return np.einsum(
            "prs,psab,pac,pbd->prcd", u2inv, self._gamma_sym(state.x), state.u1, state.u1
        )

    def dy3(self, geom, state):
        # the fiber dependence is quadratic
        p = state.x.shape[0]
        return np.zeros((p, self.n2, self.n1, self.n1, self.n1))


def random_fiber_polynomial(n2, n1, rng, quadratic=True, scale=0.4):
    alpha = random_trig_tensor((n2,), rng, scale=scale)
    beta = random_trig_tensor((n2, n1), rng, scale=scale)
    gamma = random_trig_tensor((n2, n1, n1), rng, scale=scale) if quadratic else None
    return FiberPolynomialMap(alpha, beta, gamma)
