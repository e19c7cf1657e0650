"""Flow-difference differential operators on extended frame states.

Horizontal derivatives are central differences along short RK4 flows of the
canonical horizontal fields (one step; the quadrature error is far below the
difference noise). Fiber derivatives are exact when the evaluator provides
them and central differences in the fiber coordinates otherwise.
"""

from __future__ import annotations

import numpy as np

DELTA = 1e-4


def hgrad(geom, fun, state, delta=DELTA):
    """Stack of horizontal derivatives (H_j fun), shape (P, m, *fun_shape)."""
    cols = []
    for j in range(geom.m):
        sp = geom.flow_direction(state, j, +delta, n_sub=1)
        sm = geom.flow_direction(state, j, -delta, n_sub=1)
        cols.append((fun(sp) - fun(sm)) / (2.0 * delta))
    return np.stack(cols, axis=1)


def hderiv2(geom, fun, state, j, delta=DELTA, center=None):
    """Second derivative along one horizontal field."""
    sp = geom.flow_direction(state, j, +delta, n_sub=1)
    sm = geom.flow_direction(state, j, -delta, n_sub=1)
    if center is None:
        center = fun(state)
    return (fun(sp) - 2.0 * center + fun(sm)) / delta**2


def ygrad(fun, state, delta=DELTA):
    """Fiber-coordinate gradient of an evaluator, derivative index last."""
    n1 = state.y.shape[-1]
    cols = []
    for b in range(n1):
        e = np.zeros(n1)
        e[b] = delta
        cols.append((fun(state.with_y(state.y + e)) - fun(state.with_y(state.y - e)))
                    / (2.0 * delta))
    return np.stack(cols, axis=-1)


def vertical_h(geom, vspec, state, delta=DELTA):
    """(H_k V_f, H_k(D V_f), H_l H_k V_f): analytic when the spec provides
    them, flow differences otherwise."""
    hv = vspec.h(geom, state)
    if hv is None:
        hv = hgrad(geom, lambda s: vspec.values(geom, s), state, delta)
    hdy = vspec.h_dy(geom, state)
    if hdy is None:
        hdy = hgrad(geom, lambda s: vspec.dy(geom, s), state, delta)
    hh = vspec.hh(geom, state)
    if hh is None:
        def inner(s):
            got = vspec.h(geom, s)
            if got is None:
                got = hgrad(geom, lambda t: vspec.values(geom, t), s, delta)
            return got
        hh = hgrad(geom, inner, state, delta)
    return hv, hdy, hh


def _expm_small(a):
    """exp(a) for small batched square matrices by a cubic Taylor step;
    accurate to ~1e-16 for norms at the flow-difference scale."""
    eye = np.eye(a.shape[-1])
    a2 = a @ a
    return eye + a + 0.5 * a2 + (1.0 / 6.0) * (a2 @ a)


def orbit_derivative(geom, vspec, state, delta=DELTA):
    """Derivative of the vertical-field evaluator along the vertical orbit
    generated by the frame flow commutator: all three frames rotate with
    velocity u_l omega^{(l)}[j, i]. Returns (P, j, i, m+1, n1); identically
    zero for evaluators that never read the frames."""
    p = state.x.shape[0]
    m, n1 = geom.m, geom.n1
    if not vspec.reads_frames:
        return np.zeros((p, m, m, m + 1, n1))
    oms = [geom.omega(level, state) for level in range(3)]
    out = np.empty((p, m, m, m + 1, n1))
    from ..bundles import FrameState

    for j in range(m):
        for i in range(m):
            if i == j:
                out[:, j, i] = 0.0
                continue
            rots = [_expm_small(delta * om[:, j, i]) for om in oms]
            rots_m = [_expm_small(-delta * om[:, j, i]) for om in oms]
            sp = FrameState(state.x, state.u @ rots[0], state.u1 @ rots[1],
                            state.u2 @ rots[2], state.y)
            sm = FrameState(state.x, state.u @ rots_m[0], state.u1 @ rots_m[1],
                            state.u2 @ rots_m[2], state.y)
            out[:, j, i] = (vspec.values(geom, sp) - vspec.values(geom, sm)) / (2 * delta)
    return out


def apply_generator(geom, vspec, value_fn, dy_fn, dy2_fn, state, delta=DELTA):
    """The diffusion generator applied to an evaluator:

        L f = 1/2 sum_i H_i^2 f
              + sum_i (D H_i f)(V_{1,i})
              + 1/2 sum_i (D f)(H_i V_{1,i})
              + 1/2 sum_i [ (D^2 f)(V_{1,i})(V_{1,i}) + (D f)((D V_{1,i})(V_{1,i})) ]
              + (D f)(V_0)

    `value_fn(state) -> (P, *S)`; `dy_fn` appends one fiber-derivative axis,
    `dy2_fn` two. Works for any trailing shape S, so it can be applied to the
    evaluator itself, to its horizontal gradient, or to its fiber derivative.
    """
    vvals = vspec.values(geom, state)          # (P, m+1, n1)
    v0 = vvals[:, 0]
    vdiff = vvals[:, 1:]
    dv = vspec.dy(geom, state)
    center = value_fn(state)

    half_h2 = np.zeros_like(center)
    for i in range(geom.m):
        half_h2 += hderiv2(geom, value_fn, state, i, delta, center=center)
    half_h2 *= 0.5

    h_dy = hgrad(geom, dy_fn, state, delta)    # (P, i, *S, n1)
    mixed = np.einsum("pi...a,pia->p...", h_dy, vdiff)

    hv = vspec.h(geom, state)
    if hv is None:
        hv = hgrad(geom, lambda s: vspec.values(geom, s), state, delta)
    hv_diag = np.einsum("piia->pa", hv[:, :, 1:, :])   # sum_i H_i V_{1,i}

    dyv = dy_fn(state)                         # (P, *S, n1)
    dy2v = dy2_fn(state)                       # (P, *S, n1, n1)
    drift1 = 0.5 * np.einsum("p...a,pa->p...", dyv, hv_diag)
    drift2 = 0.5 * np.einsum("p...ab,pia,pib->p...", dy2v, vdiff, vdiff)
    dvv = np.einsum("piab,pib->pa", dv[:, 1:], vdiff)  # sum_i (DV_i)(V_i)
    drift3 = 0.5 * np.einsum("p...a,pa->p...", dyv, dvv)
    drift0 = np.einsum("p...a,pa->p...", dyv, v0)

    return half_h2 + mixed + drift1 + drift2 + drift3 + drift0
