"""Identity checkers: frame flow commutators, the commutation expansion of
the horizontal gradient against the generator, and the fiber-derivative
commutation. Each checker returns a report dict with the individual term
arrays, so tests can recombine them and demonstrate that flipping any term
breaks the identity.
"""

from __future__ import annotations

import numpy as np

from .operators import (
    DELTA,
    apply_generator,
    hgrad,
    orbit_derivative,
    vertical_h,
    ygrad,
)


def check_flow_commutator(geom, state, delta=DELTA, per_state=False):
    """Nested flow differences of the coordinate functions measure the
    commutator [H_j, H_i]; its base part vanishes and its frame parts move
    each frame u_l with velocity u_l omega^{(l)}[j, i].

    With `per_state` the residual entries are arrays over the batch axis
    instead of maxima over the whole batch.
    """
    m = geom.m

    def coords(s):
        parts = [s.x.reshape(s.x.shape[0], -1), s.u.reshape(s.u.shape[0], -1),
                 s.u1.reshape(s.u1.shape[0], -1), s.u2.reshape(s.u2.shape[0], -1)]
        return np.concatenate(parts, axis=-1)

    def h_of_coords(s):
        return hgrad(geom, coords, s, delta)        # (P, i, dim)

    nested = hgrad(geom, h_of_coords, state, delta)  # (P, j, i, dim)
    comm = nested - np.swapaxes(nested, 1, 2)

    p = state.x.shape[0]
    oms = [geom.omega(level, state) for level in range(3)]
    sizes = [state.x.shape[-1], state.u[0].size, state.u1[0].size, state.u2[0].size]
    splits = np.cumsum(sizes)[:-1]
    cx, cu, cu1, cu2 = np.split(comm, splits, axis=-1)

    expected_u = np.einsum("pst,pjitq->pjisq", state.u, oms[0]).reshape(p, m, m, -1)
    expected_u1 = np.einsum("pst,pjitq->pjisq", state.u1, oms[1]).reshape(p, m, m, -1)
    expected_u2 = np.einsum("pst,pjitq->pjisq", state.u2, oms[2]).reshape(p, m, m, -1)

    tail = tuple(range(1, comm.ndim))
    if per_state:
        res = {
            "base": np.max(np.abs(cx), axis=tail),
            "frame_base": np.max(np.abs(cu - expected_u), axis=tail),
            "frame_bundle1": np.max(np.abs(cu1 - expected_u1), axis=tail),
            "frame_bundle2": np.max(np.abs(cu2 - expected_u2), axis=tail),
        }
        res["max_residual"] = np.maximum.reduce(list(res.values()))
        res["commutator_scale"] = np.maximum.reduce(
            [np.max(np.abs(e), axis=tail) for e in (expected_u, expected_u1, expected_u2)]
        )
        return res
    res = {
        "base": np.max(np.abs(cx)),
        "frame_base": np.max(np.abs(cu - expected_u)),
        "frame_bundle1": np.max(np.abs(cu1 - expected_u1)),
        "frame_bundle2": np.max(np.abs(cu2 - expected_u2)),
    }
    res["max_residual"] = max(res.values())
    res["commutator_scale"] = max(
        float(np.max(np.abs(e))) for e in (expected_u, expected_u1, expected_u2)
    )
    return res


def expansion_pieces(geom, vspec, phi, state, delta=DELTA):
    """All evaluated quantities the expansion terms consume, computed once."""
    value_fn = lambda s: phi.value(geom, s)
    dy_fn = lambda s: phi.dy(geom, s)
    dy2_fn = lambda s: phi.dy2(geom, s)
    hv, hdy, hh = vertical_h(geom, vspec, state, delta)

    homs = []
    for level in (1, 2):
        if geom.omega_is_constant(level):
            n = geom.bundle(level).rank
            homs.append(np.zeros(state.x.shape[:1] + (geom.m,) * 3 + (n, n)))
        else:
            homs.append(hgrad(geom, lambda s, lv=level: geom.omega(lv, s), state, delta))

    return {
        "f": value_fn(state),
        "hf": hgrad(geom, value_fn, state, delta),
        "df": dy_fn(state),
        "d2f": dy2_fn(state),
        "hdf": hgrad(geom, dy_fn, state, delta),
        "v": vspec.values(geom, state),
        "dv": vspec.dy(geom, state),
        "dv2": vspec.dy2(geom, state),
        "hv": hv,
        "hdy": hdy,
        "hh": hh,
        "om1": geom.omega(1, state),
        "om2": geom.omega(2, state),
        "hom1": homs[0],
        "hom2": homs[1],
        "y": state.y,
        "orbit": orbit_derivative(geom, vspec, state, delta),
    }


def expansion_terms(pieces, variant="completed"):
    """The five commutation source terms, each of shape (P, m, n2).

    `variant="displayed"` uses the textbook-style curvature-fiber coupling
    (1/2)(DF)((DV_{1,i})(omega^{(1)}_{ji} Y)); `variant="completed"` replaces
    it with the coupling the identity actually requires,
    (DF)(omega^{(1)}_{ji} V_{1,i}) + (1/2)(DF)(orbit derivative of V_{1,i}),
    which agrees with the displayed form only when the first bundle is flat.
    """
    if variant not in ("displayed", "completed"):
        raise ValueError("variant must be 'displayed' or 'completed'")
    om1, om2 = pieces["om1"], pieces["om2"]
    hom1, hom2 = pieces["hom1"], pieces["hom2"]
    f, hf, df, d2f, hdf = (pieces[k] for k in ("f", "hf", "df", "d2f", "hdf"))
    v, dv = pieces["v"], pieces["dv"]
    hv, hh = pieces["hv"], pieces["hh"]
    y = pieces["y"]
    vdiff = v[:, 1:]
    dvdiff = dv[:, 1:]

    # (1): curvature against the horizontal part
    om1y = np.einsum("pjiab,pb->pjia", om1, y)
    t1 = (
        -np.einsum("pjirs,pis->pjr", om2, hf)
        + np.einsum("pira,pjia->pjr", hdf, om1y)
        - 0.5 * np.einsum("pijirs,ps->pjr", hom2, f)
        + 0.5 * np.einsum("pra,pijiab,pb->pjr", df, hom1, y)
    )

    # (2): gradient direction hitting the diffusion fields twice
    hvdiff = hv[:, :, 1:, :]                       # (P, j, i, n1): H_j V_{1,i}
    hdydiff = pieces["hdy"][:, :, 1:, :, :]        # (P, j, i, n1, n1)
    t2 = (
        np.einsum("prab,pjia,pib->pjr", d2f, hvdiff, vdiff)
        + 0.5 * np.einsum("pra,pjiab,pib->pjr", df, hdydiff, vdiff)
        + 0.5 * np.einsum("pra,piab,pjib->pjr", df, dvdiff, hvdiff)
    )

    # (3): mixed horizontal/fiber second order terms; in H_i H_j V_{1,i} the
    # outer flow direction matches the diffusion index
    hh_diag = np.stack([hh[:, i, :, 1 + i, :] for i in range(hh.shape[1])], axis=1)
    t3 = (
        np.einsum("pira,pjia->pjr", hdf, hvdiff)
        + 0.5 * np.einsum("pra,pja->pjr", df, hh_diag.sum(axis=1))
    )

    # (4): curvature against the diffusion fields
    dfv = np.einsum("psa,pia->pis", df, vdiff)
    t4 = (
        np.einsum("prab,pia,pjib->pjr", d2f, vdiff, om1y)
        - np.einsum("pjirs,pis->pjr", om2, dfv)
    )
    if variant == "displayed":
        dv_om1y = np.einsum("piab,pjib->pjia", dvdiff, om1y)
        t4 = t4 + 0.5 * np.einsum("pra,pjia->pjr", df, dv_om1y)
    else:
        om1v = np.einsum("pjiab,pib->pjia", om1, vdiff)
        t4 = t4 + np.einsum("pra,pjia->pjr", df, om1v)
        orbit = pieces.get("orbit")
        if orbit is not None and np.any(orbit):
            orb_diag = np.stack(
                [orbit[:, :, i, 1 + i, :] for i in range(orbit.shape[2])], axis=2
            )
            t4 = t4 + 0.5 * np.einsum("pra,pjia->pjr", df, orb_diag)

    # (5): gradient of the drift field
    t5 = np.einsum("pra,pja->pjr", df, hv[:, :, 0, :])

    return {"t1": t1, "t2": t2, "t3": t3, "t4": t4, "t5": t5}


def check_expansion(geom, vspec, phi, state, variant="completed", delta=3e-4):
    """Check  H_j(L F) = L(H_j F) - (1/2) Ric(ue_j, ue_k) H_k F + sum of terms.

    Returns a report with `lhs`, `l_hgrad`, `ric_term`, the five term arrays,
    `rhs`, `residual` (array) and `max_residual`.

    The default step is larger than for the single-layer checks: the left
    side stacks three finite differences, so rounding error grows like
    eps / delta^3 and the optimum sits near 3e-4 rather than 1e-4.
    """
    value_fn = lambda s: phi.value(geom, s)
    dy_fn = lambda s: phi.dy(geom, s)
    dy2_fn = lambda s: phi.dy2(geom, s)

    def lf(s):
        return apply_generator(geom, vspec, value_fn, dy_fn, dy2_fn, s, delta)

    lhs = hgrad(geom, lf, state, delta)                      # (P, m, n2)

    l_hgrad = apply_generator(
        geom, vspec,
        lambda s: hgrad(geom, value_fn, s, delta),
        lambda s: hgrad(geom, dy_fn, s, delta),
        lambda s: hgrad(geom, dy2_fn, s, delta),
        state, delta,
    )

    ric = geom.model.ricci(state.x)
    ric_u = np.einsum("pka,pab,pbj->pkj", np.swapaxes(state.u, -1, -2), ric, state.u)
    hf = hgrad(geom, value_fn, state, delta)
    ric_term = -0.5 * np.einsum("pjk,pkr->pjr", ric_u, hf)

    pieces = expansion_pieces(geom, vspec, phi, state, delta)
    terms = expansion_terms(pieces, variant)
    rhs = l_hgrad + ric_term + sum(terms.values())
    residual = lhs - rhs
    report = {
        "lhs": lhs,
        "l_hgrad": l_hgrad,
        "ric_term": ric_term,
        "rhs": rhs,
        "residual": residual,
        "max_residual": float(np.max(np.abs(residual))),
        "variant": variant,
    }
    report.update(terms)
    return report


def check_second_commutation(geom, vspec, phi, state, delta=3e-4):
    """Check  D(L F) = L(D F) + A4 + A5  with

        A4 = sum_i ((D^2 F)(V_{1,i}) + D H_i F) (D V_{1,i})
        A5 = (D F) [ sum_i (1/2)((D^2 V_{1,i})(V_{1,i}) + (D V_{1,i})(D V_{1,i})
                     + H_i (D V_{1,i})) + D V_0 ]

    Uses the same enlarged default step as the expansion check (stacked
    finite differences).
    """
    value_fn = lambda s: phi.value(geom, s)
    dy_fn = lambda s: phi.dy(geom, s)
    dy2_fn = lambda s: phi.dy2(geom, s)
    dy3_fn = lambda s: phi.dy3(geom, s)

    def lf(s):
        return apply_generator(geom, vspec, value_fn, dy_fn, dy2_fn, s, delta)

    lhs = ygrad(lf, state, delta)                            # (P, n2, n1)

    l_df = apply_generator(geom, vspec, dy_fn, dy2_fn, dy3_fn, state, delta)

    v = vspec.values(geom, state)
    vdiff = v[:, 1:]
    dv = vspec.dy(geom, state)
    dvdiff = dv[:, 1:]
    dv2 = vspec.dy2(geom, state)
    _, hdy, _ = vertical_h(geom, vspec, state, delta)
    hdf = hgrad(geom, dy_fn, state, delta)
    d2f = dy2_fn(state)
    df = dy_fn(state)

    x4 = np.einsum("prab,pib->pira", d2f, vdiff) + hdf
    a4 = np.einsum("pira,piab->prb", x4, dvdiff)

    mat = (
        0.5 * np.einsum("piabc,pic->piab", dv2[:, 1:], vdiff).sum(axis=1)
        + 0.5 * np.einsum("piac,picb->pab", dvdiff, dvdiff)
        + 0.5 * np.einsum("piiab->pab", hdy[:, :, 1:, :, :])
        + dv[:, 0]
    )
    a5 = np.einsum("pra,pab->prb", df, mat)

    rhs = l_df + a4 + a5
    residual = lhs - rhs
    return {
        "lhs": lhs,
        "l_df": l_df,
        "a4": a4,
        "a5": a5,
        "rhs": rhs,
        "residual": residual,
        "max_residual": float(np.max(np.abs(residual))),
    }
