"""Algebraic regrouping of the damped commutation source terms into the path
functionals: with N the damping-weight matrix and M the damping matrix,

    (N Phi)_j - sum_i M_{ji} (DF)(V_{1,i})  =  (-A1 + A2 + A3)_j

is an exact contraction identity in the evaluated quantities (no flows, no
randomness in the check itself). Both sides are assembled here from one
shared set of primitive arrays, so the check isolates the regrouping algebra
from the differential-operator layer.

`nbar` picks the weight reading N^j_k = N[j, k] ("row", default) or N[k, j]
("col"); the damping coefficient M^j_i is always M[j, i]. The identity holds
for either nbar reading used consistently; it holds for the displayed and the
completed variant of the source terms, each paired with its own drift.
"""

from __future__ import annotations

import numpy as np

from .identities import expansion_terms


def random_pieces(rng, m=2, n1=2, n2=2, p=4, with_orbit=True):
    """Unstructured primitive arrays. The only structure imposed is symmetry
    of the fiber Hessian in its two derivative slots, which the regrouping
    genuinely uses (it holds for any actual second derivative); everything
    else is left raw so the check is as strong as possible."""
    def r(*shape):
        return rng.normal(size=(p,) + shape)

    d2f = r(n2, n1, n1)
    pieces = {
        "f": r(n2),
        "hf": r(m, n2),
        "df": r(n2, n1),
        "d2f": 0.5 * (d2f + np.swapaxes(d2f, -1, -2)),
        "hdf": r(m, n2, n1),
        "v": r(m + 1, n1),
        "dv": r(m + 1, n1, n1),
        "dv2": r(m + 1, n1, n1, n1),
        "hv": r(m, m + 1, n1),
        "hdy": r(m, m + 1, n1, n1),
        "hh": r(m, m, m + 1, n1),
        "om1": r(m, m, n1, n1),
        "om2": r(m, m, n2, n2),
        "hom1": r(m, m, m, n1, n1),
        "hom2": r(m, m, m, n2, n2),
        "y": r(n1),
        "orbit": r(m, m, m + 1, n1) if with_orbit else None,
    }
    return pieces


def _weights(n, nbar):
    if nbar == "row":
        return n
    if nbar == "col":
        return np.swapaxes(n, -1, -2)
    raise ValueError("nbar must be 'row' or 'col'")


def regroup_report(pieces, m_mat, n_mat, nbar="row", variant="completed"):
    """Assemble both sides; returns lhs, rhs, the A terms and the residual."""
    nsel = _weights(n_mat, nbar)
    df, d2f, hdf, f, hf = (pieces[k] for k in ("df", "d2f", "hdf", "f", "hf"))
    v, dv, hv, hdy, hh = (pieces[k] for k in ("v", "dv", "hv", "hdy", "hh"))
    om1, om2, hom1, hom2, y = (pieces[k] for k in ("om1", "om2", "hom1", "hom2", "y"))
    vdiff, dvdiff = v[:, 1:], dv[:, 1:]

    terms = expansion_terms(pieces, variant)
    phi = sum(terms.values())                              # (P, k, n2)
    dfv = np.einsum("pra,pia->pir", df, vdiff)             # (DF)(V_{1,i})
    lhs = np.einsum("pjk,pkr->pjr", nsel, phi) - np.einsum("pji,pir->pjr", m_mat, dfv)

    k1 = np.einsum("pjk,pkiab->pjiab", nsel, om1)
    k2 = np.einsum("pjk,pkirs->pjirs", nsel, om2)
    hom1d = np.einsum("pikiab->pikab", hom1)               # H_i omega1[k, i]
    hom2d = np.einsum("pikirs->pikrs", hom2)
    hik1 = np.einsum("pjk,pikab->pjiab", nsel, hom1d)
    hik2 = np.einsum("pjk,pikrs->pjirs", nsel, hom2d)

    a1 = (
        np.einsum("pjirs,pis->pjr", k2, hf)
        + 0.5 * np.einsum("pjirs,ps->pjr", hik2, f)
        + np.einsum("pjirs,pis->pjr", k2, dfv)
    )

    nbarv = np.einsum("pjk,pkia->pjia", nsel, hv[:, :, 1:, :])
    k1y = np.einsum("pjiab,pb->pjia", k1, y)
    x2 = hdf + np.einsum("prab,pib->pira", d2f, vdiff)
    a2 = np.einsum("pira,pjia->pjr", x2, nbarv + k1y)

    nbarv0 = np.einsum("pjk,pka->pja", nsel, hv[:, :, 0, :])
    m_v = np.einsum("pji,pia->pja", m_mat, vdiff)
    ndv = np.einsum("pjk,pkiab->pjiab", nsel, hdy[:, :, 1:, :, :])
    hh_diag = np.stack([hh[:, i, :, 1 + i, :] for i in range(hh.shape[1])], axis=1)
    nhh = np.einsum("pjk,pika->pja", nsel, hh_diag)
    b = 0.5 * (
        np.einsum("pjiab,pb->pja", hik1, y)
        + np.einsum("pjiab,pib->pja", ndv, vdiff)
        + np.einsum("piab,pjib->pja", dvdiff, nbarv)
        + np.einsum("piab,pjib->pja", dvdiff, k1y)
        + nhh
    )
    c3 = nbarv0 - m_v + b
    if variant == "completed":
        extra = (
            np.einsum("pjiab,pib->pja", k1, vdiff)
            - 0.5 * np.einsum("piab,pjib->pja", dvdiff, k1y)
        )
        orbit = pieces.get("orbit")
        if orbit is not None:
            orb_diag = np.stack(
                [orbit[:, :, i, 1 + i, :] for i in range(orbit.shape[2])], axis=2
            )
            extra = extra + 0.5 * np.einsum("pjk,pkia->pja", nsel, orb_diag)
        c3 = c3 + extra
    a3 = np.einsum("pra,pja->pjr", df, c3)

    rhs = -a1 + a2 + a3
    residual = lhs - rhs
    scale = max(float(np.max(np.abs(lhs))), 1.0)
    return {
        "lhs": lhs,
        "rhs": rhs,
        "a1": a1,
        "a2": a2,
        "a3": a3,
        "residual": residual,
        "max_residual": float(np.max(np.abs(residual))),
        "scale": scale,
    }


def check_regroup(seed=0, p=6, m=2, n1=2, n2=2, nbar="row", variant="completed"):
    """Self-contained randomized instance of the regrouping identity."""
    rng = np.random.default_rng(seed)
    pieces = random_pieces(rng, m=m, n1=n1, n2=n2, p=p)
    m_mat = rng.normal(size=(p, m, m))
    n_mat = rng.normal(size=(p, m, m))
    return regroup_report(pieces, m_mat, n_mat, nbar=nbar, variant=variant)
