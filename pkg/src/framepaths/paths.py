"""Batched path engine for the gradient representation.

One Stratonovich-Heun step advances the geometric state (base point, base
frame, two fiber frames, fiber coordinates); the damping matrix, the damped
noise integral, the damped curvature integrals and the derived fiber
processes are accumulated alongside with the endpoint rules stated below.
The same engine drives the classical scalar estimator, the bundle estimator
and the finite-difference oracle (as a fused batch over shifted starts), so
estimates that should agree do so bit for bit.

Step layout, in order:
  1.  damped noise integral: left endpoint (Ito), before the damping update
  2.  derived-process update: Euler at the left endpoint (the displayed
      system is an Ito system; averaging its coefficients over the step
      would silently add half the quadratic covariation)
  3.  geometric state: Heun predictor/corrector on the increment map,
      computed in the recentred gauge when the model provides one (the
      current point is rotated to the chart center, where the connection
      coefficients vanish, and the result rotated back; exact in law)
  4.  damping matrix update (exact exponential when the Ricci form is a
      constant multiple of the identity)
  5.  damped curvature integrals: Stratonovich, trapezoidal in the state
      and in the explicit time factor
  6.  frame retraction, domain check, coordinate wrap

Paths that leave the chart domain (predictor or corrector) are rejected and
resampled from their own retry stream; a fused batch rejects jointly across
its runs so common-random-number pairings stay intact. With recentred
stepping a rejection requires a single increment of many standard
deviations, so in practice no path is ever rejected and the sampled law
carries no conditioning bias from the chart boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import orthonormality_defect

MAX_RETRIES = 5


@dataclass
class EngineSettings:
    n_steps: int
    horizon: float
    nbar: str = "row"                 # weight reading of the damping matrix
    derived_drift: str = "corrected"  # or "displayed"
    fk_side: str = "right"            # damping update M <- M (I - h/2 Ric)
    chunk_size: int = 20000
    damping_enabled: bool = True      # False freezes M at the identity
    accumulators: bool = True         # False skips mdw/G2/derived bookkeeping

    def __post_init__(self):
        if self.nbar not in ("row", "col"):
            raise ValueError("nbar must be 'row' or 'col'")
        if self.derived_drift not in ("corrected", "displayed"):
            raise ValueError("derived_drift must be 'corrected' or 'displayed'")
        if self.fk_side not in ("right", "left"):
            raise ValueError("fk_side must be 'right' or 'left'")


@dataclass
class ChunkResult:
    """Endpoint data for one chunk of paths (run axis already folded in)."""
    f_value: np.ndarray        # (R, P, n2)   test function at the endpoint
    df_value: np.ndarray       # (R, P, n2, n1)
    mdw: np.ndarray            # (R, P, m)
    g2: np.ndarray             # (R, P, m, n2, n2)
    yd: np.ndarray             # (R, P, m, n1)
    retries: np.ndarray        # (P,)
    max_frame_defect: float    # post-retraction orthonormality, all steps
    state: object


_RECORDED = ("x", "u", "y", "yd", "m_damp", "mdw", "g1", "g2")


@dataclass
class PathRecorder:
    """Optional per-step history of every tracked quantity for a small batch.
    Snapshots cover the first simulation attempt of each path; retries are
    not re-recorded."""
    x: list = field(default_factory=list)
    u: list = field(default_factory=list)
    y: list = field(default_factory=list)
    yd: list = field(default_factory=list)
    m_damp: list = field(default_factory=list)
    mdw: list = field(default_factory=list)
    g1: list = field(default_factory=list)
    g2: list = field(default_factory=list)

    def snapshot(self, state, yd, m_damp, mdw, g1, g2):
        self.x.append(state.x.copy())
        self.u.append(state.u.copy())
        self.y.append(state.y.copy())
        self.yd.append(yd.copy())
        self.m_damp.append(m_damp.copy())
        self.mdw.append(mdw.copy())
        self.g1.append(g1.copy())
        self.g2.append(g2.copy())

    def arrays(self):
        """Dict of (n_steps+1, P, ...) arrays."""
        return {k: np.array(getattr(self, k)) for k in _RECORDED}


class PathEngine:
    """Simulates the extended process and its accumulators for one scenario.

    The vertical field spec must expose analytic fiber and horizontal
    derivatives and may not read the fiber frames; both scalarized curvature
    forms must be transport-invariant. The scenario catalog marks which
    setups qualify.
    """

    def __init__(self, scenario, settings):
        geom = scenario.geom
        vf = scenario.vfields
        if vf.reads_frames:
            raise ValueError("path engine requires frame-independent fields")
        if not (geom.omega_is_constant(1) and geom.omega_is_constant(2)):
            raise ValueError("path engine requires transport-invariant curvature forms")
        self.scenario = scenario
        self.geom = geom
        self.vf = vf
        self.phi = scenario.test_function
        self.settings = settings

        m, n1, n2 = geom.m, geom.n1, geom.n2
        self.om1 = geom.omega_constant(1)             # (m, m, n1, n1)
        self.om2 = geom.omega_constant(2)             # (m, m, n2, n2)
        self.om1_zero = not np.any(self.om1)
        self.om2_zero = not np.any(self.om2)
        model = geom.model
        self.ric_rate = None
        if model.is_flat:
            self.ric_rate = 0.0
        elif model.ricci_scalar_constant is not None:
            self.ric_rate = float(model.ricci_scalar_constant)
        # step in the recentred gauge when the model supports it: the move is
        # computed in coordinates where the connection coefficients vanish at
        # the base point, so the step is uniformly conditioned and chart
        # rejections become negligible
        self.recenter_steps = geom.can_recenter
        # diagnostic switch: run the generic matrix-damping update even when
        # the scalar shortcut applies (the two must agree to rounding)
        self._force_matrix = False

    # -- damping -------------------------------------------------------------

    def _damping_step(self, m_damp, x, u, h):
        """One update of the damping matrix; exact when Ric is scalar."""
        if not self.settings.damping_enabled:
            return m_damp
        if self.ric_rate is not None:
            return m_damp * np.exp(-0.5 * self.ric_rate * h)
        ric = self.geom.model.ricci(x)
        ric_u = np.einsum("...ka,...ab,...bj->...kj", np.swapaxes(u, -1, -2), ric, u)
        eye = np.eye(ric_u.shape[-1])
        if self.settings.fk_side == "right":
            return m_damp @ (eye - 0.5 * h * ric_u)
        return np.einsum("...jk,...kl->...jl", eye - 0.5 * h * ric_u, m_damp)

    # -- per-step coefficient assembly ----------------------------------------

    def _nsel(self, n_mat):
        if self.settings.nbar == "row":
            return n_mat
        return np.swapaxes(n_mat, -1, -2)

    def _curvature_weights(self, nsel):
        """K^(l)[j, i] = sum_k nsel[j, k] om_l[k, i]; None when flat."""
        k1 = None if self.om1_zero else np.einsum("...jk,kiab->...jiab", nsel, self.om1)
        k2 = None if self.om2_zero else np.einsum("...jk,kirs->...jirs", nsel, self.om2)
        return k1, k2

    def _derived_increment(self, state, yd, nsel, k1, m_damp, dw, h, v=None):
        """Euler increment of the derived processes at the left endpoint."""
        geom, vf = self.geom, self.vf
        if v is None:
            v = vf.values(geom, state)                # (P, m+1, n1)
        dv = vf.dy(geom, state)                       # (P, m+1, n1, n1)
        hv = vf.h(geom, state)                        # (P, k, m+1, n1)
        hdy = vf.h_dy(geom, state)                    # (P, k, m+1, n1, n1)
        hh_diag = vf.hh_diag(geom, state)             # (P, i, k, n1)
        vdiff, dvdiff = v[:, 1:], dv[:, 1:]

        nbarv = np.einsum("pjk,pkia->pjia", nsel, hv[:, :, 1:, :])
        if k1 is None:
            k1y = np.zeros_like(nbarv)
        else:
            k1y = np.einsum("pjiab,pb->pjia", k1, state.y)
        c2 = nbarv + k1y

        nbarv0 = np.einsum("pjk,pka->pja", nsel, hv[:, :, 0, :])
        m_v = np.einsum("pji,pia->pja", m_damp, vdiff)
        ndv = np.einsum("pjk,pkiab,pib->pjia", nsel, hdy[:, :, 1:, :, :], vdiff)
        nhh = np.einsum("pjk,pika->pja", nsel, hh_diag)
        c3 = nbarv0 - m_v + 0.5 * (
            ndv.sum(axis=2)
            + np.einsum("piab,pjib->pja", dvdiff, nbarv)
            + np.einsum("piab,pjib->pja", dvdiff, k1y)
            + nhh
        )
        if self.settings.derived_drift == "corrected" and k1 is not None:
            c3 = c3 + np.einsum("pjiab,pib->pja", k1, vdiff)
            c3 = c3 - 0.5 * np.einsum("piab,pjib->pja", dvdiff, k1y)

        c4 = np.einsum("piab,pjb->pjia", dvdiff, yd)
        dv2 = vf.dy2(geom, state)
        bracket = (
            0.5 * np.einsum("piabc,pic->pab", dv2[:, 1:], vdiff)
            + 0.5 * np.einsum("piac,picb->pab", dvdiff, dvdiff)
            + 0.5 * np.einsum("piiab->pab", hdy[:, :, 1:, :, :])
            + dv[:, 0]
        )
        c5 = np.einsum("pab,pjb->pja", bracket, yd)
        return np.einsum("pjia,pi->pja", c2 + c4, dw) + (c3 + c5) * h

    def _derived_increment_scalar(self, state, yd, n_t, alpha, dw, h, v=None):
        """Same increment specialised to scalar damping, where the weight
        matrix is n_t times the identity and the curvature contractions
        lose their path index."""
        geom, vf = self.geom, self.vf
        if v is None:
            v = vf.values(geom, state)
        dv = vf.dy(geom, state)
        hv = vf.h(geom, state)
        hdy = vf.h_dy(geom, state)
        vdiff, dvdiff = v[:, 1:], dv[:, 1:]

        p, m, n1 = dw.shape[0], geom.m, geom.n1
        hv_slice = hv[:, :, 1:, :]
        hdy_slice = hdy[:, :, 1:, :, :]
        nbarv = n_t * hv_slice
        if self.om1_zero:
            k1y = None
        else:
            k1c = n_t * self.om1                      # (m, m, n1, n1)
            k1y = np.matmul(state.y, k1c.reshape(-1, n1).T).reshape(p, m, m, n1)

        ndv_sum = n_t * np.matmul(
            hdy_slice.transpose(0, 1, 3, 2, 4).reshape(p, m, n1, m * n1),
            vdiff.reshape(p, 1, m * n1, 1),
        ).reshape(p, m, n1)
        dvnb = n_t * np.matmul(
            hv_slice.reshape(p, m, m * n1),
            dvdiff.transpose(0, 1, 3, 2).reshape(p, m * n1, n1),
        )
        nhh = n_t * vf.hh_diag(geom, state).sum(axis=1)
        c3 = n_t * hv[:, :, 0, :] - alpha * vdiff + 0.5 * (ndv_sum + dvnb + nhh)
        if k1y is None:
            c2 = nbarv
        else:
            c2 = nbarv + k1y
            if self.settings.derived_drift == "corrected":
                c3 = c3 + np.matmul(
                    vdiff.reshape(p, 1, -1),
                    k1c.transpose(1, 3, 0, 2).reshape(1, m * n1, m * n1),
                ).reshape(p, m, n1)
            else:
                c3 = c3 + 0.5 * np.matmul(
                    k1y.reshape(p, m, m * n1),
                    dvdiff.transpose(0, 1, 3, 2).reshape(p, m * n1, n1),
                )

        c4 = np.matmul(
            yd, dvdiff.reshape(p, m * n1, n1).transpose(0, 2, 1)
        ).reshape(p, m, m, n1)
        dv2 = vf.dy2(geom, state)
        bracket = (
            0.5 * np.matmul(
                dv2[:, 1:].transpose(0, 2, 3, 1, 4).reshape(p, n1, n1, m * n1),
                vdiff.reshape(p, 1, m * n1, 1),
            ).reshape(p, n1, n1)
            + 0.5 * np.matmul(dvdiff, dvdiff).sum(axis=1)
            + 0.5 * sum(hdy_slice[:, i, i] for i in range(m))
            + dv[:, 0]
        )
        c5 = np.matmul(yd, np.swapaxes(bracket, 1, 2))
        return np.matmul(
            (c2 + c4).transpose(0, 1, 3, 2).reshape(p, m * n1, m),
            dw[:, :, None],
        ).reshape(p, m, n1) + (c3 + c5) * h

    # -- simulation ------------------------------------------------------------

    def _simulate_block(self, state0, increments, h, recorder=None):
        """Run every path of a block to the horizon; returns endpoint data
        plus a rejection mask. `state0` may carry a leading run axis folded
        into the batch axis; rejection is reported per path after the caller
        unfolds it."""
        geom = self.geom
        settings = self.settings
        n_steps = settings.n_steps
        horizon = settings.horizon
        p = state0.x.shape[0]
        m, n1, n2 = geom.m, geom.n1, geom.n2

        state = state0.copy()
        mdw = np.zeros((p, m))
        g2 = np.zeros((p, m, n2, n2))
        g1 = np.zeros((p, m, n1, n1))
        yd = np.zeros((p, m, n1))
        rejected = np.zeros(p, dtype=bool)
        defect = 0.0
        track_acc = settings.accumulators
        skip_derived = self.vf.is_zero or not track_acc
        fields_live = not self.vf.is_zero
        frames_move = geom.frames_move
        need_g2 = track_acc and not self.om2_zero
        # the estimator never reads G1; it is integrated for dump consumers
        need_g1 = recorder is not None and not self.om1_zero

        # scalar-Ricci models damp by an exact exponential factor; generic
        # models carry the full matrix updated by the one-sided Euler rule
        scalar_damp = self.ric_rate is not None and not self._force_matrix
        rate = self.ric_rate if settings.damping_enabled else 0.0
        if scalar_damp:
            alpha = 1.0
            decay = float(np.exp(-0.5 * rate * h))
            m_damp = None
        else:
            m_damp = np.broadcast_to(np.eye(m), (p, m, m)).copy()

        if recorder is not None:
            recorder.snapshot(
                state, yd, self._damping_matrix(p, m_damp, 1.0), mdw, g1, g2
            )

        t = 0.0
        for k in range(n_steps):
            dw = increments[:, k, :]
            v_left = self.vf.values(geom, state) if fields_live else None

            if track_acc:
                if scalar_damp:
                    mdw += dw if alpha == 1.0 else alpha * dw
                else:
                    mdw += np.einsum("pji,pi->pj", m_damp, dw)

            if not skip_derived:
                if scalar_damp:
                    n_t = (horizon - t) * alpha
                    yd = yd + self._derived_increment_scalar(
                        state, yd, n_t, alpha, dw, h, v_left
                    )
                else:
                    nsel = self._nsel((horizon - t) * m_damp)
                    k1, _ = self._curvature_weights(nsel)
                    yd = yd + self._derived_increment(
                        state, yd, nsel, k1, m_damp, dw, h, v_left
                    )

            # Heun move of the geometric state
            new, pred_x, new_x = self._heun_move(state, dw, h, v_left)
            rejected |= ~geom.model.in_domain(pred_x)
            rejected |= ~geom.model.in_domain(new_x)

            if scalar_damp:
                alpha_new = alpha * decay
                if need_g2 or need_g1:
                    coef = 0.5 * (
                        (horizon - t) * alpha + (horizon - t - h) * alpha_new
                    )
                    if need_g2:
                        g2 += coef * np.einsum("jirs,pi->pjrs", self.om2, dw)
                    if need_g1:
                        g1 += coef * np.einsum("jiab,pi->pjab", self.om1, dw)
                alpha = alpha_new
            else:
                if need_g2 or need_g1:
                    k1l, k2l = self._curvature_weights(
                        self._nsel((horizon - t) * m_damp)
                    )
                m_damp = self._damping_step(m_damp, state.x, state.u, h)
                if need_g2 or need_g1:
                    k1r, k2r = self._curvature_weights(
                        self._nsel((horizon - t - h) * m_damp)
                    )
                    if need_g2:
                        g2 += np.einsum("pjirs,pi->pjrs", 0.5 * (k2l + k2r), dw)
                    if need_g1:
                        g1 += np.einsum("pjiab,pi->pjab", 0.5 * (k1l + k1r), dw)

            state = geom.retract(new)
            state.x = geom.model.wrap(state.x)
            if frames_move:
                d = orthonormality_defect(geom.model, state.x, state.u)
                live = d[~rejected]
                if live.size:
                    defect = max(defect, float(np.max(live)))
            t += h
            if recorder is not None:
                recorder.snapshot(
                    state, yd,
                    self._damping_matrix(p, m_damp, alpha if scalar_damp else None),
                    mdw, g1, g2,
                )

        if not frames_move:
            d = orthonormality_defect(geom.model, state.x, state.u)
            live = d[~rejected]
            if live.size:
                defect = float(np.max(live))
        f_val = self.phi.value(geom, state)
        df_val = self.phi.dy(geom, state)
        return state, f_val, df_val, mdw, g2, yd, rejected, defect

    def _damping_matrix(self, p, m_damp, alpha):
        """Materialise the damping matrix for recorder snapshots."""
        if m_damp is not None:
            return m_damp
        m = self.geom.m
        return np.broadcast_to(alpha * np.eye(m), (p, m, m)).copy()

    def _heun_move(self, state, dw, h, v_left=None):
        """One Heun predictor/corrector move of the geometric state. Returns
        the corrected state plus the predictor and corrector coordinates for
        the domain check.

        In the recentred gauge the frame transport is computed in local
        coordinates while the fiber velocity is evaluated on the global
        representation of the same points, since the vertical fields are
        functions of the global chart."""
        geom = self.geom
        if not self.recenter_steps:
            vel_l = self._increment_map(state, dw, h, v_left)
            pred = self._shift(state, vel_l, 1.0)
            vel_r = self._increment_map(pred, dw, h)
            new = self._shift(state, self._average(vel_l, vel_r), 1.0)
            return new, pred.x, new.x

        loc, rot = geom.recenter(state)
        if self.vf.is_zero:
            vel_l = self._increment_map(loc, dw, h)
            pred = self._shift(loc, vel_l, 1.0)
            vel_r = self._increment_map(pred, dw, h)
            new_loc = self._shift(loc, self._average(vel_l, vel_r), 1.0)
        else:
            vel_l = geom._velocity(loc, dw) + (
                self._y_velocity(state, dw, h, v_left),
            )
            pred = self._shift(loc, vel_l, 1.0)
            pred_glob = geom.uncenter(pred, rot)
            vel_r = geom._velocity(pred, dw) + (self._y_velocity(pred_glob, dw, h),)
            new_loc = self._shift(loc, self._average(vel_l, vel_r), 1.0)
        new = geom.uncenter(new_loc, rot)
        return new, pred.x, new_loc.x

    def _y_velocity(self, state, dw, h, v=None):
        if v is None:
            v = self.vf.values(self.geom, state)
        return np.einsum("pia,pi->pa", v[:, 1:], dw) + v[:, 0] * h

    def _increment_map(self, state, dw, h, v=None):
        """Stratonovich increment of (x, u, u1, u2, y) for one step."""
        dx, du, du1, du2 = self.geom._velocity(state, dw)
        if self.vf.is_zero:
            dy = np.zeros_like(state.y)
        else:
            dy = self._y_velocity(state, dw, h, v)
        return dx, du, du1, du2, dy

    @staticmethod
    def _average(a, b):
        return tuple(0.5 * (x + y) for x, y in zip(a, b))

    def _shift(self, state, vel, c):
        out = state.copy()
        out.x = state.x + c * vel[0]
        out.u = state.u + c * vel[1]
        out.u1 = state.u1 + c * vel[2]
        out.u2 = state.u2 + c * vel[3]
        out.y = state.y + c * vel[4]
        return out

    # -- chunk driver with rejection/retry -------------------------------------

    def run_chunk(self, driver, path_indices, start_states, recorder=None):
        """Simulate the given paths from each start state in `start_states`
        (a list; runs share each path's increments) with joint rejection."""
        settings = self.settings
        h = settings.horizon / settings.n_steps
        n_runs = len(start_states)
        n_paths = len(path_indices)
        retries = np.zeros(n_paths, dtype=int)
        active = np.arange(n_paths)

        results = None
        max_defect = 0.0
        while active.size:
            incr = driver.normals(
                path_indices[active], retries[active], settings.n_steps, self.geom.m
            )
            incr = incr * np.sqrt(h)
            stacked = _stack_states([s.take(active) for s in start_states])
            tiled = np.tile(incr, (n_runs, 1, 1))
            state, f_val, df_val, mdw, g2, yd, rej, defect = self._simulate_block(
                stacked, tiled, h, recorder=recorder
            )
            rej = rej.reshape(n_runs, active.size).any(axis=0)
            max_defect = max(max_defect, defect)

            block = ChunkResult(
                f_value=f_val.reshape(n_runs, active.size, -1),
                df_value=df_val.reshape(n_runs, active.size, df_val.shape[-2], -1),
                mdw=mdw.reshape(n_runs, active.size, -1),
                g2=g2.reshape((n_runs, active.size) + g2.shape[1:]),
                yd=yd.reshape((n_runs, active.size) + yd.shape[1:]),
                retries=retries,
                max_frame_defect=defect,
                state=state,
            )
            if results is None:
                results = block
            else:
                keep = active
                results.f_value[:, keep] = block.f_value
                results.df_value[:, keep] = block.df_value
                results.mdw[:, keep] = block.mdw
                results.g2[:, keep] = block.g2
                results.yd[:, keep] = block.yd

            if not np.any(rej):
                break
            retries[active[rej]] += 1
            over = retries[active[rej]] > MAX_RETRIES
            if np.any(over):
                bad = path_indices[active[rej]][over]
                raise RuntimeError(
                    f"paths exceeded the retry budget ({MAX_RETRIES}): {bad[:8]}"
                )
            active = active[rej]
            recorder = None
        results.retries = retries
        results.max_frame_defect = max_defect
        return results


def _stack_states(states):
    out = states[0].copy()
    if len(states) == 1:
        return out
    out.x = np.concatenate([s.x for s in states], axis=0)
    out.u = np.concatenate([s.u for s in states], axis=0)
    out.u1 = np.concatenate([s.u1 for s in states], axis=0)
    out.u2 = np.concatenate([s.u2 for s in states], axis=0)
    out.y = np.concatenate([s.y for s in states], axis=0)
    return out
