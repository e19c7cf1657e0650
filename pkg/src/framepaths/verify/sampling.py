"""Random frame-bundle states for the identity checks.

States are sampled away from chart boundaries and with frames that are
genuinely independent of each other (the fiber frames are random rotations,
not copies of the base frame), so the checks exercise the full state space
rather than the measure-zero slice the simulator happens to start from.
"""

from __future__ import annotations

import numpy as np

from ..bundles import FrameState, TangentBundle
from ..geometry import Sphere, retract_frame


def _random_rotation(rng, n, size):
    a = rng.normal(size=size + (n, n))
    q, r = np.linalg.qr(a)
    sign = np.sign(np.einsum("...ii->...i", r))
    sign = np.where(sign == 0.0, 1.0, sign)
    return q * sign[..., None, :]


def _orthonormal_frame(model, x, rng):
    g = model.metric(x)
    return retract_frame(model, x, rng.normal(size=g.shape))


def _bundle_frame(geom, bundle, x, u, rng):
    if isinstance(bundle, TangentBundle):
        rot = _random_rotation(rng, geom.m, x.shape[:-1])
        return u @ rot
    return _random_rotation(rng, bundle.rank, x.shape[:-1])


def sample_states(geom, n_states, rng, y_scale=1.0, polar_band=(0.5, np.pi - 0.5)):
    """Batch of `n_states` random states on the extended bundle of `geom`."""
    model = geom.model
    m = geom.m
    if isinstance(model, Sphere):
        cols = [rng.uniform(polar_band[0], polar_band[1], size=n_states)]
        cols += [rng.uniform(0.0, 2.0 * np.pi, size=n_states) for _ in range(m - 1)]
        x = np.stack(cols, axis=-1)
    else:
        x = rng.uniform(0.0, 2.0 * np.pi, size=(n_states, m))
    u = _orthonormal_frame(model, x, rng)
    u1 = _bundle_frame(geom, geom.bundle1, x, u, rng)
    u2 = _bundle_frame(geom, geom.bundle2, x, u, rng)
    y = y_scale * rng.normal(size=(n_states, geom.n1))
    return FrameState(x=x, u=u, u1=u1, u2=u2, y=y)
