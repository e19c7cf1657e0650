"""Frozen scenario catalog: geometry + bundles + vertical fields + test
function + start state, addressable by name from the CLI and the tests.

All coefficient values here are part of the package contract; tests freeze
independent expectations against them.
"""

from __future__ import annotations

import numpy as np

from .bundles import BundleGeometry, CallableBundle, TangentBundle, TrivialBundle
from .fields import (
    AffineVerticalFields,
    FiberPolynomialMap,
    TrigTensor,
    ZeroVerticalFields,
)
from .geometry import FlatTorus, Sphere

__all__ = ["Scenario", "get_scenario", "scenario_names"]

HALF_PI = np.pi / 2.0


class Scenario:
    def __init__(self, name, geom, vfields, test_function, x0, y0,
                 default_T=1.0, estimator_ok=True, notes=""):
        self.name = name
        self.geom = geom
        self.vfields = vfields
        self.test_function = test_function
        self.x0 = np.asarray(x0, dtype=float)
        self.y0 = np.asarray(y0, dtype=float)
        self.default_T = float(default_T)
        self.estimator_ok = bool(estimator_ok)
        self.notes = notes

    def initial_state(self, n_batch=1, x0=None, y0=None):
        x0 = self.x0 if x0 is None else np.asarray(x0, dtype=float)
        y0 = self.y0 if y0 is None else np.asarray(y0, dtype=float)
        return self.geom.initial_state(x0, y0, n_batch=n_batch)


def _cos_of_coordinate(coord, m=2):
    # alpha(x) = cos(x_coord) as sin(x + pi/2)
    wave = np.zeros(m)
    wave[coord] = 1.0
    return TrigTensor((1,), None, [(np.ones(1), wave, HALF_PI)])


def _flat_classical():
    model = FlatTorus(2)
    geom = BundleGeometry(model, TrivialBundle(1), TrivialBundle(1))
    f = FiberPolynomialMap(_cos_of_coordinate(0), TrigTensor((1, 1)))
    v = ZeroVerticalFields(n1=1, m=2)
    return Scenario(
        "flat-classical", geom, v, f, x0=(HALF_PI, 0.0), y0=(0.0,),
        notes="scalar heat semigroup on the flat torus; gradient has the "
              "closed form (-exp(-T/2) sin x1, 0)",
    )


def _sphere_classical():
    model = Sphere(2, radius=1.0)
    geom = BundleGeometry(model, TrivialBundle(1), TrivialBundle(1))
    f = FiberPolynomialMap(_cos_of_coordinate(0), TrigTensor((1, 1)))
    v = ZeroVerticalFields(n1=1, m=2)
    return Scenario(
        "sphere-classical", geom, v, f, x0=(HALF_PI, 0.0), y0=(0.0,),
        notes="cos(colatitude) is a Laplace eigenfunction; the gradient at "
              "the equator is (-exp(-T), 0) in the coordinate frame",
    )


def _flat_vector_fields():
    # drift field 0, diffusion fields 1..2; moderate amplitudes keep the
    # fiber flow stable over T ~ 1
    a = TrigTensor(
        (3, 2, 2),
        None,
        [
            (_embed_field(3, 0, [[0.0, 0.2], [0.15, 0.0]]), (0.0, 1.0), 0.0),
            (_embed_field(3, 1, [[0.0, 0.12], [-0.12, 0.0]]), (0.0, 1.0), 0.0),
            (_embed_field(3, 2, [[0.1, 0.0], [0.0, -0.08]]), (1.0, 0.0), HALF_PI),
        ],
    )
    b = TrigTensor(
        (3, 2),
        None,
        [
            (_embed_field(3, 0, [0.4, 0.0]), (1.0, 0.0), HALF_PI),
            (_embed_field(3, 0, [0.0, 0.3]), (0.0, 1.0), 0.0),
            (_embed_field(3, 1, [0.25, 0.0]), (1.0, 0.0), 0.0),
            (_embed_field(3, 2, [0.0, 0.2]), (0.0, 1.0), HALF_PI),
        ],
    )
    return AffineVerticalFields(a, b, m=2)


def _embed_field(n_fields, f, block):
    out = np.zeros((n_fields,) + np.asarray(block, dtype=float).shape)
    out[f] = block
    return out


def _linear_test_function(w, n1):
    beta = TrigTensor((1, n1), np.asarray(w, dtype=float).reshape(1, n1))
    return FiberPolynomialMap(TrigTensor((1,)), beta)


def _flat_vector():
    model = FlatTorus(2)
    geom = BundleGeometry(model, TrivialBundle(2), TrivialBundle(1))
    return Scenario(
        "flat-vector", geom, _flat_vector_fields(),
        _linear_test_function([1.0, 0.5], 2),
        x0=(HALF_PI, 0.0), y0=(0.3, -0.2),
        notes="affine fiber drift/diffusion with x-dependent coefficients "
              "over an exactly simulable flat base",
    )


def _flat_vector_const():
    # constant diffusion fields and no fiber coupling: E Y_T has a closed
    # form by integrating the expected drift along the flat Brownian base
    model = FlatTorus(2)
    geom = BundleGeometry(model, TrivialBundle(2), TrivialBundle(1))
    a = TrigTensor((3, 2, 2))
    b = TrigTensor(
        (3, 2),
        _embed_field(3, 0, [0.0, 0.1]) + _embed_field(3, 1, [0.2, 0.0])
        + _embed_field(3, 2, [0.0, 0.3]),
        [(_embed_field(3, 0, [0.4, 0.0]), (1.0, 0.0), HALF_PI)],
    )
    return Scenario(
        "flat-vector-const", geom, AffineVerticalFields(a, b, m=2),
        _linear_test_function([1.0, 0.5], 2),
        x0=(HALF_PI, 0.0), y0=(0.3, -0.2),
        notes="quadrature-checkable variant of flat-vector",
    )


def _sphere_tm_fields():
    a = TrigTensor(
        (3, 2, 2),
        _embed_field(3, 0, [[0.0, 0.15], [-0.15, 0.0]]),
        [(_embed_field(3, 1, [[0.1, 0.0], [0.0, 0.1]]), (1.0, 0.0), HALF_PI)],
    )
    b = TrigTensor(
        (3, 2),
        _embed_field(3, 2, [0.0, 0.15]),
        [
            (_embed_field(3, 0, [0.25, 0.0]), (1.0, 0.0), 0.0),
            (_embed_field(3, 0, [0.0, 0.2]), (1.0, 0.0), HALF_PI),
            (_embed_field(3, 1, [0.2, 0.0]), (1.0, 0.0), HALF_PI),
            (_embed_field(3, 2, [0.1, 0.0]), (0.0, 1.0), 0.0),
        ],
    )
    return AffineVerticalFields(a, b, m=2)


def _sphere_tm_test_function():
    # f(x, y) = <omega(x), y>_g with omega = 0.7 d/dtheta + 0.4 d/dphi on the
    # unit sphere: beta = (0.7, 0.4 sin^2 theta) = (0.7, 0.2 - 0.2 cos 2theta)
    beta = TrigTensor(
        (1, 2),
        np.array([[0.7, 0.2]]),
        [(np.array([[0.0, -0.2]]), (2.0, 0.0), HALF_PI)],
    )
    return FiberPolynomialMap(TrigTensor((1,)), beta)


def _sphere_tm():
    model = Sphere(2, radius=1.0)
    geom = BundleGeometry(model, TangentBundle(model), TrivialBundle(1))
    return Scenario(
        "sphere-tm", geom, _sphere_tm_fields(), _sphere_tm_test_function(),
        x0=(HALF_PI, 0.3), y0=(0.5, -0.3), default_T=0.5,
        notes="curved fiber bundle (tangent bundle of the sphere) with "
              "affine vertical fields; exercises the curvature couplings",
    )


def _abelian_connection_terms():
    # A_1 = 0.3 sin(x2) J, A_2 = 0.2 cos(x1) J with J the rotation generator
    j_gen = np.array([[0.0, -1.0], [1.0, 0.0]])

    def conn(x):
        a = np.zeros(x.shape[:-1] + (2, 2, 2))
        a[..., 0, :, :] = 0.3 * np.sin(x[..., 1])[..., None, None] * j_gen
        a[..., 1, :, :] = 0.2 * np.cos(x[..., 0])[..., None, None] * j_gen
        return a

    def curv(x):
        f = np.zeros(x.shape[:-1] + (2, 2, 2, 2))
        scal = -0.2 * np.sin(x[..., 0]) - 0.3 * np.cos(x[..., 1])
        f[..., 0, 1, :, :] = scal[..., None, None] * j_gen
        f[..., 1, 0, :, :] = -scal[..., None, None] * j_gen
        return f

    return CallableBundle(2, conn, curv)


def _torus_curved_fiber():
    # identity-check scenario: flat base, curved rank-2 fiber bundle, so the
    # curvature-fiber couplings are isolated from base curvature effects
    model = FlatTorus(2)
    geom = BundleGeometry(model, _abelian_connection_terms(), TrivialBundle(1))
    return Scenario(
        "torus-curved-fiber", geom, _flat_vector_fields(),
        _linear_test_function([1.0, 0.5], 2),
        x0=(HALF_PI, 0.0), y0=(0.3, -0.2), estimator_ok=False,
        notes="identity verification only: the scalarized fiber curvature "
              "varies with the base point",
    )


def _sphere_two_tangent():
    # identity-check scenario with both bundles curved (values in the second
    # tangent bundle), so the value-side curvature terms are nonzero
    model = Sphere(2, radius=1.0)
    geom = BundleGeometry(model, TangentBundle(model), TangentBundle(model))
    rng = np.random.default_rng(12)
    from .fields import random_fiber_polynomial

    f = random_fiber_polynomial(2, 2, rng)
    return Scenario(
        "sphere-two-tangent", geom, _sphere_tm_fields(), f,
        x0=(HALF_PI, 0.3), y0=(0.5, -0.3), default_T=0.5,
        notes="the one catalog entry whose value-side curvature integral is "
              "nonzero; the finite-difference oracle is noisy here because "
              "the quadratic value map squares the heavy-tailed fiber state",
    )


_BUILDERS = {
    "flat-classical": _flat_classical,
    "sphere-classical": _sphere_classical,
    "flat-vector": _flat_vector,
    "flat-vector-const": _flat_vector_const,
    "sphere-tm": _sphere_tm,
    "torus-curved-fiber": _torus_curved_fiber,
    "sphere-two-tangent": _sphere_two_tangent,
}


def scenario_names():
    return sorted(_BUILDERS)


def get_scenario(name):
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise KeyError(
            f"unknown scenario {name!r}; available: {', '.join(scenario_names())}"
        ) from None
    return builder()
