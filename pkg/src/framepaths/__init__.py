"""Monte Carlo gradient representations for heat semigroups on vector
bundles over Riemannian manifolds, with a verification harness for every
operator identity the representation rests on."""

__version__ = "0.1.0"

from .geometry import FlatTorus, ManifoldModel, Sphere
from .bundles import (
    BundleGeometry,
    CallableBundle,
    FrameState,
    TangentBundle,
    TrivialBundle,
)
from .fields import (
    AffineVerticalFields,
    EquivariantVerticalFields,
    FiberPolynomialMap,
    TrigTensor,
    ZeroVerticalFields,
)
from .scenarios import Scenario, get_scenario, scenario_names

__all__ = [
    "__version__",
    "FlatTorus",
    "ManifoldModel",
    "Sphere",
    "BundleGeometry",
    "CallableBundle",
    "FrameState",
    "TangentBundle",
    "TrivialBundle",
    "AffineVerticalFields",
    "EquivariantVerticalFields",
    "FiberPolynomialMap",
    "TrigTensor",
    "ZeroVerticalFields",
    "Scenario",
    "get_scenario",
    "scenario_names",
]
