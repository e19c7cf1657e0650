"""Numerical verification of the operator identities behind the gradient
representation: frame flow commutators, the commutation expansion of the
horizontal gradient with the generator, the fiber-derivative commutation,
and the algebraic regrouping into path functionals."""

from .operators import (
    apply_generator,
    hgrad,
    hderiv2,
    orbit_derivative,
    vertical_h,
    ygrad,
)
from .identities import (
    check_expansion,
    check_flow_commutator,
    check_second_commutation,
    expansion_pieces,
    expansion_terms,
)
from .regroup import check_regroup, random_pieces, regroup_report
from .sampling import sample_states

__all__ = [
    "apply_generator",
    "hgrad",
    "hderiv2",
    "orbit_derivative",
    "vertical_h",
    "ygrad",
    "check_expansion",
    "check_flow_commutator",
    "check_second_commutation",
    "expansion_pieces",
    "expansion_terms",
    "check_regroup",
    "random_pieces",
    "regroup_report",
    "sample_states",
]
