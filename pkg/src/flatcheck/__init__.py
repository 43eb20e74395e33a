"""Flatness tools for systems of differential dimension two.

Symbolic jets and pullbacks, the ruled-manifold test, flat-output
computation by successive reduction, and numeric certification.
"""

__version__ = "0.1.0"

from .diffiety import (Chart, Parametrization, SystemDef, check_morphism, ord_, pullback,
                       total_derivative)
from .exprcore import depends_on, equivalent, evaluate, jet, split_jet
from .flatverify import check_flat_outputs, check_stationarity
from .reduction import FlatOutputCandidate, compute_flat_outputs, first_integrals
from .rouchon import (build_and_iterate_ghost, linearity_test, projective_solution_set,
                      rouchon_checks, ruled_rewrite)

__all__ = [
    "Chart", "FlatOutputCandidate", "Parametrization", "SystemDef",
    "build_and_iterate_ghost", "check_flat_outputs", "check_morphism", "check_stationarity",
    "compute_flat_outputs", "depends_on", "equivalent", "evaluate", "first_integrals", "jet",
    "linearity_test", "ord_", "projective_solution_set", "pullback", "rouchon_checks",
    "ruled_rewrite", "split_jet", "total_derivative",
]
