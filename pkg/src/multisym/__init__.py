"""Exact exterior calculus on coordinate charts, De Donder-Weyl field theory and
bracket structures of observable forms."""
from .expr import Expression, ExpressionError, ParseError, UnknownCoordinateError, parse
from .exterior import (
    Chart,
    ChartMap,
    DifferentialForm,
    MultiVector,
    exterior_derivative,
    interior_product,
    lie_derivative,
    pullback,
    wedge,
)
from .mechanics import (
    HamiltonianSystem,
    Trajectory,
    classify_symmetry,
    extended_system,
    hamiltonian_vector_field,
    integrate_flow,
    poisson_bracket,
)
from .ddw import DDWSystem, DiscreteGamma, LagrangianField, legendre_field, solve_field
from .observables import (
    ObservableForm,
    canonical_momentum,
    cps_variation_check,
    form_bracket,
    observable,
    position_form,
    pseudobracket_along,
)

__version__ = "0.1.0"
