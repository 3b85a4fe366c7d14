"""Exception hierarchy shared by every module."""


class FlowError(ValueError):
    """Base class for invalid flow data or invalid requests against a flow."""


class GridAlignmentError(FlowError):
    """A time was requested that does not lie on the flow's time grid."""


class StructuralError(FlowError):
    """The data violates a structural invariant (metric axioms, connectivity, ...)."""


class ResolutionError(FlowError):
    """A discretization was requested below its minimum resolution."""


class OrderingError(FlowError):
    """Propagator endpoints were given in the wrong order."""


class MarginalError(FlowError):
    """Transport marginals are not probability measures of equal mass."""


class DomainError(FlowError):
    """A reparametrization window leaves the admissible domain."""


class ScenarioError(ValueError):
    """A scenario file could not be parsed or validated."""
