"""Exception types shared across the library."""


class StcutfemError(Exception):
    """Base class for all library errors."""


class MeshError(StcutfemError):
    """Invalid mesh input (bad cell counts, unsupported dimension, ...)."""


class NonConformingMeshError(MeshError):
    """A face is shared by more than two elements or hangs in mid-air."""


class EmptyActiveMeshError(StcutfemError):
    """The level set leaves no background element intersecting the domain."""


class DomainNotContainedError(StcutfemError):
    """The moving domain pokes through the lateral boundary of the box."""


class SingularMatrixError(StcutfemError):
    """The assembled system is (numerically) singular."""


class SolverConvergenceError(StcutfemError):
    """An iterative solver or estimator failed to reach its tolerance."""


class MissingExactSolutionError(StcutfemError):
    """Error norms were requested for a problem without an exact solution."""
