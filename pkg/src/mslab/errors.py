"""Exception types shared across the lab."""


class MslabError(Exception):
    """Base class for all errors raised by this package."""


class MeshInvalid(MslabError):
    """Mesh fails a structural invariant (manifoldness, face inequality, ...)."""


class NoPath(MslabError):
    """Requested endpoints lie in different components (distance is infinite)."""


class NegativeProduct(MslabError):
    """Gromov product is negative beyond tolerance: inputs are not a metric."""


class InconsistentTriangle(MslabError):
    """Declared edge lengths disagree with the stored vertex distances."""


class NotJordan(MslabError):
    """Boundary samples do not form a single simple cycle."""


class ZeroDistancePair(MslabError):
    """Two distinct samples at distance zero where a positive gap is required."""


class SelfIntersection(MslabError):
    """A planar polyline or polygon intersects itself."""


class EmbeddingFailed(MslabError):
    """Tripod embedding produced a non-simple boundary polygon."""


class TriangulationFailed(MslabError):
    """Planar polygon triangulation could not complete."""


class DominationFailed(MslabError):
    """Filling metric fails to dominate the triangle metric at sample level."""


class MismatchedSampling(MslabError):
    """Two objects that must share a sample layout do not."""


class EdgeMismatch(MslabError):
    """Glued edges disagree beyond the allowed ratio slack."""


class EpsilonTooSmall(MslabError):
    """Requested scale is below the mesh resolution."""


class NonPolygonalBoundary(MslabError):
    """Operation requires a mesh-edge (polygonal) boundary or structured chart."""


class RadiusOrder(MslabError):
    """Radii violate the required ordering (r < R, positive, inside mesh)."""


class LevelOutOfRange(MslabError):
    """Level value lies outside the function range on the mesh."""


class DegenerateLevel(MslabError):
    """Level set degenerates to vertices/edges even after jitter."""


class LipschitzViolated(MslabError):
    """Function exceeds the declared Lipschitz constant on an edge."""


class NoCurve(MslabError):
    """Curve family is empty; modulus is infinite."""


class NoSeparationNeeded(MslabError):
    """Obstruction sets already lie in different components."""


class IterationLimit(MslabError):
    """Solver hit its iteration cap before certifying tolerance."""


class UnknownExperiment(MslabError):
    """Experiment name is not registered."""


class ConfigInvalid(MslabError):
    """Experiment/CLI configuration failed validation."""


class SchemaMismatch(MslabError):
    """Two reports cannot be compared (different experiment or schema)."""
