"""Exception types shared across the package."""


class TorusForgeError(Exception):
    """Base class so callers can catch everything from this package at once."""


class NotHyperbolic(TorusForgeError):
    """Some eigenvalue modulus is 1 within tolerance."""


class UnsupportedSpectrum(TorusForgeError):
    """Spectrum is complex or has repeated eigenvalues."""


class DegeneratePeriod(TorusForgeError):
    """det(A^n - I) = 0, so period-n points are not isolated."""


class SearchFailed(TorusForgeError):
    """Deterministic search exhausted its bounds without a hit."""


class FixedPointSearchFailed(TorusForgeError):
    """Could not find (enough) fixed points with the required properties."""


class IntegrationFailure(TorusForgeError):
    """Flow integration produced non-finite values or left its chart."""


class NoEigenvalueCrossing(TorusForgeError):
    """Pitchfork amplitude sweep never crossed eigenvalue 1."""


class NoCollision(TorusForgeError):
    """Center amplitude sweep never produced a complex pair."""


class GluingViolation(TorusForgeError):
    """Conjugation patch branches disagree on the gluing shell."""


class TooManyComponents(TorusForgeError):
    """Deformation support has more components than the declared budget."""


class ZeroVector(TorusForgeError):
    """Cone membership is undefined for the zero vector."""


class DominationNotDetected(TorusForgeError):
    """Splitting power iteration failed to stabilize at any lag."""


class InfeasibleParameters(TorusForgeError):
    """Parameter cascade has no solution; message names the violated constraint."""


class ShadowingDiverged(TorusForgeError):
    """Conjugacy series failed to meet its truncation target."""


class NotConverged(TorusForgeError):
    """Iteration ended before reaching its tolerance."""


class NoIntersection(TorusForgeError):
    """Leaf disks do not intersect within their domains."""


class AmbiguousIntersection(TorusForgeError):
    """Leaf disks intersect more than once within their domains."""


class GraphFoldDetected(TorusForgeError):
    """Image of a graph stopped being a graph over the base plane."""


class ConvergenceFailure(TorusForgeError):
    """Graph transform iteration failed to contract."""


class NotApplicable(TorusForgeError):
    """Requested exact path does not apply to this map or sample set."""


class EmptySet(TorusForgeError):
    """No points available to count or fit."""


class FitFailure(TorusForgeError):
    """Not enough usable points for a slope fit."""
