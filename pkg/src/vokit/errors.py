"""Exception hierarchy for the estimation kit.

Every failure mode raised by the library derives from VoKitError so callers
can catch one base class at pipeline level.
"""


class VoKitError(Exception):
    """Base class for all library errors."""


class NonPositiveDepth(VoKitError):
    """Projection requested for a point at or behind the camera plane."""


class SingularInput(VoKitError):
    """Matrix input too close to singular for the requested operation."""


class TooFewPairs(VoKitError):
    """Not enough stereo correspondences for noise estimation."""


class DegenerateRig(VoKitError):
    """Stereo rig with (near-)zero baseline."""


class DegenerateGeometry(VoKitError):
    """Triangulation geometry is rank deficient (no usable parallax)."""


class TooFewPoints(VoKitError):
    """Not enough correspondences for the requested solver."""


class IllConditioned(VoKitError):
    """Normal matrix condition number exceeds the solvable threshold."""


class NegativeScale(VoKitError):
    """Recovered projective scale factor is not positive."""


class DivergedRefinement(VoKitError):
    """Iterative pose refinement failed to decrease the cost."""


class ZeroTranslation(VoKitError):
    """Essential matrix requested for a pose with zero translation."""


class DegenerateEpipolarLine(VoKitError):
    """Epipolar line has (near-)zero image-plane direction."""


class Unobservable(VoKitError):
    """Bundle adjustment window lacks any stereo pair; scale is free."""


class DivergedBA(VoKitError):
    """Window bundle adjustment failed to decrease the cost."""


class DensityUnreachable(VoKitError):
    """Scene point-density search failed to hit the visibility target."""


class NonPositiveInput(VoKitError):
    """Log-log fit requires strictly positive inputs."""


class ConfigError(VoKitError):
    """Invalid or unknown experiment configuration entry."""


class DegenerateAlignmentWarning(UserWarning):
    """Trajectory alignment on (near-)collinear positions; gauge not unique."""
