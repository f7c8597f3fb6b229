"""Exception types shared across the package."""


class GeometryError(Exception):
    """Base class for all lfslab errors."""


class DomainError(GeometryError):
    """Input outside the domain an operation is defined on."""


class SurfaceConstructionError(GeometryError):
    """Surface parameters fail validation (degenerate or disconnected level set)."""


class DegenerateGradientError(GeometryError):
    """Field gradient vanishes where a normal is required."""


class ConvergenceError(GeometryError):
    """An iterative solve did not reach its residual target."""


class MedialAmbiguityError(GeometryError):
    """Closest-point projection found two competing feet: the query point is
    numerically on the medial axis."""


class InsufficientSamplingError(GeometryError):
    """A sampled estimate was requested with too few samples to be meaningful."""


class RejectedPairError(GeometryError):
    """Pair violates the verification hypothesis d(q,q') <= eps * f(q), eps <= 1/3."""


class TraceError(GeometryError):
    """Segment trace could not be completed."""


class NearMedialError(TraceError):
    """A trace sample came too close to the medial axis (h >= 0.9 f)."""


class ConfigError(GeometryError):
    """Invalid campaign configuration; message names the offending key."""
