"""Exception types raised across the package."""


class FlightBAError(Exception):
    """Base class for all package errors."""


class NonPositiveDepth(FlightBAError, ValueError):
    """Point lies on or behind the image plane of a camera."""


class DegenerateGeometry(FlightBAError, ValueError):
    """Two-view triangulation is ill-posed (parallel rays or coincident centers)."""


class DegenerateConfiguration(FlightBAError, ValueError):
    """Point set is too degenerate (e.g. collinear) for similarity alignment."""


class NonPositiveThrust(FlightBAError, ValueError):
    pass


class FreeFall(FlightBAError, ValueError):
    """Acceleration equals -g: no thrust direction can be recovered."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class InsufficientViews(FlightBAError, ValueError):
    pass


class NoResolvableFrames(FlightBAError, RuntimeError):
    pass


class InsufficientSamples(FlightBAError, ValueError):
    pass


class LinearSolveFailure(FlightBAError, RuntimeError):
    pass


class FormatError(FlightBAError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f", line {line}"
            loc += ": "
        elif line is not None:
            loc = f"line {line}: "
        super().__init__(loc + message)
        self.path = path
        self.line = line
