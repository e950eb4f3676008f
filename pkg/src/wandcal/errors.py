"""Exception types shared across the calibration pipeline.

Each failure mode that the CLI maps to an exit code has its own class so
callers can catch exactly what they expect and let the rest propagate.
"""


class CalibrationError(Exception):
    """Base class for all recoverable pipeline errors."""


class BehindCamera(CalibrationError):
    """Point lies on or behind the camera plane (z <= eps)."""


class NoConvergence(CalibrationError):
    """Iterative distortion inversion did not converge."""


class NoWand(CalibrationError):
    """No unambiguous wand found among the candidate blobs."""


class OutOfBounds(CalibrationError):
    """Event coordinates fall outside the sensor."""


class UnsortedStream(CalibrationError):
    """Event timestamps decrease within a stream."""


class DegenerateConfiguration(CalibrationError):
    """Minimal-sample solver got a rank-deficient system."""


class InsufficientCorrespondences(CalibrationError, ValueError):
    """Too few correspondences to run the estimator at all."""


class InsufficientInliers(CalibrationError):
    """Best RANSAC model is supported by too few inliers."""


class CheiralityAmbiguous(CalibrationError):
    """No relative pose candidate puts enough points in front of both cameras."""


class NoBracket(CalibrationError):
    """Scalar search landed on the boundary of its interval."""


class DisconnectedGraph(CalibrationError):
    """Some cameras share no valid pair with the reference camera."""

    def __init__(self, orphans, names=None):
        self.orphans = sorted(orphans)
        if names is not None:
            label = ", ".join(names[i] for i in self.orphans)
        else:
            label = ", ".join(str(i) for i in self.orphans)
        super().__init__(f"cameras not connected to the reference camera: {label}")


class NumericalFailure(CalibrationError):
    """Normal equations stayed indefinite after maximal damping."""


class IllConditioned(CalibrationError):
    """Triangulation angle too small for a stable point."""


class DegenerateCloud(CalibrationError):
    """Point cloud is collinear; rigid alignment is not unique."""


class FlatObjective(CalibrationError):
    """Time-offset objective does not vary across the search window."""
