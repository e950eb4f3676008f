"""Extrinsic calibration of mixed frame/event camera rigs with a blinking three-marker wand."""
from .bundle_adjustment import BAOptions, BAProblem, BAReport, solve
from .errors import CalibrationError
from .evaluation import align_umeyama, find_time_offset, reprojection_mae, triangulate_all
from .geometry import CameraIntrinsics, CameraPose, project, undistort_points
from .init_extrinsics import initialize_extrinsics
from .kernels import BACKEND
from .observations import ObservationSet
from .pipeline import CalibrateOptions, Calibration, calibrate
from .wand import LabeledTriple, WandSpec, label_markers

__version__ = "0.1.0"
