import numpy as np
import pytest

from wandcal.geometry import CameraIntrinsics, CameraPose
from wandcal.wand import WandSpec


@pytest.fixture
def spec():
    return WandSpec()


@pytest.fixture
def intr500():
    return CameraIntrinsics(500.0, 500.0, 640.0, 512.0, 1280, 1024)


def random_pose(rng, angle=0.3, trans=1.0):
    return CameraPose.from_rotvec(rng.normal(size=3) * angle, rng.normal(size=3) * trans)


def look_at(center, target, up=(0.0, 0.0, 1.0)):
    """World-to-camera pose of a camera at ``center`` looking at ``target``."""
    center = np.asarray(center, float)
    z = np.asarray(target, float) - center
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return CameraPose.from_matrix(R, -R @ center)


from wandcal import kernels

BACKENDS = [pytest.param(kernels.python_backend, id="python")]
if kernels.compiled_backend is not None:
    BACKENDS.append(pytest.param(kernels.compiled_backend, id="compiled"))


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run the test once per kernel backend."""
    monkeypatch.setattr(kernels, "active", request.param)
    return request.param


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
