"""Synthetic rig, wand motion, frame renders and event streams with ground truth.

The room frame has z pointing up. Camera poses are stored relative to
camera 0 (the calibration reference), and ``RigConfig.room_to_ref`` maps
room coordinates into that frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .event_detect import EventStream
from .geometry import EPS_Z, CameraIntrinsics, CameraPose, compose, inverse, project_points
from .observations import ObservationSet
from .wand import WandSpec

ROOM_SIZE = (5.0, 4.0, 3.0)
ROOM_CENTER = np.array([2.5, 2.0, 1.2])
MARKER_RADIUS_M = 0.02
MAX_SPEED = 2.0
MAX_TILT_DEG = 30.0
WORK_HALF_EXTENT = np.array([1.0, 0.8, 0.5])


@dataclass(frozen=True)
class RigCamera:
    intrinsics: CameraIntrinsics
    pose: CameraPose
    kind: str  # "frame" or "event"

    @property
    def name(self) -> str:
        return self.intrinsics.name


@dataclass
class RigConfig:
    cameras: list
    trigger_hz: float = 50.0
    room_to_ref: CameraPose = field(default_factory=CameraPose.identity)

    def __post_init__(self):
        if len(self.cameras) < 2:
            raise ValueError("a rig needs at least two cameras")
        for c in self.cameras:
            if c.kind not in ("frame", "event"):
                raise ValueError(f"unknown sensor kind {c.kind!r}")

    @property
    def intrinsics(self) -> list:
        return [c.intrinsics for c in self.cameras]

    @property
    def poses(self) -> list:
        return [c.pose for c in self.cameras]

    @property
    def names(self) -> list:
        return [c.name for c in self.cameras]

    def indices(self, kind: str) -> list:
        return [i for i, c in enumerate(self.cameras) if c.kind == kind]

    def to_ref(self, room_points) -> np.ndarray:
        return self.room_to_ref.transform(room_points)

    def sample_times(self, duration: float) -> np.ndarray:
        n = int(math.floor(duration * self.trigger_hz + 1e-9))
        return np.arange(n) / self.trigger_hz


@dataclass(frozen=True)
class EventSensorModel:
    contrast_threshold: float = 0.2   # log-intensity units
    refractory: float = 0.7e-3        # seconds
    jitter: float = 20e-6             # seconds, Gaussian sigma
    noise_rate: float = 0.1           # events / pixel / second
    marker_contrast: float = 3.0      # log-intensity step of a lit marker

    def __post_init__(self):
        if not self.refractory > 0:
            raise ValueError("refractory period must be positive")
        if not self.contrast_threshold > 0:
            raise ValueError("contrast threshold must be positive")
        if self.jitter < 0 or self.noise_rate < 0:
            raise ValueError("jitter and noise rate must be non-negative")


def _look_at(center, target, up=(0.0, 0.0, 1.0)) -> CameraPose:
    """Room-to-camera pose for a camera at ``center`` looking at ``target`` (image y down)."""
    z = np.asarray(target, dtype=float) - center
    z /= np.linalg.norm(z)
    x = np.cross(z, -np.asarray(up, dtype=float))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return CameraPose.from_matrix(R, -R @ center)


def default_rig(seed: int = 0) -> RigConfig:
    """Four frame cameras in the upper corners of a 5x4x3 m room, two event cameras below two of them.

    Mounting corners are 3.7 m and 3.2 m apart (diagonal 4.9 m); positions
    and aim points are perturbed by up to 3 cm.
    """
    rng = np.random.default_rng([seed, 0])
    corners = np.array([[0.65, 0.4, 2.5], [4.35, 0.4, 2.5], [4.35, 3.6, 2.5], [0.65, 3.6, 2.5]])
    corners = corners + rng.uniform(-0.03, 0.03, corners.shape)
    aims = ROOM_CENTER + rng.uniform(-0.03, 0.03, (6, 3))
    frame_k = CameraIntrinsics(800.0, 800.0, 639.5, 511.5, 1280, 1024, (-0.05, 0.02, 0.0005, -0.0003, 0.0))
    event_k = CameraIntrinsics(650.0, 650.0, 639.5, 359.5, 1280, 720, (-0.08, 0.03, 0.0, 0.0, 0.0))
    centers = list(corners) + [corners[0] + (0.0, 0.0, -0.25), corners[2] + (0.0, 0.0, -0.25)]
    kinds = ["frame"] * 4 + ["event"] * 2
    names = [f"frame{i}" for i in range(4)] + ["event0", "event1"]
    room_poses = [_look_at(c, a) for c, a in zip(centers, aims)]
    room_to_ref = room_poses[0]
    ref_to_room = inverse(room_to_ref)
    cams = []
    for k, (kind, name, P) in enumerate(zip(kinds, names, room_poses)):
        base = frame_k if kind == "frame" else event_k
        intr = CameraIntrinsics(base.fx * (1 + 0.01 * k), base.fy * (1 + 0.01 * k), base.cx, base.cy,
                                base.width, base.height, base.dist, name)
        pose = CameraPose.identity() if k == 0 else compose(P, ref_to_room)
        cams.append(RigCamera(intr, pose, kind))
    return RigConfig(cams, 50.0, room_to_ref)


def mounting_baselines(rig: RigConfig) -> np.ndarray:
    """Distances between distinct frame-camera mounting corners."""
    c = np.array([rig.cameras[i].pose.center for i in rig.indices("frame")])
    d = np.linalg.norm(c[:, None] - c[None], axis=-1)
    return d[np.triu_indices(len(c), 1)]


# -- wand motion --------------------------------------------------------------

def _catmull_rom(p, t_knots, t):
    """Uniform Catmull-Rom interpolation of (K, d) knots at times t."""
    p = np.asarray(p, dtype=float)
    K = len(p)
    t = np.asarray(t, dtype=float)
    if K == 1:
        return np.repeat(p, len(t), axis=0)
    dt = t_knots[1] - t_knots[0]
    s = np.clip((t - t_knots[0]) / dt, 0.0, K - 1 - 1e-12)
    i = np.floor(s).astype(int)
    u = (s - i)[:, None]
    ext = np.concatenate([2 * p[:1] - p[1:2], p, 2 * p[-1:] - p[-2:-1]])
    p0, p1, p2, p3 = ext[i], ext[i + 1], ext[i + 2], ext[i + 3]
    return 0.5 * ((2 * p1) + (-p0 + p2) * u + (2 * p0 - 5 * p1 + 4 * p2 - p3) * u ** 2
                  + (-p0 + 3 * p1 - 3 * p2 + p3) * u ** 3)


@dataclass
class WandTrajectory:
    """Wand midpoint and axis as Catmull-Rom splines over uniformly spaced knots (room frame)."""

    knot_times: np.ndarray
    positions: np.ndarray   # (K, 3)
    axes: np.ndarray        # (K, 3) unit vectors from marker 0 toward marker 2
    spec: WandSpec = field(default_factory=WandSpec)

    @property
    def duration(self) -> float:
        return float(self.knot_times[-1] - self.knot_times[0])

    def midpoint(self, t) -> np.ndarray:
        return _catmull_rom(self.positions, self.knot_times, np.atleast_1d(t))

    def axis(self, t) -> np.ndarray:
        a = _catmull_rom(self.axes, self.knot_times, np.atleast_1d(t))
        return a / np.linalg.norm(a, axis=1, keepdims=True)

    def markers(self, t) -> np.ndarray:
        """(n, 3, 3) marker positions in the room frame; exact wand geometry by construction."""
        off = self.spec.marker_offsets()
        return self.midpoint(t)[:, None, :] + off[None, :, None] * self.axis(t)[:, None, :]

    def max_speed(self, dt: float = 1e-3) -> float:
        t = np.arange(self.knot_times[0], self.knot_times[-1], dt)
        if len(t) < 2:
            return 0.0
        m = self.markers(t)
        return float((np.linalg.norm(np.diff(m, axis=0), axis=2) / dt).max())


def random_trajectory(duration: float, seed: int = 0, spec: WandSpec | None = None, *,
                      center=ROOM_CENTER, half_extent=WORK_HALF_EXTENT, knot_dt: float = 1.0,
                      max_step: float = 0.8, max_tilt_deg: float = MAX_TILT_DEG,
                      static: bool = False) -> WandTrajectory:
    """Random sweep through the working volume with speed below 2 m/s."""
    spec = spec or WandSpec()
    rng = np.random.default_rng([seed, 1])
    center = np.asarray(center, dtype=float)
    half_extent = np.asarray(half_extent, dtype=float)
    K = max(int(math.ceil(duration / knot_dt)) + 1, 2)
    pos = np.zeros((K, 3))
    pos[0] = center + rng.uniform(-0.5, 0.5, 3) * half_extent
    for k in range(1, K):
        step = rng.normal(size=3)
        step *= rng.uniform(0.3, 1.0) * max_step / np.linalg.norm(step)
        pos[k] = np.clip(pos[k - 1] + step, center - half_extent, center + half_extent)
    tilt = np.radians(max_tilt_deg) * np.sqrt(rng.uniform(0, 1, K))
    az = rng.uniform(0, 2 * np.pi, K)
    axes = np.stack([np.sin(tilt) * np.cos(az), np.sin(tilt) * np.sin(az), np.cos(tilt)], axis=1)
    if static:
        pos[:] = pos[0]
        axes[:] = axes[0]
    traj = WandTrajectory(np.arange(K) * knot_dt, pos, axes, spec)
    if traj.max_speed() > MAX_SPEED:
        # slow down uniformly; the sweep then covers less ground in the same time
        traj = random_trajectory(duration, seed + 7919, spec, center=center, half_extent=half_extent,
                                 knot_dt=knot_dt, max_step=0.8 * max_step, max_tilt_deg=max_tilt_deg)
    return traj


# -- projections ------------------------------------------------------------

def project_markers(rig: RigConfig, cam: int, markers_room: np.ndarray):
    """Pixel centers (n, 3, 2), depths (n, 3) and visibility (n, 3) of room-frame markers."""
    X = rig.to_ref(markers_room.reshape(-1, 3))
    c = rig.cameras[cam]
    uv, valid = project_points(c.intrinsics, c.pose, X)
    z = X @ c.pose.R[2] + c.pose.t[2]
    k = c.intrinsics
    inside = valid & (uv[:, 0] >= 0) & (uv[:, 0] <= k.width - 1) & (uv[:, 1] >= 0) & (uv[:, 1] <= k.height - 1)
    n = markers_room.shape[0]
    return uv.reshape(n, 3, 2), z.reshape(n, 3), inside.reshape(n, 3)


@dataclass
class GroundTruthTriples:
    """Exact projected marker centers per camera at the sample times."""

    obs: ObservationSet
    points: np.ndarray      # (S, 3, 3) marker positions in the reference frame
    times: np.ndarray       # (S,)


def ground_truth_observations(rig: RigConfig, traj: WandTrajectory, times,
                              cameras=None) -> GroundTruthTriples:
    times = np.asarray(times, dtype=float)
    m = traj.markers(times) if len(times) else np.zeros((0, 3, 3))
    cams, ts, pix = [], [], []
    use = range(len(rig.cameras)) if cameras is None else cameras
    for j in use:
        uv, _, vis = project_markers(rig, j, m)
        ok = vis.all(1)
        cams.append(np.full(ok.sum(), j))
        ts.append(times[ok])
        pix.append(uv[ok])
    obs = ObservationSet(np.concatenate(cams) if cams else np.zeros(0), np.concatenate(ts) if ts else np.zeros(0),
                         np.concatenate(pix) if pix else np.zeros((0, 3, 2)), rig.names)
    return GroundTruthTriples(obs, rig.to_ref(m.reshape(-1, 3)).reshape(-1, 3, 3), times)


@dataclass
class SampledObservations:
    obs: ObservationSet
    outlier: np.ndarray     # (N,) True where the triple was replaced by clutter
    truth: np.ndarray       # (N, 3, 2) exact projections
    points: np.ndarray      # (S, 3, 3) ground-truth marker positions, reference frame
    times: np.ndarray


def sample_observations(rig: RigConfig, traj: WandTrajectory, times=None, *, noise_px: float = 0.0,
                        dropout: float = 0.0, outlier_rate: float = 0.0, seed: int = 0) -> SampledObservations:
    """Direct observation synthesis: exact projections plus noise, dropouts and outliers.

    Dropouts and outliers act on whole (camera, timestamp) triples; an
    outlier triple is replaced by three uniform in-image pixels.
    """
    if not (0 <= dropout < 1 and 0 <= outlier_rate < 1):
        raise ValueError("rates must lie in [0, 1)")
    if times is None:
        times = rig.sample_times(traj.duration)
    times = np.asarray(times, dtype=float)
    rng = np.random.default_rng([seed, 4])
    m = traj.markers(times) if len(times) else np.zeros((0, 3, 3))
    per_cam = [project_markers(rig, j, m) for j in range(len(rig.cameras))]
    cams, ts, pix, truth, out = [], [], [], [], []
    for s, t in enumerate(times):
        for j, (uv, _, vis) in enumerate(per_cam):
            if not vis[s].all():
                continue
            if dropout > 0 and rng.uniform() < dropout:
                continue
            exact = uv[s]
            p = exact + rng.normal(0.0, noise_px, (3, 2)) if noise_px > 0 else exact.copy()
            is_out = outlier_rate > 0 and rng.uniform() < outlier_rate
            if is_out:
                k = rig.cameras[j].intrinsics
                p = rng.uniform((0, 0), (k.width - 1, k.height - 1), (3, 2))
            cams.append(j); ts.append(t); pix.append(p); truth.append(exact); out.append(is_out)
    obs = ObservationSet(np.array(cams, dtype=np.int64), np.array(ts, dtype=float),
                         np.array(pix, dtype=float).reshape(-1, 3, 2), rig.names)
    return SampledObservations(obs, np.array(out, dtype=bool), np.array(truth).reshape(-1, 3, 2),
                               rig.to_ref(m.reshape(-1, 3)).reshape(-1, 3, 3), times)


# -- frame rendering ----------------------------------------------------------

NOISE_BANK = 8
EXPOSURE_SUBSAMPLES = 5


def _splat(canvas, x0, y0, centers, sigmas, weight):
    """Add Gaussian spots (amplitude ``weight``) into a float canvas whose origin is (x0, y0)."""
    h, w = canvas.shape
    for (cx, cy), s in zip(centers, sigmas):
        r = int(math.ceil(4.0 * s))
        xa, xb = max(int(math.floor(cx)) - r, x0), min(int(math.ceil(cx)) + r, x0 + w - 1)
        ya, yb = max(int(math.floor(cy)) - r, y0), min(int(math.ceil(cy)) + r, y0 + h - 1)
        if xa > xb or ya > yb:
            continue
        gx = np.exp(-0.5 * ((np.arange(xa, xb + 1) - cx) / s) ** 2)
        gy = np.exp(-0.5 * ((np.arange(ya, yb + 1) - cy) / s) ** 2)
        canvas[ya - y0:yb - y0 + 1, xa - x0:xb - x0 + 1] += weight * np.outer(gy, gx)


class FrameRenderer:
    """Renders one frame camera: Gaussian marker spots averaged over the exposure, plus intensity noise."""

    def __init__(self, rig: RigConfig, cam: int, traj: WandTrajectory, *, intensity_sigma: float = 0.0,
                 exposure: float = 4e-3, marker_radius: float = MARKER_RADIUS_M, seed: int = 0):
        self.rig, self.cam, self.traj = rig, cam, traj
        self.intr = rig.cameras[cam].intrinsics
        self.exposure = float(exposure)
        self.radius = float(marker_radius)
        self.sigma = float(intensity_sigma)
        self.rng = np.random.default_rng([seed, 2, cam])
        shape = (self.intr.height, self.intr.width)
        # noise frames are drawn from a small bank with random shifts; rendering
        # a fresh full-resolution Gaussian field per frame dominated run time
        self._bank = (self.rng.standard_normal((NOISE_BANK,) + shape, dtype=np.float32) * self.sigma
                      if self.sigma > 0 else None)

    def render(self, t: float) -> np.ndarray:
        k = self.intr
        if self.exposure > 0:
            sub = t + (np.arange(EXPOSURE_SUBSAMPLES) + 0.5) / EXPOSURE_SUBSAMPLES * self.exposure - 0.5 * self.exposure
        else:
            sub = np.array([t])
        uv, z, vis = project_markers(self.rig, self.cam, self.traj.markers(sub))
        front = z > EPS_Z
        pts, sig = [], []
        for i in range(len(sub)):
            for mk in range(3):
                if not front[i, mk] or not np.isfinite(uv[i, mk]).all():
                    continue
                r_px = k.fx * self.radius / z[i, mk]
                pts.append(uv[i, mk]); sig.append(max(r_px / 2.0, 0.5))
        if self._bank is not None:
            idx = int(self.rng.integers(NOISE_BANK))
            dy, dx = (int(v) for v in self.rng.integers(0, (k.height, k.width)))
            img = np.roll(self._bank[idx], (dy, dx), axis=(0, 1)).astype(float)
            if pts:
                _splat(img, 0, 0, pts, sig, 1.0 / len(sub))
            return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
        img = np.zeros((k.height, k.width), dtype=np.uint8)
        if pts:
            P = np.array(pts)
            S = np.array(sig)
            x0 = max(int(math.floor((P[:, 0] - 4 * S).min())) - 1, 0)
            x1 = min(int(math.ceil((P[:, 0] + 4 * S).max())) + 1, k.width - 1)
            y0 = max(int(math.floor((P[:, 1] - 4 * S).min())) - 1, 0)
            y1 = min(int(math.ceil((P[:, 1] + 4 * S).max())) + 1, k.height - 1)
            if x0 <= x1 and y0 <= y1:
                canvas = np.zeros((y1 - y0 + 1, x1 - x0 + 1))
                _splat(canvas, x0, y0, P, S, 1.0 / len(sub))
                img[y0:y1 + 1, x0:x1 + 1] = np.clip(np.round(canvas * 255.0), 0, 255).astype(np.uint8)
        return img


def render_frames(rig: RigConfig, traj: WandTrajectory, times, *, intensity_sigma: float = 0.0,
                  exposure: float = 4e-3, seed: int = 0, cameras=None):
    """Rendered frames per frame camera plus exact projected centers.

    Returns ``({camera: [uint8 image, ...]}, GroundTruthTriples)``. Intended
    for short sequences; the CLI streams frames to disk instead.
    """
    cams = rig.indices("frame") if cameras is None else list(cameras)
    frames = {}
    for j in cams:
        r = FrameRenderer(rig, j, traj, intensity_sigma=intensity_sigma, exposure=exposure, seed=seed)
        frames[j] = [r.render(float(t)) for t in times]
    return frames, ground_truth_observations(rig, traj, times, cams)


# -- events ------------------------------------------------------------------

def blink_edges(duration: float, blink_hz: float, duty: float = 0.5, phase: float = 0.0):
    """Edge times and LED state after each edge over [0, duration)."""
    if not blink_hz > 0:
        raise ValueError("blink frequency must be positive")
    if not 0 < duty < 1:
        raise ValueError("duty cycle must lie in (0, 1)")
    period = 1.0 / blink_hz
    n = int(math.ceil(duration / period)) + 1
    k = np.arange(n)
    rise = phase + k * period
    fall = rise + duty * period
    t = np.stack([rise, fall], axis=1).reshape(-1)
    on = np.tile(np.array([1, 0], dtype=np.uint8), n)
    keep = (t >= 0) & (t < duration)
    return t[keep], on[keep]


def generate_events(rig: RigConfig, traj: WandTrajectory, cam: int, duration: float, *,
                    sensor: EventSensorModel | None = None, blink_hz: float = 500.0, duty: float = 0.5,
                    marker_radius: float = MARKER_RADIUS_M, seed: int = 0,
                    static_markers=None) -> EventStream:
    """Event stream of one event camera watching the blinking wand.

    At every LED edge each pixel compares its target state (covered by a
    lit marker disk) with its reference state and fires ON/OFF when they
    differ, unless the pixel is still refractory. Timestamps are jittered,
    uniform background noise is merged in, and the result is sorted by time
    with microsecond resolution. ``static_markers`` optionally adds (k, 3)
    room-frame points blinking at their own frequencies: rows of
    ``(x, y, z, hz)``.
    """
    sensor = sensor or EventSensorModel()
    c = rig.cameras[cam]
    k = c.intrinsics
    rng = np.random.default_rng([seed, 3, cam])
    parts = []
    sources = [(None, blink_hz)]
    if static_markers is not None:
        for row in np.atleast_2d(static_markers):
            sources.append((np.asarray(row[:3], dtype=float), float(row[3])))
    if sensor.marker_contrast >= sensor.contrast_threshold and duration > 0:
        for pos, hz in sources:
            edge_t, on = blink_edges(duration, hz, duty)
            if pos is None:
                markers = traj.markers(edge_t) if len(edge_t) else np.zeros((0, 3, 3))
            else:
                markers = np.repeat(pos[None, None], len(edge_t), axis=0)
            n, m = markers.shape[:2]
            X = rig.to_ref(markers.reshape(-1, 3))
            uv, valid = project_points(k, c.pose, X)
            z = X @ c.pose.R[2] + c.pose.t[2]
            r = np.where(valid, k.fx * marker_radius / np.where(valid, z, 1.0), 0.0)
            uv = np.where(valid[:, None], uv, -1e9)
            vis = valid & (uv[:, 0] > -r) & (uv[:, 0] < k.width - 1 + r) & (uv[:, 1] > -r) & (uv[:, 1] < k.height - 1 + r)
            parts.append(kernels.blink_events(
                np.ascontiguousarray(edge_t), np.ascontiguousarray(on, dtype=np.uint8),
                np.ascontiguousarray(uv.reshape(n, m, 2)), np.ascontiguousarray(r.reshape(n, m)),
                np.ascontiguousarray(vis.reshape(n, m), dtype=np.uint8), k.width, k.height,
                float(sensor.refractory)))
    t = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0)
    x = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0, dtype=np.int64)
    y = np.concatenate([p[2] for p in parts]) if parts else np.zeros(0, dtype=np.int64)
    p = np.concatenate([p[3] for p in parts]) if parts else np.zeros(0, dtype=np.int8)
    if sensor.jitter > 0 and len(t):
        t = t + rng.normal(0.0, sensor.jitter, len(t))
    n_noise = rng.poisson(sensor.noise_rate * k.width * k.height * duration) if duration > 0 else 0
    if n_noise:
        t = np.concatenate([t, rng.uniform(0, duration, n_noise)])
        x = np.concatenate([x, rng.integers(0, k.width, n_noise)])
        y = np.concatenate([y, rng.integers(0, k.height, n_noise)])
        p = np.concatenate([p, np.where(rng.uniform(size=n_noise) < 0.5, 1, -1).astype(np.int8)])
    t_us = np.round(np.clip(t, 0.0, None) * 1e6).astype(np.int64)
    order = np.argsort(t_us, kind="stable")
    return EventStream(t_us[order] * 1e-6, x[order], y[order], p[order], k.width, k.height)


# -- scenario -----------------------------------------------------------------

NOISE_KEYS = {"intensity_sigma", "event_jitter_s", "event_noise_rate"}
SCENARIO_KEYS = {"seed", "duration_s", "blink_hz", "noise", "refractory_s", "exposure_s", "duty"}


@dataclass
class Scenario:
    seed: int = 42
    duration_s: float = 30.0
    blink_hz: float = 500.0
    intensity_sigma: float = 0.01
    event_jitter_s: float = 20e-6
    event_noise_rate: float = 0.1
    refractory_s: float = 0.7e-3
    exposure_s: float = 4e-3
    duty: float = 0.5

    @classmethod
    def noiseless(cls, seed: int = 42, duration_s: float = 30.0) -> "Scenario":
        return cls(seed=seed, duration_s=duration_s, intensity_sigma=0.0, event_jitter_s=0.0,
                   event_noise_rate=0.0)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        if not isinstance(d, dict):
            raise ValueError("scenario must be a JSON object")
        unknown = set(d) - SCENARIO_KEYS
        if unknown:
            raise ValueError(f"unknown scenario field(s): {sorted(unknown)}")
        noise = d.get("noise", {}) or {}
        if not isinstance(noise, dict):
            raise ValueError("field 'noise' must be an object")
        unknown = set(noise) - NOISE_KEYS
        if unknown:
            raise ValueError(f"unknown field(s) in 'noise': {sorted(unknown)}")
        kw = {}
        for key, typ in (("seed", int), ("duration_s", float), ("blink_hz", float),
                         ("refractory_s", float), ("exposure_s", float), ("duty", float)):
            if key in d:
                kw[key] = _typed(d[key], typ, key)
        for key in ("intensity_sigma", "event_jitter_s", "event_noise_rate"):
            if key in noise:
                kw[key] = _typed(noise[key], float, f"noise.{key}")
        sc = cls(**kw)
        if sc.duration_s < 0:
            raise ValueError("field 'duration_s' must be non-negative")
        if not sc.blink_hz > 0:
            raise ValueError("field 'blink_hz' must be positive")
        if not 0 < sc.duty < 1:
            raise ValueError("field 'duty' must lie in (0, 1)")
        if min(sc.intensity_sigma, sc.event_jitter_s, sc.event_noise_rate) < 0:
            raise ValueError("noise levels must be non-negative")
        return sc

    def to_dict(self) -> dict:
        return {"seed": self.seed, "duration_s": self.duration_s, "blink_hz": self.blink_hz,
                "refractory_s": self.refractory_s, "exposure_s": self.exposure_s, "duty": self.duty,
                "noise": {"intensity_sigma": self.intensity_sigma, "event_jitter_s": self.event_jitter_s,
                          "event_noise_rate": self.event_noise_rate}}

    @property
    def sensor(self) -> EventSensorModel:
        return EventSensorModel(refractory=self.refractory_s, jitter=self.event_jitter_s,
                                noise_rate=self.event_noise_rate)


def _typed(v, typ, name):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"field '{name}' must be a number, got {v!r}")
    if typ is int and (not float(v).is_integer()):
        raise ValueError(f"field '{name}' must be an integer")
    return typ(v)
