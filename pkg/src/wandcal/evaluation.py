"""Calibration quality metrics.

Reprojection error per camera, marker triangulation with frozen cameras,
rigid alignment against an external reference trajectory and recovery of
the clock offset between the two.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .bundle_adjustment import _project_with_jacobians, triangulate_observations
from .errors import DegenerateCloud, FlatObjective, IllConditioned
from .geometry import undistort_points
from .init_extrinsics import triangulate_dlt
from .observations import ObservationSet
from .search import golden_section

MIN_TRIANGULATION_ANGLE_DEG = 0.5
TRIANGULATION_ITERS = 20
OFFSET_WINDOW_S = 0.5
OFFSET_STEP_S = 0.01
FLAT_TOL_M = 1e-6


@dataclass(frozen=True)
class TrajectoryPoint:
    t: float
    position: tuple


@dataclass
class RigidAlignment:
    """Maps source points onto target: ``y = scale * R @ x + t``."""

    R: np.ndarray
    t: np.ndarray
    scale: float = 1.0
    rms: float = 0.0

    def apply(self, x) -> np.ndarray:
        return self.scale * np.asarray(x, dtype=float) @ self.R.T + self.t

    def to_dict(self) -> dict:
        return {"rotation": self.R.tolist(), "translation_m": self.t.tolist(),
                "scale": self.scale, "rms_m": self.rms}


# -- triangulation -----------------------------------------------------------

def _max_ray_angle(X, centers) -> float:
    rays = np.asarray(centers) - X
    rays = rays / np.linalg.norm(rays, axis=1, keepdims=True)
    c = np.clip(rays @ rays.T, -1.0, 1.0)
    return float(np.degrees(np.arccos(c.min())))


def _refine_points(X, groups, intrinsics, poses, iters=TRIANGULATION_ITERS):
    """Point-only Levenberg-Marquardt; cameras are frozen.

    ``X`` is (n, 3); ``groups`` lists ``(camera, point_index, pixels)`` arrays.
    Steps are accepted per point only if they lower that point's cost, so
    the result never has higher cost than the start.
    """
    X = np.array(X, dtype=float)
    n = len(X)
    lam = np.full(n, 1e-3)

    def evaluate(Xe, want_jac):
        cost = np.zeros(n)
        H = np.zeros((n, 3, 3))
        g = np.zeros((n, 3))
        for c, idx, px in groups:
            pred, valid, jac = _project_with_jacobians(intrinsics[c], poses[c], Xe[idx], want_jac)
            r = np.where(valid[:, None], px - pred, 1e3)
            np.add.at(cost, idx, 0.5 * (r ** 2).sum(1))
            if want_jac:
                J = np.where(valid[:, None, None], -jac["point"], 0.0)
                np.add.at(H, idx, np.einsum("nki,nkj->nij", J, J))
                np.add.at(g, idx, np.einsum("nki,nk->ni", J, r))
        return cost, H, g

    cost, H, g = evaluate(X, True)
    active = np.ones(n, dtype=bool)
    for _ in range(iters):
        if not active.any():
            break
        d = np.arange(3)
        Hd = H.copy()
        Hd[:, d, d] += lam[:, None] * np.maximum(H[:, d, d], 1e-12)
        try:
            step = -np.linalg.solve(Hd, g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.zeros_like(X)
            for k in range(n):
                try:
                    step[k] = -np.linalg.solve(Hd[k], g[k])
                except np.linalg.LinAlgError:
                    active[k] = False
        step[~active] = 0.0
        cand = X + step
        new_cost, _, _ = evaluate(cand, False)
        better = active & (new_cost < cost)
        rel = np.where(cost > 0, (cost - new_cost) / np.maximum(cost, 1e-300), 0.0)
        X[better] = cand[better]
        lam = np.where(better, lam / 10.0, lam * 10.0)
        # stop points whose cost no longer moves or whose damping blew up
        active &= ~(better & (rel < 1e-14)) & (lam < 1e12) & (cost > 0)
        if better.any():
            c2, H2, g2 = evaluate(X, True)
            cost = np.where(better, c2, cost)
            H[better], g[better] = H2[better], g2[better]
    return X


def triangulate_marker(cameras, pixels, intrinsics, poses,
                       min_angle_deg: float = MIN_TRIANGULATION_ANGLE_DEG) -> np.ndarray:
    """One 3D point from its pixel observations in two or more cameras.

    Linear initialization followed by reprojection refinement with all
    camera parameters frozen. Raises IllConditioned when the widest angle
    between viewing rays is below ``min_angle_deg``.
    """
    cameras = [int(c) for c in cameras]
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    if len(cameras) < 2:
        raise ValueError("a point needs at least two observing cameras")
    xs = [undistort_points(intrinsics[c], px[None])[0] for c, px in zip(cameras, pixels)]
    Ps = [np.hstack([poses[c].R, poses[c].t[:, None]]) for c in cameras]
    X0 = triangulate_dlt(Ps, [x[None] for x in xs])[0]
    angle = _max_ray_angle(X0, [poses[c].center for c in cameras])
    if angle < min_angle_deg:
        raise IllConditioned(f"triangulation angle {angle:.3f} deg below {min_angle_deg} deg")
    groups = [(c, np.array([0]), px[None]) for c, px in zip(cameras, pixels)]
    return _refine_points(X0[None], groups, intrinsics, poses)[0]


def triangulate_all(obs: ObservationSet, intrinsics, poses,
                    min_angle_deg: float = MIN_TRIANGULATION_ANGLE_DEG):
    """Triangulate every (timestamp, marker) seen by at least two cameras.

    Returns ``(times (S,), points (S, 3, 3), ok (S, 3), obs_used)`` where
    ``ok`` is False for ill-conditioned points.
    """
    obs = obs.with_min_cameras(2)
    times, inv = obs.timestamps()
    if len(obs) == 0:
        return times, np.zeros((0, 3, 3)), np.zeros((0, 3), dtype=bool), obs
    X0 = triangulate_observations(obs, intrinsics, poses).reshape(-1, 3)
    groups = []
    for c in np.unique(obs.camera):
        sel = np.flatnonzero(obs.camera == c)
        idx = (inv[sel][:, None] * 3 + np.arange(3)).reshape(-1)
        groups.append((int(c), idx, obs.pixels[sel].reshape(-1, 2)))
    X = _refine_points(X0, groups, intrinsics, poses)
    # widest ray angle per point
    S = len(times)
    centers = np.array([p.center for p in poses])
    dirs = {}
    for c, idx, _ in groups:
        v = centers[c] - X[idx]
        dirs[c] = (idx, v / np.linalg.norm(v, axis=1, keepdims=True))
    min_cos = np.full(S * 3, 1.0)
    cams = list(dirs)
    for a in range(len(cams)):
        ia, da = dirs[cams[a]]
        full_a = np.full((S * 3, 3), np.nan)
        full_a[ia] = da
        for b in range(a + 1, len(cams)):
            ib, db = dirs[cams[b]]
            full_b = np.full((S * 3, 3), np.nan)
            full_b[ib] = db
            cosab = np.einsum("ij,ij->i", full_a, full_b)
            m = ~np.isnan(cosab)
            min_cos[m] = np.minimum(min_cos[m], cosab[m])
    ok = np.degrees(np.arccos(np.clip(min_cos, -1, 1))) >= min_angle_deg
    return times, X.reshape(S, 3, 3), ok.reshape(S, 3), obs


def reprojection_mae(intrinsics, poses, obs: ObservationSet):
    """Per-camera mean and std of Euclidean pixel residuals against triangulated markers."""
    times, X, ok, used = triangulate_all(obs, intrinsics, poses)
    _, inv = used.timestamps()
    m = len(intrinsics)
    mae, std = np.full(m, np.nan), np.full(m, np.nan)
    for c in range(m):
        sel = np.flatnonzero(used.camera == c)
        if sel.size == 0:
            continue
        pts = X[inv[sel]].reshape(-1, 3)
        good = ok[inv[sel]].reshape(-1)
        pred, valid, _ = _project_with_jacobians(intrinsics[c], poses[c], pts, False)
        err = np.linalg.norm(used.pixels[sel].reshape(-1, 2) - pred, axis=1)[good & valid]
        if err.size:
            mae[c], std[c] = err.mean(), err.std()
    return mae, std


# -- alignment -------------------------------------------------------------

def align_umeyama(source, target, with_scale: bool = False) -> RigidAlignment:
    """Least-squares rigid (optionally similarity) transform from source to target."""
    x = np.asarray(source, dtype=float).reshape(-1, 3)
    y = np.asarray(target, dtype=float).reshape(-1, 3)
    if len(x) != len(y):
        raise ValueError("source and target differ in length")
    if len(x) < 3:
        raise DegenerateCloud("alignment needs at least three points")
    mx, my = x.mean(0), y.mean(0)
    xc, yc = x - mx, y - my
    sx = np.linalg.svd(xc, compute_uv=False)
    if sx[1] <= 1e-9 * max(sx[0], 1e-300) or sx[0] < 1e-12:
        raise DegenerateCloud("points are collinear or coincident")
    C = yc.T @ xc / len(x)
    U, D, Vt = np.linalg.svd(C)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    scale = 1.0
    if with_scale:
        var_x = (xc ** 2).sum() / len(x)
        scale = float(np.trace(np.diag(D) @ S) / var_x)
    t = my - scale * R @ mx
    al = RigidAlignment(R, t, scale)
    al.rms = float(np.sqrt(np.mean(np.sum((al.apply(x) - y) ** 2, axis=1))))
    return al


# -- trajectories and time offset -----------------------------------------------

def interpolate_trajectory(t_ref, x_ref, t_query) -> np.ndarray:
    """Linear interpolation; NaN outside the reference time span."""
    t_ref = np.asarray(t_ref, dtype=float)
    x_ref = np.asarray(x_ref, dtype=float)
    tq = np.asarray(t_query, dtype=float)
    out = np.stack([np.interp(tq, t_ref, x_ref[:, k]) for k in range(3)], axis=1)
    out[(tq < t_ref[0]) | (tq > t_ref[-1])] = np.nan
    return out


def _errors(est_x, gt_interp, alignment):
    ok = ~np.isnan(gt_interp).any(1) & ~np.isnan(est_x).any(1)
    return np.linalg.norm(alignment.apply(est_x[ok]) - gt_interp[ok], axis=1)


def _aligned_error(est_t, est_x, gt_t, gt_x, offset):
    g = interpolate_trajectory(gt_t, gt_x, est_t + offset)
    ok = ~np.isnan(g).any(1) & ~np.isnan(est_x).any(1)
    if ok.sum() < 3:
        return math.inf, None
    try:
        al = align_umeyama(est_x[ok], g[ok])
    except DegenerateCloud:
        return math.inf, None
    return float(np.linalg.norm(al.apply(est_x[ok]) - g[ok], axis=1).mean()), al


def find_time_offset(est_t, est_x, gt_t, gt_x, window: float = OFFSET_WINDOW_S,
                     step: float = OFFSET_STEP_S, rounds: int = 2):
    """Clock offset ``d`` such that ``gt(t + d)`` best matches ``est(t)``.

    A grid over ``[-window, window]`` (aligning at every candidate) locates
    the basin; then alignment and a golden-section offset search alternate
    ``rounds`` times. Returns ``(offset, alignment)``.
    """
    est_t = np.asarray(est_t, dtype=float)
    est_x = np.asarray(est_x, dtype=float).reshape(-1, 3)
    gt_t = np.asarray(gt_t, dtype=float)
    gt_x = np.asarray(gt_x, dtype=float).reshape(-1, 3)
    if len(gt_t) < 2 or np.any(np.diff(gt_t) <= 0):
        raise ValueError("reference timestamps must be strictly increasing")
    if np.ptp(gt_x, axis=0).max() < FLAT_TOL_M or np.nanmax(np.ptp(est_x, axis=0)) < FLAT_TOL_M:
        raise FlatObjective("trajectory is static; the clock offset is unobservable")
    grid = np.arange(-window, window + 0.5 * step, step)
    vals = np.array([_aligned_error(est_t, est_x, gt_t, gt_x, d)[0] for d in grid])
    finite = np.isfinite(vals)
    if not finite.any() or np.ptp(vals[finite]) < FLAT_TOL_M:
        raise FlatObjective("alignment error does not vary with the offset")
    best = float(grid[int(np.argmin(np.where(finite, vals, np.inf)))])
    _, al = _aligned_error(est_t, est_x, gt_t, gt_x, best)
    for _ in range(rounds):
        def objective(d, al=al):
            e = _errors(est_x, interpolate_trajectory(gt_t, gt_x, est_t + d), al)
            return float(e.mean()) if e.size >= 3 else math.inf
        best, _ = golden_section(objective, best - step, best + step, tol=1e-6)
        _, al_new = _aligned_error(est_t, est_x, gt_t, gt_x, best)
        if al_new is None:
            break
        al = al_new
    return float(best), al


@dataclass
class PositionalError:
    mean: float
    std: float
    median: float
    n: int

    def to_dict(self) -> dict:
        return {"mean_mm": 1e3 * self.mean, "std_mm": 1e3 * self.std,
                "median_mm": 1e3 * self.median, "samples": self.n}


def positional_error_report(est_t, est_x, gt_t, gt_x, alignment: RigidAlignment,
                            offset: float = 0.0) -> PositionalError:
    g = interpolate_trajectory(gt_t, gt_x, np.asarray(est_t, dtype=float) + offset)
    e = _errors(np.asarray(est_x, dtype=float).reshape(-1, 3), g, alignment)
    if e.size == 0:
        return PositionalError(math.nan, math.nan, math.nan, 0)
    return PositionalError(float(e.mean()), float(e.std()), float(np.median(e)), int(e.size))


def read_trajectory_csv(path):
    """``t_s,x_m,y_m,z_m`` rows; returns (t (n,), x (n, 3))."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"t_s", "x_m", "y_m", "z_m"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"trajectory file lacks columns {sorted(missing)}")
        rows = [(float(r["t_s"]), float(r["x_m"]), float(r["y_m"]), float(r["z_m"])) for r in reader]
    a = np.array(rows, dtype=float).reshape(-1, 4)
    if len(a) > 1 and np.any(np.diff(a[:, 0]) <= 0):
        raise ValueError("trajectory timestamps must be strictly increasing")
    return a[:, 0], a[:, 1:]


def write_trajectory_csv(path, t, x) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "x_m", "y_m", "z_m"])
        for ti, xi in zip(np.asarray(t, dtype=float).tolist(), np.asarray(x, dtype=float).reshape(-1, 3).tolist()):
            w.writerow([repr(ti)] + [repr(v) for v in xi])
