"""Pairwise extrinsic initialization.

For each camera pair: fundamental matrix by RANSAC over 7-point samples,
essential matrix, decomposition with a cheirality vote, and metric scale
from the wand spacings. The pairwise results are then chained over a
maximum spanning tree (weighted by inlier count) rooted at camera 0.

All correspondences here are in undistorted normalized coordinates.
"""
from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import (CalibrationError, CheiralityAmbiguous, DegenerateConfiguration,
                     DisconnectedGraph, InsufficientCorrespondences, InsufficientInliers)
from .geometry import CameraIntrinsics, CameraPose, compose, inverse, undistort_points
from .observations import ObservationSet
from .search import bracketed_golden_section
from .wand import WandSpec

log = logging.getLogger(__name__)

RANSAC_THRESHOLD = 1e-3
RANSAC_MAX_ITERS = 2000
RANSAC_CONFIDENCE = 0.999
MIN_INLIERS = 15
CHEIRALITY_MIN_FRACTION = 0.9
SCALE_RANGE = (0.1, 20.0)
SCALE_TOL = 1e-6
MAX_SCALE_TRIPLES = 500


@dataclass(frozen=True)
class Correspondence:
    a: np.ndarray
    b: np.ndarray
    timestamp: float
    marker_index: int


@dataclass(frozen=True)
class RelativePoseCandidate:
    """Motion from camera A to camera B: ``x_B = R x_A + t``, ``|t| = 1``."""

    R: np.ndarray
    t: np.ndarray
    inliers: int
    cheirality: float


@dataclass(frozen=True)
class PairResult:
    i: int
    j: int
    R: np.ndarray
    t: np.ndarray           # metric, x_j = R x_i + t
    inliers: int
    inlier_mask: np.ndarray  # over the pair's correspondences


def _homog(p) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(-1, 2)
    return np.hstack([p, np.ones((len(p), 1))])


def _normalizing_transform(p: np.ndarray) -> np.ndarray:
    c = p.mean(axis=0)
    d = np.sqrt(((p - c) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2.0) / d if d > 0 else 1.0
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def _design_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # row k is vec(b_k a_k^T) so that A @ vec(F) = b^T F a
    return np.einsum("ni,nj->nij", _homog(b), _homog(a)).reshape(len(a), 9)


def _unit(F: np.ndarray) -> np.ndarray:
    F = F / np.linalg.norm(F)
    # fix the sign so repeated runs return identical matrices
    k = np.argmax(np.abs(F))
    return F if F.flat[k] > 0 else -F


def seven_point(a, b) -> list[np.ndarray]:
    """All real fundamental matrices (1 or 3) through exactly 7 correspondences."""
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    if len(a) != 7 or len(b) != 7:
        raise ValueError("seven_point needs exactly 7 correspondences")
    Ta, Tb = _normalizing_transform(a), _normalizing_transform(b)
    an = (_homog(a) @ Ta.T)[:, :2]
    bn = (_homog(b) @ Tb.T)[:, :2]
    A = _design_matrix(an, bn)
    _, s, Vt = np.linalg.svd(A, full_matrices=True)
    if s[-1] <= 1e-10 * s[0]:
        raise DegenerateConfiguration("7-point system has a nullspace of dimension > 2")
    F1, F2 = Vt[-1].reshape(3, 3), Vt[-2].reshape(3, 3)
    D = F1 - F2
    # det(F2 + x D) is cubic in x; recover its coefficients by exact interpolation
    xs = np.array([-1.0, 0.0, 1.0, 2.0])
    dets = np.array([np.linalg.det(F2 + x * D) for x in xs])
    coeffs = np.linalg.solve(np.vander(xs, 4), dets)
    roots = np.roots(coeffs) if abs(coeffs[0]) > 1e-14 * np.abs(coeffs).max() else np.roots(coeffs[1:])
    out = []
    for r in roots:
        if abs(r.imag) > 1e-8 * max(1.0, abs(r.real)):
            continue
        x = r.real
        for _ in range(3):  # Newton polish on the cubic
            p, dp = np.polyval(coeffs, x), np.polyval(np.polyder(coeffs), x)
            if dp == 0:
                break
            x -= p / dp
        Fn = F2 + x * D
        out.append(_unit(Tb.T @ Fn @ Ta))
    return out


def eight_point(a, b) -> np.ndarray:
    """Normalized linear estimate from >= 8 correspondences, projected to rank 2."""
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    if len(a) < 8:
        raise InsufficientCorrespondences("eight_point needs at least 8 correspondences")
    Ta, Tb = _normalizing_transform(a), _normalizing_transform(b)
    an = (_homog(a) @ Ta.T)[:, :2]
    bn = (_homog(b) @ Tb.T)[:, :2]
    _, _, Vt = np.linalg.svd(_design_matrix(an, bn), full_matrices=False)
    Fn = Vt[-1].reshape(3, 3)
    U, s, Vt2 = np.linalg.svd(Fn)
    Fn = U @ np.diag([s[0], s[1], 0.0]) @ Vt2
    return _unit(Tb.T @ Fn @ Ta)


def sampson_distance(F, a, b) -> np.ndarray:
    """First-order geometric distance of each correspondence to the epipolar constraint."""
    ah, bh = _homog(a), _homog(b)
    Fa = ah @ F.T
    Ftb = bh @ F
    num = np.abs(np.einsum("ni,ni->n", bh, Fa))
    den = np.sqrt(Fa[:, 0] ** 2 + Fa[:, 1] ** 2 + Ftb[:, 0] ** 2 + Ftb[:, 1] ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = num / den
    return np.where(den > 0, d, np.inf)


def ransac_fundamental(a, b, threshold: float = RANSAC_THRESHOLD, max_iters: int = RANSAC_MAX_ITERS,
                       seed: int = 0, confidence: float = RANSAC_CONFIDENCE,
                       min_inliers: int = MIN_INLIERS):
    """Robust fundamental matrix; returns ``(F, inlier_mask)``.

    Samples of 7 are scored by inlier count under the Sampson distance;
    the winner is re-estimated on its inliers with the 8-point method.
    """
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    n = len(a)
    if n < 8:
        raise InsufficientCorrespondences(f"RANSAC needs at least 8 correspondences, got {n}")
    rng = np.random.default_rng(seed)
    best_F, best_mask, best_count = None, None, -1
    needed = max_iters
    it = 0
    while it < min(needed, max_iters):
        it += 1
        sample = rng.choice(n, 7, replace=False)
        try:
            Fs = seven_point(a[sample], b[sample])
        except DegenerateConfiguration:
            continue
        for F in Fs:
            mask = sampson_distance(F, a, b) <= threshold
            count = int(mask.sum())
            if count > best_count:
                best_F, best_mask, best_count = F, mask, count
                w = count / n
                if w >= 1.0:
                    needed = 0
                else:
                    # log1p keeps the denominator nonzero when w**7 is below machine epsilon
                    denom = math.log1p(-w ** 7)
                    needed = math.ceil(math.log(1 - confidence) / denom) if denom < 0 else max_iters
    if best_F is None:
        raise InsufficientInliers("no non-degenerate 7-point sample found")
    F, mask = best_F, best_mask
    for _ in range(3):
        if mask.sum() < 8:
            break
        F_new = eight_point(a[mask], b[mask])
        mask_new = sampson_distance(F_new, a, b) <= threshold
        if mask_new.sum() < mask.sum():
            break
        converged = np.array_equal(mask_new, mask)
        F, mask = F_new, mask_new
        if converged:
            break
    if mask.sum() < min_inliers:
        raise InsufficientInliers(f"only {int(mask.sum())} inliers (need {min_inliers})")
    return F, mask


def essential_from_fundamental(F, Ka, Kb) -> np.ndarray:
    """``Kb^T F Ka`` projected onto the essential manifold."""
    E = np.asarray(Kb).T @ np.asarray(F) @ np.asarray(Ka)
    U, s, Vt = np.linalg.svd(E)
    m = 0.5 * (s[0] + s[1])
    return U @ np.diag([m, m, 0.0]) @ Vt


def triangulate_dlt(P_list, x_list) -> np.ndarray:
    """Linear triangulation of N points seen in several views.

    ``P_list`` holds 3x4 matrices acting on normalized coordinates and
    ``x_list`` the matching (N, 2) arrays. Returns (N, 3); points at infinity
    come back as non-finite rows.
    """
    rows = []
    for P, x in zip(P_list, x_list):
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        rows.append(x[:, 0:1] * P[2] - P[0])
        rows.append(x[:, 1:2] * P[2] - P[1])
    A = np.stack(rows, axis=1)
    _, V = np.linalg.eigh(np.einsum("nki,nkj->nij", A, A))
    Xh = V[:, :, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        return Xh[:, :3] / Xh[:, 3:4]


def _two_view(R, t, a, b) -> np.ndarray:
    Pa = np.hstack([np.eye(3), np.zeros((3, 1))])
    Pb = np.hstack([R, np.reshape(t, (3, 1))])
    return triangulate_dlt([Pa, Pb], [a, b])


def decompose_essential(E, a, b, min_fraction: float = CHEIRALITY_MIN_FRACTION) -> RelativePoseCandidate:
    """Pick the (R, t) among the four decompositions that puts most points in front."""
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    if len(a) == 0:
        raise ValueError("need at least one correspondence")
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    t = U[:, 2] / np.linalg.norm(U[:, 2])
    best = None
    for R in (U @ W @ Vt, U @ W.T @ Vt):
        for sign in (1.0, -1.0):
            X = _two_view(R, sign * t, a, b)
            with np.errstate(invalid="ignore"):
                zb = X @ R[2] + sign * t[2]
                good = np.isfinite(X).all(axis=1) & (X[:, 2] > 0) & (zb > 0)
            count = int(good.sum())
            if best is None or count > best[0]:
                best = (count, R, sign * t)
    count, R, tt = best
    frac = count / len(a)
    if frac < min_fraction:
        raise CheiralityAmbiguous(f"best candidate has only {frac:.1%} points in front of both cameras")
    return RelativePoseCandidate(R, tt, count, frac)


def _scale_objective(R, t_dir, a_tri, b_tri, spec: WandSpec):
    # With camera A at the origin, triangulated points scale with the
    # baseline (exactly for consistent data), so one solve at k = 1 serves every k.
    X = _two_view(R, t_dir, a_tri.reshape(-1, 2), b_tri.reshape(-1, 2)).reshape(-1, 3, 3)
    d0 = np.linalg.norm(X[:, 0] - X[:, 1], axis=1)
    d1 = np.linalg.norm(X[:, 1] - X[:, 2], axis=1)
    ok = np.isfinite(d0) & np.isfinite(d1)
    d0, d1 = d0[ok], d1[ok]

    def objective(k: float) -> float:
        if d0.size == 0:
            return np.inf
        return float(np.median(np.abs(k * d0 - spec.l_ref_0) + np.abs(k * d1 - spec.l_ref_1)))

    return objective


def recover_scale(pose: RelativePoseCandidate, a_tri, b_tri, spec: WandSpec,
                  k_range=SCALE_RANGE, tol: float = SCALE_TOL) -> float:
    """Baseline length that makes triangulated marker spacings match the wand.

    ``a_tri``/``b_tri`` are (n, 3, 2) marker triples seen at the same
    timestamps in cameras A and B. The median per-triple length error is
    scanned on a log grid and refined by golden-section search.
    """
    a_tri = np.asarray(a_tri, dtype=float).reshape(-1, 3, 2)
    b_tri = np.asarray(b_tri, dtype=float).reshape(-1, 3, 2)
    if len(a_tri) == 0:
        raise ValueError("need at least one paired triple")
    if len(a_tri) > MAX_SCALE_TRIPLES:
        pick = np.linspace(0, len(a_tri) - 1, MAX_SCALE_TRIPLES).round().astype(int)
        a_tri, b_tri = a_tri[pick], b_tri[pick]
    t_dir = np.asarray(pose.t, dtype=float)
    t_dir = t_dir / np.linalg.norm(t_dir)
    f = _scale_objective(pose.R, t_dir, a_tri, b_tri, spec)
    grid = np.geomspace(k_range[0], k_range[1], 80)
    k, _ = bracketed_golden_section(f, grid, tol)
    return k


def build_pose_graph(n_cameras: int, pairs, names=None) -> list[CameraPose]:
    """Chain pairwise motions along a maximum spanning tree rooted at camera 0."""
    adj = {i: [] for i in range(n_cameras)}
    for p in pairs:
        rel = CameraPose.from_matrix(p.R, p.t)
        adj[p.i].append((p.inliers, p.i, p.j, rel))
        adj[p.j].append((p.inliers, p.j, p.i, inverse(rel)))
    poses: list = [None] * n_cameras
    poses[0] = CameraPose.identity()
    heap = []

    def push(i):
        for w, src, dst, rel in adj[i]:
            if poses[dst] is None:
                # max-heap on inliers; ties broken by camera indices
                heapq.heappush(heap, (-w, min(src, dst), max(src, dst), src, dst, id(rel), rel))

    push(0)
    while heap:
        _, _, _, src, dst, _, rel = heapq.heappop(heap)
        if poses[dst] is not None:
            continue
        poses[dst] = compose(rel, poses[src])
        push(dst)
    orphans = [i for i, p in enumerate(poses) if p is None]
    if orphans:
        raise DisconnectedGraph(orphans, names)
    return poses


@dataclass
class InitResult:
    poses: list
    pairs: list
    outlier_mask: np.ndarray    # per observation, True = rejected by every pair it took part in


def normalized_observations(obs: ObservationSet, intrinsics) -> np.ndarray:
    out = np.empty_like(obs.pixels)
    for c in np.unique(obs.camera):
        sel = obs.camera == c
        out[sel] = undistort_points(intrinsics[c], obs.pixels[sel])
    return out


def initialize_extrinsics(obs: ObservationSet, intrinsics: list[CameraIntrinsics], spec: WandSpec, *,
                          threshold: float = RANSAC_THRESHOLD, max_iters: int = RANSAC_MAX_ITERS,
                          seed: int = 0, min_inliers: int = MIN_INLIERS,
                          min_shared: int = 3) -> InitResult:
    """Run the pairwise chain for every camera pair and assemble initial poses."""
    n_cam = len(intrinsics)
    norm = normalized_observations(obs, intrinsics)
    keys = obs.keys
    per_cam = {}
    for c in range(n_cam):
        idx = np.flatnonzero(obs.camera == c)
        per_cam[c] = (keys[idx], idx)
    pairs = []
    votes = np.zeros(len(obs), dtype=np.int64)
    flags = np.zeros(len(obs), dtype=np.int64)
    for i in range(n_cam):
        for j in range(i + 1, n_cam):
            ki, ii = per_cam[i]
            kj, jj = per_cam[j]
            _, pi, pj = np.intersect1d(ki, kj, assume_unique=True, return_indices=True)
            if len(pi) < min_shared:
                continue
            oi, oj = ii[pi], jj[pj]
            a_tri, b_tri = norm[oi], norm[oj]
            pair_seed = int(np.random.SeedSequence([seed, i, j]).generate_state(1)[0])
            try:
                F, mask = ransac_fundamental(a_tri.reshape(-1, 2), b_tri.reshape(-1, 2), threshold,
                                             max_iters, pair_seed, min_inliers=min_inliers)
                E = essential_from_fundamental(F, np.eye(3), np.eye(3))
                cand = decompose_essential(E, a_tri.reshape(-1, 2)[mask], b_tri.reshape(-1, 2)[mask])
                full = mask.reshape(-1, 3).all(axis=1)
                if not full.any():
                    raise InsufficientInliers("no triple with all three markers inlying")
                k = recover_scale(cand, a_tri[full], b_tri[full], spec)
            except CalibrationError as exc:
                log.info("pair (%d, %d) skipped: %s", i, j, exc)
                continue
            bad = (~mask.reshape(-1, 3)).sum(axis=1) >= 2
            votes[oi] += 1
            votes[oj] += 1
            flags[oi] += bad
            flags[oj] += bad
            pairs.append(PairResult(i, j, cand.R, k * cand.t, int(mask.sum()), mask))
            log.debug("pair (%d, %d): %d/%d inliers, baseline %.4f m", i, j, int(mask.sum()), mask.size, k)
    poses = build_pose_graph(n_cam, pairs, obs.camera_names or None)
    # two clutter triples almost never agree epipolarly, so one consistent partner clears an observation
    outliers = (votes > 0) & (flags == votes)
    return InitResult(poses, pairs, outliers)
