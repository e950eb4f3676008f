"""Joint refinement of camera poses and marker positions.

The cost stacks three residual families:

* reprojection: observed minus projected pixel, per camera and marker;
* linearity: ``lambda_lin * (X0 - X1) x (X1 - X2)`` per timestamp;
* distance: ``lambda_dist * (|X0 - X1| - l_ref_0, |X1 - X2| - l_ref_1)``.

It is minimized with Levenberg-Marquardt. The three markers of one
timestamp form a 9-parameter block that is eliminated by a Schur
complement, leaving a small dense system over the camera parameters.
Camera 0's pose is held fixed to remove the rigid gauge freedom.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .geometry import (EPS_Z, CameraIntrinsics, CameraPose, distort, distort_coeff_jacobian,
                       distort_jacobian, rotvec_to_matrix, skew, undistort_points)
from .init_extrinsics import triangulate_dlt
from .observations import ObservationSet
from .wand import WandSpec

log = logging.getLogger(__name__)

BEHIND_PENALTY = 1e3
POSE_DIM = 6
INTR_DIM = 9   # fx, fy, cx, cy, k1, k2, p1, p2, k3
POINT_DIM = 9  # three markers per timestamp
MAX_DAMPING = 1e12


@dataclass
class BAOptions:
    max_iters: int = 100
    function_tolerance: float = 1e-12
    parameter_tolerance: float = 1e-10
    robust_loss: str | None = None      # None or "huber"
    huber_delta: float = 2.0
    initial_damping: float = 1e-4


@dataclass
class BAProblem:
    intrinsics: list
    poses: list
    points: np.ndarray        # (S, 3, 3) marker positions per timestamp
    timestamps: np.ndarray    # (S,)
    obs_cam: np.ndarray       # (N,)
    obs_ts: np.ndarray        # (N,) index into timestamps
    obs_px: np.ndarray        # (N, 3, 2)
    spec: WandSpec
    lambda_lin: float = 10.0
    lambda_dist: float = 100.0
    refine_intrinsics: bool = False
    camera_names: list = field(default_factory=list)

    @property
    def n_cameras(self) -> int:
        return len(self.intrinsics)

    @property
    def cam_dim(self) -> int:
        return POSE_DIM + (INTR_DIM if self.refine_intrinsics else 0)

    @classmethod
    def from_observations(cls, obs: ObservationSet, intrinsics, poses, spec: WandSpec, *,
                          lambda_lin: float = 10.0, lambda_dist: float = 100.0,
                          refine_intrinsics: bool = False, points=None) -> "BAProblem":
        """Assemble a problem; timestamps seen by fewer than two cameras are dropped.

        Marker positions are initialized by linear triangulation unless given.
        """
        obs = obs.with_min_cameras(2)
        ts, inv = obs.timestamps()
        if points is None:
            points = triangulate_observations(obs, intrinsics, poses)
        return cls(list(intrinsics), list(poses), np.array(points, dtype=float).reshape(-1, 3, 3),
                   ts, obs.camera.copy(), inv, obs.pixels.copy(), spec, float(lambda_lin),
                   float(lambda_dist), bool(refine_intrinsics),
                   list(obs.camera_names) or [c.name for c in intrinsics])

    def copy(self) -> "BAProblem":
        return copy.deepcopy(self)


def triangulate_observations(obs: ObservationSet, intrinsics, poses) -> np.ndarray:
    """Linear multi-view triangulation of every (timestamp, marker)."""
    _, inv = obs.timestamps()
    n_ts = int(inv.max()) + 1 if len(inv) else 0
    M = np.zeros((n_ts * 3, 4, 4))
    for c in np.unique(obs.camera):
        sel = obs.camera == c
        xy = undistort_points(intrinsics[c], obs.pixels[sel])          # (n, 3, 2)
        P = np.hstack([poses[c].R, poses[c].t[:, None]])
        r0 = xy[..., 0:1] * P[2] - P[0]
        r1 = xy[..., 1:2] * P[2] - P[1]
        contrib = np.einsum("nmi,nmj->nmij", r0, r0) + np.einsum("nmi,nmj->nmij", r1, r1)
        rows = (inv[sel][:, None] * 3 + np.arange(3)).reshape(-1)
        np.add.at(M, rows, contrib.reshape(-1, 4, 4))
    _, V = np.linalg.eigh(M)
    Xh = V[:, :, 0]
    return (Xh[:, :3] / Xh[:, 3:4]).reshape(n_ts, 3, 3)


# -- residuals ---------------------------------------------------------------

def _project_with_jacobians(intr: CameraIntrinsics, pose: CameraPose, X: np.ndarray, want_jac: bool):
    """Project (n, 3) points; optional Jacobians of the *prediction*."""
    Xc = X @ pose.R.T + pose.t
    z = Xc[:, 2]
    valid = z > EPS_Z
    zs = np.where(valid, z, 1.0)
    xy = Xc[:, :2] / zs[:, None]
    d = distort(xy, intr.dist)
    f = np.array([intr.fx, intr.fy])
    pred = d * f + np.array([intr.cx, intr.cy])
    if not want_jac:
        return pred, valid, None
    Dd = distort_jacobian(xy, intr.dist)                      # (n, 2, 2)
    dxy = np.zeros((len(X), 2, 3))
    dxy[:, 0, 0] = 1.0 / zs
    dxy[:, 1, 1] = 1.0 / zs
    dxy[:, 0, 2] = -xy[:, 0] / zs
    dxy[:, 1, 2] = -xy[:, 1] / zs
    G = f[None, :, None] * np.einsum("nij,njk->nik", Dd, dxy)  # d pred / d Xc
    RX = X @ pose.R.T
    S = np.zeros((len(X), 3, 3))
    S[:, 0, 1], S[:, 0, 2] = -RX[:, 2], RX[:, 1]
    S[:, 1, 0], S[:, 1, 2] = RX[:, 2], -RX[:, 0]
    S[:, 2, 0], S[:, 2, 1] = -RX[:, 1], RX[:, 0]
    jac = {
        "point": G @ pose.R,
        "rot": -np.einsum("nij,njk->nik", G, S),
        "trans": G,
    }
    Jin = np.zeros((len(X), 2, INTR_DIM))
    Jin[:, 0, 0] = d[:, 0]
    Jin[:, 1, 1] = d[:, 1]
    Jin[:, 0, 2] = 1.0
    Jin[:, 1, 3] = 1.0
    Jin[:, :, 4:] = f[None, :, None] * distort_coeff_jacobian(xy)
    jac["intr"] = Jin
    return pred, valid, jac


def _evaluate(problem: BAProblem, want_jac: bool):
    """Residual blocks and (optionally) their Jacobians.

    Returns a dict with ``r_proj`` (N, 3, 2), ``r_lin`` (S, 3), ``r_dist``
    (S, 2) and, when requested, ``J_cam`` (N, 3, 2, P), ``J_pt`` (N, 3, 2, 3),
    ``J_lin`` (S, 3, 9), ``J_dist`` (S, 2, 9).
    """
    N = len(problem.obs_cam)
    P = problem.cam_dim
    r_proj = np.zeros((N, 3, 2))
    out = {}
    if want_jac:
        J_cam = np.zeros((N, 3, 2, P))
        J_pt = np.zeros((N, 3, 2, 3))
    for c in range(problem.n_cameras):
        sel = np.flatnonzero(problem.obs_cam == c)
        if sel.size == 0:
            continue
        X = problem.points[problem.obs_ts[sel]].reshape(-1, 3)
        pred, valid, jac = _project_with_jacobians(problem.intrinsics[c], problem.poses[c], X, want_jac)
        r = problem.obs_px[sel].reshape(-1, 2) - pred
        r[~valid] = BEHIND_PENALTY
        r_proj[sel] = r.reshape(-1, 3, 2)
        if want_jac:
            v = valid[:, None, None]
            Jc = np.concatenate([jac["rot"], jac["trans"]] + ([jac["intr"]] if problem.refine_intrinsics else []),
                                axis=2)
            J_cam[sel] = np.where(v, -Jc, 0.0).reshape(-1, 3, 2, P)
            J_pt[sel] = np.where(v, -jac["point"], 0.0).reshape(-1, 3, 2, 3)
    out["r_proj"] = r_proj

    X0, X1, X2 = problem.points[:, 0], problem.points[:, 1], problem.points[:, 2]
    a, b = X0 - X1, X1 - X2
    lam_l, lam_d = problem.lambda_lin, problem.lambda_dist
    out["r_lin"] = lam_l * np.cross(a, b)
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    out["r_dist"] = lam_d * np.stack([na - problem.spec.l_ref_0, nb - problem.spec.l_ref_1], axis=1)
    if want_jac:
        S = len(problem.points)
        Ka = np.array([skew(v) for v in a]).reshape(S, 3, 3)
        Kb = np.array([skew(v) for v in b]).reshape(S, 3, 3)
        J_lin = np.zeros((S, 3, 9))
        J_lin[:, :, 0:3] = -Kb
        J_lin[:, :, 3:6] = Kb + Ka
        J_lin[:, :, 6:9] = -Ka
        J_dist = np.zeros((S, 2, 9))
        with np.errstate(invalid="ignore", divide="ignore"):
            ua = np.where(na[:, None] > 0, a / na[:, None], 0.0)
            ub = np.where(nb[:, None] > 0, b / nb[:, None], 0.0)
        J_dist[:, 0, 0:3] = ua
        J_dist[:, 0, 3:6] = -ua
        J_dist[:, 1, 3:6] = ub
        J_dist[:, 1, 6:9] = -ub
        out.update(J_cam=J_cam, J_pt=J_pt, J_lin=lam_l * J_lin, J_dist=lam_d * J_dist)
    return out


def residual_reprojection(problem: BAProblem, camera: int, point) -> np.ndarray:
    """Residual of one marker of one timestamp in one camera (observed - predicted).

    ``point`` is ``(timestamp_index, marker)``.
    """
    s, m = point
    sel = np.flatnonzero((problem.obs_cam == camera) & (problem.obs_ts == s))
    if sel.size == 0:
        raise KeyError(f"camera {camera} does not observe timestamp {s}")
    X = problem.points[s, m][None]
    pred, valid, _ = _project_with_jacobians(problem.intrinsics[camera], problem.poses[camera], X, False)
    if not valid[0]:
        return np.array([BEHIND_PENALTY, BEHIND_PENALTY])
    return problem.obs_px[sel[0], m] - pred[0]


def residual_linearity(X0, X1, X2, lambda_lin: float = 1.0) -> np.ndarray:
    X0, X1, X2 = (np.asarray(v, dtype=float) for v in (X0, X1, X2))
    return lambda_lin * np.cross(X0 - X1, X1 - X2)


def residual_distance(X0, X1, X2, spec: WandSpec, lambda_dist: float = 1.0) -> np.ndarray:
    X0, X1, X2 = (np.asarray(v, dtype=float) for v in (X0, X1, X2))
    return lambda_dist * np.array([np.linalg.norm(X0 - X1) - spec.l_ref_0,
                                   np.linalg.norm(X1 - X2) - spec.l_ref_1])


# -- robust weighting --------------------------------------------------------

def _robust_weights(r_proj: np.ndarray, options: BAOptions) -> np.ndarray:
    """Per-marker IRLS weights (N, 3) on squared pixel residuals."""
    s = np.einsum("nmk,nmk->nm", r_proj, r_proj)
    if options.robust_loss is None or options.robust_loss == "none":
        return np.ones_like(s)
    if options.robust_loss != "huber":
        raise ValueError(f"unknown robust loss {options.robust_loss!r}")
    d = options.huber_delta
    with np.errstate(divide="ignore"):
        return np.where(s <= d * d, 1.0, d / np.sqrt(s))


def _rho(r_proj: np.ndarray, options: BAOptions) -> np.ndarray:
    s = np.einsum("nmk,nmk->nm", r_proj, r_proj)
    if options.robust_loss in (None, "none"):
        return s
    d = options.huber_delta
    return np.where(s <= d * d, s, 2.0 * d * np.sqrt(s) - d * d)


def total_cost(problem: BAProblem, options: BAOptions | None = None, ev=None) -> float:
    options = options or BAOptions()
    ev = ev if ev is not None else _evaluate(problem, False)
    return 0.5 * float(_rho(ev["r_proj"], options).sum() + (ev["r_lin"] ** 2).sum()
                       + (ev["r_dist"] ** 2).sum())


def reprojection_cost(problem: BAProblem) -> float:
    r = _evaluate(problem, False)["r_proj"]
    return 0.5 * float((r ** 2).sum())


# -- parameter updates ------------------------------------------------------

def _free_cam_mask(problem: BAProblem) -> np.ndarray:
    P = problem.cam_dim
    mask = np.ones(problem.n_cameras * P, dtype=bool)
    mask[:POSE_DIM] = False   # gauge: reference camera pose
    return mask


def _apply(problem: BAProblem, dcam: np.ndarray, dpts: np.ndarray) -> BAProblem:
    """New problem state with camera (m, P) and point (S, 9) increments applied."""
    new = copy.copy(problem)
    poses = list(problem.poses)
    intr = list(problem.intrinsics)
    for c in range(problem.n_cameras):
        d = dcam[c]
        if c > 0 and np.any(d[:POSE_DIM]):
            R = rotvec_to_matrix(d[:3]) @ poses[c].R
            poses[c] = CameraPose.from_matrix(R, poses[c].t + d[3:6])
        if problem.refine_intrinsics and np.any(d[POSE_DIM:]):
            k = intr[c]
            p = np.array([k.fx, k.fy, k.cx, k.cy, *k.dist]) + d[POSE_DIM:]
            intr[c] = CameraIntrinsics(p[0], p[1], p[2], p[3], k.width, k.height, tuple(p[4:]), k.name) \
                if (p[0] > 0 and p[1] > 0 and 0 <= p[2] < k.width and 0 <= p[3] < k.height) else k
    new.poses = poses
    new.intrinsics = intr
    new.points = problem.points + dpts.reshape(-1, 3, 3)
    return new


# -- normal equations ----------------------------------------------------------

def _normal_equations(problem: BAProblem, ev: dict, weights: np.ndarray):
    m, P = problem.n_cameras, problem.cam_dim
    S = len(problem.points)
    sw = np.sqrt(weights)[:, :, None]
    r = ev["r_proj"] * sw
    Jc = ev["J_cam"] * sw[..., None]
    Jp = ev["J_pt"] * sw[..., None]

    U = np.zeros((m, P, P))
    gc = np.zeros((m, P))
    JcTJc = np.einsum("nmki,nmkj->nij", Jc, Jc)
    JcTr = np.einsum("nmki,nmk->ni", Jc, r)
    np.add.at(U, problem.obs_cam, JcTJc)
    np.add.at(gc, problem.obs_cam, JcTr)

    V = np.zeros((S, 9, 9))
    gp = np.zeros((S, 9))
    JpTJp = np.einsum("nmki,nmkj->nmij", Jp, Jp)     # (N, 3, 3, 3)
    JpTr = np.einsum("nmki,nmk->nmi", Jp, r)        # (N, 3, 3)
    for mk in range(3):
        sl = slice(3 * mk, 3 * mk + 3)
        np.add.at(V[:, sl, sl], problem.obs_ts, JpTJp[:, mk])
        np.add.at(gp[:, sl], problem.obs_ts, JpTr[:, mk])
    V += np.einsum("ski,skj->sij", ev["J_lin"], ev["J_lin"])
    V += np.einsum("ski,skj->sij", ev["J_dist"], ev["J_dist"])
    gp += np.einsum("ski,sk->si", ev["J_lin"], ev["r_lin"])
    gp += np.einsum("ski,sk->si", ev["J_dist"], ev["r_dist"])

    W = np.einsum("nmki,nmkj->nmij", Jc, Jp).transpose(0, 2, 1, 3).reshape(-1, P, 9)
    Wp = np.zeros((S, m, P, 9))
    Wp[problem.obs_ts, problem.obs_cam] = W
    return U, gc, V, gp, Wp


def _solve_step(problem, U, gc, V, gp, Wp, lam):
    """Damped step via Schur complement; raises LinAlgError if indefinite."""
    m, P = problem.n_cameras, problem.cam_dim
    idx = np.arange(P)
    Ud = U.copy()
    Dc = np.maximum(U[:, idx, idx], 1e-12)
    Ud[:, idx, idx] += lam * Dc
    i9 = np.arange(9)
    Vd = V.copy()
    Dp = np.maximum(V[:, i9, i9], 1e-12)
    Vd[:, i9, i9] += lam * Dp
    Lv = np.linalg.cholesky(Vd)   # LinAlgError if a point block is indefinite
    eye = np.broadcast_to(np.eye(9), Vd.shape)
    Linv = np.linalg.solve(Lv, eye)
    Vinv = np.einsum("sji,sjk->sik", Linv, Linv)

    Y = np.einsum("sjab,sbc->sjac", Wp, Vinv)             # (S, m, P, 9)
    Sc = np.zeros((m, P, m, P))
    for j in range(m):
        Sc[j, :, j, :] = Ud[j]
    Sc -= np.einsum("sjab,skcb->jakc", Y, Wp)
    rhs = -gc + np.einsum("sjab,sb->ja", Y, gp)
    free = _free_cam_mask(problem)
    A = Sc.reshape(m * P, m * P)[np.ix_(free, free)]
    c, low = cho_factor(A)
    dfree = cho_solve((c, low), rhs.reshape(-1)[free])
    dcam = np.zeros(m * P)
    dcam[free] = dfree
    dcam = dcam.reshape(m, P)
    dp = np.einsum("sij,sj->si", Vinv, -gp - np.einsum("sjab,ja->sb", Wp, dcam))
    # model decrease for the damped step
    g = np.concatenate([gc.reshape(-1)[free], gp.reshape(-1)])
    delta = np.concatenate([dcam.reshape(-1)[free], dp.reshape(-1)])
    D = np.concatenate([Dc.reshape(-1)[free], Dp.reshape(-1)])
    pred = -0.5 * g @ delta + 0.5 * lam * (delta * D) @ delta
    return dcam, dp, pred


# -- solver ----------------------------------------------------------------

def _param_norm(problem: BAProblem) -> float:
    t = np.array([p.t for p in problem.poses])
    return float(np.sqrt((t ** 2).sum() + (problem.points ** 2).sum()))


@dataclass
class BAReport:
    camera_names: list
    mae: np.ndarray            # per camera, pixels
    std: np.ndarray
    initial_cost: float
    final_cost: float
    iterations: int
    converged: bool
    message: str = ""
    cost_history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "cameras": [{"name": n, "reprojection_mae_px": float(a), "reprojection_std_px": float(s)}
                        for n, a, s in zip(self.camera_names, self.mae, self.std)],
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "iterations": self.iterations,
            "converged": self.converged,
            "message": self.message,
        }


def reprojection_stats(problem: BAProblem):
    """Per-camera mean and std of Euclidean pixel residuals."""
    r = np.linalg.norm(_evaluate(problem, False)["r_proj"], axis=2)
    mae = np.full(problem.n_cameras, np.nan)
    std = np.full(problem.n_cameras, np.nan)
    for c in range(problem.n_cameras):
        v = r[problem.obs_cam == c].reshape(-1)
        if v.size:
            mae[c], std[c] = v.mean(), v.std()
    return mae, std


def solve(problem: BAProblem, options: BAOptions | None = None) -> tuple[BAProblem, BAReport]:
    """Levenberg-Marquardt on the stacked residuals; returns the refined problem and a report."""
    options = options or BAOptions()
    state = problem
    ev = _evaluate(state, True)
    cost = total_cost(state, options, ev)
    initial = cost
    history = [cost]
    lam = options.initial_damping
    converged, message = False, "maximum iterations reached"
    it = 0
    while it < options.max_iters:
        it += 1
        if cost == 0.0:
            converged, message = True, "zero cost"
            break
        weights = _robust_weights(ev["r_proj"], options)
        U, gc, V, gp, Wp = _normal_equations(state, ev, weights)
        while True:
            try:
                dcam, dp, pred = _solve_step(state, U, gc, V, gp, Wp, lam)
                break
            except LinAlgError:
                lam *= 10.0
                if lam > MAX_DAMPING:
                    break
        if lam > MAX_DAMPING:
            message = "normal equations not positive definite at maximal damping"
            log.warning("bundle adjustment: %s", message)
            break
        if pred <= options.function_tolerance * cost:
            converged, message = True, "predicted decrease below tolerance"
            break
        ptol = options.parameter_tolerance
        if np.sqrt((dcam ** 2).sum() + (dp ** 2).sum()) <= ptol * (_param_norm(state) + ptol):
            converged, message = True, "step below parameter tolerance"
            break
        cand = _apply(state, dcam, dp)
        ev_new = _evaluate(cand, True)
        new_cost = total_cost(cand, options, ev_new)
        if np.isfinite(new_cost) and new_cost < cost:
            rel = (cost - new_cost) / cost
            state, ev, cost = cand, ev_new, new_cost
            history.append(cost)
            lam = max(lam / 10.0, 1e-15)
            log.debug("iter %d: cost %.6e (rel change %.3e, lambda %.1e)", it, cost, rel, lam)
            if rel < options.function_tolerance:
                converged, message = True, "relative cost change below tolerance"
                break
        else:
            lam *= 10.0
            if lam > MAX_DAMPING:
                message = "damping exceeded its maximum without a cost decrease"
                break
    mae, std = reprojection_stats(state)
    report = BAReport(list(state.camera_names), mae, std, initial, cost, it, converged, message, history)
    return state, report


# -- Jacobian verification ----------------------------------------------------

def _flat_params(problem: BAProblem) -> int:
    return problem.n_cameras * problem.cam_dim + len(problem.points) * POINT_DIM


def _residual_vector(problem: BAProblem) -> dict:
    ev = _evaluate(problem, False)
    return {"reprojection": ev["r_proj"].reshape(-1), "linearity": ev["r_lin"].reshape(-1),
            "distance": ev["r_dist"].reshape(-1)}


def _perturb(problem: BAProblem, col: int, h: float) -> BAProblem:
    m, P = problem.n_cameras, problem.cam_dim
    dcam = np.zeros(m * P)
    dpts = np.zeros(len(problem.points) * POINT_DIM)
    if col < m * P:
        dcam[col] = h
    else:
        dpts[col - m * P] = h
    return _apply(problem, dcam.reshape(m, P), dpts)


def _analytic_column(problem: BAProblem, ev: dict, col: int) -> dict:
    m, P = problem.n_cameras, problem.cam_dim
    N, S = len(problem.obs_cam), len(problem.points)
    proj = np.zeros((N, 3, 2))
    lin = np.zeros((S, 3))
    dist = np.zeros((S, 2))
    if col < m * P:
        c, a = divmod(col, P)
        sel = problem.obs_cam == c
        proj[sel] = ev["J_cam"][sel, :, :, a]
    else:
        s, q = divmod(col - m * P, POINT_DIM)
        mk, ax = divmod(q, 3)
        sel = problem.obs_ts == s
        proj[sel, mk] = ev["J_pt"][sel, mk, :, ax]
        lin[s] = ev["J_lin"][s, :, q]
        dist[s] = ev["J_dist"][s, :, q]
    return {"reprojection": proj.reshape(-1), "linearity": lin.reshape(-1), "distance": dist.reshape(-1)}


def jacobian_check(problem: BAProblem, perturbation: float = 1e-7, n_columns: int | None = None,
                   seed: int = 0) -> dict:
    """Max relative discrepancy between analytic and central-difference Jacobians.

    Columns (parameters) are sampled at random unless ``n_columns`` is None,
    in which case all free parameters are checked. The discrepancy of a
    column is ``max|J_a - J_fd| / max|J_fd|`` within each residual family;
    columns a family does not depend on are skipped for that family.
    """
    ev = _evaluate(problem, True)
    m, P = problem.n_cameras, problem.cam_dim
    cols = np.arange(_flat_params(problem))
    cols = cols[(cols >= POSE_DIM)]   # reference pose is frozen
    if n_columns is not None and n_columns < len(cols):
        cols = np.sort(np.random.default_rng(seed).choice(cols, n_columns, replace=False))
    worst = {"reprojection": 0.0, "linearity": 0.0, "distance": 0.0}
    for col in cols:
        if col < m * P and problem.refine_intrinsics and col % P >= POSE_DIM:
            # intrinsic parameters live on very different scales
            c, a = divmod(col, P)
            k = problem.intrinsics[c]
            val = [k.fx, k.fy, k.cx, k.cy, *k.dist][a - POSE_DIM]
            h = perturbation * max(1.0, abs(val))
        else:
            h = perturbation
        rp = _residual_vector(_perturb(problem, col, h))
        rm = _residual_vector(_perturb(problem, col, -h))
        ana = _analytic_column(problem, ev, col)
        for fam in worst:
            fd = (rp[fam] - rm[fam]) / (2 * h)
            scale = max(np.abs(fd).max(initial=0.0), np.abs(ana[fam]).max(initial=0.0))
            if scale < 1e-9:
                continue
            worst[fam] = max(worst[fam], float(np.abs(ana[fam] - fd).max() / scale))
    return worst
