"""End-to-end stages behind the command line: simulate, detect, calibrate, evaluate.

Each ``cmd_*`` function returns a process exit code; failures raise
``StageError`` carrying the code and a message.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bundle_adjustment import BAOptions, BAProblem, BAReport, solve
from .errors import (CalibrationError, DegenerateCloud, DisconnectedGraph, FlatObjective, NoWand)
from .evaluation import (find_time_offset, positional_error_report, read_trajectory_csv,
                         reprojection_mae, triangulate_all, write_trajectory_csv)
from .event_detect import detect_wand_events, read_events_csv, write_events_csv
from .frame_detect import detect_wand_frame, encode_pgm, iter_pgm_stream, open_stream
from .geometry import CameraIntrinsics, CameraPose, load_intrinsics, save_intrinsics
from .init_extrinsics import RANSAC_MAX_ITERS, RANSAC_THRESHOLD, MIN_INLIERS, InitResult, initialize_extrinsics
from .observations import ObservationSet, read_observations_csv, write_observations_csv
from .simulator import (FrameRenderer, Scenario, default_rig, generate_events, ground_truth_observations,
                        random_trajectory)
from .wand import WandSpec, load_wand, save_wand

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DETECT = 3
EXIT_GRAPH = 4
EXIT_SOLVER = 5
EXIT_EVALUATE = 6

TRAJECTORY_RATE_HZ = 100.0
EVAL_MARKER = 1


class StageError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _dump_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=False, allow_nan=False)
        fh.write("\n")


def _num(v):
    v = float(v)
    return v if np.isfinite(v) else None


def load_json_config(path) -> dict:
    """Parse a JSON file; syntax errors become exit-code-2 failures with line and column."""
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise StageError(EXIT_CONFIG, f"{path}: file not found")
    except json.JSONDecodeError as exc:
        raise StageError(EXIT_CONFIG, f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}")


def pose_to_dict(name: str, pose: CameraPose) -> dict:
    return {"name": name, "rotation_quaternion_wxyz": [float(v) for v in pose.quaternion],
            "translation_m": [float(v) for v in pose.translation]}


def pose_from_dict(d: dict) -> CameraPose:
    return CameraPose(np.array(d["rotation_quaternion_wxyz"], dtype=float),
                      np.array(d["translation_m"], dtype=float))


def load_calibration(path):
    """Camera names and poses from a result or ground-truth JSON file."""
    doc = load_json_config(path)
    try:
        cams = doc["cameras"]
        return [c["name"] for c in cams], [pose_from_dict(c) for c in cams]
    except (KeyError, TypeError, ValueError) as exc:
        raise StageError(EXIT_CONFIG, f"{path}: malformed calibration ({exc})")


# -- simulate ---------------------------------------------------------------

def cmd_simulate(scenario: Scenario, out_dir) -> int:
    """Write a synthetic dataset: frames, events, calibration inputs and ground truth."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "events").mkdir(exist_ok=True)
    (out / "trajectories").mkdir(exist_ok=True)
    rig = default_rig(scenario.seed)
    spec = WandSpec()
    # knots need a little slack past the last sample
    traj = random_trajectory(max(scenario.duration_s, 1e-9) + 1.0, scenario.seed, spec,
                             static=scenario.duration_s == 0)
    times = rig.sample_times(scenario.duration_s)
    with open(out / "sample_times.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s"])
        for t in times.tolist():
            w.writerow([repr(t)])
    cams = []
    for j, cam in enumerate(rig.cameras):
        entry = {"name": cam.name, "kind": cam.kind}
        if cam.kind == "frame":
            rel = f"frames/{cam.name}.pgm.gz"
            r = FrameRenderer(rig, j, traj, intensity_sigma=scenario.intensity_sigma,
                              exposure=scenario.exposure_s, seed=scenario.seed)
            with open_stream(out / rel, "wb") as fh:
                for t in times.tolist():
                    fh.write(encode_pgm(r.render(t)))
            entry["frames"] = rel
        else:
            rel = f"events/{cam.name}.csv"
            ev = generate_events(rig, traj, j, scenario.duration_s, sensor=scenario.sensor,
                                 blink_hz=scenario.blink_hz, duty=scenario.duty, seed=scenario.seed)
            write_events_csv(out / rel, ev)
            entry["events"] = rel
            log.info("%s: %d events", cam.name, len(ev))
        cams.append(entry)
    save_intrinsics(out / "intrinsics.json", rig.intrinsics)
    save_wand(out / "wand.json", WandSpec(spec.l_ref_0, spec.l_ref_1, min(scenario.blink_hz, 600.0),
                                          spec.manufacturing_tolerance))
    gt = ground_truth_observations(rig, traj, times)
    write_observations_csv(out / "ground_truth_observations.csv", gt.obs)
    _dump_json(out / "ground_truth.json", {
        "cameras": [dict(pose_to_dict(c.name, c.pose), kind=c.kind) for c in rig.cameras],
        "room_to_reference": pose_to_dict("room", rig.room_to_ref),
    })
    t_traj = np.arange(int(np.floor(scenario.duration_s * TRAJECTORY_RATE_HZ + 1e-9))) / TRAJECTORY_RATE_HZ
    write_trajectory_csv(out / "trajectories" / "marker1.csv", t_traj,
                         traj.markers(t_traj)[:, EVAL_MARKER] if len(t_traj) else np.zeros((0, 3)))
    _dump_json(out / "manifest.json", {
        "scenario": scenario.to_dict(),
        "trigger_hz": rig.trigger_hz,
        "n_samples": int(len(times)),
        "sample_times": "sample_times.csv",
        "cameras": cams,
        "intrinsics": "intrinsics.json",
        "wand": "wand.json",
        "ground_truth": "ground_truth.json",
        "ground_truth_observations": "ground_truth_observations.csv",
        "trajectory": "trajectories/marker1.csv",
    })
    return EXIT_OK


# -- detect -------------------------------------------------------------------

def _read_sample_times(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["t_s"]) for r in rows], dtype=float)


def detect_dataset(dataset_dir, spec: WandSpec | None = None) -> ObservationSet:
    """Wand observations from every camera of a dataset directory."""
    root = Path(dataset_dir)
    manifest = load_json_config(root / "manifest.json")
    intr = load_intrinsics(root / manifest["intrinsics"])
    spec = spec or load_wand(root / manifest["wand"])
    blink = float(manifest.get("scenario", {}).get("blink_hz", spec.blink_frequency))
    times = _read_sample_times(root / manifest["sample_times"])
    names = [c.name for c in intr]
    cams, ts, pix = [], [], []
    if not manifest["cameras"]:
        raise StageError(EXIT_DETECT, "dataset contains no cameras")
    for entry in manifest["cameras"]:
        j = names.index(entry["name"])
        found = []
        if "frames" in entry:
            for t, img in zip(times.tolist(), iter_pgm_stream(root / entry["frames"])):
                try:
                    found.append(detect_wand_frame(img, spec, timestamp=t, camera_index=j))
                except NoWand:
                    pass
        elif "events" in entry:
            k = intr[j]
            stream = read_events_csv(root / entry["events"], k.width, k.height)
            found = detect_wand_events(stream, spec, times, target_frequency=blink, camera_index=j)
        log.info("%s: %d/%d samples with a wand", entry["name"], len(found), len(times))
        if not found:
            raise StageError(EXIT_DETECT, f"camera {entry['name']!r} yielded no wand detections")
        for tr in found:
            cams.append(j)
            ts.append(tr.timestamp)
            pix.append(tr.points)
    return ObservationSet(np.array(cams), np.array(ts), np.array(pix).reshape(-1, 3, 2), names)


def cmd_detect(dataset_dir, out_path) -> int:
    obs = detect_dataset(dataset_dir)
    write_observations_csv(out_path, obs)
    return EXIT_OK


# -- calibrate ------------------------------------------------------------

@dataclass
class CalibrateOptions:
    ransac_threshold: float = RANSAC_THRESHOLD
    ransac_max_iters: int = RANSAC_MAX_ITERS
    ransac_seed: int = 0
    min_inliers: int = MIN_INLIERS
    refine_intrinsics: bool = False
    robust_loss: str = "none"
    huber_delta: float = 2.0
    lambda_lin: float = 10.0
    lambda_dist: float = 100.0
    max_iters: int = 100
    function_tolerance: float = 1e-12

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Calibration:
    names: list
    poses: list
    intrinsics: list
    report: BAReport
    problem: BAProblem
    init: InitResult
    options: CalibrateOptions = field(default_factory=CalibrateOptions)

    def to_dict(self) -> dict:
        cams = []
        for n, p, k in zip(self.names, self.poses, self.intrinsics):
            d = pose_to_dict(n, p)
            if self.options.refine_intrinsics:
                d["intrinsics"] = k.to_dict()
            cams.append(d)
        rep = self.report.to_dict()
        for c in rep["cameras"]:
            c["reprojection_mae_px"] = _num(c["reprojection_mae_px"])
            c["reprojection_std_px"] = _num(c["reprojection_std_px"])
        rep["outliers_rejected"] = int(self.init.outlier_mask.sum())
        return {"cameras": cams, "report": rep, "config": self.options.to_dict()}


def calibrate(obs: ObservationSet, intrinsics, spec: WandSpec,
              options: CalibrateOptions | None = None) -> Calibration:
    """Pairwise initialization followed by bundle adjustment."""
    options = options or CalibrateOptions()
    names = [k.name for k in intrinsics]
    present = set(np.unique(obs.camera).tolist())
    missing = [i for i in range(len(intrinsics)) if i not in present]
    if len(present) < 2:
        raise DisconnectedGraph(missing or [0], names)
    init = initialize_extrinsics(obs, intrinsics, spec, threshold=options.ransac_threshold,
                                 max_iters=options.ransac_max_iters, seed=options.ransac_seed,
                                 min_inliers=options.min_inliers)
    kept = obs.subset(~init.outlier_mask)
    problem = BAProblem.from_observations(kept, intrinsics, init.poses, spec,
                                          lambda_lin=options.lambda_lin, lambda_dist=options.lambda_dist,
                                          refine_intrinsics=options.refine_intrinsics)
    ba_opts = BAOptions(max_iters=options.max_iters, function_tolerance=options.function_tolerance,
                        robust_loss=None if options.robust_loss == "none" else options.robust_loss,
                        huber_delta=options.huber_delta)
    solved, report = solve(problem, ba_opts)
    return Calibration(names, solved.poses, solved.intrinsics, report, solved, init, options)


def cmd_calibrate(observations_path, intrinsics_path, wand_path, out_path,
                  options: CalibrateOptions | None = None) -> int:
    try:
        intr = load_intrinsics(intrinsics_path)
        spec = load_wand(wand_path)
        obs = read_observations_csv(observations_path, [k.name for k in intr])
    except (OSError, ValueError, KeyError) as exc:
        raise StageError(EXIT_CONFIG, f"cannot load inputs: {exc}")
    try:
        cal = calibrate(obs, intr, spec, options)
    except DisconnectedGraph as exc:
        raise StageError(EXIT_GRAPH, str(exc))
    _dump_json(out_path, cal.to_dict())
    if not cal.report.converged:
        raise StageError(EXIT_SOLVER, f"bundle adjustment did not converge: {cal.report.message}")
    return EXIT_OK


# -- evaluate -------------------------------------------------------------

def evaluate(obs: ObservationSet, intrinsics, poses, gt_t, gt_x, names=None, marker: int = EVAL_MARKER) -> dict:
    """Reprojection statistics and 3D error of one marker's track against a reference trajectory."""
    names = names or [k.name for k in intrinsics]
    mae, std = reprojection_mae(intrinsics, poses, obs)
    times, X, ok, _ = triangulate_all(obs, intrinsics, poses)
    good = ok[:, marker]
    est_t, est_x = times[good], X[good, marker]
    offset, al = find_time_offset(est_t, est_x, gt_t, gt_x)
    err = positional_error_report(est_t, est_x, gt_t, gt_x, al, offset)
    return {
        "reprojection": {"cameras": [{"name": n, "mae_px": _num(a), "std_px": _num(s)}
                                     for n, a, s in zip(names, mae, std)]},
        "position": {k: (_num(v) if k != "samples" else v) for k, v in err.to_dict().items()},
        "time_offset_s": offset,
        "alignment": al.to_dict(),
        "triangulated": int(good.sum()),
        "ill_conditioned": int((~ok[:, marker]).sum()),
    }


def cmd_evaluate(calibration_path, observations_path, intrinsics_path, trajectory_path, out_path,
                 marker: int = EVAL_MARKER) -> int:
    try:
        intr = load_intrinsics(intrinsics_path)
        names, poses = load_calibration(calibration_path)
        obs = read_observations_csv(observations_path, [k.name for k in intr])
        gt_t, gt_x = read_trajectory_csv(trajectory_path)
    except (OSError, ValueError, KeyError) as exc:
        raise StageError(EXIT_CONFIG, f"cannot load inputs: {exc}")
    order = [names.index(k.name) for k in intr]
    poses = [poses[i] for i in order]
    try:
        doc = evaluate(obs, intr, poses, gt_t, gt_x, [k.name for k in intr], marker)
    except (FlatObjective, DegenerateCloud) as exc:
        raise StageError(EXIT_EVALUATE, f"{type(exc).__name__}: {exc}")
    _dump_json(out_path, doc)
    return EXIT_OK


def configure_logging() -> None:
    level = os.environ.get("EWAND_LOG", "WARNING").upper()
    if level.isdigit():
        lvl = int(level)
    else:
        lvl = getattr(logging, level, logging.WARNING)
    logging.basicConfig(level=lvl, format="%(levelname)s %(name)s: %(message)s")
