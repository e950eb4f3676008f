"""Three-marker wand: geometry, config file, and marker labeling.

The markers sit on a line with unequal spacings ``l_ref_0`` (marker 0 to 1)
and ``l_ref_1`` (marker 1 to 2). In an image the middle marker is the one
between the other two, and the spacing ratio tells the two ends apart.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .errors import NoWand

RATIO_GATE = 0.20
COLLINEARITY_GATE_PX = 2.0
TIE_EPS = 1e-9
MAX_CANDIDATES = 24


@dataclass(frozen=True)
class WandSpec:
    l_ref_0: float = 0.15
    l_ref_1: float = 0.30
    blink_frequency: float = 500.0
    manufacturing_tolerance: float = 0.002

    def __post_init__(self):
        if not (self.l_ref_0 > 0 and self.l_ref_1 > 0):
            raise ValueError("marker spacings must be positive")
        if self.l_ref_0 == self.l_ref_1:
            raise ValueError("equal spacings make the marker order ambiguous")
        if not (0 < self.blink_frequency <= 600):
            raise ValueError("blink frequency must lie in (0, 600] Hz")

    @property
    def ratio(self) -> float:
        return self.l_ref_0 / self.l_ref_1

    @property
    def length(self) -> float:
        return self.l_ref_0 + self.l_ref_1

    def marker_offsets(self) -> np.ndarray:
        """Marker positions along the wand axis, centered on the wand midpoint."""
        s = np.array([0.0, self.l_ref_0, self.l_ref_0 + self.l_ref_1])
        return s - s[-1] / 2.0

    def to_dict(self) -> dict:
        return {"l_ref_0": self.l_ref_0, "l_ref_1": self.l_ref_1,
                "blink_frequency_hz": self.blink_frequency,
                "tolerance_m": self.manufacturing_tolerance}

    @classmethod
    def from_dict(cls, d: dict) -> "WandSpec":
        return cls(l_ref_0=float(d["l_ref_0"]), l_ref_1=float(d["l_ref_1"]),
                   blink_frequency=float(d.get("blink_frequency_hz", 500.0)),
                   manufacturing_tolerance=float(d.get("tolerance_m", 0.002)))


def load_wand(path) -> WandSpec:
    with open(path) as fh:
        return WandSpec.from_dict(json.load(fh))


def save_wand(path, spec: WandSpec) -> None:
    with open(path, "w") as fh:
        json.dump(spec.to_dict(), fh, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class LabeledTriple:
    p0: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    timestamp: float = 0.0
    camera_index: int = 0
    score: float = 0.0

    @property
    def points(self) -> np.ndarray:
        return np.stack([self.p0, self.p1, self.p2])


def _score_triples(P: np.ndarray, ratio: float):
    """Score every candidate triple in ``P`` (C, 3, 2).

    Returns (ordered points (C, 3, 2), collinearity residual, ratio error).
    """
    c = P.mean(axis=1, keepdims=True)
    Q = P - c
    cov = np.einsum("cki,ckj->cij", Q, Q)
    _, vecs = np.linalg.eigh(cov)
    direction = vecs[:, :, 1]
    normal = vecs[:, :, 0]
    collin = np.abs(np.einsum("cki,ci->ck", Q, normal)).max(axis=1)

    along = np.einsum("cki,ci->ck", Q, direction)
    order = np.argsort(along, axis=1, kind="stable")
    S = np.take_along_axis(P, order[:, :, None], axis=1)
    d01 = np.linalg.norm(S[:, 1] - S[:, 0], axis=1)
    d12 = np.linalg.norm(S[:, 2] - S[:, 1], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        fwd = np.abs(d01 / d12 / ratio - 1.0)
        bwd = np.abs(d12 / d01 / ratio - 1.0)
    flip = bwd < fwd
    S[flip] = S[flip][:, ::-1]
    err = np.where(flip, bwd, fwd)
    err = np.where(np.isfinite(err), err, np.inf)
    return S, collin, err


def label_markers(blobs, spec: WandSpec, *, ratio_gate: float = RATIO_GATE,
                  collinearity_gate: float = COLLINEARITY_GATE_PX,
                  max_span: float | None = None,
                  timestamp: float = 0.0, camera_index: int = 0) -> LabeledTriple:
    """Pick and order the three wand markers among candidate centers.

    Every 3-subset is scored by its maximal point-to-line distance plus the
    relative error of its spacing ratio against ``l_ref_0 / l_ref_1``. Raises
    NoWand if nothing passes both gates, or if the two best subsets tie.
    """
    pts = np.asarray(blobs, dtype=float).reshape(-1, 2)
    if len(pts) < 3:
        raise NoWand(f"need at least 3 blobs, got {len(pts)}")
    # canonical order so the result never depends on input order
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    if len(pts) > MAX_CANDIDATES:
        raise NoWand(f"too many candidate blobs ({len(pts)})")

    combos = np.array(list(itertools.combinations(range(len(pts)), 3)))
    P = pts[combos]
    if max_span is not None:
        span = np.max(np.linalg.norm(P[:, :, None, :] - P[:, None, :, :], axis=-1), axis=(1, 2))
        P = P[span <= max_span]
        if len(P) == 0:
            raise NoWand("no candidate triple fits in the proximity window")
    S, collin, err = _score_triples(P, spec.ratio)
    ok = (collin <= collinearity_gate) & (err <= ratio_gate)
    if not ok.any():
        raise NoWand("no collinear triple with a matching spacing ratio")
    score = np.where(ok, collin + err, np.inf)
    best = int(np.argmin(score))
    if ok.sum() > 1:
        runner_up = np.partition(score, 1)[1]
        if runner_up - score[best] <= TIE_EPS:
            raise NoWand("ambiguous wand: two candidate triples score equally")
    p0, p1, p2 = S[best]
    return LabeledTriple(p0.copy(), p1.copy(), p2.copy(), timestamp=timestamp,
                         camera_index=camera_index, score=float(score[best]))
