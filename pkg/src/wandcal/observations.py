"""Wand observations: one labeled marker triple per (camera, timestamp)."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


def time_key(t) -> np.ndarray:
    """Integer microsecond key used to match timestamps across cameras."""
    return np.round(np.asarray(t, dtype=float) * 1e6).astype(np.int64)


@dataclass
class ObservationSet:
    camera: np.ndarray          # (N,) camera index
    t: np.ndarray               # (N,) seconds
    pixels: np.ndarray          # (N, 3, 2) marker 0, 1, 2
    camera_names: list = field(default_factory=list)

    def __post_init__(self):
        self.camera = np.asarray(self.camera, dtype=np.int64).reshape(-1)
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.pixels = np.asarray(self.pixels, dtype=float).reshape(-1, 3, 2)
        if not (len(self.camera) == len(self.t) == len(self.pixels)):
            raise ValueError("observation arrays differ in length")
        order = np.lexsort((self.camera, time_key(self.t)))
        self.camera, self.t, self.pixels = self.camera[order], self.t[order], self.pixels[order]
        keys = time_key(self.t)
        if len(keys) > 1:
            dup = (np.diff(keys) == 0) & (np.diff(self.camera) == 0)
            if dup.any():
                raise ValueError("duplicate (camera, timestamp) observation")

    def __len__(self):
        return len(self.camera)

    @property
    def n_cameras(self) -> int:
        if self.camera_names:
            return len(self.camera_names)
        return int(self.camera.max()) + 1 if len(self.camera) else 0

    @property
    def keys(self) -> np.ndarray:
        return time_key(self.t)

    def timestamps(self):
        """Unique timestamps and, per observation, the index into them."""
        keys = self.keys
        uniq, first, inv = np.unique(keys, return_index=True, return_inverse=True)
        return self.t[first], inv

    def subset(self, mask) -> "ObservationSet":
        mask = np.asarray(mask)
        return ObservationSet(self.camera[mask], self.t[mask], self.pixels[mask], list(self.camera_names))

    def with_min_cameras(self, k: int = 2) -> "ObservationSet":
        """Drop timestamps seen by fewer than ``k`` cameras."""
        _, inv = self.timestamps()
        counts = np.bincount(inv)
        return self.subset(counts[inv] >= k)

    def cameras_present(self) -> np.ndarray:
        return np.unique(self.camera)


OBS_HEADER = ["camera", "t_s", "marker", "u", "v"]


def write_observations_csv(path, obs: ObservationSet) -> None:
    """Rows ``camera,t_s,marker,u,v`` sorted by (t, camera, marker)."""
    names = obs.camera_names or [str(i) for i in range(obs.n_cameras)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBS_HEADER)
        for c, t, px in zip(obs.camera.tolist(), obs.t.tolist(), obs.pixels):
            for m in range(3):
                w.writerow([names[c], repr(float(t)), m, repr(float(px[m, 0])), repr(float(px[m, 1]))])


def read_observations_csv(path, camera_names=None) -> ObservationSet:
    """Load an observation log; incomplete triples are dropped.

    ``camera_names`` fixes the index order (normally the intrinsics file
    order). Without it, names are indexed in order of first appearance.
    """
    names = list(camera_names) if camera_names is not None else []
    index = {n: i for i, n in enumerate(names)}
    groups: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(OBS_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"observation file lacks columns {sorted(missing)}")
        for row in reader:
            name = row["camera"]
            if name not in index:
                if camera_names is not None:
                    raise ValueError(f"unknown camera {name!r} in observations")
                index[name] = len(names)
                names.append(name)
            t = float(row["t_s"])
            key = (index[name], int(round(t * 1e6)))
            entry = groups.setdefault(key, [t, {}])
            entry[1][int(row["marker"])] = (float(row["u"]), float(row["v"]))
    cams, ts, pix = [], [], []
    for (c, _), (t, markers) in groups.items():
        if all(m in markers for m in (0, 1, 2)):
            cams.append(c)
            ts.append(t)
            pix.append([markers[0], markers[1], markers[2]])
    return ObservationSet(np.array(cams, dtype=np.int64), np.array(ts, dtype=float),
                          np.array(pix, dtype=float).reshape(-1, 3, 2), names)
