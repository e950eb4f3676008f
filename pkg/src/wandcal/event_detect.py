"""Marker extraction from event streams by per-pixel blink frequency.

Each pixel tracks the period between consecutive rising transitions (an ON
event following an OFF, or the first ON). The inverse period is smoothed
with an exponential moving average. Pixels whose frequency sits in a band
around the blink frequency, and which were refreshed recently, form a
binary mask whose blobs are the marker centers.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from . import kernels
from .errors import NoWand, OutOfBounds, UnsortedStream
from .frame_detect import DEFAULT_MAX_SPAN_PX, DEFAULT_MIN_AREA, Blob, detect_blobs, filter_wand_blobs
from .wand import LabeledTriple, WandSpec

DEFAULT_ALPHA = 0.3
DEFAULT_BAND = 0.10
DEFAULT_STALENESS_PERIODS = 4.0
# just under one period: every masked pixel contributes exactly one rising edge
DEFAULT_FRESHNESS_PERIODS = 0.95


@dataclass(frozen=True)
class EventRecord:
    x: int
    y: int
    t: float
    polarity: int


@dataclass
class EventStream:
    """Column-oriented event storage: t in seconds, polarity in {+1, -1}."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    width: int = 0
    height: int = 0

    def __post_init__(self):
        self.t = np.ascontiguousarray(self.t, dtype=float)
        self.x = np.ascontiguousarray(self.x, dtype=np.int64)
        self.y = np.ascontiguousarray(self.y, dtype=np.int64)
        self.p = np.ascontiguousarray(np.where(np.asarray(self.p) > 0, 1, -1), dtype=np.int8)

    def __len__(self):
        return len(self.t)

    def records(self):
        for x, y, t, p in zip(self.x.tolist(), self.y.tolist(), self.t.tolist(), self.p.tolist()):
            yield EventRecord(x, y, t, p)

    @classmethod
    def empty(cls, width=0, height=0):
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0), width, height)


class FrequencyMap:
    """Per-pixel blink-frequency estimate; updated in place, event by event."""

    def __init__(self, width: int, height: int, alpha: float = DEFAULT_ALPHA,
                 staleness: float = 0.0):
        if not 0 < alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        self.width, self.height = int(width), int(height)
        self.alpha = float(alpha)
        self.staleness = float(staleness)
        shape = (self.height, self.width)
        self.freq = np.zeros(shape)
        self.last_update = np.full(shape, -np.inf)
        self.last_rise = np.full(shape, -np.inf)
        self.last_pol = np.zeros(shape, dtype=np.int8)
        self.t_last = -np.inf

    def process(self, xs, ys, ts, ps) -> None:
        ts = np.ascontiguousarray(ts, dtype=float)
        if len(ts) == 0:
            return
        if ts[0] < self.t_last or np.any(np.diff(ts) < 0):
            raise UnsortedStream("event timestamps decrease")
        ps = np.ascontiguousarray(np.where(np.asarray(ps) > 0, 1, -1), dtype=np.int8)
        bad = kernels.update_frequency_batch(
            np.ascontiguousarray(xs, dtype=np.int64), np.ascontiguousarray(ys, dtype=np.int64),
            ts, ps, self.freq, self.last_update, self.last_rise, self.last_pol,
            self.alpha, self.staleness)
        if bad >= 0:
            raise OutOfBounds(f"event {bad} at ({int(xs[bad])}, {int(ys[bad])}) outside "
                              f"{self.width}x{self.height} sensor")
        self.t_last = float(ts[-1])

    def snapshot(self, at_time: float, staleness: float | None = None) -> np.ndarray:
        """Copy of the frequency image with stale pixels zeroed."""
        st = self.staleness if staleness is None else staleness
        f = self.freq.copy()
        if st > 0:
            f[(at_time - self.last_update) > st] = 0.0
        return f


def update_frequency(fmap: FrequencyMap, e: EventRecord) -> FrequencyMap:
    fmap.process(np.array([e.x]), np.array([e.y]), np.array([e.t]), np.array([e.polarity]))
    return fmap


def _band_mask(freq, last_update, target, band, at_time, staleness):
    ok = (freq > 0) & (np.abs(freq - target) <= band * target)
    if staleness > 0:
        ok &= (at_time - last_update) <= staleness
    return ok


def extract_marker_centers(fmap: FrequencyMap, target: float, band: float = DEFAULT_BAND,
                           at_time: float = np.inf, *, staleness: float | None = None,
                           min_area: float = DEFAULT_MIN_AREA, candidates=None) -> list[Blob]:
    """Blobs of in-band, recently refreshed pixels.

    ``candidates`` optionally restricts the search to these flat pixel
    indices (the caller guarantees every qualifying pixel is among them).
    Each returned blob carries the mean last-update time of its pixels.
    """
    st = fmap.staleness if staleness is None else staleness
    if candidates is None:
        cand = np.flatnonzero(_band_mask(fmap.freq, fmap.last_update, target, band, at_time, st))
    else:
        cand = np.asarray(candidates, dtype=np.int64)
        if cand.size == 0:
            return []
        cand = cand[_band_mask(fmap.freq.ravel()[cand], fmap.last_update.ravel()[cand],
                               target, band, at_time, st)]
    if cand.size == 0:
        return []
    ys, xs = np.divmod(cand, fmap.width)
    x0, y0 = xs.min(), ys.min()
    crop = np.zeros((ys.max() - y0 + 1, xs.max() - x0 + 1))
    crop[ys - y0, xs - x0] = 1.0
    blobs = detect_blobs(crop, 0.5, min_area, max_area=0.1 * fmap.width * fmap.height)
    if not blobs:
        return []
    # Same components again, weighted by update time, to get per-blob mean times.
    u = fmap.last_update.ravel()[cand]
    t0 = float(u.min())
    timed = np.zeros_like(crop)
    timed[ys - y0, xs - x0] = 1.0 + (u - t0)
    stats = kernels.label_blobs(timed, 0.5)
    mean_t = {(int(r[4]), int(r[5]), int(r[6]), int(r[7])): t0 + (r[1] - r[0]) / r[0] for r in stats}
    return [Blob(b.centroid + (x0, y0), b.area,
                 (b.bbox[0] + x0, b.bbox[1] + y0, b.bbox[2] + x0, b.bbox[3] + y0), b.weight,
                 mean_t[tuple(int(v) for v in b.bbox)])
            for b in blobs]


def _compensate_motion(triples, times, period, max_gap):
    """Shift each marker from its blob time to the sample time.

    A pixel's last rising edge at ``u`` certifies coverage at ``u`` and
    ``u - period``, so a blob images the marker near ``mean(u) - period/2``.
    The marker velocity comes from neighbouring detections of the same
    marker (central difference where both exist).
    """
    n = len(triples)
    if n < 2:
        return triples
    s = np.array([tr.timestamp for tr in triples])
    P = np.array([tr.points for tr in triples])
    tau = np.asarray(times, dtype=float) - 0.5 * period
    out = []
    for i, tr in enumerate(triples):
        prev = i - 1 if i > 0 and s[i] - s[i - 1] <= max_gap else None
        nxt = i + 1 if i + 1 < n and s[i + 1] - s[i] <= max_gap else None
        if prev is None and nxt is None:
            out.append(tr)
            continue
        a = prev if prev is not None else i
        b = nxt if nxt is not None else i
        dt = tau[b] - tau[a]
        ok = np.abs(dt) > 1e-9
        v = np.zeros((3, 2))
        v[ok] = (P[b][ok] - P[a][ok]) / dt[ok, None]
        q = P[i] + v * (s[i] - tau[i])[:, None]
        out.append(replace(tr, p0=q[0], p1=q[1], p2=q[2]))
    return out


def _edge_safe_cut(fmap: FrequencyMap, recent, s: float, target: float, band: float, period: float) -> float:
    """Time at or after ``s`` that lies half a period after the latest rising edge.

    The blink phase is the circular mean of the last-update times of in-band
    pixels. Cutting the stream midway between rising edges means timestamp
    jitter never splits one edge across the cut.
    """
    idx = np.unique(recent)
    if idx.size == 0:
        return s
    f = fmap.freq.ravel()[idx]
    u = fmap.last_update.ravel()[idx]
    ok = (f > 0) & (np.abs(f - target) <= band * target) & np.isfinite(u)
    if not ok.any():
        return s
    ang = 2.0 * np.pi * (u[ok] - s) / period
    phase = s + np.arctan2(np.sin(ang).mean(), np.cos(ang).mean()) * period / (2.0 * np.pi)
    return phase + 0.5 * period + period * np.ceil((s - phase - 0.5 * period) / period)


def detect_wand_events(stream: EventStream, spec: WandSpec, sample_times, *,
                       width: int | None = None, height: int | None = None,
                       target_frequency: float | None = None, alpha: float = DEFAULT_ALPHA,
                       band: float = DEFAULT_BAND, staleness_periods: float = DEFAULT_STALENESS_PERIODS,
                       freshness_periods: float = DEFAULT_FRESHNESS_PERIODS,
                       motion_compensation: bool = True,
                       min_area: float = DEFAULT_MIN_AREA, max_span: float = DEFAULT_MAX_SPAN_PX,
                       camera_index: int = 0) -> list[LabeledTriple]:
    """Wand detections at each sample time; samples without a wand are dropped.

    The frequency map forgets pixels after ``staleness_periods``; the
    per-sample mask keeps only pixels refreshed within the last
    ``freshness_periods`` so that each pixel contributes its latest rising
    edge. Each sample reads the map half a period after the nearest rising
    edge (at most one period late). With ``motion_compensation`` the
    centroids are moved from the blob time to the sample time.
    """
    width = width or stream.width
    height = height or stream.height
    target = float(target_frequency or spec.blink_frequency)
    period = 1.0 / target
    staleness = staleness_periods * period
    fresh = min(freshness_periods, staleness_periods) * period
    t = stream.t
    if len(t) and np.any(np.diff(t) < 0):
        raise UnsortedStream("event timestamps decrease")
    fmap = FrequencyMap(width, height, alpha, staleness)
    flat = stream.y * width + stream.x
    out, blob_times = [], []
    done = 0
    samples = np.asarray(sample_times, dtype=float)
    for i, s in enumerate(samples):
        end = int(np.searchsorted(t, s, side="right"))
        if end > done:
            fmap.process(stream.x[done:end], stream.y[done:end], t[done:end], stream.p[done:end])
            done = end
        cut = _edge_safe_cut(fmap, flat[int(np.searchsorted(t, s - staleness, side="left")):end],
                             s, target, band, period)
        if i + 1 < len(samples):
            cut = min(cut, samples[i + 1])
        end = int(np.searchsorted(t, cut, side="right"))
        if end > done:
            fmap.process(stream.x[done:end], stream.y[done:end], t[done:end], stream.p[done:end])
            done = end
        start = int(np.searchsorted(t, cut - fresh, side="left"))
        cand = np.unique(flat[start:end])
        blobs = extract_marker_centers(fmap, target, band, cut, staleness=fresh, min_area=min_area,
                                       candidates=cand)
        try:
            tr = filter_wand_blobs(blobs, spec, max_span=max_span, timestamp=float(s),
                                   camera_index=camera_index)
        except NoWand:
            continue
        by_center = {tuple(b.centroid): b.time for b in blobs}
        out.append(tr)
        blob_times.append([by_center[tuple(p)] for p in tr.points])
    if motion_compensation and out:
        gap = 2.5 * float(np.median(np.diff(samples))) if len(samples) > 1 else 0.0
        out = _compensate_motion(out, blob_times, period, gap)
    return out


# -- CSV (t_us,x,y,p) ------------------------------------------------------

def write_events_csv(path, stream: EventStream) -> None:
    t_us = np.round(stream.t * 1e6).astype(np.int64)
    df = pd.DataFrame({"t_us": t_us, "x": stream.x, "y": stream.y,
                       "p": (stream.p > 0).astype(np.int8)})
    df.to_csv(path, index=False, lineterminator="\n")


def read_events_csv(path, width=0, height=0) -> EventStream:
    with open(path) as fh:
        first = fh.readline()
    has_header = not first.strip()[:1].isdigit() if first.strip() else True
    df = pd.read_csv(path, header=0 if has_header else None,
                     names=["t_us", "x", "y", "p"], dtype=np.int64)
    if df.empty:
        return EventStream.empty(width, height)
    if not np.all(np.isin(df["p"].to_numpy(), (0, 1))):
        raise ValueError("polarity column must be 0 or 1")
    return EventStream(df["t_us"].to_numpy() * 1e-6, df["x"].to_numpy(), df["y"].to_numpy(),
                       np.where(df["p"].to_numpy() > 0, 1, -1), width, height)
