"""Marker extraction from frame-camera images.

Bright markers are segmented by an intensity threshold, grouped into
4-connected blobs, and reduced to intensity-weighted sub-pixel centroids.
Candidate blobs are then gated by proximity before wand labeling.
"""
from __future__ import annotations

import io
import zlib
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from . import kernels
from .wand import LabeledTriple, WandSpec, label_markers, MAX_CANDIDATES
from .errors import NoWand

DEFAULT_THRESHOLD = 0.05
DEFAULT_MIN_AREA = 9
DEFAULT_MAX_SPAN_PX = 400.0


@dataclass(frozen=True)
class Blob:
    centroid: np.ndarray
    area: float
    bbox: tuple  # (xmin, ymin, xmax, ymax), inclusive pixel indices
    weight: float = 0.0
    time: float = float("nan")  # mean pixel timestamp, when the source has one


def _as_float_image(img) -> np.ndarray:
    a = np.asarray(img)
    if a.ndim != 2:
        raise ValueError("expected a single-channel 2D image")
    if a.dtype == np.uint8:
        return a.astype(float) / 255.0
    if a.dtype == np.uint16:
        return a.astype(float) / 65535.0
    return np.ascontiguousarray(a, dtype=float)


def detect_blobs(img, threshold: float = DEFAULT_THRESHOLD, min_area: float = DEFAULT_MIN_AREA,
                 max_area: float | None = None) -> list[Blob]:
    """Connected components of pixels brighter than ``threshold``.

    ``img`` is a 2D array with intensities in [0, 1] (uint8/uint16 inputs are
    rescaled). Components outside ``[min_area, max_area]`` are discarded;
    ``max_area`` defaults to 10% of the image.
    """
    raw = np.asarray(img)
    h, w = raw.shape
    if max_area is None:
        max_area = 0.1 * h * w
    # Restrict labeling to the bounding box of candidate pixels; components
    # never leave it, so results are unchanged.
    if raw.dtype == np.uint8:
        above = raw >= np.floor(threshold * 255.0)
    elif raw.dtype == np.uint16:
        above = raw >= np.floor(threshold * 65535.0)
    else:
        above = raw > threshold
    rows = np.flatnonzero(above.any(axis=1))
    if rows.size == 0:
        return []
    cols = np.flatnonzero(above[rows[0]:rows[-1] + 1].any(axis=0))
    y0, y1, x0, x1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
    crop = _as_float_image(raw[y0:y1, x0:x1])
    stats = kernels.label_blobs(np.ascontiguousarray(crop), float(threshold))
    blobs = []
    for area, sw, swx, swy, xmin, ymin, xmax, ymax in stats:
        if area < min_area or area > max_area or sw <= 0:
            continue
        c = np.array([swx / sw + x0, swy / sw + y0])
        blobs.append(Blob(c, float(area),
                          (int(xmin) + x0, int(ymin) + y0, int(xmax) + x0, int(ymax) + y0),
                          float(sw)))
    return blobs


def _proximity_prefilter(centers: np.ndarray, max_span: float) -> np.ndarray:
    """Indices of blobs with at least two other blobs within ``max_span``."""
    d = np.linalg.norm(centers[:, None] - centers[None], axis=-1)
    close = (d <= max_span).sum(axis=1) - 1
    return np.flatnonzero(close >= 2)


def filter_wand_blobs(blobs: Sequence[Blob], spec: WandSpec, *, max_span: float = DEFAULT_MAX_SPAN_PX,
                      prefilter: Callable[[list], list] | None = None,
                      timestamp: float = 0.0, camera_index: int = 0) -> LabeledTriple:
    """Keep blobs that are close together, then label the wand among them.

    ``prefilter`` is an optional hook (e.g. a hue-band test on color input)
    applied to the blob list before any geometric gating.
    """
    blobs = list(blobs)
    if prefilter is not None:
        blobs = list(prefilter(blobs))
    if len(blobs) < 3:
        raise NoWand(f"need at least 3 blobs, got {len(blobs)}")
    centers = np.array([b.centroid for b in blobs])
    keep = _proximity_prefilter(centers, max_span)
    if len(keep) < 3:
        raise NoWand("no three blobs fit in the proximity window")
    if len(keep) > MAX_CANDIDATES:
        weights = np.array([blobs[i].weight for i in keep])
        keep = keep[np.argsort(-weights, kind="stable")[:MAX_CANDIDATES]]
    return label_markers(centers[keep], spec, max_span=max_span,
                         timestamp=timestamp, camera_index=camera_index)


def detect_wand_frame(img, spec: WandSpec, *, threshold: float = DEFAULT_THRESHOLD,
                      min_area: float = DEFAULT_MIN_AREA, max_span: float = DEFAULT_MAX_SPAN_PX,
                      timestamp: float = 0.0, camera_index: int = 0) -> LabeledTriple:
    blobs = detect_blobs(img, threshold, min_area)
    return filter_wand_blobs(blobs, spec, max_span=max_span, timestamp=timestamp,
                             camera_index=camera_index)


# -- PGM (P5) --------------------------------------------------------------

def _read_token(fh) -> bytes:
    tok = b""
    while True:
        c = fh.read(1)
        if not c:
            return tok
        if c == b"#":
            fh.readline()
            if tok:
                return tok
            continue
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def _read_one_pgm(fh) -> np.ndarray | None:
    magic = _read_token(fh)
    if not magic:
        return None
    if magic != b"P5":
        raise ValueError(f"not a binary PGM (magic {magic!r})")
    w, h, maxval = int(_read_token(fh)), int(_read_token(fh)), int(_read_token(fh))
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    n = w * h * np.dtype(dtype).itemsize
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError("truncated PGM data")
    a = np.frombuffer(buf, dtype=dtype).reshape(h, w)
    if maxval not in (255, 65535):
        a = (a.astype(float) / maxval)
    return a if a.dtype != np.dtype(">u2") else a.astype(np.uint16)


class _GzipReader(io.RawIOBase):
    """Streaming gzip decoder (concatenated members allowed).

    zlib verifies the CRC itself, which is several times faster than
    ``gzip.GzipFile`` on the multi-gigabyte frame streams.
    """

    def __init__(self, path):
        self._fh = open(path, "rb")
        self._z = zlib.decompressobj(47)
        self._pending = b""
        self._out = memoryview(b"")

    def readable(self):
        return True

    def readinto(self, b):
        n = len(b)
        while not len(self._out):
            if not self._pending:
                self._pending = self._fh.read(1 << 20)
                if not self._pending:
                    return 0
            if self._z.eof:
                self._z = zlib.decompressobj(47)
            self._out = memoryview(self._z.decompress(self._pending, max(n, 1 << 16)))
            self._pending = self._z.unused_data if self._z.eof else self._z.unconsumed_tail
        k = min(n, len(self._out))
        b[:k] = self._out[:k]
        self._out = self._out[k:]
        return k

    def close(self):
        self._fh.close()
        super().close()


class _GzipWriter:
    """Deterministic gzip writer (zero mtime, fixed level)."""

    def __init__(self, path, level: int = 3):
        self._fh = open(path, "wb")
        self._z = zlib.compressobj(level, zlib.DEFLATED, 31)

    def write(self, data):
        self._fh.write(self._z.compress(data))

    def close(self):
        self._fh.write(self._z.flush())
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_stream(path, mode):
    path = str(path)
    if path.endswith(".gz"):
        return _GzipWriter(path) if "w" in mode else io.BufferedReader(_GzipReader(path), 1 << 20)
    return open(path, mode)


def read_pgm(path) -> np.ndarray:
    with open_stream(path, "rb") as fh:
        img = _read_one_pgm(fh)
    if img is None:
        raise ValueError(f"empty PGM file {path}")
    return img


def iter_pgm_stream(path) -> Iterator[np.ndarray]:
    """Yield images from a file of concatenated P5 images (optionally gzipped)."""
    with open_stream(path, "rb") as fh:
        while True:
            img = _read_one_pgm(fh)
            if img is None:
                return
            yield img


def encode_pgm(img) -> bytes:
    a = np.asarray(img)
    if a.dtype != np.uint8:
        a = np.clip(np.round(np.asarray(a, dtype=float) * 255.0), 0, 255).astype(np.uint8)
    h, w = a.shape
    return b"P5\n%d %d\n255\n" % (w, h) + a.tobytes()


def write_pgm(path, img) -> None:
    with open_stream(path, "wb") as fh:
        fh.write(encode_pgm(img))
