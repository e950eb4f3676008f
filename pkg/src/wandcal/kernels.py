"""Backend selection for the inner loops.

The compiled extension is used when importable; set ``WANDCAL_PURE_PYTHON=1``
to force the pure-Python implementation.
"""
import os

from . import _fallback

python_backend = _fallback

try:
    from . import _kernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("WANDCAL_PURE_PYTHON", "") in ("", "0"):
    active = compiled_backend
else:
    active = python_backend

BACKEND = active.BACKEND


def label_blobs(img, threshold):
    return active.label_blobs(img, threshold)


def update_frequency_batch(*args):
    return active.update_frequency_batch(*args)


def blink_events(*args):
    return active.blink_events(*args)
