"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel runs on realistic inputs from the simulator: a rendered frame
for blob labelling, a 0.2 s event stream for the frequency map and the
event synthesis of the same interval.
"""
import argparse
import timeit

import numpy as np

from wandcal import kernels
from wandcal.event_detect import FrequencyMap
from wandcal.frame_detect import detect_blobs
from wandcal.simulator import EventSensorModel, FrameRenderer, default_rig, generate_events, random_trajectory
from wandcal.wand import WandSpec


def cases():
    spec = WandSpec()
    rig = default_rig(0)
    traj = random_trajectory(1.0, seed=0, spec=spec)
    img = FrameRenderer(rig, 0, traj, intensity_sigma=0.01, seed=0).render(0.5)
    stream = generate_events(rig, traj, 4, 0.2, sensor=EventSensorModel(), seed=0)

    def blobs():
        detect_blobs(img)

    def frequency():
        FrequencyMap(stream.width, stream.height).process(stream.x, stream.y, stream.t, stream.p)

    def synthesis():
        generate_events(rig, traj, 4, 0.2, sensor=EventSensorModel(), seed=0)

    return {"label_blobs (1280x1024 frame)": blobs,
            f"update_frequency ({len(stream.t)} events)": frequency,
            "blink_events (0.2 s at 500 Hz)": synthesis}


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3, help="timing repetitions (best is reported)")
    args = ap.parse_args(argv)
    backends = [("python", kernels.python_backend)]
    if kernels.compiled_backend is None:
        print("compiled extension not built; timing the fallback only")
    else:
        backends.append(("cython", kernels.compiled_backend))
    saved = kernels.active
    rows = []
    try:
        for name, fn in cases().items():
            times = {}
            for label, backend in backends:
                kernels.active = backend
                fn()  # warm-up
                times[label] = best_of(fn, args.repeat)
            rows.append((name, times))
    finally:
        kernels.active = saved
    print(f"{'kernel':40s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speed-up':>9s}")
    for name, t in rows:
        c = t.get("cython", np.nan)
        print(f"{name:40s} {t['python'] * 1e3:12.2f} {c * 1e3:12.2f} {t['python'] / c:9.1f}")


if __name__ == "__main__":
    main()
