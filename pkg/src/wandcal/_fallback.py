"""Pure-Python versions of the compiled kernels in ``_kernels.pyx``.

Used when the extension is not built (or WANDCAL_PURE_PYTHON=1). Every
function returns bit-identical results to its compiled twin; the test suite
runs both on the same inputs.
"""
import math

import numpy as np

BACKEND = "python"


def label_blobs(img, threshold):
    img = np.ascontiguousarray(img, dtype=float)
    h, w = img.shape
    above = img > threshold
    flat_above = above.ravel()
    flat = img.ravel()
    seen = np.zeros(h * w, dtype=bool)
    out = []
    for idx in np.flatnonzero(flat_above).tolist():
        if seen[idx]:
            continue
        seen[idx] = True
        stack = [idx]
        area = sw = swx = swy = 0.0
        j0, i0 = idx % w, idx // w
        xmin = xmax = j0
        ymin = ymax = i0
        while stack:
            nidx = stack.pop()
            cy, cx = divmod(nidx, w)
            v = float(flat[nidx])
            area += 1.0
            sw += v
            swx += v * cx
            swy += v * cy
            xmin = min(xmin, cx); xmax = max(xmax, cx)
            ymin = min(ymin, cy); ymax = max(ymax, cy)
            # same push order as the compiled kernel
            for ok, nb in ((cx > 0, nidx - 1), (cx < w - 1, nidx + 1),
                           (cy > 0, nidx - w), (cy < h - 1, nidx + w)):
                if ok and not seen[nb] and flat_above[nb]:
                    seen[nb] = True
                    stack.append(nb)
        out.append((area, sw, swx, swy, xmin, ymin, xmax, ymax))
    if not out:
        return np.zeros((0, 8))
    return np.array(out, dtype=float)


def update_frequency_batch(xs, ys, ts, ps, freq, last_update, last_rise, last_pol,
                           alpha, staleness):
    h, w = freq.shape
    for k, (x, y, t, p) in enumerate(zip(xs.tolist(), ys.tolist(), ts.tolist(), ps.tolist())):
        if x < 0 or y < 0 or x >= w or y >= h:
            return k
        if p > 0 and last_pol[y, x] != 1:
            dt = t - last_rise[y, x]
            if staleness > 0 and dt > staleness:
                freq[y, x] = 0.0
            elif 0 < dt < math.inf:
                f_inst = 1.0 / dt
                if freq[y, x] == 0.0:
                    freq[y, x] = f_inst
                else:
                    freq[y, x] = (1.0 - alpha) * freq[y, x] + alpha * f_inst
                last_update[y, x] = t
            last_rise[y, x] = t
        last_pol[y, x] = 1 if p > 0 else -1
    return -1


def blink_events(edge_t, led_on, centers, radii, visible, width, height, refractory):
    npx = width * height
    ref = np.zeros(npx, dtype=bool)
    last = np.full(npx, -math.inf)
    lit = []
    out_t, out_x, out_y, out_p = [], [], [], []
    for e in range(len(edge_t)):
        t = float(edge_t[e])
        covered = []
        covered_set = set()
        if led_on[e]:
            for m in range(centers.shape[1]):
                if not visible[e, m]:
                    continue
                cx, cy = float(centers[e, m, 0]), float(centers[e, m, 1])
                r = float(radii[e, m])
                r2 = r * r
                x0 = max(int(math.ceil(cx - r)), 0)
                x1 = min(int(math.floor(cx + r)), width - 1)
                y0 = max(int(math.ceil(cy - r)), 0)
                y1 = min(int(math.floor(cy + r)), height - 1)
                for yi in range(y0, y1 + 1):
                    dy = yi - cy
                    for xi in range(x0, x1 + 1):
                        dx = xi - cx
                        if dx * dx + dy * dy <= r2:
                            idx = yi * width + xi
                            if idx not in covered_set:
                                covered_set.add(idx)
                                covered.append(idx)
        still_lit = []
        for idx in lit:
            if idx in covered_set:
                still_lit.append(idx)
            elif t - last[idx] >= refractory:
                ref[idx] = False
                last[idx] = t
                out_t.append(t); out_x.append(idx % width); out_y.append(idx // width)
                out_p.append(-1)
            else:
                still_lit.append(idx)
        lit = still_lit
        for idx in covered:
            if not ref[idx] and t - last[idx] >= refractory:
                ref[idx] = True
                last[idx] = t
                lit.append(idx)
                out_t.append(t); out_x.append(idx % width); out_y.append(idx // width)
                out_p.append(1)
    return (np.array(out_t, dtype=float), np.array(out_x, dtype=np.int64),
            np.array(out_y, dtype=np.int64), np.array(out_p, dtype=np.int8))
