# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Semantics mirror wandcal._fallback exactly."""
import numpy as np
cimport cython
from libc.math cimport INFINITY, floor, ceil

BACKEND = "cython"


def label_blobs(const double[:, ::1] img, double threshold):
    """4-connected components of ``img > threshold`` with intensity moments.

    Returns an (n, 8) float array of rows
    ``area, sum_w, sum_wx, sum_wy, xmin, ymin, xmax, ymax`` ordered by the
    raster position of each component's first pixel.
    """
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t npx = h * w
    labels_arr = np.zeros(npx, dtype=np.uint8)
    stack_arr = np.empty(max(npx, 1), dtype=np.intp)
    cdef unsigned char[::1] seen = labels_arr
    cdef Py_ssize_t[::1] stack = stack_arr
    cdef Py_ssize_t i, j, idx, top, cx, cy, nidx
    cdef double v, area, sw, swx, swy
    cdef Py_ssize_t xmin, ymin, xmax, ymax
    out = []
    for i in range(h):
        for j in range(w):
            idx = i * w + j
            if seen[idx] or not (img[i, j] > threshold):
                continue
            seen[idx] = 1
            top = 0
            stack[top] = idx
            top += 1
            area = 0.0; sw = 0.0; swx = 0.0; swy = 0.0
            xmin = j; xmax = j; ymin = i; ymax = i
            while top > 0:
                top -= 1
                nidx = stack[top]
                cy = nidx // w
                cx = nidx - cy * w
                v = img[cy, cx]
                area += 1.0
                sw += v
                swx += v * cx
                swy += v * cy
                if cx < xmin: xmin = cx
                if cx > xmax: xmax = cx
                if cy < ymin: ymin = cy
                if cy > ymax: ymax = cy
                if cx > 0 and not seen[nidx - 1] and img[cy, cx - 1] > threshold:
                    seen[nidx - 1] = 1; stack[top] = nidx - 1; top += 1
                if cx < w - 1 and not seen[nidx + 1] and img[cy, cx + 1] > threshold:
                    seen[nidx + 1] = 1; stack[top] = nidx + 1; top += 1
                if cy > 0 and not seen[nidx - w] and img[cy - 1, cx] > threshold:
                    seen[nidx - w] = 1; stack[top] = nidx - w; top += 1
                if cy < h - 1 and not seen[nidx + w] and img[cy + 1, cx] > threshold:
                    seen[nidx + w] = 1; stack[top] = nidx + w; top += 1
            out.append((area, sw, swx, swy, xmin, ymin, xmax, ymax))
    if not out:
        return np.zeros((0, 8))
    return np.array(out, dtype=float)


def update_frequency_batch(const long long[::1] xs, const long long[::1] ys,
                           const double[::1] ts, const signed char[::1] ps,
                           double[:, ::1] freq, double[:, ::1] last_update,
                           double[:, ::1] last_rise, signed char[:, ::1] last_pol,
                           double alpha, double staleness):
    """Feed events into the per-pixel period estimator, in place.

    Returns -1 on success or the index of the first out-of-bounds event
    (which, like everything after it, is left unprocessed).
    """
    cdef Py_ssize_t n = xs.shape[0], k
    cdef Py_ssize_t h = freq.shape[0], w = freq.shape[1]
    cdef long long x, y
    cdef double t, dt, f_inst
    cdef signed char p
    for k in range(n):
        x = xs[k]; y = ys[k]
        if x < 0 or y < 0 or x >= w or y >= h:
            return k
        t = ts[k]; p = ps[k]
        if p > 0 and last_pol[y, x] != 1:
            dt = t - last_rise[y, x]
            if staleness > 0 and dt > staleness:
                freq[y, x] = 0.0
            elif dt > 0 and dt < INFINITY:
                f_inst = 1.0 / dt
                if freq[y, x] == 0.0:
                    freq[y, x] = f_inst
                else:
                    freq[y, x] = (1.0 - alpha) * freq[y, x] + alpha * f_inst
                last_update[y, x] = t
            last_rise[y, x] = t
        last_pol[y, x] = 1 if p > 0 else -1
    return -1


def blink_events(const double[::1] edge_t, const unsigned char[::1] led_on,
                 const double[:, :, ::1] centers, const double[:, ::1] radii,
                 const unsigned char[:, ::1] visible,
                 Py_ssize_t width, Py_ssize_t height, double refractory):
    """Edge-driven event synthesis for blinking disks.

    At every illumination edge each pixel compares its target level (lit when
    covered by a visible disk while the LED is on) with its stored reference
    level; a mismatch outside the refractory period emits an event and resets
    the reference. Returns (t, x, y, polarity) arrays.
    """
    cdef Py_ssize_t n_edges = edge_t.shape[0], n_mark = centers.shape[1]
    cdef Py_ssize_t npx = width * height
    ref_arr = np.zeros(npx, dtype=np.uint8)
    last_arr = np.full(npx, -INFINITY)
    stamp_arr = np.full(npx, -1, dtype=np.intp)
    lit_arr = np.empty(npx, dtype=np.intp)
    cov_arr = np.empty(npx, dtype=np.intp)
    cdef unsigned char[::1] ref = ref_arr
    cdef double[::1] last = last_arr
    cdef Py_ssize_t[::1] stamp = stamp_arr
    cdef Py_ssize_t[::1] lit = lit_arr
    cdef Py_ssize_t[::1] cov = cov_arr
    cdef Py_ssize_t n_lit = 0, n_cov, keep, e, m, i, xi, yi, idx, x0, x1, y0, y1
    cdef double t, cx, cy, r, r2, dx, dy

    cdef Py_ssize_t cap = 1024, n_out = 0
    out_t_arr = np.empty(cap); out_x_arr = np.empty(cap, dtype=np.int64)
    out_y_arr = np.empty(cap, dtype=np.int64); out_p_arr = np.empty(cap, dtype=np.int8)
    cdef double[::1] out_t = out_t_arr
    cdef long long[::1] out_x = out_x_arr
    cdef long long[::1] out_y = out_y_arr
    cdef signed char[::1] out_p = out_p_arr

    for e in range(n_edges):
        t = edge_t[e]
        n_cov = 0
        if led_on[e]:
            for m in range(n_mark):
                if not visible[e, m]:
                    continue
                cx = centers[e, m, 0]; cy = centers[e, m, 1]; r = radii[e, m]
                r2 = r * r
                x0 = <Py_ssize_t>ceil(cx - r); x1 = <Py_ssize_t>floor(cx + r)
                y0 = <Py_ssize_t>ceil(cy - r); y1 = <Py_ssize_t>floor(cy + r)
                if x0 < 0: x0 = 0
                if y0 < 0: y0 = 0
                if x1 > width - 1: x1 = width - 1
                if y1 > height - 1: y1 = height - 1
                for yi in range(y0, y1 + 1):
                    dy = yi - cy
                    for xi in range(x0, x1 + 1):
                        dx = xi - cx
                        if dx * dx + dy * dy <= r2:
                            idx = yi * width + xi
                            if stamp[idx] != e:
                                stamp[idx] = e
                                cov[n_cov] = idx
                                n_cov += 1
        # grow output so this edge cannot overflow it
        if n_out + n_cov + n_lit > cap:
            while n_out + n_cov + n_lit > cap:
                cap *= 2
            out_t_arr = np.resize(out_t_arr, cap); out_x_arr = np.resize(out_x_arr, cap)
            out_y_arr = np.resize(out_y_arr, cap); out_p_arr = np.resize(out_p_arr, cap)
            out_t = out_t_arr; out_x = out_x_arr; out_y = out_y_arr; out_p = out_p_arr
        # pixels that should go dark: lit but not covered now
        keep = 0
        for i in range(n_lit):
            idx = lit[i]
            if stamp[idx] == e:
                lit[keep] = idx
                keep += 1
            elif t - last[idx] >= refractory:
                ref[idx] = 0
                last[idx] = t
                out_t[n_out] = t; out_x[n_out] = idx % width; out_y[n_out] = idx // width
                out_p[n_out] = -1
                n_out += 1
            else:
                lit[keep] = idx
                keep += 1
        n_lit = keep
        # pixels that should light up
        for i in range(n_cov):
            idx = cov[i]
            if ref[idx] == 0 and t - last[idx] >= refractory:
                ref[idx] = 1
                last[idx] = t
                lit[n_lit] = idx
                n_lit += 1
                out_t[n_out] = t; out_x[n_out] = idx % width; out_y[n_out] = idx // width
                out_p[n_out] = 1
                n_out += 1
    return (out_t_arr[:n_out].copy(), out_x_arr[:n_out].copy(),
            out_y_arr[:n_out].copy(), out_p_arr[:n_out].copy())
