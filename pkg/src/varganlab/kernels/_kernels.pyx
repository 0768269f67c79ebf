# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: minibatch distance features, nearest-center search and
edge-to-edge flood fill."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, sqrt

cnp.import_array()


def minibatch_forward(h):
    cdef double[:, ::1] H = np.ascontiguousarray(h, dtype=np.float64)
    cdef Py_ssize_t b = H.shape[0], k = H.shape[1]
    kernel_arr = np.empty((b, b), dtype=np.float64)
    feats_arr = np.empty(b, dtype=np.float64)
    cdef double[:, ::1] K = kernel_arr
    cdef double[::1] f = feats_arr
    cdef Py_ssize_t i, j, c
    cdef double d, e
    for i in range(b):
        K[i, i] = 1.0
        for j in range(i + 1, b):
            d = 0.0
            for c in range(k):
                d += fabs(H[i, c] - H[j, c])
            e = exp(-d)
            K[i, j] = e
            K[j, i] = e
    for i in range(b):
        d = 0.0
        for j in range(b):
            d += K[i, j]
        f[i] = (d - 1.0) / (b - 1)
    return feats_arr, kernel_arr


def minibatch_backward(h, kernel, grad):
    cdef double[:, ::1] H = np.ascontiguousarray(h, dtype=np.float64)
    cdef double[:, ::1] K = np.ascontiguousarray(kernel, dtype=np.float64)
    cdef double[::1] g = np.ascontiguousarray(np.ravel(grad), dtype=np.float64)
    cdef Py_ssize_t b = H.shape[0], k = H.shape[1]
    out_arr = np.zeros((b, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, c
    cdef double w, diff, scale = -1.0 / (b - 1)
    for i in range(b):
        for j in range(i + 1, b):
            w = (g[i] + g[j]) * K[i, j] * scale
            for c in range(k):
                diff = H[i, c] - H[j, c]
                if diff > 0:
                    out[i, c] += w
                    out[j, c] -= w
                elif diff < 0:
                    out[i, c] -= w
                    out[j, c] += w
    return out_arr


def nearest_centers(x, centers):
    cdef double[:, ::1] X = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] C = np.ascontiguousarray(centers, dtype=np.float64)
    cdef Py_ssize_t n = X.shape[0], m = C.shape[0], dim = X.shape[1]
    idx_arr = np.empty(n, dtype=np.int64)
    dist_arr = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] idx = idx_arr
    cdef double[::1] dist = dist_arr
    cdef Py_ssize_t i, j, c, best
    cdef double d2, t, best_d2
    for i in range(n):
        best = 0
        best_d2 = -1.0
        for j in range(m):
            d2 = 0.0
            for c in range(dim):
                t = X[i, c] - C[j, c]
                d2 += t * t
            if best_d2 < 0 or d2 < best_d2:
                best_d2 = d2
                best = j
        idx[i] = best
        dist[i] = sqrt(best_d2)
    return idx_arr, dist_arr


cdef bint _spans(const cnp.uint8_t[:, :] img, cnp.uint8_t[:, ::1] seen,
                 Py_ssize_t[::1] stack, bint eight):
    cdef Py_ssize_t rows = img.shape[0], cols = img.shape[1]
    cdef Py_ssize_t r0, c0, r, c, rr, cc, top, pos, s
    cdef int dr, dc
    cdef bint t, bo, le, ri
    cdef int[8] drs = [1, -1, 0, 0, 1, 1, -1, -1]
    cdef int[8] dcs = [0, 0, 1, -1, 1, -1, 1, -1]
    cdef int nsteps = 8 if eight else 4
    seen[:, :] = 0
    for r0 in range(rows):
        for c0 in range(cols):
            if img[r0, c0] == 0 or seen[r0, c0]:
                continue
            t = bo = le = ri = False
            top = 0
            stack[top] = r0 * cols + c0
            top += 1
            seen[r0, c0] = 1
            while top > 0:
                top -= 1
                pos = stack[top]
                r = pos // cols
                c = pos % cols
                if r == 0:
                    t = True
                if r == rows - 1:
                    bo = True
                if c == 0:
                    le = True
                if c == cols - 1:
                    ri = True
                for s in range(nsteps):
                    rr = r + drs[s]
                    cc = c + dcs[s]
                    if rr >= 0 and rr < rows and cc >= 0 and cc < cols:
                        if img[rr, cc] != 0 and not seen[rr, cc]:
                            seen[rr, cc] = 1
                            stack[top] = rr * cols + cc
                            top += 1
            if (t and bo) or (le and ri):
                return True
    return False


def classify_images(images, eight_connected=False):
    cdef const cnp.uint8_t[:, :, :] imgs = np.ascontiguousarray(images, dtype=np.uint8)
    cdef Py_ssize_t n = imgs.shape[0], rows = imgs.shape[1], cols = imgs.shape[2], i
    out_arr = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] out = out_arr
    cdef cnp.uint8_t[:, ::1] seen = np.zeros((rows, cols), dtype=np.uint8)
    cdef Py_ssize_t[::1] stack = np.zeros(rows * cols + 1, dtype=np.intp)
    cdef bint eight = eight_connected
    for i in range(n):
        out[i] = _spans(imgs[i], seen, stack, eight)
    return out_arr
