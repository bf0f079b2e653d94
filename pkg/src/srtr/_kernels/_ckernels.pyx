# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Arithmetic mirrors ``_pykernels`` operation for operation."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, floor

cnp.import_array()


cdef void _lsa(const double[:, ::1] cost, Py_ssize_t n, Py_ssize_t m,
               long long[::1] assign) noexcept:
    cdef double[::1] u = np.zeros(n + 1)
    cdef double[::1] v = np.zeros(m + 1)
    cdef long long[::1] p = np.zeros(m + 1, dtype=np.int64)
    cdef long long[::1] way = np.zeros(m + 1, dtype=np.int64)
    cdef double[::1] minv = np.empty(m + 1)
    cdef char[::1] used = np.empty(m + 1, dtype=np.int8)
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double delta, cur, ui0
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(m + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            ui0 = u[i0]
            delta = INFINITY
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    for j in range(1, m + 1):
        if p[j]:
            assign[p[j] - 1] = j - 1


def linear_sum_assignment(cost):
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t n = cost.shape[0], m = cost.shape[1]
    if n == 0 or m == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    if n <= m:
        cols = np.full(n, -1, dtype=np.int64)
        _lsa(cost, n, m, cols)
        return np.arange(n, dtype=np.int64), cols
    rows = np.full(m, -1, dtype=np.int64)
    _lsa(np.ascontiguousarray(cost.T), m, n, rows)
    order = np.argsort(rows, kind="stable")
    return rows[order], np.arange(m, dtype=np.int64)[order]


def bilinear_pool_matrix(boxes, level_shapes, int grid=3):
    cdef double[:, ::1] bx = np.ascontiguousarray(
        np.asarray(boxes, dtype=np.float64).reshape(-1, 4))
    cdef Py_ssize_t n = bx.shape[0]
    cdef Py_ssize_t total = 0
    for H, W in level_shapes:
        total += H * W
    out_arr = np.zeros((n, total), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double scale = 1.0 / (grid * grid * len(level_shapes))
    cdef Py_ssize_t i, a, b, offset, Hl, Wl, u0, v0, u1, v1
    cdef double w, h, x0, y0, xs, ys, u, v, fu, fv, wy0, wy1, wx0, wx1
    cdef int clamped = 0
    for i in range(n):
        w = bx[i, 2]
        h = bx[i, 3]
        if w < 1e-6 or h < 1e-6:
            clamped += 1
        if w < 1e-6:
            w = 1e-6
        if h < 1e-6:
            h = 1e-6
        x0 = bx[i, 0] - 0.5 * w
        y0 = bx[i, 1] - 0.5 * h
        offset = 0
        for shape in level_shapes:
            Hl = shape[0]
            Wl = shape[1]
            for a in range(grid):
                ys = y0 + h * ((a + 0.5) / grid)
                v = ys * Hl - 0.5
                if v < 0.0:
                    v = 0.0
                if v > Hl - 1.0:
                    v = Hl - 1.0
                v0 = <Py_ssize_t>floor(v)
                v1 = v0 + 1 if v0 + 1 < Hl - 1 else Hl - 1
                fv = v - v0
                wy0 = (1.0 - fv) * scale
                wy1 = fv * scale
                for b in range(grid):
                    xs = x0 + w * ((b + 0.5) / grid)
                    u = xs * Wl - 0.5
                    if u < 0.0:
                        u = 0.0
                    if u > Wl - 1.0:
                        u = Wl - 1.0
                    u0 = <Py_ssize_t>floor(u)
                    u1 = u0 + 1 if u0 + 1 < Wl - 1 else Wl - 1
                    fu = u - u0
                    wx0 = 1.0 - fu
                    wx1 = fu
                    out[i, offset + v0 * Wl + u0] += wy0 * wx0
                    out[i, offset + v0 * Wl + u1] += wy0 * wx1
                    out[i, offset + v1 * Wl + u0] += wy1 * wx0
                    out[i, offset + v1 * Wl + u1] += wy1 * wx1
            offset += Hl * Wl
    return out_arr, clamped


def bilinear_pool_jacobian(boxes, level_shapes, int grid=3):
    cdef double[:, ::1] bx = np.ascontiguousarray(
        np.asarray(boxes, dtype=np.float64).reshape(-1, 4))
    cdef Py_ssize_t n = bx.shape[0]
    cdef Py_ssize_t total = 0
    for H, W in level_shapes:
        total += H * W
    out_arr = np.zeros((4, n, total), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef double scale = 1.0 / (grid * grid * len(level_shapes))
    cdef Py_ssize_t i, a, b, offset, Hl, Wl, u0, v0, u1, v1, c
    cdef double w, h, x0, y0, u, v, ur, vr, fu, fv, gu, gv, fa, fb, w_live, h_live
    cdef Py_ssize_t cols[4]
    cdef double dus[4]
    cdef double dvs[4]
    for i in range(n):
        w = bx[i, 2]
        h = bx[i, 3]
        w_live = 1.0 if w >= 1e-6 else 0.0
        h_live = 1.0 if h >= 1e-6 else 0.0
        if w < 1e-6:
            w = 1e-6
        if h < 1e-6:
            h = 1e-6
        x0 = bx[i, 0] - 0.5 * w
        y0 = bx[i, 1] - 0.5 * h
        offset = 0
        for shape in level_shapes:
            Hl = shape[0]
            Wl = shape[1]
            for a in range(grid):
                fa = (a + 0.5) / grid
                vr = (y0 + h * fa) * Hl - 0.5
                v = vr
                if v < 0.0:
                    v = 0.0
                if v > Hl - 1.0:
                    v = Hl - 1.0
                gv = Hl * scale if (vr > 0.0 and vr < Hl - 1.0) else 0.0
                v0 = <Py_ssize_t>floor(v)
                v1 = v0 + 1 if v0 + 1 < Hl - 1 else Hl - 1
                fv = v - v0
                for b in range(grid):
                    fb = (b + 0.5) / grid
                    ur = (x0 + w * fb) * Wl - 0.5
                    u = ur
                    if u < 0.0:
                        u = 0.0
                    if u > Wl - 1.0:
                        u = Wl - 1.0
                    gu = Wl * scale if (ur > 0.0 and ur < Wl - 1.0) else 0.0
                    u0 = <Py_ssize_t>floor(u)
                    u1 = u0 + 1 if u0 + 1 < Wl - 1 else Wl - 1
                    fu = u - u0
                    cols[0] = offset + v0 * Wl + u0
                    cols[1] = offset + v0 * Wl + u1
                    cols[2] = offset + v1 * Wl + u0
                    cols[3] = offset + v1 * Wl + u1
                    dus[0] = -(1.0 - fv) * gu
                    dus[1] = (1.0 - fv) * gu
                    dus[2] = -fv * gu
                    dus[3] = fv * gu
                    dvs[0] = -(1.0 - fu) * gv
                    dvs[1] = -fu * gv
                    dvs[2] = (1.0 - fu) * gv
                    dvs[3] = fu * gv
                    for c in range(4):
                        out[0, i, cols[c]] += dus[c]
                        out[1, i, cols[c]] += dvs[c]
                        out[2, i, cols[c]] += dus[c] * (fb - 0.5) * w_live
                        out[3, i, cols[c]] += dvs[c] * (fa - 0.5) * h_live
            offset += Hl * Wl
    return out_arr


def pairwise_iou(a, b):
    cdef double[:, ::1] A = np.ascontiguousarray(np.asarray(a, dtype=np.float64).reshape(-1, 4))
    cdef double[:, ::1] B = np.ascontiguousarray(np.asarray(b, dtype=np.float64).reshape(-1, 4))
    cdef Py_ssize_t n = A.shape[0], m = B.shape[0], i, j
    out_arr = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double ax0, ay0, ax1, ay1, bx0, by0, bx1, by1, iw, ih, inter, union, area_a, area_b
    for i in range(n):
        ax0 = A[i, 0] - 0.5 * A[i, 2]
        ay0 = A[i, 1] - 0.5 * A[i, 3]
        ax1 = A[i, 0] + 0.5 * A[i, 2]
        ay1 = A[i, 1] + 0.5 * A[i, 3]
        area_a = (ax1 - ax0) * (ay1 - ay0)
        for j in range(m):
            bx0 = B[j, 0] - 0.5 * B[j, 2]
            by0 = B[j, 1] - 0.5 * B[j, 3]
            bx1 = B[j, 0] + 0.5 * B[j, 2]
            by1 = B[j, 1] + 0.5 * B[j, 3]
            iw = (ax1 if ax1 < bx1 else bx1) - (ax0 if ax0 > bx0 else bx0)
            ih = (ay1 if ay1 < by1 else by1) - (ay0 if ay0 > by0 else by0)
            if iw < 0.0:
                iw = 0.0
            if ih < 0.0:
                ih = 0.0
            inter = iw * ih
            area_b = (bx1 - bx0) * (by1 - by0)
            union = area_a + area_b - inter
            out[i, j] = inter / union if union > 0 else 0.0
    return out_arr
