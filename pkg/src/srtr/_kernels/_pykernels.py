"""Pure-Python reference versions of the compiled kernels."""

from __future__ import annotations

import math

import numpy as np

INF = math.inf


def _lsa_rows_le_cols(cost: list[list[float]], n: int, m: int) -> list[int]:
    # Shortest augmenting path with row/column potentials; n <= m.
    # Ties in the column scan go to the lowest column index.
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = cost[i0 - 1]
            ui0 = u[i0]
            delta = INF
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
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
    assign = [-1] * n
    for j in range(1, m + 1):
        if p[j]:
            assign[p[j] - 1] = j - 1
    return assign


def linear_sum_assignment(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-cost assignment of ``min(n, m)`` pairs; rows come back sorted."""
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    if n == 0 or m == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    if n <= m:
        cols = _lsa_rows_le_cols(cost.tolist(), n, m)
        return np.arange(n, dtype=np.int64), np.asarray(cols, dtype=np.int64)
    rows_of_col = _lsa_rows_le_cols(cost.T.tolist(), m, n)
    rows = np.asarray(rows_of_col, dtype=np.int64)
    order = np.argsort(rows, kind="stable")
    return rows[order], np.arange(m, dtype=np.int64)[order]


def bilinear_pool_matrix(
    boxes: np.ndarray, level_shapes: list[tuple[int, int]], grid: int = 3
) -> tuple[np.ndarray, int]:
    """Sparse-as-dense weights mapping flattened tokens to one vector per box.

    Row ``i`` averages a ``grid x grid`` lattice of bilinear samples inside
    box ``i`` (cx, cy, w, h in unit coordinates) over every level, then
    averages the levels. Levels are laid out back to back, row-major.
    Returns the (n_boxes, n_tokens) matrix and the number of boxes whose
    width or height had to be clamped up to 1e-6.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    n = boxes.shape[0]
    total = sum(h * w for h, w in level_shapes)
    out = np.zeros((n, total), dtype=np.float64)
    w = boxes[:, 2].copy()
    h = boxes[:, 3].copy()
    clamped = int(np.count_nonzero((w < 1e-6) | (h < 1e-6)))
    w = np.maximum(w, 1e-6)
    h = np.maximum(h, 1e-6)
    x0 = boxes[:, 0] - 0.5 * w
    y0 = boxes[:, 1] - 0.5 * h
    frac = (np.arange(grid) + 0.5) / grid
    xs = x0[:, None] + w[:, None] * frac[None, :]  # (n, grid)
    ys = y0[:, None] + h[:, None] * frac[None, :]
    scale = 1.0 / (grid * grid * len(level_shapes))
    rows = np.arange(n)
    offset = 0
    for H, W in level_shapes:
        u = np.clip(xs * W - 0.5, 0.0, W - 1.0)
        v = np.clip(ys * H - 0.5, 0.0, H - 1.0)
        u0 = np.floor(u).astype(np.int64)
        v0 = np.floor(v).astype(np.int64)
        u1 = np.minimum(u0 + 1, W - 1)
        v1 = np.minimum(v0 + 1, H - 1)
        fu = u - u0
        fv = v - v0
        for a in range(grid):  # y samples
            for b in range(grid):  # x samples
                wy0 = (1.0 - fv[:, a]) * scale
                wy1 = fv[:, a] * scale
                wx0 = 1.0 - fu[:, b]
                wx1 = fu[:, b]
                base = offset
                np.add.at(out, (rows, base + v0[:, a] * W + u0[:, b]), wy0 * wx0)
                np.add.at(out, (rows, base + v0[:, a] * W + u1[:, b]), wy0 * wx1)
                np.add.at(out, (rows, base + v1[:, a] * W + u0[:, b]), wy1 * wx0)
                np.add.at(out, (rows, base + v1[:, a] * W + u1[:, b]), wy1 * wx1)
        offset += H * W
    return out, clamped


def bilinear_pool_jacobian(
    boxes: np.ndarray, level_shapes: list[tuple[int, int]], grid: int = 3
) -> np.ndarray:
    """Derivative of :func:`bilinear_pool_matrix` w.r.t. (cx, cy, w, h).

    Returns an array (4, n_boxes, n_tokens). Samples clipped to the grid
    border and clamped box sides contribute zero derivative.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    n = boxes.shape[0]
    total = sum(h * w for h, w in level_shapes)
    out = np.zeros((4, n, total), dtype=np.float64)
    w_live = (boxes[:, 2] >= 1e-6).astype(np.float64)
    h_live = (boxes[:, 3] >= 1e-6).astype(np.float64)
    w = np.maximum(boxes[:, 2], 1e-6)
    h = np.maximum(boxes[:, 3], 1e-6)
    x0 = boxes[:, 0] - 0.5 * w
    y0 = boxes[:, 1] - 0.5 * h
    frac = (np.arange(grid) + 0.5) / grid
    xs = x0[:, None] + w[:, None] * frac[None, :]
    ys = y0[:, None] + h[:, None] * frac[None, :]
    scale = 1.0 / (grid * grid * len(level_shapes))
    rows = np.arange(n)
    offset = 0
    for H, W in level_shapes:
        ur = xs * W - 0.5
        vr = ys * H - 0.5
        u = np.clip(ur, 0.0, W - 1.0)
        v = np.clip(vr, 0.0, H - 1.0)
        du_live = ((ur > 0.0) & (ur < W - 1.0)).astype(np.float64) * W
        dv_live = ((vr > 0.0) & (vr < H - 1.0)).astype(np.float64) * H
        u0 = np.floor(u).astype(np.int64)
        v0 = np.floor(v).astype(np.int64)
        u1 = np.minimum(u0 + 1, W - 1)
        v1 = np.minimum(v0 + 1, H - 1)
        fu = u - u0
        fv = v - v0
        for a in range(grid):
            for b in range(grid):
                # d/du and d/dv of the four corner weights
                gu = du_live[:, b] * scale
                gv = dv_live[:, a] * scale
                corners = (
                    (v0[:, a] * W + u0[:, b], -(1.0 - fv[:, a]) * gu, -(1.0 - fu[:, b]) * gv),
                    (v0[:, a] * W + u1[:, b], (1.0 - fv[:, a]) * gu, -fu[:, b] * gv),
                    (v1[:, a] * W + u0[:, b], -fv[:, a] * gu, (1.0 - fu[:, b]) * gv),
                    (v1[:, a] * W + u1[:, b], fv[:, a] * gu, fu[:, b] * gv),
                )
                for idx, d_u, d_v in corners:
                    col = offset + idx
                    np.add.at(out[0], (rows, col), d_u)
                    np.add.at(out[1], (rows, col), d_v)
                    np.add.at(out[2], (rows, col), d_u * (frac[b] - 0.5) * w_live)
                    np.add.at(out[3], (rows, col), d_v * (frac[a] - 0.5) * h_live)
        offset += H * W
    return out


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU between every cxcywh box in ``a`` and every one in ``b``."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ax0, ay0 = a[:, 0] - 0.5 * a[:, 2], a[:, 1] - 0.5 * a[:, 3]
    ax1, ay1 = a[:, 0] + 0.5 * a[:, 2], a[:, 1] + 0.5 * a[:, 3]
    bx0, by0 = b[:, 0] - 0.5 * b[:, 2], b[:, 1] - 0.5 * b[:, 3]
    bx1, by1 = b[:, 0] + 0.5 * b[:, 2], b[:, 1] + 0.5 * b[:, 3]
    iw = np.maximum(0.0, np.minimum(ax1[:, None], bx1[None]) - np.maximum(ax0[:, None], bx0[None]))
    ih = np.maximum(0.0, np.minimum(ay1[:, None], by1[None]) - np.maximum(ay0[:, None], by0[None]))
    inter = iw * ih
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    union = area_a[:, None] + area_b[None] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)
