"""Box conversions, IoU and generalized IoU for (cx, cy, w, h) boxes."""

from __future__ import annotations

import numpy as np

from . import _kernels
from . import tensor as T
from .tensor import Tensor


def cxcywh_to_xyxy(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    half = b[..., 2:] / 2
    return np.concatenate([b[..., :2] - half, b[..., :2] + half], axis=-1)


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _kernels.pairwise_iou(np.asarray(a, dtype=np.float64),
                                 np.asarray(b, dtype=np.float64))


def pairwise_giou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """GIoU matrix (len(a), len(b)); values lie in (-1, 1]."""
    xa, xb = cxcywh_to_xyxy(a)[:, None, :], cxcywh_to_xyxy(b)[None, :, :]
    iw = np.clip(np.minimum(xa[..., 2], xb[..., 2]) - np.maximum(xa[..., 0], xb[..., 0]), 0, None)
    ih = np.clip(np.minimum(xa[..., 3], xb[..., 3]) - np.maximum(xa[..., 1], xb[..., 1]), 0, None)
    inter = iw * ih
    area_a = (xa[..., 2] - xa[..., 0]) * (xa[..., 3] - xa[..., 1])
    area_b = (xb[..., 2] - xb[..., 0]) * (xb[..., 3] - xb[..., 1])
    union = area_a + area_b - inter
    hull = (np.maximum(xa[..., 2], xb[..., 2]) - np.minimum(xa[..., 0], xb[..., 0])) * (
        np.maximum(xa[..., 3], xb[..., 3]) - np.minimum(xa[..., 1], xb[..., 1])
    )
    return inter / union - (hull - union) / hull


def _corners(b: Tensor):
    cx, cy, w, h = (b[..., i] for i in range(4))
    return cx - w * 0.5, cy - h * 0.5, cx + w * 0.5, cy + h * 0.5


def giou(a: Tensor, b) -> Tensor:
    """Row-wise GIoU between two (..., 4) box tensors."""
    b = T.as_tensor(b)
    ax0, ay0, ax1, ay1 = _corners(a)
    bx0, by0, bx1, by1 = _corners(b)
    iw = T.relu(T.minimum(ax1, bx1) - T.maximum(ax0, bx0))
    ih = T.relu(T.minimum(ay1, by1) - T.maximum(ay0, by0))
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    hull = (T.maximum(ax1, bx1) - T.minimum(ax0, bx0)) * (
        T.maximum(ay1, by1) - T.minimum(ay0, by0)
    )
    return inter / union - (hull - union) / hull
