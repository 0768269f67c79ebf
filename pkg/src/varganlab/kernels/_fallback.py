"""Pure numpy/Python versions of the compiled kernels.

Used when the Cython extension is not built, and as the reference the
compiled versions are tested against.
"""
from collections import deque

import numpy as np


def minibatch_forward(h):
    """Per-row mean of exp(-L1 distance) to every other row.

    Returns ``(features, kernel)`` where ``kernel[i, j] = exp(-|h_i - h_j|_1)``.
    """
    h = np.ascontiguousarray(h, dtype=np.float64)
    b = h.shape[0]
    dist = np.abs(h[:, None, :] - h[None, :, :]).sum(axis=2)
    kernel = np.exp(-dist)
    feats = (kernel.sum(axis=1) - 1.0) / (b - 1)
    return feats, kernel


def minibatch_backward(h, kernel, grad):
    h = np.ascontiguousarray(h, dtype=np.float64)
    b = h.shape[0]
    grad = np.asarray(grad, dtype=np.float64).ravel()
    weight = (grad[:, None] + grad[None, :]) * kernel
    sign = np.sign(h[:, None, :] - h[None, :, :])
    return -(weight[:, :, None] * sign).sum(axis=1) / (b - 1)


def nearest_centers(x, centers):
    x = np.ascontiguousarray(x, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    # argmin returns the first minimum, i.e. ties go to the lowest index
    idx = d2.argmin(axis=1)
    return idx.astype(np.int64), np.sqrt(d2[np.arange(len(x)), idx])


def _spans(img, eight):
    rows, cols = img.shape
    steps = [(1, 0), (-1, 0), (0, 1), (0, -1)]
    if eight:
        steps += [(1, 1), (1, -1), (-1, 1), (-1, -1)]
    seen = np.zeros_like(img, dtype=bool)
    for r0 in range(rows):
        for c0 in range(cols):
            if not img[r0, c0] or seen[r0, c0]:
                continue
            # flood one component and record which borders it touches
            top = bottom = left = right = False
            queue = deque([(r0, c0)])
            seen[r0, c0] = True
            while queue:
                r, c = queue.popleft()
                top |= r == 0
                bottom |= r == rows - 1
                left |= c == 0
                right |= c == cols - 1
                for dr, dc in steps:
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < rows and 0 <= cc < cols and img[rr, cc] and not seen[rr, cc]:
                        seen[rr, cc] = True
                        queue.append((rr, cc))
            if (top and bottom) or (left and right):
                return True
    return False


def classify_images(images, eight_connected=False):
    """1 where an active component joins two opposite edges, else 0."""
    images = np.asarray(images, dtype=np.uint8)
    return np.array([_spans(img, eight_connected) for img in images], dtype=np.uint8)
