"""Fast-marching hole filling.

Masked pixels are visited in order of their marching distance to the known
region and each one is set to a normalized weighted average of the known and
already-filled pixels inside a disc around it.  The weight of a contributor
combines three factors: alignment with the marching direction, inverse
squared geometric distance, and closeness in arrival time (so pixels on the
same front count more than pixels across the hole).

Both weight and value sums are accumulated in lockstep, so the average of
pixels that all share one value reproduces that value to the last bit after
the float32 round-trip.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

from ._common import check_pair, put_result

_DIR_FLOOR = 1e-6


def _eikonal_update(dist, done, y, x):
    """First-order upwind solution of |grad T| = 1 at (y, x).

    Uses the smaller finalized neighbour per axis; when both axes are
    available and compatible the quadratic two-axis solution applies,
    otherwise the causal single-axis fallback min+1.
    """
    h, w = dist.shape
    a = math.inf
    if x > 0 and done[y, x - 1]:
        a = dist[y, x - 1]
    if x + 1 < w and done[y, x + 1]:
        a = min(a, dist[y, x + 1])
    b = math.inf
    if y > 0 and done[y - 1, x]:
        b = dist[y - 1, x]
    if y + 1 < h and done[y + 1, x]:
        b = min(b, dist[y + 1, x])
    if math.isinf(a) and math.isinf(b):
        return math.inf
    if math.isfinite(a) and math.isfinite(b) and abs(a - b) < 1.0:
        return 0.5 * (a + b + math.sqrt(2.0 - (a - b) ** 2))
    return min(a, b) + 1.0


def march_distances(bits):
    """Fast-marching distance-to-known for a boolean mask.

    Returns (dist, order): a float64 grid that is 0 on known pixels and the
    marching distance on masked ones, plus the list of masked (row, col)
    positions in the order the march finalized them (nondecreasing in
    distance).
    """
    bits = np.asarray(bits, dtype=bool)
    h, w = bits.shape
    dist = np.where(bits, np.inf, 0.0)
    done = ~bits
    heap = []
    for y, x in np.argwhere(bits):
        t = _eikonal_update(dist, done, y, x)
        if math.isfinite(t):
            dist[y, x] = t
            heapq.heappush(heap, (t, int(y), int(x)))
    order = []
    while heap:
        t, y, x = heapq.heappop(heap)
        if done[y, x] or t > dist[y, x]:
            continue
        done[y, x] = True
        order.append((y, x))
        for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
            if 0 <= ny < h and 0 <= nx < w and bits[ny, nx] and not done[ny, nx]:
                nt = _eikonal_update(dist, done, ny, nx)
                if nt < dist[ny, nx]:
                    dist[ny, nx] = nt
                    heapq.heappush(heap, (nt, ny, nx))
    return dist, order


def _disc_offsets(radius):
    offs = []
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            r2 = dy * dy + dx * dx
            if 0 < r2 <= radius * radius:
                offs.append((dy, dx, r2, math.sqrt(r2)))
    return offs


def inpaint_telea(frame, mask, radius=5):
    """Fill masked pixels in fast-marching order with weighted averages."""
    pixels, bits = check_pair(frame, mask)
    h, w = pixels.shape
    dist, order = march_distances(bits)
    gy, gx = np.gradient(dist)
    offsets = _disc_offsets(radius)

    u = pixels.copy()
    filled = np.zeros_like(bits)
    for y, x in order:
        ny_, nx_ = gy[y, x], gx[y, x]
        wsum = 0.0
        vsum = 0.0
        for dy, dx, r2, rlen in offsets:
            qy = y + dy
            qx = x + dx
            if not (0 <= qy < h and 0 <= qx < w):
                continue
            if bits[qy, qx] and not filled[qy, qx]:
                continue
            direction = abs(dy * ny_ + dx * nx_) / rlen
            if direction < _DIR_FLOOR:
                direction = _DIR_FLOOR
            level = 1.0 / (1.0 + abs(dist[qy, qx] - dist[y, x]))
            wgt = direction * level / r2
            wsum += wgt
            vsum += wgt * u[qy, qx]
        u[y, x] = vsum / wsum
        filled[y, x] = True
    return put_result(frame, bits, u)
