"""Randomized exemplar search and vote-based hole filling.

A nearest-neighbour field maps every patch that overlaps the hole to a
similar patch drawn entirely from known pixels.  The field is found by the
classic randomized scheme: random initialization, then alternating raster /
reverse-raster sweeps that propagate good matches between neighbours, each
followed by an exponentially shrinking random search around the current
match.  Filling alternates field updates with a vote: every masked pixel
averages the source values that the overlapping matched patches project onto
it, so early passes are driven by the known shell of the hole (the outer
onion layers) and later passes refine the interior against the previous
estimate.  All randomness comes from one generator seeded by the caller.

The probe budget below is deliberately generous for the frame sizes used
here: scan crops offer only a few hundred candidate patches, far fewer than
the photographs the randomized scheme was designed for, so each radius level
retries rejected samples and spends extra probes at coarse radii.  The
budget stays constant in the number of sources.
"""

from __future__ import annotations

import numpy as np

from ..errors import NoValidSourcePatchError
from ._common import check_pair, chebyshev_ring, put_result

# Search budget: initialization candidates per target, probes per radius
# level (coarse levels cover most of the frame, fine levels polish), and the
# rejection-retry factor when a sample misses the valid source set.
_INIT_CANDIDATES = 8
_PROBES_COARSE = 6
_PROBES_FINE = 2
_ATTEMPT_FACTOR = 2


def _window_counts(bits, patch):
    """Masked-pixel count of every in-frame patch window (by top-left)."""
    h, w = bits.shape
    ii = np.zeros((h + 1, w + 1), dtype=np.int64)
    ii[1:, 1:] = bits.astype(np.int64).cumsum(axis=0).cumsum(axis=1)
    return (ii[patch:, patch:] - ii[:-patch, patch:]
            - ii[patch:, :-patch] + ii[:-patch, :-patch])


def source_centers(bits, patch):
    """Centers whose patch lies in-frame and contains no masked pixel."""
    bits = np.asarray(bits, dtype=bool)
    h, w = bits.shape
    half = patch // 2
    ok = np.zeros((h, w), dtype=bool)
    if h >= patch and w >= patch:
        counts = _window_counts(bits, patch)
        ok[half:h - half, half:w - half] = counts == 0
    return ok


def target_centers(bits, patch):
    """In-frame patch centers whose window overlaps the masked set."""
    bits = np.asarray(bits, dtype=bool)
    h, w = bits.shape
    half = patch // 2
    ok = np.zeros((h, w), dtype=bool)
    if h >= patch and w >= patch:
        counts = _window_counts(bits, patch)
        ok[half:h - half, half:w - half] = counts > 0
    return ok


def nnf_search(values, target_ok, source_ok, patch, iters, rng):
    """Approximate nearest-neighbour field between patch sets.

    For every center flagged in `target_ok`, find a center flagged in
    `source_ok` whose patch has small summed squared difference to the
    target patch.  Returns (match, dist): an int (h, w, 2) array of matched
    centers and the float64 distance grid, both meaningful at target centers
    only.  Deterministic given `rng`'s state.
    """
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape
    half = patch // 2
    targets = [(int(y), int(x)) for y, x in np.argwhere(target_ok)]
    sources = np.argwhere(source_ok)
    nsrc = len(sources)
    if nsrc == 0:
        raise NoValidSourcePatchError("no fully known patch to copy from")

    match = np.zeros((h, w, 2), dtype=np.int64)
    dist = np.full((h, w), np.inf)

    def ssd(ty, tx, sy, sx):
        d = (values[ty - half:ty + half + 1, tx - half:tx + half + 1]
             - values[sy - half:sy + half + 1, sx - half:sx + half + 1])
        return float(np.sum(d * d))

    picks = rng.integers(0, nsrc, size=(len(targets), _INIT_CANDIDATES))
    for (ty, tx), row in zip(targets, picks):
        best = np.inf
        by = bx = 0
        for k in row:
            sy, sx = int(sources[k, 0]), int(sources[k, 1])
            d = ssd(ty, tx, sy, sx)
            if d < best:
                best, by, bx = d, sy, sx
        match[ty, tx] = by, bx
        dist[ty, tx] = best

    span = max(h, w)
    for sweep in range(iters):
        forward = sweep % 2 == 0
        scan = targets if forward else targets[::-1]
        for ty, tx in scan:
            best = dist[ty, tx]
            by, bx = match[ty, tx]
            for dy, dx in ((-1, 0), (0, -1), (1, 0), (0, 1)):
                py, px = ty + dy, tx + dx
                if not (0 <= py < h and 0 <= px < w and target_ok[py, px]):
                    continue
                cy = int(match[py, px, 0]) - dy
                cx = int(match[py, px, 1]) - dx
                if (half <= cy < h - half and half <= cx < w - half
                        and source_ok[cy, cx]):
                    d = ssd(ty, tx, cy, cx)
                    if d < best:
                        best, by, bx = d, cy, cx
            # one uniform draw straight from the source list per sweep, so
            # isolated optima stay reachable however far the window drifted
            k = int(rng.integers(0, nsrc))
            sy, sx = int(sources[k, 0]), int(sources[k, 1])
            d = ssd(ty, tx, sy, sx)
            if d < best:
                best, by, bx = d, sy, sx
            radius = span
            while radius >= 1:
                probes = _PROBES_COARSE if radius >= span // 4 else _PROBES_FINE
                hits = 0
                attempts = 0
                while hits < probes and attempts < _ATTEMPT_FACTOR * probes:
                    attempts += 1
                    ylo = max(int(by) - radius, half)
                    yhi = min(int(by) + radius, h - half - 1)
                    xlo = max(int(bx) - radius, half)
                    xhi = min(int(bx) + radius, w - half - 1)
                    cy = int(rng.integers(ylo, yhi + 1))
                    cx = int(rng.integers(xlo, xhi + 1))
                    if source_ok[cy, cx]:
                        hits += 1
                        d = ssd(ty, tx, cy, cx)
                        if d < best:
                            best, by, bx = d, cy, cx
                radius //= 2
            match[ty, tx] = by, bx
            dist[ty, tx] = best
    return match, dist


def inpaint_patchmatch(frame, mask, patch=7, nnf_iters=5, fill_passes=4, seed=0):
    """Fill masked pixels by voting from matched fully-known patches."""
    if patch < 3 or patch % 2 == 0:
        raise ValueError("patch size must be odd and at least 3")
    pixels, bits = check_pair(frame, mask)
    h, w = pixels.shape
    half = patch // 2

    src_ok = source_centers(bits, patch)
    if not src_ok.any():
        raise NoValidSourcePatchError("no fully known patch to copy from")
    tgt_ok = target_centers(bits, patch)
    tgt_list = [(int(y), int(x)) for y, x in np.argwhere(tgt_ok)]

    rng = np.random.default_rng(seed)
    u = pixels.copy()
    u[bits] = float(pixels[chebyshev_ring(bits, 2)].mean())

    def cast_votes():
        match, _ = nnf_search(u, tgt_ok, src_ok, patch, nnf_iters, rng)
        vote = np.zeros((h, w))
        hits = np.zeros((h, w))
        for ty, tx in tgt_list:
            sy, sx = int(match[ty, tx, 0]), int(match[ty, tx, 1])
            win = np.s_[ty - half:ty + half + 1, tx - half:tx + half + 1]
            src = u[sy - half:sy + half + 1, sx - half:sx + half + 1]
            inside = bits[win]
            vote[win][inside] += src[inside]
            hits[win][inside] += 1.0
        return vote, hits

    # Peel the hole inward one ring at a time so every pixel is voted on
    # while its window already holds mostly settled values, then let each
    # remaining pass re-vote the whole region as refinement.
    filled = ~bits
    for _ in range(fill_passes):
        while not filled.all():
            vote, hits = cast_votes()
            layer = chebyshev_ring(filled, 1)
            u[layer] = vote[layer] / hits[layer]
            filled |= layer
        vote, hits = cast_votes()
        u[bits] = vote[bits] / hits[bits]
    return put_result(frame, bits, u)
