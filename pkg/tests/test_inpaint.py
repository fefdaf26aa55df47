"""Tests for the classical hole-filling baselines.

Each method is checked against an independent oracle built in this file:
a dense direct solve of the stencil system for the biharmonic filler, an
8-connected Dijkstra for the marching distances, an exhaustive patch search
for the randomized matcher, and a normal-equations solve for the surface
fit.  Shared invariants (unmasked pixels untouched, finite [0,1] output)
run across all five methods.
"""

import math

import numpy as np
import pytest

from spmtk.errors import (
    DidNotConvergeError,
    EmptyMaskError,
    InsufficientSupportError,
    MaskTouchesEntireFrameError,
    MismatchedDimensionsError,
    NoValidSourcePatchError,
    RankDeficientError,
)
from spmtk.imageio import Channel, MaskImage, ScanFrame
from spmtk.inpaint import (
    InpaintMethod,
    InpaintParams,
    fit_polynomial_surface,
    inpaint,
    inpaint_biharmonic,
    inpaint_ns,
    inpaint_patchmatch,
    inpaint_surface_fit,
    inpaint_telea,
    march_distances,
    monomial_powers,
    nnf_search,
    solve_biharmonic,
    source_centers,
    target_centers,
)


def make_frame(arr):
    arr = np.asarray(arr, dtype=np.float32)
    h, w = arr.shape
    return ScanFrame(w, h, Channel.Height, 1.0, 5.0, arr)


def make_mask(bits):
    bits = np.asarray(bits, dtype=bool)
    h, w = bits.shape
    return MaskImage(w, h, bits)


def rect_mask(shape, y0, y1, x0, x1):
    bits = np.zeros(shape, dtype=bool)
    bits[y0:y1, x0:x1] = True
    return bits


def disk_mask(shape, cy, cx, radius):
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius


def value_noise(shape, seed, lo=0.1, hi=0.9):
    from scipy.ndimage import uniform_filter

    rng = np.random.default_rng(seed)
    u = uniform_filter(rng.random(shape), size=5, mode="reflect")
    u = (u - u.min()) / (u.max() - u.min() + 1e-12)
    return (lo + (hi - lo) * u).astype(np.float32)


def smooth32():
    yy, xx = np.mgrid[0:32, 0:32].astype(float)
    u = (0.35
         + 0.30 * np.exp(-((yy - 12) ** 2 + (xx - 14) ** 2) / 90.0)
         + 0.20 * np.exp(-((yy - 22) ** 2 + (xx - 9) ** 2) / 140.0)
         + 0.002 * xx)
    return u.astype(np.float32)


# ---------------------------------------------------------------------------
# oracles


def dense_graph_laplacian(h, w):
    """Replicate-edge five-point Laplacian as a dense matrix, by loops."""
    n = h * w
    lap = np.zeros((n, n))
    for y in range(h):
        for x in range(w):
            i = y * w + x
            for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                if 0 <= ny < h and 0 <= nx < w:
                    lap[i, ny * w + nx] += 1.0
                    lap[i, i] -= 1.0
    return lap


def dense_biharmonic(pixels, bits):
    """Direct dense solve of the squared-Laplacian system on the mask."""
    h, w = pixels.shape
    lap = dense_graph_laplacian(h, w)
    big = lap @ lap
    flat = pixels.astype(np.float64).ravel()
    mi = np.flatnonzero(bits.ravel())
    ki = np.flatnonzero(~bits.ravel())
    sol = np.linalg.solve(big[np.ix_(mi, mi)], -big[np.ix_(mi, ki)] @ flat[ki])
    out = flat.copy()
    out[mi] = sol
    return out.reshape(h, w)


def dijkstra_distances(bits):
    """8-connected shortest path from the known region into the mask."""
    import heapq

    h, w = bits.shape
    dist = np.where(bits, np.inf, 0.0)
    heap = [(0.0, y, x) for y in range(h) for x in range(w) if not bits[y, x]]
    heapq.heapify(heap)
    sqrt2 = math.sqrt(2.0)
    while heap:
        d, y, x = heapq.heappop(heap)
        if d > dist[y, x]:
            continue
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy == 0 and dx == 0:
                    continue
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and bits[ny, nx]:
                    nd = d + (sqrt2 if dy != 0 and dx != 0 else 1.0)
                    if nd < dist[ny, nx]:
                        dist[ny, nx] = nd
                        heapq.heappush(heap, (nd, ny, nx))
    return dist


def brute_nnf_distances(values, tgt_ok, src_ok, patch):
    """Exact nearest-source distance for every target center."""
    half = patch // 2
    sources = np.argwhere(src_ok)
    out = {}
    for ty, tx in np.argwhere(tgt_ok):
        tpatch = values[ty - half:ty + half + 1, tx - half:tx + half + 1]
        best = math.inf
        for sy, sx in sources:
            d = float(np.sum(
                (tpatch - values[sy - half:sy + half + 1,
                                 sx - half:sx + half + 1]) ** 2))
            if d < best:
                best = d
        out[(int(ty), int(tx))] = best
    return out


def oracle_surface_coeffs(pixels, bits, degree, ring):
    """Normal-equations fit over a loop-built Chebyshev annulus."""
    h, w = pixels.shape
    region = np.zeros_like(bits)
    for y in range(h):
        for x in range(w):
            ys, ye = max(0, y - ring), min(h, y + ring + 1)
            xs, xe = max(0, x - ring), min(w, x + ring + 1)
            if bits[ys:ye, xs:xe].any():
                region[y, x] = True
    annulus = region & ~bits
    powers = [(t - i, i) for t in range(degree + 1) for i in range(t + 1)]
    rr, cc = np.nonzero(region)
    y0, x0 = float(rr.min()), float(cc.min())
    yspan, xspan = float(rr.max()) - y0, float(cc.max()) - x0
    ysc = 2.0 / yspan if yspan > 0 else 1.0
    xsc = 2.0 / xspan if xspan > 0 else 1.0
    rows, vals = [], []
    for y, x in np.argwhere(annulus):
        tyv = (y - y0) * ysc - 1.0
        txv = (x - x0) * xsc - 1.0
        rows.append([tyv ** py * txv ** px for py, px in powers])
        vals.append(float(pixels[y, x]))
    design = np.array(rows)
    rhs = np.array(vals)
    return np.linalg.solve(design.T @ design, design.T @ rhs)


ALL_METHODS = [
    ("biharmonic", lambda f, m: inpaint_biharmonic(f, m)),
    ("ns", lambda f, m: inpaint_ns(f, m, iters=60)),
    ("telea", lambda f, m: inpaint_telea(f, m)),
    ("patchmatch", lambda f, m: inpaint_patchmatch(f, m, seed=5)),
    ("surface", lambda f, m: inpaint_surface_fit(f, m)),
]


# ---------------------------------------------------------------------------


class TestBiharmonic:
    def test_constant_frame_restored_exactly(self):
        frame = make_frame(np.full((24, 24), 0.5, np.float32))
        mask = make_mask(rect_mask((24, 24), 8, 16, 9, 15))
        out = inpaint_biharmonic(frame, mask)
        assert np.array_equal(out.pixels, frame.pixels)

    def test_linear_ramp_is_reproduced(self):
        yy, xx = np.mgrid[0:64, 0:64]
        ramp = ((xx + 2 * yy) / 256.0).astype(np.float32)
        mask = rect_mask((64, 64), 24, 40, 24, 40)
        out = inpaint_biharmonic(make_frame(ramp), make_mask(mask))
        err = np.max(np.abs(out.pixels[mask] - ramp[mask]))
        assert err < 1e-6

    def test_matches_dense_solve_on_8x8(self):
        pixels = value_noise((8, 8), seed=3).astype(np.float64)
        bits = rect_mask((8, 8), 3, 6, 2, 5)
        got = solve_biharmonic(pixels, bits, tol=1e-10)
        want = dense_biharmonic(pixels, bits)
        assert np.max(np.abs(got[bits] - want[bits])) < 1e-8

    def test_matches_dense_solve_near_border(self):
        pixels = value_noise((9, 7), seed=11).astype(np.float64)
        bits = np.zeros((9, 7), dtype=bool)
        bits[0:3, 0:3] = True
        bits[6:9, 4:7] = True
        got = solve_biharmonic(pixels, bits, tol=1e-10)
        want = dense_biharmonic(pixels, bits)
        assert np.max(np.abs(got[bits] - want[bits])) < 1e-8

    def test_reinpainting_changes_little(self):
        frame = make_frame(value_noise((32, 32), seed=9))
        mask = make_mask(disk_mask((32, 32), 16, 15, 5))
        once = inpaint_biharmonic(frame, mask)
        twice = inpaint_biharmonic(once, mask)
        assert np.max(np.abs(twice.pixels - once.pixels)) < 1e-6

    def test_nonconvergence_is_reported(self):
        frame = make_frame(value_noise((16, 16), seed=2))
        mask = make_mask(rect_mask((16, 16), 5, 11, 5, 11))
        with pytest.raises(DidNotConvergeError):
            inpaint_biharmonic(frame, mask, tol=1e-30, max_iter=3)

    def test_full_mask_rejected(self):
        frame = make_frame(np.full((8, 8), 0.4, np.float32))
        with pytest.raises(MaskTouchesEntireFrameError):
            inpaint_biharmonic(frame, make_mask(np.ones((8, 8), bool)))

    def test_empty_mask_rejected(self):
        frame = make_frame(np.full((8, 8), 0.4, np.float32))
        with pytest.raises(EmptyMaskError):
            inpaint_biharmonic(frame, make_mask(np.zeros((8, 8), bool)))

    def test_shape_mismatch_rejected(self):
        frame = make_frame(np.full((8, 8), 0.4, np.float32))
        with pytest.raises(MismatchedDimensionsError):
            inpaint_biharmonic(frame, make_mask(np.zeros((8, 9), bool)))


class TestNavierStokes:
    def test_constant_frame_restored_exactly(self):
        frame = make_frame(np.full((20, 20), 0.5, np.float32))
        mask = make_mask(disk_mask((20, 20), 10, 10, 4))
        out = inpaint_ns(frame, mask)
        assert np.array_equal(out.pixels, frame.pixels)

    def test_fill_stays_within_ring_range(self):
        for seed in range(4):
            pixels = value_noise((28, 28), seed=seed)
            bits = disk_mask((28, 28), 14, 13, 5)
            out = inpaint_ns(make_frame(pixels), make_mask(bits))
            # independent 2-ring: known pixels within Chebyshev distance 2
            ring_vals = []
            for y, x in np.argwhere(~bits):
                ys, ye = max(0, y - 2), min(28, y + 3)
                xs, xe = max(0, x - 2), min(28, x + 3)
                if bits[ys:ye, xs:xe].any():
                    ring_vals.append(pixels[y, x])
            lo, hi = min(ring_vals), max(ring_vals)
            assert out.pixels[bits].min() >= lo - 1e-6
            assert out.pixels[bits].max() <= hi + 1e-6

    def test_iteration_count_has_plateaued(self):
        frame = make_frame(smooth32())
        mask = make_mask(rect_mask((32, 32), 12, 20, 12, 20))
        base = inpaint_ns(frame, mask, iters=300)
        more = inpaint_ns(frame, mask, iters=600)
        diff = base.pixels[mask.bits] - more.pixels[mask.bits]
        assert math.sqrt(float(np.mean(diff ** 2))) < 1e-3

    def test_rerun_is_reproducible(self):
        frame = make_frame(value_noise((24, 24), seed=4))
        mask = make_mask(rect_mask((24, 24), 8, 14, 10, 16))
        once = inpaint_ns(frame, mask)
        twice = inpaint_ns(once, mask)
        assert np.array_equal(once.pixels, twice.pixels)


class TestTelea:
    def test_constant_frame_restored_exactly(self):
        frame = make_frame(np.full((20, 20), 0.5, np.float32))
        mask = make_mask(disk_mask((20, 20), 9, 11, 4))
        out = inpaint_telea(frame, mask)
        assert np.array_equal(out.pixels, frame.pixels)

    @pytest.mark.parametrize("value", [0.5, 0.37])
    def test_single_pixel_identity(self, value):
        pixels = np.full((16, 16), value, np.float32)
        bits = np.zeros((16, 16), dtype=bool)
        bits[8, 8] = True
        out = inpaint_telea(make_frame(pixels), make_mask(bits))
        assert out.pixels[8, 8] == np.float32(value)

    def test_single_pixel_identity_radius_one(self):
        pixels = value_noise((16, 16), seed=8)
        pixels[7:10, 7:10] = np.float32(0.625)
        bits = np.zeros((16, 16), dtype=bool)
        bits[8, 8] = True
        out = inpaint_telea(make_frame(pixels), make_mask(bits), radius=1)
        assert out.pixels[8, 8] == np.float32(0.625)

    def test_march_order_nondecreasing(self):
        bits = rect_mask((16, 16), 4, 12, 5, 11) | disk_mask((16, 16), 12, 12, 2)
        bits[0, 0] = True
        dist, order = march_distances(bits)
        values = [dist[y, x] for y, x in order]
        assert len(order) == int(bits.sum())
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))

    def test_distances_match_dijkstra(self):
        bits = rect_mask((16, 16), 4, 12, 5, 11)
        dist, _ = march_distances(bits)
        ref = dijkstra_distances(bits)
        assert np.max(np.abs(dist[bits] - ref[bits])) <= 0.5

    def test_distances_match_dijkstra_irregular(self):
        bits = disk_mask((16, 16), 8, 8, 4) | rect_mask((16, 16), 2, 5, 10, 14)
        dist, _ = march_distances(bits)
        ref = dijkstra_distances(bits)
        assert np.max(np.abs(dist[bits] - ref[bits])) <= 0.5

    def test_rerun_is_reproducible(self):
        frame = make_frame(value_noise((20, 20), seed=6))
        mask = make_mask(disk_mask((20, 20), 10, 10, 4))
        once = inpaint_telea(frame, mask)
        twice = inpaint_telea(once, mask)
        assert np.array_equal(once.pixels, twice.pixels)


class TestPatchMatch:
    def test_constant_frame_restored_exactly(self):
        frame = make_frame(np.full((24, 24), 0.5, np.float32))
        mask = make_mask(rect_mask((24, 24), 10, 15, 9, 14))
        out = inpaint_patchmatch(frame, mask, seed=1)
        assert np.array_equal(out.pixels, frame.pixels)

    def test_periodic_stripes_are_continued(self):
        profile = 0.5 + 0.35 * np.sin(2 * np.pi * np.arange(8) / 8.0)
        ripple = 0.05 * np.sin(2 * np.pi * np.arange(32) / 16.0)
        truth = (profile[np.arange(32) % 8][:, None]
                 + ripple[None, :]).astype(np.float32)
        bits = rect_mask((32, 32), 12, 16, 0, 32)
        out = inpaint_patchmatch(make_frame(truth), make_mask(bits), seed=3)
        got = out.pixels[bits].astype(np.float64)
        want = truth[bits].astype(np.float64)
        corr = np.corrcoef(got, want)[0, 1]
        assert corr > 0.99

    def test_nnf_close_to_exhaustive_search(self):
        for seed in (0, 1):
            pixels = value_noise((20, 20), seed=40 + seed).astype(np.float64)
            bits = disk_mask((20, 20), 10, 10, 3)
            values = pixels.copy()
            values[bits] = pixels[~bits].mean()
            tgt = target_centers(bits, 7)
            src = source_centers(bits, 7)
            rng = np.random.default_rng(seed)
            _, dist = nnf_search(values, tgt, src, 7, 5, rng)
            exact = brute_nnf_distances(values, tgt, src, 7)
            got = np.array([dist[t] for t in sorted(exact)])
            want = np.array([exact[t] for t in sorted(exact)])
            assert np.all(got >= want - 1e-12)
            assert got.mean() <= 1.05 * want.mean() + 1e-12

    def test_deterministic_in_seed(self):
        frame = make_frame(value_noise((24, 24), seed=12))
        mask = make_mask(disk_mask((24, 24), 12, 11, 4))
        a = inpaint_patchmatch(frame, mask, seed=7)
        b = inpaint_patchmatch(frame, mask, seed=7)
        assert np.array_equal(a.pixels, b.pixels)

    def test_no_valid_source_raises(self):
        pixels = np.full((8, 8), 0.5, np.float32)
        bits = np.zeros((8, 8), dtype=bool)
        bits[3, 3] = True
        with pytest.raises(NoValidSourcePatchError):
            inpaint_patchmatch(make_frame(pixels), make_mask(bits))

    def test_even_patch_rejected(self):
        frame = make_frame(np.full((16, 16), 0.5, np.float32))
        mask = make_mask(rect_mask((16, 16), 6, 9, 6, 9))
        with pytest.raises(ValueError):
            inpaint_patchmatch(frame, mask, patch=6)


class TestSurfaceFit:
    def test_linear_ramp_exact(self):
        yy, xx = np.mgrid[0:16, 0:16]
        ramp = ((xx + 2 * yy) / 256.0).astype(np.float32)
        bits = rect_mask((16, 16), 6, 10, 6, 10)
        out = inpaint_surface_fit(make_frame(ramp), make_mask(bits), degree=1)
        assert np.max(np.abs(out.pixels[bits] - ramp[bits])) <= 1e-9

    def test_quadratic_bowl_exact(self):
        yy, xx = np.mgrid[0:16, 0:16]
        bowl = (((xx - 8) ** 2 + (yy - 8) ** 2) / 512.0).astype(np.float32)
        bits = rect_mask((16, 16), 6, 10, 6, 10)
        out = inpaint_surface_fit(make_frame(bowl), make_mask(bits), degree=2)
        assert np.max(np.abs(out.pixels[bits] - bowl[bits])) <= 1e-7

    def test_coefficients_match_normal_equations(self):
        pixels = value_noise((12, 12), seed=21).astype(np.float64)
        bits = rect_mask((12, 12), 4, 7, 4, 7)
        model = fit_polynomial_surface(pixels, bits, degree=2, ring=6)
        want = oracle_surface_coeffs(pixels, bits, degree=2, ring=6)
        assert np.max(np.abs(model.coeffs - want)) < 1e-8

    def test_power_ordering(self):
        assert monomial_powers(2) == ((0, 0), (1, 0), (0, 1),
                                      (2, 0), (1, 1), (0, 2))

    def test_insufficient_support(self):
        frame = make_frame(value_noise((8, 8), seed=5))
        mask = make_mask(rect_mask((8, 8), 1, 7, 1, 7))
        with pytest.raises(InsufficientSupportError):
            inpaint_surface_fit(frame, mask, degree=3, ring=1)

    def test_rank_deficiency_on_single_row(self):
        pixels = (0.3 + 0.01 * np.arange(48, dtype=np.float32))[None, :] / 1.0
        frame = make_frame(np.ascontiguousarray(pixels))
        bits = np.zeros((1, 48), dtype=bool)
        bits[0, 18:22] = True
        with pytest.raises(RankDeficientError):
            inpaint_surface_fit(frame, make_mask(bits), degree=2, ring=12)

    def test_output_clamped(self):
        # steep ramp so the quadratic extrapolates past 1.0 inside the hole
        yy, _ = np.mgrid[0:20, 0:20]
        steep = np.clip((yy / 19.0) ** 3, 0.0, 1.0).astype(np.float32)
        bits = rect_mask((20, 20), 14, 19, 6, 14)
        out = inpaint_surface_fit(make_frame(steep), make_mask(bits), degree=2)
        assert out.pixels.max() <= 1.0
        assert out.pixels.min() >= 0.0

    def test_refit_is_stable(self):
        frame = make_frame(value_noise((20, 20), seed=14))
        mask = make_mask(disk_mask((20, 20), 10, 10, 3))
        once = inpaint_surface_fit(frame, mask)
        twice = inpaint_surface_fit(once, mask)
        assert np.array_equal(once.pixels, twice.pixels)


class TestDispatch:
    def test_dispatch_matches_direct_calls(self):
        frame = make_frame(value_noise((32, 32), seed=17))
        mask = make_mask(disk_mask((32, 32), 16, 16, 5))
        direct = {
            InpaintMethod.Biharmonic: inpaint_biharmonic(frame, mask),
            InpaintMethod.NavierStokes: inpaint_ns(frame, mask),
            InpaintMethod.Telea: inpaint_telea(frame, mask),
            InpaintMethod.PatchMatch: inpaint_patchmatch(frame, mask, seed=0),
            InpaintMethod.SurfaceFit: inpaint_surface_fit(frame, mask),
        }
        for method, want in direct.items():
            got = inpaint(frame, mask, InpaintParams(method=method))
            assert np.array_equal(got.pixels, want.pixels), method

    def test_method_accepts_string_tags(self):
        assert InpaintParams(method="telea").method is InpaintMethod.Telea

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError):
            InpaintParams(method="poisson")

    def test_bad_params_rejected(self):
        with pytest.raises(ValueError):
            InpaintParams(tol=0.0)
        with pytest.raises(ValueError):
            InpaintParams(patch=0)
        with pytest.raises(ValueError):
            InpaintParams(degree=-1)
        with pytest.raises(ValueError):
            InpaintParams(max_iter=0)

    def test_unmasked_pixels_bit_identical_everywhere(self):
        for seed in range(3):
            pixels = value_noise((26, 26), seed=60 + seed)
            rng = np.random.default_rng(seed)
            bits = disk_mask((26, 26), int(rng.integers(9, 17)),
                             int(rng.integers(9, 17)), 4)
            frame, mask = make_frame(pixels), make_mask(bits)
            for name, call in ALL_METHODS:
                out = call(frame, mask)
                assert np.array_equal(out.pixels[~bits], pixels[~bits]), name

    def test_outputs_finite_and_in_range(self):
        pixels = value_noise((26, 26), seed=77, lo=0.02, hi=0.98)
        bits = rect_mask((26, 26), 9, 16, 8, 17)
        frame, mask = make_frame(pixels), make_mask(bits)
        for name, call in ALL_METHODS:
            out = call(frame, mask)
            assert np.all(np.isfinite(out.pixels)), name
            assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0, name
