"""End-to-end acceptance suite.

Each class pins one externally checkable promise of the package: the
printed-statistics reconstruction, oracle agreement for the classical
restoration solvers, metric identities, gradient soundness, adapter
mechanics, the training-improvement and overfitting stories, benchmark
determinism, and format durability.  Oracles are rebuilt here with plain
loops so a regression in the fast implementations cannot hide inside a
shared helper.  The two training fixtures at the bottom are the long ones;
everything above them runs in seconds.
"""

import heapq
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from spmtk import autodiff as ad
from spmtk.artefacts import generate_pair_dataset
from spmtk.bench import strip_timing
from spmtk.diffusion import (
    NoiseSchedule,
    Regime,
    ToyDenoiser,
    TrainConfig,
    attach_lora,
    finetune,
    load_pairs,
    merge_lora,
    pretrain_backbone,
)
from spmtk.diffusion.train import _heldout_eval
from spmtk.errors import DuplicateIdError
from spmtk.imageio import (
    Channel,
    MaskImage,
    ScanFrame,
    load_pgm,
    load_spmf,
    read_manifest,
    save_pgm,
    save_spmf,
    write_manifest,
)
from spmtk.inpaint import (
    inpaint_biharmonic,
    inpaint_telea,
    march_distances,
    nnf_search,
    solve_biharmonic,
    source_centers,
    target_centers,
)
from spmtk.metrics import masked_psnr, masked_ssim, ssim_map
from spmtk.stats import p_value_from_effect
from spmtk.textures import make_texture_corpus, make_texture_frame


def as_frame(pixels):
    pixels = np.asarray(pixels, dtype=np.float32)
    h, w = pixels.shape
    return ScanFrame(w, h, Channel.Height, 1.0, 1.0, pixels)


def as_mask(bits):
    h, w = bits.shape
    return MaskImage(w, h, bits.astype(bool))


class TestEffectSizeReconstruction:
    """Printed effect sizes map back to their published p-values."""

    def test_large_effect_p_value(self):
        t0 = time.perf_counter()
        p = p_value_from_effect(0.265, 415)
        assert time.perf_counter() - t0 < 1.0
        assert 1.13e-7 / 1.15 <= p <= 1.13e-7 * 1.15

    def test_small_negative_effect_p_value(self):
        p = p_value_from_effect(-0.117, 415)
        assert p == pytest.approx(0.018, abs=0.002)


class TestBiharmonicExactness:
    def test_linear_ramp_restored_exactly(self):
        yy, xx = np.mgrid[0:64, 0:64]
        ramp = ((0.3 * yy + 0.5 * xx) / 64.0).astype(np.float32)
        bits = np.zeros((64, 64), dtype=bool)
        bits[24:40, 24:40] = True
        t0 = time.perf_counter()
        out = inpaint_biharmonic(as_frame(ramp), as_mask(bits))
        assert time.perf_counter() - t0 < 1.0
        assert np.max(np.abs(out.pixels - ramp)) < 1e-6

    def test_matches_dense_direct_solve(self):
        rng = np.random.default_rng(17)
        pixels = rng.random((8, 8))
        bits = np.zeros((8, 8), dtype=bool)
        bits[3:6, 2:6] = True

        # dense replicate-edge bilaplacian, assembled by explicit loops
        n = 64
        lap = np.zeros((n, n))
        for y in range(8):
            for x in range(8):
                i = y * 8 + x
                for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                    if 0 <= ny < 8 and 0 <= nx < 8:
                        lap[i, ny * 8 + nx] += 1.0
                        lap[i, i] -= 1.0
        big = lap @ lap
        flat = pixels.ravel()
        mi = np.flatnonzero(bits.ravel())
        ki = np.flatnonzero(~bits.ravel())
        sol = np.linalg.solve(big[np.ix_(mi, mi)],
                              -big[np.ix_(mi, ki)] @ flat[ki])
        want = flat.copy()
        want[mi] = sol

        got = solve_biharmonic(pixels, bits, tol=1e-10)
        assert np.max(np.abs(got.ravel()[mi] - want[mi])) < 1e-8


class TestPatchMatchQuality:
    def test_mean_distance_near_exhaustive(self):
        t0 = time.perf_counter()
        for trial in range(10):
            rng_img = np.random.default_rng(900 + trial)
            pixels = rng_img.random((24, 24))
            cy, cx = rng_img.integers(9, 15, size=2)
            yy, xx = np.ogrid[0:24, 0:24]
            bits = (yy - cy) ** 2 + (xx - cx) ** 2 <= 9
            values = pixels.copy()
            values[bits] = pixels[~bits].mean()
            tgt = target_centers(bits, 7)
            src = source_centers(bits, 7)

            _, dist = nnf_search(values, tgt, src, 7, 5,
                                 np.random.default_rng(trial))

            half = 3
            sources = np.argwhere(src)
            exact = []
            approx = []
            for ty, tx in np.argwhere(tgt):
                tpatch = values[ty - half:ty + half + 1,
                                tx - half:tx + half + 1]
                best = math.inf
                for sy, sx in sources:
                    d = float(np.sum(
                        (tpatch - values[sy - half:sy + half + 1,
                                         sx - half:sx + half + 1]) ** 2))
                    if d < best:
                        best = d
                exact.append(best)
                approx.append(dist[ty, tx])
            assert np.mean(approx) <= 1.05 * np.mean(exact) + 1e-12
        assert time.perf_counter() - t0 < 30.0


class TestTeleaFillOrder:
    @staticmethod
    def dijkstra(bits):
        h, w = bits.shape
        dist = np.where(bits, np.inf, 0.0)
        heap = [(0.0, y, x) for y in range(h) for x in range(w)
                if not bits[y, x]]
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
                        nd = d + (sqrt2 if dy and dx else 1.0)
                        if nd < dist[ny, nx]:
                            dist[ny, nx] = nd
                            heapq.heappush(heap, (nd, ny, nx))
        return dist

    def test_distances_within_half_pixel_of_dijkstra(self):
        rect = np.zeros((16, 16), dtype=bool)
        rect[4:12, 5:11] = True
        yy, xx = np.ogrid[0:16, 0:16]
        disk = (yy - 8) ** 2 + (xx - 7) ** 2 <= 16
        for bits in (rect, disk):
            dist, _ = march_distances(bits)
            ref = self.dijkstra(bits)
            assert np.max(np.abs(dist[bits] - ref[bits])) <= 0.5

    def test_single_pixel_hole_identity(self):
        pixels = np.full((16, 16), 0.41, dtype=np.float32)
        bits = np.zeros((16, 16), dtype=bool)
        bits[8, 8] = True
        out = inpaint_telea(as_frame(pixels), as_mask(bits))
        assert out.pixels[8, 8] == np.float32(0.41)
        assert np.array_equal(out.pixels, pixels)


class TestMetricCorrectness:
    def test_uniform_offset_psnr(self):
        truth = np.full((32, 32), 0.4)
        restored = truth + 0.1
        mask = np.ones((32, 32), dtype=bool)
        assert masked_psnr(restored, truth, mask) == pytest.approx(
            20.0, abs=1e-9)

    def test_self_ssim_is_one(self):
        rng = np.random.default_rng(21)
        x = rng.random((32, 32))
        assert masked_ssim(x, x, np.ones((32, 32), bool)) == 1.0

    def test_masked_equals_full_when_mask_covers_frame(self):
        rng = np.random.default_rng(22)
        x = rng.random((32, 32))
        y = np.clip(x + rng.normal(scale=0.05, size=(32, 32)), 0, 1)
        full = np.ones((32, 32), dtype=bool)
        mse = float(np.mean((x - y) ** 2))
        psnr_ref = 10.0 * math.log10(1.0 / mse)
        assert abs(masked_psnr(y, x, full) - psnr_ref) < 1e-12
        ssim_ref = float(np.mean(ssim_map(y, x)))
        assert abs(masked_ssim(y, x, full) - ssim_ref) < 1e-12

    def test_luminance_closed_form(self):
        a = np.full((16, 16), 0.5)
        b = np.full((16, 16), 0.6)
        mask = np.zeros((16, 16), dtype=bool)
        mask[4:12, 4:12] = True
        # constant inputs leave only the luminance term:
        # (2*0.5*0.6 + 1e-4) / (0.25 + 0.36 + 1e-4)
        assert masked_ssim(a, b, mask) == pytest.approx(0.98361, abs=1e-5)


class TestAutodiffSoundness:
    def test_every_op_passes_finite_differences(self):
        rng = np.random.default_rng(31)

        def t(*shape):
            return ad.Tensor(rng.standard_normal(shape) * 0.5,
                             requires_grad=True)

        x = t(2, 3, 6, 6)
        w = t(4, 3, 3, 3)
        b = t(4)
        v = t(2, 5)
        lw = t(7, 5)
        lb = t(7)
        e = t(2, 3)
        m2a = t(4, 5)
        m2b = t(5, 6)
        pa = t(2, 3, 4, 4)
        pb = t(2, 3, 4, 4)
        omega = np.zeros((4, 4), dtype=bool)
        omega[1:3, 1:3] = True

        checks = [
            ("add", lambda: ad.tsum(ad.add(pa, pb)), (pa, pb)),
            ("mul", lambda: ad.tsum(ad.mul(pa, pb)), (pa, pb)),
            ("scale", lambda: ad.tsum(ad.scale(pa, -1.7)), (pa,)),
            ("silu", lambda: ad.tsum(ad.silu(pa)), (pa,)),
            ("clamp01", lambda: ad.tsum(ad.clamp01(pa)), (pa,)),
            ("conv2d", lambda: ad.tsum(ad.conv2d(x, w, b)), (x, w, b)),
            ("conv2d_s2",
             lambda: ad.tsum(ad.conv2d(x, w, b, stride=2)), (x, w, b)),
            ("linear", lambda: ad.tsum(ad.linear(v, lw, lb)), (v, lw, lb)),
            ("add_chan", lambda: ad.tsum(ad.add_chan(x, e)), (x, e)),
            ("upsample", lambda: ad.tsum(ad.nearest_upsample2(x)), (x,)),
            ("reshape", lambda: ad.tsum(ad.reshape(x, (2, 108))), (x,)),
            ("matmul2d", lambda: ad.tsum(ad.matmul2d(m2a, m2b)), (m2a, m2b)),
            ("tsum", lambda: ad.tsum(pa), (pa,)),
            ("masked_mse", lambda: ad.masked_mse(pa, pb, omega), (pa, pb)),
        ]
        for name, fn, params in checks:
            err = ad.grad_check(fn, list(params))
            assert err < 1e-6, "%s: max rel err %.3g" % (name, err)

    def test_full_denoiser_loss_passes_finite_differences(self,
                                                          small_backbone):
        rng = np.random.default_rng(32)
        base = ToyDenoiser.from_weights(small_backbone)
        for i in range(4):
            for suffix in (".w", ".b"):
                key = "gate%d%s" % (i, suffix)
                base.params[key].data = rng.standard_normal(
                    base.params[key].data.shape) * 0.05
        model = attach_lora(base, seed=6)
        adapter = model.adapters["gate0.w"]
        adapter.B.data = rng.standard_normal(adapter.B.data.shape) * 0.05

        x = rng.standard_normal((1, 1, 8, 8))
        cond = rng.standard_normal((1, 1, 8, 8))
        mask = (rng.random((1, 1, 8, 8)) < 0.4).astype(np.float64)
        eps = rng.standard_normal((1, 1, 8, 8))
        omega = np.ones((8, 8), dtype=bool)
        tstep = np.array([37])

        def loss():
            return ad.masked_mse(model.forward(x, tstep, cond, mask),
                                 eps, omega)

        probes = [adapter.A, adapter.B, model.params["bb.head.b"],
                  model.params["gate2.b"]]
        # The composite loss routes thousands of flops into each output
        # pixel; h=1e-4 keeps finite-difference roundoff below the 1e-6
        # bar without noticeable truncation error at these magnitudes.
        err = ad.grad_check(loss, probes, h=1e-4)
        assert err < 1e-6


@pytest.fixture(scope="module")
def small_backbone():
    """A briefly pretrained 16x16 backbone shared by several classes."""
    crops = [make_texture_frame(16, 600 + i).pixels for i in range(32)]
    cfg = TrainConfig(regime=Regime.FullRetrain, total_steps=40,
                      warmup_steps=5, seed=11)
    weights, _ = pretrain_backbone(crops, 40, cfg)
    return weights


class TestAdapterMechanisms:
    @staticmethod
    def open_gates(weights, seed):
        """Copy of the checkpoint with the conditioning gates switched on."""
        rng = np.random.default_rng(seed)
        out = {k: v.copy() for k, v in weights.items()}
        for key in out:
            if key.startswith("gate"):
                out[key] = rng.standard_normal(out[key].shape) * 0.05
        return out

    def test_fresh_adapter_is_bitwise_identity(self, small_backbone):
        warm = self.open_gates(small_backbone, 40)
        bare = ToyDenoiser.from_weights(warm)
        adapted = attach_lora(ToyDenoiser.from_weights(warm), seed=1)
        rng = np.random.default_rng(41)
        x = rng.standard_normal((2, 1, 16, 16))
        cond = rng.standard_normal((2, 1, 16, 16))
        mask = (rng.random((2, 1, 16, 16)) < 0.4).astype(np.float64)
        t = np.array([3, 150])
        with ad.no_grad():
            a = bare.forward(x, t, cond, mask).data
            b = adapted.forward(x, t, cond, mask).data
        assert np.array_equal(a, b)

    def test_merge_matches_adapted_forward(self, small_backbone):
        adapted = attach_lora(
            ToyDenoiser.from_weights(self.open_gates(small_backbone, 42)),
            seed=2)
        rng = np.random.default_rng(43)
        for adapter in adapted.adapters.values():
            adapter.A.data = rng.standard_normal(adapter.A.data.shape) * 0.05
            adapter.B.data = rng.standard_normal(adapter.B.data.shape) * 0.05
        x = rng.standard_normal((2, 1, 16, 16))
        cond = rng.standard_normal((2, 1, 16, 16))
        mask = (rng.random((2, 1, 16, 16)) < 0.4).astype(np.float64)
        t = np.array([3, 150])
        with ad.no_grad():
            before = adapted.forward(x, t, cond, mask).data
            after = merge_lora(adapted).forward(x, t, cond, mask).data
        assert np.max(np.abs(before - after)) < 1e-9

    def test_backbone_frozen_under_adapter_training(self, small_backbone,
                                                    tmp_path):
        sources = [("s%02d" % i, make_texture_frame(16, 700 + i))
                   for i in range(6)]
        generate_pair_dataset(sources, tmp_path, seed=5, masks_per_frame=2)
        pairs = load_pairs(tmp_path)
        model = ToyDenoiser.from_weights(small_backbone)
        frozen = {k: v.copy() for k, v in model.weight_arrays().items()
                  if not k.startswith("gate")}
        cfg = TrainConfig(regime=Regime.LoraFinetune, total_steps=12,
                          warmup_steps=2, checkpoint_every=12, seed=6)
        finetune(model, pairs, config=cfg)
        moved = model.weight_arrays()
        for key, val in frozen.items():
            assert np.array_equal(moved[key], val), key

    def test_excluded_region_is_inert(self, small_backbone):
        model = attach_lora(
            ToyDenoiser.from_weights(self.open_gates(small_backbone, 44)),
            seed=3)
        rng = np.random.default_rng(45)
        x = rng.standard_normal((1, 1, 16, 16))
        cond = rng.standard_normal((1, 1, 16, 16))
        mbits = rng.random((16, 16)) < 0.4
        abits = rng.random((16, 16)) < 0.3
        assert (mbits & abits).any()
        omega = ~abits
        eps = rng.standard_normal((1, 1, 16, 16))
        eps_pert = eps.copy()
        eps_pert[0, 0][mbits & abits] += 50.0
        mask = mbits.astype(np.float64)[None, None]
        params = model.trainable_params() + [model.params["bb.head.b"]]

        def run(target):
            ad.zero_grad(params)
            pred = model.forward(x, np.array([90]), cond, mask)
            loss = ad.masked_mse(pred, target, omega)
            loss.backward()
            return float(loss.data), [p.grad.copy() for p in params]

        loss_a, grads_a = run(eps)
        loss_b, grads_b = run(eps_pert)
        assert loss_a == loss_b
        for ga, gb in zip(grads_a, grads_b):
            assert np.array_equal(ga, gb)


class TestFormatRoundtrips:
    def test_frame_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(51)
        pixels = rng.random((48, 32)).astype(np.float32)
        frame = ScanFrame(32, 48, Channel.Phase, 2.5, 80.0, pixels)
        path = tmp_path / "frame.spmf"
        save_spmf(frame, path)
        back = load_spmf(path)
        assert back.width == 32 and back.height == 48
        assert back.channel is Channel.Phase
        assert back.scan_size == 2.5
        assert back.z_scale == 80.0
        assert np.array_equal(
            back.pixels.view(np.uint32), pixels.view(np.uint32))
        save_spmf(back, tmp_path / "again.spmf")
        assert (tmp_path / "again.spmf").read_bytes() == path.read_bytes()

    def test_mask_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(52)
        bits = rng.random((24, 40)) < 0.3
        path = tmp_path / "mask.pgm"
        save_pgm(as_mask(bits), path)
        back = load_pgm(path)
        assert np.array_equal(back.bits, bits)
        save_pgm(back, tmp_path / "again.pgm")
        assert (tmp_path / "again.pgm").read_bytes() == path.read_bytes()

    def test_duplicate_manifest_id_rejected(self, tmp_path):
        frame = make_texture_frame(16, 53)
        entries = generate_pair_dataset([("dup", frame)], tmp_path, seed=1,
                                        masks_per_frame=1)
        path = tmp_path / "twin.jsonl"
        write_manifest(path, entries + entries)
        with pytest.raises(DuplicateIdError):
            read_manifest(path)


class TestBenchmarkDeterminism:
    def test_twenty_images_six_methods_twice(self, tmp_path):
        data = tmp_path / "ds"
        sources = [("img%02d" % i, make_texture_frame(24, 1200 + i))
                   for i in range(20)]
        generate_pair_dataset(sources, data, seed=13, masks_per_frame=1,
                              bench_fraction=1.0)
        crops = [make_texture_frame(24, 1300 + i).pixels for i in range(40)]
        cfg = TrainConfig(regime=Regime.FullRetrain, total_steps=60,
                          warmup_steps=10, seed=14)
        weights, _ = pretrain_backbone(crops, 60, cfg)
        ckpt = tmp_path / "bb.spmw"
        ad.save_weights(ckpt, weights)

        csvs = []
        for run in range(2):
            out = tmp_path / ("run%d.csv" % run)
            proc = subprocess.run(
                [sys.executable, "-m", "spmtk.cli", "bench",
                 "--manifest", str(data / "manifest.jsonl"),
                 "--methods",
                 "biharmonic,ns,telea,patchmatch,surface,diffusion",
                 "--checkpoint", str(ckpt), "--stride", "50",
                 "--out", str(out), "--seed", "0"],
                capture_output=True, text=True)
            assert proc.returncode == 0, proc.stderr
            csvs.append(out.read_text())

        assert strip_timing(csvs[0]) == strip_timing(csvs[1])
        lines = csvs[0].splitlines()
        records = [ln for ln in lines[1:] if ln.split(",")[1] != "mean"]
        assert len(records) == 120
        assert len(lines) == 1 + 120 + 6


POOL_SEEDS = (1, 2, 3)


@pytest.fixture(scope="module")
def finetune_story(tmp_path_factory):
    """Pretrain once on one texture family, then adapt per seed to another.

    The corpus/pair-domain split (bump and terrace fields vs stripe
    patterns) mirrors the intended deployment: a generic backbone adapted
    to scan data it never saw.  Returns per-seed records and the total
    wall time.
    """
    t_start = time.perf_counter()
    root = tmp_path_factory.mktemp("story")
    crops = [f.pixels
             for f in make_texture_corpus(200, 64, 100,
                                          kinds=("bumps", "terraces"))]
    assert len(crops) >= 200
    sources = [("frm%03d" % i, make_texture_frame(64, 5000 + i,
                                                  kind="stripes"))
               for i in range(12)]
    generate_pair_dataset(sources, root, seed=42)
    pairs = load_pairs(root)
    assert len(pairs) >= 100
    heldout = pairs[::5]

    # The default full-retrain rate sits on the edge of divergence for
    # single-sample steps on these textures; halving it keeps the 2000-step
    # pretrain loss descending instead of blowing up mid-run.
    pcfg = TrainConfig(regime=Regime.FullRetrain, total_steps=2000,
                       warmup_steps=200, seed=0, lr=7.5e-4)
    weights, _ = pretrain_backbone(crops, 2000, pcfg)

    schedule = NoiseSchedule()
    records = []
    for seed in POOL_SEEDS:
        zero_shot, _ = _heldout_eval(ToyDenoiser.from_weights(weights),
                                     heldout, schedule, 20, seed)
        cfg = TrainConfig(regime=Regime.LoraFinetune, total_steps=3000,
                          warmup_steps=150, checkpoint_every=500, seed=seed)
        result = finetune(ToyDenoiser.from_weights(weights), pairs,
                          config=cfg)
        records.append((seed, zero_shot, result.best_psnr, result.best_step))
    return records, time.perf_counter() - t_start


class TestRestorationImprovement:
    def test_adapted_model_beats_zero_shot_every_seed(self, finetune_story):
        records, _ = finetune_story
        for seed, zero_shot, best, step in records:
            gain = best - zero_shot
            assert gain >= 1.0, (
                "seed %d: %.2f dB -> %.2f dB (best step %d), gain %.2f"
                % (seed, zero_shot, best, step, gain))

    def test_pipeline_fits_cpu_budget(self, finetune_story):
        _, elapsed = finetune_story
        assert elapsed <= 60 * 60


@pytest.fixture(scope="module")
def overfit_story(tmp_path_factory):
    """Both regimes trained well past their best step on 32 pairs."""
    root = tmp_path_factory.mktemp("overfit")
    sources = [("ov%02d" % i, make_texture_frame(32, 8000 + i,
                                                 kind="stripes"))
               for i in range(8)]
    generate_pair_dataset(sources, root, seed=77, masks_per_frame=4)
    pairs = load_pairs(root)
    assert len(pairs) == 32

    crops = [f.pixels
             for f in make_texture_corpus(80, 32, 8100,
                                          kinds=("bumps", "terraces"))]
    pcfg = TrainConfig(regime=Regime.FullRetrain, total_steps=500,
                       warmup_steps=50, seed=70, lr=7.5e-4)
    weights, _ = pretrain_backbone(crops, 500, pcfg)

    total = 1500
    out = {}
    for regime in (Regime.FullRetrain, Regime.LoraFinetune):
        rows = []
        for seed in POOL_SEEDS:
            cfg = TrainConfig(regime=regime, total_steps=total,
                              warmup_steps=50, checkpoint_every=100,
                              seed=seed)
            res = finetune(ToyDenoiser.from_weights(weights), pairs,
                           config=cfg)
            late = res.log[-1].heldout_psnr
            rows.append((seed, res.best_step, res.best_psnr, late))
        out[regime] = rows
    return out, total


class TestOverfittingDirection:
    def test_full_retrain_peaks_early_then_declines(self, overfit_story):
        rows, total = overfit_story
        for seed, best_step, best, late in rows[Regime.FullRetrain]:
            assert best >= late, (
                "seed %d: peak %.2f dB below late %.2f dB"
                % (seed, best, late))
            assert best_step + 1 <= total // 5, (
                "seed %d: peak at step %d, past the first fifth"
                % (seed, best_step))

    def test_adapter_degrades_no_more_than_full_retrain(self, overfit_story):
        rows, _ = overfit_story
        full_deg = np.mean([best - late for _, _, best, late
                            in rows[Regime.FullRetrain]])
        lora_deg = np.mean([best - late for _, _, best, late
                            in rows[Regime.LoraFinetune]])
        assert lora_deg <= full_deg + 1e-9
