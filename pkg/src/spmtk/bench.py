"""Batch evaluation of restoration methods over a dataset's bench split.

Every requested method runs on every bench-split pair and is scored inside
the pair's mask (restricted to the kept region when the pair carries an
exclusion file).  Rows land in a CSV with a fixed column order; per-method
mean rows follow the per-image rows.  Everything except the timing column
is a pure function of (manifest, methods, seed), so two runs of the same
benchmark produce byte-identical CSVs once timings are masked out.
"""

from __future__ import annotations

import csv
import io
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .diffusion import (
    NoiseSchedule,
    ToyDenoiser,
    attach_lora,
    merge_lora,
    sample_inpaint,
)
from .errors import ManifestInvalidError, SpmError
from .imageio import load_pgm, load_spmf, read_manifest
from .inpaint import InpaintMethod, InpaintParams, inpaint
from .metrics import masked_mse_metric, masked_psnr, masked_ssim

DIFFUSION_TAG = "diffusion"
CSV_COLUMNS = ("method", "image_id", "psnr_db", "mse", "ssim", "lpips",
               "masked_pixels", "wall_ms")
SUMMARY_ID = "mean"


@dataclass
class BenchRecord:
    """One scored (method, image) evaluation."""

    method: str
    image_id: str
    psnr_db: float | None
    mse: float | None
    ssim: float | None
    masked_pixels: int
    wall_ms: float
    error: str | None = None

    @property
    def failed(self):
        return self.error is not None


@dataclass
class BenchResult:
    records: list
    summaries: list

    def rows(self):
        return self.records + self.summaries


def _fmt(value):
    return "" if value is None else "%.10g" % value


def write_bench_csv(path, result):
    """Write per-image rows then summary rows with the fixed column order."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(CSV_COLUMNS)
        for r in result.rows():
            out.writerow([r.method, r.image_id, _fmt(r.psnr_db), _fmt(r.mse),
                          _fmt(r.ssim), "", _fmt(r.masked_pixels),
                          _fmt(r.wall_ms)])


def strip_timing(csv_text):
    """Drop the wall_ms column so run-to-run output can be compared."""
    rows = list(csv.reader(io.StringIO(csv_text)))
    buf = io.StringIO()
    out = csv.writer(buf)
    for row in rows:
        out.writerow(row[:-1])
    return buf.getvalue()


def load_diffusion_model(checkpoint):
    """Rebuild a sampler-ready model from a weight container file.

    Adapter entries (lora.<target>.A/B) are folded into the base weights so
    callers always get a plain model.
    """
    named = ad.load_weights(str(checkpoint))
    base = {k: v for k, v in named.items() if not k.startswith("lora.")}
    model = ToyDenoiser.from_weights(base)
    targets = sorted({k.split(".", 1)[1].rsplit(".", 1)[0]
                      for k in named if k.startswith("lora.")})
    if targets:
        rank = int(np.asarray(named["lora.%s.A" % targets[0]]).shape[0])
        adapted = attach_lora(model, targets=tuple(targets), r=rank,
                              alpha=rank, seed=0)
        for tgt, adapter in adapted.adapters.items():
            adapter.A.data = np.asarray(named["lora.%s.A" % tgt], np.float64)
            adapter.B.data = np.asarray(named["lora.%s.B" % tgt], np.float64)
        model = merge_lora(adapted)
    return model


def _row_seed(seed, image_id, method_index):
    mix = np.random.SeedSequence(
        [seed, zlib.crc32(image_id.encode("utf-8")), method_index])
    return int(np.random.default_rng(mix).integers(2 ** 31))


def _score_one(method, method_index, entry, base_dir, seed, model, schedule,
               sample_stride):
    clean = load_spmf(base_dir / entry.clean_path)
    corrupted = load_spmf(base_dir / entry.artefact_path)
    mask = load_pgm(base_dir / entry.mask_path)
    score_bits = mask.bits
    if entry.ignore_path:
        score_bits = score_bits & load_pgm(base_dir / entry.ignore_path).bits
    n_masked = int(np.count_nonzero(mask.bits))
    row_seed = _row_seed(seed, entry.id, method_index)
    start = time.perf_counter()
    try:
        if method == DIFFUSION_TAG:
            restored = sample_inpaint(model, corrupted, mask, schedule,
                                      seed=row_seed, stride=sample_stride)
        else:
            params = InpaintParams(method=InpaintMethod(method), seed=row_seed)
            restored = inpaint(corrupted, mask, params)
    except SpmError as exc:
        wall = (time.perf_counter() - start) * 1000.0
        return BenchRecord(method=method, image_id=entry.id, psnr_db=None,
                           mse=None, ssim=None, masked_pixels=n_masked,
                           wall_ms=wall, error="%s: %s" % (type(exc).__name__,
                                                           exc))
    wall = (time.perf_counter() - start) * 1000.0
    return BenchRecord(
        method=method, image_id=entry.id,
        psnr_db=masked_psnr(restored.pixels, clean.pixels, score_bits),
        mse=masked_mse_metric(restored.pixels, clean.pixels, score_bits),
        ssim=masked_ssim(restored.pixels, clean.pixels, score_bits),
        masked_pixels=n_masked, wall_ms=wall)


def _summarize(method, records):
    scored = [r for r in records if not r.failed]

    def mean(vals):
        return float(np.mean(vals)) if vals else None

    return BenchRecord(
        method=method, image_id=SUMMARY_ID,
        psnr_db=mean([r.psnr_db for r in scored]),
        mse=mean([r.mse for r in scored]),
        ssim=mean([r.ssim for r in scored]),
        masked_pixels=int(round(np.mean([r.masked_pixels for r in records]))),
        wall_ms=float(np.mean([r.wall_ms for r in records])))


def run_benchmark(manifest, methods, out_csv=None, parallelism=1, *,
                  seed=0, checkpoint=None, sample_stride=20, schedule=None):
    """Score each method over the manifest's bench split.

    manifest: path to a manifest.jsonl whose relative paths resolve against
    its own directory.  methods: nonempty list of method tags (the five
    baseline tags plus "diffusion", which needs `checkpoint`).  Returns a
    BenchResult; also writes the CSV when out_csv is given.
    """
    methods = list(methods)
    if not methods:
        raise ValueError("methods must be nonempty")
    for tag in methods:
        if tag != DIFFUSION_TAG:
            InpaintMethod(tag)
    if DIFFUSION_TAG in methods and checkpoint is None:
        raise ValueError("the diffusion method needs a checkpoint file")

    manifest = Path(manifest)
    try:
        entries = read_manifest(manifest, validate=True)
    except SpmError as exc:
        raise ManifestInvalidError(str(exc)) from exc
    bench_entries = [e for e in entries if e.split == "bench"]
    base_dir = manifest.parent

    model = None
    schedule = schedule or NoiseSchedule()
    if DIFFUSION_TAG in methods:
        model = load_diffusion_model(checkpoint)

    records = []
    summaries = []
    for mi, method in enumerate(methods):
        def task(entry, mi=mi, method=method):
            return _score_one(method, mi, entry, base_dir, seed, model,
                              schedule, sample_stride)

        if parallelism > 1 and len(bench_entries) > 1:
            with ThreadPoolExecutor(max_workers=parallelism) as pool:
                method_records = list(pool.map(task, bench_entries))
        else:
            method_records = [task(e) for e in bench_entries]
        records.extend(method_records)
        if method_records:
            summaries.append(_summarize(method, method_records))

    result = BenchResult(records=records, summaries=summaries)
    if out_csv is not None:
        write_bench_csv(out_csv, result)
    return result
