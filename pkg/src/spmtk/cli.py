"""Command-line front end.

Every subcommand is a thin wrapper over one library operation; all policy
lives in the modules, the CLI only parses flags and moves files.  Exit codes:
0 on success, 1 on a domain error (bad data, failed operation), 2 on a usage
error (argparse prints the synopsis to stderr).

The environment variable SPM_DATA_DIR supplies the default dataset root for
subcommands that take one; an explicit flag always wins.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .artefacts import (
    ARTEFACT_CLASSES,
    _random_artefact,
    generate_pair_dataset,
    save_pgm,
    save_spmf,
)
from .bench import DIFFUSION_TAG, load_diffusion_model, run_benchmark
from .diffusion import (
    NoiseSchedule,
    Regime,
    ToyDenoiser,
    TrainConfig,
    finetune,
    pretrain_backbone,
    sample_inpaint,
)
from .diffusion.train import load_pairs, write_training_log
from .errors import SpmError
from .imageio import load_pgm, load_spmf
from .inpaint import InpaintMethod, InpaintParams, inpaint
from .masks import detect_line_dropout_rows, phase_threshold_mask, physics_filter
from .review import export_reviewed
from .server import serve_review
from .stats import p_value_from_effect, paired_ttest
from .textures import make_texture_corpus

METHOD_CHOICES = tuple(m.value for m in InpaintMethod) + (DIFFUSION_TAG,)


def _data_dir(args) -> Path:
    """Dataset root from --data, falling back to SPM_DATA_DIR."""
    if getattr(args, "data", None):
        return Path(args.data)
    env = os.environ.get("SPM_DATA_DIR")
    if env:
        return Path(env)
    raise UsageError("no dataset directory: pass --data or set SPM_DATA_DIR")


class UsageError(Exception):
    pass


def _load_mask(path):
    return load_pgm(Path(path))


def _load_frame(path):
    return load_spmf(Path(path))


# ---------------------------------------------------------------- commands

def cmd_simulate(args):
    frame = _load_frame(args.infile)
    rng = np.random.default_rng(args.seed)
    corrupted, mask = _random_artefact(frame, args.artefact_class, rng)
    save_spmf(corrupted, Path(args.out))
    if args.mask_out:
        save_pgm(mask, Path(args.mask_out))
    print("wrote %s (%s, %d masked px)"
          % (args.out, args.artefact_class, mask.count))
    return 0


def cmd_gen_dataset(args):
    data = _data_dir(args)
    if args.export_reviewed:
        kept = export_reviewed(data, Path(args.export_reviewed))
        print("exported %d entries to %s" % (len(kept), args.export_reviewed))
        return 0
    if args.sources:
        src_dir = Path(args.sources)
        paths = sorted(src_dir.glob("*.spmf"))
        if not paths:
            raise SpmError("no .spmf frames under %s" % src_dir)
        sources = [(p.stem, load_spmf(p)) for p in paths]
    elif args.synthetic:
        frames = make_texture_corpus(args.synthetic, args.size, args.seed)
        sources = [("tex%03d" % i, f) for i, f in enumerate(frames)]
    else:
        raise UsageError("gen-dataset needs --sources or --synthetic "
                         "(or --export-reviewed)")
    classes = tuple(args.classes.split(",")) if args.classes else ARTEFACT_CLASSES
    for cls in classes:
        if cls not in ARTEFACT_CLASSES:
            raise UsageError("unknown artefact class %r (choose from %s)"
                             % (cls, ", ".join(ARTEFACT_CLASSES)))
    entries = generate_pair_dataset(
        sources, data, seed=args.seed, masks_per_frame=args.masks_per_frame,
        bench_fraction=args.bench_fraction, classes=classes)
    print("wrote %d pairs under %s" % (len(entries), data))
    return 0


def cmd_mask_phase(args):
    frame = _load_frame(args.infile)
    mask = phase_threshold_mask(frame, args.lo, args.hi)
    save_pgm(mask, Path(args.out))
    print("wrote %s (%d px)" % (args.out, mask.count))
    return 0


def cmd_mask_lines(args):
    frame = _load_frame(args.infile)
    mask = detect_line_dropout_rows(frame, z_thresh=args.z_thresh,
                                    window=args.window)
    save_pgm(mask, Path(args.out))
    rows = int(mask.bits.any(axis=1).sum())
    print("wrote %s (%d rows, %d px)" % (args.out, rows, mask.count))
    return 0


def cmd_mask_filter(args):
    mask = _load_mask(args.mask)
    height = _load_frame(args.height)
    verdict = physics_filter(mask, height, delta_h_nm=args.delta_h)
    print(verdict.value)
    return 0


def cmd_inpaint(args):
    frame = _load_frame(args.infile)
    mask = _load_mask(args.mask)
    if args.method == DIFFUSION_TAG:
        if not args.checkpoint:
            raise UsageError("--method diffusion requires --checkpoint")
        model = load_diffusion_model(Path(args.checkpoint))
        out = sample_inpaint(model, frame, mask, NoiseSchedule(),
                             seed=args.seed, stride=args.stride)
    else:
        params = InpaintParams(method=InpaintMethod(args.method),
                               seed=args.seed)
        out = inpaint(frame, mask, params)
    save_spmf(out, Path(args.out))
    print("wrote %s" % args.out)
    return 0


def cmd_pretrain(args):
    data = _data_dir(args)
    pairs = load_pairs(data, split="train")
    crops = [p.clean for p in pairs]
    config = TrainConfig(regime=Regime.FullRetrain, lr=args.lr,
                         warmup_steps=args.warmup, total_steps=args.steps,
                         checkpoint_every=max(args.steps, 1), seed=args.seed)
    weights, log = pretrain_backbone(crops, args.steps, config)
    ad.save_weights(Path(args.out), weights)
    if args.log:
        write_training_log(Path(args.log), log)
    print("pretrained %d steps on %d crops -> %s (final loss %.4f)"
          % (args.steps, len(crops), args.out, log[-1].train_loss))
    return 0


def cmd_finetune(args):
    data = _data_dir(args)
    named = ad.load_weights(str(args.backbone))
    model = ToyDenoiser.from_weights(
        {k: v for k, v in named.items() if not k.startswith("lora.")})
    pairs = load_pairs(data, split="train")
    config = TrainConfig(regime=Regime(args.regime), lr=args.lr,
                         warmup_steps=args.warmup, total_steps=args.steps,
                         checkpoint_every=args.checkpoint_every,
                         seed=args.seed)
    result = finetune(model, pairs, config=config)
    ad.save_weights(Path(args.out), result.best_weights)
    if args.log:
        write_training_log(Path(args.log), result.log)
    print("finetuned %d steps on %d pairs -> %s "
          "(best step %d, heldout %.2f dB)"
          % (args.steps, len(pairs), args.out,
             result.best_step, result.best_psnr))
    return 0


def cmd_sample(args):
    model = load_diffusion_model(Path(args.checkpoint))
    frame = _load_frame(args.infile)
    mask = _load_mask(args.mask)
    out = sample_inpaint(model, frame, mask, NoiseSchedule(),
                         seed=args.seed, stride=args.stride)
    save_spmf(out, Path(args.out))
    print("wrote %s" % args.out)
    return 0


def cmd_bench(args):
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    checkpoint = Path(args.checkpoint) if args.checkpoint else None
    result = run_benchmark(Path(args.manifest), methods,
                           out_csv=Path(args.out) if args.out else None,
                           parallelism=args.parallelism, seed=args.seed,
                           checkpoint=checkpoint, sample_stride=args.stride)
    failed = sum(1 for r in result.records if r.failed)
    for row in result.summaries:
        psnr = "%.2f" % row.psnr_db if row.psnr_db is not None else "-"
        print("%-12s mean psnr %s dB" % (row.method, psnr))
    print("%d records (%d failed)" % (len(result.records), failed))
    return 0


def cmd_stats_effect(args):
    print("%.6g" % p_value_from_effect(args.d, args.n))
    return 0


def _read_floats(path):
    vals = []
    for line in Path(path).read_text().split():
        vals.append(float(line))
    return vals


def cmd_stats_paired(args):
    res = paired_ttest(_read_floats(args.a), _read_floats(args.b))
    print("n=%d mean_diff=%.6g d=%.6g t=%.6g p=%.6g"
          % (res.n, res.mean_diff, res.cohens_d, res.t_statistic,
             res.p_two_sided))
    return 0


def cmd_serve_review(args):
    data = _data_dir(args)
    static = Path(args.static) if args.static else None
    serve_review(data, args.port, static_dir=static)
    return 0


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="spm", description="SPM image restoration toolkit")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="corrupt a clean frame with one artefact")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--class", dest="artefact_class", required=True,
                   choices=ARTEFACT_CLASSES)
    p.add_argument("--out", required=True)
    p.add_argument("--mask-out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("gen-dataset",
                       help="build a corrupted/clean pair dataset")
    p.add_argument("--data", help="dataset root (default $SPM_DATA_DIR)")
    p.add_argument("--sources", help="directory of clean .spmf frames")
    p.add_argument("--synthetic", type=int,
                   help="generate N synthetic texture frames instead")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--masks-per-frame", type=int)
    p.add_argument("--bench-fraction", type=float, default=0.0)
    p.add_argument("--classes", help="comma list of artefact classes")
    p.add_argument("--export-reviewed", metavar="OUT_MANIFEST",
                   help="instead of generating, export non-rejected entries")
    p.set_defaults(fn=cmd_gen_dataset)

    p = sub.add_parser("mask", help="mask generation and filtering")
    msub = p.add_subparsers(dest="mask_command", required=True)
    m = msub.add_parser("phase", help="threshold a phase channel")
    m.add_argument("--in", dest="infile", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--lo", type=float, default=85.0)
    m.add_argument("--hi", type=float, default=90.0)
    m.set_defaults(fn=cmd_mask_phase)
    m = msub.add_parser("lines", help="detect dropout rows")
    m.add_argument("--in", dest="infile", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--z-thresh", type=float, default=3.5)
    m.add_argument("--window", type=int, default=4)
    m.set_defaults(fn=cmd_mask_lines)
    m = msub.add_parser("filter", help="physics plausibility verdict")
    m.add_argument("--mask", required=True)
    m.add_argument("--height", required=True)
    m.add_argument("--delta-h", type=float, default=0.2)
    m.set_defaults(fn=cmd_mask_filter)

    p = sub.add_parser("inpaint", help="restore masked pixels")
    p.add_argument("--method", required=True, choices=METHOD_CHOICES)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", help="weights for --method diffusion")
    p.add_argument("--stride", type=int, default=20)
    p.set_defaults(fn=cmd_inpaint)

    p = sub.add_parser("pretrain", help="train the denoiser backbone")
    p.add_argument("--data", help="dataset root (default $SPM_DATA_DIR)")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--warmup", type=int, default=100)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", help="write the loss curve CSV here")
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("finetune", help="adapt a backbone to artefact pairs")
    p.add_argument("--data", help="dataset root (default $SPM_DATA_DIR)")
    p.add_argument("--backbone", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--regime", choices=[r.value for r in Regime],
                   default=Regime.LoraFinetune.value)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--warmup", type=int, default=100)
    p.add_argument("--checkpoint-every", type=int, default=250)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", help="write the score trace CSV here")
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("sample", help="diffusion-inpaint one frame")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stride", type=int, default=20)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("bench", help="score methods over the bench split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--methods", required=True,
                   help="comma list, e.g. biharmonic,telea,diffusion")
    p.add_argument("--out", help="CSV path")
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", help="weights for the diffusion method")
    p.add_argument("--stride", type=int, default=20)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("stats", help="statistical helpers")
    ssub = p.add_subparsers(dest="stats_command", required=True)
    s = ssub.add_parser("effect", help="two-sided p from Cohen's d and n")
    s.add_argument("--d", type=float, required=True)
    s.add_argument("--n", type=int, required=True)
    s.set_defaults(fn=cmd_stats_effect)
    s = ssub.add_parser("paired", help="paired t-test on two value files")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.set_defaults(fn=cmd_stats_paired)

    p = sub.add_parser("serve-review", help="run the mask review service")
    p.add_argument("--data", help="dataset root (default $SPM_DATA_DIR)")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--static", help="UI bundle directory")
    p.set_defaults(fn=cmd_serve_review)

    return top


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print("spm: error: %s" % err, file=sys.stderr)
        return 2
    except SpmError as err:
        print("spm: %s: %s" % (type(err).__name__, err), file=sys.stderr)
        return 1
    except OSError as err:
        print("spm: %s" % err, file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
