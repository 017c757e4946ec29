"""Command-line frontend.

Subcommands: noise, avg, psnr, denoise, train, bench, montage. Exit codes:
0 success, 1 processing error (message on stderr), 2 usage error.

Set DENOISE_THREADS to cap BLAS worker threads (0/unset = library default);
it must be honored before numpy loads, so it is applied at import time.
"""

import argparse
import os
import sys

_threads = os.environ.get("DENOISE_THREADS", "")
if _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

from . import bench as bench_mod
from .classical import NlmParams, TvParams, nlm_denoise, tv_denoise
from .image import Roi, load_image, save_image
from .network import UNetConfig, UNetModel, denoise_cnn, load_weights, save_weights
from .noise import NoiseParams, average_stack, corrupt, format_psnr, psnr
from .training import PhantomSpec, TrainConfig, make_phantoms, train, train_supervised


def _add_noise_flags(sub):
    sub.add_argument("--peak", type=float, default=200.0,
                     help="expected photons at full scale (default 200)")
    sub.add_argument("--sigma", type=float, default=0.02,
                     help="Gaussian read-noise std in normalized units (default 0.02)")
    sub.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")


def _parse_roi(text):
    try:
        x0, y0, w, h = (int(v) for v in text.split(","))
        return Roi(x0, y0, w, h)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("roi must be x0,y0,width,height: %s" % exc)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="denoiselab",
        description="Poisson-Gaussian denoising toolkit: noise synthesis, "
                    "classical and CNN denoisers, benchmark reports.")
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("noise", help="corrupt an image with Poisson-Gaussian noise")
    sub.add_argument("input")
    sub.add_argument("output")
    _add_noise_flags(sub)

    sub = subs.add_parser("avg", help="pixel-wise average of input frames")
    sub.add_argument("inputs", nargs="+")
    sub.add_argument("-o", "--out", required=True)
    sub.add_argument("-n", type=int, default=None, help="use only the first N frames")

    sub = subs.add_parser("psnr", help="PSNR of a test image against a reference")
    sub.add_argument("reference")
    sub.add_argument("test")

    sub = subs.add_parser("denoise", help="run one denoiser on an image")
    sub.add_argument("--method", choices=("tv", "nlm", "cnn"), required=True)
    sub.add_argument("--weights", help="checkpoint for --method cnn")
    sub.add_argument("--tv-lambda", type=float, default=bench_mod.DEFAULT_TV.lam)
    sub.add_argument("--tv-iters", type=int, default=bench_mod.DEFAULT_TV.max_iters)
    sub.add_argument("--nlm-h", type=float, default=bench_mod.DEFAULT_NLM.h)
    sub.add_argument("--nlm-patch", type=int, default=bench_mod.DEFAULT_NLM.patch_radius)
    sub.add_argument("--nlm-search", type=int, default=bench_mod.DEFAULT_NLM.search_radius)
    sub.add_argument("input")
    sub.add_argument("output")

    sub = subs.add_parser("train", help="train the denoising network on phantoms")
    sub.add_argument("--out", required=True, help="checkpoint output path (.n2nw)")
    sub.add_argument("--channels", type=int, choices=(1, 3), default=1)
    sub.add_argument("--depth", type=int, default=2)
    sub.add_argument("--base-channels", type=int, default=16)
    sub.add_argument("--phantoms", type=int, default=12, help="corpus size (default 12)")
    sub.add_argument("--phantom-size", type=int, default=128)
    sub.add_argument("--steps", type=int, default=2000)
    sub.add_argument("--lr", type=float, default=1e-3)
    sub.add_argument("--batch-size", type=int, default=8)
    sub.add_argument("--patch-size", type=int, default=64)
    sub.add_argument("--eval-every", type=int, default=250)
    sub.add_argument("--supervised", action="store_true",
                     help="use clean targets instead of a second noisy frame")
    sub.add_argument("--trace", help="write the training trace CSV here")
    _add_noise_flags(sub)

    sub = subs.add_parser("bench", help="Table-style method comparison on a corpus")
    sub.add_argument("corpus", nargs="?", help="directory of clean images")
    sub.add_argument("--synthetic", action="store_true",
                     help="use the built-in phantom corpus (2 gray + 2 color, 256x256)")
    sub.add_argument("--size", type=int, default=256, help="synthetic sample size")
    sub.add_argument("--methods", default=None,
                     help="comma list from: %s" % ",".join(bench_mod.ALL_METHODS))
    sub.add_argument("--weights", action="append", default=[],
                     help="cnn checkpoint(s); repeat for gray and color models")
    sub.add_argument("--out-dir", default="bench_out")
    sub.add_argument("--roi", type=_parse_roi, default=None,
                     help="montage region of interest as x0,y0,width,height")
    sub.add_argument("--tv-lambda", type=float, default=bench_mod.DEFAULT_TV.lam)
    sub.add_argument("--nlm-h", type=float, default=bench_mod.DEFAULT_NLM.h)
    _add_noise_flags(sub)

    sub = subs.add_parser("montage", help="write [noisy|denoised|target] strips")
    sub.add_argument("noisy")
    sub.add_argument("denoised")
    sub.add_argument("target")
    sub.add_argument("--roi", type=_parse_roi, required=True)
    sub.add_argument("--out-prefix", required=True)

    return parser


def _cmd_noise(args):
    img = load_image(args.input)
    save_image(corrupt(img, NoiseParams(args.peak, args.sigma, args.seed)), args.output)
    return 0


def _cmd_avg(args):
    imgs = [load_image(p) for p in args.inputs]
    save_image(average_stack(imgs, args.n), args.out)
    return 0


def _cmd_psnr(args):
    value = psnr(load_image(args.reference), load_image(args.test))
    print(format_psnr(value))
    return 0


def _cmd_denoise(args):
    img = load_image(args.input)
    if args.method == "tv":
        op = lambda: tv_denoise(img, TvParams(args.tv_lambda, args.tv_iters))
    elif args.method == "nlm":
        op = lambda: nlm_denoise(img, NlmParams(args.nlm_h, args.nlm_patch,
                                                args.nlm_search))
    else:
        if not args.weights:
            raise ValueError("--method cnn requires --weights")
        model = load_weights(args.weights)
        op = lambda: denoise_cnn(img, model)
    out, ms = bench_mod.time_call(op)
    save_image(out, args.output)
    print("time_ms=%d" % ms)
    return 0


def _cmd_train(args):
    config = UNetConfig(in_channels=args.channels, depth=args.depth,
                        base_channels=args.base_channels)
    spec = PhantomSpec(count=args.phantoms, size=args.phantom_size,
                       channels=args.channels, seed=args.seed)
    corpus = make_phantoms(spec)
    cfg = TrainConfig(noise=NoiseParams(args.peak, args.sigma, args.seed),
                      lr=args.lr, batch_size=args.batch_size,
                      patch_size=args.patch_size, steps=args.steps,
                      seed=args.seed, eval_every=args.eval_every)
    model = UNetModel.initialize(config, seed=args.seed)
    runner = train_supervised if args.supervised else train
    model, trace = runner(model, corpus, cfg)
    save_weights(model, args.out)
    if args.trace:
        trace.to_csv(args.trace)
    for step, loss, p in trace.records:
        print("step=%d train_loss=%.6f eval_psnr_db=%.4f" % (step, loss, p))
    return 0


def _cmd_bench(args):
    if args.synthetic == bool(args.corpus):
        raise ValueError("give either a corpus directory or --synthetic")
    if args.synthetic:
        samples = bench_mod.synthetic_corpus(args.seed, size=args.size)
    else:
        names = sorted(f for f in os.listdir(args.corpus)
                       if f.endswith((".pgm", ".ppm", ".pnm", ".rt")))
        if not names:
            raise ValueError("no images found in %r" % args.corpus)
        samples = [load_image(os.path.join(args.corpus, f)) for f in names]
    models = {}
    for path in args.weights:
        model = load_weights(path)
        models[model.config.in_channels] = model
    if args.methods is not None:
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    else:
        methods = [m for m in bench_mod.ALL_METHODS if m != "cnn" or models]
    os.makedirs(args.out_dir, exist_ok=True)
    report = bench_mod.run_bench(
        samples, NoiseParams(args.peak, args.sigma, args.seed),
        methods=methods, out_dir=args.out_dir, models=models,
        tv_params=TvParams(args.tv_lambda), nlm_params=NlmParams(args.nlm_h),
        roi=args.roi)
    for row in report.rows:
        print("%s %s psnr_db=%s time_ms=%d"
              % (row.sample, row.method, format_psnr(row.psnr_db), row.time_ms))
    print("wrote %s" % os.path.join(args.out_dir, "report.csv"))
    return 0


def _cmd_montage(args):
    paths = bench_mod.montage(load_image(args.noisy), load_image(args.denoised),
                              load_image(args.target), args.roi, args.out_prefix)
    for p in paths:
        print("wrote %s" % p)
    return 0


_COMMANDS = {"noise": _cmd_noise, "avg": _cmd_avg, "psnr": _cmd_psnr,
             "denoise": _cmd_denoise, "train": _cmd_train,
             "bench": _cmd_bench, "montage": _cmd_montage}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError, RuntimeError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
