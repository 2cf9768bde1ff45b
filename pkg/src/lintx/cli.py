"""``lintx`` command line: stylize, stylize-video, train-decoder, train-transform, verify, bench.

Exit codes: 0 success, 1 verification or training failure, 2 usage error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import os
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import data, model
from .imageio import ImageFormatError, read_image, read_mask_values, write_image
from .pipeline import KINDS, Networks, Stylizer, shared_masks
from .stats import FeatureMap
from .train import LossConfig, TrainConfig, TrainingError, pretrain_decoder, reconstruction_mse, train_transform
from .weights import WeightFormatError, load_weights, save_weights

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("lintx")


class UsageError(Exception):
    pass


# flag -> (type, default); the config file uses the same keys with underscores
OPTIONS = {
    "content": (str, None),
    "style": (str, None),
    "out": (str, None),
    "weights": (str, None),
    "depth": (str, "shallow"),
    "kind": (str, "closed_form"),
    "alpha": (float, 1.0),
    "mask": (str, None),
    "style_mask": (str, None),
    "seed": (int, 0),
    "report": (bool, False),
    "sizes": (str, "256,512,1024"),
    "steps": (int, None),
    "lr": (float, None),
    "lam": (float, 1.0),
    "side": (int, 32),
    "sabotage": (str, None),
    "grad_check": (bool, False),
}
COMMANDS = ("stylize", "stylize-video", "train-decoder", "train-transform", "verify", "bench")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    for key, (typ, _) in OPTIONS.items():
        flag = "--" + key.replace("_", "-")
        if typ is bool:
            common.add_argument(flag, action="store_true")
        elif key == "depth":
            common.add_argument(flag, choices=sorted(model.PRESETS))
        elif key == "kind":
            common.add_argument(flag, choices=KINDS)
        elif key == "sabotage":
            common.add_argument(flag, choices=["identityT"])
        else:
            common.add_argument(flag, type=typ)
    common.add_argument("--config", default=argparse.SUPPRESS, help="file of `key = value` lines")
    parser = argparse.ArgumentParser(prog="lintx", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def read_config(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected `key = value`")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in OPTIONS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        typ = OPTIONS[key][0]
        try:
            if typ is bool:
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                out[key] = value.lower() in ("true", "1", "yes")
            else:
                out[key] = typ(value)
        except ValueError:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return out


def resolve(args: argparse.Namespace) -> dict:
    """CLI flags over config file over defaults; ``opts["explicit"]`` lists the keys not left at default."""
    opts = {k: default for k, (_, default) in OPTIONS.items()}
    given = vars(args)
    explicit = set()
    if "config" in given:
        from_file = read_config(given["config"])
        opts.update(from_file)
        explicit |= set(from_file)
    from_cli = {k: v for k, v in given.items() if k in OPTIONS}
    opts.update(from_cli)
    explicit |= set(from_cli)
    if opts["depth"] not in model.PRESETS:
        raise UsageError(f"unknown depth {opts['depth']!r}")
    if opts["kind"] not in KINDS:
        raise UsageError(f"unknown kind {opts['kind']!r}")
    if not 0.0 <= opts["alpha"] <= 1.0:
        raise UsageError(f"alpha must lie in [0, 1], got {opts['alpha']}")
    opts["explicit"] = explicit
    return opts


def need(opts, *keys):
    missing = [k for k in keys if opts[k] is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def thread_count() -> int:
    raw = os.environ.get("LINTX_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise UsageError(f"LINTX_THREADS must be a positive integer, got {raw!r}")
    return n


def load_networks(opts) -> Networks:
    """An explicit depth must agree with the one recorded in the weight file."""
    store = load_weights(opts["weights"])
    return Networks.from_store(store, opts["depth"] if "depth" in opts["explicit"] else None)


def _masks(opts, content_shape, style_shape):
    if opts["mask"] is None:
        if opts["style_mask"] is not None:
            raise UsageError("--style-mask needs --mask")
        return None, None
    content_vals = read_mask_values(opts["mask"])
    style_path = opts["style_mask"] or opts["mask"]
    style_vals = read_mask_values(style_path)
    if content_vals.shape != content_shape[1:]:
        raise UsageError(f"mask is {content_vals.shape}, content image is {content_shape[1:]}")
    if style_vals.shape != style_shape[1:]:
        raise UsageError(f"style mask is {style_vals.shape}, style image is {style_shape[1:]}; pass --style-mask")
    return shared_masks(content_vals, style_vals)


def cmd_stylize(opts) -> int:
    need(opts, "content", "style", "out", "weights")
    content, style = read_image(opts["content"]), read_image(opts["style"])
    mask_c, mask_s = _masks(opts, content.shape, style.shape)
    stylizer = Stylizer(load_networks(opts), opts["kind"], opts["alpha"])
    prepared = stylizer.prepare(style, mask_s)
    image, f_c, f_d = stylizer.run(content, prepared, mask_c)
    write_image(image, opts["out"])
    if opts["report"]:
        for name, value in stylizer.report(f_c, f_d, prepared, mask_c).items():
            print(f"{name} {value:.6e}")
    return EXIT_OK


def cmd_stylize_video(opts) -> int:
    need(opts, "content", "style", "out", "weights")
    frames = sorted(Path(opts["content"]).glob("*.ppm"))
    if not frames:
        raise FileNotFoundError(f"no .ppm frames in {opts['content']}")
    out_dir = Path(opts["out"])
    if not out_dir.is_dir():
        raise FileNotFoundError(f"output directory {out_dir} does not exist")
    style = read_image(opts["style"])
    first = read_image(frames[0])
    mask_c, mask_s = _masks(opts, first.shape, style.shape)
    stylizer = Stylizer(load_networks(opts), opts["kind"], opts["alpha"])
    prepared = stylizer.prepare(style, mask_s)

    def one(path):
        img = read_image(path)
        if img.shape != first.shape:
            raise UsageError(f"frame {path.name} is {img.shape[1:]}, expected {first.shape[1:]}")
        write_image(stylizer.run(img, prepared, mask_c)[0], out_dir / path.name)

    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        list(pool.map(one, frames))
    return EXIT_OK


def _training_images(opts, kind, count, seed):
    key = "content" if kind == "content" else "style"
    if opts[key] is not None:
        return data.load_directory(opts[key], opts["side"])
    return data.procedural_set(kind, count, opts["side"], seed)


def cmd_train_decoder(opts) -> int:
    need(opts, "out")
    spec = model.PRESETS[opts["depth"]]
    spec.check_image(opts["side"], opts["side"])
    enc = model.init_encoder(spec, opts["seed"])
    images = np.concatenate([_training_images(opts, "content", 64, opts["seed"] + 1),
                             _training_images(opts, "style", 64, opts["seed"] + 2)])
    steps = opts["steps"] if opts["steps"] is not None else 4000
    dec, history = pretrain_decoder(images, spec, enc, steps, seed=opts["seed"], lr=opts["lr"] or 1e-3)
    save_weights(Networks(spec, enc, dec).to_store(), opts["out"])
    Path(opts["out"] + ".history.csv").write_text(
        "step,mse\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(history)))
    print(f"reconstruction_mse {reconstruction_mse(images, spec, enc, dec):.6e}")
    return EXIT_OK


def cmd_train_transform(opts) -> int:
    need(opts, "weights", "out")
    nets = load_networks(opts)
    tspec = nets.tspec or model.TransformModuleSpec(nets.spec.channels)
    content = _training_images(opts, "content", 64, opts["seed"] + 1)
    styles = _training_images(opts, "style", 8, opts["seed"] + 2)
    train = TrainConfig(steps=opts["steps"] if opts["steps"] is not None else 500,
                        lr=opts["lr"] or 1e-4, seed=opts["seed"])
    tm, history = train_transform(content, styles, nets.spec, nets.encoder, nets.decoder, tspec,
                                  LossConfig(lam=opts["lam"]), train, tm_w=nets.transform)
    save_weights(Networks(nets.spec, nets.encoder, nets.decoder, tm, tspec).to_store(), opts["out"])
    history.write(opts["out"] + ".history.csv", "step,content_loss,style_loss,total")
    total = history.column(2)
    print(f"total_loss first {total[0]:.6e} last {total[-1]:.6e}")
    return EXIT_OK


def cmd_verify(opts) -> int:
    from .checks import run_checks

    ok = True
    for name, residual, threshold in run_checks(opts["seed"], opts["sabotage"], opts["grad_check"]):
        passed = residual <= threshold
        ok &= passed
        print(f"CHECK {name} {residual:.3e} {threshold:.0e} {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


BENCH_WARMUP, BENCH_RUNS = 3, 20


def cmd_bench(opts) -> int:
    try:
        sizes = [int(s) for s in opts["sizes"].split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--sizes must be a comma-separated list of integers, got {opts['sizes']!r}") from None
    spec = model.PRESETS[opts["depth"]]
    for s in sizes:
        if s <= 0:
            raise UsageError(f"image sizes must be positive, got {s}")
        spec.check_image(s, s)
    kinds = [opts["kind"]] if "kind" in opts["explicit"] else list(KINDS)
    if opts["weights"] is not None:
        nets = load_networks(opts)
    else:
        nets = Networks(spec, {}, {})
    if nets.transform is None:
        tspec = model.TransformModuleSpec(spec.channels)
        nets = Networks(nets.spec, nets.encoder, nets.decoder, model.init_transform(tspec, opts["seed"]), tspec)
    rng = np.random.default_rng(opts["seed"])
    print("# lintx bench: feature-space transform stage at the bottleneck, median wall time per call")
    print(f"# encoder preset {spec.name} ({spec.channels} channels, /{spec.downsample} resolution), "
          "float64 numpy on CPU")
    print("# absolute values are NOT comparable to published GPU timings: different encoder, hardware and precision")
    print("kind,size,feature_side,channels,median_ms,runs")
    for kind in kinds:
        stylizer = Stylizer(nets, kind)
        for s in sizes:
            side = s // spec.downsample
            f_c = FeatureMap.from_chw(rng.uniform(0, 1, (spec.channels, side, side)))
            f_s = FeatureMap.from_chw(rng.uniform(0, 1, (spec.channels, side, side)))
            prepared = stylizer.prepare_features(f_s)
            times = []
            for k in range(BENCH_WARMUP + BENCH_RUNS):
                t0 = time.perf_counter()
                stylizer.transform(f_c, prepared)
                if k >= BENCH_WARMUP:
                    times.append(time.perf_counter() - t0)
            print(f"{kind},{s},{side},{spec.channels},{1e3 * statistics.median(times):.4f},{BENCH_RUNS}")
    return EXIT_OK


HANDLERS = {
    "stylize": cmd_stylize,
    "stylize-video": cmd_stylize_video,
    "train-decoder": cmd_train_decoder,
    "train-transform": cmd_train_transform,
    "verify": cmd_verify,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        opts = resolve(args)
        thread_count()
        return HANDLERS[args.command](opts)
    except UsageError as e:
        print(f"lintx: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ImageFormatError, WeightFormatError) as e:
        print(f"lintx: bad file: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"lintx: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except TrainingError as e:
        print(f"lintx: training failed: {e}", file=sys.stderr)
        return EXIT_FAIL
    except (ValueError, KeyError) as e:
        print(f"lintx: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
