"""Command-line entry point.

Subcommands: ``gen-model`` (write a seeded random model), ``activeness``
(heatmap + feature export for one image), ``gradcheck`` (engine vs
finite-difference and enumeration oracles; the CI gate) and ``toybench``
(pipeline comparison table on the toy dataset).

Exit codes: 0 ok, 1 verification failure, 2 usage error, 3 I/O error.
Every subcommand is deterministic given its flags.  The INTERACTIVE_LOG
environment variable (debug/info/warning) controls log verbosity, as do
repeated ``-v`` flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import struct
import sys

import numpy as np

from .activeness import (
    ActivenessRequest,
    backprop_score,
    connection_activeness,
    neuron_activeness,
    validate_request,
)
from .evalharness import ToyDatasetSpec, compare_pipelines, valid_targets
from .image import RasterImage, bilinear_resize, read_image, resample_to, to_input_tensor, write_image
from .model_io import ARCHITECTURES, generate_model, load_model, save_model
from .net import ConvLayer, forward, infer_shapes, receptive_sets
from .oracle import FDSettings, enumerate_gamma, fd_connection_check
from .tensor import ShapeError, Tensor3

log = logging.getLogger("interactive")

FEATURE_MAGIC = b"IAFEAT01"

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_IO = 3


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _setup_logging(verbose: int) -> None:
    env = os.environ.get("INTERACTIVE_LOG", "").upper()
    level = getattr(logging, env, logging.WARNING) if env else logging.WARNING
    if verbose == 1:
        level = min(level, logging.INFO)
    elif verbose >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _resolve_target(spec, name: str) -> int:
    """Map a layer name (or "input") to the activation index t it selects."""
    t = 0 if name == "input" else spec.layer_index(name) + 1
    if t >= len(spec.layers):
        raise ShapeError(
            f"layer {name!r} is the final layer; activeness needs a successor conv layer"
        )
    if not isinstance(spec.layers[t], ConvLayer):
        raise ShapeError(
            f"layer {name!r} is followed by pooling layer {spec.names[t]!r}; activeness "
            "targets must feed a conv layer (pick the pool output instead)"
        )
    return t


def cmd_gen_model(args) -> int:
    spec = generate_model(args.arch, args.seed, input_shape=tuple(args.input) if args.input else None)
    save_model(spec, args.out)
    shapes = infer_shapes(spec)
    w, h, d = spec.input_shape
    print(f"{'layer':<10} {'kind':<5} {'output':>12}")
    print(f"{'(input)':<10} {'':<5} {f'{w}x{h}x{d}':>12}")
    for name, layer, (ow, oh, od) in zip(spec.names, spec.layers, shapes):
        kind = "conv" if isinstance(layer, ConvLayer) else "pool"
        print(f"{name:<10} {kind:<5} {f'{ow}x{oh}x{od}':>12}")
    print(f"model written to {args.out}")
    return EXIT_OK


def _prepare_input(img: RasterImage, spec, mean: float) -> Tensor3:
    """Fit an image to the network input: resample, channel-fix, mean-subtract."""
    w0, h0, d0 = spec.input_shape
    if img.channels == 1 and d0 == 3:
        img = RasterImage(pixels=np.repeat(img.pixels, 3, axis=2))
    elif img.channels != d0:
        raise ValueError(f"image has {img.channels} channels but the network expects {d0}")
    if (img.width, img.height) != (w0, h0):
        log.info("resampling %dx%d image to network input %dx%d", img.width, img.height, w0, h0)
        img = resample_to(img, w0, h0)
    return to_input_tensor(img, [mean] * d0)


def _write_heatmap(map2d: np.ndarray, out_w: int, out_h: int, path) -> None:
    """Upsample a w-major gamma-hat map to out dims, min-max to 8 bits."""
    upsampled = bilinear_resize(map2d.T, out_h, out_w)
    lo, hi = upsampled.min(), upsampled.max()
    if hi - lo < 1e-12:
        gray = np.full((out_h, out_w), 128, dtype=np.uint8)
    else:
        gray = np.floor((upsampled - lo) / (hi - lo) * 255.0 + 0.5).astype(np.uint8)
    write_image(RasterImage(pixels=gray[:, :, None]), path)


def cmd_activeness(args) -> int:
    if not args.heatmap and not args.features:
        raise ValueError("nothing to do: pass --heatmap and/or --features")
    spec = load_model(args.model)
    img = read_image(args.image)
    t = _resolve_target(spec, args.layer)
    request = ActivenessRequest(target_layer=t, supervision=args.config, p=args.p, summarize=args.summarize)
    x0 = _prepare_input(img, spec, args.mean)
    trace = forward(spec, x0)
    result = neuron_activeness(spec, trace, request)
    if args.heatmap:
        _write_heatmap(np.asarray(result.map2d), img.width, img.height, args.heatmap)
        print(f"heatmap written to {args.heatmap} ({img.width}x{img.height})")
    if args.features:
        values = result.feature.values.astype("<f4")
        with open(args.features, "wb") as fh:
            fh.write(FEATURE_MAGIC + struct.pack("<I", values.size) + b"\x00" * 4)
            fh.write(values.tobytes())
        print(f"{values.size}-dim feature written to {args.features}")
    log.info("log-likelihood at supervision layer: %.6g", result.log_likelihood)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    spec = load_model(args.model)
    settings = FDSettings()
    rng = np.random.default_rng(args.seed)
    x0 = Tensor3.from_array(rng.standard_normal(spec.input_shape))
    trace = forward(spec, x0)
    targets = valid_targets(spec)
    if not targets:
        raise ValueError("model has no conv layer to check")
    combos = [(sup, p) for sup in ("last", "next") for p in (1, 2)]

    hop_scores = {}
    enum_max = 0.0
    for t in targets:
        for sup, p in combos:
            request = ActivenessRequest(target_layer=t, supervision=sup, p=p)
            T = validate_request(spec, request)
            hop_scores[(t, sup, p)] = backprop_score(spec, trace, T, p, t + 1)
            engine_gamma = neuron_activeness(spec, trace, request).gamma.array
            enum = enumerate_gamma(spec, trace, request).array
            enum_max = max(enum_max, float(np.abs(engine_gamma - enum).max()))

    max_rel = 0.0
    max_small_abs = 0.0
    skipped = 0
    compared = 0
    for j in range(args.samples):
        t = targets[int(rng.integers(len(targets)))]
        sup, p = combos[j % len(combos)]
        conn = receptive_sets(spec, t)
        wp = int(rng.integers(conn.out_shape[0]))
        hp = int(rng.integers(conn.out_shape[1]))
        dp = int(rng.integers(conn.out_shape[2]))
        sources = conn.v_set(wp, hp, dp)
        w, h, d = sources[int(rng.integers(len(sources)))]
        connection = (w, h, d, wp, hp, dp)
        request = ActivenessRequest(target_layer=t, supervision=sup, p=p)
        engine = connection_activeness(spec, trace, request, connection, hop_score=hop_scores[(t, sup, p)])
        if args.corrupt_hop:
            engine *= 1.0 + 1e-3
        fd = fd_connection_check(spec, trace, request, connection, settings)
        if fd is None:
            skipped += 1
            continue
        compared += 1
        scale = max(abs(engine), abs(fd))
        if scale <= 1e-6:
            max_small_abs = max(max_small_abs, abs(engine - fd))
        else:
            max_rel = max(max_rel, abs(engine - fd) / scale)

    ok = max_rel <= settings.rel_tol and max_small_abs <= 1e-7 and enum_max <= 1e-10
    print(f"connections sampled: {args.samples} (compared {compared}, kink-skipped {skipped})")
    print(f"max relative error vs finite differences: {max_rel:.3e}")
    print(f"max absolute error on near-zero pairs:    {max_small_abs:.3e}")
    print(f"max |gamma engine - enumeration|:          {enum_max:.3e}")
    print("gradcheck PASS" if ok else "gradcheck FAIL")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_toybench(args) -> int:
    spec = load_model(args.model)
    if args.layers:
        targets = [_resolve_target(spec, name.strip()) for name in args.layers.split(",")]
    else:
        targets = valid_targets(spec)
    w0, h0, d0 = spec.input_shape
    dataset = ToyDatasetSpec(seed=args.dataset_seed, image_size=(w0, h0), channels=d0)
    report = compare_pipelines(dataset, spec, targets, threads=args.threads)
    with open(args.out, "w", encoding="ascii") as fh:
        fh.write(report.to_text())
    print(f"report written to {args.out}")
    if args.json:
        with open(args.json, "w", encoding="ascii") as fh:
            json.dump(report.to_json_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        print(f"structured report written to {args.json}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="interactive",
        description="Activeness-weighted deep features and heatmaps for small conv nets.",
    )
    parser.add_argument(
        "--seed", dest="global_seed", type=int, default=0,
        help="global seed (subcommand --seed overrides)",
    )
    parser.add_argument("--threads", type=_positive_int, default=1, help="worker threads for toybench")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-model", help="generate and save a seeded random model")
    gen.add_argument("--arch", required=True, choices=sorted(ARCHITECTURES), help="architecture template")
    gen.add_argument("--seed", type=int, default=None, help="generator seed")
    gen.add_argument("--input", type=int, nargs=3, metavar=("W", "H", "C"), help="override input shape")
    gen.add_argument("--out", required=True, help="output model path")
    gen.set_defaults(func=cmd_gen_model)

    act = sub.add_parser("activeness", help="heatmap and feature vector for one image")
    act.add_argument("--model", required=True)
    act.add_argument("--image", required=True, help="binary PGM/PPM input")
    act.add_argument("--layer", required=True, help="layer name whose output is weighted, or 'input'")
    act.add_argument("--config", choices=("last", "next"), default="last", help="supervision layer")
    act.add_argument("--p", type=int, choices=(1, 2), default=2, help="likelihood norm")
    act.add_argument("--summarize", choices=("max", "average"), default="max", help="feature pooling")
    act.add_argument("--mean", type=float, default=128.0, help="per-channel input mean to subtract")
    act.add_argument("--heatmap", help="write the 2-D weighting map here as PGM")
    act.add_argument("--features", help="write the feature vector here (f32 binary)")
    act.set_defaults(func=cmd_activeness)

    grad = sub.add_parser("gradcheck", help="verify the engine against the oracles")
    grad.add_argument("--model", required=True)
    grad.add_argument("--seed", type=int, default=None, help="input/sampling seed")
    grad.add_argument("--samples", type=_positive_int, default=200, help="connections to sample")
    grad.add_argument("--corrupt-hop", action="store_true", help=argparse.SUPPRESS)
    grad.set_defaults(func=cmd_gradcheck)

    bench = sub.add_parser("toybench", help="pipeline comparison table on the toy dataset")
    bench.add_argument("--model", required=True)
    bench.add_argument("--dataset-seed", type=int, default=0)
    bench.add_argument("--layers", help="comma-separated layer names (default: all valid targets)")
    bench.add_argument("--out", required=True, help="plain-text report path")
    bench.add_argument("--json", help="also write the report as JSON here")
    bench.set_defaults(func=cmd_toybench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    if getattr(args, "seed", None) is None:
        args.seed = args.global_seed
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except KeyError as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
