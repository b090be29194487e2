"""Command-line interface: ``nsn <command> [options]``."""

import argparse
import logging
import os
import sys
import time
from dataclasses import asdict

import numpy as np
from threadpoolctl import threadpool_limits

from . import apps
from .data import load_idx, load_image_dir, make_preprocessor
from .estimator import NormalSimilarityNetwork
from .generation import (
    GenConfig, feature_arithmetic, generate, interpolate_noise, noise_from_filter,
    receptive_field, sample_hidden,
)
from .persistence import load_model, save_model
from .training import train_network

logger = logging.getLogger("nsn")

COMMANDS = ("train", "generate", "style", "inpaint", "interpolate", "arith", "sample-layer", "inspect")


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _bool(text):
    if isinstance(text, bool):
        return text
    if str(text).lower() in ("1", "true", "yes", "on"):
        return True
    if str(text).lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _add_common(p, model=True):
    if model:
        p.add_argument("--model", required=True, help="trained model file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output path")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS threads (1 for bit-reproducible runs)")


def _add_gen(p):
    p.add_argument("--delta1", type=float, default=1.0, help="filter selection sharpness")
    p.add_argument("--delta2", type=float, default=1.0, help="filter sample noise scale")
    p.add_argument("--delta3", type=float, default=1.0, help="patch contrast scale")
    p.add_argument("--n", type=int, default=10, help="multinomial draws per cell")
    p.add_argument("--per-cell-noise", type=_bool, nargs="?", const=True, default=False)
    p.add_argument("--grid-cols", type=int, default=None)
    p.add_argument("--grid-pad", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="nsn", description=__doc__)
    parser.add_argument("--config", help="key = value file providing option defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network layer by layer")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--idx", help="IDX3 image file (optionally gzipped)")
    src.add_argument("--image-dir", help="directory of raster images")
    p.add_argument("--size", type=int, default=64, help="resize target for --image-dir")
    p.add_argument("--channels", type=int, default=3, choices=(1, 3))
    p.add_argument("--limit", type=int, default=None, help="use at most this many images")
    p.add_argument("--arch", default="mnist", help="'mnist', '64' or e.g. '4x4/2,3x3/2,6x6/2'")
    p.add_argument("--alpha", type=_floats, default=None, help="absolute spawn threshold(s), comma separated")
    p.add_argument("--alpha-percentile", type=_floats, default=[20.0, 10.0, 10.0])
    p.add_argument("--max-iters", type=int, default=20)
    p.add_argument("--convergence-frac", type=float, default=1e-3)
    p.add_argument("--max-filters", type=int, default=1000)
    p.add_argument("--init-sigma", default="auto")
    p.add_argument("--patch-subsample", type=int, default=64, help="patches per image in layer 1 (0 = all)")
    p.add_argument("--preprocess", choices=("none", "normalize", "zca"), default="none")
    p.add_argument("--zca-eps", type=float, default=1e-2)
    p.add_argument("--zca-max-images", type=int, default=10000)
    _add_common(p, model=False)
    _add_gen(p)

    p = sub.add_parser("generate", help="sample images from noise")
    p.add_argument("--count", type=int, default=64)
    _add_common(p)
    _add_gen(p)

    p = sub.add_parser("style", help="re-render an image from its first-layer features")
    p.add_argument("--input", required=True)
    p.add_argument("--count", type=int, default=4)
    _add_common(p)
    _add_gen(p)

    p = sub.add_parser("inpaint", help="reconstruct an occluded region")
    p.add_argument("--input", required=True)
    mask = p.add_mutually_exclusive_group(required=True)
    mask.add_argument("--mask", help="mask image; non-zero pixels are occluded")
    mask.add_argument("--box", help="occluded rectangle 'row,col,height,width'")
    p.add_argument("--fill", type=float, default=0.0, help="value written into the occluded pixels")
    p.add_argument("--full-replace", type=_bool, nargs="?", const=True, default=False)
    _add_common(p)
    _add_gen(p)

    p = sub.add_parser("interpolate", help="walk between two final-layer filters")
    p.add_argument("--a", type=int, required=True)
    p.add_argument("--b", type=int, required=True)
    p.add_argument("--steps", type=int, default=8)
    _add_common(p)
    _add_gen(p)

    p = sub.add_parser("arith", help="add and subtract final-layer filters")
    p.add_argument("--expr", required=True, help="e.g. '0 + 1 - 2'")
    p.add_argument("--count", type=int, default=4, help="samples per row")
    _add_common(p)
    _add_gen(p)

    p = sub.add_parser("sample-layer", help="sample receptive-field patches from a hidden layer")
    p.add_argument("--layer", type=int, required=True, help="1-based layer index")
    p.add_argument("--count", type=int, default=16)
    _add_common(p)
    _add_gen(p)

    p = sub.add_parser("inspect", help="print a model summary")
    p.add_argument("--model", required=True)
    return parser


def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def parse_args(argv):
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        try:
            cfg = read_config(known.config)
        except (OSError, ValueError) as exc:
            parser.error(str(exc))
        command = next((a for a in argv if a in COMMANDS), None)
        if command is not None:
            subparser = parser._subparsers._group_actions[0].choices[command]
            dests = {a.dest for a in subparser._actions}
            unknown = sorted(set(cfg) - dests)
            if unknown:
                parser.error(f"unknown config keys for {command}: {', '.join(unknown)}")
            for action in subparser._actions:
                if action.dest in cfg:
                    action.required = False
            subparser.set_defaults(**cfg)
    return parser, parser.parse_args(argv)


def gen_config(args):
    return GenConfig(args.delta1, args.delta2, args.delta3, args.n, args.seed, args.per_cell_noise)


def _write_grid(args, images, cols=None):
    grid = apps.tile_grid(images, cols or args.grid_cols, args.grid_pad)
    apps.save_image(args.out, grid)
    return grid


def _finish(args, started, net=None, **extra):
    config = {k: v for k, v in vars(args).items() if k != "config"}
    if net is not None:
        extra.setdefault("filters_per_layer", net.n_filters)
        if getattr(net.preprocessor, "kind", None) == "zca":
            extra.setdefault("notes", []).append(
                "model was trained on ZCA-whitened pixels; reconstructions may lose colour information"
            )
    apps.write_manifest(args.out + ".manifest.json", apps.manifest(args.command, config, started, **extra))


def cmd_train(args, parser):
    if args.idx:
        if not os.path.exists(args.idx):
            parser.error(f"dataset not found: {args.idx}")
        ds = load_idx(args.idx, limit=args.limit)
    elif args.image_dir:
        if not os.path.isdir(args.image_dir):
            parser.error(f"dataset directory not found: {args.image_dir}")
        ds = load_image_dir(args.image_dir, args.size, args.channels, limit=args.limit)
    else:
        parser.error("train needs --idx or --image-dir")
    started = time.time()
    init_sigma = args.init_sigma if args.init_sigma == "auto" else float(args.init_sigma)
    est = NormalSimilarityNetwork(
        arch=args.arch, alpha=args.alpha, alpha_percentile=args.alpha_percentile,
        max_iter=args.max_iters, convergence_frac=args.convergence_frac,
        max_filters=args.max_filters, init_sigma=init_sigma, patch_subsample=args.patch_subsample,
        preprocessing=args.preprocess, zca_epsilon=args.zca_eps, delta1=args.delta1,
        delta2=args.delta2, delta3=args.delta3, n_draws=args.n, random_state=args.seed,
    )
    pre = make_preprocessor(args.preprocess, args.zca_eps, args.zca_max_images)
    if pre is not None:
        pre = pre.fit(ds.images).quantized()
    meta = {
        "dataset": {"name": ds.name, "n_images": len(ds), "fingerprint": ds.fingerprint()},
        "preprocessing": args.preprocess,
        "arch": args.arch,
        "seed": args.seed,
        "gen_defaults": asdict(gen_config(args)),
    }
    net = train_network(ds.images, est._specs(), est.layer_configs(), pre, meta)
    save_model(net, args.out)
    for k, info in enumerate(net.metadata["layers"], 1):
        logger.info("layer %d: %d filters (alpha %.4f)", k, info["n_filters"], info["alpha"])
    _finish(args, started, net, dataset=meta["dataset"], layers=net.metadata["layers"],
            shape_chain=[list(s) for s in net.layer_shapes()])


def cmd_generate(args, parser):
    started = time.time()
    net = load_model(args.model)
    cfg = gen_config(args)
    rng = cfg.rng()
    images = [generate(net, rng.standard_normal(net.n_filters[-1]), cfg, rng) for _ in range(args.count)]
    _write_grid(args, images)
    _finish(args, started, net, count=len(images))


def cmd_style(args, parser):
    started = time.time()
    net = load_model(args.model)
    image = apps.load_image(args.input, net.input_shape)
    variants = apps.style(net, image, args.count, gen_config(args))
    _write_grid(args, variants)
    _finish(args, started, net, count=len(variants))


def _parse_box(text, shape):
    try:
        r, c, h, w = (int(v) for v in text.split(","))
    except ValueError:
        raise ValueError(f"bad --box {text!r}, expected 'row,col,height,width'") from None
    mask = np.zeros(shape[:2], dtype=bool)
    mask[r:r + h, c:c + w] = True
    return mask


def cmd_inpaint(args, parser):
    started = time.time()
    net = load_model(args.model)
    image = apps.load_image(args.input, net.input_shape)
    if args.box:
        mask = _parse_box(args.box, image.shape)
    else:
        mask = apps.load_image(args.mask, net.input_shape[:2] + (1,))[:, :, 0] > 0.5
    result, info = apps.inpaint(net, image, mask, gen_config(args), full_replace=args.full_replace,
                                fill=args.fill)
    apps.save_image(args.out, result)
    metrics = {k: v for k, v in info.items() if isinstance(v, float)}
    metrics["occluded_cells"] = int(info["cells"].sum())
    _finish(args, started, net, inpaint=metrics)


def cmd_interpolate(args, parser):
    started = time.time()
    net = load_model(args.model)
    if args.steps < 2:
        parser.error("--steps must be >= 2")
    cfg = gen_config(args)
    n_top = net.n_filters[-1]
    z_a, z_b = noise_from_filter(args.a, n_top), noise_from_filter(args.b, n_top)
    images = []
    for t in np.linspace(0.0, 1.0, args.steps):
        # same stream for every step so only the noise vector changes
        images.append(generate(net, interpolate_noise(z_a, z_b, t), cfg, cfg.rng()))
    _write_grid(args, images, args.grid_cols or args.steps)
    _finish(args, started, net, steps=args.steps)


def cmd_arith(args, parser):
    started = time.time()
    net = load_model(args.model)
    indices, coeffs = apps.parse_arith(args.expr, net.n_filters[-1])
    cfg = gen_config(args)
    rows = []
    for j in indices:
        rng = cfg.rng()
        rows += [generate(net, noise_from_filter(j, net.n_filters[-1]), cfg, rng) for _ in range(args.count)]
    rng = cfg.rng()
    noises = [noise_from_filter(j, net.n_filters[-1]) for j in indices]
    rows += [feature_arithmetic(net, noises, coeffs, cfg, rng) for _ in range(args.count)]
    _write_grid(args, rows, args.count)
    _finish(args, started, net, indices=indices, coeffs=coeffs)


def cmd_sample_layer(args, parser):
    started = time.time()
    net = load_model(args.model)
    if not 1 <= args.layer <= net.n_layers:
        parser.error(f"--layer must be in 1..{net.n_layers}")
    cfg = gen_config(args)
    rng = cfg.rng()
    patches = [sample_hidden(net, args.layer, cfg, rng) for _ in range(args.count)]
    _write_grid(args, patches)
    _finish(args, started, net, receptive_field=list(receptive_field(net, args.layer)))


def cmd_inspect(args, parser):
    import json

    net = load_model(args.model)
    summary = {
        "input_shape": list(net.input_shape),
        "layers": [
            {"spec": str(s), "filters": len(b), "output": list(shape)}
            for s, b, shape in zip(net.specs, net.banks, net.layer_shapes()[1:])
        ],
        "preprocessing": getattr(net.preprocessor, "kind", "none"),
        "metadata": net.metadata,
    }
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))


HANDLERS = {
    "train": cmd_train, "generate": cmd_generate, "style": cmd_style, "inpaint": cmd_inpaint,
    "interpolate": cmd_interpolate, "arith": cmd_arith, "sample-layer": cmd_sample_layer,
    "inspect": cmd_inspect,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, args = parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(message)s")
    if not args.verbose:
        logging.getLogger("nsn.training").setLevel(logging.INFO)
    threads = getattr(args, "threads", None)
    try:
        if threads:
            with threadpool_limits(limits=threads):
                HANDLERS[args.command](args, parser)
        else:
            HANDLERS[args.command](args, parser)
    except (OSError, ValueError, IndexError) as exc:
        print(f"nsn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
