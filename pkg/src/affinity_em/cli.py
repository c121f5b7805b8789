"""Command-line interface: gen, run, infer, eval, viz.

Configuration is a plain key=value file; every key also has a ``--key``
flag (underscores become dashes) and flags win over the file. Exit codes:
0 on success, 2 when a training stage diverges, 3 on configuration errors.
"""

import argparse
import dataclasses
import logging
import os
import sys

import numpy as np

from . import em, report
from .grid import FEATURE_DIM, harden
from .metrics import corpus_metrics
from .pnm import read_image, read_labels, write_labels, write_pnm
from .propagation import compute_gates, propagate
from .synth import SceneSpec, SeedSpec, make_corpus, read_corpus, write_corpus

EXIT_OK = 0
EXIT_DIVERGED = 2
EXIT_CONFIG = 3

HELP_NOTES = {
    "max_steps": "EM steps after initialization",
    "mining_threshold": "region score needed to keep a mined label, in (1/C, 1)",
    "lambda_smooth": "weight of the region-smoothness term (a chosen default, not a published value)",
    "early_stop": "stop when pairwise mIoU gains fewer points than this; 0 disables",
    "mining": "mine confident regions (false: supervise the pairwise model with the unary argmax)",
    "pairwise": "train and apply the pairwise model (false: unary learns from mined labels)",
}


class ConfigError(ValueError):
    pass


# Keys that are not RunConfig fields.
EXTRA_KEYS = {"corpus": None, "num_images": 100, "num_classes": 4}


def _fields():
    return {f.name: f for f in dataclasses.fields(em.RunConfig)}


def _convert(key, raw, default):
    try:
        if isinstance(default, bool):
            low = str(raw).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None


def read_config_file(path):
    """``key=value`` lines; ``#`` starts a comment, blank lines are ignored."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def parse_config(file_values, flag_values):
    """Merge file and flag values (flags win) into ``(RunConfig, extras)``."""
    fields = _fields()
    merged = dict(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    run_kwargs, extras = {}, dict(EXTRA_KEYS)
    for key, raw in merged.items():
        if key in fields:
            run_kwargs[key] = _convert(key, raw, fields[key].default)
        elif key in EXTRA_KEYS:
            extras[key] = raw if key == "corpus" else _convert(key, raw, EXTRA_KEYS[key])
        else:
            raise ConfigError(f"unknown config key {key!r}")
    for key in ("num_images", "num_classes"):
        if int(extras[key]) < (1 if key == "num_images" else 2):
            raise ConfigError(f"{key}: out of range ({extras[key]})")
    threshold = run_kwargs.get("mining_threshold", em.RunConfig.mining_threshold)
    if not 1.0 / extras["num_classes"] < threshold < 1.0:
        raise ConfigError(f"mining_threshold: {threshold} outside (1/C, 1)")
    try:
        config = em.RunConfig(**run_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return config, extras


def _add_config_flags(parser):
    parser.add_argument("--config", help="key=value config file")
    for name, f in _fields().items():
        flag = "--" + name.replace("_", "-")
        note = HELP_NOTES.get(name, "")
        text = f"{note} (default: {f.default})".strip()
        if isinstance(f.default, bool):
            parser.add_argument(flag, dest=name, default=None, help=text)
            parser.add_argument("--no-" + name.replace("_", "-"), dest=name,
                                action="store_const", const="false", help=f"set {name}=false")
        else:
            parser.add_argument(flag, dest=name, default=None, help=text)
    parser.add_argument("--steps", dest="max_steps", default=None, help="alias of --max-steps")
    for key, default in EXTRA_KEYS.items():
        parser.add_argument("--" + key.replace("_", "-"), dest=key, default=None,
                            help=f"(default: {default})")


def _config_from_args(args):
    flags = {name: getattr(args, name, None) for name in list(_fields()) + list(EXTRA_KEYS)}
    file_values = read_config_file(args.config) if args.config else {}
    return parse_config(file_values, flags)


def _load_or_generate(extras, config):
    if extras["corpus"]:
        images, gts, seeds = read_corpus(extras["corpus"])
    else:
        spec = SceneSpec(num_classes=int(extras["num_classes"]), seed=config.seed)
        images, gts, seeds = make_corpus(spec, int(extras["num_images"]), SeedSpec())
    return em.Corpus(np.stack(images), np.stack(seeds), np.stack(gts), int(extras["num_classes"]))


def cmd_gen(args):
    spec = SceneSpec(size=args.size, num_classes=args.num_classes, seed=args.seed)
    seed_spec = SeedSpec(args.erode_radius, args.flip_rate, args.coverage)
    images, gts, seeds = make_corpus(spec, args.n, seed_spec)
    write_corpus(args.out, images, gts, seeds)
    m = corpus_metrics(seeds, gts, spec.num_classes)
    print(f"wrote {args.n} images to {args.out}; seed mIoU {m.mean_iou:.4f} precision {m.precision:.4f}")
    return EXIT_OK


def cmd_run(args):
    config, extras = _config_from_args(args)
    corpus = _load_or_generate(extras, config)
    state = em.run(corpus, config)
    report.save_run(args.out, state)
    print(report.summary_text(state.rows), end="")
    return EXIT_OK


def _load_models(params_dir, num_classes):
    u = report.load_linear(os.path.join(params_dir, "unary.csv"), "unary", num_classes, FEATURE_DIM)
    p = report.load_pairwise(os.path.join(params_dir, "pairwise.csv"))
    return u, p


def _input_images(path):
    if os.path.isdir(path):
        img_dir = os.path.join(path, "img") if os.path.isdir(os.path.join(path, "img")) else path
        names = sorted(f for f in os.listdir(img_dir) if f.endswith(".ppm"))
        return [(os.path.splitext(n)[0], read_image(os.path.join(img_dir, n))) for n in names]
    return [(os.path.splitext(os.path.basename(path))[0], read_image(path))]


def cmd_infer(args):
    u, p = _load_models(args.params, args.num_classes)
    os.makedirs(args.out, exist_ok=True)
    for name, image in _input_images(args.input):
        labels = harden(em.infer((u, p), image))
        write_labels(os.path.join(args.out, f"{name}.pgm"), labels)
    return EXIT_OK


def cmd_eval(args):
    names = sorted(f for f in os.listdir(args.pred) if f.endswith(".pgm"))
    if not names:
        raise ConfigError(f"no .pgm predictions in {args.pred}")
    preds = [read_labels(os.path.join(args.pred, n)) for n in names]
    gts = [read_labels(os.path.join(args.gt, n)) for n in names]
    m = corpus_metrics(preds, gts, args.num_classes)
    print(f"mean_iou,{m.mean_iou!r}\nprecision,{m.precision!r}")
    for c, v in enumerate(m.per_class_iou):
        print(f"iou[{c}],{v!r}")
    return EXIT_OK


def cmd_viz(args):
    """Twelve gate graymaps plus unary and pairwise label maps per image."""
    u, p = _load_models(args.params, args.num_classes)
    os.makedirs(args.out, exist_ok=True)
    from .grid import extract_features
    from .unary import predict
    for name, image in _input_images(args.input):
        feats = extract_features(image)
        field = compute_gates(p, feats)
        for idx, gate in enumerate(field.fields):
            write_pnm(os.path.join(args.out, f"{name}_gate{idx:02d}.pgm"),
                      np.round(gate * 255).astype(np.uint8))
        alpha_u = predict(u, feats)
        write_labels(os.path.join(args.out, f"{name}_unary.pgm"), harden(alpha_u))
        write_labels(os.path.join(args.out, f"{name}_pairwise.pgm"),
                     harden(propagate(field, alpha_u)))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="affinity-em", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic corpus")
    gen.add_argument("--out", required=True)
    gen.add_argument("--n", type=int, default=100)
    gen.add_argument("--seed", type=int, default=42)
    gen.add_argument("--size", type=int, default=SceneSpec.size)
    gen.add_argument("--num-classes", type=int, default=SceneSpec.num_classes)
    gen.add_argument("--erode-radius", type=float, default=SeedSpec.erode_radius)
    gen.add_argument("--flip-rate", type=float, default=SeedSpec.flip_rate)
    gen.add_argument("--coverage", type=float, default=SeedSpec.coverage)
    gen.set_defaults(func=cmd_gen)

    run = sub.add_parser("run", help="run the full EM loop")
    _add_config_flags(run)
    run.add_argument("--out", required=True)
    run.set_defaults(func=cmd_run)

    for name, func, text in (("infer", cmd_infer, "label images with trained parameters"),
                             ("viz", cmd_viz, "dump gate fields and stage label maps")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--params", required=True, help="directory written by `run`")
        p.add_argument("--input", required=True, help="a .ppm image, a directory, or a corpus")
        p.add_argument("--out", required=True)
        p.add_argument("--num-classes", type=int, default=4)
        p.set_defaults(func=func)

    ev = sub.add_parser("eval", help="score predicted label maps against ground truth")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--num-classes", type=int, default=4)
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (em.StageDiverged,) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
