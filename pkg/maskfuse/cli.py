"""
``maskfuse`` command line tool.

Exit codes: 0 on success, 2 for usage or input errors, 3 when inputs that
must share a canvas do not.
"""
import argparse
from concurrent.futures import ThreadPoolExecutor
import csv
import io as _io
import logging
import os.path as osp
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy
from smqtk_core.dict import merge_dict
from smqtk_core.plugin import metadata

from maskfuse import io
from maskfuse.exceptions import DimensionMismatchError, InvalidConfigError, \
    InvalidUriError, MalformedInputError
from maskfuse.fusion import FusionConfig, InstanceSet, fuse
from maskfuse.lossmath import (
    CROSSENTROPY_FORMS, LossConfig, binary_crossentropy,
    categorical_crossentropy, dice_entropy, dice_loss
)
from maskfuse.metrics import EvalReport, matched_instance_iou, mean_iou
from maskfuse.overlay import OverlaySpec, render_overlay
from maskfuse.schedule import DECAY_SHAPES, ScheduleConfig, emit_curve
from maskfuse.synth import SceneSpec, generate, random_scene_spec
from maskfuse.utils import SimpleTimer
from maskfuse.utils.file import safe_create_dir, safe_file_write


LOG = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DIMENSIONS = 3

SCHEDULE_PRESETS = ("three_phase", "constant", "exponential")


def _version() -> str:
    try:
        return metadata.version("maskfuse")
    except metadata.PackageNotFoundError:
        return "unknown"


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity > 1:
        level = logging.DEBUG
    root = logging.getLogger()
    if not root.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(
            "%(levelname)s %(name)s: %(message)s"
        ))
        root.addHandler(handler)
    root.setLevel(level)


def _load_config(path: Optional[str]) -> Dict[str, Any]:
    if path is None:
        return {}
    doc = io.read_json(path)
    if not isinstance(doc, dict):
        raise InvalidConfigError("Configuration file %s must hold a JSON "
                                 "object" % path)
    return doc


def _resolve_config(cls: Any, args: argparse.Namespace,
                    flag_map: Dict[str, str]) -> Any:
    """
    Defaults, then ``--config`` file values, then explicit flags.

    :param flag_map: Configuration key to argparse destination.
    """
    cfg = merge_dict(cls.get_default_config(), _load_config(args.config))
    for key, dest in flag_map.items():
        value = getattr(args, dest)
        if value is not None:
            cfg[key] = value
    unknown = set(cfg) - set(cls.get_default_config())
    if unknown:
        raise InvalidConfigError("Unknown configuration key(s): %s"
                                 % ", ".join(sorted(unknown)))
    return cls.from_config(cfg, merge_default=False)


def _emit_json(doc: Any, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(io.dump_json(doc).decode("utf-8"))
    else:
        io.write_json(doc, out)


###############################################################################
# Commands

def cmd_fuse(args: argparse.Namespace) -> int:
    cfg = _resolve_config(FusionConfig, args, {
        "iou_threshold": "iou_threshold",
        "containment_threshold": "containment_threshold",
        "connectivity": "connectivity",
        "orphan_policy": "orphan_policy",
        "semantic_fill": "fill",
    })
    instances = io.read_instances(args.instances)
    semantic = io.load_mask(args.semantic)
    fused, report = fuse(instances, semantic, cfg)
    report_path = args.report
    if report_path is None:
        stem = args.out[:-5] if args.out.endswith(".json") else args.out
        report_path = stem + ".report.json"
    io.write_instances(fused, args.out)
    io.write_json(report.to_json(), report_path)
    LOG.info("Wrote %s and %s", args.out, report_path)
    return EXIT_OK


def _evaluate_pair(pred_path: str, truth_path: str,
                   classes: Sequence[int]) -> Dict[str, Any]:
    pred, pred_set = io.load_labels(pred_path)
    truth, truth_set = io.load_labels(truth_path)
    report = mean_iou(pred, truth, classes)
    doc = report.to_json()
    doc["prediction"] = pred_path
    doc["truth"] = truth_path
    if pred_set is not None and truth_set is not None:
        doc["instance_iou"] = matched_instance_iou(
            [i.mask for i in pred_set], [i.mask for i in truth_set]
        )
    return doc


def cmd_evaluate(args: argparse.Namespace) -> int:
    if len(args.pairs) % 2:
        LOG.error("Expected PREDICTION TRUTH pairs, given %d path(s)",
                  len(args.pairs))
        return EXIT_INPUT
    pairs = list(zip(args.pairs[0::2], args.pairs[1::2]))
    with SimpleTimer("Evaluating %d pair(s)", LOG.info, len(pairs)):
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            # map() yields in submission order.
            images = list(pool.map(
                lambda p: _evaluate_pair(p[0], p[1], args.classes), pairs
            ))
    per_class = [
        (c, float(numpy.mean([img["classes"][k]["iou"] for img in images])))
        for k, c in enumerate(args.classes)
    ]
    doc = EvalReport(
        per_class, float(numpy.mean([img["mean_iou"] for img in images]))
    ).to_json()
    doc["images"] = images
    inst = [img["instance_iou"] for img in images if "instance_iou" in img]
    doc["instance_iou"] = float(numpy.mean(inst)) if inst else None
    _emit_json(doc, args.out)
    return EXIT_OK


def cmd_overlay(args: argparse.Namespace) -> int:
    spec = OverlaySpec(alpha=args.alpha)
    base = io.load_image(args.image)
    sets: List[InstanceSet] = [io.read_instances(p) for p in args.instances]
    io.save_image(render_overlay(base, sets, spec), args.out)
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    if (args.spec is None) == (args.random_seed is None):
        LOG.error("Give either a scene spec file or --random-seed")
        return EXIT_INPUT
    if args.spec is not None:
        spec = SceneSpec.from_json(io.read_json(args.spec))
    else:
        spec = random_scene_spec(args.random_seed, args.width, args.height,
                                 noise_blobs=args.noise_blobs)
    scene = generate(spec)
    safe_create_dir(args.out_dir)
    io.write_json(spec.to_json(), osp.join(args.out_dir, "spec.json"))
    io.save_image(scene.image, osp.join(args.out_dir, "image.png"))
    io.save_mask(scene.semantic, osp.join(args.out_dir, "semantic.png"))
    io.write_instances(scene.ground_truth,
                       osp.join(args.out_dir, "ground_truth.json"))
    io.write_instances(scene.fragmented,
                       osp.join(args.out_dir, "fragmented.json"))
    LOG.info("Wrote scene with %d stripe(s) to %s",
             len(scene.ground_truth), args.out_dir)
    return EXIT_OK


def cmd_schedule(args: argparse.Namespace) -> int:
    cfg = _resolve_config(ScheduleConfig, args, {
        "lr_start": "lr_start",
        "lr_max": "lr_max",
        "lr_end": "lr_end",
        "warmup_steps": "warmup_steps",
        "plateau_steps": "plateau_steps",
        "decay_steps": "decay_steps",
        "decay_shape": "decay_shape",
    })
    total = args.total_steps if args.total_steps is not None \
        else cfg.total_steps
    if args.preset == "constant":
        cfg = ScheduleConfig.constant(cfg.lr_max, total)
    elif args.preset == "exponential":
        cfg = ScheduleConfig.exponential(cfg.lr_max, cfg.lr_end, total)
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "learning_rate"])
    for step, rate in emit_curve(cfg, total):
        writer.writerow([step, "%.8e" % rate])
    if args.out is None:
        sys.stdout.write(buf.getvalue())
    else:
        safe_file_write(args.out, buf.getvalue().encode("utf-8"))
    return EXIT_OK


def cmd_loss(args: argparse.Namespace) -> int:
    cfg = _resolve_config(LossConfig, args, {
        "epsilon": "epsilon",
        "clamp": "clamp",
    })
    probs = io.load_probability_map(args.prediction)
    targets = io.load_target_map(args.target, probs.classes)
    doc: Dict[str, Any] = {
        "classes": probs.classes,
        "config": cfg.get_config(),
        "dice_loss": dice_loss(probs, targets, cfg).value,
        "binary_crossentropy": binary_crossentropy(probs, targets, cfg).value,
        "categorical_crossentropy": None,
        "dice_entropy": dice_entropy(probs, targets, cfg,
                                     args.crossentropy).value,
    }
    if probs.classes > 1:
        doc["categorical_crossentropy"] = \
            categorical_crossentropy(probs, targets, cfg).value
    _emit_json(doc, args.out)
    return EXIT_OK


###############################################################################
# Parser

def _add_config_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE",
                   help="JSON configuration; explicit flags override its "
                        "values.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskfuse",
        description="Fuse fragmented instance masks with a semantic mask, "
                    "and evaluate, render and generate segmentation data.",
    )
    parser.add_argument("--version", action="version",
                        version="%(prog)s " + _version())
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="Increase log verbosity, may be repeated.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("fuse", help="Merge fragmented instances.")
    p.add_argument("instances", help="Instance JSON document.")
    p.add_argument("semantic", help="Semantic foreground mask PNG.")
    p.add_argument("--iou-threshold", type=float)
    p.add_argument("--containment-threshold", type=float)
    p.add_argument("--connectivity", type=int, choices=(4, 8))
    p.add_argument("--orphan-policy", choices=("keep", "drop"))
    p.add_argument("--fill", choices=("union_only", "fill_bridge"))
    _add_config_arg(p)
    p.add_argument("--out", required=True,
                   help="Fused instance JSON output path.")
    p.add_argument("--report",
                   help="Fusion report output path. Defaults to the output "
                        "path with a '.report.json' suffix.")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("evaluate", help="Mean IoU of predictions.")
    p.add_argument("pairs", nargs="+", metavar="PREDICTION TRUTH",
                   help="Pairs of label maps, each an instance JSON "
                        "document or a single channel class-id PNG.")
    p.add_argument("--classes", type=int, nargs="+", required=True,
                   help="Class ids to average over.")
    p.add_argument("--workers", type=int, default=4,
                   help="Pairs evaluated concurrently.")
    p.add_argument("--out", help="Report path, standard output if absent.")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("overlay", help="Blend instances over an image.")
    p.add_argument("image", help="Base PNG image.")
    p.add_argument("instances", nargs="+", help="Instance JSON documents.")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--out", required=True, help="Output PNG path.")
    p.set_defaults(func=cmd_overlay)

    p = sub.add_parser("synth", help="Generate a synthetic stripe scene.")
    p.add_argument("spec", nargs="?", help="Scene spec JSON.")
    p.add_argument("--random-seed", type=int,
                   help="Draw a random scene spec from this seed instead of "
                        "reading one.")
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--noise-blobs", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("schedule", help="Write a learning rate curve CSV.")
    p.add_argument("--preset", choices=SCHEDULE_PRESETS,
                   default="three_phase")
    p.add_argument("--lr-start", type=float)
    p.add_argument("--lr-max", type=float)
    p.add_argument("--lr-end", type=float)
    p.add_argument("--warmup-steps", type=int)
    p.add_argument("--plateau-steps", type=int)
    p.add_argument("--decay-steps", type=int)
    p.add_argument("--decay-shape", choices=DECAY_SHAPES)
    p.add_argument("--total-steps", type=int,
                   help="Rows to emit. Defaults to the configured phases.")
    _add_config_arg(p)
    p.add_argument("--out", help="CSV path, standard output if absent.")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("loss", help="Evaluate losses of a probability map.")
    p.add_argument("prediction", help="Probability map, JSON grid or PNG.")
    p.add_argument("target", help="Target map, JSON grid or PNG.")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--clamp", type=float)
    p.add_argument("--crossentropy", choices=CROSSENTROPY_FORMS,
                   help="Cross-entropy form of the dice entropy. Chosen by "
                        "class count if absent.")
    _add_config_arg(p)
    p.add_argument("--out", help="Report path, standard output if absent.")
    p.set_defaults(func=cmd_loss)
    return parser


#: Exceptions reported as input errors, checked after dimension mismatches.
_INPUT_ERRORS: Tuple[type, ...] = (
    MalformedInputError, InvalidUriError, InvalidConfigError, OSError,
    ValueError,
)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as ex:
        # --help, --version and usage errors.
        return ex.code if isinstance(ex.code, int) else EXIT_INPUT
    _configure_logging(args.verbose)
    func: Callable[[argparse.Namespace], int] = args.func
    try:
        return func(args)
    except DimensionMismatchError as ex:
        LOG.error("%s", ex)
        return EXIT_DIMENSIONS
    except _INPUT_ERRORS as ex:
        LOG.error("%s", ex)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
