"""Command-line entry point: ``stomaforge <subcommand> ...``.

Exit status: 0 success, 2 usage error, 3 input validation failure,
4 processing error. Failures print one JSON object on stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import coco, evaluator, pseudo, stats, stitcher, tiler
from .errors import StomaforgeError

EXIT_USAGE, EXIT_INPUT, EXIT_PROCESSING = 2, 3, 4
CONFIG_KEY = "stomaforge"

DEFAULTS = {
    "patch": tiler.PATCH,
    "stride": tiler.STRIDE,
    "thresholds": dict(pseudo.DEFAULT_THRESHOLDS),
    "empty_patch_mode": "drop_empty",
    "dedup_iou": stitcher.DEDUP_IOU,
    "strict": False,
}


class InputError(Exception):
    """Wraps a failure that happened while reading declared inputs."""

    def __init__(self, payload):
        super().__init__(payload.get("message", ""))
        self.payload = payload


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _fail(EXIT_USAGE, {"error": "UsageError", "message": message})


def _fail(code, payload):
    sys.stderr.write(json.dumps(payload) + "\n")
    raise SystemExit(code)


def _say(line):
    sys.stderr.write(line + "\n")


# -- config -----------------------------------------------------------------

def effective_config(args):
    cfg = dict(DEFAULTS)
    cfg["thresholds"] = dict(DEFAULTS["thresholds"])
    if getattr(args, "config", None):
        raw = _read_json(args.config)
        if not isinstance(raw, dict):
            raise InputError({"error": "MalformedJson", "message": "config must be a JSON object"})
        unknown = set(raw) - set(DEFAULTS)
        if unknown:
            raise InputError({"error": "MalformedJson", "message": f"unknown config keys {sorted(unknown)}"})
        cfg.update(raw)
    for key in ("patch", "stride", "dedup_iou"):
        if getattr(args, key, None) is not None:
            cfg[key] = getattr(args, key)
    if getattr(args, "mode", None):
        cfg["empty_patch_mode"] = args.mode.replace("-", "_")
    if getattr(args, "strict", False):
        cfg["strict"] = True
    thr = getattr(args, "thresholds", None)
    if thr and thr != "default":
        cfg["thresholds"] = _read_json(thr)
    try:
        pseudo.ThresholdPolicy(dict(cfg["thresholds"]))
        tiler.EmptyPatchPolicy.coerce(cfg["empty_patch_mode"])
    except (ValueError, TypeError) as exc:
        raise InputError({"error": "InvalidConfig", "message": str(exc)}) from exc
    return cfg


def _jobs(args):
    if args.jobs is not None:
        return max(1, args.jobs)
    env = os.environ.get("STOMAFORGE_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InputError({"error": "InvalidConfig", "message": f"STOMAFORGE_JOBS={env!r}"}) from None
    return 1


def _provenance(command, cfg):
    return {"command": command, "config": cfg}


# -- I/O --------------------------------------------------------------------

def _read_text(path):
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError({"error": "FileNotReadable", "message": str(exc), "path": str(path)}) from exc


def _read_json(path):
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise InputError({"error": "MalformedJson", "message": str(exc), "path": str(path)}) from exc


def _load_dataset(path):
    try:
        return coco.parse_dataset(_read_text(path))
    except StomaforgeError as exc:
        raise InputError({**exc.to_dict(), "path": str(path)}) from exc


def _load_predictions(path, context):
    try:
        return coco.parse_predictions(_read_text(path), context)
    except StomaforgeError as exc:
        raise InputError({**exc.to_dict(), "path": str(path)}) from exc


def _write_dataset(path, d, command, cfg):
    d = d.replace(extra={**d.extra, CONFIG_KEY: _provenance(command, cfg)})
    _write(path, coco.serialize_dataset(d))


def _write_array(path, text, command, cfg):
    """Arrays cannot carry the config, so it goes to ``<name>.config.json``."""
    _write(path, text)
    _write(Path(path).with_suffix(".config.json"), _dumps(_provenance(command, cfg)))


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True)


def _require_valid(d, strict, path):
    report = coco.validate(d, strict=strict)
    if not report.ok:
        first = report.violations[0]
        raise InputError({"error": "ValidationFailed", "path": str(path), "violations": len(report),
                          "first": first.to_dict()})


# -- subcommands ------------------------------------------------------------

def cmd_validate(args, cfg, jobs):
    d = _load_dataset(args.input)
    report = coco.validate(d, strict=cfg["strict"])
    if args.report:
        _write(args.report, _dumps({**report.to_dict(), CONFIG_KEY: _provenance("validate", cfg)}))
    if not report.ok:
        rules = sorted(set(report.rules()))
        _say(f"invalid: {len(report)} violations ({', '.join(rules)})")
        raise InputError({"error": "ValidationFailed", "violations": len(report),
                          "rules": rules, "first": report.violations[0].to_dict()})
    _say(f"valid: {len(d.images)} images, {len(d.annotations)} annotations, {len(d.categories)} categories")


def cmd_split(args, cfg, jobs):
    d = _load_dataset(args.input)
    if args.spec:
        try:
            spec = stats.SplitSpec.from_dict(_read_json(args.spec))
        except StomaforgeError as exc:
            raise InputError(exc.to_dict()) from exc
    else:
        if args.ratios is None or args.seed is None:
            raise InputError({"error": "UsageError", "message": "give --spec, or --ratios with --seed"})
        try:
            ratios = [float(r) for r in args.ratios.split(",")]
            spec = stats.SplitSpec.from_dict({"ratios": ratios, "seed": args.seed})
        except (ValueError, StomaforgeError) as exc:
            raise InputError({"error": "InvalidSplitSpec", "message": str(exc)}) from exc
    try:
        parts = stats.split_dataset(d, spec)
    except StomaforgeError as exc:
        raise InputError(exc.to_dict()) from exc
    cfg = {**cfg, "split": spec.to_dict()}
    for name, part in zip(stats.SPLITS, parts):
        _write_dataset(Path(args.out) / f"{name}.json", part, "split", cfg)
    _say("split: " + ", ".join(f"{n}={len(p.images)} images/{len(p.annotations)} annotations"
                               for n, p in zip(stats.SPLITS, parts)))


def cmd_tile(args, cfg, jobs):
    d = _load_dataset(args.input)
    _require_valid(d, cfg["strict"], args.input)
    res = tiler.tile_dataset(d, cfg["empty_patch_mode"], cfg["patch"], cfg["stride"], jobs=jobs)
    out = Path(args.out)
    _write_dataset(out / "patches.json", res.dataset, "tile", cfg)
    _write_array(out / "manifest.json", res.manifest_json(), "tile", cfg)
    windows = sum(len(tiler.compute_grid(im.width, im.height, cfg["patch"], cfg["stride"])) for im in d.images)
    _say(f"tile: {len(d.images)} frames -> {windows} windows, {len(res.records)} patches kept "
         f"({windows - len(res.records)} empty dropped), {len(res.dataset.annotations)} annotations, "
         f"{len(res.unassigned)} unassigned")


def cmd_pseudo_filter(args, cfg, jobs):
    patches = _load_dataset(args.patches)
    preds = _load_predictions(args.preds, patches)
    policy = pseudo.ThresholdPolicy(dict(cfg["thresholds"]))
    names = {c.id: c.name for c in patches.categories}
    try:
        policy.covers(patches)
    except StomaforgeError as exc:
        raise InputError(exc.to_dict()) from exc
    kept, dropped = pseudo.filter_predictions(preds, policy, names)
    ds = pseudo.build_pseudo_dataset(patches, kept)
    counts = {"kept": pseudo.class_counts(kept, names), "dropped": pseudo.class_counts(dropped, names)}
    ds = ds.replace(extra={**ds.extra, "pseudo_filter": counts})
    _write_dataset(args.out, ds, "pseudo-filter", cfg)
    with_dets = len({p.image_id for p in kept})
    _say(f"pseudo-filter: kept {len(kept)}, dropped {len(dropped)}; {len(ds.images)} patches "
         f"({with_dets} with detections)")


def cmd_merge(args, cfg, jobs):
    human = _load_dataset(args.human)
    pl = _load_dataset(args.pseudo)
    try:
        merged, report = pseudo.merge_datasets(human, pl)
    except StomaforgeError as exc:
        raise InputError(exc.to_dict()) from exc
    merged = merged.replace(extra={k: v for k, v in merged.extra.items() if k != "pseudo_filter"})
    _write_dataset(args.out, merged, "merge", cfg)
    if args.report:
        _write(args.report, _dumps({**report.to_dict(), CONFIG_KEY: _provenance("merge", cfg)}))
    _say(f"merge: {report.human_images} + {report.pseudo_images} = {len(merged.images)} images, "
         f"{report.human_count} GT + {report.pseudo_count} PL annotations")


def cmd_stitch(args, cfg, jobs):
    frames = _load_dataset(args.frames)
    patches = _load_dataset(args.patches)
    preds = _load_predictions(args.preds, patches)
    try:
        manifest = [tiler.PatchRecord(**r) for r in _read_json(args.manifest)]
    except TypeError as exc:
        raise InputError({"error": "MalformedJson", "message": f"bad manifest: {exc}"}) from exc
    framed = stitcher.stitch(preds, manifest, frames.image_index, cfg["dedup_iou"])
    text = coco.serialize_predictions([f.to_prediction() for f in framed])
    _write_array(args.out, text, "stitch", cfg)
    _say(f"stitch: {len(preds)} patch predictions -> {len(framed)} frame predictions "
         f"on {len({f.source_image_id for f in framed})} frames")


def _load_semantic_preds(path, gt):
    raw = _read_json(path)
    try:
        if isinstance(raw, list):
            grouped = {}
            for p in coco.parse_predictions(json.dumps(raw), gt):
                grouped.setdefault(p.image_id, []).append(p)
            return grouped
        return coco.dataset_from_dict(raw).annotations_by_image
    except StomaforgeError as exc:
        raise InputError({**exc.to_dict(), "path": str(path)}) from exc


def cmd_eval_semantic(args, cfg, jobs):
    gt = _load_dataset(args.gt)
    grouped = _load_semantic_preds(args.pred, gt)
    scores = evaluator.evaluate_semantic(gt, grouped, jobs=jobs)
    if args.out:
        _write(args.out, _dumps({**scores.to_dict(), CONFIG_KEY: _provenance("eval-semantic", cfg)}))
    sys.stdout.write(evaluator.format_semantic_table(scores) + "\n")
    _say(f"eval-semantic: mIoU {scores.miou:.2f}, mAcc {scores.macc:.2f} over {len(gt.images)} images")


def cmd_eval_instance(args, cfg, jobs):
    gt = _load_dataset(args.gt)
    preds = _load_predictions(args.preds, gt)
    res = evaluator.evaluate_instances(gt, preds, jobs=jobs)
    if args.out:
        _write(args.out, _dumps({**res.to_dict(), CONFIG_KEY: _provenance("eval-instance", cfg)}))
    sys.stdout.write(evaluator.format_instance_table(res) + "\n")
    _say(f"eval-instance: AP {100 * res.mAP:.2f}, AP50 {100 * res.AP50:.2f} "
         f"({len(preds)} predictions, {len(gt.annotations)} GT)")


def cmd_stats(args, cfg, jobs):
    d = _load_dataset(args.input)
    summary = stats.class_summary(d)
    payload = {"classes": summary.to_dict()}
    if args.meta:
        counts = {}
        unparsed = 0
        for im in d.images:
            try:
                m = stats.parse_sample_meta(im.file_name, strict=cfg["strict"])
            except StomaforgeError as exc:
                raise InputError({**exc.to_dict(), "image": im.id}) from exc
            if not m.complete:
                unparsed += 1
            for key in ("genotype", "surface", "region", "leaf_level"):
                value = getattr(m, key)
                if value is not None:
                    counts.setdefault(key, {}).setdefault(value, 0)
                    counts[key][value] += 1
        payload["metadata"] = {k: dict(sorted(v.items())) for k, v in sorted(counts.items())}
        payload["metadata"]["incomplete_names"] = unparsed
    if args.csv:
        _write(args.csv, summary.to_csv())
    if args.json:
        _write(args.json, _dumps({**payload, CONFIG_KEY: _provenance("stats", cfg)}))
    else:
        sys.stdout.write(_dumps(payload) + "\n")
    _say("stats: " + ", ".join(f"{n}={c.count}" for n, c in summary.classes.items()))


# -- parser -----------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; explicit flags win")
    common.add_argument("--jobs", type=int, default=None, help="worker processes (env STOMAFORGE_JOBS)")
    common.add_argument("--strict", action="store_true", help="reject category names outside the three classes")

    parser = _Parser(prog="stomaforge", description="Stomatal segmentation dataset pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", parents=[common], help="check a COCO dataset")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("split", parents=[common], help="image-level train/val/test split")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--spec", help="split spec JSON (lists or {ratios, seed})")
    p.add_argument("--ratios", help="train,val,test fractions, e.g. 0.7,0.2,0.1")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("tile", parents=[common], help="cut frames into overlapping patches")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mode", choices=["drop-empty", "keep-empty"])
    p.add_argument("--patch", type=int)
    p.add_argument("--stride", type=int)
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("pseudo-filter", parents=[common], help="threshold predictions into pseudo labels")
    p.add_argument("--preds", required=True)
    p.add_argument("--patches", required=True)
    p.add_argument("--thresholds", default="default", help="'default' or a JSON policy file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pseudo_filter)

    p = sub.add_parser("merge", parents=[common], help="merge human and pseudo datasets")
    p.add_argument("--human", required=True)
    p.add_argument("--pseudo", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("stitch", parents=[common], help="reproject patch predictions onto frames")
    p.add_argument("--preds", required=True)
    p.add_argument("--patches", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iou", dest="dedup_iou", type=float)
    p.set_defaults(func=cmd_stitch)

    p = sub.add_parser("eval-semantic", parents=[common], help="pixel mIoU / mAcc")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True, help="COCO dataset or results array")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_semantic)

    p = sub.add_parser("eval-instance", parents=[common], help="mask AP / AP50")
    p.add_argument("--gt", required=True)
    p.add_argument("--preds", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_instance)

    p = sub.add_parser("stats", parents=[common], help="class counts and coverage quantiles")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--csv")
    p.add_argument("--json")
    p.add_argument("--meta", action="store_true", help="also tabulate filename metadata")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = effective_config(args)
        jobs = _jobs(args)
        args.func(args, cfg, jobs)
    except InputError as exc:
        _fail(EXIT_INPUT, exc.payload)
    except StomaforgeError as exc:
        _fail(EXIT_PROCESSING, exc.to_dict())
    except (OSError, ValueError) as exc:
        _fail(EXIT_PROCESSING, {"error": type(exc).__name__, "message": str(exc)})
    return 0


if __name__ == "__main__":
    sys.exit(main())
