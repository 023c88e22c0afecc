"""Command-line entry point: dataset, train, infer, eval, rf."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .datapipe import generate_scene, scene_seed, polygons_from_geojson, polygons_to_geojson, rasterize
from .evaluation import TSV_COLUMNS, Metrics, as_field, evaluate_fields, summarize
from .io import overlay, read_fgrid, read_png, write_fgrid, write_png
from .labels import LabelField, expectation_decode, threshold_readout
from .netgraph import (NetworkSpec, ParamSet, forward, full_network, init_params, load_checkpoint,
                       receptive_field_trace, save_checkpoint, stage_extents)
from .tensor import ShapeError
from .trainer import Sample, train

log = logging.getLogger("bldgseg")

MANIFEST = "manifest.json"


class CommandError(Exception):
    def __init__(self, kind: str, msg: str):
        super().__init__(msg)
        self.kind = kind


# ---------------------------------------------------------------------------
# dataset


def cmd_dataset(cfg: cfgmod.RunConfig, count: int, out_dir) -> dict:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CommandError("io", f"cannot create {out}: {e}") from None
    entries = []
    for i in range(count):
        seed = scene_seed(cfg.seed, i)
        s = generate_scene(seed, cfg.scene)
        name = f"sample_{i:04d}"
        try:
            write_png(out / f"{name}.png", s.image)
            write_fgrid(out / f"{name}.fgrid", s.mask)
            (out / f"{name}.geojson").write_text(json.dumps(polygons_to_geojson(s.polygons)))
        except OSError as e:
            raise CommandError("io", f"cannot write {name}: {e}") from None
        entries.append({"name": name, "seed": seed, "image": f"{name}.png", "mask": f"{name}.fgrid",
                        "polygons": f"{name}.geojson", "buildings": len(s.polygons),
                        "notes": s.notes})
    manifest = {"version": 1, "tile": cfg.scene.tile, "samples": entries}
    try:
        (out / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    except OSError as e:
        raise CommandError("io", f"cannot write manifest: {e}") from None
    return manifest


def read_manifest(data_dir) -> dict:
    path = Path(data_dir) / MANIFEST
    try:
        manifest = json.loads(path.read_text())
        manifest["samples"]
    except (OSError, ValueError, KeyError) as e:
        raise CommandError("manifest", f"{path}: {e}") from None
    return manifest


def load_sample(data_dir, entry, check_polygons: bool = True):
    """Return (image, mask, polygons) for one manifest entry."""
    d = Path(data_dir)
    current = entry.get("image", "?")
    try:
        image = read_png(d / entry["image"])
        current = entry["mask"]
        mask = read_fgrid(d / entry["mask"])
        current = entry["polygons"]
        polygons = polygons_from_geojson((d / entry["polygons"]).read_text())
    except Exception as e:  # any decode failure is reported against the file
        raise CommandError("corrupt-sample", f"{d / current}: {e}") from None
    if not np.isin(mask, (0, 1)).all():
        raise CommandError("corrupt-sample", f"{d / entry['mask']}: mask is not binary")
    mask = mask.astype(np.uint8)
    if check_polygons and not np.array_equal(
            mask, rasterize([p.scaled(mask.shape[0] / image.shape[0]) for p in polygons], *mask.shape)):
        raise CommandError("corrupt-sample", f"{d / entry['mask']}: mask disagrees with polygons")
    return image, mask, polygons


# ---------------------------------------------------------------------------
# inference


def infer_field(spec: NetworkSpec, params: ParamSet, image) -> np.ndarray:
    """Decoded signed-distance field, rounded to float32 as stored on disk."""
    probs, _ = forward(spec, params, image)
    return expectation_decode(probs, tol=1e-4).astype(np.float32)


def cmd_infer(cfg: cfgmod.RunConfig, checkpoint, image_path, out_prefix):
    try:
        spec, params = load_checkpoint(checkpoint)
    except (OSError, ValueError) as e:
        raise CommandError("checkpoint", str(e)) from None
    params = params.astype(np.float64 if cfg.precision == 64 else np.float32)
    try:
        image = read_png(image_path)
    except OSError as e:
        raise CommandError("io", f"{image_path}: {e}") from None
    h, w = image.shape[:2]
    try:
        field = infer_field(spec, params, image)
    except ShapeError as e:
        hint = f"pad or crop to {((h + 15) // 16) * 16}x{((w + 15) // 16) * 16} or {h // 16 * 16}x{w // 16 * 16}"
        raise CommandError("shape", f"{e}; {hint}") from None
    building, boundary = threshold_readout(field)
    prefix = str(out_prefix)
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    write_fgrid(prefix + ".fgrid", field)
    write_png(prefix + "_building.png", overlay(image, building, np.zeros_like(boundary)))
    write_png(prefix + "_boundary.png", overlay(image, np.zeros_like(building), boundary))
    return field


# ---------------------------------------------------------------------------
# training


def cmd_train(cfg: cfgmod.RunConfig, data_dir, out_checkpoint, log_path=None):
    manifest = read_manifest(data_dir)
    samples = []
    for entry in manifest["samples"]:
        image, mask, _ = load_sample(data_dir, entry)
        samples.append(Sample(image, LabelField.from_mask(mask).class_index, entry["name"]))
    if not samples:
        raise CommandError("dataset", f"{data_dir}: manifest lists no samples")
    spec = cfg.network.build()
    tcfg = cfg.train_config()
    out = Path(out_checkpoint)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = Path(log_path) if log_path else out.with_suffix(out.suffix + ".log")
    if tcfg.epochs == 0:
        params = init_params(spec, tcfg.seed, tcfg.dtype)
        save_checkpoint(out, spec, params)
        log_path.write_text("")
        return params, []
    with open(log_path, "w") as fh:
        result = train(spec, samples, tcfg, log_file=fh)
    save_checkpoint(out, spec, result.best_params)

    # validation metrics as cmd_infer + cmd_eval would compute them
    _, stored = load_checkpoint(out, dtype=tcfg.dtype)
    rows = []
    for i in result.val_indices:
        s = samples[i]
        field = infer_field(spec, stored, s.image)
        gt = read_fgrid(Path(data_dir) / manifest["samples"][i]["mask"])
        rows.append((s.name, evaluate_field(field, gt, cfg.eval.min_area)))
    with open(out.with_suffix(out.suffix + ".val.tsv"), "w") as fh:
        fh.write("\t".join(TSV_COLUMNS) + "\n")
        for name, m in rows:
            fh.write(m.row(name) + "\n")
    return result.best_params, result.log


def evaluate_field(field, gt_grid, min_area: int = 4) -> Metrics:
    return evaluate_fields(as_field(field), as_field(gt_grid), min_area)


# ---------------------------------------------------------------------------
# evaluation


def cmd_eval(cfg: cfgmod.RunConfig, pred_dir, gt_dir):
    """Per-image metrics for every `*.fgrid` in pred_dir against the same name in gt_dir."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    preds = sorted(pred_dir.glob("*.fgrid"))
    if not preds:
        raise CommandError("missing", f"{pred_dir}: no .fgrid predictions")
    rows = []
    for p in preds:
        g = gt_dir / p.name
        if not g.exists():
            raise CommandError("missing", f"no ground truth {g} for prediction {p}")
        try:
            field = read_fgrid(p)
            gt = read_fgrid(g)
        except (OSError, ValueError) as e:
            raise CommandError("format", str(e)) from None
        if field.shape != gt.shape:
            raise CommandError("shape", f"{p.name}: prediction {field.shape} vs ground truth {gt.shape}")
        rows.append((p.stem, evaluate_field(field, gt, cfg.eval.min_area)))
    return rows, summarize(m for _, m in rows)


def format_eval(rows, mean: Metrics) -> str:
    lines = ["\t".join(TSV_COLUMNS)]
    lines += [m.row(name) for name, m in rows]
    lines.append("")
    lines.append(mean.report().rstrip("\n"))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# receptive field


def cmd_rf(spec_file, size: int = 512) -> str:
    if spec_file == "full":
        spec = full_network()
    else:
        try:
            text = Path(spec_file).read_text()
        except OSError as e:
            raise CommandError("io", f"{spec_file}: {e}") from None
        try:
            spec = NetworkSpec.from_text(text)
        except ValueError as e:
            raise CommandError("parse", f"{spec_file}: {e}") from None
    return rf_report(spec, size)


def rf_report(spec: NetworkSpec, size: int = 512) -> str:
    """Per-stage R(i) and output extents, then the totals as key=value lines."""
    trace = receptive_field_trace(spec)
    m = len(spec.stages)
    lines = ["stage\tfilters\tsize\tpool\ttap\tR\textent"]
    extents = stage_extents(spec, size, size)
    for i, s in enumerate(spec.stages, 1):
        h, w, c = extents[i - 1]
        lines.append(f"{i}\t{s.filter_count}\t{s.filter_size}\t{s.pool}\t{int(s.tapped)}\t"
                     f"{trace[m - i]}\t{h}x{w}x{c}")
    lines.append(f"fusion_input_channels={spec.fusion_input_channels}")
    lines.append(f"receptive_field={trace[-1]}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="bldgseg", description=__doc__)
    ap.add_argument("--config", help="INI run configuration")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--precision", type=int, choices=(32, 64))
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="generate synthetic scenes")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train on a generated dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="epoch log path (default: <out>.log)")

    p = sub.add_parser("infer", help="predict a signed-distance field for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output prefix")

    p = sub.add_parser("eval", help="score predicted fields against ground-truth masks")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)

    p = sub.add_parser("rf", help="receptive-field report for a network spec file")
    p.add_argument("spec", help="spec file, or 'full'")
    p.add_argument("--size", type=int, default=512)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        cfg = cfgmod.load_config(args.config) if args.config else cfgmod.RunConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.precision is not None:
            cfg.precision = args.precision

        if args.command == "dataset":
            m = cmd_dataset(cfg, args.count, args.out)
            print(f"wrote {len(m['samples'])} samples to {args.out}")
        elif args.command == "train":
            _, records = cmd_train(cfg, args.data, args.out, args.log)
            if records:
                print(f"epochs={len(records)} final_loss={records[-1].train_loss:.6f} "
                      f"best_val_error={min(r.val_error for r in records):.6f}")
            print(f"checkpoint={args.out}")
        elif args.command == "infer":
            f = cmd_infer(cfg, args.checkpoint, args.image, args.out)
            print(f"field={args.out}.fgrid shape={f.shape[0]}x{f.shape[1]}")
        elif args.command == "eval":
            rows, mean = cmd_eval(cfg, args.pred, args.gt)
            sys.stdout.write(format_eval(rows, mean))
        elif args.command == "rf":
            sys.stdout.write(cmd_rf(args.spec, args.size))
    except CommandError as e:
        print(f"error\t{e.kind}\t{e}".replace("\n", " "), file=sys.stderr)
        return 2
    except cfgmod.ConfigError as e:
        print(f"error\tconfig\t{e}".replace("\n", " "), file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"error\t{type(e).__name__}\t{e}".replace("\n", " "), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
