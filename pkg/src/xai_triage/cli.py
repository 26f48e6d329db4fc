"""Command-line surface.

Subcommands wrap the library operations: crop | classify | explain |
gate | sweep | retrain-head | eval-tki | run.  Runtime failures exit
nonzero with a one-line JSON error report on stderr.  The env var
XAI_TRIAGE_LOG sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, XaiTriageError
from .manifest import CLASSES, class_index, crop, ingest_manifest
from .model_io import load_model, save_model
from .nn import Dense, Network
from .pipeline import PipelineConfig, eval_tki, run_pipeline
from .pnm import write_ppm
from .rebalance import SolverConfig, rebalance_head
from .sharpness import sharpness_score, sweep_to_csv, sweep_thresholds

log = logging.getLogger(__name__)


def _parse_emphasis(spec: str) -> dict:
    out = {}
    for part in spec.split(","):
        if "=" not in part:
            raise ConfigError(f"emphasis must look like 'broken=2.0', got {part!r}")
        name, _, factor = part.partition("=")
        name = name.strip()
        if name not in CLASSES:
            raise ConfigError(f"emphasis class {name!r} not in {CLASSES}")
        try:
            out[name] = float(factor)
        except ValueError as e:
            raise ConfigError(f"bad emphasis factor in {part!r}") from e
    return out


def _parse_thresholds(spec: str) -> list[float]:
    """Either '0,5,10' or an inclusive 'start..stop:step' range."""
    try:
        if ".." in spec:
            start_s, _, rest = spec.partition("..")
            stop_s, _, step_s = rest.partition(":")
            start, stop = float(start_s), float(stop_s)
            step = float(step_s) if step_s else 1.0
            if step <= 0 or stop < start:
                raise ValueError
            n = int(round((stop - start) / step))
            values = [start + i * step for i in range(n + 1)]
            return [v for v in values if v <= stop + 1e-12]
        return [float(v) for v in spec.split(",")]
    except ValueError:
        raise ConfigError(f"bad thresholds spec {spec!r}") from None


def _config(args) -> PipelineConfig:
    overrides = {
        "out_dir": getattr(args, "out", None),
        "seed": getattr(args, "seed", None),
        "sharpness_threshold": getattr(args, "threshold", None),
        "tki_k": getattr(args, "k", None),
        "head": getattr(args, "head", None),
    }
    emphasis = getattr(args, "emphasis", None)
    if emphasis:
        overrides["emphasis"] = _parse_emphasis(emphasis)
    return PipelineConfig.from_file(args.config, **overrides)


def _shell_images(manifest_path):
    """Yield (record, shell index, float image) over all valid records."""
    from .pipeline import _load_float_image

    records, _ = ingest_manifest(manifest_path)
    base = Path(manifest_path).parent
    for record in records:
        img = _load_float_image(base / record.image)
        for box in record.boxes:
            img = crop(img, box)
        shells = [crop(img, b) for b in record.shell_boxes] if record.shell_boxes else [img]
        for i, shell in enumerate(shells):
            yield record, i, shell


def _cmd_crop(args) -> int:
    from .pipeline import _load_float_image

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records, issues = ingest_manifest(args.manifest)
    base = Path(args.manifest).parent
    written = []
    for record in records:
        img = _load_float_image(base / record.image)
        for box in record.boxes:
            img = crop(img, box)
        shells = [crop(img, b) for b in record.shell_boxes] if record.shell_boxes else [img]
        for i, shell in enumerate(shells):
            u8 = np.round(np.clip(shell, 0.0, 1.0) * 255.0).astype(np.uint8)
            if u8.ndim == 2:
                u8 = np.repeat(u8[:, :, None], 3, axis=2)
            name = f"{record.sample_id}_{i}.ppm"
            write_ppm(u8, out / name)
            written.append(name)
    print(json.dumps({"crops": written,
                      "issues": [{"line": i.line, "message": i.message} for i in issues]},
                     indent=2, sort_keys=True))
    return 0


def _cmd_gate(args) -> int:
    from .sharpness import to_luminance

    kept, discarded = [], []
    for record, i, shell in _shell_images(args.manifest):
        gray = to_luminance(shell) if shell.ndim == 3 else shell
        v, v_norm = sharpness_score(gray)
        score = v if args.variant == "raw" else v_norm
        entry = {"line": record.line, "shell": i, "image": record.image,
                 "score": score, "raw": v}
        (kept if score >= args.threshold else discarded).append(entry)
    print(json.dumps({"threshold": args.threshold, "variant": args.variant,
                      "kept": kept, "discarded": discarded}, indent=2, sort_keys=True))
    return 0


def _cmd_classify(args) -> int:
    cfg = _config(args)
    report = run_pipeline(cfg, args.manifest, explain_mode="never", skip_gate=True)
    print(json.dumps(report.aggregates, indent=2, sort_keys=True))
    return 0


def _cmd_explain(args) -> int:
    cfg = _config(args)
    report = run_pipeline(cfg, args.manifest, explain_mode="all", skip_gate=True,
                          dump_relevance=True, only_line=args.line)
    heatmaps = [sh.heatmap for s in report.samples for sh in s.shells if sh.heatmap]
    print(json.dumps({"heatmaps": heatmaps, "out_dir": cfg.out_dir}, indent=2, sort_keys=True))
    return 0


def _cmd_sweep(args) -> int:
    cfg = _config(args)
    thresholds = _parse_thresholds(args.thresholds)
    net = load_model(cfg.model)
    if cfg.head:
        from .rebalance import head_of, replace_head

        net = replace_head(net, head_of(load_model(cfg.head)))
    from .pipeline import _to_net_input

    pairs = []
    for record, i, shell in _shell_images(args.manifest):
        if record.label is None:
            continue
        pairs.append((_to_net_input(shell, net.input_shape), class_index(record.label)))
    points = sweep_thresholds(net, pairs, sorted(thresholds), cfg.sharpness_variant)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sweep_to_csv(points, CLASSES, out / "sweep.csv")
    print(json.dumps({"rows": len(points), "csv": str(out / "sweep.csv")},
                     indent=2, sort_keys=True))
    return 0


def _cmd_retrain_head(args) -> int:
    cfg = _config(args)
    net = load_model(cfg.model)
    records, _ = ingest_manifest(args.manifest)
    records = [r for r in records if r.split == args.split and r.label is not None]
    if not records:
        raise ConfigError(f"manifest has no labeled records in split {args.split!r}")
    base = Path(args.manifest).parent
    from .pipeline import _load_float_image, _to_net_input

    samples = []
    for record in records:
        img = _load_float_image(base / record.image)
        for box in record.boxes:
            img = crop(img, box)
        shells = [crop(img, b) for b in record.shell_boxes] if record.shell_boxes else [img]
        for shell in shells:
            samples.append((_to_net_input(shell, net.input_shape), class_index(record.label)))
    emphasis = {class_index(name): f for name, f in cfg.emphasis.items()}
    head = rebalance_head(net, samples, num_partitions=cfg.partitions, seed=cfg.seed,
                          emphasis=emphasis, solver=SolverConfig())
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    head_net = Network([Dense(head.weights.T, head.bias)],
                       (head.weights.shape[0],), head.weights.shape[1])
    save_model(head_net, out / "head.model")
    print(json.dumps({"head": str(out / "head.model"), "samples": len(samples),
                      "partitions": cfg.partitions, "seed": cfg.seed},
                     indent=2, sort_keys=True))
    return 0


def _cmd_eval_tki(args) -> int:
    cfg = _config(args)
    report = eval_tki(cfg, args.manifest)
    print(json.dumps({"mean_tki": report.aggregates["mean_tki"],
                      "tki_count": report.aggregates["tki_count"]},
                     indent=2, sort_keys=True))
    return 0


def _cmd_run(args) -> int:
    cfg = _config(args)
    report = run_pipeline(cfg, args.manifest)
    print(json.dumps(report.aggregates, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xai-triage",
        description="Insulator-shell anomaly triage: crop, classify, rebalance, "
                    "explain, gate, and score.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, out=True):
        if config:
            p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--manifest", required=True, help="JSONL sample manifest")
        if out:
            p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="partition seed override")
        p.add_argument("--threshold", type=float, help="sharpness threshold override")
        p.add_argument("--k", type=int, help="top-k pixel count override")
        p.add_argument("--emphasis", help="fault-class weight factors, e.g. broken=2.0")
        p.add_argument("--head", help="replacement head in model format")

    p = sub.add_parser("crop", help="write insulator/shell crops as PPM files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_crop)

    p = sub.add_parser("classify", help="classify every shell (no gating, no heatmaps)")
    common(p)
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("explain", help="heatmap + raw relevance dump for samples")
    common(p)
    p.add_argument("--line", type=int, help="only the record at this manifest line")
    p.set_defaults(func=_cmd_explain)

    p = sub.add_parser("gate", help="split shells by sharpness score")
    p.add_argument("--manifest", required=True)
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--variant", choices=("raw", "normalized"), default="normalized")
    p.set_defaults(func=_cmd_gate)

    p = sub.add_parser("sweep", help="accuracy-versus-threshold CSV")
    common(p)
    p.add_argument("--thresholds", required=True,
                   help="comma list '0,5,10' or inclusive range '0..50:5'")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("retrain-head", help="rebalanced head via partitioned regression")
    common(p)
    p.add_argument("--split", default="train", help="manifest split to train on")
    p.set_defaults(func=_cmd_retrain_head)

    p = sub.add_parser("eval-tki", help="localization quality over mask-bearing samples")
    common(p)
    p.set_defaults(func=_cmd_eval_tki)

    p = sub.add_parser("run", help="full pipeline: gate, classify, explain, score")
    common(p)
    p.set_defaults(func=_cmd_run)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("XAI_TRIAGE_LOG", "WARNING"))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except XaiTriageError as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
