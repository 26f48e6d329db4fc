"""End-to-end orchestration: manifest in, report and heatmaps out.

Per record: nested insulator crop, shell crops, sharpness gating,
classification of kept shells, heatmaps for shells predicted as a
damage class, top-k localization scores where a mask is present.
Failures are isolated per record; the report aggregates are always
recomputable from the per-sample rows.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, XaiTriageError
from .lrp import BasicRule, EpsilonRule, GammaRule, RuleConfig, ZBoundsRule, relevance
from .locmetrics import default_k, tki, top_k_mask
from .manifest import CLASSES, DAMAGE_CLASSES, SampleRecord, class_index, crop, ingest_manifest
from .model_io import load_model
from .nn import Network, forward
from .pnm import load_image, load_mask, write_ppm
from .rebalance import accuracy_from_predictions, head_of, replace_head
from .render import render_heatmap
from .sharpness import sharpness_score, sweep_to_csv, sweep_thresholds, to_luminance

log = logging.getLogger(__name__)

__all__ = ["PipelineConfig", "RunReport", "ShellRow", "SampleRow", "run_pipeline", "eval_tki"]


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run needs; loadable from a JSON file.

    Paths in the file are resolved relative to the file's directory.
    """

    model: str
    out_dir: str
    head: str | None = None  # optional replacement head (model format)
    rules: RuleConfig = field(default_factory=RuleConfig.default)
    partitions: int = 10
    seed: int = 0
    emphasis: dict = field(default_factory=lambda: {"broken": 2.0})
    sharpness_variant: str = "normalized"
    sharpness_threshold: float = 0.0
    tki_k: int | None = None
    explain_all: bool = False
    sweep: tuple = ()
    workers: int = 1

    def __post_init__(self):
        if self.sharpness_variant not in ("raw", "normalized"):
            raise ConfigError(f"sharpness variant {self.sharpness_variant!r} invalid")
        if self.sharpness_threshold < 0:
            raise ConfigError("sharpness threshold must be >= 0")
        if self.partitions < 1:
            raise ConfigError("partitions must be >= 1")
        if self.tki_k is not None and self.tki_k < 1:
            raise ConfigError("tki_k must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for name in self.emphasis:
            if name not in CLASSES:
                raise ConfigError(f"emphasis class {name!r} not in {CLASSES}")

    @classmethod
    def from_file(cls, path, **overrides) -> "PipelineConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot load config {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = {
            "model", "out_dir", "head", "rules", "partitions", "seed", "emphasis",
            "sharpness_variant", "sharpness_threshold", "tki_k", "explain_all",
            "sweep", "workers",
        }
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        if "rules" in raw:
            raw["rules"] = parse_rules(raw["rules"])
        if "sweep" in raw:
            raw["sweep"] = tuple(float(t) for t in raw["sweep"])
        base = path.parent
        for key in ("model", "head", "out_dir"):
            if raw.get(key):
                raw[key] = str((base / raw[key]))
        raw.update({k: v for k, v in overrides.items() if v is not None})
        if "model" not in raw or "out_dir" not in raw:
            raise ConfigError("config needs at least 'model' and 'out_dir'")
        try:
            cfg = cls(**raw)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e
        if not Path(cfg.model).is_file():
            raise ConfigError(f"model file not found: {cfg.model}")
        if cfg.head and not Path(cfg.head).is_file():
            raise ConfigError(f"head file not found: {cfg.head}")
        return cfg


_RULE_NAMES = {"basic": BasicRule, "epsilon": EpsilonRule, "gamma": GammaRule, "zbounds": ZBoundsRule}


def parse_rules(raw) -> RuleConfig:
    """Rule config from JSON: a preset name or per-slot rule objects.

    {"preset": "default", "low": 0.0, "high": 1.0}  or
    {"dense": {"rule": "epsilon", "epsilon": 1e-6}, "conv": {"rule": "gamma", "gamma": 0.25},
     "first_layer": {"rule": "zbounds", "low": 0, "high": 1}}
    """
    if isinstance(raw, RuleConfig):
        return raw
    if not isinstance(raw, dict):
        raise ConfigError(f"rules must be an object, got {type(raw).__name__}")
    if "preset" in raw:
        preset = raw["preset"]
        if preset == "basic":
            return RuleConfig.pure_basic()
        if preset == "default":
            return RuleConfig.default(raw.get("low", 0.0), raw.get("high", 1.0))
        raise ConfigError(f"unknown rules preset {preset!r}")
    slots = {}
    for slot, value in raw.items():
        if slot not in ("dense", "conv", "pool", "first_layer"):
            raise ConfigError(f"unknown rules slot {slot!r}")
        if not isinstance(value, dict) or "rule" not in value:
            raise ConfigError(f"rules slot {slot!r} needs an object with a 'rule' name")
        kwargs = {k: v for k, v in value.items() if k != "rule"}
        try:
            slots[slot] = _RULE_NAMES[value["rule"]](**kwargs)
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"rules slot {slot!r}: {e}") from e
    try:
        return RuleConfig(**slots)
    except ValueError as e:
        raise ConfigError(str(e)) from e


@dataclass
class ShellRow:
    index: int
    sharpness_raw: float | None = None
    sharpness: float | None = None
    kept: bool | None = None
    prediction: str | None = None
    logits: list | None = None
    tki: float | None = None
    tki_k: int | None = None
    heatmap: str | None = None
    error: str | None = None


@dataclass
class SampleRow:
    line: int
    image: str
    label: str | None
    split: str
    shells: list[ShellRow] = field(default_factory=list)
    error: str | None = None


@dataclass
class RunReport:
    samples: list[SampleRow]
    manifest_issues: list
    aggregates: dict

    def to_json(self) -> str:
        doc = {
            "samples": [
                {
                    "line": s.line,
                    "image": s.image,
                    "label": s.label,
                    "split": s.split,
                    "error": s.error,
                    "shells": [
                        {k: v for k, v in vars(sh).items() if not k.startswith("_")}
                        for sh in s.shells
                    ],
                }
                for s in self.samples
            ],
            "manifest_issues": [
                {"line": i.line, "message": i.message} for i in self.manifest_issues
            ],
            "aggregates": self.aggregates,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _to_net_input(shell: np.ndarray, input_shape: tuple) -> np.ndarray:
    """Adapt an (H, W[, 3]) float image to the network's declared input."""
    if shell.ndim == 3:
        gray = to_luminance(shell)
        chw = np.moveaxis(shell, -1, 0)
    else:
        gray = shell
        chw = None
    if len(input_shape) == 3:
        c = input_shape[0]
        if c == 1:
            x = gray[None, :, :]
        elif c == 3:
            if chw is None:
                raise ValueError("network wants 3 channels but the image is grayscale")
            x = chw
        else:
            raise ValueError(f"unsupported channel count {c}")
    elif len(input_shape) == 2:
        x = gray
    elif len(input_shape) == 1:
        x = gray.reshape(-1)
    else:
        raise ValueError(f"unsupported input shape {input_shape}")
    if x.shape != tuple(input_shape):
        raise ValueError(f"shell shape {x.shape} does not match model input {tuple(input_shape)}")
    return x


def _load_float_image(path: Path) -> np.ndarray:
    return load_image(path).astype(np.float64) / 255.0


def _gray_of(img: np.ndarray) -> np.ndarray:
    return to_luminance(img) if img.ndim == 3 else img


def _process_record(record: SampleRecord, net: Network, cfg: PipelineConfig,
                    base_dir: Path, explain_mode: str, skip_gate: bool,
                    dump_relevance: bool = False) -> SampleRow:
    row = SampleRow(record.line, record.image, record.label, record.split)
    try:
        img = _load_float_image(base_dir / record.image)
        for box in record.boxes:
            img = crop(img, box)
        mask = load_mask(base_dir / record.mask) if record.mask else None
        shells = [crop(img, b) for b in record.shell_boxes] if record.shell_boxes else [img]
    except (XaiTriageError, ValueError, OSError) as e:
        row.error = str(e)
        return row

    for i, shell in enumerate(shells):
        srow = ShellRow(index=i)
        row.shells.append(srow)
        try:
            gray = _gray_of(shell)
            v, v_norm = sharpness_score(gray)
            srow.sharpness_raw = v
            srow.sharpness = v_norm
            score = v if cfg.sharpness_variant == "raw" else v_norm
            srow.kept = skip_gate or bool(score >= cfg.sharpness_threshold)
            if not srow.kept:
                continue
            x = _to_net_input(shell, net.input_shape)
            logits, trace = forward(net, x, trace=True)
            pred = int(np.argmax(logits))
            srow.prediction = CLASSES[pred]
            srow.logits = [float(v) for v in logits]
            if record.label is not None:
                srow._labeled = (class_index(record.label), pred)  # for the aggregator
            explain = explain_mode == "all" or (
                explain_mode == "damage" and srow.prediction in DAMAGE_CLASSES
            )
            if explain:
                h = relevance(net, trace, pred, cfg.rules)
                srow.heatmap = f"heatmaps/{record.sample_id}_{i}.ppm"
                srow._rendered = render_heatmap(h, shell)
                if dump_relevance:
                    srow._relevance = np.ascontiguousarray(h.values, dtype="<f4").tobytes()
                if mask is not None and mask.shape == h.values.shape:
                    k = cfg.tki_k or default_k(h.height, h.width)
                    srow.tki_k = k
                    srow.tki = tki(mask, top_k_mask(h, k), k)
                elif mask is not None:
                    srow.error = (
                        f"mask shape {mask.shape} does not match heatmap "
                        f"{h.values.shape}; tki skipped"
                    )
        except (XaiTriageError, ValueError, OSError) as e:
            srow.error = str(e)
    return row


def _aggregate(samples: list[SampleRow]) -> dict:
    labels, preds, tkis = [], [], []
    kept = discarded = errors = 0
    for s in samples:
        if s.error:
            errors += 1
            continue
        for sh in s.shells:
            if sh.error is not None:
                errors += 1
            if sh.kept:
                kept += 1
            elif sh.kept is False:
                discarded += 1
            pair = getattr(sh, "_labeled", None)
            if pair is not None:
                labels.append(pair[0])
                preds.append(pair[1])
            if sh.tki is not None:
                tkis.append(sh.tki)
    per_class, macro = accuracy_from_predictions(labels, preds)
    return {
        "per_class_accuracy": {CLASSES[c]: acc for c, acc in per_class.items()},
        "macro_accuracy": macro,
        "mean_tki": float(np.mean(tkis)) if tkis else None,
        "tki_count": len(tkis),
        "shells_kept": kept,
        "shells_discarded": discarded,
        "errors": errors,
    }


def run_pipeline(cfg: PipelineConfig, manifest_path, records=None,
                 explain_mode: str | None = None, skip_gate: bool = False,
                 dump_relevance: bool = False, only_line: int | None = None) -> RunReport:
    """Run the full pipeline and write report.json plus heatmap files.

    ``records`` bypasses manifest ingestion when already available.
    ``explain_mode`` is "damage" (heatmaps only for damage-class
    predictions; the default), "all", or "never".  Deterministic:
    identical config, manifest, and seed produce byte-identical outputs.
    """
    if explain_mode is None:
        explain_mode = "all" if cfg.explain_all else "damage"
    if explain_mode not in ("damage", "all", "never"):
        raise ConfigError(f"unknown explain mode {explain_mode!r}")

    net = load_model(cfg.model)
    if cfg.head:
        head_net = load_model(cfg.head)
        net = replace_head(net, head_of(head_net))

    manifest_path = Path(manifest_path)
    base_dir = manifest_path.parent
    if records is None:
        records, issues = ingest_manifest(manifest_path)
    else:
        issues = []
    if only_line is not None:
        records = [r for r in records if r.line == only_line]
        if not records:
            raise ConfigError(f"manifest has no valid record at line {only_line}")

    out_dir = Path(cfg.out_dir)
    (out_dir / "heatmaps").mkdir(parents=True, exist_ok=True)

    def work(record):
        return _process_record(record, net, cfg, base_dir, explain_mode, skip_gate,
                               dump_relevance)

    ordered = sorted(records, key=lambda r: r.line)
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(work, ordered))
    else:
        rows = [work(r) for r in ordered]

    # Deterministic ordered reduction: write artifacts in manifest order.
    for row in rows:
        for sh in row.shells:
            rendered = getattr(sh, "_rendered", None)
            if rendered is not None and sh.heatmap:
                write_ppm(rendered, out_dir / sh.heatmap)
                blob = getattr(sh, "_relevance", None)
                if blob is not None:
                    relpath = sh.heatmap.replace(".ppm", ".relevance")
                    (out_dir / relpath).write_bytes(blob)

    aggregates = _aggregate(rows)
    report = RunReport(rows, issues, aggregates)

    if cfg.sweep:
        pairs = _labeled_inputs(rows, records, net, base_dir)
        points = sweep_thresholds(net, pairs, sorted(cfg.sweep), cfg.sharpness_variant)
        aggregates["sweep"] = [
            {
                "threshold": p.threshold,
                "kept_count": p.kept_count,
                "per_class": {CLASSES[c]: a for c, a in p.per_class.items()},
                "macro": p.macro,
            }
            for p in points
        ]
        sweep_to_csv(points, CLASSES, out_dir / "sweep.csv")

    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    return report


def _labeled_inputs(rows, records, net, base_dir) -> list:
    """(input tensor, label) pairs for every labeled, loadable shell."""
    by_line = {r.line: r for r in records}
    pairs = []
    for row in rows:
        record = by_line[row.line]
        if row.error or record.label is None:
            continue
        try:
            img = _load_float_image(base_dir / record.image)
            for box in record.boxes:
                img = crop(img, box)
            shells = [crop(img, b) for b in record.shell_boxes] if record.shell_boxes else [img]
            for shell in shells:
                pairs.append((_to_net_input(shell, net.input_shape), class_index(record.label)))
        except (XaiTriageError, ValueError, OSError):
            continue
    return pairs


def eval_tki(cfg: PipelineConfig, manifest_path, records=None) -> RunReport:
    """Localization-quality evaluation: heatmaps are forced for every
    mask-bearing sample regardless of gating or predicted class."""
    return run_pipeline(cfg, manifest_path, records, explain_mode="all", skip_gate=True)
