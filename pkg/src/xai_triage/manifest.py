"""Sample manifests and bounding-box cropping.

A manifest is JSON-lines, one sample per line:

    {"image": "img/007.ppm", "boxes": [[12, 4, 96, 40]],
     "shell_boxes": [[0, 0, 24, 24], [30, 8, 24, 24]],
     "label": "broken", "mask": "masks/007.pgm", "split": "test"}

``boxes`` are applied as successive nested crops (stage one isolates
the insulator; usually a single box).  ``shell_boxes`` are relative to
the resulting insulator crop.  Boxes are [x, y, width, height] in
pixels.  Malformed lines are collected as per-line errors, never fatal.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .errors import BoxOutOfBoundsError, CodecError, ManifestError
from .pnm import image_size

log = logging.getLogger(__name__)

CLASSES = ("broken", "flash", "healthy")
DAMAGE_CLASSES = ("broken", "flash")
SPLITS = ("train", "val", "test")

__all__ = [
    "CLASSES",
    "DAMAGE_CLASSES",
    "SPLITS",
    "Box",
    "SampleRecord",
    "ManifestIssue",
    "crop",
    "ingest_manifest",
    "class_index",
]


def class_index(label: str) -> int:
    return CLASSES.index(label)


@dataclass(frozen=True)
class Box:
    x: int
    y: int
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"box {self.as_list()} needs width, height >= 1")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"box {self.as_list()} needs x, y >= 0")

    def as_list(self) -> list[int]:
        return [self.x, self.y, self.width, self.height]

    def fits_in(self, width: int, height: int) -> bool:
        return self.x + self.width <= width and self.y + self.height <= height


@dataclass(frozen=True)
class SampleRecord:
    """One manifest entry; paths are relative to the manifest directory."""

    image: str
    boxes: tuple[Box, ...]
    shell_boxes: tuple[Box, ...]
    label: str | None = None
    mask: str | None = None
    split: str = "test"
    line: int = 0  # manifest line number, used for ordering and reporting

    @property
    def sample_id(self) -> str:
        return f"{Path(self.image).stem}_L{self.line}"


@dataclass(frozen=True)
class ManifestIssue:
    line: int
    message: str


def crop(image, box: Box):
    """Exact sub-image: pixel (u, v) of the output is (x+u, y+v) of the input.

    Out-of-bounds boxes are rejected outright; nothing is clamped.
    """
    h, w = image.shape[:2]
    if not box.fits_in(w, h):
        raise BoxOutOfBoundsError(
            f"box {box.as_list()} does not fit inside {w}x{h} image"
        )
    return image[box.y : box.y + box.height, box.x : box.x + box.width]


def _parse_box(raw, what: str) -> Box:
    if (
        not isinstance(raw, (list, tuple))
        or len(raw) != 4
        or not all(isinstance(v, int) and not isinstance(v, bool) for v in raw)
    ):
        raise ValueError(f"{what} must be [x, y, width, height] integers, got {raw!r}")
    return Box(*raw)


def _parse_record(obj: dict, line: int, base_dir: Path) -> SampleRecord:
    if not isinstance(obj, dict):
        raise ValueError(f"expected a JSON object, got {type(obj).__name__}")
    unknown = set(obj) - {"image", "boxes", "shell_boxes", "label", "mask", "split"}
    if unknown:
        raise ValueError(f"unknown fields {sorted(unknown)}")
    image = obj.get("image")
    if not isinstance(image, str) or not image:
        raise ValueError("field 'image' must be a nonempty string")
    boxes = tuple(_parse_box(b, "boxes entry") for b in obj.get("boxes", []))
    shell_boxes = tuple(_parse_box(b, "shell_boxes entry") for b in obj.get("shell_boxes", []))
    label = obj.get("label")
    if label is not None and label not in CLASSES:
        raise ValueError(f"label {label!r} not in {CLASSES}")
    mask = obj.get("mask")
    if mask is not None and not isinstance(mask, str):
        raise ValueError("field 'mask' must be a string path")
    split = obj.get("split", "test")
    if split not in SPLITS:
        raise ValueError(f"split {split!r} not in {SPLITS}")

    # Bounds check against the actual image header, then down the crop chain.
    width, height = image_size(base_dir / image)
    for b in boxes:
        if not b.fits_in(width, height):
            raise ValueError(
                f"box {b.as_list()} exceeds {width}x{height} bounds of {image}"
            )
        width, height = b.width, b.height
    for b in shell_boxes:
        if not b.fits_in(width, height):
            raise ValueError(
                f"shell box {b.as_list()} exceeds insulator crop {width}x{height}"
            )
    return SampleRecord(image, boxes, shell_boxes, label, mask, split, line)


def ingest_manifest(path) -> tuple[list[SampleRecord], list[ManifestIssue]]:
    """Read a JSONL manifest; invalid lines become issues, valid ones records."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from e
    records: list[SampleRecord] = []
    issues: list[ManifestIssue] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            records.append(_parse_record(obj, lineno, path.parent))
        except (ValueError, CodecError) as e:
            issues.append(ManifestIssue(lineno, str(e)))
    if issues:
        log.warning("manifest %s: %d invalid line(s)", path, len(issues))
    return records, issues
