"""Bit-exact binary PPM (P6) and PGM (P5) reader/writer.

The canonical interchange format for every image this package touches.
Writers emit the minimal canonical header (``P6\\n<w> <h>\\n255\\n``), so
identical arrays always produce identical bytes.  PNG import is an
optional convenience behind a Pillow boundary.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import CodecError

__all__ = [
    "read_ppm",
    "read_pgm",
    "write_ppm",
    "write_pgm",
    "load_image",
    "load_mask",
    "image_size",
]


def _read_header(buf: bytes, expect_magic: bytes):
    """Parse a PNM header; returns (width, height, maxval, payload offset)."""
    if buf[:2] != expect_magic:
        raise CodecError(f"bad magic {buf[:2]!r}, expected {expect_magic!r}")
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(buf):
            raise CodecError("truncated header")
        c = buf[pos : pos + 1]
        if c == b"#":  # comment runs to end of line
            nl = buf.find(b"\n", pos)
            if nl == -1:
                raise CodecError("truncated comment")
            pos = nl + 1
        elif c.isspace():
            pos += 1
        elif c.isdigit():
            start = pos
            while pos < len(buf) and buf[pos : pos + 1].isdigit():
                pos += 1
            fields.append(int(buf[start:pos]))
        else:
            raise CodecError(f"unexpected byte {c!r} in header at offset {pos}")
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise CodecError("missing whitespace after maxval")
    pos += 1  # exactly one whitespace byte separates header and payload
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise CodecError(f"bad dimensions {width}x{height}")
    if not 0 < maxval <= 255:
        raise CodecError(f"unsupported maxval {maxval} (only 8-bit supported)")
    return width, height, maxval, pos


def _read_payload(buf: bytes, pos: int, count: int) -> np.ndarray:
    if len(buf) - pos < count:
        raise CodecError(f"payload truncated: need {count} bytes, have {len(buf) - pos}")
    if len(buf) - pos > count:
        raise CodecError(f"{len(buf) - pos - count} trailing bytes after payload")
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=pos)


def _as_bytes(source) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    try:
        return Path(source).read_bytes()
    except OSError as e:
        raise CodecError(f"cannot read {source}: {e}") from e


def read_ppm(source) -> np.ndarray:
    """Read binary PPM into an (H, W, 3) uint8 array."""
    buf = _as_bytes(source)
    w, h, maxval, pos = _read_header(buf, b"P6")
    data = _read_payload(buf, pos, w * h * 3).reshape(h, w, 3)
    if maxval != 255:
        data = (data.astype(np.uint16) * 255 // maxval).astype(np.uint8)
    return data.copy()


def read_pgm(source) -> np.ndarray:
    """Read binary PGM into an (H, W) uint8 array."""
    buf = _as_bytes(source)
    w, h, maxval, pos = _read_header(buf, b"P5")
    data = _read_payload(buf, pos, w * h).reshape(h, w)
    if maxval != 255:
        data = (data.astype(np.uint16) * 255 // maxval).astype(np.uint8)
    return data.copy()


def _check_uint8(arr: np.ndarray, ndim: int, what: str) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise CodecError(f"{what} must be uint8, got {arr.dtype}")
    if arr.ndim != ndim:
        raise CodecError(f"{what} must be {ndim}-D, got shape {arr.shape}")
    return arr


def write_ppm(arr: np.ndarray, sink) -> None:
    """Write an (H, W, 3) uint8 array as canonical binary PPM."""
    arr = _check_uint8(arr, 3, "PPM image")
    if arr.shape[2] != 3:
        raise CodecError(f"PPM image needs 3 channels, got {arr.shape[2]}")
    h, w = arr.shape[:2]
    data = f"P6\n{w} {h}\n255\n".encode("ascii") + arr.tobytes()
    if hasattr(sink, "write"):
        sink.write(data)
    else:
        Path(sink).write_bytes(data)


def write_pgm(arr: np.ndarray, sink) -> None:
    """Write an (H, W) uint8 array as canonical binary PGM."""
    arr = _check_uint8(arr, 2, "PGM image")
    h, w = arr.shape
    data = f"P5\n{w} {h}\n255\n".encode("ascii") + arr.tobytes()
    if hasattr(sink, "write"):
        sink.write(data)
    else:
        Path(sink).write_bytes(data)


def _read_png(path) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError as e:
        raise CodecError("PNG support needs Pillow (pip install xai-triage[png])") from e
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            return np.asarray(im, dtype=np.uint8)
    except OSError as e:
        raise CodecError(f"cannot decode PNG {path}: {e}") from e


def load_image(path) -> np.ndarray:
    """Load by extension: .ppm -> (H,W,3), .pgm -> (H,W), .png -> (H,W,3)."""
    suffix = Path(path).suffix.lower()
    if suffix == ".ppm":
        return read_ppm(path)
    if suffix == ".pgm":
        return read_pgm(path)
    if suffix == ".png":
        return _read_png(path)
    raise CodecError(f"unsupported image format {suffix!r} ({path})")


def load_mask(path) -> np.ndarray:
    """Load a PGM segmentation mask: nonzero marks the damage region."""
    if Path(path).suffix.lower() != ".pgm":
        raise CodecError(f"masks must be PGM, got {path}")
    return read_pgm(path) != 0


def image_size(path) -> tuple[int, int]:
    """(width, height) from the file header without decoding the payload."""
    suffix = Path(path).suffix.lower()
    if suffix in (".ppm", ".pgm"):
        buf = _as_bytes(path)
        magic = b"P6" if suffix == ".ppm" else b"P5"
        w, h, _, _ = _read_header(buf, magic)
        return w, h
    if suffix == ".png":
        try:
            from PIL import Image
        except ImportError as e:
            raise CodecError("PNG support needs Pillow") from e
        try:
            with Image.open(path) as im:
                return im.size
        except OSError as e:
            raise CodecError(f"cannot read PNG header {path}: {e}") from e
    raise CodecError(f"unsupported image format {suffix!r} ({path})")
