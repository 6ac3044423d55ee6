"""Binary PGM (P5) input/output, label taxonomy and the dataset manifest.

Images and masks are plain ``numpy`` arrays of shape ``(height, width)`` and
dtype ``uint8``, row-major with the origin at the top-left pixel.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import (
    InvalidLabel,
    IoFailure,
    MalformedHeader,
    ManifestError,
    MissingFile,
    TruncatedPayload,
)


class Label(IntEnum):
    BACKGROUND = 0
    CYTOPLASM = 1
    ZONA = 2
    POLAR_BODY = 3
    CUMULUS = 4


N_LABELS = len(Label)

_WHITESPACE = b" \t\r\n\v\f"


def _read_header(data: bytes) -> tuple[int, int, int, int]:
    """Return ``(width, height, maxval, payload_offset)``."""
    if data[:2] != b"P5":
        raise MalformedHeader(f"expected binary PGM magic 'P5', got {data[:2]!r}")
    pos = 2
    tokens = []
    while len(tokens) < 3:
        if pos >= len(data):
            raise MalformedHeader("header ends prematurely")
        c = data[pos:pos + 1]
        if c == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        elif c in _WHITESPACE:
            pos += 1
        else:
            start = pos
            while pos < len(data) and data[pos:pos + 1] not in _WHITESPACE:
                pos += 1
            tok = data[start:pos]
            if not tok.isdigit():
                raise MalformedHeader(f"non-numeric header field {tok!r}")
            tokens.append(int(tok))
    width, height, maxval = tokens
    if width < 1 or height < 1:
        raise MalformedHeader(f"invalid size {width}x{height}")
    if maxval != 255:
        raise MalformedHeader(f"only maxval 255 is supported, got {maxval}")
    # a single whitespace byte separates maxval from the raster
    if pos >= len(data):
        raise TruncatedPayload("missing payload after header")
    return width, height, maxval, pos + 1


def _read_pgm(path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError as exc:
        raise MissingFile(str(path)) from exc
    except IsADirectoryError as exc:
        raise MissingFile(f"{path} is a directory") from exc
    width, height, _, offset = _read_header(data)
    n = width * height
    payload = data[offset:offset + n]
    if len(payload) < n:
        raise TruncatedPayload(f"{path}: expected {n} bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def _atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _write_pgm(array: np.ndarray, path) -> None:
    height, width = array.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    _atomic_write(path, header + np.ascontiguousarray(array, dtype=np.uint8).tobytes())


def check_gray_image(image) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 2 or image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D raster, got shape {image.shape}")
    if image.dtype != np.uint8:
        if image.size and (image.min() < 0 or image.max() > 255):
            raise ValueError("intensities must lie in 0..255")
        image = image.astype(np.uint8)
    return image


def check_label_mask(mask) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.shape[0] < 1 or mask.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D raster, got shape {mask.shape}")
    if mask.size and (mask.min() < 0 or mask.max() >= N_LABELS):
        raise InvalidLabel(f"labels must lie in 0..{N_LABELS - 1}")
    return mask.astype(np.uint8, copy=False)


def load_gray_image(path) -> np.ndarray:
    return _read_pgm(path)


def load_label_mask(path) -> np.ndarray:
    raster = _read_pgm(path)
    if raster.max() >= N_LABELS:
        raise InvalidLabel(f"{path}: label value {int(raster.max())} outside 0..{N_LABELS - 1}")
    return raster


def save_gray_image(image, path) -> None:
    _write_pgm(check_gray_image(image), path)


def save_label_mask(mask, path) -> None:
    _write_pgm(check_label_mask(mask), path)


def mask_to_binary(mask, label: int) -> np.ndarray:
    """Boolean raster that is true exactly where ``mask == label``."""
    return np.asarray(mask) == label


@dataclass
class OocyteAnnotation:
    cx: int
    cy: int
    viable: bool


@dataclass
class ManifestEntry:
    image: Path
    mask: Path
    oocytes: list[OocyteAnnotation] = field(default_factory=list)
    true_viable_count: int | None = None

    @property
    def image_id(self) -> str:
        return self.image.parent.name if self.image.name == "image.pgm" else self.image.stem


def _entry_from_dict(raw: dict, base: Path) -> ManifestEntry:
    try:
        oocytes = [
            OocyteAnnotation(int(o["cx"]), int(o["cy"]), bool(o["viable"]))
            for o in raw.get("oocytes", [])
        ]
        count = raw.get("true_viable_count")
        entry = ManifestEntry(base / raw["image"], base / raw["mask"], oocytes,
                              None if count is None else int(count))
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"malformed manifest entry {raw!r}: {exc}") from exc
    if entry.true_viable_count is not None:
        if entry.true_viable_count < 0:
            raise ManifestError("true_viable_count must be non-negative")
        if entry.oocytes and entry.true_viable_count > len(entry.oocytes):
            raise ManifestError("true_viable_count exceeds the number of listed oocytes")
    return entry


def load_manifest(path) -> list[ManifestEntry]:
    """Read a manifest; relative paths are resolved against its directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise MissingFile(str(path)) from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("entries"), list):
        raise ManifestError(f"{path}: expected an object with an 'entries' list")
    entries = [_entry_from_dict(raw, path.parent) for raw in doc["entries"]]
    for entry in entries:
        for p in (entry.image, entry.mask):
            if not p.is_file():
                raise MissingFile(str(p))
    return entries


def manifest_to_dict(entries: list[ManifestEntry], base) -> dict:
    base = Path(base)

    def rel(p: Path) -> str:
        try:
            return Path(p).relative_to(base).as_posix()
        except ValueError:
            return str(p)

    return {
        "entries": [
            {
                "image": rel(e.image),
                "mask": rel(e.mask),
                "oocytes": [{"cx": o.cx, "cy": o.cy, "viable": o.viable} for o in e.oocytes],
                "true_viable_count": e.true_viable_count,
            }
            for e in entries
        ]
    }


def save_manifest(entries: list[ManifestEntry], path) -> None:
    path = Path(path)
    text = json.dumps(manifest_to_dict(entries, path.parent), indent=2) + "\n"
    _atomic_write(path, text.encode())


def write_json(obj, path) -> None:
    """Deterministic JSON writer shared by every stage."""
    _atomic_write(path, (json.dumps(obj, indent=2, sort_keys=False) + "\n").encode())


def write_text(text: str, path) -> None:
    _atomic_write(path, text.encode())
