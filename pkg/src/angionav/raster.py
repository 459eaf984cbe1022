"""Grid containers, PGM mask/image I/O, and polygon rasterization.

Coordinate convention, used everywhere in this package: a point is
``(x, y)`` with ``x`` the column and ``y`` the row, origin at the top-left.
Pixel ``(x, y)`` covers the unit square ``[x, x+1) x [y, y+1)``; its center
sits at ``(x + 0.5, y + 0.5)``. Arrays are indexed ``arr[y, x]``.

Masks travel as binary PGM (P5) files with 0 = background, 255 = foreground.
Images travel as 8-bit grayscale PGM normalized to [0, 1] on load.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class MaskFormatError(ValueError):
    """Malformed PGM payload. Carries the byte offset of the defect."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class AnnotationError(ValueError):
    """Rejected polygon annotation. Carries the offending annotation index."""

    def __init__(self, message: str, index: int):
        super().__init__(f"annotation {index}: {message}")
        self.index = index


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class GrayImage:
    """2-D grayscale image, float64 intensities in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.size == 0:
            raise ValueError("image must be a non-empty 2-D array")
        if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("image values must be finite and in [0, 1]")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """2-D boolean grid; the universal segmentation/skeleton carrier."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2 or b.size == 0:
            raise ValueError("mask must be a non-empty 2-D array")
        object.__setattr__(self, "bits", _frozen(b.astype(bool)))

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def foreground_count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class PolygonAnnotation:
    """Labeled polygon in pixel coordinates, vertices ordered."""

    label: str
    vertices: tuple[tuple[float, float], ...]


def rasterize_polygons(annotations, width: int, height: int) -> BinaryMask:
    """Rasterize polygons with the even-odd rule at pixel centers.

    A pixel is foreground iff its center lies inside at least one polygon.
    Vertices are clamped to the frame before the test. Polygons with fewer
    than 3 vertices are rejected.
    """
    if width <= 0 or height <= 0:
        raise ValueError("width and height must be positive")
    inside = np.zeros((height, width), dtype=bool)
    cx = np.arange(width, dtype=np.float64) + 0.5
    cy = np.arange(height, dtype=np.float64) + 0.5
    for i, ann in enumerate(annotations):
        verts = ann.vertices
        if len(verts) < 3:
            raise AnnotationError("polygon needs at least 3 vertices", i)
        vx = np.clip(np.array([v[0] for v in verts], dtype=np.float64), 0.0, width)
        vy = np.clip(np.array([v[1] for v in verts], dtype=np.float64), 0.0, height)
        crossings = np.zeros((height, width), dtype=np.int64)
        n = len(verts)
        for j in range(n):
            x1, y1 = vx[j], vy[j]
            x2, y2 = vx[(j + 1) % n], vy[(j + 1) % n]
            if y1 == y2:
                continue
            # half-open rule in y resolves vertices hit by the scan ray
            straddles = (y1 <= cy) != (y2 <= cy)
            xi = x1 + (cy - y1) * (x2 - x1) / (y2 - y1)
            crossings += straddles[:, None] & (cx[None, :] < xi[:, None])
        inside |= (crossings % 2) == 1
    return BinaryMask(inside)


# --- PGM (P5) encoding -----------------------------------------------------

def _parse_pgm(data: bytes):
    """Return (width, height, payload, payload_offset); raise with offsets."""
    if len(data) < 2 or data[:2] != b"P5":
        raise MaskFormatError("not a P5 PGM (bad magic)", 0)
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise MaskFormatError("expected integer header field", pos)
        fields.append(int(data[start:pos]))
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise MaskFormatError("non-positive dimensions", 2)
    if maxval != 255:
        raise MaskFormatError(f"unsupported maxval {maxval}", pos - len(str(maxval)))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise MaskFormatError("missing single whitespace after maxval", pos)
    pos += 1
    expected = width * height
    payload = data[pos : pos + expected]
    if len(payload) < expected:
        raise MaskFormatError(
            f"truncated payload ({len(payload)} of {expected} bytes)", len(data)
        )
    return width, height, payload, pos


def mask_to_pgm_bytes(mask: BinaryMask) -> bytes:
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode()
    return header + (mask.bits.astype(np.uint8) * 255).tobytes()


def mask_from_pgm_bytes(data: bytes) -> BinaryMask:
    width, height, payload, offset = _parse_pgm(data)
    arr = np.frombuffer(payload, dtype=np.uint8)
    bad = np.flatnonzero((arr != 0) & (arr != 255))
    if bad.size:
        raise MaskFormatError(
            f"mask byte {arr[bad[0]]} not in {{0, 255}}", offset + int(bad[0])
        )
    return BinaryMask((arr == 255).reshape(height, width))


def image_to_pgm_bytes(image: GrayImage) -> bytes:
    header = f"P5\n{image.width} {image.height}\n255\n".encode()
    quantized = np.round(image.values * 255.0).astype(np.uint8)
    return header + quantized.tobytes()


def image_from_pgm_bytes(data: bytes) -> GrayImage:
    width, height, payload, _ = _parse_pgm(data)
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return GrayImage(arr.astype(np.float64) / 255.0)


def store_mask(mask: BinaryMask, path) -> None:
    with open(path, "wb") as fh:
        fh.write(mask_to_pgm_bytes(mask))


def load_mask(path) -> BinaryMask:
    with open(path, "rb") as fh:
        return mask_from_pgm_bytes(fh.read())


def store_image(image: GrayImage, path) -> None:
    with open(path, "wb") as fh:
        fh.write(image_to_pgm_bytes(image))


def load_image(path) -> GrayImage:
    with open(path, "rb") as fh:
        return image_from_pgm_bytes(fh.read())


# --- LabelMe-style annotation documents -------------------------------------

def parse_labelme(json_text: str):
    """Parse a LabelMe-style document into polygon annotations.

    Returns ``(annotations, warnings)``. Shapes whose ``shape_type`` is not
    ``"polygon"`` are skipped with one warning record each.
    """
    doc = json.loads(json_text)
    shapes = doc.get("shapes")
    if not isinstance(shapes, list):
        raise ValueError("document has no `shapes` array")
    annotations: list[PolygonAnnotation] = []
    warnings: list[str] = []
    for i, shape in enumerate(shapes):
        kind = shape.get("shape_type", "polygon")
        if kind != "polygon":
            warnings.append(f"shape {i}: skipped shape_type {kind!r}")
            continue
        points = shape.get("points")
        if points is None:
            raise AnnotationError("missing `points`", i)
        verts = []
        for p in points:
            try:
                x, y = float(p[0]), float(p[1])
            except (TypeError, ValueError, IndexError):
                raise AnnotationError("non-numeric coordinates", i) from None
            if not (np.isfinite(x) and np.isfinite(y)):
                raise AnnotationError("non-finite coordinates", i)
            verts.append((x, y))
        annotations.append(
            PolygonAnnotation(label=str(shape.get("label", "")), vertices=tuple(verts))
        )
    return annotations, warnings
