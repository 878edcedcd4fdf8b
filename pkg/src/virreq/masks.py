"""Binary mask representation and algebra.

Masks are immutable ``(height, width)`` boolean arrays. Pixel coordinates
follow the ``(a, b)`` convention used throughout the toolkit: ``a`` is the
column (x) and ``b`` is the row (y), so ``mask.get(a, b)`` reads
``bits[b, a]``. Row-major pixel order therefore enumerates ``b`` outer,
``a`` inner.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, Iterable, Tuple

import numpy as np

from .errors import BothEmpty, DimensionMismatch, EmptyMask, MalformedRle

ROW_MAJOR = "row-major"
VOID = 0


class BinaryMask:
    """Immutable W×H bitmask."""

    __slots__ = ("bits",)

    def __init__(self, bits: np.ndarray) -> None:
        arr = np.asarray(bits, dtype=bool)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionMismatch("mask must be a 2-D array with positive dims",
                                    shape=list(arr.shape))
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    def __setattr__(self, name: str, value) -> None:
        raise AttributeError("BinaryMask is immutable")

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.bits.shape

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def ones(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.ones((height, width), dtype=bool))

    @classmethod
    def from_pixels(cls, width: int, height: int,
                    pixels: Iterable[Tuple[int, int]]) -> "BinaryMask":
        bits = np.zeros((height, width), dtype=bool)
        for a, b in pixels:
            bits[b, a] = True
        return cls(bits)

    def get(self, a: int, b: int) -> bool:
        return bool(self.bits[b, a])

    def count(self) -> int:
        return int(self.bits.sum())

    def is_empty(self) -> bool:
        return not self.bits.any()

    def intersection(self, other: "BinaryMask") -> "BinaryMask":
        _check_dims(self, other)
        return BinaryMask(self.bits & other.bits)

    def union(self, other: "BinaryMask") -> "BinaryMask":
        _check_dims(self, other)
        return BinaryMask(self.bits | other.bits)

    def difference(self, other: "BinaryMask") -> "BinaryMask":
        _check_dims(self, other)
        return BinaryMask(self.bits & ~other.bits)

    def contains(self, other: "BinaryMask") -> bool:
        """True if ``other`` is a (non-strict) subset of this mask."""
        _check_dims(self, other)
        return bool(np.all(other.bits <= self.bits))

    def bounding_box(self) -> Tuple[int, int, int, int]:
        """Tight box ``(a0, b0, a1, b1)`` over set pixels, inclusive."""
        if self.is_empty():
            raise EmptyMask("bounding box of an empty mask")
        rows = np.flatnonzero(self.bits.any(axis=1))
        cols = np.flatnonzero(self.bits.any(axis=0))
        return int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self) -> int:
        return hash((self.shape, self.bits.tobytes()))

    def __repr__(self) -> str:
        return f"BinaryMask({self.width}x{self.height}, {self.count()} set)"


def _check_dims(a: BinaryMask, b: BinaryMask) -> None:
    if a.shape != b.shape:
        raise DimensionMismatch("mask dimensions differ",
                                left=list(a.shape), right=list(b.shape))


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """Mask intersection over union.

    Raises ``BothEmpty`` when both masks are empty: the ratio is undefined
    there and silently returning 0 or 1 hides upstream bugs.
    """
    _check_dims(a, b)
    inter = int(np.count_nonzero(a.bits & b.bits))
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        raise BothEmpty("IoU of two empty masks is undefined")
    return inter / union


def clip(child: BinaryMask, parent: BinaryMask) -> BinaryMask:
    """Top-down filtering primitive: restrict ``child`` to ``parent``."""
    return child.intersection(parent)


@dataclass(frozen=True)
class MassCenter:
    """Real-valued centroid plus the nearest set pixel.

    The centroid of a non-convex region may fall outside it, so samplers
    that need a guaranteed-inside pixel use ``inside``.
    """

    a: float
    b: float
    inside: Tuple[int, int]


def mass_center(m: BinaryMask) -> MassCenter:
    """Centroid of the set pixels and the set pixel nearest to it.

    Ties on the nearest pixel break by row-major order.
    """
    if m.is_empty():
        raise EmptyMask("mass center of an empty mask")
    rows, cols = np.nonzero(m.bits)  # row-major enumeration
    ca = float(cols.mean())
    cb = float(rows.mean())
    d2 = (cols - ca) ** 2 + (rows - cb) ** 2
    k = int(np.argmin(d2))  # first minimum == row-major tie-break
    return MassCenter(a=ca, b=cb, inside=(int(cols[k]), int(rows[k])))


@dataclass(frozen=True)
class Rle:
    """Run-length encoding of a mask in row-major pixel order.

    ``counts`` alternate run lengths starting with zeros; only the leading
    count may be zero-adjacent to another zero. Note that COCO RLE is
    column-major; the explicit ``order`` token keeps the formats from being
    confused.
    """

    width: int
    height: int
    counts: Tuple[int, ...]
    order: str = ROW_MAJOR

    def __post_init__(self) -> None:
        if self.order != ROW_MAJOR:
            raise MalformedRle(f"unsupported RLE order {self.order!r}", order=self.order)
        if self.width < 1 or self.height < 1:
            raise MalformedRle("RLE dimensions must be positive",
                               width=self.width, height=self.height)
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if any(c < 0 for c in counts):
            raise MalformedRle("negative run length", counts=list(counts))
        if sum(counts) != self.width * self.height:
            raise MalformedRle("run lengths do not cover the mask",
                               total=sum(counts), expected=self.width * self.height)
        for i in range(1, len(counts)):
            if counts[i] == 0 and counts[i - 1] == 0:
                raise MalformedRle("consecutive zero run lengths", index=i)

    def to_json(self) -> dict:
        return {"order": self.order, "width": self.width, "height": self.height,
                "counts": list(self.counts)}

    @classmethod
    def from_json(cls, obj: dict) -> "Rle":
        try:
            return cls(width=int(obj["width"]), height=int(obj["height"]),
                       counts=tuple(int(c) for c in obj["counts"]),
                       order=str(obj.get("order", ROW_MAJOR)))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRle(f"bad RLE object: {exc}") from exc


def rle_encode(m: BinaryMask) -> Rle:
    """Encode a mask; the result is canonical (no redundant zero runs)."""
    flat = m.bits.ravel()
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts = [0] + counts
    return Rle(width=m.width, height=m.height, counts=tuple(counts))


def rle_decode(r: Rle) -> BinaryMask:
    values = np.arange(len(r.counts)) % 2 == 1  # zeros first
    flat = np.repeat(values, r.counts)
    return BinaryMask(flat.reshape(r.height, r.width))


class LabelMap:
    """Per-pixel class labels; value 0 is void (unlabeled)."""

    __slots__ = ("labels",)

    def __init__(self, labels: np.ndarray) -> None:
        arr = np.asarray(labels)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionMismatch("label map must be 2-D with positive dims",
                                    shape=list(arr.shape))
        if arr.min(initial=0) < 0:
            raise ValueError("labels must be non-negative")
        arr = np.ascontiguousarray(arr.astype(np.int32))
        arr.setflags(write=False)
        object.__setattr__(self, "labels", arr)

    def __setattr__(self, name: str, value) -> None:
        raise AttributeError("LabelMap is immutable")

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    def values(self) -> Tuple[int, ...]:
        """Distinct non-void label values, ascending."""
        vals = np.unique(self.labels)
        return tuple(int(v) for v in vals if v != VOID)

    def mask_for(self, value: int) -> BinaryMask:
        return BinaryMask(self.labels == value)

    def to_masks(self) -> Dict[int, BinaryMask]:
        """Decompose into per-class masks; they partition the non-void pixels."""
        return {v: self.mask_for(v) for v in self.values()}

    @classmethod
    def from_masks(cls, width: int, height: int,
                   masks: Dict[int, BinaryMask]) -> "LabelMap":
        """Inverse of ``to_masks``; overlapping masks are rejected."""
        labels = np.zeros((height, width), dtype=np.int32)
        covered = np.zeros((height, width), dtype=bool)
        for value in sorted(masks):
            if value == VOID:
                raise ValueError("label value 0 is reserved for void")
            bits = masks[value].bits
            if bits.shape != (height, width):
                raise DimensionMismatch("mask dimensions differ from label map",
                                        value=value)
            if (covered & bits).any():
                raise ValueError(f"masks overlap at label {value}")
            covered |= bits
            labels[bits] = value
        return cls(labels)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabelMap):
            return NotImplemented
        return bool(np.array_equal(self.labels, other.labels))

    def __hash__(self) -> int:
        return hash(self.labels.tobytes())


def save_label_png(lm: LabelMap, path) -> None:
    """Write as 16-bit single-channel PNG (value 0 = void)."""
    from PIL import Image

    if lm.labels.max(initial=0) > 0xFFFF:
        raise ValueError("label value exceeds 16-bit range")
    img = Image.fromarray(lm.labels.astype(np.uint16))
    img.save(path, format="PNG")


def load_label_png(path) -> LabelMap:
    from PIL import Image

    with Image.open(path) as img:
        arr = np.array(img)
    if arr.ndim != 2:
        raise ValueError("expected a single-channel PNG")
    return LabelMap(arr.astype(np.int32))


def mask_to_json(m: BinaryMask) -> dict:
    return rle_encode(m).to_json()


def mask_from_json(obj: dict) -> BinaryMask:
    return rle_decode(Rle.from_json(obj))


def canonical_json_bytes(obj) -> bytes:
    """Deterministic JSON bytes used for content hashes and round-trips."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
