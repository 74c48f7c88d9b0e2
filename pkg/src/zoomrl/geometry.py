"""Bounding-box algebra: IoU, clamping, prediction-to-region matching, crops.

Boxes are axis-aligned rectangles in full-page pixel coordinates,
``(x_min, y_min, x_max, y_max)``. Area is continuous (coordinates are real
interval endpoints), so an integer box ``(0, 0, 10, 10)`` covers exactly the
half-open pixel cells ``[0, 10) x [0, 10)``. The JSON wire form is the flat
array ``[x_min, y_min, x_max, y_max]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from PIL import Image


class DegenerateBox(Exception):
    """Raised when clamping leaves a box with zero area (out-of-frame zoom)."""


class ImageLoadError(Exception):
    """Raised when an image file cannot be opened or decoded."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned rectangle. Valid boxes have positive area and coords >= 0.

    Construction does not raise: model-emitted boxes may be out of frame or
    inverted and are sanitized by :func:`clamp_to_image` before use. Callers
    of :func:`iou` and :func:`match_invocations` must pass valid boxes.
    """

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @property
    def area(self) -> int:
        return self.width * self.height

    def is_valid(self) -> bool:
        return (
            self.x_min >= 0
            and self.y_min >= 0
            and self.x_min < self.x_max
            and self.y_min < self.y_max
        )

    def to_list(self) -> list[int]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @classmethod
    def from_list(cls, coords: Sequence[int]) -> "BBox":
        if len(coords) != 4:
            raise ValueError(f"box needs 4 coordinates, got {len(coords)}")
        return cls(int(coords[0]), int(coords[1]), int(coords[2]), int(coords[3]))


@dataclass(frozen=True)
class ImageRef:
    """A page image addressed by path (or opaque id) plus pixel dimensions."""

    path: str
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image dimensions must be positive, got {self.width}x{self.height}")


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two valid boxes, in [0, 1].

    Symmetric; 1.0 iff the boxes are identical; 0.0 for disjoint or
    merely touching boxes.
    """
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def clamp_to_image(b: BBox, img: ImageRef) -> BBox:
    """Intersect ``b`` with the image frame ``[0, width] x [0, height]``.

    Raises:
        DegenerateBox: if the clamped box has zero area, i.e. the request
            lies fully outside the frame (or was inverted to begin with).
    """
    x_min = max(0, min(b.x_min, img.width))
    y_min = max(0, min(b.y_min, img.height))
    x_max = max(0, min(b.x_max, img.width))
    y_max = max(0, min(b.y_max, img.height))
    if x_min >= x_max or y_min >= y_max:
        raise DegenerateBox(f"box {b.to_list()} has no area inside {img.width}x{img.height} frame")
    return BBox(x_min, y_min, x_max, y_max)


def match_invocations(
    pred: Sequence[BBox], gt: Sequence[BBox]
) -> list[tuple[int, int | None, float]]:
    """Greedy, order-respecting assignment of predicted boxes to regions.

    Each prediction, in order, takes the not-yet-matched ground-truth region
    with the highest IoU. Predictions left without a region, or whose best
    IoU is zero, get ``(i, None, 0.0)``. Each region is used at most once.
    """
    taken: set[int] = set()
    out: list[tuple[int, int | None, float]] = []
    for i, p in enumerate(pred):
        best_j: int | None = None
        best = 0.0
        for j, g in enumerate(gt):
            if j in taken:
                continue
            v = iou(p, g)
            if v > best:
                best = v
                best_j = j
        if best_j is None:
            out.append((i, None, 0.0))
        else:
            taken.add(best_j)
            out.append((i, best_j, best))
    return out


@dataclass(frozen=True)
class ResizePolicy:
    """Patch sizing: upscale any crop whose short side falls below the minimum.

    Aspect ratio is preserved; resampling is nearest-neighbor. ``min_short_side=0``
    disables resizing.
    """

    min_short_side: int = 28


@dataclass(frozen=True)
class PatchMeta:
    """Provenance of a cropped patch: source box, patch size, scale factor."""

    box: BBox
    patch_width: int
    patch_height: int
    scale: float

    def to_page_coords(self, px: float, py: float) -> tuple[float, float]:
        """Map patch-frame coordinates back into the page frame."""
        return (self.box.x_min + px / self.scale, self.box.y_min + py / self.scale)


def crop_region(
    img: ImageRef, b: BBox, resize_policy: ResizePolicy = ResizePolicy()
) -> tuple[Image.Image, PatchMeta]:
    """Extract the pixel sub-rectangle ``b`` from the page image.

    ``b`` must already be clamped and non-degenerate. If the crop's short
    side is below ``resize_policy.min_short_side`` the patch is upscaled,
    aspect-preserving, so tiny regions stay usable as model input.

    Raises:
        ImageLoadError: if the image file cannot be read.
    """
    try:
        with Image.open(img.path) as page:
            patch = page.crop((b.x_min, b.y_min, b.x_max, b.y_max)).copy()
    except (OSError, ValueError) as exc:
        raise ImageLoadError(f"cannot read image {img.path!r}: {exc}") from exc

    scale = 1.0
    short = min(b.width, b.height)
    if resize_policy.min_short_side > 0 and short < resize_policy.min_short_side:
        scale = resize_policy.min_short_side / short
        new_w = int(round(b.width * scale))
        new_h = int(round(b.height * scale))
        patch = patch.resize((new_w, new_h), Image.NEAREST)

    meta = PatchMeta(box=b, patch_width=patch.width, patch_height=patch.height, scale=scale)
    return patch, meta
