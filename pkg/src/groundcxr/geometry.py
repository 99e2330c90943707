"""Bounding boxes in pixel space and on the integer 0..100 grid."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, List, Sequence, Union

from .errors import DomainError
from .labels import LOCAL_LABELS

GRID = 100


@dataclass(frozen=True)
class ImageDims:
    width: int
    height: int

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise DomainError(f"image dims must be integers, got {self.width}x{self.height}")
        if self.width < 1 or self.height < 1:
            raise DomainError(f"image dims must be positive, got {self.width}x{self.height}")


@dataclass(frozen=True)
class PixelBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise DomainError(f"non-finite box coordinates {coords}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise DomainError(f"box {coords} has zero or negative area")

    def __iter__(self) -> Iterator[float]:
        return iter((self.x_min, self.y_min, self.x_max, self.y_max))

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


@dataclass(frozen=True)
class NormBox:
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(isinstance(c, int) and not isinstance(c, bool) for c in coords):
            raise DomainError(f"grid coordinates must be integers, got {coords}")
        if not (0 <= self.x_min <= self.x_max <= GRID and 0 <= self.y_min <= self.y_max <= GRID):
            raise DomainError(f"grid box {coords} violates 0 <= min <= max <= {GRID}")

    def __iter__(self) -> Iterator[int]:
        return iter((self.x_min, self.y_min, self.x_max, self.y_max))

    @property
    def area(self) -> int:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_list(self) -> List[int]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass(frozen=True)
class Finding:
    label: str
    box: NormBox

    def __post_init__(self):
        if self.label not in LOCAL_LABELS:
            raise DomainError(f"unknown local label {self.label!r}")


BoxLike = Union[PixelBox, NormBox, Sequence[float]]


def box_area(b: BoxLike) -> float:
    x1, y1, x2, y2 = b
    return max(0, x2 - x1) * max(0, y2 - y1)


def iou(a: BoxLike, b: BoxLike) -> float:
    """Intersection over union of two axis-aligned boxes given as (x1, y1, x2, y2)."""
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    if not (ax1 < ax2 and ay1 < ay2):
        raise DomainError(f"degenerate box {tuple(a)}")
    if not (bx1 < bx2 and by1 < by2):
        raise DomainError(f"degenerate box {tuple(b)}")

    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return min(1.0, inter / union)


def _round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def _to_grid(coord: float, extent: int) -> int:
    value = _round_half_up(Fraction(coord) * GRID / extent)
    return min(GRID, max(0, value))


def _expand(lo: int, hi: int) -> tuple[int, int]:
    if lo < hi:
        return lo, hi
    if hi < GRID:
        return lo, hi + 1
    return lo - 1, hi


def normalize_box(b: PixelBox, d: ImageDims, clamp: bool = False) -> NormBox:
    """Map a pixel box onto the 0..100 integer grid.

    Each coordinate is divided by the image extent, scaled by 100 and rounded
    half up. A box that collapses on an axis after rounding is widened by one
    grid unit so the finding survives. Boxes leaving the image raise
    ``DomainError`` unless ``clamp`` is set.
    """
    x1, y1, x2, y2 = b
    inside = 0 <= x1 and 0 <= y1 and x2 <= d.width and y2 <= d.height
    if not inside:
        if not clamp:
            raise DomainError(f"box {tuple(b)} exceeds image bounds {d.width}x{d.height}")
        x1, x2 = max(0, x1), min(d.width, x2)
        y1, y2 = max(0, y1), min(d.height, y2)
        if not (x1 < x2 and y1 < y2):
            raise DomainError(f"box {tuple(b)} lies entirely outside the image")

    gx1, gx2 = _expand(_to_grid(x1, d.width), _to_grid(x2, d.width))
    gy1, gy2 = _expand(_to_grid(y1, d.height), _to_grid(y2, d.height))
    return NormBox(gx1, gy1, gx2, gy2)


def denormalize_box(n: NormBox, d: ImageDims) -> PixelBox:
    return PixelBox(
        n.x_min * d.width / GRID,
        n.y_min * d.height / GRID,
        n.x_max * d.width / GRID,
        n.y_max * d.height / GRID,
    )


class _DisjointSet:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int) -> None:
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


def cluster_boxes(boxes: Sequence[BoxLike], threshold: float) -> List[List[int]]:
    """Connected components of the graph whose edges are pairs with IoU > threshold.

    Components are returned as sorted index lists, ordered by smallest index.
    """
    ds = _DisjointSet(len(boxes))
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            if iou(boxes[i], boxes[j]) > threshold:
                ds.union(i, j)
    groups: dict = {}
    for i in range(len(boxes)):
        groups.setdefault(ds.find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def _medoid(boxes: Sequence[BoxLike], members: List[int]) -> int:
    def rank(i):
        total = math.fsum(iou(boxes[i], boxes[j]) for j in members)
        return (-total, box_area(boxes[i]), tuple(boxes[i]), i)

    return min(members, key=rank)


def dedup_findings(fs: Iterable[Finding], threshold: float = 0.5) -> List[Finding]:
    """Collapse overlapping same-label findings to one representative each.

    Findings sharing a label are clustered by the transitive closure of
    ``IoU > threshold``; the cluster medoid (largest summed IoU to the other
    members, then smaller area, then lexicographic coordinates) survives.
    Survivors keep their input order.
    """
    if not 0 < threshold < 1:
        raise DomainError(f"threshold must lie in (0, 1), got {threshold}")
    fs = list(fs)
    by_label: dict = {}
    for idx, f in enumerate(fs):
        by_label.setdefault(f.label, []).append(idx)

    keep = set()
    for indices in by_label.values():
        boxes = [fs[i].box for i in indices]
        for members in cluster_boxes(boxes, threshold):
            keep.add(indices[_medoid(boxes, members)])
    return [f for i, f in enumerate(fs) if i in keep]
