"""Mask geometry: polygon area, rectangle clipping, rasterization, RLE and IoU.

Conventions
-----------
* Polygons are stored COCO-style, as flat ``x1, y1, x2, y2, ...`` rings.
  Every ring is implicitly closed.
* Rasterization samples pixel centres ``(j + 0.5, i + 0.5)`` with the
  even-odd rule taken over all rings of a set at once.
* RLE counts run over column-major pixel order and start with a zero run.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import numpy as np

from .errors import CorruptRLEError, DegeneratePolygonError, DimensionMismatchError

__all__ = [
    "PolygonSet",
    "RLEMask",
    "Rect",
    "MaskWindow",
    "polygon_area",
    "ring_signed_area",
    "clip_polygon_to_rect",
    "rasterize",
    "rle_encode",
    "rle_decode",
    "rle_area",
    "mask_iou",
    "bbox_of",
    "translate",
    "segmentation_area",
    "segmentation_bbox",
    "to_window",
    "window_iou",
]


@dataclass(frozen=True)
class PolygonSet:
    rings: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "rings", tuple(tuple(r) for r in self.rings))

    @classmethod
    def from_vertices(cls, *rings):
        """Build from rings given as sequences of ``(x, y)`` pairs."""
        return cls(tuple(tuple(c for xy in ring for c in xy) for ring in rings))

    def __len__(self):
        return len(self.rings)

    def __bool__(self):
        return bool(self.rings)

    def vertices(self):
        """List of ``(n, 2)`` float arrays, one per ring."""
        return [np.asarray(r, dtype=float).reshape(-1, 2) for r in self.rings]

    def to_json(self):
        return [list(r) for r in self.rings]


@dataclass(frozen=True)
class RLEMask:
    height: int
    width: int
    counts: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))

    @property
    def shape(self):
        return (self.height, self.width)

    def to_json(self):
        return {"size": [self.height, self.width], "counts": list(self.counts)}


@dataclass(frozen=True)
class Rect:
    """Half-open window ``[x0, x1) x [y0, y1)``."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError(f"empty rectangle {self}")

    @property
    def area(self):
        return (self.x1 - self.x0) * (self.y1 - self.y0)


Segmentation = Union[PolygonSet, RLEMask]


def _check_rings(p):
    for r in p.rings:
        if len(r) < 6 or len(r) % 2:
            raise DegeneratePolygonError(f"ring with {len(r) // 2} vertices")


def ring_signed_area(xy):
    """Shoelace signed area of one ``(n, 2)`` ring, positive when counter-clockwise."""
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_area(p: PolygonSet) -> float:
    """Sum of absolute ring areas."""
    _check_rings(p)
    return float(sum(abs(ring_signed_area(v)) for v in p.vertices()))


def bbox_of(p: PolygonSet):
    """Tight ``(x, y, w, h)`` extent of a non-empty polygon set."""
    if not p.rings:
        raise DegeneratePolygonError("bbox of an empty polygon set")
    _check_rings(p)
    xs = [c for r in p.rings for c in r[0::2]]
    ys = [c for r in p.rings for c in r[1::2]]
    x0, y0 = min(xs), min(ys)
    return (x0, y0, max(xs) - x0, max(ys) - y0)


def translate(p: PolygonSet, dx, dy) -> PolygonSet:
    out = []
    for r in p.rings:
        ring = list(r)
        ring[0::2] = [x + dx for x in r[0::2]]
        ring[1::2] = [y + dy for y in r[1::2]]
        out.append(tuple(ring))
    return PolygonSet(tuple(out))


# -- clipping ---------------------------------------------------------------

def _clip_edge(pts, inside, cross):
    out = []
    n = len(pts)
    for k in range(n):
        cur, prev = pts[k], pts[k - 1]
        cin, pin = inside(cur), inside(prev)
        if cin:
            if not pin:
                out.append(cross(prev, cur))
            out.append(cur)
        elif pin:
            out.append(cross(prev, cur))
    return out


def _cross_x(xc):
    def cross(a, b):
        t = (xc - a[0]) / (b[0] - a[0])
        return (xc, a[1] + t * (b[1] - a[1]))
    return cross


def _cross_y(yc):
    def cross(a, b):
        t = (yc - a[1]) / (b[1] - a[1])
        return (a[0] + t * (b[0] - a[0]), yc)
    return cross


def _clip_ring(pts, r):
    pts = _clip_edge(pts, lambda q: q[0] >= r.x0, _cross_x(r.x0))
    if pts:
        pts = _clip_edge(pts, lambda q: q[0] <= r.x1, _cross_x(r.x1))
    if pts:
        pts = _clip_edge(pts, lambda q: q[1] >= r.y0, _cross_y(r.y0))
    if pts:
        pts = _clip_edge(pts, lambda q: q[1] <= r.y1, _cross_y(r.y1))
    # drop repeated vertices produced where the ring touches a clip edge
    dedup = [q for k, q in enumerate(pts) if q != pts[k - 1]] if len(pts) > 1 else pts
    return dedup


def clip_polygon_to_rect(p: PolygonSet, r: Rect) -> PolygonSet:
    """Clip every ring against the four edges of ``r`` (Sutherland-Hodgman).

    Rings that vanish or collapse to zero area are dropped, so the result
    may be empty.
    """
    _check_rings(p)
    out = []
    for ring in p.rings:
        xs, ys = ring[0::2], ring[1::2]
        if min(xs) >= r.x0 and max(xs) <= r.x1 and min(ys) >= r.y0 and max(ys) <= r.y1:
            out.append(tuple(ring))
            continue
        pts = _clip_ring(list(zip(xs, ys)), r)
        if len(pts) < 3:
            continue
        if ring_signed_area(np.asarray(pts, dtype=float)) == 0.0:
            continue
        out.append(tuple(c for q in pts for c in q))
    return PolygonSet(tuple(out))


# -- rasterization ----------------------------------------------------------

def _edges(p):
    segs = []
    for v in p.vertices():
        segs.append(np.hstack([v, np.roll(v, -1, axis=0)]))
    if not segs:
        return np.zeros((0, 4))
    return np.vstack(segs)


def rasterize(p: PolygonSet, h: int, w: int, x0: int = 0, y0: int = 0) -> np.ndarray:
    """Boolean ``(h, w)`` mask of the pixels whose centres fall inside ``p``.

    ``x0``/``y0`` shift the sampled window: output pixel ``(i, j)`` samples
    the point ``(x0 + j + 0.5, y0 + i + 0.5)``.
    """
    if h <= 0 or w <= 0:
        raise ValueError("mask dimensions must be positive")
    _check_rings(p)
    mask = np.zeros((h, w), dtype=bool)
    e = _edges(p)
    if not len(e):
        return mask
    ax, ay, bx, by = e[:, 0], e[:, 1], e[:, 2], e[:, 3]
    yc = (np.arange(h, dtype=float) + (y0 + 0.5))[:, None]
    hit = (ay > yc) != (by > yc)
    rows, cols = np.nonzero(hit)
    if not len(rows):
        return mask
    a_x, a_y, b_x, b_y = ax[cols], ay[cols], bx[cols], by[cols]
    yr = yc[rows, 0]
    xcross = a_x + (yr - a_y) * (b_x - a_x) / (b_y - a_y)
    # pixel j lies left of a crossing iff x0 + j + 0.5 < xcross
    k = np.ceil(xcross - (x0 + 0.5)).astype(np.int64)
    np.clip(k, 0, w, out=k)
    cnt = np.zeros((h, w + 1), dtype=np.int64)
    np.add.at(cnt, (rows, k), 1)
    # crossings strictly to the right of pixel j = those with k > j
    right = np.cumsum(cnt[:, ::-1], axis=1)[:, ::-1]
    mask[:] = (right[:, 1:] & 1).astype(bool)
    return mask


# -- run-length encoding ----------------------------------------------------

def rle_encode(m: np.ndarray) -> RLEMask:
    m = np.asarray(m, dtype=bool)
    h, w = m.shape
    flat = m.ravel(order="F")
    if flat.size == 0:
        return RLEMask(h, w, ())
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return RLEMask(h, w, tuple(counts))


def rle_decode(r: RLEMask) -> np.ndarray:
    counts = np.asarray(r.counts, dtype=np.int64)
    total = r.height * r.width
    if (counts < 0).any():
        raise CorruptRLEError("negative run length")
    if int(counts.sum()) != total:
        raise CorruptRLEError(f"run lengths sum to {int(counts.sum())}, expected {total}")
    values = np.zeros(len(counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, counts)
    return flat.reshape((r.height, r.width), order="F")


def rle_area(r: RLEMask) -> int:
    return int(sum(r.counts[1::2]))


def _as_bits(m):
    if isinstance(m, RLEMask):
        return rle_decode(m)
    return np.asarray(m, dtype=bool)


def mask_iou(a, b) -> float:
    """Intersection over union of two equally sized masks (0 when both are empty)."""
    a, b = _as_bits(a), _as_bits(b)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"{a.shape} vs {b.shape}")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 0.0
    return int(np.count_nonzero(a & b)) / union


# -- segmentation helpers shared by the pipeline stages ----------------------

def segmentation_area(seg: Segmentation) -> float:
    if isinstance(seg, RLEMask):
        return float(rle_area(seg))
    return polygon_area(seg)


def segmentation_bbox(seg: Segmentation):
    if isinstance(seg, RLEMask):
        bits = rle_decode(seg)
        ys, xs = np.nonzero(bits)
        if not len(xs):
            raise DegeneratePolygonError("bbox of an empty mask")
        return (int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))
    return bbox_of(seg)


class MaskWindow(NamedTuple):
    """A mask stored as a tight crop: ``bits`` placed at frame offset ``(x0, y0)``."""

    x0: int
    y0: int
    bits: np.ndarray

    @property
    def area(self):
        return int(np.count_nonzero(self.bits))


def to_window(seg: Segmentation, height: int, width: int) -> MaskWindow:
    """Rasterize only the part of the frame a segmentation can touch."""
    if isinstance(seg, RLEMask):
        bits = rle_decode(seg)
        if bits.shape != (height, width):
            raise DimensionMismatchError(f"RLE of size {bits.shape} on a {height}x{width} image")
        ys, xs = np.nonzero(bits)
        if not len(xs):
            return MaskWindow(0, 0, np.zeros((0, 0), dtype=bool))
        x0, y0 = int(xs.min()), int(ys.min())
        return MaskWindow(x0, y0, bits[y0:ys.max() + 1, x0:xs.max() + 1])
    if not seg.rings:
        return MaskWindow(0, 0, np.zeros((0, 0), dtype=bool))
    bx, by, bw, bh = bbox_of(seg)
    x0 = max(0, int(math.floor(bx)))
    y0 = max(0, int(math.floor(by)))
    x1 = min(width, int(math.ceil(bx + bw)) + 1)
    y1 = min(height, int(math.ceil(by + bh)) + 1)
    if x1 <= x0 or y1 <= y0:
        return MaskWindow(0, 0, np.zeros((0, 0), dtype=bool))
    return MaskWindow(x0, y0, rasterize(seg, y1 - y0, x1 - x0, x0, y0))


def window_iou(a: MaskWindow, b: MaskWindow, area_a: int | None = None, area_b: int | None = None) -> float:
    """IoU of two cropped masks living in the same frame."""
    na = a.area if area_a is None else area_a
    nb = b.area if area_b is None else area_b
    if na + nb == 0:
        return 0.0
    ah, aw = a.bits.shape
    bh, bw = b.bits.shape
    x0, y0 = max(a.x0, b.x0), max(a.y0, b.y0)
    x1, y1 = min(a.x0 + aw, b.x0 + bw), min(a.y0 + ah, b.y0 + bh)
    inter = 0
    if x1 > x0 and y1 > y0:
        sa = a.bits[y0 - a.y0:y1 - a.y0, x0 - a.x0:x1 - a.x0]
        sb = b.bits[y0 - b.y0:y1 - b.y0, x0 - b.x0:x1 - b.x0]
        inter = int(np.count_nonzero(sa & sb))
    return inter / (na + nb - inter)


def as_polygon_set(rings: Sequence) -> PolygonSet:
    return PolygonSet(tuple(tuple(r) for r in rings))
