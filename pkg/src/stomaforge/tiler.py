"""Overlapping patch tiling with area-fraction instance assignment."""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from .coco import Annotation, Dataset, ImageRecord
from .errors import DegeneratePolygonError, PatchLargerThanFrameError
from .maskgeom import (
    Rect,
    RLEMask,
    bbox_of,
    clip_polygon_to_rect,
    polygon_area,
    rle_area,
    rle_decode,
    rle_encode,
    translate,
)

PATCH = 341
STRIDE = 331
MIN_FRACTION = 0.5


class EmptyPatchPolicy(str, Enum):
    DROP_EMPTY = "drop_empty"
    KEEP_EMPTY = "keep_empty"

    @classmethod
    def coerce(cls, value):
        if isinstance(value, cls):
            return value
        return cls(str(value).replace("-", "_"))


@dataclass(frozen=True)
class TileGrid:
    frame_w: int
    frame_h: int
    patch: int
    stride: int
    col_offsets: tuple
    row_offsets: tuple

    def __len__(self):
        return len(self.col_offsets) * len(self.row_offsets)

    def windows(self):
        """Yield ``(row, col, x0, y0)`` in row-major order."""
        for r, y0 in enumerate(self.row_offsets):
            for c, x0 in enumerate(self.col_offsets):
                yield r, c, x0, y0


@dataclass(frozen=True)
class PatchRecord:
    source_image_id: int
    row: int
    col: int
    x0: int
    y0: int
    patch_w: int
    patch_h: int
    patch_file_name: str
    patch_image_id: int | None = None

    @property
    def rect(self):
        return Rect(self.x0, self.y0, self.x0 + self.patch_w, self.y0 + self.patch_h)

    def to_dict(self):
        return asdict(self)


def _offsets(frame, patch, stride):
    offs = list(range(0, frame - patch + 1, stride))
    border = frame - patch
    if border - offs[-1] >= 1:
        offs.append(border)
    return tuple(offs)


def compute_grid(frame_w, frame_h, patch=PATCH, stride=STRIDE) -> TileGrid:
    """Stride lattice plus one border-aligned window per axis when needed."""
    if patch > frame_w or patch > frame_h:
        raise PatchLargerThanFrameError(f"patch {patch} exceeds frame {frame_w}x{frame_h}")
    if not 0 < stride <= patch:
        raise ValueError(f"stride must lie in (0, {patch}], got {stride}")
    return TileGrid(frame_w, frame_h, patch, stride,
                    _offsets(frame_w, patch, stride), _offsets(frame_h, patch, stride))


def grid_covers(grid: TileGrid) -> bool:
    """Interval check that the windows cover the whole frame on both axes."""
    def covers(offs, size):
        reach = 0
        for o in offs:
            if o > reach:
                return False
            reach = max(reach, o + grid.patch)
        return reach >= size
    return covers(grid.col_offsets, grid.frame_w) and covers(grid.row_offsets, grid.frame_h)


def patch_file_name(source_name, row, col):
    stem = os.path.splitext(os.path.basename(source_name))[0]
    return f"{stem}_r{row:02}_c{col:02}.jpg"


def patch_records(image: ImageRecord, grid: TileGrid):
    return [
        PatchRecord(image.id, r, c, x0, y0, grid.patch, grid.patch,
                    patch_file_name(image.file_name, r, c))
        for r, c, x0, y0 in grid.windows()
    ]


# -- fractions and assignment -----------------------------------------------

def _rle_window_count(seg: RLEMask, rect: Rect):
    bits = rle_decode(seg)
    return int(np.count_nonzero(bits[int(rect.y0):int(rect.y1), int(rect.x0):int(rect.x1)]))


def instance_patch_fraction(a: Annotation, p: PatchRecord) -> float:
    """Share of the instance area that falls inside the patch window."""
    seg = a.segmentation
    if isinstance(seg, RLEMask):
        total = rle_area(seg)
        if total == 0:
            raise DegeneratePolygonError(f"annotation {a.id} has an empty mask")
        return _rle_window_count(seg, p.rect) / total
    total = polygon_area(seg)
    if total <= 0:
        raise DegeneratePolygonError(f"annotation {a.id} has zero area")
    return polygon_area(clip_polygon_to_rect(seg, p.rect)) / total


def _best_patch(a, records):
    """Patch with the largest fraction; first in (row, col) order on ties."""
    best, best_frac = None, -1.0
    seg = a.segmentation
    if isinstance(seg, RLEMask):
        bx = by = None
    else:
        bx, by, bw, bh = bbox_of(seg)
    for rec in records:
        if bx is not None and (bx >= rec.x0 + rec.patch_w or bx + bw <= rec.x0
                               or by >= rec.y0 + rec.patch_h or by + bh <= rec.y0):
            continue
        frac = instance_patch_fraction(a, rec)
        if frac > best_frac:
            best, best_frac = rec, frac
    return best, max(best_frac, 0.0)


def assign_instances(d: Dataset, grids: dict) -> dict:
    """Map each annotation id to its owning :class:`PatchRecord`, or ``None``.

    An annotation is owned by the patch holding the largest share of its
    area, provided that share exceeds one half.
    """
    out = {}
    for im in d.images:
        records = patch_records(im, grids[im.id])
        for a in d.annotations_by_image.get(im.id, ()):
            rec, frac = _best_patch(a, records)
            out[a.id] = rec if frac > MIN_FRACTION else None
    return out


def _clip_into_patch(a: Annotation, rec: PatchRecord):
    seg = a.segmentation
    if isinstance(seg, RLEMask):
        bits = rle_decode(seg)[rec.y0:rec.y0 + rec.patch_h, rec.x0:rec.x0 + rec.patch_w]
        local = rle_encode(bits)
        ys, xs = np.nonzero(bits)
        bbox = (int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))
        return local, bbox, float(rle_area(local))
    clipped = clip_polygon_to_rect(seg, rec.rect)
    local = translate(clipped, -rec.x0, -rec.y0)
    return local, bbox_of(local), polygon_area(local)


def tile_image(image: ImageRecord, annotations, grid: TileGrid):
    """Tile one frame. Returns ``[(PatchRecord, [(annotation, seg, bbox, area)])]``."""
    records = patch_records(image, grid)
    owned = {rec: [] for rec in records}
    unassigned = []
    for a in annotations:
        rec, frac = _best_patch(a, records)
        if frac > MIN_FRACTION:
            owned[rec].append((a, *_clip_into_patch(a, rec)))
        else:
            unassigned.append(a.id)
    return [(rec, owned[rec]) for rec in records], unassigned


def _tile_job(args):
    image, annotations, patch, stride = args
    return tile_image(image, annotations, compute_grid(image.width, image.height, patch, stride))


@dataclass
class TilingResult:
    dataset: Dataset
    records: list
    unassigned: list

    def manifest_json(self):
        return json.dumps([r.to_dict() for r in self.records], separators=(",", ":"))


def tile_dataset(d: Dataset, policy=EmptyPatchPolicy.DROP_EMPTY, patch=PATCH, stride=STRIDE,
                 jobs=1) -> TilingResult:
    """Cut every frame into patches and re-home its annotations.

    Patch images and annotations are numbered from 1 in (image id, row, col)
    order, so output is identical for any ``jobs`` value.
    """
    policy = EmptyPatchPolicy.coerce(policy)
    images = sorted(d.images, key=lambda im: im.id)
    tasks = [(im, d.annotations_by_image.get(im.id, []), patch, stride) for im in images]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_tile_job, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_tile_job(t) for t in tasks]

    out_images, out_anns, out_records, unassigned = [], [], [], []
    next_image, next_ann = 1, 1
    for per_image, missed in results:
        unassigned.extend(missed)
        for rec, owned in per_image:
            if not owned and policy is EmptyPatchPolicy.DROP_EMPTY:
                continue
            rec = PatchRecord(**{**rec.to_dict(), "patch_image_id": next_image})
            out_records.append(rec)
            out_images.append(ImageRecord(next_image, rec.patch_file_name, rec.patch_w, rec.patch_h,
                                          {"source_image_id": rec.source_image_id,
                                           "x0": rec.x0, "y0": rec.y0}))
            for a, seg, bbox, area in owned:
                out_anns.append(Annotation(next_ann, next_image, a.category_id, seg, tuple(bbox), area,
                                           a.iscrowd, a.provenance, dict(a.extra)))
                next_ann += 1
            next_image += 1
    tiled = Dataset(out_images, out_anns, d.categories, dict(d.extra))
    return TilingResult(tiled, out_records, unassigned)


def read_manifest(path):
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return [PatchRecord(**r) for r in raw]
