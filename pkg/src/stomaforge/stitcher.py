"""Patch-to-frame reprojection and duplicate suppression across overlaps."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coco import Prediction
from .errors import DanglingReferenceError, OutOfBoundsError
from .maskgeom import RLEMask, bbox_of, rle_decode, rle_encode, to_window, translate, window_iou

DEDUP_IOU = 0.5


@dataclass(frozen=True)
class FramePrediction:
    source_image_id: int
    category_id: int
    segmentation: object
    score: float
    contributing_patches: tuple = field(default=(), compare=False)

    def to_prediction(self):
        return Prediction(self.source_image_id, self.category_id, self.segmentation, self.score)


def reproject_to_frame(pred: Prediction, patch, frame_w: int, frame_h: int) -> FramePrediction:
    """Move a patch-space prediction into its source frame."""
    if patch.patch_image_id is not None and pred.image_id != patch.patch_image_id:
        raise ValueError(f"prediction on image {pred.image_id} reprojected through patch "
                         f"{patch.patch_image_id}")
    seg = pred.segmentation
    if isinstance(seg, RLEMask):
        if seg.shape != (patch.patch_h, patch.patch_w):
            raise OutOfBoundsError(f"RLE size {list(seg.shape)} does not match patch "
                                   f"{patch.patch_h}x{patch.patch_w}")
        if patch.x0 + patch.patch_w > frame_w or patch.y0 + patch.patch_h > frame_h:
            raise OutOfBoundsError(f"patch {patch.patch_file_name} exceeds frame {frame_w}x{frame_h}")
        frame = np.zeros((frame_h, frame_w), dtype=bool)
        frame[patch.y0:patch.y0 + patch.patch_h, patch.x0:patch.x0 + patch.patch_w] = rle_decode(seg)
        out = rle_encode(frame)
    else:
        out = translate(seg, patch.x0, patch.y0)
        if out.rings:
            x, y, w, h = bbox_of(out)
            if x < 0 or y < 0 or x + w > frame_w or y + h > frame_h:
                raise OutOfBoundsError(f"reprojected extent {[x, y, x + w, y + h]} exits frame "
                                       f"{frame_w}x{frame_h}")
    return FramePrediction(patch.source_image_id, pred.category_id, out, pred.score, (patch,))


def dedup(preds, iou_threshold=DEDUP_IOU, frame_w=None, frame_h=None):
    """Greedy per-class mask suppression on one frame.

    Predictions are visited by descending score (input order on ties); one is
    kept when its mask IoU with every kept prediction of the same class is
    below ``iou_threshold``.
    """
    if not 0 < iou_threshold <= 1:
        raise ValueError("iou_threshold must lie in (0, 1]")
    preds = list(preds)
    if frame_w is None or frame_h is None:
        frame_w, frame_h = _frame_extent(preds)
    order = sorted(range(len(preds)), key=lambda k: -preds[k].score)
    windows = {}
    kept_by_class = {}
    kept = []
    for k in order:
        p = preds[k]
        win = windows[k] = to_window(p.segmentation, frame_h, frame_w)
        rivals = kept_by_class.setdefault(p.category_id, [])
        if all(window_iou(win, windows[j]) < iou_threshold for j in rivals):
            rivals.append(k)
            kept.append(p)
    return kept


def _frame_extent(preds):
    w = h = 1
    for p in preds:
        seg = p.segmentation
        if isinstance(seg, RLEMask):
            h, w = max(h, seg.height), max(w, seg.width)
        elif seg.rings:
            x, y, bw, bh = bbox_of(seg)
            w, h = max(w, int(np.ceil(x + bw)) + 1), max(h, int(np.ceil(y + bh)) + 1)
    return w, h


def stitch(preds, manifest, frames, iou_threshold=DEDUP_IOU):
    """Reproject patch predictions via the manifest, then dedup per frame.

    ``frames`` maps source image id to its :class:`~stomaforge.coco.ImageRecord`.
    Output is ordered by frame id, then by descending score.
    """
    by_patch = {rec.patch_image_id: rec for rec in manifest}
    per_frame = {}
    for p in preds:
        rec = by_patch.get(p.image_id)
        if rec is None:
            raise DanglingReferenceError("prediction", f"patch image {p.image_id} in manifest")
        im = frames[rec.source_image_id]
        per_frame.setdefault(rec.source_image_id, []).append(reproject_to_frame(p, rec, im.width, im.height))
    out = []
    for fid in sorted(per_frame):
        im = frames[fid]
        out.extend(dedup(per_frame[fid], iou_threshold, im.width, im.height))
    return out
