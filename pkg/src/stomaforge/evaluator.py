"""Pixel-level mIoU/mAcc and COCO-protocol mask AP."""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .coco import Dataset, check_prediction_references
from .errors import DimensionMismatchError
from .maskgeom import RLEMask, rle_decode, to_window, window_iou

SEMANTIC_CLASSES = ("background", "complex area", "guard cell area", "pore area")
# painting order: later classes overwrite earlier ones, so the innermost wins
PAINT_ORDER = ("complex area", "guard cell area", "pore area")
REPORT_ORDER = ("pore area", "guard cell area", "complex area")
REPORT_LABELS = {"pore area": "Pore area", "guard cell area": "Guard cell", "complex area": "Complex area"}

IOU_THRESHOLDS = tuple(np.arange(50, 100, 5) / 100)
RECALL_POINTS = np.arange(101) / 100


# -- semantic ---------------------------------------------------------------

def build_semantic_map(annotations, h, w, category_names) -> np.ndarray:
    """Paint instance annotations into a ``uint8`` label map.

    ``category_names`` maps category id to name. Label ids follow
    :data:`SEMANTIC_CLASSES`; pixels no instance covers stay background.
    """
    labels = np.zeros((h, w), dtype=np.uint8)
    by_name = {}
    for a in annotations:
        by_name.setdefault(category_names[a.category_id], []).append(a)
    for name in PAINT_ORDER:
        value = SEMANTIC_CLASSES.index(name)
        for a in by_name.get(name, ()):
            seg = a.segmentation
            if isinstance(seg, RLEMask):
                bits = rle_decode(seg)
                if bits.shape != (h, w):
                    raise DimensionMismatchError(f"RLE {bits.shape} on a {h}x{w} map")
                labels[bits] = value
            elif seg.rings:
                win = to_window(seg, h, w)
                bh, bw = win.bits.shape
                view = labels[win.y0:win.y0 + bh, win.x0:win.x0 + bw]
                view[win.bits] = value
    return labels


@dataclass
class ConfusionMatrix:
    """``counts[g, p]`` = pixels with ground truth ``g`` predicted as ``p``."""

    n_classes: int = len(SEMANTIC_CLASSES)
    counts: np.ndarray = None

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.n_classes, self.n_classes), dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)

    @property
    def tp(self):
        return np.diag(self.counts)

    @property
    def fn(self):
        return self.counts.sum(axis=1) - self.tp

    @property
    def fp(self):
        return self.counts.sum(axis=0) - self.tp

    @property
    def total(self):
        return int(self.counts.sum())

    def __add__(self, other):
        return ConfusionMatrix(self.n_classes, self.counts + other.counts)


def accumulate_confusion(gt, pred, acc: ConfusionMatrix | None = None) -> ConfusionMatrix:
    acc = ConfusionMatrix() if acc is None else acc
    gt, pred = np.asarray(gt), np.asarray(pred)
    if gt.shape != pred.shape:
        raise DimensionMismatchError(f"{gt.shape} vs {pred.shape}")
    c = acc.n_classes
    idx = gt.astype(np.int64).ravel() * c + pred.astype(np.int64).ravel()
    binc = np.bincount(idx, minlength=c * c).reshape(c, c)
    return ConfusionMatrix(c, acc.counts + binc)


@dataclass
class SemanticScores:
    iou: list
    acc: list
    miou: float
    macc: float
    class_names: tuple = SEMANTIC_CLASSES

    def to_dict(self):
        return {
            "mIoU": self.miou,
            "mAcc": self.macc,
            "per_class": {n: {"IoU": i, "Acc": a} for n, i, a in zip(self.class_names, self.iou, self.acc)},
        }


def miou_macc(cm: ConfusionMatrix, class_names=SEMANTIC_CLASSES) -> SemanticScores:
    """Per-class IoU and accuracy in percent, plus their means.

    A class with no TP, FP or FN pixels is absent (``None``) and left out of
    both means; accuracy is also ``None`` when the class has no ground-truth
    pixels.
    """
    tp, fp, fn = cm.tp, cm.fp, cm.fn
    iou, acc = [], []
    for c in range(cm.n_classes):
        t, u, g = int(tp[c]), int(tp[c] + fp[c] + fn[c]), int(tp[c] + fn[c])
        iou.append(None if u == 0 else 100.0 * t / u)
        acc.append(None if u == 0 or g == 0 else 100.0 * t / g)
    present_iou = [v for v in iou if v is not None]
    present_acc = [v for v in acc if v is not None]
    miou = float(np.mean(present_iou)) if present_iou else float("nan")
    macc = float(np.mean(present_acc)) if present_acc else float("nan")
    return SemanticScores(iou, acc, miou, macc, tuple(class_names))


def _semantic_job(args):
    gt_anns, pred_anns, h, w, names = args
    return accumulate_confusion(build_semantic_map(gt_anns, h, w, names),
                                build_semantic_map(pred_anns, h, w, names)).counts


def evaluate_semantic(gt: Dataset, pred_annotations_by_image, jobs=1) -> SemanticScores:
    """Confusion over every GT image; predictions are any objects with
    ``category_id`` and ``segmentation`` grouped by image id."""
    names = {c.id: c.name for c in gt.categories}
    tasks = [(gt.annotations_by_image.get(im.id, []), pred_annotations_by_image.get(im.id, []),
              im.height, im.width, names) for im in sorted(gt.images, key=lambda im: im.id)]
    cm = ConfusionMatrix()
    for counts in _map(_semantic_job, tasks, jobs):
        cm.counts += counts
    return miou_macc(cm)


# -- instance ---------------------------------------------------------------

@dataclass
class ClassAP:
    name: str
    n_gt: int
    ap: float | None
    ap50: float | None
    ap_per_threshold: list = field(default_factory=list)
    precision: list = field(default_factory=list)


@dataclass
class APResult:
    per_class: dict
    mAP: float
    AP50: float
    thresholds: tuple = IOU_THRESHOLDS

    def to_dict(self):
        return {
            "AP": self.mAP,
            "AP50": self.AP50,
            "iou_thresholds": [float(t) for t in self.thresholds],
            "per_class": {
                name: {"AP": c.ap, "AP50": c.ap50, "n_gt": c.n_gt,
                       "AP_per_threshold": c.ap_per_threshold}
                for name, c in self.per_class.items()
            },
        }


def _image_ious(args):
    """IoU matrices for one image, keyed by category id."""
    gts, preds, h, w = args
    gwin = [(a, to_window(a.segmentation, h, w)) for a in gts]
    out = {}
    for cat in {a.category_id for a in gts} | {p.category_id for _, p in preds}:
        g = sorted(((a.id, win) for a, win in gwin if a.category_id == cat), key=lambda t: t[0])
        ps = [(k, to_window(p.segmentation, h, w)) for k, p in preds if p.category_id == cat]
        garea = [win.area for _, win in g]
        m = np.zeros((len(ps), len(g)))
        for i, (_, pw) in enumerate(ps):
            pa = pw.area
            for j, (_, gw) in enumerate(g):
                m[i, j] = window_iou(pw, gw, pa, garea[j])
        out[cat] = ([gid for gid, _ in g], [k for k, _ in ps], m)
    return out


def _average_precision(tp, n_gt):
    """101-point interpolated AP from TP flags in score order."""
    if n_gt == 0:
        return None, []
    if len(tp) == 0:
        return 0.0, [0.0] * len(RECALL_POINTS)
    tp = np.asarray(tp, dtype=float)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean()), sampled.tolist()


def evaluate_instances(gt: Dataset, preds, jobs=1) -> APResult:
    """Mask AP over IoU thresholds 0.50:0.05:0.95 for every GT category.

    Predictions are ranked by score (input order breaks ties) and greedily
    matched to the unmatched same-image GT of highest IoU at or above the
    threshold, lower GT id first on equal IoU. Categories without GT get
    ``None`` and are left out of the means.
    """
    preds = list(preds)
    check_prediction_references(preds, gt)
    by_image = {}
    for k, p in enumerate(preds):
        by_image.setdefault(p.image_id, []).append((k, p))
    images = sorted(gt.images, key=lambda im: im.id)
    tasks = [(gt.annotations_by_image.get(im.id, []), by_image.get(im.id, []), im.height, im.width)
             for im in images]
    tables = dict(zip((im.id for im in images), _map(_image_ious, tasks, jobs)))

    per_class = {}
    for cat in gt.categories:
        n_gt = sum(1 for a in gt.annotations if a.category_id == cat.id)
        ranked = sorted((k for k, p in enumerate(preds) if p.category_id == cat.id),
                        key=lambda k: (-preds[k].score, k))
        # row of each prediction inside its image's IoU matrix
        rows = {}
        for im_id, table in tables.items():
            if cat.id in table:
                for r, k in enumerate(table[cat.id][1]):
                    rows[k] = (im_id, r)
        aps, curves = [], []
        for t in IOU_THRESHOLDS:
            used = {}
            flags = []
            for k in ranked:
                im_id, r = rows[k]
                gids, _, m = tables[im_id][cat.id]
                taken = used.setdefault(im_id, set())
                best, best_iou = None, -1.0
                for j in range(len(gids)):
                    if j in taken:
                        continue
                    iou = m[r, j]
                    if iou >= t and iou > best_iou:
                        best, best_iou = j, iou
                if best is None:
                    flags.append(0)
                else:
                    taken.add(best)
                    flags.append(1)
            ap, curve = _average_precision(flags, n_gt)
            aps.append(ap)
            curves.append(curve)
        if n_gt == 0:
            per_class[cat.name] = ClassAP(cat.name, 0, None, None, [], [])
        else:
            per_class[cat.name] = ClassAP(cat.name, n_gt, float(np.mean(aps)), aps[0], aps, curves)

    present = [c for c in per_class.values() if c.ap is not None]
    m_ap = float(np.mean([c.ap for c in present])) if present else float("nan")
    m_ap50 = float(np.mean([c.ap50 for c in present])) if present else float("nan")
    return APResult(per_class, m_ap, m_ap50)


# -- reports ----------------------------------------------------------------

def _pct(v):
    return "-" if v is None or v != v else f"{v:.2f}"


def _table(headers, row):
    cells = [list(headers), [_pct(v) if not isinstance(v, str) else v for v in row]]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    return "\n".join("  ".join(c.rjust(wd) for c, wd in zip(r, widths)) for r in cells)


def format_instance_table(res: APResult) -> str:
    headers, row = ["Overall AP", "Overall AP50"], [_scale(res.mAP), _scale(res.AP50)]
    for name in REPORT_ORDER:
        c = res.per_class.get(name)
        label = REPORT_LABELS[name]
        headers += [f"{label} AP", f"{label} AP50"]
        row += [_scale(c.ap) if c else None, _scale(c.ap50) if c else None]
    return _table(headers, row)


def format_semantic_table(s: SemanticScores) -> str:
    headers, row = ["Overall mIoU", "Overall mAcc"], [s.miou, s.macc]
    for name in REPORT_ORDER:
        k = s.class_names.index(name)
        label = REPORT_LABELS[name]
        headers += [f"{label} mIoU", f"{label} mAcc"]
        row += [s.iou[k], s.acc[k]]
    return _table(headers, row)


def _scale(v):
    return None if v is None or v != v else 100.0 * v


def instance_report_json(res: APResult) -> str:
    return json.dumps(res.to_dict(), indent=2, sort_keys=True)


def _map(fn, tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    return [fn(t) for t in tasks]
