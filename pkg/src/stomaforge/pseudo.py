"""Confidence-filtered pseudo labels and GT + PL merging."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

from .coco import Annotation, Dataset, check_prediction_references
from .errors import CategoryMismatchError, MalformedJSONError, MissingThresholdError
from .maskgeom import PolygonSet, Rect, clip_polygon_to_rect, segmentation_area, segmentation_bbox

DEFAULT_THRESHOLDS = {"pore area": 0.5, "guard cell area": 0.7, "complex area": 0.7}


@dataclass(frozen=True)
class ThresholdPolicy:
    thresholds: dict = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))

    def __post_init__(self):
        for name, t in self.thresholds.items():
            if isinstance(t, bool) or not isinstance(t, (int, float)) or not 0.0 <= t <= 1.0:
                raise ValueError(f"threshold for {name!r} must lie in [0, 1], got {t!r}")

    def threshold(self, name):
        try:
            return self.thresholds[name]
        except KeyError:
            raise MissingThresholdError(name) from None

    def covers(self, d: Dataset):
        for c in d.categories:
            self.threshold(c.name)

    @classmethod
    def from_json(cls, text):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MalformedJSONError(f"invalid threshold file: {exc}") from exc
        if not isinstance(raw, dict):
            raise MalformedJSONError("threshold policy must be a JSON object")
        return cls(raw)

    def to_dict(self):
        return dict(self.thresholds)


@dataclass
class MergeReport:
    human_count: int = 0
    pseudo_count: int = 0
    human_images: int = 0
    pseudo_images: int = 0
    image_id_offset: int = 0
    annotation_id_offset: int = 0
    kept: dict = field(default_factory=dict)
    dropped: dict = field(default_factory=dict)

    @property
    def id_offset_applied(self):
        return self.annotation_id_offset

    def to_dict(self):
        return {
            "human_count": self.human_count,
            "pseudo_count": self.pseudo_count,
            "human_images": self.human_images,
            "pseudo_images": self.pseudo_images,
            "image_id_offset": self.image_id_offset,
            "annotation_id_offset": self.annotation_id_offset,
            "kept": self.kept,
            "dropped": self.dropped,
        }


def filter_predictions(preds, policy: ThresholdPolicy, category_names):
    """Split predictions into ``(kept, dropped)`` by ``score >= threshold``.

    ``category_names`` maps category id to name (a :class:`Dataset` works via
    its ``category_index``).
    """
    kept, dropped = [], []
    for p in preds:
        name = category_names[p.category_id]
        (kept if p.score >= policy.threshold(name) else dropped).append(p)
    return kept, dropped


def class_counts(preds, category_names):
    counts = Counter(category_names[p.category_id] for p in preds)
    return {name: counts[name] for name in sorted(counts)}


def build_pseudo_dataset(patches: Dataset, kept) -> Dataset:
    """One pseudo annotation per kept prediction; every patch image survives.

    Polygon masks are clipped to their image so that the result validates;
    a prediction with no area left inside the image yields no annotation.
    """
    check_prediction_references(kept, patches)
    anns = []
    for p in kept:
        seg = p.segmentation
        if isinstance(seg, PolygonSet):
            im = patches.image_index[p.image_id]
            seg = clip_polygon_to_rect(seg, Rect(0, 0, im.width, im.height))
            if not seg.rings:
                continue
        area = segmentation_area(seg)
        if area <= 0:
            continue
        bbox = segmentation_bbox(seg)
        anns.append(Annotation(len(anns) + 1, p.image_id, p.category_id, seg, tuple(bbox), area, 0, "pseudo",
                               {"score": p.score}))
    return Dataset(patches.images, anns, patches.categories, dict(patches.extra))


def _offset(human, pseudo):
    """Shift that starts the pseudo ids right after the largest human id."""
    if not pseudo:
        return 0
    return max((r.id for r in human), default=0) + 1 - min(r.id for r in pseudo)


def merge_datasets(human: Dataset, pseudo: Dataset):
    """Concatenate a human and a pseudo set into one id space.

    Pseudo ids shift by one constant per id space so that the smallest pseudo
    id lands on ``max(human id) + 1``; pseudo category ids are remapped to the
    human ones by name. Per-class filter counts recorded by the pseudo-filter
    stage (``extra["pseudo_filter"]``) are carried into the report.
    """
    hnames = {c.name for c in human.categories}
    pnames = {c.name for c in pseudo.categories}
    if hnames != pnames or len(hnames) != len(human.categories) or len(pnames) != len(pseudo.categories):
        raise CategoryMismatchError(f"category names differ: {sorted(hnames)} vs {sorted(pnames)}")
    cat_map = {c.id: human.category_ids_by_name[c.name] for c in pseudo.categories}

    img_off = _offset(human.images, pseudo.images)
    ann_off = _offset(human.annotations, pseudo.annotations)
    images = list(human.images)
    images.extend(im.__class__(im.id + img_off, im.file_name, im.width, im.height, dict(im.extra))
                  for im in pseudo.images)
    anns = list(human.annotations)
    anns.extend(Annotation(a.id + ann_off, a.image_id + img_off, cat_map[a.category_id], a.segmentation,
                           a.bbox, a.area, a.iscrowd, a.provenance, dict(a.extra))
                for a in pseudo.annotations)
    merged = Dataset(images, anns, human.categories, dict(human.extra))
    report = MergeReport(
        human_count=len(human.annotations),
        pseudo_count=len(pseudo.annotations),
        human_images=len(human.images),
        pseudo_images=len(pseudo.images),
        image_id_offset=img_off,
        annotation_id_offset=ann_off,
    )
    stage = pseudo.extra.get("pseudo_filter")
    if isinstance(stage, dict):
        report.kept = dict(stage.get("kept", {}))
        report.dropped = dict(stage.get("dropped", {}))
    return merged, report
