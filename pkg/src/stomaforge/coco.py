"""COCO-style dataset and prediction-results model.

Parsing enforces structure (required fields, id uniqueness, reference
integrity). Geometric consistency is checked separately by :func:`validate`,
which reports instead of raising so that broken exports can be inspected.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional

from .errors import (
    DanglingReferenceError,
    DuplicateIdError,
    MalformedJSONError,
    MissingFieldError,
    ScoreOutOfRangeError,
    StomaforgeError,
)
from .maskgeom import PolygonSet, RLEMask, rle_area, rle_decode, polygon_area, segmentation_bbox

CATEGORY_NAMES = ("complex area", "guard cell area", "pore area")
PROVENANCES = ("human", "pseudo")
BBOX_TOLERANCE = 1.0

_IMAGE_KEYS = ("id", "file_name", "width", "height")
_CATEGORY_KEYS = ("id", "name")
_ANNOTATION_KEYS = ("id", "image_id", "category_id", "segmentation", "bbox", "area", "iscrowd", "provenance")
_PREDICTION_KEYS = ("image_id", "category_id", "segmentation", "score", "bbox")


@dataclass(frozen=True)
class ImageRecord:
    id: int
    file_name: str
    width: int
    height: int
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Annotation:
    id: int
    image_id: int
    category_id: int
    segmentation: object
    bbox: tuple
    area: float
    iscrowd: int = 0
    provenance: str = "human"
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Prediction:
    image_id: int
    category_id: int
    segmentation: object
    score: float
    bbox: Optional[tuple] = None
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Dataset:
    images: tuple = ()
    annotations: tuple = ()
    categories: tuple = ()
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("images", "annotations", "categories"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @cached_property
    def image_index(self):
        return {im.id: im for im in self.images}

    @cached_property
    def category_index(self):
        return {c.id: c for c in self.categories}

    @cached_property
    def category_ids_by_name(self):
        return {c.name: c.id for c in self.categories}

    @cached_property
    def annotations_by_image(self):
        out = {im.id: [] for im in self.images}
        for a in self.annotations:
            out.setdefault(a.image_id, []).append(a)
        return out

    def category_name(self, category_id):
        return self.category_index[category_id].name

    def replace(self, **changes):
        return replace(self, **changes)


# -- parsing ----------------------------------------------------------------

def _load(text):
    try:
        return json.loads(text)
    except (json.JSONDecodeError, TypeError) as exc:
        raise MalformedJSONError(f"invalid JSON: {exc}") from exc


def _require(obj, key, path):
    if not isinstance(obj, dict):
        raise MalformedJSONError(f"{path} is not an object", path=path)
    if key not in obj:
        raise MissingFieldError(f"{path}.{key}")
    return obj[key]


def _int(value, path):
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise MalformedJSONError(f"{path} must be an integer, got {value!r}", path=path)
    return value


def _num(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedJSONError(f"{path} must be a number, got {value!r}", path=path)
    if not math.isfinite(value):
        raise MalformedJSONError(f"{path} must be finite", path=path)
    return value


def _str(value, path):
    if not isinstance(value, str):
        raise MalformedJSONError(f"{path} must be a string", path=path)
    return value


def _list(value, path):
    if not isinstance(value, list):
        raise MalformedJSONError(f"{path} must be an array", path=path)
    return value


def parse_segmentation(seg, path="segmentation"):
    """Decode a COCO polygon list or uncompressed RLE object."""
    if isinstance(seg, list):
        rings = []
        for k, ring in enumerate(seg):
            ring = _list(ring, f"{path}[{k}]")
            rings.append(tuple(_num(c, f"{path}[{k}]") for c in ring))
        return PolygonSet(tuple(rings))
    if isinstance(seg, dict):
        size = _list(_require(seg, "size", path), f"{path}.size")
        counts = _require(seg, "counts", path)
        if isinstance(counts, str):
            raise MalformedJSONError(f"{path}: compressed RLE strings are not supported", path=path)
        counts = _list(counts, f"{path}.counts")
        if len(size) != 2:
            raise MalformedJSONError(f"{path}.size must be [h, w]", path=path)
        h, w = (_int(v, f"{path}.size") for v in size)
        return RLEMask(h, w, tuple(_int(c, f"{path}.counts") for c in counts))
    raise MalformedJSONError(f"{path} must be a polygon list or RLE object", path=path)


def _bbox(value, path):
    value = _list(value, path)
    if len(value) != 4:
        raise MalformedJSONError(f"{path} must have 4 entries", path=path)
    return tuple(_num(v, path) for v in value)


def _extras(obj, known):
    return {k: v for k, v in obj.items() if k not in known}


def dataset_from_dict(raw) -> Dataset:
    if not isinstance(raw, dict):
        raise MalformedJSONError("dataset must be a JSON object")
    images, categories, annotations = [], [], []
    for k, im in enumerate(_list(_require(raw, "images", "$"), "$.images")):
        p = f"$.images[{k}]"
        images.append(ImageRecord(
            id=_int(_require(im, "id", p), p + ".id"),
            file_name=_str(_require(im, "file_name", p), p + ".file_name"),
            width=_int(_require(im, "width", p), p + ".width"),
            height=_int(_require(im, "height", p), p + ".height"),
            extra=_extras(im, _IMAGE_KEYS),
        ))
    for k, c in enumerate(_list(_require(raw, "categories", "$"), "$.categories")):
        p = f"$.categories[{k}]"
        categories.append(Category(
            id=_int(_require(c, "id", p), p + ".id"),
            name=_str(_require(c, "name", p), p + ".name"),
            extra=_extras(c, _CATEGORY_KEYS),
        ))
    for k, a in enumerate(_list(_require(raw, "annotations", "$"), "$.annotations")):
        p = f"$.annotations[{k}]"
        prov = a.get("provenance", "human") if isinstance(a, dict) else "human"
        if prov not in PROVENANCES:
            raise MalformedJSONError(f"{p}.provenance must be one of {PROVENANCES}", path=p)
        iscrowd = a.get("iscrowd", 0) if isinstance(a, dict) else 0
        annotations.append(Annotation(
            id=_int(_require(a, "id", p), p + ".id"),
            image_id=_int(_require(a, "image_id", p), p + ".image_id"),
            category_id=_int(_require(a, "category_id", p), p + ".category_id"),
            segmentation=parse_segmentation(_require(a, "segmentation", p), p + ".segmentation"),
            bbox=_bbox(_require(a, "bbox", p), p + ".bbox"),
            area=_num(_require(a, "area", p), p + ".area"),
            iscrowd=_int(iscrowd, p + ".iscrowd"),
            provenance=prov,
            extra=_extras(a, _ANNOTATION_KEYS),
        ))
    d = Dataset(images, annotations, categories, _extras(raw, ("images", "annotations", "categories")))
    check_references(d)
    return d


def check_references(d: Dataset):
    """Raise on the first duplicate id or dangling reference."""
    for kind, records in (("image", d.images), ("category", d.categories), ("annotation", d.annotations)):
        seen = set()
        for r in records:
            if r.id in seen:
                raise DuplicateIdError(kind, r.id)
            seen.add(r.id)
    images, cats = d.image_index, d.category_index
    for a in d.annotations:
        if a.image_id not in images:
            raise DanglingReferenceError(f"annotation {a.id}", f"image {a.image_id}")
        if a.category_id not in cats:
            raise DanglingReferenceError(f"annotation {a.id}", f"category {a.category_id}")


def parse_dataset(text) -> Dataset:
    """Parse COCO JSON text into a :class:`Dataset`."""
    return dataset_from_dict(_load(text))


def read_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_dataset(fh.read())


# -- serialization ----------------------------------------------------------

def segmentation_to_json(seg):
    return seg.to_json()


def dataset_to_dict(d: Dataset) -> dict:
    out = {
        "images": [
            {"id": im.id, "file_name": im.file_name, "width": im.width, "height": im.height, **im.extra}
            for im in d.images
        ],
        "annotations": [
            {
                "id": a.id,
                "image_id": a.image_id,
                "category_id": a.category_id,
                "segmentation": a.segmentation.to_json(),
                "bbox": list(a.bbox),
                "area": a.area,
                "iscrowd": a.iscrowd,
                "provenance": a.provenance,
                **a.extra,
            }
            for a in d.annotations
        ],
        "categories": [{"id": c.id, "name": c.name, **c.extra} for c in d.categories],
    }
    out.update(d.extra)
    return out


def serialize_dataset(d: Dataset) -> str:
    return json.dumps(dataset_to_dict(d), separators=(",", ":"), allow_nan=False)


def write_dataset(path, d: Dataset):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_dataset(d))


# -- predictions ------------------------------------------------------------

def prediction_from_dict(r, k=0) -> Prediction:
    p = f"$[{k}]"
    score = _num(_require(r, "score", p), p + ".score")
    if not 0.0 <= score <= 1.0:
        raise ScoreOutOfRangeError(f"{p}.score = {score} is outside [0, 1]", path=p, score=score)
    bbox = r.get("bbox")
    return Prediction(
        image_id=_int(_require(r, "image_id", p), p + ".image_id"),
        category_id=_int(_require(r, "category_id", p), p + ".category_id"),
        segmentation=parse_segmentation(_require(r, "segmentation", p), p + ".segmentation"),
        score=score,
        bbox=None if bbox is None else _bbox(bbox, p + ".bbox"),
        extra=_extras(r, _PREDICTION_KEYS),
    )


def parse_predictions(text, context: Dataset) -> list:
    """Parse a detection-results array, checking ids against ``context``."""
    raw = _load(text)
    if not isinstance(raw, list):
        raise MalformedJSONError("prediction results must be a JSON array")
    preds = [prediction_from_dict(r, k) for k, r in enumerate(raw)]
    check_prediction_references(preds, context)
    return preds


def check_prediction_references(preds, context: Dataset):
    images, cats = context.image_index, context.category_index
    for k, p in enumerate(preds):
        if p.image_id not in images:
            raise DanglingReferenceError(f"prediction {k}", f"image {p.image_id}")
        if p.category_id not in cats:
            raise DanglingReferenceError(f"prediction {k}", f"category {p.category_id}")


def read_predictions(path, context: Dataset) -> list:
    with open(path, encoding="utf-8") as fh:
        return parse_predictions(fh.read(), context)


def predictions_to_list(preds) -> list:
    out = []
    for p in preds:
        r = {"image_id": p.image_id, "category_id": p.category_id,
             "segmentation": p.segmentation.to_json(), "score": p.score}
        if p.bbox is not None:
            r["bbox"] = list(p.bbox)
        r.update(p.extra)
        out.append(r)
    return out


def serialize_predictions(preds) -> str:
    return json.dumps(predictions_to_list(preds), separators=(",", ":"), allow_nan=False)


# -- validation -------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    rule: str
    kind: str
    record_id: object
    message: str

    def to_dict(self):
        return {"rule": self.rule, "kind": self.kind, "id": self.record_id, "message": self.message}


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    def add(self, rule, kind, record_id, message):
        self.violations.append(Violation(rule, kind, record_id, message))

    @property
    def ok(self):
        return not self.violations

    def rules(self):
        return [v.rule for v in self.violations]

    def __len__(self):
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)

    def to_dict(self):
        return {"valid": self.ok, "violations": [v.to_dict() for v in self.violations]}


def _extent(seg):
    """(x0, y0, x1, y1) covered by a segmentation, or None when empty."""
    x, y, w, h = segmentation_bbox(seg)
    return (x, y, x + w, y + h)


def validate(d: Dataset, strict: bool = False) -> ValidationReport:
    """Report every invariant violation; never raises.

    ``strict`` additionally flags category names outside the three stomatal
    classes.
    """
    report = ValidationReport()
    for kind, records in (("image", d.images), ("category", d.categories), ("annotation", d.annotations)):
        seen = set()
        for r in records:
            if r.id in seen:
                report.add("DuplicateId", kind, r.id, f"duplicate {kind} id")
            seen.add(r.id)

    images = {im.id: im for im in d.images}
    cats = {c.id: c for c in d.categories}
    for im in d.images:
        if im.width <= 0 or im.height <= 0:
            report.add("NonPositiveImageSize", "image", im.id, f"size {im.width}x{im.height}")
        if not im.file_name:
            report.add("EmptyFileName", "image", im.id, "empty file_name")
    if strict:
        for c in d.categories:
            if c.name not in CATEGORY_NAMES:
                report.add("UnknownCategoryName", "category", c.id, f"unexpected name {c.name!r}")

    for a in d.annotations:
        im = images.get(a.image_id)
        if im is None:
            report.add("DanglingReference", "annotation", a.id, f"image {a.image_id} not found")
        if a.category_id not in cats:
            report.add("DanglingReference", "annotation", a.id, f"category {a.category_id} not found")
        if not a.area > 0:
            report.add("NonPositiveArea", "annotation", a.id, f"area {a.area}")
        bx, by, bw, bh = a.bbox
        if not (bw > 0 and bh > 0):
            report.add("NonPositiveBbox", "annotation", a.id, f"bbox {list(a.bbox)}")
        seg = a.segmentation
        try:
            if isinstance(seg, RLEMask):
                rle_decode(seg)
                if im is not None and seg.shape != (im.height, im.width):
                    report.add("RleSizeMismatch", "annotation", a.id,
                               f"RLE size {list(seg.shape)} vs image {im.height}x{im.width}")
                    continue
                if rle_area(seg) == 0:
                    report.add("EmptySegmentation", "annotation", a.id, "RLE has no foreground")
                    continue
            else:
                if not seg.rings:
                    report.add("EmptySegmentation", "annotation", a.id, "no polygon rings")
                    continue
                polygon_area(seg)
        except StomaforgeError as exc:
            report.add(exc.code, "annotation", a.id, str(exc))
            continue
        x0, y0, x1, y1 = _extent(seg)
        if (abs(bx - x0) > BBOX_TOLERANCE or abs(by - y0) > BBOX_TOLERANCE
                or abs(bx + bw - x1) > BBOX_TOLERANCE or abs(by + bh - y1) > BBOX_TOLERANCE):
            report.add("BboxMismatch", "annotation", a.id,
                       f"bbox {list(a.bbox)} vs extent {[x0, y0, x1 - x0, y1 - y0]}")
        if im is not None and (x0 < 0 or y0 < 0 or x1 > im.width or y1 > im.height):
            report.add("OutOfBounds", "annotation", a.id,
                       f"extent {[x0, y0, x1, y1]} exceeds image {im.width}x{im.height}")
    return report
