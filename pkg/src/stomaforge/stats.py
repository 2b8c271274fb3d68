"""Filename metadata, per-class coverage summaries and image-level splits."""
from __future__ import annotations

import csv
import io
import json
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .coco import Dataset
from .errors import MalformedJSONError, OverlappingSplitsError, UnknownImageIdError, UnparseableFilenameError

GENOTYPES = ("QL12", "TX7000", "R931945-2-2", "SC170-6-8", "SC237-14E")
SURFACES = ("abaxial", "adaxial")
REGIONS = ("base", "mid", "tip")
SPLITS = ("train", "val", "test")
SPLIT_GENERATOR = "numpy.PCG64"

_FILENAME = re.compile(
    r"^(?P<genotype>[^_]+)_(?P<replicate>\d+)_(?P<leaf_level>L\d+|FL)"
    r"_(?P<surface>abaxial|adaxial)_(?P<region>base|mid|tip)$"
)


@dataclass(frozen=True)
class SampleMeta:
    genotype: str | None
    replicate: int | None
    leaf_level: str | None
    surface: str | None
    region: str | None
    ext: str = "jpg"
    complete: bool = True


def parse_sample_meta(file_name: str, strict: bool = True) -> SampleMeta:
    """Decode ``{genotype}_{replicate}_{leaf}_{surface}_{region}.{ext}``.

    In lenient mode unparseable names yield whatever fields could be read,
    with ``complete=False``.
    """
    if not file_name:
        raise UnparseableFilenameError("empty file name")
    stem, ext = os.path.splitext(os.path.basename(file_name))
    m = _FILENAME.match(stem)
    if m:
        return SampleMeta(m["genotype"], int(m["replicate"]), m["leaf_level"], m["surface"], m["region"],
                          ext.lstrip("."))
    if strict:
        raise UnparseableFilenameError(f"cannot parse {file_name!r}")
    parts = stem.split("_")
    fields = {"genotype": None, "replicate": None, "leaf_level": None, "surface": None, "region": None}
    for part in parts:
        if part in SURFACES:
            fields["surface"] = part
        elif part in REGIONS:
            fields["region"] = part
        elif re.fullmatch(r"L\d+|FL", part):
            fields["leaf_level"] = part
        elif part.isdigit() and fields["replicate"] is None:
            fields["replicate"] = int(part)
        elif fields["genotype"] is None and part in GENOTYPES:
            fields["genotype"] = part
    return SampleMeta(**fields, ext=ext.lstrip("."), complete=False)


def format_sample_meta(meta: SampleMeta) -> str:
    return f"{meta.genotype}_{meta.replicate}_{meta.leaf_level}_{meta.surface}_{meta.region}.{meta.ext}"


# -- class summary ----------------------------------------------------------

QUANTILES = (("min", 0.0), ("q25", 0.25), ("median", 0.5), ("q75", 0.75), ("max", 1.0))


@dataclass
class ClassStats:
    name: str
    count: int = 0
    coverage: list = field(default_factory=list)

    def quantiles(self):
        if not self.coverage:
            return {k: None for k, _ in QUANTILES}
        values = np.quantile(np.asarray(self.coverage, dtype=float), [q for _, q in QUANTILES])
        return {k: float(v) for (k, _), v in zip(QUANTILES, values)}


@dataclass
class ClassSummary:
    classes: dict

    def to_dict(self):
        return {name: {"count": c.count, **c.quantiles()} for name, c in self.classes.items()}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "count", *(k for k, _ in QUANTILES)])
        for name, c in self.classes.items():
            q = c.quantiles()
            w.writerow([name, c.count, *("" if q[k] is None else repr(q[k]) for k, _ in QUANTILES)])
        return buf.getvalue()


def class_summary(d: Dataset) -> ClassSummary:
    """Instance counts and coverage percentages (100 * area / image area)."""
    classes = {c.name: ClassStats(c.name) for c in d.categories}
    names = {c.id: c.name for c in d.categories}
    images = d.image_index
    for a in d.annotations:
        im = images[a.image_id]
        s = classes[names[a.category_id]]
        s.count += 1
        s.coverage.append(100.0 * a.area / (im.width * im.height))
    return ClassSummary(classes)


# -- splits -----------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    """Either explicit per-split image lists or a ratio triple with a seed.

    Explicit lists may hold image ids or file names.
    """

    train: tuple | None = None
    val: tuple | None = None
    test: tuple | None = None
    ratios: tuple | None = None
    seed: int | None = None

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise MalformedJSONError("split spec must be a JSON object")
        if "ratios" in raw:
            if "seed" not in raw:
                raise MalformedJSONError("ratio splits need an explicit seed")
            ratios = tuple(float(r) for r in raw["ratios"])
            if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
                raise MalformedJSONError(f"ratios must be three non-negative values summing to 1, got {ratios}")
            return cls(ratios=ratios, seed=int(raw["seed"]))
        return cls(*(tuple(raw.get(k, ())) for k in SPLITS))

    def to_dict(self):
        if self.ratios is not None:
            return {"ratios": list(self.ratios), "seed": self.seed, "generator": SPLIT_GENERATOR}
        return {k: list(getattr(self, k) or ()) for k in SPLITS}


def _resolve(d: Dataset, spec: SplitSpec):
    ids = sorted(im.id for im in d.images)
    if spec.ratios is not None:
        rng = np.random.Generator(np.random.PCG64(spec.seed))
        order = [ids[k] for k in rng.permutation(len(ids))]
        n_train = int(round(spec.ratios[0] * len(ids)))
        n_val = min(int(round(spec.ratios[1] * len(ids))), len(ids) - n_train)
        return {"train": order[:n_train], "val": order[n_train:n_train + n_val],
                "test": order[n_train + n_val:]}
    by_name = {im.file_name: im.id for im in d.images}
    known = set(ids)
    out, owner = {}, {}
    for split in SPLITS:
        resolved = []
        for ref in getattr(spec, split) or ():
            iid = by_name.get(ref) if isinstance(ref, str) else ref
            if iid is None or iid not in known:
                raise UnknownImageIdError(f"{split} references unknown image {ref!r}")
            if iid in owner:
                raise OverlappingSplitsError(f"image {ref!r} is in both {owner[iid]} and {split}")
            owner[iid] = split
            resolved.append(iid)
        out[split] = resolved
    missing = known - set(owner)
    if missing:
        raise UnknownImageIdError(f"{len(missing)} images are assigned to no split, e.g. {min(missing)}")
    return out


def _subset(d: Dataset, image_ids) -> Dataset:
    keep = set(image_ids)
    return Dataset([im for im in d.images if im.id in keep],
                   [a for a in d.annotations if a.image_id in keep],
                   d.categories, dict(d.extra))


def split_dataset(d: Dataset, spec: SplitSpec):
    """Partition ``d`` into ``(train, val, test)`` by whole images."""
    parts = _resolve(d, spec)
    return tuple(_subset(d, parts[k]) for k in SPLITS)
