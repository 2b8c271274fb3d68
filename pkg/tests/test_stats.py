import csv
import io
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from stomaforge.coco import Annotation, Dataset, ImageRecord, serialize_dataset
from stomaforge.errors import MalformedJSONError, OverlappingSplitsError, UnknownImageIdError, UnparseableFilenameError
from stomaforge.maskgeom import PolygonSet
from stomaforge.stats import (
    GENOTYPES,
    REGIONS,
    SURFACES,
    SampleMeta,
    SplitSpec,
    class_summary,
    format_sample_meta,
    parse_sample_meta,
    split_dataset,
)
from stomaforge.tiler import tile_dataset

from synth import CATEGORIES, make_frames


def test_parse_examples():
    m = parse_sample_meta("QL12_2_L10_adaxial_mid.jpg")
    assert (m.genotype, m.replicate, m.leaf_level, m.surface, m.region) == ("QL12", 2, "L10", "adaxial", "mid")
    m = parse_sample_meta("TX7000_1_FL_abaxial_tip.jpg")
    assert (m.genotype, m.replicate, m.leaf_level, m.surface, m.region) == ("TX7000", 1, "FL", "abaxial", "tip")
    assert m.complete


def test_hyphenated_genotype():
    assert parse_sample_meta("R931945-2-2_3_L18_abaxial_base.jpg").genotype == "R931945-2-2"


def test_strict_rejects():
    with pytest.raises(UnparseableFilenameError):
        parse_sample_meta("notes.txt")
    with pytest.raises(UnparseableFilenameError):
        parse_sample_meta("")


def test_lenient_partial():
    m = parse_sample_meta("QL12_x_adaxial.png", strict=False)
    assert not m.complete
    assert (m.genotype, m.surface, m.region, m.ext) == ("QL12", "adaxial", None, "png")


metas = st.builds(
    SampleMeta,
    genotype=st.sampled_from(GENOTYPES),
    replicate=st.integers(0, 999),
    leaf_level=st.one_of(st.just("FL"), st.integers(9, 18).map(lambda n: f"L{n}")),
    surface=st.sampled_from(SURFACES),
    region=st.sampled_from(REGIONS),
)


@given(metas)
def test_format_parse_identity(meta):
    assert parse_sample_meta(format_sample_meta(meta)) == meta


# -- summary ----------------------------------------------------------------

def test_summary_empty():
    s = class_summary(Dataset(categories=CATEGORIES))
    assert all(v["count"] == 0 and v["median"] is None for v in s.to_dict().values())


def test_coverage_ten_percent():
    seg = PolygonSet.from_vertices([(0, 0), (10, 0), (10, 10)])
    d = Dataset([ImageRecord(1, "a.jpg", 341, 341)], [Annotation(1, 1, 3, seg, (0, 0, 10, 10), 11628.1)], CATEGORIES)
    s = class_summary(d).to_dict()["pore area"]
    assert s["count"] == 1
    assert s["median"] == pytest.approx(10.0, abs=1e-12)


def test_summary_counts_and_csv():
    d = make_frames(4, seed=3)
    s = class_summary(d)
    by_cat = {c.name: sum(a.category_id == c.id for a in d.annotations) for c in CATEGORIES}
    assert {k: v["count"] for k, v in s.to_dict().items()} == by_cat
    for c in s.classes.values():
        assert len(c.coverage) == c.count
        assert all(0 <= v <= 100 for v in c.coverage)
    rows = list(csv.reader(io.StringIO(s.to_csv())))
    assert rows[0] == ["class", "count", "min", "q25", "median", "q75", "max"]
    assert len(rows) == 1 + len(CATEGORIES)
    assert json.loads(s.to_json()) == s.to_dict()


def test_quantiles_linear():
    s = class_summary(Dataset(
        [ImageRecord(1, "a.jpg", 10, 10)],
        [Annotation(k, 1, 1, PolygonSet.from_vertices([(0, 0), (1, 0), (1, 1)]), (0, 0, 1, 1), float(v))
         for k, v in enumerate([1, 2, 3, 4], 1)],
        CATEGORIES)).to_dict()["complex area"]
    assert (s["min"], s["q25"], s["median"], s["q75"], s["max"]) == (1.0, 1.75, 2.5, 3.25, 4.0)


# -- splits -----------------------------------------------------------------

def test_ratio_split_deterministic():
    d = make_frames(10, seed=1, stomata=(1, 3))
    spec = SplitSpec(ratios=(0.7, 0.2, 0.1), seed=42)
    a = split_dataset(d, spec)
    b = split_dataset(d, spec)
    assert [serialize_dataset(x) for x in a] == [serialize_dataset(x) for x in b]
    assert [len(x.images) for x in a] == [7, 2, 1]
    other = split_dataset(d, SplitSpec(ratios=(0.7, 0.2, 0.1), seed=43))
    assert [sorted(im.id for im in x.images) for x in other] != [sorted(im.id for im in x.images) for x in a]


def test_ratio_split_needs_seed():
    with pytest.raises(MalformedJSONError):
        SplitSpec.from_dict({"ratios": [0.5, 0.5, 0]})


def test_overlapping_splits():
    d = make_frames(3, seed=1, stomata=(1, 2))
    with pytest.raises(OverlappingSplitsError):
        split_dataset(d, SplitSpec(train=(1, 2), val=(2,), test=(3,)))


def test_unknown_and_unassigned_ids():
    d = make_frames(3, seed=1, stomata=(1, 2))
    with pytest.raises(UnknownImageIdError):
        split_dataset(d, SplitSpec(train=(1, 2, 9), val=(), test=(3,)))
    with pytest.raises(UnknownImageIdError):
        split_dataset(d, SplitSpec(train=(1,), val=(2,), test=()))


def test_split_by_file_name():
    d = make_frames(3, seed=1, stomata=(1, 2))
    names = [im.file_name for im in d.images]
    spec = SplitSpec.from_dict({"train": names[:2], "val": [], "test": names[2:]})
    train, val, test = split_dataset(d, spec)
    assert [im.file_name for im in train.images] == names[:2] and not val.images


@given(st.integers(0, 2**31), st.sampled_from([(0.7, 0.2, 0.1), (1 / 3, 1 / 3, 1 / 3), (1.0, 0.0, 0.0)]))
def test_split_partition(seed, ratios):
    d = make_frames(7, seed=5, stomata=(1, 3), width=400, height=400)
    parts = split_dataset(d, SplitSpec(ratios=ratios, seed=seed))
    ids = [im.id for p in parts for im in p.images]
    assert sorted(ids) == sorted(im.id for im in d.images)
    assert sum(len(p.annotations) for p in parts) == len(d.annotations)
    for p in parts:
        own = {im.id for im in p.images}
        assert all(a.image_id in own for a in p.annotations)


def test_split_before_tile_equivalence():
    d = make_frames(6, seed=11, width=1000, height=800)
    parts = split_dataset(d, SplitSpec(ratios=(0.5, 0.3, 0.2), seed=7))
    whole = tile_dataset(d, "drop_empty")
    for p in parts:
        per_split = tile_dataset(p, "drop_empty")
        own = {im.id for im in p.images}
        keep = [r for r in whole.records if r.source_image_id in own]
        strip_id = lambda rs: [(r.source_image_id, r.row, r.col, r.x0, r.y0, r.patch_file_name) for r in rs]
        assert strip_id(per_split.records) == strip_id(keep)
        pid = {r.patch_image_id: r.patch_file_name for r in whole.records}
        geo_whole = [(pid[a.image_id], a.category_id, a.segmentation) for a in whole.dataset.annotations
                     if pid[a.image_id] in {r.patch_file_name for r in keep}]
        pid2 = {r.patch_image_id: r.patch_file_name for r in per_split.records}
        geo_split = [(pid2[a.image_id], a.category_id, a.segmentation) for a in per_split.dataset.annotations]
        assert geo_split == geo_whole
