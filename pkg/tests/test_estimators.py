import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from stomaforge.coco import serialize_dataset, serialize_predictions
from stomaforge.errors import MalformedJSONError, MissingThresholdError
from stomaforge.estimators import FrameStitcher, InstanceEvaluator, PatchTiler, PseudoLabeler, SemanticEvaluator
from stomaforge.tiler import tile_dataset

from synth import jitter_predictions, make_frames, strip


@pytest.fixture(scope="module")
def frames():
    return make_frames(2, seed=21)


def test_params_and_clone():
    t = PatchTiler(patch=400, stride=390, empty_patches="keep-empty")
    assert t.get_params() == {"patch": 400, "stride": 390, "empty_patches": "keep-empty", "n_jobs": 1}
    c = clone(t.set_params(n_jobs=2))
    assert c.get_params()["n_jobs"] == 2 and c is not t
    assert PseudoLabeler().get_params() == {"thresholds": None}
    assert FrameStitcher().get_params() == {"iou_threshold": 0.5}


def test_not_fitted(frames):
    with pytest.raises(NotFittedError):
        PatchTiler().transform(frames)
    with pytest.raises(NotFittedError):
        InstanceEvaluator().score([])


def test_tiler_matches_function(frames):
    t = PatchTiler(empty_patches="keep-empty").fit(frames)
    assert t.n_windows_ == 96
    res = t.fit_transform(frames)
    ref = tile_dataset(frames, "keep_empty")
    assert serialize_dataset(res.dataset) == serialize_dataset(ref.dataset)
    assert t.unassigned_ == ref.unassigned


def test_input_forms(frames, tmp_path):
    text = serialize_dataset(frames)
    path = tmp_path / "f.json"
    path.write_text(text)
    outs = {serialize_dataset(PatchTiler().fit_transform(x).dataset) for x in (frames, text, path, str(path))}
    assert len(outs) == 1
    with pytest.raises(MalformedJSONError):
        PatchTiler().fit("{bad")
    with pytest.raises(TypeError):
        PatchTiler().fit(42)


def test_pseudo_labeler(frames):
    patches = tile_dataset(frames, "keep_empty").dataset
    preds = jitter_predictions(patches, seed=1)
    pl = PseudoLabeler().fit(strip(patches))
    out = pl.transform(preds)
    assert len(out.images) == len(patches.images)
    assert len(pl.kept_) + len(pl.dropped_) == len(preds)
    same = PseudoLabeler().fit(strip(patches)).transform(serialize_predictions(preds))
    assert serialize_dataset(same) == serialize_dataset(out)
    with pytest.raises(MissingThresholdError):
        PseudoLabeler(thresholds={"pore area": 0.5}).fit(patches)


def test_stitcher_and_evaluators(frames):
    res = tile_dataset(frames, "keep_empty")
    preds = jitter_predictions(res.dataset, seed=0, miss=0, false_pos=0, shift=0)
    st = FrameStitcher().fit(frames, manifest=res.records)
    framed = st.transform(preds)
    assert {f.source_image_id for f in framed} <= {im.id for im in frames.images}
    with pytest.raises(ValueError):
        FrameStitcher().fit(frames)
    gt = res.dataset
    assert InstanceEvaluator().fit(gt).score(preds) == 1.0
    assert SemanticEvaluator().fit(gt).score(gt) == 100.0
    assert SemanticEvaluator().fit(gt).score(preds) == 100.0
