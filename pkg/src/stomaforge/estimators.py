"""scikit-learn style wrappers around the pipeline stages.

They add ``get_params``/``set_params`` and fit/transform plumbing so the
stages can be configured and cloned like any other estimator.
"""
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import evaluator, pseudo, stitcher, tiler
from ._validation import check_dataset, check_predictions


class PatchTiler(TransformerMixin, BaseEstimator):
    """Tile full frames into overlapping patches.

    Parameters
    ----------
    patch : int
        Patch side in pixels.
    stride : int
        Lattice step in pixels.
    empty_patches : {"drop_empty", "keep_empty"}
    n_jobs : int
    """

    def __init__(self, patch=tiler.PATCH, stride=tiler.STRIDE, empty_patches="drop_empty", n_jobs=1):
        self.patch = patch
        self.stride = stride
        self.empty_patches = empty_patches
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        X = check_dataset(X)
        self.policy_ = tiler.EmptyPatchPolicy.coerce(self.empty_patches)
        self.grids_ = {im.id: tiler.compute_grid(im.width, im.height, self.patch, self.stride)
                       for im in X.images}
        self.n_windows_ = sum(len(g) for g in self.grids_.values())
        return self

    def transform(self, X):
        """Return a :class:`~stomaforge.tiler.TilingResult`."""
        check_is_fitted(self, "grids_")
        X = check_dataset(X)
        result = tiler.tile_dataset(X, self.policy_, self.patch, self.stride, self.n_jobs)
        self.unassigned_ = result.unassigned
        return result


class PseudoLabeler(TransformerMixin, BaseEstimator):
    """Fit on the unlabeled patch set, transform predictions into pseudo labels."""

    def __init__(self, thresholds=None):
        self.thresholds = thresholds

    def fit(self, X, y=None):
        X = check_dataset(X)
        self.policy_ = pseudo.ThresholdPolicy(dict(self.thresholds or pseudo.DEFAULT_THRESHOLDS))
        self.policy_.covers(X)
        self.patches_ = X
        return self

    def transform(self, X):
        check_is_fitted(self, "patches_")
        preds = check_predictions(X, self.patches_)
        names = {c.id: c.name for c in self.patches_.categories}
        self.kept_, self.dropped_ = pseudo.filter_predictions(preds, self.policy_, names)
        return pseudo.build_pseudo_dataset(self.patches_, self.kept_)


class FrameStitcher(TransformerMixin, BaseEstimator):
    """Fit on the source frames plus tiling manifest; transform patch predictions."""

    def __init__(self, iou_threshold=stitcher.DEDUP_IOU):
        self.iou_threshold = iou_threshold

    def fit(self, X, y=None, manifest=None):
        if manifest is None:
            raise ValueError("FrameStitcher.fit needs the tiling manifest")
        self.frames_ = check_dataset(X)
        self.manifest_ = list(manifest)
        return self

    def transform(self, X):
        check_is_fitted(self, "frames_")
        return stitcher.stitch(X, self.manifest_, self.frames_.image_index, self.iou_threshold)


class InstanceEvaluator(BaseEstimator):
    def __init__(self, n_jobs=1):
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        self.gt_ = check_dataset(X)
        return self

    def evaluate(self, preds):
        check_is_fitted(self, "gt_")
        return evaluator.evaluate_instances(self.gt_, check_predictions(preds, self.gt_), self.n_jobs)

    def score(self, preds, y=None):
        """Mean AP over classes, as a fraction."""
        return self.evaluate(preds).mAP


class SemanticEvaluator(BaseEstimator):
    def __init__(self, n_jobs=1):
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        self.gt_ = check_dataset(X)
        return self

    def evaluate(self, pred):
        """``pred`` is a Dataset over the same images or a list of predictions."""
        check_is_fitted(self, "gt_")
        if isinstance(pred, (list, tuple)):
            grouped = {}
            for p in check_predictions(pred, self.gt_):
                grouped.setdefault(p.image_id, []).append(p)
        else:
            grouped = check_dataset(pred).annotations_by_image
        return evaluator.evaluate_semantic(self.gt_, grouped, self.n_jobs)

    def score(self, pred, y=None):
        return self.evaluate(pred).miou
