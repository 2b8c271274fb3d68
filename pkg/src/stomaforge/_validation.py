"""Input coercion helpers shared by the estimator wrappers."""
import os

from .coco import Dataset, Prediction, check_prediction_references, dataset_from_dict, parse_dataset
from .coco import parse_predictions, prediction_from_dict


def check_dataset(X) -> Dataset:
    """Accept a Dataset, a COCO dict, JSON text or a path to a JSON file."""
    if isinstance(X, Dataset):
        return X
    if isinstance(X, dict):
        return dataset_from_dict(X)
    if isinstance(X, (str, os.PathLike)):
        text = str(X)
        if not text.lstrip().startswith("{") and os.path.exists(text):
            with open(text, encoding="utf-8") as fh:
                return parse_dataset(fh.read())
        return parse_dataset(text)
    raise TypeError(f"expected a COCO dataset, got {type(X).__name__}")


def check_predictions(preds, context: Dataset) -> list:
    """Accept a results list (objects or dicts), JSON text or a path."""
    if isinstance(preds, (str, os.PathLike)):
        text = str(preds)
        if not text.lstrip().startswith("[") and os.path.exists(text):
            with open(text, encoding="utf-8") as fh:
                text = fh.read()
        return parse_predictions(text, context)
    out = [p if isinstance(p, Prediction) else prediction_from_dict(p, k) for k, p in enumerate(preds)]
    check_prediction_references(out, context)
    return out
