"""Small input-validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np

from .errors import FoldMismatch, LengthMismatch, NonFiniteValue, OutOfRange


def as_float_array(x, name="array", ndim=None, dtype=np.float64):
    arr = np.asarray(x, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


def check_consistent_length(a, b, name_a="predictions", name_b="labels"):
    if len(a) != len(b):
        raise LengthMismatch(f"{name_a} has {len(a)} rows, {name_b} has {len(b)}")


def check_finite(x, name="value"):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"{name} contains non-finite entries")
    return arr


def check_labels(labels, name="labels"):
    """Ordinal labels must be integers in 1..5."""
    arr = np.asarray(labels)
    if arr.size == 0:
        raise LengthMismatch(f"{name} is empty")
    vals = arr.astype(np.int64)
    if np.any(vals != arr) or vals.min() < 1 or vals.max() > 5:
        raise OutOfRange(f"{name} must be integers in [1, 5]")
    return vals


def check_fitted(estimator, attribute):
    if getattr(estimator, attribute, None) is None:
        raise RuntimeError(
            f"{type(estimator).__name__} is not fitted (missing {attribute})"
        )


def check_fold_tag(fitted_tag, fold):
    """Reject applying a fold-tagged object to a different fold.

    ``None`` on either side disables the check, so untagged ad-hoc use
    stays possible.
    """
    if fitted_tag is not None and fold is not None and fitted_tag != fold:
        raise FoldMismatch(
            f"object fitted for fold {fitted_tag!r} applied to fold {fold!r}"
        )
