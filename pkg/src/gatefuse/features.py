"""Per-channel statistical window summaries for the linear baselines.

Every sensor channel in a window is summarized by eight statistics computed
at the channel's native rate (not the resampled grid):
mean, std, excess kurtosis, min, max, IQR, first-difference std, slope.
Vectors are sanitized (non-finite -> 0, clip to [-1e6, 1e6]) and, for model
fitting, robust-scaled with training-fold medians/IQRs then clipped to
[-10, 10].

Population (1/N) moments throughout; percentiles use linear interpolation
between order statistics.
"""

from __future__ import annotations

import csv

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .channels import ChannelSpec, default_channel_spec
from .errors import EmptyTrainingSet
from .validation import check_fitted, check_fold_tag
from .windows import DEFAULT_WINDOW_MS, native_window_slices

FEATURE_NAMES = ("mean", "std", "kurtosis", "min", "max", "iqr", "diff_std", "slope")
N_FEATURES = len(FEATURE_NAMES)

SANITIZE_CLIP = 1e6
SCALED_CLIP = 10.0
IQR_FLOOR = 1e-9
KURTOSIS_DENOM_EPS = 1e-24


def feature_vector(samples) -> np.ndarray:
    """The eight summary statistics of one native-rate sample sequence.

    Degenerate inputs follow the zero-fill convention: an empty sequence
    yields all zeros; a single sample x yields [x, 0, 0, x, x, 0, 0, 0].
    Non-finite inputs propagate; ``sanitize`` cleans the result.
    """
    x = np.asarray(samples, dtype=np.float64)
    n = x.size
    if n == 0:
        return np.zeros(N_FEATURES)
    if n == 1:
        v = float(x[0])
        return np.array([v, 0.0, 0.0, v, v, 0.0, 0.0, 0.0])

    mean = x.mean()
    centered = x - mean
    m2 = np.mean(centered * centered)
    std = np.sqrt(m2)
    denom = m2 * m2
    if np.abs(denom) < KURTOSIS_DENOM_EPS:
        kurtosis = 0.0
    else:
        kurtosis = np.mean(centered ** 4) / denom - 3.0
    q25, q75 = np.percentile(x, [25.0, 75.0])
    diff = np.diff(x)
    diff_std = np.sqrt(np.mean((diff - diff.mean()) ** 2))
    slope = (x[-1] - x[0]) / (n - 1)
    return np.array([mean, std, kurtosis, x.min(), x.max(), q75 - q25,
                     diff_std, slope])


def sanitize(vector) -> np.ndarray:
    """NaN/+-inf -> 0, then clip to [-1e6, 1e6]. Idempotent."""
    v = np.asarray(vector, dtype=np.float64)
    v = np.nan_to_num(v, nan=0.0, posinf=0.0, neginf=0.0)
    return np.clip(v, -SANITIZE_CLIP, SANITIZE_CLIP)


def feature_names(spec: ChannelSpec | None = None) -> tuple:
    spec = spec or default_channel_spec()
    names = [f"{ch}_{feat}" for ch in spec.sensor_names for feat in FEATURE_NAMES]
    names.append("video_progress")
    return tuple(names)


def featurize_sessions(sessions, spec: ChannelSpec | None = None,
                       window_ms: float = DEFAULT_WINDOW_MS):
    """Feature rows for every supervised probe across sessions.

    Returns (window_ids, matrix, names, labels); rows are sorted by
    (participant, session, probe ordinal) to match corpus assembly. Each
    row is 27 channels x 8 statistics plus the video-progress scalar,
    sanitized.
    """
    spec = spec or default_channel_spec()
    from .windows import compute_video_progress  # local to avoid cycle noise

    rows = []
    for session in sessions:
        probe_times = [p.video_time_s for p in session.probes]
        for idx, probe in enumerate(session.probes):
            if probe.is_excluded:
                continue
            slices = native_window_slices(session.streams, probe, spec=spec,
                                          window_ms=window_ms)
            vec = np.concatenate([feature_vector(s) for s in slices])
            progress = compute_video_progress(idx, probe_times,
                                              window_s=window_ms / 1000.0)
            vec = sanitize(np.append(vec, progress))
            rows.append((probe.participant_id, session.session_id, idx,
                         f"{session.session_id}:{idx}", vec, int(probe.response)))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    ids = [r[3] for r in rows]
    matrix = np.stack([r[4] for r in rows]) if rows else np.empty((0, 0))
    labels = np.array([r[5] for r in rows], dtype=np.int64)
    return ids, matrix, feature_names(spec), labels


def attach_features(corpus, ids, matrix, names):
    """Align a feature matrix to a corpus by window id and attach it."""
    index = {wid: i for i, wid in enumerate(ids)}
    order = [index[wid] for wid in corpus.window_ids()]
    return corpus.with_features(matrix[order], names)


def save_feature_csv(path, ids, matrix, names, labels) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_id", *names, "label"])
        for wid, row, label in zip(ids, matrix, labels):
            writer.writerow([wid, *(f"{v:.10g}" for v in row), int(label)])


def load_feature_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = tuple(header[1:-1])
        ids, rows, labels = [], [], []
        for row in reader:
            ids.append(row[0])
            rows.append([float(v) for v in row[1:-1]])
            labels.append(int(row[-1]))
    matrix = np.asarray(rows, dtype=np.float64)
    return ids, matrix, names, np.asarray(labels, dtype=np.int64)


class RobustFeatureScaler(BaseEstimator, TransformerMixin):
    """(x - median) / IQR per feature, fitted on the training fold only,
    with outputs clipped to [-10, 10]. Constant features get a floored IQR
    so they map to zero."""

    def __init__(self, iqr_floor: float = IQR_FLOOR, fold_tag=None):
        self.iqr_floor = iqr_floor
        self.fold_tag = fold_tag

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.size == 0:
            raise EmptyTrainingSet("cannot fit a robust scaler on zero rows")
        self.medians_ = np.median(X, axis=0)
        q25, q75 = np.percentile(X, [25.0, 75.0], axis=0)
        self.iqrs_ = np.maximum(q75 - q25, self.iqr_floor)
        return self

    def transform(self, X, fold=None):
        check_fitted(self, "medians_")
        check_fold_tag(self.fold_tag, fold)
        X = np.asarray(X, dtype=np.float64)
        scaled = (X - self.medians_) / self.iqrs_
        return np.clip(scaled, -SCALED_CLIP, SCALED_CLIP)


def robust_fit(train_matrix, iqr_floor: float = IQR_FLOOR,
               fold_tag=None) -> RobustFeatureScaler:
    return RobustFeatureScaler(iqr_floor=iqr_floor, fold_tag=fold_tag).fit(train_matrix)


def robust_apply(scaler: RobustFeatureScaler, vector, fold=None) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(vector, dtype=np.float64))
    out = scaler.transform(arr, fold=fold)
    return out[0] if np.asarray(vector).ndim == 1 else out
