"""Window corpus assembly, channel statistics, and the window store.

Channel statistics are always fitted on training windows only and carry a
fold tag that is re-checked whenever they are applied, so a fold can never
be standardized with statistics it should not have seen.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .channels import ChannelSpec, METADATA_CHANNEL, default_channel_spec
from .errors import EmptyTrainingSet, MalformedFile, ShapeMismatch
from .validation import check_fitted, check_fold_tag
from .windows import (
    DEFAULT_RESAMPLE_HZ,
    DEFAULT_WINDOW_MS,
    WindowSample,
    build_window,
)

STORE_FORMAT = "gatefuse-window-store"
STD_FLOOR = 1e-6


class WindowCorpus:
    """An ordered collection of windows plus optional aligned features."""

    def __init__(self, windows, spec: ChannelSpec | None = None,
                 window_ms: float = DEFAULT_WINDOW_MS,
                 resample_hz: float = DEFAULT_RESAMPLE_HZ,
                 features: np.ndarray | None = None,
                 feature_names: tuple | None = None,
                 excluded_counts: dict | None = None):
        self.windows = list(windows)
        self.spec = spec or default_channel_spec()
        self.window_ms = float(window_ms)
        self.resample_hz = float(resample_hz)
        self.features = features
        self.feature_names = feature_names
        self.excluded_counts = dict(excluded_counts or {})
        if features is not None and len(features) != len(self.windows):
            raise ShapeMismatch("feature matrix rows must match window count")

    def __len__(self) -> int:
        return len(self.windows)

    def labels(self) -> np.ndarray:
        return np.array([w.label for w in self.windows], dtype=np.int64)

    def participants(self) -> np.ndarray:
        return np.array([w.participant_id for w in self.windows])

    def window_ids(self):
        return [w.window_id for w in self.windows]

    def progress(self) -> np.ndarray:
        return np.array([w.video_progress for w in self.windows], dtype=np.float64)

    def masks(self) -> np.ndarray:
        return np.stack([w.modality_mask for w in self.windows])

    def tensors(self, dtype=np.float32) -> np.ndarray:
        return np.stack([w.tensor for w in self.windows]).astype(dtype, copy=False)

    def subset(self, indices) -> "WindowCorpus":
        indices = np.asarray(indices)
        return WindowCorpus(
            [self.windows[i] for i in indices],
            spec=self.spec,
            window_ms=self.window_ms,
            resample_hz=self.resample_hz,
            features=None if self.features is None else self.features[indices],
            feature_names=self.feature_names,
        )

    def split_by_participants(self, test_participants):
        test_set = set(test_participants)
        parts = self.participants()
        test_idx = np.flatnonzero([p in test_set for p in parts])
        train_idx = np.flatnonzero([p not in test_set for p in parts])
        return self.subset(train_idx), self.subset(test_idx)

    def with_features(self, matrix: np.ndarray, names) -> "WindowCorpus":
        if len(matrix) != len(self.windows):
            raise ShapeMismatch("feature matrix rows must match window count")
        out = WindowCorpus(self.windows, spec=self.spec, window_ms=self.window_ms,
                           resample_hz=self.resample_hz, features=np.asarray(matrix),
                           feature_names=tuple(names),
                           excluded_counts=self.excluded_counts)
        return out


def build_corpus(sessions, spec: ChannelSpec | None = None,
                 window_ms: float = DEFAULT_WINDOW_MS,
                 resample_hz: float = DEFAULT_RESAMPLE_HZ) -> WindowCorpus:
    """Assemble the supervised corpus from ingested sessions.

    Probe ordinals run over all probes of a session (exclusions included),
    and the video-progress denominator uses all probe times, so an excluded
    final probe still defines the video's extent. Windows are sorted by
    (participant, session, ordinal) so assembly is independent of session
    file order.
    """
    spec = spec or default_channel_spec()
    windows = []
    excluded_counts = {}
    for session in sessions:
        probe_times = [p.video_time_s for p in session.probes]
        excluded = 0
        for idx, probe in enumerate(session.probes):
            if probe.is_excluded:
                excluded += 1
                continue
            windows.append(
                build_window(session.streams, probe, spec=spec,
                             video_probe_times=probe_times, probe_index=idx,
                             window_ms=window_ms, target_hz=resample_hz)
            )
        excluded_counts[session.session_id] = excluded
    windows.sort(key=lambda w: (w.participant_id, w.session_id, w.probe_index))
    return WindowCorpus(windows, spec=spec, window_ms=window_ms,
                        resample_hz=resample_hz, excluded_counts=excluded_counts)


@dataclass
class ChannelStats:
    """Per-channel mean/std pooled over training windows and time."""

    mean: np.ndarray
    std: np.ndarray
    std_floor: float = STD_FLOOR
    fold_tag: object = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if np.any(self.std < self.std_floor):
            raise ValueError("std entries must be >= std_floor")


def fit_channel_stats(train_windows, std_floor: float = STD_FLOOR,
                      fold_tag=None) -> ChannelStats:
    """Pool per-channel mean/std (population convention) over all training
    windows and all time steps. Stds are floored at ``std_floor``."""
    windows = list(train_windows)
    if not windows:
        raise EmptyTrainingSet("cannot fit channel stats on zero windows")
    n_channels = windows[0].tensor.shape[0]
    total = np.zeros(n_channels, dtype=np.float64)
    total_sq = np.zeros(n_channels, dtype=np.float64)
    count = 0
    for w in windows:
        t = w.tensor.astype(np.float64, copy=False)
        total += t.sum(axis=1)
        total_sq += (t * t).sum(axis=1)
        count += t.shape[1]
    mean = total / count
    var = np.maximum(total_sq / count - mean * mean, 0.0)
    std = np.maximum(np.sqrt(var), std_floor)
    return ChannelStats(mean=mean, std=std, std_floor=std_floor, fold_tag=fold_tag)


def standardize(window: WindowSample, stats: ChannelStats) -> WindowSample:
    """Standardize a window's sensor rows; the metadata row is untouched."""
    tensor = window.tensor.astype(np.float64)
    scaled = (tensor - stats.mean[:, None]) / stats.std[:, None]
    scaled[METADATA_CHANNEL] = tensor[METADATA_CHANNEL]
    return replace(window, tensor=scaled)


class ChannelStandardizer(BaseEstimator, TransformerMixin):
    """Fold-tagged channel-wise standardization for window corpora."""

    def __init__(self, std_floor: float = STD_FLOOR, fold_tag=None):
        self.std_floor = std_floor
        self.fold_tag = fold_tag

    def fit(self, corpus, y=None):
        windows = corpus.windows if isinstance(corpus, WindowCorpus) else corpus
        self.stats_ = fit_channel_stats(windows, std_floor=self.std_floor,
                                        fold_tag=self.fold_tag)
        return self

    def transform_tensors(self, tensors: np.ndarray, fold=None) -> np.ndarray:
        """Standardize stacked (n, 28, T) tensors in one shot (float64)."""
        check_fitted(self, "stats_")
        check_fold_tag(self.stats_.fold_tag, fold)
        stats = self.stats_
        out = tensors.astype(np.float64)
        meta = out[:, METADATA_CHANNEL, :].copy()
        out -= stats.mean[None, :, None]
        out /= stats.std[None, :, None]
        out[:, METADATA_CHANNEL, :] = meta
        return out

    def transform(self, corpus, fold=None):
        check_fitted(self, "stats_")
        check_fold_tag(self.stats_.fold_tag, fold)
        if isinstance(corpus, WindowCorpus):
            windows = [standardize(w, self.stats_) for w in corpus.windows]
            return WindowCorpus(windows, spec=corpus.spec,
                                window_ms=corpus.window_ms,
                                resample_hz=corpus.resample_hz,
                                features=corpus.features,
                                feature_names=corpus.feature_names)
        if isinstance(corpus, WindowSample):
            return standardize(corpus, self.stats_)
        return [standardize(w, self.stats_) for w in corpus]


def save_window_store(path, corpus: WindowCorpus) -> None:
    """Write the corpus as one binary file: a single-line JSON manifest,
    newline, then the float32 little-endian tensor blob in window order
    (channel-major within each window)."""
    manifest = {
        "format": STORE_FORMAT,
        "version": 1,
        "window_ms": corpus.window_ms,
        "resample_hz": corpus.resample_hz,
        "n_time": corpus.windows[0].n_time if corpus.windows else 0,
        "channels": list(corpus.spec.channel_names),
        "modalities": list(corpus.spec.modalities),
        "stats": "raw",
        "excluded_counts": corpus.excluded_counts,
        "windows": [
            {
                "id": w.window_id,
                "participant": w.participant_id,
                "session": w.session_id,
                "video": w.video_id,
                "probe_index": w.probe_index,
                "label": w.label,
                "progress": w.video_progress,
                "mask": [int(b) for b in w.modality_mask],
            }
            for w in corpus.windows
        ],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for w in corpus.windows:
            fh.write(np.ascontiguousarray(w.tensor, dtype="<f4").tobytes())


def load_window_store(path) -> WindowCorpus:
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.readline()
        try:
            manifest = json.loads(header.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedFile(f"{path}: bad window-store header") from exc
        if manifest.get("format") != STORE_FORMAT:
            raise MalformedFile(f"{path}: not a window store")
        blob = fh.read()

    spec = default_channel_spec()
    if list(spec.channel_names) != manifest["channels"]:
        raise MalformedFile(f"{path}: channel layout does not match this build")
    n_time = int(manifest["n_time"])
    n_ch = len(manifest["channels"])
    entries = manifest["windows"]
    expected = len(entries) * n_ch * n_time * 4
    if len(blob) != expected:
        raise MalformedFile(f"{path}: blob is {len(blob)} bytes, expected {expected}")
    tensors = np.frombuffer(blob, dtype="<f4").reshape(len(entries), n_ch, n_time)

    windows = []
    for i, entry in enumerate(entries):
        windows.append(
            WindowSample(
                participant_id=entry["participant"],
                session_id=entry["session"],
                video_id=entry["video"],
                probe_index=int(entry["probe_index"]),
                tensor=tensors[i].copy(),
                modality_mask=np.array(entry["mask"], dtype=bool),
                video_progress=float(entry["progress"]),
                label=int(entry["label"]),
            )
        )
    return WindowCorpus(windows, spec=spec, window_ms=float(manifest["window_ms"]),
                        resample_hz=float(manifest["resample_hz"]),
                        excluded_counts=manifest.get("excluded_counts", {}))
