"""Probe-aligned window construction.

A window is the fixed interval immediately preceding an engagement probe,
taken in wall-clock time (all streams live on the wall clock). Each of the
27 sensor channels is linearly resampled onto the window's uniform grid;
row 27 carries the video-progress scalar. A modality is marked available
when any of its channels has at least one valid native sample inside the
span; unavailable modalities have all-zero rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channels import ChannelSpec, N_MODALITIES, default_channel_spec
from .errors import EmptyVideo, ExcludedProbe, OutOfRange, ShapeMismatch
from .ingest import ProbeRecord

DEFAULT_WINDOW_MS = 44_000.0
DEFAULT_RESAMPLE_HZ = 50.0


def round_half_away(x, decimals: int = 0):
    """Round half away from zero (1.5 -> 2, -1.5 -> -2), elementwise."""
    factor = 10.0 ** decimals
    scaled = np.asarray(x, dtype=np.float64) * factor
    out = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5) / factor
    return float(out) if np.isscalar(x) or out.ndim == 0 else out


def resample_channel(timestamps_ms, values, span, target_hz=DEFAULT_RESAMPLE_HZ,
                     n_out: int | None = None) -> np.ndarray:
    """Resample one channel onto the span's uniform grid.

    Grid points are ``start + j * 1000/target_hz``. Values are linearly
    interpolated between bracketing valid samples (NaN markers are skipped);
    grid points outside the valid-sample coverage, or an entirely absent
    channel, yield 0.0.

    Args:
        timestamps_ms: sorted sample times, epoch milliseconds.
        values: sample values, NaN = missing.
        span: (start_ms, end_ms) half-open window bounds.
        target_hz: grid rate.
        n_out: number of grid points; derived from the span when omitted.
    """
    start, end = span
    if n_out is None:
        n_out = int(round((end - start) * target_hz / 1000.0))
    grid = start + np.arange(n_out, dtype=np.float64) * (1000.0 / target_hz)

    values = np.asarray(values, dtype=np.float64)
    timestamps_ms = np.asarray(timestamps_ms, dtype=np.float64)
    valid = np.isfinite(values)
    if not valid.any():
        return np.zeros(n_out, dtype=np.float64)
    t = timestamps_ms[valid]
    v = values[valid]
    out = np.interp(grid, t, v)
    out[(grid < t[0]) | (grid > t[-1])] = 0.0
    return out


def compute_video_progress(probe_index: int, video_probe_times,
                           window_s: float = DEFAULT_WINDOW_MS / 1000.0) -> float:
    """Relative position of a window within its video, rounded to 1 decimal.

    The window's video-relative bounds are [max(0, t_probe - window_s),
    t_probe]; progress is the window midpoint over the video's last probe
    time, rounded half-away-from-zero to one decimal and clipped to [0, 1].
    """
    times = list(video_probe_times)
    if not times:
        raise EmptyVideo("no probes in video")
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("video_probe_times must be non-decreasing")
    t_end = times[probe_index]
    max_end = times[-1]
    if max_end <= 0:
        raise EmptyVideo("video has no positive probe time")
    t_start = max(0.0, t_end - window_s)
    progress = ((t_start + t_end) / 2.0) / max_end
    return float(min(1.0, max(0.0, round_half_away(progress, 1))))


@dataclass
class WindowSample:
    """One supervised prediction instance.

    ``tensor`` is (28, T): 27 resampled sensor rows plus the constant
    video-progress row. ``modality_mask`` has one bit per modality group.
    The raw store keeps tensors in float32; standardized copies are float64.
    """

    participant_id: str
    session_id: str
    video_id: str
    probe_index: int
    tensor: np.ndarray
    modality_mask: np.ndarray
    video_progress: float
    label: int

    def __post_init__(self):
        self.tensor = np.asarray(self.tensor)
        self.modality_mask = np.asarray(self.modality_mask, dtype=bool)
        if self.tensor.ndim != 2 or self.tensor.shape[0] != 28:
            raise ShapeMismatch(f"tensor must be (28, T), got {self.tensor.shape}")
        if self.modality_mask.shape != (N_MODALITIES,):
            raise ShapeMismatch("modality_mask must have one entry per modality")
        if not (0.0 <= self.video_progress <= 1.0):
            raise OutOfRange(f"video_progress {self.video_progress} outside [0, 1]")
        if self.label not in (1, 2, 3, 4, 5):
            raise OutOfRange(f"label {self.label} outside 1..5")

    @property
    def window_id(self) -> str:
        return f"{self.session_id}:{self.probe_index}"

    @property
    def n_time(self) -> int:
        return self.tensor.shape[1]

    def check_mask_zeroing(self, spec: ChannelSpec):
        """Mask-false modalities must have all-zero rows."""
        for m, modality in enumerate(spec.modalities):
            if not self.modality_mask[m]:
                rows = self.tensor[list(spec.modality_rows(modality))]
                if np.any(rows != 0.0):
                    raise ValueError(f"masked modality {modality} has nonzero rows")


def _slice_with_margin(stream, start_ms, end_ms):
    """Sample range covering the span plus a two-period bracket margin."""
    margin = max(2000.0 / stream.native_rate_hz, 100.0)
    lo = np.searchsorted(stream.timestamps_ms, start_ms - margin, side="left")
    hi = np.searchsorted(stream.timestamps_ms, end_ms + margin, side="right")
    return lo, hi


def build_window(streams: dict, probe: ProbeRecord, spec: ChannelSpec | None = None,
                 video_probe_times=None, probe_index: int = 0,
                 window_ms: float = DEFAULT_WINDOW_MS,
                 target_hz: float = DEFAULT_RESAMPLE_HZ) -> WindowSample:
    """Build the window trailing one supervised probe.

    The span is ``[wall_clock_ms - window_ms, wall_clock_ms)``. Each channel
    is resampled from its stream slice (with a small bracketing margin so
    edge grid points can interpolate against just-outside samples); a channel
    with no valid sample strictly inside the span is zeroed, and a modality
    with no such channel is masked off.

    Raises ExcludedProbe for interruption-marked probes; callers filter
    those out of the supervised set first.
    """
    if probe.is_excluded:
        raise ExcludedProbe(f"probe at {probe.wall_clock_ms} ms is marked excluded")
    spec = spec or default_channel_spec()
    start = probe.wall_clock_ms - window_ms
    end = probe.wall_clock_ms
    n_out = int(round(window_ms * target_hz / 1000.0))

    tensor = np.zeros((spec.n_channels, n_out), dtype=np.float64)
    in_span_valid = np.zeros(spec.n_channels - 1, dtype=bool)

    for device in spec.devices:
        stream = streams.get(device)
        dev_channels = spec.device_channels(device)
        if stream is None or len(stream) == 0:
            continue
        lo, hi = _slice_with_margin(stream, start, end)
        ts = stream.timestamps_ms[lo:hi]
        in_span = (ts >= start) & (ts < end)
        for ch in dev_channels:
            try:
                row = stream.channels.index(ch.name)
            except ValueError:
                continue
            vals = stream.values[row, lo:hi]
            if not np.any(in_span & np.isfinite(vals)):
                continue
            in_span_valid[ch.index] = True
            tensor[ch.index] = resample_channel(ts, vals, (start, end),
                                                target_hz=target_hz, n_out=n_out)

    mask = np.zeros(N_MODALITIES, dtype=bool)
    for m, modality in enumerate(spec.modalities):
        rows = list(spec.modality_rows(modality))
        mask[m] = bool(in_span_valid[rows].any())
        if not mask[m]:
            tensor[rows] = 0.0

    if video_probe_times is not None:
        progress = compute_video_progress(probe_index, video_probe_times,
                                          window_s=window_ms / 1000.0)
    else:
        progress = 0.0
    tensor[spec.n_channels - 1, :] = progress

    return WindowSample(
        participant_id=probe.participant_id,
        session_id=probe.session_id,
        video_id=probe.video_id,
        probe_index=probe_index,
        tensor=tensor.astype(np.float32),
        modality_mask=mask,
        video_progress=progress,
        label=int(probe.response),
    )


def native_window_slices(streams: dict, probe: ProbeRecord,
                         spec: ChannelSpec | None = None,
                         window_ms: float = DEFAULT_WINDOW_MS) -> list:
    """Valid native-rate samples per sensor channel inside the probe's span.

    Returns one 1-D array per sensor channel (canonical order); channels
    with no stream or no valid in-span samples yield empty arrays. This is
    the input the statistical featurizer consumes - it works at native
    rates, not on the resampled grid.
    """
    if probe.is_excluded:
        raise ExcludedProbe(f"probe at {probe.wall_clock_ms} ms is marked excluded")
    spec = spec or default_channel_spec()
    start = probe.wall_clock_ms - window_ms
    end = probe.wall_clock_ms

    slices = [np.empty(0, dtype=np.float64) for _ in range(spec.n_channels - 1)]
    for device in spec.devices:
        stream = streams.get(device)
        if stream is None or len(stream) == 0:
            continue
        lo = np.searchsorted(stream.timestamps_ms, start, side="left")
        hi = np.searchsorted(stream.timestamps_ms, end, side="left")
        for ch in spec.device_channels(device):
            try:
                row = stream.channels.index(ch.name)
            except ValueError:
                continue
            vals = stream.values[row, lo:hi]
            slices[ch.index] = vals[np.isfinite(vals)]
    return slices
