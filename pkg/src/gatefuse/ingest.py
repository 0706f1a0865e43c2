"""Raw stream and probe-log ingestion.

Stream files are UTF-8 CSV with header ``timestamp_ms[,device_time_ms],ch1,...``
(``timestamp_s`` is accepted when the device policy declares second units);
one row per sample, empty cell = missing. Probe logs are CSV with columns
``participant_id,session_id,video_id,video_time_s,wall_clock_ms,response``.
Session manifests are JSON listing the devices, their file paths, timestamp
policies, nominal rates, and the session start/end epoch milliseconds.

All timestamps are carried as float64 epoch milliseconds (sub-millisecond
fractions kept). Missing values travel as NaN through ingest; zero
substitution happens later, at resampling.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    Diagnostic,
    InvalidResponse,
    MalformedFile,
    UnknownDevice,
)

EXCLUDED = "X"

TIMESTAMP_SOURCES = ("ReceiverArrival", "DeviceClock", "SystemTime", "PacketEmbedded")

# Streams may start/end slightly off the declared session interval without a
# coverage-gap diagnostic.
COVERAGE_SLACK_MS = 2000.0


@dataclass(frozen=True)
class DevicePolicy:
    """Per-device ingest parameters: which timestamp column is canonical,
    its unit, whether packet expansion applies, and the nominal rate."""

    unit: str = "ms"  # "ms" | "s"
    source: str = "SystemTime"
    packet_expansion: bool = False
    rate_hz: float = 0.0
    clock_offset_ms: float = 0.0

    def __post_init__(self):
        if self.unit not in ("ms", "s"):
            raise ValueError(f"unknown timestamp unit {self.unit!r}")
        if self.source not in TIMESTAMP_SOURCES:
            raise ValueError(f"unknown timestamp source {self.source!r}")


@dataclass(frozen=True)
class TimestampPolicy:
    """Mapping device_id -> DevicePolicy for one session."""

    entries: dict = field(default_factory=dict)

    def for_device(self, device_id: str) -> DevicePolicy:
        try:
            return self.entries[device_id]
        except KeyError:
            raise UnknownDevice(f"no timestamp policy for device {device_id!r}") from None


@dataclass
class SensorStream:
    """One device channel group at its native rate.

    ``values`` has shape (n_channels, n_samples) with NaN as the missing
    marker; ``timestamps_ms`` is sorted non-decreasing once ingest completes.
    """

    device_id: str
    channels: tuple
    timestamps_ms: np.ndarray
    values: np.ndarray
    native_rate_hz: float
    timestamp_source: str = "SystemTime"

    def __post_init__(self):
        self.timestamps_ms = np.asarray(self.timestamps_ms, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != len(self.channels):
            raise ValueError("values must be (n_channels, n_samples)")
        if self.values.shape[1] != self.timestamps_ms.shape[0]:
            raise ValueError("channel arrays must match timestamp length")
        if self.native_rate_hz <= 0:
            raise ValueError("native_rate_hz must be positive")

    def __len__(self) -> int:
        return self.timestamps_ms.shape[0]

    def channel_values(self, name: str) -> np.ndarray:
        return self.values[self.channels.index(name)]


@dataclass(frozen=True)
class ProbeRecord:
    """One engagement probe: where it fell in the video, when it fell on the
    wall clock, and the response (level 1..5 or the exclusion marker)."""

    participant_id: str
    session_id: str
    video_id: str
    video_time_s: float
    wall_clock_ms: float
    response: object  # int 1..5 or EXCLUDED

    def __post_init__(self):
        if self.video_time_s < 0:
            raise ValueError("video_time_s must be >= 0")
        if self.wall_clock_ms <= 0:
            raise ValueError("wall_clock_ms must be positive")
        if self.response != EXCLUDED and self.response not in (1, 2, 3, 4, 5):
            raise ValueError(f"response must be 1..5 or {EXCLUDED!r}")

    @property
    def is_excluded(self) -> bool:
        return self.response == EXCLUDED


def _parse_cell(token: str) -> float:
    token = token.strip()
    if not token:
        return math.nan
    try:
        return float(token)
    except ValueError:
        return math.nan  # unparseable value -> missing marker, not zero


def parse_stream(path, policy: TimestampPolicy, device_id: str | None = None) -> SensorStream:
    """Parse one stream CSV, selecting the canonical timestamp per policy.

    The timestamp column must be named ``timestamp_<unit>`` for the device's
    declared unit; second-based stamps are converted to milliseconds and the
    device clock offset from the manifest is applied. Rows with unparseable
    value cells keep their position with NaN markers.

    Raises MalformedFile on bad header or row arity, UnknownDevice when the
    policy has no entry for the device.
    """
    path = Path(path)
    if device_id is None:
        device_id = path.stem
    dev = policy.for_device(device_id)

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedFile(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        ts_col = f"timestamp_{dev.unit}"
        if not header or header[0] != ts_col:
            raise MalformedFile(
                f"{path}: expected first column {ts_col!r}, got {header[:1]!r}"
            )
        value_start = 1
        if len(header) > 1 and header[1] == "device_time_ms":
            value_start = 2
        channels = tuple(header[value_start:])
        if not channels:
            raise MalformedFile(f"{path}: no value channels in header")

        timestamps = []
        columns = [[] for _ in channels]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise MalformedFile(
                    f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}"
                )
            try:
                ts = float(row[0])
            except ValueError:
                raise MalformedFile(
                    f"{path}:{lineno}: unparseable timestamp {row[0]!r}"
                ) from None
            timestamps.append(ts)
            for ci, cell in enumerate(row[value_start:]):
                columns[ci].append(_parse_cell(cell))

    ts = np.asarray(timestamps, dtype=np.float64)
    if dev.unit == "s":
        ts = ts * 1000.0
    ts = ts + dev.clock_offset_ms
    values = np.asarray(columns, dtype=np.float64).reshape(len(channels), -1)
    return SensorStream(
        device_id=device_id,
        channels=channels,
        timestamps_ms=ts,
        values=values,
        native_rate_hz=dev.rate_hz if dev.rate_hz > 0 else 1.0,
        timestamp_source=dev.source,
    )


def sort_by_time(stream: SensorStream) -> SensorStream:
    """Stable sort on timestamps; channel values permuted identically."""
    order = np.argsort(stream.timestamps_ms, kind="stable")
    if np.array_equal(order, np.arange(len(stream))):
        return stream
    return replace(
        stream,
        timestamps_ms=stream.timestamps_ms[order],
        values=stream.values[:, order],
    )


def expand_packet_timestamps(
    stream: SensorStream,
    rate_hz: float | None = None,
    diagnostics: list | None = None,
) -> SensorStream:
    """Spread runs of repeated packet timestamps into per-sample timestamps.

    Within a run of k samples sharing packet time t, sample j receives
    t + j * 1000 / rate_hz (the packet stamp marks its first sample). Sample
    count and values are untouched. If a reconstructed run overlaps the next
    packet's stamp by more than one sample period, a ``rate_mismatch``
    diagnostic is appended rather than raising.
    """
    if rate_hz is None:
        rate_hz = stream.native_rate_hz
    if rate_hz <= 0:
        raise ValueError("rate_hz must be positive")
    ts = stream.timestamps_ms
    n = ts.shape[0]
    if n == 0:
        return stream
    period = 1000.0 / rate_hz

    # Offset of each sample within its run of equal stamps.
    new_run = np.ones(n, dtype=bool)
    new_run[1:] = ts[1:] != ts[:-1]
    run_starts = np.flatnonzero(new_run)
    offsets = np.arange(n) - np.repeat(run_starts, np.diff(np.r_[run_starts, n]))
    expanded = ts + offsets * period

    if diagnostics is not None and len(run_starts) > 1:
        run_ends = np.r_[run_starts[1:], n] - 1
        last_of_run = expanded[run_ends[:-1]]
        next_packet = ts[run_starts[1:]]
        overlap = last_of_run - next_packet
        bad = np.flatnonzero(overlap > period)
        for i in bad:
            diagnostics.append(
                Diagnostic(
                    "rate_mismatch",
                    f"{stream.device_id}: reconstructed packet run overlaps the "
                    f"next packet by {overlap[i]:.3f} ms (> one period {period:.3f} ms)",
                    {"device": stream.device_id, "overlap_ms": float(overlap[i])},
                )
            )

    return replace(stream, timestamps_ms=expanded)


def parse_probe_log(path) -> list:
    """Parse a probe log into ProbeRecords sorted by wall-clock time.

    'X' responses map to the exclusion marker; numeric tokens must be in
    1..5. Raises InvalidResponse otherwise, MalformedFile on schema errors.
    """
    path = Path(path)
    expected = [
        "participant_id",
        "session_id",
        "video_id",
        "video_time_s",
        "wall_clock_ms",
        "response",
    ]
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedFile(f"{path}: empty probe log") from None
        if [h.strip() for h in header] != expected:
            raise MalformedFile(f"{path}: bad probe-log header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise MalformedFile(
                    f"{path}:{lineno}: expected {len(expected)} cells, got {len(row)}"
                )
            token = row[5].strip()
            if token == EXCLUDED:
                response = EXCLUDED
            elif token in ("1", "2", "3", "4", "5"):
                response = int(token)
            else:
                raise InvalidResponse(f"{path}:{lineno}: response token {token!r}")
            try:
                video_time = float(row[3])
                wall_clock = float(row[4])
            except ValueError:
                raise MalformedFile(f"{path}:{lineno}: unparseable time cell") from None
            records.append(
                ProbeRecord(
                    participant_id=row[0].strip(),
                    session_id=row[1].strip(),
                    video_id=row[2].strip(),
                    video_time_s=video_time,
                    wall_clock_ms=wall_clock,
                    response=response,
                )
            )
    records.sort(key=lambda r: r.wall_clock_ms)
    return records


@dataclass
class SessionData:
    """Everything ingested for one recorded session."""

    session_id: str
    participant_id: str
    video_id: str
    start_ms: float
    end_ms: float
    streams: dict  # device_id -> SensorStream
    probes: list


def policy_from_manifest(manifest: dict) -> TimestampPolicy:
    entries = {}
    for dev in manifest["devices"]:
        tsconf = dev.get("timestamp", {})
        entries[dev["device_id"]] = DevicePolicy(
            unit=tsconf.get("unit", "ms"),
            source=tsconf.get("source", "SystemTime"),
            packet_expansion=bool(tsconf.get("packet_expansion", False)),
            rate_hz=float(dev.get("rate_hz", 0.0)),
            clock_offset_ms=float(dev.get("clock_offset_ms", 0.0)),
        )
    return TimestampPolicy(entries=entries)


def load_session(manifest_path, diagnostics: list | None = None) -> SessionData:
    """Load one session: parse, sort, and (where flagged) packet-expand every
    declared stream, then the probe log. Emits a ``coverage_gap`` diagnostic
    for any stream that fails to span the declared session interval."""
    manifest_path = Path(manifest_path)
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    base = manifest_path.parent
    policy = policy_from_manifest(manifest)

    streams = {}
    for dev in manifest["devices"]:
        device_id = dev["device_id"]
        stream = parse_stream(base / dev["path"], policy, device_id=device_id)
        stream = sort_by_time(stream)
        if policy.for_device(device_id).packet_expansion:
            stream = expand_packet_timestamps(stream, diagnostics=diagnostics)
        streams[device_id] = stream
        if diagnostics is not None and len(stream):
            start, end = manifest["start_ms"], manifest["end_ms"]
            lo, hi = stream.timestamps_ms[0], stream.timestamps_ms[-1]
            if lo > start + COVERAGE_SLACK_MS or hi < end - COVERAGE_SLACK_MS:
                diagnostics.append(
                    Diagnostic(
                        "coverage_gap",
                        f"{device_id}: stream covers [{lo:.0f}, {hi:.0f}] ms but the "
                        f"session declares [{start:.0f}, {end:.0f}] ms",
                        {"device": device_id, "session": manifest["session_id"]},
                    )
                )

    probes = parse_probe_log(base / manifest["probe_log"])
    return SessionData(
        session_id=manifest["session_id"],
        participant_id=manifest["participant_id"],
        video_id=manifest["video_id"],
        start_ms=float(manifest["start_ms"]),
        end_ms=float(manifest["end_ms"]),
        streams=streams,
        probes=probes,
    )


def load_cohort(cohort_dir, diagnostics: list | None = None) -> list:
    """Load every session listed in ``cohort.json``, in listed order."""
    cohort_dir = Path(cohort_dir)
    index_path = cohort_dir / "cohort.json"
    if not index_path.exists():
        raise MalformedFile(f"{index_path} not found")
    with open(index_path, encoding="utf-8") as fh:
        index = json.load(fh)
    return [
        load_session(cohort_dir / entry["manifest"], diagnostics=diagnostics)
        for entry in index["sessions"]
    ]
