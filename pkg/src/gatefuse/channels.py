"""Canonical channel map: 28 tensor rows, 11 modality groups, 10 device streams.

The window tensor is 28 x T (T = 2200 at the 50 Hz / 44 s defaults). Rows
0..26 are sensor channels in a fixed order; row 27 carries the video-progress
scalar. The 27 sensor channels partition into 11 modality groups, each of
which gets its own encoder and gate in the fusion model and its own bit in
the window availability mask.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

N_CHANNELS = 28
METADATA_CHANNEL = 27
N_MODALITIES = 11


@dataclass(frozen=True)
class Channel:
    index: int
    name: str
    device: str
    modality: str
    native_rate_hz: float


# Row order follows the device enumeration used throughout: screen tracker,
# wristband EDA/HR, headband optical, ring optical + temperature, earable
# IMU, chest ECG, headband IMU, headband EEG (AF7/AF8), metadata.
_CHANNEL_TABLE = [
    ("gaze_x", "beam", "eye_gaze", 30.0),
    ("gaze_y", "beam", "eye_gaze", 30.0),
    ("head_x", "beam", "head_pos", 30.0),
    ("head_y", "beam", "head_pos", 30.0),
    ("head_z", "beam", "head_pos", 30.0),
    ("eda_kohm", "msband_eda", "eda", 5.0),
    ("hr_bpm", "msband_hr", "hr", 2.0),
    ("muse_ppg_730", "muse_ppg", "muse_ppg", 64.0),
    ("ring_ppg_green", "ring_ppg", "ring_ppg", 25.0),
    ("ring_temp_in_left", "ring_temp", "ring_temp", 25.0),
    ("ring_temp_in_right", "ring_temp", "ring_temp", 25.0),
    ("ring_temp_out", "ring_temp", "ring_temp", 25.0),
    ("esense_acc_x", "esense_imu", "esense_imu", 50.0),
    ("esense_acc_y", "esense_imu", "esense_imu", 50.0),
    ("esense_acc_z", "esense_imu", "esense_imu", 50.0),
    ("esense_gyro_x", "esense_imu", "esense_imu", 50.0),
    ("esense_gyro_y", "esense_imu", "esense_imu", 50.0),
    ("esense_gyro_z", "esense_imu", "esense_imu", 50.0),
    ("ecg_amp", "polar_ecg", "ecg", 130.0),
    ("muse_acc_x", "muse_imu", "muse_imu", 52.0),
    ("muse_acc_y", "muse_imu", "muse_imu", 52.0),
    ("muse_acc_z", "muse_imu", "muse_imu", 52.0),
    ("muse_gyro_x", "muse_imu", "muse_imu", 52.0),
    ("muse_gyro_y", "muse_imu", "muse_imu", 52.0),
    ("muse_gyro_z", "muse_imu", "muse_imu", 52.0),
    ("eeg_af7", "muse_eeg", "muse_eeg", 256.0),
    ("eeg_af8", "muse_eeg", "muse_eeg", 256.0),
]


class ChannelSpec:
    """Fixed channel ordering plus the modality partition of the sensor rows.

    ``modalities`` preserves first-appearance order, which is also the
    canonical tie-break order for ablation.
    """

    def __init__(self):
        self.channels = tuple(
            Channel(i, name, device, modality, rate)
            for i, (name, device, modality, rate) in enumerate(_CHANNEL_TABLE)
        )
        self.modalities = tuple(dict.fromkeys(c.modality for c in self.channels))
        self._rows_by_modality = {
            m: tuple(c.index for c in self.channels if c.modality == m)
            for m in self.modalities
        }
        self._validate()

    def _validate(self):
        assert len(self.channels) == N_CHANNELS - 1  # metadata row is implicit
        assert len(self.modalities) == N_MODALITIES
        covered = sorted(i for rows in self._rows_by_modality.values() for i in rows)
        assert covered == list(range(N_CHANNELS - 1))

    @property
    def n_channels(self) -> int:
        return N_CHANNELS

    @property
    def sensor_names(self) -> tuple:
        return tuple(c.name for c in self.channels)

    @property
    def channel_names(self) -> tuple:
        return self.sensor_names + ("video_progress",)

    @property
    def devices(self) -> tuple:
        return tuple(dict.fromkeys(c.device for c in self.channels))

    def modality_rows(self, modality: str) -> tuple:
        """Tensor row indices belonging to one modality group."""
        return self._rows_by_modality[modality]

    def modality_index(self, modality: str) -> int:
        return self.modalities.index(modality)

    def modality_channel_counts(self) -> dict:
        return {m: len(rows) for m, rows in self._rows_by_modality.items()}

    def device_channels(self, device: str) -> tuple:
        return tuple(c for c in self.channels if c.device == device)

    def device_rate(self, device: str) -> float:
        for c in self.channels:
            if c.device == device:
                return c.native_rate_hz
        raise KeyError(device)

    def spec_hash(self) -> str:
        """Stable digest of the channel layout, embedded in checkpoints."""
        payload = json.dumps(
            [(c.name, c.device, c.modality, c.native_rate_hz) for c in self.channels]
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


_DEFAULT_SPEC = None


def default_channel_spec() -> ChannelSpec:
    global _DEFAULT_SPEC
    if _DEFAULT_SPEC is None:
        _DEFAULT_SPEC = ChannelSpec()
    return _DEFAULT_SPEC
