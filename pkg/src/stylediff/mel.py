"""Mel-spectrogram data model, binary file format, and normalization.

A spectrogram is an [n_mels x T] float matrix of dimensionless
log-magnitude-like values. Everything entering the diffusion module is
normalized to [-1, 1] using min/max statistics computed on the train split.

File format (little- or big-endian, tagged in the header):

    offset 0   4 bytes   magic b"MELB"
    offset 4   1 byte    endianness tag: b"<" or b">"
    offset 5   4 bytes   n_mels (uint32)
    offset 9   4 bytes   frame count T (uint32)
    offset 13  4*n_mels*T bytes   row-major float32 payload
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError

MEL_MAGIC = b"MELB"
_HEADER_LEN = 13


@dataclass
class MelSpectrogram:
    """An [n_mels x T] spectrogram. data[m, t] is bin m at frame t."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise ConfigError(f"mel data must be 2-D [n_mels x T], got shape {arr.shape}")
        if arr.shape[1] < 1:
            raise ConfigError("mel must have at least one frame")
        if not np.isfinite(arr).all():
            raise ConfigError("mel contains non-finite values")
        self.data = arr

    @property
    def n_mels(self) -> int:
        return self.data.shape[0]

    @property
    def frame_count(self) -> int:
        return self.data.shape[1]


def write_mel(mel: MelSpectrogram, path) -> None:
    path = Path(path)
    header = MEL_MAGIC + b"<" + struct.pack("<II", mel.n_mels, mel.frame_count)
    payload = mel.data.astype("<f4").tobytes(order="C")
    path.write_bytes(header + payload)


def read_mel(path) -> MelSpectrogram:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER_LEN:
        raise DataFormatError(
            f"{path}: truncated header, file ends at byte offset {len(raw)} "
            f"(expected at least {_HEADER_LEN})"
        )
    if raw[:4] != MEL_MAGIC:
        raise DataFormatError(f"{path}: bad magic {raw[:4]!r} at byte offset 0")
    endian = raw[4:5]
    if endian not in (b"<", b">"):
        raise DataFormatError(f"{path}: bad endianness tag {endian!r} at byte offset 4")
    tag = endian.decode()
    n_mels, frames = struct.unpack(f"{tag}II", raw[5:_HEADER_LEN])
    if n_mels < 1 or frames < 1:
        raise DataFormatError(f"{path}: invalid dimensions {n_mels}x{frames} in header")
    expected = _HEADER_LEN + 4 * n_mels * frames
    if len(raw) != expected:
        raise DataFormatError(
            f"{path}: payload truncated or oversized, file ends at byte offset "
            f"{len(raw)} but header declares {n_mels}x{frames} "
            f"(expected {expected} bytes)"
        )
    data = np.frombuffer(raw, dtype=f"{tag}f4", count=n_mels * frames, offset=_HEADER_LEN)
    return MelSpectrogram(data.reshape(n_mels, frames).astype(np.float32))


@dataclass(frozen=True)
class NormStats:
    """Min/max over the train split; normalize maps [vmin, vmax] -> [-1, 1]."""

    vmin: float
    vmax: float

    def __post_init__(self):
        if not (np.isfinite(self.vmin) and np.isfinite(self.vmax)):
            raise ConfigError("normalization stats must be finite")
        if self.vmax <= self.vmin:
            raise ConfigError(
                f"degenerate normalization stats: vmin={self.vmin} vmax={self.vmax}"
            )


def compute_stats(mels) -> NormStats:
    vmin = min(float(m.data.min()) for m in mels)
    vmax = max(float(m.data.max()) for m in mels)
    return NormStats(vmin, vmax)


def normalize(mel: MelSpectrogram, stats: NormStats) -> MelSpectrogram:
    scale = 2.0 / (stats.vmax - stats.vmin)
    return MelSpectrogram((mel.data.astype(np.float64) - stats.vmin) * scale - 1.0)


def denormalize(mel: MelSpectrogram, stats: NormStats) -> MelSpectrogram:
    scale = (stats.vmax - stats.vmin) / 2.0
    return MelSpectrogram((mel.data.astype(np.float64) + 1.0) * scale + stats.vmin)


def normalize_array(x: np.ndarray, stats: NormStats) -> np.ndarray:
    return (x.astype(np.float64) - stats.vmin) * (2.0 / (stats.vmax - stats.vmin)) - 1.0


def denormalize_array(x: np.ndarray, stats: NormStats) -> np.ndarray:
    return (x.astype(np.float64) + 1.0) * ((stats.vmax - stats.vmin) / 2.0) + stats.vmin
