"""Framing, 24-D MFCC extraction, noise estimation, and DNN input assembly.

The tagger consumes 80/40 ms frames; the frame-level baselines use 20/10 ms.
A context window stacks ``width`` consecutive MFCC rows and appends a noise
estimate averaged over the first T frames, giving 91*24 + 24 = 2208 values
for the canonical configuration.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .audio_io import AudioChunk
from .errors import ConfigError, DataError, FormatError


@dataclass
class FrameMatrix:
    """Raw sample frames: one row per sliding-window position."""

    chunk_id: str
    frames: np.ndarray
    window_ms: float
    hop_ms: float
    sample_rate: int


@dataclass
class FeatureMatrix:
    """Per-frame MFCC rows for one chunk (T_frames x n_coeffs)."""

    chunk_id: str
    features: np.ndarray
    window_ms: float
    hop_ms: float

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    @property
    def duration_ms(self) -> float:
        return (self.n_frames - 1) * self.hop_ms + self.window_ms


@dataclass
class ContextWindow:
    """Stacked frames around one center position plus the noise estimate."""

    values: np.ndarray
    center_index: int


@dataclass
class NormStats:
    """Per-dimension mean/std over pooled training frames; std floored."""

    mean: np.ndarray
    std: np.ndarray


@dataclass
class MfccConfig:
    n_filters: int = 40
    n_coeffs: int = 24
    preemphasis: float = 0.97
    fmin: float = 0.0
    fmax: float | None = None  # defaults to Nyquist
    log_floor: float = 1e-10

    def __post_init__(self) -> None:
        if self.n_coeffs > self.n_filters:
            raise ConfigError(
                f"n_coeffs {self.n_coeffs} exceeds filter count {self.n_filters}"
            )


def frame_signal(chunk: AudioChunk, window_ms: float, hop_ms: float) -> FrameMatrix:
    """Slice a chunk into overlapping frames; the trailing partial frame is dropped.

    Frame t covers samples [t*hop, t*hop + window), so the frame count is
    floor((n_samples - window)/hop) + 1.
    """
    if hop_ms <= 0 or window_ms < hop_ms:
        raise ConfigError(f"need window_ms >= hop_ms > 0, got {window_ms}/{hop_ms}")
    window = int(round(window_ms * chunk.sample_rate / 1000.0))
    hop = int(round(hop_ms * chunk.sample_rate / 1000.0))
    if len(chunk.samples) < window:
        raise DataError(
            f"chunk {chunk.id!r}: {len(chunk.samples)} samples shorter than one "
            f"{window}-sample window"
        )
    n_frames = (len(chunk.samples) - window) // hop + 1
    idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
    return FrameMatrix(
        chunk_id=chunk.id,
        frames=chunk.samples[idx],
        window_ms=window_ms,
        hop_ms=hop_ms,
        sample_rate=chunk.sample_rate,
    )


def next_pow2(n: int) -> int:
    size = 1
    while size < n:
        size *= 2
    return size


def hz_to_mel(f: np.ndarray | float) -> np.ndarray | float:
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m: np.ndarray | float) -> np.ndarray | float:
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(
    n_filters: int, fft_size: int, sample_rate: int, fmin: float = 0.0, fmax: float | None = None
) -> np.ndarray:
    """Triangular filters on the mel scale, evaluated at rfft bin frequencies.

    Returns an (n_filters, fft_size // 2 + 1) weight matrix.
    """
    if fmax is None:
        fmax = sample_rate / 2.0
    mel_points = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2)
    hz_points = mel_to_hz(mel_points)
    bin_freqs = np.fft.rfftfreq(fft_size, d=1.0 / sample_rate)
    fbank = np.zeros((n_filters, len(bin_freqs)))
    for m in range(n_filters):
        left, center, right = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        rising = (bin_freqs - left) / (center - left)
        falling = (right - bin_freqs) / (right - center)
        fbank[m] = np.maximum(0.0, np.minimum(rising, falling))
    return fbank


def filterbank_energies(frames: FrameMatrix, config: MfccConfig) -> np.ndarray:
    """Mel filterbank energies of the magnitude spectrum, one row per frame."""
    x = frames.frames.astype(np.float64)
    if config.preemphasis > 0:
        x = np.concatenate([x[:, :1], x[:, 1:] - config.preemphasis * x[:, :-1]], axis=1)
    window_len = x.shape[1]
    x = x * np.hamming(window_len)
    fft_size = next_pow2(window_len)
    magnitude = np.abs(np.fft.rfft(x, n=fft_size, axis=1))
    fbank = mel_filterbank(
        config.n_filters, fft_size, frames.sample_rate, config.fmin, config.fmax
    )
    return magnitude @ fbank.T


def compute_mfcc(frames: FrameMatrix, config: MfccConfig | None = None) -> FeatureMatrix:
    """Convert raw frames to MFCC rows.

    Chain per frame: pre-emphasis, Hamming window, magnitude FFT (zero-padded
    to the next power of two), mel filterbank, floored log, orthonormal
    DCT-II, keep the first ``n_coeffs`` coefficients (C0 included).
    """
    config = config or MfccConfig()
    energies = filterbank_energies(frames, config)
    log_energies = np.log(np.maximum(energies, config.log_floor))
    coeffs = dct(log_energies, type=2, norm="ortho", axis=1)[:, : config.n_coeffs]
    return FeatureMatrix(
        chunk_id=frames.chunk_id,
        features=coeffs,
        window_ms=frames.window_ms,
        hop_ms=frames.hop_ms,
    )


def estimate_noise(features: FeatureMatrix, T: int = 6) -> np.ndarray:
    """Background estimate: arithmetic mean of the first T feature rows."""
    if T < 1:
        raise DataError(f"noise-estimation frame count must be >= 1, got {T}")
    if T > features.n_frames:
        raise DataError(
            f"chunk {features.chunk_id!r}: T={T} exceeds {features.n_frames} frames"
        )
    return features.features[:T].mean(axis=0)


def build_context_windows(
    features: FeatureMatrix, noise: np.ndarray, width: int = 91
) -> list[ContextWindow]:
    """Stride-1 full-coverage context windows (no edge padding).

    Each window stacks frames n-tau .. n+tau row-major and appends the noise
    estimate, so its dimensionality is width * n_coeffs + n_coeffs.
    """
    if width % 2 == 0 or width < 1:
        raise ConfigError(f"context width must be odd and positive, got {width}")
    n_frames = features.n_frames
    if width > n_frames:
        raise DataError(
            f"chunk {features.chunk_id!r}: width {width} exceeds {n_frames} frames"
        )
    noise = np.asarray(noise, dtype=np.float64)
    tau = width // 2
    windows = []
    for center in range(tau, n_frames - tau):
        stacked = features.features[center - tau : center + tau + 1].reshape(-1)
        windows.append(
            ContextWindow(values=np.concatenate([stacked, noise]), center_index=center)
        )
    return windows


def fit_normalizer(training: list[FeatureMatrix], std_floor: float = 1e-6) -> NormStats:
    """Per-dimension zero-mean/unit-variance stats over pooled training frames."""
    if not training:
        raise DataError("cannot fit a normalizer on an empty training set")
    pooled = np.vstack([fm.features for fm in training])
    return NormStats(
        mean=pooled.mean(axis=0),
        std=np.maximum(pooled.std(axis=0), std_floor),
    )


def normalize(features: FeatureMatrix, stats: NormStats) -> FeatureMatrix:
    return FeatureMatrix(
        chunk_id=features.chunk_id,
        features=(features.features - stats.mean) / stats.std,
        window_ms=features.window_ms,
        hop_ms=features.hop_ms,
    )


# ---------------------------------------------------------------------------
# On-disk feature cache: one record per chunk, little-endian float32 payload
# behind a small versioned header with source and payload checksums.
# ---------------------------------------------------------------------------

_CACHE_MAGIC = b"ATFC"
_CACHE_VERSION = 1
_HEADER_FMT = "<4sHHIIddII"  # magic, version, id_len, rows, cols, window_ms, hop_ms, source_crc, payload_crc


def save_feature_record(
    path: str | Path, features: FeatureMatrix, source_crc: int = 0
) -> None:
    data = np.ascontiguousarray(features.features, dtype="<f4")
    payload = data.tobytes()
    id_bytes = features.chunk_id.encode("utf-8")
    header = struct.pack(
        _HEADER_FMT,
        _CACHE_MAGIC,
        _CACHE_VERSION,
        len(id_bytes),
        data.shape[0],
        data.shape[1],
        features.window_ms,
        features.hop_ms,
        source_crc & 0xFFFFFFFF,
        zlib.crc32(payload) & 0xFFFFFFFF,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(id_bytes)
        fh.write(payload)


def load_feature_record(path: str | Path) -> tuple[FeatureMatrix, int]:
    """Load a cached record, returning (features, source_crc).

    Raises FormatError if the header is malformed or a checksum mismatches.
    """
    header_size = struct.calcsize(_HEADER_FMT)
    with open(path, "rb") as fh:
        header = fh.read(header_size)
        if len(header) != header_size:
            raise FormatError(f"{path}: truncated cache header")
        magic, version, id_len, rows, cols, window_ms, hop_ms, source_crc, payload_crc = (
            struct.unpack(_HEADER_FMT, header)
        )
        if magic != _CACHE_MAGIC:
            raise FormatError(f"{path}: bad cache magic {magic!r}")
        if version != _CACHE_VERSION:
            raise FormatError(f"{path}: unsupported cache version {version}")
        id_bytes = fh.read(id_len)
        payload = fh.read(rows * cols * 4)
    if len(id_bytes) != id_len or len(payload) != rows * cols * 4:
        raise FormatError(f"{path}: truncated cache record")
    if zlib.crc32(payload) & 0xFFFFFFFF != payload_crc:
        raise FormatError(f"{path}: payload checksum mismatch")
    features = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float64)
    return (
        FeatureMatrix(
            chunk_id=id_bytes.decode("utf-8"),
            features=features,
            window_ms=window_ms,
            hop_ms=hop_ms,
        ),
        source_crc,
    )
