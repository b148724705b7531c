"""Feature front-end: WAV ingestion, STFT, mel filterbank, MFCC, IDX.

Defaults follow the toolkit's audio pipeline: 30 ms frames with a
10 ms hop, 40 mel bands between 20 and 4000 Hz, natural log of filter
energies floored at 1e-10.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagic,
    ExtentMismatch,
    MalformedHeader,
    NegativeFrequency,
    RaggedImages,
    SignalTooShort,
    TruncatedPayload,
    UnsupportedEncoding,
)

LOG_FLOOR = 1e-10


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)


@dataclass
class Spectrogram:
    values: np.ndarray  # frames x bins (magnitudes or log energies)
    frame_ms: float
    hop_ms: float
    bin_freqs: np.ndarray = field(default=None)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


def read_wav_pcm16(raw: bytes) -> AudioBuffer:
    """Parse a RIFF/WAVE container holding 16-bit PCM.

    Multi-channel audio is reduced to the first channel; samples are
    scaled to [-1, 1) by 1/32768.
    """
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise MalformedHeader("not a RIFF/WAVE container")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (chunk_len,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + chunk_len]
        if chunk_id == b"fmt ":
            if chunk_len < 16:
                raise MalformedHeader("fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            if len(body) < chunk_len:
                raise MalformedHeader("data chunk truncated")
            data = body
        pos += 8 + chunk_len + (chunk_len & 1)
    if fmt is None or data is None:
        raise MalformedHeader("missing fmt or data chunk")
    audio_format, channels, sample_rate, _, _, bits = fmt
    if audio_format != 1 or bits != 16:
        raise UnsupportedEncoding(f"need 16-bit PCM, got format={audio_format}, bits={bits}")
    samples = np.frombuffer(data, dtype="<i2").astype(np.float64)
    if channels > 1:
        samples = samples[::channels]
    return AudioBuffer(samples / 32768.0, sample_rate)


def write_wav_pcm16(buffer: AudioBuffer) -> bytes:
    """Inverse of read_wav_pcm16 for mono buffers (used by tests/tools)."""
    pcm = np.clip(np.round(buffer.samples * 32768.0), -32768, 32767).astype("<i2")
    data = pcm.tobytes()
    fmt = struct.pack("<HHIIHH", 1, 1, buffer.sample_rate,
                      buffer.sample_rate * 2, 2, 16)
    body = b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(data)) + data
    return b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body


def frame_count(n_samples: int, frame_len: int, hop: int) -> int:
    return (n_samples - frame_len) // hop + 1


def _window(kind: str, length: int) -> np.ndarray:
    if kind == "hann":
        return np.hanning(length)
    if kind == "hamming":
        return np.hamming(length)
    raise ValueError(f"unknown window {kind!r}")


def stft(buffer: AudioBuffer, frame_ms: float = 30.0, hop_ms: float = 10.0,
         window: str = "hann") -> Spectrogram:
    """Magnitude spectrogram of overlapping windowed frames.

    The FFT size is the next power of two at or above the frame length,
    with zero padding; frame count is floor((N - frame)/hop) + 1.
    """
    frame_len = int(round(buffer.sample_rate * frame_ms / 1000.0))
    hop = int(round(buffer.sample_rate * hop_ms / 1000.0))
    if buffer.samples.size < frame_len:
        raise SignalTooShort(f"{buffer.samples.size} samples < one {frame_len}-sample frame")
    n_fft = 1
    while n_fft < frame_len:
        n_fft *= 2
    n_frames = frame_count(buffer.samples.size, frame_len, hop)
    win = _window(window, frame_len)
    idx = hop * np.arange(n_frames)[:, None] + np.arange(frame_len)
    frames = buffer.samples[idx] * win
    mags = np.abs(np.fft.rfft(frames, n=n_fft, axis=1))
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / buffer.sample_rate)
    return Spectrogram(mags, frame_ms, hop_ms, freqs)


def mel_scale(f) -> float:
    """m = 2595 log10(1 + f/700); monotone for f >= 0."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise NegativeFrequency("mel scale undefined below 0 Hz")
    out = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


@dataclass
class MelFilterbank:
    """Triangular unit-peak filters with edges equally spaced in mel."""

    weights: np.ndarray  # n_mels x n_bins
    center_freqs: np.ndarray
    f_min: float
    f_max: float


def mel_filterbank(bin_freqs: np.ndarray, n_mels: int = 40,
                   f_min: float = 20.0, f_max: float = 4000.0) -> MelFilterbank:
    edges = mel_to_hz(np.linspace(mel_scale(f_min), mel_scale(f_max), n_mels + 2))
    weights = np.zeros((n_mels, bin_freqs.size))
    for i in range(n_mels):
        lo, center, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (bin_freqs - lo) / (center - lo)
        down = (hi - bin_freqs) / (hi - center)
        weights[i] = np.maximum(0.0, np.minimum(up, down))
    return MelFilterbank(weights, edges[1:-1], f_min, f_max)


def log_mel_spectrogram(buffer: AudioBuffer, frame_ms: float = 30.0,
                        hop_ms: float = 10.0, n_mels: int = 40,
                        f_min: float = 20.0, f_max: float = 4000.0,
                        window: str = "hann") -> Spectrogram:
    spec = stft(buffer, frame_ms, hop_ms, window)
    bank = mel_filterbank(spec.bin_freqs, n_mels, f_min, f_max)
    energies = (spec.values**2) @ bank.weights.T
    return Spectrogram(np.log(np.maximum(energies, LOG_FLOOR)), frame_ms, hop_ms,
                       bank.center_freqs)


def mfcc(log_mel: Spectrogram, n_coeffs: int = 13) -> np.ndarray:
    """Cosine-transform each log-mel frame, keeping coefficients 0..n-1.

    c_n = sum_{m=0}^{M-1} S_m cos[n (m - 0.5) pi / M].
    """
    values = log_mel.values if isinstance(log_mel, Spectrogram) else np.asarray(log_mel)
    n_mels = values.shape[1]
    if n_coeffs > n_mels:
        raise ExtentMismatch(f"{n_coeffs} coefficients from {n_mels} mel bands")
    m = np.arange(n_mels)
    n = np.arange(n_coeffs)
    basis = np.cos(np.outer(n, (m - 0.5) * np.pi / n_mels))
    return values @ basis.T


# ---------------------------------------------------------------------------
# IDX image container


@dataclass
class IDXDataset:
    items: np.ndarray  # float64 in [0, 1]
    labels: np.ndarray  # int64, empty when unlabeled

    @property
    def n_items(self) -> int:
        return self.items.shape[0]


def parse_idx(raw: bytes) -> IDXDataset:
    """Parse an IDX container of unsigned bytes, scaled to [0, 1]."""
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise BadMagic("IDX magic must start with two zero bytes")
    if raw[2] != 0x08:
        raise BadMagic(f"unsupported IDX dtype {raw[2]:#x} (need unsigned byte)")
    ndim = raw[3]
    if len(raw) < 4 + 4 * ndim:
        raise TruncatedPayload("extent list truncated")
    extents = struct.unpack_from(f">{ndim}I", raw, 4)
    count = int(np.prod(extents, dtype=np.int64))
    off = 4 + 4 * ndim
    if len(raw) < off + count:
        raise TruncatedPayload(f"payload holds {len(raw) - off} of {count} bytes")
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=off)
    return IDXDataset(data.reshape(extents).astype(np.float64) / 255.0,
                      np.empty(0, dtype=np.int64))


def serialize_idx(ds: IDXDataset) -> bytes:
    """Inverse of parse_idx; exact round trip for byte-valued data."""
    arr = np.round(ds.items * 255.0).astype(np.uint8)
    header = bytes([0, 0, 0x08, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def parse_idx_labels(raw: bytes) -> np.ndarray:
    """1-D IDX label file (dtype byte, one extent)."""
    if len(raw) < 8 or raw[:2] != b"\x00\x00" or raw[2] != 0x08 or raw[3] != 1:
        raise BadMagic("expected a 1-D unsigned-byte IDX label file")
    (count,) = struct.unpack_from(">I", raw, 4)
    if len(raw) < 8 + count:
        raise TruncatedPayload("label payload truncated")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=8).astype(np.int64)


def serialize_idx_labels(labels: np.ndarray) -> bytes:
    arr = np.asarray(labels).astype(np.uint8)
    return bytes([0, 0, 0x08, 1]) + struct.pack(">I", arr.size) + arr.tobytes()


def permute_pixels(ds: IDXDataset, seed: int) -> IDXDataset:
    """Apply one seeded fixed permutation to every flattened image."""
    if ds.items.ndim < 2:
        raise RaggedImages("need a batch of images to permute")
    flat = ds.items.reshape(ds.n_items, -1)
    perm = np.random.default_rng(seed).permutation(flat.shape[1])
    return IDXDataset(flat[:, perm], ds.labels)
