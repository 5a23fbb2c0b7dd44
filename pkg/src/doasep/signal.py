"""Time-frequency analysis/synthesis and WAV file I/O.

Conventions used throughout the package:

* audio is ``(channels, samples)`` float64 in the range around [-1, 1),
* complex spectrograms are ``(channels, bins, frames)`` complex128 with
  ``bins = fft_size // 2 + 1`` (one-sided spectrum of a real signal),
* frame ``t`` covers samples ``[t * hop, t * hop + fft_size)`` and the tail
  frame is zero padded.

Analysis and synthesis both use a periodic Hann window.  Synthesis divides
the overlap-added stream by the summed squared window, so reconstruction is
exact (up to rounding) wherever that sum is bounded away from zero; at 50%
overlap the interior sum never drops below half its peak.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, FormatError

__all__ = [
    "AudioClip",
    "ComplexSpectrogram",
    "MagnitudeSpectrogram",
    "stft",
    "istft",
    "load_wav",
    "save_wav",
]


@dataclass
class AudioClip:
    """A fixed-rate multichannel audio buffer.

    Parameters
    ----------
    samples : np.ndarray
        ``(channels, samples)`` float64. A 1-D array is promoted to one
        channel.
    sample_rate : float
        Sampling rate in Hz, strictly positive.
    """

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if samples.ndim != 2:
            raise DataError(f"audio must be (channels, samples), got ndim={samples.ndim}")
        if float(self.sample_rate) <= 0.0:
            raise ConfigurationError(f"sample_rate must be positive, got {self.sample_rate}")
        self.samples = samples
        self.sample_rate = float(self.sample_rate)

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def trimmed(self, n_samples: int) -> "AudioClip":
        """A copy shortened (or zero-padded) to exactly ``n_samples``."""
        if n_samples < 0:
            raise ConfigurationError(f"cannot trim to {n_samples} samples")
        out = np.zeros((self.n_channels, n_samples))
        keep = min(n_samples, self.n_samples)
        out[:, :keep] = self.samples[:, :keep]
        return AudioClip(out, self.sample_rate)


@dataclass
class ComplexSpectrogram:
    """One-sided STFT of a multichannel clip, ``(channels, bins, frames)``."""

    bins: np.ndarray
    fft_size: int
    hop: int
    sample_rate: float

    def __post_init__(self):
        _check_stft_params(self.fft_size, self.hop)
        bins = np.asarray(self.bins, dtype=np.complex128)
        if bins.ndim != 3:
            raise DataError(f"spectrogram must be (channels, bins, frames), got ndim={bins.ndim}")
        expected = self.fft_size // 2 + 1
        if bins.shape[1] != expected:
            raise DataError(
                f"bin count {bins.shape[1]} does not match fft_size {self.fft_size}"
                f" (expected {expected})"
            )
        self.bins = bins

    @property
    def n_channels(self) -> int:
        return self.bins.shape[0]

    @property
    def n_bins(self) -> int:
        return self.bins.shape[1]

    @property
    def n_frames(self) -> int:
        return self.bins.shape[2]

    def magnitude(self, channel: int) -> "MagnitudeSpectrogram":
        return MagnitudeSpectrogram(
            np.abs(self.bins[channel]), self.fft_size, self.hop, self.sample_rate
        )


@dataclass
class MagnitudeSpectrogram:
    """Nonnegative magnitudes ``(bins, frames)`` on an STFT frame grid."""

    mags: np.ndarray
    fft_size: int
    hop: int
    sample_rate: float

    def __post_init__(self):
        mags = np.asarray(self.mags, dtype=np.float64)
        if mags.ndim != 2:
            raise DataError(f"magnitudes must be (bins, frames), got ndim={mags.ndim}")
        if mags.size and mags.min() < 0.0:
            raise DataError("magnitudes must be nonnegative")
        self.mags = mags

    @property
    def n_bins(self) -> int:
        return self.mags.shape[0]

    @property
    def n_frames(self) -> int:
        return self.mags.shape[1]


def _hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _check_stft_params(fft_size: int, hop: int) -> None:
    if fft_size <= 0 or (fft_size & (fft_size - 1)) != 0:
        raise ConfigurationError(f"fft_size must be a power of two, got {fft_size}")
    if hop <= 0:
        raise ConfigurationError(f"hop must be positive, got {hop}")
    if hop > fft_size:
        raise ConfigurationError(f"hop {hop} larger than fft_size {fft_size} drops samples")


def stft(clip: AudioClip, fft_size: int = 2048, hop: int | None = None) -> ComplexSpectrogram:
    """Short-time Fourier transform of every channel.

    Frames start at multiples of ``hop``; the signal is zero padded so the
    last frame is complete.  Returns the one-sided spectrum.
    """
    if hop is None:
        hop = fft_size // 2
    _check_stft_params(fft_size, hop)
    if clip.n_samples == 0:
        raise DataError("cannot transform an empty clip")

    n_frames = int(np.ceil(clip.n_samples / hop))
    padded_len = (n_frames - 1) * hop + fft_size
    window = _hann_periodic(fft_size)

    padded = np.zeros((clip.n_channels, padded_len))
    padded[:, : clip.n_samples] = clip.samples
    frames = np.lib.stride_tricks.sliding_window_view(padded, fft_size, axis=1)[:, ::hop, :]
    bins = np.fft.rfft(frames * window, axis=2)  # (M, T, F)
    return ComplexSpectrogram(
        bins.transpose(0, 2, 1), fft_size, hop, clip.sample_rate
    )


def istft(spec: ComplexSpectrogram) -> AudioClip:
    """Weighted overlap-add inverse of :func:`stft`.

    The output has length ``(frames - 1) * hop + fft_size``.  Samples where
    the summed squared window underflows (only the very edges of the first
    and last frame at 50% overlap) are set to zero.
    """
    fft_size, hop = spec.fft_size, spec.hop
    _check_stft_params(fft_size, hop)
    if spec.n_frames == 0:
        raise DataError("cannot invert a spectrogram with zero frames")

    window = _hann_periodic(fft_size)
    out_len = (spec.n_frames - 1) * hop + fft_size
    frames = np.fft.irfft(spec.bins.transpose(0, 2, 1), n=fft_size, axis=2)  # (M, T, N)
    frames *= window

    out = np.zeros((spec.n_channels, out_len))
    norm = np.zeros(out_len)
    win_sq = window * window
    for t in range(spec.n_frames):
        start = t * hop
        out[:, start : start + fft_size] += frames[:, t, :]
        norm[start : start + fft_size] += win_sq

    good = norm > 1e-8 * norm.max()
    out[:, good] /= norm[good]
    out[:, ~good] = 0.0
    return AudioClip(out, spec.sample_rate)


# ---------------------------------------------------------------------------
# RIFF/WAVE I/O.  A small parser is used instead of the stdlib wave module so
# that float32 files are supported and malformed input produces a clear
# format error with the failing byte offset.
# ---------------------------------------------------------------------------

_PCM = 1
_IEEE_FLOAT = 3


def load_wav(path) -> AudioClip:
    """Read a PCM 16-bit, PCM 24-bit, or IEEE float 32-bit WAV file.

    Integer samples are scaled by the full-scale value (32768 and 2**23), so
    a 16-bit sample of 32767 maps to 32767/32768.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: too short for a RIFF header (offset 0)")
    tag, _, kind = struct.unpack_from("<4sI4s", raw, 0)
    if tag != b"RIFF":
        raise FormatError(f"{path}: not a RIFF file (offset 0)")
    if kind != b"WAVE":
        raise FormatError(f"{path}: RIFF form is not WAVE (offset 8)")

    fmt = None
    data = None
    offset = 12
    while offset + 8 <= len(raw):
        chunk_id, chunk_size = struct.unpack_from("<4sI", raw, offset)
        body_start = offset + 8
        if body_start + chunk_size > len(raw):
            raise FormatError(
                f"{path}: chunk {chunk_id!r} of {chunk_size} bytes is truncated"
                f" (offset {offset})"
            )
        if chunk_id == b"fmt ":
            if chunk_size < 16:
                raise FormatError(f"{path}: fmt chunk too small (offset {offset})")
            fmt = struct.unpack_from("<HHIIHH", raw, body_start) + (body_start,)
        elif chunk_id == b"data":
            data = raw[body_start : body_start + chunk_size]
        offset = body_start + chunk_size + (chunk_size & 1)
    if fmt is None:
        raise FormatError(f"{path}: no fmt chunk found (offset {len(raw)})")
    if data is None:
        raise FormatError(f"{path}: no data chunk found (offset {len(raw)})")

    codec, n_channels, sample_rate, _, block_align, bits = fmt[:6]
    fmt_offset = fmt[6]
    if n_channels == 0:
        raise FormatError(f"{path}: zero channels (offset {fmt_offset})")
    if (codec, bits) not in ((_PCM, 16), (_PCM, 24), (_IEEE_FLOAT, 32)):
        raise FormatError(
            f"{path}: unsupported codec {codec} at {bits} bits (offset {fmt_offset})"
        )
    bytes_per_frame = n_channels * bits // 8
    if block_align not in (0, bytes_per_frame):
        raise FormatError(f"{path}: block alignment {block_align} inconsistent"
                          f" with {bits}-bit x{n_channels} (offset {fmt_offset})")
    if len(data) % bytes_per_frame:
        raise FormatError(
            f"{path}: data chunk of {len(data)} bytes is not a whole number of"
            f" {bytes_per_frame}-byte frames"
        )

    n_frames = len(data) // bytes_per_frame
    if codec == _IEEE_FLOAT:
        flat = np.frombuffer(data, dtype="<f4").astype(np.float64)
    elif bits == 16:
        flat = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    else:  # 24-bit PCM: sign-extend 3-byte little-endian words
        as_bytes = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3)
        words = (
            as_bytes[:, 0].astype(np.int32)
            | (as_bytes[:, 1].astype(np.int32) << 8)
            | (as_bytes[:, 2].astype(np.int32) << 16)
        )
        words = np.where(words & 0x800000, words - (1 << 24), words)
        flat = words.astype(np.float64) / float(1 << 23)
    samples = flat.reshape(n_frames, n_channels).T
    return AudioClip(samples, float(sample_rate))


def save_wav(clip: AudioClip, path, sample_format: str = "float32") -> None:
    """Write a clip as ``float32`` (default), ``pcm16``, or ``pcm24`` WAV."""
    x = clip.samples.T  # (frames, channels), interleaved on disk
    n_channels = clip.n_channels
    rate = int(round(clip.sample_rate))

    if sample_format == "float32":
        codec, bits = _IEEE_FLOAT, 32
        payload = x.astype("<f4").tobytes()
    elif sample_format == "pcm16":
        codec, bits = _PCM, 16
        scaled = np.clip(np.round(x * 32768.0), -32768, 32767)
        payload = scaled.astype("<i2").tobytes()
    elif sample_format == "pcm24":
        codec, bits = _PCM, 24
        scaled = np.clip(np.round(x * float(1 << 23)), -(1 << 23), (1 << 23) - 1)
        words = scaled.astype(np.int32)
        out = np.empty(words.shape + (3,), dtype=np.uint8)
        out[..., 0] = words & 0xFF
        out[..., 1] = (words >> 8) & 0xFF
        out[..., 2] = (words >> 16) & 0xFF
        payload = out.tobytes()
    else:
        raise ConfigurationError(f"unknown sample format {sample_format!r}")

    bytes_per_frame = n_channels * bits // 8
    fmt_chunk = struct.pack(
        "<HHIIHH", codec, n_channels, rate, rate * bytes_per_frame, bytes_per_frame, bits
    )
    chunks = [(b"fmt ", fmt_chunk)]
    if codec == _IEEE_FLOAT:
        chunks.append((b"fact", struct.pack("<I", clip.n_samples)))
    chunks.append((b"data", payload))

    body = bytearray()
    for chunk_id, chunk in chunks:
        body += struct.pack("<4sI", chunk_id, len(chunk))
        body += chunk
        if len(chunk) & 1:
            body += b"\x00"
    with open(path, "wb") as handle:
        handle.write(struct.pack("<4sI4s", b"RIFF", 4 + len(body), b"WAVE"))
        handle.write(bytes(body))
