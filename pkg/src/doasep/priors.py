"""Source-spectrogram priors: file container, oracle/random generation, HALS.

Priors are per-source magnitude spectrograms on the mixture's STFT grid.
They are produced elsewhere (typically a DNN vocal estimator) and consumed
here in two places: directly as the fixed spectrogram during mixing-filter
estimation, and decomposed into spectral patterns and gains as the starting
point of the refinement stage.

The on-disk container is little-endian throughout::

    bytes 0..5    magic "SPEC1\\0"
    u32           number of sources S
    u32           frequency bins F
    u32           frames T
    f64           sample rate
    u32           fft size
    u32           hop
    S*F*T f32     magnitudes, source-major, frame index fastest
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError
from .signal import AudioClip, ComplexSpectrogram, MagnitudeSpectrogram, stft

__all__ = [
    "EPS",
    "PriorSet",
    "SpectralModel",
    "select_predominant_channel",
    "oracle_prior",
    "random_prior",
    "vocal_residual_priors",
    "load_prior",
    "save_prior",
    "hals_decompose",
    "decompose_priors",
]

EPS = 1e-12

_MAGIC = b"SPEC1\x00"
_HEADER = struct.Struct("<6sIIIdII")


@dataclass
class PriorSet:
    """Per-source magnitude priors ``(S, F, T)`` plus their STFT grid.

    Magnitudes are kept as float32, matching the container precision, so a
    save/load round trip is bit-identical.  ``provenance`` records where the
    priors came from: ``file``, ``oracle``, or ``random``.
    """

    mags: np.ndarray
    sample_rate: float
    fft_size: int
    hop: int
    provenance: str = "file"

    def __post_init__(self):
        mags = np.ascontiguousarray(self.mags, dtype=np.float32)
        if mags.ndim != 3:
            raise DataError(f"prior magnitudes must be (S, F, T), got ndim={mags.ndim}")
        if mags.size == 0:
            raise DataError("prior set has a zero dimension")
        if not np.all(np.isfinite(mags)):
            raise DataError("prior magnitudes contain non-finite values")
        if mags.min() < 0:
            raise DataError("prior magnitudes must be nonnegative")
        if self.provenance not in ("file", "oracle", "random"):
            raise DataError(f"unknown prior provenance {self.provenance!r}")
        self.mags = mags

    @property
    def n_sources(self) -> int:
        return self.mags.shape[0]

    @property
    def n_bins(self) -> int:
        return self.mags.shape[1]

    @property
    def n_frames(self) -> int:
        return self.mags.shape[2]

    def spectrogram_tensor(self) -> np.ndarray:
        """Float64 copy arranged ``(F, T, S)`` for the factorization core."""
        return self.mags.astype(np.float64).transpose(1, 2, 0)


@dataclass
class SpectralModel:
    """Nonnegative spectral patterns and gains: ``(F, K, S)`` and ``(K, T, S)``."""

    bases: np.ndarray
    gains: np.ndarray

    def __post_init__(self):
        bases = np.asarray(self.bases, dtype=np.float64)
        gains = np.asarray(self.gains, dtype=np.float64)
        if bases.ndim != 3 or gains.ndim != 3:
            raise DataError("bases must be (F, K, S) and gains (K, T, S)")
        if bases.shape[1] != gains.shape[0] or bases.shape[2] != gains.shape[2]:
            raise DataError(
                f"bases {bases.shape} and gains {gains.shape} disagree on K or S"
            )
        if bases.min() < 0 or gains.min() < 0:
            raise DataError("spectral model factors must be nonnegative")
        self.bases = bases
        self.gains = gains

    @property
    def n_components(self) -> int:
        return self.bases.shape[1]

    @property
    def n_sources(self) -> int:
        return self.bases.shape[2]

    def spectrogram(self) -> np.ndarray:
        """Modelled magnitudes ``(F, T, S)``."""
        return np.einsum("fks,kts->fts", self.bases, self.gains)


def save_prior(priors: PriorSet, path) -> None:
    """Write a prior set to the SPEC1 container format."""
    s, f, t = priors.mags.shape
    header = _HEADER.pack(
        _MAGIC, s, f, t, float(priors.sample_rate), priors.fft_size, priors.hop
    )
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(np.ascontiguousarray(priors.mags, dtype="<f4").tobytes())


def load_prior(path) -> PriorSet:
    """Read a SPEC1 container; the result round-trips bit-identically."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: too short for a SPEC1 header (offset 0)")
    magic, s, f, t, sample_rate, fft_size, hop = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} (offset 0)")
    if min(s, f, t) == 0:
        raise FormatError(f"{path}: zero dimension in header S={s} F={f} T={t} (offset 6)")
    expected = s * f * t * 4
    if expected > len(raw) - _HEADER.size:
        raise FormatError(
            f"{path}: header promises {expected} payload bytes but only"
            f" {len(raw) - _HEADER.size} follow (offset {_HEADER.size})"
        )
    if expected < len(raw) - _HEADER.size:
        raise FormatError(
            f"{path}: {len(raw) - _HEADER.size - expected} trailing bytes after payload"
            f" (offset {_HEADER.size + expected})"
        )
    mags = np.frombuffer(raw, dtype="<f4", count=s * f * t, offset=_HEADER.size)
    return PriorSet(mags.reshape(s, f, t).copy(), sample_rate, fft_size, hop, "file")


def select_predominant_channel(channels: list[MagnitudeSpectrogram]) -> int:
    """Index of the channel with the largest squared-magnitude energy.

    Ties resolve to the lowest index.
    """
    if not channels:
        raise DataError("no channels to select from")
    energies = [float(np.sum(ch.mags**2)) for ch in channels]
    return int(np.argmax(energies))


def oracle_prior(source_images: list[AudioClip], fft_size: int, hop: int) -> PriorSet:
    """Ground-truth priors from reverberant source images.

    Each source contributes the magnitude spectrogram of its predominant
    (most energetic) channel.  All images must share length and rate.
    """
    if not source_images:
        raise DataError("no source images supplied")
    lengths = {img.n_samples for img in source_images}
    rates = {img.sample_rate for img in source_images}
    if len(lengths) != 1 or len(rates) != 1:
        raise DataError("source images disagree on length or sample rate")

    mags = []
    for image in source_images:
        spec = stft(image, fft_size, hop)
        per_channel = [spec.magnitude(m) for m in range(spec.n_channels)]
        mags.append(per_channel[select_predominant_channel(per_channel)].mags)
    return PriorSet(
        np.stack(mags, axis=0), source_images[0].sample_rate, fft_size, hop, "oracle"
    )


def random_prior(n_sources: int, n_bins: int, n_frames: int, sample_rate: float,
                 fft_size: int, hop: int, seed: int) -> PriorSet:
    """Uninformative priors: i.i.d. uniform magnitudes on (0, 1]."""
    rng = np.random.default_rng(seed)
    mags = 1.0 - rng.random((n_sources, n_bins, n_frames), dtype=np.float64)
    return PriorSet(mags, sample_rate, fft_size, hop, "random")


def vocal_residual_priors(vocal: PriorSet, mixture: ComplexSpectrogram) -> PriorSet:
    """Complete a vocal-only prior with an accompaniment residual.

    The accompaniment prior is ``max(eps, |x| - vocal)`` on the mixture's
    predominant channel, so the pair covers the full mixture energy.
    """
    if vocal.n_sources != 1:
        raise DataError(f"expected a single vocal prior, got {vocal.n_sources} sources")
    if (vocal.n_bins, vocal.n_frames) != (mixture.n_bins, mixture.n_frames):
        raise DataError(
            f"prior grid {(vocal.n_bins, vocal.n_frames)} does not match mixture"
            f" {(mixture.n_bins, mixture.n_frames)}"
        )
    per_channel = [mixture.magnitude(m) for m in range(mixture.n_channels)]
    predominant = per_channel[select_predominant_channel(per_channel)].mags
    residual = np.maximum(EPS, predominant - vocal.mags[0].astype(np.float64))
    mags = np.stack([vocal.mags[0].astype(np.float64), residual], axis=0)
    return PriorSet(mags, vocal.sample_rate, vocal.fft_size, vocal.hop, vocal.provenance)


def hals_decompose(prior, n_components: int = 30, iterations: int = 100,
                   seed: int = 0) -> SpectralModel:
    """Decompose one magnitude prior into spectral patterns and gains.

    Alternates the closed-form rules

        b_fk <- (sum_t g_kt)^-1 sum_t [y_ft]+
        g_kt <- (sum_f b_fk)^-1 sum_f [y_ft]+

    with ``[.]+ = max(eps, .)``, starting from seeded uniform factors.  Every
    component sees the same floored target, so the iteration reaches its
    fixed point (the product of the row and column marginals) after the
    first sweep; the remaining sweeps only confirm it.  Factor entries stay
    at or above ``eps``.
    """
    if isinstance(prior, MagnitudeSpectrogram):
        target = prior.mags
    else:
        target = np.asarray(prior, dtype=np.float64)
    if target.ndim != 2:
        raise DataError(f"prior must be (F, T), got ndim={target.ndim}")
    if n_components < 1:
        raise DataError(f"need at least one component, got {n_components}")
    if iterations < 1:
        raise DataError(f"need at least one iteration, got {iterations}")

    f_bins, t_frames = target.shape
    rng = np.random.default_rng(seed)
    bases = np.maximum(EPS, rng.random((f_bins, n_components)))
    gains = np.maximum(EPS, rng.random((n_components, t_frames)))

    floored = np.maximum(EPS, target)
    row = floored.sum(axis=1)  # (F,)
    col = floored.sum(axis=0)  # (T,)
    for _ in range(iterations):
        bases = np.maximum(EPS, row[:, None] / gains.sum(axis=1)[None, :])
        gains = np.maximum(EPS, col[None, :] / bases.sum(axis=0)[:, None])
    return SpectralModel(bases[:, :, None], gains[:, :, None])


def decompose_priors(priors: PriorSet, n_components: int = 30,
                     iterations: int = 100, seed: int = 0) -> SpectralModel:
    """HALS-decompose every source of a prior set into one stacked model.

    Source ``s`` uses ``seed + s`` so runs are reproducible but sources are
    not initialized identically.
    """
    tensor = priors.spectrogram_tensor()  # (F, T, S)
    models = [
        hals_decompose(tensor[:, :, s], n_components, iterations, seed + s)
        for s in range(priors.n_sources)
    ]
    return SpectralModel(
        np.concatenate([m.bases for m in models], axis=2),
        np.concatenate([m.gains for m in models], axis=2),
    )
