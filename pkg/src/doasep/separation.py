"""Wiener-style reconstruction and the end-to-end separation pipeline."""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .array import ArrayGeometry, build_direction_grid, init_doa_kernels
from .cnmf import (DEFAULT_RIDGE, MixingEstimate, RefinementResult, VariantPreset,
                   estimate_mixing_filter, refine_sources)
from .errors import DataError, DoasepError
from .priors import PriorSet, decompose_priors, random_prior
from .scm import compute_scm
from .signal import AudioClip, ComplexSpectrogram, istft, stft

__all__ = [
    "SeparationResult",
    "wiener_masks",
    "reconstruct",
    "run_pipeline",
]


@dataclass
class SeparationResult:
    """Separated sources plus everything needed to audit the run.

    ``masks`` is ``(M, F, T, S)``; ``diagnostics`` holds per-stage cost
    histories, the final spatial-weight matrix, grid azimuths, and warning
    counters, all as plain arrays and numbers.
    """

    sources: list
    spectrograms: list
    masks: np.ndarray
    mixing: MixingEstimate
    refinement: RefinementResult
    diagnostics: dict


def wiener_masks(kernels: np.ndarray, weights: np.ndarray,
                 spectrogram: np.ndarray) -> np.ndarray:
    """Per-channel magnitude-ratio masks ``(M, F, T, S)``.

    mask_mfts = sum_o diag_m(W_fo) z_so yhat_fts
              / sum_s'o diag_m(W_fo) z_s'o yhat_fts'

    Kernel diagonals are real and nonnegative for PSD kernels; rounding
    residue is clipped so masks stay in [0, 1].  Bins where every source is
    silent get the uninformative 1/S.
    """
    spectrogram = np.asarray(spectrogram, dtype=np.float64)
    if np.any(spectrogram < 0):
        raise DataError("source spectrograms must be nonnegative")
    diag = np.maximum(np.diagonal(kernels, axis1=-2, axis2=-1).real, 0.0)  # (F, O, M)
    num = np.einsum("fom,so,fts->mfts", diag, weights, spectrogram)
    den = num.sum(axis=-1, keepdims=True)
    n_sources = spectrogram.shape[-1]
    masks = np.full_like(num, 1.0 / n_sources)
    np.divide(num, den, out=masks, where=den > 0.0)
    return masks


def reconstruct(mixture: ComplexSpectrogram, masks: np.ndarray) -> list[ComplexSpectrogram]:
    """Apply masks to the mixture STFT, conserving it exactly.

    The first S-1 sources are ``mask * mixture``; the last source is the
    residual ``mixture - sum(others)``, which pins the per-channel sum of
    the outputs to the mixture bit for bit (summing independently rounded
    products would drift by an ulp).
    """
    if masks.ndim != 4 or masks.shape[:3] != mixture.bins.shape:
        raise DataError(
            f"masks {masks.shape} do not sit on the mixture grid {mixture.bins.shape}"
        )
    n_sources = masks.shape[-1]
    separated = [masks[..., s] * mixture.bins for s in range(n_sources - 1)]
    if n_sources > 1:
        separated.append(_conserving_residual(separated, mixture.bins))
    else:
        separated.append(mixture.bins)
    return [
        ComplexSpectrogram(bins, mixture.fft_size, mixture.hop, mixture.sample_rate)
        for bins in separated
    ]


def _nudge(part: np.ndarray, drift: np.ndarray, target_re: np.ndarray,
           target_im: np.ndarray) -> np.ndarray:
    """Move the drifting components of one part an ulp toward the target."""
    re = np.where(drift.real != 0.0, np.nextafter(part.real, target_re),
                  part.real)
    im = np.where(drift.imag != 0.0, np.nextafter(part.imag, target_im),
                  part.imag)
    return re + 1j * im


def _conserving_residual(parts: list[np.ndarray], total: np.ndarray) -> np.ndarray:
    """Residual such that a plain sum of ``parts`` plus it restores ``total``.

    ``total - sum(parts)`` alone is not enough: when the parts carry almost
    none of a bin that subtraction rounds, and the re-summation lands an ulp
    off.  Feeding the drift of the re-summation back into the residual fixes
    most bins (the drift itself is exact, the sums differ by at most an ulp).
    The rest are tie cases where every candidate residual rounds away from
    ``total``; walking the parts one ulp per round in a fixed direction
    changes the parity of the attainable sums and unsticks them.  The walk
    must not follow the drift sign (it alternates on ties) and must rotate
    over the parts: their differing binades step the running sum by
    different sub-ulp amounts, which breaks rounding locks no single part
    can escape.
    """
    target_re = target_im = None
    for round_no in range(4 + 4 * len(parts)):
        partial = sum(parts)
        residual = total - partial
        for _ in range(4):
            drift = (partial + residual) - total
            if not drift.any():
                return residual
            residual = residual - drift
        drift = (partial + residual) - total
        if not drift.any():
            return residual
        if target_re is None:
            target_re = np.where(drift.real > 0.0, -np.inf, np.inf)
            target_im = np.where(drift.imag > 0.0, -np.inf, np.inf)
        pick = round_no % len(parts)
        parts[pick] = _nudge(parts[pick], drift, target_re, target_im)
    return residual


@contextmanager
def _stage(name: str):
    """Prefix any toolkit error with the pipeline stage that raised it."""
    try:
        yield
    except DoasepError as exc:
        if not str(exc).startswith("stage "):
            exc.args = (f"stage {name!r}: {exc}",) + exc.args[1:]
        raise


def run_pipeline(mixture: AudioClip, priors: PriorSet | None,
                 geometry: ArrayGeometry, *,
                 preset: VariantPreset | str = "free",
                 n_directions: int = 60,
                 fft_size: int = 2048,
                 hop: int | None = None,
                 mixing_iterations: int = 200,
                 refinement_iterations: int = 200,
                 n_components: int = 30,
                 hals_iterations: int = 100,
                 n_sources: int = 2,
                 seed: int = 0,
                 ridge_rel: float = DEFAULT_RIDGE) -> SeparationResult:
    """Separate a multichannel mixture guided by source priors.

    Stages: STFT analysis and observed covariances; prior preparation;
    mixing-filter estimation against the fixed priors; HALS decomposition of
    the priors into a spectral model; model refinement under the learned
    mixing filter; Wiener masking and overlap-add synthesis.  Every error is
    tagged with its stage.  ``priors`` may be None only for presets whose
    prior source is random (they are drawn from ``seed``); ``n_sources`` is
    only consulted in that case.
    """
    if isinstance(preset, str):
        preset = VariantPreset.named(preset)
    if mixture.n_samples == 0:
        raise DataError("mixture is empty")
    if hop is None:
        hop = fft_size // 2

    with _stage("analysis"):
        mixture_spec = stft(mixture, fft_size, hop)
        observed = compute_scm(mixture_spec)

    with _stage("priors"):
        if priors is None:
            if preset.prior_source != "random":
                raise DataError(f"preset {preset.name!r} needs explicit priors")
            priors = random_prior(n_sources, mixture_spec.n_bins,
                                  mixture_spec.n_frames, mixture.sample_rate,
                                  fft_size, hop, seed)
        if (priors.n_bins, priors.n_frames) != (mixture_spec.n_bins, mixture_spec.n_frames):
            raise DataError(
                f"prior grid {(priors.n_bins, priors.n_frames)} does not match the"
                f" mixture grid {(mixture_spec.n_bins, mixture_spec.n_frames)}"
            )
        prior_tensor = priors.spectrogram_tensor()
        grid = build_direction_grid(n_directions)
        kernels = init_doa_kernels(geometry, grid, mixture_spec.n_bins,
                                   fft_size, mixture.sample_rate)

    with _stage("mixing"):
        mixing = estimate_mixing_filter(observed, prior_tensor, kernels,
                                        mixing_iterations, ridge_rel)

    with _stage("spectral-model"):
        model = decompose_priors(priors, n_components, hals_iterations, seed)

    with _stage("refinement"):
        refinement = refine_sources(observed, mixing.kernels, mixing.weights,
                                    model, preset, refinement_iterations, ridge_rel)

    with _stage("reconstruction"):
        masks = wiener_masks(refinement.kernels, refinement.weights,
                             refinement.model.spectrogram())
        spectrograms = reconstruct(mixture_spec, masks)
        sources = []
        for spec in spectrograms:
            clip = istft(spec)
            sources.append(AudioClip(clip.samples[:, : mixture.n_samples],
                                     mixture.sample_rate))

    diagnostics = {
        "preset": preset.name,
        "prior_provenance": priors.provenance,
        "grid_azimuths": grid.azimuths.tolist(),
        "mixing_cost": list(mixing.cost_history),
        "refinement_cost": list(refinement.cost_history),
        "spatial_weights": refinement.weights.tolist(),
        "riccati_fallbacks": {
            "mixing": mixing.riccati_fallbacks,
            "refinement": refinement.riccati_fallbacks,
        },
    }
    return SeparationResult(sources, spectrograms, masks, mixing, refinement,
                            diagnostics)
