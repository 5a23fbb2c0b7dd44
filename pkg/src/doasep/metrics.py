"""Separation quality metrics in the classic projection-based framework.

An estimate is split against the reference set by least-squares projection
onto spans of delayed references (512 taps by default):

    s_target = projection onto delays of the matching reference
    e_interf = projection onto delays of all references, minus s_target
    e_artif  = estimate minus the full projection

SDR/SIR/SAR are energy ratios of those parts in decibels.  Estimates are
scored per channel against the same-channel references and averaged per
source; no permutation search is performed, estimate order must match
reference order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, toeplitz

from .errors import DataError, NumericError
from .signal import AudioClip

__all__ = ["BssScores", "MetricSummary", "bss_eval", "summarize"]

_RIDGE_REL = 1e-12
_DEPENDENCE_TOL = 1e-8


@dataclass(frozen=True)
class BssScores:
    """Channel-averaged SDR/SIR/SAR per source, with the per-channel detail.

    ``sdr``/``sir``/``sar`` are ``(S,)``; ``per_channel`` is ``(S, M, 3)``
    in the order SDR, SIR, SAR.
    """

    sdr: np.ndarray
    sir: np.ndarray
    sar: np.ndarray
    per_channel: np.ndarray

    @property
    def n_sources(self) -> int:
        return self.sdr.shape[0]

    @property
    def n_channels(self) -> int:
        return self.per_channel.shape[1]


@dataclass(frozen=True)
class MetricSummary:
    """Quartiles of each metric across several scored scenes.

    Each field is ``(S, 3)``: lower quartile, median, upper quartile.
    """

    sdr: np.ndarray
    sir: np.ndarray
    sar: np.ndarray


def _correlate_all(signals: np.ndarray, n_lags: int) -> np.ndarray:
    """Cross-correlations rho[i, l, d] = sum_n s_i[n] s_l[n + d].

    Returned for d in [-(n_lags - 1), n_lags - 1], stored with the zero lag
    at index ``n_lags - 1``.
    """
    n = signals.shape[1]
    n_fft = 1 << int(np.ceil(np.log2(n + n_lags)))
    spectra = np.fft.rfft(signals, n_fft)
    cross = np.fft.irfft(np.conj(spectra[:, None]) * spectra[None, :], n_fft)
    negative = cross[:, :, -(n_lags - 1):] if n_lags > 1 else cross[:, :, :0]
    return np.concatenate([negative, cross[:, :, :n_lags]], axis=2)


def _check_dependence(rho: np.ndarray, n_lags: int) -> None:
    """Reject reference pairs that are delayed copies within the filter span."""
    n_refs = rho.shape[0]
    energies = rho[np.arange(n_refs), np.arange(n_refs), n_lags - 1]
    if np.any(energies <= 0.0):
        silent = int(np.argmax(energies <= 0.0))
        raise NumericError(f"reference source {silent} is silent")
    for i in range(n_refs):
        for l in range(i + 1, n_refs):
            peak = np.max(np.abs(rho[i, l])) / np.sqrt(energies[i] * energies[l])
            if peak >= 1.0 - _DEPENDENCE_TOL:
                raise NumericError(
                    f"reference sources {i} and {l} are linearly dependent"
                    " within the distortion filter length"
                )


def _delay_span_gram(rho: np.ndarray, n_lags: int) -> np.ndarray:
    """Gram matrix of all delayed references, (S * n_lags) square."""
    n_refs = rho.shape[0]
    gram = np.empty((n_refs * n_lags, n_refs * n_lags))
    zero = n_lags - 1
    for i in range(n_refs):
        for l in range(n_refs):
            # Block (a, b) = rho[i, l, a - b]; column a - b >= 0, row b - a >= 0.
            block = toeplitz(rho[i, l, zero:], rho[l, i, zero:])
            gram[i * n_lags:(i + 1) * n_lags, l * n_lags:(l + 1) * n_lags] = block
    return gram


def _filtered_sum(refs: np.ndarray, coeffs: np.ndarray, out_len: int) -> np.ndarray:
    """Apply per-reference FIR coefficient blocks and sum the results."""
    n_refs, n_lags = refs.shape[0], coeffs.shape[0] // refs.shape[0]
    out = np.zeros(out_len)
    for i in range(n_refs):
        fir = coeffs[i * n_lags:(i + 1) * n_lags]
        out += np.convolve(refs[i], fir)[:out_len]
    return out


def _db_ratio(signal_energy: float, error_energy: float) -> float:
    if error_energy <= 0.0:
        return np.inf if signal_energy > 0.0 else 0.0
    if signal_energy <= 0.0:
        return -np.inf
    return 10.0 * np.log10(signal_energy / error_energy)


def _score_channel(estimates: np.ndarray, refs: np.ndarray,
                   filter_len: int) -> np.ndarray:
    """Score every estimate of one channel; returns (S, 3) dB values."""
    n_refs, n_samples = refs.shape
    out_len = n_samples + filter_len - 1
    rho = _correlate_all(refs, filter_len)
    _check_dependence(rho, filter_len)

    gram = _delay_span_gram(rho, filter_len)
    ridge = _RIDGE_REL * float(np.max(np.diag(gram)))
    gram[np.diag_indices_from(gram)] += ridge
    try:
        factor = cho_factor(gram)
    except np.linalg.LinAlgError as exc:
        raise NumericError("reference delay span is numerically singular; are"
                           " two sources nearly dependent?") from exc

    n_fft = 1 << int(np.ceil(np.log2(n_samples + filter_len)))
    ref_spectra = np.fft.rfft(refs, n_fft)
    scores = np.empty((n_refs, 3))
    for j, estimate in enumerate(estimates):
        # d[i * L + a] = sum_n r_i[n - a] e[n] = rho_{r_i, e}[a], a in [0, L).
        est_spec = np.fft.rfft(estimate, n_fft)
        cross = np.fft.irfft(np.conj(ref_spectra) * est_spec, n_fft)[:, :filter_len]
        d_full = cross.reshape(-1)

        coeffs_full = cho_solve(factor, d_full)
        projection = _filtered_sum(refs, coeffs_full, out_len)

        own_block = gram[j * filter_len:(j + 1) * filter_len,
                         j * filter_len:(j + 1) * filter_len]
        coeffs_own = np.linalg.solve(own_block, cross[j])
        target = np.convolve(refs[j], coeffs_own)[:out_len]

        padded = np.concatenate([estimate, np.zeros(filter_len - 1)])
        interference = projection - target
        artifacts = padded - projection

        e_target = float(target @ target)
        e_interf = float(interference @ interference)
        e_artif = float(artifacts @ artifacts)
        scores[j, 0] = _db_ratio(e_target, e_interf + e_artif)
        scores[j, 1] = _db_ratio(e_target, e_interf)
        scores[j, 2] = _db_ratio(e_target + e_interf, e_artif)
    return scores


def _as_sample_matrix(clips, label: str) -> np.ndarray:
    if isinstance(clips, np.ndarray):
        stacked = np.asarray(clips, dtype=np.float64)
        if stacked.ndim == 2:
            stacked = stacked[:, None, :]
    else:
        rates = {c.sample_rate for c in clips if isinstance(c, AudioClip)}
        if len(rates) > 1:
            raise DataError(f"{label} clips disagree in sample rate: {sorted(rates)}")
        arrays = [c.samples if isinstance(c, AudioClip) else np.atleast_2d(c)
                  for c in clips]
        shapes = {a.shape for a in arrays}
        if len(shapes) > 1:
            raise DataError(f"{label} clips disagree in shape: {sorted(shapes)}")
        stacked = np.asarray(arrays, dtype=np.float64)
    if stacked.ndim != 3:
        raise DataError(f"{label} must be (S, M, N), got shape {stacked.shape}")
    return stacked


def bss_eval(estimates, references, filter_len: int = 512) -> BssScores:
    """Score separated estimates against reference images.

    Accepts lists of same-shape ``AudioClip`` (or arrays) or ``(S, M, N)``
    tensors.  Estimate ``s`` is compared with reference ``s``; each channel
    is scored against that channel of every reference and the three ratios
    are averaged over channels.
    """
    est = _as_sample_matrix(estimates, "estimates")
    ref = _as_sample_matrix(references, "references")
    if est.shape != ref.shape:
        raise DataError(
            f"estimates {est.shape} and references {ref.shape} do not match"
        )
    n_sources, n_channels, n_samples = est.shape
    if n_sources < 1:
        raise DataError("need at least one source to evaluate")
    if filter_len < 1:
        raise DataError(f"distortion filter length must be >= 1, got {filter_len}")
    if n_samples < filter_len:
        raise DataError(
            f"signals ({n_samples} samples) are shorter than the distortion"
            f" filter ({filter_len} taps)"
        )

    per_channel = np.empty((n_sources, n_channels, 3))
    for m in range(n_channels):
        per_channel[:, m, :] = _score_channel(est[:, m, :], ref[:, m, :], filter_len)
    averaged = per_channel.mean(axis=1)
    return BssScores(averaged[:, 0].copy(), averaged[:, 1].copy(),
                     averaged[:, 2].copy(), per_channel)


def summarize(scores: list[BssScores]) -> MetricSummary:
    """Quartiles (25/50/75) of each metric per source across scenes."""
    if not scores:
        raise DataError("no scores to summarize")
    n_sources = {s.n_sources for s in scores}
    if len(n_sources) > 1:
        raise DataError(f"scores disagree on source count: {sorted(n_sources)}")
    quartiles = (25.0, 50.0, 75.0)
    stacked = {
        "sdr": np.stack([s.sdr for s in scores]),
        "sir": np.stack([s.sir for s in scores]),
        "sar": np.stack([s.sar for s in scores]),
    }
    out = {
        name: np.percentile(values, quartiles, axis=0).T
        for name, values in stacked.items()
    }
    return MetricSummary(out["sdr"], out["sir"], out["sar"])
