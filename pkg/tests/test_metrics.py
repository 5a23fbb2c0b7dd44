import numpy as np
import pytest

from doasep.errors import DataError, NumericError
from doasep.metrics import BssScores, bss_eval, summarize
from doasep.signal import AudioClip


def white_refs(seed, n_sources=2, n_channels=1, n_samples=6000, zero_tail=0):
    rng = np.random.default_rng(seed)
    refs = rng.standard_normal((n_sources, n_channels, n_samples))
    if zero_tail:
        # leave head room so delayed copies stay inside the scoring window
        refs[:, :, -zero_tail:] = 0.0
    return refs


def test_identity_estimate_scores_high():
    refs = white_refs(0)
    scores = bss_eval(refs, refs)
    assert np.all(scores.sdr >= 100.0)
    assert np.all(scores.sar >= 100.0)


def test_other_source_estimate_has_nonpositive_sir():
    refs = white_refs(1)
    scores = bss_eval(refs[::-1], refs)
    assert np.all(scores.sir <= 0.0)


def test_scores_are_scale_invariant():
    refs = white_refs(3, n_samples=4000)
    rng = np.random.default_rng(30)
    noise = rng.standard_normal(refs.shape) * 0.05
    est = np.stack([
        refs[0] + 0.3 * refs[1] + noise[0],
        refs[1] + 0.2 * refs[0] + noise[1],
    ])
    plain = bss_eval(est, refs, filter_len=64)
    scaled = bss_eval(est * 1000.0, refs, filter_len=64)
    for name in ("sdr", "sir", "sar"):
        np.testing.assert_allclose(getattr(scaled, name), getattr(plain, name),
                                   atol=1e-6)


def test_delayed_copy_is_recovered():
    refs = white_refs(4, zero_tail=80)
    est = np.zeros_like(refs)
    est[:, :, 10:] = refs[:, :, :-10]
    assert np.all(bss_eval(est, refs).sdr >= 100.0)


def test_filtered_copy_is_recovered():
    refs = white_refs(5, zero_tail=80)
    fir = np.array([0.5, -0.2, 0.1, 0.3])
    est = np.stack([[np.convolve(refs[i, 0], fir)[: refs.shape[2]]]
                    for i in range(2)])
    assert np.all(bss_eval(est, refs).sdr >= 100.0)


def test_in_span_estimate_has_no_artifacts():
    # an estimate built from short filters of both references leaks
    # interference but no artifacts
    refs = white_refs(6, zero_tail=80)
    mixed = (np.convolve(refs[0, 0], [0.5, -0.2, 0.1, 0.3])[: refs.shape[2]]
             + np.convolve(refs[1, 0], [0.3, 0.1])[: refs.shape[2]])
    scores = bss_eval(np.stack([[mixed], [refs[1, 0]]]), refs)
    assert scores.sar[0] >= 100.0
    assert scores.sir[0] < 20.0


def test_sdr_tracks_snr_for_additive_noise():
    rng = np.random.default_rng(7)
    sig = rng.standard_normal((2, 1, 4000))
    noise = rng.standard_normal((2, 1, 4000))
    scale = np.sqrt((sig**2).sum(axis=-1) / (noise**2).sum(axis=-1))
    noise *= (scale * 10.0 ** (-20.0 / 20.0))[:, :, None]
    scores = bss_eval(sig + noise, sig, filter_len=32)
    np.testing.assert_allclose(scores.sdr, 20.0, atol=0.5)


def test_channels_are_averaged():
    refs = white_refs(8, n_channels=2, n_samples=3000)
    rng = np.random.default_rng(80)
    est = refs + 0.1 * rng.standard_normal(refs.shape)
    scores = bss_eval(est, refs, filter_len=32)
    assert scores.per_channel.shape == (2, 2, 3)
    np.testing.assert_allclose(scores.sdr, scores.per_channel[:, :, 0].mean(axis=1))
    assert scores.n_sources == 2
    assert scores.n_channels == 2


def test_clip_lists_match_arrays():
    refs = white_refs(9, n_samples=2000)
    rng = np.random.default_rng(90)
    est = refs + 0.2 * rng.standard_normal(refs.shape)
    from_arrays = bss_eval(est, refs, filter_len=32)
    from_clips = bss_eval([AudioClip(e, 8000.0) for e in est],
                          [AudioClip(r, 8000.0) for r in refs], filter_len=32)
    np.testing.assert_array_equal(from_clips.per_channel, from_arrays.per_channel)


def test_dependent_references_are_rejected():
    refs = white_refs(10, n_sources=1, zero_tail=80)
    delayed = np.zeros_like(refs[0])
    delayed[:, 5:] = 0.5 * refs[0, :, :-5]
    both = np.stack([refs[0], delayed])
    with pytest.raises(NumericError, match="sources 0 and 1 are linearly dependent"):
        bss_eval(both, both)


def test_silent_reference_is_rejected():
    refs = white_refs(11)
    refs[1] = 0.0
    with pytest.raises(NumericError, match="source 1 is silent"):
        bss_eval(refs, refs)


def test_shape_mismatch_is_rejected():
    refs = white_refs(12)
    with pytest.raises(DataError, match="do not match"):
        bss_eval(refs[:, :, :-1], refs)


def test_short_signals_are_rejected():
    refs = white_refs(13, n_samples=100)
    with pytest.raises(DataError, match="shorter than the distortion filter"):
        bss_eval(refs, refs, filter_len=512)


def test_mismatched_clip_rates_are_rejected():
    refs = white_refs(14, n_samples=2000)
    clips = [AudioClip(refs[0], 8000.0), AudioClip(refs[1], 16000.0)]
    with pytest.raises(DataError, match="sample rate"):
        bss_eval(clips, clips, filter_len=32)


# ---------------------------------------------------------------------------
# summaries


def fake_scores(values):
    arr = np.atleast_1d(np.asarray(values, dtype=np.float64))
    return BssScores(arr, arr + 1.0, arr + 2.0, np.zeros((arr.size, 1, 3)))


def test_summarize_matches_percentile_oracle():
    rng = np.random.default_rng(15)
    draws = rng.uniform(-5.0, 25.0, (9, 2))
    summary = summarize([fake_scores(row) for row in draws])
    for s in range(2):
        want = np.percentile(draws[:, s], (25.0, 50.0, 75.0))
        np.testing.assert_allclose(summary.sdr[s], want)
        np.testing.assert_allclose(summary.sir[s], want + 1.0)
        np.testing.assert_allclose(summary.sar[s], want + 2.0)


def test_summarize_single_scene():
    summary = summarize([fake_scores([4.0])])
    np.testing.assert_array_equal(summary.sdr[0], [4.0, 4.0, 4.0])


def test_summarize_median_of_two():
    summary = summarize([fake_scores([0.0]), fake_scores([10.0])])
    assert summary.sdr[0, 1] == pytest.approx(5.0)


def test_summarize_rejects_empty_and_mismatched():
    with pytest.raises(DataError, match="no scores"):
        summarize([])
    with pytest.raises(DataError, match="source count"):
        summarize([fake_scores([1.0]), fake_scores([1.0, 2.0])])
