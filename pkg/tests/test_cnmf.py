import numpy as np
import pytest

from doasep.cnmf import (
    DEFAULT_RIDGE,
    FactorizationState,
    VariantPreset,
    estimate_mixing_filter,
    is_cost,
    monitor_delta,
    predict_scm,
    refine_sources,
    solve_riccati,
    update_bases,
    update_gains,
)
from doasep.errors import DataError, NumericError
from doasep.priors import SpectralModel


def random_hpd(rng, m, floor=0.1):
    a = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    return a @ a.conj().T + floor * np.eye(m)


def hpd_sqrt(a):
    """Principal square root of a Hermitian PD matrix via eigendecomposition."""
    w, v = np.linalg.eigh(a)
    return (v * np.sqrt(w)) @ v.conj().T


def riccati_closed_form(c, d):
    """Textbook solution of W C W = D: C^-1/2 (C^1/2 D C^1/2)^1/2 C^-1/2."""
    root = hpd_sqrt(c)
    inv_root = np.linalg.inv(root)
    return inv_root @ hpd_sqrt(root @ d @ root) @ inv_root


def random_instance(rng, f_bins=10, frames=8, n_mics=2, n_dirs=4, n_sources=2,
                    n_comps=3):
    kernels = np.stack([
        np.stack([random_hpd(rng, n_mics, 0.3) for _ in range(n_dirs)])
        for _ in range(f_bins)
    ])
    kernels /= np.trace(kernels, axis1=-2, axis2=-1)[..., None, None].real
    weights = rng.uniform(0.2, 1.0, (n_sources, n_dirs))
    model = SpectralModel(rng.uniform(0.2, 1.0, (f_bins, n_comps, n_sources)),
                          rng.uniform(0.2, 1.0, (n_comps, frames, n_sources)))
    return kernels, weights, model


def random_observed(rng, f_bins, frames, n_mics):
    """Rank-1 SCM tensor of a random multichannel spectrogram."""
    spec = (rng.standard_normal((n_mics, f_bins, frames))
            + 1j * rng.standard_normal((n_mics, f_bins, frames)))
    return np.einsum("ift,jft->ftij", spec, spec.conj())


# ---------------------------------------------------------------------------
# ridge and divergence


def test_monitor_delta_matches_trace_formula():
    rng = np.random.default_rng(0)
    observed = random_observed(rng, 6, 5, 3)
    trace = np.einsum("ftii->ft", observed).real / 3
    want = 1e-5 * 0.5 * (trace + trace.mean())
    np.testing.assert_allclose(monitor_delta(observed, 1e-5), want, rtol=1e-12)


def test_monitor_delta_floors_silent_tensor():
    observed = np.zeros((4, 3, 2, 2), dtype=complex)
    np.testing.assert_array_equal(monitor_delta(observed, 1e-5),
                                  np.full((4, 3), 1e-5))


def test_is_cost_zero_on_identical_tensors():
    # the ridged rank-1 matrices have condition ~ 1/ridge_rel, so the solve
    # leaves rounding noise of roughly eps / ridge_rel per bin
    rng = np.random.default_rng(1)
    observed = random_observed(rng, 5, 4, 2)
    assert is_cost(observed, observed.copy()) == pytest.approx(0.0, abs=1e-7)


def test_is_cost_positive_on_mismatch():
    rng = np.random.default_rng(2)
    observed = random_observed(rng, 5, 4, 2)
    predicted = random_observed(rng, 5, 4, 2)
    assert is_cost(observed, predicted) > 0.0


def test_is_cost_scalar_reduction():
    # for M = 1 the divergence is x/p - log(x/p) - 1 on the ridged values
    rng = np.random.default_rng(3)
    x = rng.uniform(0.5, 2.0, (6, 4))
    p = rng.uniform(0.5, 2.0, (6, 4))
    delta = 1e-7 * 0.5 * (x + x.mean())
    xr, pr = x + delta, p + delta
    want = np.sum(xr / pr - np.log(xr / pr) - 1.0)
    got = is_cost(x[:, :, None, None].astype(complex),
                  p[:, :, None, None].astype(complex))
    assert got == pytest.approx(want, rel=1e-12)


def test_is_cost_rejects_shape_mismatch():
    a = np.eye(2, dtype=complex)[None, None]
    b = np.eye(3, dtype=complex)[None, None]
    with pytest.raises(DataError):
        is_cost(a, b)


def test_predict_scm_matches_loop():
    rng = np.random.default_rng(4)
    kernels, weights, model = random_instance(rng)
    spectrogram = model.spectrogram()
    got = predict_scm(kernels, weights, spectrogram)
    f_bins, frames, n_sources = spectrogram.shape
    want = np.zeros_like(got)
    for f in range(f_bins):
        for t in range(frames):
            for s in range(n_sources):
                mixing = sum(weights[s, o] * kernels[f, o]
                             for o in range(kernels.shape[1]))
                want[f, t] += mixing * spectrogram[f, t, s]
    np.testing.assert_allclose(got, want, atol=1e-12)


# ---------------------------------------------------------------------------
# Riccati solver


def test_riccati_matches_closed_form():
    rng = np.random.default_rng(11)
    for _ in range(30):
        m = int(rng.integers(1, 5))
        c = random_hpd(rng, m)
        d = random_hpd(rng, m)
        got = solve_riccati(c, d)
        want = riccati_closed_form(c, d)
        np.testing.assert_allclose(got, want, atol=1e-10 * np.linalg.norm(want))


def test_riccati_identity_c_gives_matrix_sqrt():
    rng = np.random.default_rng(12)
    d = random_hpd(rng, 3)
    got = solve_riccati(np.eye(3, dtype=complex), d)
    np.testing.assert_allclose(got, hpd_sqrt(d), atol=1e-12)


def test_riccati_scalar_case():
    got = solve_riccati(np.array([[2.0 + 0j]]), np.array([[8.0 + 0j]]))
    assert got[0, 0] == pytest.approx(2.0)


def test_riccati_accepts_stacks():
    rng = np.random.default_rng(13)
    c = np.stack([random_hpd(rng, 2) for _ in range(5)])
    d = np.stack([random_hpd(rng, 2) for _ in range(5)])
    got = solve_riccati(c, d)
    assert got.shape == (5, 2, 2)
    for k in range(5):
        np.testing.assert_allclose(got[k], solve_riccati(c[k], d[k]), atol=1e-12)


def test_riccati_solution_is_hermitian():
    rng = np.random.default_rng(14)
    w = solve_riccati(random_hpd(rng, 4), random_hpd(rng, 4))
    np.testing.assert_allclose(w, w.conj().T, atol=1e-12)


def test_riccati_rejects_shape_mismatch():
    with pytest.raises(DataError):
        solve_riccati(np.eye(2, dtype=complex), np.eye(3, dtype=complex))


def test_riccati_flags_defective_problem():
    # C = 0 makes the block pencil nilpotent; there is no valid solution
    rng = np.random.default_rng(15)
    with pytest.raises(NumericError):
        solve_riccati(np.zeros((2, 2), dtype=complex), random_hpd(rng, 2))


# ---------------------------------------------------------------------------
# update rules


def test_updates_fix_exact_model():
    # when the observation is exactly the model SCM every family stays put
    rng = np.random.default_rng(9)
    kernels, weights, model = random_instance(rng)
    observed = predict_scm(kernels, weights, model.spectrogram())
    res = refine_sources(observed, kernels, weights, model,
                         VariantPreset.named("free"), iterations=1)
    np.testing.assert_allclose(res.weights, weights, rtol=1e-12)
    np.testing.assert_allclose(res.kernels, kernels, atol=1e-12)
    np.testing.assert_allclose(res.model.bases, model.bases, rtol=1e-12)
    np.testing.assert_allclose(res.model.gains, model.gains, rtol=1e-12)
    assert res.riccati_fallbacks == 0


def test_interleaved_updates_do_not_increase_cost():
    rng = np.random.default_rng(21)
    kernels, weights, model = random_instance(rng, f_bins=8, frames=6)
    observed = random_observed(rng, 8, 6, 2)
    est = estimate_mixing_filter(observed, model.spectrogram(), kernels,
                                 iterations=30)
    res = refine_sources(observed, est.kernels, est.weights, model,
                         VariantPreset.named("free"), iterations=30)
    for history in (est.cost_history, res.cost_history):
        history = np.asarray(history)
        slack = 1e-9 * np.abs(history[:-1])
        assert np.all(np.diff(history) <= slack)


def test_estimate_records_initial_cost():
    rng = np.random.default_rng(22)
    kernels, weights, model = random_instance(rng)
    observed = random_observed(rng, 10, 8, 2)
    est = estimate_mixing_filter(observed, model.spectrogram(), kernels,
                                 iterations=7)
    assert len(est.cost_history) == 8
    assert est.weights.shape == weights.shape
    # weights stay nonnegative under the multiplicative rule
    assert np.all(est.weights >= 0)


def test_scalar_reduction_matches_is_nmf():
    # with one channel and a unit mixing filter the refinement loop is plain
    # IS-NMF on the ridged power spectrogram
    def scalar_is_nmf(power, bases, gains, iterations, ridge_rel):
        delta = ridge_rel * 0.5 * (power + power.mean())
        delta = np.where(delta > 0.0, delta, ridge_rel)
        xr = power + delta
        b, g = bases.copy(), gains.copy()
        for _ in range(iterations):
            yr = b @ g + delta
            b = b * np.sqrt(((xr / yr**2) @ g.T) / ((1.0 / yr) @ g.T))
            yr = b @ g + delta
            g = g * np.sqrt((b.T @ (xr / yr**2)) / (b.T @ (1.0 / yr)))
        return b, g

    rng = np.random.default_rng(5)
    power = rng.uniform(0.01, 4.0, (24, 18))
    b0 = rng.uniform(0.5, 1.5, (24, 4))
    g0 = rng.uniform(0.5, 1.5, (4, 18))

    model = SpectralModel(b0[:, :, None].copy(), g0[:, :, None].copy())
    res = refine_sources(power[:, :, None, None].astype(complex),
                         np.ones((24, 1, 1, 1), dtype=complex), np.ones((1, 1)),
                         model,
                         VariantPreset.named("free", refine_free={"bases", "gains"}),
                         iterations=20)
    b_want, g_want = scalar_is_nmf(power, b0, g0, 20, DEFAULT_RIDGE)
    np.testing.assert_allclose(res.model.bases[:, :, 0], b_want, rtol=1e-10)
    np.testing.assert_allclose(res.model.gains[:, :, 0], g_want, rtol=1e-10)


def test_refinement_respects_frozen_families():
    rng = np.random.default_rng(31)
    kernels, weights, model = random_instance(rng)
    observed = random_observed(rng, 10, 8, 2)
    res = refine_sources(observed, kernels, weights, model,
                         VariantPreset.named("fix"), iterations=3)
    # fix frees weights, kernels, and gains but keeps the spectral patterns
    np.testing.assert_array_equal(res.model.bases, model.bases)
    assert not np.array_equal(res.model.gains, model.gains)
    assert not np.array_equal(res.weights, weights)


def test_refinement_gains_only():
    rng = np.random.default_rng(32)
    kernels, weights, model = random_instance(rng)
    observed = random_observed(rng, 10, 8, 2)
    res = refine_sources(observed, kernels, weights, model,
                         VariantPreset.named("free", refine_free={"gains"}),
                         iterations=3)
    np.testing.assert_array_equal(res.kernels, kernels)
    np.testing.assert_array_equal(res.weights, weights)
    np.testing.assert_array_equal(res.model.bases, model.bases)
    assert not np.array_equal(res.model.gains, model.gains)


def test_refinement_does_not_mutate_inputs():
    rng = np.random.default_rng(33)
    kernels, weights, model = random_instance(rng)
    observed = random_observed(rng, 10, 8, 2)
    kernels_before = kernels.copy()
    bases_before = model.bases.copy()
    refine_sources(observed, kernels, weights, model,
                   VariantPreset.named("free"), iterations=2)
    np.testing.assert_array_equal(kernels, kernels_before)
    np.testing.assert_array_equal(model.bases, bases_before)


# ---------------------------------------------------------------------------
# presets and error paths


def test_preset_table():
    fix = VariantPreset.named("fix")
    assert fix.prior_source == "file"
    assert fix.refine_free == frozenset({"weights", "kernels", "gains"})
    free = VariantPreset.named("free")
    assert free.prior_source == "file"
    assert free.refine_free == frozenset({"weights", "kernels", "bases", "gains"})
    assert VariantPreset.named("oracle").prior_source == "oracle"
    assert VariantPreset.named("rand").prior_source == "random"


def test_preset_override_refine_free():
    preset = VariantPreset.named("fix", refine_free={"gains"})
    assert preset.refine_free == frozenset({"gains"})


def test_preset_rejects_unknown_name():
    with pytest.raises(DataError, match="unknown preset"):
        VariantPreset.named("frozen")


def test_preset_rejects_unknown_family():
    with pytest.raises(DataError, match="unknown free parameter"):
        VariantPreset.named("free", refine_free={"phases"})


def test_state_requires_priors_or_model():
    observed = np.eye(2, dtype=complex)[None, None] * np.ones((3, 4, 1, 1))
    with pytest.raises(DataError, match="prior spectrogram or a spectral model"):
        FactorizationState(observed, np.ones((3, 1, 2, 2), dtype=complex),
                           np.ones((1, 1)))


def test_state_rejects_bad_observed_shape():
    with pytest.raises(DataError, match=r"\(F, T, M, M\)"):
        FactorizationState(np.zeros((3, 4, 2), dtype=complex),
                           np.ones((3, 1, 2, 2), dtype=complex),
                           np.ones((1, 1)), priors=np.ones((3, 4, 1)))


def test_base_and_gain_updates_need_model():
    rng = np.random.default_rng(41)
    observed = random_observed(rng, 4, 3, 2)
    kernels = np.stack([np.stack([random_hpd(rng, 2)]) for _ in range(4)])
    state = FactorizationState(observed, kernels, np.ones((1, 1)),
                               priors=np.ones((4, 3, 1)))
    with pytest.raises(DataError, match="no spectral model"):
        update_bases(state)
    with pytest.raises(DataError, match="no spectral model"):
        update_gains(state)


def test_estimate_rejects_off_grid_priors():
    rng = np.random.default_rng(42)
    observed = random_observed(rng, 4, 3, 2)
    kernels = np.stack([np.stack([random_hpd(rng, 2)]) for _ in range(4)])
    with pytest.raises(DataError, match="does not sit on the observed"):
        estimate_mixing_filter(observed, np.ones((5, 3, 1)), kernels, iterations=1)


def test_estimate_rejects_negative_priors():
    rng = np.random.default_rng(43)
    observed = random_observed(rng, 4, 3, 2)
    kernels = np.stack([np.stack([random_hpd(rng, 2)]) for _ in range(4)])
    priors = np.ones((4, 3, 1))
    priors[0, 0, 0] = -1.0
    with pytest.raises(DataError, match="nonnegative"):
        estimate_mixing_filter(observed, priors, kernels, iterations=1)


def test_refine_rejects_source_count_mismatch():
    rng = np.random.default_rng(44)
    kernels, weights, model = random_instance(rng, n_sources=2)
    observed = random_observed(rng, 10, 8, 2)
    with pytest.raises(DataError, match="sources"):
        refine_sources(observed, kernels, weights[:1], model,
                       VariantPreset.named("free"), iterations=1)
