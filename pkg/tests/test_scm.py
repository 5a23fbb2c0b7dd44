"""Tests for spatial covariance construction and the matrix helpers."""

import numpy as np
import pytest

from doasep.errors import DataError, NumericError
from doasep.scm import (compose_mixing_filter, compute_scm, hermitize,
                        regularized_inverse, trace_product)
from doasep.signal import ComplexSpectrogram


def _random_spec(rng, m=2, f=5, t=7, fft_size=8):
    bins = rng.standard_normal((m, f, t)) + 1j * rng.standard_normal((m, f, t))
    return ComplexSpectrogram(bins, fft_size, fft_size // 2, 8000.0)


def test_scm_matches_outer_product_loop():
    rng = np.random.default_rng(0)
    spec = _random_spec(rng)
    scm = compute_scm(spec)
    f, t = 3, 4
    x = spec.bins[:, f, t]
    np.testing.assert_allclose(scm[f, t], np.outer(x, np.conj(x)), rtol=1e-14)


def test_scm_is_hermitian_psd():
    rng = np.random.default_rng(1)
    scm = compute_scm(_random_spec(rng, m=3))
    herm_err = np.abs(scm - np.conj(np.swapaxes(scm, -1, -2))).max()
    assert herm_err <= 1e-12 * np.abs(scm).max()
    eigs = np.linalg.eigvalsh(scm.reshape(-1, 3, 3))
    traces = np.einsum("kii->k", scm.reshape(-1, 3, 3)).real
    assert eigs.min() >= -1e-10 * traces.max()


def test_scm_rank_one():
    rng = np.random.default_rng(2)
    scm = compute_scm(_random_spec(rng, m=3))
    svals = np.linalg.svd(scm.reshape(-1, 3, 3), compute_uv=False)
    # every per-bin matrix is an outer product, so second singular value ~ 0
    assert svals[:, 1].max() <= 1e-12 * svals[:, 0].max()


def test_scm_rejects_nonfinite():
    rng = np.random.default_rng(3)
    spec = _random_spec(rng)
    spec.bins[0, 0, 0] = np.nan
    with pytest.raises(NumericError):
        compute_scm(spec)


def test_hermitize_is_idempotent_projection():
    rng = np.random.default_rng(4)
    a = rng.standard_normal((4, 3, 3)) + 1j * rng.standard_normal((4, 3, 3))
    h = hermitize(a)
    np.testing.assert_allclose(h, np.conj(np.swapaxes(h, -1, -2)), atol=1e-15)
    np.testing.assert_allclose(hermitize(h), h, atol=1e-15)


def test_regularized_inverse_recovers_identity():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((6, 3, 3)) + 1j * rng.standard_normal((6, 3, 3))
    mats = hermitize(a @ np.conj(np.swapaxes(a, -1, -2)) + 3.0 * np.eye(3))
    inv = regularized_inverse(mats, ridge_rel=1e-12)
    eye = np.broadcast_to(np.eye(3), mats.shape)
    np.testing.assert_allclose(inv @ mats, eye, atol=1e-9)


def test_regularized_inverse_handles_singular():
    mats = np.zeros((2, 2, 2), dtype=complex)
    mats[:, 0, 0] = 1.0  # rank one, plain inversion would blow up
    inv = regularized_inverse(mats, ridge_rel=1e-7)
    assert np.all(np.isfinite(inv))
    herm_err = np.abs(inv - np.conj(np.swapaxes(inv, -1, -2))).max()
    assert herm_err <= 1e-12 * np.abs(inv).max()


def test_trace_product_matches_numpy_trace():
    rng = np.random.default_rng(6)
    a = rng.standard_normal((5, 3, 3)) + 1j * rng.standard_normal((5, 3, 3))
    b = rng.standard_normal((5, 3, 3)) + 1j * rng.standard_normal((5, 3, 3))
    got = trace_product(a, b)
    want = np.trace(a @ b, axis1=-2, axis2=-1)
    np.testing.assert_allclose(got, want, rtol=1e-13)


def test_compose_mixing_filter_shapes_and_linearity():
    rng = np.random.default_rng(7)
    f, o, m, s = 4, 3, 2, 2
    kernels = hermitize(rng.standard_normal((f, o, m, m))
                        + 1j * rng.standard_normal((f, o, m, m)))
    weights = rng.random((s, o))
    mix = compose_mixing_filter(kernels, weights)
    assert mix.shape == (f, s, m, m)
    want = sum(weights[1, o_] * kernels[:, o_] for o_ in range(o))
    np.testing.assert_allclose(mix[:, 1], want, rtol=1e-13)


def test_compose_mixing_filter_rejects_negative_weights():
    kernels = np.zeros((2, 2, 2, 2), dtype=complex)
    with pytest.raises(DataError):
        compose_mixing_filter(kernels, np.array([[0.5, -0.1]]))
