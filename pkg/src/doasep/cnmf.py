"""Direction-constrained complex NMF of observed spatial covariances.

The model explains the per-bin observed SCM as a sum over sources of a
mixing filter times a nonnegative source spectrogram,

    X_ft  ~=  sum_s H_fs yhat_fts,      H_fs = sum_o W_fo z_so,

where the W_fo are DoA kernels on a direction grid and z_so nonnegative
spatial weights.  Estimation runs in two steps: first the spatial side
(z and W) against a fixed prior spectrogram, then the spectral side, where
the prior's HALS factors b_fks / g_kts are refined (optionally together
with the spatial side) under the learned mixing filter.

All updates are multiplicative majorization-minimization rules for the
multichannel Itakura-Saito divergence; the DoA kernel update solves the
algebraic Riccati equation W C W = D per bin and direction.

Numerical form (this matters for exactness): rank-1 observed SCMs are
singular, so a per-bin ridge

    delta_ft = ridge_rel * (trace(X_ft) + mean_ft trace(X_ft)) / (2 M)

is added once to BOTH the observed and the modelled SCM.  Every inverse and
every cost evaluation below uses these shifted tensors.  Because the shift
is constant across iterations, the updates are exact MM steps for the
shifted divergence and the monitored cost is non-increasing to rounding
precision; evaluating the ridge against the model instead would perturb
each step at the ridge scale.  The mean-trace term keeps the shift from
underflowing on silent bins, where the model can otherwise be singular to
machine precision even after the shift.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError
from .priors import SpectralModel
from .scm import compose_mixing_filter, hermitize

__all__ = [
    "VariantPreset",
    "FactorizationState",
    "MixingEstimate",
    "RefinementResult",
    "predict_scm",
    "is_cost",
    "solve_riccati",
    "update_spatial_weights",
    "update_doa_kernels",
    "update_bases",
    "update_gains",
    "estimate_mixing_filter",
    "refine_sources",
]

DEFAULT_RIDGE = 1e-7
_RICCATI_TOL = 1e-6

_FAMILIES = ("weights", "kernels", "bases", "gains")


@dataclass(frozen=True)
class VariantPreset:
    """Which priors a pipeline variant uses and what refinement may touch.

    * ``fix``    file priors, refinement updates z, W, and gains,
    * ``free``   file priors, refinement also updates the spectral patterns,
    * ``oracle`` like ``free`` but priors come from the true source images,
    * ``rand``   like ``free`` but priors are random draws.

    ``refine_free`` may be overridden to explore stricter readings (for
    instance freeing only the spectral side under a frozen mixing filter).
    The first estimation step always updates exactly z and W.
    """

    name: str
    prior_source: str
    refine_free: frozenset

    def __post_init__(self):
        unknown = self.refine_free - set(_FAMILIES)
        if unknown:
            raise DataError(f"unknown free parameter families {sorted(unknown)}")

    @classmethod
    def named(cls, name: str, refine_free=None) -> "VariantPreset":
        table = {
            "fix": ("file", frozenset({"weights", "kernels", "gains"})),
            "free": ("file", frozenset(_FAMILIES)),
            "oracle": ("oracle", frozenset(_FAMILIES)),
            "rand": ("random", frozenset(_FAMILIES)),
        }
        if name not in table:
            raise DataError(f"unknown preset {name!r}; expected one of {sorted(table)}")
        prior_source, default_free = table[name]
        free = default_free if refine_free is None else frozenset(refine_free)
        return cls(name, prior_source, free)


def predict_scm(kernels: np.ndarray, weights: np.ndarray,
                spectrogram: np.ndarray) -> np.ndarray:
    """Modelled SCM tensor ``sum_s (sum_o W_fo z_so) yhat_fts``, (F, T, M, M)."""
    mixing = compose_mixing_filter(kernels, weights)
    return np.einsum("fsij,fts->ftij", mixing, spectrogram)


def _shift(tensor: np.ndarray, delta: np.ndarray) -> np.ndarray:
    eye = np.eye(tensor.shape[-1], dtype=tensor.dtype)
    return tensor + np.asarray(delta)[..., None, None] * eye


def monitor_delta(observed: np.ndarray, ridge_rel: float = DEFAULT_RIDGE) -> np.ndarray:
    """Constant per-bin ridge shared by the updates and the cost monitor.

    Averages each bin's trace with the tensor-wide mean trace so quiet bins
    keep a shift proportional to the overall signal scale; an all-zero
    tensor falls back to ``ridge_rel`` outright.
    """
    m = observed.shape[-1]
    trace = np.einsum("...ii->...", observed).real / m
    delta = ridge_rel * 0.5 * (trace + trace.mean())
    return np.where(delta > 0.0, delta, ridge_rel)


def is_cost(observed: np.ndarray, predicted: np.ndarray,
            ridge_rel: float = DEFAULT_RIDGE, delta: np.ndarray | None = None) -> float:
    """Multichannel Itakura-Saito divergence between SCM tensors.

    Computes ``sum_ft [ tr(Xr Pr^-1) - log det(Xr Pr^-1) - M ]`` where both
    arguments receive the same per-bin ridge (by default derived from the
    observed tensor's trace, see module docstring).  Nonnegative, zero iff
    the tensors agree after the shift; for M = 1 it reduces to the scalar
    divergence ``x/p - log(x/p) - 1`` on the ridged values.
    """
    observed = np.asarray(observed)
    predicted = np.asarray(predicted)
    if observed.shape != predicted.shape:
        raise DataError(
            f"shape mismatch: observed {observed.shape} vs predicted {predicted.shape}"
        )
    m = observed.shape[-1]
    if delta is None:
        delta = monitor_delta(observed, ridge_rel)
    obs = _shift(observed, delta)
    pred = _shift(predicted, delta)

    ratio_trace = np.einsum("...ii->...", np.linalg.solve(pred, obs)).real
    sign_o, logdet_o = np.linalg.slogdet(obs)
    sign_p, logdet_p = np.linalg.slogdet(pred)
    if np.any(sign_o.real <= 0) or np.any(sign_p.real <= 0):
        raise NumericError("SCM tensors are not positive definite after the ridge")
    total = float(np.sum(ratio_trace + logdet_p - logdet_o - m))
    if not np.isfinite(total):
        raise NumericError("divergence evaluated to a non-finite value")
    return total


def solve_riccati(c: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Solve ``W C W = D`` for Hermitian positive definite ``C`` and ``D``.

    Eigendecomposes the block matrix ``[[0, -C], [-D, 0]]``, keeps the M
    eigenvectors with the smallest (most negative) eigenvalues, splits each
    into its top half J and bottom half I, and returns the Hermitian part of
    ``I J^-1``.  Accepts a single pair or matching stacks.
    """
    c = np.asarray(c, dtype=np.complex128)
    d = np.asarray(d, dtype=np.complex128)
    if c.shape != d.shape or c.shape[-1] != c.shape[-2]:
        raise DataError(f"expected matching square stacks, got {c.shape} and {d.shape}")
    solution, ok = _solve_riccati_batched(c[None, ...] if c.ndim == 2 else c,
                                          d[None, ...] if d.ndim == 2 else d)
    if not np.all(ok):
        raise NumericError("Riccati eigenstructure is defective or J is singular")
    return solution[0] if c.ndim == 2 else solution


def _solve_riccati_batched(c: np.ndarray, d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized Riccati solve over leading axes; flags failures per item.

    An item fails when its eigenvector matrix is defective, its J block is
    numerically singular, the result is non-finite, or the residual
    ``||W C W - D||`` exceeds the documented bound relative to ``||D||``.
    """
    m = c.shape[-1]
    lead = c.shape[:-2]
    blocks = np.zeros(lead + (2 * m, 2 * m), dtype=np.complex128)
    blocks[..., :m, m:] = -c
    blocks[..., m:, :m] = -d

    with np.errstate(all="ignore"):
        values, vectors = np.linalg.eig(blocks)
        order = np.argsort(values.real, axis=-1)[..., :m]
        chosen = np.take_along_axis(vectors, order[..., None, :], axis=-1)
        j_block = chosen[..., :m, :]
        i_block = chosen[..., m:, :]

        dets = np.linalg.det(j_block)
        ok = np.isfinite(dets) & (np.abs(dets) > np.finfo(float).tiny)
        safe_j = np.where(ok[..., None, None], j_block, np.eye(m))
        solution = hermitize(i_block @ np.linalg.inv(safe_j))

        residual = np.linalg.norm(solution @ c @ solution - d, axis=(-2, -1))
        bound = _RICCATI_TOL * np.linalg.norm(d, axis=(-2, -1))
        ok &= np.all(np.isfinite(solution), axis=(-2, -1)) & (residual <= bound)
    return solution, ok


@dataclass
class FactorizationState:
    """Everything one iteration needs, plus cached per-bin tensors.

    ``observed`` is the raw (possibly rank-1) SCM tensor; the constant ridge
    ``delta`` and the shifted observation are derived once.  ``priors`` is
    the fixed spectrogram used while no spectral model is attached; once
    ``model`` is set the modelled spectrogram takes over.  After assigning
    to any parameter, call :meth:`refresh` to rebuild the cached inverse and
    the sandwiched observation before the next update.
    """

    observed: np.ndarray                 # (F, T, M, M)
    kernels: np.ndarray                  # (F, O, M, M)
    weights: np.ndarray                  # (S, O)
    priors: np.ndarray | None = None     # (F, T, S)
    model: SpectralModel | None = None
    ridge_rel: float = DEFAULT_RIDGE
    riccati_fallbacks: int = 0
    cost_history: list = field(default_factory=list)

    def __post_init__(self):
        self.observed = np.asarray(self.observed, dtype=np.complex128)
        if self.observed.ndim != 4 or self.observed.shape[-1] != self.observed.shape[-2]:
            raise DataError(f"observed SCM must be (F, T, M, M), got {self.observed.shape}")
        if self.priors is None and self.model is None:
            raise DataError("need either a prior spectrogram or a spectral model")
        self.delta = monitor_delta(self.observed, self.ridge_rel)  # (F, T)
        self._observed_r = _shift(self.observed, self.delta)
        self.refresh()

    @property
    def n_sources(self) -> int:
        return self.weights.shape[0]

    def spectrogram(self) -> np.ndarray:
        """Current source spectrogram (F, T, S): model if set, else priors."""
        if self.model is not None:
            return self.model.spectrogram()
        return self.priors

    def refresh(self) -> None:
        """Rebuild cached tensors after a parameter family changed."""
        self._yhat = self.spectrogram()
        self._mixing = compose_mixing_filter(self.kernels, self.weights)
        predicted_r = _shift(
            np.einsum("fsij,fts->ftij", self._mixing, self._yhat), self.delta
        )
        try:
            self._inv = hermitize(np.linalg.inv(predicted_r))              # Pr^-1
        except np.linalg.LinAlgError as exc:
            raise NumericError("modelled SCM is singular despite the ridge") from exc
        self._sandwich = hermitize(self._inv @ self._observed_r @ self._inv)

    def cost(self) -> float:
        """Monitored divergence between the shifted observed and model SCMs."""
        predicted = np.einsum("fsij,fts->ftij", self._mixing, self._yhat)
        return is_cost(self.observed, predicted, self.ridge_rel, self.delta)


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """Clipped update ratio; bins with a vanishing denominator stay put."""
    num = np.maximum(num, 0.0)
    out = np.ones_like(num)
    np.divide(num, den, out=out, where=den > 0.0)
    return out


def update_spatial_weights(state: FactorizationState) -> np.ndarray:
    """One multiplicative step on the spatial weights.

    z_so <- z_so sqrt( sum_ft yhat tr(P^-1 X P^-1 W_fo)
                     / sum_ft yhat tr(P^-1 W_fo) )
    """
    yhat = state._yhat
    upper = np.einsum("fts,ftij->fsij", yhat, state._sandwich)
    lower = np.einsum("fts,ftij->fsij", yhat, state._inv)
    num = np.einsum("fsij,foji->so", upper, state.kernels).real
    den = np.einsum("fsij,foji->so", lower, state.kernels).real
    return state.weights * np.sqrt(_ratio(num, den))


def update_doa_kernels(state: FactorizationState) -> tuple[np.ndarray, int]:
    """Riccati step on every DoA kernel; returns (kernels, failures kept).

    Per bin and direction, with a_fto = sum_s z_so yhat_fts:

        C = sum_t a_fto P^-1,   D = W' (sum_t a_fto P^-1 X P^-1) W',

    and the new kernel solves W C W = D.  Bins whose solve fails keep the
    previous kernel; the count is reported so callers can surface it.
    """
    activation = np.einsum("so,fts->fto", state.weights, state._yhat)
    c = hermitize(np.einsum("fto,ftij->foij", activation, state._inv))
    inner = hermitize(np.einsum("fto,ftij->foij", activation, state._sandwich))
    d = state.kernels @ inner @ state.kernels

    solution, ok = _solve_riccati_batched(c, d)
    kernels = np.where(ok[..., None, None], solution, state.kernels)
    return kernels, int(np.size(ok) - np.count_nonzero(ok))


def update_bases(state: FactorizationState) -> np.ndarray:
    """Multiplicative step on spectral patterns (needs an attached model).

    b_fks <- b_fks sqrt( sum_t g tr(P^-1 X P^-1 H_fs) / sum_t g tr(P^-1 H_fs) )
    """
    if state.model is None:
        raise DataError("no spectral model attached; bases are not a free parameter")
    upper = np.einsum("ftij,fsji->fts", state._sandwich, state._mixing).real
    lower = np.einsum("ftij,fsji->fts", state._inv, state._mixing).real
    num = np.einsum("kts,fts->fks", state.model.gains, upper)
    den = np.einsum("kts,fts->fks", state.model.gains, lower)
    return state.model.bases * np.sqrt(_ratio(num, den))


def update_gains(state: FactorizationState) -> np.ndarray:
    """Multiplicative step on time gains (needs an attached model).

    g_kts <- g_kts sqrt( sum_f b tr(P^-1 X P^-1 H_fs) / sum_f b tr(P^-1 H_fs) )
    """
    if state.model is None:
        raise DataError("no spectral model attached; gains are not a free parameter")
    upper = np.einsum("ftij,fsji->fts", state._sandwich, state._mixing).real
    lower = np.einsum("ftij,fsji->fts", state._inv, state._mixing).real
    num = np.einsum("fks,fts->kts", state.model.bases, upper)
    den = np.einsum("fks,fts->kts", state.model.bases, lower)
    return state.model.gains * np.sqrt(_ratio(num, den))


@dataclass
class MixingEstimate:
    """Result of the first estimation step."""

    kernels: np.ndarray
    weights: np.ndarray
    cost_history: list
    riccati_fallbacks: int


@dataclass
class RefinementResult:
    """Result of the refinement step."""

    model: SpectralModel
    kernels: np.ndarray
    weights: np.ndarray
    cost_history: list
    riccati_fallbacks: int


def _check_spectrogram(observed: np.ndarray, spectrogram: np.ndarray) -> None:
    if spectrogram.ndim != 3 or spectrogram.shape[:2] != observed.shape[:2]:
        raise DataError(
            f"spectrogram {spectrogram.shape} does not sit on the observed"
            f" (F, T) grid {observed.shape[:2]}"
        )
    if np.any(spectrogram < 0):
        raise DataError("source spectrograms must be nonnegative")


def estimate_mixing_filter(observed: np.ndarray, priors: np.ndarray,
                           kernels: np.ndarray, iterations: int = 200,
                           ridge_rel: float = DEFAULT_RIDGE) -> MixingEstimate:
    """Step one: fit spatial weights and DoA kernels to fixed priors.

    Weights start uniform at 1/O.  Each round updates z then W, refreshing
    the modelled SCM in between; the recorded cost (one entry per round plus
    the initial value) is non-increasing up to rounding.
    """
    priors = np.asarray(priors, dtype=np.float64)
    _check_spectrogram(observed, priors)
    n_sources = priors.shape[2]
    n_directions = kernels.shape[1]
    weights = np.full((n_sources, n_directions), 1.0 / n_directions)

    state = FactorizationState(observed, kernels.copy(), weights, priors=priors,
                               ridge_rel=ridge_rel)
    state.cost_history.append(state.cost())
    for _ in range(iterations):
        state.weights = update_spatial_weights(state)
        state.refresh()
        state.kernels, kept = update_doa_kernels(state)
        state.riccati_fallbacks += kept
        state.refresh()
        state.cost_history.append(state.cost())
    return MixingEstimate(state.kernels, state.weights, state.cost_history,
                          state.riccati_fallbacks)


def refine_sources(observed: np.ndarray, kernels: np.ndarray, weights: np.ndarray,
                   model: SpectralModel, preset: VariantPreset,
                   iterations: int = 200,
                   ridge_rel: float = DEFAULT_RIDGE) -> RefinementResult:
    """Step two: refine the spectral model under the learned mixing filter.

    The preset decides which families move.  Update order within a round is
    weights, kernels, bases, gains, refreshing the modelled SCM after each
    family; cost is recorded per round as in step one.
    """
    _check_spectrogram(observed, model.spectrogram())
    if model.n_sources != weights.shape[0]:
        raise DataError(
            f"model has {model.n_sources} sources but weights have {weights.shape[0]}"
        )
    state = FactorizationState(
        observed, kernels.copy(), weights.copy(),
        model=SpectralModel(model.bases.copy(), model.gains.copy()),
        ridge_rel=ridge_rel,
    )
    free = preset.refine_free
    state.cost_history.append(state.cost())
    for _ in range(iterations):
        if "weights" in free:
            state.weights = update_spatial_weights(state)
            state.refresh()
        if "kernels" in free:
            state.kernels, kept = update_doa_kernels(state)
            state.riccati_fallbacks += kept
            state.refresh()
        if "bases" in free:
            state.model.bases = update_bases(state)
            state.refresh()
        if "gains" in free:
            state.model.gains = update_gains(state)
            state.refresh()
        state.cost_history.append(state.cost())
    return RefinementResult(state.model, state.kernels, state.weights,
                            state.cost_history, state.riccati_fallbacks)
