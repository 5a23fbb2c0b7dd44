"""Direction-aware singing-voice separation for microphone arrays.

The toolkit separates a multichannel music mixture into singing voice and
accompaniment, guided by externally supplied source-spectrogram priors.
It factorizes the mixture's per-bin spatial covariance matrices into
nonnegative spectral factors and a mixing filter built from direction-of-
arrival kernels, in two stages: the mixing filter is first estimated
against the fixed priors, then the spectral model is refined under the
learned filter.  Sources are reconstructed with generalized Wiener masks.

Supporting pieces: an image-source room simulator for generating test
scenes, projection-based SDR/SIR/SAR metrics, WAV and prior-container I/O,
and a command-line front end (``doasep simulate|separate|evaluate``).
"""

from .array import (SPEED_OF_SOUND, ArrayGeometry, DirectionGrid,
                    build_direction_grid, init_doa_kernels, steering_vector)
from .cnmf import (DEFAULT_RIDGE, FactorizationState, MixingEstimate,
                   RefinementResult, VariantPreset, estimate_mixing_filter,
                   is_cost, monitor_delta, predict_scm, refine_sources,
                   solve_riccati, update_bases, update_doa_kernels,
                   update_gains, update_spatial_weights)
from .config import Config, load_config, parse_config, save_config, serialize_config
from .errors import (ConfigurationError, DataError, DoasepError, FormatError,
                     GeometryError, NumericError)
from .metrics import BssScores, MetricSummary, bss_eval, summarize
from .priors import (PriorSet, SpectralModel, decompose_priors, hals_decompose,
                     load_prior, oracle_prior, random_prior, save_prior,
                     select_predominant_channel, vocal_residual_priors)
from .roomsim import (RoomSpec, SceneSpec, reflection_coefficient,
                      render_mixture, simulate_rir)
from .scm import compose_mixing_filter, compute_scm, hermitize, regularized_inverse
from .separation import SeparationResult, reconstruct, run_pipeline, wiener_masks
from .signal import (AudioClip, ComplexSpectrogram, MagnitudeSpectrogram,
                     istft, load_wav, save_wav, stft)

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "ArrayGeometry",
    "BssScores",
    "ComplexSpectrogram",
    "Config",
    "ConfigurationError",
    "DataError",
    "DEFAULT_RIDGE",
    "DirectionGrid",
    "DoasepError",
    "FactorizationState",
    "FormatError",
    "GeometryError",
    "MagnitudeSpectrogram",
    "MetricSummary",
    "MixingEstimate",
    "NumericError",
    "PriorSet",
    "RefinementResult",
    "RoomSpec",
    "SceneSpec",
    "SeparationResult",
    "SpectralModel",
    "SPEED_OF_SOUND",
    "VariantPreset",
    "bss_eval",
    "build_direction_grid",
    "compose_mixing_filter",
    "compute_scm",
    "decompose_priors",
    "estimate_mixing_filter",
    "hals_decompose",
    "hermitize",
    "init_doa_kernels",
    "is_cost",
    "istft",
    "load_config",
    "load_prior",
    "load_wav",
    "monitor_delta",
    "oracle_prior",
    "parse_config",
    "predict_scm",
    "random_prior",
    "reconstruct",
    "refine_sources",
    "reflection_coefficient",
    "regularized_inverse",
    "render_mixture",
    "run_pipeline",
    "save_config",
    "save_prior",
    "save_wav",
    "select_predominant_channel",
    "serialize_config",
    "simulate_rir",
    "solve_riccati",
    "steering_vector",
    "stft",
    "summarize",
    "update_bases",
    "update_doa_kernels",
    "update_gains",
    "update_spatial_weights",
    "vocal_residual_priors",
    "wiener_masks",
]
