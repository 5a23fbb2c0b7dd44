"""Microphone array geometry, direction grids, and steering-vector kernels.

Directions are (azimuth, elevation) pairs in degrees.  Azimuth is measured
counterclockwise from the +x axis in the horizontal plane, elevation upward
from that plane.  The far-field model assumes plane waves; a mic closer to
the source along the arrival direction leads the array centroid in time.

A two-element array spaced ``d`` apart is ambiguous above the spatial
aliasing frequency ``c / (2 d)`` (171.5 Hz for the 1 m pair at c = 343 m/s):
distinct directions share kernels there.  The toolkit documents this rather
than compensating for it; wide grids simply reuse aliased kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, GeometryError

__all__ = [
    "ArrayGeometry",
    "DirectionGrid",
    "build_direction_grid",
    "steering_vector",
    "init_doa_kernels",
]

SPEED_OF_SOUND = 343.0


@dataclass(frozen=True)
class ArrayGeometry:
    """Microphone positions in meters, ``(M, 3)``, plus the sound speed."""

    mic_positions: np.ndarray
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.mic_positions, dtype=np.float64))
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise GeometryError(f"mic positions must be (M, 3), got {pos.shape}")
        if pos.shape[0] < 1:
            raise GeometryError("need at least one microphone")
        if self.speed_of_sound <= 0:
            raise ConfigurationError(f"speed of sound must be positive, got {self.speed_of_sound}")
        for i in range(pos.shape[0]):
            for j in range(i + 1, pos.shape[0]):
                if np.allclose(pos[i], pos[j], atol=1e-12):
                    raise GeometryError(f"microphones {i} and {j} coincide")
        object.__setattr__(self, "mic_positions", pos)

    @property
    def n_mics(self) -> int:
        return self.mic_positions.shape[0]

    @property
    def centered_positions(self) -> np.ndarray:
        """Positions relative to the array centroid (the phase reference)."""
        return self.mic_positions - self.mic_positions.mean(axis=0)

    @classmethod
    def linear_pair(cls, spacing: float, speed_of_sound: float = SPEED_OF_SOUND,
                    axis: int = 0) -> "ArrayGeometry":
        """Two mics ``spacing`` meters apart, centered on the origin."""
        if spacing <= 0:
            raise GeometryError(f"mic spacing must be positive, got {spacing}")
        pos = np.zeros((2, 3))
        pos[0, axis] = -0.5 * spacing
        pos[1, axis] = +0.5 * spacing
        return cls(pos, speed_of_sound)


@dataclass(frozen=True)
class DirectionGrid:
    """Candidate look directions, ``(O, 2)`` degrees (azimuth, elevation)."""

    directions: np.ndarray = field()

    def __post_init__(self):
        dirs = np.atleast_2d(np.asarray(self.directions, dtype=np.float64))
        if dirs.ndim != 2 or dirs.shape[1] != 2:
            raise ConfigurationError(f"directions must be (O, 2), got {dirs.shape}")
        if dirs.shape[0] == 0:
            raise ConfigurationError("direction grid is empty")
        object.__setattr__(self, "directions", dirs)

    @property
    def n_directions(self) -> int:
        return self.directions.shape[0]

    @property
    def azimuths(self) -> np.ndarray:
        return self.directions[:, 0]

    @property
    def elevations(self) -> np.ndarray:
        return self.directions[:, 1]

    def unit_vectors(self) -> np.ndarray:
        """Unit arrival vectors pointing from the array toward each direction."""
        az = np.deg2rad(self.directions[:, 0])
        el = np.deg2rad(self.directions[:, 1])
        return np.stack(
            [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=1
        )


def build_direction_grid(count: int) -> DirectionGrid:
    """Uniform azimuth ring at zero elevation, starting at 0 degrees."""
    if count < 1:
        raise ConfigurationError(f"direction count must be >= 1, got {count}")
    az = np.arange(count) * (360.0 / count)
    return DirectionGrid(np.stack([az, np.zeros(count)], axis=1))


def steering_vector(geometry: ArrayGeometry, direction, freq_hz: float) -> np.ndarray:
    """Far-field steering vector at one frequency.

    Component ``m`` is ``exp(-2j pi f tau_m)`` with ``tau_m = -(u . p_m) / c``
    where ``u`` is the unit arrival vector and ``p_m`` the mic position
    relative to the centroid; mics nearer the source lead (negative delay).
    Every component has unit magnitude.
    """
    direction = np.asarray(direction, dtype=np.float64).reshape(2)
    grid = DirectionGrid(direction[None, :])
    u = grid.unit_vectors()[0]
    tau = -(geometry.centered_positions @ u) / geometry.speed_of_sound
    return np.exp(-2j * np.pi * freq_hz * tau)


def init_doa_kernels(geometry: ArrayGeometry, grid: DirectionGrid,
                     n_bins: int, fft_size: int, sample_rate: float) -> np.ndarray:
    """Rank-1 unit-trace kernels ``v v^H / M`` for every bin and direction.

    Returns a ``(F, O, M, M)`` complex tensor.  Bin ``f`` is evaluated at
    ``f * sample_rate / fft_size`` Hz; bin 0 gives the all-ones vector, so
    its kernel is the flat matrix ``1/M``.
    """
    if n_bins < 1:
        raise ConfigurationError(f"need at least one frequency bin, got {n_bins}")
    if fft_size < 1 or sample_rate <= 0:
        raise ConfigurationError("fft_size and sample_rate must be positive")
    m = geometry.n_mics
    freqs = np.arange(n_bins) * (sample_rate / fft_size)  # (F,)
    tau = -(grid.unit_vectors() @ geometry.centered_positions.T) / geometry.speed_of_sound
    phase = np.exp(-2j * np.pi * freqs[:, None, None] * tau[None, :, :])  # (F, O, M)
    return np.einsum("foi,foj->foij", phase, phase.conj()) / m
