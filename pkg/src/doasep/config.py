"""INI-style configuration with defaults matching the reference setup.

Every default reproduces the evaluation configuration this toolkit was
built around: 2048-point FFT with half-window hop, 200 iterations per
estimation stage, 60 look directions, 30 components per source, a 5 cm
two-microphone pair centered in a 7 x 12 x 3 m room with T60 0.65 s, and
four sources at azimuths 0/45/90/135 degrees.

Parsing is strict: unknown sections or keys raise ``ConfigurationError``
(silently ignoring a typo like ``itertions`` would be worse than failing).
``parse -> serialize -> parse`` is the identity.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigurationError

__all__ = ["Config", "parse_config", "serialize_config", "load_config", "save_config"]

_PRESETS = ("fix", "free", "oracle", "rand")


@dataclass(frozen=True)
class Config:
    # [stft]
    fft_size: int = 2048
    hop: int = 1024
    # [array]
    mic_positions: tuple = ((-0.025, 0.0, 0.0), (0.025, 0.0, 0.0))
    speed_of_sound: float = 343.0
    # [grid]
    directions: int = 60
    # [cnmf]
    mixing_iterations: int = 200
    refinement_iterations: int = 200
    components: int = 30
    hals_iterations: int = 100
    preset: str = "free"
    seed: int = 0
    ridge_rel: float = 1e-7
    sources: int = 2
    # [room]
    room_dimensions: tuple = (7.0, 12.0, 3.0)
    t60: float = 0.65
    max_image_order: int | None = None
    # [scene]
    array_center: tuple = (3.5, 6.0, 1.5)
    azimuths: tuple = (0.0, 45.0, 90.0, 135.0)
    distance: float = 1.0
    duration: float | None = None
    source_files: tuple = ()
    # [separate]
    mixture: str = ""
    priors: str = ""
    images: tuple = ()
    # [evaluate]
    estimates: tuple = ()
    references: tuple = ()
    scene_dirs: tuple = ()
    filter_len: int = 512

    def __post_init__(self):
        if self.preset not in _PRESETS:
            raise ConfigurationError(
                f"preset must be one of {_PRESETS}, got {self.preset!r}"
            )
        for name in ("fft_size", "hop", "directions", "mixing_iterations",
                     "refinement_iterations", "components", "hals_iterations",
                     "sources", "filter_len"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.ridge_rel <= 0.0:
            raise ConfigurationError(f"ridge_rel must be positive, got {self.ridge_rel}")
        if self.t60 < 0.0:
            raise ConfigurationError(f"t60 must be nonnegative, got {self.t60}")
        if self.distance <= 0.0:
            raise ConfigurationError(f"distance must be positive, got {self.distance}")
        if any(d <= 0.0 for d in self.room_dimensions):
            raise ConfigurationError(
                f"room dimensions must be positive, got {self.room_dimensions}"
            )


def _format_triples(triples) -> str:
    return "; ".join(" ".join(repr(float(v)) for v in t) for t in triples)


def _parse_triples(text: str, where: str):
    triples = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        values = part.split()
        if len(values) != 3:
            raise ConfigurationError(
                f"{where}: expected 'x y z' triples separated by ';', got {part!r}"
            )
        triples.append(tuple(_parse_float(v, where) for v in values))
    return tuple(triples)


def _parse_float(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigurationError(f"{where}: not a number: {text!r}") from None


def _parse_int(text: str, where: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigurationError(f"{where}: not an integer: {text!r}") from None


def _parse_floats(text: str, where: str) -> tuple:
    return tuple(_parse_float(v, where) for v in text.split())


def _parse_paths(text: str) -> tuple:
    return tuple(p.strip() for p in text.split(",") if p.strip())


# (section, key) -> (field, parser, serializer); parsers take (text, where).
def _field_float(name):
    return (name, _parse_float, lambda v: repr(float(v)))


def _field_int(name):
    return (name, _parse_int, str)


def _field_optional_int(name):
    return (name, lambda t, w: _parse_int(t, w) if t.strip() else None,
            lambda v: "" if v is None else str(v))


def _field_optional_float(name):
    return (name, lambda t, w: _parse_float(t, w) if t.strip() else None,
            lambda v: "" if v is None else repr(float(v)))


def _field_str(name):
    return (name, lambda t, w: t.strip(), str)


def _field_paths(name):
    return (name, lambda t, w: _parse_paths(t), ", ".join)


def _field_floats(name):
    return (name, _parse_floats, lambda v: " ".join(repr(float(x)) for x in v))


_SCHEMA = {
    "stft": {"fft_size": _field_int("fft_size"), "hop": _field_int("hop")},
    "array": {
        "positions": ("mic_positions", _parse_triples, _format_triples),
        "speed_of_sound": _field_float("speed_of_sound"),
    },
    "grid": {"directions": _field_int("directions")},
    "cnmf": {
        "mixing_iterations": _field_int("mixing_iterations"),
        "refinement_iterations": _field_int("refinement_iterations"),
        "components": _field_int("components"),
        "hals_iterations": _field_int("hals_iterations"),
        "preset": _field_str("preset"),
        "seed": _field_int("seed"),
        "ridge_rel": _field_float("ridge_rel"),
        "sources": _field_int("sources"),
    },
    "room": {
        "dimensions": _field_floats("room_dimensions"),
        "t60": _field_float("t60"),
        "max_image_order": _field_optional_int("max_image_order"),
    },
    "scene": {
        "array_center": _field_floats("array_center"),
        "azimuths": _field_floats("azimuths"),
        "distance": _field_float("distance"),
        "duration": _field_optional_float("duration"),
        "source_files": _field_paths("source_files"),
    },
    "separate": {
        "mixture": _field_str("mixture"),
        "priors": _field_str("priors"),
        "images": _field_paths("images"),
    },
    "evaluate": {
        "estimates": _field_paths("estimates"),
        "references": _field_paths("references"),
        "scene_dirs": _field_paths("scene_dirs"),
        "filter_len": _field_int("filter_len"),
    },
}


def parse_config(text: str) -> Config:
    """Parse INI text into a Config, applying defaults for missing keys."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc

    overrides = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigurationError(
                f"unknown config section [{section}]; expected one"
                f" of {sorted(_SCHEMA)}"
            )
        for key, value in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigurationError(
                    f"unknown key {key!r} in [{section}]; expected one"
                    f" of {sorted(_SCHEMA[section])}"
                )
            field, parse, _ = _SCHEMA[section][key]
            overrides[field] = parse(value, f"[{section}] {key}")
    return Config(**overrides)


def serialize_config(config: Config) -> str:
    """Render a Config as canonical INI text (every key explicit)."""
    parser = configparser.ConfigParser(interpolation=None)
    values = dataclasses.asdict(config)
    for section, keys in _SCHEMA.items():
        parser.add_section(section)
        for key, (field, _, fmt) in keys.items():
            parser.set(section, key, fmt(values[field]))
    with io.StringIO() as buffer:
        parser.write(buffer)
        return buffer.getvalue()


def load_config(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def save_config(config: Config, path) -> None:
    Path(path).write_text(serialize_config(config))
