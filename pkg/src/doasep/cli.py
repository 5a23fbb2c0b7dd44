"""Command-line interface: simulate scenes, separate mixtures, evaluate results.

Exit codes: 0 success, 2 configuration problems, 3 data or file-format
problems, 4 numeric failures.  All outputs are deterministic for a fixed
config and seed; no timestamps are written.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .array import ArrayGeometry
from .config import Config, load_config
from .errors import ConfigurationError, DataError, DoasepError, NumericError
from .metrics import BssScores, bss_eval, summarize
from .priors import load_prior, oracle_prior, vocal_residual_priors
from .report import save_cost_history, save_metric_boxes, save_spatial_weights
from .roomsim import RoomSpec, SceneSpec, render_mixture
from .separation import run_pipeline
from .signal import load_wav, save_wav, stft

__all__ = ["main", "cmd_simulate", "cmd_separate", "cmd_evaluate"]


def _geometry(config: Config) -> ArrayGeometry:
    return ArrayGeometry(np.asarray(config.mic_positions, dtype=np.float64),
                         config.speed_of_sound)


def _require(value, message: str):
    if not value:
        raise ConfigurationError(message)
    return value


def _load_clips(paths, label: str):
    clips = []
    for path in paths:
        if not Path(path).exists():
            raise DataError(f"{label} file not found: {path}")
        clips.append(load_wav(path))
    return clips


def cmd_simulate(config: Config, out_dir: Path) -> int:
    """Render a reverberant scene to mixture.wav plus per-source images."""
    paths = _require(config.source_files,
                     "simulate needs [scene] source_files (one WAV per source)")
    if len(paths) != len(config.azimuths):
        raise ConfigurationError(
            f"{len(paths)} source files but {len(config.azimuths)} azimuths"
        )
    dry = _load_clips(paths, "source")
    room = RoomSpec(config.room_dimensions, config.t60, config.max_image_order)
    scene = SceneSpec.from_directions(_geometry(config),
                                      np.asarray(config.array_center),
                                      config.azimuths, config.distance, dry)
    mixture, images = render_mixture(scene, room, duration=config.duration)

    out_dir.mkdir(parents=True, exist_ok=True)
    save_wav(mixture, out_dir / "mixture.wav")
    for index, image in enumerate(images):
        save_wav(image, out_dir / f"image_{index:02d}.wav")
    print(f"simulated {len(images)} sources, {mixture.n_channels} mics,"
          f" {mixture.duration:.2f} s at {mixture.sample_rate:.0f} Hz"
          f" (T60 {config.t60} s)")
    for index, azimuth in enumerate(config.azimuths):
        print(f"  source {index}: azimuth {azimuth:g} deg,"
              f" distance {config.distance:g} m -> image_{index:02d}.wav")
    return 0


def _prepare_priors(config: Config, mixture, fft_size: int, hop: int):
    """Resolve the prior set for the configured preset; None means random."""
    if config.preset in ("fix", "free"):
        path = _require(config.priors,
                        f"priors required for preset {config.preset!r}")
        if not Path(path).exists():
            raise DataError(f"prior file not found: {path}")
        priors = load_prior(path)
        if priors.n_sources == 1:
            priors = vocal_residual_priors(priors, stft(mixture, fft_size, hop))
        return priors
    if config.preset == "oracle":
        paths = _require(config.images,
                         "preset 'oracle' needs [separate] images (ground-truth"
                         " source image WAVs)")
        return oracle_prior(_load_clips(paths, "image"), fft_size, hop)
    return None


def cmd_separate(config: Config, out_dir: Path) -> int:
    """Separate a mixture into per-source WAVs plus diagnostics and figures."""
    mixture_path = _require(config.mixture, "separate needs [separate] mixture")
    if not Path(mixture_path).exists():
        raise DataError(f"mixture file not found: {mixture_path}")
    mixture = load_wav(mixture_path)
    priors = _prepare_priors(config, mixture, config.fft_size, config.hop)

    result = run_pipeline(
        mixture, priors, _geometry(config),
        preset=config.preset,
        n_directions=config.directions,
        fft_size=config.fft_size,
        hop=config.hop,
        mixing_iterations=config.mixing_iterations,
        refinement_iterations=config.refinement_iterations,
        n_components=config.components,
        hals_iterations=config.hals_iterations,
        n_sources=config.sources,
        seed=config.seed,
        ridge_rel=config.ridge_rel,
    )

    out_dir.mkdir(parents=True, exist_ok=True)
    for index, clip in enumerate(result.sources):
        save_wav(clip, out_dir / f"source_{index:02d}.wav")
    _write_diagnostics(result.diagnostics, out_dir / "diagnostics.jsonl")
    save_cost_history(
        {"mixing": result.diagnostics["mixing_cost"],
         "refinement": result.diagnostics["refinement_cost"]},
        out_dir / "cost_history.png")
    save_spatial_weights(result.diagnostics["spatial_weights"],
                         result.diagnostics["grid_azimuths"],
                         out_dir / "spatial_weights.png")
    fallbacks = result.diagnostics["riccati_fallbacks"]
    print(f"separated {len(result.sources)} sources with preset"
          f" {config.preset!r} ({config.mixing_iterations}+"
          f"{config.refinement_iterations} iterations)")
    print(f"  final divergence {result.diagnostics['refinement_cost'][-1]:.6g},"
          f" kernel-update fallbacks {fallbacks['mixing']}+"
          f"{fallbacks['refinement']}")
    return 0


def _write_diagnostics(diagnostics: dict, path: Path) -> None:
    """One JSON object per line: run header, per-iteration costs, summaries."""
    lines = [{"event": "run", "preset": diagnostics["preset"],
              "prior_provenance": diagnostics["prior_provenance"]}]
    for stage in ("mixing", "refinement"):
        for iteration, value in enumerate(diagnostics[f"{stage}_cost"]):
            lines.append({"event": "cost", "stage": stage,
                          "iteration": iteration, "value": value})
    lines.append({"event": "warning_counters",
                  "riccati_fallbacks": diagnostics["riccati_fallbacks"]})
    lines.append({"event": "spatial_weights",
                  "azimuths_deg": diagnostics["grid_azimuths"],
                  "weights": diagnostics["spatial_weights"]})
    with open(path, "w") as handle:
        for line in lines:
            json.dump(line, handle)
            handle.write("\n")


def _scene_pairs(config: Config):
    """(label, estimate paths, reference paths) per scene to score."""
    if config.scene_dirs:
        for directory in config.scene_dirs:
            base = Path(directory)
            estimates = sorted(base.glob("source_*.wav"))
            references = sorted(base.glob("image_*.wav"))
            if not estimates or not references:
                raise DataError(
                    f"scene directory {base} needs source_*.wav estimates and"
                    " image_*.wav references"
                )
            yield base.name, estimates, references
    else:
        _require(config.estimates and config.references,
                 "evaluate needs [evaluate] estimates and references"
                 " (or scene_dirs)")
        yield "scene", list(config.estimates), list(config.references)


def cmd_evaluate(config: Config, out_dir: Path) -> int:
    """Score estimates against references; write CSV and a figure."""
    all_scores: list[BssScores] = []
    rows = []
    for label, est_paths, ref_paths in _scene_pairs(config):
        if len(est_paths) != len(ref_paths):
            raise DataError(
                f"scene {label}: {len(est_paths)} estimates vs"
                f" {len(ref_paths)} references"
            )
        estimates = _load_clips(est_paths, "estimate")
        references = _load_clips(ref_paths, "reference")
        length = min(c.n_samples for c in estimates + references)
        estimates = [c.trimmed(length) for c in estimates]
        references = [c.trimmed(length) for c in references]
        scores = bss_eval(estimates, references, config.filter_len)
        all_scores.append(scores)
        for source in range(scores.n_sources):
            for channel in range(scores.n_channels):
                sdr, sir, sar = scores.per_channel[source, channel]
                rows.append((label, source, channel,
                             f"{sdr:.4f}", f"{sir:.4f}", f"{sar:.4f}"))

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(("scene", "source", "channel", "sdr_db", "sir_db", "sar_db"))
        writer.writerows(rows)
    save_metric_boxes(all_scores, out_dir / "metrics_box.png")

    summary = summarize(all_scores)
    print(f"{'source':>8} {'metric':>8} {'q25':>9} {'median':>9} {'q75':>9}")
    for source in range(all_scores[0].n_sources):
        for name in ("sdr", "sir", "sar"):
            q25, median, q75 = getattr(summary, name)[source]
            print(f"{source:>8d} {name.upper():>8} {q25:>9.2f} {median:>9.2f}"
                  f" {q75:>9.2f}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="doasep",
        description="Direction-aware singing-voice separation: simulate"
                    " scenes, separate mixtures with prior-informed"
                    " covariance factorization, evaluate results.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="INI config file (defaults reproduce the"
                             " reference setup)")
    common.add_argument("--seed", type=int, default=None,
                        help="override [cnmf] seed")
    common.add_argument("--preset", default=None,
                        choices=("fix", "free", "oracle", "rand"),
                        help="override [cnmf] preset")
    common.add_argument("--out", type=Path, default=Path("."),
                        help="output directory (created if missing)")

    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("simulate", parents=[common],
                        help="render a room scene to mixture + image WAVs")
    commands.add_parser("separate", parents=[common],
                        help="separate a mixture into per-source WAVs")
    commands.add_parser("evaluate", parents=[common],
                        help="score estimates against references (CSV + plot)")
    return parser


_HANDLERS = {"simulate": cmd_simulate, "separate": cmd_separate,
             "evaluate": cmd_evaluate}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config) if args.config else Config()
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.preset is not None:
            overrides["preset"] = args.preset
        if overrides:
            config = dataclasses.replace(config, **overrides)
        return _HANDLERS[args.command](config, args.out)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except DoasepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
