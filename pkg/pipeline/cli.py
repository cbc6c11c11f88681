"""Command-line interface for the axisprompt pipeline."""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, List, Optional, Tuple

from axisprompt.config import PipelineConfig, load_pipeline_config, parse_override, settings
from pipeline.runner import (
    ABLATION_SWEEPS,
    cmd_ablate,
    cmd_convert,
    cmd_eval,
    cmd_render,
    cmd_synth,
)

logger = logging.getLogger(__name__)


def _add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config", "-c", type=Path, required=True, help="Pipeline configuration (YAML)"
    )
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a configuration key, e.g. rig.n_views=4 (repeatable)",
    )
    parser.add_argument("--seed", type=int, help="Run seed (overrides the configuration)")
    parser.add_argument("--output-dir", "-o", type=Path, help="Output directory")
    parser.add_argument("--n-views", type=int, help="Number of rendered views")


def _add_mode_argument(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--mode",
        choices=["mock", "live"],
        default="mock",
        help="mock answers offline from ground truth; live calls the configured endpoint",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="axisprompt",
        description="Render 3D-axis visual prompts, query multimodal models and score the answers",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Write five synthetic rooms and a configuration for them
  axisprompt synth --output-dir data/synth

  # Render prompt bundles
  axisprompt render --config data/synth/config.yaml

  # Evaluate offline against the ground-truth oracle
  axisprompt eval --config data/synth/config.yaml --set oracle.noise_sigma=0.1

  # Evaluate against the configured endpoint (key read from the environment)
  axisprompt eval --config configs/example.yaml --mode live

  # Compare 1, 2, 4 and 8 views
  axisprompt ablate --config configs/example.yaml --sweep n_views

  # Turn an RGB-D capture into a point file
  axisprompt convert --depth depth.png --color color.jpg --intrinsics intr.yaml -o scene.ply
        """,
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="Enable verbose logging")
    commands = parser.add_subparsers(dest="command", required=True)

    render = commands.add_parser("render", help="Render prompt bundles for every scene")
    _add_config_arguments(render)

    evaluate = commands.add_parser("eval", help="Render, query and score every scene")
    _add_config_arguments(evaluate)
    _add_mode_argument(evaluate)

    ablate = commands.add_parser("ablate", help="Evaluate one arm per value of a knob")
    _add_config_arguments(ablate)
    _add_mode_argument(ablate)
    ablate.add_argument("--sweep", choices=sorted(ABLATION_SWEEPS), required=True)

    convert = commands.add_parser("convert", help="Back-project an RGB-D capture to PLY")
    convert.add_argument("--depth", type=Path, required=True, help="Depth image (.png or .npy)")
    convert.add_argument("--color", type=Path, help="Color image aligned with the depth")
    convert.add_argument(
        "--intrinsics", type=Path, required=True, help="YAML with fx, fy, cx, cy, width, height"
    )
    convert.add_argument("--output", "-o", type=Path, required=True, help="Output PLY file")
    convert.add_argument("--stride", type=int, default=1, help="Pixel step")

    synth = commands.add_parser("synth", help="Write synthetic rooms and a configuration")
    synth.add_argument("--output-dir", "-o", type=Path, required=True)
    synth.add_argument("--scenes", type=int, default=5, help="Number of rooms")
    synth.add_argument("--objects", type=int, default=4, help="Furniture boxes per room")
    synth.add_argument("--seed", type=int, default=0)
    return parser


def load_config(args: argparse.Namespace) -> PipelineConfig:
    """Configuration file plus --set overrides, then the dedicated flags."""
    overrides: List[Tuple[str, Any]] = [parse_override(text) for text in args.overrides]
    if args.seed is not None:
        overrides.append(("seed", args.seed))
    if args.output_dir is not None:
        overrides.append(("output_dir", str(args.output_dir.resolve())))
    if args.n_views is not None:
        overrides.append(("rig.n_views", args.n_views))
    return load_pipeline_config(args.config, overrides)


def _report_failure(command: str, error: Exception) -> None:
    payload = {
        "error": type(error).__name__,
        "message": str(error),
        "scene_id": getattr(error, "scene_id", None),
    }
    print(json.dumps(payload), file=sys.stderr)
    logger.error(f"✗ {command} failed: {error}")


def main(argv: Optional[List[str]] = None) -> None:
    """Main CLI entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    # Configure logging
    logging.basicConfig(level=settings.get_log_level(), format=settings.log_format)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    if args.command in ("render", "eval", "ablate") and not args.config.exists():
        _report_failure(args.command, FileNotFoundError(f"Config file not found: {args.config}"))
        sys.exit(1)

    try:
        if args.command == "render":
            config = load_config(args)
            scenes = cmd_render(config)
            logger.info(f"Successfully rendered {len(scenes)} scenes into {config.output_dir}")
        elif args.command == "eval":
            config = load_config(args)
            summary = cmd_eval(config, args.mode)
            print(summary.model_dump_json(indent=2))
        elif args.command == "ablate":
            config = load_config(args)
            arms = cmd_ablate(config, args.sweep, args.mode)
            logger.info(f"Successfully evaluated {len(arms)} arms of {args.sweep}")
        elif args.command == "convert":
            count = cmd_convert(args.depth, args.intrinsics, args.output, args.color, args.stride)
            logger.info(f"Successfully converted {count} points")
        elif args.command == "synth":
            path = cmd_synth(args.output_dir, args.scenes, args.seed, args.objects)
            logger.info(f"Successfully wrote synthetic scenes; configuration at {path}")
    except Exception as e:
        _report_failure(args.command, e)
        if args.verbose:
            logger.exception("Full traceback:")
        sys.exit(1)


if __name__ == "__main__":
    main()
