"""Pipeline commands: render, eval, ablate, convert and synth."""

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import yaml
from PIL import Image
from pydantic import BaseModel, Field

from axisprompt.client import ChatClient, Responder
from axisprompt.config import AxisConfig, PipelineConfig, RigConfig, SceneSpec, settings
from axisprompt.evaluation import (
    build_skeleton,
    failed_records,
    parse_named_points,
    score_answer,
    summarize,
    summary_row,
    write_table,
)
from axisprompt.exceptions import AuthError, AxisPromptError, ChatError, SceneLoadError
from axisprompt.geometry import normalize_scene, unproject_rgbd
from axisprompt.marks import (
    MASK_VARIANTS,
    embed_3d_marks,
    load_view_masks,
    overlay_marks,
    project_instance_mask,
)
from axisprompt.models import (
    Camera,
    CameraIntrinsics,
    EvalRecord,
    GroundTruth,
    InstanceMask,
    MarkVariant,
    PromptBundle,
    RunSummary,
    SceneFrame,
    TaskKind,
)
from axisprompt.oracle import OracleResponder
from axisprompt.plyio import write_point_file
from axisprompt.prompt import assemble_prompt, save_bundle
from axisprompt.render import (
    AxisSpec,
    build_axis,
    depth_to_gray,
    encode_png,
    make_camera_rig,
    make_triview,
    render_view,
)
from axisprompt.synthetic import make_room
from pipeline.scene_loader import SceneLoader
from pipeline.tasks import ROUTE_PRESETS, find_route_preset, setup_task

logger = logging.getLogger(__name__)

BUNDLES_DIR = "bundles"
ABLATION_DIR = "ablation"
TRUTH_NAME = "truth.json"
SKELETON_NAME = "skeleton.ply"
SYNTH_CONFIG_NAME = "config.yaml"

EvalMode = Literal["mock", "live"]

# One (arm name, config overrides) pair per row of each comparison table
ABLATION_SWEEPS: Dict[str, List[Tuple[str, Dict[str, Any]]]] = {
    "n_views": [(f"{n} views", {"rig.n_views": n}) for n in (1, 2, 4, 8)],
    "axis_elements": [
        ("full", {}),
        ("no_ticks", {"axis.show_ticks": False}),
        ("no_labels", {"axis.show_labels": False}),
        ("none", {"axis.show_ticks": False, "axis.show_labels": False}),
    ],
    "mark_style": [
        ("No Elements", {"marks.style": None}),
        ("Mark", {"marks.style": MarkVariant.LETTER_3D.value}),
        ("Mark+OBB", {"marks.style": MarkVariant.OBB3D.value}),
        ("Mark+AABB (red)", {"marks.style": MarkVariant.AABB3D_RED.value}),
        ("Mark+AABB (colors)", {"marks.style": MarkVariant.AABB3D_COLORED.value}),
        ("Mark+3D edge points", {"marks.style": MarkVariant.MARK_PLUS_EDGE_POINTS.value}),
        ("2D contour (colors)", {"marks.style": MarkVariant.CONTOUR_ONLY.value}),
        ("Mark+2D contour (colors)", {"marks.style": MarkVariant.MARK_PLUS_CONTOUR.value}),
        (
            "Mark+2D contour (colors) + CoT",
            {"marks.style": MarkVariant.MARK_PLUS_CONTOUR.value, "task.cot": True},
        ),
    ],
}


class SceneResult(BaseModel):
    """A rendered scene: its bundle, ground truth and output directory."""

    scene_id: str
    bundle: PromptBundle
    truth: GroundTruth
    directory: Path


class DepthIntrinsics(CameraIntrinsics):
    """Intrinsics of an RGB-D capture; raw depth values are divided by depth_scale."""

    depth_scale: float = Field(1000.0, gt=0, description="Raw depth units per meter")


def axis_spec(scene: SceneFrame, cfg: AxisConfig) -> AxisSpec:
    return AxisSpec.for_scene(
        scene,
        tick_interval=cfg.tick_interval,
        tick_size=cfg.tick_size,
        show_ticks=cfg.show_ticks,
        show_labels=cfg.show_labels,
        label_decimals=cfg.label_decimals,
    )


def cameras_for(scene: SceneFrame, rig: RigConfig) -> List[Camera]:
    if rig.mode == "triview":
        return make_triview(scene, rig.image_size)
    return make_camera_rig(
        scene,
        n_views=rig.n_views,
        elevation=rig.elevation,
        distance_scale=rig.distance_scale,
        image_size=rig.image_size,
        fov_deg=rig.fov_deg,
    )


def render_scene(spec: SceneSpec, config: PipelineConfig, loader: SceneLoader) -> SceneResult:
    """
    Load, normalize, mark and render one scene, then write its bundle and truth.

    Raises:
        SceneLoadError: If any stage fails; the error carries the scene id
    """
    cloud = loader.load(spec)
    try:
        scene = normalize_scene(cloud, config.align)
        setup = setup_task(spec.id, scene, spec, config)
        style = config.marks.style
        extras = [build_axis(scene, axis_spec(scene, config.axis))]
        if style is not None:
            extras.append(embed_3d_marks(scene, setup.plan))

        views = []
        depth_images: List[bytes] = []
        for j, cam in enumerate(cameras_for(scene, config.rig)):
            view = render_view(scene, extras, cam, config.rig.splat_px)
            if style in MASK_VARIANTS:
                masks: List[InstanceMask]
                if spec.mask_dir is not None:
                    masks = load_view_masks(spec.mask_dir, j, setup.plan, view.shape)
                else:
                    masks = [
                        project_instance_mask(view, scene, entry.instance_id)
                        for entry in setup.plan.entries
                    ]
                view = overlay_marks(view, masks, setup.plan)
            views.append(view)
            if config.rig.depth_images:
                depth_images.append(encode_png(depth_to_gray(view.depth)))

        bundle = assemble_prompt(
            views,
            scene,
            setup.template,
            include_points=config.points_text.enabled,
            cot=config.task.cot,
            scene_id=spec.id,
            hint=setup.hint,
            budget_points=config.points_text.budget,
            decimals=config.points_text.decimals,
            extra_images=depth_images,
            mark_style=setup.plan.style_name if style is not None else None,
        )
        directory = save_bundle(bundle, config.output_dir / BUNDLES_DIR / spec.id)
        (directory / TRUTH_NAME).write_text(setup.truth.model_dump_json(indent=2), encoding="utf-8")
    except SceneLoadError:
        raise
    except (AxisPromptError, ValueError) as e:
        raise SceneLoadError(spec.id, str(e)) from e

    logger.info(f"Rendered scene {spec.id}: {len(views)} views into {directory}")
    return SceneResult(scene_id=spec.id, bundle=bundle, truth=setup.truth, directory=directory)


def cmd_render(config: PipelineConfig) -> List[SceneResult]:
    """
    Render every scene of a configuration into prompt bundles.

    Scenes are processed in parallel (config.workers) and each writes only
    its own directory, so reruns with the same configuration reproduce the
    same files.

    Returns:
        Results in configuration order

    Raises:
        SceneLoadError: The first failing scene, after every scene was attempted
    """
    results: List[SceneResult] = []
    failures: List[SceneLoadError] = []
    with SceneLoader() as loader, ThreadPoolExecutor(max_workers=config.workers) as pool:
        futures = [pool.submit(render_scene, spec, config, loader) for spec in config.scenes]
        for future in futures:
            try:
                results.append(future.result())
            except SceneLoadError as e:
                logger.error(f"✗ {e}")
                failures.append(e)
    if failures:
        logger.error(f"{len(failures)} of {len(config.scenes)} scenes failed to render")
        raise failures[0]
    return results


def _write_skeleton(scene: SceneResult, text: str) -> None:
    named = parse_named_points(text)
    edges = [(a, b) for a, b in scene.truth.skeleton_edges if a in named and b in named]
    if not named:
        logger.warning(f"Scene {scene.scene_id}: no keypoints in the answer, no skeleton written")
        return
    skeleton = build_skeleton(named, edges)
    (scene.directory / SKELETON_NAME).write_bytes(skeleton.to_ply())


def cmd_eval(
    config: PipelineConfig, mode: EvalMode = "mock", responder: Optional[Responder] = None
) -> RunSummary:
    """
    Render, query the model once per scene, score and report.

    Args:
        config: Pipeline configuration
        mode: "mock" answers from ground truth offline, "live" calls the endpoint
        responder: Replaces the mode's responder

    Returns:
        RunSummary (also written to the output directory)

    Raises:
        AuthError: If credentials are missing or rejected
        SceneLoadError: If a scene fails to render
    """
    scenes = cmd_render(config)
    truths = {s.scene_id: s.truth for s in scenes}
    if responder is None and mode == "mock":
        responder = OracleResponder(truths, config.oracle_config())

    transcript = config.output_dir / settings.transcript_name
    if transcript.exists():
        transcript.unlink()
    with ChatClient(config.endpoint, responder, transcript_path=transcript) as client:
        outcomes = client.send_many([s.bundle for s in scenes])

    records: List[EvalRecord] = []
    failed: List[str] = []
    for scene, outcome in zip(scenes, outcomes):
        if isinstance(outcome, AuthError):
            raise outcome
        if isinstance(outcome, ChatError):
            logger.error(f"✗ Scene {scene.scene_id} failed: {outcome}")
            failed.append(scene.scene_id)
            records.extend(failed_records(scene.truth, config.eval))
            continue
        records.extend(
            score_answer(outcome.text, scene.truth, config.eval, config.task.box_format)
        )
        if scene.truth.kind == TaskKind.KEYPOINTS:
            _write_skeleton(scene, outcome.text)

    summary = summarize(records, config.output_dir, failed)
    logger.info(
        f"Evaluated {summary.n_scenes} scenes ({mode}): "
        f"nrmse center={summary.nrmse_center}, bbx={summary.nrmse_bbx}, "
        f"success={summary.success_rate}, failed={len(failed)}"
    )
    return summary


def _slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


def cmd_ablate(
    config: PipelineConfig,
    sweep: str,
    mode: EvalMode = "mock",
    responder: Optional[Responder] = None,
) -> List[Tuple[str, RunSummary]]:
    """
    Evaluate one arm per value of a swept knob and write the comparison table.

    Each arm changes only the swept keys and writes to its own directory
    under ablation/<sweep>/. The table goes to ablation_<sweep>.csv and .md.

    Raises:
        ValueError: If the sweep is unknown
    """
    if sweep not in ABLATION_SWEEPS:
        raise ValueError(f"unknown sweep '{sweep}', expected one of {sorted(ABLATION_SWEEPS)}")
    base = config.output_dir
    arms: List[Tuple[str, RunSummary]] = []
    rows: List[Dict[str, str]] = []
    for name, overrides in ABLATION_SWEEPS[sweep]:
        arm_dir = base / ABLATION_DIR / sweep / _slug(name)
        arm_config = config.with_overrides({**overrides, "output_dir": arm_dir})
        logger.info(f"Ablation {sweep}: arm '{name}'")
        summary = cmd_eval(arm_config, mode, responder)
        arms.append((name, summary))
        rows.append({"Arm": name, **summary_row(summary)})

    base.mkdir(parents=True, exist_ok=True)
    write_table(
        rows,
        base / f"ablation_{sweep}.csv",
        base / f"ablation_{sweep}.md",
        title=f"Ablation over {sweep}",
    )
    logger.info(f"Wrote ablation table for {sweep} ({len(rows)} arms) to {base}")
    return arms


def load_depth(path: Path, depth_scale: float) -> np.ndarray:
    """Depth in meters from a .npy array or a 16-bit PNG."""
    path = Path(path)
    if path.suffix.lower() == ".npy":
        raw = np.load(path)
    else:
        with Image.open(path) as image:
            raw = np.asarray(image)
    if raw.ndim != 2:
        raise ValueError(f"depth image must be single-channel, got shape {raw.shape}")
    return raw.astype(np.float64) / depth_scale


def load_intrinsics(path: Path) -> DepthIntrinsics:
    with open(path, encoding="utf-8") as f:
        raw = yaml.safe_load(f) or {}
    return DepthIntrinsics.model_validate(raw)


def cmd_convert(
    depth_path: Path,
    intrinsics_path: Path,
    output: Path,
    color_path: Optional[Path] = None,
    stride: int = 1,
) -> int:
    """
    Back-project an RGB-D capture and write it as PLY.

    Returns:
        Number of points written

    Raises:
        DimensionMismatch: If image sizes disagree with the intrinsics
    """
    intr = load_intrinsics(intrinsics_path)
    depth = load_depth(depth_path, intr.depth_scale)
    color = None
    if color_path is not None:
        with Image.open(color_path) as image:
            color = np.asarray(image.convert("RGB"))
    cloud = unproject_rgbd(color, depth, intr, stride)
    if len(cloud) == 0:
        logger.warning(f"No valid depth in {depth_path}; writing an empty point file")
    output = Path(output)
    output.parent.mkdir(parents=True, exist_ok=True)
    output.write_bytes(write_point_file(cloud))
    logger.info(f"Wrote {len(cloud)} points to {output}")
    return len(cloud)


def cmd_synth(
    output_dir: Path,
    n_scenes: int = 5,
    seed: int = 0,
    n_objects: int = 4,
    size: Sequence[float] = (6.0, 6.0),
) -> Path:
    """
    Write synthetic rooms and a configuration that evaluates them.

    Scenes holding a standard route get its start and goal filled in.

    Returns:
        Path of the written configuration
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    scenes: List[Dict[str, Any]] = []
    for k in range(n_scenes):
        scene_id = f"room_{k:02d}"
        cloud = make_room(seed=seed + k, size=(size[0], size[1]), n_objects=n_objects)
        path = output_dir / f"{scene_id}.ply"
        path.write_bytes(write_point_file(cloud))
        entry: Dict[str, Any] = {"id": scene_id, "path": path.name, "up_axis": 2}
        preset = find_route_preset(cloud.semantic_labels.values())
        if preset is not None:
            entry["start"], entry["goal"] = ROUTE_PRESETS[preset]
        scenes.append(entry)
        logger.info(f"Wrote synthetic scene {scene_id} ({len(cloud)} points) to {path}")

    config = {
        "scenes": scenes,
        "align": "none",
        "seed": seed,
        "output_dir": "runs",
        "rig": {"n_views": 4, "image_size": 512},
    }
    config_path = output_dir / SYNTH_CONFIG_NAME
    config_path.write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    logger.info(f"Wrote configuration for {n_scenes} scenes to {config_path}")
    return config_path
