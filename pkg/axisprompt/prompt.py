"""Prompt assembly: image sequence, points-as-text, task templates and hints."""

import json
import logging
import re
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from axisprompt.exceptions import NoOtherInstance
from axisprompt.geometry import compute_aabb, occupied_voxel_count, voxel_downsample
from axisprompt.models import (
    MarkPlan,
    PromptBundle,
    RenderedView,
    SceneFrame,
    TaskKind,
    TaskTemplate,
    points_from_text,
)
from axisprompt.render import encode_png

logger = logging.getLogger(__name__)

COT_PREFIX = "Let's think step by step.\n"
POINTS_HEADER = "# points x y z (meters)"
DEFAULT_BUDGET = 2048
DEFAULT_DECIMALS = 2
_SEARCH_STEPS = 40
_SLOT_MARKER = re.compile(r"\{[A-Za-z_][A-Za-z0-9_]*\}")

_AXIS_INTRO = (
    "The images show one 3D scene from several viewpoints. A coordinate axis is embedded "
    "in the scene: red is X, green is Y, blue is Z, with tick labels in meters."
)

DEFAULT_TEMPLATES: Dict[TaskKind, TaskTemplate] = {
    TaskKind.LOCALIZE: TaskTemplate(
        kind=TaskKind.LOCALIZE,
        body=_AXIS_INTRO + " Estimate the 3D center position of object(s) {targets}.",
        answer_format_instruction=(
            "Answer with one line per object in the form \"A: (x, y, z)\" in meters. "
            "If asked about a single object, end your answer with its coordinates as (x, y, z)."
        ),
    ),
    TaskKind.ROUTE_PLAN: TaskTemplate(
        kind=TaskKind.ROUTE_PLAN,
        body=_AXIS_INTRO
        + " Plan a walking route from {start} to {goal} that avoids every other object.",
        answer_format_instruction=(
            "Answer with the ordered waypoints as (x, y, z) tuples in meters, "
            "from start to goal, at the end of your answer."
        ),
    ),
    TaskKind.GRASP: TaskTemplate(
        kind=TaskKind.GRASP,
        body=_AXIS_INTRO + " A robot arm must pick up {target}. Where should it grasp?",
        answer_format_instruction="Answer with the grasp position as (x, y, z) in meters.",
    ),
    TaskKind.RELEASE: TaskTemplate(
        kind=TaskKind.RELEASE,
        body=_AXIS_INTRO + " A robot arm holding an item must put it down on {target}. "
        "Where should it release the item?",
        answer_format_instruction="Answer with the release position as (x, y, z) in meters.",
    ),
    TaskKind.KEYPOINTS: TaskTemplate(
        kind=TaskKind.KEYPOINTS,
        body=_AXIS_INTRO + " Give the 3D positions of these keypoints of {target}: "
        "{keypoint_names}.",
        answer_format_instruction=(
            "Answer with one line per keypoint in the form \"name: (x, y, z)\" in meters."
        ),
    ),
    TaskKind.GROUND_BOX: TaskTemplate(
        kind=TaskKind.GROUND_BOX,
        body=_AXIS_INTRO + " Find the object described as: \"{description}\".",
        answer_format_instruction="{box_instruction}",
    ),
}

BOX_INSTRUCTIONS = {
    "min_max": "Answer with its bounding box as (xmin, ymin, zmin, xmax, ymax, zmax) in meters.",
    "center_size": "Answer with its bounding box as (cx, cy, cz, sx, sy, sz) in meters.",
}


def template_for(kind: TaskKind, slots: Dict[str, str]) -> TaskTemplate:
    """Default template of a task kind with the given slots filled in."""
    return DEFAULT_TEMPLATES[kind].model_copy(update={"slots": dict(slots)})


def _format_points(points: np.ndarray, decimals: int) -> str:
    lines = [POINTS_HEADER]
    lines.extend(" ".join(f"{v:.{decimals}f}" for v in p) for p in points)
    return "\n".join(lines) + "\n"


def serialize_points_text(
    scene: SceneFrame, budget_points: int = DEFAULT_BUDGET, decimals: int = DEFAULT_DECIMALS
) -> str:
    """
    Points as "x y z" lines, voxel-downsampled to fit a point budget.

    The voxel size is the smallest one (found by bisection) whose
    occupied-voxel count fits the budget.

    Args:
        scene: Normalized scene
        budget_points: Maximum number of point lines
        decimals: Fixed decimals per coordinate

    Returns:
        Text starting with the "# points x y z (meters)" header
    """
    if budget_points < 1:
        raise ValueError(f"budget_points must be >= 1, got {budget_points}")
    cloud = scene.cloud
    if len(cloud) <= budget_points:
        return _format_points(cloud.positions, decimals)

    positions = cloud.positions
    lo, hi = 0.0, float(scene.bounds().extent.max()) * 1.01 + 1e-9
    for _ in range(_SEARCH_STEPS):
        mid = (lo + hi) / 2.0
        if occupied_voxel_count(positions, mid) <= budget_points:
            hi = mid
        else:
            lo = mid
    sampled = voxel_downsample(cloud, hi)
    logger.debug(f"Downsampled {len(cloud)} points to {len(sampled)} (voxel {hi:.4f} m)")
    return _format_points(sampled.positions, decimals)


def parse_points_text(text: str) -> np.ndarray:
    return points_from_text(text)


def assemble_prompt(
    views: Sequence[RenderedView],
    scene: SceneFrame,
    template: TaskTemplate,
    include_points: bool = True,
    cot: bool = False,
    *,
    scene_id: str,
    hint: Optional[str] = None,
    budget_points: int = DEFAULT_BUDGET,
    decimals: int = DEFAULT_DECIMALS,
    extra_images: Sequence[bytes] = (),
    mark_style: Optional[str] = None,
) -> PromptBundle:
    """
    Build the bundle sent for one scene.

    Args:
        views: Marked views in rig order
        scene: Normalized scene (source of the points text)
        template: Task template with its slots
        include_points: Attach the points text
        cot: Prefix the task text with the step-by-step sentence
        scene_id: Scene identifier
        hint: Optional sentence appended to the task body
        budget_points: Points-text budget
        decimals: Points-text decimals
        extra_images: PNG payloads appended after the views (depth rasters)
        mark_style: Recorded in the bundle metadata

    Returns:
        PromptBundle

    Raises:
        UnfilledSlot: If the template references a missing slot
        ValueError: If views is empty
    """
    if not views:
        raise ValueError("at least one view is required")
    text = template.render()
    if hint:
        body, sep, instruction = text.partition("\n")
        text = f"{body} {hint}{sep}{instruction}"
    if cot:
        text = COT_PREFIX + text
    if _SLOT_MARKER.search(text):
        logger.warning(f"Task text for {scene_id} still contains a brace expression")
    images = [encode_png(view.image) for view in views] + list(extra_images)
    points_text = serialize_points_text(scene, budget_points, decimals) if include_points else None
    return PromptBundle(
        scene_id=scene_id,
        images=images,
        points_text=points_text,
        task_text=text,
        cot=cot,
        template_kind=template.kind,
        mark_style=mark_style,
        n_views=len(views),
    )


def reference_point_hint(
    scene: SceneFrame,
    target_instance: int,
    plan: Optional[MarkPlan] = None,
    exclude: Iterable[int] = (),
) -> str:
    """
    Sentence giving the center of the instance nearest to the target.

    Distances are between AABB centers; ties go to the smaller instance id.
    With a plan, the nearest instance is named by its letter.

    Raises:
        NoOtherInstance: If no candidate instance remains
    """
    skipped = set(exclude) | {target_instance}
    candidates = [i for i in scene.cloud.instances() if i not in skipped]
    if not candidates:
        raise NoOtherInstance(f"no instance other than {target_instance} to reference")
    center = compute_aabb(scene.cloud, target_instance).center
    centers = {i: compute_aabb(scene.cloud, i).center for i in candidates}
    nearest = min(candidates, key=lambda i: (float(np.linalg.norm(centers[i] - center)), i))
    entry = plan.entry_for(nearest) if plan is not None else None
    name = f"object {entry.letter}" if entry else scene.cloud.label(nearest)
    x, y, z = centers[nearest]
    return f"For reference, {name} is centered at ({x:.2f}, {y:.2f}, {z:.2f})."


def save_bundle(bundle: PromptBundle, directory: Path) -> Path:
    """
    Write a bundle as view_{j}.png, points.txt, task.txt and meta.json.

    Returns:
        The bundle directory
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for j, payload in enumerate(bundle.images):
        (directory / f"view_{j}.png").write_bytes(payload)
    points = directory / "points.txt"
    if bundle.points_text is not None:
        points.write_text(bundle.points_text, encoding="utf-8")
    elif points.exists():
        points.unlink()
    (directory / "task.txt").write_text(bundle.task_text, encoding="utf-8")
    meta = {
        "scene_id": bundle.scene_id,
        "template_kind": bundle.template_kind.value,
        "cot": bundle.cot,
        "mark_style": bundle.mark_style,
        "n_views": bundle.n_views,
        "n_images": len(bundle.images),
    }
    (directory / "meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8"
    )
    return directory


def load_bundle(directory: Path) -> PromptBundle:
    """Read a bundle written by save_bundle."""
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
    images: List[bytes] = [
        (directory / f"view_{j}.png").read_bytes() for j in range(meta["n_images"])
    ]
    points = directory / "points.txt"
    return PromptBundle(
        scene_id=meta["scene_id"],
        images=images,
        points_text=points.read_text(encoding="utf-8") if points.exists() else None,
        task_text=(directory / "task.txt").read_text(encoding="utf-8"),
        cot=meta["cot"],
        template_kind=TaskKind(meta["template_kind"]),
        mark_style=meta["mark_style"],
        n_views=meta["n_views"],
    )
