"""Per-scene task setup: target resolution, task wording and ground truth."""

import logging
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel

from axisprompt.config import InstanceRef, PipelineConfig, SceneSpec
from axisprompt.evaluation import SKELETON_TEMPLATES
from axisprompt.exceptions import NoOtherInstance, SceneLoadError
from axisprompt.geometry import compute_aabb
from axisprompt.models import (
    Aabb,
    GroundTruth,
    MarkEntry,
    MarkPlan,
    MarkStyle,
    MarkVariant,
    SceneFrame,
    TargetTruth,
    TaskKind,
    TaskTemplate,
    Vec3,
)
from axisprompt.marks import build_mark_plan
from axisprompt.prompt import BOX_INSTRUCTIONS, reference_point_hint, template_for
from axisprompt.synthetic import STRUCTURAL_LABELS, box_keypoints

logger = logging.getLogger(__name__)

# Start and goal labels of the standard route tasks
ROUTE_PRESETS: Dict[str, Tuple[str, str]] = {
    "door_to_chair": ("door", "chair"),
    "door_to_bed": ("door", "bed"),
    "door_to_desk": ("door", "desk"),
    "couch_to_bed": ("couch", "bed"),
}

RELEASE_HEIGHT = 0.1


class TaskSetup(BaseModel):
    """What one scene needs beyond its rendered views."""

    plan: MarkPlan
    template: TaskTemplate
    truth: GroundTruth
    hint: Optional[str] = None


def find_route_preset(labels: Iterable[str]) -> Optional[str]:
    """First preset whose start and goal labels both occur in a scene."""
    present = set(labels)
    for name, (start, goal) in ROUTE_PRESETS.items():
        if start in present and goal in present:
            return name
    return None


def markable_instances(scene: SceneFrame) -> List[int]:
    """Instances other than floors, walls and ceilings."""
    cloud = scene.cloud
    return [i for i in cloud.instances() if cloud.semantic_labels.get(i) not in STRUCTURAL_LABELS]


def resolve_instance(scene: SceneFrame, ref: InstanceRef, scene_id: str) -> int:
    """
    Instance id for an id or a semantic label.

    A label matching several instances picks the one with the most points.

    Raises:
        SceneLoadError: If nothing matches
    """
    cloud = scene.cloud
    counts = cloud.point_counts()
    if isinstance(ref, int):
        if ref not in counts:
            raise SceneLoadError(scene_id, f"instance {ref} has no points")
        return ref
    matches = [i for i, name in cloud.semantic_labels.items() if name == ref and i in counts]
    if not matches:
        raise SceneLoadError(scene_id, f"no instance labeled '{ref}'")
    return min(matches, key=lambda i: (-counts[i], i))


def build_plan(scene: SceneFrame, config: PipelineConfig) -> MarkPlan:
    """
    Letter assignment for the scene's objects.

    Without a mark style the letters still name targets in the task text
    and the answers, but nothing is drawn.
    """
    marks = config.marks
    variant = marks.style or MarkVariant.LETTER_MARK
    style_fields: Dict[str, Any] = {"variant": variant, "dilation_px": marks.dilation_px}
    if marks.palette:
        style_fields["palette"] = marks.palette
    style = MarkStyle(**style_fields)
    return build_mark_plan(scene, style, markable_instances(scene), marks.max_marks)


def scene_normalizer(scene: SceneFrame, mode: str) -> float:
    """Largest AABB side ("extent") or AABB diagonal ("diagonal"); 1 for a point-like scene."""
    extent = scene.bounds().extent
    value = float(np.linalg.norm(extent)) if mode == "diagonal" else float(extent.max())
    return value if value > 0 else 1.0


def _vec(values: np.ndarray) -> Vec3:
    return (float(values[0]), float(values[1]), float(values[2]))


def _target(scene: SceneFrame, entry: MarkEntry) -> TargetTruth:
    box = compute_aabb(scene.cloud, entry.instance_id)
    return TargetTruth(
        letter=entry.letter,
        instance_id=entry.instance_id,
        label=scene.cloud.label(entry.instance_id),
        center=_vec(box.center),
        box=box,
    )


def _describe(target: TargetTruth) -> str:
    return f"object {target.letter} (the {target.label})"


def _entry(plan: MarkPlan, instance: int, scene_id: str) -> MarkEntry:
    entry = plan.entry_for(instance)
    if entry is None:
        raise SceneLoadError(scene_id, f"instance {instance} is not among the marked objects")
    return entry


def _first(refs: List[InstanceRef], scene_id: str, kind: TaskKind) -> InstanceRef:
    if not refs:
        raise SceneLoadError(scene_id, f"the {kind.value} task needs a target")
    return refs[0]


def release_region(box: Aabb) -> Aabb:
    """Slab just above the top face of a box."""
    lo, hi = box.lo, box.hi
    return Aabb(min=(lo[0], lo[1], hi[2]), max=(hi[0], hi[1], hi[2] + RELEASE_HEIGHT))


def _keypoints(
    scene: SceneFrame, spec: SceneSpec, target: TargetTruth
) -> Tuple[Dict[str, Vec3], List[Tuple[str, str]]]:
    template_name = spec.skeleton or target.label
    template = SKELETON_TEMPLATES.get(template_name)
    if spec.keypoints:
        names = list(spec.keypoints)
        mapped = scene.to_frame(np.asarray([spec.keypoints[n] for n in names]))
        keypoints = {name: _vec(p) for name, p in zip(names, mapped)}
    elif template is not None:
        keypoints = box_keypoints(target.box, template.name)
    else:
        raise SceneLoadError(spec.id, f"no keypoints given and no skeleton for '{template_name}'")
    edges = []
    if template is not None:
        edges = [(a, b) for a, b in template.edges if a in keypoints and b in keypoints]
    return keypoints, edges


def setup_task(
    scene_id: str, scene: SceneFrame, spec: SceneSpec, config: PipelineConfig
) -> TaskSetup:
    """
    Resolve targets and build the task template and ground truth of one scene.

    Everything is expressed in the normalized frame, where the embedded
    axis (and therefore any answer) lives.

    Raises:
        SceneLoadError: If a reference cannot be resolved
    """
    kind = config.task.kind
    plan = build_plan(scene, config)
    normalizer = scene_normalizer(scene, config.eval.normalizer)
    bounds = scene.bounds()
    refs = list(spec.targets)

    def target_for(ref: InstanceRef) -> TargetTruth:
        return _target(scene, _entry(plan, resolve_instance(scene, ref, scene_id), scene_id))

    slots: Dict[str, str] = {}
    truth_fields: Dict[str, Any] = {}
    if kind == TaskKind.LOCALIZE:
        if refs:
            targets = [target_for(ref) for ref in refs]
        else:
            targets = [_target(scene, entry) for entry in plan.entries]
        if not targets:
            raise SceneLoadError(scene_id, "no objects to localize")
        slots["targets"] = ", ".join(_describe(t) for t in targets)
    elif kind == TaskKind.ROUTE_PLAN:
        if spec.start is None or spec.goal is None:
            raise SceneLoadError(scene_id, "the route task needs start and goal")
        start = target_for(spec.start)
        goal = target_for(spec.goal)
        targets = [goal]
        excluded = {start.instance_id, goal.instance_id}
        truth_fields.update(
            start_region=start.box,
            goal_region=goal.box,
            obstacles=[
                compute_aabb(scene.cloud, i)
                for i in markable_instances(scene)
                if i not in excluded
            ],
        )
        slots.update(start=_describe(start), goal=_describe(goal))
    elif kind == TaskKind.GRASP:
        targets = [target_for(_first(refs, scene_id, kind))]
        slots["target"] = _describe(targets[0])
    elif kind == TaskKind.RELEASE:
        ref = spec.goal if spec.goal is not None else _first(refs, scene_id, kind)
        targets = [target_for(ref)]
        truth_fields["goal_region"] = release_region(targets[0].box)
        slots["target"] = _describe(targets[0])
    elif kind == TaskKind.KEYPOINTS:
        targets = [target_for(_first(refs, scene_id, kind))]
        keypoints, edges = _keypoints(scene, spec, targets[0])
        truth_fields.update(keypoints=keypoints, skeleton_edges=edges)
        slots.update(target=_describe(targets[0]), keypoint_names=", ".join(keypoints))
    elif kind == TaskKind.GROUND_BOX:
        targets = [target_for(_first(refs, scene_id, kind))]
        slots["description"] = spec.description or f"the {targets[0].label}"
        slots["box_instruction"] = BOX_INSTRUCTIONS[config.task.box_format]
    else:
        raise SceneLoadError(scene_id, f"unsupported task {kind.value}")

    slots.update(config.task.slots)
    truth = GroundTruth(
        scene_id=scene_id,
        kind=kind,
        normalizer=normalizer,
        targets=targets,
        bounds=bounds,
        **truth_fields,
    )

    hint = None
    if config.task.reference_hint:
        others = {t.instance_id for t in targets[1:]}
        structural = set(scene.cloud.instances()) - set(markable_instances(scene))
        try:
            hint = reference_point_hint(
                scene, targets[0].instance_id, plan, exclude=others | structural
            )
        except NoOtherInstance as e:
            logger.warning(f"Scene {scene_id}: no reference hint ({e})")

    logger.debug(f"Scene {scene_id}: {kind.value} task over {len(targets)} target(s)")
    return TaskSetup(plan=plan, template=template_for(kind, slots), truth=truth, hint=hint)
