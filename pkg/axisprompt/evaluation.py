"""Answer parsing, localization and success metrics, skeletons and run reports."""

import csv
import logging
import math
import re
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from axisprompt.config import EvalConfig, settings
from axisprompt.exceptions import EmptyRun, LengthMismatch, UnknownKeypoint, UnknownTask
from axisprompt.geometry import point_aabb_distance
from axisprompt.models import (
    RGB,
    Aabb,
    EvalRecord,
    GroundTruth,
    LineSegment,
    Prediction,
    PredictionKind,
    PrimitiveKind,
    Renderables,
    RunSummary,
    TaskKind,
    TargetTruth,
    Vec3,
)
from axisprompt.plyio import write_line_set

logger = logging.getLogger(__name__)

SAMPLE_STEP = 0.05
_NUMBER = r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?"
_TUPLE = re.compile(r"[\(\[]\s*(" + _NUMBER + r"(?:\s*,\s*" + _NUMBER + r")*)\s*[\)\]]")
_NAMED = re.compile(
    r"([A-Za-z_][A-Za-z0-9_\- ]*?)\s*[:=]\s*[\(\[]\s*("
    + _NUMBER
    + r"\s*,\s*"
    + _NUMBER
    + r"\s*,\s*"
    + _NUMBER
    + r")\s*[\)\]]"
)
_LETTER = re.compile(r"[A-Za-z]")

BoxFormat = Literal["min_max", "center_size"]


def _tuples(text: str) -> List[Tuple[int, int, List[float]]]:
    """(start, end, values) of every bracketed numeric tuple."""
    found = []
    for match in _TUPLE.finditer(text):
        values = [float(v) for v in match.group(1).split(",")]
        found.append((match.start(), match.end(), values))
    return found


def _vec(values: Iterable[float]) -> Vec3:
    x, y, z = (float(v) for v in values)
    return (x, y, z)


def _box_from_values(values: Sequence[float], box_format: BoxFormat) -> Aabb:
    a = np.asarray(values[:3], dtype=np.float64)
    b = np.asarray(values[3:6], dtype=np.float64)
    if box_format == "center_size":
        return Aabb.from_center_size(a, b)
    return Aabb(min=_vec(np.minimum(a, b)), max=_vec(np.maximum(a, b)))


def parse_named_points(text: str) -> Dict[str, Vec3]:
    """Points given as "name: (x, y, z)"; later mentions of a name win."""
    named: Dict[str, Vec3] = {}
    for match in _NAMED.finditer(text):
        name = match.group(1).strip().split(" ")[-1]
        named[name] = _vec(match.group(2).split(","))
    return named


def parse_answer(text: str, kind: PredictionKind, box_format: BoxFormat = "min_max") -> Prediction:
    """
    Extract a prediction from free text.

    The last tuple of the expected arity wins, so step-by-step answers are
    read from their conclusion. A path is the last run of 3-tuples separated
    only by punctuation or whitespace. Failures are returned with
    parse_ok=False, never raised.
    """
    tuples = _tuples(text)
    if kind == PredictionKind.POINT3D:
        points = [v for _, _, v in tuples if len(v) == 3]
        if points:
            return Prediction(kind=kind, point=_vec(points[-1]), raw_text=text, parse_ok=True)
    elif kind == PredictionKind.BOX3D:
        boxes = [v for _, _, v in tuples if len(v) == 6]
        if boxes:
            box = _box_from_values(boxes[-1], box_format)
            return Prediction(kind=kind, box=box, raw_text=text, parse_ok=True)
    elif kind == PredictionKind.PATH3D:
        runs: List[List[Vec3]] = []
        previous_end: Optional[int] = None
        for start, end, values in tuples:
            if len(values) != 3:
                previous_end = None
                continue
            if previous_end is None or _LETTER.search(text[previous_end:start]):
                runs.append([])
            runs[-1].append(_vec(values))
            previous_end = end
        if runs:
            return Prediction(kind=kind, path=runs[-1], raw_text=text, parse_ok=True)
    elif kind == PredictionKind.KEYPOINTS:
        named = parse_named_points(text)
        if named:
            return Prediction(kind=kind, keypoints=named, raw_text=text, parse_ok=True)
    return Prediction(kind=kind, raw_text=text, parse_ok=False)


def dist_to_center(pred: Sequence[float], truth_center: Sequence[float]) -> float:
    return float(np.linalg.norm(np.asarray(pred, dtype=np.float64) - np.asarray(truth_center)))


def dist_to_bbx(pred: Sequence[float], box: Aabb) -> float:
    """Distance from a point to a box; 0 inside."""
    return float(point_aabb_distance(np.asarray(pred, dtype=np.float64), box))


def nrmse(
    records: Sequence[EvalRecord],
    which: Literal["center", "bbx"] = "center",
    normalizers: Optional[Mapping[str, float]] = None,
) -> float:
    """
    Mean over scenes of the per-scene mean normalized distance.

    Records without a distance (unparsed answers) count as a normalized
    error of 1.0.

    Args:
        records: Scored records of one run
        which: "center" or "bbx" distance
        normalizers: Per-scene normalizer; defaults to each record's own

    Raises:
        EmptyRun: If there are no records
    """
    if not records:
        raise EmptyRun("no records to aggregate")
    groups: Dict[str, List[float]] = OrderedDict()
    for record in records:
        distance = record.d_center if which == "center" else record.d_bbx
        if distance is None:
            term = 1.0
        else:
            scale = normalizers[record.scene_id] if normalizers else record.normalizer
            term = distance / scale
        groups.setdefault(record.scene_id, []).append(term)
    return float(np.mean([np.mean(terms) for terms in groups.values()]))


def _segment_samples(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    count = max(int(math.ceil(float(np.linalg.norm(b - a)) / SAMPLE_STEP)), 1) + 1
    return a + np.linspace(0.0, 1.0, count)[:, None] * (b - a)


def route_success(
    path: Sequence[Sequence[float]],
    start_region: Aabb,
    goal_region: Aabb,
    obstacles: Sequence[Aabb],
    clearance: float = 0.15,
    tolerance: float = 0.15,
    check_collisions: bool = True,
) -> bool:
    """
    Whether a path leaves the start, reaches the goal and keeps clear of obstacles.

    Segments are sampled every 5 cm; every sample must stay at least
    clearance away from every obstacle box. Endpoints must lie within
    tolerance of their regions.
    """
    if not path:
        return False
    points = np.asarray(path, dtype=np.float64).reshape(-1, 3)
    if dist_to_bbx(points[0], start_region) > tolerance:
        return False
    if dist_to_bbx(points[-1], goal_region) > tolerance:
        return False
    if not check_collisions or not obstacles:
        return True
    if len(points) == 1:
        samples = points
    else:
        samples = np.concatenate(
            [_segment_samples(points[i], points[i + 1]) for i in range(len(points) - 1)]
        )
    return all(float(point_aabb_distance(samples, box).min()) >= clearance for box in obstacles)


def action_success(
    pred: Sequence[float],
    kind: TaskKind,
    object_box: Optional[Aabb],
    target_region: Optional[Aabb],
    slack: float = 0.05,
) -> bool:
    """Grasp succeeds near the object box, release near the target region (closed threshold)."""
    if kind == TaskKind.GRASP:
        box = object_box
    elif kind == TaskKind.RELEASE:
        box = target_region
    else:
        raise UnknownTask(f"{kind.value} is not a grasp or release task")
    if box is None:
        raise UnknownTask(f"{kind.value} needs a reference box")
    return dist_to_bbx(pred, box) <= slack


def box_iou(a: Aabb, b: Aabb) -> float:
    """Axis-aligned 3D intersection over union."""
    overlap = np.clip(np.minimum(a.hi, b.hi) - np.maximum(a.lo, b.lo), 0.0, None)
    intersection = float(np.prod(overlap))
    union = a.volume + b.volume - intersection
    if union <= 0:
        return 1.0 if a == b else 0.0
    return intersection / union


def acc_at_iou(
    pred_boxes: Sequence[Optional[Aabb]], truth_boxes: Sequence[Aabb], threshold: float
) -> float:
    """
    Fraction of queries whose IoU reaches threshold; missing predictions are misses.

    Raises:
        LengthMismatch: If the lists are not aligned
        EmptyRun: If there are no queries
    """
    if len(pred_boxes) != len(truth_boxes):
        raise LengthMismatch(f"{len(pred_boxes)} predictions for {len(truth_boxes)} queries")
    if not truth_boxes:
        raise EmptyRun("no queries to score")
    hits = [p is not None and box_iou(p, t) >= threshold for p, t in zip(pred_boxes, truth_boxes)]
    return sum(hits) / len(hits)


# Skeletons


class SkeletonTemplate(BaseModel):
    name: str
    keypoints: List[str]
    edges: List[Tuple[str, str]]


SKELETON_TEMPLATES: Dict[str, SkeletonTemplate] = {
    "chair": SkeletonTemplate(
        name="chair",
        keypoints=[
            "leg_front_left",
            "leg_front_right",
            "leg_back_left",
            "leg_back_right",
            "seat_front_left",
            "seat_front_right",
            "seat_back_left",
            "seat_back_right",
            "back_top_left",
            "back_top_right",
        ],
        edges=[
            ("leg_front_left", "seat_front_left"),
            ("leg_front_right", "seat_front_right"),
            ("leg_back_left", "seat_back_left"),
            ("leg_back_right", "seat_back_right"),
            ("seat_front_left", "seat_front_right"),
            ("seat_front_right", "seat_back_right"),
            ("seat_back_right", "seat_back_left"),
            ("seat_back_left", "seat_front_left"),
            ("seat_back_left", "back_top_left"),
            ("seat_back_right", "back_top_right"),
            ("back_top_left", "back_top_right"),
        ],
    ),
    "table": SkeletonTemplate(
        name="table",
        keypoints=[
            "leg_front_left",
            "leg_front_right",
            "leg_back_left",
            "leg_back_right",
            "top_front_left",
            "top_front_right",
            "top_back_left",
            "top_back_right",
        ],
        edges=[
            ("leg_front_left", "top_front_left"),
            ("leg_front_right", "top_front_right"),
            ("leg_back_left", "top_back_left"),
            ("leg_back_right", "top_back_right"),
            ("top_front_left", "top_front_right"),
            ("top_front_right", "top_back_right"),
            ("top_back_right", "top_back_left"),
            ("top_back_left", "top_front_left"),
        ],
    ),
}


class Skeleton(BaseModel):
    """Named keypoints joined by edges."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    names: List[str]
    positions: np.ndarray = Field(..., description="(K, 3) keypoint positions")
    edges: List[Tuple[int, int]]

    def to_ply(self) -> bytes:
        return write_line_set(self.positions, self.edges, self.names)

    def to_renderables(self, color: RGB = (255, 128, 0)) -> Renderables:
        lines = [
            LineSegment(
                start=_vec(self.positions[i]),
                end=_vec(self.positions[j]),
                color=color,
                kind=PrimitiveKind.SKELETON,
                width=2,
            )
            for i, j in self.edges
        ]
        return Renderables(lines=lines)


def build_skeleton(
    keypoints: Mapping[str, Sequence[float]], edges: Sequence[Tuple[str, str]]
) -> Skeleton:
    """
    Connect predicted keypoints along a template's edges.

    Raises:
        UnknownKeypoint: If an edge names a keypoint that was not predicted
    """
    names = list(keypoints)
    index = {name: k for k, name in enumerate(names)}
    missing = sorted({n for edge in edges for n in edge if n not in index})
    if missing:
        raise UnknownKeypoint(f"edges reference unknown keypoints: {missing}")
    positions = np.asarray([keypoints[n] for n in names], dtype=np.float64).reshape(-1, 3)
    pairs = [(index[a], index[b]) for a, b in edges]
    return Skeleton(names=names, positions=positions, edges=pairs)


# Scoring


def _point_record(
    truth: GroundTruth,
    target: TargetTruth,
    prediction: Prediction,
    key: str = "",
) -> EvalRecord:
    point = prediction.point
    return EvalRecord(
        scene_id=truth.scene_id,
        instance_id=target.instance_id,
        key=key or target.letter,
        task=truth.kind,
        prediction=prediction,
        truth_center=target.center,
        truth_box=target.box,
        normalizer=truth.normalizer,
        d_center=None if point is None else dist_to_center(point, target.center),
        d_bbx=None if point is None else dist_to_bbx(point, target.box),
        parse_ok=prediction.parse_ok,
    )


def score_answer(
    text: str,
    truth: GroundTruth,
    cfg: Optional[EvalConfig] = None,
    box_format: BoxFormat = "min_max",
) -> List[EvalRecord]:
    """
    Parse and score one answer against a scene's ground truth.

    Localization and keypoint answers yield one record per object or
    keypoint; the other tasks yield a single record.

    Raises:
        UnknownTask: If the truth lacks what its task needs
    """
    cfg = cfg or EvalConfig()
    kind = truth.kind
    if kind == TaskKind.LOCALIZE:
        if not truth.targets:
            raise UnknownTask(f"scene {truth.scene_id} has no localization targets")
        named = parse_named_points(text)
        records = []
        for target in truth.targets:
            point = named.get(target.letter)
            if point is None and len(truth.targets) == 1:
                fallback = parse_answer(text, PredictionKind.POINT3D)
                point = fallback.point
            prediction = Prediction(
                kind=PredictionKind.POINT3D, point=point, raw_text=text, parse_ok=point is not None
            )
            records.append(_point_record(truth, target, prediction))
        return records

    if kind == TaskKind.KEYPOINTS:
        if not truth.keypoints:
            raise UnknownTask(f"scene {truth.scene_id} has no keypoints")
        named = parse_named_points(text)
        instance = truth.targets[0].instance_id if truth.targets else -1
        label = truth.targets[0].label if truth.targets else "object"
        records = []
        for name, position in truth.keypoints.items():
            point = named.get(name)
            prediction = Prediction(
                kind=PredictionKind.POINT3D, point=point, raw_text=text, parse_ok=point is not None
            )
            target = TargetTruth(
                letter=name,
                instance_id=instance,
                label=label,
                center=position,
                box=Aabb(min=position, max=position),
            )
            records.append(_point_record(truth, target, prediction, key=name))
        return records

    if kind in (TaskKind.GRASP, TaskKind.RELEASE):
        prediction = parse_answer(text, PredictionKind.POINT3D)
        if kind == TaskKind.GRASP:
            if not truth.targets:
                raise UnknownTask(f"scene {truth.scene_id} has no grasp target")
            target = truth.targets[0]
        else:
            if truth.goal_region is None:
                raise UnknownTask(f"scene {truth.scene_id} has no release region")
            region = truth.goal_region
            instance = truth.targets[0].instance_id if truth.targets else -1
            target = TargetTruth(
                letter=truth.targets[0].letter if truth.targets else "",
                instance_id=instance,
                label="release region",
                center=_vec(region.center),
                box=region,
            )
        record = _point_record(truth, target, prediction)
        verdict = prediction.point is not None and action_success(
            prediction.point,
            kind,
            target.box if kind == TaskKind.GRASP else None,
            truth.goal_region,
            cfg.slack,
        )
        return [record.model_copy(update={"verdict": verdict})]

    if kind == TaskKind.ROUTE_PLAN:
        if truth.start_region is None or truth.goal_region is None:
            raise UnknownTask(f"scene {truth.scene_id} has no route regions")
        prediction = parse_answer(text, PredictionKind.PATH3D)
        verdict = prediction.path is not None and route_success(
            prediction.path,
            truth.start_region,
            truth.goal_region,
            truth.obstacles,
            cfg.clearance,
            cfg.tolerance,
            cfg.check_collisions,
        )
        goal = truth.goal_region
        return [
            EvalRecord(
                scene_id=truth.scene_id,
                key="route",
                task=kind,
                prediction=prediction,
                truth_center=_vec(goal.center),
                truth_box=goal,
                normalizer=truth.normalizer,
                verdict=verdict,
                parse_ok=prediction.parse_ok,
            )
        ]

    if kind == TaskKind.GROUND_BOX:
        if not truth.targets:
            raise UnknownTask(f"scene {truth.scene_id} has no grounding target")
        target = truth.targets[0]
        prediction = parse_answer(text, PredictionKind.BOX3D, box_format)
        box = prediction.box
        return [
            EvalRecord(
                scene_id=truth.scene_id,
                instance_id=target.instance_id,
                key=target.letter,
                task=kind,
                prediction=prediction,
                truth_center=target.center,
                truth_box=target.box,
                normalizer=truth.normalizer,
                d_center=None if box is None else dist_to_center(box.center, target.center),
                d_bbx=None if box is None else dist_to_bbx(box.center, target.box),
                iou=None if box is None else box_iou(box, target.box),
                parse_ok=prediction.parse_ok,
            )
        ]
    raise UnknownTask(f"unsupported task {kind.value}")


def failed_records(truth: GroundTruth, cfg: Optional[EvalConfig] = None) -> List[EvalRecord]:
    """Penalized records for a scene whose request never got an answer."""
    return score_answer("", truth, cfg)


# Reporting

REPORT_COLUMNS = [
    "To center",
    "To bbx",
    "Success rate",
    "Acc@0.25",
    "Acc@0.5",
    "Parse failures",
]


def _metric(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.3f}"


def summary_row(summary: RunSummary) -> Dict[str, str]:
    return {
        "To center": _metric(summary.nrmse_center),
        "To bbx": _metric(summary.nrmse_bbx),
        "Success rate": _metric(summary.success_rate),
        "Acc@0.25": _metric(summary.acc_025),
        "Acc@0.5": _metric(summary.acc_05),
        "Parse failures": _metric(summary.parse_failure_rate),
    }


def write_table(rows: Sequence[Dict[str, str]], csv_path: Path, md_path: Path, title: str) -> None:
    """Write the same rows as CSV and as a Markdown table."""
    columns = list(rows[0]) if rows else list(REPORT_COLUMNS)
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
    lines = [f"# {title}", "", "| " + " | ".join(columns) + " |"]
    lines.append("|" + "|".join(" --- " for _ in columns) + "|")
    lines.extend("| " + " | ".join(row[c] for c in columns) + " |" for row in rows)
    md_path.write_text("\n".join(lines) + "\n", encoding="utf-8")


_SUCCESS_TASKS = (TaskKind.ROUTE_PLAN, TaskKind.GRASP, TaskKind.RELEASE)
_LOCALIZATION_TASKS = (TaskKind.LOCALIZE, TaskKind.KEYPOINTS)


def summarize(
    records: Sequence[EvalRecord],
    output_dir: Optional[Path] = None,
    failed_scenes: Sequence[str] = (),
) -> RunSummary:
    """
    Aggregate a run and optionally write results.jsonl, summary.csv and report.md.

    Unparsed answers count as normalized error 1.0 in NRMSE and as misses
    in every rate.

    Raises:
        EmptyRun: If there are no records
    """
    if not records:
        raise EmptyRun("no records to summarize")
    localized = [r for r in records if r.task in _LOCALIZATION_TASKS]
    judged = [r for r in records if r.task in _SUCCESS_TASKS]
    grounded = [r for r in records if r.task == TaskKind.GROUND_BOX]

    def accuracy(threshold: float) -> Optional[float]:
        if not grounded:
            return None
        return sum(r.iou is not None and r.iou >= threshold for r in grounded) / len(grounded)

    summary = RunSummary(
        nrmse_center=nrmse(localized, "center") if localized else None,
        nrmse_bbx=nrmse(localized, "bbx") if localized else None,
        success_rate=sum(bool(r.verdict) for r in judged) / len(judged) if judged else None,
        acc_025=accuracy(0.25),
        acc_05=accuracy(0.5),
        n_scenes=len({r.scene_id for r in records}),
        n_objects=len(records),
        parse_failure_rate=sum(not r.parse_ok for r in records) / len(records),
        failed_scenes=list(failed_scenes),
    )

    if output_dir is not None:
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        with open(output_dir / settings.results_name, "w", encoding="utf-8") as f:
            for record in records:
                f.write(record.model_dump_json() + "\n")
        write_table(
            [summary_row(summary)],
            output_dir / settings.summary_name,
            output_dir / settings.report_name,
            title=f"Evaluation over {summary.n_scenes} scenes ({summary.n_objects} objects)",
        )
        if summary.failed_scenes:
            with open(output_dir / settings.report_name, "a", encoding="utf-8") as f:
                f.write(f"\nFailed scenes: {', '.join(summary.failed_scenes)}\n")
        logger.info(f"Wrote results and report to {output_dir}")
    return summary
